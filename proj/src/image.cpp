#include "tgsr/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include <png.h>

#include "tgsr/errors.hpp"

namespace tgsr {

namespace {

std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

std::vector<std::uint8_t> encode_interleaved(const std::vector<std::uint8_t>& pixels, int w, int h,
                                             png_uint_32 format, int stride_channels) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = format;
    png_alloc_size_t size = 0;
    const png_int_32 row_stride = w * stride_channels;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), row_stride, nullptr)) {
        throw IoError(std::string("png size query failed: ") + img.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), row_stride, nullptr)) {
        throw IoError(std::string("png encode failed: ") + img.message);
    }
    out.resize(size);
    return out;
}

}  // namespace

Image clipped(Image image) {
    for (auto& v : image.data) v = std::clamp(v, 0.0f, 1.0f);
    return image;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
    if (image.channels != 3) throw ShapeError("encode_png expects 3 channels");
    std::vector<std::uint8_t> rgb(image.pixels() * 3);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c)
                rgb[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] = to_byte(image.at(c, y, x));
    return encode_interleaved(rgb, image.width, image.height, PNG_FORMAT_RGB, 3);
}

std::vector<std::uint8_t> encode_gray_png(const Image& map) {
    if (map.channels != 1) throw ShapeError("encode_gray_png expects 1 channel");
    std::vector<std::uint8_t> gray(map.pixels());
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = to_byte(map.data[i]);
    return encode_interleaved(gray, map.width, map.height, PNG_FORMAT_GRAY, 1);
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        throw IoError(std::string("png decode failed: ") + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, rgb.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError(std::string("png decode failed: ") + img.message);
    }
    Image out(3, static_cast<int>(img.height), static_cast<int>(img.width));
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) = rgb[(static_cast<std::size_t>(y) * out.width + x) * 3 + c] / 255.0f;
    return out;
}

void write_png(const Image& image, const std::filesystem::path& path) {
    const auto bytes = encode_png(image);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

Image read_png(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

namespace {
constexpr std::string_view kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kB64[(n >> 18) & 63];
        out += kB64[(n >> 12) & 63];
        out += kB64[(n >> 6) & 63];
        out += kB64[n & 63];
    }
    if (i < bytes.size()) {
        std::uint32_t n = bytes[i] << 16;
        if (i + 1 < bytes.size()) n |= bytes[i + 1] << 8;
        out += kB64[(n >> 18) & 63];
        out += kB64[(n >> 12) & 63];
        out += (i + 1 < bytes.size()) ? kB64[(n >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::array<int, 256> lut;
    lut.fill(-1);
    for (std::size_t i = 0; i < kB64.size(); ++i) lut[static_cast<unsigned char>(kB64[i])] = static_cast<int>(i);
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    std::uint32_t acc = 0;
    int bits = 0;
    for (char ch : text) {
        if (ch == '=') break;
        if (ch == '\n' || ch == '\r' || ch == ' ') continue;
        const int v = lut[static_cast<unsigned char>(ch)];
        if (v < 0) throw IoError("invalid base64 character");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

torch::Tensor to_tensor(const Image& image) {
    return torch::from_blob(const_cast<float*>(image.data.data()),
                            {image.channels, image.height, image.width}, torch::kFloat32)
        .clone();
}

Image from_tensor(const torch::Tensor& chw) {
    if (chw.dim() != 3) throw ShapeError("from_tensor expects [C,H,W]");
    auto t = chw.detach().to(torch::kFloat32).contiguous();
    Image out(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), static_cast<int>(t.size(2)));
    std::copy(t.data_ptr<float>(), t.data_ptr<float>() + t.numel(), out.data.begin());
    return out;
}

torch::Tensor stack_images(std::span<const Image> images) {
    if (images.empty()) return torch::empty({0});
    std::vector<torch::Tensor> ts;
    ts.reserve(images.size());
    for (const auto& im : images) {
        if (!im.same_shape(images.front())) throw ShapeError("stack_images: mismatched shapes");
        ts.push_back(to_tensor(im));
    }
    return torch::stack(ts);
}

}  // namespace tgsr
