#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgsr/image.hpp"

namespace tgsr {

struct NamedColor {
    std::string name;
    std::array<float, 3> rgb;
};

/// Built-in palette; grammar color names must come from here.
const std::vector<NamedColor>& palette();
const NamedColor& color_by_name(const std::string& name);
/// Palette entry (restricted to `allowed` names when non-empty) closest in RGB.
const NamedColor& nearest_color(const std::array<float, 3>& rgb, std::span<const std::string> allowed = {});

struct GrammarConfig {
    std::vector<std::string> shapes{"circle", "square", "triangle", "diamond"};
    std::vector<std::string> colors{"red", "green", "blue", "yellow", "purple", "orange", "white", "black"};
    std::vector<std::string> sizes{"small", "large"};
    std::vector<std::string> positions{"top left", "top right", "bottom left", "bottom right", "center"};
    double position_clause_probability = 0.5;
    int image_size = 64;
    std::string version = "1";

    void validate() const;
};

struct SceneAttributes {
    std::string shape;
    std::string object_color;
    std::string background_color;
    std::string size;
    std::string position;
    bool position_in_caption = false;

    bool operator==(const SceneAttributes&) const = default;
};

struct Scene {
    Image image;                   // 3 x H x W in [0,1]
    std::vector<std::uint8_t> mask;  // H x W, exactly {0,1}
    int height = 0;
    int width = 0;
    std::string caption;
    SceneAttributes attributes;

    double mask_fraction() const;
};

/// Template: "a {size} {object_color} {shape} on a {background_color} background[ in the {position}]".
std::string render_caption(const SceneAttributes& attributes);

struct ParsedCaption {
    std::string size;
    std::string object_color;
    std::string shape;
    std::string background_color;
    std::optional<std::string> position;
};
/// Inverse of render_caption; throws ConfigError when the caption is not a grammar production.
ParsedCaption parse_caption(const std::string& caption, const GrammarConfig& grammar);

Scene generate_scene(std::uint64_t seed, const GrammarConfig& grammar);

// ---------------------------------------------------------------------------
// Dataset on disk

enum class Split { Train, Val, Test };
std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct DatasetConfig {
    std::filesystem::path root;
    std::uint64_t seed = 1;
    int train = 2000;
    int val = 200;
    int test = 200;
    GrammarConfig grammar;
};

struct ManifestRecord {
    std::string id;
    std::string image;  // relative to root
    std::vector<std::string> captions;
    SceneAttributes attributes;
    Split split = Split::Train;
    std::uint64_t seed = 0;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestRecord> records;
    std::uint64_t seed = 0;
    std::string grammar_version;
    int image_size = 0;

    const ManifestRecord& find(const std::string& id) const;
    std::vector<std::string> ids(Split split) const;
};

/// Writes images/*.png, manifest.jsonl and meta.json under config.root.
DatasetManifest build_dataset(const DatasetConfig& config);
DatasetManifest load_manifest(const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Degradation

/// Catmull-Rom (a = -0.5) cubic kernel.
double cubic_kernel(double x);
/// Bicubic resampling; when shrinking, the kernel is stretched by the
/// scale ratio (antialiased), taps are normalized and borders replicate.
Image bicubic_resize(const Image& image, int out_height, int out_width);
/// factor in {2,4,8,16} (1 only when allow_identity). Output clipped to [0,1].
Image bicubic_downscale(const Image& image, int factor, bool allow_identity = false);

struct LowpassConfig {
    double sigma = 3.0;
    int size = 11;
};
/// Normalized separable 1-D Gaussian taps.
std::vector<double> gaussian_kernel(const LowpassConfig& config = {});
/// Gaussian blur with reflect padding; the global-branch training label.
Image lowpass_filter(const Image& image, const LowpassConfig& config = {});

// ---------------------------------------------------------------------------
// Batches

struct Batch {
    std::vector<std::string> ids;
    std::vector<Image> lr;
    std::vector<Image> gt;
    std::vector<Image> gt_lowpass;
    std::vector<std::string> captions;
    std::vector<SceneAttributes> attributes;

    std::size_t size() const { return ids.size(); }
};

Batch load_batch(const DatasetManifest& manifest, std::span<const std::string> ids, int scale);

/// A whole split held in memory as stacked tensors, ready for training.
struct SplitTensors {
    std::vector<std::string> ids;
    std::vector<std::string> captions;
    std::vector<SceneAttributes> attributes;
    torch::Tensor lr;          // [N,3,h,w]
    torch::Tensor gt;          // [N,3,H,W]
    torch::Tensor gt_lowpass;  // [N,3,H,W]

    std::size_t size() const { return ids.size(); }
};

SplitTensors load_split(const DatasetManifest& manifest, Split split, int scale);

}  // namespace tgsr
