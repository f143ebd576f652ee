#include "tgsr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "tgsr/errors.hpp"

namespace tgsr {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Palette

const std::vector<NamedColor>& palette() {
    static const std::vector<NamedColor> colors{
        {"red", {0.86f, 0.12f, 0.12f}},    {"green", {0.15f, 0.70f, 0.20f}},
        {"blue", {0.15f, 0.30f, 0.90f}},   {"yellow", {0.95f, 0.88f, 0.15f}},
        {"purple", {0.58f, 0.20f, 0.72f}}, {"orange", {0.98f, 0.55f, 0.10f}},
        {"white", {0.95f, 0.95f, 0.95f}},  {"black", {0.08f, 0.08f, 0.08f}},
        {"gray", {0.50f, 0.50f, 0.50f}},   {"cyan", {0.10f, 0.80f, 0.85f}},
    };
    return colors;
}

const NamedColor& color_by_name(const std::string& name) {
    for (const auto& c : palette())
        if (c.name == name) return c;
    throw ConfigError("unknown color: " + name);
}

const NamedColor& nearest_color(const std::array<float, 3>& rgb, std::span<const std::string> allowed) {
    const NamedColor* best = nullptr;
    double best_d = 0.0;
    for (const auto& c : palette()) {
        if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), c.name) == allowed.end()) continue;
        double d = 0.0;
        for (int k = 0; k < 3; ++k) d += (c.rgb[k] - rgb[k]) * (c.rgb[k] - rgb[k]);
        if (!best || d < best_d) {
            best = &c;
            best_d = d;
        }
    }
    if (!best) throw ConfigError("nearest_color: empty palette restriction");
    return *best;
}

// ---------------------------------------------------------------------------
// Grammar

namespace {

const std::vector<std::string> kKnownShapes{"circle", "square", "triangle", "diamond"};
const std::vector<std::string> kKnownSizes{"small", "large"};
const std::vector<std::string> kKnownPositions{"top left", "top right", "bottom left", "bottom right", "center"};

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::vector<std::string> split_words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    return words;
}

}  // namespace

void GrammarConfig::validate() const {
    if (shapes.empty() || colors.empty() || sizes.empty() || positions.empty())
        throw ConfigError("grammar attribute lists must be non-empty");
    if (colors.size() < 2) throw ConfigError("grammar needs at least 2 colors (object and background differ)");
    for (const auto& s : shapes)
        if (!contains(kKnownShapes, s)) throw ConfigError("unknown shape: " + s);
    for (const auto& c : colors) (void)color_by_name(c);
    for (const auto& s : sizes)
        if (!contains(kKnownSizes, s)) throw ConfigError("unknown size: " + s);
    for (const auto& p : positions)
        if (!contains(kKnownPositions, p)) throw ConfigError("unknown position: " + p);
    if (position_clause_probability < 0.0 || position_clause_probability > 1.0)
        throw ConfigError("position_clause_probability must lie in [0,1]");
    if (image_size < 16 || image_size % 16 != 0) throw ConfigError("image_size must be a positive multiple of 16");
}

std::string render_caption(const SceneAttributes& a) {
    std::string caption = "a " + a.size + " " + a.object_color + " " + a.shape + " on a " + a.background_color +
                          " background";
    if (a.position_in_caption) caption += " in the " + a.position;
    return caption;
}

ParsedCaption parse_caption(const std::string& caption, const GrammarConfig& grammar) {
    const auto w = split_words(caption);
    auto fail = [&] { return ConfigError("caption is not a grammar production: \"" + caption + "\""); };
    if (w.size() < 8 || w[0] != "a" || w[4] != "on" || w[5] != "a" || w[7] != "background") throw fail();
    ParsedCaption p{w[1], w[2], w[3], w[6], std::nullopt};
    if (!contains(grammar.sizes, p.size) || !contains(grammar.colors, p.object_color) ||
        !contains(grammar.shapes, p.shape) || !contains(grammar.colors, p.background_color))
        throw fail();
    if (w.size() > 8) {
        if (w.size() < 11 || w[8] != "in" || w[9] != "the") throw fail();
        std::string pos = w[10];
        for (std::size_t i = 11; i < w.size(); ++i) pos += " " + w[i];
        if (!contains(grammar.positions, pos)) throw fail();
        p.position = pos;
    }
    return p;
}

double Scene::mask_fraction() const {
    if (mask.empty()) return 0.0;
    return static_cast<double>(std::count(mask.begin(), mask.end(), std::uint8_t{1})) / mask.size();
}

namespace {

bool inside_shape(const std::string& shape, double dx, double dy, double r) {
    if (shape == "circle") return dx * dx + dy * dy <= r * r;
    if (shape == "square") return std::abs(dx) <= 0.89 * r && std::abs(dy) <= 0.89 * r;
    if (shape == "diamond") return std::abs(dx) + std::abs(dy) <= 1.25 * r;
    // Upward equilateral triangle, circumradius 1.35 r; y grows downward.
    const double R = 1.35 * r;
    const double pi = std::numbers::pi;
    const std::array<double, 3> ang{-pi / 2, pi / 6, 5 * pi / 6};
    std::array<double, 3> vx{}, vy{};
    for (int i = 0; i < 3; ++i) {
        vx[i] = R * std::cos(ang[i]);
        vy[i] = R * std::sin(ang[i]);
    }
    auto edge = [&](int i, int j) { return (vx[j] - vx[i]) * (dy - vy[i]) - (vy[j] - vy[i]) * (dx - vx[i]); };
    const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
    return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
}

std::array<double, 2> position_center(const std::string& position) {
    if (position == "top left") return {0.28, 0.28};
    if (position == "top right") return {0.72, 0.28};
    if (position == "bottom left") return {0.28, 0.72};
    if (position == "bottom right") return {0.72, 0.72};
    return {0.5, 0.5};
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const GrammarConfig& grammar) {
    grammar.validate();
    std::mt19937_64 rng(splitmix64(seed));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto pick = [&](const std::vector<std::string>& v) -> const std::string& {
        return v[static_cast<std::size_t>(unit(rng) * v.size()) % v.size()];
    };

    SceneAttributes a;
    a.shape = pick(grammar.shapes);
    a.object_color = pick(grammar.colors);
    do {
        a.background_color = pick(grammar.colors);
    } while (a.background_color == a.object_color);
    a.size = pick(grammar.sizes);
    a.position = pick(grammar.positions);
    a.position_in_caption = unit(rng) < grammar.position_clause_probability;

    const int S = grammar.image_size;
    const double radius_frac = a.size == "small" ? 0.11 + 0.03 * unit(rng) : 0.22 + 0.05 * unit(rng);
    const double r = radius_frac * S;
    const auto center = position_center(a.position);
    const double cx = (center[0] + 0.08 * (unit(rng) - 0.5)) * S;
    const double cy = (center[1] + 0.08 * (unit(rng) - 0.5)) * S;

    const double two_pi = 2.0 * std::numbers::pi;
    const double stripe_angle = unit(rng) * std::numbers::pi;
    const double stripe_phase = unit(rng) * two_pi;
    const double stripe_period = 3.0 + 2.0 * unit(rng);
    const double wave_fx = 0.5 + unit(rng), wave_fy = 0.5 + unit(rng), wave_phase = unit(rng) * two_pi;

    const auto& obj = color_by_name(a.object_color).rgb;
    const auto& bg = color_by_name(a.background_color).rgb;

    Scene scene;
    scene.height = scene.width = S;
    scene.image = Image(3, S, S);
    scene.mask.assign(static_cast<std::size_t>(S) * S, 0);
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const bool in = inside_shape(a.shape, px - cx, py - cy, r);
            scene.mask[static_cast<std::size_t>(y) * S + x] = in ? 1 : 0;
            for (int c = 0; c < 3; ++c) {
                double v;
                if (in) {
                    const double u = px * std::cos(stripe_angle) + py * std::sin(stripe_angle);
                    const double stripe = 0.5 + 0.5 * std::sin(two_pi * u / stripe_period + stripe_phase);
                    v = obj[c] * (1.0 - 0.15 * stripe) + 0.05 * stripe * (1.0 - obj[c]);
                } else {
                    v = bg[c] + 0.05 * std::sin(two_pi * (px * wave_fx + py * wave_fy) / S + wave_phase);
                }
                scene.image.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    scene.attributes = a;
    scene.caption = render_caption(a);
    return scene;
}

// ---------------------------------------------------------------------------
// Dataset

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw ConfigError("unknown split: " + name);
}

const ManifestRecord& DatasetManifest::find(const std::string& id) const {
    for (const auto& r : records)
        if (r.id == id) return r;
    throw LookupError("id not in manifest: " + id);
}

std::vector<std::string> DatasetManifest::ids(Split split) const {
    std::vector<std::string> out;
    for (const auto& r : records)
        if (r.split == split) out.push_back(r.id);
    return out;
}

namespace {

json attributes_to_json(const SceneAttributes& a) {
    return json{{"shape", a.shape},
                {"object_color", a.object_color},
                {"background_color", a.background_color},
                {"size", a.size},
                {"position", a.position},
                {"position_in_caption", a.position_in_caption}};
}

SceneAttributes attributes_from_json(const json& j) {
    SceneAttributes a;
    a.shape = j.at("shape").get<std::string>();
    a.object_color = j.at("object_color").get<std::string>();
    a.background_color = j.at("background_color").get<std::string>();
    a.size = j.at("size").get<std::string>();
    a.position = j.at("position").get<std::string>();
    a.position_in_caption = j.at("position_in_caption").get<bool>();
    return a;
}

}  // namespace

DatasetManifest build_dataset(const DatasetConfig& config) {
    if (config.train < 1 || config.val < 1 || config.test < 1)
        throw ConfigError("dataset split counts must each be >= 1");
    config.grammar.validate();

    std::error_code ec;
    fs::create_directories(config.root / "images", ec);
    if (ec) throw IoError("cannot create dataset directory " + config.root.string() + ": " + ec.message());

    DatasetManifest manifest;
    manifest.root = config.root;
    manifest.seed = config.seed;
    manifest.grammar_version = config.grammar.version;
    manifest.image_size = config.grammar.image_size;

    const std::array<std::pair<Split, int>, 3> plan{
        {{Split::Train, config.train}, {Split::Val, config.val}, {Split::Test, config.test}}};
    std::ofstream out(config.root / "manifest.jsonl");
    if (!out) throw IoError("cannot write manifest in " + config.root.string());

    int index = 0;
    for (const auto& [split, count] : plan) {
        for (int k = 0; k < count; ++k, ++index) {
            const std::uint64_t scene_seed = splitmix64(config.seed * 0x100000001B3ULL + static_cast<std::uint64_t>(index));
            const Scene scene = generate_scene(scene_seed, config.grammar);
            char id[16];
            std::snprintf(id, sizeof(id), "s%06d", index);
            ManifestRecord rec{id, std::string("images/") + id + ".png", {scene.caption}, scene.attributes, split,
                               scene_seed};
            write_png(scene.image, config.root / rec.image);
            json line{{"id", rec.id},
                      {"image", rec.image},
                      {"captions", rec.captions},
                      {"attributes", attributes_to_json(rec.attributes)},
                      {"split", to_string(rec.split)},
                      {"seed", rec.seed}};
            out << line.dump() << '\n';
            manifest.records.push_back(std::move(rec));
        }
    }
    if (!out) throw IoError("manifest write failed");

    json meta{{"seed", config.seed},
              {"grammar_version", config.grammar.version},
              {"image_size", config.grammar.image_size},
              {"counts", {{"train", config.train}, {"val", config.val}, {"test", config.test}}}};
    std::ofstream(config.root / "meta.json") << meta.dump(2) << '\n';
    return manifest;
}

DatasetManifest load_manifest(const fs::path& root) {
    std::ifstream meta_in(root / "meta.json");
    if (!meta_in) throw IoError("missing meta.json in " + root.string());
    const json meta = json::parse(meta_in);

    DatasetManifest m;
    m.root = root;
    m.seed = meta.at("seed").get<std::uint64_t>();
    m.grammar_version = meta.at("grammar_version").get<std::string>();
    m.image_size = meta.at("image_size").get<int>();

    std::ifstream in(root / "manifest.jsonl");
    if (!in) throw IoError("missing manifest.jsonl in " + root.string());
    std::unordered_set<std::string> seen;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        ManifestRecord r;
        r.id = j.at("id").get<std::string>();
        r.image = j.at("image").get<std::string>();
        r.captions = j.at("captions").get<std::vector<std::string>>();
        r.attributes = attributes_from_json(j.at("attributes"));
        r.split = split_from_string(j.at("split").get<std::string>());
        r.seed = j.value("seed", std::uint64_t{0});
        if (!seen.insert(r.id).second) throw ConfigError("duplicate id in manifest: " + r.id);
        if (!fs::exists(root / r.image)) throw IoError("manifest references missing file: " + r.image);
        m.records.push_back(std::move(r));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Degradation

double cubic_kernel(double x) {
    constexpr double a = -0.5;
    const double ax = std::abs(x);
    if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
    if (ax < 2.0) return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
    return 0.0;
}

namespace {

struct Taps {
    int first = 0;
    std::vector<double> weights;
};

std::vector<Taps> resample_taps(int in_size, int out_size) {
    const double scale = static_cast<double>(out_size) / in_size;
    const double stretch = scale < 1.0 ? scale : 1.0;
    const double support = 2.0 / stretch;
    std::vector<Taps> taps(out_size);
    for (int i = 0; i < out_size; ++i) {
        const double u = (i + 0.5) / scale - 0.5;
        const int first = static_cast<int>(std::floor(u - support));
        const int last = static_cast<int>(std::ceil(u + support));
        Taps t{first, {}};
        double total = 0.0;
        for (int j = first; j <= last; ++j) {
            const double w = stretch * cubic_kernel(stretch * (u - j));
            t.weights.push_back(w);
            total += w;
        }
        for (auto& w : t.weights) w /= total;
        taps[i] = std::move(t);
    }
    return taps;
}

}  // namespace

Image bicubic_resize(const Image& image, int out_height, int out_width) {
    if (image.empty() || out_height < 1 || out_width < 1) throw ShapeError("bicubic_resize: empty geometry");
    const auto row_taps = resample_taps(image.height, out_height);
    const auto col_taps = resample_taps(image.width, out_width);

    // Horizontal pass into double precision, then vertical.
    std::vector<double> tmp(static_cast<std::size_t>(image.channels) * image.height * out_width);
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < out_width; ++x) {
                const auto& t = col_taps[x];
                double acc = 0.0;
                for (std::size_t k = 0; k < t.weights.size(); ++k) {
                    const int sx = std::clamp(t.first + static_cast<int>(k), 0, image.width - 1);
                    acc += t.weights[k] * image.at(c, y, sx);
                }
                tmp[(static_cast<std::size_t>(c) * image.height + y) * out_width + x] = acc;
            }

    Image out(image.channels, out_height, out_width);
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < out_height; ++y) {
            const auto& t = row_taps[y];
            for (int x = 0; x < out_width; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < t.weights.size(); ++k) {
                    const int sy = std::clamp(t.first + static_cast<int>(k), 0, image.height - 1);
                    acc += t.weights[k] * tmp[(static_cast<std::size_t>(c) * image.height + sy) * out_width + x];
                }
                out.at(c, y, x) = static_cast<float>(acc);
            }
        }
    return out;
}

Image bicubic_downscale(const Image& image, int factor, bool allow_identity) {
    if (factor == 1) {
        if (!allow_identity) throw ConfigError("downscale factor 1 is not permitted");
        return image;
    }
    if (factor != 2 && factor != 4 && factor != 8 && factor != 16)
        throw ConfigError("downscale factor must be one of 2, 4, 8, 16");
    if (image.height % factor != 0 || image.width % factor != 0)
        throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " not divisible by factor " + std::to_string(factor));
    return clipped(bicubic_resize(image, image.height / factor, image.width / factor));
}

std::vector<double> gaussian_kernel(const LowpassConfig& config) {
    if (config.size < 1 || config.size % 2 == 0 || config.sigma <= 0.0)
        throw ConfigError("gaussian kernel needs odd size and positive sigma");
    const int half = config.size / 2;
    std::vector<double> k(config.size);
    double total = 0.0;
    for (int i = 0; i < config.size; ++i) {
        const double d = i - half;
        k[i] = std::exp(-d * d / (2.0 * config.sigma * config.sigma));
        total += k[i];
    }
    for (auto& v : k) v /= total;
    return k;
}

namespace {

// Mirror without repeating the edge sample: -1 -> 1, n -> n-2.
int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace

Image lowpass_filter(const Image& image, const LowpassConfig& config) {
    if (image.empty()) throw ShapeError("lowpass_filter: empty image");
    const auto k = gaussian_kernel(config);
    const int half = config.size / 2;
    std::vector<double> tmp(image.data.size());
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                double acc = 0.0;
                for (int d = -half; d <= half; ++d) acc += k[d + half] * image.at(c, y, reflect_index(x + d, image.width));
                tmp[(static_cast<std::size_t>(c) * image.height + y) * image.width + x] = acc;
            }
    Image out(image.channels, image.height, image.width);
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                double acc = 0.0;
                for (int d = -half; d <= half; ++d)
                    acc += k[d + half] *
                           tmp[(static_cast<std::size_t>(c) * image.height + reflect_index(y + d, image.height)) *
                                   image.width + x];
                out.at(c, y, x) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
    return out;
}

// ---------------------------------------------------------------------------
// Batches

Batch load_batch(const DatasetManifest& manifest, std::span<const std::string> ids, int scale) {
    Batch b;
    for (const auto& id : ids) {
        const auto& rec = manifest.find(id);
        Image gt = read_png(manifest.root / rec.image);
        b.lr.push_back(bicubic_downscale(gt, scale));
        b.gt_lowpass.push_back(lowpass_filter(gt));
        b.gt.push_back(std::move(gt));
        b.ids.push_back(id);
        b.captions.push_back(rec.captions.front());
        b.attributes.push_back(rec.attributes);
    }
    return b;
}

SplitTensors load_split(const DatasetManifest& manifest, Split split, int scale) {
    const auto ids = manifest.ids(split);
    if (ids.empty()) throw ConfigError("split " + to_string(split) + " is empty");
    Batch b = load_batch(manifest, ids, scale);
    SplitTensors s;
    s.ids = std::move(b.ids);
    s.captions = std::move(b.captions);
    s.attributes = std::move(b.attributes);
    s.lr = stack_images(b.lr);
    s.gt = stack_images(b.gt);
    s.gt_lowpass = stack_images(b.gt_lowpass);
    return s;
}

}  // namespace tgsr
