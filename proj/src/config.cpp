#include "tgsr/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "tgsr/errors.hpp"

namespace tgsr {

namespace {

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const auto s = trim(text);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw ConfigError("invalid value for " + key + ": \"" + text + "\"");
    return value;
}

double parse_real(const std::string& key, const std::string& text) {
    const auto s = trim(text);
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size() || !std::isfinite(v)) throw ConfigError("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("invalid value for " + key + ": \"" + text + "\"");
    }
}

bool parse_bool(const std::string& key, const std::string& text) {
    const auto s = trim(text);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("invalid boolean for " + key + ": \"" + text + "\"");
}

std::string format_real(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

struct Field {
    std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <typename M>
Field int_field(M member) {
    return {[member](TrainConfig& c, const std::string& k, const std::string& v) { c.*member = parse_number<int>(k, v); },
            [member](const TrainConfig& c) { return std::to_string(c.*member); }};
}

template <typename M>
Field u64_field(M member) {
    return {[member](TrainConfig& c, const std::string& k, const std::string& v) {
                c.*member = parse_number<std::uint64_t>(k, v);
            },
            [member](const TrainConfig& c) { return std::to_string(c.*member); }};
}

template <typename M>
Field real_field(M member) {
    return {[member](TrainConfig& c, const std::string& k, const std::string& v) { c.*member = parse_real(k, v); },
            [member](const TrainConfig& c) { return format_real(c.*member); }};
}

template <typename M>
Field string_field(M member) {
    return {[member](TrainConfig& c, const std::string&, const std::string& v) { c.*member = trim(v); },
            [member](const TrainConfig& c) { return c.*member; }};
}

template <typename M>
Field bool_field(M member) {
    return {[member](TrainConfig& c, const std::string& k, const std::string& v) { c.*member = parse_bool(k, v); },
            [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field nested_real(double LossWeights::*member) {
    return {[member](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.*member = parse_real(k, v); },
            [member](const TrainConfig& c) { return format_real(c.weights.*member); }};
}

Field nested_gamma(double MatchingConfig::*member) {
    return {[member](TrainConfig& c, const std::string& k, const std::string& v) { c.matching.*member = parse_real(k, v); },
            [member](const TrainConfig& c) { return format_real(c.matching.*member); }};
}

Field nested_flag(bool AblationFlags::*member) {
    return {[member](TrainConfig& c, const std::string& k, const std::string& v) { c.ablation.*member = parse_bool(k, v); },
            [member](const TrainConfig& c) { return std::string(c.ablation.*member ? "true" : "false"); }};
}

// Ordered so that to_text() groups sections.
const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table{
        {"data.root", string_field(&TrainConfig::data_root)},
        {"data.seed", u64_field(&TrainConfig::data_seed)},
        {"data.image_size", int_field(&TrainConfig::image_size)},
        {"data.train", int_field(&TrainConfig::train_count)},
        {"data.val", int_field(&TrainConfig::val_count)},
        {"data.test", int_field(&TrainConfig::test_count)},
        {"data.scale", int_field(&TrainConfig::scale)},
        {"model.dim", int_field(&TrainConfig::dim)},
        {"model.t_max", int_field(&TrainConfig::t_max)},
        {"model.grid", int_field(&TrainConfig::grid)},
        {"model.channels", int_field(&TrainConfig::channels)},
        {"model.residual_blocks", int_field(&TrainConfig::residual_blocks)},
        {"model.encoder_channels", int_field(&TrainConfig::encoder_channels)},
        {"model.disc_channels", int_field(&TrainConfig::disc_channels)},
        {"loss.lambda_l2", nested_real(&LossWeights::l2)},
        {"loss.lambda_cgan", nested_real(&LossWeights::cgan)},
        {"loss.lambda_tic", nested_real(&LossWeights::tic)},
        {"loss.lambda_tar", nested_real(&LossWeights::tar)},
        {"loss.gamma1", nested_gamma(&MatchingConfig::gamma1)},
        {"loss.gamma2", nested_gamma(&MatchingConfig::gamma2)},
        {"loss.gamma3", nested_gamma(&MatchingConfig::gamma3)},
        {"optim.lr", real_field(&TrainConfig::lr)},
        {"optim.pretrain_lr", real_field(&TrainConfig::pretrain_lr)},
        {"optim.beta1", real_field(&TrainConfig::beta1)},
        {"optim.beta2", real_field(&TrainConfig::beta2)},
        {"optim.eps", real_field(&TrainConfig::eps)},
        {"optim.batch_size", int_field(&TrainConfig::batch_size)},
        {"optim.pretrain_batch_size", int_field(&TrainConfig::pretrain_batch_size)},
        {"optim.pretrain_steps", int_field(&TrainConfig::pretrain_steps)},
        {"optim.train_steps", int_field(&TrainConfig::train_steps)},
        {"ablation.use_tam", nested_flag(&AblationFlags::use_tam)},
        {"ablation.use_tic", nested_flag(&AblationFlags::use_tic)},
        {"ablation.use_refine", nested_flag(&AblationFlags::use_refine)},
        {"ablation.use_tar", nested_flag(&AblationFlags::use_tar)},
        {"ablation.use_cgan", nested_flag(&AblationFlags::use_cgan)},
        {"run.seed", u64_field(&TrainConfig::seed)},
        {"run.out_dir", string_field(&TrainConfig::out_dir)},
        {"run.encoder_checkpoint", string_field(&TrainConfig::encoder_checkpoint)},
        {"run.log_every", int_field(&TrainConfig::log_every)},
        {"run.sample_every", int_field(&TrainConfig::sample_every)},
        {"run.checkpoint_every", int_field(&TrainConfig::checkpoint_every)},
        {"run.deterministic", bool_field(&TrainConfig::deterministic)},
        {"run.distractors", int_field(&TrainConfig::distractors)},
        {"run.vocab_min_count", int_field(&TrainConfig::vocab_min_count)},
        {"serve.host", string_field(&TrainConfig::host)},
        {"serve.port", int_field(&TrainConfig::port)},
        {"serve.max_pixels", int_field(&TrainConfig::max_pixels)},
    };
    return table;
}

const Field& field(const std::string& key) {
    for (const auto& [k, f] : fields())
        if (k == key) return f;
    throw ConfigError("unknown config key: " + key);
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr > 0) || !(pretrain_lr > 0) || !(eps > 0)) throw ConfigError("learning rates and eps must be > 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0,1)");
    if (batch_size < 1 || pretrain_batch_size < 1) throw ConfigError("batch sizes must be >= 1");
    if (pretrain_steps < 0 || train_steps < 0) throw ConfigError("step counts must be >= 0");
    if (dim < 1 || t_max < 1 || grid < 1 || channels < 1 || encoder_channels < 1 || disc_channels < 1)
        throw ConfigError("model dimensions must be positive");
    if (image_size % scale != 0) throw ConfigError("image_size must be divisible by scale");
    if (ablation.use_tar && !(ablation.use_tam && ablation.use_refine))
        throw ConfigError("ablation.use_tar requires use_tam and use_refine");
    if (log_every < 1 || sample_every < 1 || checkpoint_every < 1) throw ConfigError("intervals must be >= 1");
    if (distractors < 1) throw ConfigError("run.distractors must be >= 1");
    if (max_pixels < 1) throw ConfigError("serve.max_pixels must be >= 1");
    weights.validate();
    generator_config().validate();
}

GeneratorConfig TrainConfig::generator_config() const {
    GeneratorConfig g;
    g.scale = scale;
    g.channels = channels;
    g.residual_blocks = residual_blocks;
    g.text_dim = dim;
    g.t_max = t_max;
    g.use_tam = ablation.use_tam;
    g.use_refine = ablation.use_refine;
    return g;
}

DatasetConfig TrainConfig::dataset_config() const {
    DatasetConfig d;
    d.root = data_root;
    d.seed = data_seed;
    d.train = train_count;
    d.val = val_count;
    d.test = test_count;
    d.grammar.image_size = image_size;
    return d;
}

void TrainConfig::set(const std::string& dotted_key, const std::string& value) {
    field(dotted_key).set(*this, dotted_key, value);
}

std::string TrainConfig::get(const std::string& dotted_key) const { return field(dotted_key).get(*this); }

const std::vector<std::string>& TrainConfig::keys() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& [k, f] : fields()) out.push_back(k);
        return out;
    }();
    return names;
}

std::string TrainConfig::to_text() const {
    std::ostringstream out;
    std::string section;
    for (const auto& [key, f] : fields()) {
        const auto dot = key.find('.');
        const auto sec = key.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) out << '\n';
            out << '[' << sec << "]\n";
            section = sec;
        }
        out << key.substr(dot + 1) << " = " << f.get(*this) << '\n';
    }
    return out.str();
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, f] : fields()) j[key] = f.get(*this);
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    for (const auto& [key, value] : j.items()) c.set(key, value.get<std::string>());
    return c;
}

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig c;
    std::istringstream in(text);
    std::string section;
    int line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line.erase(comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside of a section");
        c.set(section + "." + trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

void apply_overrides(TrainConfig& config, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be key=value: " + o);
        config.set(trim(o.substr(0, eq)), o.substr(eq + 1));
    }
}

}  // namespace tgsr
