#include "tgsr/cli.hpp"

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tgsr/config.hpp"
#include "tgsr/corpus.hpp"
#include "tgsr/errors.hpp"
#include "tgsr/evaluator.hpp"
#include "tgsr/service.hpp"
#include "tgsr/trainer.hpp"

namespace tgsr {

namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    bool json = false;
    std::string checkpoint;

    TrainConfig config() const {
        TrainConfig c = config_path.empty() ? TrainConfig{} : load_config(config_path);
        apply_overrides(c, overrides);
        c.validate();
        return c;
    }
};

/// Human output prints "key: value" lines, --json prints one object per line.
class Emitter {
public:
    Emitter(std::ostream& out, bool json) : out_(out), json_(json) {}
    void emit(const nlohmann::json& record) {
        if (json_) {
            out_ << record.dump() << '\n';
            return;
        }
        for (const auto& [k, v] : record.items()) out_ << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
    }

private:
    std::ostream& out_;
    bool json_;
};

fs::path default_checkpoint(const Common& common, const TrainConfig& config) {
    return common.checkpoint.empty() ? fs::path(config.out_dir) / "final" : fs::path(common.checkpoint);
}

std::string safe_word(const std::string& word) {
    std::string out;
    for (char ch : word) out += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
    return out;
}

std::atomic<HttpServer*> g_server{nullptr};

void stop_server(int) {
    if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"text-guided super-resolution toolkit", "tgsr"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", common.config_path, "INI config file")->check(CLI::ExistingFile);
        cmd->add_option("--set", common.overrides, "override section.key=value (repeatable)");
        cmd->add_flag("--json", common.json, "emit JSON lines");
    };

    auto* gen = app.add_subcommand("gen-data", "render the synthetic corpus");
    auto* pre = app.add_subcommand("pretrain", "pretrain the text and image encoders");
    auto* train = app.add_subcommand("train", "train the super-resolution network");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    auto* infer = app.add_subcommand("infer", "super-resolve one image");
    auto* probe = app.add_subcommand("probe", "run color-word controllability probes");
    auto* serve = app.add_subcommand("serve", "run the HTTP inference service");
    for (auto* cmd : {gen, pre, train, eval, infer, probe, serve}) add_common(cmd);
    for (auto* cmd : {eval, infer, probe, serve}) cmd->add_option("--checkpoint", common.checkpoint, "tgsr checkpoint directory");

    std::string encoders_path;
    train->add_option("--encoders", encoders_path, "encoder checkpoint (default: run.encoder_checkpoint or <out_dir>/encoders)");
    std::string split_name = "test", eval_out;
    int eval_probes = 0;
    eval->add_option("--split", split_name, "train, val or test");
    eval->add_option("--encoders", encoders_path, "encoders used for TIM (default: those in the checkpoint)");
    eval->add_option("--out", eval_out, "report directory (default <out_dir>/eval)");
    eval->add_option("--probes", eval_probes, "also run this many controllability probes");
    std::string image_path, caption, infer_out = ".";
    infer->add_option("--image", image_path, "LR PNG")->required()->check(CLI::ExistingFile);
    infer->add_option("--caption", caption, "caption")->required();
    infer->add_option("--out", infer_out, "output directory");
    int probe_count = 50;
    std::string caption_a, caption_b;
    std::uint64_t scene_seed = 0;
    probe->add_option("--count", probe_count, "number of probes drawn from the split");
    probe->add_option("--split", split_name, "split to draw scenes from");
    probe->add_option("--caption-a", caption_a, "single probe: original caption");
    probe->add_option("--caption-b", caption_b, "single probe: edited caption");
    probe->add_option("--scene-seed", scene_seed, "single probe: scene seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: usage_error: " << e.what() << '\n';
        return kExitUsage;
    }

    Emitter emit(out, common.json);
    std::ostream* progress = common.json ? nullptr : &err;
    try {
        const TrainConfig config = common.config();
        torch::manual_seed(config.seed);

        if (*gen) {
            const auto manifest = build_dataset(config.dataset_config());
            emit.emit({{"event", "dataset"},
                       {"root", manifest.root.string()},
                       {"train", manifest.ids(Split::Train).size()},
                       {"val", manifest.ids(Split::Val).size()},
                       {"test", manifest.ids(Split::Test).size()}});
        } else if (*pre) {
            const auto manifest = load_manifest(config.data_root);
            const auto result = pretrain_encoders(config, manifest, {config.out_dir, progress});
            emit.emit({{"event", "pretrain"},
                       {"checkpoint", (fs::path(config.out_dir) / "encoders").string()},
                       {"final_tic", result.losses.empty() ? 0.0 : result.losses.back()},
                       {"r_precision", result.r_precision}});
        } else if (*train) {
            fs::path enc = encoders_path;
            if (enc.empty()) enc = config.encoder_checkpoint.empty() ? fs::path(config.out_dir) / "encoders"
                                                                     : fs::path(config.encoder_checkpoint);
            const auto manifest = load_manifest(config.data_root);
            const auto result = train_tgsr(config, manifest, load_checkpoint(enc), {config.out_dir, progress});
            const auto& last = result.reports.back();
            emit.emit({{"event", "train"},
                       {"checkpoint", (fs::path(config.out_dir) / "final").string()},
                       {"steps", result.reports.size()},
                       {"final_total", last.total},
                       {"final_l2", last.l2},
                       {"encoder_checksum", result.encoder_checksum_after}});
        } else if (*eval) {
            const auto ckpt = load_checkpoint(default_checkpoint(common, config));
            const auto manifest = load_manifest(config.data_root);
            std::optional<Checkpoint> enc;
            if (!encoders_path.empty()) enc = load_checkpoint(encoders_path);
            auto report = evaluate(ckpt, manifest, split_from_string(split_name), enc,
                                   {25, ckpt.config.distractors, ckpt.config.seed});
            if (eval_probes > 0) {
                TgsrModels models = load_tgsr(ckpt);
                const auto grammar = models.config.dataset_config().grammar;
                report.probes = run_probes(
                    models, make_probe_set(manifest, split_from_string(split_name), grammar, eval_probes, config.seed),
                    grammar);
                report.aggregate();
            }
            const fs::path dir = eval_out.empty() ? fs::path(config.out_dir) / "eval" : fs::path(eval_out);
            report.write(dir);
            emit.emit({{"event", "eval"},
                       {"report", (dir / "report.json").string()},
                       {"mean_psnr", report.mean_psnr},
                       {"mean_ssim", report.mean_ssim},
                       {"mean_tim", report.mean_tim},
                       {"r_precision", report.r_precision},
                       {"probe_change_rate", report.probe_change_rate}});
        } else if (*infer) {
            const auto ckpt = load_checkpoint(default_checkpoint(common, config));
            TgsrModels models = load_tgsr(ckpt);
            torch::NoGradGuard no_grad;
            const auto lr = to_tensor(read_png(image_path)).unsqueeze(0);
            const auto tok = tokenize(caption, models.encoders.vocab, models.config.t_max);
            const std::vector<TokenizedCaption> one{tok};
            const auto output = tgsr_forward(lr, make_token_batch(one), models.encoders.text, models.generator);
            fs::create_directories(infer_out);
            write_png(clipped(from_tensor(output.coarse[0])), fs::path(infer_out) / "coarse.png");
            write_png(clipped(from_tensor(output.fine[0])), fs::path(infer_out) / "fine.png");
            nlohmann::json maps = nlohmann::json::array();
            if (!output.attention.empty()) {
                const auto words = clean_words(caption);
                const auto attn = output.attention.back().word_maps[0];
                for (std::int64_t k = 0; k < tok.length; ++k) {
                    auto m = attn[k];
                    const double lo = m.min().item<double>(), hi = m.max().item<double>();
                    m = hi > lo ? (m - lo) / (hi - lo) : torch::zeros_like(m);
                    const auto name = "attn_" + std::to_string(k) + "_" + safe_word(words[static_cast<std::size_t>(k)]) + ".png";
                    const auto png = encode_gray_png(from_tensor(m.unsqueeze(0)));
                    std::ofstream(fs::path(infer_out) / name, std::ios::binary)
                        .write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
                    maps.push_back(name);
                }
            }
            emit.emit({{"event", "infer"}, {"coarse", "coarse.png"}, {"fine", "fine.png"}, {"attention", maps}});
        } else if (*probe) {
            const auto ckpt = load_checkpoint(default_checkpoint(common, config));
            TgsrModels models = load_tgsr(ckpt);
            const auto grammar = models.config.dataset_config().grammar;
            std::vector<ProbeResult> results;
            if (!caption_a.empty() || !caption_b.empty()) {
                if (caption_a.empty() || caption_b.empty())
                    throw ConfigError("--caption-a and --caption-b go together");
                results.push_back(controllability_probe(models, generate_scene(scene_seed, grammar), caption_a, caption_b));
            } else {
                const auto manifest = load_manifest(config.data_root);
                results = run_probes(
                    models, make_probe_set(manifest, split_from_string(split_name), grammar, probe_count, config.seed),
                    grammar);
            }
            std::size_t changed = 0;
            for (const auto& r : results) {
                changed += r.changed;
                if (common.json)
                    emit.emit({{"event", "probe"}, {"id", r.id}, {"caption_b", r.caption_b}, {"target", r.target_color},
                               {"observed", r.color_b}, {"hue_shift", r.hue_shift}, {"changed", r.changed}});
            }
            emit.emit({{"event", "probe_summary"},
                       {"probes", results.size()},
                       {"changed", changed},
                       {"rate", static_cast<double>(changed) / static_cast<double>(results.size())}});
        } else if (*serve) {
            auto service = std::make_shared<const SrService>(load_checkpoint(default_checkpoint(common, config)),
                                                              config.max_pixels);
            HttpServer server(service);
            const int port = server.bind(config.host, config.port);
            emit.emit({{"event", "serve"}, {"host", config.host}, {"port", port}});
            out.flush();
            g_server = &server;
            std::signal(SIGINT, stop_server);
            std::signal(SIGTERM, stop_server);
            server.listen();
            g_server = nullptr;
        }
        return kExitOk;
    } catch (const Error& e) {
        if (common.json)
            err << nlohmann::json{{"error_code", e.code()}, {"message", e.what()}}.dump() << '\n';
        else
            err << "error: " << e.code() << ": " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        if (common.json)
            err << nlohmann::json{{"error_code", "runtime_error"}, {"message", e.what()}}.dump() << '\n';
        else
            err << "error: runtime_error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace tgsr
