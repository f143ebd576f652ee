#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unistd.h>

namespace tgsr::fixtures {

double max_gradient_error(const std::function<torch::Tensor()>& f, const std::vector<torch::Tensor>& inputs,
                          double step, double floor) {
    for (const auto& x : inputs)
        if (x.grad().defined()) x.mutable_grad().zero_();
    f().backward();
    double worst = 0.0;
    for (const auto& x : inputs) {
        // Inputs the loss never touches have no grad; their true gradient is zero.
        const auto analytic = x.grad().defined() ? x.grad().clone().contiguous() : torch::zeros_like(x);
        torch::NoGradGuard no_grad;
        auto flat = x.view({-1});
        const auto* a = analytic.data_ptr<double>();
        for (std::int64_t i = 0; i < flat.numel(); ++i) {
            const double orig = flat[i].item<double>();
            flat[i] = orig + step;
            const double up = f().item<double>();
            flat[i] = orig - step;
            const double down = f().item<double>();
            flat[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double err = std::abs(a[i] - numeric) / std::max({std::abs(a[i]), std::abs(numeric), floor});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

TextFeatures random_text(std::int64_t batch, std::int64_t dim, std::int64_t slots,
                         const std::vector<std::int64_t>& lengths, torch::Dtype dtype) {
    auto words = torch::randn({batch, dim, slots}, torch::TensorOptions().dtype(dtype));
    auto len = torch::tensor(lengths, torch::kInt64);
    auto mask = torch::arange(slots).unsqueeze(0) < len.unsqueeze(1);
    words = words * mask.unsqueeze(1).to(dtype);
    return {words, torch::randn({batch, dim}, torch::TensorOptions().dtype(dtype)), len};
}

std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("tgsr_test_" + std::to_string(::getpid()) + "_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

const DatasetManifest& small_corpus(int train, int val, int test, const std::string& name) {
    static std::map<std::string, DatasetManifest> cache;
    const auto key = name + "_" + std::to_string(train) + "_" + std::to_string(val) + "_" + std::to_string(test);
    auto it = cache.find(key);
    if (it == cache.end()) {
        DatasetConfig config;
        config.root = temp_dir(key);
        config.seed = 7;
        config.train = train;
        config.val = val;
        config.test = test;
        it = cache.emplace(key, build_dataset(config)).first;
    }
    return it->second;
}

TrainConfig tiny_config() {
    TrainConfig c;
    apply_overrides(c, {"model.dim=8", "model.channels=4", "model.residual_blocks=1", "model.encoder_channels=4",
                        "model.disc_channels=4", "optim.batch_size=4", "optim.pretrain_batch_size=4", "optim.pretrain_steps=4", "optim.train_steps=3",
                        "run.distractors=2", "run.log_every=1", "run.sample_every=2", "run.checkpoint_every=2"});
    return c;
}

const Checkpoint& tiny_encoders() {
    static const Checkpoint ckpt = pretrain_encoders(tiny_config(), small_corpus(12, 3, 4)).checkpoint;
    return ckpt;
}

const Checkpoint& tiny_tgsr() {
    static const Checkpoint ckpt = train_tgsr(tiny_config(), small_corpus(12, 3, 4), tiny_encoders()).checkpoint;
    return ckpt;
}

}  // namespace tgsr::fixtures
