#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "tgsr/corpus.hpp"
#include "tgsr/text_encoder.hpp"
#include "tgsr/trainer.hpp"

namespace tgsr::fixtures {

/// Largest relative error between autograd and central differences of the
/// scalar f() with respect to every element of `inputs` (double tensors that
/// require grad). |a - n| / max(|a|, |n|, floor).
double max_gradient_error(const std::function<torch::Tensor()>& f, const std::vector<torch::Tensor>& inputs,
                          double step = 1e-6, double floor = 1e-6);

/// Text features with the given per-caption lengths; PAD columns are zero.
TextFeatures random_text(std::int64_t batch, std::int64_t dim, std::int64_t slots,
                         const std::vector<std::int64_t>& lengths, torch::Dtype dtype = torch::kFloat64);

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& name);

/// A small on-disk corpus (cached per process and name).
const DatasetManifest& small_corpus(int train, int val, int test, const std::string& name = "corpus");

/// A config small enough to train in seconds on small_corpus(12, 3, 4).
TrainConfig tiny_config();
/// Encoders pretrained for a few steps with tiny_config (cached).
const Checkpoint& tiny_encoders();
/// A tgsr checkpoint trained for a few steps with tiny_config (cached).
const Checkpoint& tiny_tgsr();

}  // namespace tgsr::fixtures
