#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "tgmatch/data.hpp"
#include "tgmatch/model.hpp"
#include "tgmatch/synthetic.hpp"

namespace testsupport {

/// Fresh directory under the system temp dir, removed at process exit is not attempted.
std::filesystem::path temp_dir(const std::string& tag);

/// A small synthetic dataset (8 heading classes, 32x32, 18 frames), generated once per process.
const tgmatch::synthetic::GeneratedDataset& tiny_dataset();

/// Batch config matching tiny_dataset() (8 frames, stride 2, 32x32 crops, no flip).
tgmatch::data::BatchConfig tiny_batch_config(std::int64_t b_l = 3, std::int64_t b_u = 3);

/// Tiny backbone for fast tests.
tgmatch::model::BackboneConfig tiny_backbone(std::int64_t num_classes = 8);

/// Random rowwise simplex matrix [b, k] (softmax of scaled normals).
torch::Tensor random_simplex(std::int64_t b, std::int64_t k, std::uint64_t seed,
                             double scale = 2.0);

/// Random unit rows [b, d].
torch::Tensor random_unit_rows(std::int64_t b, std::int64_t d, std::uint64_t seed);

/// Random float64 video [n, h, w, 3] with values in [0, 255].
tgmatch::modalities::Video random_video(std::int64_t n, std::int64_t h, std::int64_t w,
                                        std::uint64_t seed);

/// Runs the CLI with the given arguments, returning its exit code.
int run_cli(const std::vector<std::string>& args);

std::string read_file(const std::filesystem::path& p);

}  // namespace testsupport
