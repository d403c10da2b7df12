#include "support.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "tgmatch/cli.hpp"

namespace fs = std::filesystem;

namespace testsupport {

fs::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto p = fs::temp_directory_path() /
           ("tgmatch_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const tgmatch::synthetic::GeneratedDataset& tiny_dataset() {
  static const tgmatch::synthetic::GeneratedDataset ds = [] {
    tgmatch::synthetic::SyntheticSpec spec;
    spec.num_classes = 8;
    spec.videos_per_class = 4;
    spec.test_videos_per_class = 2;
    spec.height = 32;
    spec.width = 32;
    spec.num_frames = 18;
    spec.slow_speed = 0.5;
    spec.fast_speed = 1.0;
    spec.seed = 11;
    return tgmatch::synthetic::generate_synthetic_dataset(spec, temp_dir("tiny_ds"));
  }();
  return ds;
}

tgmatch::data::BatchConfig tiny_batch_config(std::int64_t b_l, std::int64_t b_u) {
  tgmatch::data::BatchConfig c;
  c.labeled_batch = b_l;
  c.unlabeled_batch = b_u;
  c.sampling = {8, 2, 1, 2};
  c.weak.scale_short_side = 32;
  c.weak.output_size = 32;
  c.weak.min_area = 0.5;
  c.weak.flip_prob = 0.0;
  return c;
}

tgmatch::model::BackboneConfig tiny_backbone(std::int64_t num_classes) {
  tgmatch::model::BackboneConfig b;
  b.stage_channels = {4, 4, 8, 8};
  b.blocks_per_stage = 1;
  b.num_classes = num_classes;
  b.projection_hidden = 8;
  b.projection_dim = 4;
  return b;
}

torch::Tensor random_simplex(std::int64_t b, std::int64_t k, std::uint64_t seed, double scale) {
  auto gen = at::detail::createCPUGenerator(seed);
  auto logits = at::normal(0.0, scale, {b, k}, gen, torch::TensorOptions().dtype(torch::kFloat64));
  return torch::softmax(logits, 1);
}

torch::Tensor random_unit_rows(std::int64_t b, std::int64_t d, std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  auto v = at::normal(0.0, 1.0, {b, d}, gen, torch::TensorOptions().dtype(torch::kFloat64));
  return v / v.norm(2, 1, true);
}

tgmatch::modalities::Video random_video(std::int64_t n, std::int64_t h, std::int64_t w,
                                        std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  tgmatch::modalities::Video v;
  v.id = "rand" + std::to_string(seed);
  v.frames = at::rand({n, h, w, 3}, gen, torch::TensorOptions().dtype(torch::kFloat64)) * 255.0;
  return v;
}

int run_cli(const std::vector<std::string>& args) { return tgmatch::cli::run(args); }

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace testsupport
