#include "doctest_torch.hpp"

#include <map>

#include "support.hpp"
#include "tgmatch/data.hpp"
#include "tgmatch/errors.hpp"
#include "tgmatch/video_io.hpp"

using namespace tgmatch;
using namespace tgmatch::data;

namespace {

DatasetManifest counted_manifest(std::int64_t classes, std::int64_t per_class) {
  DatasetManifest m;
  m.num_classes = classes;
  for (std::int64_t c = 0; c < classes; ++c)
    for (std::int64_t i = 0; i < per_class; ++i) {
      const auto id = "c" + std::to_string(c) + "_" + std::to_string(i);
      m.entries.push_back({id, "videos/" + id + ".tgv", c, 20});
    }
  return m;
}

}  // namespace

TEST_CASE("balanced split counting and determinism") {
  auto all = counted_manifest(10, 20);
  SplitSpec spec;
  spec.per_class_count = 2;
  auto a = make_split(all, spec, 3);
  CHECK(a.labeled().size() == 20);
  CHECK(a.unlabeled().size() == 180);
  std::map<std::int64_t, int> per_class;
  for (const auto& e : a.labeled()) ++per_class[e.class_id];
  for (const auto& [c, n] : per_class) CHECK(n == 2);
  CHECK(make_split(all, spec, 3).labeled_ids == a.labeled_ids);
  CHECK(make_split(all, spec, 4).labeled_ids != a.labeled_ids);

  SplitSpec full;
  full.labeled_ratio = 1.0;
  CHECK(make_split(all, full, 0).labeled_ids.size() == 200);

  SplitSpec ratio;
  ratio.labeled_ratio = 0.1;
  CHECK(make_split(all, ratio, 0).labeled_ids.size() == 20);

  SplitSpec too_many;
  too_many.per_class_count = 21;
  CHECK_THROWS_AS(make_split(all, too_many, 0), Error);
}

TEST_CASE("manifest round trip") {
  auto m = counted_manifest(3, 4);
  m.labeled_ids = {"c0_1", "c2_3"};
  auto dir = testsupport::temp_dir("manifest");
  write_manifest(dir / "m.tsv", m);
  auto back = read_manifest(dir / "m.tsv");
  CHECK((back.entries == m.entries));
  CHECK(back.num_classes == 3);
  CHECK(back.labeled_ids == m.labeled_ids);
  CHECK(back.root == dir);
  CHECK_THROWS_AS(read_manifest(dir / "missing.tsv"), IoError);
}

TEST_CASE("packed video round trip") {
  auto dir = testsupport::temp_dir("video_io");
  auto frames = (torch::rand({3, 5, 4, 3}) * 255).round().to(torch::kUInt8);
  video_io::write_packed(dir / "v.tgv", frames);
  CHECK(torch::equal(video_io::read_packed(dir / "v.tgv"), frames));
  video_io::write_frame_directory(dir / "frames", frames);
  CHECK(torch::equal(video_io::read_frame_directory(dir / "frames"), frames));
}

TEST_CASE("weak pairs share one record") {
  const auto& ds = testsupport::tiny_dataset();
  VideoStore store(ds.train.root);
  auto cfg = testsupport::tiny_batch_config();
  cfg.weak.flip_prob = 0.5;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto& entry = ds.train.entries[s];
    const auto& video = store.get(entry);
    auto pair = make_weak_pair(video, cfg, s);
    CHECK(pair.rgb.start_frame == pair.tg.start_frame);
    auto window = modalities::make_window(video.num_frames(), cfg.sampling, pair.rgb.start_frame);
    auto [raw_rgb, raw_tg] = modalities::extract_clip_pair(video, window);
    CHECK(torch::equal(augment::apply_weak(raw_rgb, pair.record).frames, pair.rgb.frames));
    CHECK(torch::equal(augment::apply_weak(raw_tg, pair.record).frames, pair.tg.frames));
  }
}

TEST_CASE("sampler determinism, shapes and epoch contract") {
  const auto& ds = testsupport::tiny_dataset();
  SplitSpec spec;
  spec.per_class_count = 1;
  auto m = make_split(ds.train, spec, 1);
  auto cfg = testsupport::tiny_batch_config(3, 4);
  SemiBatchSampler a(m, cfg, 9), b(m, cfg, 9);
  CHECK(a.steps_per_epoch() == 6);  // 24 unlabeled / 4
  for (int step = 0; step < 3; ++step) {
    auto x = a.next_batch();
    auto y = b.next_batch();
    REQUIRE(x.labeled_rgb_weak.size() == 3);
    REQUIRE(x.unlabeled_rgb_strong.size() == 4);
    CHECK(x.labels == y.labels);
    CHECK((x.one_hot.sizes() == torch::IntArrayRef{3, 8}));
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(torch::equal(x.labeled_rgb_weak[i].frames, y.labeled_rgb_weak[i].frames));
      CHECK(x.labeled_rgb_weak[i].source_id == x.labeled_tg_weak[i].source_id);
      CHECK(x.labeled_rgb_weak[i].frames.sizes() == x.labeled_tg_weak[i].frames.sizes());
    }
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(torch::equal(x.unlabeled_tg_strong[i].frames, y.unlabeled_tg_strong[i].frames));
      CHECK(x.unlabeled_rgb_weak[i].source_id == x.unlabeled_tg_weak[i].source_id);
      CHECK(x.unlabeled_rgb_strong[i].source_id == x.unlabeled_rgb_weak[i].source_id);
      CHECK(x.unlabeled_tg_weak[i].modality == modalities::Modality::TG);
    }
  }

  SemiBatchSampler c(m, cfg, 10);
  for (int step = 0; step < 10; ++step) c.next_batch(false);
  std::map<std::string, int> seen;
  bool all_once = false;
  for (const auto& id : c.labeled_history()) {
    const int n = ++seen[id];
    if (seen.size() == m.labeled_ids.size()) all_once = true;
    if (n == 3) CHECK(all_once);
  }
  CHECK(all_once);

  auto no_labels = ds.train;
  CHECK_THROWS_AS(SemiBatchSampler(no_labels, cfg, 0), ConfigError);
}
