#include "doctest_torch.hpp"

#include <cmath>

#include "oracles.hpp"
#include "support.hpp"
#include "tgmatch/errors.hpp"
#include "tgmatch/losses.hpp"

using namespace tgmatch;
using namespace tgmatch::losses;

namespace {

torch::Tensor one_hot_of(const std::vector<std::int64_t>& labels, std::int64_t k) {
  auto t = torch::zeros({static_cast<std::int64_t>(labels.size()), k}, torch::kFloat64);
  for (std::size_t i = 0; i < labels.size(); ++i) t[static_cast<std::int64_t>(i)][labels[i]] = 1.0;
  return t;
}

double value(const torch::Tensor& t) { return t.item<double>(); }

}  // namespace

TEST_CASE("supervised_ce matches the loop oracle") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const std::int64_t b = 1 + static_cast<std::int64_t>(seed % 8);
    const std::int64_t k = 2 + static_cast<std::int64_t>((seed * 5) % 15);
    auto p = testsupport::random_simplex(b, k, seed);
    std::vector<std::int64_t> labels;
    for (std::int64_t i = 0; i < b; ++i) labels.push_back((i * 3 + static_cast<std::int64_t>(seed)) % k);
    auto y = one_hot_of(labels, k);
    CHECK(std::abs(value(supervised_ce(p, y)) - oracle::supervised_ce(p, y)) <= 1e-6);
  }
}

TEST_CASE("supervised_ce examples") {
  auto p = torch::tensor({0.7, 0.3}, torch::kFloat64).view({1, 2});
  CHECK(value(supervised_ce(p, one_hot_of({0}, 2))) == doctest::Approx(0.356675).epsilon(1e-6));
  auto u = torch::full({3, 10}, 0.1, torch::kFloat64);
  CHECK(value(supervised_ce(u, one_hot_of({0, 4, 9}, 10))) == doctest::Approx(std::log(10.0)));
  auto perfect = one_hot_of({1, 0}, 3);
  CHECK(value(supervised_ce(perfect, perfect)) == doctest::Approx(0.0).epsilon(1e-9));
  auto zero = torch::tensor({0.0, 1.0}, torch::kFloat64).view({1, 2});
  CHECK(std::isfinite(value(supervised_ce(zero, one_hot_of({0}, 2)))));
}

TEST_CASE("unsupervised_ce matches the loop oracle") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const std::int64_t b = 1 + static_cast<std::int64_t>(seed % 8);
    const std::int64_t k = 2 + static_cast<std::int64_t>((seed * 7) % 15);
    auto weak = testsupport::random_simplex(b, k, 1000 + seed, 3.0);
    auto strong = testsupport::random_simplex(b, k, 2000 + seed);
    const double gamma = 0.3 + 0.05 * static_cast<double>(seed % 8);
    auto pseudo = threshold_pseudo_labels(weak, gamma);
    std::vector<bool> mask;
    std::vector<std::int64_t> labels;
    for (std::int64_t j = 0; j < b; ++j) {
      std::vector<double> row;
      for (std::int64_t c = 0; c < k; ++c) row.push_back(oracle::at2(weak, j, c));
      auto f = oracle::fuse_row(row, row, gamma);
      mask.push_back(f.mask);
      labels.push_back(f.label);
    }
    CHECK(std::abs(value(unsupervised_ce(strong, pseudo)) -
                   oracle::unsupervised_ce(strong, mask, labels)) <= 1e-6);
  }
}

TEST_CASE("unsupervised_ce examples and consistency") {
  auto weak = torch::tensor({0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.6, 0.4, 0.3, 0.7}, torch::kFloat64)
                  .view({5, 2});
  auto none = threshold_pseudo_labels(weak, 0.95);
  CHECK(value(unsupervised_ce(weak, none)) == 0.0);

  auto one = threshold_pseudo_labels(weak, 0.85);  // only row 0 is confident
  auto strong = torch::full({5, 2}, 0.5, torch::kFloat64);
  CHECK(value(unsupervised_ce(strong, one)) == doctest::Approx(0.138629).epsilon(1e-5));

  // all confident with true labels == supervised_ce
  auto p = testsupport::random_simplex(6, 5, 3);
  auto all = threshold_pseudo_labels(p, 0.0);
  auto y = torch::nn::functional::one_hot(all.labels, 5).to(torch::kFloat64);
  CHECK(value(unsupervised_ce(p, all)) == doctest::Approx(value(supervised_ce(p, y))));
}

TEST_CASE("cross_modal_infonce matches the pair oracle") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::int64_t b = 2 + static_cast<std::int64_t>(seed % 7);
    const std::int64_t d = 3 + static_cast<std::int64_t>(seed % 5);
    auto r = testsupport::random_unit_rows(b, d, seed);
    auto t = testsupport::random_unit_rows(b, d, 500 + seed);
    for (double tau : {0.1, 0.5, 1.0}) {
      for (bool sym : {true, false}) {
        CHECK(std::abs(value(cross_modal_infonce(r, t, tau, sym)) - oracle::infonce(r, t, tau, sym)) <=
              1e-6);
      }
    }
  }
}

TEST_CASE("cross_modal_infonce examples") {
  auto e = torch::eye(2, torch::kFloat64);
  CHECK(value(cross_modal_infonce(e, e, 0.5)) == doctest::Approx(0.126928).epsilon(1e-5));
  CHECK(value(cross_modal_infonce(e, e, 1e6)) == doctest::Approx(std::log(2.0)).epsilon(1e-5));
  CHECK_THROWS_AS(cross_modal_infonce(e.slice(0, 0, 1), e.slice(0, 0, 1), 0.5), Error);
}

TEST_CASE("fusion agrees with direct evaluation on a 2-class grid") {
  std::vector<double> grid;
  for (int i = 0; i <= 200; ++i) grid.push_back(i / 200.0);
  for (double x : {0.3, 0.6, 0.4, 0.7, 0.29999999, 0.30000001}) grid.push_back(x);
  const auto n = static_cast<std::int64_t>(grid.size());
  auto p = torch::empty({n * n, 2}, torch::kFloat64);
  auto q = torch::empty({n * n, 2}, torch::kFloat64);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      const auto r = i * n + j;
      p[r][0] = grid[static_cast<std::size_t>(i)];
      p[r][1] = 1.0 - grid[static_cast<std::size_t>(i)];
      q[r][0] = grid[static_cast<std::size_t>(j)];
      q[r][1] = 1.0 - grid[static_cast<std::size_t>(j)];
    }
  auto fused = fuse_pseudo_labels(p, q, 0.3);
  auto pa = p.accessor<double, 2>();
  auto qa = q.accessor<double, 2>();
  auto ma = fused.mask.accessor<bool, 1>();
  auto la = fused.labels.accessor<std::int64_t, 1>();
  std::int64_t mismatches = 0;
  for (std::int64_t r = 0; r < n * n; ++r) {
    auto o = oracle::fuse_row({pa[r][0], pa[r][1]}, {qa[r][0], qa[r][1]}, 0.3);
    if (o.mask != ma[r] || o.label != la[r]) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("fusion examples and metrics") {
  auto p = torch::tensor({0.9, 0.1}, torch::kFloat64).view({1, 2});
  auto q = torch::tensor({0.5, 0.5}, torch::kFloat64).view({1, 2});
  auto f = fuse_pseudo_labels(p, q, 0.3);
  CHECK(f.fused_probs[0][0].item<double>() == doctest::Approx(0.7));
  CHECK(f.mask[0].item<bool>());
  CHECK(f.labels[0].item<std::int64_t>() == 0);

  auto u = torch::full({4, 101}, 1.0 / 101, torch::kFloat64);
  CHECK(fuse_pseudo_labels(u, u, 0.3).mask_fraction() == 0.0);
  CHECK(fuse_pseudo_labels(u, u, 0.0).mask_fraction() == 1.0);

  auto r = testsupport::random_simplex(8, 6, 1);
  auto t = testsupport::random_simplex(8, 6, 2);
  auto same = fuse_pseudo_labels(r, r, 0.4);
  auto direct = threshold_pseudo_labels(r, 0.4);
  CHECK(torch::equal(same.mask, direct.mask));
  CHECK(torch::equal(same.labels, direct.labels));

  auto avg = assign_pseudo_labels(r, t, PseudoLabelMetric::Average, 0.3);
  CHECK(torch::equal(avg.for_rgb.labels, avg.for_tg.labels));
  auto self = assign_pseudo_labels(r, t, PseudoLabelMetric::Self, 0.3);
  CHECK(torch::equal(self.for_rgb.labels, threshold_pseudo_labels(r, 0.3).labels));
  CHECK(torch::equal(self.for_tg.labels, threshold_pseudo_labels(t, 0.3).labels));
  auto rgb_only = assign_pseudo_labels(r, t, PseudoLabelMetric::RgbOnly, 0.3);
  CHECK(torch::equal(rgb_only.for_tg.labels, threshold_pseudo_labels(r, 0.3).labels));
  auto tg_only = assign_pseudo_labels(r, t, PseudoLabelMetric::TgOnly, 0.3);
  CHECK(torch::equal(tg_only.for_rgb.labels, threshold_pseudo_labels(t, 0.3).labels));
  CHECK_THROWS_AS(fuse_pseudo_labels(r, t.slice(1, 0, 5), 0.3), ShapeError);
}

TEST_CASE("alignment functions") {
  auto a = torch::randn({2, 4, 2, 3, 3}, torch::kFloat64);
  CHECK(value(block_alignment(a, a, AlignmentKind::L1)) == 0.0);
  CHECK(value(block_alignment(a, a, AlignmentKind::L2)) == 0.0);
  CHECK(value(block_alignment(a, a, AlignmentKind::Cosine)) == doctest::Approx(-1.0).epsilon(1e-12));

  auto e1 = torch::tensor({1.0, 0.0}, torch::kFloat64).view({1, 2, 1, 1, 1});
  auto e2 = torch::tensor({0.0, 1.0}, torch::kFloat64).view({1, 2, 1, 1, 1});
  CHECK(value(block_alignment(e1, e2, AlignmentKind::Cosine)) == 0.0);

  auto b = torch::randn({2, 4, 2, 3, 3}, torch::kFloat64);
  auto s1 = torch::rand({2, 1, 2, 3, 3}, torch::kFloat64) + 0.5;
  auto s2 = torch::rand({2, 1, 2, 3, 3}, torch::kFloat64) * 3 + 0.1;
  for (auto kind : {AlignmentKind::L1, AlignmentKind::L2, AlignmentKind::Cosine}) {
    const int k = kind == AlignmentKind::L1 ? 0 : kind == AlignmentKind::L2 ? 1 : 2;
    CHECK(std::abs(value(block_alignment(a, b, kind)) - oracle::alignment(a, b, k)) <= 1e-9);
    const double base = value(block_alignment(a, b, kind));
    const double scaled = value(block_alignment(a * s1, b * s2, kind));
    if (kind == AlignmentKind::Cosine)
      CHECK(std::abs(base - scaled) <= 1e-12);
    else
      CHECK(std::abs(base - scaled) > 1e-3);
  }
  CHECK_THROWS_AS(block_alignment(a, b.slice(1, 0, 3), AlignmentKind::L1), ShapeError);
}

TEST_CASE("dense alignment averages over the chosen blocks") {
  model::BlockFeatureSet r, t;
  t.modality = modalities::Modality::TG;
  for (int i = 0; i < 4; ++i) {
    r.features.push_back(torch::randn({2, 3, 2, 2, 2}, torch::kFloat64));
    t.features.push_back(torch::randn({2, 3, 2, 2, 2}, torch::kFloat64));
  }
  LossWeights w;
  w.alignment_kind = AlignmentKind::L2;
  w.aligned_blocks = {2, 4};
  const double expect = (value(block_alignment(r.features[1], t.features[1], AlignmentKind::L2)) +
                         value(block_alignment(r.features[3], t.features[3], AlignmentKind::L2))) /
                        2.0;
  CHECK(value(dense_alignment_loss(r, t, w)) == doctest::Approx(expect).epsilon(1e-12));

  auto bad = w;
  bad.aligned_blocks.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("total loss") {
  LossWeights w;
  auto s = [](double v) { return torch::tensor(v, torch::kFloat64); };
  LossTerms zero{s(0), s(0), s(0), s(0)};
  CHECK(value(total_loss(zero, w)) == 0.0);
  LossTerms ex{s(1), s(1), s(-1), s(0.2)};
  CHECK(value(total_loss(ex, w)) == doctest::Approx(0.2).epsilon(1e-12));
  LossTerms partial;
  partial.fm_rgb = s(2.0);
  CHECK(value(total_loss(partial, w)) == doctest::Approx(1.0));

  LossTerms bad{s(1), s(1), s(std::nan("")), s(0.2)};
  try {
    total_loss(bad, w);
    FAIL("expected a training fault");
  } catch (const TrainingFault& e) {
    CHECK(e.term() == "kd");
  }
}
