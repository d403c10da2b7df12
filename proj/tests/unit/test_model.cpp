#include "doctest_torch.hpp"

#include "support.hpp"
#include "tgmatch/errors.hpp"
#include "tgmatch/losses.hpp"
#include "tgmatch/model.hpp"

using namespace tgmatch;
using namespace tgmatch::model;
namespace nn = torch::nn;

namespace {

std::shared_ptr<nn::Module> child(nn::Module& m, const std::string& name) {
  for (const auto& item : m.named_modules()) {
    if (item.key() == name) return item.value();
  }
  FAIL("no module " << name);
  return nullptr;
}

// Per-channel mean and unbiased variance of [B, C, ...] computed with explicit loops.
std::pair<std::vector<double>, std::vector<double>> channel_stats(const torch::Tensor& x) {
  auto flat = x.to(torch::kFloat64).transpose(0, 1).contiguous().view({x.size(1), -1});
  auto a = flat.accessor<double, 2>();
  std::vector<double> mean, var;
  for (std::int64_t c = 0; c < flat.size(0); ++c) {
    double s = 0;
    for (std::int64_t i = 0; i < flat.size(1); ++i) s += a[c][i];
    const double m = s / static_cast<double>(flat.size(1));
    double v = 0;
    for (std::int64_t i = 0; i < flat.size(1); ++i) v += (a[c][i] - m) * (a[c][i] - m);
    mean.push_back(m);
    var.push_back(v / static_cast<double>(flat.size(1) - 1));
  }
  return {mean, var};
}

double max_diff(const torch::Tensor& t, const std::vector<double>& v) {
  double d = 0;
  auto f = t.to(torch::kFloat64);
  for (std::size_t i = 0; i < v.size(); ++i)
    d = std::max(d, std::abs(f[static_cast<std::int64_t>(i)].item<double>() - v[i]));
  return d;
}

std::map<std::string, torch::Tensor> snapshot(nn::Module& m) {
  std::map<std::string, torch::Tensor> out;
  for (auto& p : m.named_parameters()) out[p.key()] = p.value().detach().clone();
  return out;
}

}  // namespace

TEST_CASE("full-width backbone block shapes") {
  auto cfg = BackboneConfig::full_width(101);
  auto shapes = expected_block_shapes(cfg, 8, 224, 224);
  std::vector<std::array<std::int64_t, 4>> want{
      {64, 8, 56, 56}, {128, 4, 28, 28}, {256, 2, 14, 14}, {512, 1, 7, 7}};
  CHECK((shapes == want));
}

TEST_CASE("desk backbone forward contracts") {
  torch::manual_seed(0);
  BackboneConfig cfg;
  cfg.num_classes = 5;
  VideoNet net(cfg, modalities::Modality::RGB);
  net->eval();
  auto x = torch::randn({2, 3, 8, 32, 32});
  auto out = forward(net, x);
  CHECK((out.logits.sizes() == torch::IntArrayRef{2, 5}));
  CHECK(torch::allclose(out.probabilities.sum(1), torch::ones({2}), 0, 1e-6));
  CHECK(torch::allclose(out.projection.norm(2, 1), torch::ones({2}), 0, 1e-5));
  auto again = forward(net, x);
  CHECK(torch::equal(out.logits, again.logits));
  auto shapes = expected_block_shapes(cfg, 8, 32, 32);
  for (std::size_t i = 0; i < 4; ++i) {
    auto s = out.block_features.features[i].sizes();
    CHECK(s[1] == shapes[i][0]);
    CHECK(s[2] == shapes[i][1]);
    CHECK(s[3] == shapes[i][2]);
    CHECK(s[4] == shapes[i][3]);
  }
  // Doubling H doubles every stage's height.
  auto tall = forward(net, torch::randn({1, 3, 8, 64, 32}));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(tall.block_features.features[i].size(3) == 2 * out.block_features.features[i].size(3));

  CHECK_THROWS_AS(forward(net, torch::randn({2, 1, 8, 32, 32})), ShapeError);
}

TEST_CASE("projection head normalizes") {
  torch::manual_seed(1);
  ProjectionHead head(16, 8, 4);
  head->eval();
  auto z = head->forward(torch::zeros({3, 16}));
  CHECK(torch::allclose(z.norm(2, 1), torch::ones({3}), 0, 1e-5));
  CHECK(torch::allclose(z[0], z[2]));
  auto v = torch::randn({4, 6});
  auto n1 = v / v.norm(2, 1, true);
  auto n2 = (10 * v) / (10 * v).norm(2, 1, true);
  CHECK(torch::allclose(n1, n2, 0, 1e-6));
}

TEST_CASE("fresh networks give distinct projections and a live contrastive gradient") {
  torch::manual_seed(4);
  auto cfg = testsupport::tiny_backbone();
  cfg.dropout_rate = 0.0;
  VideoNet rgb(cfg, modalities::Modality::RGB);
  VideoNet tg(cfg, modalities::Modality::TG);
  auto a = forward(rgb, torch::randn({4, 3, 8, 32, 32}));
  auto b = forward(tg, torch::randn({4, 3, 8, 32, 32}));
  CHECK((a.projection[0] - a.projection[1]).abs().max().item<double>() > 1e-4);
  auto loss = losses::cross_modal_infonce(a.projection, b.projection, 0.5);
  CHECK(std::abs(loss.item<double>() - std::log(4.0)) > 1e-6);
  loss.backward();
  for (auto& p : rgb->named_parameters())
    if (p.key().starts_with("projection.") && p.key().ends_with("weight"))
      CHECK_MESSAGE(p.value().grad().abs().sum().item<double>() > 0.0, p.key());
}

TEST_CASE("RGB and TG models share no parameters") {
  auto cfg = testsupport::tiny_backbone();
  VideoNet a(cfg, modalities::Modality::RGB), b(cfg, modalities::Modality::TG);
  auto pa = a->parameters();
  auto pb = b->parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].data_ptr() != pb[i].data_ptr());
}

TEST_CASE("gradient flows to the input") {
  torch::manual_seed(2);
  auto cfg = testsupport::tiny_backbone();
  cfg.dropout_rate = 0.0;
  VideoNet net(cfg, modalities::Modality::RGB);
  auto x = torch::randn({2, 3, 8, 32, 32}, torch::requires_grad());
  auto logits = forward(net, x).logits;
  // a plain sum over the batch is flat under train-mode batch norm, so weight the entries
  (logits * torch::randn_like(logits)).sum().backward();
  CHECK(x.grad().abs().sum().item<double>() > 0.0);
}

TEST_CASE("finite-difference gradient check on a width-2 backbone") {
  torch::manual_seed(3);
  BackboneConfig cfg;
  cfg.stage_channels = {2, 2, 2, 2};
  cfg.blocks_per_stage = 1;
  cfg.num_classes = 3;
  cfg.dropout_rate = 0.0;
  cfg.projection_hidden = 4;
  cfg.projection_dim = 2;
  VideoNet net(cfg, modalities::Modality::RGB);
  net->to(torch::kFloat64);
  {
    torch::NoGradGuard ng;
    for (auto& p : net->named_parameters()) {
      if (p.key().find("bn") != std::string::npos && p.key().ends_with("weight"))
        p.value().uniform_(0.5, 1.5);
      else
        p.value().normal_(0.0, 0.5);
    }
  }
  net->train();
  auto x = torch::randn({3, 3, 8, 32, 32}, torch::kFloat64);
  auto wl = torch::randn({3, 3}, torch::kFloat64);
  auto wp = torch::randn({3, 2}, torch::kFloat64);
  auto objective = [&] {
    auto out = net->forward(x);
    return (out.logits * wl).sum() + (out.projection * wp).sum();
  };
  net->zero_grad();
  objective().backward();

  auto params = net->parameters();
  std::mt19937_64 rng(7);
  int checked = 0, worst_index = -1;
  double worst = 0.0;
  const double h = 1e-6;
  while (checked < 20) {
    auto& p = params[rng() % params.size()];
    const auto flat_index = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(p.numel()));
    const double analytic = p.grad().view(-1)[flat_index].item<double>();
    double numeric;
    {
      torch::NoGradGuard ng;
      auto e = p.view(-1)[flat_index];
      const double orig = e.item<double>();
      e.fill_(orig + h);
      const double up = objective().item<double>();
      e.fill_(orig - h);
      const double down = objective().item<double>();
      e.fill_(orig);
      numeric = (up - down) / (2 * h);
    }
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    const double rel = std::abs(analytic - numeric) / scale;
    if (rel > worst) {
      worst = rel;
      worst_index = checked;
    }
    ++checked;
  }
  INFO("worst sample " << worst_index);
  CHECK(worst < 1e-3);
}

TEST_CASE("PreciseBN on a repeated batch matches explicit statistics") {
  torch::manual_seed(4);
  auto cfg = testsupport::tiny_backbone();
  VideoNet net(cfg, modalities::Modality::RGB);
  auto x = torch::randn({4, 3, 8, 32, 32});
  auto before = snapshot(*net);
  precise_bn_recompute(net, {x, x, x});
  for (const auto& p : net->named_parameters()) CHECK(torch::equal(p.value(), before[p.key()]));

  auto stem_conv = std::dynamic_pointer_cast<nn::Conv3dImpl>(child(*net, "stem_conv"));
  auto stem_bn = std::dynamic_pointer_cast<nn::BatchNorm3dImpl>(child(*net, "stem_bn"));
  REQUIRE(stem_conv);
  REQUIRE(stem_bn);
  torch::NoGradGuard ng;
  auto y = stem_conv->forward(x);
  auto [mean, var] = channel_stats(y);
  CHECK(max_diff(stem_bn->running_mean, mean) < 1e-6);
  CHECK(max_diff(stem_bn->running_var, var) < 1e-6);

  CHECK_THROWS_AS(precise_bn_recompute(net, {}), Error);
}

TEST_CASE("PreciseBN over two batches averages their statistics") {
  torch::manual_seed(5);
  auto cfg = testsupport::tiny_backbone();
  VideoNet net(cfg, modalities::Modality::RGB);
  auto a = torch::randn({3, 3, 8, 32, 32});
  auto b = torch::randn({3, 3, 8, 32, 32}) * 2 + 0.5;
  auto stem_conv = std::dynamic_pointer_cast<nn::Conv3dImpl>(child(*net, "stem_conv"));
  auto stem_bn = std::dynamic_pointer_cast<nn::BatchNorm3dImpl>(child(*net, "stem_bn"));
  precise_bn_recompute(net, {a, b});
  torch::NoGradGuard ng;
  auto [ma, va] = channel_stats(stem_conv->forward(a));
  auto [mb, vb] = channel_stats(stem_conv->forward(b));
  std::vector<double> mm, vv;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    mm.push_back((ma[i] + mb[i]) / 2);
    vv.push_back((va[i] + vb[i]) / 2);
  }
  CHECK(max_diff(stem_bn->running_mean, mm) < 1e-5);
  CHECK(max_diff(stem_bn->running_var, vv) < 1e-5);
}

TEST_CASE("batchnorm layer count") {
  auto cfg = testsupport::tiny_backbone();
  VideoNet net(cfg, modalities::Modality::RGB);
  // stem + 4 stages x (2 per block) + 3 shortcut projections + 2 in the head
  CHECK(count_batchnorm_layers(*net) == 1 + 8 + 3 + 2);
}
