#include "doctest_torch.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "support.hpp"
#include "tgmatch/cli.hpp"
#include "tgmatch/config.hpp"
#include "tgmatch/errors.hpp"

using namespace tgmatch;
using namespace tgmatch::config;
namespace fs = std::filesystem;

namespace {

struct CaptureStdout {
  std::stringstream buffer;
  std::streambuf* old;
  CaptureStdout() : old(std::cout.rdbuf(buffer.rdbuf())) {}
  ~CaptureStdout() { std::cout.rdbuf(old); }
};

std::vector<std::string> tiny_flags(const fs::path& out, const fs::path& dataset) {
  return {"--out_dir", out.string(),
          "--data.train_manifest", (dataset / "train.tsv").string(),
          "--data.test_manifest", (dataset / "test.tsv").string(),
          "--data.labeled_per_class", "1",
          "--model.widths", "4,4,8,8",
          "--model.blocks_per_stage", "1",
          "--model.proj_hidden", "8",
          "--model.proj_dim", "4",
          "--train.labeled_batch", "2",
          "--train.unlabeled_batch", "2",
          "--train.epochs", "4",
          "--train.lr_warmup_epochs", "1",
          "--train.supervised_warmup_epochs", "1",
          "--train.precise_bn_batches", "1",
          "--weak.short_side", "32",
          "--eval.clips", "1",
          "--eval.crops", "1"};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

fs::path small_dataset() {
  static const fs::path dir = [] {
    auto d = testsupport::temp_dir("cli_ds");
    const int rc = testsupport::run_cli({"gen-data", "--out", d.string(), "--classes", "4",
                                         "--per-class", "3", "--test-per-class", "1",
                                         "--height", "32", "--width", "32", "--frames", "18",
                                         "--slow-speed", "0.5", "--fast-speed", "1.0"});
    REQUIRE(rc == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("every field round-trips through the config text") {
  RunConfig c;
  set_field(c, "loss.tau", "0.2");
  set_field(c, "loss.blocks", "2,4");
  set_field(c, "model.widths", "4,8,8,16");
  set_field(c, "ablation", "fixmatch-tg-only");
  set_field(c, "train.base_lr", "0.1");
  set_field(c, "weak.flip_prob", "0.25");
  auto text = to_config_text(c);
  RunConfig back;
  for (const auto& [k, v] : parse_config_text(text)) set_field(back, k, v);
  CHECK(to_config_text(back) == text);
  for (const auto& f : config_fields()) CHECK_MESSAGE(f.get(back) == f.get(c), f.key);
  CHECK(to_config_text(from_json(to_json(c))) == text);
  CHECK(back.train.variant == trainer::Variant::TgOnly);
  CHECK((back.train.loss_weights.aligned_blocks == std::set<int>{2, 4}));
}

TEST_CASE("config errors") {
  RunConfig c;
  CHECK_THROWS_AS(set_field(c, "loss.nope", "1"), ConfigError);
  CHECK_THROWS_AS(set_field(c, "loss.tau", "abc"), ConfigError);
  CHECK_THROWS_AS(set_field(c, "model.widths", "1,2"), ConfigError);
  CHECK(parse_config_text("# c\nloss.tau = 0.1\n\nloss.tau=0.3 # late\n").back().second == "0.3");
  CHECK_THROWS_AS(c.validate(true), ConfigError);
}

TEST_CASE("defaults < file < env < flags") {
  auto dir = testsupport::temp_dir("precedence");
  {
    std::ofstream os(dir / "run.cfg");
    os << "loss.tau = 0.1\nloss.gamma = 0.4\nloss.w_kd = 0.7\n";
  }
  CHECK(env_var_name("loss.w_kd") == "TGMATCH_LOSS_W_KD");
  ::setenv("TGMATCH_LOSS_GAMMA", "0.6", 1);
  ::setenv("TGMATCH_LOSS_W_KD", "0.8", 1);
  RunConfig c;
  apply_config_file(c, dir / "run.cfg");
  auto overridden = apply_env(c);
  set_field(c, "loss.w_kd", "0.9");
  ::unsetenv("TGMATCH_LOSS_GAMMA");
  ::unsetenv("TGMATCH_LOSS_W_KD");
  CHECK(overridden.size() == 2);
  CHECK(c.train.loss_weights.tau == 0.1);
  CHECK(c.train.loss_weights.gamma == 0.6);
  CHECK(c.train.loss_weights.w_kd == 0.9);
  CHECK(c.train.loss_weights.w_clr == RunConfig().train.loss_weights.w_clr);
}

TEST_CASE("tricks presets") {
  RunConfig c;
  apply_tricks_preset(c, "none");
  CHECK(c.train.lr_warmup_epochs == 0);
  CHECK(c.train.supervised_warmup_epochs == 0);
  CHECK(c.train.precise_bn_batches == 0);
  apply_tricks_preset(c, "lr+sup");
  CHECK(c.train.lr_warmup_epochs > 0);
  CHECK(c.train.supervised_warmup_epochs > 0);
  CHECK(c.train.precise_bn_batches == 0);
  CHECK_THROWS_AS(apply_tricks_preset(c, "most"), ConfigError);
}

TEST_CASE("grid expansion") {
  auto a = cli::parse_grid_axis("loss.tau=0.1/0.2/0.5/1.0");
  CHECK(a.key == "loss.tau");
  CHECK(a.values.size() == 4);
  auto b = cli::parse_grid_axis("loss.stopgrad=true/false");
  auto g = cli::expand_grid({a, b});
  CHECK(g.size() == 8);
  CHECK(g[1][0].second == "0.1");
  CHECK(g[1][1].second == "false");
  CHECK_THROWS_AS(cli::expand_grid({}), ConfigError);
  CHECK_THROWS_AS(cli::parse_grid_axis("loss.tau"), ConfigError);
}

TEST_CASE("help lists every field with its default") {
  CaptureStdout cap;
  CHECK(testsupport::run_cli({"train", "--help"}) == 0);
  const auto text = cap.buffer.str();
  for (const auto& f : config_fields()) {
    CHECK_MESSAGE(text.find("--" + f.key) != std::string::npos, f.key);
  }
  CHECK(text.find("(default: 0.5)") != std::string::npos);
}

TEST_CASE("exit codes") {
  CHECK(testsupport::run_cli({"frobnicate"}) == cli::kExitUsage);
  CHECK(testsupport::run_cli({"train", "--loss.tau", "abc"}) == cli::kExitUsage);
  CHECK(testsupport::run_cli({"train", "--data.train_manifest", "/nonexistent/x.tsv"}) ==
        cli::kExitUsage);
  auto dir = testsupport::temp_dir("badckpt");
  {
    std::ofstream os(dir / "bad.tgm");
    os << "not a checkpoint";
  }
  CHECK(testsupport::run_cli({"eval", "--checkpoint", (dir / "bad.tgm").string()}) ==
        cli::kExitRuntime);
}

TEST_CASE("gen-data, train, eval and ablate end to end") {
  auto ds = small_dataset();
  auto m = data::read_manifest(ds / "train.tsv");
  CHECK(m.entries.size() == 12);
  CHECK(m.num_classes == 4);

  auto out = testsupport::temp_dir("cli_train");
  REQUIRE(testsupport::run_cli(cat({"train"}, cat(tiny_flags(out, ds), {"--train.max_steps", "3"}))) == 0);
  for (const char* f : {"config.cfg", "metrics.jsonl", "checkpoint.tgm", "labeled_ids.txt", "result.json"})
    CHECK_MESSAGE(fs::exists(out / f), f);

  // The echoed config reproduces the run.
  RunConfig echoed;
  apply_config_file(echoed, out / "config.cfg");
  CHECK(echoed.train.max_steps == 3);
  CHECK(to_config_text(echoed) == testsupport::read_file(out / "config.cfg"));

  auto report = out / "report.json";
  CHECK(testsupport::run_cli({"eval", "--checkpoint", (out / "checkpoint.tgm").string(),
                              "--robustness", "grayscale", "--gap", "--report", report.string()}) == 0);
  auto j = nlohmann::json::parse(testsupport::read_file(report));
  CHECK(j["robustness"].size() == 2);
  CHECK(j.contains("gap"));

  auto grid_out = testsupport::temp_dir("cli_ablate");
  REQUIRE(testsupport::run_cli(cat({"ablate", "--grid", "loss.stopgrad=true/false"},
                                   cat(tiny_flags(grid_out, ds), {"--train.max_steps", "2"}))) == 0);
  auto table = testsupport::read_file(grid_out / "ablation.tsv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);
  CHECK(testsupport::run_cli(cat({"ablate"}, tiny_flags(grid_out, ds))) == cli::kExitUsage);
}
