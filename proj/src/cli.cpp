#include "tgmatch/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "tgmatch/checkpoint.hpp"
#include "tgmatch/errors.hpp"
#include "tgmatch/eval.hpp"
#include "tgmatch/rng.hpp"
#include "tgmatch/synthetic.hpp"

namespace fs = std::filesystem;

namespace tgmatch::cli {

namespace {

/// Registers one `--<key>` flag per config field and remembers which were given.
struct FieldFlags {
  std::map<std::string, std::string> values;

  void attach(CLI::App& cmd) {
    const config::RunConfig defaults;
    for (const auto& f : config::config_fields()) {
      cmd.add_option_function<std::string>(
             "--" + f.key, [this, key = f.key](const std::string& v) { values[key] = v; },
             f.help + " (default: " + f.get(defaults) + ")")
          ->type_name("VALUE");
    }
  }

  void apply(config::RunConfig& c) const {
    for (const auto& [k, v] : values) config::set_field(c, k, v);
  }
};

config::RunConfig layered_config(const std::string& config_file, const FieldFlags& flags) {
  config::RunConfig c;
  if (!config_file.empty()) config::apply_config_file(c, config_file);
  config::apply_env(c);
  flags.apply(c);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

int cmd_gen_data(const synthetic::SyntheticSpec& spec, const fs::path& out) {
  auto ds = synthetic::generate_synthetic_dataset(spec, out);
  std::cout << "wrote " << ds.train.entries.size() << " training and " << ds.test.entries.size()
            << " test videos (" << spec.num_classes << " classes, " << spec.num_frames << "x"
            << spec.height << "x" << spec.width << ") to " << out.string() << "\n"
            << "  train manifest: " << ds.train_manifest.string() << "\n"
            << "  test manifest:  " << ds.test_manifest.string() << "\n";
  return kExitOk;
}

int cmd_train(const config::RunConfig& c) {
  auto run = run_training(c, false);
  std::cout << "trained " << run.fit.history.size() << " steps (" << run.fit.steps_per_epoch
            << " per epoch), " << run.train.labeled_ids.size() << " labeled / "
            << run.train.entries.size() << " videos\n";
  if (run.fit.test)
    std::cout << "test top1 " << percent(run.fit.test->top1) << "  top5 "
              << percent(run.fit.test->top5) << "\n";
  std::cout << "checkpoint: " << run.fit.checkpoint.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string robustness;
  bool gap = false;
  std::string report;
};

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_eval(const EvalArgs& args, const std::string& config_file, const FieldFlags& flags) {
  if (!fs::exists(args.checkpoint)) throw IoError("checkpoint '" + args.checkpoint + "' not found");
  const auto header = checkpoint::read_header(args.checkpoint);
  config::RunConfig c;
  if (header.config.contains("run") && header.config["run"].is_object())
    c = config::from_json(header.config["run"]);
  if (!config_file.empty()) config::apply_config_file(c, config_file);
  config::apply_env(c);
  flags.apply(c);
  if (!args.manifest.empty()) c.test_manifest = args.manifest;
  if (c.test_manifest.empty()) throw ConfigError("no test manifest: pass --manifest");
  c.validate(false);

  auto test = data::read_manifest(c.test_manifest);
  auto backbone = c.backbone;
  backbone.num_classes = test.num_classes;
  model::VideoNet rgb(backbone, modalities::Modality::RGB), tg(backbone, modalities::Modality::TG);
  std::vector<checkpoint::NamedModel> models;
  if (c.train.variant != trainer::Variant::TgOnly) models.emplace_back("rgb", rgb);
  if (c.train.variant != trainer::Variant::RgbOnly) models.emplace_back("tg", tg);
  checkpoint::load(args.checkpoint, models);
  auto& net = c.train.variant == trainer::Variant::TgOnly ? tg : rgb;

  auto spec = c.eval;
  spec.sampling = c.batch.sampling;
  spec.corruption_seed = derive_seed(c.train.seed, "corruption");
  data::VideoStore store(test.root);
  nlohmann::json report;
  report["checkpoint"] = args.checkpoint;
  report["model"] = modalities::to_string(net->modality());

  std::vector<augment::Corruption> kinds;
  for (const auto& k : split_list(args.robustness, ',')) kinds.push_back(augment::corruption_from_string(k));
  if (!kinds.empty()) {
    auto rows = eval::robustness_suite(net, test.entries, store, spec, kinds);
    std::cout << eval::format_robustness_table(rows);
    for (const auto& r : rows) report["robustness"].push_back({{"condition", r.condition}, {"top1", r.top1}, {"drop", r.drop}});
  } else {
    auto r = eval::evaluate(net, test.entries, store, spec);
    std::cout << "top1 " << percent(r.top1) << "  top5 " << percent(r.top5) << "  (" << r.num_videos
              << " videos)\n";
    report["top1"] = r.top1;
    report["top5"] = r.top5;
  }
  if (args.gap) {
    if (c.train_manifest.empty()) throw ConfigError("--gap needs data.train_manifest");
    auto train = data::read_manifest(c.train_manifest);
    data::VideoStore train_store(train.root);
    const double tr = eval::evaluate(net, train.entries, train_store, spec).top1;
    const double te = eval::evaluate(net, test.entries, store, spec).top1;
    std::cout << "train " << percent(tr) << "  test " << percent(te) << "  gap " << percent(tr - te) << "\n";
    report["gap"] = {{"train_acc", tr}, {"test_acc", te}, {"gap", tr - te}};
  }
  if (!args.report.empty()) write_text(args.report, report.dump(2) + "\n");
  return kExitOk;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char ch : s) out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-') ? ch : '_';
  return out;
}

int cmd_ablate(const config::RunConfig& base, const std::vector<std::string>& grid_specs) {
  std::vector<GridAxis> axes;
  for (const auto& s : grid_specs) axes.push_back(parse_grid_axis(s));
  const auto grid = expand_grid(axes);
  fs::create_directories(base.out_dir);
  std::ostringstream table;
  for (const auto& a : axes) table << a.key << '\t';
  table << "top1\ttop5\n";
  std::size_t index = 0;
  for (const auto& point : grid) {
    auto c = base;
    std::string label = std::to_string(index++);
    for (const auto& [k, v] : point) {
      if (k == "tricks") config::apply_tricks_preset(c, v);
      else config::set_field(c, k, v);
      label += "_" + sanitize(v);
    }
    c.out_dir = base.out_dir / label;
    std::cerr << "[ablate] run " << label << "\n";
    auto run = run_training(c, true);
    for (const auto& kv : point) table << kv.second << '\t';
    if (run.fit.test) table << percent(run.fit.test->top1) << '\t' << percent(run.fit.test->top5) << "\n";
    else table << "-\t-\n";
  }
  write_text(base.out_dir / "ablation.tsv", table.str());
  std::cout << table.str();
  return kExitOk;
}

}  // namespace

GridAxis parse_grid_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("grid axis '" + spec + "' must look like key=v1/v2");
  GridAxis axis;
  axis.key = spec.substr(0, eq);
  axis.values = split_list(spec.substr(eq + 1), '/');
  if (axis.key != "tricks" && !config::find_field(axis.key))
    throw ConfigError("unknown grid key '" + axis.key + "'");
  if (axis.values.empty()) throw ConfigError("grid axis '" + axis.key + "' has no values");
  return axis;
}

std::vector<std::vector<std::pair<std::string, std::string>>> expand_grid(
    const std::vector<GridAxis>& axes) {
  if (axes.empty()) throw ConfigError("the ablation grid is empty");
  std::vector<std::vector<std::pair<std::string, std::string>>> out{{}};
  for (const auto& axis : axes) {
    if (axis.values.empty()) throw ConfigError("grid axis '" + axis.key + "' has no values");
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& prefix : out)
      for (const auto& v : axis.values) {
        auto p = prefix;
        p.emplace_back(axis.key, v);
        next.push_back(std::move(p));
      }
    out = std::move(next);
  }
  return out;
}

TrainingRun run_training(const config::RunConfig& c, bool quiet) {
  c.validate(true);
  torch::set_num_threads(1);
  TrainingRun run;
  run.config = c;
  const auto all = data::read_manifest(c.train_manifest);
  run.train = data::make_split(all, c.split_spec(), derive_seed(c.train.seed, "split"));
  if (!c.test_manifest.empty()) run.test = data::read_manifest(c.test_manifest);

  fs::create_directories(c.out_dir);
  write_text(c.out_dir / "config.cfg", config::to_config_text(c));
  {
    std::ofstream os(c.out_dir / "labeled_ids.txt");
    for (const auto& id : run.train.labeled_ids) os << id << "\n";
  }

  auto backbone = c.backbone;
  backbone.num_classes = all.num_classes;
  run.trainer = std::make_unique<trainer::Trainer>(c.train, backbone);
  run.store = std::make_shared<data::VideoStore>(run.train.root);

  trainer::FitOptions opts;
  opts.out_dir = c.out_dir;
  opts.test_manifest = run.test;
  opts.eval_spec = c.eval;
  opts.eval_spec.sampling = c.batch.sampling;
  opts.run_config = config::to_json(c);
  opts.quiet = quiet;
  run.fit = trainer::fit(*run.trainer, run.train, c.batch, opts, run.store);

  nlohmann::json result{{"steps", run.fit.history.size()}, {"steps_per_epoch", run.fit.steps_per_epoch}};
  if (run.fit.test) {
    result["top1"] = run.fit.test->top1;
    result["top5"] = run.fit.test->top5;
  }
  write_text(c.out_dir / "result.json", result.dump(2) + "\n");
  return run;
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Semi-supervised video classification with RGB and temporal-gradient models"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every command");

  synthetic::SyntheticSpec gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic moving-shapes dataset");
  gen_cmd->add_option("--out", gen_out, "output directory (created if missing)")->required();
  gen_cmd->add_option("--classes", gen.num_classes, "16 (8 headings x 2 speeds) or 1..8 headings")->capture_default_str();
  gen_cmd->add_option("--per-class", gen.videos_per_class, "training videos per class")->capture_default_str();
  gen_cmd->add_option("--test-per-class", gen.test_videos_per_class, "test videos per class")->capture_default_str();
  gen_cmd->add_option("--height", gen.height, "frame height")->capture_default_str();
  gen_cmd->add_option("--width", gen.width, "frame width")->capture_default_str();
  gen_cmd->add_option("--frames", gen.num_frames, "frames per video")->capture_default_str();
  gen_cmd->add_option("--slow-speed", gen.slow_speed, "slow speed, pixels per frame")->capture_default_str();
  gen_cmd->add_option("--fast-speed", gen.fast_speed, "fast speed, pixels per frame")->capture_default_str();
  gen_cmd->add_option("--distractors", gen.distractors, "static distractor shapes")->capture_default_str();
  gen_cmd->add_option("--blobs", gen.background_blobs, "soft color blobs in the background")->capture_default_str();
  gen_cmd->add_option("--min-radius", gen.min_radius, "smallest moving-shape radius")->capture_default_str();
  gen_cmd->add_option("--max-radius", gen.max_radius, "largest moving-shape radius")->capture_default_str();
  gen_cmd->add_option("--noise", gen.noise_std, "per-pixel Gaussian noise std")->capture_default_str();
  gen_cmd->add_option("--scene-bias", gen.scene_bias, "probability that the background takes the class color")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "generator seed")->capture_default_str();

  std::string config_file;
  FieldFlags train_flags, eval_flags, ablate_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model (flags override the config file)");
  train_cmd->add_option("--config", config_file, "flat key = value config file");
  train_flags.attach(*train_cmd);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--manifest", eval_args.manifest, "manifest to evaluate (default: the run's test manifest)");
  eval_cmd->add_option("--robustness", eval_args.robustness,
                       "comma separated corruptions: grayscale, contrast_noise, brightness_noise");
  eval_cmd->add_flag("--gap", eval_args.gap, "also report train/test accuracy and their gap");
  eval_cmd->add_option("--report", eval_args.report, "write a JSON report here");
  eval_cmd->add_option("--config", config_file, "flat key = value config file");
  eval_flags.attach(*eval_cmd);

  std::vector<std::string> grid;
  auto* ablate_cmd = app.add_subcommand("ablate", "run a grid of trainings and tabulate them");
  ablate_cmd->add_option("--grid", grid, "axis key=v1/v2/..., repeatable; key may be 'tricks' (none/lr/lr+sup/all)");
  ablate_cmd->add_option("--config", config_file, "flat key = value config file");
  ablate_flags.attach(*ablate_cmd);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, gen_out);
    if (*train_cmd) return cmd_train(layered_config(config_file, train_flags));
    if (*eval_cmd) return cmd_eval(eval_args, config_file, eval_flags);
    if (*ablate_cmd) return cmd_ablate(layered_config(config_file, ablate_flags), grid);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingFault& e) {
    std::cerr << "training fault in term '" << e.term() << "': " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace tgmatch::cli
