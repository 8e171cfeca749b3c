// SPDX-License-Identifier: Apache-2.0
// span_cli: gen-data | train | eval | analyze
//
// Every configuration key is also a flag (underscores become dashes), e.g.
// `--image-size 32 --alpha 0.01`. Precedence: flag > --config file >
// SPAN_SEED (seed only) > built-in default.
//
// Exit codes: 0 success, 2 usage/config, 3 data, 4 numeric.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "span/analysis.hpp"
#include "span/binary_io.hpp"
#include "span/config.hpp"
#include "span/dataset.hpp"
#include "span/error.hpp"
#include "span/training.hpp"

namespace fs = std::filesystem;
using namespace span;
using nlohmann::json;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

struct Command {
  CLI::App* app = nullptr;
  std::map<std::string, std::string> flags;
};

std::string dashed(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return "--" + key;
}

void add_setting_flags(Command& cmd) {
  for (const auto& k : config::known_keys()) {
    const std::string def = k.default_value.empty() ? "preset value" : k.default_value;
    cmd.app->add_option(dashed(k.key), cmd.flags[k.key], k.description + " [" + def + "]")
        ->group("Settings");
  }
}

config::Settings resolve(const Command& cmd, const std::string& config_file) {
  config::Settings s;
  if (const char* env = std::getenv("SPAN_SEED"); env && *env) s.set("seed", env);
  if (!config_file.empty()) s.merge_text(io::read_text(config_file), config_file);
  for (const auto& [key, value] : cmd.flags)
    if (cmd.app->get_option(dashed(key))->count() > 0) s.set(key, value);
  return s;
}

const std::string& require(const config::Settings& s, const std::string& key, const char* command) {
  const auto& v = s.get(key);
  if (v.empty()) throw UsageError(std::string(command) + ": " + dashed(key) + " is required");
  return v;
}

void remove_matching(const fs::path& dir, const std::string& prefix, const std::string& suffix) {
  if (!fs::is_directory(dir)) return;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.starts_with(prefix) && name.ends_with(suffix)) fs::remove(e.path());
  }
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const config::Settings& s) {
  const fs::path out = require(s, "out", "gen-data");
  const auto cfg = config::sim_config(s);
  const auto positions = sim::parse_positions(s.get("positions"));
  const auto demos = s.get_int("demos");
  if (demos < 1) throw ConfigError("demos must be >= 1");
  const auto seed = s.get_u64("seed");
  const auto episodes = data::generate_dataset(cfg, positions, static_cast<std::size_t>(demos), seed);
  const auto info = data::write_dataset(out, episodes, cfg, seed, s.values());
  std::printf("wrote %zu episodes, %zu frames, %zu bytes to %s\n", info.episodes, info.frames,
              info.bytes, out.string().c_str());
  return 0;
}

int cmd_train(const config::Settings& s) {
  const fs::path data_dir = require(s, "data", "train");
  const fs::path out = require(s, "out", "train");
  const auto kind = model::parse_model_kind(s.get("model"));
  const auto mcfg = config::model_config(s);
  const auto epochs = s.get_int("epochs");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");

  const auto dataset = data::load_dataset(data_dir);
  fs::create_directories(out);
  train::TrainOptions opt;
  opt.kind = kind;
  opt.config = mcfg;
  opt.epochs = static_cast<std::size_t>(epochs);
  opt.seed = s.get_u64("seed");
  opt.checkpoint = s.get("checkpoint").empty() ? out / "model.ckpt" : fs::path(s.get("checkpoint"));
  opt.loss_log = out / "loss.csv";
  const std::size_t every = std::max<std::size_t>(1, opt.epochs / 20);
  opt.on_epoch = [&](std::size_t e, const train::EpochLoss& l) {
    if (e == 1 || e % every == 0 || e == opt.epochs)
      std::fprintf(stderr, "epoch %zu/%zu  g=%.6g  g_i=%.6g  g_a=%.6g  g_f=%.6g\n", e, opt.epochs,
                   l.total, l.image, l.joints, l.points);
  };

  auto params = model::make_policy(kind, mcfg, 0)->parameter_count();
  std::printf("model %s, %zu parameters, %zu episodes\n", model::to_string(kind).c_str(), params,
              dataset.size());
  const auto run = train::train(dataset, opt);

  const auto& last = run.log.back();
  json summary = {{"model", model::to_string(kind)},
                  {"parameters", params},
                  {"epochs", run.epochs},
                  {"seed", run.seed},
                  {"episodes", dataset.size()},
                  {"forward_steps", run.forward_steps},
                  {"checkpoint", opt.checkpoint.string()},
                  {"final_loss", {{"g", last.total}, {"g_i", last.image}, {"g_a", last.joints}, {"g_f", last.points}}},
                  {"settings", s.values()}};
  io::write_text(out / "train.json", summary.dump(2) + "\n");
  std::printf("checkpoint %s, final g=%.6g\n", opt.checkpoint.string().c_str(), last.total);
  return 0;
}

int cmd_eval(const config::Settings& s, const std::string& overlays) {
  const fs::path checkpoint = require(s, "checkpoint", "eval");
  const fs::path out = require(s, "out", "eval");
  const auto situation = sim::parse_situation(s.get("situation"));
  auto policy = train::load_model(checkpoint);
  const std::size_t model_size = policy->config().image_size;

  auto frame_settings = s;
  if (s.get("image_size").empty()) frame_settings.set("image_size", std::to_string(model_size));
  const auto cfg = config::sim_config(frame_settings);
  if (cfg.image_size != model_size)
    throw ConfigError(checkpoint.string() + ": model expects " + std::to_string(model_size) +
                      " px frames, --image-size is " + std::to_string(cfg.image_size));

  train::EvalOptions opt;
  // The positions key defaults to the taught set; evaluation covers A..E
  // unless positions are given explicitly.
  if (!s.is_default("positions")) opt.positions = sim::parse_positions(s.get("positions"));
  const auto trials = s.get_int("trials");
  const auto workers = s.get_int("workers");
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  opt.trials = static_cast<std::size_t>(trials);
  opt.workers = static_cast<std::size_t>(workers);
  opt.situation = situation;
  opt.seed = s.get_u64("seed");
  opt.keep_frames = !overlays.empty();

  const bool has_points = policy->kind() != model::ModelKind::cnnrnn;
  train::ModelController controller(std::move(policy));
  const auto report = train::evaluate_closed_loop(cfg, controller, opt);

  fs::create_directories(out);
  remove_matching(out, "trace_", ".csv");
  remove_matching(out, "attention_", ".csv");
  io::write_text(out / "report.csv", train::report_csv(report));
  json summary = json::parse(analysis::report_json(report, cfg));
  summary["checkpoint"] = checkpoint.string();
  summary["settings"] = s.values();
  io::write_text(out / "summary.json", summary.dump(2) + "\n");
  for (const auto& r : report.results) {
    const auto label = train::trial_label(r);
    io::write_text(out / ("trace_" + label + ".csv"), train::hidden_trace_csv(r));
    if (has_points) io::write_text(out / ("attention_" + label + ".csv"), train::attention_trace_csv(r, cfg));
  }

  std::size_t frames = 0;
  if (!overlays.empty()) {
    fs::create_directories(overlays);
    remove_matching(overlays, "overlay_", ".ppm");
    char name[96];
    for (std::size_t i = 0; i < report.results.size(); ++i) {
      const auto& r = report.results[i];
      const auto label = train::trial_label(r);
      for (std::size_t t = 0; t < report.frames[i].size(); ++t) {
        std::snprintf(name, sizeof name, "overlay_%s_%03zu.ppm", label.c_str(), t);
        analysis::write_attention_overlay(fs::path(overlays) / name, report.frames[i][t],
                                          r.logs[t].encoder, r.logs[t].decoder);
        ++frames;
      }
    }
  }

  std::printf("%s situation %s:", report.model.c_str(), sim::to_string(report.situation).c_str());
  for (sim::Position p : opt.positions)
    std::printf(" %c=%zu/%zu", sim::to_char(p), report.successes(p), opt.trials);
  std::printf("\n");
  if (frames) std::printf("%zu overlay frames in %s\n", frames, overlays.c_str());
  return 0;
}

int cmd_analyze(const config::Settings& s, const std::string& traces_dir,
                const std::vector<std::string>& report_dirs) {
  const fs::path out = require(s, "out", "analyze");
  if (traces_dir.empty() && report_dirs.empty())
    throw UsageError("analyze: give --traces DIR and/or --reports DIR...");
  fs::create_directories(out);

  if (!traces_dir.empty()) {
    const auto dims = s.get_int("pca_dims");
    if (dims < 1) throw ParameterError("pca_dims must be >= 1");
    const auto traces = analysis::load_hidden_traces(traces_dir);
    const auto result = analysis::trace_pca(traces, static_cast<std::size_t>(dims));
    io::write_text(out / "projection.csv", analysis::projection_csv(traces, result));
    json info = {{"traces", traces.size()},
                 {"eigenvalues", result.eigenvalues},
                 {"explained_ratio", result.explained_ratio},
                 {"settings", s.values()}};
    io::write_text(out / "pca.json", info.dump(2) + "\n");
    std::printf("projected %zu traces onto %lld components (explained %.3f)\n", traces.size(),
                static_cast<long long>(dims), result.explained_ratio);
  }

  if (!report_dirs.empty()) {
    std::vector<train::EvalReport> reports;
    for (const fs::path dir : report_dirs) {
      const auto summary_path = dir / "summary.json";
      std::string model = "?";
      try {
        model = json::parse(io::read_text(summary_path)).at("model").get<std::string>();
      } catch (const json::exception& e) {
        throw FormatError(summary_path.string() + ": " + e.what());
      }
      const auto csv_path = dir / "report.csv";
      reports.push_back(train::parse_report_csv(io::read_text(csv_path), model, csv_path.string()));
    }
    const auto table = analysis::success_table(reports);
    io::write_text(out / "success_table.csv", table);
    std::fputs(table.c_str(), stdout);
  }
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
      dynamic_cast<const ParameterError*>(&e) || dynamic_cast<const ReachabilityError*>(&e))
    return 2;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const CompletenessError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const ContractError*>(&e))
    return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial attention point network: data generation, training, evaluation, analysis"};
  app.require_subcommand(1);
  std::string config_file;
  bool print_config = false;
  app.add_option("--config", config_file, "key=value settings file")->check(CLI::ExistingFile);
  app.add_flag("--print-config", print_config, "print the effective settings before running");

  Command gen{app.add_subcommand("gen-data", "render teacher demonstrations")};
  Command trn{app.add_subcommand("train", "train a model on a dataset")};
  Command evl{app.add_subcommand("eval", "closed-loop evaluation of a checkpoint")};
  Command ana{app.add_subcommand("analyze", "PCA of hidden traces and success tables")};
  std::string overlays, traces;
  std::vector<std::string> reports;
  for (Command* c : {&gen, &trn, &evl, &ana}) {
    c->app->add_option("--config", config_file, "key=value settings file")->check(CLI::ExistingFile);
    add_setting_flags(*c);
  }
  evl.app->add_option("--overlays", overlays, "write one attention overlay PPM per frame here");
  ana.app->add_option("--traces", traces, "directory of trace_*.csv files");
  ana.app->add_option("--reports", reports, "eval output directories for the success table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    Command* active = nullptr;
    for (Command* c : {&gen, &trn, &evl, &ana})
      if (c->app->parsed()) active = c;
    const auto settings = resolve(*active, config_file);
    if (print_config) std::fputs(settings.to_text().c_str(), stdout);
    if (active == &gen) return cmd_gen_data(settings);
    if (active == &trn) return cmd_train(settings);
    if (active == &evl) return cmd_eval(settings, overlays);
    return cmd_analyze(settings, traces, reports);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  }
}
