// SPDX-License-Identifier: Apache-2.0
#include "span/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "span/binary_io.hpp"
#include "span/checkpoint.hpp"
#include "span/config.hpp"
#include "span/error.hpp"
#include "span/layers.hpp"
#include "span/rng.hpp"

namespace span::train {

using ag::Tape;
using ag::Tensor;
using ag::Var;

double effective_alpha(ModelKind kind, const SpanConfig& cfg) {
  return kind == ModelKind::span ? cfg.alpha : 0.0;
}

EpochLoss episode_loss(model::Policy& policy, const Episode& ep, double alpha, std::size_t* steps) {
  const std::size_t T = ep.length();
  if (T < 2) throw ContractError("episode needs at least two frames");
  const bool next = policy.config().gf_target == model::GfTarget::next;
  Tape tape;
  auto [h, c] = model::zero_state(tape, policy.hidden_size());

  std::vector<model::Encoded> enc;
  const std::size_t n_enc = next ? T : T - 1;
  enc.reserve(n_enc);
  for (std::size_t t = 0; t < n_enc; ++t) enc.push_back(policy.encode(tape.constant(ep.images[t])));

  EpochLoss sum;
  std::vector<Var> totals;
  totals.reserve(T - 1);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    auto s = policy.advance(enc[t], tape.constant(ep.joints[t]), h, c);
    const Var f_ref = next ? enc[t + 1].points : enc[t].points;
    auto l = model::loss_total(s, tape.constant(ep.images[t + 1]), tape.constant(ep.joints[t + 1]),
                               f_ref, alpha);
    sum.image += l.image.value().item();
    sum.joints += l.joints.value().item();
    sum.points += l.points.value().item();
    totals.push_back(l.total);
    h = s.h;
    c = s.c;
  }
  if (steps) *steps += T - 1;
  const double inv = 1.0 / static_cast<double>(T - 1);
  tape.backward(ag::scale(ag::sum(ag::concat(totals)), inv));
  sum.image *= inv;
  sum.joints *= inv;
  sum.points *= inv;
  sum.total = sum.image + sum.joints + alpha * sum.points;
  return sum;
}

namespace {

void check_dataset(const std::vector<Episode>& dataset, const SpanConfig& cfg) {
  if (dataset.empty()) throw ConfigError("training dataset is empty");
  const std::size_t T = dataset.front().length();
  const ag::Shape frame{cfg.channels, cfg.image_size, cfg.image_size};
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& ep = dataset[i];
    const std::string where = "episode " + std::to_string(i);
    if (!sim::is_taught(ep.meta.position))
      throw ConfigError(where + " shows untaught position " + sim::to_char(ep.meta.position));
    if (ep.length() != T || ep.joints.size() != T)
      throw ConfigError(where + " has a different length than episode 0");
    if (T < 2) throw ConfigError("episodes need at least two frames");
    if (ep.images.front().shape != frame)
      throw ConfigError(where + " frames are " + ag::shape_str(ep.images.front().shape) +
                        " but the model expects " + ag::shape_str(frame));
    if (ep.joints.front().size() != cfg.joints)
      throw ConfigError(where + " has " + std::to_string(ep.joints.front().size()) +
                        " joints, model expects " + std::to_string(cfg.joints));
  }
}

}  // namespace

TrainRun train(const std::vector<Episode>& dataset, const TrainOptions& opt) {
  opt.config.validate();
  check_dataset(dataset, opt.config);
  if (opt.epochs == 0) throw ConfigError("epochs must be >= 1");

  TrainRun run;
  run.kind = opt.kind;
  run.config = opt.config;
  run.epochs = opt.epochs;
  run.seed = opt.seed;
  run.checkpoint = opt.checkpoint;
  run.model = model::make_policy(opt.kind, opt.config, mix_seed(opt.seed, 0x5350414EULL));
  const double alpha = effective_alpha(opt.kind, opt.config);
  auto params = run.model->parameters();
  nn::AdamState adam;
  adam.learning_rate = opt.config.learning_rate;

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Xorshift64Star rng(mix_seed(opt.seed, epoch + 1));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochLoss mean;
    for (std::size_t idx : order) {
      for (auto* p : params) p->zero_grad();
      const auto l = episode_loss(*run.model, dataset[idx], alpha, &run.forward_steps);
      for (auto* p : params)
        for (double g : p->grad)
          if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p->name);
      nn::adam_step(adam, params);
      mean.image += l.image;
      mean.joints += l.joints;
      mean.points += l.points;
    }
    const double inv = 1.0 / static_cast<double>(dataset.size());
    mean.image *= inv;
    mean.joints *= inv;
    mean.points *= inv;
    mean.total = mean.image + mean.joints + alpha * mean.points;
    if (!std::isfinite(mean.total)) throw NumericError("loss diverged at epoch " + std::to_string(epoch + 1));
    run.log.push_back(mean);
    if (opt.on_epoch) opt.on_epoch(epoch + 1, mean);
  }
  if (!opt.loss_log.empty()) io::write_text(opt.loss_log, format_loss_log(run.log));
  if (!opt.checkpoint.empty()) save_model(opt.checkpoint, *run.model);
  return run;
}

std::string format_loss_log(const std::vector<EpochLoss>& log) {
  std::string out = "epoch,g,g_i,g_a,g_f\n";
  char buf[160];
  for (std::size_t i = 0; i < log.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", i + 1, log[i].total,
                  log[i].image, log[i].joints, log[i].points);
    out += buf;
  }
  return out;
}

void save_model(const std::filesystem::path& path, model::Policy& policy) {
  auto params = policy.parameters();
  save_checkpoint(path, params);
  io::write_text(path.string() + ".cfg",
                 config::format_model_sidecar(policy.kind(), policy.config()));
}

std::unique_ptr<model::Policy> load_model(const std::filesystem::path& path) {
  const std::filesystem::path sidecar = path.string() + ".cfg";
  auto [kind, cfg] = config::parse_model_sidecar(io::read_text(sidecar), sidecar.string());
  auto policy = model::make_policy(kind, cfg, 0);
  auto params = policy->parameters();
  load_checkpoint(path, params);
  return policy;
}

// ---------------------------------------------------------------------------

ModelController::ModelController(std::unique_ptr<model::Policy> policy)
    : policy_(std::move(policy)) {
  policy_->inference_only = true;
  begin();
}

void ModelController::begin() {
  h_ = Tensor({policy_->hidden_size()});
  c_ = Tensor({policy_->hidden_size()});
}

sim::Joints ModelController::act(const sim::SimState& state, const Tensor& image, StepLog& log) {
  Tape tape;
  auto s = policy_->step(tape.constant(image), tape.constant(sim::joints_tensor(state.joints)),
                         tape.constant(h_), tape.constant(c_));
  h_ = s.h.value();
  c_ = s.c.value();
  log.hidden = h_.data;
  if (s.points_enc.valid()) log.encoder = attention::to_point_set(s.points_enc.value());
  if (s.points_dec.valid()) log.decoder = attention::to_point_set(s.points_dec.value());
  return sim::joints_from(s.joints.value().data);
}

std::unique_ptr<Controller> ModelController::clone() const {
  return std::make_unique<ModelController>(policy_->clone());
}

// ---------------------------------------------------------------------------

std::size_t EvalReport::successes(sim::Position p) const {
  std::size_t n = 0;
  for (const auto& r : results) n += (r.position == p && r.success) ? 1 : 0;
  return n;
}

bool EvalReport::covers(sim::Position p) const {
  return std::any_of(results.begin(), results.end(),
                     [p](const TrialResult& r) { return r.position == p; });
}

std::uint64_t trial_seed(std::uint64_t seed, sim::Position position, std::size_t trial) {
  return mix_seed(mix_seed(seed ^ 0x4556414C00000000ULL, static_cast<std::uint64_t>(position)),
                  trial);
}

TrialResult run_trial(const sim::SimConfig& cfg, Controller& controller, sim::Position position,
                      std::size_t trial, sim::Situation situation, std::uint64_t seed,
                      std::vector<Tensor>* frames) {
  TrialResult r;
  r.position = position;
  r.situation = situation;
  r.trial = trial;
  r.steps = cfg.episode_length;
  sim::SimState s = sim::reset(cfg, position, trial_seed(seed, position, trial), situation,
                               static_cast<int>(trial % 2));
  controller.begin();
  for (std::size_t t = 0; t < cfg.episode_length; ++t) {
    Tensor image = sim::render(cfg, s);
    StepLog log;
    const sim::Joints cmd = controller.act(s, image, log);
    r.block.push_back(s.block);
    r.logs.push_back(std::move(log));
    if (frames) frames->push_back(std::move(image));
    s = sim::step(cfg, s, cmd);
    if (!r.success && sim::success_check(cfg, s)) {
      r.success = true;
      r.steps = t + 1;
    }
  }
  r.success = sim::success_check(cfg, s);
  if (!r.success) r.steps = cfg.episode_length;
  const sim::Vec2 ee = sim::end_effector(cfg, s);
  r.final_distance = std::hypot(ee.x - s.block.x, ee.y - s.block.y);
  return r;
}

EvalReport evaluate_closed_loop(const sim::SimConfig& cfg, const Controller& controller,
                                const EvalOptions& opt) {
  cfg.validate();
  if (opt.trials == 0) throw ConfigError("trials must be >= 1");
  if (opt.positions.empty()) throw ConfigError("no evaluation positions");
  struct Job {
    sim::Position position;
    std::size_t trial;
  };
  std::vector<Job> jobs;
  for (sim::Position p : opt.positions)
    for (std::size_t i = 0; i < opt.trials; ++i) jobs.push_back({p, i});

  EvalReport report;
  report.model = controller.name();
  report.situation = opt.situation;
  report.trials = opt.trials;
  report.results.resize(jobs.size());
  if (opt.keep_frames) report.frames.resize(jobs.size());

  // Static partition: job i goes to worker i % n, each with its own clone.
  const std::size_t n = std::max<std::size_t>(1, std::min(opt.workers, jobs.size()));
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t w) {
    try {
      auto local = controller.clone();
      for (std::size_t i = w; i < jobs.size(); i += n)
        report.results[i] = run_trial(cfg, *local, jobs[i].position, jobs[i].trial, opt.situation,
                                      opt.seed, opt.keep_frames ? &report.frames[i] : nullptr);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (n == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return report;
}

EvalReport evaluate_closed_loop(const std::filesystem::path& checkpoint, const sim::SimConfig& cfg,
                                const EvalOptions& opt) {
  auto policy = load_model(checkpoint);
  if (policy->config().image_size != cfg.image_size)
    throw ConfigError(checkpoint.string() + ": model expects " +
                      std::to_string(policy->config().image_size) + " px frames, simulator renders " +
                      std::to_string(cfg.image_size));
  ModelController controller(std::move(policy));
  return evaluate_closed_loop(cfg, controller, opt);
}

std::string trial_label(const TrialResult& r) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%c-%s-%02zu", sim::to_char(r.position),
                sim::to_string(r.situation).c_str(), r.trial);
  return buf;
}

std::string report_csv(const EvalReport& report) {
  std::string out = "position,situation,trial,success,steps,final_distance\n";
  char buf[128];
  for (const auto& r : report.results) {
    std::snprintf(buf, sizeof buf, "%c,%s,%zu,%d,%zu,%.9f\n", sim::to_char(r.position),
                  sim::to_string(r.situation).c_str(), r.trial, r.success ? 1 : 0, r.steps,
                  r.final_distance);
    out += buf;
  }
  return out;
}

EvalReport parse_report_csv(const std::string& csv, const std::string& model,
                            const std::string& origin) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "position,situation,trial,success,steps,final_distance")
    throw FormatError(origin + ": not an evaluation report (unexpected header)");
  EvalReport report;
  report.model = model;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 6 || f[0].size() != 1)
      throw FormatError(origin + ":" + std::to_string(n + 1) + ": malformed report row");
    TrialResult r;
    try {
      r.position = sim::parse_position(f[0][0]);
      r.situation = sim::parse_situation(f[1]);
      r.trial = std::stoul(f[2]);
      r.success = f[3] == "1";
      r.steps = std::stoul(f[4]);
      r.final_distance = std::stod(f[5]);
    } catch (const std::exception&) {
      throw FormatError(origin + ":" + std::to_string(n + 1) + ": malformed report row");
    }
    report.situation = r.situation;
    report.trials = std::max(report.trials, r.trial + 1);
    report.results.push_back(std::move(r));
  }
  if (report.results.empty()) throw CompletenessError(origin + ": report has no rows");
  return report;
}

std::string hidden_trace_csv(const TrialResult& r) {
  std::string out = "step";
  const std::size_t H = r.logs.empty() ? 0 : r.logs.front().hidden.size();
  for (std::size_t i = 0; i < H; ++i) out += ",h" + std::to_string(i);
  out += "\n";
  char buf[40];
  for (std::size_t t = 0; t < r.logs.size(); ++t) {
    out += std::to_string(t);
    for (double v : r.logs[t].hidden) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::string attention_trace_csv(const TrialResult& r, const sim::SimConfig& cfg) {
  std::string out = "step,point,enc_x,enc_y,dec_x,dec_y,block_x,block_y\n";
  char buf[200];
  for (std::size_t t = 0; t < r.logs.size(); ++t) {
    const auto& l = r.logs[t];
    const sim::Vec2 b = sim::world_to_pixel(cfg, r.block[t]);
    for (std::size_t k = 0; k < l.encoder.size(); ++k) {
      const auto d = k < l.decoder.size() ? l.decoder[k] : attention::Point{};
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.9f,%.9f\n", t, k,
                    l.encoder[k].x, l.encoder[k].y, d.x, d.y, b.x, b.y);
      out += buf;
    }
  }
  return out;
}

}  // namespace span::train
