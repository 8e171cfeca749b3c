// SPDX-License-Identifier: Apache-2.0
#pragma once

// Teacher-forced training and closed-loop evaluation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "span/attention.hpp"
#include "span/dataset.hpp"
#include "span/model.hpp"

namespace span::train {

using data::Episode;
using model::ModelKind;
using model::SpanConfig;

struct EpochLoss {
  double total = 0.0;  // image + joints + alpha * points, from the logged parts
  double image = 0.0;
  double joints = 0.0;
  double points = 0.0;
};

struct TrainOptions {
  ModelKind kind = ModelKind::span;
  SpanConfig config;
  std::size_t epochs = 1500;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint;  // empty: not written
  std::filesystem::path loss_log;    // empty: not written
  std::function<void(std::size_t epoch, const EpochLoss&)> on_epoch;
};

struct TrainRun {
  ModelKind kind = ModelKind::span;
  SpanConfig config;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  std::vector<EpochLoss> log;
  std::filesystem::path checkpoint;
  std::size_t forward_steps = 0;  // model steps over the whole run
  std::unique_ptr<model::Policy> model;
};

/// Weight used for the consistency term: alpha, or 0 for span_alpha0 and
/// the baseline.
double effective_alpha(ModelKind kind, const SpanConfig& cfg);

/// Loss of one teacher-forced episode; accumulates parameter gradients.
EpochLoss episode_loss(model::Policy& policy, const Episode& episode, double alpha,
                       std::size_t* steps = nullptr);

/// ConfigError before any update when the dataset does not fit the config,
/// contains untaught positions, or is empty.
TrainRun train(const std::vector<Episode>& dataset, const TrainOptions& options);

std::string format_loss_log(const std::vector<EpochLoss>& log);

/// Writes `<path>` (parameters) and `<path>.cfg` (architecture sidecar).
void save_model(const std::filesystem::path& path, model::Policy& policy);
std::unique_ptr<model::Policy> load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Closed loop

/// Per-step record produced by a controller.
struct StepLog {
  std::vector<double> hidden;               // LSTM h after the step
  attention::AttentionPointSet encoder;     // f_t
  attention::AttentionPointSet decoder;     // f_hat_{t+1}
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual void begin() = 0;
  virtual sim::Joints act(const sim::SimState& state, const ag::Tensor& image, StepLog& log) = 0;
  virtual std::unique_ptr<Controller> clone() const = 0;
};

class ModelController final : public Controller {
 public:
  explicit ModelController(std::unique_ptr<model::Policy> policy);
  std::string name() const override { return model::to_string(policy_->kind()); }
  void begin() override;
  sim::Joints act(const sim::SimState& state, const ag::Tensor& image, StepLog& log) override;
  std::unique_ptr<Controller> clone() const override;

 private:
  std::unique_ptr<model::Policy> policy_;
  ag::Tensor h_, c_;
};

/// Privileged scripted policy wrapped as a controller.
class TeacherController final : public Controller {
 public:
  explicit TeacherController(sim::SimConfig cfg) : cfg_(std::move(cfg)) {}
  std::string name() const override { return "teacher"; }
  void begin() override {}
  sim::Joints act(const sim::SimState& state, const ag::Tensor&, StepLog&) override {
    return sim::teacher_policy(cfg_, state);
  }
  std::unique_ptr<Controller> clone() const override {
    return std::make_unique<TeacherController>(cfg_);
  }

 private:
  sim::SimConfig cfg_;
};

struct TrialResult {
  sim::Position position = sim::Position::C;
  sim::Situation situation = sim::Situation::nominal;
  std::size_t trial = 0;
  bool success = false;
  std::size_t steps = 0;          // first step with success, else T
  double final_distance = 0.0;    // end-effector to block centre, frame units
  std::vector<StepLog> logs;      // one per step
  std::vector<sim::Vec2> block;   // block centre per step (world units)
};

struct EvalOptions {
  std::vector<sim::Position> positions{sim::kAllPositions.begin(), sim::kAllPositions.end()};
  std::size_t trials = 10;
  sim::Situation situation = sim::Situation::nominal;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool keep_frames = false;  // store rendered frames for overlays
};

struct EvalReport {
  std::string model;
  sim::Situation situation = sim::Situation::nominal;
  std::size_t trials = 0;
  std::vector<TrialResult> results;  // ordered by (position, trial)
  std::vector<std::vector<ag::Tensor>> frames;  // per result when keep_frames

  std::size_t successes(sim::Position p) const;
  bool covers(sim::Position p) const;
};

/// Seed of evaluation trial `trial` at `position`.
std::uint64_t trial_seed(std::uint64_t seed, sim::Position position, std::size_t trial);

TrialResult run_trial(const sim::SimConfig& cfg, Controller& controller, sim::Position position,
                      std::size_t trial, sim::Situation situation, std::uint64_t seed,
                      std::vector<ag::Tensor>* frames = nullptr);

EvalReport evaluate_closed_loop(const sim::SimConfig& cfg, const Controller& controller,
                                const EvalOptions& options);

/// Loads the checkpoint and checks it against the simulator frame size.
EvalReport evaluate_closed_loop(const std::filesystem::path& checkpoint,
                                const sim::SimConfig& cfg, const EvalOptions& options);

std::string report_csv(const EvalReport& report);
/// Inverse of report_csv; per-step logs are not part of the CSV.
EvalReport parse_report_csv(const std::string& csv, const std::string& model,
                            const std::string& origin);
/// `step,h0,...` rows for one trial.
std::string hidden_trace_csv(const TrialResult& r);
/// `step,point,enc_x,enc_y,dec_x,dec_y,block_x,block_y` rows (normalized
/// points, block centre in pixels).
std::string attention_trace_csv(const TrialResult& r, const sim::SimConfig& cfg);
/// e.g. "A-i-03"
std::string trial_label(const TrialResult& r);

}  // namespace span::train
