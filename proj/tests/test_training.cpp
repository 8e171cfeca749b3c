// SPDX-License-Identifier: Apache-2.0
#include <filesystem>

#include "span/binary_io.hpp"
#include "span/error.hpp"
#include "span/training.hpp"
#include "support.hpp"

using namespace span;
using namespace span::train;
using ag::Tensor;
using ag::Var;
using model::ModelKind;
using model::SpanConfig;
using sim::Position;
namespace fs = std::filesystem;

namespace {

sim::SimConfig mini_sim(std::size_t T = 8) {
  sim::SimConfig cfg;
  cfg.image_size = 16;
  cfg.episode_length = T;
  return cfg;
}

std::vector<data::Episode> mini_data(std::size_t T = 8) {
  return data::generate_dataset(mini_sim(T), {Position::A, Position::E}, 1, 3);
}

TrainOptions mini_options(ModelKind kind, std::size_t epochs) {
  TrainOptions o;
  o.kind = kind;
  o.config = SpanConfig::miniature();
  o.config.learning_rate = 1e-2;
  o.epochs = epochs;
  o.seed = 5;
  return o;
}

}  // namespace

TEST_CASE("one epoch on one episode runs T-1 steps") {
  auto eps = mini_data();
  eps.resize(1);
  const auto run = train::train(eps, mini_options(ModelKind::span, 1));
  CHECK(run.forward_steps == 7);
  CHECK(run.log.size() == 1);
}

TEST_CASE("training rejects unusable datasets before any update") {
  auto o = mini_options(ModelKind::span, 1);
  CHECK_THROWS_AS(train::train({}, o), ConfigError);
  auto eps = mini_data();
  eps[0].meta.position = Position::B;
  CHECK_THROWS_AS(train::train(eps, o), ConfigError);
  auto sized = data::generate_dataset(mini_sim(), {Position::C}, 1, 1);
  o.config = SpanConfig::desk();
  CHECK_THROWS_AS(train::train(sized, o), ConfigError);
}

TEST_CASE("effective alpha") {
  auto c = SpanConfig::miniature();
  c.alpha = 0.3;
  CHECK(effective_alpha(ModelKind::span, c) == 0.3);
  CHECK(effective_alpha(ModelKind::span_alpha0, c) == 0.0);
  CHECK(effective_alpha(ModelKind::cnnrnn, c) == 0.0);
}

TEST_CASE("training is reproducible and reduces the loss") {
  const auto eps = mini_data();
  for (ModelKind kind : {ModelKind::span, ModelKind::cnnrnn}) {
    CAPTURE(model::to_string(kind));
    const auto a = train::train(eps, mini_options(kind, 40));
    const auto b = train::train(eps, mini_options(kind, 40));
    CHECK(format_loss_log(a.log) == format_loss_log(b.log));
    CHECK(a.log.back().total < 0.1 * a.log.front().total);
    for (const auto& l : a.log)
      CHECK(l.total == doctest::Approx(l.image + l.joints + effective_alpha(kind, a.config) * l.points).epsilon(1e-14));
  }
}

TEST_CASE("loss log format") {
  std::vector<EpochLoss> log{{0.5, 0.25, 0.125, 12.5}};
  CHECK(format_loss_log(log) == "epoch,g,g_i,g_a,g_f\n1,0.5,0.25,0.125,12.5\n");
}

TEST_CASE("gf target next references the following frame") {
  const auto eps = mini_data(4);
  auto cfg = SpanConfig::miniature();
  auto same = model::make_policy(ModelKind::span, cfg, 1);
  cfg.gf_target = model::GfTarget::next;
  auto next = model::make_policy(ModelKind::span, cfg, 1);
  const auto ls = episode_loss(*same, eps[0], 0.01);
  const auto ln = episode_loss(*next, eps[0], 0.01);
  CHECK(ls.joints == ln.joints);
  CHECK(ls.image == ln.image);
  CHECK(ls.points != ln.points);
}

TEST_CASE("one Adam step on the consistency term pulls the points together") {
  const auto eps = mini_data(6);
  auto m = model::make_policy(ModelKind::span, SpanConfig::miniature(), 2);
  auto params = m->parameters();
  auto gf = [&](bool bw) {
    double total = 0.0;
    for (const auto& ep : eps) {
      ag::Tape tape;
      auto [h, c] = model::zero_state(tape, m->hidden_size());
      std::vector<Var> terms;
      for (std::size_t t = 0; t + 1 < ep.length(); ++t) {
        auto s = m->step(tape.constant(ep.images[t]), tape.constant(ep.joints[t]), h, c);
        h = s.h, c = s.c;
        terms.push_back(ag::mse(s.points_dec, s.points_enc));
      }
      auto loss = ag::sum(ag::concat(terms));
      if (bw) tape.backward(loss);
      total += loss.value().item();
    }
    return total;
  };
  for (auto* p : params) p->zero_grad();
  const double before = gf(true);
  nn::AdamState adam;
  adam.learning_rate = 1e-4;
  nn::adam_step(adam, params);
  CHECK(gf(false) < before);
}

TEST_CASE("encoder blocks are independent") {
  Xorshift64Star rng(3);
  model::SpanModel m(SpanConfig::miniature(), 4);
  const Tensor img = test::random_tensor({3, 16, 16}, rng, 0.0, 1.0);
  auto outputs = [&]() {
    ag::Tape tape;
    Tensor features = m.image_features(tape.constant(img)).value();
    Tensor maps = m.area_maps(tape.constant(img)).value();
    return std::make_pair(features, maps);
  };
  const auto base = outputs();
  for (auto& l : m.area_block()) l.bias.value.data[0] += 0.5;
  auto after = outputs();
  CHECK(after.first == base.first);
  CHECK(after.second != base.second);
  for (auto& l : m.feature_block()) l.bias.value.data[0] += 0.5;
  const auto again = outputs();
  CHECK(again.second == after.second);
  CHECK(again.first != after.first);
}

TEST_CASE("checkpoint and sidecar round trip") {
  const auto dir = fs::temp_directory_path() / "span_training_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto o = mini_options(ModelKind::cnnrnn, 2);
  o.checkpoint = dir / "model.ckpt";
  o.loss_log = dir / "loss.csv";
  const auto run = train::train(mini_data(), o);
  CHECK(fs::exists(dir / "model.ckpt.cfg"));
  CHECK(io::read_text(o.loss_log) == format_loss_log(run.log));
  auto loaded = load_model(o.checkpoint);
  CHECK(loaded->kind() == ModelKind::cnnrnn);
  CHECK(loaded->config() == run.config);
  auto a = run.model->parameters(), b = loaded->parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
  fs::remove(dir / "model.ckpt.cfg");
  CHECK_THROWS_AS(load_model(o.checkpoint), IoError);
  fs::remove_all(dir);
}

TEST_CASE("teacher controller succeeds everywhere") {
  const sim::SimConfig cfg;
  EvalOptions eo;
  eo.seed = 4;
  const auto report = evaluate_closed_loop(cfg, TeacherController(cfg), eo);
  CHECK(report.results.size() == 50);
  for (Position p : sim::kAllPositions) {
    CHECK(report.covers(p));
    CHECK(report.successes(p) == 10);
  }
}

TEST_CASE("untrained policy rarely succeeds") {
  sim::SimConfig cfg;
  cfg.image_size = 32;
  ModelController ctl(model::make_policy(ModelKind::span, SpanConfig::desk(), 9));
  EvalOptions eo;
  eo.trials = 10;
  eo.seed = 1;
  const auto report = evaluate_closed_loop(cfg, ctl, eo);
  for (Position p : sim::kAllPositions) CHECK(report.successes(p) <= 2);
}

TEST_CASE("report layout") {
  const auto cfg = mini_sim(20);
  EvalOptions eo;
  eo.positions = {Position::B, Position::D};
  eo.trials = 3;
  eo.situation = sim::Situation::background;
  const auto report = evaluate_closed_loop(cfg, TeacherController(cfg), eo);
  CHECK(report.results.size() == 6);
  CHECK_FALSE(report.covers(Position::A));
  const auto csv = report_csv(report);
  CHECK(csv.rfind("position,situation,trial,success,steps,final_distance\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  CHECK(csv.find("\nB,iii,0,") != std::string::npos);
  CHECK(trial_label(report.results[4]) == "D-iii-01");

  const auto back = parse_report_csv(csv, "teacher", "report.csv");
  CHECK(back.trials == 3);
  CHECK(back.situation == sim::Situation::background);
  CHECK(report_csv(back) == csv);
  CHECK_THROWS_AS(parse_report_csv("a,b\n", "m", "r.csv"), FormatError);
  CHECK_THROWS_AS(parse_report_csv(csv + "B,iii,x,1,2,0.1\n", "m", "r.csv"), FormatError);
}

TEST_CASE("parallel evaluation matches serial evaluation") {
  sim::SimConfig cfg = mini_sim(30);
  ModelController ctl(model::make_policy(ModelKind::span, SpanConfig::miniature(), 6));
  EvalOptions eo;
  eo.trials = 3;
  eo.seed = 8;
  eo.situation = sim::Situation::obstacle;
  const auto serial = evaluate_closed_loop(cfg, ctl, eo);
  eo.workers = 3;
  const auto parallel = evaluate_closed_loop(cfg, ctl, eo);
  CHECK(report_csv(serial) == report_csv(parallel));
  REQUIRE(serial.results.size() == parallel.results.size());
  for (std::size_t i = 0; i < serial.results.size(); ++i)
    CHECK(hidden_trace_csv(serial.results[i]) == hidden_trace_csv(parallel.results[i]));
}

TEST_CASE("trial logs carry hidden state and attention points") {
  sim::SimConfig cfg = mini_sim(5);
  ModelController ctl(model::make_policy(ModelKind::span, SpanConfig::miniature(), 6));
  const auto r = run_trial(cfg, ctl, Position::C, 0, sim::Situation::nominal, 1);
  REQUIRE(r.logs.size() == 5);
  CHECK(r.logs[0].hidden.size() == 6);
  CHECK(r.logs[0].encoder.size() == 2);
  CHECK(r.logs[0].decoder.size() == 2);
  const auto trace = hidden_trace_csv(r);
  CHECK(trace.rfind("step,h0,h1,h2,h3,h4,h5\n", 0) == 0);
  CHECK(std::count(trace.begin(), trace.end(), '\n') == 6);
  const auto att = attention_trace_csv(r, cfg);
  CHECK(std::count(att.begin(), att.end(), '\n') == 1 + 5 * 2);
}

TEST_CASE("checkpoint evaluation checks the frame size") {
  const auto dir = fs::temp_directory_path() / "span_training_test_eval";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto m = model::make_policy(ModelKind::span, SpanConfig::miniature(), 1);
  save_model(dir / "m.ckpt", *m);
  EvalOptions eo;
  eo.trials = 1;
  eo.positions = {Position::C};
  CHECK_THROWS_AS(evaluate_closed_loop(dir / "m.ckpt", sim::SimConfig{}, eo), ConfigError);
  CHECK(evaluate_closed_loop(dir / "m.ckpt", mini_sim(4), eo).results.size() == 1);
  fs::remove_all(dir);
}
