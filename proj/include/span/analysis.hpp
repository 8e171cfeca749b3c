// SPDX-License-Identifier: Apache-2.0
#pragma once

// Post-hoc analyses: PCA of LSTM hidden traces, attention overlays, success
// tables and the attention tracking distance.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "span/attention.hpp"
#include "span/sim.hpp"
#include "span/training.hpp"

namespace span::analysis {

using Matrix = std::vector<std::vector<double>>;  // row-major rows

struct EigenResult {
  std::vector<double> values;  // descending
  Matrix vectors;              // vectors[i] is the unit eigenvector of values[i]
};

/// Cyclic Jacobi rotations on a symmetric matrix.
EigenResult jacobi_eigen(Matrix a, std::size_t max_sweeps = 100);

struct PcaResult {
  std::vector<double> mean;
  Matrix covariance;                // D x D, divided by N - 1
  std::vector<double> eigenvalues;  // all D, descending, clamped at 0
  Matrix components;                // k unit vectors of length D
  Matrix projections;               // N x k
  double explained_ratio = 0.0;     // sum of top k eigenvalues / total (0 if no variance)
};

/// ParameterError for k > D or k == 0; ContractError for N < 2 or ragged rows.
PcaResult pca(const Matrix& rows, std::size_t k);

/// Copy of `frame` with encoder points as filled red discs (radius 2) and
/// decoder points as blue crosses (arm 3). Glyphs are clipped at the border.
ag::Tensor render_attention_overlay(const ag::Tensor& frame,
                                    const attention::AttentionPointSet& encoder,
                                    const attention::AttentionPointSet& decoder);
void write_attention_overlay(const std::filesystem::path& path, const ag::Tensor& frame,
                             const attention::AttentionPointSet& encoder,
                             const attention::AttentionPointSet& decoder);

struct SuccessRow {
  std::string model;
  sim::Situation situation = sim::Situation::nominal;
  std::size_t trials = 0;
  std::array<std::size_t, 5> counts{};
};

/// `model,situation,trials,A,B,C,D,E` with percentages; CompletenessError if
/// a report misses a position.
std::string success_table(const std::vector<train::EvalReport>& reports);
std::vector<SuccessRow> parse_success_table(const std::string& csv);

/// Mean over frames of the pixel distance from the block centre to the
/// nearest encoder point. ContractError on an empty or ragged trace.
double attention_tracking_metric(const std::vector<sim::Vec2>& block_pixels,
                                 const std::vector<attention::AttentionPointSet>& trace,
                                 std::size_t height, std::size_t width);

/// Convenience over a closed-loop trial; NaN when the model has no points.
double attention_tracking_metric(const train::TrialResult& trial, const sim::SimConfig& cfg);

/// Summary: model, situation, per-position counts and mean attention
/// distance (pixels, plus the 64 px equivalent).
std::string report_json(const train::EvalReport& report, const sim::SimConfig& cfg);

struct HiddenTrace {
  std::string label;  // file stem, e.g. "A-i-03"
  Matrix rows;        // T x H
};

HiddenTrace parse_hidden_trace(const std::string& csv, const std::string& label);
/// Every `trace_*.csv` in `dir`, sorted by name. CompletenessError if none.
std::vector<HiddenTrace> load_hidden_traces(const std::filesystem::path& dir);

/// PCA over all rows of all traces.
PcaResult trace_pca(const std::vector<HiddenTrace>& traces, std::size_t k);
/// `episode,step,pc1,...` rows.
std::string projection_csv(const std::vector<HiddenTrace>& traces, const PcaResult& result);

}  // namespace span::analysis
