// SPDX-License-Identifier: Apache-2.0
#include "span/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "span/binary_io.hpp"
#include "span/error.hpp"
#include <json.hpp>

namespace span::analysis {

EigenResult jacobi_eigen(Matrix a, std::size_t max_sweeps) {
  const std::size_t n = a.size();
  for (const auto& row : a)
    if (row.size() != n) throw DimensionError("jacobi_eigen needs a square matrix");
  Matrix v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) s += a[p][q] * a[p][q];
    return s;
  };
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scale += a[i][j] * a[i][j];

  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    if (off_norm() <= 1e-30 * scale || scale == 0.0) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {  // A <- A J
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {  // A <- J^T A
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {  // V <- V J
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a[i][i] > a[j][j]; });
  EigenResult r;
  for (std::size_t i : order) {
    r.values.push_back(a[i][i]);
    std::vector<double> col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v[k][i];
    r.vectors.push_back(std::move(col));
  }
  return r;
}

PcaResult pca(const Matrix& rows, std::size_t k) {
  if (rows.size() < 2) throw ContractError("pca needs at least two rows");
  const std::size_t D = rows.front().size();
  if (k == 0 || k > D)
    throw ParameterError("pca: k = " + std::to_string(k) + " must be in [1, " + std::to_string(D) + "]");
  for (const auto& r : rows)
    if (r.size() != D) throw ContractError("pca rows have different lengths");
  const std::size_t N = rows.size();

  PcaResult out;
  out.mean.assign(D, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < D; ++j) out.mean[j] += r[j];
  for (double& m : out.mean) m /= static_cast<double>(N);

  out.covariance.assign(D, std::vector<double>(D, 0.0));
  std::vector<double> c(D);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < D; ++j) c[j] = r[j] - out.mean[j];
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = i; j < D; ++j) out.covariance[i][j] += c[i] * c[j];
  }
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = i; j < D; ++j) {
      out.covariance[i][j] /= static_cast<double>(N - 1);
      out.covariance[j][i] = out.covariance[i][j];
    }

  auto eig = jacobi_eigen(out.covariance);
  for (double& v : eig.values) v = std::max(v, 0.0);
  out.eigenvalues = eig.values;
  out.components.assign(eig.vectors.begin(), eig.vectors.begin() + static_cast<std::ptrdiff_t>(k));
  const double total = std::accumulate(eig.values.begin(), eig.values.end(), 0.0);
  const double top = std::accumulate(eig.values.begin(), eig.values.begin() + static_cast<std::ptrdiff_t>(k), 0.0);
  out.explained_ratio = total > 0.0 ? top / total : 0.0;

  out.projections.assign(N, std::vector<double>(k, 0.0));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < k; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < D; ++j) s += (rows[n][j] - out.mean[j]) * out.components[i][j];
      out.projections[n][i] = s;
    }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void put_pixel(ag::Tensor& img, long r, long c, double red, double green, double blue) {
  const long H = static_cast<long>(img.shape[1]), W = static_cast<long>(img.shape[2]);
  if (r < 0 || c < 0 || r >= H || c >= W) return;
  const std::size_t plane = img.shape[1] * img.shape[2];
  const std::size_t i = static_cast<std::size_t>(r * W + c);
  img.data[i] = red;
  img.data[plane + i] = green;
  img.data[2 * plane + i] = blue;
}

std::pair<long, long> glyph_center(const attention::Point& p, std::size_t H, std::size_t W) {
  const auto px = attention::coord_convert(p, H, W, attention::Direction::norm_to_pixel);
  return {static_cast<long>(std::floor(px.y)), static_cast<long>(std::floor(px.x))};
}

}  // namespace

ag::Tensor render_attention_overlay(const ag::Tensor& frame,
                                    const attention::AttentionPointSet& encoder,
                                    const attention::AttentionPointSet& decoder) {
  if (frame.rank() != 3 || frame.shape[0] != 3)
    throw DimensionError("overlay needs a [3 x H x W] frame, got " + ag::shape_str(frame.shape));
  ag::Tensor out = frame;
  const std::size_t H = frame.shape[1], W = frame.shape[2];
  for (const auto& p : encoder) {
    const auto [r0, c0] = glyph_center(p, H, W);
    for (long dr = -2; dr <= 2; ++dr)
      for (long dc = -2; dc <= 2; ++dc)
        if (dr * dr + dc * dc <= 4) put_pixel(out, r0 + dr, c0 + dc, 1.0, 0.0, 0.0);
  }
  for (const auto& p : decoder) {
    const auto [r0, c0] = glyph_center(p, H, W);
    for (long i = -3; i <= 3; ++i) {
      put_pixel(out, r0 + i, c0 + i, 0.0, 0.0, 1.0);
      put_pixel(out, r0 + i, c0 - i, 0.0, 0.0, 1.0);
    }
  }
  return out;
}

void write_attention_overlay(const std::filesystem::path& path, const ag::Tensor& frame,
                             const attention::AttentionPointSet& encoder,
                             const attention::AttentionPointSet& decoder) {
  sim::write_ppm(path, render_attention_overlay(frame, encoder, decoder));
}

// ---------------------------------------------------------------------------

namespace {

std::string percent(std::size_t count, std::size_t trials) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g%%", 100.0 * static_cast<double>(count) / static_cast<double>(trials));
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

}  // namespace

std::string success_table(const std::vector<train::EvalReport>& reports) {
  std::string out = "model,situation,trials,A,B,C,D,E\n";
  for (const auto& rep : reports) {
    if (rep.trials == 0) throw CompletenessError("report for " + rep.model + " has zero trials");
    std::string row = rep.model + "," + sim::to_string(rep.situation) + "," + std::to_string(rep.trials);
    for (sim::Position p : sim::kAllPositions) {
      if (!rep.covers(p))
        throw CompletenessError("report for " + rep.model + " (situation " +
                                sim::to_string(rep.situation) + ") misses position " + sim::to_char(p));
      row += "," + percent(rep.successes(p), rep.trials);
    }
    out += row + "\n";
  }
  return out;
}

std::vector<SuccessRow> parse_success_table(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "model,situation,trials,A,B,C,D,E")
    throw FormatError("success table: unexpected header");
  std::vector<SuccessRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 8) throw FormatError("success table: expected 8 fields in '" + line + "'");
    SuccessRow r;
    r.model = f[0];
    r.situation = sim::parse_situation(f[1]);
    try {
      r.trials = std::stoul(f[2]);
      for (std::size_t i = 0; i < 5; ++i) {
        std::string cell = f[3 + i];
        if (cell.empty() || cell.back() != '%') throw FormatError("success table: cell '" + cell + "'");
        cell.pop_back();
        r.counts[i] = static_cast<std::size_t>(std::llround(std::stod(cell) * static_cast<double>(r.trials) / 100.0));
      }
    } catch (const std::invalid_argument&) {
      throw FormatError("success table: bad number in '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------

double attention_tracking_metric(const std::vector<sim::Vec2>& block_pixels,
                                 const std::vector<attention::AttentionPointSet>& trace,
                                 std::size_t height, std::size_t width) {
  if (trace.empty() || block_pixels.empty()) throw ContractError("attention trace is empty");
  if (trace.size() != block_pixels.size())
    throw ContractError("attention trace and block track differ in length");
  double total = 0.0;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    if (trace[t].empty()) throw ContractError("frame " + std::to_string(t) + " has no attention points");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : trace[t]) {
      const auto px = attention::coord_convert(p, height, width, attention::Direction::norm_to_pixel);
      best = std::min(best, std::hypot(px.x - block_pixels[t].x, px.y - block_pixels[t].y));
    }
    total += best;
  }
  return total / static_cast<double>(trace.size());
}

double attention_tracking_metric(const train::TrialResult& trial, const sim::SimConfig& cfg) {
  if (trial.logs.empty() || trial.logs.front().encoder.empty())
    return std::numeric_limits<double>::quiet_NaN();
  std::vector<sim::Vec2> block;
  std::vector<attention::AttentionPointSet> trace;
  for (std::size_t t = 0; t < trial.logs.size(); ++t) {
    block.push_back(sim::world_to_pixel(cfg, trial.block[t]));
    trace.push_back(trial.logs[t].encoder);
  }
  return attention_tracking_metric(block, trace, cfg.image_size, cfg.image_size);
}

std::string report_json(const train::EvalReport& report, const sim::SimConfig& cfg) {
  using nlohmann::json;
  json counts = json::object();
  json attention = json::object();
  double taught_sum = 0.0;
  std::size_t taught_n = 0;
  for (sim::Position p : sim::kAllPositions) {
    if (!report.covers(p)) continue;
    const std::string key(1, sim::to_char(p));
    counts[key] = report.successes(p);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : report.results) {
      if (r.position != p) continue;
      const double d = attention_tracking_metric(r, cfg);
      if (std::isnan(d)) continue;
      sum += d;
      ++n;
    }
    if (n > 0) {
      attention[key] = sum / static_cast<double>(n);
      if (sim::is_taught(p)) {
        taught_sum += sum;
        taught_n += n;
      }
    }
  }
  json j = {{"model", report.model},
            {"situation", sim::to_string(report.situation)},
            {"trials", report.trials},
            {"image_size", cfg.image_size},
            {"successes", counts}};
  if (taught_n > 0) {
    const double mean = taught_sum / static_cast<double>(taught_n);
    j["attention_distance_px"] = attention;
    j["attention_distance_taught_px"] = mean;
    j["attention_distance_taught_px64"] = mean * 64.0 / static_cast<double>(cfg.image_size);
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

HiddenTrace parse_hidden_trace(const std::string& csv, const std::string& label) {
  HiddenTrace tr;
  tr.label = label;
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("step"))
    throw FormatError(label + ": hidden trace header missing");
  const std::size_t width = split(line, ',').size() - 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != width + 1) throw FormatError(label + ": ragged hidden trace row");
    std::vector<double> row;
    try {
      for (std::size_t i = 1; i < f.size(); ++i) row.push_back(std::stod(f[i]));
    } catch (const std::exception&) {
      throw FormatError(label + ": bad number in hidden trace");
    }
    for (double v : row)
      if (!std::isfinite(v)) throw NumericError(label + ": non-finite hidden state");
    tr.rows.push_back(std::move(row));
  }
  if (tr.rows.empty()) throw CompletenessError(label + ": hidden trace has no rows");
  return tr;
}

std::vector<HiddenTrace> load_hidden_traces(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw IoError(dir.string() + ": trace directory does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.starts_with("trace_") && name.ends_with(".csv")) files.push_back(e.path());
  }
  if (files.empty()) throw CompletenessError(dir.string() + ": no hidden traces (trace_*.csv)");
  std::sort(files.begin(), files.end());
  std::vector<HiddenTrace> out;
  for (const auto& f : files) {
    auto stem = f.stem().string().substr(6);
    out.push_back(parse_hidden_trace(io::read_text(f), stem));
  }
  return out;
}

PcaResult trace_pca(const std::vector<HiddenTrace>& traces, std::size_t k) {
  Matrix rows;
  for (const auto& t : traces) rows.insert(rows.end(), t.rows.begin(), t.rows.end());
  return pca(rows, k);
}

std::string projection_csv(const std::vector<HiddenTrace>& traces, const PcaResult& result) {
  const std::size_t k = result.components.size();
  std::string out = "episode,step";
  for (std::size_t i = 0; i < k; ++i) out += ",pc" + std::to_string(i + 1);
  out += "\n";
  std::size_t n = 0;
  char buf[40];
  for (const auto& t : traces)
    for (std::size_t s = 0; s < t.rows.size(); ++s, ++n) {
      out += t.label + "," + std::to_string(s);
      for (std::size_t i = 0; i < k; ++i) {
        std::snprintf(buf, sizeof buf, ",%.17g", result.projections[n][i]);
        out += buf;
      }
      out += "\n";
    }
  return out;
}

}  // namespace span::analysis
