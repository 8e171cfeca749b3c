// SPDX-License-Identifier: Apache-2.0
#include "span/tensor.hpp"

#include <cmath>
#include <sstream>

#include "span/error.hpp"
#include "span/kernels.hpp"

namespace span::ag {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& s) {
  if (s.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (auto e : s)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(s));
}

void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on a detached Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape || !a.valid()) throw ContractError("operands live on different tapes");
  return *a.tape;
}

}  // namespace

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  check_shape(shape);
  data.assign(numel(shape), fill);
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  check_shape(shape);
  if (numel(shape) != data.size())
    throw DimensionError("tensor of shape " + shape_str(shape) + " given " +
                         std::to_string(data.size()) + " values");
}

double Tensor::item() const {
  if (data.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape));
  return data[0];
}

const Tensor& Var::value() const {
  if (!tape) throw ContractError("value() on a detached Var");
  return tape->value(id);
}

// ---------------------------------------------------------------------------

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, {}, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}, {}, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return {this, it->second};
  nodes_.push_back(Node{p.value, {}, true, {}, {}, &p});
  param_ids_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape != this) throw ContractError("input recorded on a different tape");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

std::vector<double>& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss belongs to another tape");
  if (nodes_[loss.id].value.size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(nodes_[loss.id].value.shape));
  for (std::size_t i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    const bool leaf = n.inputs.empty() && n.param == nullptr;
    if (!leaf || n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, i);
  }
  for (std::size_t i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[i];
    if (!n.param) continue;
    Parameter& p = *n.param;
    if (p.grad.size() != p.value.size()) p.grad.assign(p.value.size(), 0.0);
    for (std::size_t j = 0; j < n.grad.size(); ++j) p.grad[j] += n.grad[j];
  }
}

void Tape::clear() {
  nodes_.clear();
  param_ids_.clear();
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " +
                         shape_str(sb));
  const std::size_t M = sa[0], K = sa[1], N = sb[1];
  Tensor out({M, N});
  kernels::active().gemm_nn(M, N, K, a.value().data.data(), b.value().data.data(),
                            out.data.data());
  const std::size_t ia = a.id, ib = b.id;
  Var inputs[] = {a, b};
  return t.record(std::move(out), inputs, [ia, ib, M, N, K](Tape& tp, std::size_t self) {
    const auto& k = kernels::active();
    const double* dc = tp.grad(self).data();
    if (tp.requires_grad(ia))
      k.gemm_nt(M, K, N, dc, tp.value(ib).data.data(), tp.grad(ia).data());
    if (tp.requires_grad(ib))
      k.gemm_tn(K, N, M, tp.value(ia).data.data(), dc, tp.grad(ib).data());
  });
}

Var matvec(Var w, Var x) {
  Tape& t = tape_of(w, x);
  const Shape& sw = w.shape();
  if (sw.size() != 2 || x.size() != sw[1])
    throw DimensionError("matvec: incompatible shapes " + shape_str(sw) + " and " +
                         shape_str(x.shape()));
  const std::size_t M = sw[0], N = sw[1];
  Tensor out({M});
  kernels::active().gemm_nn(M, 1, N, w.value().data.data(), x.value().data.data(),
                            out.data.data());
  const std::size_t iw = w.id, ix = x.id;
  Var inputs[] = {w, x};
  return t.record(std::move(out), inputs, [iw, ix, M, N](Tape& tp, std::size_t self) {
    const auto& k = kernels::active();
    const double* dy = tp.grad(self).data();
    if (tp.requires_grad(iw)) k.gemm_nn(M, N, 1, dy, tp.value(ix).data.data(), tp.grad(iw).data());
    if (tp.requires_grad(ix)) k.gemm_tn(N, 1, M, tp.value(iw).data.data(), dy, tp.grad(ix).data());
  });
}

namespace {

template <class Fwd, class Bwd>
Var binary(const char* name, Var a, Var b, Fwd fwd, Bwd bwd) {
  Tape& t = tape_of(a, b);
  require_same(name, a.shape(), b.shape());
  const auto& va = a.value().data;
  const auto& vb = b.value().data;
  Tensor out(a.shape());
  for (std::size_t i = 0; i < va.size(); ++i) out.data[i] = fwd(va[i], vb[i]);
  const std::size_t ia = a.id, ib = b.id;
  Var inputs[] = {a, b};
  return t.record(std::move(out), inputs, [ia, ib, bwd](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& x = tp.value(ia).data;
    const auto& y = tp.value(ib).data;
    const bool ga = tp.requires_grad(ia), gb = tp.requires_grad(ib);
    double* da = ga ? tp.grad(ia).data() : nullptr;
    double* db = gb ? tp.grad(ib).data() : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) bwd(g[i], x[i], y[i], da ? da + i : nullptr,
                                                   db ? db + i : nullptr);
  });
}

// dfn receives (input, output) and returns d(output)/d(input).
template <class Fwd, class Dfn>
Var unary(Var a, Fwd fwd, Dfn dfn) {
  Tape& t = tape_of(a);
  const auto& va = a.value().data;
  Tensor out(a.shape());
  for (std::size_t i = 0; i < va.size(); ++i) out.data[i] = fwd(va[i]);
  const std::size_t ia = a.id;
  Var inputs[] = {a};
  return t.record(std::move(out), inputs, [ia, dfn](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& x = tp.value(ia).data;
    const auto& y = tp.value(self).data;
    auto& dx = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * dfn(x[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double* da, double* db) {
        if (da) *da += g;
        if (db) *db += g;
      });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double* da, double* db) {
        if (da) *da += g;
        if (db) *db -= g;
      });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double x, double y, double* da, double* db) {
        if (da) *da += g * y;
        if (db) *db += g * x;
      });
}

Var scale(Var a, double s) {
  return unary(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        // Split by sign so exp never overflows.
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const std::size_t ia = a.id;
  Var inputs[] = {a};
  return t.record(Tensor::scalar(s), inputs, [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    for (double& d : tp.grad(ia)) d += g;
  });
}

Var mse(Var pred, Var target) {
  Tape& t = tape_of(pred, target);
  require_same("mse", pred.shape(), target.shape());
  const auto& p = pred.value().data;
  const auto& y = target.value().data;
  const double n = static_cast<double>(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - y[i];
    s += d * d;
  }
  const std::size_t ip = pred.id, iy = target.id;
  Var inputs[] = {pred, target};
  return t.record(Tensor::scalar(s / n), inputs, [ip, iy, n](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0] * 2.0 / n;
    const auto& pv = tp.value(ip).data;
    const auto& yv = tp.value(iy).data;
    if (tp.requires_grad(ip)) {
      auto& dp = tp.grad(ip);
      for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += g * (pv[i] - yv[i]);
    }
    if (tp.requires_grad(iy)) {
      auto& dy = tp.grad(iy);
      for (std::size_t i = 0; i < dy.size(); ++i) dy[i] -= g * (pv[i] - yv[i]);
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  if (numel(shape) != a.size())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  Tensor out(std::move(shape), a.value().data);
  const std::size_t ia = a.id;
  Var inputs[] = {a};
  return t.record(std::move(out), inputs, [ia](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    auto& d = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat of nothing");
  Tape& t = tape_of(parts.front());
  std::vector<double> data;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.tape != &t) throw ContractError("concat operands live on different tapes");
    data.insert(data.end(), p.value().data.begin(), p.value().data.end());
    ids.push_back(p.id);
  }
  const std::size_t n = data.size();
  return t.record(Tensor({n}, std::move(data)), parts, [ids](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t len = tp.value(id).size();
      if (tp.requires_grad(id)) {
        auto& d = tp.grad(id);
        for (std::size_t i = 0; i < len; ++i) d[i] += g[off + i];
      }
      off += len;
    }
  });
}

Var slice(Var a, std::size_t offset, std::size_t length) {
  Tape& t = tape_of(a);
  if (length == 0 || offset + length > a.size())
    throw DimensionError("slice [" + std::to_string(offset) + ", " +
                         std::to_string(offset + length) + ") out of range for " +
                         shape_str(a.shape()));
  const auto& v = a.value().data;
  Tensor out({length}, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(offset),
                                           v.begin() + static_cast<std::ptrdiff_t>(offset + length)));
  const std::size_t ia = a.id;
  Var inputs[] = {a};
  return t.record(std::move(out), inputs, [ia, offset](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    auto& d = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[offset + i] += g[i];
  });
}

Var elementwise(Elementwise op, Var a) {
  switch (op) {
    case Elementwise::tanh: return tanh(a);
    case Elementwise::sigmoid: return sigmoid(a);
    case Elementwise::relu: return relu(a);
    default: throw ContractError("elementwise: binary op given one operand");
  }
}

Var elementwise(Elementwise op, Var a, Var b) {
  switch (op) {
    case Elementwise::add: return add(a, b);
    case Elementwise::sub: return sub(a, b);
    case Elementwise::mul: return mul(a, b);
    default: throw ContractError("elementwise: unary op given two operands");
  }
}

}  // namespace span::ag
