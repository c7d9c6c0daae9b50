#include "clap/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "clap/rng.hpp"

namespace clap::ad {

namespace {

const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kSoftmax: return "softmax";
    case Op::kSquare: return "square";
    case Op::kSqrt: return "sqrt";
    case Op::kConcat: return "concat";
    case Op::kMaxConst: return "maximum";
    case Op::kBroadcast: return "broadcast";
    case Op::kScale: return "scale";
    case Op::kAddConst: return "add_scalar";
    case Op::kStopGradient: return "stop_gradient";
  }
  return "?";
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw Error("variable is not attached to a tape");
  return *a.tape;
}

Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw Error("operands live on different tapes");
  return tape_of(a);
}

std::size_t broadcast_extent(std::size_t x, std::size_t y, const char* op) {
  if (x == y || y == 1) return x;
  if (x == 1) return y;
  throw ShapeError(std::string(op) + ": cannot broadcast extents " + std::to_string(x) +
                   " and " + std::to_string(y));
}

template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* op, F f) {
  const std::size_t rows = broadcast_extent(a.rows(), b.rows(), op);
  const std::size_t cols = broadcast_extent(a.cols(), b.cols(), op);
  Tensor out(rows, cols);
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t ra = a.rows() == 1 ? 0 : r;
    const std::size_t rb = b.rows() == 1 ? 0 : r;
    for (std::size_t c = 0; c < cols; ++c) {
      out(r, c) = f(a(ra, a.cols() == 1 ? 0 : c), b(rb, b.cols() == 1 ? 0 : c));
    }
  }
  return out;
}

// Sum a broadcast gradient back down to `rows`×`cols`.
Tensor reduce_to(const Tensor& g, std::size_t rows, std::size_t cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t c = 0; c < g.cols(); ++c) {
      out(rows == 1 ? 0 : r, cols == 1 ? 0 : c) += g(r, c);
    }
  }
  return out;
}

Tensor matmul_values(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Tensor transpose_values(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

// G * B^T without materializing the transpose.
Tensor matmul_nt(const Tensor& g, const Tensor& b) {
  Tensor out(g.rows(), b.rows());
  for (std::size_t i = 0; i < g.rows(); ++i) {
    for (std::size_t k = 0; k < b.rows(); ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) s += g(i, j) * b(k, j);
      out(i, k) = s;
    }
  }
  return out;
}

// A^T * G.
Tensor matmul_tn(const Tensor& a, const Tensor& g) {
  Tensor out(a.cols(), g.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < g.cols(); ++j) out(k, j) += aik * g(i, j);
    }
  }
  return out;
}

template <typename F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

void accumulate(Tensor& dst, const Tensor& src) {
  if (dst.size() == 0) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterSet

std::size_t ParameterSet::add(std::string name, Tensor init) {
  if (find(name)) throw Error("duplicate parameter name: " + name);
  if (!init.all_finite()) throw NumericError("non-finite initial value for " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return values_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

std::size_t ParameterSet::total_elements() const noexcept {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_of(*this).value(id); }

void Tape::bind(const ParameterSet& params) {
  params_ = &params;
  param_leaf_.assign(params.size(), -1);
}

void Tape::clear() {
  nodes_.clear();
  detached_count_ = 0;
  if (params_ != nullptr) param_leaf_.assign(params_->size(), -1);
}

Var Tape::record(Op op, Tensor value, int a, int b, double k, Axis axis) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite output from ") + op_name(op));
  }
  Node node{op, a, b, k, axis, {}, std::move(value), 0};
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record_concat(Tensor value, std::vector<int> inputs, Axis axis) {
  Var v = record(Op::kConcat, std::move(value), -1, -1, 0.0, axis);
  nodes_.back().inputs = std::move(inputs);
  return v;
}

Var Tape::record_stop_gradient(Var a) {
  const std::size_t k = detached_count_++;
  if (k < frozen_.size()) {
    if (frozen_[k].shape() != a.value().shape()) throw ShapeError("frozen detached value has the wrong shape");
    return record(Op::kStopGradient, frozen_[k], a.id);
  }
  return record(Op::kStopGradient, a.value(), a.id);
}

std::vector<Tensor> Tape::detached_values() const {
  std::vector<Tensor> out;
  for (const auto& node : nodes_)
    if (node.op == Op::kStopGradient) out.push_back(node.value);
  return out;
}

void Tape::freeze_detached(std::vector<Tensor> values) { frozen_ = std::move(values); }

Var Tape::constant(Tensor value) { return record(Op::kConstant, std::move(value), -1); }

Var Tape::param(std::size_t index) {
  if (params_ == nullptr) throw Error("tape has no bound parameter set");
  if (index >= param_leaf_.size()) {
    // The set may have grown since binding.
    param_leaf_.resize(params_->size(), -1);
    if (index >= param_leaf_.size()) throw Error("parameter index out of range");
  }
  if (param_leaf_[index] >= 0) return Var{this, param_leaf_[index]};
  Var v = record(Op::kParameter, params_->value(index), -1);
  nodes_.back().param_index = index;
  param_leaf_[index] = v.id;
  return v;
}

std::size_t Tape::kinks_within(double radius) const {
  std::size_t count = 0;
  for (const auto& node : nodes_) {
    if (node.op != Op::kMaxConst && node.op != Op::kRelu) continue;
    const double floor = node.op == Op::kMaxConst ? node.k : 0.0;
    for (double x : nodes_[static_cast<std::size_t>(node.a)].value.data()) {
      if (std::abs(x - floor) < radius) ++count;
    }
  }
  return count;
}

GradientMap Tape::backward(Var loss) const {
  if (loss.tape != this) throw Error("loss belongs to a different tape");
  const Tensor& lv = value(loss.id);
  if (lv.size() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(lv));

  // Which nodes lead to a parameter without crossing a stop_gradient.
  std::vector<char> needs(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::kParameter) {
      needs[i] = 1;
    } else if (n.op == Op::kStopGradient || n.op == Op::kConstant) {
      needs[i] = 0;
    } else if (n.op == Op::kConcat) {
      for (int in : n.inputs) needs[i] |= needs[static_cast<std::size_t>(in)];
    } else {
      if (n.a >= 0) needs[i] |= needs[static_cast<std::size_t>(n.a)];
      if (n.b >= 0) needs[i] |= needs[static_cast<std::size_t>(n.b)];
    }
  }

  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(loss.id)] = Tensor(1, 1, 1.0);
  for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
    if (!needs[i] || grads[i].size() == 0) continue;
    backprop_node(nodes_[i], grads[i], grads);
    if (nodes_[i].op != Op::kParameter) grads[i] = Tensor();
  }

  GradientMap out;
  const std::size_t nparams = params_ ? params_->size() : 0;
  out.reserve(nparams);
  for (std::size_t p = 0; p < nparams; ++p) {
    const Tensor& pv = params_->value(p);
    const int leaf = p < param_leaf_.size() ? param_leaf_[p] : -1;
    if (leaf >= 0 && grads[static_cast<std::size_t>(leaf)].size() > 0) {
      out.push_back(grads[static_cast<std::size_t>(leaf)]);
      if (!out.back().all_finite()) {
        throw NumericError("non-finite gradient for parameter " + params_->name(p));
      }
    } else {
      out.emplace_back(pv.rows(), pv.cols(), 0.0);
    }
  }
  return out;
}

void Tape::backprop_node(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const {
  auto in = [&](int id) -> const Tensor& { return nodes_[static_cast<std::size_t>(id)].value; };
  auto push = [&](int id, const Tensor& t) {
    if (id < 0) return;
    accumulate(grads[static_cast<std::size_t>(id)], t);
  };
  const Tensor& y = n.value;

  switch (n.op) {
    case Op::kConstant:
    case Op::kParameter:
    case Op::kStopGradient:
      return;
    case Op::kAdd:
      push(n.a, reduce_to(g, in(n.a).rows(), in(n.a).cols()));
      push(n.b, reduce_to(g, in(n.b).rows(), in(n.b).cols()));
      return;
    case Op::kSub: {
      push(n.a, reduce_to(g, in(n.a).rows(), in(n.a).cols()));
      Tensor neg = map_values(g, [](double v) { return -v; });
      push(n.b, reduce_to(neg, in(n.b).rows(), in(n.b).cols()));
      return;
    }
    case Op::kMul: {
      const Tensor& a = in(n.a);
      const Tensor& b = in(n.b);
      Tensor ga = broadcast_binary(g, b, "mul", [](double x, double z) { return x * z; });
      Tensor gb = broadcast_binary(g, a, "mul", [](double x, double z) { return x * z; });
      push(n.a, reduce_to(ga, a.rows(), a.cols()));
      push(n.b, reduce_to(gb, b.rows(), b.cols()));
      return;
    }
    case Op::kDiv: {
      const Tensor& a = in(n.a);
      const Tensor& b = in(n.b);
      const double eps = n.k;
      Tensor denom = map_values(b, [eps](double v) { return v + eps; });
      Tensor ga = broadcast_binary(g, denom, "div", [](double x, double d) { return x / d; });
      // d/db [a/(b+eps)] = -y/(b+eps)
      Tensor gy = broadcast_binary(g, y, "div", [](double x, double v) { return -x * v; });
      Tensor gb = broadcast_binary(gy, denom, "div", [](double x, double d) { return x / d; });
      push(n.a, reduce_to(ga, a.rows(), a.cols()));
      push(n.b, reduce_to(gb, b.rows(), b.cols()));
      return;
    }
    case Op::kMatMul:
      push(n.a, matmul_nt(g, in(n.b)));
      push(n.b, matmul_tn(in(n.a), g));
      return;
    case Op::kTranspose:
      push(n.a, transpose_values(g));
      return;
    case Op::kSum:
    case Op::kMean: {
      const Tensor& a = in(n.a);
      double f = 1.0;
      if (n.op == Op::kMean) {
        f = n.axis == Axis::kAll   ? 1.0 / static_cast<double>(a.size())
            : n.axis == Axis::kRows ? 1.0 / static_cast<double>(a.rows())
                                    : 1.0 / static_cast<double>(a.cols());
      }
      Tensor ga(a.rows(), a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) {
          const double gv = n.axis == Axis::kAll   ? g[0]
                            : n.axis == Axis::kRows ? g(0, c)
                                                    : g(r, 0);
          ga(r, c) = gv * f;
        }
      }
      push(n.a, ga);
      return;
    }
    case Op::kSigmoid: {
      Tensor ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i] * (1.0 - y[i]);
      push(n.a, ga);
      return;
    }
    case Op::kTanh: {
      Tensor ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (1.0 - y[i] * y[i]);
      push(n.a, ga);
      return;
    }
    case Op::kRelu: {
      const Tensor& a = in(n.a);
      Tensor ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = a[i] > 0.0 ? g[i] : 0.0;
      push(n.a, ga);
      return;
    }
    case Op::kMaxConst: {
      const Tensor& a = in(n.a);
      Tensor ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = a[i] > n.k ? g[i] : 0.0;
      push(n.a, ga);
      return;
    }
    case Op::kSoftmax: {
      Tensor ga(g.rows(), g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * y(r, c);
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = y(r, c) * (g(r, c) - dot) / n.k;
      }
      push(n.a, ga);
      return;
    }
    case Op::kSquare: {
      const Tensor& a = in(n.a);
      Tensor ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = 2.0 * a[i] * g[i];
      push(n.a, ga);
      return;
    }
    case Op::kSqrt: {
      Tensor ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = y[i] > 0.0 ? 0.5 * g[i] / y[i] : 0.0;
      push(n.a, ga);
      return;
    }
    case Op::kConcat: {
      std::size_t offset = 0;
      for (int id : n.inputs) {
        const Tensor& part = in(id);
        Tensor gp(part.rows(), part.cols());
        for (std::size_t r = 0; r < part.rows(); ++r) {
          for (std::size_t c = 0; c < part.cols(); ++c) {
            gp(r, c) = n.axis == Axis::kRows ? g(offset + r, c) : g(r, offset + c);
          }
        }
        offset += n.axis == Axis::kRows ? part.rows() : part.cols();
        push(id, gp);
      }
      return;
    }
    case Op::kBroadcast: {
      double s = 0.0;
      for (double v : g.data()) s += v;
      push(n.a, Tensor::scalar(s));
      return;
    }
    case Op::kScale:
      push(n.a, map_values(g, [k = n.k](double v) { return v * k; }));
      return;
    case Op::kAddConst:
      push(n.a, g);
      return;
  }
}

// ---------------------------------------------------------------------------
// Ops

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.record(Op::kAdd,
                  broadcast_binary(a.value(), b.value(), "add", [](double x, double y) { return x + y; }),
                  a.id, b.id);
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.record(Op::kSub,
                  broadcast_binary(a.value(), b.value(), "sub", [](double x, double y) { return x - y; }),
                  a.id, b.id);
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.record(Op::kMul,
                  broadcast_binary(a.value(), b.value(), "mul", [](double x, double y) { return x * y; }),
                  a.id, b.id);
}

Var div(Var a, Var b, double eps) {
  Tape& t = same_tape(a, b);
  return t.record(Op::kDiv,
                  broadcast_binary(a.value(), b.value(), "div",
                                   [eps](double x, double y) { return x / (y + eps); }),
                  a.id, b.id, eps);
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + shape_str(av) + " x " + shape_str(bv));
  }
  return t.record(Op::kMatMul, matmul_values(av, bv), a.id, b.id);
}

Var transpose(Var a) { return tape_of(a).record(Op::kTranspose, transpose_values(a.value()), a.id); }

namespace {
Var reduce(Var a, Axis axis, bool average) {
  const Tensor& v = a.value();
  if (v.size() == 0) throw ShapeError("reduction over empty tensor");
  Tensor out;
  switch (axis) {
    case Axis::kAll: {
      double s = 0.0;
      for (double x : v.data()) s += x;
      out = Tensor::scalar(average ? s / static_cast<double>(v.size()) : s);
      break;
    }
    case Axis::kRows: {
      out = Tensor(1, v.cols());
      for (std::size_t r = 0; r < v.rows(); ++r)
        for (std::size_t c = 0; c < v.cols(); ++c) out(0, c) += v(r, c);
      if (average)
        for (auto& x : out.data()) x /= static_cast<double>(v.rows());
      break;
    }
    case Axis::kCols: {
      out = Tensor(v.rows(), 1);
      for (std::size_t r = 0; r < v.rows(); ++r)
        for (std::size_t c = 0; c < v.cols(); ++c) out(r, 0) += v(r, c);
      if (average)
        for (auto& x : out.data()) x /= static_cast<double>(v.cols());
      break;
    }
  }
  return tape_of(a).record(average ? Op::kMean : Op::kSum, std::move(out), a.id, -1, 0.0, axis);
}
}  // namespace

Var sum(Var a, Axis axis) { return reduce(a, axis, false); }
Var mean(Var a, Axis axis) { return reduce(a, axis, true); }

Var sigmoid(Var a) {
  return tape_of(a).record(Op::kSigmoid, map_values(a.value(), [](double x) {
                             if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                             const double e = std::exp(x);
                             return e / (1.0 + e);
                           }),
                           a.id);
}

Var tanh(Var a) {
  return tape_of(a).record(Op::kTanh, map_values(a.value(), [](double x) { return std::tanh(x); }),
                           a.id);
}

Var relu(Var a) {
  return tape_of(a).record(Op::kRelu,
                           map_values(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }), a.id);
}

Var softmax(Var a, double temperature) {
  if (!(temperature > 0.0)) throw Error("softmax temperature must be positive");
  const Tensor& v = a.value();
  Tensor out(v.rows(), v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double mx = v(r, 0) / temperature;
    for (std::size_t c = 1; c < v.cols(); ++c) mx = std::max(mx, v(r, c) / temperature);
    double z = 0.0;
    for (std::size_t c = 0; c < v.cols(); ++c) {
      out(r, c) = std::exp(v(r, c) / temperature - mx);
      z += out(r, c);
    }
    for (std::size_t c = 0; c < v.cols(); ++c) out(r, c) /= z;
  }
  return tape_of(a).record(Op::kSoftmax, std::move(out), a.id, -1, temperature);
}

Var square(Var a) {
  return tape_of(a).record(Op::kSquare, map_values(a.value(), [](double x) { return x * x; }), a.id);
}

Var sqrt(Var a) {
  for (double x : a.value().data()) {
    if (x < 0.0) throw NumericError("sqrt of negative value");
  }
  return tape_of(a).record(Op::kSqrt, map_values(a.value(), [](double x) { return std::sqrt(x); }),
                           a.id);
}

Var concat(std::span<const Var> parts, Axis axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  if (axis == Axis::kAll) throw ShapeError("concat needs kRows or kCols");
  Tape& t = tape_of(parts[0]);
  std::size_t rows = 0, cols = 0;
  for (const Var& p : parts) {
    if (p.tape != &t) throw Error("concat operands live on different tapes");
    const Tensor& v = p.value();
    if (axis == Axis::kRows) {
      if (rows == 0 && cols == 0) cols = v.cols();
      if (v.cols() != cols) throw ShapeError("concat rows: column mismatch");
      rows += v.rows();
    } else {
      if (rows == 0 && cols == 0) rows = v.rows();
      if (v.rows() != rows) throw ShapeError("concat cols: row mismatch");
      cols += v.cols();
    }
  }
  Tensor out(rows, cols);
  std::vector<int> ids;
  ids.reserve(parts.size());
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < v.rows(); ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) {
        if (axis == Axis::kRows)
          out(offset + r, c) = v(r, c);
        else
          out(r, offset + c) = v(r, c);
      }
    offset += axis == Axis::kRows ? v.rows() : v.cols();
    ids.push_back(p.id);
  }
  return t.record_concat(std::move(out), std::move(ids), axis);
}

Var maximum(Var a, double floor) {
  return tape_of(a).record(Op::kMaxConst,
                           map_values(a.value(), [floor](double x) { return x > floor ? x : floor; }),
                           a.id, -1, floor);
}

Var broadcast(Var scalar, std::size_t rows, std::size_t cols) {
  return tape_of(scalar).record(Op::kBroadcast, Tensor(rows, cols, scalar.value().item()), scalar.id);
}

Var scale(Var a, double k) {
  return tape_of(a).record(Op::kScale, map_values(a.value(), [k](double x) { return x * k; }), a.id,
                           -1, k);
}

Var add_scalar(Var a, double k) {
  return tape_of(a).record(Op::kAddConst, map_values(a.value(), [k](double x) { return x + k; }),
                           a.id, -1, k);
}

Var stop_gradient(Var a) { return tape_of(a).record_stop_gradient(a); }

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckResult grad_check(const ScalarFn& f, ParameterSet& params, const GradCheckOptions& options) {
  if (options.eps < 1e-7 || options.eps > 1e-3) {
    throw Error("grad_check eps must lie in [1e-7, 1e-3]");
  }
  const double radius = options.kink_radius < 0.0 ? 100.0 * options.eps : options.kink_radius;

  GradCheckResult result;
  GradientMap analytic;
  std::vector<Tensor> detached;
  {
    Tape tape(params);
    Var loss = f(tape);
    analytic = tape.backward(loss);
    result.non_differentiable = tape.kinks_within(radius) > 0;
    detached = tape.detached_values();
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params.value(p).size(); ++i) coords.emplace_back(p, i);
  if (options.max_coords > 0 && coords.size() > options.max_coords) {
    Rng rng(options.seed);
    rng.shuffle(coords);
    coords.resize(options.max_coords);
  }

  auto eval = [&]() {
    Tape tape(params);
    tape.freeze_detached(detached);
    const double v = f(tape).item();
    if (!std::isfinite(v)) throw NumericError("non-finite value during grad_check");
    return v;
  };

  for (const auto& [p, i] : coords) {
    double& x = params.value(p)[i];
    const double saved = x;
    x = saved + options.eps;
    const double up = eval();
    x = saved - options.eps;
    const double down = eval();
    x = saved;
    const double numeric = (up - down) / (2.0 * options.eps);
    const double a = analytic[p][i];
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (err > result.max_rel_err || result.coords_checked == 0) {
      result.max_rel_err = err;
      result.worst_param = p;
      result.worst_index = i;
    }
    ++result.coords_checked;
  }
  return result;
}

}  // namespace clap::ad
