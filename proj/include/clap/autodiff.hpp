#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clap/tensor.hpp"

namespace clap::ad {

/// Named trainable tensors. A tape binds to one set and reports gradients
/// aligned with its indices.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor init);

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor& value(std::size_t i) { return values_.at(i); }
  const Tensor& value(std::size_t i) const { return values_.at(i); }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t total_elements() const noexcept;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// One gradient tensor per parameter, same order as the ParameterSet.
using GradientMap = std::vector<Tensor>;

enum class Op : std::uint8_t {
  kConstant,
  kParameter,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatMul,
  kTranspose,
  kSum,
  kMean,
  kSigmoid,
  kTanh,
  kRelu,
  kSoftmax,
  kSquare,
  kSqrt,
  kConcat,
  kMaxConst,
  kBroadcast,
  kScale,
  kAddConst,
  kStopGradient,
};

enum class Axis : std::uint8_t {
  kRows,  // reduce/concatenate along rows: r×c -> 1×c
  kCols,  // along columns: r×c -> r×1
  kAll,
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until the tape is cleared.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  double item() const { return value().item(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  Tape() = default;
  explicit Tape(const ParameterSet& params) { bind(params); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Attach a parameter set; param() leaves refer to it.
  void bind(const ParameterSet& params);

  Var constant(Tensor value);
  Var constant(double v) { return constant(Tensor::scalar(v)); }
  /// Leaf for parameter `index`; repeated calls return the same node.
  Var param(std::size_t index);

  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  void clear();

  /// Gradient of a 1×1 loss with respect to every bound parameter.
  /// Parameters unreachable from the loss get exact zeros. Calling this
  /// twice on the same tape returns identical results.
  GradientMap backward(Var loss) const;

  /// Number of hinge/relu nodes whose input lies within `radius` of the kink.
  std::size_t kinks_within(double radius) const;

  /// Forward values of every stop_gradient node, in recording order.
  std::vector<Tensor> detached_values() const;
  /// Make the k-th stop_gradient recorded from now on output `values[k]`
  /// instead of its input. Used to difference the objective with detached
  /// quantities held fixed, which is what backward() differentiates.
  void freeze_detached(std::vector<Tensor> values);

  // Used by the op functions below.
  Var record(Op op, Tensor value, int a, int b = -1, double k = 0.0, Axis axis = Axis::kAll);
  Var record_concat(Tensor value, std::vector<int> inputs, Axis axis);
  Var record_stop_gradient(Var a);

 private:
  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    double k = 0.0;  // eps, temperature, constant, ...
    Axis axis = Axis::kAll;
    std::vector<int> inputs;  // concat only
    Tensor value;
    std::size_t param_index = 0;
  };

  void backprop_node(const Node& node, const Tensor& g, std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
  const ParameterSet* params_ = nullptr;
  std::vector<Tensor> frozen_;
  std::size_t detached_count_ = 0;
  std::vector<int> param_leaf_;
};

// Elementwise binary ops broadcast any extent-1 axis against the other operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a / (b + eps): additive stabilizer, not a clamp.
Var div(Var a, Var b, double eps = 0.0);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var sum(Var a, Axis axis = Axis::kAll);
Var mean(Var a, Axis axis = Axis::kAll);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
/// Row-wise softmax of a / temperature.
Var softmax(Var a, double temperature = 1.0);
Var square(Var a);
/// sqrt; the derivative at exactly 0 is taken as 0.
Var sqrt(Var a);
Var concat(std::span<const Var> parts, Axis axis);
/// max(a, floor) elementwise; subgradient 0 at the kink.
Var maximum(Var a, double floor);
/// Expand a 1×1 tensor to rows×cols.
Var broadcast(Var scalar, std::size_t rows, std::size_t cols);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
/// Same forward value; contributes no gradient to anything upstream.
Var stop_gradient(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
  /// The base point sits within the kink radius of a hinge; the error is
  /// not meaningful there and callers should skip the instance.
  bool non_differentiable = false;
};

using ScalarFn = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  /// Inputs of max/relu within this distance of the kink flag the point;
  /// a negative value means 100 * eps.
  double kink_radius = -1.0;
  /// Check at most this many coordinates (sampled with `seed`); 0 = all.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

/// Compare the tape gradient of `f` with central differences over `params`.
/// Error per coordinate: |analytic - numeric| / max(1, |analytic|, |numeric|).
/// Perturbed evaluations keep stop_gradient outputs at their base-point
/// values, so the difference quotient targets the same surrogate that
/// backward() differentiates.
GradCheckResult grad_check(const ScalarFn& f, ParameterSet& params,
                           const GradCheckOptions& options = {});

}  // namespace clap::ad
