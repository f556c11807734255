#pragma once

// Dense double-precision vectors and matrices, a fully connected network with
// hand-derived backpropagation, and heavy-ball SGD with linear warmup.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "cobe/error.hpp"
#include "cobe/rng.hpp"

namespace cobe {

class Vec64 {
 public:
  Vec64() = default;
  explicit Vec64(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
  Vec64(std::initializer_list<double> init) : values_(init) {}
  explicit Vec64(std::vector<double> values) : values_(std::move(values)) {}
  explicit Vec64(std::span<const double> values) : values_(values.begin(), values.end()) {}

  std::size_t dim() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
  }

  bool operator==(const Vec64&) const = default;

 private:
  std::vector<double> values_;
};

/// Row-major matrix.
class Mat64 {
 public:
  Mat64() = default;
  Mat64(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Mat64(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_)
      throw Error(Errc::shape, "core_math",
                  "matrix " + std::to_string(rows_) + "x" + std::to_string(cols_) + " given " +
                      std::to_string(values_.size()) + " values");
  }
  /// Stacks equally sized vectors as rows.
  static Mat64 from_rows(std::span<const Vec64> rows, std::size_t cols) {
    Mat64 m(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].dim() != cols)
        throw Error(Errc::shape, "core_math", "row " + std::to_string(r) + " has dim " +
                                                  std::to_string(rows[r].dim()) + ", expected " +
                                                  std::to_string(cols));
      std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
  }

  bool operator==(const Mat64&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double dot(const Vec64& a, const Vec64& b) {
  if (a.dim() != b.dim())
    throw Error(Errc::shape, "core_math",
                "dot of dims " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
  return dot(a.span(), b.span());
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

namespace detail {

inline void check_same_dim(const Vec64& a, const Vec64& b, const char* op) {
  if (a.dim() != b.dim())
    throw Error(Errc::shape, "core_math",
                std::string(op) + " of dims " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
}

}  // namespace detail

inline Vec64 operator+(const Vec64& a, const Vec64& b) {
  detail::check_same_dim(a, b, "sum");
  Vec64 out = a;
  axpy(1.0, b.span(), out.span());
  return out;
}

inline Vec64 operator-(const Vec64& a, const Vec64& b) {
  detail::check_same_dim(a, b, "difference");
  Vec64 out = a;
  axpy(-1.0, b.span(), out.span());
  return out;
}

inline Vec64 operator*(double s, const Vec64& a) {
  Vec64 out = a;
  for (auto& x : out) x *= s;
  return out;
}

/// m * x
inline Vec64 matvec(const Mat64& m, std::span<const double> x) {
  if (x.size() != m.cols())
    throw Error(Errc::shape, "core_math",
                "matvec with " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                    " matrix and dim " + std::to_string(x.size()) + " vector");
  Vec64 out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), x);
  return out;
}

// ---------------------------------------------------------------------------
// Multilayer perceptron

enum class Activation { relu, identity };

inline std::string activation_name(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw Error(Errc::invalid_config, "core_math", "unknown activation '" + s + "'");
}

/// Layer k maps layer_dims[k] -> layer_dims[k+1]; the activation follows
/// every layer but the last, which stays linear.
struct MlpParams {
  std::vector<std::size_t> layer_dims;
  std::vector<Mat64> weights;
  std::vector<Vec64> biases;
  Activation activation = Activation::relu;

  std::size_t num_layers() const noexcept { return weights.size(); }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }

  bool operator==(const MlpParams&) const = default;
};

/// Parameter-shaped buffer used for gradients and momentum.
struct MlpGrads {
  std::vector<Mat64> weights;
  std::vector<Vec64> biases;

  static MlpGrads zeros_like(const MlpParams& p) {
    MlpGrads g;
    for (std::size_t k = 0; k < p.num_layers(); ++k) {
      g.weights.emplace_back(p.weights[k].rows(), p.weights[k].cols());
      g.biases.emplace_back(p.biases[k].dim());
    }
    return g;
  }

  void add(const MlpGrads& other) {
    for (std::size_t k = 0; k < weights.size(); ++k) {
      axpy(1.0, other.weights[k].span(), weights[k].span());
      axpy(1.0, other.biases[k].span(), biases[k].span());
    }
  }

  bool operator==(const MlpGrads&) const = default;
};

inline void check_same_shape(const MlpParams& p, const MlpGrads& g, const char* what) {
  bool ok = g.weights.size() == p.num_layers() && g.biases.size() == p.num_layers();
  for (std::size_t k = 0; ok && k < p.num_layers(); ++k) {
    ok = g.weights[k].rows() == p.weights[k].rows() && g.weights[k].cols() == p.weights[k].cols() &&
         g.biases[k].dim() == p.biases[k].dim();
  }
  if (!ok) throw Error(Errc::shape, "core_math", std::string(what) + " does not mirror parameter shapes");
}

/// Checks the structural invariants of a parameter set.
inline void validate(const MlpParams& p) {
  if (p.num_layers() == 0 || p.layer_dims.size() != p.num_layers() + 1 ||
      p.biases.size() != p.num_layers())
    throw Error(Errc::shape, "core_math", "layer count does not match layer_dims");
  for (std::size_t k = 0; k < p.num_layers(); ++k) {
    if (p.weights[k].rows() != p.layer_dims[k + 1] || p.weights[k].cols() != p.layer_dims[k] ||
        p.biases[k].dim() != p.layer_dims[k + 1])
      throw Error(Errc::shape, "core_math", "layer " + std::to_string(k) + " shape mismatch");
  }
}

/// Glorot-uniform weights, zero biases.
inline MlpParams init_params(std::span<const std::size_t> layer_dims, std::uint64_t seed,
                             Activation activation = Activation::relu) {
  if (layer_dims.size() < 2)
    throw Error(Errc::invalid_config, "core_math", "an MLP needs at least two layer dims");
  for (auto d : layer_dims)
    if (d == 0) throw Error(Errc::invalid_config, "core_math", "layer dims must be positive");

  MlpParams p;
  p.layer_dims.assign(layer_dims.begin(), layer_dims.end());
  p.activation = activation;
  Rng rng(seed);
  for (std::size_t k = 0; k + 1 < layer_dims.size(); ++k) {
    const std::size_t fan_in = layer_dims[k];
    const std::size_t fan_out = layer_dims[k + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Mat64 w(fan_out, fan_in);
    for (auto& x : w.span()) x = rng.uniform(-a, a);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(fan_out);
  }
  return p;
}

inline MlpParams init_params(std::initializer_list<std::size_t> layer_dims, std::uint64_t seed,
                             Activation activation = Activation::relu) {
  return init_params(std::span<const std::size_t>(layer_dims.begin(), layer_dims.size()), seed,
                     activation);
}

/// inputs[k] is the input to layer k (inputs[0] == x); pre[k] is layer k's
/// affine output before the activation.
struct MlpCache {
  std::vector<Vec64> inputs;
  std::vector<Vec64> pre;
};

struct MlpForward {
  Vec64 output;
  MlpCache cache;
};

inline void check_input(const MlpParams& p, std::size_t dim) {
  if (p.num_layers() == 0) throw Error(Errc::shape, "core_math", "MLP has no layers");
  if (dim != p.input_dim())
    throw Error(Errc::shape, "core_math",
                "input dim " + std::to_string(dim) + ", network expects " + std::to_string(p.input_dim()));
}

namespace detail {
inline Vec64 affine(const Mat64& w, const Vec64& b, std::span<const double> x) {
  Vec64 z(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) z[r] = dot(w.row(r), x) + b[r];
  return z;
}

inline void activate(Activation a, Vec64& z) {
  if (a == Activation::relu)
    for (auto& v : z) v = v > 0.0 ? v : 0.0;
}
}  // namespace detail

inline MlpForward mlp_forward(const MlpParams& p, const Vec64& x) {
  check_input(p, x.dim());
  MlpForward f;
  f.cache.inputs.reserve(p.num_layers());
  f.cache.pre.reserve(p.num_layers());
  Vec64 a = x;
  for (std::size_t k = 0; k < p.num_layers(); ++k) {
    Vec64 z = detail::affine(p.weights[k], p.biases[k], a.span());
    f.cache.inputs.push_back(std::move(a));
    a = z;
    if (k + 1 < p.num_layers()) detail::activate(p.activation, a);
    f.cache.pre.push_back(std::move(z));
  }
  f.output = std::move(a);
  return f;
}

/// Forward pass without keeping the cache.
inline Vec64 mlp_apply(const MlpParams& p, const Vec64& x) {
  check_input(p, x.dim());
  Vec64 a = x;
  for (std::size_t k = 0; k < p.num_layers(); ++k) {
    a = detail::affine(p.weights[k], p.biases[k], a.span());
    if (k + 1 < p.num_layers()) detail::activate(p.activation, a);
  }
  return a;
}

/// Adds d(loss)/d(params) into `accum` and returns d(loss)/d(input).
inline Vec64 mlp_backward_accumulate(const MlpParams& p, const MlpCache& cache,
                                     const Vec64& grad_output, MlpGrads& accum) {
  check_same_shape(p, accum, "gradient buffer");
  if (cache.inputs.size() != p.num_layers() || cache.pre.size() != p.num_layers())
    throw Error(Errc::shape, "core_math", "cache does not match the network depth");
  if (grad_output.dim() != p.output_dim())
    throw Error(Errc::shape, "core_math",
                "grad_output dim " + std::to_string(grad_output.dim()) + ", network outputs " +
                    std::to_string(p.output_dim()));

  Vec64 delta = grad_output;
  for (std::size_t k = p.num_layers(); k-- > 0;) {
    if (k + 1 < p.num_layers() && p.activation == Activation::relu) {
      const Vec64& z = cache.pre[k];
      for (std::size_t i = 0; i < delta.dim(); ++i)
        if (!(z[i] > 0.0)) delta[i] = 0.0;
    }
    const Vec64& a = cache.inputs[k];
    const Mat64& w = p.weights[k];
    Mat64& gw = accum.weights[k];
    for (std::size_t r = 0; r < w.rows(); ++r) {
      axpy(delta[r], a.span(), gw.row(r));
      accum.biases[k][r] += delta[r];
    }
    Vec64 next(w.cols());
    for (std::size_t r = 0; r < w.rows(); ++r) axpy(delta[r], w.row(r), next.span());
    delta = std::move(next);
  }
  return delta;
}

struct MlpBackward {
  MlpGrads grads;
  Vec64 grad_input;
};

inline MlpBackward mlp_backward(const MlpParams& p, const MlpCache& cache, const Vec64& grad_output) {
  MlpBackward out{MlpGrads::zeros_like(p), {}};
  out.grad_input = mlp_backward_accumulate(p, cache, grad_output, out.grads);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

struct LrSchedule {
  double base_lr = 0.001;
  std::int64_t warmup_steps = 500;
};

/// Linear ramp from 0 at step 0 up to base_lr at warmup_steps, flat after.
inline double lr_at_step(const LrSchedule& sched, std::int64_t step) {
  if (sched.warmup_steps <= 0 || step >= sched.warmup_steps) return sched.base_lr;
  return sched.base_lr * static_cast<double>(step) / static_cast<double>(sched.warmup_steps);
}

struct OptimizerState {
  MlpGrads velocity;
  std::int64_t step_count = 0;

  static OptimizerState zeros_like(const MlpParams& p) { return {MlpGrads::zeros_like(p), 0}; }

  bool operator==(const OptimizerState&) const = default;
};

/// v <- momentum * v - lr * grad; theta <- theta + v. The learning rate is
/// taken at step_count + 1.
inline void sgd_momentum_step(MlpParams& params, const MlpGrads& grads, OptimizerState& state,
                              const LrSchedule& sched, double momentum) {
  check_same_shape(params, grads, "gradient");
  check_same_shape(params, state.velocity, "velocity");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw Error(Errc::invalid_config, "core_math", "momentum must lie in [0, 1)");

  const double lr = lr_at_step(sched, state.step_count + 1);
  auto update = [&](std::span<double> theta, std::span<double> v, std::span<const double> g) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = momentum * v[i] - lr * g[i];
      theta[i] += v[i];
    }
  };
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    update(params.weights[k].span(), state.velocity.weights[k].span(), grads.weights[k].span());
    update(params.biases[k].span(), state.velocity.biases[k].span(), grads.biases[k].span());
  }
  ++state.step_count;
}

}  // namespace cobe
