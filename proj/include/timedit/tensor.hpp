#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace timedit {

#ifdef TIMEDIT_REAL64
using real = double;
inline constexpr const char* kRealName = "f64";
#else
using real = float;
inline constexpr const char* kRealName = "f32";
#endif

// Raised when an operation produces NaN/Inf.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& msg) : std::runtime_error(msg) {}
};

class GradTape;

// Gradient storage element type (matches the tensor storage type).
using grad_real = real;

namespace detail {

struct TensorImpl {
  std::vector<int> shape;
  std::vector<real> data;
  bool requires_grad = false;
  // Inputs that require grad; traversed by backward().
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Pushes this node's upstream gradient to its parents' buffers.
  std::function<void(const std::vector<grad_real>&, GradTape&)> backprop;
};

}  // namespace detail

// Dense row-major tensor with reverse-mode gradients. Handles share the
// underlying node; values are immutable once the node has been consumed by
// an op (only leaves may be mutated, via mutable_data).
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, std::vector<real> data, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->data.size(); }
  // Rank-1 tensors are treated as a single row.
  int rows() const;
  int cols() const;
  bool requires_grad() const { return impl_->requires_grad; }
  const std::vector<real>& data() const { return impl_->data; }
  real at(std::size_t i) const { return impl_->data[i]; }
  double value() const;  // scalar tensors only

  // Leaf tensors only (parameters, inputs). Throws on graph nodes.
  std::vector<real>& mutable_data();

  const detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// While alive, ops do not record gradient graphs (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Elementwise; shapes must match.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

// Broadcast a length-d (or 1xd) vector over the rows of an n x d matrix.
Tensor add_rowvec(const Tensor& m, const Tensor& v);

Tensor matmul(const Tensor& a, const Tensor& b);
// Fused x * w + row-broadcast bias.
Tensor linear_bias(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor transpose(const Tensor& a);

// Fused h * (1 + scale) + shift, all n x d.
Tensor affine_modulate(const Tensor& h, const Tensor& scale, const Tensor& shift);

// Normalizes each row to mean 0 / variance 1 (population variance, eps-regularized).
Tensor layer_norm(const Tensor& a, double eps);

Tensor gelu(const Tensor& a);
Tensor tanh_act(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs_val(const Tensor& a);

// Row-wise softmax. `allowed_cols`, when given, marks admissible columns;
// excluded columns get weight exactly 0 and do not enter the max/sum.
// Throws if a row has no admissible column.
Tensor softmax_rows(const Tensor& scores, const std::vector<std::uint8_t>* allowed_cols = nullptr);

// Scaled dot-product attention: softmax(q kT / sqrt(d)) v. `key_allowed`
// marks admissible key positions (length = rows of k).
Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         const std::vector<std::uint8_t>* key_allowed = nullptr);

// Same data, new shape (element count must match).
Tensor reshape(const Tensor& a, std::vector<int> new_shape);

Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
// out.row(i) = a.row(idx[i]); duplicate indices accumulate on backward.
Tensor gather_rows(const Tensor& a, std::vector<int> idx);
// Cyclic shift of columns: out[., j] = a[., (j - shift) mod cols].
Tensor roll_cols(const Tensor& a, int shift);

Tensor sum(const Tensor& a);  // scalar

// Mean binary cross-entropy over logits; targets in {0,1}.
Tensor bce_with_logits(const Tensor& logits, const std::vector<real>& targets);

// Gradients for one backward pass, keyed by tensor node, accumulated in
// deterministic index order.
class GradTape {
 public:
  const std::vector<grad_real>& grad(const Tensor& t) const;
  const std::vector<grad_real>* find_grad(const Tensor& t) const;

  // Internal: buffer for accumulating into `node` (created zeroed).
  std::vector<grad_real>& buf(const detail::TensorImpl* node, std::size_t n);

 private:
  friend GradTape backward(const Tensor& loss);
  std::unordered_map<const detail::TensorImpl*, std::vector<grad_real>> grads_;
};

// Reverse-mode sweep from a scalar loss. Throws std::invalid_argument if the
// loss is non-scalar or detached from every differentiable input.
GradTape backward(const Tensor& loss);

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Central-difference check of d f / d x. Relative error is measured against
// the max-magnitude of the gradient field (with a small floor) so that
// near-zero coordinates do not dominate the report.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step, double tol);

}  // namespace timedit
