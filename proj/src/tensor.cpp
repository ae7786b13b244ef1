#include "timedit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

namespace timedit {

namespace {

thread_local bool g_grad_enabled = true;

std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

void check_finite(const std::vector<real>& v, const char* op) {
  // a double sum of float-range values overflows only if some element is
  // already non-finite, so one reduction replaces a per-element branch
  double probe = 0.0;
  const real* p = v.data();
  for (std::size_t i = 0; i < v.size(); ++i) probe += static_cast<double>(p[i]);
  if (!std::isfinite(probe)) {
    throw NonFiniteError(std::string("non-finite value produced by op '") + op + "'");
  }
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

using BackFn = std::function<void(const std::vector<grad_real>&, GradTape&)>;

Tensor make_node(std::vector<int> shape, std::vector<real> data,
                 const std::vector<Tensor>& inputs, const char* op,
                 const std::function<BackFn()>& make_back) {
  check_finite(data, op);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool need_grad = false;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs) need_grad = need_grad || t.requires_grad();
  }
  impl->requires_grad = need_grad;
  if (need_grad) {
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) impl->parents.push_back(t.impl_ptr());
    }
    impl->backprop = make_back();
  }
  return Tensor(std::move(impl));
}

// Accumulate g into node's tape buffer if it participates in the graph.
void accum(GradTape& tape, const Tensor& t, const std::vector<grad_real>& g) {
  if (!t.requires_grad()) return;
  auto& buf = tape.buf(t.impl(), t.size());
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, std::vector<real> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw std::invalid_argument("Tensor: shape does not match data length");
  }
  check_finite(data, "tensor-init");
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  std::vector<real> d(numel(shape), real(0));
  return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::scalar(double v) {
  return Tensor({1}, {static_cast<real>(v)}, false);
}

int Tensor::rows() const {
  const auto& s = impl_->shape;
  if (s.size() == 2) return s[0];
  if (s.size() == 1) return 1;
  throw std::invalid_argument("Tensor::rows: rank-1 or rank-2 expected");
}

int Tensor::cols() const {
  const auto& s = impl_->shape;
  if (s.size() == 2) return s[1];
  if (s.size() == 1) return s[0];
  throw std::invalid_argument("Tensor::cols: rank-1 or rank-2 expected");
}

double Tensor::value() const {
  if (size() != 1) throw std::invalid_argument("Tensor::value: tensor is not scalar");
  return static_cast<double>(impl_->data[0]);
}

std::vector<real>& Tensor::mutable_data() {
  if (impl_->backprop) {
    throw std::invalid_argument("Tensor::mutable_data: only leaf tensors may be mutated");
  }
  return impl_->data;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch");
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_node(a.shape(), std::move(out), {a, b}, "add", [&] {
    Tensor pa = a, pb = b;
    return [pa, pb](const std::vector<grad_real>& g, GradTape& tape) {
      accum(tape, pa, g);
      accum(tape, pb, g);
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch");
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_node(a.shape(), std::move(out), {a, b}, "sub", [&] {
    Tensor pa = a, pb = b;
    return [pa, pb](const std::vector<grad_real>& g, GradTape& tape) {
      accum(tape, pa, g);
      if (pb.requires_grad()) {
        std::vector<grad_real> ng(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) ng[i] = -g[i];
        accum(tape, pb, ng);
      }
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_node(a.shape(), std::move(out), {a, b}, "mul", [&] {
    Tensor pa = a, pb = b;
    return [pa, pb](const std::vector<grad_real>& g, GradTape& tape) {
      if (pa.requires_grad()) {
        std::vector<grad_real> ga(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * pb.at(i);
        accum(tape, pa, ga);
      }
      if (pb.requires_grad()) {
        std::vector<grad_real> gb(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * pa.at(i);
        accum(tape, pb, gb);
      }
    };
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<real>(a.at(i) + c);
  return make_node(a.shape(), std::move(out), {a}, "add_scalar", [&] {
    Tensor pa = a;
    return [pa](const std::vector<grad_real>& g, GradTape& tape) { accum(tape, pa, g); };
  });
}

Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<real>(a.at(i) * c);
  return make_node(a.shape(), std::move(out), {a}, "mul_scalar", [&] {
    Tensor pa = a;
    double cc = c;
    return [pa, cc](const std::vector<grad_real>& g, GradTape& tape) {
      if (!pa.requires_grad()) return;
      std::vector<grad_real> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * cc;
      accum(tape, pa, ga);
    };
  });
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  int n = m.rows(), d = m.cols();
  require(v.size() == static_cast<std::size_t>(d), "add_rowvec: vector length mismatch");
  std::vector<real> out(m.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      out[static_cast<std::size_t>(i) * d + j] =
          m.at(static_cast<std::size_t>(i) * d + j) + v.at(j);
    }
  }
  return make_node(m.shape(), std::move(out), {m, v}, "add_rowvec", [&] {
    Tensor pm = m, pv = v;
    int nn = n, dd = d;
    return [pm, pv, nn, dd](const std::vector<grad_real>& g, GradTape& tape) {
      accum(tape, pm, g);
      if (pv.requires_grad()) {
        std::vector<grad_real> gv(dd, 0.0);
        for (int i = 0; i < nn; ++i) {
          for (int j = 0; j < dd; ++j) gv[j] += g[static_cast<std::size_t>(i) * dd + j];
        }
        accum(tape, pv, gv);
      }
    };
  });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul: rank-2 tensors expected");
  int m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  require(k == k2, "matmul: inner dimensions disagree");
  std::vector<real> out(static_cast<std::size_t>(m) * n);
  std::vector<real> acc(n);
  const real* pa = a.data().data();
  const real* pb = b.data().data();
  for (int i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), real(0));
    real* __restrict pacc = acc.data();
    for (int kk = 0; kk < k; ++kk) {
      real aik = pa[static_cast<std::size_t>(i) * k + kk];
      const real* __restrict brow = pb + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) pacc[j] += aik * brow[j];
    }
    real* orow = out.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = pacc[j];
  }
  return make_node({m, n}, std::move(out), {a, b}, "matmul", [&] {
    Tensor pa_t = a, pb_t = b;
    int mm = m, kk_ = k, nn = n;
    return [pa_t, pb_t, mm, kk_, nn](const std::vector<grad_real>& g, GradTape& tape) {
      if (pa_t.requires_grad()) {
        // dA = G * B^T in saxpy form over a transposed copy so the inner
        // loop is contiguous and free of reduction dependencies
        const real* b_ = pb_t.data().data();
        std::vector<real> bt(static_cast<std::size_t>(nn) * kk_);
        for (int kx = 0; kx < kk_; ++kx) {
          for (int j = 0; j < nn; ++j) {
            bt[static_cast<std::size_t>(j) * kk_ + kx] = b_[static_cast<std::size_t>(kx) * nn + j];
          }
        }
        std::vector<grad_real> ga(static_cast<std::size_t>(mm) * kk_, grad_real(0));
        for (int i = 0; i < mm; ++i) {
          grad_real* __restrict row = ga.data() + static_cast<std::size_t>(i) * kk_;
          const grad_real* grow = g.data() + static_cast<std::size_t>(i) * nn;
          for (int j = 0; j < nn; ++j) {
            grad_real gij = grow[j];
            const real* __restrict btrow = bt.data() + static_cast<std::size_t>(j) * kk_;
            for (int kx = 0; kx < kk_; ++kx) row[kx] += gij * btrow[kx];
          }
        }
        accum(tape, pa_t, ga);
      }
      if (pb_t.requires_grad()) {
        // dB = A^T * G
        std::vector<grad_real> gb(static_cast<std::size_t>(kk_) * nn, grad_real(0));
        const real* a_ = pa_t.data().data();
        for (int i = 0; i < mm; ++i) {
          const grad_real* __restrict grow = g.data() + static_cast<std::size_t>(i) * nn;
          for (int kx = 0; kx < kk_; ++kx) {
            grad_real aik = a_[static_cast<std::size_t>(i) * kk_ + kx];
            grad_real* __restrict gbrow = gb.data() + static_cast<std::size_t>(kx) * nn;
            for (int j = 0; j < nn; ++j) gbrow[j] += aik * grow[j];
          }
        }
        accum(tape, pb_t, gb);
      }
    };
  });
}

Tensor linear_bias(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.shape().size() == 2 && w.shape().size() == 2, "linear_bias: rank-2 expected");
  int m = x.rows(), k = x.cols(), n = w.cols();
  require(w.rows() == k, "linear_bias: inner dimensions disagree");
  require(b.size() == static_cast<std::size_t>(n), "linear_bias: bias length mismatch");
  std::vector<real> out(static_cast<std::size_t>(m) * n);
  std::vector<real> acc(n);
  const real* px = x.data().data();
  const real* pw = w.data().data();
  const real* pb = b.data().data();
  for (int i = 0; i < m; ++i) {
    std::copy(pb, pb + n, acc.begin());
    real* __restrict pacc = acc.data();
    for (int kk = 0; kk < k; ++kk) {
      real xik = px[static_cast<std::size_t>(i) * k + kk];
      const real* __restrict wrow = pw + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) pacc[j] += xik * wrow[j];
    }
    std::copy(acc.begin(), acc.end(), out.begin() + static_cast<std::size_t>(i) * n);
  }
  return make_node({m, n}, std::move(out), {x, w, b}, "linear_bias", [&] {
    Tensor px_t = x, pw_t = w, pb_t = b;
    int mm = m, kk_ = k, nn = n;
    return [px_t, pw_t, pb_t, mm, kk_, nn](const std::vector<grad_real>& g, GradTape& tape) {
      if (px_t.requires_grad()) {
        const real* w_ = pw_t.data().data();
        std::vector<real> wt(static_cast<std::size_t>(nn) * kk_);
        for (int kx = 0; kx < kk_; ++kx) {
          for (int j = 0; j < nn; ++j) {
            wt[static_cast<std::size_t>(j) * kk_ + kx] = w_[static_cast<std::size_t>(kx) * nn + j];
          }
        }
        std::vector<grad_real> gx(static_cast<std::size_t>(mm) * kk_, grad_real(0));
        for (int i = 0; i < mm; ++i) {
          grad_real* __restrict row = gx.data() + static_cast<std::size_t>(i) * kk_;
          const grad_real* grow = g.data() + static_cast<std::size_t>(i) * nn;
          for (int j = 0; j < nn; ++j) {
            grad_real gij = grow[j];
            const real* __restrict wtrow = wt.data() + static_cast<std::size_t>(j) * kk_;
            for (int kx = 0; kx < kk_; ++kx) row[kx] += gij * wtrow[kx];
          }
        }
        accum(tape, px_t, gx);
      }
      if (pw_t.requires_grad()) {
        std::vector<grad_real> gw(static_cast<std::size_t>(kk_) * nn, grad_real(0));
        const real* x_ = px_t.data().data();
        for (int i = 0; i < mm; ++i) {
          const grad_real* __restrict grow = g.data() + static_cast<std::size_t>(i) * nn;
          for (int kx = 0; kx < kk_; ++kx) {
            grad_real xik = x_[static_cast<std::size_t>(i) * kk_ + kx];
            grad_real* __restrict gwrow = gw.data() + static_cast<std::size_t>(kx) * nn;
            for (int j = 0; j < nn; ++j) gwrow[j] += xik * grow[j];
          }
        }
        accum(tape, pw_t, gw);
      }
      if (pb_t.requires_grad()) {
        std::vector<grad_real> gb(nn, grad_real(0));
        for (int i = 0; i < mm; ++i) {
          const grad_real* grow = g.data() + static_cast<std::size_t>(i) * nn;
          for (int j = 0; j < nn; ++j) gb[j] += grow[j];
        }
        accum(tape, pb_t, gb);
      }
    };
  });
}

Tensor affine_modulate(const Tensor& h, const Tensor& scale, const Tensor& shift) {
  require(h.shape() == scale.shape() && h.shape() == shift.shape(),
          "affine_modulate: shape mismatch");
  std::vector<real> out(h.size());
  const real* ph = h.data().data();
  const real* ps = scale.data().data();
  const real* pf = shift.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = ph[i] * (real(1) + ps[i]) + pf[i];
  }
  return make_node(h.shape(), std::move(out), {h, scale, shift}, "affine_modulate", [&] {
    Tensor ph_t = h, ps_t = scale, pf_t = shift;
    return [ph_t, ps_t, pf_t](const std::vector<grad_real>& g, GradTape& tape) {
      if (ph_t.requires_grad()) {
        std::vector<grad_real> gh(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
          gh[i] = g[i] * (grad_real(1) + ps_t.at(i));
        }
        accum(tape, ph_t, gh);
      }
      if (ps_t.requires_grad()) {
        std::vector<grad_real> gs(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gs[i] = g[i] * ph_t.at(i);
        accum(tape, ps_t, gs);
      }
      accum(tape, pf_t, g);
    };
  });
}

Tensor transpose(const Tensor& a) {
  require(a.shape().size() == 2, "transpose: rank-2 tensor expected");
  int m = a.rows(), n = a.cols();
  std::vector<real> out(a.size());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(j) * m + i] = a.at(static_cast<std::size_t>(i) * n + j);
    }
  }
  return make_node({n, m}, std::move(out), {a}, "transpose", [&] {
    Tensor pa = a;
    int mm = m, nn = n;
    return [pa, mm, nn](const std::vector<grad_real>& g, GradTape& tape) {
      if (!pa.requires_grad()) return;
      std::vector<grad_real> ga(static_cast<std::size_t>(mm) * nn);
      for (int j = 0; j < nn; ++j) {
        for (int i = 0; i < mm; ++i) {
          ga[static_cast<std::size_t>(i) * nn + j] = g[static_cast<std::size_t>(j) * mm + i];
        }
      }
      accum(tape, pa, ga);
    };
  });
}

// ---------------------------------------------------------------------------
// normalization / activations
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& a, double eps) {
  require(eps > 0.0, "layer_norm: eps must be positive");
  int n = a.rows(), d = a.cols();
  require(d >= 1, "layer_norm: empty rows");
  std::vector<real> out(a.size());
  std::vector<double> inv_sd(n);
  for (int i = 0; i < n; ++i) {
    const real* row = a.data().data() + static_cast<std::size_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += static_cast<double>(row[j]);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = static_cast<double>(row[j]) - mean;
      var += c * c;
    }
    var /= d;
    double s = 1.0 / std::sqrt(var + eps);
    inv_sd[i] = s;
    real* orow = out.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      orow[j] = static_cast<real>((static_cast<double>(row[j]) - mean) * s);
    }
  }
  return make_node(a.shape(), std::move(out), {a}, "layer_norm", [&] {
    Tensor pa = a;
    // y and inv_sd are recomputable from pa, but capturing inv_sd avoids the
    // second sqrt pass; y is recomputed from pa on the fly.
    std::vector<double> sd = inv_sd;
    int nn = n, dd = d;
    return [pa, sd, nn, dd](const std::vector<grad_real>& g, GradTape& tape) {
      if (!pa.requires_grad()) return;
      std::vector<grad_real> ga(pa.size());
      for (int i = 0; i < nn; ++i) {
        const real* row = pa.data().data() + static_cast<std::size_t>(i) * dd;
        const grad_real* grow = g.data() + static_cast<std::size_t>(i) * dd;
        double mean = 0.0;
        for (int j = 0; j < dd; ++j) mean += static_cast<double>(row[j]);
        mean /= dd;
        double s = sd[i];
        double gmean = 0.0, gymean = 0.0;
        for (int j = 0; j < dd; ++j) {
          double y = (static_cast<double>(row[j]) - mean) * s;
          gmean += grow[j];
          gymean += grow[j] * y;
        }
        gmean /= dd;
        gymean /= dd;
        grad_real* garow = ga.data() + static_cast<std::size_t>(i) * dd;
        for (int j = 0; j < dd; ++j) {
          double y = (static_cast<double>(row[j]) - mean) * s;
          garow[j] = static_cast<grad_real>(s * (grow[j] - gmean - y * gymean));
        }
      }
      accum(tape, pa, ga);
    };
  });
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tensor gelu(const Tensor& a) {
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = static_cast<double>(a.at(i));
    out[i] = static_cast<real>(x * 0.5 * (1.0 + std::erf(x * kInvSqrt2)));
  }
  return make_node(a.shape(), std::move(out), {a}, "gelu", [&] {
    Tensor pa = a;
    return [pa](const std::vector<grad_real>& g, GradTape& tape) {
      if (!pa.requires_grad()) return;
      std::vector<grad_real> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        double x = static_cast<double>(pa.at(i));
        double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        ga[i] = g[i] * (phi + x * pdf);
      }
      accum(tape, pa, ga);
    };
  });
}

Tensor tanh_act(const Tensor& a) {
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<real>(std::tanh(static_cast<double>(a.at(i))));
  }
  return make_node(a.shape(), std::move(out), {a}, "tanh", [&] {
    Tensor pa = a;
    return [pa](const std::vector<grad_real>& g, GradTape& tape) {
      if (!pa.requires_grad()) return;
      std::vector<grad_real> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        double th = std::tanh(static_cast<double>(pa.at(i)));
        ga[i] = g[i] * (1.0 - th * th);
      }
      accum(tape, pa, ga);
    };
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = static_cast<double>(a.at(i));
    out[i] = static_cast<real>(1.0 / (1.0 + std::exp(-x)));
  }
  return make_node(a.shape(), std::move(out), {a}, "sigmoid", [&] {
    Tensor pa = a;
    return [pa](const std::vector<grad_real>& g, GradTape& tape) {
      if (!pa.requires_grad()) return;
      std::vector<grad_real> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        double x = static_cast<double>(pa.at(i));
        double s = 1.0 / (1.0 + std::exp(-x));
        ga[i] = g[i] * s * (1.0 - s);
      }
      accum(tape, pa, ga);
    };
  });
}

Tensor abs_val(const Tensor& a) {
  std::vector<real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<real>(std::fabs(static_cast<double>(a.at(i))));
  }
  return make_node(a.shape(), std::move(out), {a}, "abs", [&] {
    Tensor pa = a;
    return [pa](const std::vector<grad_real>& g, GradTape& tape) {
      if (!pa.requires_grad()) return;
      std::vector<grad_real> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        double x = static_cast<double>(pa.at(i));
        ga[i] = g[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
      }
      accum(tape, pa, ga);
    };
  });
}

// ---------------------------------------------------------------------------
// softmax / attention
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& scores, const std::vector<std::uint8_t>* allowed_cols) {
  int n = scores.rows(), d = scores.cols();
  if (allowed_cols) {
    require(allowed_cols->size() == static_cast<std::size_t>(d),
            "softmax_rows: mask length mismatch");
  }
  std::vector<real> out(scores.size());
  for (int i = 0; i < n; ++i) {
    const real* row = scores.data().data() + static_cast<std::size_t>(i) * d;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < d; ++j) {
      if (allowed_cols && !(*allowed_cols)[j]) continue;
      mx = std::max(mx, static_cast<double>(row[j]));
    }
    if (!std::isfinite(mx)) {
      throw std::runtime_error("softmax_rows: row has no admissible position (degenerate mask)");
    }
    double z = 0.0;
    real* orow = out.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      if (allowed_cols && !(*allowed_cols)[j]) {
        orow[j] = real(0);
        continue;
      }
      double e = std::exp(static_cast<double>(row[j]) - mx);
      orow[j] = static_cast<real>(e);
      z += e;
    }
    double inv = 1.0 / z;
    for (int j = 0; j < d; ++j) orow[j] = static_cast<real>(static_cast<double>(orow[j]) * inv);
  }
  Tensor y(scores.shape(), out, false);
  return make_node(scores.shape(), std::move(out), {scores}, "softmax_rows", [&] {
    Tensor pscores = scores;
    Tensor py = y;  // saved output
    int nn = n, dd = d;
    return [pscores, py, nn, dd](const std::vector<grad_real>& g, GradTape& tape) {
      if (!pscores.requires_grad()) return;
      std::vector<grad_real> ga(g.size());
      for (int i = 0; i < nn; ++i) {
        const real* yrow = py.data().data() + static_cast<std::size_t>(i) * dd;
        const grad_real* grow = g.data() + static_cast<std::size_t>(i) * dd;
        double dot = 0.0;
        for (int j = 0; j < dd; ++j) dot += grow[j] * static_cast<double>(yrow[j]);
        grad_real* garow = ga.data() + static_cast<std::size_t>(i) * dd;
        for (int j = 0; j < dd; ++j) {
          garow[j] = static_cast<grad_real>(static_cast<double>(yrow[j]) * (grow[j] - dot));
        }
      }
      accum(tape, pscores, ga);
    };
  });
}

Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         const std::vector<std::uint8_t>* key_allowed) {
  require(q.cols() == k.cols(), "softmax_attention: q/k head dimension mismatch");
  require(k.rows() == v.rows(), "softmax_attention: k/v length mismatch");
  double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor scores = mul_scalar(matmul(q, transpose(k)), scale);
  Tensor w = softmax_rows(scores, key_allowed);
  return matmul(w, v);
}

// ---------------------------------------------------------------------------
// shuffles
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, std::vector<int> new_shape) {
  std::size_t n = 1;
  for (int d : new_shape) n *= static_cast<std::size_t>(d);
  require(n == a.size(), "reshape: element count mismatch");
  std::vector<real> out = a.data();
  return make_node(std::move(new_shape), std::move(out), {a}, "reshape", [&] {
    Tensor pa = a;
    return [pa](const std::vector<grad_real>& g, GradTape& tape) { accum(tape, pa, g); };
  });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  int n = a.rows(), d = a.cols();
  require(0 <= c0 && c0 < c1 && c1 <= d, "slice_cols: bad column range");
  int w = c1 - c0;
  std::vector<real> out(static_cast<std::size_t>(n) * w);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < w; ++j) {
      out[static_cast<std::size_t>(i) * w + j] = a.at(static_cast<std::size_t>(i) * d + c0 + j);
    }
  }
  return make_node({n, w}, std::move(out), {a}, "slice_cols", [&] {
    Tensor pa = a;
    int nn = n, dd = d, cc0 = c0, ww = w;
    return [pa, nn, dd, cc0, ww](const std::vector<grad_real>& g, GradTape& tape) {
      if (!pa.requires_grad()) return;
      std::vector<grad_real> ga(pa.size(), 0.0);
      for (int i = 0; i < nn; ++i) {
        for (int j = 0; j < ww; ++j) {
          ga[static_cast<std::size_t>(i) * dd + cc0 + j] = g[static_cast<std::size_t>(i) * ww + j];
        }
      }
      accum(tape, pa, ga);
    };
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no parts");
  int n = parts[0].rows();
  int d = 0;
  for (const Tensor& p : parts) {
    require(p.rows() == n, "concat_cols: row count mismatch");
    d += p.cols();
  }
  std::vector<real> out(static_cast<std::size_t>(n) * d);
  int off = 0;
  for (const Tensor& p : parts) {
    int w = p.cols();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < w; ++j) {
        out[static_cast<std::size_t>(i) * d + off + j] = p.at(static_cast<std::size_t>(i) * w + j);
      }
    }
    off += w;
  }
  return make_node({n, d}, std::move(out), parts, "concat_cols", [&] {
    std::vector<Tensor> ps = parts;
    int nn = n, dd = d;
    return [ps, nn, dd](const std::vector<grad_real>& g, GradTape& tape) {
      int off2 = 0;
      for (const Tensor& p : ps) {
        int w = p.cols();
        if (p.requires_grad()) {
          std::vector<grad_real> gp(p.size());
          for (int i = 0; i < nn; ++i) {
            for (int j = 0; j < w; ++j) {
              gp[static_cast<std::size_t>(i) * w + j] =
                  g[static_cast<std::size_t>(i) * dd + off2 + j];
            }
          }
          accum(tape, p, gp);
        }
        off2 += w;
      }
    };
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no parts");
  int d = parts[0].cols();
  int n = 0;
  for (const Tensor& p : parts) {
    require(p.cols() == d, "concat_rows: column count mismatch");
    n += p.rows();
  }
  std::vector<real> out;
  out.reserve(static_cast<std::size_t>(n) * d);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_node({n, d}, std::move(out), parts, "concat_rows", [&] {
    std::vector<Tensor> ps = parts;
    return [ps](const std::vector<grad_real>& g, GradTape& tape) {
      std::size_t off = 0;
      for (const Tensor& p : ps) {
        if (p.requires_grad()) {
          std::vector<grad_real> gp(g.begin() + off, g.begin() + off + p.size());
          accum(tape, p, gp);
        }
        off += p.size();
      }
    };
  });
}

Tensor gather_rows(const Tensor& a, std::vector<int> idx) {
  int n = a.rows(), d = a.cols();
  for (int i : idx) require(0 <= i && i < n, "gather_rows: index out of range");
  std::vector<real> out(idx.size() * static_cast<std::size_t>(d));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const real* src = a.data().data() + static_cast<std::size_t>(idx[r]) * d;
    std::copy(src, src + d, out.data() + r * d);
  }
  return make_node({static_cast<int>(idx.size()), d}, std::move(out), {a}, "gather_rows", [&] {
    Tensor pa = a;
    std::vector<int> ix = std::move(idx);
    int dd = d;
    return [pa, ix, dd](const std::vector<grad_real>& g, GradTape& tape) {
      if (!pa.requires_grad()) return;
      std::vector<grad_real> ga(pa.size(), 0.0);
      for (std::size_t r = 0; r < ix.size(); ++r) {
        grad_real* dst = ga.data() + static_cast<std::size_t>(ix[r]) * dd;
        const grad_real* src = g.data() + r * dd;
        for (int j = 0; j < dd; ++j) dst[j] += src[j];
      }
      accum(tape, pa, ga);
    };
  });
}

Tensor roll_cols(const Tensor& a, int shift) {
  int n = a.rows(), d = a.cols();
  int s = ((shift % d) + d) % d;
  std::vector<real> out(a.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      out[static_cast<std::size_t>(i) * d + ((j + s) % d)] =
          a.at(static_cast<std::size_t>(i) * d + j);
    }
  }
  return make_node(a.shape(), std::move(out), {a}, "roll_cols", [&] {
    Tensor pa = a;
    int nn = n, dd = d, ss = s;
    return [pa, nn, dd, ss](const std::vector<grad_real>& g, GradTape& tape) {
      if (!pa.requires_grad()) return;
      std::vector<grad_real> ga(g.size());
      for (int i = 0; i < nn; ++i) {
        for (int j = 0; j < dd; ++j) {
          ga[static_cast<std::size_t>(i) * dd + j] =
              g[static_cast<std::size_t>(i) * dd + ((j + ss) % dd)];
        }
      }
      accum(tape, pa, ga);
    };
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a.at(i));
  std::vector<real> out{static_cast<real>(s)};
  return make_node({1}, std::move(out), {a}, "sum", [&] {
    Tensor pa = a;
    return [pa](const std::vector<grad_real>& g, GradTape& tape) {
      if (!pa.requires_grad()) return;
      std::vector<grad_real> ga(pa.size(), g[0]);
      accum(tape, pa, ga);
    };
  });
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<real>& targets) {
  require(logits.size() == targets.size(), "bce_with_logits: size mismatch");
  require(!targets.empty(), "bce_with_logits: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    double z = static_cast<double>(logits.at(i));
    double y = static_cast<double>(targets[i]);
    total += std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::fabs(z)));
  }
  double inv_n = 1.0 / static_cast<double>(targets.size());
  std::vector<real> out{static_cast<real>(total * inv_n)};
  return make_node({1}, std::move(out), {logits}, "bce_with_logits", [&] {
    Tensor pl = logits;
    std::vector<real> ts = targets;
    double inv = inv_n;
    return [pl, ts, inv](const std::vector<grad_real>& g, GradTape& tape) {
      if (!pl.requires_grad()) return;
      std::vector<grad_real> ga(pl.size());
      for (std::size_t i = 0; i < ga.size(); ++i) {
        double z = static_cast<double>(pl.at(i));
        double s = 1.0 / (1.0 + std::exp(-z));
        ga[i] = g[0] * inv * (s - static_cast<double>(ts[i]));
      }
      accum(tape, pl, ga);
    };
  });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

std::vector<grad_real>& GradTape::buf(const detail::TensorImpl* node, std::size_t n) {
  auto it = grads_.find(node);
  if (it == grads_.end()) {
    it = grads_.emplace(node, std::vector<grad_real>(n, grad_real(0))).first;
  }
  return it->second;
}

const std::vector<grad_real>* GradTape::find_grad(const Tensor& t) const {
  auto it = grads_.find(t.impl());
  return it == grads_.end() ? nullptr : &it->second;
}

const std::vector<grad_real>& GradTape::grad(const Tensor& t) const {
  const auto* g = find_grad(t);
  if (!g) throw std::invalid_argument("GradTape::grad: tensor did not receive a gradient");
  return *g;
}

GradTape backward(const Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss is detached from every differentiable input");
  }

  // Iterative post-order DFS over the parent DAG; reversed post-order gives
  // a topological order with consumers before their inputs.
  std::vector<const detail::TensorImpl*> order;
  std::unordered_map<const detail::TensorImpl*, bool> visited;
  struct Frame {
    const detail::TensorImpl* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.impl(), 0});
  visited[loss.impl()] = true;
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      const detail::TensorImpl* p = f.node->parents[f.next_parent++].get();
      if (!visited[p]) {
        visited[p] = true;
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  GradTape tape;
  tape.buf(loss.impl(), 1)[0] = grad_real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const detail::TensorImpl* node = *it;
    auto git = tape.grads_.find(node);
    if (git == tape.grads_.end()) continue;
    if (node->backprop) {
      // Move the buffer out: backprop may insert into the map, which can
      // rehash and invalidate iterators.
      std::vector<grad_real> upstream = std::move(git->second);
      tape.grads_.erase(node);
      node->backprop(upstream, tape);
      // Interior buffers die once the node has propagated; leaves stay.
    }
  }
  return tape;
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step, double tol) {
  Tensor leaf(x.shape(), x.data(), true);
  Tensor loss = f(leaf);
  if (loss.size() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
  GradTape tape = backward(loss);
  std::vector<double> analytic(x.size(), 0.0);
  if (const auto* g = tape.find_grad(leaf)) {
    analytic.assign(g->begin(), g->end());
  }

  std::vector<double> numeric(x.size());
  {
    NoGradGuard ng;
    for (std::size_t i = 0; i < x.size(); ++i) {
      std::vector<real> dp = x.data();
      std::vector<real> dm = x.data();
      dp[i] = static_cast<real>(static_cast<double>(dp[i]) + step);
      dm[i] = static_cast<real>(static_cast<double>(dm[i]) - step);
      double denom = static_cast<double>(dp[i]) - static_cast<double>(dm[i]);
      Tensor xp(x.shape(), std::move(dp), false);
      Tensor xm(x.shape(), std::move(dm), false);
      numeric[i] = (f(xp).value() - f(xm).value()) / denom;
    }
  }

  double scale = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    scale = std::max(scale, std::fabs(analytic[i]));
    scale = std::max(scale, std::fabs(numeric[i]));
  }
  double floor = (sizeof(real) == 8) ? 1e-12 : 1e-6;
  scale = std::max(scale, floor);

  GradCheckReport rep;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double rel = std::fabs(analytic[i] - numeric[i]) / scale;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
      rep.analytic_at_worst = analytic[i];
      rep.numeric_at_worst = numeric[i];
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace timedit
