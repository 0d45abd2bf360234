#include "eegldm/nd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace eegldm::nd {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
bool wants_grad(const Node<T>& node, std::size_t i) {
  return node.parents[i]->requires_grad;
}

template <typename T>
const Tensor<T>& parent_value(const Node<T>& node, std::size_t i) {
  return node.parents[i]->value;
}

template <typename T>
void require_rank(const Var<T>& v, std::size_t rank, const char* what) {
  if (v.shape().size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(v.shape()));
  }
}

template <typename T, typename F>
Var<T> unary(const char* op, const Var<T>& a, F&& f, std::function<void(Node<T>&)> back) {
  Tensor<T> out(a.shape());
  const T* src = a.value().data();
  T* dst = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) dst[i] = f(src[i]);
  return make_result<T>(op, std::move(out), {a}, std::move(back));
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, sh, sw, oh, ow, ph, pw;
  std::size_t rows() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t np = g.n * g.positions();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t a = 0; a < g.kh; ++a) {
      for (std::size_t b = 0; b < g.kw; ++b) {
        T* row = cols + ((ci * g.kh + a) * g.kw + b) * np;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* plane = x + (n * g.c + ci) * g.h * g.w;
          T* dst = row + n * g.positions();
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const long iy = static_cast<long>(oy * g.sh + a) - static_cast<long>(g.ph);
            if (iy < 0 || iy >= static_cast<long>(g.h)) {
              std::fill(dst + oy * g.ow, dst + (oy + 1) * g.ow, T(0));
              continue;
            }
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const long ix = static_cast<long>(ox * g.sw + b) - static_cast<long>(g.pw);
              dst[oy * g.ow + ox] =
                  (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : plane[iy * g.w + ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t np = g.n * g.positions();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t a = 0; a < g.kh; ++a) {
      for (std::size_t b = 0; b < g.kw; ++b) {
        const T* row = cols + ((ci * g.kh + a) * g.kw + b) * np;
        for (std::size_t n = 0; n < g.n; ++n) {
          T* plane = dx + (n * g.c + ci) * g.h * g.w;
          const T* src = row + n * g.positions();
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const long iy = static_cast<long>(oy * g.sh + a) - static_cast<long>(g.ph);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const long ix = static_cast<long>(ox * g.sw + b) - static_cast<long>(g.pw);
              if (ix >= 0 && ix < static_cast<long>(g.w)) plane[iy * g.w + ix] += src[oy * g.ow + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t same_out_extent(std::size_t in, std::size_t stride) {
  if (stride == 0) throw ShapeError("stride must be positive");
  return (in + stride - 1) / stride;
}

std::size_t same_pad_before(std::size_t in, std::size_t kernel, std::size_t stride) {
  const std::size_t out = same_out_extent(in, stride);
  const std::size_t needed = (out - 1) * stride + kernel;
  return needed > in ? (needed - in) / 2 : 0;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const T* pb = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  return make_result<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    accumulate_grad(*self.parents[0], self.grad);
    accumulate_grad(*self.parents[1], self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  const T* pb = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  return make_result<T>("sub", std::move(out), {a, b}, [](Node<T>& self) {
    accumulate_grad(*self.parents[0], self.grad);
    if (wants_grad(self, 1)) {
      Tensor<T> g = self.grad;
      for (auto& v : g.values()) v = -v;
      accumulate_grad(*self.parents[1], g);
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  const T* pb = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  return make_result<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(self, k)) continue;
      Tensor<T> g = self.grad;
      const T* other = parent_value(self, 1 - k).data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= other[i];
      accumulate_grad(*self.parents[k], g);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return unary<T>("scale", a, [s](T v) { return v * s; }, [s](Node<T>& self) {
    Tensor<T> g = self.grad;
    for (auto& v : g.values()) v *= s;
    accumulate_grad(*self.parents[0], g);
  });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return unary<T>("exp", a, [](T v) { return std::exp(v); }, [](Node<T>& self) {
    Tensor<T> g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= self.value[i];
    accumulate_grad(*self.parents[0], g);
  });
}

template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  return unary<T>("clamp", a, [lo, hi](T v) { return std::clamp(v, lo, hi); },
                  [lo, hi](Node<T>& self) {
                    Tensor<T> g = self.grad;
                    const T* x = parent_value(self, 0).data();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      if (!(x[i] > lo && x[i] < hi)) g[i] = T(0);
                    }
                    accumulate_grad(*self.parents[0], g);
                  });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  return unary<T>("silu", a, [](T v) { return v / (T(1) + std::exp(-v)); }, [](Node<T>& self) {
    Tensor<T> g = self.grad;
    const T* x = parent_value(self, 0).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-x[i]));
      g[i] *= s * (T(1) + x[i] * (T(1) - s));
    }
    accumulate_grad(*self.parents[0], g);
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().values()) total += v;
  return make_result<T>("sum", Tensor<T>::scalar(total), {a}, [](Node<T>& self) {
    accumulate_grad(*self.parents[0], Tensor<T>(parent_value(self, 0).shape(), self.grad[0]));
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().values()) total += v;
  const T n = static_cast<T>(a.size());
  return make_result<T>("mean", Tensor<T>::scalar(total / n), {a}, [n](Node<T>& self) {
    accumulate_grad(*self.parents[0], Tensor<T>(parent_value(self, 0).shape(), self.grad[0] / n));
  });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  const std::size_t n = a.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    total += d * d;
  }
  return make_result<T>(
      "mse", Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n))), {a, b},
      [n](Node<T>& self) {
        const T* xa = parent_value(self, 0).data();
        const T* xb = parent_value(self, 1).data();
        const T coef = T(2) * self.grad[0] / static_cast<T>(n);
        Tensor<T> g(parent_value(self, 0).shape());
        for (std::size_t i = 0; i < n; ++i) g[i] = coef * (xa[i] - xb[i]);
        if (wants_grad(self, 0)) accumulate_grad(*self.parents[0], g);
        if (wants_grad(self, 1)) {
          for (auto& v : g.values()) v = -v;
          accumulate_grad(*self.parents[1], g);
        }
      });
}

template <typename T>
Var<T> gaussian_kl(const Var<T>& mu, const Var<T>& logvar) {
  require_same_shape(mu.shape(), logvar.shape(), "gaussian_kl");
  const std::size_t batch = mu.shape().at(0);
  const T* m = mu.value().data();
  const T* lv = logvar.value().data();
  double total = 0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    total += 0.5 * (static_cast<double>(m[i]) * m[i] + std::exp(static_cast<double>(lv[i])) -
                    lv[i] - 1.0);
  }
  return make_result<T>(
      "gaussian_kl", Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(batch))),
      {mu, logvar}, [batch](Node<T>& self) {
        const T coef = self.grad[0] / static_cast<T>(batch);
        const Tensor<T>& m = parent_value(self, 0);
        const Tensor<T>& lv = parent_value(self, 1);
        if (wants_grad(self, 0)) {
          Tensor<T> g(m.shape());
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = coef * m[i];
          accumulate_grad(*self.parents[0], g);
        }
        if (wants_grad(self, 1)) {
          Tensor<T> g(lv.shape());
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = coef * T(0.5) * (std::exp(lv[i]) - T(1));
          accumulate_grad(*self.parents[1], g);
        }
      });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_result<T>("reshape", std::move(out), {a}, [](Node<T>& self) {
    accumulate_grad(*self.parents[0], self.grad.reshaped(parent_value(self, 0).shape()));
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t n = x.dim(0), in = x.dim(1), outd = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " vs weight " +
                     shape_to_string(weight.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{outd}) throw ShapeError("linear: bias shape");
  Tensor<T> out(Shape{n, outd});
  MatMap<T> om(out.data(), n, outd);
  ConstMatMap<T> xm(x.value().data(), n, in);
  ConstMatMap<T> wm(weight.value().data(), outd, in);
  om.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < outd; ++c) om(r, c) += bias.value()[c];
  }
  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>("linear", std::move(out), std::move(parents), [n, in, outd](Node<T>& self) {
    ConstMatMap<T> gm(self.grad.data(), n, outd);
    if (wants_grad(self, 0)) {
      Tensor<T> gx(Shape{n, in});
      MatMap<T>(gx.data(), n, in).noalias() =
          gm * ConstMatMap<T>(parent_value(self, 1).data(), outd, in);
      accumulate_grad(*self.parents[0], gx);
    }
    if (wants_grad(self, 1)) {
      Tensor<T> gw(Shape{outd, in});
      MatMap<T>(gw.data(), outd, in).noalias() =
          gm.transpose() * ConstMatMap<T>(parent_value(self, 0).data(), n, in);
      accumulate_grad(*self.parents[1], gw);
    }
    if (self.parents.size() > 2 && wants_grad(self, 2)) {
      Tensor<T> gb(Shape{outd});
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < outd; ++c) gb[c] += gm(r, c);
      accumulate_grad(*self.parents[2], gb);
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride_h,
              std::size_t stride_w) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (weight.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: input " + shape_to_string(x.shape()) + " vs weight " +
                     shape_to_string(weight.shape()));
  }
  ConvGeometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.sh = stride_h;
  g.sw = stride_w;
  g.oh = same_out_extent(g.h, g.sh);
  g.ow = same_out_extent(g.w, g.sw);
  g.ph = same_pad_before(g.h, g.kh, g.sh);
  g.pw = same_pad_before(g.w, g.kw, g.sw);
  if (bias.defined() && bias.shape() != Shape{g.o}) throw ShapeError("conv2d: bias shape");

  const std::size_t rows = g.rows();
  const std::size_t np = g.n * g.positions();
  std::vector<T> cols(rows * np);
  im2col(x.value().data(), g, cols.data());

  RowMat<T> prod(g.o, np);
  prod.noalias() = ConstMatMap<T>(weight.value().data(), g.o, rows) *
                   ConstMatMap<T>(cols.data(), rows, np);

  Tensor<T> out(Shape{g.n, g.o, g.oh, g.ow});
  const std::size_t p = g.positions();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      T* dst = out.data() + (n * g.o + o) * p;
      const T* src = prod.data() + o * np + n * p;
      const T b = bias.defined() ? bias.value()[o] : T(0);
      for (std::size_t k = 0; k < p; ++k) dst[k] = src[k] + b;
    }
  }

  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(
      "conv2d", std::move(out), std::move(parents),
      [g, cols = std::move(cols)](Node<T>& self) {
        const std::size_t rows = g.rows();
        const std::size_t p = g.positions();
        const std::size_t np = g.n * p;
        RowMat<T> gm(g.o, np);
        for (std::size_t n = 0; n < g.n; ++n)
          for (std::size_t o = 0; o < g.o; ++o)
            std::copy_n(self.grad.data() + (n * g.o + o) * p, p, gm.data() + o * np + n * p);

        if (wants_grad(self, 1)) {
          Tensor<T> gw(parent_value(self, 1).shape());
          MatMap<T>(gw.data(), g.o, rows).noalias() =
              gm * ConstMatMap<T>(cols.data(), rows, np).transpose();
          accumulate_grad(*self.parents[1], gw);
        }
        if (self.parents.size() > 2 && wants_grad(self, 2)) {
          Tensor<T> gb(Shape{g.o});
          for (std::size_t o = 0; o < g.o; ++o) gb[o] = gm.row(o).sum();
          accumulate_grad(*self.parents[2], gb);
        }
        if (wants_grad(self, 0)) {
          RowMat<T> gcols(rows, np);
          gcols.noalias() =
              ConstMatMap<T>(parent_value(self, 1).data(), g.o, rows).transpose() * gm;
          Tensor<T> gx(parent_value(self, 0).shape());
          col2im(gcols.data(), g, gx.data());
          accumulate_grad(*self.parents[0], gx);
        }
      });
}

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride) {
  require_rank(x, 3, "conv1d input");
  require_rank(weight, 3, "conv1d weight");
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  auto x4 = reshape(x, Shape{xs[0], xs[1], 1, xs[2]});
  auto w4 = reshape(weight, Shape{ws[0], ws[1], 1, ws[2]});
  auto y = conv2d(x4, w4, bias, 1, stride);
  return reshape(y, Shape{xs[0], ws[0], y.dim(3)});
}

template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, std::size_t groups,
                  T eps) {
  if (x.shape().size() < 2) throw ShapeError("group_norm: rank < 2");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t spatial = x.size() / (n * c);
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("group_norm: affine parameters must be [C]");
  }
  const std::size_t cpg = c / groups;
  const std::size_t m = cpg * spatial;
  Tensor<T> xhat(x.shape());
  std::vector<T> rstd(n * groups);
  const T* px = x.value().data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t off = (b * c + gi * cpg) * spatial;
      double mu = 0;
      for (std::size_t k = 0; k < m; ++k) mu += px[off + k];
      mu /= static_cast<double>(m);
      double var = 0;
      for (std::size_t k = 0; k < m; ++k) {
        const double d = px[off + k] - mu;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const T r = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      rstd[b * groups + gi] = r;
      for (std::size_t k = 0; k < m; ++k) xhat[off + k] = static_cast<T>(px[off + k] - mu) * r;
    }
  }
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * spatial;
      const T gm = gamma.value()[ch], bt = beta.value()[ch];
      for (std::size_t k = 0; k < spatial; ++k) out[off + k] = xhat[off + k] * gm + bt;
    }
  return make_result<T>(
      "group_norm", std::move(out), {x, gamma, beta},
      [n, c, spatial, groups, cpg, m, xhat = std::move(xhat),
       rstd = std::move(rstd)](Node<T>& self) {
        const T* gy = self.grad.data();
        const Tensor<T>& gamma = parent_value(self, 1);
        if (wants_grad(self, 1) || wants_grad(self, 2)) {
          Tensor<T> gg(Shape{c}), gbt(Shape{c});
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t off = (b * c + ch) * spatial;
              for (std::size_t k = 0; k < spatial; ++k) {
                gg[ch] += gy[off + k] * xhat[off + k];
                gbt[ch] += gy[off + k];
              }
            }
          if (wants_grad(self, 1)) accumulate_grad(*self.parents[1], gg);
          if (wants_grad(self, 2)) accumulate_grad(*self.parents[2], gbt);
        }
        if (wants_grad(self, 0)) {
          Tensor<T> gx(parent_value(self, 0).shape());
          std::vector<T> dxhat(m);
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t gi = 0; gi < groups; ++gi) {
              const std::size_t off = (b * c + gi * cpg) * spatial;
              T s1 = 0, s2 = 0;
              for (std::size_t k = 0; k < m; ++k) {
                const std::size_t ch = gi * cpg + k / spatial;
                dxhat[k] = gy[off + k] * gamma[ch];
                s1 += dxhat[k];
                s2 += dxhat[k] * xhat[off + k];
              }
              const T r = rstd[b * groups + gi];
              const T inv_m = T(1) / static_cast<T>(m);
              for (std::size_t k = 0; k < m; ++k) {
                gx[off + k] = r * (dxhat[k] - inv_m * s1 - xhat[off + k] * inv_m * s2);
              }
            }
          accumulate_grad(*self.parents[0], gx);
        }
      });
}

template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& v) {
  if (x.shape().size() < 2 || v.shape() != Shape{x.dim(0), x.dim(1)}) {
    throw ShapeError("add_channel_bias: " + shape_to_string(x.shape()) + " + " +
                     shape_to_string(v.shape()));
  }
  const std::size_t nc = x.dim(0) * x.dim(1);
  const std::size_t spatial = x.size() / nc;
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < nc; ++i) {
    const T b = v.value()[i];
    for (std::size_t k = 0; k < spatial; ++k) out[i * spatial + k] += b;
  }
  return make_result<T>("add_channel_bias", std::move(out), {x, v}, [nc, spatial](Node<T>& self) {
    accumulate_grad(*self.parents[0], self.grad);
    if (wants_grad(self, 1)) {
      Tensor<T> gv(parent_value(self, 1).shape());
      for (std::size_t i = 0; i < nc; ++i)
        for (std::size_t k = 0; k < spatial; ++k) gv[i] += self.grad[i * spatial + k];
      accumulate_grad(*self.parents[1], gv);
    }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  if (a.shape().size() < 2 || a.shape().size() != b.shape().size() || a.dim(0) != b.dim(0) ||
      !std::equal(a.shape().begin() + 2, a.shape().end(), b.shape().begin() + 2)) {
    throw ShapeError("concat_channels: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t spatial = a.size() / (n * ca);
  Shape s = a.shape();
  s[1] = ca + cb;
  Tensor<T> out(s);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().data() + i * ca * spatial, ca * spatial,
                out.data() + i * (ca + cb) * spatial);
    std::copy_n(b.value().data() + i * cb * spatial, cb * spatial,
                out.data() + (i * (ca + cb) + ca) * spatial);
  }
  return make_result<T>("concat_channels", std::move(out), {a, b},
                        [n, ca, cb, spatial](Node<T>& self) {
                          for (std::size_t k = 0; k < 2; ++k) {
                            if (!wants_grad(self, k)) continue;
                            const std::size_t ck = k == 0 ? ca : cb;
                            const std::size_t start = k == 0 ? 0 : ca;
                            Tensor<T> g(parent_value(self, k).shape());
                            for (std::size_t i = 0; i < n; ++i)
                              std::copy_n(self.grad.data() + (i * (ca + cb) + start) * spatial,
                                          ck * spatial, g.data() + i * ck * spatial);
                            accumulate_grad(*self.parents[k], g);
                          }
                        });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t fh, std::size_t fw, std::size_t out_h,
                        std::size_t out_w) {
  require_rank(x, 4, "upsample_nearest");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (fh == 0 || fw == 0 || out_h == 0 || out_w == 0 || out_h > fh * h || out_w > fw * w) {
    throw ShapeError("upsample_nearest: target " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " outside " + std::to_string(fh) + "x" +
                     std::to_string(fw) + " of " + shape_to_string(x.shape()));
  }
  Tensor<T> out(Shape{n, c, out_h, out_w});
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j)
        out[(p * out_h + i) * out_w + j] = x.value()[(p * h + i / fh) * w + j / fw];
  return make_result<T>("upsample_nearest", std::move(out), {x},
                        [n, c, h, w, fh, fw, out_h, out_w](Node<T>& self) {
                          Tensor<T> g(Shape{n, c, h, w});
                          for (std::size_t p = 0; p < n * c; ++p)
                            for (std::size_t i = 0; i < out_h; ++i)
                              for (std::size_t j = 0; j < out_w; ++j)
                                g[(p * h + i / fh) * w + j / fw] +=
                                    self.grad[(p * out_h + i) * out_w + j];
                          accumulate_grad(*self.parents[0], g);
                        });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
  return upsample_nearest(x, 2, 2, out_h, out_w);
}

template <typename T>
Var<T> mix_channels(const Var<T>& y, const Var<T>& mixers, const std::vector<std::size_t>& ids) {
  require_rank(y, 3, "mix_channels input");
  require_rank(mixers, 3, "mix_channels mixers");
  const std::size_t n = y.dim(0), c = y.dim(1), l = y.dim(2);
  if (mixers.dim(1) != c || mixers.dim(2) != c) {
    throw ShapeError("mix_channels: mixers " + shape_to_string(mixers.shape()) + " vs signal " +
                     shape_to_string(y.shape()));
  }
  if (ids.size() != n) throw ShapeError("mix_channels: one subject id per sample required");
  for (auto id : ids) {
    if (id >= mixers.dim(0)) {
      throw std::out_of_range("mix_channels: unknown subject id " + std::to_string(id));
    }
  }
  Tensor<T> out(y.shape());
  for (std::size_t i = 0; i < n; ++i) {
    MatMap<T>(out.data() + i * c * l, c, l).noalias() =
        ConstMatMap<T>(mixers.value().data() + ids[i] * c * c, c, c) *
        ConstMatMap<T>(y.value().data() + i * c * l, c, l);
  }
  return make_result<T>("mix_channels", std::move(out), {y, mixers}, [n, c, l, ids](Node<T>& self) {
    const Tensor<T>& yv = parent_value(self, 0);
    const Tensor<T>& wv = parent_value(self, 1);
    if (wants_grad(self, 0)) {
      Tensor<T> gy(yv.shape());
      for (std::size_t i = 0; i < n; ++i)
        MatMap<T>(gy.data() + i * c * l, c, l).noalias() =
            ConstMatMap<T>(wv.data() + ids[i] * c * c, c, c).transpose() *
            ConstMatMap<T>(self.grad.data() + i * c * l, c, l);
      accumulate_grad(*self.parents[0], gy);
    }
    if (wants_grad(self, 1)) {
      Tensor<T> gw(wv.shape());
      for (std::size_t i = 0; i < n; ++i)
        MatMap<T>(gw.data() + ids[i] * c * c, c, c).noalias() +=
            ConstMatMap<T>(self.grad.data() + i * c * l, c, l) *
            ConstMatMap<T>(yv.data() + i * c * l, c, l).transpose();
      accumulate_grad(*self.parents[1], gw);
    }
  });
}

#define EEGLDM_INSTANTIATE_OPS(T)                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                       \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                       \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                       \
  template Var<T> scale(const Var<T>&, T);                                                 \
  template Var<T> exp(const Var<T>&);                                                      \
  template Var<T> clamp(const Var<T>&, T, T);                                              \
  template Var<T> silu(const Var<T>&);                                                     \
  template Var<T> sum(const Var<T>&);                                                      \
  template Var<T> mean(const Var<T>&);                                                     \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                       \
  template Var<T> gaussian_kl(const Var<T>&, const Var<T>&);                               \
  template Var<T> reshape(const Var<T>&, Shape);                                           \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                     \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t,         \
                         std::size_t);                                                     \
  template Var<T> conv1d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t);        \
  template Var<T> group_norm(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, T); \
  template Var<T> add_channel_bias(const Var<T>&, const Var<T>&);                          \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                           \
  template Var<T> upsample_nearest(const Var<T>&, std::size_t, std::size_t, std::size_t,   \
                                   std::size_t);                                          \
  template Var<T> upsample_nearest2x(const Var<T>&, std::size_t, std::size_t);             \
  template Var<T> mix_channels(const Var<T>&, const Var<T>&, const std::vector<std::size_t>&);

EEGLDM_INSTANTIATE_OPS(float)
EEGLDM_INSTANTIATE_OPS(double)

}  // namespace eegldm::nd
