#include "mist/ops.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "mist/errors.hpp"

namespace mist {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using BackwardFn = std::function<void(detail::Node<T>&)>;

/// Wraps freshly computed values into a tensor, checking finiteness and
/// attaching the backward closure when any input is tracked.
template <typename T>
Tensor<T> finish(const char* op, Shape shape, std::vector<T> values, std::initializer_list<Tensor<T>> inputs,
                 BackwardFn<T> backward) {
  for (const T v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(fmt::format("{} produced a non-finite value", op));
    }
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (grad_enabled()) {
    bool tracked = false;
    for (const auto& in : inputs) {
      tracked = tracked || in.requires_grad();
    }
    if (tracked) {
      node->requires_grad = true;
      for (const auto& in : inputs) {
        if (in.requires_grad()) {
          node->parents.push_back(in.node());
        }
      }
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> finish_many(const char* op, Shape shape, std::vector<T> values, std::span<const Tensor<T>> inputs,
                      BackwardFn<T> backward) {
  for (const T v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(fmt::format("{} produced a non-finite value", op));
    }
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        node->parents.push_back(in.node());
      }
    }
    if (node->requires_grad) {
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

// Grad buffer of an input, or nullptr when it is not tracked.
template <typename T>
T* grad_of(const Tensor<T>& t) {
  if (!t.requires_grad()) {
    return nullptr;
  }
  auto copy = t;
  return copy.grad_buffer().data();
}

void require(bool ok, const std::string& what) {
  if (!ok) {
    throw DimensionError(what);
  }
}

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* op) {
  require(x.defined(), fmt::format("{}: undefined tensor", op));
  require(x.rank() == rank, fmt::format("{}: expected rank {}, got {}", op, rank, shape_str(x.shape())));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), fmt::format("{}: shape {} vs {}", op, shape_str(a.shape()), shape_str(b.shape())));
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, k, ho, wo;
  int stride, pad;
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t p = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = col + ((c * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          T* out = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(out, out + g.wo, T(0));
            continue;
          }
          const T* in = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            out[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : in[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const std::size_t p = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((c * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            continue;
          }
          T* out = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* in = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            if (ix >= 0 && ix < static_cast<long>(g.w)) {
              out[ix] += in[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  require_rank(b, 1, "conv2d bias");
  if (stride < 1 || pad < 0) {
    throw ConfigError(fmt::format("conv2d: stride must be >= 1 and pad >= 0 (stride={}, pad={})", stride, pad));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), 0, 0, stride, pad};
  if (w.dim(2) != w.dim(3) || g.k % 2 == 0) {
    throw ConfigError("conv2d: kernel must be square with odd size, got " + shape_str(w.shape()));
  }
  require(w.dim(1) == g.cin, fmt::format("conv2d: weight {} does not match input channels {}", shape_str(w.shape()), g.cin));
  require(b.dim(0) == g.cout, fmt::format("conv2d: bias {} does not match {} output channels", shape_str(b.shape()), g.cout));
  const long span_h = static_cast<long>(g.h) + 2L * pad - static_cast<long>(g.k);
  const long span_w = static_cast<long>(g.w) + 2L * pad - static_cast<long>(g.k);
  if (span_h < 0 || span_w < 0) {
    throw ConfigError(fmt::format("conv2d: kernel {} larger than padded input {}x{}", g.k, g.h + 2 * pad, g.w + 2 * pad));
  }
  g.ho = static_cast<std::size_t>(span_h / stride + 1);
  g.wo = static_cast<std::size_t>(span_w / stride + 1);

  const std::size_t kk = g.cin * g.k * g.k;
  const std::size_t p = g.ho * g.wo;
  std::vector<T> out(g.n * g.cout * p);
  std::vector<T> col(kk * p);
  ConstMatMap<T> wm(w.data().data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(kk));
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(x.data().data() + n * g.cin * g.h * g.w, g, col.data());
    ConstMatMap<T> cm(col.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(p));
    MatMap<T> om(out.data() + n * g.cout * p, static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(p));
    om.noalias() = wm * cm;
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T bias = b.data()[co];
      T* row = out.data() + (n * g.cout + co) * p;
      for (std::size_t i = 0; i < p; ++i) {
        row[i] += bias;
      }
    }
  }

  return finish<T>("conv2d", Shape{g.n, g.cout, g.ho, g.wo}, std::move(out), {x, w, b}, [x, w, b, g](detail::Node<T>& self) {
    const std::size_t kk = g.cin * g.k * g.k;
    const std::size_t p = g.ho * g.wo;
    T* dx = grad_of(x);
    T* dw = grad_of(w);
    T* db = grad_of(b);
    std::vector<T> col(kk * p);
    std::vector<T> dcol(dx ? kk * p : 0);
    ConstMatMap<T> wm(w.data().data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(kk));
    for (std::size_t n = 0; n < g.n; ++n) {
      ConstMatMap<T> dout(self.grad.data() + n * g.cout * p, static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(p));
      if (dw) {
        im2col(x.data().data() + n * g.cin * g.h * g.w, g, col.data());
        ConstMatMap<T> cm(col.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(p));
        MatMap<T> dwm(dw, static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(kk));
        dwm.noalias() += dout * cm.transpose();
      }
      if (db) {
        for (std::size_t co = 0; co < g.cout; ++co) {
          const T* row = self.grad.data() + (n * g.cout + co) * p;
          T acc = 0;
          for (std::size_t i = 0; i < p; ++i) {
            acc += row[i];
          }
          db[co] += acc;
        }
      }
      if (dx) {
        MatMap<T> dcm(dcol.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(p));
        dcm.noalias() = wm.transpose() * dout;
        col2im_add(dcol.data(), g, dx + n * g.cin * g.h * g.w);
      }
    }
  });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, double eps) {
  require_rank(x, 4, "instance_norm");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t m = x.dim(2) * x.dim(3);
  std::vector<T> out(x.numel());
  std::vector<T> inv_std(planes);
  const T* in = x.data().data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = in + pl * m;
    double mu = 0;
    for (std::size_t i = 0; i < m; ++i) {
      mu += src[i];
    }
    mu /= static_cast<double>(m);
    double var = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = src[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(m);
    const double denom = var + eps;
    const double inv = denom > 0 ? 1.0 / std::sqrt(denom) : 0.0;
    inv_std[pl] = static_cast<T>(inv);
    T* dst = out.data() + pl * m;
    for (std::size_t i = 0; i < m; ++i) {
      dst[i] = static_cast<T>((src[i] - mu) * inv);
    }
  }
  return finish<T>("instance_norm", x.shape(), std::move(out), {x}, [x, planes, m, inv_std](detail::Node<T>& self) {
    T* dx = grad_of(x);
    for (std::size_t pl = 0; pl < planes; ++pl) {
      const T* dy = self.grad.data() + pl * m;
      const T* y = self.value.data() + pl * m;
      double sum_dy = 0;
      double sum_dy_y = 0;
      for (std::size_t i = 0; i < m; ++i) {
        sum_dy += dy[i];
        sum_dy_y += static_cast<double>(dy[i]) * y[i];
      }
      const double mean_dy = sum_dy / static_cast<double>(m);
      const double mean_dy_y = sum_dy_y / static_cast<double>(m);
      const double inv = inv_std[pl];
      T* dst = dx + pl * m;
      for (std::size_t i = 0; i < m; ++i) {
        dst[i] += static_cast<T>(inv * (dy[i] - mean_dy - y[i] * mean_dy_y));
      }
    }
  });
}

template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  require_rank(x, 4, "channel_affine input");
  require_rank(gamma, 2, "channel_affine gamma");
  require_rank(beta, 2, "channel_affine beta");
  const Shape nc{x.dim(0), x.dim(1)};
  require(gamma.shape() == nc && beta.shape() == nc,
          fmt::format("channel_affine: gamma {} / beta {} must be {}", shape_str(gamma.shape()), shape_str(beta.shape()),
                      shape_str(nc)));
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t m = x.dim(2) * x.dim(3);
  std::vector<T> out(x.numel());
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T g = gamma.data()[pl];
    const T bb = beta.data()[pl];
    const T* src = x.data().data() + pl * m;
    T* dst = out.data() + pl * m;
    for (std::size_t i = 0; i < m; ++i) {
      dst[i] = g * src[i] + bb;
    }
  }
  return finish<T>("channel_affine", x.shape(), std::move(out), {x, gamma, beta},
                   [x, gamma, beta, planes, m](detail::Node<T>& self) {
                     T* dx = grad_of(x);
                     T* dg = grad_of(gamma);
                     T* db = grad_of(beta);
                     for (std::size_t pl = 0; pl < planes; ++pl) {
                       const T* dy = self.grad.data() + pl * m;
                       const T* src = x.data().data() + pl * m;
                       const T g = gamma.data()[pl];
                       T sum_dy = 0;
                       T sum_dy_x = 0;
                       for (std::size_t i = 0; i < m; ++i) {
                         sum_dy += dy[i];
                         sum_dy_x += dy[i] * src[i];
                         if (dx) {
                           dx[pl * m + i] += g * dy[i];
                         }
                       }
                       if (dg) {
                         dg[pl] += sum_dy_x;
                       }
                       if (db) {
                         db[pl] += sum_dy;
                       }
                     }
                   });
}

template <typename T>
Tensor<T> adain(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  return channel_affine(instance_norm(x, eps), gamma, beta);
}

template <typename T>
Tensor<T> pointwise(Activation kind, const Tensor<T>& x) {
  require(x.defined(), "pointwise: undefined tensor");
  std::vector<T> out(x.numel());
  const auto in = x.data();
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = in[i] > T(0) ? in[i] : T(0);
      }
      break;
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = in[i] > T(0) ? in[i] : static_cast<T>(kLeakySlope) * in[i];
      }
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (in[i] >= T(0)) {
          out[i] = T(1) / (T(1) + std::exp(-in[i]));
        } else {
          const T e = std::exp(in[i]);
          out[i] = e / (T(1) + e);
        }
      }
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::tanh(in[i]);
      }
      break;
  }
  return finish<T>("pointwise", x.shape(), std::move(out), {x}, [x, kind](detail::Node<T>& self) {
    T* dx = grad_of(x);
    const auto in = x.data();
    const auto& y = self.value;
    const auto& dy = self.grad;
    for (std::size_t i = 0; i < y.size(); ++i) {
      T d = 0;
      switch (kind) {
        case Activation::relu:
          d = in[i] > T(0) ? T(1) : T(0);
          break;
        case Activation::leaky_relu:
          d = in[i] > T(0) ? T(1) : static_cast<T>(kLeakySlope);
          break;
        case Activation::sigmoid:
          d = y[i] * (T(1) - y[i]);
          break;
        case Activation::tanh:
          d = T(1) - y[i] * y[i];
          break;
      }
      dx[i] += d * dy[i];
    }
  });
}

template <typename T>
Tensor<T> natural_log(const Tensor<T>& x) {
  require(x.defined(), "natural_log: undefined tensor");
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(x.data()[i] > T(0))) {
      throw NumericError(fmt::format("natural_log: non-positive input {}", x.data()[i]));
    }
    out[i] = std::log(x.data()[i]);
  }
  return finish<T>("natural_log", x.shape(), std::move(out), {x}, [x](detail::Node<T>& self) {
    T* dx = grad_of(x);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      dx[i] += self.grad[i] / x.data()[i];
    }
  });
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(x, 2, "dense input");
  require_rank(w, 2, "dense weight");
  require_rank(b, 1, "dense bias");
  const std::size_t n = x.dim(0);
  const std::size_t din = x.dim(1);
  const std::size_t dout = w.dim(0);
  require(w.dim(1) == din, fmt::format("dense: weight {} vs input {}", shape_str(w.shape()), shape_str(x.shape())));
  require(b.dim(0) == dout, fmt::format("dense: bias {} vs weight {}", shape_str(b.shape()), shape_str(w.shape())));
  const auto ni = static_cast<Eigen::Index>(n);
  const auto di = static_cast<Eigen::Index>(din);
  const auto oi = static_cast<Eigen::Index>(dout);
  std::vector<T> out(n * dout);
  ConstMatMap<T> xm(x.data().data(), ni, di);
  ConstMatMap<T> wm(w.data().data(), oi, di);
  MatMap<T> om(out.data(), ni, oi);
  om.noalias() = xm * wm.transpose();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < dout; ++c) {
      out[r * dout + c] += b.data()[c];
    }
  }
  return finish<T>("dense", Shape{n, dout}, std::move(out), {x, w, b}, [x, w, b, ni, di, oi](detail::Node<T>& self) {
    ConstMatMap<T> dy(self.grad.data(), ni, oi);
    if (T* dx = grad_of(x)) {
      MatMap<T>(dx, ni, di).noalias() += dy * ConstMatMap<T>(w.data().data(), oi, di);
    }
    if (T* dw = grad_of(w)) {
      MatMap<T>(dw, oi, di).noalias() += dy.transpose() * ConstMatMap<T>(x.data().data(), ni, di);
    }
    if (T* db = grad_of(b)) {
      for (Eigen::Index r = 0; r < ni; ++r) {
        for (Eigen::Index c = 0; c < oi; ++c) {
          db[c] += dy(r, c);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  require_rank(x, 4, "upsample2x");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  std::vector<T> out(planes * 4 * h * w);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = x.data().data() + pl * h * w;
    T* dst = out.data() + pl * 4 * h * w;
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) {
        dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
      }
    }
  }
  return finish<T>("upsample2x", Shape{x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), {x},
                   [x, planes, h, w](detail::Node<T>& self) {
                     T* dx = grad_of(x);
                     for (std::size_t pl = 0; pl < planes; ++pl) {
                       const T* dy = self.grad.data() + pl * 4 * h * w;
                       T* dst = dx + pl * h * w;
                       for (std::size_t i = 0; i < 2 * h; ++i) {
                         for (std::size_t j = 0; j < 2 * w; ++j) {
                           dst[(i / 2) * w + j / 2] += dy[i * 2 * w + j];
                         }
                       }
                     }
                   });
}

template <typename T>
Tensor<T> highpass3x3(const Tensor<T>& x) {
  require_rank(x, 4, "highpass3x3");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  auto clamp_index = [](long i, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(i, 0L, static_cast<long>(n) - 1));
  };
  std::vector<T> out(x.numel());
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = x.data().data() + pl * h * w;
    T* dst = out.data() + pl * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t up = clamp_index(static_cast<long>(i) - 1, h);
      const std::size_t down = clamp_index(static_cast<long>(i) + 1, h);
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t left = clamp_index(static_cast<long>(j) - 1, w);
        const std::size_t right = clamp_index(static_cast<long>(j) + 1, w);
        const T c = src[i * w + j];
        dst[i * w + j] = (c - src[up * w + j]) + (c - src[down * w + j]) + (c - src[i * w + left]) + (c - src[i * w + right]);
      }
    }
  }
  return finish<T>("highpass3x3", x.shape(), std::move(out), {x}, [x, planes, h, w, clamp_index](detail::Node<T>& self) {
    T* dx = grad_of(x);
    for (std::size_t pl = 0; pl < planes; ++pl) {
      const T* dy = self.grad.data() + pl * h * w;
      T* dst = dx + pl * h * w;
      for (std::size_t i = 0; i < h; ++i) {
        const std::size_t up = clamp_index(static_cast<long>(i) - 1, h);
        const std::size_t down = clamp_index(static_cast<long>(i) + 1, h);
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t left = clamp_index(static_cast<long>(j) - 1, w);
          const std::size_t right = clamp_index(static_cast<long>(j) + 1, w);
          const T g = dy[i * w + j];
          dst[i * w + j] += 4 * g;
          dst[up * w + j] -= g;
          dst[down * w + j] -= g;
          dst[i * w + left] -= g;
          dst[i * w + right] -= g;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] + b.data()[i];
  }
  return finish<T>("add", a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& self) {
    for (const auto* t : {&a, &b}) {
      if (T* d = grad_of(*t)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          d[i] += self.grad[i];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] - b.data()[i];
  }
  return finish<T>("sub", a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& self) {
    if (T* da = grad_of(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        da[i] += self.grad[i];
      }
    }
    if (T* db = grad_of(b)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        db[i] -= self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] * b.data()[i];
  }
  return finish<T>("mul", a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& self) {
    if (T* da = grad_of(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        da[i] += self.grad[i] * b.data()[i];
      }
    }
    if (T* db = grad_of(b)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        db[i] += self.grad[i] * a.data()[i];
      }
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor) {
  const T f = static_cast<T>(factor);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = f * x.data()[i];
  }
  return finish<T>("scale", x.shape(), std::move(out), {x}, [x, f](detail::Node<T>& self) {
    T* dx = grad_of(x);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      dx[i] += f * self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, double value) {
  const T v = static_cast<T>(value);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x.data()[i] + v;
  }
  return finish<T>("add_scalar", x.shape(), std::move(out), {x}, [x](detail::Node<T>& self) {
    T* dx = grad_of(x);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      dx[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (const T v : x.data()) {
    acc += v;
  }
  return finish<T>("sum", Shape{1}, std::vector<T>{static_cast<T>(acc)}, {x}, [x](detail::Node<T>& self) {
    T* dx = grad_of(x);
    const T g = self.grad[0];
    for (std::size_t i = 0; i < x.numel(); ++i) {
      dx[i] += g;
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

template <typename T>
Tensor<T> l1_mean(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "l1_mean");
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    acc += std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]));
  }
  const double n = static_cast<double>(a.numel());
  return finish<T>("l1_mean", Shape{1}, std::vector<T>{static_cast<T>(acc / n)}, {a, b}, [a, b, n](detail::Node<T>& self) {
    const T g = static_cast<T>(self.grad[0] / n);
    T* da = grad_of(a);
    T* db = grad_of(b);
    for (std::size_t i = 0; i < a.numel(); ++i) {
      const T diff = a.data()[i] - b.data()[i];
      const T s = diff > T(0) ? g : (diff < T(0) ? -g : T(0));
      if (da) {
        da[i] += s;
      }
      if (db) {
        db[i] -= s;
      }
    }
  });
}

template <typename T>
Tensor<T> average(std::span<const Tensor<T>> xs) {
  require(!xs.empty(), "average: no inputs");
  for (const auto& x : xs) {
    require_same_shape(xs[0], x, "average");
  }
  const T inv = T(1) / static_cast<T>(xs.size());
  std::vector<T> out(xs[0].numel(), T(0));
  for (const auto& x : xs) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] += x.data()[i];
    }
  }
  for (auto& v : out) {
    v *= inv;
  }
  std::vector<Tensor<T>> inputs(xs.begin(), xs.end());
  return finish_many<T>("average", xs[0].shape(), std::move(out), xs, [inputs, inv](detail::Node<T>& self) {
    for (const auto& x : inputs) {
      if (T* dx = grad_of(x)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          dx[i] += inv * self.grad[i];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> xs) {
  require(!xs.empty(), "concat_channels: no inputs");
  const Tensor<T>& first = xs[0];
  require_rank(first, 4, "concat_channels");
  std::size_t channels = 0;
  for (const auto& x : xs) {
    require_rank(x, 4, "concat_channels");
    require(x.dim(0) == first.dim(0) && x.dim(2) == first.dim(2) && x.dim(3) == first.dim(3),
            fmt::format("concat_channels: {} vs {}", shape_str(x.shape()), shape_str(first.shape())));
    channels += x.dim(1);
  }
  const std::size_t n = first.dim(0);
  const std::size_t m = first.dim(2) * first.dim(3);
  std::vector<T> out(n * channels * m);
  std::size_t offset = 0;
  for (const auto& x : xs) {
    const std::size_t c = x.dim(1);
    for (std::size_t b = 0; b < n; ++b) {
      std::copy_n(x.data().data() + b * c * m, c * m, out.data() + (b * channels + offset) * m);
    }
    offset += c;
  }
  std::vector<Tensor<T>> inputs(xs.begin(), xs.end());
  return finish_many<T>("concat_channels", Shape{n, channels, first.dim(2), first.dim(3)}, std::move(out), xs,
                        [inputs, n, channels, m](detail::Node<T>& self) {
                          std::size_t offset = 0;
                          for (const auto& x : inputs) {
                            const std::size_t c = x.dim(1);
                            if (T* dx = grad_of(x)) {
                              for (std::size_t b = 0; b < n; ++b) {
                                const T* src = self.grad.data() + (b * channels + offset) * m;
                                T* dst = dx + b * c * m;
                                for (std::size_t i = 0; i < c * m; ++i) {
                                  dst[i] += src[i];
                                }
                              }
                            }
                            offset += c;
                          }
                        });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t m = x.dim(2) * x.dim(3);
  std::vector<T> out(planes);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    double acc = 0;
    const T* src = x.data().data() + pl * m;
    for (std::size_t i = 0; i < m; ++i) {
      acc += src[i];
    }
    out[pl] = static_cast<T>(acc / static_cast<double>(m));
  }
  return finish<T>("global_avg_pool", Shape{x.dim(0), x.dim(1)}, std::move(out), {x}, [x, planes, m](detail::Node<T>& self) {
    T* dx = grad_of(x);
    const T inv = T(1) / static_cast<T>(m);
    for (std::size_t pl = 0; pl < planes; ++pl) {
      const T g = self.grad[pl] * inv;
      for (std::size_t i = 0; i < m; ++i) {
        dx[pl * m + i] += g;
      }
    }
  });
}

template <typename T>
Tensor<T> broadcast_spatial(const Tensor<T>& v, std::size_t height, std::size_t width) {
  require_rank(v, 2, "broadcast_spatial");
  const std::size_t planes = v.dim(0) * v.dim(1);
  const std::size_t m = height * width;
  std::vector<T> out(planes * m);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    std::fill_n(out.data() + pl * m, m, v.data()[pl]);
  }
  return finish<T>("broadcast_spatial", Shape{v.dim(0), v.dim(1), height, width}, std::move(out), {v},
                   [v, planes, m](detail::Node<T>& self) {
                     T* dv = grad_of(v);
                     for (std::size_t pl = 0; pl < planes; ++pl) {
                       T acc = 0;
                       for (std::size_t i = 0; i < m; ++i) {
                         acc += self.grad[pl * m + i];
                       }
                       dv[pl] += acc;
                     }
                   });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::size_t>& rows) {
  require_rank(table, 2, "gather_rows");
  require(!rows.empty(), "gather_rows: no rows requested");
  const std::size_t e = table.dim(1);
  std::vector<T> out(rows.size() * e);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= table.dim(0)) {
      throw UsageError(fmt::format("gather_rows: row {} out of range for table {}", rows[r], shape_str(table.shape())));
    }
    std::copy_n(table.data().data() + rows[r] * e, e, out.data() + r * e);
  }
  return finish<T>("gather_rows", Shape{rows.size(), e}, std::move(out), {table}, [table, rows, e](detail::Node<T>& self) {
    T* dt = grad_of(table);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t i = 0; i < e; ++i) {
        dt[rows[r] * e + i] += self.grad[r * e + i];
      }
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          fmt::format("reshape: {} cannot become {}", shape_str(x.shape()), shape_str(shape)));
  return finish<T>("reshape", std::move(shape), x.values(), {x}, [x](detail::Node<T>& self) {
    T* dx = grad_of(x);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      dx[i] += self.grad[i];
    }
  });
}

#define MIST_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);     \
  template Tensor<T> instance_norm(const Tensor<T>&, double);                                    \
  template Tensor<T> channel_affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> adain(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);        \
  template Tensor<T> pointwise(Activation, const Tensor<T>&);                                    \
  template Tensor<T> natural_log(const Tensor<T>&);                                              \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> upsample2x(const Tensor<T>&);                                               \
  template Tensor<T> highpass3x3(const Tensor<T>&);                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, double);                                            \
  template Tensor<T> add_scalar(const Tensor<T>&, double);                                       \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> l1_mean(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> average(std::span<const Tensor<T>>);                                        \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);                                \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                          \
  template Tensor<T> broadcast_spatial(const Tensor<T>&, std::size_t, std::size_t);              \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::size_t>&);             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);

MIST_INSTANTIATE_OPS(float)
MIST_INSTANTIATE_OPS(double)

#undef MIST_INSTANTIATE_OPS

}  // namespace mist
