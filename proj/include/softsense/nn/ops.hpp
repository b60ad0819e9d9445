#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>

#include "softsense/nn/tape.hpp"

namespace softsense::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
MatMap<T> as_matrix(Tensor<T>& t, int rows, int cols) {
  return MatMap<T>(t.data.data(), rows, cols);
}
template <class T>
ConstMatMap<T> as_matrix(const Tensor<T>& t, int rows, int cols) {
  return ConstMatMap<T>(t.data.data(), rows, cols);
}

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <class T>
bool any_requires(const Tape<T>& tape, std::initializer_list<typename Tape<T>::Var> vars) {
  for (auto v : vars) {
    if (tape.requires_grad(v)) return true;
  }
  return false;
}

// cols[(c*k + ky)*k + kx, oy*wo + ox] = img[c, oy*s + ky, ox*s + kx]
template <class T>
void im2col(const T* img, int channels, int h, int w, int k, int s, T* cols) {
  const int ho = (h - k) / s + 1;
  const int wo = (w - k) / s + 1;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const T* src = img + (static_cast<std::size_t>(c) * h + oy * s + ky) * w + kx;
          for (int ox = 0; ox < wo; ++ox) dst[oy * wo + ox] = src[ox * s];
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <class T>
void col2im(const T* cols, int channels, int h, int w, int k, int s, T* img) {
  const int ho = (h - k) / s + 1;
  const int wo = (w - k) / s + 1;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          T* dst = img + (static_cast<std::size_t>(c) * h + oy * s + ky) * w + kx;
          for (int ox = 0; ox < wo; ++ox) dst[ox * s] += src[oy * wo + ox];
        }
      }
    }
  }
}

}  // namespace detail

/// y = x W^T + b with x [N, in], W [out, in], b [out].
template <class T>
typename Tape<T>::Var linear(Tape<T>& tape, typename Tape<T>::Var x, typename Tape<T>::Var w,
                             typename Tape<T>::Var b) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  const auto& bv = tape.value(b);
  detail::require(wv.rank() == 2, "linear: weight must be rank 2");
  const int n = xv.rows(), in = xv.cols(), out = wv.dim(0);
  detail::require(wv.dim(1) == in, "linear: input width " + std::to_string(in) + " != weight in-dim " +
                                       std::to_string(wv.dim(1)));
  detail::require(bv.size() == static_cast<std::size_t>(out), "linear: bias length mismatch");
  Tensor<T> y({n, out});
  auto ym = as_matrix(y, n, out);
  ym.noalias() = as_matrix(xv, n, in) * as_matrix(wv, out, in).transpose();
  ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.data.data(), out);
  const int xi = x.id, wi = w.id, bi = b.id;
  return tape.push(std::move(y), detail::any_requires(tape, {x, w, b}), [=](Tape<T>& t, int self) {
    const auto dy = as_matrix(std::as_const(t.grad_buffer(self)), n, out);
    if (t.requires_grad_of(xi)) {
      as_matrix(t.grad_buffer(xi), n, in).noalias() += dy * as_matrix(t.value_of(wi), out, in);
    }
    if (t.requires_grad_of(wi)) {
      as_matrix(t.grad_buffer(wi), out, in).noalias() += dy.transpose() * as_matrix(t.value_of(xi), n, in);
    }
    if (t.requires_grad_of(bi)) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(t.grad_buffer(bi).data.data(), out) += dy.colwise().sum();
    }
  });
}

template <class T>
typename Tape<T>::Var relu(Tape<T>& tape, typename Tape<T>::Var x) {
  Tensor<T> y = tape.value(x);
  for (auto& v : y.data) v = v > T(0) ? v : T(0);
  const int xi = x.id;
  return tape.push(std::move(y), tape.requires_grad(x), [=](Tape<T>& t, int self) {
    const auto& xv = t.value_of(xi).data;
    const auto& dy = t.grad_buffer(self).data;
    auto& dx = t.grad_buffer(xi).data;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] > T(0)) dx[i] += dy[i];
    }
  });
}

/// Concatenates [N, a] and [N, b] feature rows into [N, a + b].
template <class T>
typename Tape<T>::Var concat(Tape<T>& tape, typename Tape<T>::Var a, typename Tape<T>::Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  detail::require(av.rows() == bv.rows(), "concat: batch sizes differ");
  const int n = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor<T> y({n, ca + cb});
  for (int r = 0; r < n; ++r) {
    std::copy(av.row(r), av.row(r) + ca, y.row(r));
    std::copy(bv.row(r), bv.row(r) + cb, y.row(r) + ca);
  }
  const int ai = a.id, bi = b.id;
  return tape.push(std::move(y), detail::any_requires(tape, {a, b}), [=](Tape<T>& t, int self) {
    const auto& dy = t.grad_buffer(self);
    if (t.requires_grad_of(ai)) {
      auto& da = t.grad_buffer(ai);
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < ca; ++c) da.row(r)[c] += dy.row(r)[c];
      }
    }
    if (t.requires_grad_of(bi)) {
      auto& db = t.grad_buffer(bi);
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < cb; ++c) db.row(r)[c] += dy.row(r)[ca + c];
      }
    }
  });
}

/// Feature columns [begin, end) of [N, C] as [N, end - begin].
template <class T>
typename Tape<T>::Var slice(Tape<T>& tape, typename Tape<T>::Var x, int begin, int end) {
  const auto& xv = tape.value(x);
  const int n = xv.rows(), c = xv.cols();
  detail::require(0 <= begin && begin <= end && end <= c, "slice: range out of bounds");
  const int w = end - begin;
  Tensor<T> y({n, w});
  for (int r = 0; r < n; ++r) std::copy(xv.row(r) + begin, xv.row(r) + end, y.row(r));
  const int xi = x.id;
  return tape.push(std::move(y), tape.requires_grad(x), [=](Tape<T>& t, int self) {
    const auto& dy = t.grad_buffer(self);
    auto& dx = t.grad_buffer(xi);
    for (int r = 0; r < n; ++r) {
      for (int j = 0; j < w; ++j) dx.row(r)[begin + j] += dy.row(r)[j];
    }
  });
}

template <class T>
typename Tape<T>::Var reshape(Tape<T>& tape, typename Tape<T>::Var x, Shape shape) {
  Tensor<T> y = tape.value(x);
  detail::require(shape_size(shape) == y.size(), "reshape: element count mismatch");
  y.shape = std::move(shape);
  const int xi = x.id;
  return tape.push(std::move(y), tape.requires_grad(x), [=](Tape<T>& t, int self) {
    const auto& dy = t.grad_buffer(self).data;
    auto& dx = t.grad_buffer(xi).data;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  });
}

template <class T>
typename Tape<T>::Var add(Tape<T>& tape, typename Tape<T>::Var a, typename Tape<T>::Var b) {
  detail::require(tape.shape(a) == tape.shape(b), "add: shape mismatch");
  Tensor<T> y = tape.value(a);
  const auto& bv = tape.value(b).data;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += bv[i];
  const int ai = a.id, bi = b.id;
  return tape.push(std::move(y), detail::any_requires(tape, {a, b}), [=](Tape<T>& t, int self) {
    for (int id : {ai, bi}) {
      if (!t.requires_grad_of(id)) continue;
      const auto& dy = t.grad_buffer(self).data;
      auto& d = t.grad_buffer(id).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

template <class T>
typename Tape<T>::Var scale(Tape<T>& tape, typename Tape<T>::Var x, T c) {
  Tensor<T> y = tape.value(x);
  for (auto& v : y.data) v *= c;
  const int xi = x.id;
  return tape.push(std::move(y), tape.requires_grad(x), [=](Tape<T>& t, int self) {
    const auto& dy = t.grad_buffer(self).data;
    auto& dx = t.grad_buffer(xi).data;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += c * dy[i];
  });
}

/// Valid (unpadded) 2-D convolution. x [N, C, H, W], w [Co, C, k, k], b [Co] -> [N, Co, Ho, Wo].
template <class T>
typename Tape<T>::Var conv2d(Tape<T>& tape, typename Tape<T>::Var x, typename Tape<T>::Var w,
                             typename Tape<T>::Var b, int stride) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  detail::require(xv.rank() == 4 && wv.rank() == 4, "conv2d: expects rank-4 input and weight");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int co = wv.dim(0), k = wv.dim(2);
  detail::require(wv.dim(1) == c && wv.dim(3) == k, "conv2d: weight/input channel mismatch");
  detail::require(h >= k && wd >= k, "conv2d: input smaller than kernel");
  detail::require(tape.value(b).size() == static_cast<std::size_t>(co), "conv2d: bias length mismatch");
  const int ho = (h - k) / stride + 1, wo = (wd - k) / stride + 1;
  const int kk = c * k * k, hw = ho * wo;
  Tensor<T> y({n, co, ho, wo});
  RowMat<T> cols(kk, hw);
  const auto wm = as_matrix(wv, co, kk);
  const auto& bv = tape.value(b).data;
  for (int i = 0; i < n; ++i) {
    detail::im2col(xv.row(i), c, h, wd, k, stride, cols.data());
    auto out = MatMap<T>(y.row(i), co, hw);
    out.noalias() = wm * cols;
    for (int o = 0; o < co; ++o) out.row(o).array() += bv[o];
  }
  const int xi = x.id, wi = w.id, bi = b.id;
  return tape.push(std::move(y), detail::any_requires(tape, {x, w, b}), [=](Tape<T>& t, int self) {
    const auto& xval = t.value_of(xi);
    const auto& dy = t.grad_buffer(self);
    const auto wmat = as_matrix(t.value_of(wi), co, kk);
    RowMat<T> col(kk, hw);
    RowMat<T> dcol(kk, hw);
    for (int i = 0; i < n; ++i) {
      const auto g = ConstMatMap<T>(dy.row(i), co, hw);
      if (t.requires_grad_of(wi)) {
        detail::im2col(xval.row(i), c, h, wd, k, stride, col.data());
        as_matrix(t.grad_buffer(wi), co, kk).noalias() += g * col.transpose();
      }
      if (t.requires_grad_of(bi)) {
        auto& db = t.grad_buffer(bi).data;
        for (int o = 0; o < co; ++o) db[o] += g.row(o).sum();
      }
      if (t.requires_grad_of(xi)) {
        dcol.noalias() = wmat.transpose() * g;
        detail::col2im(dcol.data(), c, h, wd, k, stride, t.grad_buffer(xi).row(i));
      }
    }
  });
}

/// Transposed convolution (adjoint of conv2d's input map). x [N, Ci, H, W], w [Ci, Co, k, k], b [Co]
/// -> [N, Co, (H-1)s+k, (W-1)s+k].
template <class T>
typename Tape<T>::Var conv_transpose2d(Tape<T>& tape, typename Tape<T>::Var x, typename Tape<T>::Var w,
                                       typename Tape<T>::Var b, int stride) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  detail::require(xv.rank() == 4 && wv.rank() == 4, "conv_transpose2d: expects rank-4 input and weight");
  const int n = xv.dim(0), ci = xv.dim(1), hi = xv.dim(2), wi_ = xv.dim(3);
  const int co = wv.dim(1), k = wv.dim(2);
  detail::require(wv.dim(0) == ci && wv.dim(3) == k, "conv_transpose2d: weight/input channel mismatch");
  detail::require(tape.value(b).size() == static_cast<std::size_t>(co), "conv_transpose2d: bias length mismatch");
  const int ho = (hi - 1) * stride + k, wo = (wi_ - 1) * stride + k;
  const int kk = co * k * k, hw = hi * wi_;
  Tensor<T> y({n, co, ho, wo});
  RowMat<T> cols(kk, hw);
  const auto wm = as_matrix(wv, ci, kk);
  const auto& bv = tape.value(b).data;
  for (int i = 0; i < n; ++i) {
    cols.noalias() = wm.transpose() * ConstMatMap<T>(xv.row(i), ci, hw);
    T* out = y.row(i);
    detail::col2im(cols.data(), co, ho, wo, k, stride, out);
    for (int o = 0; o < co; ++o) {
      for (int p = 0; p < ho * wo; ++p) out[o * ho * wo + p] += bv[o];
    }
  }
  const int xi = x.id, wi = w.id, bi = b.id;
  return tape.push(std::move(y), detail::any_requires(tape, {x, w, b}), [=](Tape<T>& t, int self) {
    const auto& xval = t.value_of(xi);
    const auto& dy = t.grad_buffer(self);
    const auto wmat = as_matrix(t.value_of(wi), ci, kk);
    RowMat<T> dcol(kk, hw);
    for (int i = 0; i < n; ++i) {
      detail::im2col(dy.row(i), co, ho, wo, k, stride, dcol.data());
      if (t.requires_grad_of(wi)) {
        as_matrix(t.grad_buffer(wi), ci, kk).noalias() += ConstMatMap<T>(xval.row(i), ci, hw) * dcol.transpose();
      }
      if (t.requires_grad_of(bi)) {
        auto& db = t.grad_buffer(bi).data;
        const T* g = dy.row(i);
        for (int o = 0; o < co; ++o) {
          T s = 0;
          for (int p = 0; p < ho * wo; ++p) s += g[o * ho * wo + p];
          db[o] += s;
        }
      }
      if (t.requires_grad_of(xi)) {
        MatMap<T>(t.grad_buffer(xi).row(i), ci, hw).noalias() += wmat * dcol;
      }
    }
  });
}

/// z = mu + exp(logvar / 2) * eps; eps is a constant draw from N(0, I).
template <class T>
typename Tape<T>::Var reparameterize(Tape<T>& tape, typename Tape<T>::Var mu, typename Tape<T>::Var logvar,
                                     const Tensor<T>& eps) {
  const auto& m = tape.value(mu);
  const auto& lv = tape.value(logvar);
  detail::require(m.shape == lv.shape, "reparameterize: mu/logvar shape mismatch");
  detail::require(eps.size() == m.size(), "reparameterize: eps length " + std::to_string(eps.size()) +
                                              " != latent length " + std::to_string(m.size()));
  Tensor<T> z = m;
  for (std::size_t i = 0; i < z.size(); ++i) z.data[i] += std::exp(lv.data[i] / T(2)) * eps.data[i];
  const int mi = mu.id, li = logvar.id;
  return tape.push(std::move(z), detail::any_requires(tape, {mu, logvar}), [=](Tape<T>& t, int self) {
    const auto& dz = t.grad_buffer(self).data;
    if (t.requires_grad_of(mi)) {
      auto& d = t.grad_buffer(mi).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dz[i];
    }
    if (t.requires_grad_of(li)) {
      const auto& lvv = t.value_of(li).data;
      auto& d = t.grad_buffer(li).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dz[i] * T(0.5) * std::exp(lvv[i] / T(2)) * eps.data[i];
    }
  });
}

namespace detail {

template <class T>
T checked(T v, const char* what) {
  if (!std::isfinite(v)) throw NonFiniteError(std::string(what) + " is not finite");
  return v;
}

// Shared body of the squared-error losses: value = weight * sum (p - t)^2.
template <class T>
typename Tape<T>::Var squared_error(Tape<T>& tape, typename Tape<T>::Var pred, typename Tape<T>::Var target,
                                    T weight, const char* name) {
  const auto& p = tape.value(pred);
  const auto& q = tape.value(target);
  require(p.size() == q.size(), std::string(name) + ": shape mismatch " + shape_string(p.shape) + " vs " +
                                    shape_string(q.shape));
  T sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T d = p.data[i] - q.data[i];
    sum += d * d;
  }
  Tensor<T> out({1}, checked(weight * sum, name));
  const int pi = pred.id, qi = target.id;
  return tape.push(std::move(out), any_requires(tape, {pred, target}), [=](Tape<T>& t, int self) {
    const T g = t.grad_buffer(self).data[0] * weight * T(2);
    const auto& pv = t.value_of(pi).data;
    const auto& qv = t.value_of(qi).data;
    if (t.requires_grad_of(pi)) {
      auto& d = t.grad_buffer(pi).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * (pv[i] - qv[i]);
    }
    if (t.requires_grad_of(qi)) {
      auto& d = t.grad_buffer(qi).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g * (pv[i] - qv[i]);
    }
  });
}

}  // namespace detail

/// Mean of squared elementwise differences.
template <class T>
typename Tape<T>::Var mse(Tape<T>& tape, typename Tape<T>::Var pred, typename Tape<T>::Var target) {
  const auto n = tape.value(pred).size();
  detail::require(n > 0, "mse: empty input");
  return detail::squared_error(tape, pred, target, T(1) / static_cast<T>(n), "mse");
}

/// Squared error summed over each row's elements, averaged over the batch rows.
template <class T>
typename Tape<T>::Var row_squared_error(Tape<T>& tape, typename Tape<T>::Var pred, typename Tape<T>::Var target) {
  const int rows = tape.value(pred).rows();
  detail::require(rows > 0, "row_squared_error: empty batch");
  return detail::squared_error(tape, pred, target, T(1) / static_cast<T>(rows), "row_squared_error");
}

/// KL(N(mu, exp(logvar)) || N(0, I)) summed over latent dimensions, averaged over batch rows.
template <class T>
typename Tape<T>::Var kl_standard_normal(Tape<T>& tape, typename Tape<T>::Var mu, typename Tape<T>::Var logvar) {
  const auto& m = tape.value(mu);
  const auto& lv = tape.value(logvar);
  detail::require(m.shape == lv.shape, "kl_standard_normal: mu/logvar shape mismatch");
  const T inv_rows = T(1) / static_cast<T>(m.rows());
  T sum = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    sum += m.data[i] * m.data[i] + std::exp(lv.data[i]) - T(1) - lv.data[i];
  }
  Tensor<T> out({1}, detail::checked(T(0.5) * sum * inv_rows, "kl_standard_normal"));
  const int mi = mu.id, li = logvar.id;
  return tape.push(std::move(out), detail::any_requires(tape, {mu, logvar}), [=](Tape<T>& t, int self) {
    const T g = t.grad_buffer(self).data[0] * inv_rows;
    if (t.requires_grad_of(mi)) {
      const auto& mv = t.value_of(mi).data;
      auto& d = t.grad_buffer(mi).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * mv[i];
    }
    if (t.requires_grad_of(li)) {
      const auto& lvv = t.value_of(li).data;
      auto& d = t.grad_buffer(li).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * T(0.5) * (std::exp(lvv[i]) - T(1));
    }
  });
}

}  // namespace softsense::nn
