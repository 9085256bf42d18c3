#pragma once

// Differentiable primitives. Each op computes its forward value eagerly and,
// when recording, stores a closure that maps the output gradient onto its
// inputs' gradients.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "psae/error.hpp"
#include "psae/nn/tensor.hpp"

namespace psae::nn {

inline constexpr int kIgnoreTarget = -1;
inline constexpr double kMaskedScore = -1e9;

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
CMatMap<T> as_matrix(const Tensor<T>& t) {
  return CMatMap<T>(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.last_dim()));
}
template <typename T>
MatMap<T> as_matrix(Tensor<T>& t) {
  return MatMap<T>(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.last_dim()));
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

template <typename T>
bool wants_grad(const Node<T>& n) {
  return n.requires_grad;
}

}  // namespace detail

/// x[..., K] @ w[K, M] -> [..., M]
template <typename T>
Var<T> matmul(const Var<T>& x, const Var<T>& w) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  detail::require(!xs.empty() && ws.size() == 2 && xs.back() == ws[0],
                  "matmul " + shape_str(xs) + " @ " + shape_str(ws));
  Shape out_shape = xs;
  out_shape.back() = ws[1];
  Tensor<T> out(out_shape);
  detail::as_matrix(out).noalias() = detail::as_matrix(x.value()) * detail::as_matrix(w.value());
  return Var<T>::make(std::move(out), {x, w}, [](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    auto dy = detail::as_matrix(std::as_const(self.grad));
    if (xn.requires_grad) {
      detail::as_matrix(xn.grad_buffer()).noalias() += dy * detail::as_matrix(std::as_const(wn.value)).transpose();
    }
    if (wn.requires_grad) {
      detail::as_matrix(wn.grad_buffer()).noalias() += detail::as_matrix(std::as_const(xn.value)).transpose() * dy;
    }
  });
}

/// x[..., M] + b[M]
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
  detail::require(b.shape().size() == 1 && b.shape()[0] == x.value().last_dim(),
                  "add_bias " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  Tensor<T> out = x.value();
  detail::as_matrix(out).rowwise() += detail::as_matrix(b.value()).row(0);
  return Var<T>::make(std::move(out), {x, b}, [](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& bn = *self.parents[1];
    auto dy = detail::as_matrix(std::as_const(self.grad));
    if (xn.requires_grad) detail::as_matrix(xn.grad_buffer()) += dy;
    if (bn.requires_grad) detail::as_matrix(bn.grad_buffer()).row(0) += dy.colwise().sum();
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require(a.shape() == b.shape(), "add " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v *= factor;
  return Var<T>::make(std::move(out), {x}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (T v : x.value().data) total += v;
  return Var<T>::make(Tensor<T>({1}, total), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g.data) v += self.grad[0];
  });
}

/// Exact (erf) GELU.
template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
  return Var<T>::make(std::move(out), {x}, [](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& g = xn.grad_buffer();
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xn.value[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

/// Normalises each row over the last dimension, then applies gain and bias.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const std::size_t d = x.value().last_dim();
  detail::require(gain.shape() == Shape{d} && bias.shape() == Shape{d},
                  "layer_norm " + shape_str(x.shape()) + " with gain " + shape_str(gain.shape()));
  const std::size_t rows = x.value().rows();
  Tensor<T> out(x.shape());
  auto normed = std::make_shared<std::vector<T>>(x.value().size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data.data() + r * d;
    T mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += in[c];
    mean /= T(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (in[c] - mean) * inv;
      (*normed)[r * d + c] = h;
      out.data[r * d + c] = h * gain.value()[c] + bias.value()[c];
    }
  }
  return Var<T>::make(std::move(out), {x, gain, bias}, [normed, rstd, rows, d](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& gn = *self.parents[1];
    auto& bn = *self.parents[2];
    std::vector<T> dh(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dy = self.grad.data.data() + r * d;
      const T* h = normed->data() + r * d;
      if (gn.requires_grad) {
        auto& gg = gn.grad_buffer();
        for (std::size_t c = 0; c < d; ++c) gg[c] += dy[c] * h[c];
      }
      if (bn.requires_grad) {
        auto& bg = bn.grad_buffer();
        for (std::size_t c = 0; c < d; ++c) bg[c] += dy[c];
      }
      if (xn.requires_grad) {
        T mean_dh = 0, mean_dh_h = 0;
        for (std::size_t c = 0; c < d; ++c) {
          dh[c] = dy[c] * gn.value[c];
          mean_dh += dh[c];
          mean_dh_h += dh[c] * h[c];
        }
        mean_dh /= T(d);
        mean_dh_h /= T(d);
        T* dx = xn.grad_buffer().data.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) dx[c] += (*rstd)[r] * (dh[c] - mean_dh - h[c] * mean_dh_h);
      }
    }
  });
}

namespace detail {
template <typename T>
void softmax_rows(T* data, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = data + r * cols;
    T mx = *std::max_element(row, row + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      total += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
  }
}
}  // namespace detail

/// Row-wise softmax over the last dimension (max-subtracted).
template <typename T>
Var<T> softmax(const Var<T>& x) {
  Tensor<T> out = x.value();
  detail::softmax_rows(out.data.data(), out.rows(), out.last_dim());
  return Var<T>::make(std::move(out), {x}, [](Node<T>& self) {
    const std::size_t cols = self.value.last_dim();
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      const T* y = self.value.data.data() + r * cols;
      const T* dy = self.grad.data.data() + r * cols;
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += y[c] * dy[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (dy[c] - dot);
    }
  });
}

/// Rows of `table` [V, D] selected by `ids`; result shape is `prefix` + [D].
template <typename T>
Var<T> embedding_lookup(const Var<T>& table, std::span<const int> ids, Shape prefix) {
  detail::require(table.shape().size() == 2, "embedding table must be 2-D, got " + shape_str(table.shape()));
  detail::require(numel(prefix) == ids.size(), "embedding ids do not match prefix shape " + shape_str(prefix));
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw Error(ErrorCode::UnknownToken, "id " + std::to_string(id) + " outside table of " + std::to_string(vocab));
    }
  }
  Shape out_shape = std::move(prefix);
  out_shape.push_back(d);
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.value().data.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto kept = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  return Var<T>::make(std::move(out), {table}, [kept, d](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < kept->size(); ++i) {
      T* row = g.data.data() + static_cast<std::size_t>((*kept)[i]) * d;
      for (std::size_t c = 0; c < d; ++c) row[c] += self.grad[i * d + c];
    }
  });
}

/// Multi-head scaled dot-product self-attention core.
/// q, k, v: [B, L, D] with heads laid out as consecutive D/num_heads column
/// blocks. `key_is_pad` has B*L entries; padded keys get an additive -1e9
/// score, so their weight after normalisation is zero.
template <typename T>
Var<T> scaled_dot_product_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t num_heads,
                                    std::span<const std::uint8_t> key_is_pad) {
  const auto& s = q.shape();
  detail::require(s.size() == 3 && k.shape() == s && v.shape() == s,
                  "attention q/k/v shapes " + shape_str(s) + ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
  const std::size_t batch = s[0], len = s[1], dim = s[2];
  detail::require(num_heads > 0 && dim % num_heads == 0,
                  "model width " + std::to_string(dim) + " not divisible by " + std::to_string(num_heads) + " heads");
  detail::require(key_is_pad.size() == batch * len, "padding mask has " + std::to_string(key_is_pad.size()) +
                                                        " entries, expected " + std::to_string(batch * len));
  const std::size_t hd = dim / num_heads;
  const T scale = T(1) / std::sqrt(T(hd));
  const auto L = static_cast<Eigen::Index>(len);
  const auto HD = static_cast<Eigen::Index>(hd);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(dim));

  auto probs = std::make_shared<std::vector<T>>(batch * num_heads * len * len);
  auto pads = std::make_shared<std::vector<std::uint8_t>>(key_is_pad.begin(), key_is_pad.end());
  Tensor<T> out(s);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < num_heads; ++h) {
      const std::size_t off = b * len * dim + h * hd;
      detail::CStridedMap<T> qh(q.value().data.data() + off, L, HD, stride);
      detail::CStridedMap<T> kh(k.value().data.data() + off, L, HD, stride);
      detail::CStridedMap<T> vh(v.value().data.data() + off, L, HD, stride);
      detail::MatMap<T> p(probs->data() + (b * num_heads + h) * len * len, L, L);
      p.noalias() = (qh * kh.transpose()) * scale;
      for (std::size_t j = 0; j < len; ++j) {
        if ((*pads)[b * len + j]) p.col(static_cast<Eigen::Index>(j)).array() += T(kMaskedScore);
      }
      detail::softmax_rows(p.data(), len, len);
      detail::StridedMap<T> oh(out.data.data() + off, L, HD, stride);
      oh.noalias() = p * vh;
    }
  }

  return Var<T>::make(std::move(out), {q, k, v}, [probs, batch, len, dim, num_heads, hd, scale](Node<T>& self) {
    auto& qn = *self.parents[0];
    auto& kn = *self.parents[1];
    auto& vn = *self.parents[2];
    const auto L = static_cast<Eigen::Index>(len);
    const auto HD = static_cast<Eigen::Index>(hd);
    const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(dim));
    detail::RowMat<T> dp(L, L);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < num_heads; ++h) {
        const std::size_t off = b * len * dim + h * hd;
        detail::CMatMap<T> p(probs->data() + (b * num_heads + h) * len * len, L, L);
        detail::CStridedMap<T> doh(self.grad.data.data() + off, L, HD, stride);
        detail::CStridedMap<T> qh(qn.value.data.data() + off, L, HD, stride);
        detail::CStridedMap<T> kh(kn.value.data.data() + off, L, HD, stride);
        detail::CStridedMap<T> vh(vn.value.data.data() + off, L, HD, stride);
        if (vn.requires_grad) {
          detail::StridedMap<T> dvh(vn.grad_buffer().data.data() + off, L, HD, stride);
          dvh.noalias() += p.transpose() * doh;
        }
        if (!qn.requires_grad && !kn.requires_grad) continue;
        dp.noalias() = doh * vh.transpose();
        // d(scores) = P * (dP - rowsum(dP * P))
        const auto rowdot = (dp.array() * p.array()).rowwise().sum().eval();
        dp = (p.array() * (dp.array().colwise() - rowdot)).matrix() * scale;
        if (qn.requires_grad) {
          detail::StridedMap<T> dqh(qn.grad_buffer().data.data() + off, L, HD, stride);
          dqh.noalias() += dp * kh;
        }
        if (kn.requires_grad) {
          detail::StridedMap<T> dkh(kn.grad_buffer().data.data() + off, L, HD, stride);
          dkh.noalias() += dp.transpose() * qh;
        }
      }
    }
  });
}

/// Mean over supervised rows of -log softmax(logits)[target]. `targets` has
/// one entry per logits row; kIgnoreTarget rows are skipped.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> targets) {
  const std::size_t classes = logits.value().last_dim();
  const std::size_t rows = logits.value().rows();
  detail::require(targets.size() == rows, "cross entropy: " + std::to_string(targets.size()) + " targets for " +
                                              std::to_string(rows) + " rows");
  std::size_t count = 0;
  for (int t : targets) {
    if (t == kIgnoreTarget) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw Error(ErrorCode::UnknownToken, "target " + std::to_string(t) + " outside " + std::to_string(classes) + " classes");
    }
    ++count;
  }
  if (count == 0) throw Error(ErrorCode::EmptyBatch, "no supervised positions");

  auto probs = std::make_shared<std::vector<T>>(logits.value().data);
  auto kept = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if ((*kept)[r] == kIgnoreTarget) continue;
    const T* row = logits.value().data.data() + r * classes;
    const T mx = *std::max_element(row, row + classes);
    T z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    total += std::log(z) + mx - row[(*kept)[r]];
    detail::softmax_rows(probs->data() + r * classes, 1, classes);
  }
  const T n = T(count);
  return Var<T>::make(Tensor<T>({1}, total / n), {logits}, [probs, kept, classes, n](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T upstream = self.grad[0] / n;
    for (std::size_t r = 0; r < kept->size(); ++r) {
      const int t = (*kept)[r];
      if (t == kIgnoreTarget) continue;
      for (std::size_t c = 0; c < classes; ++c) {
        const T onehot = static_cast<int>(c) == t ? T(1) : T(0);
        g[r * classes + c] += upstream * ((*probs)[r * classes + c] - onehot);
      }
    }
  });
}

/// |loss - b| + b. Below b the gradient reverses sign, pushing the loss back up.
template <typename T>
T flooded_value(T loss, T b) {
  return std::abs(loss - b) + b;
}

template <typename T>
Var<T> flooded_loss(const Var<T>& loss, T b) {
  detail::require(loss.value().size() == 1, "flooded_loss expects a scalar, got " + shape_str(loss.shape()));
  const T l = loss.value()[0];
  const T sign = l >= b ? T(1) : T(-1);
  return Var<T>::make(Tensor<T>({1}, flooded_value(l, b)), {loss}, [sign](Node<T>& self) {
    self.parents[0]->grad_buffer()[0] += sign * self.grad[0];
  });
}

}  // namespace psae::nn
