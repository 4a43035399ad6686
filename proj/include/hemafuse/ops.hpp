#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hemafuse/errors.hpp"
#include "hemafuse/rng.hpp"
#include "hemafuse/tape.hpp"
#include "hemafuse/tensor.hpp"

// Differentiable layer primitives. Every op takes the tape, reads its input
// values, records the output and (when needed) a closure computing the
// vector-Jacobian product. Image tensors are NHWC.
namespace hemafuse::nn {

template <typename Scalar>
using Var = typename Tape<Scalar>::Var;

namespace detail {

inline void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank)
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_string(s));
}

template <typename Scalar>
typename Tape<Scalar>::Array* grad_target(Tape<Scalar>& t, int id) {
  return t.requires_grad(id) ? &t.accumulator(id) : nullptr;
}

}  // namespace detail

/// Valid-padding, stride-1 cross-correlation. x:[N,H,W,Cin], k:[kh,kw,Cin,Cout].
/// Lowered to one GEMM over an im2col buffer.
template <typename Scalar>
Var<Scalar> conv2d(Tape<Scalar>& t, Var<Scalar> x, Var<Scalar> k) {
  const auto& X = t.value(x);
  const auto& K = t.value(k);
  detail::require_rank(X.shape(), 4, "conv2d", "input");
  detail::require_rank(K.shape(), 4, "conv2d", "kernel");
  const Index n = X.dim(0), h = X.dim(1), w = X.dim(2), c = X.dim(3);
  const Index kh = K.dim(0), kw = K.dim(1), co = K.dim(3);
  if (K.dim(2) != c || kh > h || kw > w)
    throw ShapeError("conv2d: input " + shape_string(X.shape()) + " incompatible with kernel " +
                     shape_string(K.shape()));
  const Index ho = h - kh + 1, wo = w - kw + 1, patch = kh * kw * c, span = kw * c;

  auto col = std::make_shared<RowMatrix<Scalar>>(n * ho * wo, patch);
  for (Index b = 0; b < n; ++b)
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        Scalar* dst = col->data() + ((b * ho + oy) * wo + ox) * patch;
        for (Index dy = 0; dy < kh; ++dy) {
          const Scalar* src = X.ptr() + ((b * h + oy + dy) * w + ox) * c;
          std::copy(src, src + span, dst + dy * span);
        }
      }

  Tensor<Scalar> out({n, ho, wo, co});
  out.matrix(n * ho * wo, co).noalias() = *col * K.matrix(patch, co);

  return t.record("conv2d", std::move(out), {x.id, k.id},
                  [=](Tape<Scalar>& tp, int self) {
                    const auto& g = tp.incoming(self);
                    Eigen::Map<const RowMatrix<Scalar>> G(g.data(), n * ho * wo, co);
                    if (auto* dk = detail::grad_target(tp, k.id)) {
                      Eigen::Map<RowMatrix<Scalar>> DK(dk->data(), patch, co);
                      DK.noalias() += col->transpose() * G;
                    }
                    if (auto* dx = detail::grad_target(tp, x.id)) {
                      const auto& kv = tp.value(Var<Scalar>{k.id});
                      RowMatrix<Scalar> dcol = G * kv.matrix(patch, co).transpose();
                      for (Index b = 0; b < n; ++b)
                        for (Index oy = 0; oy < ho; ++oy)
                          for (Index ox = 0; ox < wo; ++ox) {
                            const Scalar* src = dcol.data() + ((b * ho + oy) * wo + ox) * patch;
                            for (Index dy = 0; dy < kh; ++dy) {
                              Scalar* dst = dx->data() + ((b * h + oy + dy) * w + ox) * c;
                              for (Index i = 0; i < span; ++i) dst[i] += src[dy * span + i];
                            }
                          }
                    }
                  });
}

/// Adds b:[C] along the last dimension of x.
template <typename Scalar>
Var<Scalar> add_bias(Tape<Scalar>& t, Var<Scalar> x, Var<Scalar> b) {
  const auto& X = t.value(x);
  const auto& B = t.value(b);
  detail::require_rank(B.shape(), 1, "add_bias", "bias");
  if (B.dim(0) != X.shape().back())
    throw ShapeError("add_bias: bias " + shape_string(B.shape()) + " does not match input " +
                     shape_string(X.shape()));
  const Index c = B.dim(0), rows = X.size() / c;
  Tensor<Scalar> out = X;
  out.matrix(rows, c).rowwise() += B.data().matrix().transpose();
  return t.record("add_bias", std::move(out), {x.id, b.id}, [=](Tape<Scalar>& tp, int self) {
    const auto& g = tp.incoming(self);
    if (auto* dx = detail::grad_target(tp, x.id)) *dx += g;
    if (auto* db = detail::grad_target(tp, b.id)) {
      Eigen::Map<const RowMatrix<Scalar>> G(g.data(), rows, c);
      db->matrix() += G.colwise().sum().transpose();
    }
  });
}

/// Max pooling over window x window patches with the given stride.
template <typename Scalar>
Var<Scalar> maxpool2d(Tape<Scalar>& t, Var<Scalar> x, Index window = 2, Index stride = 2) {
  const auto& X = t.value(x);
  detail::require_rank(X.shape(), 4, "maxpool2d", "input");
  const Index n = X.dim(0), h = X.dim(1), w = X.dim(2), c = X.dim(3);
  if (window < 1 || stride < 1 || window > h || window > w)
    throw ShapeError("maxpool2d: window " + std::to_string(window) + " larger than input " +
                     shape_string(X.shape()));
  const Index ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
  Tensor<Scalar> out({n, ho, wo, c});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.size()));
  Index o = 0;
  for (Index b = 0; b < n; ++b)
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox)
        for (Index ch = 0; ch < c; ++ch, ++o) {
          Index best = ((b * h + oy * stride) * w + ox * stride) * c + ch;
          for (Index dy = 0; dy < window; ++dy)
            for (Index dx = 0; dx < window; ++dx) {
              const Index idx = ((b * h + oy * stride + dy) * w + ox * stride + dx) * c + ch;
              if (X[idx] > X[best]) best = idx;
            }
          out[o] = X[best];
          (*argmax)[static_cast<std::size_t>(o)] = best;
        }
  return t.record("maxpool2d", std::move(out), {x.id}, [=](Tape<Scalar>& tp, int self) {
    const auto& g = tp.incoming(self);
    if (auto* dx = detail::grad_target(tp, x.id))
      for (Index i = 0; i < g.size(); ++i) (*dx)[(*argmax)[static_cast<std::size_t>(i)]] += g[i];
  });
}

/// x:[N,D] * W:[D,U] + b:[U].
template <typename Scalar>
Var<Scalar> dense(Tape<Scalar>& t, Var<Scalar> x, Var<Scalar> w, Var<Scalar> b) {
  const auto& X = t.value(x);
  const auto& W = t.value(w);
  const auto& B = t.value(b);
  detail::require_rank(X.shape(), 2, "dense", "input");
  detail::require_rank(W.shape(), 2, "dense", "weight");
  detail::require_rank(B.shape(), 1, "dense", "bias");
  const Index n = X.dim(0), d = X.dim(1), u = W.dim(1);
  if (W.dim(0) != d || B.dim(0) != u)
    throw ShapeError("dense: input " + shape_string(X.shape()) + ", weight " +
                     shape_string(W.shape()) + ", bias " + shape_string(B.shape()));
  Tensor<Scalar> out({n, u});
  out.matrix().noalias() = X.matrix() * W.matrix();
  out.matrix().rowwise() += B.data().matrix().transpose();
  return t.record("dense", std::move(out), {x.id, w.id, b.id}, [=](Tape<Scalar>& tp, int self) {
    Eigen::Map<const RowMatrix<Scalar>> G(tp.incoming(self).data(), n, u);
    const auto& xv = tp.value(Var<Scalar>{x.id});
    const auto& wv = tp.value(Var<Scalar>{w.id});
    if (auto* dw = detail::grad_target(tp, w.id))
      Eigen::Map<RowMatrix<Scalar>>(dw->data(), d, u).noalias() += xv.matrix().transpose() * G;
    if (auto* db = detail::grad_target(tp, b.id)) db->matrix() += G.colwise().sum().transpose();
    if (auto* dx = detail::grad_target(tp, x.id))
      Eigen::Map<RowMatrix<Scalar>>(dx->data(), n, d).noalias() += G * wv.matrix().transpose();
  });
}

template <typename Scalar>
Var<Scalar> relu(Tape<Scalar>& t, Var<Scalar> x) {
  Tensor<Scalar> out = t.value(x);
  out.data() = out.data().max(Scalar(0));
  return t.record("relu", std::move(out), {x.id}, [=](Tape<Scalar>& tp, int self) {
    if (auto* dx = detail::grad_target(tp, x.id))
      *dx += (tp.value(Var<Scalar>{x.id}).data() > Scalar(0)).select(tp.incoming(self), Scalar(0));
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(Tape<Scalar>& t, Var<Scalar> x) {
  Tensor<Scalar> out = t.value(x);
  out.data() = Scalar(1) / (Scalar(1) + (-out.data()).exp());
  return t.record("sigmoid", std::move(out), {x.id}, [=](Tape<Scalar>& tp, int self) {
    if (auto* dx = detail::grad_target(tp, x.id)) {
      const auto& y = tp.value(Var<Scalar>{self}).data();
      *dx += tp.incoming(self) * y * (Scalar(1) - y);
    }
  });
}

template <typename Scalar>
Var<Scalar> tanh_op(Tape<Scalar>& t, Var<Scalar> x) {
  Tensor<Scalar> out = t.value(x);
  out.data() = out.data().tanh();
  return t.record("tanh", std::move(out), {x.id}, [=](Tape<Scalar>& tp, int self) {
    if (auto* dx = detail::grad_target(tp, x.id)) {
      const auto& y = tp.value(Var<Scalar>{self}).data();
      *dx += tp.incoming(self) * (Scalar(1) - y.square());
    }
  });
}

/// Row-wise softmax of x:[N,K], max-subtracted.
template <typename Scalar>
Var<Scalar> softmax(Tape<Scalar>& t, Var<Scalar> x) {
  const auto& X = t.value(x);
  detail::require_rank(X.shape(), 2, "softmax", "input");
  const Index n = X.dim(0), k = X.dim(1);
  Tensor<Scalar> out = X;
  auto Y = out.matrix();
  for (Index r = 0; r < n; ++r) {
    auto row = Y.row(r).array();
    row = (row - row.maxCoeff()).exp();
    row /= row.sum();
  }
  return t.record("softmax", std::move(out), {x.id}, [=](Tape<Scalar>& tp, int self) {
    if (auto* dx = detail::grad_target(tp, x.id)) {
      Eigen::Map<const RowMatrix<Scalar>> G(tp.incoming(self).data(), n, k);
      const auto Yv = tp.value(Var<Scalar>{self}).matrix(n, k);
      Eigen::Map<RowMatrix<Scalar>> DX(dx->data(), n, k);
      for (Index r = 0; r < n; ++r) {
        const Scalar dot = G.row(r).dot(Yv.row(r));
        DX.row(r).array() += Yv.row(r).array() * (G.row(r).array() - dot);
      }
    }
  });
}

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over rows of -log(max(p[label], 1e-12)). Returns a [1] tensor.
template <typename Scalar>
Var<Scalar> cross_entropy(Tape<Scalar>& t, Var<Scalar> probs, std::span<const int> labels) {
  const auto& P = t.value(probs);
  detail::require_rank(P.shape(), 2, "cross_entropy", "probabilities");
  const Index n = P.dim(0), k = P.dim(1);
  if (static_cast<Index>(labels.size()) != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  double total = 0.0;
  for (Index r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= k)
      throw ArgumentError("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                          std::to_string(k) + ")");
    total -= std::log(std::max(static_cast<double>(P.at(r, y)), kProbabilityFloor));
  }
  std::vector<int> ys(labels.begin(), labels.end());
  return t.record("cross_entropy", Tensor<Scalar>({1}, static_cast<Scalar>(total / n)), {probs.id},
                  [=, ys = std::move(ys)](Tape<Scalar>& tp, int self) {
                    if (auto* dp = detail::grad_target(tp, probs.id)) {
                      const Scalar g = tp.incoming(self)[0];
                      const auto& pv = tp.value(Var<Scalar>{probs.id});
                      for (Index r = 0; r < n; ++r) {
                        const Index at = r * k + ys[static_cast<std::size_t>(r)];
                        const double p = static_cast<double>(pv[at]);
                        if (p > kProbabilityFloor) (*dp)[at] -= g / static_cast<Scalar>(n * p);
                      }
                    }
                  });
}

/// Inverted dropout. At inference (or rate 0) returns x itself, unchanged.
template <typename Scalar>
Var<Scalar> dropout(Tape<Scalar>& t, Var<Scalar> x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ArgumentError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const auto& X = t.value(x);
  auto mask = std::make_shared<typename Tape<Scalar>::Array>(X.size());
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  for (Index i = 0; i < X.size(); ++i) (*mask)[i] = rng.uniform() >= rate ? keep_scale : Scalar(0);
  Tensor<Scalar> out(X.shape(), X.data() * *mask);
  return t.record("dropout", std::move(out), {x.id}, [=](Tape<Scalar>& tp, int self) {
    if (auto* dx = detail::grad_target(tp, x.id)) *dx += tp.incoming(self) * *mask;
  });
}

template <typename Scalar>
Var<Scalar> reshape(Tape<Scalar>& t, Var<Scalar> x, Shape shape) {
  Tensor<Scalar> out = t.value(x).reshaped(std::move(shape));
  return t.record("reshape", std::move(out), {x.id}, [=](Tape<Scalar>& tp, int self) {
    if (auto* dx = detail::grad_target(tp, x.id)) *dx += tp.incoming(self);
  });
}

/// [N, ...] -> [N, prod(...)].
template <typename Scalar>
Var<Scalar> flatten(Tape<Scalar>& t, Var<Scalar> x) {
  const auto& X = t.value(x);
  return reshape(t, x, Shape{X.dim(0), X.size() / X.dim(0)});
}

/// Concatenates two tensors along their last dimension.
template <typename Scalar>
Var<Scalar> concat_last(Tape<Scalar>& t, Var<Scalar> a, Var<Scalar> b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  Shape lead_a(A.shape().begin(), A.shape().end() - 1);
  Shape lead_b(B.shape().begin(), B.shape().end() - 1);
  if (lead_a != lead_b)
    throw ShapeError("concat_last: " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  const Index ca = A.shape().back(), cb = B.shape().back(), rows = A.size() / ca;
  Shape s = lead_a;
  s.push_back(ca + cb);
  Tensor<Scalar> out(s);
  auto O = out.matrix(rows, ca + cb);
  O.leftCols(ca) = A.matrix(rows, ca);
  O.rightCols(cb) = B.matrix(rows, cb);
  return t.record("concat", std::move(out), {a.id, b.id}, [=](Tape<Scalar>& tp, int self) {
    Eigen::Map<const RowMatrix<Scalar>> G(tp.incoming(self).data(), rows, ca + cb);
    if (auto* da = detail::grad_target(tp, a.id))
      Eigen::Map<RowMatrix<Scalar>>(da->data(), rows, ca) += G.leftCols(ca);
    if (auto* db = detail::grad_target(tp, b.id))
      Eigen::Map<RowMatrix<Scalar>>(db->data(), rows, cb) += G.rightCols(cb);
  });
}

/// Removes `border` pixels from each spatial edge of x:[N,H,W,C].
template <typename Scalar>
Var<Scalar> crop(Tape<Scalar>& t, Var<Scalar> x, Index border) {
  const auto& X = t.value(x);
  detail::require_rank(X.shape(), 4, "crop", "input");
  const Index n = X.dim(0), h = X.dim(1), w = X.dim(2), c = X.dim(3);
  if (border < 0 || 2 * border >= h || 2 * border >= w)
    throw ShapeError("crop: border " + std::to_string(border) + " too large for " +
                     shape_string(X.shape()));
  const Index ho = h - 2 * border, wo = w - 2 * border;
  Tensor<Scalar> out({n, ho, wo, c});
  for (Index b = 0; b < n; ++b)
    for (Index y = 0; y < ho; ++y) {
      const Scalar* src = X.ptr() + ((b * h + y + border) * w + border) * c;
      std::copy(src, src + wo * c, out.ptr() + (b * ho + y) * wo * c);
    }
  return t.record("crop", std::move(out), {x.id}, [=](Tape<Scalar>& tp, int self) {
    if (auto* dx = detail::grad_target(tp, x.id)) {
      const auto& g = tp.incoming(self);
      for (Index b = 0; b < n; ++b)
        for (Index y = 0; y < ho; ++y) {
          Scalar* dst = dx->data() + ((b * h + y + border) * w + border) * c;
          const Scalar* src = g.data() + (b * ho + y) * wo * c;
          for (Index i = 0; i < wo * c; ++i) dst[i] += src[i];
        }
    }
  });
}

/// Spatial grid to sequence: [N,h,w,c] -> [N,h*w,c], steps in row-major
/// position order.
template <typename Scalar>
Tensor<Scalar> features_to_sequence(const Tensor<Scalar>& fm) {
  detail::require_rank(fm.shape(), 4, "features_to_sequence", "feature map");
  return fm.reshaped({fm.dim(0), fm.dim(1) * fm.dim(2), fm.dim(3)});
}

template <typename Scalar>
Var<Scalar> features_to_sequence(Tape<Scalar>& t, Var<Scalar> fm) {
  const auto& F = t.value(fm);
  detail::require_rank(F.shape(), 4, "features_to_sequence", "feature map");
  return reshape(t, fm, Shape{F.dim(0), F.dim(1) * F.dim(2), F.dim(3)});
}

}  // namespace hemafuse::nn
