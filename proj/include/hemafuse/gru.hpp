#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "hemafuse/errors.hpp"
#include "hemafuse/tape.hpp"
#include "hemafuse/tensor.hpp"

// Gated recurrent unit.
//
//   R_t = sigmoid(X_t w_xr + H_{t-1} w_hr + b_r)          reset gate
//   U_t = sigmoid(X_t w_xz + H_{t-1} w_hz + b_z)          update gate
//   C_t = tanh(X_t w_xh + (R_t * H_{t-1}) w_hh + b_h)     candidate state
//   H_t = U_t * H_{t-1} + (1 - U_t) * C_t
//
// The update gate weights the previous state; U_t -> 1 keeps H_{t-1}.
namespace hemafuse {

template <typename Scalar>
struct GruParams {
  Tensor<Scalar> w_xr, w_hr, b_r;
  Tensor<Scalar> w_xz, w_hz, b_z;
  Tensor<Scalar> w_xh, w_hh, b_h;

  Index input_dim() const { return w_xr.dim(0); }
  Index hidden_dim() const { return w_xr.dim(1); }

  static GruParams zeros(Index input_dim, Index hidden_dim) {
    GruParams p;
    for (auto* w : {&p.w_xr, &p.w_xz, &p.w_xh}) *w = Tensor<Scalar>({input_dim, hidden_dim});
    for (auto* w : {&p.w_hr, &p.w_hz, &p.w_hh}) *w = Tensor<Scalar>({hidden_dim, hidden_dim});
    for (auto* b : {&p.b_r, &p.b_z, &p.b_h}) *b = Tensor<Scalar>({hidden_dim});
    return p;
  }

  std::array<const Tensor<Scalar>*, 9> all() const {
    return {&w_xr, &w_hr, &b_r, &w_xz, &w_hz, &b_z, &w_xh, &w_hh, &b_h};
  }
  std::array<Tensor<Scalar>*, 9> all() {
    return {&w_xr, &w_hr, &b_r, &w_xz, &w_hz, &b_z, &w_xh, &w_hh, &b_h};
  }

  void validate() const {
    const Index d = input_dim(), u = hidden_dim();
    auto expect = [](const Tensor<Scalar>& t, const Shape& s, const char* name) {
      if (t.shape() != s)
        throw ShapeError(std::string("gru: ") + name + " has shape " + shape_string(t.shape()) +
                         ", expected " + shape_string(s));
    };
    expect(w_xz, {d, u}, "w_xz");
    expect(w_xh, {d, u}, "w_xh");
    expect(w_hr, {u, u}, "w_hr");
    expect(w_hz, {u, u}, "w_hz");
    expect(w_hh, {u, u}, "w_hh");
    expect(b_r, {u}, "b_r");
    expect(b_z, {u}, "b_z");
    expect(b_h, {u}, "b_h");
  }
};

namespace gru_detail {

template <typename Scalar>
using Mat = RowMatrix<Scalar>;
template <typename Scalar>
using CMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using MMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
struct Weights {
  CMap<Scalar> w_xr, w_hr, w_xz, w_hz, w_xh, w_hh;
  Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> b_r, b_z, b_h;

  explicit Weights(const GruParams<Scalar>& p)
      : w_xr(p.w_xr.ptr(), p.w_xr.dim(0), p.w_xr.dim(1)),
        w_hr(p.w_hr.ptr(), p.w_hr.dim(0), p.w_hr.dim(1)),
        w_xz(p.w_xz.ptr(), p.w_xz.dim(0), p.w_xz.dim(1)),
        w_hz(p.w_hz.ptr(), p.w_hz.dim(0), p.w_hz.dim(1)),
        w_xh(p.w_xh.ptr(), p.w_xh.dim(0), p.w_xh.dim(1)),
        w_hh(p.w_hh.ptr(), p.w_hh.dim(0), p.w_hh.dim(1)),
        b_r(p.b_r.ptr(), p.b_r.size()),
        b_z(p.b_z.ptr(), p.b_z.size()),
        b_h(p.b_h.ptr(), p.b_h.size()) {}
};

/// Activations of one step, kept for the backward pass.
template <typename Scalar>
struct Step {
  Mat<Scalar> x, h_prev, r, z, c, h;
};

template <typename Scalar>
void forward(const Weights<Scalar>& w, Step<Scalar>& s) {
  auto sig = [](const auto& a) { return (Scalar(1) / (Scalar(1) + (-a.array()).exp())).matrix(); };
  Mat<Scalar> a = s.x * w.w_xr + s.h_prev * w.w_hr;
  a.rowwise() += w.b_r;
  s.r = sig(a);
  a.noalias() = s.x * w.w_xz + s.h_prev * w.w_hz;
  a.rowwise() += w.b_z;
  s.z = sig(a);
  const Mat<Scalar> rh = s.r.cwiseProduct(s.h_prev);
  a.noalias() = s.x * w.w_xh + rh * w.w_hh;
  a.rowwise() += w.b_h;
  s.c = a.array().tanh().matrix();
  s.h = (s.z.array() * s.h_prev.array() + (Scalar(1) - s.z.array()) * s.c.array()).matrix();
}

/// Gradient accumulators; null entries are skipped.
template <typename Scalar>
struct Grads {
  std::array<typename Tensor<Scalar>::Array*, 9> p{};  // same order as GruParams::all()
};

/// Given dL/dH_t, accumulates parameter grads and returns (dL/dX_t, dL/dH_{t-1}).
template <typename Scalar>
std::pair<Mat<Scalar>, Mat<Scalar>> backward(const Weights<Scalar>& w, const Step<Scalar>& s,
                                             const Mat<Scalar>& dh, Grads<Scalar>& g,
                                             bool need_dx) {
  const Index d = s.x.cols(), u = s.h.cols();
  const auto Z = s.z.array();
  Mat<Scalar> dh_prev = (dh.array() * Z).matrix();
  const Mat<Scalar> dc = (dh.array() * (Scalar(1) - Z)).matrix();
  const Mat<Scalar> dz = (dh.array() * (s.h_prev.array() - s.c.array())).matrix();

  const Mat<Scalar> da_c = (dc.array() * (Scalar(1) - s.c.array().square())).matrix();
  const Mat<Scalar> da_z = (dz.array() * Z * (Scalar(1) - Z)).matrix();
  const Mat<Scalar> rh = s.r.cwiseProduct(s.h_prev);
  const Mat<Scalar> drh = da_c * w.w_hh.transpose();
  const Mat<Scalar> dr = drh.cwiseProduct(s.h_prev);
  dh_prev += drh.cwiseProduct(s.r);
  const Mat<Scalar> da_r = (dr.array() * s.r.array() * (Scalar(1) - s.r.array())).matrix();

  auto acc_w = [&](int slot, const Mat<Scalar>& in, const Mat<Scalar>& da, Index rows) {
    if (auto* t = g.p[static_cast<std::size_t>(slot)])
      MMap<Scalar>(t->data(), rows, u).noalias() += in.transpose() * da;
  };
  auto acc_b = [&](int slot, const Mat<Scalar>& da) {
    if (auto* t = g.p[static_cast<std::size_t>(slot)])
      t->matrix() += da.colwise().sum().transpose();
  };
  acc_w(0, s.x, da_r, d);
  acc_w(1, s.h_prev, da_r, u);
  acc_b(2, da_r);
  acc_w(3, s.x, da_z, d);
  acc_w(4, s.h_prev, da_z, u);
  acc_b(5, da_z);
  acc_w(6, s.x, da_c, d);
  acc_w(7, rh, da_c, u);
  acc_b(8, da_c);

  dh_prev.noalias() += da_r * w.w_hr.transpose();
  dh_prev.noalias() += da_z * w.w_hz.transpose();
  Mat<Scalar> dx;
  if (need_dx)
    dx = da_r * w.w_xr.transpose() + da_z * w.w_xz.transpose() + da_c * w.w_xh.transpose();
  return {std::move(dx), std::move(dh_prev)};
}

template <typename Scalar>
void check_inputs(const Tensor<Scalar>& x, Index steps_rank, const Tensor<Scalar>& h,
                  const GruParams<Scalar>& p) {
  p.validate();
  const Index d = p.input_dim(), u = p.hidden_dim();
  const bool ok = x.rank() == steps_rank && h.rank() == 2 && x.shape().back() == d &&
                  h.dim(1) == u && x.dim(0) == h.dim(0);
  if (!ok)
    throw ShapeError("gru: input " + shape_string(x.shape()) + " / state " +
                     shape_string(h.shape()) + " incompatible with input_dim " +
                     std::to_string(d) + ", hidden_dim " + std::to_string(u));
}

/// Copies time step t of xs:[N,T,D] into an N x D matrix.
template <typename Scalar>
Mat<Scalar> step_input(const Tensor<Scalar>& xs, Index t) {
  const Index n = xs.dim(0), steps = xs.dim(1), d = xs.dim(2);
  Mat<Scalar> x(n, d);
  for (Index b = 0; b < n; ++b)
    x.row(b) = Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(
        xs.ptr() + (b * steps + t) * d, d);
  return x;
}

}  // namespace gru_detail

/// One GRU step: x:[N,D], h_prev:[N,U] -> h:[N,U].
template <typename Scalar>
Tensor<Scalar> gru_cell(const Tensor<Scalar>& x, const Tensor<Scalar>& h_prev,
                        const GruParams<Scalar>& p) {
  gru_detail::check_inputs(x, 2, h_prev, p);
  const gru_detail::Weights<Scalar> w(p);
  gru_detail::Step<Scalar> s{x.matrix(), h_prev.matrix(), {}, {}, {}, {}};
  gru_detail::forward(w, s);
  Tensor<Scalar> out(h_prev.shape());
  out.matrix() = s.h;
  return out;
}

/// Left fold of gru_cell over xs:[N,T,D]; returns the final state.
template <typename Scalar>
Tensor<Scalar> gru_sequence(const Tensor<Scalar>& xs, const Tensor<Scalar>& h0,
                            const GruParams<Scalar>& p) {
  if (xs.rank() == 3 && xs.dim(1) == 0) throw ArgumentError("gru_sequence: empty sequence");
  gru_detail::check_inputs(xs, 3, h0, p);
  const gru_detail::Weights<Scalar> w(p);
  gru_detail::Step<Scalar> s;
  s.h = h0.matrix();
  for (Index t = 0; t < xs.dim(1); ++t) {
    s.x = gru_detail::step_input(xs, t);
    s.h_prev = s.h;
    gru_detail::forward(w, s);
  }
  Tensor<Scalar> out(h0.shape());
  out.matrix() = s.h;
  return out;
}

/// Tape handles for the nine GRU parameters, ordered as GruParams::all().
template <typename Scalar>
struct GruVars {
  std::array<typename Tape<Scalar>::Var, 9> v;
};

namespace gru_detail {

template <typename Scalar>
GruParams<Scalar> gather(const Tape<Scalar>& t, const GruVars<Scalar>& vars) {
  GruParams<Scalar> p;
  std::array<Tensor<Scalar>*, 9> slots = {&p.w_xr, &p.w_hr, &p.b_r, &p.w_xz, &p.w_hz,
                                          &p.b_z,  &p.w_xh, &p.w_hh, &p.b_h};
  for (std::size_t i = 0; i < 9; ++i) *slots[i] = t.value(vars.v[i]);
  return p;
}

template <typename Scalar>
Grads<Scalar> grad_slots(Tape<Scalar>& t, const std::vector<int>& inputs, std::size_t offset) {
  Grads<Scalar> g;
  for (std::size_t i = 0; i < 9; ++i) {
    const int id = inputs[offset + i];
    g.p[i] = t.requires_grad(id) ? &t.accumulator(id) : nullptr;
  }
  return g;
}

}  // namespace gru_detail

namespace nn {

/// Differentiable single GRU step.
template <typename Scalar>
typename Tape<Scalar>::Var gru_cell(Tape<Scalar>& t, typename Tape<Scalar>::Var x,
                                    typename Tape<Scalar>::Var h_prev, const GruVars<Scalar>& vars) {
  auto params = std::make_shared<GruParams<Scalar>>(gru_detail::gather(t, vars));
  const auto& X = t.value(x);
  const auto& H = t.value(h_prev);
  gru_detail::check_inputs(X, 2, H, *params);
  auto step = std::make_shared<gru_detail::Step<Scalar>>();
  step->x = X.matrix();
  step->h_prev = H.matrix();
  gru_detail::forward(gru_detail::Weights<Scalar>(*params), *step);
  Tensor<Scalar> out(H.shape());
  out.matrix() = step->h;

  std::vector<int> inputs = {x.id, h_prev.id};
  for (const auto& v : vars.v) inputs.push_back(v.id);
  return t.record("gru_cell", std::move(out), inputs, [=](Tape<Scalar>& tp, int self) {
    const auto& ins = tp.inputs(self);
    auto g = gru_detail::grad_slots(tp, ins, 2);
    const Index n = step->h.rows(), u = step->h.cols();
    gru_detail::Mat<Scalar> dh = gru_detail::CMap<Scalar>(tp.incoming(self).data(), n, u);
    const bool need_dx = tp.requires_grad(ins[0]);
    auto [dx, dh_prev] =
        gru_detail::backward(gru_detail::Weights<Scalar>(*params), *step, dh, g, need_dx);
    if (need_dx) gru_detail::MMap<Scalar>(tp.accumulator(ins[0]).data(), n, dx.cols()) += dx;
    if (tp.requires_grad(ins[1])) gru_detail::MMap<Scalar>(tp.accumulator(ins[1]).data(), n, u) += dh_prev;
  });
}

/// Differentiable GRU over xs:[N,T,D] returning the final state; the whole
/// unrolled recurrence is one tape node with its own BPTT.
template <typename Scalar>
typename Tape<Scalar>::Var gru_sequence(Tape<Scalar>& t, typename Tape<Scalar>::Var xs,
                                        typename Tape<Scalar>::Var h0, const GruVars<Scalar>& vars) {
  auto params = std::make_shared<GruParams<Scalar>>(gru_detail::gather(t, vars));
  const auto& X = t.value(xs);
  const auto& H0 = t.value(h0);
  gru_detail::check_inputs(X, 3, H0, *params);
  const Index steps = X.dim(1), n = X.dim(0);
  const gru_detail::Weights<Scalar> w(*params);
  auto cache = std::make_shared<std::vector<gru_detail::Step<Scalar>>>(static_cast<std::size_t>(steps));
  gru_detail::Mat<Scalar> h = H0.matrix();
  for (Index s = 0; s < steps; ++s) {
    auto& st = (*cache)[static_cast<std::size_t>(s)];
    st.x = gru_detail::step_input(X, s);
    st.h_prev = std::move(h);
    gru_detail::forward(w, st);
    h = st.h;
  }
  Tensor<Scalar> out(H0.shape());
  out.matrix() = h;

  std::vector<int> inputs = {xs.id, h0.id};
  for (const auto& v : vars.v) inputs.push_back(v.id);
  return t.record("gru_sequence", std::move(out), inputs, [=](Tape<Scalar>& tp, int self) {
    const auto& ins = tp.inputs(self);
    auto g = gru_detail::grad_slots(tp, ins, 2);
    const gru_detail::Weights<Scalar> wb(*params);
    const Index u = params->hidden_dim(), d = params->input_dim();
    gru_detail::Mat<Scalar> dh = gru_detail::CMap<Scalar>(tp.incoming(self).data(), n, u);
    const bool need_dx = tp.requires_grad(ins[0]);
    for (Index s = steps - 1; s >= 0; --s) {
      auto [dx, dh_prev] =
          gru_detail::backward(wb, (*cache)[static_cast<std::size_t>(s)], dh, g, need_dx);
      if (need_dx) {
        auto& acc = tp.accumulator(ins[0]);
        for (Index b = 0; b < n; ++b)
          acc.segment((b * steps + s) * d, d) += dx.row(b).transpose().array();
      }
      dh = std::move(dh_prev);
    }
    if (tp.requires_grad(ins[1])) gru_detail::MMap<Scalar>(tp.accumulator(ins[1]).data(), n, u) += dh;
  });
}

}  // namespace nn

}  // namespace hemafuse
