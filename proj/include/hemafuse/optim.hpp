#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hemafuse/errors.hpp"
#include "hemafuse/params.hpp"

namespace hemafuse {

enum class OptimizerKind { SGD, RMSprop };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::SGD ? "SGD" : "RMSprop"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "SGD" || s == "sgd") return OptimizerKind::SGD;
  if (s == "RMSprop" || s == "rmsprop") return OptimizerKind::RMSprop;
  throw ArgumentError("unknown optimizer '" + s + "'");
}

/// Per-run optimizer state. `accumulators` holds the SGD velocity or the
/// RMSprop running mean of squared gradients.
template <typename Scalar>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::SGD;
  double learning_rate = 0.01;
  double momentum = 0.0;
  double decay_rate = 0.9;
  ParameterSet<Scalar> accumulators;

  static OptimizerState make(OptimizerKind kind, double learning_rate, double momentum,
                             const ParameterSet<Scalar>& params, double decay_rate = 0.9) {
    if (!(learning_rate > 0.0))
      throw ArgumentError("learning rate must be positive, got " + std::to_string(learning_rate));
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw ArgumentError("momentum must be in [0,1), got " + std::to_string(momentum));
    if (!(decay_rate >= 0.0 && decay_rate < 1.0))
      throw ArgumentError("decay rate must be in [0,1), got " + std::to_string(decay_rate));
    return OptimizerState{kind, learning_rate, momentum, decay_rate, params.zeros_like()};
  }
};

/// v <- m v + g;  theta <- theta - lr v
template <typename Scalar>
void sgd_step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads,
              OptimizerState<Scalar>& state) {
  params.require_same_layout(grads);
  params.require_same_layout(state.accumulators);
  const auto lr = static_cast<Scalar>(state.learning_rate);
  const auto m = static_cast<Scalar>(state.momentum);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = state.accumulators.at(i).second.data();
    v = m * v + grads.at(i).second.data();
    params.at(i).second.data() -= lr * v;
  }
}

/// s <- rho s + (1 - rho) g^2;  theta <- theta - lr g / sqrt(s + 1e-8)
template <typename Scalar>
void rmsprop_step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads,
                  OptimizerState<Scalar>& state) {
  params.require_same_layout(grads);
  params.require_same_layout(state.accumulators);
  const auto lr = static_cast<Scalar>(state.learning_rate);
  const auto rho = static_cast<Scalar>(state.decay_rate);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads.at(i).second.data();
    auto& s = state.accumulators.at(i).second.data();
    s = rho * s + (Scalar(1) - rho) * g.square();
    params.at(i).second.data() -= lr * g / (s + Scalar(1e-8)).sqrt();
  }
}

template <typename Scalar>
void optimizer_step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads,
                    OptimizerState<Scalar>& state) {
  if (state.kind == OptimizerKind::SGD)
    sgd_step(params, grads, state);
  else
    rmsprop_step(params, grads, state);
}

}  // namespace hemafuse
