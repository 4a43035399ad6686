#pragma once

#include <array>
#include <string>

#include "hemafuse/errors.hpp"
#include "hemafuse/optim.hpp"

namespace hemafuse {

inline constexpr std::array<int, 4> kUnitChoices = {128, 256, 512, 1024};
inline constexpr double kMinLearningRate = 1e-5;
inline constexpr double kMaxLearningRate = 1e-1;
inline constexpr double kMaxMomentum = 0.99;
inline constexpr double kMaxDropout = 0.5;

/// One point of the tuning space. The output activation is always softmax;
/// momentum is kept but ignored by RMSprop.
struct HyperParams {
  int units = 512;
  OptimizerKind optimizer = OptimizerKind::SGD;
  double learning_rate = 0.01;
  double momentum = 0.3;
  double dropout_rate = 0.4;

  static constexpr const char* activation = "softmax";

  void validate() const {
    bool unit_ok = false;
    for (int u : kUnitChoices) unit_ok = unit_ok || u == units;
    if (!unit_ok) throw ArgumentError("units must be one of 128/256/512/1024, got " + std::to_string(units));
    if (!(learning_rate >= kMinLearningRate && learning_rate <= kMaxLearningRate))
      throw ArgumentError("learning rate outside [1e-5, 1e-1]: " + std::to_string(learning_rate));
    if (!(momentum >= 0.0 && momentum <= kMaxMomentum))
      throw ArgumentError("momentum outside [0, 0.99]: " + std::to_string(momentum));
    if (!(dropout_rate >= 0.0 && dropout_rate <= kMaxDropout))
      throw ArgumentError("dropout outside [0, 0.5]: " + std::to_string(dropout_rate));
  }

  bool operator==(const HyperParams&) const = default;
};

}  // namespace hemafuse
