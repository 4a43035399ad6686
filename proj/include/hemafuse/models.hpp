#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hemafuse/gru.hpp"
#include "hemafuse/hyperparams.hpp"
#include "hemafuse/image.hpp"
#include "hemafuse/ops.hpp"
#include "hemafuse/params.hpp"

namespace hemafuse {

/// Per-class probability scores of one image (index 0 = not ALL, 1 = ALL).
using ScoreVector = Eigen::VectorXd;

/// A: inception-like (parallel 3x3 and 1x1 branches, concatenated).
/// B: mobile-like (3x3 conv paired with a pointwise 1x1 conv).
/// C: efficient-like (deeper plain stack of wider 3x3 convs).
enum class ArchId { A, B, C };
inline constexpr std::array<ArchId, 3> kAllArchs = {ArchId::A, ArchId::B, ArchId::C};

std::string to_string(ArchId a);
/// Accepts "a"/"A" as well as the long names.
ArchId arch_from_string(const std::string& s);
/// Single lowercase letter used for file names and CLI flags.
std::string arch_letter(ArchId a);

struct ConvBlock {
  int filters = 8;
  bool pool = true;
  bool operator==(const ConvBlock&) const = default;
};

struct ModelSpec {
  ArchId arch = ArchId::A;
  int input_h = 64;
  int input_w = 64;
  int input_c = 3;
  std::vector<ConvBlock> blocks;
  int gru_units = 512;
  std::array<int, 2> dense_units = {256, 2};
  double dropout_rate = 0.0;
  int n_classes = 2;

  /// Feature map [h, w, c] produced by the backbone for one image.
  std::array<Index, 3> feature_shape() const;
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

/// Tuned values reported for the full-size hybrid models.
HyperParams reference_hyperparams(ArchId arch);
/// Defaults for the 64x64 desk-scale benchmark: the reference dropout with a
/// narrower GRU and an optimizer that converges within a few epochs.
HyperParams desk_hyperparams(ArchId arch);

/// Backbone layout per architecture plus the head sized from `h`.
ModelSpec make_spec(ArchId arch, const HyperParams& h, int input_h = 64, int input_w = 64);

/// Glorot-uniform weights and zero biases, drawn from `seed`.
ParameterSet<float> init_parameters(const ModelSpec& spec, std::uint64_t seed);

struct EpochStats {
  double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
  bool operator==(const EpochStats&) const = default;
};

struct TrainedModel {
  ModelSpec spec;
  HyperParams hyper;
  ParameterSet<float> params;
  std::uint64_t seed = 0;
  std::vector<EpochStats> history;
  /// Epoch whose parameters were kept (-1: initial weights).
  int best_epoch = -1;
};

TrainedModel build_model(ArchId arch, const HyperParams& h, std::uint64_t seed, int input_h = 64,
                         int input_w = 64);

/// Images with integer labels, all of the model's input shape.
struct ImageSet {
  std::vector<ImageTensor> images;
  std::vector<int> labels;
  std::size_t size() const { return images.size(); }
};

struct TrainOptions {
  int epochs = 50;
  int batch_size = 16;
  /// Called after every epoch with the current (not best) weights; return
  /// false to end training early.
  std::function<bool(int epoch, const EpochStats&, const ParameterSet<float>& current)> on_epoch;
};

/// Minimizes mean cross-entropy with the optimizer named in the model's
/// hyperparameters and returns the snapshot with the lowest validation loss.
TrainedModel train(const TrainedModel& model, const ImageSet& train_set, const ImageSet& val_set,
                   const TrainOptions& options);

struct LossAccuracy {
  double loss = 0, accuracy = 0;
};
LossAccuracy evaluate_loss(const TrainedModel& model, const ImageSet& set);

/// Inference-mode class probabilities per image.
std::vector<ScoreVector> predict_proba(const TrainedModel& model, const std::vector<ImageTensor>& images);

/// `<stem>.afck` checkpoint plus `<stem>.json` sidecar.
void save_model(const TrainedModel& model, const std::filesystem::path& stem);
TrainedModel load_model(const std::filesystem::path& stem);

// Forward graph -----------------------------------------------------------

namespace model_detail {

template <typename Scalar>
using Var = typename Tape<Scalar>::Var;

template <typename Scalar>
Var<Scalar> conv(Tape<Scalar>& t, const BoundParameters<Scalar>& p, Var<Scalar> x, const std::string& name) {
  return nn::add_bias(t, nn::conv2d(t, x, p[name + "/kernel"]), p[name + "/bias"]);
}

inline std::string block_name(std::size_t i) { return "block" + std::to_string(i); }

}  // namespace model_detail

/// Builds the graph for an NHWC batch and returns class probabilities.
/// Dropout is active only when `dropout_rng` is non-null.
template <typename Scalar>
typename Tape<Scalar>::Var forward(Tape<Scalar>& t, const BoundParameters<Scalar>& p, const ModelSpec& spec,
                                   typename Tape<Scalar>::Var x, Rng* dropout_rng) {
  using namespace model_detail;
  const auto& in = t.value(x).shape();
  if (in.size() != 4 || in[1] != spec.input_h || in[2] != spec.input_w || in[3] != spec.input_c)
    throw ShapeError("model expects [N," + std::to_string(spec.input_h) + "," + std::to_string(spec.input_w) +
                     "," + std::to_string(spec.input_c) + "], got " + shape_string(in));
  Var<Scalar> h = x;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const std::string b = block_name(i);
    switch (spec.arch) {
      case ArchId::A: {
        auto wide = conv(t, p, h, b + "/branch3x3");
        auto narrow = conv(t, p, nn::crop(t, h, Index{1}), b + "/branch1x1");
        h = nn::relu(t, nn::concat_last(t, wide, narrow));
        break;
      }
      case ArchId::B:
        h = nn::relu(t, conv(t, p, h, b + "/conv3x3"));
        h = nn::relu(t, conv(t, p, h, b + "/pointwise"));
        break;
      case ArchId::C:
        h = nn::relu(t, conv(t, p, h, b + "/conv3x3"));
        break;
    }
    if (spec.blocks[i].pool) h = nn::maxpool2d(t, h);
  }
  auto seq = nn::features_to_sequence(t, h);
  Rng inactive(0);
  seq = nn::dropout(t, seq, spec.dropout_rate, dropout_rng ? *dropout_rng : inactive, dropout_rng != nullptr);
  const Index n = t.value(x).dim(0);
  auto h0 = t.constant(Tensor<Scalar>({n, static_cast<Index>(spec.gru_units)}));
  GruVars<Scalar> g;
  static constexpr std::array<const char*, 9> kGruNames = {"w_xr", "w_hr", "b_r", "w_xz", "w_hz",
                                                          "b_z",  "w_xh", "w_hh", "b_h"};
  for (std::size_t i = 0; i < 9; ++i) g.v[i] = p[std::string("gru/") + kGruNames[i]];
  auto state = nn::gru_sequence(t, seq, h0, g);
  auto hidden = nn::relu(t, nn::dense(t, state, p["dense0/kernel"], p["dense0/bias"]));
  return nn::softmax(t, nn::dense(t, hidden, p["dense1/kernel"], p["dense1/bias"]));
}

}  // namespace hemafuse
