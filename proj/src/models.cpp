#include "hemafuse/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hemafuse/checkpoint.hpp"
#include "json_io.hpp"

namespace hemafuse {

namespace {

// Stream keys for derive_seed.
constexpr std::uint64_t kInitStream = 1, kShuffleStream = 2, kDropoutStream = 3;
constexpr Index kInferenceBatch = 64;

}  // namespace

std::string to_string(ArchId a) {
  switch (a) {
    case ArchId::A: return "A_inception_like";
    case ArchId::B: return "B_mobile_like";
    case ArchId::C: return "C_efficient_like";
  }
  return "?";
}

std::string arch_letter(ArchId a) {
  switch (a) {
    case ArchId::A: return "a";
    case ArchId::B: return "b";
    case ArchId::C: return "c";
  }
  return "?";
}

ArchId arch_from_string(const std::string& s) {
  for (ArchId a : kAllArchs) {
    const std::string letter = arch_letter(a);
    if (s == letter || s == std::string(1, static_cast<char>(std::toupper(letter[0]))) || s == to_string(a))
      return a;
  }
  throw ArgumentError("unknown architecture '" + s + "' (expected a, b or c)");
}

HyperParams reference_hyperparams(ArchId arch) {
  switch (arch) {
    case ArchId::A: return {512, OptimizerKind::SGD, 0.01, 0.3, 0.4};
    case ArchId::B: return {512, OptimizerKind::SGD, 0.01, 0.9, 0.1};
    case ArchId::C: return {256, OptimizerKind::RMSprop, 1e-4, 0.5, 0.1};
  }
  throw ArgumentError("unknown architecture");
}

HyperParams desk_hyperparams(ArchId arch) {
  HyperParams h = reference_hyperparams(arch);
  h.units = 128;
  h.optimizer = OptimizerKind::RMSprop;
  h.learning_rate = 1e-3;
  return h;
}

std::array<Index, 3> ModelSpec::feature_shape() const {
  Index h = input_h, w = input_w, c = input_c;
  for (const auto& b : blocks) {
    h -= 2;
    w -= 2;
    if (h < 1 || w < 1) throw ArgumentError("input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                                            " is too small for the backbone");
    c = arch == ArchId::A ? 2 * b.filters : b.filters;
    if (b.pool) {
      h /= 2;
      w /= 2;
      if (h < 1 || w < 1) throw ArgumentError("input too small for the backbone's pooling");
    }
  }
  return {h, w, c};
}

void ModelSpec::validate() const {
  if (input_h < 1 || input_w < 1 || input_c < 1) throw ArgumentError("input shape must be positive");
  if (blocks.empty()) throw ArgumentError("backbone needs at least one block");
  for (const auto& b : blocks)
    if (b.filters < 1) throw ArgumentError("block filters must be positive");
  if (gru_units < 1) throw ArgumentError("gru_units must be positive");
  if (dense_units[0] < 1 || dense_units[1] != n_classes) throw ArgumentError("last dense width must equal n_classes");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ArgumentError("dropout rate must lie in [0,1)");
  feature_shape();
}

ModelSpec make_spec(ArchId arch, const HyperParams& h, int input_h, int input_w) {
  h.validate();
  ModelSpec s;
  s.arch = arch;
  s.input_h = input_h;
  s.input_w = input_w;
  switch (arch) {
    case ArchId::A: s.blocks = {{4, true}, {8, true}, {16, true}}; break;
    case ArchId::B: s.blocks = {{6, true}, {12, true}, {24, true}}; break;
    case ArchId::C: s.blocks = {{8, true}, {16, true}, {24, true}, {32, false}}; break;
  }
  s.gru_units = h.units;
  s.dense_units = {h.units / 2, 2};
  s.dropout_rate = h.dropout_rate;
  s.validate();
  return s;
}

ParameterSet<float> init_parameters(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, {kInitStream}));
  ParameterSet<float> p;
  auto glorot = [&](const std::string& name, Shape shape, Index fan_in, Index fan_out) {
    Tensor<float> t(std::move(shape));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-limit, limit));
    p.add(name, std::move(t));
  };
  auto conv = [&](const std::string& name, Index k, Index cin, Index cout) {
    glorot(name + "/kernel", {k, k, cin, cout}, k * k * cin, k * k * cout);
    p.add(name + "/bias", Tensor<float>({cout}));
  };
  Index c = spec.input_c;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const std::string b = model_detail::block_name(i);
    const Index f = spec.blocks[i].filters;
    switch (spec.arch) {
      case ArchId::A:
        conv(b + "/branch3x3", 3, c, f);
        conv(b + "/branch1x1", 1, c, f);
        c = 2 * f;
        break;
      case ArchId::B:
        conv(b + "/conv3x3", 3, c, f);
        conv(b + "/pointwise", 1, f, f);
        c = f;
        break;
      case ArchId::C:
        conv(b + "/conv3x3", 3, c, f);
        c = f;
        break;
    }
  }
  const Index u = spec.gru_units;
  for (const char* gate : {"r", "z", "h"}) {
    const std::string g(gate);
    glorot("gru/w_x" + g, {c, u}, c, u);
    glorot("gru/w_h" + g, {u, u}, u, u);
    p.add("gru/b_" + g, Tensor<float>({u}));
  }
  // Reorder the GRU tensors to the canonical gate order of GruParams.
  ParameterSet<float> out;
  for (const auto& [name, t] : p)
    if (name.rfind("gru/", 0) != 0) out.add(name, t);
  for (const char* n : {"w_xr", "w_hr", "b_r", "w_xz", "w_hz", "b_z", "w_xh", "w_hh", "b_h"})
    out.add(std::string("gru/") + n, p[std::string("gru/") + n]);
  const Index d0 = spec.dense_units[0], d1 = spec.dense_units[1];
  Rng dense_rng(derive_seed(seed, {kInitStream, 1}));
  for (auto [name, in, width] : {std::tuple{"dense0", u, d0}, std::tuple{"dense1", d0, d1}}) {
    Tensor<float> w({in, width});
    const double limit = std::sqrt(6.0 / static_cast<double>(in + width));
    for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<float>(dense_rng.uniform(-limit, limit));
    out.add(std::string(name) + "/kernel", std::move(w));
    out.add(std::string(name) + "/bias", Tensor<float>({width}));
  }
  return out;
}

TrainedModel build_model(ArchId arch, const HyperParams& h, std::uint64_t seed, int input_h, int input_w) {
  TrainedModel m;
  m.spec = make_spec(arch, h, input_h, input_w);
  m.hyper = h;
  m.seed = seed;
  m.params = init_parameters(m.spec, seed);
  return m;
}

namespace {

Tensor<float> gather_batch(const std::vector<ImageTensor>& images, const std::vector<std::size_t>& order,
                           std::size_t begin, std::size_t end) {
  std::vector<const ImageTensor*> ptrs;
  for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&images[order[i]]);
  return stack_images<float>(ptrs);
}

void require_input_shape(const ModelSpec& spec, const ImageTensor& img) {
  if (img.height() != spec.input_h || img.width() != spec.input_w || img.channels() != spec.input_c)
    throw ShapeError("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) + "x" +
                     std::to_string(img.channels()) + " does not match model input " + std::to_string(spec.input_h) +
                     "x" + std::to_string(spec.input_w) + "x" + std::to_string(spec.input_c));
}

void check_set(const ModelSpec& spec, const ImageSet& set, const char* what) {
  if (set.images.size() != set.labels.size())
    throw ArgumentError(std::string(what) + ": images and labels differ in length");
  for (const auto& img : set.images) require_input_shape(spec, img);
  for (int l : set.labels)
    if (l < 0 || l >= spec.n_classes) throw ArgumentError(std::string(what) + ": label out of range");
}

int argmax_row(const Tensor<float>& probs, Index row) {
  const Index k = probs.dim(1);
  int best = 0;
  for (Index j = 1; j < k; ++j)
    if (probs.at(row, j) > probs.at(row, best)) best = static_cast<int>(j);
  return best;
}

}  // namespace

LossAccuracy evaluate_loss(const TrainedModel& model, const ImageSet& set) {
  check_set(model.spec, set, "evaluate");
  if (set.size() == 0) throw ArgumentError("evaluate: empty set");
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < set.size(); b += kInferenceBatch) {
    const std::size_t e = std::min(set.size(), b + kInferenceBatch);
    Tape<float> t;
    BoundParameters<float> p(t, model.params, false);
    auto probs = forward(t, p, model.spec, t.constant(gather_batch(set.images, order, b, e)), nullptr);
    const std::span<const int> labels(set.labels.data() + b, e - b);
    loss += static_cast<double>(t.value(nn::cross_entropy(t, probs, labels))[0]) * static_cast<double>(e - b);
    for (std::size_t i = b; i < e; ++i)
      correct += argmax_row(t.value(probs), static_cast<Index>(i - b)) == set.labels[i];
  }
  return {loss / static_cast<double>(set.size()), static_cast<double>(correct) / static_cast<double>(set.size())};
}

TrainedModel train(const TrainedModel& model, const ImageSet& train_set, const ImageSet& val_set,
                   const TrainOptions& options) {
  check_set(model.spec, train_set, "train");
  check_set(model.spec, val_set, "validation");
  if (options.epochs < 0) throw ArgumentError("epochs must be >= 0");
  TrainedModel result = model;
  result.history.clear();
  result.best_epoch = -1;
  if (options.epochs == 0) return result;
  if (train_set.size() == 0 || val_set.size() == 0) throw ArgumentError("train: empty split");
  if (options.batch_size < 1 || static_cast<std::size_t>(options.batch_size) > train_set.size())
    throw ArgumentError("batch size must lie in [1, |train|]");
  model.hyper.validate();

  ParameterSet<float> params = model.params;
  auto state = OptimizerState<float>::make(model.hyper.optimizer, model.hyper.learning_rate,
                                           model.hyper.optimizer == OptimizerKind::SGD ? model.hyper.momentum : 0.0,
                                           params);
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.size());
  const std::size_t bs = static_cast<std::size_t>(options.batch_size);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(model.seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t correct = 0;
    int batch = 0;
    for (std::size_t b = 0; b < order.size(); b += bs, ++batch) {
      const std::size_t e = std::min(order.size(), b + bs);
      std::vector<int> labels;
      for (std::size_t i = b; i < e; ++i) labels.push_back(train_set.labels[order[i]]);
      Tape<float> t;
      BoundParameters<float> p(t, params, true);
      Rng drop_rng(derive_seed(model.seed, {kDropoutStream, static_cast<std::uint64_t>(epoch),
                                            static_cast<std::uint64_t>(batch)}));
      auto probs = forward(t, p, model.spec, t.constant(gather_batch(train_set.images, order, b, e)), &drop_rng);
      auto loss = nn::cross_entropy<float>(t, probs, labels);
      const double lv = static_cast<double>(t.value(loss)[0]);
      if (!std::isfinite(lv))
        throw TrainingError("training diverged: loss is not finite at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(batch),
                            epoch, batch);
      t.backward(loss);
      optimizer_step(params, p.gradients(t, params), state);
      loss_sum += lv * static_cast<double>(e - b);
      for (std::size_t i = b; i < e; ++i)
        correct += argmax_row(t.value(probs), static_cast<Index>(i - b)) == labels[i - b];
    }
    TrainedModel current = result;
    current.params = params;
    const auto val = evaluate_loss(current, val_set);
    if (!std::isfinite(val.loss))
      throw TrainingError("training diverged: validation loss is not finite at epoch " + std::to_string(epoch), epoch,
                          batch);
    EpochStats stats{loss_sum / static_cast<double>(order.size()),
                     static_cast<double>(correct) / static_cast<double>(order.size()), val.loss, val.accuracy};
    result.history.push_back(stats);
    if (val.loss < best_val) {
      best_val = val.loss;
      result.params = params;
      result.best_epoch = epoch;
    }
    if (options.on_epoch && !options.on_epoch(epoch, stats, params)) break;
  }
  return result;
}

std::vector<ScoreVector> predict_proba(const TrainedModel& model, const std::vector<ImageTensor>& images) {
  for (const auto& img : images) require_input_shape(model.spec, img);
  std::vector<ScoreVector> out;
  out.reserve(images.size());
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t b = 0; b < images.size(); b += kInferenceBatch) {
    const std::size_t e = std::min(images.size(), b + kInferenceBatch);
    Tape<float> t;
    BoundParameters<float> p(t, model.params, false);
    const auto& probs = t.value(forward(t, p, model.spec, t.constant(gather_batch(images, order, b, e)), nullptr));
    for (Index i = 0; i < probs.dim(0); ++i) {
      ScoreVector s(probs.dim(1));
      for (Index j = 0; j < probs.dim(1); ++j) s[j] = static_cast<double>(probs.at(i, j));
      out.push_back(s / s.sum());
    }
  }
  return out;
}

void save_model(const TrainedModel& model, const std::filesystem::path& stem) {
  auto ckpt = stem;
  ckpt += ".afck";
  auto side = stem;
  side += ".json";
  save_checkpoint(ckpt, model.params);
  detail::Json history = detail::Json::array();
  for (const auto& e : model.history) history.push_back(detail::to_json(e));
  detail::write_json(side, detail::Json{{"arch", to_string(model.spec.arch)},
                                        {"hyperparams", detail::to_json(model.hyper)},
                                        {"seed", model.seed},
                                        {"best_epoch", model.best_epoch},
                                        {"spec", detail::to_json(model.spec)},
                                        {"history", history}});
}

TrainedModel load_model(const std::filesystem::path& stem) {
  auto ckpt = stem;
  ckpt += ".afck";
  auto side = stem;
  side += ".json";
  const auto j = detail::read_json(side);
  TrainedModel m;
  try {
    m.spec = detail::spec_from_json(j.at("spec"));
    m.hyper = detail::hyperparams_from_json(j.at("hyperparams"));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.best_epoch = j.at("best_epoch").get<int>();
    for (const auto& e : j.at("history")) m.history.push_back(detail::epoch_from_json(e));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed model sidecar " + side.string() + ": " + e.what());
  }
  m.params = load_checkpoint(ckpt);
  init_parameters(m.spec, 0).require_same_layout(m.params);
  return m;
}

}  // namespace hemafuse
