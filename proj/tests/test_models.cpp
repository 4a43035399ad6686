#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "grad_check.hpp"
#include "hemafuse/models.hpp"
#include "hemafuse/synth.hpp"
#include "temp_dir.hpp"

using namespace hemafuse;

namespace {

HyperParams fast_hyper(double dropout = 0.0) {
  HyperParams h;
  h.units = 128;
  h.optimizer = OptimizerKind::RMSprop;
  h.learning_rate = 1e-3;
  h.dropout_rate = dropout;
  return h;
}

/// Uniform background with one Gaussian blob that brightens (label 1) or
/// darkens (label 0) the image, so the mean intensity separates the classes.
ImageTensor blob_image(int label, int size, Rng& rng) {
  ImageTensor img(size, size, 3);
  const double cy = rng.uniform(8, size - 8), cx = rng.uniform(8, size - 8);
  const double amp = (label == 1 ? 0.35 : -0.35) * rng.uniform(0.8, 1.2);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double g = std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2 * 36.0));
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(0.5 + amp * g + 0.05 * rng.normal(), 0.0, 1.0);
    }
  return img;
}

ImageSet blob_set(std::size_t n, int size, std::uint64_t seed) {
  Rng rng(seed);
  ImageSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    s.images.push_back(blob_image(label, size, rng));
    s.labels.push_back(label);
  }
  return s;
}

double mean_intensity(const ImageTensor& img) { return img.data().mean(); }

/// One-feature logistic regression on mean intensity, fit by Newton steps.
double logistic_oracle_accuracy(const ImageSet& train, const ImageSet& val) {
  double w = 0, b = 0;
  for (int it = 0; it < 50; ++it) {
    double gw = 0, gb = 0, hww = 0, hwb = 0, hbb = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const double x = mean_intensity(train.images[i]) - 0.5;
      const double p = 1.0 / (1.0 + std::exp(-(w * x + b)));
      const double r = p - train.labels[i];
      gw += r * x;
      gb += r;
      const double s = p * (1 - p) + 1e-9;
      hww += s * x * x;
      hwb += s * x;
      hbb += s;
    }
    hww += 1e-6;
    hbb += 1e-6;
    const double det = hww * hbb - hwb * hwb;
    w -= (hbb * gw - hwb * gb) / det;
    b -= (hww * gb - hwb * gw) / det;
  }
  std::size_t ok = 0;
  for (std::size_t i = 0; i < val.size(); ++i)
    ok += ((w * (mean_intensity(val.images[i]) - 0.5) + b) > 0) == (val.labels[i] == 1);
  return static_cast<double>(ok) / static_cast<double>(val.size());
}

/// Tiny backbones so the full model can be checked in double precision.
ModelSpec tiny_spec(ArchId arch) {
  ModelSpec s;
  s.arch = arch;
  s.input_h = s.input_w = arch == ArchId::C ? 48 : 30;
  s.blocks = arch == ArchId::C ? std::vector<ConvBlock>{{2, true}, {2, true}, {2, true}, {3, false}}
                               : std::vector<ConvBlock>{{2, true}, {2, true}, {3, true}};
  s.gru_units = 5;
  s.dense_units = {3, 2};
  s.dropout_rate = 0.2;
  return s;
}

}  // namespace

TEST_CASE("build_model") {
  const auto h = reference_hyperparams(ArchId::A);
  SUBCASE("deterministic initial parameters") {
    CHECK(build_model(ArchId::A, h, 5).params == build_model(ArchId::A, h, 5).params);
    CHECK_FALSE(build_model(ArchId::A, h, 5).params == build_model(ArchId::A, h, 6).params);
  }
  SUBCASE("architectures differ") {
    auto a = build_model(ArchId::A, h, 1), b = build_model(ArchId::B, h, 1), c = build_model(ArchId::C, h, 1);
    CHECK(a.params.names() != b.params.names());
    CHECK(b.params.names() != c.params.names());
    CHECK(a.params.names() != c.params.names());
  }
  SUBCASE("GRU width follows units") {
    auto m = build_model(ArchId::A, h, 1);
    CHECK(h.units == 512);
    CHECK(m.params["gru/w_hh"].shape() == Shape{512, 512});
    CHECK(m.params["gru/b_z"].shape() == Shape{512});
    CHECK(m.params["dense0/kernel"].shape() == Shape{512, 256});
    CHECK(m.params["dense1/kernel"].shape() == Shape{256, 2});
    CHECK(build_model(ArchId::C, reference_hyperparams(ArchId::C), 1).params["gru/w_hh"].shape() == Shape{256, 256});
  }
  SUBCASE("reference hyperparameters") {
    const auto b = reference_hyperparams(ArchId::B), c = reference_hyperparams(ArchId::C);
    CHECK(h == HyperParams{512, OptimizerKind::SGD, 0.01, 0.3, 0.4});
    CHECK(b == HyperParams{512, OptimizerKind::SGD, 0.01, 0.9, 0.1});
    CHECK(c == HyperParams{256, OptimizerKind::RMSprop, 1e-4, 0.5, 0.1});
  }
  SUBCASE("glorot bounds and zero biases") {
    auto m = build_model(ArchId::C, h, 2);
    const double limit = std::sqrt(6.0 / (9 * 3 + 9 * 8));
    CHECK(m.params["block0/conv3x3/kernel"].data().abs().maxCoeff() <= limit);
    CHECK(m.params["block0/conv3x3/bias"].data().abs().maxCoeff() == 0.0f);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(arch_from_string("d"), ArgumentError);
    CHECK(arch_from_string("b") == ArchId::B);
    CHECK(arch_from_string("C_efficient_like") == ArchId::C);
    HyperParams bad = h;
    bad.units = 100;
    CHECK_THROWS_AS(build_model(ArchId::A, bad, 1), ArgumentError);
    CHECK_THROWS_AS(build_model(ArchId::C, h, 1, 20, 20), ArgumentError);
  }
}

TEST_CASE("features_to_sequence") {
  CHECK(nn::features_to_sequence(Tensor<double>({1, 1, 1, 7})).shape() == Shape{1, 1, 7});
  Tensor<double> fm({1, 2, 2, 3});
  for (Index i = 0; i < fm.size(); ++i) fm[i] = static_cast<double>(i);
  auto seq = nn::features_to_sequence(fm);
  REQUIRE(seq.shape() == Shape{1, 4, 3});
  // step k holds position (k / 2, k % 2)
  for (Index k = 0; k < 4; ++k)
    for (Index c = 0; c < 3; ++c) CHECK(seq.at(0, k, c) == fm.at(0, k / 2, k % 2, c));
  CHECK(nn::features_to_sequence(Tensor<float>({2, 5, 5, 1536})).shape() == Shape{2, 25, 1536});
}

TEST_CASE("head contract: one GRU stage, two dense layers, width 2") {
  for (ArchId arch : kAllArchs) {
    CAPTURE(to_string(arch));
    auto m = build_model(arch, fast_hyper(0.1), 3);
    Tape<float> t;
    BoundParameters<float> p(t, m.params, false);
    auto probs = forward(t, p, m.spec, t.constant(Tensor<float>({2, 64, 64, 3}, 0.5f)), nullptr);
    const auto ops = t.ops();
    CHECK(std::count(ops.begin(), ops.end(), "gru_sequence") == 1);
    CHECK(std::count(ops.begin(), ops.end(), "gru_cell") == 0);
    const auto gru = std::find(ops.begin(), ops.end(), "gru_sequence");
    CHECK(std::count(gru, ops.end(), "dense") == 2);
    CHECK(std::count(ops.begin(), gru, "dense") == 0);
    CHECK(std::count(ops.begin(), gru, "conv2d") >= 3);
    CHECK(ops.back() == "softmax");
    CHECK(t.value(probs).shape() == Shape{2, 2});
  }
}

TEST_CASE("whole-model gradients match finite differences") {
  for (ArchId arch : kAllArchs) {
    CAPTURE(to_string(arch));
    const auto spec = tiny_spec(arch);
    const auto params = init_parameters(spec, 17).cast<double>();
    Rng rng(23);
    const auto x = testing::random_tensor({2, spec.input_h, spec.input_w, 3}, rng, 0.0, 1.0);
    std::vector<Tensor<double>> inputs;
    for (const auto& [name, t] : params) {
      // Random biases so ReLU/max kinks are not sitting at ties.
      auto v = t;
      for (Index i = 0; i < v.size(); ++i) v[i] += rng.uniform(-0.1, 0.1);
      inputs.push_back(v);
    }
    const auto names = params.names();
    const std::vector<int> labels = {0, 1};
    auto f = [&](testing::DTape& t, const std::vector<testing::DVar>& vars) {
      BoundParameters<double> p(names, vars);
      Rng drop(99);
      auto probs = forward(t, p, spec, t.constant(x), &drop);
      return nn::cross_entropy<double>(t, probs, labels);
    };
    Index count = 0;
    for (const auto& t : inputs) count += t.size();
    MESSAGE("parameters: " << count);
    const auto r = testing::grad_check(f, inputs, 5, {1e-5, 1e-6});
    CAPTURE(names[r.worst_input]);
    CAPTURE(r.worst_index);
    CAPTURE(r.worst_analytic);
    CAPTURE(r.worst_numeric);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("one small step decreases a single sample's loss") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ArchId arch = kAllArchs[seed % 3];
    auto spec = tiny_spec(arch);
    spec.dropout_rate = 0.0;
    auto params = init_parameters(spec, seed).cast<double>();
    Rng rng(seed + 100);
    const auto x = testing::random_tensor({1, spec.input_h, spec.input_w, 3}, rng, 0.0, 1.0);
    const std::vector<int> label = {static_cast<int>(seed % 2)};
    auto loss_of = [&](const ParameterSet<double>& ps, ParameterSet<double>* grads) {
      Tape<double> t;
      BoundParameters<double> p(t, ps, grads != nullptr);
      auto loss = nn::cross_entropy<double>(t, forward(t, p, spec, t.constant(x), nullptr), label);
      if (grads) {
        t.backward(loss);
        *grads = p.gradients(t, ps);
      }
      return t.value(loss)[0];
    };
    ParameterSet<double> grads;
    const double before = loss_of(params, &grads);
    auto state = OptimizerState<double>::make(OptimizerKind::SGD, 1e-3, 0.0, params);
    sgd_step(params, grads, state);
    CHECK(loss_of(params, nullptr) < before);
  }
}

TEST_CASE("training") {
  const int size = 40;
  const auto train_set = blob_set(64, size, 1), val_set = blob_set(32, size, 2);
  SUBCASE("epochs = 0 returns the initial weights") {
    auto m = build_model(ArchId::B, fast_hyper(), 4, size, size);
    auto r = train(m, train_set, val_set, {0, 16, {}});
    CHECK(r.params == m.params);
    CHECK(r.history.empty());
  }
  SUBCASE("separable blobs reach 95% validation accuracy within 20 epochs") {
    const double oracle = logistic_oracle_accuracy(train_set, val_set);
    CHECK(oracle >= 0.95);
    for (ArchId arch : kAllArchs) {
      CAPTURE(to_string(arch));
      auto m = build_model(arch, fast_hyper(0.1), 7, size, size);
      double best = 0;
      TrainOptions o{20, 16, [&](int, const EpochStats& s, const ParameterSet<float>&) {
                       best = std::max(best, s.val_acc);
                       return best < 0.95;
                     }};
      train(m, train_set, val_set, o);
      CHECK(best >= 0.95);
    }
  }
  SUBCASE("identical inputs give identical history; best snapshot has the minimum val loss") {
    auto m = build_model(ArchId::A, fast_hyper(0.3), 9, size, size);
    const TrainOptions o{3, 16, {}};
    auto r1 = train(m, train_set, val_set, o), r2 = train(m, train_set, val_set, o);
    CHECK(r1.history == r2.history);
    CHECK(r1.params == r2.params);
    REQUIRE(r1.history.size() == 3);
    double min_val = r1.history[0].val_loss;
    for (const auto& e : r1.history) min_val = std::min(min_val, e.val_loss);
    CHECK(r1.history[static_cast<std::size_t>(r1.best_epoch)].val_loss == min_val);
    CHECK(evaluate_loss(r1, val_set).loss == min_val);
  }
  SUBCASE("diverging optimizer reports epoch and batch") {
    auto m = build_model(ArchId::C, fast_hyper(), 1, size, size);
    for (auto& [name, t] : m.params) t.data() *= std::numeric_limits<float>::quiet_NaN();
    try {
      train(m, train_set, val_set, {2, 16, {}});
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      CHECK(e.epoch == 0);
      CHECK(e.batch == 0);
    }
  }
  SUBCASE("argument checks") {
    auto m = build_model(ArchId::B, fast_hyper(), 4, size, size);
    CHECK_THROWS_AS(train(m, train_set, val_set, {1, 65, {}}), ArgumentError);
    CHECK_THROWS_AS(train(m, blob_set(4, 32, 1), val_set, {1, 2, {}}), ShapeError);
  }
}

TEST_CASE("every architecture overfits eight samples") {
  const int size = 40;
  for (ArchId arch : kAllArchs)
    for (std::uint64_t seed : {1, 2, 3}) {
      CAPTURE(to_string(arch));
      CAPTURE(seed);
      ImageSet eight;
      for (int i = 0; i < 8; ++i) {
        eight.images.push_back(scale_features(synth_image(i % 2, size, derive_seed(seed, {std::uint64_t(i)}))));
        eight.labels.push_back(i % 2);
      }
      auto m = build_model(arch, fast_hyper(), seed, size, size);
      int reached = -1;
      TrainOptions o{200, 8, [&](int epoch, const EpochStats&, const ParameterSet<float>& current) {
                       TrainedModel probe = m;
                       probe.params = current;
                       if (evaluate_loss(probe, eight).accuracy == 1.0) reached = epoch;
                       return reached < 0;
                     }};
      train(m, eight, eight, o);
      CHECK(reached >= 0);
    }
}

TEST_CASE("predict_proba") {
  auto m = build_model(ArchId::C, fast_hyper(0.3), 11);
  Rng rng(12);
  std::vector<ImageTensor> images;
  for (int i = 0; i < 100; ++i) {
    ImageTensor img(64, 64, 3);
    for (Index k = 0; k < img.data().size(); ++k) img.data()[k] = rng.uniform();
    images.push_back(img);
  }
  SUBCASE("probabilities sum to one") {
    for (const auto& s : predict_proba(m, images)) {
      CHECK(s.size() == 2);
      CHECK(std::abs(s.sum() - 1.0) <= 1e-6);
      CHECK((s.array() >= 0).all());
    }
  }
  SUBCASE("duplicated inputs and repeated calls agree") {
    std::vector<ImageTensor> dup = {images[0], images[1], images[0]};
    auto s = predict_proba(m, dup);
    CHECK(s[0] == s[2]);
    CHECK(predict_proba(m, dup)[1] == s[1]);
  }
  SUBCASE("wrong input shape") {
    CHECK_THROWS_AS(predict_proba(m, {ImageTensor(32, 32, 3)}), ShapeError);
  }
  SUBCASE("overfitting one sample") {
    ImageSet one;
    one.images.push_back(scale_features(synth_image(1, 40, 77)));
    one.labels.push_back(1);
    auto small = build_model(ArchId::B, fast_hyper(), 5, 40, 40);
    TrainOptions o{300, 1, [&](int, const EpochStats& s, const ParameterSet<float>&) { return s.val_loss > 1e-3; }};
    auto r = train(small, one, one, o);
    CHECK(predict_proba(r, one.images)[0][1] >= 0.99);
  }
}

TEST_CASE("model files round trip") {
  testing::TempDir tmp("models");
  auto m = build_model(ArchId::A, desk_hyperparams(ArchId::A), 3);
  m.history = {{0.5, 0.6, 0.4, 0.7}, {0.25, 0.8, 0.3, 0.9}};
  m.best_epoch = 1;
  save_model(m, tmp.path() / "member0");
  auto back = load_model(tmp.path() / "member0");
  CHECK(back.params == m.params);
  CHECK(back.spec == m.spec);
  CHECK(back.hyper == m.hyper);
  CHECK(back.seed == m.seed);
  CHECK(back.history == m.history);
  CHECK(back.best_epoch == 1);
  CHECK_THROWS_AS(load_model(tmp.path() / "missing"), DataError);
}
