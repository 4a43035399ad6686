#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "hemafuse/ensemble.hpp"
#include "hemafuse/synth.hpp"
#include "temp_dir.hpp"

using namespace hemafuse;

namespace {

Eigen::VectorXd random_simplex(Rng& rng, Eigen::Index c) {
  Eigen::VectorXd p(c);
  for (Eigen::Index i = 0; i < c; ++i) p[i] = -std::log(1.0 - rng.uniform());
  return p / p.sum();
}

struct ScalarOracle {
  std::vector<double> mu, sigma2;
  double mi = 0.0;
};

/// Literal transcription of the mixture formulas, one class at a time.
ScalarOracle scalar_oracle(const std::vector<ScoreVector>& s, const std::vector<Eigen::VectorXd>& v) {
  const std::size_t m = s.size();
  const auto c = static_cast<std::size_t>(s[0].size());
  ScalarOracle o;
  for (std::size_t k = 0; k < c; ++k) {
    double sum = 0, sum_sq = 0, sum_var = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const double x = s[i][static_cast<Eigen::Index>(k)];
      sum += x;
      sum_sq += x * x;
      if (!v.empty()) sum_var += v[i][static_cast<Eigen::Index>(k)];
    }
    const double mu = sum / static_cast<double>(m);
    o.mu.push_back(mu);
    o.sigma2.push_back(sum_var / static_cast<double>(m) + (sum_sq / static_cast<double>(m) - mu * mu));
  }
  double h_mix = 0, h_members = 0;
  for (std::size_t k = 0; k < c; ++k)
    if (o.mu[k] > 0) h_mix -= o.mu[k] * std::log(o.mu[k]);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      const double p = s[i][static_cast<Eigen::Index>(k)];
      if (p > 0) h_members -= p * std::log(p) / static_cast<double>(m);
    }
  o.mi = h_mix - h_members;
  return o;
}

ScoreVector two_class(double p1) {
  ScoreVector s(2);
  s << 1.0 - p1, p1;
  return s;
}

ImageSet synth_set(int per_class, int size, std::uint64_t seed) {
  ImageSet s;
  for (int i = 0; i < 2 * per_class; ++i) {
    s.images.push_back(scale_features(synth_image(i % 2, size, derive_seed(seed, {std::uint64_t(i)}))));
    s.labels.push_back(i % 2);
  }
  return s;
}

HyperParams toy_hyper() {
  HyperParams h;
  h.units = 128;
  h.optimizer = OptimizerKind::RMSprop;
  h.learning_rate = 1e-3;
  h.dropout_rate = 0.1;
  return h;
}

}  // namespace

TEST_CASE("aggregate") {
  SUBCASE("two members at 0.6 and 0.8") {
    const auto u = aggregate({two_class(0.6), two_class(0.8)});
    CHECK(std::abs(u.mu[1] - 0.7) <= 1e-12);
    CHECK(std::abs(u.sigma2[1] - 0.01) <= 1e-12);
    CHECK(std::abs(u.sigma2[0] - 0.01) <= 1e-12);
    CHECK(u.member_scores.size() == 2);
  }
  SUBCASE("one member is the identity") {
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
      const auto s = random_simplex(rng, 3);
      Eigen::VectorXd v = random_simplex(rng, 3) * 0.1;
      const auto u = aggregate({s}, {v});
      CHECK(u.mu == s);
      CHECK(u.sigma2 == v);
      CHECK(u.disagreement == 0.0);
    }
  }
  SUBCASE("identical members agree completely") {
    Rng rng(2);
    const auto s = random_simplex(rng, 2);
    const auto u = aggregate({s, s, s, s});
    CHECK(u.sigma2.cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(u.disagreement <= 1e-12);
  }
  SUBCASE("scalar-loop recomputation on 1000 random cases") {
    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
      const int m = 1 + static_cast<int>(rng.below(8));
      const Eigen::Index c = 2 + static_cast<Eigen::Index>(rng.below(4));
      std::vector<ScoreVector> s;
      std::vector<Eigen::VectorXd> v;
      for (int i = 0; i < m; ++i) s.push_back(random_simplex(rng, c));
      if (trial % 2)
        for (int i = 0; i < m; ++i) v.push_back(Eigen::VectorXd::NullaryExpr(c, [&] { return rng.uniform(0, 0.05); }));
      const auto u = aggregate(s, v);
      const auto o = scalar_oracle(s, v);
      for (Eigen::Index k = 0; k < c; ++k) {
        CHECK(std::abs(u.mu[k] - o.mu[static_cast<std::size_t>(k)]) <= 1e-12);
        CHECK(std::abs(u.sigma2[k] - o.sigma2[static_cast<std::size_t>(k)]) <= 1e-12);
        CHECK(u.sigma2[k] >= 0.0);
      }
      CHECK(std::abs(u.mu.sum() - 1.0) <= 1e-6);
      CHECK(std::abs(u.disagreement - o.mi) <= 1e-12);
      CHECK(u.disagreement >= 0.0);
      CHECK(u.disagreement <= entropy(u.mu) + 1e-12);
      if (m > 1) CHECK(u.disagreement > 0.0);

      auto shuffled = s;
      rng.shuffle(shuffled.begin(), shuffled.end());
      CHECK((aggregate(shuffled).mu - u.mu).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(aggregate({}), ArgumentError);
    CHECK_THROWS_AS(aggregate({two_class(0.5), ScoreVector::Constant(3, 1.0 / 3)}), ShapeError);
    CHECK_THROWS_AS(aggregate({two_class(0.5)}, {Eigen::VectorXd::Zero(3)}), ShapeError);
    CHECK_THROWS_AS(aggregate({two_class(0.5), two_class(0.1)}, {Eigen::VectorXd::Zero(2)}), ShapeError);
    CHECK_THROWS_AS(aggregate({two_class(0.5)}, {Eigen::VectorXd::Constant(2, -1.0)}), ArgumentError);
  }
}

TEST_CASE("train_ensemble") {
  const int size = 40;
  const auto train_set = synth_set(24, size, 1), val_set = synth_set(8, size, 2);
  const auto spec = make_spec(ArchId::B, toy_hyper(), size, size);
  EnsembleOptions o;
  o.members = 3;
  o.base_seed = 11;
  o.train = {2, 16, {}};

  const auto e = train_ensemble(spec, toy_hyper(), train_set, val_set, o);
  REQUIRE(e.size() == 3);

  SUBCASE("members use the derived seeds and differ") {
    CHECK(e.member_seeds() == std::vector<std::uint64_t>{member_seed(11, 0), member_seed(11, 1), member_seed(11, 2)});
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b) {
        const auto& pa = e.members[static_cast<std::size_t>(a)].params["block0/conv3x3/kernel"];
        const auto& pb = e.members[static_cast<std::size_t>(b)].params["block0/conv3x3/kernel"];
        CHECK((pa.data() - pb.data()).abs().maxCoeff() > 0.0f);
      }
  }
  SUBCASE("bitwise reproducible") {
    const auto again = train_ensemble(spec, toy_hyper(), train_set, val_set, o);
    for (int m = 0; m < 3; ++m) {
      CHECK(again.members[static_cast<std::size_t>(m)].params == e.members[static_cast<std::size_t>(m)].params);
      CHECK(again.members[static_cast<std::size_t>(m)].history == e.members[static_cast<std::size_t>(m)].history);
    }
  }
  SUBCASE("one member reproduces the single model") {
    EnsembleOptions one = o;
    one.members = 1;
    const auto e1 = train_ensemble(spec, toy_hyper(), train_set, val_set, one);
    const auto u = predict_uncertain(e1, val_set.images);
    const auto p = predict_proba(e1.members[0], val_set.images);
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(u[i].mu == p[i]);
      CHECK(u[i].sigma2.maxCoeff() == 0.0);
    }
  }
  SUBCASE("a diverging member is retried once with a perturbed seed") {
    EnsembleOptions flaky = o;
    flaky.members = 2;
    flaky.train.epochs = 1;
    int calls = 0;
    flaky.train.on_epoch = [&](int, const EpochStats&, const ParameterSet<float>&) {
      if (++calls == 1) throw TrainingError("synthetic divergence", 0, 0);
      return true;
    };
    const auto e2 = train_ensemble(spec, toy_hyper(), train_set, val_set, flaky);
    CHECK(e2.members[0].seed == retry_seed(member_seed(11, 0)));
    CHECK(e2.members[1].seed == member_seed(11, 1));

    calls = 0;
    flaky.train.on_epoch = [&](int, const EpochStats&, const ParameterSet<float>&) {
      if (++calls <= 2) throw TrainingError("synthetic divergence", 0, 3);
      return true;
    };
    CHECK_THROWS_AS(train_ensemble(spec, toy_hyper(), train_set, val_set, flaky), TrainingError);
  }
  SUBCASE("persistence round trip") {
    testing::TempDir tmp("ensemble");
    save_ensemble(e, tmp.path() / "b");
    const auto back = load_ensemble(tmp.path() / "b");
    REQUIRE(back.size() == 3);
    CHECK(back.base_seed == 11);
    CHECK(back.member_seeds() == e.member_seeds());
    for (int m = 0; m < 3; ++m)
      CHECK(back.members[static_cast<std::size_t>(m)].params == e.members[static_cast<std::size_t>(m)].params);
    CHECK_THROWS_AS(load_ensemble(tmp.path() / "nothing"), DataError);
  }
  SUBCASE("identical member checkpoints give zero variance") {
    Ensemble same;
    same.members = {e.members[0], e.members[0], e.members[0]};
    for (const auto& u : predict_uncertain(same, val_set.images)) {
      CHECK(u.sigma2.maxCoeff() == 0.0);
      CHECK(u.disagreement <= 1e-12);
    }
  }
  SUBCASE("errors") {
    EnsembleOptions none = o;
    none.members = 0;
    CHECK_THROWS_AS(train_ensemble(spec, toy_hyper(), train_set, val_set, none), ArgumentError);
    CHECK_THROWS_AS(predict_uncertain(e, {ImageTensor(8, 8, 3)}), ShapeError);
  }
}

TEST_CASE("noise images provoke more disagreement than in-distribution images") {
  const int size = 40;
  const auto train_set = synth_set(32, size, 5), val_set = synth_set(8, size, 6);
  const auto spec = make_spec(ArchId::C, toy_hyper(), size, size);
  for (std::uint64_t seed : {1, 2, 3}) {
    CAPTURE(seed);
    EnsembleOptions o;
    o.members = 3;
    o.base_seed = seed;
    o.train = {6, 16, {}};
    const auto e = train_ensemble(spec, toy_hyper(), train_set, val_set, o);
    Rng rng(derive_seed(seed, {99}));
    std::vector<ImageTensor> noise, clean;
    for (int i = 0; i < 50; ++i) {
      ImageTensor img(size, size, 3);
      for (Index k = 0; k < img.data().size(); ++k) img.data()[k] = rng.uniform();
      noise.push_back(img);
      clean.push_back(scale_features(synth_image(i % 2, size, derive_seed(seed, {1000 + std::uint64_t(i)}))));
    }
    const double d_noise = mean_disagreement(predict_uncertain(e, noise));
    const double d_clean = mean_disagreement(predict_uncertain(e, clean));
    MESSAGE("seed " << seed << ": noise " << d_noise << ", in-distribution " << d_clean);
    CHECK(d_noise > d_clean);
  }
}
