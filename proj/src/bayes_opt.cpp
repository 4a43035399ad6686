#include "hemafuse/bayes_opt.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "json_io.hpp"

namespace hemafuse {

namespace {

constexpr int kUnitsLog2Min = 7;   // 128
constexpr int kUnitsLog2Span = 3;  // up to 1024
constexpr int kRelaxedDim = 5;     // optimizer one-hot collapses to one coordinate

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

/// Relaxed box point -> encoded vector before snapping.
Encoded from_relaxed(const std::array<double, kRelaxedDim>& u) {
  Encoded x;
  x << u[0], 1.0 - u[1], u[1], u[2], u[3], u[4];
  return x;
}

Encoded snap(const Encoded& x, const SearchSpace& space) { return encode(decode(x, space), space); }

double radical_inverse(std::uint64_t i, std::uint64_t base) {
  double inv = 1.0 / static_cast<double>(base), f = inv, r = 0.0;
  while (i > 0) {
    r += f * static_cast<double>(i % base);
    i /= base;
    f *= inv;
  }
  return r;
}

void check_kernel(const KernelParams& k) {
  if (!(k.signal_variance > 0) || !std::isfinite(k.signal_variance))
    throw ArgumentError("kernel signal variance must be positive");
  if (!(k.noise_variance >= 0) || !std::isfinite(k.noise_variance))
    throw ArgumentError("kernel noise variance must be non-negative");
  if (!(k.lengthscales.array() > 0).all() || !k.lengthscales.allFinite())
    throw ArgumentError("kernel lengthscales must be positive");
}

}  // namespace

void SearchSpace::validate() const {
  if (!(lr_min >= kMinLearningRate && lr_max <= kMaxLearningRate && lr_min < lr_max))
    throw ConfigError("learning-rate range must satisfy 1e-5 <= min < max <= 1e-1");
  if (!(momentum_max > 0 && momentum_max <= kMaxMomentum)) throw ConfigError("momentum max must be in (0, 0.99]");
  if (!(dropout_max > 0 && dropout_max <= kMaxDropout)) throw ConfigError("dropout max must be in (0, 0.5]");
}

bool SearchSpace::contains(const HyperParams& h) const {
  return h.learning_rate >= lr_min && h.learning_rate <= lr_max && h.momentum >= 0 && h.momentum <= momentum_max &&
         h.dropout_rate >= 0 && h.dropout_rate <= dropout_max;
}

Encoded encode(const HyperParams& h, const SearchSpace& space) {
  h.validate();
  if (!space.contains(h)) throw ArgumentError("hyperparameters outside the search space");
  const double lo = std::log10(space.lr_min), hi = std::log10(space.lr_max);
  Encoded x;
  x << (std::log2(static_cast<double>(h.units)) - kUnitsLog2Min) / kUnitsLog2Span,
      h.optimizer == OptimizerKind::SGD ? 1.0 : 0.0, h.optimizer == OptimizerKind::RMSprop ? 1.0 : 0.0,
      (std::log10(h.learning_rate) - lo) / (hi - lo), h.momentum / space.momentum_max,
      h.dropout_rate / space.dropout_max;
  return x;
}

HyperParams decode(const Encoded& x, const SearchSpace& space) {
  if (!x.allFinite()) throw ArgumentError("cannot decode a non-finite vector");
  HyperParams h;
  const int step = static_cast<int>(std::lround(clamp01(x[0]) * kUnitsLog2Span));
  h.units = 1 << (kUnitsLog2Min + step);
  h.optimizer = x[2] > x[1] ? OptimizerKind::RMSprop : OptimizerKind::SGD;
  const double lo = std::log10(space.lr_min), hi = std::log10(space.lr_max);
  h.learning_rate = std::clamp(std::pow(10.0, lo + clamp01(x[3]) * (hi - lo)), space.lr_min, space.lr_max);
  h.momentum = clamp01(x[4]) * space.momentum_max;
  h.dropout_rate = clamp01(x[5]) * space.dropout_max;
  return h;
}

Observation make_observation(const HyperParams& theta, double y, const SearchSpace& space) {
  return {theta, encode(theta, space), y};
}

double se_kernel(const KernelParams& k, const Encoded& a, const Encoded& b) {
  const double r2 = ((a - b).array() / k.lengthscales.array()).square().sum();
  return k.signal_variance * std::exp(-0.5 * r2);
}

GPPosterior gp_fit(const std::vector<Observation>& obs, const KernelParams& kernel) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(obs.size()), kEncodedDim);
  Eigen::VectorXd y(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = obs[i].encoded.transpose();
    y[static_cast<Eigen::Index>(i)] = obs[i].y;
  }
  return gp_fit(x, y, kernel);
}

GPPosterior gp_fit(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets, const KernelParams& kernel) {
  if (targets.size() < 1) throw ArgumentError("gp_fit needs at least one observation");
  if (inputs.rows() != targets.size() || inputs.cols() != kEncodedDim)
    throw ShapeError("gp_fit: inputs must be n x 6 with one target per row");
  if (!inputs.allFinite() || !targets.allFinite()) throw ArgumentError("gp_fit: non-finite data");
  check_kernel(kernel);

  GPPosterior g;
  g.kernel = kernel;
  g.inputs = inputs;
  g.targets = targets;
  g.prior_mean = targets.mean();
  const Eigen::Index n = targets.size();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j)
      k(i, j) = k(j, i) = se_kernel(kernel, inputs.row(i).transpose(), inputs.row(j).transpose());

  for (double jitter = 0.0; jitter <= kMaxJitter * (1 + 1e-9); jitter = jitter == 0.0 ? 1e-12 : jitter * 10) {
    Eigen::MatrixXd a = k;
    a.diagonal().array() += kernel.noise_variance + jitter;
    g.chol.compute(a);
    if (g.chol.info() == Eigen::Success && (g.chol.matrixLLT().diagonal().array() > 0).all()) {
      g.jitter = jitter;
      g.alpha = g.chol.solve((targets.array() - g.prior_mean).matrix());
      return g;
    }
  }
  throw NumericalError("GP covariance is not positive definite even with jitter 1e-4");
}

Prediction gp_predict(const GPPosterior& g, const Encoded& x) {
  const Eigen::Index n = g.size();
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) ks[i] = se_kernel(g.kernel, g.inputs.row(i).transpose(), x);
  const Eigen::VectorXd v = g.chol.matrixL().solve(ks);
  return {g.prior_mean + ks.dot(g.alpha), std::max(0.0, g.kernel.signal_variance - v.squaredNorm())};
}

double log_marginal_likelihood(const GPPosterior& g) {
  const Eigen::VectorXd r = g.targets.array() - g.prior_mean;
  const double n = static_cast<double>(g.size());
  return -0.5 * r.dot(g.alpha) - g.chol.matrixLLT().diagonal().array().log().sum() -
         0.5 * n * std::log(2 * std::numbers::pi);
}

double expected_improvement(double mean, double variance, double best_y, double xi) {
  if (!(variance >= 0)) throw ArgumentError("expected_improvement: variance must be non-negative");
  const double d = mean - best_y - xi;
  const double sigma = std::sqrt(variance);
  if (sigma == 0.0) return std::max(0.0, d);
  const double z = d / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2 * std::numbers::pi);
  return std::max(0.0, d * cdf + sigma * pdf);
}

std::vector<Encoded> acquisition_candidates(Rng& rng, const SearchSpace& space, int count) {
  if (count < 1) throw ArgumentError("candidate count must be positive");
  static constexpr std::array<std::uint64_t, kRelaxedDim> kBases = {2, 3, 5, 7, 11};
  std::array<double, kRelaxedDim> shift{};
  for (double& s : shift) s = rng.uniform();
  std::vector<Encoded> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::array<double, kRelaxedDim> u{};
    for (int d = 0; d < kRelaxedDim; ++d) {
      const double v = radical_inverse(static_cast<std::uint64_t>(i) + 1, kBases[static_cast<std::size_t>(d)]) +
                       shift[static_cast<std::size_t>(d)];
      u[static_cast<std::size_t>(d)] = v - std::floor(v);
    }
    out.push_back(snap(from_relaxed(u), space));
  }
  return out;
}

Proposal propose_next(const GPPosterior& g, Rng& rng, const SearchSpace& space, double xi) {
  const auto candidates = acquisition_candidates(rng, space);
  const double best = g.best_y();
  Proposal p;
  p.ei = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto pred = gp_predict(g, candidates[i]);
    const double ei = expected_improvement(pred.mean, pred.variance, best, xi);
    if (ei > p.ei) {
      p.ei = ei;
      p.candidate_index = static_cast<int>(i);
    }
  }
  p.encoded = candidates[static_cast<std::size_t>(p.candidate_index)];
  p.theta = decode(p.encoded, space);
  return p;
}

std::vector<HyperParams> initial_design(int k, Rng& rng, const SearchSpace& space) {
  if (k < 1) throw ArgumentError("initial design needs k >= 1");
  std::vector<std::array<double, kRelaxedDim>> pts(static_cast<std::size_t>(k));
  std::vector<int> strata(static_cast<std::size_t>(k));
  for (int d = 0; d < kRelaxedDim; ++d) {
    std::iota(strata.begin(), strata.end(), 0);
    rng.shuffle(strata.begin(), strata.end());
    for (int i = 0; i < k; ++i)
      pts[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] =
          (strata[static_cast<std::size_t>(i)] + rng.uniform()) / k;
  }
  std::vector<HyperParams> out;
  for (const auto& u : pts) out.push_back(decode(from_relaxed(u), space));
  return out;
}

GPPosterior fit_with_lengthscale_search(const std::vector<Observation>& obs, double noise_variance) {
  static constexpr std::array<double, 7> kGrid = {0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2};
  if (obs.empty()) throw ArgumentError("no observations to fit");
  Eigen::VectorXd y(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) y[static_cast<Eigen::Index>(i)] = obs[i].y;
  KernelParams k;
  k.signal_variance = std::max((y.array() - y.mean()).square().mean(), 1e-6);
  k.noise_variance = noise_variance;

  std::optional<GPPosterior> best;
  double best_lml = -std::numeric_limits<double>::infinity();
  auto consider = [&](const KernelParams& trial) {
    try {
      auto g = gp_fit(obs, trial);
      const double lml = log_marginal_likelihood(g);
      if (lml > best_lml) {
        best_lml = lml;
        best = std::move(g);
      }
    } catch (const NumericalError&) {
      // That lengthscale makes the covariance singular; skip it.
    }
  };
  for (double l : kGrid) {
    KernelParams trial = k;
    trial.lengthscales.setConstant(l);
    consider(trial);
  }
  if (!best) throw NumericalError("no lengthscale on the grid gives a factorizable covariance");
  for (int d = 0; d < kEncodedDim; ++d)
    for (double l : kGrid) {
      KernelParams trial = best->kernel;
      if (trial.lengthscales[d] == l) continue;
      trial.lengthscales[d] = l;
      consider(trial);
    }
  return *best;
}

BoTrace bo_loop(const Objective& objective, const BoOptions& o) {
  if (o.k_init < 1) throw ArgumentError("k_init must be at least 1");
  if (o.n_max <= o.k_init) throw ArgumentError("n_max must exceed k_init");
  o.space.validate();

  BoTrace trace;
  std::vector<Observation> obs;
  auto evaluate = [&](int iter, const HyperParams& theta, std::optional<double> ei,
                      std::optional<KernelParams> kernel) {
    BoIteration it;
    it.iter = iter;
    it.theta = theta;
    it.encoded = encode(theta, o.space);
    it.ei = ei;
    it.kernel = kernel;
    try {
      const double y = objective(theta);
      if (!(y >= 0.0 && y <= 1.0)) throw NumericalError("objective value outside [0, 1]: " + std::to_string(y));
      it.y = y;
    } catch (const std::exception& e) {
      it.y = 0.0;
      it.failed = true;
      it.error = e.what();
    }
    if (trace.iterations.empty() || it.y > trace.best_y) {
      trace.best_y = it.y;
      trace.best_theta = theta;
    }
    it.best_y = trace.best_y;
    obs.push_back({theta, it.encoded, it.y});
    trace.iterations.push_back(it);
    if (o.on_iteration) o.on_iteration(trace.iterations.back());
  };

  Rng design_rng(derive_seed(o.seed, {0}));
  const auto design = initial_design(o.k_init, design_rng, o.space);
  for (int i = 0; i < o.k_init; ++i) evaluate(i, design[static_cast<std::size_t>(i)], std::nullopt, std::nullopt);

  for (int iter = o.k_init; iter < o.n_max; ++iter) {
    const auto g = fit_with_lengthscale_search(obs, o.noise_variance);
    Rng rng(derive_seed(o.seed, {1, static_cast<std::uint64_t>(iter)}));
    const auto p = propose_next(g, rng, o.space, o.xi);
    evaluate(iter, p.theta, p.ei, g.kernel);
  }
  return trace;
}

std::string format_trace_jsonl(const BoTrace& trace) {
  using detail::Json;
  std::string out;
  for (const auto& it : trace.iterations) {
    Json kernel = nullptr;
    if (it.kernel) {
      Json ls = Json::array();
      for (int d = 0; d < kEncodedDim; ++d) ls.push_back(it.kernel->lengthscales[d]);
      kernel = Json{{"signal_variance", it.kernel->signal_variance},
                    {"lengthscales", ls},
                    {"noise_variance", it.kernel->noise_variance}};
    }
    Json j{{"iter", it.iter},
           {"theta", detail::to_json(it.theta)},
           {"y", it.y},
           {"ei", it.ei ? Json(*it.ei) : Json(nullptr)},
           {"kernel", kernel},
           {"failed", it.failed},
           {"best_y", it.best_y}};
    if (it.failed) j["error"] = it.error;
    out += j.dump() + "\n";
  }
  return out;
}

void write_trace_jsonl(const BoTrace& trace, const std::filesystem::path& path) {
  detail::write_text(path, format_trace_jsonl(trace));
}

}  // namespace hemafuse
