#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hemafuse/hyperparams.hpp"
#include "hemafuse/rng.hpp"

namespace hemafuse {

/// Encoded coordinates: [units, sgd, rmsprop, learning rate, momentum, dropout].
inline constexpr int kEncodedDim = 6;
using Encoded = Eigen::Matrix<double, kEncodedDim, 1>;

/// Bounds of the continuous hyperparameters. Defaults enclose the tuned
/// reference values; a config may narrow them.
struct SearchSpace {
  double lr_min = kMinLearningRate;
  double lr_max = kMaxLearningRate;
  double momentum_max = kMaxMomentum;
  double dropout_max = kMaxDropout;

  void validate() const;
  bool contains(const HyperParams& h) const;
  bool operator==(const SearchSpace&) const = default;
};

Encoded encode(const HyperParams& h, const SearchSpace& space = {});
/// Nearest valid point: units snap to the closest grid value in log space,
/// the optimizer to the larger one-hot coordinate (SGD on ties), the rest
/// are clamped into [0, 1] and mapped back.
HyperParams decode(const Encoded& x, const SearchSpace& space = {});

struct KernelParams {
  double signal_variance = 1.0;
  Encoded lengthscales = Encoded::Constant(0.3);
  double noise_variance = 0.0;
  bool operator==(const KernelParams&) const = default;
};

struct Observation {
  HyperParams theta;
  Encoded encoded;
  double y = 0.0;
};

Observation make_observation(const HyperParams& theta, double y, const SearchSpace& space = {});

/// Squared-exponential covariance.
double se_kernel(const KernelParams& k, const Encoded& a, const Encoded& b);

struct GPPosterior {
  KernelParams kernel;
  Eigen::MatrixXd inputs;  // n x kEncodedDim, one row per observation
  Eigen::VectorXd targets;
  double prior_mean = 0.0;
  /// Diagonal jitter that made K + noise*I factorizable.
  double jitter = 0.0;
  Eigen::LLT<Eigen::MatrixXd> chol;
  Eigen::VectorXd alpha;  // (K + (noise + jitter) I)^-1 (y - mean)

  Eigen::Index size() const { return targets.size(); }
  double best_y() const { return targets.maxCoeff(); }
};

inline constexpr double kMaxJitter = 1e-4;

/// Constant mean set to the sample mean of y. Escalating jitter up to 1e-4
/// is added before giving up with NumericalError.
GPPosterior gp_fit(const std::vector<Observation>& obs, const KernelParams& kernel);
GPPosterior gp_fit(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets, const KernelParams& kernel);

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};
Prediction gp_predict(const GPPosterior& g, const Encoded& x);

double log_marginal_likelihood(const GPPosterior& g);

inline constexpr double kDefaultXi = 0.01;

/// Expected improvement for maximization.
double expected_improvement(double mean, double variance, double best_y, double xi = kDefaultXi);

inline constexpr int kCandidateCount = 2048;

/// Scrambled Halton points over the relaxed box, each snapped to the nearest
/// valid configuration. The shift is the only draw from `rng`.
std::vector<Encoded> acquisition_candidates(Rng& rng, const SearchSpace& space = {}, int count = kCandidateCount);

struct Proposal {
  HyperParams theta;
  Encoded encoded;
  double ei = 0.0;
  int candidate_index = 0;
};

/// EI maximizer over the candidate set; the lowest index wins ties.
Proposal propose_next(const GPPosterior& g, Rng& rng, const SearchSpace& space = {}, double xi = kDefaultXi);

/// Stratified (Latin-hypercube) sample of `k` snapped configurations.
std::vector<HyperParams> initial_design(int k, Rng& rng, const SearchSpace& space = {});

/// Fits one kernel per call: signal variance from the targets, a common
/// lengthscale chosen on the grid, then one coordinate pass per dimension,
/// all by log marginal likelihood.
GPPosterior fit_with_lengthscale_search(const std::vector<Observation>& obs, double noise_variance);

struct BoIteration {
  int iter = 0;
  HyperParams theta;
  Encoded encoded;
  double y = 0.0;
  /// Empty for the initial design.
  std::optional<double> ei;
  std::optional<KernelParams> kernel;
  bool failed = false;
  std::string error;
  double best_y = 0.0;  // incumbent after this iteration
};

struct BoTrace {
  std::vector<BoIteration> iterations;
  HyperParams best_theta;
  double best_y = 0.0;
};

using Objective = std::function<double(const HyperParams&)>;

struct BoOptions {
  int k_init = 5;
  int n_max = 25;
  std::uint64_t seed = 0;
  double xi = kDefaultXi;
  double noise_variance = 1e-6;
  SearchSpace space;
  /// Called after each evaluation, e.g. to log the incumbent.
  std::function<void(const BoIteration&)> on_iteration;
};

/// Exceptions from the objective, and values outside [0, 1], are recorded as
/// y = 0 with `failed` set; the loop carries on.
BoTrace bo_loop(const Objective& objective, const BoOptions& options);

/// One JSON object per line: {iter, theta, y, ei, kernel, failed[, error]}.
std::string format_trace_jsonl(const BoTrace& trace);
void write_trace_jsonl(const BoTrace& trace, const std::filesystem::path& path);

}  // namespace hemafuse
