#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "hemafuse/models.hpp"

namespace hemafuse {

/// M replicas of one architecture and hyperparameter set, differing only in
/// the seed that drives initialization, shuffling and dropout.
struct Ensemble {
  std::vector<TrainedModel> members;
  std::uint64_t base_seed = 0;

  int size() const { return static_cast<int>(members.size()); }
  const ModelSpec& spec() const;
  const HyperParams& hyper() const;
  std::vector<std::uint64_t> member_seeds() const;
};

std::uint64_t member_seed(std::uint64_t base_seed, int m);
/// Seed for the single retry of a member that diverged.
std::uint64_t retry_seed(std::uint64_t seed);

struct EnsembleOptions {
  int members = 5;
  std::uint64_t base_seed = 0;
  TrainOptions train;
  /// Called once per finished member.
  std::function<void(int m, const TrainedModel&)> on_member;
};

/// Throws TrainingError when a member diverges on both attempts.
Ensemble train_ensemble(const ModelSpec& spec, const HyperParams& h, const ImageSet& train_set,
                        const ImageSet& val_set, const EnsembleOptions& options);

struct UncertainPrediction {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma2;
  /// Entropy of mu minus mean member entropy (nats).
  double disagreement = 0.0;
  std::vector<ScoreVector> member_scores;
};

/// Mixture mean and variance per class. `member_vars` may be empty, meaning
/// every member reports zero variance (softmax outputs).
UncertainPrediction aggregate(const std::vector<ScoreVector>& member_scores,
                              const std::vector<Eigen::VectorXd>& member_vars = {});

/// Shannon entropy in nats; zero entries contribute nothing.
double entropy(const Eigen::VectorXd& p);

std::vector<UncertainPrediction> predict_uncertain(const Ensemble& e, const std::vector<ImageTensor>& images);

double mean_disagreement(const std::vector<UncertainPrediction>& preds);

/// `member_<m>.afck/.json` files plus `ensemble.json`.
void save_ensemble(const Ensemble& e, const std::filesystem::path& dir);
Ensemble load_ensemble(const std::filesystem::path& dir);

}  // namespace hemafuse
