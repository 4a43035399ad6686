#pragma once

#include <filesystem>
#include <ostream>

#include "hemafuse/bayes_opt.hpp"
#include "hemafuse/config.hpp"
#include "hemafuse/ensemble.hpp"
#include "hemafuse/eval.hpp"
#include "hemafuse/ingest.hpp"

namespace hemafuse {

// Workdir layout. Each command owns one directory, clears it before writing,
// and leaves a run.json provenance record there.
std::filesystem::path manifest_path(const PipelineConfig& c);          // prepare/manifest.csv
std::filesystem::path augmented_manifest_path(const PipelineConfig& c);  // augment/manifest.csv
std::filesystem::path tune_dir(const PipelineConfig& c, ArchId arch);
std::filesystem::path ensemble_dir(const PipelineConfig& c, ArchId arch);
std::filesystem::path evaluate_dir(const PipelineConfig& c);

/// Raw (un-augmented) images of one split, resized and scaled to [0, 1].
ImageSet load_split(const PipelineConfig& c, SplitRole role);
/// Originals plus copies written by the augment command.
ImageSet load_augmented_train(const PipelineConfig& c);

/// Default, then tuned (if a tuning result exists), then config overrides.
HyperParams resolve_hyperparams(const PipelineConfig& c, ArchId arch);

void cmd_synth(const PipelineConfig& c, std::ostream& log);
void cmd_prepare(const PipelineConfig& c, std::ostream& log);
void cmd_augment(const PipelineConfig& c, std::ostream& log);
BoTrace cmd_tune(const PipelineConfig& c, ArchId arch, std::ostream& log);
Ensemble cmd_train(const PipelineConfig& c, ArchId arch, std::ostream& log);

struct UncertaintySummary {
  double test_disagreement = 0;
  double noise_disagreement = 0;
};

struct EvaluationOutput {
  PipelineEvaluation evaluation;
  std::array<UncertaintySummary, 3> uncertainty;
};

/// Number of uniform-noise images scored for the disagreement diagnostic.
inline constexpr int kNoiseProbeCount = 50;

EvaluationOutput cmd_evaluate(const PipelineConfig& c, std::ostream& log);

/// ROC points and per-epoch curves as CSV, rebuilt from existing artifacts.
void cmd_plot_data(const PipelineConfig& c, const std::filesystem::path& out_dir, std::ostream& log);

}  // namespace hemafuse
