#include "hemafuse/pipeline.hpp"

#include <cctype>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include "hemafuse/version.hpp"
#include "json_io.hpp"

namespace hemafuse {

namespace fs = std::filesystem;
using detail::Json;

namespace {

// Keys for the per-purpose child streams of the global seed.
constexpr std::uint64_t kSplitStream = 0x5B;
constexpr std::uint64_t kSynthStream = 0x5E;
constexpr std::uint64_t kTuneStream = 0x70;
constexpr std::uint64_t kTuneInitStream = 0x71;
constexpr std::uint64_t kEnsembleStream = 0x7A;
constexpr std::uint64_t kNoiseStream = 0x0E;

std::uint64_t arch_key(ArchId a) { return static_cast<std::uint64_t>(a); }

std::string arch_letter_upper(ArchId a) {
  auto s = arch_letter(a);
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

void reset_dir(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string file_digest(const fs::path& p) {
  const auto bytes = detail::read_file(p);
  return hex64(fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
}

/// Relative paths and bytes of every image under the two class directories.
std::string dataset_digest(const PipelineConfig& c) {
  const auto index = scan_dataset(c.dataset_root, c.class_dirs, false);
  std::string src;
  for (const auto& e : index.entries)
    src += e.path.lexically_relative(c.dataset_root).generic_string() + ":" + file_digest(e.path) + "\n";
  return hex64(fnv1a64(src));
}

std::string rel(const PipelineConfig& c, const fs::path& p) { return p.lexically_relative(c.workdir).generic_string(); }

/// Provenance: command, config hash, seed and digests of consumed/produced files.
void write_run_record(const PipelineConfig& c, const fs::path& dir, const std::string& command,
                      std::optional<ArchId> arch, const std::vector<fs::path>& inputs,
                      const std::vector<fs::path>& outputs, Json extra = Json::object()) {
  auto digests = [&](const std::vector<fs::path>& files) {
    Json j = Json::object();
    for (const auto& f : files) j[rel(c, f)] = file_digest(f);
    return j;
  };
  Json j{{"command", command},
         {"arch", arch ? Json(to_string(*arch)) : Json(nullptr)},
         {"config_hash", hex64(c.config_hash)},
         {"seed", c.seed},
         {"version", kVersion},
         {"inputs", digests(inputs)},
         {"outputs", digests(outputs)}};
  for (auto& [k, v] : extra.items()) j[k] = v;
  detail::write_json(dir / "run.json", j);
}

std::vector<ManifestRow> require_manifest(const PipelineConfig& c) {
  const auto path = manifest_path(c);
  if (!fs::exists(path)) throw DataError("missing split manifest " + path.string() + " (run `prepare` first)");
  return read_manifest(path);
}

ImageTensor load_for_model(const PipelineConfig& c, const fs::path& path) {
  return resize(scale_features(load_image(path)), c.image_size, c.image_size);
}

struct AugmentedRow {
  std::string path;
  int label = 0;
};

std::vector<AugmentedRow> require_augmented_manifest(const PipelineConfig& c) {
  const auto path = augmented_manifest_path(c);
  if (!fs::exists(path)) throw DataError("missing augmented training set " + path.string() + " (run `augment` first)");
  std::istringstream in(detail::read_text(path));
  std::string line;
  std::getline(in, line);
  if (line.rfind("path,label,", 0) != 0) throw DataError("malformed augmented manifest " + path.string());
  std::vector<AugmentedRow> rows;
  while (std::getline(in, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) throw DataError("malformed row in " + path.string());
    const std::string label = line.substr(a + 1, b - a - 1);
    if (label != "0" && label != "1") throw DataError("bad label in " + path.string());
    rows.push_back({line.substr(0, a), label == "1"});
  }
  return rows;
}

void log_epoch(std::ostream& log, const std::string& tag, int epoch, int epochs, const EpochStats& s) {
  log << tag << " epoch " << epoch + 1 << "/" << epochs << std::fixed << std::setprecision(4)
      << " train_loss=" << s.train_loss << " train_acc=" << s.train_acc << " val_loss=" << s.val_loss
      << " val_acc=" << s.val_acc << std::defaultfloat << "\n";
}

std::string describe(const HyperParams& h) {
  std::ostringstream o;
  o << "units=" << h.units << " optimizer=" << to_string(h.optimizer) << " lr=" << h.learning_rate
    << " momentum=" << h.momentum << " dropout=" << h.dropout_rate;
  return o.str();
}

Ensemble require_ensemble(const PipelineConfig& c, ArchId a) {
  const auto dir = ensemble_dir(c, a);
  if (!fs::exists(dir / "ensemble.json"))
    throw DataError("missing ensemble for arch " + arch_letter_upper(a) + " (run `train --arch " + arch_letter(a) +
                    "` first)");
  auto e = load_ensemble(dir);
  if (e.spec().input_h != c.image_size || e.spec().input_w != c.image_size)
    throw DataError("ensemble for arch " + arch_letter_upper(a) + " expects a different image_size; retrain it");
  return e;
}

}  // namespace

fs::path manifest_path(const PipelineConfig& c) { return c.workdir / "prepare" / "manifest.csv"; }
fs::path augmented_manifest_path(const PipelineConfig& c) { return c.workdir / "augment" / "manifest.csv"; }
fs::path tune_dir(const PipelineConfig& c, ArchId a) { return c.workdir / "tune" / arch_letter(a); }
fs::path ensemble_dir(const PipelineConfig& c, ArchId a) { return c.workdir / "train" / arch_letter(a); }
fs::path evaluate_dir(const PipelineConfig& c) { return c.workdir / "evaluate"; }

ImageSet load_split(const PipelineConfig& c, SplitRole role) {
  ImageSet s;
  for (const auto& row : require_manifest(c)) {
    if (row.split != role) continue;
    s.images.push_back(load_for_model(c, c.dataset_root / row.path));
    s.labels.push_back(row.label.value());
  }
  return s;
}

ImageSet load_augmented_train(const PipelineConfig& c) {
  ImageSet s;
  const auto base = augmented_manifest_path(c).parent_path();
  for (const auto& row : require_augmented_manifest(c)) {
    s.images.push_back(load_for_model(c, base / row.path));
    s.labels.push_back(row.label);
  }
  return s;
}

HyperParams resolve_hyperparams(const PipelineConfig& c, ArchId arch) {
  HyperParams h = c.default_hyperparams(arch);
  const auto tuned = tune_dir(c, arch) / "best.json";
  if (fs::exists(tuned)) {
    try {
      h = detail::hyperparams_from_json(detail::read_json(tuned).at("hyperparams"));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed tuning result " + tuned.string() + ": " + e.what());
    }
  }
  h = c.overrides[static_cast<std::size_t>(arch)].apply(h);
  try {
    h.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("hyperparameters for arch ") + arch_letter_upper(arch) + ": " + e.what());
  }
  return h;
}

void cmd_synth(const PipelineConfig& c, std::ostream& log) {
  for (const auto& d : c.class_dirs) {
    const auto dir = c.dataset_root / d;
    if (!fs::exists(dir)) continue;
    for (const auto& f : fs::directory_iterator(dir)) {
      const auto name = f.path().filename().string();
      if (f.is_regular_file() && name.rfind("img_", 0) == 0 && f.path().extension() == ".raw") fs::remove(f.path());
    }
  }
  SynthOptions o;
  o.per_class = c.synth_per_class;
  o.size = c.image_size;
  o.seed = derive_seed(c.seed, {kSynthStream});
  write_synthetic_dataset(c.dataset_root, c.class_dirs, o);
  const auto dir = c.workdir / "synth";
  reset_dir(dir);
  write_run_record(c, dir, "synth", std::nullopt, {}, {},
                   Json{{"per_class", o.per_class},
                        {"size", o.size},
                        {"dataset_digest", dataset_digest(c)}});
  log << "[synth] wrote " << 2 * o.per_class << " images of " << o.size << "x" << o.size << " under "
      << c.dataset_root.string() << "\n";
}

void cmd_prepare(const PipelineConfig& c, std::ostream& log) {
  const auto index = scan_dataset(c.dataset_root, c.class_dirs);
  const auto split = split_dataset(index, derive_seed(c.seed, {kSplitStream}));
  auto rows = manifest_rows(index, split);
  for (auto& r : rows) r.path = fs::path(r.path).lexically_relative(c.dataset_root).generic_string();
  const auto dir = manifest_path(c).parent_path();
  reset_dir(dir);
  write_manifest(manifest_path(c), rows);
  write_run_record(c, dir, "prepare", std::nullopt, {}, {manifest_path(c)},
                   Json{{"dataset_digest", dataset_digest(c)},
                        {"counts",
                         {{"train", split.train.size()}, {"val", split.validation.size()}, {"test", split.test.size()}}}});
  log << "[prepare] " << index.entries.size() << " images: train " << split.train.size() << ", val "
      << split.validation.size() << ", test " << split.test.size() << "\n";
}

void cmd_augment(const PipelineConfig& c, std::ostream& log) {
  const auto rows = require_manifest(c);
  std::vector<AugmentSource> sources;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].split == SplitRole::Train)
      sources.push_back({i, rows[i].label, load_for_model(c, c.dataset_root / rows[i].path)});
  const auto samples = augment_split(sources, c.augment);

  const auto dir = augmented_manifest_path(c).parent_path();
  reset_dir(dir);
  std::string manifest = "path,label,entry,copy,transform,param\n";
  for (const auto& s : samples) {
    char name[48];
    if (s.copy)
      std::snprintf(name, sizeof name, "e%05zu_c%03zu.raw", s.entry_id, *s.copy);
    else
      std::snprintf(name, sizeof name, "e%05zu_orig.raw", s.entry_id);
    const auto relpath = fs::path("images") / c.class_dirs[static_cast<std::size_t>(s.label.value())] / name;
    save_afim(dir / relpath, to_raw(s.image));
    manifest += relpath.generic_string() + "," + std::to_string(s.label.value()) + "," + std::to_string(s.entry_id) +
                "," + (s.copy ? std::to_string(*s.copy) : "") + "," +
                (s.transform ? to_string(s.transform->kind) + "," + num(s.transform->param) : ",") + "\n";
  }
  detail::write_text(augmented_manifest_path(c), manifest);
  std::array<std::size_t, 2> per_class{};
  for (const auto& s : samples) ++per_class[static_cast<std::size_t>(s.label.value())];
  write_run_record(c, dir, "augment", std::nullopt, {manifest_path(c)}, {augmented_manifest_path(c)},
                   Json{{"sources", sources.size()}, {"samples", samples.size()}, {"per_class", per_class}});
  log << "[augment] " << sources.size() << " training originals -> " << samples.size() << " samples ("
      << per_class[0] << " " << c.class_dirs[0] << ", " << per_class[1] << " " << c.class_dirs[1] << ")\n";
}

BoTrace cmd_tune(const PipelineConfig& c, ArchId arch, std::ostream& log) {
  const auto train_set = load_augmented_train(c);
  const auto val_set = load_split(c, SplitRole::Validation);
  const std::string tag = "[tune " + arch_letter(arch) + "]";
  const std::uint64_t init_seed = derive_seed(c.seed, {kTuneInitStream, arch_key(arch)});
  auto objective = [&](const HyperParams& h) {
    const auto spec = make_spec(arch, h, c.image_size, c.image_size);
    TrainedModel m{spec, h, init_parameters(spec, init_seed), init_seed, {}, -1};
    const auto trained = train(m, train_set, val_set, {c.bo_epochs, c.batch_size, {}});
    return evaluate_loss(trained, val_set).accuracy;
  };
  BoOptions o;
  o.k_init = c.bo_k_init;
  o.n_max = c.bo_n_max;
  o.seed = derive_seed(c.seed, {kTuneStream, arch_key(arch)});
  o.space = c.bo_space;
  o.on_iteration = [&](const BoIteration& it) {
    log << tag << " iter " << it.iter << " y=" << std::fixed << std::setprecision(4) << it.y
        << " best=" << it.best_y << std::defaultfloat << (it.failed ? " (failed: " + it.error + ")" : "") << " | "
        << describe(it.theta) << "\n";
  };
  const auto trace = bo_loop(objective, o);

  const auto dir = tune_dir(c, arch);
  reset_dir(dir);
  write_trace_jsonl(trace, dir / "trace.jsonl");
  int failed = 0;
  for (const auto& it : trace.iterations) failed += it.failed;
  detail::write_json(dir / "best.json", Json{{"arch", to_string(arch)},
                                             {"hyperparams", detail::to_json(trace.best_theta)},
                                             {"best_y", trace.best_y},
                                             {"evaluations", trace.iterations.size()},
                                             {"failed", failed}});
  write_run_record(c, dir, "tune", arch, {manifest_path(c), augmented_manifest_path(c)},
                   {dir / "trace.jsonl", dir / "best.json"});
  log << tag << " best val accuracy " << trace.best_y << " with " << describe(trace.best_theta) << "\n";
  return trace;
}

Ensemble cmd_train(const PipelineConfig& c, ArchId arch, std::ostream& log) {
  const auto train_set = load_augmented_train(c);
  const auto val_set = load_split(c, SplitRole::Validation);
  const auto tuned = tune_dir(c, arch) / "best.json";
  const bool used_tuned = fs::exists(tuned);
  const auto h = resolve_hyperparams(c, arch);
  const auto spec = make_spec(arch, h, c.image_size, c.image_size);
  const std::string tag = "[train " + arch_letter(arch) + "]";
  log << tag << " " << c.ensemble_members << " members, " << train_set.size() << " training images, "
      << describe(h) << (used_tuned ? " (tuned)" : "") << "\n";

  int member = 0;
  EnsembleOptions o;
  o.members = c.ensemble_members;
  o.base_seed = derive_seed(c.seed, {kEnsembleStream, arch_key(arch)});
  o.train = {c.epochs, c.batch_size, [&](int epoch, const EpochStats& s, const ParameterSet<float>&) {
               log_epoch(log, tag + " member " + std::to_string(member), epoch, c.epochs, s);
               return true;
             }};
  o.on_member = [&](int m, const TrainedModel& t) {
    log << tag << " member " << m << " kept epoch " << t.best_epoch + 1 << "\n";
    member = m + 1;
  };
  auto e = train_ensemble(spec, h, train_set, val_set, o);

  const auto dir = ensemble_dir(c, arch);
  reset_dir(dir);
  save_ensemble(e, dir);
  std::vector<fs::path> outputs = {dir / "ensemble.json"};
  for (int m = 0; m < e.size(); ++m) {
    const auto stem = "member_" + std::to_string(m);
    detail::write_text(dir / ("curve_" + stem + ".csv"),
                       format_history_csv(e.members[static_cast<std::size_t>(m)].history));
    outputs.push_back(dir / (stem + ".afck"));
    outputs.push_back(dir / (stem + ".json"));
  }
  std::vector<fs::path> inputs = {manifest_path(c), augmented_manifest_path(c)};
  if (used_tuned) inputs.push_back(tuned);
  write_run_record(c, dir, "train", arch, inputs, outputs,
                   Json{{"hyperparams", detail::to_json(h)}, {"hyperparams_source", used_tuned ? "tuned" : "default"}});
  return e;
}

EvaluationOutput cmd_evaluate(const PipelineConfig& c, std::ostream& log) {
  std::array<Ensemble, 3> ensembles;
  for (ArchId a : kAllArchs) ensembles[static_cast<std::size_t>(a)] = require_ensemble(c, a);
  const auto test_set = load_split(c, SplitRole::Test);
  if (test_set.size() == 0) throw DataError("test split is empty");

  EvaluationOutput out;
  out.evaluation = evaluate_pipeline({&ensembles[0], &ensembles[1], &ensembles[2]}, test_set);

  Rng noise_rng(derive_seed(c.seed, {kNoiseStream}));
  std::vector<ImageTensor> noise;
  for (int i = 0; i < kNoiseProbeCount; ++i) {
    ImageTensor img(c.image_size, c.image_size, 3);
    for (Index k = 0; k < img.data().size(); ++k) img.data()[k] = noise_rng.uniform();
    noise.push_back(std::move(img));
  }
  for (std::size_t a = 0; a < 3; ++a) {
    out.uncertainty[a].test_disagreement = mean_disagreement(out.evaluation.predictions[a]);
    out.uncertainty[a].noise_disagreement = mean_disagreement(predict_uncertain(ensembles[a], noise));
  }

  const auto dir = evaluate_dir(c);
  reset_dir(dir);
  const auto& fused = out.evaluation.fused;
  Json metrics = detail::to_json(fused.report);
  metrics["test_size"] = test_set.size();
  Json per_arch = Json::object(), uq = Json::object();
  for (ArchId a : kAllArchs) {
    const auto i = static_cast<std::size_t>(a);
    per_arch[to_string(a)] = detail::to_json(out.evaluation.per_arch[i]);
    uq[to_string(a)] = Json{{"test_mean_disagreement", out.uncertainty[i].test_disagreement},
                            {"noise_mean_disagreement", out.uncertainty[i].noise_disagreement}};
    detail::write_text(dir / ("roc_" + arch_letter(a) + ".csv"), format_roc_csv(out.evaluation.per_arch[i].roc));
  }
  metrics["per_arch"] = per_arch;
  metrics["uncertainty"] = uq;
  detail::write_json(dir / "metrics.json", metrics);
  detail::write_text(dir / "roc_fused.csv", format_roc_csv(fused.report.roc));

  std::string preds = "index,label,decision,fused_score,score_a,score_b,score_c\n";
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    preds += std::to_string(i) + "," + std::to_string(test_set.labels[i]) + "," + std::to_string(fused.decisions[i]) +
             "," + num(fused.fused[i][1] / fused.fused[i].sum());
    for (std::size_t a = 0; a < 3; ++a) preds += "," + num(out.evaluation.predictions[a][i].mu[1]);
    preds += "\n";
  }
  detail::write_text(dir / "predictions.csv", preds);

  std::vector<fs::path> inputs = {manifest_path(c)};
  for (ArchId a : kAllArchs) {
    const auto d = ensemble_dir(c, a);
    inputs.push_back(d / "ensemble.json");
    for (int m = 0; m < ensembles[static_cast<std::size_t>(a)].size(); ++m)
      inputs.push_back(d / ("member_" + std::to_string(m) + ".afck"));
  }
  write_run_record(c, dir, "evaluate", std::nullopt, inputs,
                   {dir / "metrics.json", dir / "roc_fused.csv", dir / "predictions.csv"});

  auto pct = [](const std::optional<double>& v) {
    std::ostringstream o;
    if (v) o << std::fixed << std::setprecision(2) << 100 * *v;
    else o << "undefined";
    return o.str();
  };
  for (ArchId a : kAllArchs) {
    const auto i = static_cast<std::size_t>(a);
    log << "[evaluate] " << to_string(a) << ": accuracy " << pct(out.evaluation.per_arch[i].accuracy)
        << "%, disagreement test " << out.uncertainty[i].test_disagreement << " / noise "
        << out.uncertainty[i].noise_disagreement << "\n";
  }
  const auto& r = fused.report;
  log << "[evaluate] fused: accuracy " << pct(r.accuracy) << "%, precision " << pct(r.precision) << "%, recall "
      << pct(r.recall) << "%, f1 " << pct(r.f1) << "%, specificity " << pct(r.specificity) << "%, auc "
      << (r.auc ? num(*r.auc) : "undefined") << "\n";
  return out;
}

void cmd_plot_data(const PipelineConfig& c, const fs::path& out_dir, std::ostream& log) {
  const auto metrics_path = evaluate_dir(c) / "metrics.json";
  if (!fs::exists(metrics_path)) throw DataError("missing " + metrics_path.string() + " (run `evaluate` first)");
  const auto metrics = detail::read_json(metrics_path);
  auto roc_of = [&](const Json& report) {
    std::vector<RocPoint> pts;
    for (const auto& p : report.at("roc")) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    return pts;
  };
  fs::create_directories(out_dir);
  int files = 0;
  try {
    detail::write_text(out_dir / "roc_fused.csv", format_roc_csv(roc_of(metrics)));
    ++files;
    for (ArchId a : kAllArchs) {
      detail::write_text(out_dir / ("roc_" + arch_letter(a) + ".csv"),
                         format_roc_csv(roc_of(metrics.at("per_arch").at(to_string(a)))));
      const auto e = require_ensemble(c, a);
      for (int m = 0; m < e.size(); ++m)
        detail::write_text(out_dir / ("curve_" + arch_letter(a) + "_member_" + std::to_string(m) + ".csv"),
                           format_history_csv(e.members[static_cast<std::size_t>(m)].history));
      files += 1 + e.size();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed " + metrics_path.string() + ": " + e.what());
  }
  log << "[plot-data] wrote " << files << " CSV files to " << out_dir.string() << "\n";
}

}  // namespace hemafuse
