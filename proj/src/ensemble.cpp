#include "hemafuse/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json_io.hpp"

namespace hemafuse {

const ModelSpec& Ensemble::spec() const {
  if (members.empty()) throw StateError("empty ensemble");
  return members.front().spec;
}

const HyperParams& Ensemble::hyper() const {
  if (members.empty()) throw StateError("empty ensemble");
  return members.front().hyper;
}

std::vector<std::uint64_t> Ensemble::member_seeds() const {
  std::vector<std::uint64_t> s;
  for (const auto& m : members) s.push_back(m.seed);
  return s;
}

std::uint64_t member_seed(std::uint64_t base_seed, int m) {
  return derive_seed(base_seed, {static_cast<std::uint64_t>(m)});
}

std::uint64_t retry_seed(std::uint64_t seed) { return derive_seed(seed, {0x7E7281ULL}); }

Ensemble train_ensemble(const ModelSpec& spec, const HyperParams& h, const ImageSet& train_set,
                        const ImageSet& val_set, const EnsembleOptions& o) {
  if (o.members < 1) throw ArgumentError("ensemble needs at least one member");
  spec.validate();
  h.validate();
  Ensemble e;
  e.base_seed = o.base_seed;
  std::set<std::uint64_t> used;
  for (int m = 0; m < o.members; ++m) {
    std::uint64_t seed = member_seed(o.base_seed, m);
    while (used.count(seed)) seed = retry_seed(seed);
    auto attempt = [&](std::uint64_t s) {
      TrainedModel init{spec, h, init_parameters(spec, s), s, {}, -1};
      return train(init, train_set, val_set, o.train);
    };
    TrainedModel trained;
    try {
      trained = attempt(seed);
    } catch (const TrainingError&) {
      seed = retry_seed(seed);
      try {
        trained = attempt(seed);
      } catch (const TrainingError& again) {
        throw TrainingError("ensemble member " + std::to_string(m) + " diverged twice: " + again.what(), again.epoch,
                            again.batch);
      }
    }
    used.insert(seed);
    if (o.on_member) o.on_member(m, trained);
    e.members.push_back(std::move(trained));
  }
  return e;
}

double entropy(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0) h -= p[i] * std::log(p[i]);
  return h;
}

UncertainPrediction aggregate(const std::vector<ScoreVector>& member_scores,
                              const std::vector<Eigen::VectorXd>& member_vars) {
  if (member_scores.empty()) throw ArgumentError("aggregate needs at least one member");
  const Eigen::Index c = member_scores.front().size();
  for (const auto& s : member_scores)
    if (s.size() != c) throw ShapeError("member score vectors differ in length");
  if (!member_vars.empty()) {
    if (member_vars.size() != member_scores.size()) throw ShapeError("one variance vector per member required");
    for (const auto& v : member_vars) {
      if (v.size() != c) throw ShapeError("member variance vector has the wrong length");
      if (!(v.array() >= 0).all()) throw ArgumentError("member variances must be non-negative");
    }
  }
  const double m = static_cast<double>(member_scores.size());

  UncertainPrediction out;
  out.member_scores = member_scores;
  out.mu = Eigen::VectorXd::Zero(c);
  for (const auto& s : member_scores) out.mu += s;
  out.mu /= m;
  // Mean of variances plus the (population) variance of means; the centred
  // form equals mean(mu_i^2) - mu^2 but cannot go negative.
  out.sigma2 = Eigen::VectorXd::Zero(c);
  for (const auto& s : member_scores) out.sigma2 += (s - out.mu).array().square().matrix();
  for (const auto& v : member_vars) out.sigma2 += v;
  out.sigma2 /= m;

  double mean_member_entropy = 0.0;
  for (const auto& s : member_scores) mean_member_entropy += entropy(s);
  out.disagreement = std::max(0.0, entropy(out.mu) - mean_member_entropy / m);
  return out;
}

std::vector<UncertainPrediction> predict_uncertain(const Ensemble& e, const std::vector<ImageTensor>& images) {
  if (e.members.empty()) throw StateError("empty ensemble");
  std::vector<std::vector<ScoreVector>> per_member;
  for (const auto& m : e.members) per_member.push_back(predict_proba(m, images));
  std::vector<UncertainPrediction> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::vector<ScoreVector> scores;
    for (const auto& pm : per_member) scores.push_back(pm[i]);
    out.push_back(aggregate(scores));
  }
  return out;
}

double mean_disagreement(const std::vector<UncertainPrediction>& preds) {
  if (preds.empty()) throw ArgumentError("no predictions");
  double s = 0.0;
  for (const auto& p : preds) s += p.disagreement;
  return s / static_cast<double>(preds.size());
}

namespace {
std::filesystem::path member_stem(const std::filesystem::path& dir, int m) {
  return dir / ("member_" + std::to_string(m));
}
}  // namespace

void save_ensemble(const Ensemble& e, const std::filesystem::path& dir) {
  if (e.members.empty()) throw StateError("cannot save an empty ensemble");
  for (int m = 0; m < e.size(); ++m) save_model(e.members[static_cast<std::size_t>(m)], member_stem(dir, m));
  detail::Json seeds = detail::Json::array();
  for (auto s : e.member_seeds()) seeds.push_back(s);
  detail::write_json(dir / "ensemble.json", detail::Json{{"M", e.size()},
                                                         {"base_seed", e.base_seed},
                                                         {"member_seeds", seeds},
                                                         {"spec", detail::to_json(e.spec())},
                                                         {"hyperparams", detail::to_json(e.hyper())}});
}

Ensemble load_ensemble(const std::filesystem::path& dir) {
  const auto index = dir / "ensemble.json";
  if (!std::filesystem::exists(index)) throw DataError("no ensemble at " + dir.string());
  const auto j = detail::read_json(index);
  Ensemble e;
  try {
    e.base_seed = j.at("base_seed").get<std::uint64_t>();
    const int m = j.at("M").get<int>();
    const auto seeds = j.at("member_seeds").get<std::vector<std::uint64_t>>();
    const auto spec = detail::spec_from_json(j.at("spec"));
    if (m < 1 || seeds.size() != static_cast<std::size_t>(m))
      throw DataError("ensemble.json: M does not match member_seeds");
    for (int i = 0; i < m; ++i) {
      auto member = load_model(member_stem(dir, i));
      if (!(member.spec == spec)) throw DataError("ensemble member " + std::to_string(i) + " has a different spec");
      if (member.seed != seeds[static_cast<std::size_t>(i)])
        throw DataError("ensemble member " + std::to_string(i) + " seed does not match ensemble.json");
      e.members.push_back(std::move(member));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("malformed " + index.string() + ": " + ex.what());
  }
  return e;
}

}  // namespace hemafuse
