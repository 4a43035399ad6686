#pragma once

// JSON conversions shared by the sidecar, trace and report writers.

#include <json.hpp>

#include "byte_io.hpp"
#include "hemafuse/eval.hpp"
#include "hemafuse/hyperparams.hpp"
#include "hemafuse/models.hpp"

namespace hemafuse::detail {

using Json = nlohmann::ordered_json;

inline Json to_json(const HyperParams& h) {
  return Json{{"units", h.units},
              {"activation", HyperParams::activation},
              {"optimizer", to_string(h.optimizer)},
              {"learning_rate", h.learning_rate},
              {"momentum", h.momentum},
              {"dropout_rate", h.dropout_rate}};
}

inline HyperParams hyperparams_from_json(const Json& j) {
  HyperParams h;
  h.units = j.at("units").get<int>();
  h.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  h.learning_rate = j.at("learning_rate").get<double>();
  h.momentum = j.at("momentum").get<double>();
  h.dropout_rate = j.at("dropout_rate").get<double>();
  return h;
}

inline Json to_json(const ModelSpec& s) {
  Json blocks = Json::array();
  for (const auto& b : s.blocks) blocks.push_back(Json{{"filters", b.filters}, {"pool", b.pool}});
  return Json{{"arch", to_string(s.arch)},
              {"input_shape", {s.input_h, s.input_w, s.input_c}},
              {"backbone_blocks", blocks},
              {"gru_units", s.gru_units},
              {"dense_units", {s.dense_units[0], s.dense_units[1]}},
              {"dropout_rate", s.dropout_rate},
              {"n_classes", s.n_classes}};
}

inline ModelSpec spec_from_json(const Json& j) {
  ModelSpec s;
  s.arch = arch_from_string(j.at("arch").get<std::string>());
  const auto& in = j.at("input_shape");
  s.input_h = in.at(0).get<int>();
  s.input_w = in.at(1).get<int>();
  s.input_c = in.at(2).get<int>();
  for (const auto& b : j.at("backbone_blocks")) s.blocks.push_back({b.at("filters").get<int>(), b.at("pool").get<bool>()});
  s.gru_units = j.at("gru_units").get<int>();
  s.dense_units = {j.at("dense_units").at(0).get<int>(), j.at("dense_units").at(1).get<int>()};
  s.dropout_rate = j.at("dropout_rate").get<double>();
  s.n_classes = j.at("n_classes").get<int>();
  return s;
}

inline Json to_json(const EpochStats& e) {
  return Json{{"train_loss", e.train_loss}, {"train_acc", e.train_acc}, {"val_loss", e.val_loss}, {"val_acc", e.val_acc}};
}

inline EpochStats epoch_from_json(const Json& j) {
  return {j.at("train_loss").get<double>(), j.at("train_acc").get<double>(), j.at("val_loss").get<double>(),
          j.at("val_acc").get<double>()};
}

inline Json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  Json roc = Json::array();
  for (const auto& p : r.roc) roc.push_back({p.fpr, p.tpr});
  return Json{{"accuracy", opt(r.accuracy)},
              {"precision", opt(r.precision)},
              {"recall", opt(r.recall)},
              {"f1", opt(r.f1)},
              {"specificity", opt(r.specificity)},
              {"confusion", {{"tp", r.confusion.tp}, {"tn", r.confusion.tn}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}}},
              {"roc", roc},
              {"auc", opt(r.auc)},
              {"undefined", r.undefined}};
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

inline Json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace hemafuse::detail
