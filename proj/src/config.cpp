#include "hemafuse/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <set>
#include <vector>

#include "byte_io.hpp"

namespace hemafuse {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-')) return false;
  return true;
}

/// Drops a trailing comment that is not inside double quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

}  // namespace

ConfigFile parse_config_text(const std::string& text, const std::filesystem::path& base_dir) {
  ConfigFile cfg;
  cfg.hash = fnv1a64(text);
  cfg.base_dir = base_dir;
  std::string section;
  std::size_t pos = 0;
  for (int line_no = 1; pos <= text.size(); ++line_no) {
    const auto end = std::min(text.find('\n', pos), text.size());
    const std::string line = trim(strip_comment(text.substr(pos, end - pos)));
    pos = end + 1;
    const std::string where = "config line " + std::to_string(line_no);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!valid_key(section)) throw ConfigError(where + ": invalid section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!valid_key(key)) throw ConfigError(where + ": invalid key '" + key + "'");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    else if (value.find('"') != std::string::npos) throw ConfigError(where + ": unbalanced quotes");
    if (!section.empty()) key = section + "." + key;
    if (!cfg.values.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
  }
  return cfg;
}

ConfigFile load_config_file(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config_text(detail::read_text(path), path.parent_path());
}

HyperParams HyperOverride::apply(HyperParams h) const {
  if (units) h.units = *units;
  if (optimizer) h.optimizer = *optimizer;
  if (learning_rate) h.learning_rate = *learning_rate;
  if (momentum) h.momentum = *momentum;
  if (dropout_rate) h.dropout_rate = *dropout_rate;
  return h;
}

HyperParams PipelineConfig::default_hyperparams(ArchId arch) const {
  return hyper_defaults == HyperDefaults::Desk ? desk_hyperparams(arch) : reference_hyperparams(arch);
}

void PipelineConfig::validate() const {
  if (workdir.empty()) throw ConfigError("workdir is required");
  if (dataset_root.empty()) throw ConfigError("dataset.root is required");
  if (class_dirs[0].empty() || class_dirs[1].empty() || class_dirs[0] == class_dirs[1])
    throw ConfigError("dataset.class_dirs must name two different directories");
  if (image_size < 32 || image_size > 1024) throw ConfigError("image_size must lie in [32, 1024]");
  if (synth_per_class < 5) throw ConfigError("synth.per_class must be >= 5");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (ensemble_members < 1 || ensemble_members > 64) throw ConfigError("ensemble.members must lie in [1, 64]");
  if (bo_k_init < 1) throw ConfigError("bo.k_init must be >= 1");
  if (bo_n_max <= bo_k_init) throw ConfigError("bo.n_max must exceed bo.k_init");
  if (bo_epochs < 1) throw ConfigError("bo.epochs must be >= 1");
  augment.validate();
  bo_space.validate();
  for (ArchId a : kAllArchs) {
    try {
      const auto h = overrides[static_cast<std::size_t>(a)].apply(default_hyperparams(a));
      h.validate();
      make_spec(a, h, image_size, image_size).validate();
    } catch (const ArgumentError& e) {
      throw ConfigError("arch." + arch_letter(a) + ": " + e.what());
    }
  }
}

namespace {

class Reader {
 public:
  explicit Reader(const ConfigFile& f) : file_(f) {}

  const std::string* get(const std::string& key) {
    used_.insert(key);
    const auto it = file_.values.find(key);
    return it == file_.values.end() ? nullptr : &it->second;
  }

  template <typename T>
  void number(const std::string& key, T& out) {
    if (const auto* v = get(key)) out = parse<T>(key, *v);
  }

  template <typename T>
  void number(const std::string& key, std::optional<T>& out) {
    if (const auto* v = get(key)) out = parse<T>(key, *v);
  }

  void boolean(const std::string& key, bool& out) {
    if (const auto* v = get(key)) {
      if (*v == "true") out = true;
      else if (*v == "false") out = false;
      else throw ConfigError(key + ": expected true or false, got '" + *v + "'");
    }
  }

  void path(const std::string& key, std::filesystem::path& out) {
    if (const auto* v = get(key)) {
      if (v->empty()) throw ConfigError(key + ": empty path");
      std::filesystem::path p(*v);
      out = p.is_absolute() ? p : file_.base_dir / p;
    }
  }

  std::vector<std::string> list(const std::string& key, const std::string& v) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
      const auto comma = v.find(',', pos);
      out.push_back(trim(v.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    for (const auto& s : out)
      if (s.empty()) throw ConfigError(key + ": empty list item");
    return out;
  }

  template <typename T>
  T parse(const std::string& key, const std::string& v) {
    T out{};
    const auto* first = v.data();
    const auto* last = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) throw ConfigError(key + ": cannot parse '" + v + "'");
    return out;
  }

  void reject_unknown() const {
    for (const auto& [k, v] : file_.values)
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

 private:
  const ConfigFile& file_;
  std::set<std::string> used_;
};

}  // namespace

PipelineConfig parse_pipeline_config(const ConfigFile& file, std::optional<std::uint64_t> seed_override) {
  PipelineConfig c;
  c.config_hash = file.hash;
  Reader r(file);
  r.path("dataset.root", c.dataset_root);
  if (const auto* v = r.get("dataset.class_dirs")) {
    const auto items = r.list("dataset.class_dirs", *v);
    if (items.size() != 2) throw ConfigError("dataset.class_dirs needs exactly two names");
    c.class_dirs = {items[0], items[1]};
  }
  r.path("workdir", c.workdir);
  r.number("image_size", c.image_size);
  r.number("seed", c.seed);
  if (seed_override) c.seed = *seed_override;

  r.number("synth.per_class", c.synth_per_class);

  r.number("augment.multiplier", c.augment.multiplier);
  r.number("augment.rotation_deg", c.augment.rotation_deg);
  r.number("augment.height_shift", c.augment.height_shift_frac);
  r.number("augment.width_shift", c.augment.width_shift_frac);
  r.number("augment.zoom", c.augment.zoom_frac);
  r.number("augment.shear_deg", c.augment.shear_deg);
  r.boolean("augment.horizontal_flip", c.augment.horizontal_flip);
  r.boolean("augment.vertical_flip", c.augment.vertical_flip);
  if (const auto* v = r.get("augment.class_targets")) {
    const auto items = r.list("augment.class_targets", *v);
    if (items.size() != 2) throw ConfigError("augment.class_targets needs two counts");
    c.augment.class_targets = std::array<std::size_t, 2>{r.parse<std::size_t>("augment.class_targets", items[0]),
                                                         r.parse<std::size_t>("augment.class_targets", items[1])};
  }

  r.number("train.epochs", c.epochs);
  r.number("train.batch_size", c.batch_size);
  if (const auto* v = r.get("train.hyperparams")) {
    if (*v == "desk") c.hyper_defaults = HyperDefaults::Desk;
    else if (*v == "reference") c.hyper_defaults = HyperDefaults::Reference;
    else throw ConfigError("train.hyperparams must be 'desk' or 'reference'");
  }
  r.number("ensemble.members", c.ensemble_members);

  r.number("bo.k_init", c.bo_k_init);
  r.number("bo.n_max", c.bo_n_max);
  r.number("bo.epochs", c.bo_epochs);
  r.number("bo.lr_min", c.bo_space.lr_min);
  r.number("bo.lr_max", c.bo_space.lr_max);
  r.number("bo.momentum_max", c.bo_space.momentum_max);
  r.number("bo.dropout_max", c.bo_space.dropout_max);

  for (ArchId a : kAllArchs) {
    auto& o = c.overrides[static_cast<std::size_t>(a)];
    const std::string p = "arch." + arch_letter(a) + ".";
    r.number(p + "units", o.units);
    if (const auto* v = r.get(p + "optimizer")) {
      try {
        o.optimizer = optimizer_from_string(*v);
      } catch (const ArgumentError& e) {
        throw ConfigError(p + "optimizer: " + e.what());
      }
    }
    r.number(p + "learning_rate", o.learning_rate);
    r.number(p + "momentum", o.momentum);
    r.number(p + "dropout_rate", o.dropout_rate);
  }
  r.reject_unknown();

  c.augment.seed = derive_seed(c.seed, {0xA7});
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  return parse_pipeline_config(load_config_file(path), seed_override);
}

}  // namespace hemafuse
