#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mtda/curriculum.hpp"
#include "mtda/data.hpp"
#include "mtda/errors.hpp"
#include "mtda/model.hpp"

namespace mtda {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '.')
      return false;
  return true;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

/// Flat, line-oriented configuration: one `key = value` per line, dotted
/// namespaces, full-line `#` comments. Keys keep file order, duplicates are
/// rejected, and typed getters mark keys as consumed so that leftovers can be
/// reported as unknown.
class ConfigMap {
 public:
  ConfigMap() = default;

  static ConfigMap parse_string(const std::string& text, const std::string& origin = "<string>") {
    ConfigMap map;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string stripped = detail::trim(line);
      if (stripped.empty() || stripped[0] == '#') continue;
      const std::size_t eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": expected 'key = value', got '" + stripped + "'");
      const std::string key = detail::trim(stripped.substr(0, eq));
      const std::string value = detail::trim(stripped.substr(eq + 1));
      if (!detail::valid_key(key))
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": bad key '" + key + "'");
      if (map.contains(key))
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
      map.entries_.emplace_back(key, value);
    }
    return map;
  }

  static ConfigMap parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_string(buffer.str(), path);
  }

  bool contains(const std::string& key) const { return find(key) != nullptr; }

  // -- typed getters; each marks the key consumed ---------------------------

  std::string get_string(const std::string& key) {
    const std::string* v = find(key);
    if (!v) throw ConfigError("config: missing required key '" + key + "'");
    consumed_.insert(key);
    return *v;
  }
  std::string get_string(const std::string& key, const std::string& fallback) {
    return contains(key) ? get_string(key) : fallback;
  }

  double get_double(const std::string& key) { return parse_double(key, get_string(key)); }
  double get_double(const std::string& key, double fallback) {
    return contains(key) ? get_double(key) : fallback;
  }

  int get_int(const std::string& key) {
    const double v = get_double(key);
    const int i = static_cast<int>(v);
    if (static_cast<double>(i) != v)
      throw ConfigError("config: key '" + key + "' must be an integer");
    return i;
  }
  int get_int(const std::string& key, int fallback) {
    return contains(key) ? get_int(key) : fallback;
  }

  bool get_bool(const std::string& key) {
    const std::string v = get_string(key);
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("config: key '" + key + "' must be 'true' or 'false', got '" + v + "'");
  }
  bool get_bool(const std::string& key, bool fallback) {
    return contains(key) ? get_bool(key) : fallback;
  }

  std::vector<double> get_double_list(const std::string& key) {
    std::vector<double> out;
    for (const std::string& item : split_list(key, get_string(key)))
      out.push_back(parse_double(key, item));
    return out;
  }

  std::vector<std::uint64_t> get_uint64_list(const std::string& key) {
    std::vector<std::uint64_t> out;
    for (const std::string& item : split_list(key, get_string(key))) {
      try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(item, &used);
        if (used != item.size()) throw std::invalid_argument(item);
        out.push_back(static_cast<std::uint64_t>(v));
      } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' has a non-integer item '" + item + "'");
      }
    }
    return out;
  }

  // -- writing ---------------------------------------------------------------

  void set(const std::string& key, const std::string& value) {
    if (!detail::valid_key(key)) throw ConfigError("config: bad key '" + key + "'");
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = value;
        return;
      }
    entries_.emplace_back(key, value);
  }
  void set(const std::string& key, double value) { set(key, detail::format_double(value)); }
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
  void set(const std::string& key, const std::vector<double>& values) {
    std::string joined;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) joined += ", ";
      joined += detail::format_double(values[i]);
    }
    set(key, joined);
  }
  void set(const std::string& key, const std::vector<std::uint64_t>& values) {
    std::string joined;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) joined += ", ";
      joined += std::to_string(values[i]);
    }
    set(key, joined);
  }

  /// Serializes in insertion order; parse(serialize()) reproduces the map.
  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
  }

  /// Throws listing every key no getter ever consumed (catches typos).
  void require_all_consumed() const {
    std::vector<std::string> unknown;
    for (const auto& [k, v] : entries_)
      if (!consumed_.count(k)) unknown.push_back(k);
    if (!unknown.empty()) {
      std::string msg = "config: unknown key(s):";
      for (const auto& k : unknown) msg += " '" + k + "'";
      throw ConfigError(msg);
    }
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return &v;
    return nullptr;
  }

  static double parse_double(const std::string& key, const std::string& text) {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' has a non-numeric value '" + text + "'");
    }
  }

  static std::vector<std::string> split_list(const std::string& key, const std::string& text) {
    std::vector<std::string> items;
    std::string current;
    std::istringstream in(text);
    while (std::getline(in, current, ',')) {
      const std::string item = detail::trim(current);
      if (item.empty())
        throw ConfigError("config: key '" + key + "' has an empty list item");
      items.push_back(item);
    }
    if (items.empty()) throw ConfigError("config: key '" + key + "' has an empty list");
    return items;
  }

  std::vector<std::pair<std::string, std::string>> entries_;
  std::set<std::string> consumed_;
};

// -- enum <-> string names used in config files and CLI flags ---------------

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kSourceOnly: return "source_only";
    case Variant::kAdversarial: return "adversarial";
    case Variant::kAdversarialCurriculum: return "adversarial_curriculum";
    case Variant::kGraphCombined: return "graph_combined";
    case Variant::kGraphCurriculum: return "graph_curriculum";
  }
  throw ContractError("variant_name: unhandled variant");
}

inline Variant variant_from_name(const std::string& name) {
  for (Variant v : {Variant::kSourceOnly, Variant::kAdversarial,
                    Variant::kAdversarialCurriculum, Variant::kGraphCombined,
                    Variant::kGraphCurriculum})
    if (variant_name(v) == name) return v;
  throw ConfigError("config: unknown variant '" + name + "'");
}

inline std::string label_source_name(LabelSource s) {
  switch (s) {
    case LabelSource::kMlpHead: return "mlp";
    case LabelSource::kGraphHead: return "graph";
    case LabelSource::kBothHeads: return "both";
  }
  throw ContractError("label_source_name: unhandled source");
}

inline LabelSource label_source_from_name(const std::string& name) {
  for (LabelSource s : {LabelSource::kMlpHead, LabelSource::kGraphHead, LabelSource::kBothHeads})
    if (label_source_name(s) == name) return s;
  throw ConfigError("config: unknown head '" + name + "' (expected mlp, graph, or both)");
}

enum class TaskKind { kSynthetic, kImageFolder };

/// Fully resolved experiment description: the task to build, the model
/// architecture, the training variant, and the run plan (seeds, output).
struct ExperimentConfig {
  TaskKind task_kind = TaskKind::kSynthetic;
  SyntheticSpec synthetic;
  std::string image_root;     // image-folder task
  std::string source_domain;  // image-folder task

  ArchitectureConfig arch;
  VariantConfig variant;

  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "runs/experiment";

  static ExperimentConfig from_map(ConfigMap& map) {
    ExperimentConfig cfg;

    const std::string kind = map.get_string("task.kind", "synthetic");
    if (kind == "synthetic") {
      cfg.task_kind = TaskKind::kSynthetic;
      SyntheticSpec& s = cfg.synthetic;
      s.n_classes = map.get_int("task.n_classes", s.n_classes);
      s.feature_dim = map.get_int("task.feature_dim", s.feature_dim);
      s.samples_per_class = map.get_int("task.samples_per_class", s.samples_per_class);
      s.eval_samples_per_class =
          map.get_int("task.eval_samples_per_class", s.eval_samples_per_class);
      if (map.contains("task.shift_magnitudes"))
        s.shift_magnitudes = map.get_double_list("task.shift_magnitudes");
      s.noise_scale = map.get_double("task.noise_scale", s.noise_scale);
      s.seed = static_cast<std::uint64_t>(map.get_int("task.seed", static_cast<int>(s.seed)));
      cfg.arch.backbone = BackboneKind::kMlp;
      cfg.arch.n_classes = s.n_classes;
      cfg.arch.input_dim = s.feature_dim;
    } else if (kind == "image_folder") {
      cfg.task_kind = TaskKind::kImageFolder;
      cfg.image_root = map.get_string("task.root");
      cfg.source_domain = map.get_string("task.source_domain");
      cfg.arch.backbone = BackboneKind::kSmallConv;
      // n_classes is discovered from the class directories at load time.
    } else {
      throw ConfigError("config: task.kind must be 'synthetic' or 'image_folder'");
    }

    const std::string backbone = map.get_string(
        "arch.backbone", cfg.arch.backbone == BackboneKind::kMlp ? "mlp" : "smallconv");
    if (backbone == "mlp") cfg.arch.backbone = BackboneKind::kMlp;
    else if (backbone == "smallconv") cfg.arch.backbone = BackboneKind::kSmallConv;
    else throw ConfigError("config: arch.backbone must be 'mlp' or 'smallconv'");
    cfg.arch.hidden_dim = map.get_int("arch.hidden_dim", cfg.arch.hidden_dim);
    cfg.arch.feature_dim = map.get_int("arch.feature_dim", cfg.arch.feature_dim);
    cfg.arch.disc_hidden = map.get_int("arch.disc_hidden", cfg.arch.disc_hidden);
    cfg.arch.conv_dropout = map.get_double("arch.conv_dropout", cfg.arch.conv_dropout);
    cfg.arch.disc_dropout = map.get_double("arch.disc_dropout", cfg.arch.disc_dropout);

    VariantConfig& v = cfg.variant;
    v.variant = variant_from_name(map.get_string("variant.name", variant_name(v.variant)));
    v.harvest = label_source_from_name(
        map.get_string("variant.harvest", label_source_name(v.harvest)));
    v.edge_labeler = label_source_from_name(
        map.get_string("variant.edge_labeler", label_source_name(v.edge_labeler)));
    const std::string order = map.get_string(
        "variant.order", v.order == CurriculumOrder::kEasiestFirst ? "easiest_first"
                                                                   : "hardest_first");
    if (order == "easiest_first") v.order = CurriculumOrder::kEasiestFirst;
    else if (order == "hardest_first") v.order = CurriculumOrder::kHardestFirst;
    else throw ConfigError("config: variant.order must be 'easiest_first' or 'hardest_first'");
    v.steps = map.get_int("variant.steps", v.steps);
    v.adaptation_iters = map.get_int("variant.adaptation_iters", v.adaptation_iters);
    v.finetune_iters = map.get_int("variant.finetune_iters", v.finetune_iters);
    v.batch_size = map.get_int("variant.batch_size", v.batch_size);
    v.pretrain_max_iters = map.get_int("variant.pretrain_max_iters", v.pretrain_max_iters);
    v.pretrain_patience = map.get_int("variant.pretrain_patience", v.pretrain_patience);
    v.pretrain_holdout_fraction =
        map.get_double("variant.pretrain_holdout_fraction", v.pretrain_holdout_fraction);
    v.pretrain_min_improvement =
        map.get_double("variant.pretrain_min_improvement", v.pretrain_min_improvement);
    v.stratified_targets = map.get_bool("variant.stratified_targets", v.stratified_targets);
    v.anchor_with_source = map.get_bool("variant.anchor_with_source", v.anchor_with_source);
    const std::string ramp = map.get_string(
        "variant.ramp", v.ramp == RampKind::kProgressive ? "progressive" : "constant");
    if (ramp == "progressive") v.ramp = RampKind::kProgressive;
    else if (ramp == "constant") v.ramp = RampKind::kConstant;
    else throw ConfigError("config: variant.ramp must be 'progressive' or 'constant'");

    v.weights.edge = map.get_double("loss.lambda_edge", v.weights.edge);
    v.weights.node = map.get_double("loss.lambda_node", v.weights.node);
    v.weights.adversarial = map.get_double("loss.lambda_adversarial", v.weights.adversarial);
    v.weights.confidence_threshold =
        map.get_double("loss.confidence_threshold", v.weights.confidence_threshold);

    v.optimizer.learning_rate = map.get_double("optim.learning_rate", v.optimizer.learning_rate);
    v.optimizer.momentum = map.get_double("optim.momentum", v.optimizer.momentum);
    v.optimizer.decay = map.get_double("optim.decay", v.optimizer.decay);

    if (map.contains("run.seeds")) cfg.seeds = map.get_uint64_list("run.seeds");
    cfg.out_dir = map.get_string("run.out", cfg.out_dir);

    map.require_all_consumed();
    cfg.validate();
    return cfg;
  }

  static ExperimentConfig load(const std::string& path) {
    ConfigMap map = ConfigMap::parse_file(path);
    return from_map(map);
  }

  static ExperimentConfig parse(const std::string& text) {
    ConfigMap map = ConfigMap::parse_string(text);
    return from_map(map);
  }

  ConfigMap to_map() const {
    ConfigMap map;
    if (task_kind == TaskKind::kSynthetic) {
      map.set("task.kind", std::string("synthetic"));
      map.set("task.n_classes", synthetic.n_classes);
      map.set("task.feature_dim", synthetic.feature_dim);
      map.set("task.samples_per_class", synthetic.samples_per_class);
      map.set("task.eval_samples_per_class", synthetic.eval_samples_per_class);
      map.set("task.shift_magnitudes", synthetic.shift_magnitudes);
      map.set("task.noise_scale", synthetic.noise_scale);
      map.set("task.seed", static_cast<int>(synthetic.seed));
    } else {
      map.set("task.kind", std::string("image_folder"));
      map.set("task.root", image_root);
      map.set("task.source_domain", source_domain);
    }
    map.set("arch.backbone",
            std::string(arch.backbone == BackboneKind::kMlp ? "mlp" : "smallconv"));
    map.set("arch.hidden_dim", arch.hidden_dim);
    map.set("arch.feature_dim", arch.feature_dim);
    map.set("arch.disc_hidden", arch.disc_hidden);
    map.set("arch.conv_dropout", arch.conv_dropout);
    map.set("arch.disc_dropout", arch.disc_dropout);

    map.set("variant.name", variant_name(variant.variant));
    map.set("variant.harvest", label_source_name(variant.harvest));
    map.set("variant.edge_labeler", label_source_name(variant.edge_labeler));
    map.set("variant.order", std::string(variant.order == CurriculumOrder::kEasiestFirst
                                             ? "easiest_first"
                                             : "hardest_first"));
    map.set("variant.steps", variant.steps);
    map.set("variant.adaptation_iters", variant.adaptation_iters);
    map.set("variant.finetune_iters", variant.finetune_iters);
    map.set("variant.batch_size", variant.batch_size);
    map.set("variant.pretrain_max_iters", variant.pretrain_max_iters);
    map.set("variant.pretrain_patience", variant.pretrain_patience);
    map.set("variant.pretrain_holdout_fraction", variant.pretrain_holdout_fraction);
    map.set("variant.pretrain_min_improvement", variant.pretrain_min_improvement);
    map.set("variant.stratified_targets", variant.stratified_targets);
    map.set("variant.anchor_with_source", variant.anchor_with_source);
    map.set("variant.ramp",
            std::string(variant.ramp == RampKind::kProgressive ? "progressive" : "constant"));

    map.set("loss.lambda_edge", variant.weights.edge);
    map.set("loss.lambda_node", variant.weights.node);
    map.set("loss.lambda_adversarial", variant.weights.adversarial);
    map.set("loss.confidence_threshold", variant.weights.confidence_threshold);

    map.set("optim.learning_rate", variant.optimizer.learning_rate);
    map.set("optim.momentum", variant.optimizer.momentum);
    map.set("optim.decay", variant.optimizer.decay);

    map.set("run.seeds", seeds);
    map.set("run.out", out_dir);
    return map;
  }

  std::string serialize() const { return to_map().serialize(); }

  void validate() const {
    variant.validate();
    if (task_kind == TaskKind::kSynthetic) {
      if (synthetic.n_classes < 2) throw ConfigError("config: task.n_classes must be >= 2");
      arch.validate();
    } else {
      if (image_root.empty()) throw ConfigError("config: task.root must be set");
      if (source_domain.empty()) throw ConfigError("config: task.source_domain must be set");
    }
    if (seeds.empty()) throw ConfigError("config: run.seeds must list at least one seed");
    if (out_dir.empty()) throw ConfigError("config: run.out must be set");
  }
};

}  // namespace mtda
