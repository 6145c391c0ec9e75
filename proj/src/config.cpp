#include "icrl/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "icrl/errors.hpp"

namespace icrl {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(std::string(key) + ": expected an unsigned integer, got '" + std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  try {
    std::size_t used = 0;
    const double d = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + s + "'");
  }
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError(std::string(key) + ": expected on|off, got '" + std::string(v) + "'");
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string onoff(bool b) { return b ? "on" : "off"; }

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    auto end = v.find(',', pos);
    if (end == std::string_view::npos) end = v.size();
    out.push_back(trim(v.substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

void set_losses(LossWeights& w, std::string_view key, std::string_view v) {
  bool cls = false, intra = false, inter = false;
  for (const auto& term : split_list(v)) {
    if (term == "cls") cls = true;
    else if (term == "intra") intra = true;
    else if (term == "inter") inter = true;
    else throw ConfigError(std::string(key) + ": unknown loss term '" + term + "'");
  }
  if (!cls) throw ConfigError(std::string(key) + ": the classification term 'cls' is required");
  w.use_intra = intra;
  w.use_inter = inter;
}

std::string get_losses(const LossWeights& w) {
  return std::string("cls") + (w.use_intra ? ",intra" : "") + (w.use_inter ? ",inter" : "");
}

struct KeyDef {
  const char* name;
  const char* help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view, std::string_view)> set;
};

#define ICRL_SIZE(NAME, FIELD, HELP)                                                          \
  KeyDef{NAME, HELP, [](const RunConfig& c) { return std::to_string(c.FIELD); },              \
         [](RunConfig& c, std::string_view k, std::string_view v) {                           \
           c.FIELD = static_cast<decltype(c.FIELD)>(to_u64(k, v));                            \
         }}
#define ICRL_REAL(NAME, FIELD, HELP)                                                          \
  KeyDef{NAME, HELP, [](const RunConfig& c) { return num(c.FIELD); },                         \
         [](RunConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_double(k, v); }}
#define ICRL_BOOL(NAME, FIELD, HELP)                                                          \
  KeyDef{NAME, HELP, [](const RunConfig& c) { return onoff(c.FIELD); },                       \
         [](RunConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_bool(k, v); }}
#define ICRL_TEXT(NAME, FIELD, HELP)                                                          \
  KeyDef{NAME, HELP, [](const RunConfig& c) { return c.FIELD; },                              \
         [](RunConfig& c, std::string_view, std::string_view v) { c.FIELD = std::string(v); }}

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      ICRL_TEXT("dataset", dataset, "FSDS dataset file"),
      ICRL_TEXT("checkpoint", checkpoint, "input checkpoint (pretrain output for meta-train, model for eval/inspect)"),
      ICRL_TEXT("out", out, "output path (checkpoint, dataset or report, depending on the command)"),
      ICRL_TEXT("split", split, "class split file; empty splits by split_ratios with the run seed"),
      KeyDef{"split_ratios", "train,val,test class fractions",
             [](const RunConfig& c) {
               return num(c.split_ratios.train) + "," + num(c.split_ratios.val) + "," + num(c.split_ratios.test);
             },
             [](RunConfig& c, std::string_view k, std::string_view v) {
               const auto parts = split_list(v);
               if (parts.size() != 3) throw ConfigError(std::string(k) + ": expected three comma-separated fractions");
               c.split_ratios = {to_double(k, parts[0]), to_double(k, parts[1]), to_double(k, parts[2])};
             }},
      ICRL_TEXT("eval_split", eval_split, "split evaluated by eval and inspect: train|val|test"),
      ICRL_SIZE("episodes", episodes, "evaluation episodes"),
      ICRL_SIZE("threads", threads, "evaluation worker threads"),
      ICRL_BOOL("from_scratch", from_scratch, "meta-train from a fresh initialization instead of a checkpoint"),

      ICRL_SIZE("seed", train.seed, "run seed; every random stream is derived from it"),
      ICRL_SIZE("n", train.n, "classes per episode (N)"),
      ICRL_SIZE("k", train.k, "support instances per class (K)"),
      ICRL_SIZE("m", train.m, "query instances per class (M)"),
      ICRL_SIZE("epochs", train.epochs, "meta-training epochs"),
      ICRL_SIZE("episodes_per_epoch", train.episodes_per_epoch, "meta-training episodes per epoch"),
      ICRL_REAL("backbone_lr", train.backbone_lr, "meta-training learning rate of the backbone"),
      ICRL_REAL("module_lr", train.module_lr, "meta-training learning rate of extractor, AIRN and temperature"),
      ICRL_REAL("momentum", train.momentum, "Nesterov momentum"),
      ICRL_REAL("weight_decay", train.weight_decay, "L2 weight decay"),
      ICRL_REAL("lr_decay", train.lr_decay, "learning-rate multiplier applied at each milestone"),
      KeyDef{"milestones", "comma-separated 0-based epochs; empty means 50% and 75% of the epochs",
             [](const RunConfig& c) {
               std::string s;
               for (std::size_t i = 0; i < c.train.milestones.size(); ++i)
                 s += (i ? "," : "") + std::to_string(c.train.milestones[i]);
               return s;
             },
             [](RunConfig& c, std::string_view k, std::string_view v) {
               c.train.milestones.clear();
               if (trim(v).empty()) return;
               for (const auto& p : split_list(v)) c.train.milestones.push_back(to_u64(k, p));
             }},
      ICRL_REAL("lambda1", train.loss.lambda1, "weight of the intra-class loss"),
      ICRL_REAL("lambda2", train.loss.lambda2, "weight of the inter-class loss"),
      KeyDef{"losses", "active loss terms: cls[,intra][,inter]",
             [](const RunConfig& c) { return get_losses(c.train.loss); },
             [](RunConfig& c, std::string_view k, std::string_view v) { set_losses(c.train.loss, k, v); }},
      ICRL_BOOL("augment", train.augment, "flip and crop augmentation during training"),
      ICRL_BOOL("shuffle_support", train.shuffle_support, "shuffle the support order of every training episode"),
      ICRL_SIZE("pretrain_epochs", train.pretrain_epochs, "pre-training epochs"),
      ICRL_SIZE("pretrain_batch", train.pretrain_batch, "pre-training batch size"),
      ICRL_REAL("pretrain_lr", train.pretrain_lr, "pre-training learning rate"),
      ICRL_REAL("pretrain_holdout", train.pretrain_holdout, "per-class fraction held out for pre-training model selection"),
      ICRL_SIZE("pretrain_val_episodes", train.pretrain_val_episodes, "1-shot episodes per pre-training validation"),

      ICRL_SIZE("blocks", model.backbone.blocks, "backbone conv blocks"),
      ICRL_SIZE("channels", model.backbone.channels, "backbone channels (d)"),
      KeyDef{"pooling", "feature extractor: full|model-1|model-2|model-3|model-4|model-5",
             [](const RunConfig& c) { return std::string(to_string(c.model.pooling)); },
             [](RunConfig& c, std::string_view, std::string_view v) { c.model.pooling = parse_pooling(v); }},
      ICRL_BOOL("airn", model.use_airn, "instance revaluing network; off averages the support"),
      ICRL_SIZE("airn_hidden", model.airn_hidden, "AIRN hidden width; 0 means max(4, 4K)"),
      ICRL_BOOL("zero_init_airn", model.zero_init_airn, "initialize AIRN output weights to zero (uniform a_k)"),
      ICRL_REAL("tau", model.tau, "cosine classifier temperature"),
      ICRL_BOOL("learn_tau", model.learn_tau, "learn the temperature"),
      ICRL_REAL("input_mean", model.input_mean, "subtracted from every pixel before the backbone"),
      ICRL_REAL("input_std", model.input_std, "every pixel is divided by this after centering"),

      ICRL_SIZE("synth.classes", synth.classes, "synthetic classes"),
      ICRL_SIZE("synth.per_class", synth.per_class, "synthetic instances per class"),
      ICRL_SIZE("synth.channels", synth.channels, "synthetic image channels"),
      ICRL_SIZE("synth.size", synth.size, "synthetic image side length"),
      ICRL_REAL("synth.separation", synth.separation, "expected distance between class centers"),
      ICRL_REAL("synth.noise", synth.noise, "per-pixel noise standard deviation"),
      ICRL_REAL("synth.outlier_fraction", synth.outlier_fraction, "fraction of instances replaced by outliers"),
      KeyDef{"synth.outlier_rule", "outlier draw rule: other-class|uniform",
             [](const RunConfig& c) { return std::string(to_string(c.synth.outlier_rule)); },
             [](RunConfig& c, std::string_view, std::string_view v) { c.synth.outlier_rule = parse_outlier_rule(v); }},
  };
  return defs;
}

#undef ICRL_SIZE
#undef ICRL_REAL
#undef ICRL_BOOL
#undef ICRL_TEXT

const KeyDef& find_key(std::string_view key) {
  for (const auto& d : key_defs())
    if (d.name == key) return d;
  throw ConfigError("unknown configuration key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  try {
    find_key(key).set(*this, key, trim(value));
  } catch (const ContractError& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

std::string RunConfig::get(std::string_view key) const { return find_key(key).get(*this); }

void RunConfig::validate() const {
  train.validate();
  if (eval_split != "train" && eval_split != "val" && eval_split != "test") {
    throw ConfigError("eval_split must be train, val or test");
  }
  if (episodes == 0) throw ConfigError("episodes must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
  if (!(model.tau > 0)) throw ConfigError("tau must be positive");
  const auto& r = split_ratios;
  if (r.train < 0 || r.val < 0 || r.test < 0 || r.train + r.val + r.test > 1.0 + 1e-9) {
    throw ConfigError("split_ratios must be non-negative and sum to at most 1");
  }
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    const RunConfig defaults;
    std::vector<ConfigKey> out;
    for (const auto& d : key_defs()) out.push_back({d.name, d.get(defaults), d.help});
    return out;
  }();
  return keys;
}

void apply_config_text(RunConfig& config, std::string_view text, const std::string& origin) {
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      config.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig config;
  apply_config_text(config, ss.str(), path.string());
  return config;
}

}  // namespace icrl
