#include "cgh/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "cgh/rng.hpp"

namespace cgh {

using nlohmann::json;

namespace {

std::string normalize_key(std::string k) {
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

// "a.b=v" -> pointer to nested field; value parsed as JSON when possible,
// comma lists become arrays, anything else stays a string.
json parse_override_value(const std::string& v) {
  if (v.find(',') != std::string::npos) {
    json arr = json::array();
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        arr.push_back(json::parse(item));
      } catch (const json::parse_error&) {
        arr.push_back(item);
      }
    }
    return arr;
  }
  try {
    return json::parse(v);
  } catch (const json::parse_error&) {
    return json(v);
  }
}

void apply_override(json& root, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + spec + "' is not of the form key=value");
  std::string key = normalize_key(spec.substr(0, eq));
  const json value = parse_override_value(spec.substr(eq + 1));
  json* node = &root;
  size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot - pos);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

void check_known_keys(const json& j, const json& schema, const std::string& prefix) {
  for (const auto& [key, value] : j.items()) {
    if (!schema.contains(key))
      throw ConfigError("unknown config key '" + prefix + key + "'");
    if (value.is_object() && schema.at(key).is_object())
      check_known_keys(value, schema.at(key), prefix + key + ".");
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

template <typename T, size_t N>
void read_field(const json& j, const char* key, std::array<T, N>& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != N)
    throw ConfigError(std::string("config field '") + key + "' must be an array of " +
                      std::to_string(N));
  for (size_t i = 0; i < N; ++i) out[i] = v[i].get<T>();
}

}  // namespace

TrainConfig TrainConfig::load(const std::filesystem::path& path,
                              const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse failure in " + path.string() + ": " + e.what());
  }
  return from_json(j, overrides);
}

TrainConfig TrainConfig::from_json(const json& file_json,
                                   const std::vector<std::string>& overrides) {
  TrainConfig defaults;
  json merged = defaults.to_json();  // defaults first
  json normalized = json::object();
  for (const auto& [key, value] : file_json.items()) normalized[normalize_key(key)] = value;
  check_known_keys(normalized, merged, "");
  merged.merge_patch(normalized);
  for (const auto& o : overrides) apply_override(merged, o);
  check_known_keys(merged, defaults.to_json(), "");

  TrainConfig c;
  read_field(merged, "schema", c.schema);
  read_field(merged, "dataset", c.dataset);
  read_field(merged, "backbone", c.backbone);
  read_field(merged, "epochs", c.epochs);
  read_field(merged, "batch_size", c.batch_size);
  read_field(merged, "base_lr", c.base_lr);
  read_field(merged, "weight_decay", c.weight_decay);
  read_field(merged, "sgd_momentum", c.sgd_momentum);
  read_field(merged, "warmup_steps", c.warmup_steps);
  read_field(merged, "bank_size", c.bank_size);
  read_field(merged, "embed_dim", c.embed_dim);
  read_field(merged, "hidden_dim", c.hidden_dim);
  read_field(merged, "hypercolumn_dim", c.hypercolumn_dim);
  read_field(merged, "tau_s", c.tau_s);
  read_field(merged, "tau_t", c.tau_t);
  read_field(merged, "tau_h", c.tau_h);
  read_field(merged, "ema_m", c.ema_m);
  read_field(merged, "layer_set", c.layer_set);
  read_field(merged, "context_variant", c.context_variant);
  read_field(merged, "use_predictor", c.use_predictor);
  read_field(merged, "seed", c.seed);
  read_field(merged, "data_root", c.data_root);
  read_field(merged, "run_root", c.run_root);
  read_field(merged, "image_size", c.image_size);
  read_field(merged, "checkpoint_every", c.checkpoint_every);
  read_field(merged, "keep_all_checkpoints", c.keep_all_checkpoints);
  read_field(merged, "knn_monitor_every", c.knn_monitor_every);
  read_field(merged, "knn_monitor_train_cap", c.knn_monitor_train_cap);
  read_field(merged, "knn_monitor_val_cap", c.knn_monitor_val_cap);
  read_field(merged, "pr_monitor", c.pr_monitor);
  if (merged.contains("synthetic")) {
    const auto& s = merged.at("synthetic");
    read_field(s, "classes", c.synthetic.classes);
    read_field(s, "train_per_class", c.synthetic.train_per_class);
    read_field(s, "val_per_class", c.synthetic.val_per_class);
  }
  if (merged.contains("aug")) {
    const auto& a = merged.at("aug");
    read_field(a, "crop_scale_weak", c.aug.crop_scale_weak);
    read_field(a, "crop_scale_contrastive", c.aug.crop_scale_contrastive);
    read_field(a, "aspect_range", c.aug.aspect_range);
    read_field(a, "flip_prob", c.aug.flip_prob);
    read_field(a, "jitter_prob", c.aug.jitter_prob);
    read_field(a, "jitter_strength", c.aug.jitter_strength);
    read_field(a, "grayscale_prob", c.aug.grayscale_prob);
    read_field(a, "blur_prob", c.aug.blur_prob);
    read_field(a, "blur_sigma", c.aug.blur_sigma);
  }
  c.validate_and_normalize();
  return c;
}

json TrainConfig::to_json() const {
  json j;
  j["schema"] = schema;
  j["dataset"] = dataset;
  j["backbone"] = backbone;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["base_lr"] = base_lr;
  j["weight_decay"] = weight_decay;
  j["sgd_momentum"] = sgd_momentum;
  j["warmup_steps"] = warmup_steps;
  j["bank_size"] = bank_size;
  j["embed_dim"] = embed_dim;
  j["hidden_dim"] = hidden_dim;
  j["hypercolumn_dim"] = hypercolumn_dim;
  j["tau_s"] = tau_s;
  j["tau_t"] = tau_t;
  j["tau_h"] = tau_h;
  j["ema_m"] = ema_m;
  j["layer_set"] = layer_set;
  j["context_variant"] = context_variant;
  j["use_predictor"] = use_predictor;
  j["seed"] = seed;
  j["data_root"] = data_root;
  j["run_root"] = run_root;
  j["image_size"] = image_size;
  j["checkpoint_every"] = checkpoint_every;
  j["keep_all_checkpoints"] = keep_all_checkpoints;
  j["knn_monitor_every"] = knn_monitor_every;
  j["knn_monitor_train_cap"] = knn_monitor_train_cap;
  j["knn_monitor_val_cap"] = knn_monitor_val_cap;
  j["pr_monitor"] = pr_monitor;
  j["synthetic"] = {{"classes", synthetic.classes},
                    {"train_per_class", synthetic.train_per_class},
                    {"val_per_class", synthetic.val_per_class}};
  j["aug"] = {{"crop_scale_weak", aug.crop_scale_weak},
              {"crop_scale_contrastive", aug.crop_scale_contrastive},
              {"aspect_range", aug.aspect_range},
              {"flip_prob", aug.flip_prob},
              {"jitter_prob", aug.jitter_prob},
              {"jitter_strength", aug.jitter_strength},
              {"grayscale_prob", aug.grayscale_prob},
              {"blur_prob", aug.blur_prob},
              {"blur_sigma", aug.blur_sigma}};
  return j;
}

std::string TrainConfig::serialize() const { return to_json().dump(2) + "\n"; }

void TrainConfig::validate_and_normalize() {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };

  if (schema != "cgh-config-v1")
    fail("schema must be 'cgh-config-v1', got '" + schema + "'");

  const auto backbones = known_backbones();
  if (std::find(backbones.begin(), backbones.end(), backbone) == backbones.end())
    fail("unknown backbone '" + backbone + "'");
  const auto datasets = known_datasets();
  if (std::find(datasets.begin(), datasets.end(), dataset) == datasets.end())
    fail("unknown dataset '" + dataset + "'");

  if (epochs <= 0) fail("epochs must be > 0");
  if (batch_size <= 0) fail("batch_size must be > 0");
  if (!(base_lr > 0.0)) fail("base_lr must be > 0");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (sgd_momentum < 0.0 || sgd_momentum >= 1.0) fail("sgd_momentum must be in [0,1)");
  if (warmup_steps < 0) fail("warmup_steps must be >= 0");

  if (!(tau_s > 0.0)) fail("tau_s must be > 0");
  if (!(tau_t > 0.0)) fail("tau_t must be > 0");
  if (!(tau_h > 0.0)) fail("tau_h must be > 0");
  if (ema_m < 0.0 || ema_m > 1.0) fail("ema_m must be in [0,1]");

  if (embed_dim <= 0) fail("embed_dim must be > 0");
  if (hidden_dim <= 0) fail("hidden_dim must be > 0");
  if (hypercolumn_dim <= 0) fail("hypercolumn_dim must be > 0");
  if (bank_size <= batch_size)
    fail("bank_size must be > batch_size (got " + std::to_string(bank_size) + " vs " +
         std::to_string(batch_size) + ")");
  if (bank_size % batch_size != 0)
    fail("bank_size must be a multiple of batch_size so every bank entry survives "
         "exactly bank_size/batch_size steps");

  if (context_variant != "cross" && context_variant != "same" && context_variant != "global")
    fail("context_variant must be one of cross, same, global");

  if (layer_set.empty()) fail("layer-set must not be empty");
  std::set<int> ls(layer_set.begin(), layer_set.end());
  for (int l : ls)
    if (l < 1 || l > 4) fail("layer-set entries must be blocks 1..4");
  if (!ls.count(4)) fail("layer-set must contain block 4");
  layer_set.assign(ls.begin(), ls.end());
  // The global variant never touches the hypercolumn branch.
  if (context_variant == "global") layer_set = {4};

  if (image_size < 0) fail("image_size must be >= 0");
  if (image_size > 0 && image_size % 4 != 0) fail("image_size must be a multiple of 4");
  if (checkpoint_every <= 0) fail("checkpoint_every must be > 0");
  if (knn_monitor_every < 0) fail("knn_monitor_every must be >= 0");
  if (synthetic.classes < 2) fail("synthetic.classes must be >= 2");
  if (synthetic.train_per_class <= 0) fail("synthetic.train_per_class must be > 0");
  if (synthetic.val_per_class <= 0) fail("synthetic.val_per_class must be > 0");

  auto check_prob = [&](double p, const char* name) {
    if (p < 0.0 || p > 1.0) fail(std::string(name) + " must be in [0,1]");
  };
  check_prob(aug.flip_prob, "aug.flip_prob");
  check_prob(aug.jitter_prob, "aug.jitter_prob");
  check_prob(aug.grayscale_prob, "aug.grayscale_prob");
  if (aug.blur_prob > 1.0) fail("aug.blur_prob must be <= 1");
  auto check_range = [&](const std::array<double, 2>& r, const char* name, double lo_min) {
    if (!(r[0] > lo_min) || !(r[1] >= r[0]))
      fail(std::string(name) + " must satisfy " + std::to_string(lo_min) + " < lo <= hi");
  };
  check_range(aug.crop_scale_weak, "aug.crop_scale_weak", 0.0);
  check_range(aug.crop_scale_contrastive, "aug.crop_scale_contrastive", 0.0);
  check_range(aug.aspect_range, "aug.aspect_range", 0.0);
  if (aug.jitter_strength < 0.0) fail("aug.jitter_strength must be >= 0");
}

uint64_t TrainConfig::content_hash() const {
  const std::string s = to_json().dump();
  return fnv1a64(s);
}

}  // namespace cgh
