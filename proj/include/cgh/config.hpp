#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace cgh {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AugConfig {
  std::array<double, 2> crop_scale_weak{0.2, 1.0};
  std::array<double, 2> crop_scale_contrastive{0.2, 1.0};
  std::array<double, 2> aspect_range{3.0 / 4.0, 4.0 / 3.0};
  double flip_prob = 0.5;
  double jitter_prob = 0.8;
  double jitter_strength = 0.4;  // brightness/contrast/saturation; hue uses strength/4
  double grayscale_prob = 0.2;
  double blur_prob = -1.0;  // -1 = auto: 0.5 above 96 px, otherwise disabled
  std::array<double, 2> blur_sigma{0.1, 2.0};

  double resolved_blur_prob(int image_size) const {
    if (blur_prob >= 0.0) return blur_prob;
    return image_size > 96 ? 0.5 : 0.0;
  }
};

struct SyntheticConfig {
  int classes = 20;
  int train_per_class = 200;
  int val_per_class = 50;
};

// Experiment manifest. Field defaults are the reference recipe; a config file
// only needs to name what it changes. Immutable after load_config.
struct TrainConfig {
  std::string schema = "cgh-config-v1";
  std::string dataset = "synthetic";
  std::string backbone = "resnet18";

  int epochs = 400;
  int batch_size = 256;
  double base_lr = 0.06;
  double weight_decay = 5e-4;
  double sgd_momentum = 0.9;
  int warmup_steps = 0;

  int bank_size = 4096;
  int embed_dim = 512;
  int hidden_dim = 4096;
  int hypercolumn_dim = 512;

  double tau_s = 0.1;
  double tau_t = 0.04;
  double tau_h = 0.08;
  double ema_m = 0.999;

  std::vector<int> layer_set{3, 4};
  std::string context_variant = "cross";
  bool use_predictor = false;
  uint64_t seed = 1;

  std::string data_root;  // empty -> $CGH_DATA_ROOT
  std::string run_root = "runs";
  int image_size = 0;  // 0 -> dataset default
  int checkpoint_every = 1;
  bool keep_all_checkpoints = false;
  int knn_monitor_every = 0;
  int knn_monitor_train_cap = 5000;
  int knn_monitor_val_cap = 1000;
  bool pr_monitor = false;

  SyntheticConfig synthetic;
  AugConfig aug;

  // Parses `path`, fills absent fields with the defaults above, applies
  // key=value overrides, then validates. Throws ConfigError with the
  // offending field and constraint.
  static TrainConfig load(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});
  static TrainConfig from_json(const nlohmann::json& j,
                               const std::vector<std::string>& overrides = {});

  nlohmann::json to_json() const;
  std::string serialize() const;  // pretty JSON, load-compatible

  void validate_and_normalize();  // throws ConfigError
  uint64_t content_hash() const;
};

// Registry name lists, defined next to the registries themselves.
std::vector<std::string> known_backbones();
std::vector<std::string> known_datasets();

}  // namespace cgh
