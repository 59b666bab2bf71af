#pragma once

// Experiment configuration. Files are dotted key = value lines ('#'
// comments); the schema is strict: unknown keys and out-of-range values
// are rejected at load time. The same machinery backs --override flags.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include <excb/balancer.hpp>
#include <excb/model.hpp>
#include <excb/synthdata.hpp>

namespace excb {

inline constexpr const char* kCodeVersion = "0.1.0";
inline constexpr int kTelemetrySchemaVersion = 1;

enum class Precision { f32, f64 };

struct ExperimentConfig {
  // run
  uint64_t seed = 42;
  Precision precision = Precision::f64;
  int64_t epochs = 50;
  int64_t batch_size = 256;
  int64_t warmup_epochs = 5;
  std::string out_dir = "runs/default";
  bool export_embeddings = false;
  int64_t checkpoint_every = 0;  // epochs between mid-run checkpoints; 0 = final only

  // data
  int64_t classes = 8;
  int64_t input_dim = 32;
  double separation = 10.0;
  int64_t samples_per_epoch = 8192;
  ViewPolicy views;

  // model
  int64_t clusters = 64;
  int64_t embedding_dim = 32;
  std::vector<int64_t> encoder_hidden{64};
  int64_t projector_hidden = 128;
  int64_t projector_out = 32;
  bool centroid_init_from_data = true;  // seed centroid rows from projected samples

  // optimizer
  double base_lr = 0.15;
  double final_lr = 0.0;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  double centroid_wd_start = 1e-3;
  double centroid_wd_end = 1e-4;

  // teacher / student
  double teacher_momentum = 0.996;
  double teacher_temperature = 0.04;
  double student_temperature = 0.1;

  // balancer
  bool balancing_enabled = true;
  BalancerVariant balancer_variant = BalancerVariant::linear_under;
  double size_momentum = 0.99;
  bool update_before_balance = true;

  void validate() const;
  int64_t steps_per_epoch() const { return samples_per_epoch / batch_size; }
  int64_t total_steps() const { return steps_per_epoch() * epochs; }

  MixtureSpec mixture_spec() const;
  ModelConfig model_config() const;

  nlohmann::json to_json() const;
};

// Strict parse of config text; `source` names the input in errors.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "config");
ExperimentConfig load_config(const std::string& path);

// One key=value override on top of a parsed config.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

std::vector<std::string> known_config_keys();

}  // namespace excb
