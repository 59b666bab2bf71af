#include <excb/config.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace excb {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t to_i64(const std::string& v) {
  size_t pos = 0;
  const int64_t out = std::stoll(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not an integer: " + v);
  return out;
}

uint64_t to_u64(const std::string& v) {
  size_t pos = 0;
  const uint64_t out = std::stoull(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not an unsigned integer: " + v);
  return out;
}

double to_f64(const std::string& v) {
  size_t pos = 0;
  const double out = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not a number: " + v);
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("not a boolean: " + v);
}

std::vector<int64_t> to_i64_list(const std::string& v) {
  std::vector<int64_t> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(to_i64(trim(tok)));
  if (out.empty()) throw std::invalid_argument("empty integer list");
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& schema() {
  static const std::map<std::string, Setter> table = {
      {"run.seed", [](ExperimentConfig& c, const std::string& v) { c.seed = to_u64(v); }},
      {"run.precision",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "f32")
           c.precision = Precision::f32;
         else if (v == "f64")
           c.precision = Precision::f64;
         else
           throw std::invalid_argument("precision must be f32 or f64");
       }},
      {"run.epochs", [](ExperimentConfig& c, const std::string& v) { c.epochs = to_i64(v); }},
      {"run.batch_size", [](ExperimentConfig& c, const std::string& v) { c.batch_size = to_i64(v); }},
      {"run.warmup_epochs",
       [](ExperimentConfig& c, const std::string& v) { c.warmup_epochs = to_i64(v); }},
      {"run.out_dir", [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }},
      {"run.export_embeddings",
       [](ExperimentConfig& c, const std::string& v) { c.export_embeddings = to_bool(v); }},
      {"run.checkpoint_every",
       [](ExperimentConfig& c, const std::string& v) { c.checkpoint_every = to_i64(v); }},

      {"data.classes", [](ExperimentConfig& c, const std::string& v) { c.classes = to_i64(v); }},
      {"data.input_dim", [](ExperimentConfig& c, const std::string& v) { c.input_dim = to_i64(v); }},
      {"data.separation",
       [](ExperimentConfig& c, const std::string& v) { c.separation = to_f64(v); }},
      {"data.samples_per_epoch",
       [](ExperimentConfig& c, const std::string& v) { c.samples_per_epoch = to_i64(v); }},
      {"data.global_views",
       [](ExperimentConfig& c, const std::string& v) { c.views.global_views = to_i64(v); }},
      {"data.local_views",
       [](ExperimentConfig& c, const std::string& v) { c.views.local_views = to_i64(v); }},
      {"data.global_noise",
       [](ExperimentConfig& c, const std::string& v) { c.views.global_noise = to_f64(v); }},
      {"data.mask_fraction",
       [](ExperimentConfig& c, const std::string& v) { c.views.mask_fraction = to_f64(v); }},

      {"model.clusters", [](ExperimentConfig& c, const std::string& v) { c.clusters = to_i64(v); }},
      {"model.embedding_dim",
       [](ExperimentConfig& c, const std::string& v) { c.embedding_dim = to_i64(v); }},
      {"model.encoder_hidden",
       [](ExperimentConfig& c, const std::string& v) { c.encoder_hidden = to_i64_list(v); }},
      {"model.projector_hidden",
       [](ExperimentConfig& c, const std::string& v) { c.projector_hidden = to_i64(v); }},
      {"model.projector_out",
       [](ExperimentConfig& c, const std::string& v) { c.projector_out = to_i64(v); }},
      {"model.centroid_init_from_data",
       [](ExperimentConfig& c, const std::string& v) { c.centroid_init_from_data = to_bool(v); }},

      {"opt.base_lr", [](ExperimentConfig& c, const std::string& v) { c.base_lr = to_f64(v); }},
      {"opt.final_lr", [](ExperimentConfig& c, const std::string& v) { c.final_lr = to_f64(v); }},
      {"opt.momentum", [](ExperimentConfig& c, const std::string& v) { c.sgd_momentum = to_f64(v); }},
      {"opt.weight_decay",
       [](ExperimentConfig& c, const std::string& v) { c.weight_decay = to_f64(v); }},
      {"opt.centroid_wd_start",
       [](ExperimentConfig& c, const std::string& v) { c.centroid_wd_start = to_f64(v); }},
      {"opt.centroid_wd_end",
       [](ExperimentConfig& c, const std::string& v) { c.centroid_wd_end = to_f64(v); }},

      {"teacher.momentum",
       [](ExperimentConfig& c, const std::string& v) { c.teacher_momentum = to_f64(v); }},
      {"teacher.temperature",
       [](ExperimentConfig& c, const std::string& v) { c.teacher_temperature = to_f64(v); }},
      {"student.temperature",
       [](ExperimentConfig& c, const std::string& v) { c.student_temperature = to_f64(v); }},

      {"balancer.enabled",
       [](ExperimentConfig& c, const std::string& v) { c.balancing_enabled = to_bool(v); }},
      {"balancer.variant",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "linear")
           c.balancer_variant = BalancerVariant::linear_under;
         else if (v == "exponential")
           c.balancer_variant = BalancerVariant::exponential_under;
         else
           throw std::invalid_argument("balancer variant must be linear or exponential");
       }},
      {"balancer.momentum",
       [](ExperimentConfig& c, const std::string& v) { c.size_momentum = to_f64(v); }},
      {"balancer.update_before_balance",
       [](ExperimentConfig& c, const std::string& v) { c.update_before_balance = to_bool(v); }},
  };
  return table;
}

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& value,
               const std::string& where) {
  const auto& table = schema();
  const auto it = table.find(key);
  if (it == table.end()) throw std::invalid_argument(where + ": unknown key '" + key + "'");
  try {
    it->second(cfg, value);
  } catch (const std::exception& e) {
    throw std::invalid_argument(where + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("config: run.epochs must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("config: run.batch_size must be at least 1");
  if (warmup_epochs < 0 || warmup_epochs > epochs)
    throw std::invalid_argument("config: run.warmup_epochs outside [0, epochs]");
  if (checkpoint_every < 0)
    throw std::invalid_argument("config: run.checkpoint_every must be non-negative");
  if (samples_per_epoch < batch_size || samples_per_epoch % batch_size != 0)
    throw std::invalid_argument("config: data.samples_per_epoch must be a positive multiple of the batch size");
  if (views.global_views < 2)
    throw std::invalid_argument("config: data.global_views must be at least 2");
  views.validate();
  mixture_spec().validate();
  model_config().validate();
  if (!(base_lr >= 0.0) || !(final_lr >= 0.0))
    throw std::invalid_argument("config: learning rates must be non-negative");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0))
    throw std::invalid_argument("config: opt.momentum outside [0, 1)");
  if (!(weight_decay >= 0.0) || !(centroid_wd_start >= 0.0) || !(centroid_wd_end >= 0.0))
    throw std::invalid_argument("config: weight decay must be non-negative");
  if (!(teacher_momentum >= 0.0 && teacher_momentum <= 1.0))
    throw std::invalid_argument("config: teacher.momentum outside [0, 1]");
  if (!(teacher_temperature > 0.0) || !(student_temperature > 0.0))
    throw std::invalid_argument("config: temperatures must be positive");
  BalancerConfig bc{balancer_variant, size_momentum, clusters};
  bc.validate();
}

MixtureSpec ExperimentConfig::mixture_spec() const {
  MixtureSpec spec;
  spec.num_classes = classes;
  spec.input_dim = input_dim;
  spec.separation = separation;
  spec.samples_per_epoch = samples_per_epoch;
  spec.seed = seed;
  return spec;
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig mc;
  mc.input_dim = input_dim;
  mc.encoder_hidden = encoder_hidden;
  mc.embedding_dim = embedding_dim;
  mc.projector_hidden = projector_hidden;
  mc.projector_out = projector_out;
  mc.clusters = clusters;
  mc.seed = seed;
  return mc;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["run"] = {{"seed", seed},
              {"precision", precision == Precision::f64 ? "f64" : "f32"},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"warmup_epochs", warmup_epochs},
              {"out_dir", out_dir},
              {"export_embeddings", export_embeddings},
              {"checkpoint_every", checkpoint_every}};
  j["data"] = {{"classes", classes},
               {"input_dim", input_dim},
               {"separation", separation},
               {"samples_per_epoch", samples_per_epoch},
               {"global_views", views.global_views},
               {"local_views", views.local_views},
               {"global_noise", views.global_noise},
               {"mask_fraction", views.mask_fraction}};
  j["model"] = {{"clusters", clusters},
                {"embedding_dim", embedding_dim},
                {"encoder_hidden", encoder_hidden},
                {"projector_hidden", projector_hidden},
                {"projector_out", projector_out},
                {"centroid_init_from_data", centroid_init_from_data}};
  j["opt"] = {{"base_lr", base_lr},
              {"final_lr", final_lr},
              {"momentum", sgd_momentum},
              {"weight_decay", weight_decay},
              {"centroid_wd_start", centroid_wd_start},
              {"centroid_wd_end", centroid_wd_end}};
  j["teacher"] = {{"momentum", teacher_momentum}, {"temperature", teacher_temperature}};
  j["student"] = {{"temperature", student_temperature}};
  j["balancer"] = {{"enabled", balancing_enabled},
                   {"variant", to_string(balancer_variant)},
                   {"momentum", size_momentum},
                   {"update_before_balance", update_before_balance}};
  return j;
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected key = value");
    apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)),
              source + ":" + std::to_string(lineno));
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path);
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override: expected key=value, got '" + assignment + "'");
  apply_key(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), "override");
  cfg.validate();
}

std::vector<std::string> known_config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, v] : schema()) out.push_back(k);
  return out;
}

}  // namespace excb
