#pragma once

// Versioned JSON checkpoints: every parameter, optimizer velocity, the
// schedule step, and the relative-size vector. Floating values are
// serialized with shortest round-trip representation, so save/load is
// bit-exact at the stored precision.

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include <excb/balancer.hpp>
#include <excb/model.hpp>

namespace excb {

template <typename T>
constexpr const char* precision_tag();
template <>
constexpr const char* precision_tag<double>() {
  return "f64";
}
template <>
constexpr const char* precision_tag<float>() {
  return "f32";
}

inline constexpr int kCheckpointVersion = 1;

template <typename T>
nlohmann::json checkpoint_to_json(ModelPair<T>& model, const RelativeSizeVector& sizes,
                                  int64_t step) {
  nlohmann::json j;
  j["format"] = "excb-checkpoint";
  j["version"] = kCheckpointVersion;
  j["precision"] = precision_tag<T>();
  j["step"] = step;
  j["balancer"] = {{"momentum", sizes.momentum}, {"sizes", sizes.s}};

  auto dump = [](const std::vector<Parameter<T>*>& ps, bool with_velocity) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto* p : ps) {
      nlohmann::json e;
      e["name"] = p->name;
      e["shape"] = p->shape;
      e["values"] = std::vector<double>(p->value.begin(), p->value.end());
      if (with_velocity)
        e["velocity"] = std::vector<double>(p->velocity.begin(), p->velocity.end());
      arr.push_back(std::move(e));
    }
    return arr;
  };
  j["student"] = dump(model.student_parameters(), true);
  j["teacher"] = dump(model.teacher_parameters(), false);
  return j;
}

namespace detail {

template <typename T>
void restore_params(const nlohmann::json& arr, const std::vector<Parameter<T>*>& ps,
                    bool with_velocity) {
  if (arr.size() != ps.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (size_t i = 0; i < ps.size(); ++i) {
    const auto& e = arr[i];
    Parameter<T>* p = ps[i];
    if (e.at("name").get<std::string>() != p->name)
      throw std::runtime_error("checkpoint: parameter order mismatch at " + p->name);
    if (e.at("shape").get<Shape>() != p->shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + p->name);
    const auto vals = e.at("values").get<std::vector<double>>();
    if (static_cast<int64_t>(vals.size()) != p->numel())
      throw std::runtime_error("checkpoint: value count mismatch for " + p->name);
    for (size_t t = 0; t < vals.size(); ++t) p->value[t] = static_cast<T>(vals[t]);
    if (with_velocity) {
      const auto vel = e.at("velocity").get<std::vector<double>>();
      p->velocity.resize(vel.size());
      for (size_t t = 0; t < vel.size(); ++t) p->velocity[t] = static_cast<T>(vel[t]);
    }
    p->clear_grad();
  }
}

}  // namespace detail

template <typename T>
void checkpoint_from_json(const nlohmann::json& j, ModelPair<T>& model, RelativeSizeVector& sizes,
                          int64_t& step) {
  if (j.value("format", "") != std::string("excb-checkpoint"))
    throw std::runtime_error("checkpoint: unrecognized format");
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version");
  if (j.at("precision").get<std::string>() != precision_tag<T>())
    throw std::runtime_error("checkpoint: precision mismatch (stored " +
                             j.at("precision").get<std::string>() + ")");
  step = j.at("step").get<int64_t>();
  sizes.momentum = j.at("balancer").at("momentum").get<double>();
  sizes.s = j.at("balancer").at("sizes").get<std::vector<double>>();
  detail::restore_params<T>(j.at("student"), model.student_parameters(), true);
  detail::restore_params<T>(j.at("teacher"), model.teacher_parameters(), false);
}

template <typename T>
void save_checkpoint(const std::string& path, ModelPair<T>& model, const RelativeSizeVector& sizes,
                     int64_t step) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os << checkpoint_to_json(model, sizes, step) << "\n";
}

template <typename T>
void load_checkpoint(const std::string& path, ModelPair<T>& model, RelativeSizeVector& sizes,
                     int64_t& step) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  nlohmann::json j;
  is >> j;
  checkpoint_from_json(j, model, sizes, step);
}

}  // namespace excb
