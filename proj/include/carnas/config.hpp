#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "carnas/errors.hpp"

namespace carnas {

enum class Task { Multiclass, Binary };

/// carnas: full causal-aware search. gcn: plain K-layer GCN through the
/// supernet with a frozen one-hot architecture and no causal modules.
/// uniform: supernet with frozen uniform coefficients, no causal modules.
enum class ModelKind { Carnas, FixedGcn, FixedUniform };

inline std::string_view task_name(Task t) { return t == Task::Binary ? "binary" : "multiclass"; }

inline std::string_view model_name(ModelKind m) {
  switch (m) {
    case ModelKind::Carnas: return "carnas";
    case ModelKind::FixedGcn: return "gcn";
    case ModelKind::FixedUniform: return "uniform";
  }
  return "?";
}

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Every hyper-parameter of one training run. Defaults are the Spurious-Motif
/// settings; batch_size and lr are local choices.
struct TrainConfig {
  double t = 0.85;          // causal edge ratio
  double mu = 0.26;         // intervention intensity
  double theta1 = 0.36;     // weight of the architecture-variance regularizer
  double theta2 = 0.010;    // weight of the prototype-cosine regularizer
  double sigma_min = 0.1;
  double sigma_max = 0.7;
  std::size_t epochs = 100;  // P
  std::size_t chunks = 4;    // Q
  std::size_t d0 = 16;
  std::size_t d1 = 32;
  std::size_t ds = 64;
  std::size_t layers = 3;  // K
  std::size_t encoder_layers = 2;
  std::size_t shared_layers = 2;
  std::size_t num_interventions = 0;  // N_s; 0 means "batch size"
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool disable_arch_reg = false;
  bool disable_cpred = false;
  bool fixed_sigma = false;
  Task task = Task::Multiclass;
  ModelKind model = ModelKind::Carnas;

  std::vector<std::string> errors() const {
    std::vector<std::string> e;
    if (!(t > 0.0 && t <= 1.0)) e.push_back("t must lie in (0, 1]");
    if (!(mu >= 0.0 && mu <= 1.0)) e.push_back("mu must lie in [0, 1]");
    if (!(sigma_min >= 0.0 && sigma_min <= sigma_max && sigma_max <= 1.0)) {
      e.push_back("sigma bounds must satisfy 0 <= sigma_min <= sigma_max <= 1");
    }
    if (!(theta1 >= 0.0)) e.push_back("theta1 must be >= 0");
    if (!(theta2 >= 0.0)) e.push_back("theta2 must be >= 0");
    if (epochs < 1) e.push_back("epochs must be >= 1");
    if (chunks == 0 || d0 % chunks != 0) e.push_back("d0 must be a positive multiple of chunks");
    if (d1 == 0 || ds == 0) e.push_back("d1 and ds must be positive");
    if (layers < 1) e.push_back("layers must be >= 1");
    if (encoder_layers < 1 || shared_layers < 1) e.push_back("encoder_layers and shared_layers must be >= 1");
    if (batch_size < 2) e.push_back("batch_size must be >= 2");
    if (num_interventions == 1) e.push_back("num_interventions must be 0 (batch size) or >= 2");
    if (num_interventions > batch_size) e.push_back("num_interventions must not exceed batch_size");
    if (!(lr >= 0.0)) e.push_back("lr must be >= 0");
    return e;
  }

  void validate() const {
    auto e = errors();
    if (e.empty()) return;
    std::string msg = "invalid config:";
    for (const auto& s : e) msg += "\n  - " + s;
    throw ConfigError(msg);
  }

  nlohmann::json to_json() const {
    return {{"t", t},
            {"mu", mu},
            {"theta1", theta1},
            {"theta2", theta2},
            {"sigma_min", sigma_min},
            {"sigma_max", sigma_max},
            {"epochs", epochs},
            {"chunks", chunks},
            {"d0", d0},
            {"d1", d1},
            {"ds", ds},
            {"layers", layers},
            {"encoder_layers", encoder_layers},
            {"shared_layers", shared_layers},
            {"num_interventions", num_interventions},
            {"batch_size", batch_size},
            {"lr", lr},
            {"seed", seed},
            {"disable_arch_reg", disable_arch_reg},
            {"disable_cpred", disable_cpred},
            {"fixed_sigma", fixed_sigma},
            {"task", task_name(task)},
            {"model", model_name(model)}};
  }

  std::uint64_t hash() const { return fnv1a64(to_json().dump()); }

  /// Applies every known key of `j`; returns one message per unknown key or
  /// mistyped value instead of stopping at the first.
  std::vector<std::string> apply_json(const nlohmann::json& j) {
    std::vector<std::string> errs;
    if (!j.is_object()) return {"config must be a JSON object"};
    const nlohmann::json known = to_json();
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key)) {
        errs.push_back("unknown config key '" + key + "'");
        continue;
      }
      try {
        set(key, value);
      } catch (const std::exception& ex) {
        errs.push_back("bad value for '" + key + "': " + ex.what());
      }
    }
    return errs;
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    auto errs = c.apply_json(j);
    auto more = c.errors();
    errs.insert(errs.end(), more.begin(), more.end());
    if (!errs.empty()) {
      std::string msg = "invalid config:";
      for (const auto& s : errs) msg += "\n  - " + s;
      throw ConfigError(msg);
    }
    return c;
  }

 private:
  template <class T>
  static T unsigned_value(const nlohmann::json& v) {
    if (v.is_number_integer() && v.get<long long>() < 0) throw ConfigError("must be non-negative");
    if (!v.is_number_integer()) throw ConfigError("must be an integer");
    return v.get<T>();
  }

  static bool bool_value(const nlohmann::json& v) {
    if (!v.is_boolean()) throw ConfigError("must be true or false");
    return v.get<bool>();
  }

  static double real_value(const nlohmann::json& v) {
    if (!v.is_number()) throw ConfigError("must be a number");
    return v.get<double>();
  }

  void set(const std::string& key, const nlohmann::json& v) {
    if (key == "t") t = real_value(v);
    else if (key == "mu") mu = real_value(v);
    else if (key == "theta1") theta1 = real_value(v);
    else if (key == "theta2") theta2 = real_value(v);
    else if (key == "sigma_min") sigma_min = real_value(v);
    else if (key == "sigma_max") sigma_max = real_value(v);
    else if (key == "epochs") epochs = unsigned_value<std::size_t>(v);
    else if (key == "chunks") chunks = unsigned_value<std::size_t>(v);
    else if (key == "d0") d0 = unsigned_value<std::size_t>(v);
    else if (key == "d1") d1 = unsigned_value<std::size_t>(v);
    else if (key == "ds") ds = unsigned_value<std::size_t>(v);
    else if (key == "layers") layers = unsigned_value<std::size_t>(v);
    else if (key == "encoder_layers") encoder_layers = unsigned_value<std::size_t>(v);
    else if (key == "shared_layers") shared_layers = unsigned_value<std::size_t>(v);
    else if (key == "num_interventions") num_interventions = unsigned_value<std::size_t>(v);
    else if (key == "batch_size") batch_size = unsigned_value<std::size_t>(v);
    else if (key == "lr") lr = real_value(v);
    else if (key == "seed") seed = unsigned_value<std::uint64_t>(v);
    else if (key == "disable_arch_reg") disable_arch_reg = bool_value(v);
    else if (key == "disable_cpred") disable_cpred = bool_value(v);
    else if (key == "fixed_sigma") fixed_sigma = bool_value(v);
    else if (key == "task") {
      const auto s = v.get<std::string>();
      if (s == "multiclass") task = Task::Multiclass;
      else if (s == "binary") task = Task::Binary;
      else throw ConfigError("expected multiclass or binary");
    } else if (key == "model") {
      const auto s = v.get<std::string>();
      if (s == "carnas") model = ModelKind::Carnas;
      else if (s == "gcn") model = ModelKind::FixedGcn;
      else if (s == "uniform") model = ModelKind::FixedUniform;
      else throw ConfigError("expected carnas, gcn or uniform");
    }
  }
};

/// sigma_p = sigma_min + (p - 1)(sigma_max - sigma_min) / P for epoch p in
/// [1, P]; the midpoint of the bounds when the schedule is fixed.
inline double sigma_at(std::size_t p, const TrainConfig& cfg) {
  if (p < 1 || p > cfg.epochs) {
    throw ConfigError("epoch " + std::to_string(p) + " outside [1, " + std::to_string(cfg.epochs) + "]");
  }
  if (cfg.fixed_sigma) return (cfg.sigma_max + cfg.sigma_min) / 2.0;
  return cfg.sigma_min + static_cast<double>(p - 1) * (cfg.sigma_max - cfg.sigma_min) / static_cast<double>(cfg.epochs);
}

/// L_all = sigma L_pred + (1 - sigma)(L_cpred + theta1 L_arch + theta2 L_op).
/// Ablation flags drop L_cpred and/or L_arch before combining. Works on
/// plain doubles and on tape variables.
template <class T>
T total_loss(T pred, T cpred, T arch, T op, double sigma, const TrainConfig& cfg) {
  const double w_cpred = cfg.disable_cpred ? 0.0 : 1.0;
  const double w_arch = cfg.disable_arch_reg ? 0.0 : cfg.theta1;
  return sigma * pred + (1.0 - sigma) * (w_cpred * cpred + w_arch * arch + cfg.theta2 * op);
}

}  // namespace carnas
