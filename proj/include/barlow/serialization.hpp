#ifndef BARLOW_SERIALIZATION_HPP_
#define BARLOW_SERIALIZATION_HPP_

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "barlow/data.hpp"
#include "barlow/error.hpp"
#include "barlow/model.hpp"
#include "barlow/trainer.hpp"

namespace barlow {

using json = nlohmann::ordered_json;

inline constexpr int kCheckpointVersion = 1;

template <typename T>
constexpr std::string_view precision_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

namespace detail {

/// Rejects keys outside `allowed`.
inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

template <typename V>
void read_opt(const json& j, const char* key, V& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

/// Scalar broadcast or explicit per-dimension vector.
inline void read_vector_or_scalar(const json& j, const char* key, std::vector<double>& out, std::size_t dim,
                                  std::string_view where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (v.is_number()) {
    out.assign(dim, v.get<double>());
  } else if (v.is_array()) {
    read_opt(j, key, out, where);
  } else {
    throw ConfigError(std::string(where) + "." + key + ": expected a number or an array");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Architecture
// ---------------------------------------------------------------------------

inline json layers_to_json(const std::vector<LayerSpec>& layers) {
  json arr = json::array();
  for (const auto& l : layers) arr.push_back({{"kind", to_string(l.kind)}, {"in", l.in_dim}, {"out", l.out_dim}});
  return arr;
}

inline std::vector<LayerSpec> layers_from_json(const json& arr, std::string_view where) {
  if (!arr.is_array()) throw ConfigError(std::string(where) + ": expected an array of layers");
  std::vector<LayerSpec> out;
  for (const auto& l : arr) {
    detail::check_keys(l, {"kind", "in", "out"}, where);
    LayerSpec s;
    std::string kind;
    detail::read_opt(l, "kind", kind, where);
    s.kind = parse_layer_kind(kind);
    detail::read_opt(l, "in", s.in_dim, where);
    detail::read_opt(l, "out", s.out_dim, where);
    out.push_back(s);
  }
  return out;
}

inline json architecture_to_json(const Architecture& a) {
  return {{"input_dim", a.input_dim},
          {"extractor", layers_to_json(a.extractor)},
          {"projector", layers_to_json(a.projector)},
          {"classifier", layers_to_json(a.classifier)}};
}

inline Architecture architecture_from_json(const json& j) {
  detail::check_keys(j, {"input_dim", "extractor", "projector", "classifier"}, "architecture");
  Architecture a;
  detail::read_opt(j, "input_dim", a.input_dim, "architecture");
  a.extractor = layers_from_json(j.value("extractor", json::array()), "architecture.extractor");
  a.projector = layers_from_json(j.value("projector", json::array()), "architecture.projector");
  a.classifier = layers_from_json(j.value("classifier", json::array()), "architecture.classifier");
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------
// ShiftConfig
// ---------------------------------------------------------------------------

inline json shift_config_to_json(ShiftConfig c) {
  c.resolve();
  json j = {{"num_classes", c.num_classes},
            {"dim", c.dim},
            {"class_separation", c.class_separation},
            {"within_class_std", c.within_class_std},
            {"rotation_deg", c.rotation_deg},
            {"rotation_pairs", c.rotation_pairs}};
  if (c.matrix) j["matrix"] = *c.matrix;
  j["scale"] = c.scale;
  j["translation"] = c.translation;
  j["nuisance_strength"] = c.nuisance_strength;
  j["nuisance_dims"] = c.nuisance_dims;
  j["samples_per_class"] = {{"train", c.samples_per_class.train},
                            {"val", c.samples_per_class.val},
                            {"test", c.samples_per_class.test}};
  j["seed"] = c.seed;
  return j;
}

inline ShiftConfig shift_config_from_json(const json& j) {
  constexpr std::string_view w = "shift";
  detail::check_keys(j,
                     {"num_classes", "dim", "class_separation", "within_class_std", "rotation_deg", "rotation_pairs",
                      "matrix", "scale", "translation", "nuisance_strength", "nuisance_dims", "samples_per_class",
                      "seed"},
                     w);
  ShiftConfig c;
  detail::read_opt(j, "num_classes", c.num_classes, w);
  detail::read_opt(j, "dim", c.dim, w);
  detail::read_opt(j, "class_separation", c.class_separation, w);
  detail::read_opt(j, "within_class_std", c.within_class_std, w);
  detail::read_opt(j, "rotation_deg", c.rotation_deg, w);
  detail::read_opt(j, "rotation_pairs", c.rotation_pairs, w);
  if (j.contains("matrix")) {
    std::vector<std::vector<double>> m;
    detail::read_opt(j, "matrix", m, w);
    c.matrix = std::move(m);
  }
  detail::read_vector_or_scalar(j, "scale", c.scale, c.dim, w);
  detail::read_vector_or_scalar(j, "translation", c.translation, c.dim, w);
  detail::read_opt(j, "nuisance_strength", c.nuisance_strength, w);
  detail::read_opt(j, "nuisance_dims", c.nuisance_dims, w);
  if (j.contains("samples_per_class")) {
    const auto& s = j.at("samples_per_class");
    detail::check_keys(s, {"train", "val", "test"}, "shift.samples_per_class");
    detail::read_opt(s, "train", c.samples_per_class.train, w);
    detail::read_opt(s, "val", c.samples_per_class.val, w);
    detail::read_opt(s, "test", c.samples_per_class.test, w);
  }
  detail::read_opt(j, "seed", c.seed, w);
  c.resolve();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

inline json train_config_to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"lr0", c.lr0},
          {"momentum", c.momentum},
          {"lr_decay", c.lr_decay},
          {"decay_every_epochs", c.decay_every_epochs},
          {"epochs", c.epochs},
          {"lambda", c.weights.lambda},
          {"mu", c.weights.mu},
          {"seed", c.seed},
          {"variant", to_string(c.variant)}};
}

inline TrainConfig train_config_from_json(const json& j) {
  constexpr std::string_view w = "train";
  detail::check_keys(
      j, {"batch_size", "lr0", "momentum", "lr_decay", "decay_every_epochs", "epochs", "lambda", "mu", "seed", "variant"},
      w);
  TrainConfig c;
  detail::read_opt(j, "batch_size", c.batch_size, w);
  detail::read_opt(j, "lr0", c.lr0, w);
  detail::read_opt(j, "momentum", c.momentum, w);
  detail::read_opt(j, "lr_decay", c.lr_decay, w);
  detail::read_opt(j, "decay_every_epochs", c.decay_every_epochs, w);
  detail::read_opt(j, "epochs", c.epochs, w);
  detail::read_opt(j, "lambda", c.weights.lambda, w);
  detail::read_opt(j, "mu", c.weights.mu, w);
  detail::read_opt(j, "seed", c.seed, w);
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
json values_to_json(std::span<const T> v) {
  json arr = json::array();
  for (T x : v) arr.push_back(static_cast<double>(x));
  return arr;
}

template <typename T>
std::vector<T> values_from_json(const json& j, std::size_t expect, std::string_view where) {
  if (!j.is_array() || j.size() != expect) {
    throw DataError("checkpoint: " + std::string(where) + " must be an array of " + std::to_string(expect) + " numbers");
  }
  std::vector<T> out;
  out.reserve(expect);
  for (const auto& x : j) {
    if (!x.is_number()) throw DataError("checkpoint: " + std::string(where) + " contains a non-number");
    out.push_back(static_cast<T>(x.get<double>()));
  }
  return out;
}

template <typename T>
void fill_from_json(Matrix<T>& m, const json& j, std::string_view where) {
  const auto v = values_from_json<T>(j, m.size(), where);
  std::copy(v.begin(), v.end(), m.values().begin());
}

template <typename T>
json stack_to_json(const Stack<T>& s) {
  json arr = json::array();
  for (const auto& layer : s.layers) {
    if (const auto* a = std::get_if<AffineLayer<T>>(&layer)) {
      arr.push_back({{"kind", "affine"},
                     {"weight", values_to_json<T>(a->weight.values())},
                     {"bias", values_to_json<T>(a->bias.values())}});
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      arr.push_back({{"kind", "relu"}});
    } else {
      const auto& bn = std::get<BatchNormState<T>>(layer);
      arr.push_back({{"kind", "batch-norm"},
                     {"gamma", values_to_json<T>(bn.gamma.values())},
                     {"beta", values_to_json<T>(bn.beta.values())},
                     {"eps", static_cast<double>(bn.eps)},
                     {"momentum", static_cast<double>(bn.momentum)},
                     {"running_mean", values_to_json<T>(std::span<const T>(bn.running_mean))},
                     {"running_var", values_to_json<T>(std::span<const T>(bn.running_var))}});
    }
  }
  return arr;
}

template <typename T>
void stack_from_json(Stack<T>& s, const json& arr, std::string_view where) {
  if (!arr.is_array() || arr.size() != s.layers.size()) {
    throw DataError("checkpoint: " + std::string(where) + " layer count does not match the architecture");
  }
  for (std::size_t k = 0; k < s.layers.size(); ++k) {
    const auto& j = arr[k];
    const std::string w = std::string(where) + "[" + std::to_string(k) + "]";
    if (auto* a = std::get_if<AffineLayer<T>>(&s.layers[k])) {
      fill_from_json(a->weight, j.at("weight"), w + ".weight");
      fill_from_json(a->bias, j.at("bias"), w + ".bias");
    } else if (auto* bn = std::get_if<BatchNormState<T>>(&s.layers[k])) {
      fill_from_json(bn->gamma, j.at("gamma"), w + ".gamma");
      fill_from_json(bn->beta, j.at("beta"), w + ".beta");
      bn->eps = static_cast<T>(j.at("eps").get<double>());
      bn->momentum = static_cast<T>(j.at("momentum").get<double>());
      bn->running_mean = values_from_json<T>(j.at("running_mean"), bn->dim(), w + ".running_mean");
      bn->running_var = values_from_json<T>(j.at("running_var"), bn->dim(), w + ".running_var");
    }
  }
}

}  // namespace detail

/// Versioned JSON document holding the architecture, init seed, every
/// parameter array and the batch-norm running statistics.
template <typename T>
json checkpoint_to_json(const ModelParams<T>& p) {
  return {{"format", "barlow-checkpoint"},
          {"version", kCheckpointVersion},
          {"precision", precision_name<T>()},
          {"seed", p.seed},
          {"architecture", architecture_to_json(p.arch)},
          {"extractor", detail::stack_to_json(p.extractor)},
          {"projector", detail::stack_to_json(p.projector)},
          {"classifier", detail::stack_to_json(p.classifier)}};
}

inline std::string checkpoint_precision(const json& j) {
  if (!j.is_object() || j.value("format", "") != "barlow-checkpoint") throw DataError("not a barlow checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  }
  return j.value("precision", "");
}

template <typename T>
ModelParams<T> checkpoint_from_json(const json& j) {
  const std::string prec = checkpoint_precision(j);
  if (prec != precision_name<T>()) {
    throw DataError("checkpoint precision is '" + prec + "', requested '" + std::string(precision_name<T>()) + "'");
  }
  Architecture arch;
  try {
    arch = architecture_from_json(j.at("architecture"));
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  ModelParams<T> p = init_params<T>(arch, j.at("seed").get<std::uint64_t>());
  detail::stack_from_json(p.extractor, j.at("extractor"), "extractor");
  detail::stack_from_json(p.projector, j.at("projector"), "projector");
  detail::stack_from_json(p.classifier, j.at("classifier"), "classifier");
  return p;
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << j.dump(2) << '\n';
}

template <typename T>
void save_checkpoint(const std::string& path, const ModelParams<T>& p) {
  write_json_file(path, checkpoint_to_json(p));
}

template <typename T>
ModelParams<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  return checkpoint_from_json<T>(j);
}

}  // namespace barlow

#endif  // BARLOW_SERIALIZATION_HPP_
