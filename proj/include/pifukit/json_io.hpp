#pragma once

#include <json.hpp>

#include "pifukit/camera.hpp"
#include "pifukit/metrics.hpp"
#include "pifukit/model.hpp"
#include "pifukit/sampling.hpp"
#include "pifukit/synthdata.hpp"

namespace pifukit {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Camera, yaw, scale, resolution)

NLOHMANN_JSON_SERIALIZE_ENUM(LabelMap, {{LabelMap::Clamp, "clamp"}, {LabelMap::Sigmoid, "sigmoid"}})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SamplerConfig, n_total, ratio_surface, ratio_uniform, sigma_spatial,
                                                sigma_dos, c_saturation, seed, label_map, dos_far_field_fraction)

inline void to_json(nlohmann::json& j, const Vec3& v) { j = nlohmann::json::array({v.x, v.y, v.z}); }
inline void from_json(const nlohmann::json& j, Vec3& v) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-vector");
  v = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline void to_json(nlohmann::json& j, const Aabb& b) { j = {{"lo", b.lo}, {"hi", b.hi}}; }
inline void from_json(const nlohmann::json& j, Aabb& b) {
  b.lo = j.at("lo").get<Vec3>();
  b.hi = j.at("hi").get<Vec3>();
}

#define PIFUKIT_JSON_ENUM(Type, parse)                                                 \
  inline void to_json(nlohmann::json& j, Type v) { j = to_string(v); }               \
  inline void from_json(const nlohmann::json& j, Type& v) {                          \
    if (!j.is_string()) throw ConfigError(#Type " must be a string");                \
    v = parse(j.get<std::string>());                                                \
  }
PIFUKIT_JSON_ENUM(Fusion, parse_fusion)
PIFUKIT_JSON_ENUM(QueryMode, parse_query_mode)
PIFUKIT_JSON_ENUM(TrainStage, parse_stage)
PIFUKIT_JSON_ENUM(LossKind, parse_loss)
PIFUKIT_JSON_ENUM(SamplingScheme, parse_scheme)
#undef PIFUKIT_JSON_ENUM

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, r_high, r_low, c_feat, backbone_width, hri_width, kernel,
                                                parse_classes, use_depth, use_parse, use_mask, hri_use_depth,
                                                hri_use_parse, low_hidden, tap_index, high_hidden, fusion, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, stage, epochs, lr, batch_size, loss, seed,
                                                max_samples_per_view)

void to_json(nlohmann::json& j, const ShapeSpec& s);
void from_json(const nlohmann::json& j, ShapeSpec& s);
void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = {{"cd", r.cd},         {"p2s", r.p2s},           {"normal_err", r.normal_err},
       {"fin_iou", nullptr}, {"roughness", r.roughness}, {"n_samples", r.n_samples},
       {"seed", r.seed}};
  if (r.fin_iou) j["fin_iou"] = *r.fin_iou;
}
inline void from_json(const nlohmann::json& j, MetricsReport& r) {
  r.cd = j.at("cd").get<double>();
  r.p2s = j.at("p2s").get<double>();
  r.normal_err = j.at("normal_err").get<double>();
  r.fin_iou = j.contains("fin_iou") && !j["fin_iou"].is_null() ? std::optional(j["fin_iou"].get<double>()) : std::nullopt;
  r.roughness = j.at("roughness").get<double>();
  r.n_samples = j.at("n_samples").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
}

/// Parses JSON text, rethrowing library errors as ConfigError.
nlohmann::json parse_json(const std::string& text, const std::string& what);

}  // namespace pifukit
