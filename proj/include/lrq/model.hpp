#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lrq/lrqa.hpp"
#include "lrq/pce.hpp"

namespace lrq {

enum class Readout { kPerPointField, kPooledScalar };

inline std::string to_string(Readout r) { return r == Readout::kPerPointField ? "per_point_field" : "pooled_scalar"; }

inline Readout parse_readout(const std::string& s) {
  if (s == "per_point_field") return Readout::kPerPointField;
  if (s == "pooled_scalar") return Readout::kPooledScalar;
  throw ConfigError("unknown readout '" + s + "' (expected per_point_field or pooled_scalar)");
}

struct ModelConfig {
  PceConfig pce;
  LrqaConfig lrqa;
  std::size_t output_dim = 1;
  Readout readout = Readout::kPerPointField;
};

inline void validate(const ModelConfig& cfg) {
  validate(cfg.pce);
  validate(cfg.lrqa);
  if (cfg.output_dim == 0) throw ConfigError("output_dim must be positive");
}

inline nlohmann::json to_json(const ModelConfig& c) {
  const auto split = axis_split(c.lrqa);
  return {{"d_in", c.pce.input_dim},
          {"num_queries", c.pce.num_queries},
          {"hidden_dim", c.pce.hidden_dim},
          {"num_heads", c.pce.num_heads},
          {"ffn_expansion", c.pce.ffn_expansion},
          {"ln_eps", c.pce.ln_eps},
          {"query_init_std", c.pce.query_init_std},
          {"feature_dim", c.lrqa.feature_dim},
          {"num_layers", c.lrqa.num_layers},
          {"residual_alpha", c.lrqa.residual_alpha},
          {"rope_base", c.lrqa.rope_base},
          {"rope_axis_split", {split[0], split[1], split[2]}},
          {"normalize_covariance", c.lrqa.normalize_covariance},
          {"output_dim", c.output_dim},
          {"readout", to_string(c.readout)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.pce.input_dim = j.at("d_in").get<std::size_t>();
    c.pce.num_queries = j.at("num_queries").get<std::size_t>();
    c.pce.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.pce.num_heads = j.at("num_heads").get<std::size_t>();
    c.pce.ffn_expansion = j.at("ffn_expansion").get<std::size_t>();
    c.pce.ln_eps = j.at("ln_eps").get<double>();
    c.pce.query_init_std = j.at("query_init_std").get<double>();
    c.lrqa.feature_dim = j.at("feature_dim").get<std::size_t>();
    c.lrqa.num_layers = j.at("num_layers").get<std::size_t>();
    c.lrqa.residual_alpha = j.at("residual_alpha").get<double>();
    c.lrqa.rope_base = j.at("rope_base").get<double>();
    const auto s = j.at("rope_axis_split").get<std::vector<std::size_t>>();
    if (s.size() != 3) throw DataError("rope_axis_split must have 3 entries");
    c.lrqa.rope_axis_split = {s[0], s[1], s[2]};
    c.lrqa.normalize_covariance = j.at("normalize_covariance").get<bool>();
    c.output_dim = j.at("output_dim").get<std::size_t>();
    c.readout = parse_readout(j.at("readout").get<std::string>());
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model config: ") + e.what());
  }
}

/// PCE → [x ‖ ψ] → embed → L LR-QA layers → affine head.
struct LrqModel {
  ModelConfig cfg;
  PceParams pce;
  EmbedParams embed;
  std::vector<LrqaLayerParams> layers;
  Tensor head_w, head_b;

  static LrqModel init(const ModelConfig& cfg, Rng& rng) {
    validate(cfg);
    LrqModel m;
    m.cfg = cfg;
    const std::size_t c = cfg.lrqa.feature_dim;
    m.pce = PceParams::init(cfg.pce, rng);
    m.embed = EmbedParams::init(3 + cfg.pce.hidden_dim, c, rng);
    for (std::size_t l = 0; l < cfg.lrqa.num_layers; ++l) m.layers.push_back(LrqaLayerParams::init(c, rng));
    m.head_w = fan_in_uniform(c, cfg.output_dim, rng);
    m.head_b = Tensor::zeros({cfg.output_dim});
    return m;
  }

  /// Every trainable tensor in checkpoint order.
  ParamRefs params() {
    ParamRefs out;
    pce.collect(out);
    embed.collect(out);
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(out, "layer" + std::to_string(l));
    out.emplace_back("head.w", &head_w);
    out.emplace_back("head.b", &head_b);
    return out;
  }

  std::vector<Tensor> param_values() const {
    LrqModel copy = *this;  // tensors share storage, so this is cheap
    std::vector<Tensor> v;
    for (const auto& [name, t] : copy.params()) v.push_back(*t);
    return v;
  }
};

/// Point features after the last LR-QA layer, N×C. `rope` may be shared
/// across calls on the same cloud.
inline Tensor model_features(const LrqModel& m, const Tensor& coords, const Tensor& d, const RopeTables& rope) {
  if (d.numel() != m.cfg.pce.input_dim) {
    throw DimensionError("design vector has " + std::to_string(d.numel()) + " entries, expected D_in = " +
                         std::to_string(m.cfg.pce.input_dim));
  }
  const Tensor psi = pce_encode(d, m.pce, m.cfg.pce);
  Tensor h = embed_input(broadcast_concat(psi, coords), m.embed);
  for (const auto& layer : m.layers) h = lrqa_layer_forward(h, rope, layer, m.cfg.lrqa);
  return h;
}

/// Per-point mode: N×output_dim. Pooled mode: [output_dim], from the mean of
/// the point features.
inline Tensor model_forward(const LrqModel& m, const Tensor& coords, const Tensor& d, const RopeTables& rope) {
  const Tensor h = model_features(m, coords, d, rope);
  if (m.cfg.readout == Readout::kPerPointField) return affine(h, m.head_w, m.head_b);
  const std::size_t c = m.cfg.lrqa.feature_dim;
  const Tensor pooled = reshape(reduce(h, 0, Reduction::kMean), {1, c});
  return reshape(affine(pooled, m.head_w, m.head_b), {m.cfg.output_dim});
}

inline Tensor model_forward(const LrqModel& m, const Tensor& coords, const Tensor& d) {
  if (coords.rank() != 2 || coords.cols() != 3 || coords.rows() == 0) {
    throw DimensionError("coords must be N x 3 with N >= 1, got " + shape_str(coords.shape()));
  }
  return model_forward(m, coords, d, rope_tables(coords, m.cfg.lrqa));
}

}  // namespace lrq
