#include "model.h"

#include <random>

namespace mmtext {

const char* fusion_name(Fusion f) {
  switch (f) {
    case Fusion::text: return "text";
    case Fusion::continuous: return "continuous";
    case Fusion::additive: return "additive";
    case Fusion::max: return "max";
    case Fusion::gated: return "gated";
    case Fusion::bilinear: return "bilinear";
    case Fusion::bilinear_gated: return "bilinear_gated";
    case Fusion::discretized: return "discretized";
  }
  return "?";
}

std::optional<Fusion> fusion_from_name(std::string_view name) {
  for (auto f : {Fusion::text, Fusion::continuous, Fusion::additive, Fusion::max, Fusion::gated,
                 Fusion::bilinear, Fusion::bilinear_gated, Fusion::discretized}) {
    if (name == fusion_name(f)) {
      return f;
    }
  }
  return std::nullopt;
}

const char* gate_side_name(GateSide g) { return g == GateSide::text ? "text" : "visual"; }

std::optional<GateSide> gate_side_from_name(std::string_view name) {
  if (name == "text") {
    return GateSide::text;
  }
  if (name == "visual") {
    return GateSide::visual;
  }
  return std::nullopt;
}

Model init_model(const ModelConfig& cfg, std::shared_ptr<const Vocabulary> vocab,
                 std::uint64_t seed) {
  if (cfg.dim < 1) {
    throw std::invalid_argument("model dim must be >= 1");
  }
  if (cfg.label_count < 1) {
    throw std::invalid_argument("model needs at least one label");
  }
  if (fusion_uses_visual(cfg.fusion) && cfg.visual_dim < 1) {
    throw std::invalid_argument(std::string(fusion_name(cfg.fusion)) +
                                " fusion needs a positive visual_dim");
  }

  Model model;
  model.config = cfg;
  model.vocab = std::move(vocab);

  std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
  const float bound = 1.0f / static_cast<float>(cfg.dim);
  model.params.U = Matrix<float>(model.vocab->n_words(), cfg.dim);
  model.params.U.init_uniform(bound, rng);
  if (fusion_uses_visual(cfg.fusion)) {
    // Zero V is a stationary point for the purely-visual and bilinear
    // fusions (no gradient reaches V or W), so V starts uniform like U.
    model.params.V = Matrix<float>(cfg.dim, cfg.visual_dim);
    model.params.V.init_uniform(bound, rng);
  }
  model.params.W = Matrix<float>(cfg.label_count, hidden_size(cfg));
  return model;
}

}  // namespace mmtext
