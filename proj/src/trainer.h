#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "model.h"

namespace mmtext {

struct TrainConfig {
  ModelConfig model;
  double lr0 = 0.1;
  int epochs = 5;
  int threads = 4;
  int min_count = 1;
  std::uint64_t seed = 0;
  bool verbose = false;
};

// Linear decay over the token budget: lr0 * (1 - processed/budget), clamped.
double lr_at(double lr0, std::int64_t tokens_processed, std::int64_t budget);

// One SGD step on a single document: forward pass, then in-place updates of
// W, the U rows of the document's tokens, and V where the fusion uses it.
// All gradients are taken with respect to the pre-step parameters. Returns
// the sample's negative log likelihood.
template <typename T>
T train_step(Params<T>& params, const ModelConfig& cfg, std::span<const std::int32_t> tokens,
             std::int32_t label, const std::uint8_t* pseudo_flags, const std::type_identity_t<T>* feature_row, T lr,
             Scratch<T>& s) {
  forward_probs(params, cfg, tokens, pseudo_flags, feature_row, s);
  const T loss = nll(std::span<const T>(s.probs), label);

  // d(loss)/d(logits) = probs - onehot(label); reuse the probs buffer.
  T* g_logits = s.probs.data();
  g_logits[label] -= T(1);

  matvec_transposed(params.W, g_logits, s.grad_hidden.data());
  rank_one_update(params.W, g_logits, s.hidden.data(), lr);

  fuse_backward(cfg, s.text_hidden.data(), s.visual_hidden.data(), s.grad_hidden.data(),
                s.grad_text.data(), s.grad_visual.data());

  if (fusion_uses_text(cfg.fusion) && !tokens.empty()) {
    const std::int64_t d = cfg.dim;
    const T* g = s.grad_text.data();
    if (cfg.fusion == Fusion::discretized) {
      std::size_t n_pseudo = 0;
      for (std::int32_t id : tokens) {
        n_pseudo += pseudo_flags[id];
      }
      const std::size_t n_words = tokens.size() - n_pseudo;
      const T word_step = n_words > 0 ? lr / static_cast<T>(n_words) : T(0);
      const T pseudo_step =
          n_pseudo > 0 ? lr * static_cast<T>(cfg.alpha) / static_cast<T>(n_pseudo) : T(0);
      for (std::int32_t id : tokens) {
        const T step = pseudo_flags[id] ? pseudo_step : word_step;
        T* row = params.U.row(id);
        for (std::int64_t j = 0; j < d; ++j) {
          row[j] -= step * g[j];
        }
      }
    } else {
      const T step = lr / static_cast<T>(tokens.size());
      for (std::int32_t id : tokens) {
        T* row = params.U.row(id);
        for (std::int64_t j = 0; j < d; ++j) {
          row[j] -= step * g[j];
        }
      }
    }
  }
  if (fusion_uses_visual(cfg.fusion)) {
    rank_one_update(params.V, s.grad_visual.data(), feature_row, lr);
  }
  return loss;
}

// Trains a model on the corpus with `threads` lock-free workers sharing the
// parameter matrices. Single-threaded runs are bit-reproducible for a fixed
// seed. Documents without labels are scanned (they advance the token
// counter) but not trained on.
Model train(const TrainConfig& cfg, const Corpus& corpus, const FeatureTable* features = nullptr,
            const Codebook* codebook = nullptr);

// One sweep dimension; values are parsed according to the axis name:
// lr, epoch, alpha (numbers), dim (integer), gate (text|visual).
struct SweepAxis {
  std::string name;
  std::vector<std::string> values;
};

// Cross product of the axes applied to `base`; the first axis varies
// slowest. With no axes the base config is the single combination.
std::vector<TrainConfig> enumerate_grid(const TrainConfig& base,
                                        const std::vector<SweepAxis>& axes);

struct SweepEntry {
  TrainConfig config;
  double accuracy = 0.0;
};

struct SweepResult {
  TrainConfig best;
  double best_accuracy = 0.0;
  std::vector<SweepEntry> entries;
};

// Trains every grid combination and returns the one with the highest
// validation accuracy; ties keep the earlier combination.
SweepResult grid_search(const TrainConfig& base, const std::vector<SweepAxis>& axes,
                        const Corpus& train_split, const FeatureTable* train_features,
                        const Corpus& valid_split, const FeatureTable* valid_features,
                        const Codebook* codebook = nullptr);

}  // namespace mmtext
