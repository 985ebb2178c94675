#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <type_traits>
#include <vector>

#include "corpus.h"
#include "matrix.h"
#include "quantizer.h"

namespace mmtext {

enum class Fusion : std::uint8_t {
  text = 0,
  continuous = 1,
  additive = 2,
  max = 3,
  gated = 4,
  bilinear = 5,
  bilinear_gated = 6,
  discretized = 7,
};

enum class GateSide : std::uint8_t { text = 0, visual = 1 };

const char* fusion_name(Fusion f);
std::optional<Fusion> fusion_from_name(std::string_view name);
const char* gate_side_name(GateSide g);
std::optional<GateSide> gate_side_from_name(std::string_view name);

inline bool fusion_uses_text(Fusion f) { return f != Fusion::continuous; }
inline bool fusion_uses_visual(Fusion f) {
  return f != Fusion::text && f != Fusion::discretized;
}
inline bool fusion_is_bilinear(Fusion f) {
  return f == Fusion::bilinear || f == Fusion::bilinear_gated;
}
inline bool fusion_is_gated(Fusion f) {
  return f == Fusion::gated || f == Fusion::bilinear_gated;
}

struct ModelConfig {
  Fusion fusion = Fusion::text;
  std::int32_t dim = 100;
  GateSide gate = GateSide::text;  // meaningful for gated fusions only
  float alpha = 0.1f;              // pseudo-token bag weight, discretized only
  std::int32_t label_count = 0;
  std::int32_t visual_dim = 0;
};

// Width of the fused hidden vector: H^2 for bilinear fusions, H otherwise.
inline std::int64_t hidden_size(const ModelConfig& cfg) {
  return fusion_is_bilinear(cfg.fusion) ? static_cast<std::int64_t>(cfg.dim) * cfg.dim
                                        : cfg.dim;
}

// Parameter matrices. U holds one embedding row per vocabulary word
// (pseudo-tokens included); V projects the continuous input and has zero
// rows for fusions that never see it; W maps the fused hidden vector to
// label logits.
//
// The math below is templated on the scalar type: production code runs
// float, the gradient-check and exactness tests instantiate double on the
// same code path.
template <typename T>
struct Params {
  Matrix<T> U;
  Matrix<T> V;
  Matrix<T> W;
};

template <typename T>
struct Scratch {
  std::vector<T> text_hidden;
  std::vector<T> visual_hidden;
  std::vector<T> hidden;
  std::vector<T> logits;
  std::vector<T> probs;
  std::vector<T> grad_hidden;
  std::vector<T> grad_text;
  std::vector<T> grad_visual;

  void configure(const ModelConfig& cfg) {
    text_hidden.assign(cfg.dim, T(0));
    visual_hidden.assign(cfg.dim, T(0));
    hidden.assign(hidden_size(cfg), T(0));
    logits.assign(cfg.label_count, T(0));
    probs.assign(cfg.label_count, T(0));
    grad_hidden.assign(hidden_size(cfg), T(0));
    grad_text.assign(cfg.dim, T(0));
    grad_visual.assign(cfg.dim, T(0));
  }
};

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// out += coeff * sum of the listed rows of M.
template <typename T>
void add_rows(const Matrix<T>& m, std::span<const std::int32_t> ids, T coeff, T* out) {
  const std::int64_t d = m.cols();
  for (std::int32_t id : ids) {
    const T* r = m.row(id);
    for (std::int64_t j = 0; j < d; ++j) {
      out[j] += coeff * r[j];
    }
  }
}

// out = M x
template <typename T>
void matvec(const Matrix<T>& m, const T* x, T* out) {
  for (std::int64_t i = 0; i < m.rows(); ++i) {
    const T* r = m.row(i);
    T acc = T(0);
    for (std::int64_t j = 0; j < m.cols(); ++j) {
      acc += r[j] * x[j];
    }
    out[i] = acc;
  }
}

// out = M^T g
template <typename T>
void matvec_transposed(const Matrix<T>& m, const T* g, T* out) {
  std::fill(out, out + m.cols(), T(0));
  for (std::int64_t i = 0; i < m.rows(); ++i) {
    const T* r = m.row(i);
    const T gi = g[i];
    for (std::int64_t j = 0; j < m.cols(); ++j) {
      out[j] += gi * r[j];
    }
  }
}

// M -= lr * g x^T
template <typename T>
void rank_one_update(Matrix<T>& m, const T* g, const T* x, T lr) {
  for (std::int64_t i = 0; i < m.rows(); ++i) {
    T* r = m.row(i);
    const T step = lr * g[i];
    if (step == T(0)) {
      continue;
    }
    for (std::int64_t j = 0; j < m.cols(); ++j) {
      r[j] -= step * x[j];
    }
  }
}

// In-place softmax with max subtraction.
template <typename T>
void softmax_inplace(std::span<T> v) {
  T max = v[0];
  for (T x : v) {
    max = std::max(max, x);
  }
  T sum = T(0);
  for (T& x : v) {
    x = std::exp(x - max);
    sum += x;
  }
  for (T& x : v) {
    x /= sum;
  }
}

template <typename T>
T nll(std::span<const T> probs, std::int32_t label) {
  return -std::log(probs[label]);
}

// Normalized text bag: out = (1/|tokens|) * sum U[token]. For the
// discretized fusion, words and pseudo-tokens form two bags normalized
// independently, with the pseudo bag weighted by alpha; pseudo_flags selects
// the pseudo rows. Empty bags contribute nothing.
template <typename T>
void text_bag_hidden(const Matrix<T>& u, const ModelConfig& cfg,
                     std::span<const std::int32_t> tokens, const std::uint8_t* pseudo_flags,
                     T* out) {
  std::fill(out, out + cfg.dim, T(0));
  if (cfg.fusion != Fusion::discretized) {
    if (!tokens.empty()) {
      add_rows(u, tokens, T(1) / static_cast<T>(tokens.size()), out);
    }
    return;
  }
  std::size_t n_pseudo = 0;
  for (std::int32_t id : tokens) {
    n_pseudo += pseudo_flags[id];
  }
  const std::size_t n_words = tokens.size() - n_pseudo;
  const T word_coeff = n_words > 0 ? T(1) / static_cast<T>(n_words) : T(0);
  const T pseudo_coeff =
      n_pseudo > 0 ? static_cast<T>(cfg.alpha) / static_cast<T>(n_pseudo) : T(0);
  const std::int64_t d = u.cols();
  for (std::int32_t id : tokens) {
    const T coeff = pseudo_flags[id] ? pseudo_coeff : word_coeff;
    const T* r = u.row(id);
    for (std::int64_t j = 0; j < d; ++j) {
      out[j] += coeff * r[j];
    }
  }
}

// hidden = fuse(text_hidden, visual_hidden) per the configured operator.
// Bilinear flattening is row-major with the text side indexing rows:
// hidden[i*H + j] = text[i] * visual[j].
template <typename T>
void fuse_forward(const ModelConfig& cfg, const T* ht, const T* hv, T* hidden) {
  const std::int64_t h = cfg.dim;
  switch (cfg.fusion) {
    case Fusion::text:
    case Fusion::discretized:
      std::copy(ht, ht + h, hidden);
      break;
    case Fusion::continuous:
      std::copy(hv, hv + h, hidden);
      break;
    case Fusion::additive:
      for (std::int64_t i = 0; i < h; ++i) {
        hidden[i] = ht[i] + hv[i];
      }
      break;
    case Fusion::max:
      for (std::int64_t i = 0; i < h; ++i) {
        hidden[i] = std::max(ht[i], hv[i]);
      }
      break;
    case Fusion::gated:
      if (cfg.gate == GateSide::text) {
        for (std::int64_t i = 0; i < h; ++i) {
          hidden[i] = sigmoid(ht[i]) * hv[i];
        }
      } else {
        for (std::int64_t i = 0; i < h; ++i) {
          hidden[i] = ht[i] * sigmoid(hv[i]);
        }
      }
      break;
    case Fusion::bilinear:
      for (std::int64_t i = 0; i < h; ++i) {
        const T ti = ht[i];
        T* out_row = hidden + i * h;
        for (std::int64_t j = 0; j < h; ++j) {
          out_row[j] = ti * hv[j];
        }
      }
      break;
    case Fusion::bilinear_gated:
      if (cfg.gate == GateSide::text) {
        for (std::int64_t i = 0; i < h; ++i) {
          const T ti = sigmoid(ht[i]);
          T* out_row = hidden + i * h;
          for (std::int64_t j = 0; j < h; ++j) {
            out_row[j] = ti * hv[j];
          }
        }
      } else {
        for (std::int64_t i = 0; i < h; ++i) {
          const T ti = ht[i];
          T* out_row = hidden + i * h;
          for (std::int64_t j = 0; j < h; ++j) {
            out_row[j] = ti * sigmoid(hv[j]);
          }
        }
      }
      break;
  }
}

// Distributes d(loss)/d(hidden) onto the two modality vectors, applying the
// sigmoid derivative on the gated side. Ties in max fusion route the
// gradient to the text side.
template <typename T>
void fuse_backward(const ModelConfig& cfg, const T* ht, const T* hv, const T* g_hidden,
                   T* g_text, T* g_visual) {
  const std::int64_t h = cfg.dim;
  std::fill(g_text, g_text + h, T(0));
  std::fill(g_visual, g_visual + h, T(0));
  switch (cfg.fusion) {
    case Fusion::text:
    case Fusion::discretized:
      std::copy(g_hidden, g_hidden + h, g_text);
      break;
    case Fusion::continuous:
      std::copy(g_hidden, g_hidden + h, g_visual);
      break;
    case Fusion::additive:
      std::copy(g_hidden, g_hidden + h, g_text);
      std::copy(g_hidden, g_hidden + h, g_visual);
      break;
    case Fusion::max:
      for (std::int64_t i = 0; i < h; ++i) {
        if (ht[i] >= hv[i]) {
          g_text[i] = g_hidden[i];
        } else {
          g_visual[i] = g_hidden[i];
        }
      }
      break;
    case Fusion::gated:
      if (cfg.gate == GateSide::text) {
        for (std::int64_t i = 0; i < h; ++i) {
          const T s = sigmoid(ht[i]);
          g_text[i] = g_hidden[i] * hv[i] * s * (T(1) - s);
          g_visual[i] = g_hidden[i] * s;
        }
      } else {
        for (std::int64_t i = 0; i < h; ++i) {
          const T s = sigmoid(hv[i]);
          g_text[i] = g_hidden[i] * s;
          g_visual[i] = g_hidden[i] * ht[i] * s * (T(1) - s);
        }
      }
      break;
    case Fusion::bilinear:
      for (std::int64_t i = 0; i < h; ++i) {
        const T* g_row = g_hidden + i * h;
        T acc = T(0);
        for (std::int64_t j = 0; j < h; ++j) {
          acc += g_row[j] * hv[j];
          g_visual[j] += g_row[j] * ht[i];
        }
        g_text[i] = acc;
      }
      break;
    case Fusion::bilinear_gated:
      if (cfg.gate == GateSide::text) {
        for (std::int64_t i = 0; i < h; ++i) {
          const T* g_row = g_hidden + i * h;
          const T s = sigmoid(ht[i]);
          T acc = T(0);
          for (std::int64_t j = 0; j < h; ++j) {
            acc += g_row[j] * hv[j];
            g_visual[j] += g_row[j] * s;
          }
          g_text[i] = acc * s * (T(1) - s);
        }
      } else {
        for (std::int64_t i = 0; i < h; ++i) {
          const T* g_row = g_hidden + i * h;
          T acc = T(0);
          for (std::int64_t j = 0; j < h; ++j) {
            const T s = sigmoid(hv[j]);
            acc += g_row[j] * s;
            g_visual[j] += g_row[j] * ht[i] * s * (T(1) - s);
          }
          g_text[i] = acc;
        }
      }
      break;
  }
}

// Runs the full forward pass into scratch.probs. `feature_row` may be null
// for fusions that ignore the continuous input.
template <typename T>
void forward_probs(const Params<T>& params, const ModelConfig& cfg,
                   std::span<const std::int32_t> tokens, const std::uint8_t* pseudo_flags,
                   const std::type_identity_t<T>* feature_row, Scratch<T>& s) {
  if (fusion_uses_text(cfg.fusion)) {
    text_bag_hidden(params.U, cfg, tokens, pseudo_flags, s.text_hidden.data());
  }
  if (fusion_uses_visual(cfg.fusion)) {
    matvec(params.V, feature_row, s.visual_hidden.data());
  }
  fuse_forward(cfg, s.text_hidden.data(), s.visual_hidden.data(), s.hidden.data());
  matvec(params.W, s.hidden.data(), s.logits.data());
  std::copy(s.logits.begin(), s.logits.end(), s.probs.begin());
  softmax_inplace(std::span<T>(s.probs));
}

template <typename T>
T forward_loss(const Params<T>& params, const ModelConfig& cfg,
               std::span<const std::int32_t> tokens, const std::uint8_t* pseudo_flags,
               const std::type_identity_t<T>* feature_row, std::int32_t label, Scratch<T>& s) {
  forward_probs(params, cfg, tokens, pseudo_flags, feature_row, s);
  return nll(std::span<const T>(s.probs), label);
}

// Trained classifier: parameters plus everything needed to score raw input.
struct Model {
  ModelConfig config;
  std::shared_ptr<const Vocabulary> vocab;
  Params<float> params;
  std::optional<Codebook> codebook;
};

// Allocates parameters for the given config and vocabulary. U and V start
// uniform in [-1/dim, 1/dim]; W starts at zero.
Model init_model(const ModelConfig& cfg, std::shared_ptr<const Vocabulary> vocab,
                 std::uint64_t seed);

}  // namespace mmtext
