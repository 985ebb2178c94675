#include "inference.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mmtext {

namespace {

// Tokens to feed the forward pass: for a discretized model with a codebook,
// a provided feature row is encoded and appended to the document's tokens.
std::vector<std::int32_t> effective_tokens(const Model& model, const Document& doc,
                                           const float* feature_row) {
  std::vector<std::int32_t> tokens = doc.tokens;
  if (model.config.fusion == Fusion::discretized && feature_row != nullptr) {
    if (!model.codebook) {
      throw std::invalid_argument(
          "feature row given but the discretized model embeds no codebook");
    }
    std::span<const float> row(feature_row,
                               static_cast<std::size_t>(model.codebook->source_dim));
    for (const auto& token : encode(*model.codebook, row)) {
      const std::int32_t id = model.vocab->word_id(token);
      if (id >= 0) {
        tokens.push_back(id);
      }
    }
  }
  return tokens;
}

void check_feature_row(const Model& model, const float* feature_row) {
  if (fusion_uses_visual(model.config.fusion) && feature_row == nullptr) {
    throw std::invalid_argument(std::string(fusion_name(model.config.fusion)) +
                                " fusion requires a feature row");
  }
}

std::int32_t top_label(std::span<const float> probs) {
  std::int32_t best = 0;
  for (std::int32_t i = 1; i < static_cast<std::int32_t>(probs.size()); ++i) {
    if (probs[i] > probs[best]) {
      best = i;
    }
  }
  return best;
}

}  // namespace

Prediction predict(const Model& model, const Document& doc, const float* feature_row, int k) {
  if (k < 1) {
    throw std::invalid_argument("k must be >= 1");
  }
  check_feature_row(model, feature_row);

  Scratch<float> scratch;
  scratch.configure(model.config);
  const auto tokens = effective_tokens(model, doc, feature_row);
  forward_probs(model.params, model.config, std::span<const std::int32_t>(tokens),
                model.vocab->pseudo_flags(), feature_row, scratch);

  std::vector<std::int32_t> order(model.config.label_count);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
    if (scratch.probs[a] != scratch.probs[b]) {
      return scratch.probs[a] > scratch.probs[b];
    }
    return a < b;
  });

  Prediction pred;
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  pred.items.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    pred.items.emplace_back(order[i], scratch.probs[order[i]]);
  }
  return pred;
}

double evaluate(const Model& model, const Corpus& corpus, const FeatureTable* features,
                std::int64_t* n_evaluated) {
  const bool needs_features = fusion_uses_visual(model.config.fusion);
  if (needs_features && features == nullptr) {
    throw std::invalid_argument(std::string(fusion_name(model.config.fusion)) +
                                " fusion requires a feature table");
  }
  if (features != nullptr &&
      features->rows() != static_cast<std::int64_t>(corpus.docs().size())) {
    throw std::invalid_argument("feature table has " + std::to_string(features->rows()) +
                                " rows, corpus has " + std::to_string(corpus.docs().size()) +
                                " lines");
  }

  Scratch<float> scratch;
  scratch.configure(model.config);
  std::int64_t n = 0;
  std::int64_t correct = 0;
  for (const Document& doc : corpus.docs()) {
    if (!doc.labeled) {
      continue;
    }
    ++n;
    const float* feat =
        features != nullptr ? features->row(doc.line_index).data() : nullptr;
    const auto tokens = effective_tokens(model, doc, feat);
    forward_probs(model.params, model.config, std::span<const std::int32_t>(tokens),
                  model.vocab->pseudo_flags(), feat, scratch);
    const std::int32_t best = top_label(scratch.probs);
    if (std::find(doc.labels.begin(), doc.labels.end(), best) != doc.labels.end()) {
      ++correct;
    }
  }
  if (n == 0) {
    throw std::invalid_argument("corpus has no labeled documents to evaluate");
  }
  if (n_evaluated != nullptr) {
    *n_evaluated = n;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

std::vector<Neighbor> nearest_neighbors(const Model& model, std::string_view query, int topn,
                                        NeighborScope scope) {
  if (topn < 1) {
    throw std::invalid_argument("topn must be >= 1");
  }
  const std::int32_t query_id = model.vocab->word_id(query);
  if (query_id < 0) {
    throw std::invalid_argument("unknown token: " + std::string(query));
  }

  const Matrix<float>& u = model.params.U;
  const std::int64_t d = u.cols();
  auto norm = [&](std::int32_t id) {
    const float* row = u.row(id);
    double sq = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      sq += static_cast<double>(row[j]) * row[j];
    }
    return std::sqrt(sq);
  };

  const double query_norm = norm(query_id);
  const float* q = u.row(query_id);
  std::vector<Neighbor> neighbors;
  neighbors.reserve(model.vocab->n_words());
  for (std::int32_t id = 0; id < model.vocab->n_words(); ++id) {
    if (id == query_id) {
      continue;
    }
    if (scope == NeighborScope::words && model.vocab->is_pseudo(id)) {
      continue;
    }
    const float* row = u.row(id);
    double dot = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      dot += static_cast<double>(q[j]) * row[j];
    }
    const double denom = query_norm * norm(id);
    neighbors.push_back({id, denom > 0.0 ? dot / denom : 0.0});
  }

  std::sort(neighbors.begin(), neighbors.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.cosine != b.cosine) {
      return a.cosine > b.cosine;
    }
    return a.id < b.id;
  });
  if (neighbors.size() > static_cast<std::size_t>(topn)) {
    neighbors.resize(topn);
  }
  return neighbors;
}

}  // namespace mmtext
