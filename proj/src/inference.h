#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "model.h"

namespace mmtext {

// Top-k labels with their softmax probabilities, highest first; ties broken
// by label id.
struct Prediction {
  std::vector<std::pair<std::int32_t, float>> items;
};

// Scores one document. feature_row is required for fusions that consume the
// continuous input; a discretized model with an embedded codebook encodes a
// provided feature row into pseudo-tokens on the fly (pass null when the
// document text is already quantized).
Prediction predict(const Model& model, const Document& doc, const float* feature_row, int k);

// Precision at 1 over the labeled documents of the corpus: a document counts
// as correct when the top-ranked label is any of its gold labels. Lines
// without label tokens are skipped.
double evaluate(const Model& model, const Corpus& corpus, const FeatureTable* features = nullptr,
                std::int64_t* n_evaluated = nullptr);

struct Neighbor {
  std::int32_t id = 0;
  double cosine = 0.0;
};

enum class NeighborScope { words, all };

// Nearest vocabulary entries to the query token by cosine similarity between
// U rows, query excluded, sorted descending with ties by id. The `words`
// scope filters out pseudo-tokens.
std::vector<Neighbor> nearest_neighbors(const Model& model, std::string_view query, int topn,
                                        NeighborScope scope = NeighborScope::words);

}  // namespace mmtext
