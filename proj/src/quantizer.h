#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "matrix.h"

namespace mmtext {

class FeatureTable;

struct KMeansResult {
  Matrix<float> centroids;               // k x dim
  std::vector<std::int32_t> assignments;  // one per input point
  std::vector<double> inertia;            // per-iteration sum of squared distances
};

// Lloyd's algorithm. Initial centroids are k distinct points sampled
// uniformly with the seed (duplicates only when k exceeds the point count).
// Stops after max_iters or when no assignment changes. Empty clusters are
// repaired by moving the centroid onto the point farthest from its own
// centroid. The assignment step may run on several threads; results are
// identical for any thread count because the update reduces in point order.
KMeansResult kmeans(const Matrix<float>& points, std::int32_t k, std::int32_t max_iters,
                    std::uint64_t seed, int threads = 1);

// Product-quantization codebook. Repetition 0 always uses the identity
// permutation, so r=1 is plain PQ; repetitions 1..r-1 use seeded random
// permutations of the feature components (RSPQ). Each repetition splits the
// permuted vector into n equal subvectors and clusters every slot
// independently with k centroids.
struct Codebook {
  std::int32_t source_dim = 0;
  std::int32_t n = 0;
  std::int32_t k = 0;
  std::int32_t r = 1;
  float alpha = 0.1f;
  std::vector<std::vector<std::uint32_t>> permutations;  // r entries, each source_dim long
  std::vector<Matrix<float>> centroids;                  // r*n entries, each k x (source_dim/n)

  std::int32_t sub_dim() const { return source_dim / n; }
  const Matrix<float>& slot_centroids(std::int32_t rep, std::int32_t slot) const {
    return centroids[static_cast<std::size_t>(rep) * n + slot];
  }
};

inline constexpr std::int32_t kDefaultKMeansIters = 25;
// Cap on rows fed to k-means; larger feature tables are subsampled (seeded).
inline constexpr std::int64_t kCodebookSampleCap = 100000;

Codebook train_codebook(const FeatureTable& features, std::int32_t n, std::int32_t k,
                        std::int32_t r, float alpha, std::uint64_t seed,
                        std::int32_t max_iters = kDefaultKMeansIters, int threads = 1);

// Discretizes one vector into r*n pseudo-tokens "__q__{rep*n+slot}_{centroid}",
// repetition-major. Nearest centroid by Euclidean distance, ties to the
// lowest index.
std::vector<std::string> encode(const Codebook& codebook, std::span<const float> vector);

// Writes a copy of the corpus with each line extended by the pseudo-tokens
// of its aligned feature row: "<line> <tok> <tok> ...". Line order preserved.
void emit_quantized_corpus(const std::string& corpus_path, const FeatureTable& features,
                           const Codebook& codebook, const std::string& out_path);

// Binary codebook format, magic "MMPQ" (layout in docs/format.md).
void save_codebook(const Codebook& codebook, std::ostream& out);
Codebook load_codebook(std::istream& in);
void save_codebook(const Codebook& codebook, const std::string& path);
Codebook load_codebook(const std::string& path);

}  // namespace mmtext
