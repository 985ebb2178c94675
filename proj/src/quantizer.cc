#include "quantizer.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

#include "binio.h"
#include "corpus.h"

namespace mmtext {

namespace {

constexpr char kCodebookMagic[4] = {'M', 'M', 'P', 'Q'};
constexpr std::uint32_t kCodebookVersion = 1;

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = seed;
  h = h * 0x9e3779b97f4a7c15ULL + a + 1;
  h ^= h >> 32;
  h = h * 0xbf58476d1ce4e5b9ULL + b + 1;
  h ^= h >> 32;
  return h;
}

// Argmin over centroids of |x - c|^2, expanded to |c|^2 - 2 x.c so the inner
// loop is a single dot product against precomputed centroid norms. Ties go
// to the lowest index.
std::int32_t nearest_centroid(const Matrix<float>& centroids, std::span<const double> sq_norms,
                              const float* x) {
  const std::int64_t d = centroids.cols();
  std::int32_t best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::int64_t c = 0; c < centroids.rows(); ++c) {
    const float* row = centroids.row(c);
    double dot = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      dot += static_cast<double>(row[j]) * x[j];
    }
    const double score = sq_norms[c] - 2.0 * dot;
    if (score < best_score) {
      best_score = score;
      best = static_cast<std::int32_t>(c);
    }
  }
  return best;
}

std::vector<double> centroid_sq_norms(const Matrix<float>& centroids) {
  std::vector<double> norms(centroids.rows());
  for (std::int64_t c = 0; c < centroids.rows(); ++c) {
    const float* row = centroids.row(c);
    double sq = 0.0;
    for (std::int64_t j = 0; j < centroids.cols(); ++j) {
      sq += static_cast<double>(row[j]) * row[j];
    }
    norms[c] = sq;
  }
  return norms;
}

void parallel_over_rows(std::int64_t rows, int threads, const std::function<void(std::int64_t, std::int64_t)>& body) {
  if (threads <= 1 || rows < 2048) {
    body(0, rows);
    return;
  }
  std::vector<std::thread> pool;
  const std::int64_t chunk = (rows + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const std::int64_t begin = t * chunk;
    const std::int64_t end = std::min(rows, begin + chunk);
    if (begin >= end) {
      break;
    }
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& th : pool) {
    th.join();
  }
}

}  // namespace

KMeansResult kmeans(const Matrix<float>& points, std::int32_t k, std::int32_t max_iters,
                    std::uint64_t seed, int threads) {
  const std::int64_t n = points.rows();
  const std::int64_t d = points.cols();
  if (n == 0) {
    throw std::invalid_argument("kmeans: empty point set");
  }
  if (k < 1) {
    throw std::invalid_argument("kmeans: k must be >= 1");
  }

  KMeansResult result;
  result.centroids = Matrix<float>(k, d);
  result.assignments.assign(n, 0);

  std::vector<std::int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
  std::shuffle(order.begin(), order.end(), rng);
  for (std::int32_t c = 0; c < k; ++c) {
    const float* src = points.row(order[c % n]);  // wraps only when k > n
    std::copy(src, src + d, result.centroids.row(c));
  }

  std::vector<double> point_dist(n, 0.0);  // squared distance to assigned centroid
  std::vector<std::int64_t> counts(k, 0);
  std::vector<double> sums(static_cast<std::size_t>(k) * d, 0.0);

  for (std::int32_t iter = 0; iter < max_iters; ++iter) {
    // Assignment: independent per point, safe to parallelize.
    const auto sq_norms = centroid_sq_norms(result.centroids);
    std::atomic<bool> changed{false};
    parallel_over_rows(n, threads, [&](std::int64_t begin, std::int64_t end) {
      for (std::int64_t i = begin; i < end; ++i) {
        const std::int32_t best = nearest_centroid(result.centroids, sq_norms, points.row(i));
        if (best != result.assignments[i]) {
          result.assignments[i] = best;
          changed.store(true, std::memory_order_relaxed);
        }
        const float* x = points.row(i);
        const float* c = result.centroids.row(best);
        double sq = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
          const double diff = static_cast<double>(x[j]) - c[j];
          sq += diff * diff;
        }
        point_dist[i] = sq;
      }
    });
    result.inertia.push_back(std::accumulate(point_dist.begin(), point_dist.end(), 0.0));
    if (!changed && iter > 0) {
      break;
    }

    // Update: reduce in point order so results do not depend on threads.
    std::fill(counts.begin(), counts.end(), 0);
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int32_t a = result.assignments[i];
      counts[a]++;
      const float* x = points.row(i);
      double* s = sums.data() + static_cast<std::size_t>(a) * d;
      for (std::int64_t j = 0; j < d; ++j) {
        s[j] += x[j];
      }
    }
    for (std::int32_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Claim the point farthest from its current centroid.
        std::int64_t farthest = 0;
        for (std::int64_t i = 1; i < n; ++i) {
          if (point_dist[i] > point_dist[farthest]) {
            farthest = i;
          }
        }
        const float* x = points.row(farthest);
        std::copy(x, x + d, result.centroids.row(c));
        point_dist[farthest] = 0.0;
        continue;
      }
      float* dst = result.centroids.row(c);
      const double* s = sums.data() + static_cast<std::size_t>(c) * d;
      const double inv = 1.0 / static_cast<double>(counts[c]);
      for (std::int64_t j = 0; j < d; ++j) {
        dst[j] = static_cast<float>(s[j] * inv);
      }
    }
  }
  return result;
}

Codebook train_codebook(const FeatureTable& features, std::int32_t n, std::int32_t k,
                        std::int32_t r, float alpha, std::uint64_t seed,
                        std::int32_t max_iters, int threads) {
  const std::int32_t dim = features.dim();
  if (features.rows() == 0) {
    throw std::invalid_argument("train_codebook: empty feature table");
  }
  if (n < 1 || n > dim) {
    throw std::invalid_argument("train_codebook: n must be in [1, feature dim]");
  }
  if (dim % n != 0) {
    throw std::invalid_argument("train_codebook: feature dim " + std::to_string(dim) +
                                " not divisible by n=" + std::to_string(n));
  }
  if (k < 1) {
    throw std::invalid_argument("train_codebook: k must be >= 1");
  }
  if (r < 1) {
    throw std::invalid_argument("train_codebook: r must be >= 1");
  }

  std::vector<std::int64_t> sample(features.rows());
  std::iota(sample.begin(), sample.end(), 0);
  if (features.rows() > kCodebookSampleCap) {
    std::vector<std::int64_t> picked;
    picked.reserve(kCodebookSampleCap);
    std::mt19937 rng(static_cast<std::uint32_t>(sub_seed(seed, 0, 0)));
    std::sample(sample.begin(), sample.end(), std::back_inserter(picked), kCodebookSampleCap,
                rng);
    sample = std::move(picked);
  }

  Codebook cb;
  cb.source_dim = dim;
  cb.n = n;
  cb.k = k;
  cb.r = r;
  cb.alpha = alpha;

  const std::int32_t sub = dim / n;
  Matrix<float> slice(static_cast<std::int64_t>(sample.size()), sub);
  for (std::int32_t rep = 0; rep < r; ++rep) {
    std::vector<std::uint32_t> perm(dim);
    std::iota(perm.begin(), perm.end(), 0);
    if (rep > 0) {
      std::mt19937 rng(static_cast<std::uint32_t>(sub_seed(seed, 1, rep)));
      std::shuffle(perm.begin(), perm.end(), rng);
    }
    cb.permutations.push_back(perm);

    for (std::int32_t slot = 0; slot < n; ++slot) {
      const std::uint32_t* cols = perm.data() + static_cast<std::size_t>(slot) * sub;
      for (std::size_t i = 0; i < sample.size(); ++i) {
        auto src = features.row(sample[i]);
        float* dst = slice.row(static_cast<std::int64_t>(i));
        for (std::int32_t j = 0; j < sub; ++j) {
          dst[j] = src[cols[j]];
        }
      }
      auto clustered = kmeans(slice, k, max_iters, sub_seed(seed, 2 + rep, slot), threads);
      cb.centroids.push_back(std::move(clustered.centroids));
    }
  }
  return cb;
}

std::vector<std::string> encode(const Codebook& cb, std::span<const float> vector) {
  if (static_cast<std::int32_t>(vector.size()) != cb.source_dim) {
    throw std::invalid_argument("encode: vector has " + std::to_string(vector.size()) +
                                " components, codebook expects " +
                                std::to_string(cb.source_dim));
  }
  const std::int32_t sub = cb.sub_dim();
  std::vector<float> buf(sub);
  std::vector<std::string> tokens;
  tokens.reserve(static_cast<std::size_t>(cb.r) * cb.n);
  for (std::int32_t rep = 0; rep < cb.r; ++rep) {
    const auto& perm = cb.permutations[rep];
    for (std::int32_t slot = 0; slot < cb.n; ++slot) {
      const std::uint32_t* cols = perm.data() + static_cast<std::size_t>(slot) * sub;
      for (std::int32_t j = 0; j < sub; ++j) {
        buf[j] = vector[cols[j]];
      }
      const auto& cents = cb.slot_centroids(rep, slot);
      const auto sq_norms = centroid_sq_norms(cents);
      const std::int32_t best = nearest_centroid(cents, sq_norms, buf.data());
      tokens.push_back(std::string(kPseudoPrefix) + std::to_string(rep * cb.n + slot) + "_" +
                       std::to_string(best));
    }
  }
  return tokens;
}

void emit_quantized_corpus(const std::string& corpus_path, const FeatureTable& features,
                           const Codebook& cb, const std::string& out_path) {
  std::ifstream in(corpus_path);
  if (!in) {
    throw std::runtime_error("cannot open corpus file: " + corpus_path);
  }
  std::ofstream out(out_path);
  if (!out) {
    throw std::runtime_error("cannot open output file: " + out_path);
  }

  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    if (line_no >= features.rows()) {
      throw std::runtime_error("alignment mismatch: corpus has more lines than feature rows (" +
                               std::to_string(features.rows()) + ")");
    }
    out << line;
    for (const auto& token : encode(cb, features.row(line_no))) {
      out << ' ' << token;
    }
    out << '\n';
    ++line_no;
  }
  if (line_no != features.rows()) {
    throw std::runtime_error("alignment mismatch: corpus has " + std::to_string(line_no) +
                             " lines, feature table has " + std::to_string(features.rows()) +
                             " rows");
  }
  if (!out) {
    throw std::runtime_error("write failed: " + out_path);
  }
}

void save_codebook(const Codebook& cb, std::ostream& out) {
  io::write_bytes(out, kCodebookMagic, sizeof(kCodebookMagic));
  io::write_u32(out, kCodebookVersion);
  io::write_u32(out, static_cast<std::uint32_t>(cb.source_dim));
  io::write_u32(out, static_cast<std::uint32_t>(cb.n));
  io::write_u32(out, static_cast<std::uint32_t>(cb.k));
  io::write_u32(out, static_cast<std::uint32_t>(cb.r));
  io::write_f32(out, cb.alpha);
  for (const auto& perm : cb.permutations) {
    io::write_u32_array(out, perm.data(), perm.size());
  }
  for (const auto& cents : cb.centroids) {
    io::write_f32_array(out, cents.data(), cents.size());
  }
}

Codebook load_codebook(std::istream& in) {
  char magic[4];
  io::read_bytes(in, magic, sizeof(magic));
  if (!std::equal(magic, magic + 4, kCodebookMagic)) {
    throw std::runtime_error("bad magic: not a codebook file");
  }
  const std::uint32_t version = io::read_u32(in);
  if (version != kCodebookVersion) {
    throw std::runtime_error("unsupported codebook version " + std::to_string(version));
  }

  Codebook cb;
  cb.source_dim = static_cast<std::int32_t>(io::read_u32(in));
  cb.n = static_cast<std::int32_t>(io::read_u32(in));
  cb.k = static_cast<std::int32_t>(io::read_u32(in));
  cb.r = static_cast<std::int32_t>(io::read_u32(in));
  cb.alpha = io::read_f32(in);
  if (cb.source_dim < 1 || cb.n < 1 || cb.n > cb.source_dim || cb.source_dim % cb.n != 0 ||
      cb.k < 1 || cb.r < 1) {
    throw std::runtime_error("corrupt codebook header");
  }
  for (std::int32_t rep = 0; rep < cb.r; ++rep) {
    std::vector<std::uint32_t> perm(cb.source_dim);
    io::read_u32_array(in, perm.data(), perm.size());
    std::vector<bool> seen(cb.source_dim, false);
    for (std::uint32_t p : perm) {
      if (p >= static_cast<std::uint32_t>(cb.source_dim) || seen[p]) {
        throw std::runtime_error("corrupt codebook: permutation is not a bijection");
      }
      seen[p] = true;
    }
    cb.permutations.push_back(std::move(perm));
  }
  for (std::int32_t i = 0; i < cb.r * cb.n; ++i) {
    Matrix<float> cents(cb.k, cb.sub_dim());
    io::read_f32_array(in, cents.data(), cents.size());
    cb.centroids.push_back(std::move(cents));
  }
  return cb;
}

void save_codebook(const Codebook& cb, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open output file: " + path);
  }
  save_codebook(cb, out);
}

Codebook load_codebook(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open codebook file: " + path);
  }
  return load_codebook(in);
}

}  // namespace mmtext
