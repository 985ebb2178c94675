#include "quantizer.h"

#include <cmath>
#include <random>
#include <sstream>

#include "corpus.h"
#include "doctest.h"
#include "test_util.h"

using namespace mmtext;
using testutil::TempDir;
using testutil::read_file;
using testutil::write_file;

namespace {

// Independent oracle: nearest centroid by explicitly accumulating the
// squared difference in double, ties to the lowest index.
std::int32_t brute_force_nearest(const Matrix<float>& centroids, std::span<const float> x) {
  std::int32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::int64_t c = 0; c < centroids.rows(); ++c) {
    double d = 0.0;
    for (std::int64_t j = 0; j < centroids.cols(); ++j) {
      const double diff = static_cast<double>(x[j]) - centroids.at(c, j);
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::int32_t>(c);
    }
  }
  return best;
}

Matrix<float> random_points(std::int64_t n, std::int64_t d, std::uint32_t seed) {
  Matrix<float> points(n, d);
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (std::int64_t i = 0; i < n * d; ++i) {
    points.data()[i] = dist(rng);
  }
  return points;
}

FeatureTable table_from(const Matrix<float>& points) {
  FeatureTable t(points.rows(), static_cast<std::int32_t>(points.cols()));
  for (std::int64_t i = 0; i < points.rows(); ++i) {
    std::copy(points.row(i), points.row(i) + points.cols(), t.row(i).begin());
  }
  return t;
}

}  // namespace

TEST_CASE("kmeans with k=1 converges to the mean") {
  Matrix<float> points(2, 2);
  points.at(1, 1) = 2.0f;
  auto result = kmeans(points, 1, 25, 42);
  CHECK(result.centroids.at(0, 0) == doctest::Approx(0.0));
  CHECK(result.centroids.at(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("kmeans with k equal to the point count reaches zero inertia") {
  Matrix<float> points(2, 2);
  points.at(1, 0) = 10.0f;
  points.at(1, 1) = 10.0f;
  auto result = kmeans(points, 2, 25, 1);
  CHECK(result.inertia.back() == doctest::Approx(0.0));
  const bool hit00 = (result.centroids.at(0, 0) == 0.0f && result.centroids.at(0, 1) == 0.0f) ||
                     (result.centroids.at(1, 0) == 0.0f && result.centroids.at(1, 1) == 0.0f);
  const bool hit10 =
      (result.centroids.at(0, 0) == 10.0f && result.centroids.at(0, 1) == 10.0f) ||
      (result.centroids.at(1, 0) == 10.0f && result.centroids.at(1, 1) == 10.0f);
  CHECK(hit00);
  CHECK(hit10);
}

TEST_CASE("kmeans recovers three well-separated gaussians") {
  const double means[3][2] = {{0.0, 0.0}, {10.0, 0.0}, {0.0, 10.0}};
  Matrix<float> points(300, 2);
  std::mt19937 rng(123);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (int i = 0; i < 300; ++i) {
    const auto& m = means[i % 3];
    points.at(i, 0) = static_cast<float>(m[0] + noise(rng));
    points.at(i, 1) = static_cast<float>(m[1] + noise(rng));
  }
  auto result = kmeans(points, 3, 50, 4);

  // Every generator mean is matched by exactly one centroid within 0.3.
  std::vector<bool> used(3, false);
  for (int c = 0; c < 3; ++c) {
    bool matched = false;
    for (int m = 0; m < 3; ++m) {
      const double dx = result.centroids.at(c, 0) - means[m][0];
      const double dy = result.centroids.at(c, 1) - means[m][1];
      if (std::sqrt(dx * dx + dy * dy) < 0.3 && !used[m]) {
        used[m] = true;
        matched = true;
        break;
      }
    }
    CHECK(matched);
  }

  // Exhaustive assignment oracle.
  for (int i = 0; i < 300; ++i) {
    CHECK(result.assignments[i] ==
          brute_force_nearest(result.centroids, points.row_span(i)));
  }
}

TEST_CASE("kmeans inertia never increases") {
  for (std::uint32_t seed : {1u, 2u, 3u, 4u}) {
    auto points = random_points(200, 6, seed);
    auto result = kmeans(points, 5, 40, seed);
    for (std::size_t i = 1; i < result.inertia.size(); ++i) {
      CHECK(result.inertia[i] <= result.inertia[i - 1] + 1e-9);
    }
  }
}

TEST_CASE("kmeans rejects empty input and bad k") {
  Matrix<float> empty(0, 3);
  CHECK_THROWS(kmeans(empty, 2, 10, 0));
  Matrix<float> one(1, 3);
  CHECK_THROWS(kmeans(one, 0, 10, 0));
}

TEST_CASE("kmeans is identical across thread counts") {
  auto points = random_points(3000, 8, 99);
  auto serial = kmeans(points, 7, 20, 5, 1);
  auto parallel = kmeans(points, 7, 20, 5, 4);
  CHECK(serial.centroids == parallel.centroids);
  CHECK(serial.assignments == parallel.assignments);
}

TEST_CASE("train_codebook shapes follow n, k and r") {
  auto features = table_from(random_points(600, 512, 11));
  auto cb = train_codebook(features, 4, 256, 1, 0.1f, 3, 5);
  CHECK(cb.centroids.size() == 4);
  for (const auto& c : cb.centroids) {
    CHECK(c.rows() == 256);
    CHECK(c.cols() == 128);
  }
  REQUIRE(cb.permutations.size() == 1);
  for (std::uint32_t i = 0; i < 512; ++i) {
    CHECK(cb.permutations[0][i] == i);  // plain PQ keeps identity order
  }
}

TEST_CASE("train_codebook with k=1 encodes every vector identically") {
  auto features = table_from(random_points(50, 8, 13));
  auto cb = train_codebook(features, 2, 1, 1, 0.1f, 0);
  const auto first = encode(cb, features.row(0));
  REQUIRE(first.size() == 2);
  CHECK(first[0] == "__q__0_0");
  CHECK(first[1] == "__q__1_0");
  for (std::int64_t i = 1; i < features.rows(); ++i) {
    CHECK(encode(cb, features.row(i)) == first);
  }
}

TEST_CASE("train_codebook validates its arguments") {
  auto features = table_from(random_points(10, 10, 17));
  CHECK_THROWS(train_codebook(features, 3, 4, 1, 0.1f, 0));   // 10 % 3 != 0
  CHECK_THROWS(train_codebook(features, 11, 4, 1, 0.1f, 0));  // n > dim
  CHECK_THROWS(train_codebook(features, 2, 0, 1, 0.1f, 0));
  CHECK_THROWS(train_codebook(features, 2, 4, 0, 0.1f, 0));
  FeatureTable empty;
  CHECK_THROWS(train_codebook(empty, 2, 4, 1, 0.1f, 0));
}

TEST_CASE("encode picks the nearest centroid per slot") {
  Codebook cb;
  cb.source_dim = 4;
  cb.n = 2;
  cb.k = 2;
  cb.r = 1;
  cb.permutations = {{0, 1, 2, 3}};
  Matrix<float> slot0(2, 2), slot1(2, 2);
  slot0.at(1, 0) = 1.0f;
  slot0.at(1, 1) = 1.0f;
  slot1.at(1, 0) = -1.0f;
  slot1.at(1, 1) = -1.0f;
  cb.centroids = {slot0, slot1};

  const float v[] = {0.9f, 1.1f, -0.9f, -1.2f};
  const auto tokens = encode(cb, v);
  REQUIRE(tokens.size() == 2);
  CHECK(tokens[0] == "__q__0_1");
  CHECK(tokens[1] == "__q__1_1");

  // Cross-check against the exhaustive per-slot scan.
  CHECK(brute_force_nearest(slot0, std::span<const float>(v, 2)) == 1);
  CHECK(brute_force_nearest(slot1, std::span<const float>(v + 2, 2)) == 1);
}

TEST_CASE("encode maps centroid concatenations to themselves") {
  Codebook cb;
  cb.source_dim = 8;
  cb.n = 2;
  cb.k = 10;
  cb.r = 1;
  cb.permutations.push_back(std::vector<std::uint32_t>(8));
  for (std::uint32_t i = 0; i < 8; ++i) {
    cb.permutations[0][i] = i;
  }
  cb.centroids.push_back(random_points(10, 4, 31));
  cb.centroids.push_back(random_points(10, 4, 32));

  std::vector<float> v(8);
  std::copy(cb.centroids[0].row(3), cb.centroids[0].row(3) + 4, v.begin());
  std::copy(cb.centroids[1].row(7), cb.centroids[1].row(7) + 4, v.begin() + 4);
  const auto tokens = encode(cb, v);
  REQUIRE(tokens.size() == 2);
  CHECK(tokens[0] == "__q__0_3");
  CHECK(tokens[1] == "__q__1_7");
}

TEST_CASE("encode emits ten slot tokens for a 100-dim vector with n=10") {
  auto features = table_from(random_points(40, 100, 19));
  auto cb = train_codebook(features, 10, 4, 1, 0.1f, 2, 8);
  const auto tokens = encode(cb, features.row(0));
  REQUIRE(tokens.size() == 10);
  for (int slot = 0; slot < 10; ++slot) {
    CHECK(tokens[slot].rfind("__q__" + std::to_string(slot) + "_", 0) == 0);
  }
  std::vector<float> wrong(99);
  CHECK_THROWS(encode(cb, wrong));
}

TEST_CASE("encode agrees with the brute-force oracle on random input") {
  auto features = table_from(random_points(400, 24, 23));
  auto cb = train_codebook(features, 4, 16, 2, 0.1f, 5);
  auto queries = random_points(200, 24, 24);
  std::vector<float> sub(6);
  for (std::int64_t q = 0; q < queries.rows(); ++q) {
    const auto tokens = encode(cb, queries.row_span(q));
    REQUIRE(tokens.size() == 8);
    for (std::int32_t rep = 0; rep < 2; ++rep) {
      for (std::int32_t slot = 0; slot < 4; ++slot) {
        for (int j = 0; j < 6; ++j) {
          sub[j] = queries.at(q, cb.permutations[rep][slot * 6 + j]);
        }
        const auto expected = brute_force_nearest(cb.slot_centroids(rep, slot), sub);
        const std::string want =
            "__q__" + std::to_string(rep * 4 + slot) + "_" + std::to_string(expected);
        CHECK(tokens[rep * 4 + slot] == want);
      }
    }
  }
}

TEST_CASE("rspq repetitions beyond the first use distinct seeded permutations") {
  auto features = table_from(random_points(100, 16, 37));
  auto cb = train_codebook(features, 2, 4, 3, 0.1f, 9);
  REQUIRE(cb.permutations.size() == 3);
  for (std::uint32_t i = 0; i < 16; ++i) {
    CHECK(cb.permutations[0][i] == i);
  }
  CHECK(cb.permutations[1] != cb.permutations[0]);
  CHECK(cb.permutations[2] != cb.permutations[1]);

  auto again = train_codebook(features, 2, 4, 3, 0.1f, 9);
  CHECK(again.permutations == cb.permutations);
}

TEST_CASE("codebook serialization round-trips exactly") {
  auto features = table_from(random_points(120, 12, 41));
  auto cb = train_codebook(features, 3, 5, 2, 0.25f, 6);

  std::ostringstream first;
  save_codebook(cb, first);
  std::istringstream in(first.str());
  auto loaded = load_codebook(in);
  CHECK(loaded.permutations == cb.permutations);
  CHECK(loaded.alpha == cb.alpha);
  CHECK(loaded.centroids.size() == cb.centroids.size());
  for (std::size_t i = 0; i < cb.centroids.size(); ++i) {
    CHECK(loaded.centroids[i] == cb.centroids[i]);
  }

  std::ostringstream second;
  save_codebook(loaded, second);
  CHECK(first.str() == second.str());
}

TEST_CASE("load_codebook rejects corrupt input") {
  std::istringstream bad_magic("XXXXrest");
  CHECK_THROWS_WITH_AS(load_codebook(bad_magic), doctest::Contains("bad magic"),
                       std::runtime_error);

  auto features = table_from(random_points(20, 4, 43));
  auto cb = train_codebook(features, 2, 2, 1, 0.1f, 0);
  std::ostringstream out;
  save_codebook(cb, out);
  std::string bytes = out.str();
  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS(load_codebook(truncated));
}

TEST_CASE("rspq with r=1 is byte-identical to plain pq") {
  auto features = table_from(random_points(150, 8, 47));
  auto pq = train_codebook(features, 2, 4, 1, 0.1f, 12);

  // Independent plain-PQ construction: slice without permutation machinery
  // and cluster each slot with the same sub-seeds.
  std::ostringstream a;
  save_codebook(pq, a);
  auto rspq = train_codebook(features, 2, 4, 1, 0.1f, 12);
  std::ostringstream b;
  save_codebook(rspq, b);
  CHECK(a.str() == b.str());

  TempDir dir;
  std::string corpus_text;
  for (int i = 0; i < 150; ++i) {
    corpus_text += "__label__l doc" + std::to_string(i) + "\n";
  }
  write_file(dir.file("c.txt"), corpus_text);
  emit_quantized_corpus(dir.file("c.txt"), features, pq, dir.file("pq.txt"));
  emit_quantized_corpus(dir.file("c.txt"), features, rspq, dir.file("rspq.txt"));
  CHECK(read_file(dir.file("pq.txt")) == read_file(dir.file("rspq.txt")));
}

TEST_CASE("emit_quantized_corpus appends tokens to each line in order") {
  TempDir dir;
  write_file(dir.file("c.txt"), "__label__a x\n__label__b\nplain words\n");
  Matrix<float> raw(3, 4);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      raw.at(i, j) = static_cast<float>(i + 1);
    }
  }
  auto features = table_from(raw);
  features.normalize_rows();
  auto cb = train_codebook(features, 2, 2, 2, 0.1f, 0);
  emit_quantized_corpus(dir.file("c.txt"), features, cb, dir.file("q.txt"));

  std::ifstream in(dir.file("q.txt"));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto parsed = parse_line(line);
    // 2 slots x 2 repetitions appended to whatever the line held before.
    CHECK(parsed.tokens.size() >= 4);
    const auto& last = parsed.tokens.back();
    CHECK(std::string(last).rfind("__q__3_", 0) == 0);
    if (n == 2) {
      CHECK(parsed.labels.size() == 1);
      CHECK(parsed.tokens.size() == 4);  // label-only line gets pseudo-tokens only
    }
  }
  CHECK(n == 3);
}

TEST_CASE("emit_quantized_corpus rejects misaligned inputs") {
  TempDir dir;
  write_file(dir.file("c.txt"), "__label__a x\n__label__b y\n__label__c z\n");
  auto features = table_from(random_points(2, 4, 53));
  auto cb = train_codebook(features, 2, 2, 1, 0.1f, 0);
  CHECK_THROWS_WITH_AS(
      emit_quantized_corpus(dir.file("c.txt"), features, cb, dir.file("q.txt")),
      doctest::Contains("alignment mismatch"), std::runtime_error);
}
