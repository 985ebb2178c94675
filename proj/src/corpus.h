#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mmtext {

inline constexpr std::string_view kLabelPrefix = "__label__";
inline constexpr std::string_view kPseudoPrefix = "__q__";

// One input line split into label names (prefix stripped) and word tokens.
// Views point into the caller's line buffer.
struct ParsedLine {
  std::vector<std::string_view> labels;
  std::vector<std::string_view> tokens;
};

// Splits a line on whitespace. The leading run of "__label__"-prefixed tokens
// becomes the label set; everything after the first non-label token is kept
// as a word, including later "__label__"-looking tokens.
ParsedLine parse_line(std::string_view line);

// Token <-> id maps for words and labels. Words and quantized pseudo-tokens
// ("__q__" prefix) share one namespace; labels have their own. Ids are dense,
// ordered by descending count with ties broken by first occurrence.
class Vocabulary {
 public:
  struct Entry {
    std::string token;
    std::int64_t count = 0;
  };

  // Scans the corpus once, drops words with count < min_count (labels are
  // never dropped). Throws on unreadable files and corpora without a single
  // labeled line.
  static Vocabulary build(const std::string& path, int min_count);

  std::int32_t word_id(std::string_view token) const;
  std::int32_t label_id(std::string_view name) const;

  std::int32_t n_words() const { return static_cast<std::int32_t>(words_.size()); }
  std::int32_t n_labels() const { return static_cast<std::int32_t>(labels_.size()); }

  const std::string& word(std::int32_t id) const { return words_[id].token; }
  const std::string& label(std::int32_t id) const { return labels_[id].token; }
  std::int64_t word_count(std::int32_t id) const { return words_[id].count; }
  std::int64_t label_count(std::int32_t id) const { return labels_[id].count; }

  bool is_pseudo(std::int32_t id) const { return pseudo_flags_[id] != 0; }
  const std::uint8_t* pseudo_flags() const { return pseudo_flags_.data(); }

  int min_count() const { return min_count_; }

  // Re-adds a word or label entry in id order; used by model deserialization.
  void push_word(std::string token, std::int64_t count);
  void push_label(std::string name, std::int64_t count);
  void set_min_count(int mc) { min_count_ = mc; }

 private:
  struct SvHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept {
      return std::hash<std::string_view>{}(s);
    }
  };
  struct SvEq {
    using is_transparent = void;
    bool operator()(std::string_view a, std::string_view b) const noexcept { return a == b; }
  };
  using TokenMap = std::unordered_map<std::string, std::int32_t, SvHash, SvEq>;

  std::vector<Entry> words_;
  std::vector<Entry> labels_;
  std::vector<std::uint8_t> pseudo_flags_;
  TokenMap word_ids_;
  TokenMap label_ids_;
  int min_count_ = 1;
};

// One corpus line with tokens and labels resolved to ids. `labeled` records
// whether the raw line carried at least one label token, so evaluation can
// distinguish unlabeled lines from lines whose labels are all unknown.
struct Document {
  std::vector<std::int32_t> tokens;
  std::vector<std::int32_t> labels;
  std::int64_t line_index = 0;
  bool labeled = false;
};

// In-memory corpus; one Document per input line, in file order, so that
// line_index stays aligned with sidecar feature files.
class Corpus {
 public:
  Corpus() = default;
  Corpus(std::shared_ptr<const Vocabulary> vocab, std::vector<Document> docs);

  static Corpus load(const std::string& path, std::shared_ptr<const Vocabulary> vocab);

  const std::vector<Document>& docs() const { return docs_; }
  std::int64_t total_tokens() const { return total_tokens_; }
  const Vocabulary& vocab() const { return *vocab_; }
  const std::shared_ptr<const Vocabulary>& vocab_ptr() const { return vocab_; }

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  std::vector<Document> docs_;
  std::int64_t total_tokens_ = 0;
};

// Dense table of continuous feature vectors, one row per corpus line.
// Rows are scaled to unit Euclidean norm at load time; all-zero rows stay
// zero so documents without continuous input remain representable.
class FeatureTable {
 public:
  FeatureTable() = default;
  FeatureTable(std::int64_t rows, std::int32_t dim)
      : rows_(rows), dim_(dim), data_(static_cast<std::size_t>(rows) * dim, 0.0f) {}

  // Parses one space-separated decimal vector per line; the dimension is
  // inferred from the first line. If expected_rows is set, a mismatching row
  // count is an error.
  static FeatureTable load(const std::string& path,
                           std::optional<std::int64_t> expected_rows = std::nullopt);

  std::int64_t rows() const { return rows_; }
  std::int32_t dim() const { return dim_; }

  std::span<const float> row(std::int64_t i) const {
    return {data_.data() + i * dim_, static_cast<std::size_t>(dim_)};
  }
  std::span<float> row(std::int64_t i) {
    return {data_.data() + i * dim_, static_cast<std::size_t>(dim_)};
  }

  void normalize_rows();

 private:
  std::int64_t rows_ = 0;
  std::int32_t dim_ = 0;
  std::vector<float> data_;
};

// Normalized bag-of-words weights: each distinct id gets count/len, so the
// weights of a nonempty token list sum to 1. Weighting uses occurrence
// counts, not binary presence. Returned sorted by id.
std::vector<std::pair<std::int32_t, double>> text_weights(std::span<const std::int32_t> tokens);

}  // namespace mmtext
