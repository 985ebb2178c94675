#include "corpus.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mmtext {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\v' || c == '\f' || c == '\r' || c == '\n';
}

template <typename Fn>
void for_each_field(std::string_view line, Fn&& fn) {
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) {
      ++i;
    }
    std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) {
      ++i;
    }
    if (i > start) {
      fn(line.substr(start, i - start));
    }
  }
}

}  // namespace

ParsedLine parse_line(std::string_view line) {
  ParsedLine out;
  bool in_label_run = true;
  for_each_field(line, [&](std::string_view field) {
    if (in_label_run && field.starts_with(kLabelPrefix)) {
      out.labels.push_back(field.substr(kLabelPrefix.size()));
    } else {
      in_label_run = false;
      out.tokens.push_back(field);
    }
  });
  return out;
}

Vocabulary Vocabulary::build(const std::string& path, int min_count) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open corpus file: " + path);
  }

  struct Counted {
    std::string token;
    std::int64_t count = 0;
    std::int64_t first_seen = 0;
  };
  std::vector<Counted> words;
  std::vector<Counted> labels;
  TokenMap word_idx;
  TokenMap label_idx;
  std::int64_t next_order = 0;
  bool any_labeled_line = false;

  auto bump = [&next_order](std::vector<Counted>& entries, TokenMap& idx, std::string_view token) {
    auto it = idx.find(token);
    if (it == idx.end()) {
      idx.emplace(std::string(token), static_cast<std::int32_t>(entries.size()));
      entries.push_back({std::string(token), 1, next_order++});
    } else {
      entries[it->second].count++;
    }
  };

  std::string line;
  while (std::getline(in, line)) {
    ParsedLine parsed = parse_line(line);
    if (!parsed.labels.empty()) {
      any_labeled_line = true;
    }
    for (std::string_view name : parsed.labels) {
      bump(labels, label_idx, name);
    }
    for (std::string_view token : parsed.tokens) {
      bump(words, word_idx, token);
    }
  }
  if (in.bad()) {
    throw std::runtime_error("read error on corpus file: " + path);
  }
  if (!any_labeled_line) {
    throw std::runtime_error("corpus has no labeled lines: " + path);
  }

  std::erase_if(words, [min_count](const Counted& c) { return c.count < min_count; });

  auto by_count = [](const Counted& a, const Counted& b) {
    if (a.count != b.count) {
      return a.count > b.count;
    }
    return a.first_seen < b.first_seen;
  };
  std::sort(words.begin(), words.end(), by_count);
  std::sort(labels.begin(), labels.end(), by_count);

  Vocabulary vocab;
  vocab.min_count_ = min_count;
  for (auto& w : words) {
    vocab.push_word(std::move(w.token), w.count);
  }
  for (auto& l : labels) {
    vocab.push_label(std::move(l.token), l.count);
  }
  return vocab;
}

std::int32_t Vocabulary::word_id(std::string_view token) const {
  auto it = word_ids_.find(token);
  return it == word_ids_.end() ? -1 : it->second;
}

std::int32_t Vocabulary::label_id(std::string_view name) const {
  auto it = label_ids_.find(name);
  return it == label_ids_.end() ? -1 : it->second;
}

void Vocabulary::push_word(std::string token, std::int64_t count) {
  auto id = static_cast<std::int32_t>(words_.size());
  pseudo_flags_.push_back(std::string_view(token).starts_with(kPseudoPrefix) ? 1 : 0);
  word_ids_.emplace(token, id);
  words_.push_back({std::move(token), count});
}

void Vocabulary::push_label(std::string name, std::int64_t count) {
  auto id = static_cast<std::int32_t>(labels_.size());
  label_ids_.emplace(name, id);
  labels_.push_back({std::move(name), count});
}

Corpus::Corpus(std::shared_ptr<const Vocabulary> vocab, std::vector<Document> docs)
    : vocab_(std::move(vocab)), docs_(std::move(docs)) {
  for (const Document& doc : docs_) {
    total_tokens_ += static_cast<std::int64_t>(doc.tokens.size());
  }
}

Corpus Corpus::load(const std::string& path, std::shared_ptr<const Vocabulary> vocab) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open corpus file: " + path);
  }

  Corpus corpus;
  corpus.vocab_ = std::move(vocab);
  std::string line;
  std::int64_t line_index = 0;
  while (std::getline(in, line)) {
    ParsedLine parsed = parse_line(line);
    Document doc;
    doc.line_index = line_index++;
    doc.labeled = !parsed.labels.empty();
    doc.tokens.reserve(parsed.tokens.size());
    for (std::string_view token : parsed.tokens) {
      std::int32_t id = corpus.vocab_->word_id(token);
      if (id >= 0) {  // out-of-vocabulary tokens are dropped
        doc.tokens.push_back(id);
      }
    }
    for (std::string_view name : parsed.labels) {
      std::int32_t id = corpus.vocab_->label_id(name);
      if (id >= 0) {
        doc.labels.push_back(id);
      }
    }
    corpus.total_tokens_ += static_cast<std::int64_t>(doc.tokens.size());
    corpus.docs_.push_back(std::move(doc));
  }
  if (in.bad()) {
    throw std::runtime_error("read error on corpus file: " + path);
  }
  return corpus;
}

FeatureTable FeatureTable::load(const std::string& path,
                                std::optional<std::int64_t> expected_rows) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open feature file: " + path);
  }

  FeatureTable table;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::int32_t fields = 0;
    for_each_field(line, [&](std::string_view field) {
      float value = 0.0f;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
      if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw std::runtime_error("non-numeric field '" + std::string(field) + "' at " + path +
                                 ":" + std::to_string(line_no));
      }
      table.data_.push_back(value);
      ++fields;
    });
    if (table.rows_ == 0) {
      if (fields == 0) {
        throw std::runtime_error("empty first row in feature file: " + path);
      }
      table.dim_ = fields;
    } else if (fields != table.dim_) {
      throw std::runtime_error("row length mismatch at " + path + ":" + std::to_string(line_no) +
                               " (expected " + std::to_string(table.dim_) + " fields, got " +
                               std::to_string(fields) + ")");
    }
    table.rows_++;
  }
  if (in.bad()) {
    throw std::runtime_error("read error on feature file: " + path);
  }
  if (expected_rows && table.rows_ != *expected_rows) {
    throw std::runtime_error("feature file " + path + " has " + std::to_string(table.rows_) +
                             " rows, corpus has " + std::to_string(*expected_rows) + " lines");
  }
  table.normalize_rows();
  return table;
}

void FeatureTable::normalize_rows() {
  for (std::int64_t i = 0; i < rows_; ++i) {
    auto r = row(i);
    double sq = 0.0;
    for (float v : r) {
      sq += static_cast<double>(v) * v;
    }
    if (sq > 0.0) {
      auto inv = static_cast<float>(1.0 / std::sqrt(sq));
      for (float& v : r) {
        v *= inv;
      }
    }
  }
}

std::vector<std::pair<std::int32_t, double>> text_weights(std::span<const std::int32_t> tokens) {
  std::vector<std::pair<std::int32_t, double>> weights;
  if (tokens.empty()) {
    return weights;
  }
  std::vector<std::int32_t> sorted(tokens.begin(), tokens.end());
  std::sort(sorted.begin(), sorted.end());
  const double inv_len = 1.0 / static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) {
      ++j;
    }
    weights.emplace_back(sorted[i], static_cast<double>(j - i) * inv_len);
    i = j;
  }
  return weights;
}

}  // namespace mmtext
