#include "trainer.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <deque>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

#include "inference.h"

namespace mmtext {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t h = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  h ^= h >> 32;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 29;
  return h;
}

// Trailing average of per-step losses, kept as chunk sums so workers only
// touch the mutex every few hundred steps. Logging only.
class LossWindow {
 public:
  explicit LossWindow(std::int64_t span) : span_(span) {}

  void push(double chunk_sum, std::int64_t chunk_count) {
    std::lock_guard<std::mutex> lock(mutex_);
    chunks_.emplace_back(chunk_sum, chunk_count);
    sum_ += chunk_sum;
    count_ += chunk_count;
    while (count_ - chunks_.front().second >= span_) {
      sum_ -= chunks_.front().first;
      count_ -= chunks_.front().second;
      chunks_.pop_front();
    }
  }

  double average() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return count_ > 0 ? sum_ / static_cast<double>(count_) : 0.0;
  }

 private:
  mutable std::mutex mutex_;
  std::deque<std::pair<double, std::int64_t>> chunks_;
  double sum_ = 0.0;
  std::int64_t count_ = 0;
  std::int64_t span_;
};

constexpr std::int64_t kLossWindowSteps = 10000;
constexpr std::int64_t kLossFlushEvery = 512;

}  // namespace

double lr_at(double lr0, std::int64_t tokens_processed, std::int64_t budget) {
  if (budget <= 0) {
    return 0.0;
  }
  double p = static_cast<double>(tokens_processed) / static_cast<double>(budget);
  p = std::clamp(p, 0.0, 1.0);
  return lr0 * (1.0 - p);
}

Model train(const TrainConfig& cfg, const Corpus& corpus, const FeatureTable* features,
            const Codebook* codebook) {
  if (cfg.lr0 <= 0.0) {
    throw std::invalid_argument("learning rate must be positive");
  }
  if (cfg.epochs < 1) {
    throw std::invalid_argument("epochs must be >= 1");
  }
  if (cfg.threads < 1) {
    throw std::invalid_argument("threads must be >= 1");
  }
  const auto& docs = corpus.docs();
  if (docs.empty()) {
    throw std::invalid_argument("training corpus is empty");
  }

  ModelConfig mc = cfg.model;
  mc.label_count = corpus.vocab().n_labels();
  if (mc.label_count < 1) {
    throw std::invalid_argument("vocabulary has no labels");
  }
  if (fusion_uses_visual(mc.fusion)) {
    if (features == nullptr) {
      throw std::invalid_argument(std::string(fusion_name(mc.fusion)) +
                                  " fusion requires a feature table");
    }
    if (features->rows() != static_cast<std::int64_t>(docs.size())) {
      throw std::invalid_argument("feature table has " + std::to_string(features->rows()) +
                                  " rows, corpus has " + std::to_string(docs.size()) + " lines");
    }
    mc.visual_dim = features->dim();
  }

  Model model = init_model(mc, corpus.vocab_ptr(), cfg.seed);
  if (codebook != nullptr) {
    model.codebook = *codebook;
  }

  const std::int64_t budget = static_cast<std::int64_t>(cfg.epochs) * corpus.total_tokens();
  std::atomic<std::int64_t> progress{0};
  LossWindow window(kLossWindowSteps);
  const std::uint8_t* pseudo_flags = corpus.vocab().pseudo_flags();
  const std::int64_t n_docs = static_cast<std::int64_t>(docs.size());

  auto worker = [&](int id) {
    const std::int64_t begin = id * n_docs / cfg.threads;
    const std::int64_t end = (id + 1) * n_docs / cfg.threads;
    std::vector<std::int64_t> indices(end - begin);
    std::iota(indices.begin(), indices.end(), begin);
    std::mt19937 rng(static_cast<std::uint32_t>(mix_seed(cfg.seed, id)));

    Scratch<float> scratch;
    scratch.configure(mc);
    double chunk_sum = 0.0;
    std::int64_t chunk_count = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(indices.begin(), indices.end(), rng);
      for (std::int64_t idx : indices) {
        const Document& doc = docs[idx];
        if (!doc.labels.empty()) {
          const auto lr = static_cast<float>(
              lr_at(cfg.lr0, progress.load(std::memory_order_relaxed), budget));
          const float* feat =
              features != nullptr ? features->row(doc.line_index).data() : nullptr;
          chunk_sum += train_step(model.params, mc, std::span<const std::int32_t>(doc.tokens),
                                  doc.labels[0], pseudo_flags, feat, lr, scratch);
          if (++chunk_count >= kLossFlushEvery) {
            window.push(chunk_sum, chunk_count);
            chunk_sum = 0.0;
            chunk_count = 0;
          }
        }
        progress.fetch_add(static_cast<std::int64_t>(doc.tokens.size()),
                           std::memory_order_relaxed);
      }
    }
    if (chunk_count > 0) {
      window.push(chunk_sum, chunk_count);
    }
  };

  const auto start = std::chrono::steady_clock::now();
  std::vector<std::thread> pool;
  pool.reserve(cfg.threads);
  for (int t = 0; t < cfg.threads; ++t) {
    pool.emplace_back(worker, t);
  }

  if (cfg.verbose) {
    while (progress.load(std::memory_order_relaxed) < budget) {
      std::this_thread::sleep_for(std::chrono::milliseconds(200));
      const std::int64_t done = progress.load(std::memory_order_relaxed);
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::fprintf(stderr, "\rProgress: %5.1f%%  tokens/sec: %9.0f  lr: %9.6f  loss: %9.6f",
                   budget > 0 ? 100.0 * static_cast<double>(done) / static_cast<double>(budget)
                              : 100.0,
                   elapsed > 0.0 ? static_cast<double>(done) / elapsed : 0.0,
                   lr_at(cfg.lr0, done, budget), window.average());
    }
  }
  for (auto& th : pool) {
    th.join();
  }
  if (cfg.verbose) {
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "\rProgress: 100.0%%  tokens/sec: %9.0f  lr: %9.6f  loss: %9.6f\n",
                 elapsed > 0.0 ? static_cast<double>(budget) / elapsed : 0.0, 0.0,
                 window.average());
  }
  return model;
}

namespace {

double parse_axis_number(const std::string& value, const std::string& axis) {
  try {
    return std::stod(value);
  } catch (const std::exception&) {
    throw std::invalid_argument("bad value '" + value + "' for grid axis '" + axis + "'");
  }
}

void apply_axis(TrainConfig& cfg, const std::string& name, const std::string& value) {
  if (name == "lr") {
    cfg.lr0 = parse_axis_number(value, name);
  } else if (name == "epoch" || name == "epochs") {
    cfg.epochs = static_cast<int>(parse_axis_number(value, name));
  } else if (name == "alpha") {
    cfg.model.alpha = static_cast<float>(parse_axis_number(value, name));
  } else if (name == "dim") {
    cfg.model.dim = static_cast<std::int32_t>(parse_axis_number(value, name));
  } else if (name == "gate" || name == "gate_side") {
    auto side = gate_side_from_name(value);
    if (!side) {
      throw std::invalid_argument("gate must be 'text' or 'visual', got '" + value + "'");
    }
    cfg.model.gate = *side;
  } else {
    throw std::invalid_argument("unknown grid axis '" + name + "'");
  }
}

}  // namespace

std::vector<TrainConfig> enumerate_grid(const TrainConfig& base,
                                        const std::vector<SweepAxis>& axes) {
  std::vector<TrainConfig> combos{base};
  for (const auto& axis : axes) {
    std::vector<TrainConfig> next;
    next.reserve(combos.size() * axis.values.size());
    for (const auto& cfg : combos) {
      for (const auto& value : axis.values) {
        TrainConfig candidate = cfg;
        apply_axis(candidate, axis.name, value);
        next.push_back(candidate);
      }
    }
    combos = std::move(next);
  }
  return combos;
}

SweepResult grid_search(const TrainConfig& base, const std::vector<SweepAxis>& axes,
                        const Corpus& train_split, const FeatureTable* train_features,
                        const Corpus& valid_split, const FeatureTable* valid_features,
                        const Codebook* codebook) {
  const auto combos = enumerate_grid(base, axes);
  if (combos.empty()) {
    throw std::invalid_argument("empty grid");
  }

  SweepResult result;
  bool have_best = false;
  for (const auto& cfg : combos) {
    Model model = train(cfg, train_split, train_features, codebook);
    const double accuracy = evaluate(model, valid_split, valid_features);
    result.entries.push_back({cfg, accuracy});
    if (!have_best || accuracy > result.best_accuracy) {
      have_best = true;
      result.best = cfg;
      result.best_accuracy = accuracy;
    }
  }
  return result;
}

}  // namespace mmtext
