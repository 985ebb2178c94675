#include "trainer.h"

#include <random>
#include <sstream>

#include "doctest.h"
#include "gradcheck.h"
#include "inference.h"
#include "persistence.h"
#include "test_util.h"

using namespace mmtext;

namespace {

// Two-word, two-label corpus where the first token decides the label.
Corpus toy_corpus(int docs_per_class, std::shared_ptr<const Vocabulary>* vocab_out = nullptr) {
  auto vocab = std::make_shared<Vocabulary>();
  vocab->push_word("cat", docs_per_class);
  vocab->push_word("dog", docs_per_class);
  vocab->push_word("the", 2 * docs_per_class);
  vocab->push_label("feline", docs_per_class);
  vocab->push_label("canine", docs_per_class);

  std::vector<Document> docs;
  for (int i = 0; i < 2 * docs_per_class; ++i) {
    Document doc;
    doc.line_index = i;
    doc.labeled = true;
    doc.tokens = {i % 2, 2};
    doc.labels = {i % 2};
    docs.push_back(std::move(doc));
  }
  if (vocab_out != nullptr) {
    *vocab_out = vocab;
  }
  return Corpus(vocab, std::move(docs));
}

TrainConfig toy_config(Fusion fusion = Fusion::text) {
  TrainConfig cfg;
  cfg.model.fusion = fusion;
  cfg.model.dim = 8;
  cfg.lr0 = 0.5;
  cfg.epochs = 5;
  cfg.threads = 1;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("lr decays linearly with token progress") {
  CHECK(lr_at(0.7, 0, 1000) == 0.7);
  CHECK(lr_at(0.7, 1000, 1000) == 0.0);
  CHECK(lr_at(0.5, 500, 1000) == doctest::Approx(0.25));
  CHECK(lr_at(0.5, 2000, 1000) == 0.0);  // clamped past the budget
  CHECK(lr_at(0.5, 10, 0) == 0.0);

  double prev = lr_at(1.0, 0, 777);
  for (std::int64_t t = 1; t <= 777; ++t) {
    const double lr = lr_at(1.0, t, 777);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK(prev == 0.0);
}

TEST_CASE("train_step with lr=0 leaves parameters untouched") {
  auto instance = testutil::random_instance(Fusion::additive, GateSide::text, 17);
  Scratch<double> scratch;
  scratch.configure(instance.cfg);
  Params<double> params = instance.params;
  const double loss =
      train_step(params, instance.cfg, std::span<const std::int32_t>(instance.tokens),
                 instance.label, instance.pseudo_flags.data(), instance.feature.data(), 0.0,
                 scratch);
  CHECK(loss > 0.0);
  CHECK(params.U == instance.params.U);
  CHECK(params.V == instance.params.V);
  CHECK(params.W == instance.params.W);
}

TEST_CASE("one small step on a single sample decreases its loss") {
  for (auto [fusion, gate] : testutil::gradient_check_variants()) {
    auto instance = testutil::random_instance(fusion, gate, 29);
    Scratch<double> scratch;
    scratch.configure(instance.cfg);
    Params<double> params = instance.params;
    const double* feat = instance.feature.empty() ? nullptr : instance.feature.data();
    const double before =
        train_step(params, instance.cfg, std::span<const std::int32_t>(instance.tokens),
                   instance.label, instance.pseudo_flags.data(), feat, 0.05, scratch);
    const double after =
        forward_loss(params, instance.cfg, std::span<const std::int32_t>(instance.tokens),
                     instance.pseudo_flags.data(), feat, instance.label, scratch);
    CHECK(after < before);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  for (auto [fusion, gate] : testutil::gradient_check_variants()) {
    for (std::uint32_t seed = 0; seed < 3; ++seed) {
      auto instance = testutil::random_instance(fusion, gate, 1000 + seed * 7);
      const double err = testutil::max_grad_rel_error(instance);
      INFO(fusion_name(fusion), " gate=", gate_side_name(gate), " seed=", seed);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("a step only touches the U rows of tokens in the document") {
  auto instance = testutil::random_instance(Fusion::text, GateSide::text, 41);
  instance.tokens = {1, 3, 3};
  Scratch<double> scratch;
  scratch.configure(instance.cfg);
  Params<double> params = instance.params;
  train_step(params, instance.cfg, std::span<const std::int32_t>(instance.tokens),
             instance.label, instance.pseudo_flags.data(), nullptr, 0.1, scratch);

  for (std::int64_t row = 0; row < params.U.rows(); ++row) {
    const bool present = row == 1 || row == 3;
    bool changed = false;
    for (std::int64_t j = 0; j < params.U.cols(); ++j) {
      changed |= params.U.at(row, j) != instance.params.U.at(row, j);
    }
    CHECK(changed == present);
  }
  CHECK_FALSE(params.W == instance.params.W);
}

TEST_CASE("single-thread training is bit-reproducible") {
  auto corpus = toy_corpus(20);
  auto cfg = toy_config();
  const Model a = train(cfg, corpus);
  const Model b = train(cfg, corpus);
  std::ostringstream sa, sb;
  save_model(a, sa);
  save_model(b, sb);
  CHECK(sa.str() == sb.str());

  cfg.seed = 4;
  const Model c = train(cfg, corpus);
  std::ostringstream sc;
  save_model(c, sc);
  CHECK(sa.str() != sc.str());
}

TEST_CASE("training fits a separable text corpus") {
  auto corpus = toy_corpus(30);
  const Model model = train(toy_config(), corpus);
  CHECK(evaluate(model, corpus) == doctest::Approx(1.0));
}

TEST_CASE("per-epoch average loss is non-increasing on a separable corpus") {
  auto corpus = toy_corpus(25);
  ModelConfig mc;
  mc.fusion = Fusion::text;
  mc.dim = 8;
  mc.label_count = corpus.vocab().n_labels();
  Model model = init_model(mc, corpus.vocab_ptr(), 11);

  Scratch<float> scratch;
  scratch.configure(mc);
  const std::int64_t budget = 20 * corpus.total_tokens();
  std::int64_t progress = 0;
  double prev_avg = std::numeric_limits<double>::infinity();
  std::mt19937 rng(1);
  std::vector<std::size_t> order(corpus.docs().size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < 20; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t idx : order) {
      const Document& doc = corpus.docs()[idx];
      const auto lr = static_cast<float>(lr_at(0.5, progress, budget));
      sum += train_step(model.params, mc, std::span<const std::int32_t>(doc.tokens),
                        doc.labels[0], corpus.vocab().pseudo_flags(), nullptr, lr, scratch);
      progress += static_cast<std::int64_t>(doc.tokens.size());
    }
    const double avg = sum / static_cast<double>(order.size());
    CHECK(avg <= prev_avg + 1e-12);
    prev_avg = avg;
  }
}

TEST_CASE("train validates its configuration") {
  auto corpus = toy_corpus(5);
  auto cfg = toy_config();

  cfg.epochs = 0;
  CHECK_THROWS(train(cfg, corpus));
  cfg = toy_config();
  cfg.lr0 = 0.0;
  CHECK_THROWS(train(cfg, corpus));
  cfg = toy_config();
  cfg.threads = 0;
  CHECK_THROWS(train(cfg, corpus));
  cfg = toy_config(Fusion::additive);
  CHECK_THROWS(train(cfg, corpus));  // no feature table

  FeatureTable wrong(3, 4);
  CHECK_THROWS(train(cfg, corpus, &wrong));  // row count mismatch
}

TEST_CASE("enumerate_grid produces the full cross product") {
  TrainConfig base = toy_config();
  std::vector<SweepAxis> axes = {
      {"lr", {"0.1", "0.25", "0.5", "1.0", "2.0"}},
      {"epoch", {"5", "10", "20"}},
      {"alpha", {"0.01", "0.02", "0.05", "0.1", "0.2", "0.5"}},
      {"dim", {"20", "100"}},
      {"gate", {"text", "visual"}},
  };
  const auto combos = enumerate_grid(base, axes);
  CHECK(combos.size() == 360);
  // First axis varies slowest; the last two combos differ only in gate.
  CHECK(combos[0].lr0 == doctest::Approx(0.1));
  CHECK(combos[359].lr0 == doctest::Approx(2.0));
  CHECK(combos[0].model.gate == GateSide::text);
  CHECK(combos[1].model.gate == GateSide::visual);
  CHECK(combos[0].epochs == combos[1].epochs);

  CHECK(enumerate_grid(base, {}).size() == 1);
  CHECK_THROWS(enumerate_grid(base, {{"bogus", {"1"}}}));
  CHECK_THROWS(enumerate_grid(base, {{"lr", {"fast"}}}));
}

TEST_CASE("grid_search returns the best-scoring configuration") {
  auto train_split = toy_corpus(30);
  auto valid_split = toy_corpus(10);
  TrainConfig base = toy_config();
  base.epochs = 2;

  SUBCASE("single combination is returned as-is") {
    auto result = grid_search(base, {{"lr", {"0.5"}}}, train_split, nullptr, valid_split,
                              nullptr);
    CHECK(result.entries.size() == 1);
    CHECK(result.best.lr0 == doctest::Approx(0.5));
    CHECK(result.best_accuracy == doctest::Approx(result.entries[0].accuracy));
  }

  SUBCASE("a strictly better configuration wins") {
    // 1e-9 learning rate cannot move the uniform prediction off label 0.
    auto result = grid_search(base, {{"lr", {"0.000000001", "1.0"}}}, train_split, nullptr,
                              valid_split, nullptr);
    CHECK(result.entries.size() == 2);
    CHECK(result.entries[0].accuracy < result.entries[1].accuracy);
    CHECK(result.best.lr0 == doctest::Approx(1.0));
  }

  SUBCASE("an axis with no values is an empty grid") {
    CHECK_THROWS_WITH_AS(
        grid_search(base, {{"lr", {}}}, train_split, nullptr, valid_split, nullptr),
        doctest::Contains("empty grid"), std::invalid_argument);
  }
}
