#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "inference.h"
#include "persistence.h"
#include "quantizer.h"
#include "trainer.h"

namespace {

using namespace mmtext;

void print_usage() {
  std::cerr <<
      "usage: mmtext <command> <args>\n"
      "\n"
      "commands:\n"
      "  train     train a classifier\n"
      "            -input X.txt -output M [-fusion text|continuous|additive|max|gated|\n"
      "             bilinear|bilinear_gated|discretized] [-features X.vec] [-dim 100]\n"
      "             [-lr 0.1] [-epoch 5] [-thread 4] [-minCount 1] [-seed 0]\n"
      "             [-gate text|visual] [-alpha A] [-codebook C.pq] [-verbose 0|1]\n"
      "  quantize  train a PQ/RSPQ codebook and/or quantize a corpus\n"
      "            -input F.vec [-output C.pq] [-pq-n 4] [-pq-k 256] [-rspq-r 1]\n"
      "             [-alpha 0.1] [-seed 0] [-thread 1] [-codebook C.pq]\n"
      "             [-corpus X.txt -quantized X.q.txt]\n"
      "  test      evaluate P@1 on a labeled corpus\n"
      "            -model M -input Y.txt [-features Y.vec]\n"
      "  predict   print top-k labels per input line\n"
      "            -model M -input Y.txt|- [-features Y.vec] [-k 1]\n"
      "  nn        interactive nearest-neighbor queries over embeddings\n"
      "            -model M [-topn 10] [-restrict words|all]\n"
      "  sweep     grid-search hyperparameters against a validation split\n"
      "            -grid G.json -input train.txt -valid valid.txt [train flags]\n"
      "             [-valid-features V.vec]\n";
}

class Flags {
 public:
  Flags(const std::vector<std::string>& args, const std::vector<std::string>& allowed) {
    for (std::size_t i = 0; i < args.size(); i += 2) {
      const std::string& name = args[i];
      if (name.empty() || name[0] != '-') {
        throw std::invalid_argument("expected a flag, got '" + name + "'");
      }
      if (std::find(allowed.begin(), allowed.end(), name) == allowed.end()) {
        throw std::invalid_argument("unknown flag '" + name + "'");
      }
      if (i + 1 >= args.size()) {
        throw std::invalid_argument("flag '" + name + "' needs a value");
      }
      values_[name] = args[i + 1];
    }
  }

  bool has(const std::string& name) const { return values_.count(name) > 0; }

  std::string str(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) {
      throw std::invalid_argument("missing required flag " + name);
    }
    return it->second;
  }
  std::string str(const std::string& name, const std::string& fallback) const {
    auto it = values_.find(name);
    return it == values_.end() ? fallback : it->second;
  }

  double num(const std::string& name, double fallback) const {
    if (!has(name)) {
      return fallback;
    }
    try {
      return std::stod(str(name));
    } catch (const std::exception&) {
      throw std::invalid_argument("flag " + name + " expects a number, got '" + str(name) + "'");
    }
  }

  int integer(const std::string& name, int fallback) const {
    if (!has(name)) {
      return fallback;
    }
    try {
      return std::stoi(str(name));
    } catch (const std::exception&) {
      throw std::invalid_argument("flag " + name + " expects an integer, got '" + str(name) +
                                  "'");
    }
  }

 private:
  std::map<std::string, std::string> values_;
};

Fusion parse_fusion(const std::string& name) {
  auto fusion = fusion_from_name(name);
  if (!fusion) {
    throw std::invalid_argument("unknown fusion '" + name + "'");
  }
  return *fusion;
}

GateSide parse_gate(const std::string& name) {
  auto gate = gate_side_from_name(name);
  if (!gate) {
    throw std::invalid_argument("gate must be 'text' or 'visual', got '" + name + "'");
  }
  return *gate;
}

Model load_model_arg(const std::string& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path) && fs::exists(path + ".bin")) {
    return load_model(path + ".bin");
  }
  return load_model(path);
}

// Feature files must match what the model consumes: the projection input for
// continuous fusions, the codebook input for discretized models.
void check_feature_dim(const Model& model, const FeatureTable& features) {
  const Fusion fusion = model.config.fusion;
  if (fusion_uses_visual(fusion)) {
    if (features.dim() != model.config.visual_dim) {
      throw std::invalid_argument("feature file has dim " + std::to_string(features.dim()) +
                                  ", model expects " + std::to_string(model.config.visual_dim));
    }
  } else if (fusion == Fusion::discretized) {
    if (!model.codebook) {
      throw std::invalid_argument(
          "-features given but the discretized model embeds no codebook");
    }
    if (features.dim() != model.codebook->source_dim) {
      throw std::invalid_argument("feature file has dim " + std::to_string(features.dim()) +
                                  ", codebook expects " +
                                  std::to_string(model.codebook->source_dim));
    }
  } else {
    throw std::invalid_argument(std::string("fusion '") + fusion_name(fusion) +
                                "' does not take -features");
  }
}

// Shared between train and sweep.
struct TrainSetup {
  TrainConfig config;
  std::shared_ptr<const Vocabulary> vocab;
  Corpus corpus;
  std::optional<FeatureTable> features;
  std::optional<Codebook> codebook;
};

TrainSetup prepare_training(const Flags& flags) {
  TrainSetup setup;
  TrainConfig& cfg = setup.config;
  cfg.model.fusion = parse_fusion(flags.str("-fusion", "text"));
  cfg.model.dim = flags.integer("-dim", 100);
  cfg.lr0 = flags.num("-lr", 0.1);
  cfg.epochs = flags.integer("-epoch", 5);
  cfg.threads = flags.integer("-thread", 4);
  cfg.min_count = flags.integer("-minCount", 1);
  cfg.seed = static_cast<std::uint64_t>(flags.num("-seed", 0));
  cfg.verbose = flags.integer("-verbose", 1) != 0;

  const Fusion fusion = cfg.model.fusion;
  if (flags.has("-gate") && !fusion_is_gated(fusion)) {
    throw std::invalid_argument(std::string("-gate does not apply to fusion '") +
                                fusion_name(fusion) + "'");
  }
  cfg.model.gate = parse_gate(flags.str("-gate", "text"));
  if (flags.has("-alpha") && fusion != Fusion::discretized) {
    throw std::invalid_argument(std::string("-alpha does not apply to fusion '") +
                                fusion_name(fusion) + "'");
  }
  if (flags.has("-codebook") && fusion != Fusion::discretized) {
    throw std::invalid_argument(std::string("-codebook does not apply to fusion '") +
                                fusion_name(fusion) + "'");
  }
  if (fusion_uses_visual(fusion) && !flags.has("-features")) {
    throw std::invalid_argument(std::string("fusion '") + fusion_name(fusion) +
                                "' requires -features");
  }
  if (!fusion_uses_visual(fusion) && flags.has("-features")) {
    throw std::invalid_argument(std::string("fusion '") + fusion_name(fusion) +
                                "' does not take -features (discretized models train on a "
                                "pre-quantized corpus)");
  }

  if (flags.has("-codebook")) {
    setup.codebook = load_codebook(flags.str("-codebook"));
  }
  cfg.model.alpha = static_cast<float>(flags.num(
      "-alpha", setup.codebook ? setup.codebook->alpha : ModelConfig{}.alpha));

  const std::string input = flags.str("-input");
  setup.vocab = std::make_shared<Vocabulary>(Vocabulary::build(input, cfg.min_count));
  setup.corpus = Corpus::load(input, setup.vocab);
  if (flags.has("-features")) {
    setup.features = FeatureTable::load(
        flags.str("-features"), static_cast<std::int64_t>(setup.corpus.docs().size()));
  }
  return setup;
}

int run_train(const std::vector<std::string>& args) {
  Flags flags(args, {"-input", "-output", "-fusion", "-features", "-dim", "-lr", "-epoch",
                     "-thread", "-minCount", "-seed", "-gate", "-alpha", "-codebook",
                     "-verbose"});
  const std::string output = flags.str("-output");
  TrainSetup setup = prepare_training(flags);

  Model model = train(setup.config, setup.corpus,
                      setup.features ? &*setup.features : nullptr,
                      setup.codebook ? &*setup.codebook : nullptr);
  const std::string path = output + ".bin";
  save_model(model, path);
  std::cerr << "model saved to " << path << "\n";
  return 0;
}

int run_quantize(const std::vector<std::string>& args) {
  Flags flags(args, {"-input", "-output", "-pq-n", "-pq-k", "-rspq-r", "-alpha", "-seed",
                     "-thread", "-codebook", "-corpus", "-quantized"});
  const std::string input = flags.str("-input");
  if (flags.has("-corpus") != flags.has("-quantized")) {
    throw std::invalid_argument("-corpus and -quantized must be given together");
  }

  Codebook codebook;
  if (flags.has("-codebook")) {
    for (const char* banned : {"-output", "-pq-n", "-pq-k", "-rspq-r", "-alpha", "-seed"}) {
      if (flags.has(banned)) {
        throw std::invalid_argument(std::string(banned) +
                                    " cannot be combined with an existing -codebook");
      }
    }
    if (!flags.has("-corpus")) {
      throw std::invalid_argument("-codebook without -corpus/-quantized does nothing");
    }
    codebook = load_codebook(flags.str("-codebook"));
  }

  FeatureTable features = FeatureTable::load(input);
  if (!flags.has("-codebook")) {
    const std::string output = flags.str("-output");
    codebook = train_codebook(features, flags.integer("-pq-n", 4), flags.integer("-pq-k", 256),
                              flags.integer("-rspq-r", 1),
                              static_cast<float>(flags.num("-alpha", 0.1)),
                              static_cast<std::uint64_t>(flags.num("-seed", 0)),
                              kDefaultKMeansIters, flags.integer("-thread", 1));
    save_codebook(codebook, output);
    std::cerr << "codebook saved to " << output << "\n";
  }

  if (flags.has("-corpus")) {
    emit_quantized_corpus(flags.str("-corpus"), features, codebook, flags.str("-quantized"));
    std::cerr << "quantized corpus written to " << flags.str("-quantized") << "\n";
  }
  return 0;
}

int run_test(const std::vector<std::string>& args) {
  Flags flags(args, {"-model", "-input", "-features"});
  Model model = load_model_arg(flags.str("-model"));
  Corpus corpus = Corpus::load(flags.str("-input"), model.vocab);

  std::optional<FeatureTable> features;
  if (flags.has("-features")) {
    features = FeatureTable::load(flags.str("-features"),
                                  static_cast<std::int64_t>(corpus.docs().size()));
    check_feature_dim(model, *features);
  }

  std::int64_t n = 0;
  const double accuracy = evaluate(model, corpus, features ? &*features : nullptr, &n);
  std::printf("N %lld\n", static_cast<long long>(n));
  std::printf("P@1 %.3f\n", accuracy);
  return 0;
}

Document resolve_line(const std::string& line, const Vocabulary& vocab,
                      std::int64_t line_index) {
  const ParsedLine parsed = parse_line(line);
  Document doc;
  doc.line_index = line_index;
  doc.labeled = !parsed.labels.empty();
  for (std::string_view token : parsed.tokens) {
    const std::int32_t id = vocab.word_id(token);
    if (id >= 0) {
      doc.tokens.push_back(id);
    }
  }
  for (std::string_view name : parsed.labels) {
    const std::int32_t id = vocab.label_id(name);
    if (id >= 0) {
      doc.labels.push_back(id);
    }
  }
  return doc;
}

int run_predict(const std::vector<std::string>& args) {
  Flags flags(args, {"-model", "-input", "-features", "-k"});
  Model model = load_model_arg(flags.str("-model"));
  const int k = flags.integer("-k", 1);

  std::optional<FeatureTable> features;
  if (flags.has("-features")) {
    features = FeatureTable::load(flags.str("-features"));
    check_feature_dim(model, *features);
  } else if (fusion_uses_visual(model.config.fusion)) {
    throw std::invalid_argument(std::string("fusion '") + fusion_name(model.config.fusion) +
                                "' requires -features");
  }

  const std::string input = flags.str("-input");
  std::ifstream file;
  if (input != "-") {
    file.open(input);
    if (!file) {
      throw std::runtime_error("cannot open input file: " + input);
    }
  }
  std::istream& in = input == "-" ? std::cin : file;

  std::string line;
  std::int64_t line_index = 0;
  while (std::getline(in, line)) {
    if (features && line_index >= features->rows()) {
      throw std::runtime_error("alignment mismatch: more input lines than feature rows");
    }
    const Document doc = resolve_line(line, *model.vocab, line_index);
    const float* feat = features ? features->row(line_index).data() : nullptr;
    const Prediction pred = predict(model, doc, feat, k);
    for (std::size_t i = 0; i < pred.items.size(); ++i) {
      std::printf("%s%s%s %.6g", i > 0 ? " " : "", std::string(kLabelPrefix).c_str(),
                  model.vocab->label(pred.items[i].first).c_str(),
                  static_cast<double>(pred.items[i].second));
    }
    std::printf("\n");
    ++line_index;
  }
  if (features && line_index != features->rows()) {
    throw std::runtime_error("alignment mismatch: feature file has " +
                             std::to_string(features->rows()) + " rows, input had " +
                             std::to_string(line_index) + " lines");
  }
  return 0;
}

int run_nn(const std::vector<std::string>& args) {
  Flags flags(args, {"-model", "-topn", "-restrict"});
  Model model = load_model_arg(flags.str("-model"));
  const int topn = flags.integer("-topn", 10);
  const std::string restrict_arg = flags.str("-restrict", "words");
  NeighborScope scope;
  if (restrict_arg == "words") {
    scope = NeighborScope::words;
  } else if (restrict_arg == "all") {
    scope = NeighborScope::all;
  } else {
    throw std::invalid_argument("-restrict must be 'words' or 'all'");
  }

  std::cerr << "similarity metric: cosine over embedding rows\n";
  std::string line;
  while (true) {
    std::cerr << "Query token? " << std::flush;
    if (!std::getline(std::cin, line)) {
      break;
    }
    const ParsedLine parsed = parse_line(line);
    if (parsed.tokens.empty()) {
      continue;
    }
    try {
      for (const Neighbor& n : nearest_neighbors(model, parsed.tokens[0], topn, scope)) {
        std::printf("%s %.3f\n", model.vocab->word(n.id).c_str(), n.cosine);
      }
    } catch (const std::invalid_argument& e) {
      std::cerr << e.what() << "\n";
    }
  }
  return 0;
}

int run_sweep(const std::vector<std::string>& args) {
  Flags flags(args, {"-grid", "-input", "-valid", "-fusion", "-features", "-valid-features",
                     "-dim", "-lr", "-epoch", "-thread", "-minCount", "-seed", "-gate",
                     "-alpha", "-codebook", "-verbose"});
  std::ifstream grid_file(flags.str("-grid"));
  if (!grid_file) {
    throw std::runtime_error("cannot open grid file: " + flags.str("-grid"));
  }
  nlohmann::ordered_json grid_json;
  grid_file >> grid_json;
  if (!grid_json.is_object()) {
    throw std::invalid_argument("grid file must hold a JSON object of axis -> value list");
  }
  std::vector<SweepAxis> axes;
  for (const auto& [axis, values] : grid_json.items()) {
    if (!values.is_array()) {
      throw std::invalid_argument("grid axis '" + axis + "' must map to a list");
    }
    SweepAxis sweep_axis{axis, {}};
    for (const auto& value : values) {
      sweep_axis.values.push_back(value.is_string() ? value.get<std::string>()
                                                    : value.dump());
    }
    axes.push_back(std::move(sweep_axis));
  }

  TrainSetup setup = prepare_training(flags);
  setup.config.verbose = flags.integer("-verbose", 0) != 0;

  Corpus valid = Corpus::load(flags.str("-valid"), setup.vocab);
  std::optional<FeatureTable> valid_features;
  if (flags.has("-valid-features")) {
    valid_features = FeatureTable::load(flags.str("-valid-features"),
                                        static_cast<std::int64_t>(valid.docs().size()));
  }
  if (fusion_uses_visual(setup.config.model.fusion) && !valid_features) {
    throw std::invalid_argument(std::string("fusion '") +
                                fusion_name(setup.config.model.fusion) +
                                "' requires -valid-features");
  }

  const SweepResult result =
      grid_search(setup.config, axes, setup.corpus, setup.features ? &*setup.features : nullptr,
                  valid, valid_features ? &*valid_features : nullptr,
                  setup.codebook ? &*setup.codebook : nullptr);

  for (const SweepEntry& entry : result.entries) {
    std::fprintf(stderr, "lr=%g epoch=%d dim=%d alpha=%g gate=%s P@1=%.4f\n",
                 entry.config.lr0, entry.config.epochs, entry.config.model.dim,
                 static_cast<double>(entry.config.model.alpha),
                 gate_side_name(entry.config.model.gate), entry.accuracy);
  }
  std::printf("lr %g\n", result.best.lr0);
  std::printf("epoch %d\n", result.best.epochs);
  std::printf("dim %d\n", result.best.model.dim);
  if (result.best.model.fusion == Fusion::discretized) {
    std::printf("alpha %g\n", static_cast<double>(result.best.model.alpha));
  }
  if (fusion_is_gated(result.best.model.fusion)) {
    std::printf("gate %s\n", gate_side_name(result.best.model.gate));
  }
  std::printf("P@1 %.4f\n", result.best_accuracy);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty()) {
    print_usage();
    return 1;
  }
  const std::string& command = args[0];
  const std::vector<std::string> rest(args.begin() + 1, args.end());
  try {
    if (command == "train") {
      return run_train(rest);
    }
    if (command == "quantize") {
      return run_quantize(rest);
    }
    if (command == "test") {
      return run_test(rest);
    }
    if (command == "predict") {
      return run_predict(rest);
    }
    if (command == "nn") {
      return run_nn(rest);
    }
    if (command == "sweep") {
      return run_sweep(rest);
    }
    print_usage();
    std::cerr << "unknown command '" << command << "'\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
