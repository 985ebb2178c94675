#include "persistence.h"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "binio.h"

namespace mmtext {

namespace {

constexpr char kModelMagic[4] = {'M', 'M', 'F', 'T'};
constexpr std::uint32_t kModelVersion = 1;

void write_matrix(std::ostream& out, const Matrix<float>& m) {
  io::write_u64(out, static_cast<std::uint64_t>(m.rows()));
  io::write_u64(out, static_cast<std::uint64_t>(m.cols()));
  io::write_f32_array(out, m.data(), m.size());
}

Matrix<float> read_matrix(std::istream& in) {
  const auto rows = static_cast<std::int64_t>(io::read_u64(in));
  const auto cols = static_cast<std::int64_t>(io::read_u64(in));
  if (rows < 0 || cols < 0) {
    throw std::runtime_error("corrupt model: negative matrix shape");
  }
  Matrix<float> m(rows, cols);
  io::read_f32_array(in, m.data(), m.size());
  return m;
}

}  // namespace

void save_model(const Model& model, std::ostream& out) {
  io::write_bytes(out, kModelMagic, sizeof(kModelMagic));
  io::write_u32(out, kModelVersion);

  const ModelConfig& cfg = model.config;
  io::write_u8(out, static_cast<std::uint8_t>(cfg.fusion));
  io::write_u32(out, static_cast<std::uint32_t>(cfg.dim));
  io::write_u8(out, static_cast<std::uint8_t>(cfg.gate));
  io::write_f32(out, cfg.alpha);
  io::write_u32(out, static_cast<std::uint32_t>(cfg.label_count));
  io::write_u32(out, static_cast<std::uint32_t>(cfg.visual_dim));

  const Vocabulary& vocab = *model.vocab;
  io::write_u32(out, static_cast<std::uint32_t>(vocab.min_count()));
  io::write_u64(out, static_cast<std::uint64_t>(vocab.n_words()));
  for (std::int32_t i = 0; i < vocab.n_words(); ++i) {
    io::write_string(out, vocab.word(i));
    io::write_u64(out, static_cast<std::uint64_t>(vocab.word_count(i)));
  }
  io::write_u64(out, static_cast<std::uint64_t>(vocab.n_labels()));
  for (std::int32_t i = 0; i < vocab.n_labels(); ++i) {
    io::write_string(out, vocab.label(i));
    io::write_u64(out, static_cast<std::uint64_t>(vocab.label_count(i)));
  }

  write_matrix(out, model.params.U);
  const bool has_v = model.params.V.size() > 0;
  io::write_u8(out, has_v ? 1 : 0);
  if (has_v) {
    write_matrix(out, model.params.V);
  }
  write_matrix(out, model.params.W);

  io::write_u8(out, model.codebook ? 1 : 0);
  if (model.codebook) {
    save_codebook(*model.codebook, out);
  }
}

Model load_model(std::istream& in) {
  char magic[4];
  io::read_bytes(in, magic, sizeof(magic));
  if (!std::equal(magic, magic + 4, kModelMagic)) {
    throw std::runtime_error("bad magic: not a model file");
  }
  const std::uint32_t version = io::read_u32(in);
  if (version != kModelVersion) {
    throw std::runtime_error("unsupported model version " + std::to_string(version));
  }

  Model model;
  ModelConfig& cfg = model.config;
  cfg.fusion = static_cast<Fusion>(io::read_u8(in));
  if (cfg.fusion > Fusion::discretized) {
    throw std::runtime_error("corrupt model: unknown fusion kind");
  }
  cfg.dim = static_cast<std::int32_t>(io::read_u32(in));
  cfg.gate = static_cast<GateSide>(io::read_u8(in));
  cfg.alpha = io::read_f32(in);
  cfg.label_count = static_cast<std::int32_t>(io::read_u32(in));
  cfg.visual_dim = static_cast<std::int32_t>(io::read_u32(in));

  auto vocab = std::make_shared<Vocabulary>();
  vocab->set_min_count(static_cast<int>(io::read_u32(in)));
  const std::uint64_t n_words = io::read_u64(in);
  for (std::uint64_t i = 0; i < n_words; ++i) {
    std::string token = io::read_string(in);
    const std::uint64_t count = io::read_u64(in);
    vocab->push_word(std::move(token), static_cast<std::int64_t>(count));
  }
  const std::uint64_t n_labels = io::read_u64(in);
  for (std::uint64_t i = 0; i < n_labels; ++i) {
    std::string name = io::read_string(in);
    const std::uint64_t count = io::read_u64(in);
    vocab->push_label(std::move(name), static_cast<std::int64_t>(count));
  }
  model.vocab = std::move(vocab);

  model.params.U = read_matrix(in);
  if (io::read_u8(in) != 0) {
    model.params.V = read_matrix(in);
  }
  model.params.W = read_matrix(in);

  if (model.params.U.rows() != model.vocab->n_words() ||
      model.params.W.rows() != cfg.label_count ||
      model.params.W.cols() != hidden_size(cfg)) {
    throw std::runtime_error("corrupt model: matrix shapes disagree with config");
  }

  if (io::read_u8(in) != 0) {
    model.codebook = load_codebook(in);
  }
  return model;
}

void save_model(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open output file: " + path);
  }
  save_model(model, out);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open model file: " + path);
  }
  return load_model(in);
}

}  // namespace mmtext
