#pragma once

#include <iosfwd>
#include <string>

#include "model.h"

namespace mmtext {

// Versioned binary model format, magic "MMFT": config, vocabulary,
// parameter matrices as little-endian IEEE-754 single precision, and the
// embedded codebook when present. Byte layout in docs/format.md. A
// save/load round-trip reproduces predictions exactly; loading rejects bad
// magic, unknown versions and truncated files.
void save_model(const Model& model, std::ostream& out);
void save_model(const Model& model, const std::string& path);
Model load_model(std::istream& in);
Model load_model(const std::string& path);

}  // namespace mmtext
