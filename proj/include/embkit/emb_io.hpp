#pragma once

#include <filesystem>
#include <string>

#include "embkit/model.hpp"

namespace embkit {

// EMB1 layout, little-endian:
//   "EMB1" | u32 n | u32 d | n*d float32 row-major
//   | u32 count | count x (u32 byte length, UTF-8 id)
//   | u8 normalized flag (trailing sidecar byte; absent = not normalized)
std::string encode_emb1(const EmbeddingMatrix& matrix);
EmbeddingMatrix decode_emb1(const std::string& bytes, const std::string& source = "<memory>");

EmbeddingMatrix read_emb1(const std::filesystem::path& path);
void write_emb1(const std::filesystem::path& path, const EmbeddingMatrix& matrix);

}  // namespace embkit
