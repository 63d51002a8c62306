#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "convformer/tensor.hpp"

namespace convformer {

/// Binary tensor container "KJT1": magic bytes `KJT1`, u8 dtype tag
/// (0 = f32, 1 = f64), u32 little-endian rank, rank x u32 little-endian
/// extents, then raw little-endian element data.
void write_kjt1(std::ostream& os, const Tensor& t);
Tensor read_kjt1(std::istream& is);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

/// Checkpoint: a plain sequence of (u16 LE length-prefixed UTF-8 name,
/// KJT1 block) entries, read until end of file.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
void save_checkpoint(const std::string& path, const NamedTensors& entries);
NamedTensors load_checkpoint(const std::string& path);

/// Embeddings file: magic `KJTE`, u32 K, u32 C_text, K x (u16 length +
/// UTF-8 name), then a KJT1 tensor block of shape K x C_text.
struct NamedEmbeddings {
  std::vector<std::string> names;
  Tensor matrix;
};
void save_embeddings(const std::string& path, const NamedEmbeddings& emb);
NamedEmbeddings load_embeddings(const std::string& path);

/// Thrown for malformed files; message carries the byte offset.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace convformer
