// Tensor container on disk: a JSON manifest (metadata + tensor index) next to
// a raw little-endian f64 blob (row-major). Checkpoints and edit-delta files
// share this format.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tracebench/numkernel.hpp"

namespace tb::io {

using tb::num::Matrix;

std::uint64_t fnv1a64(const void* data, std::size_t len);
std::string hex64(std::uint64_t v);

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct TensorFile {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const Matrix& find(const std::string& name) const;  // throws if missing
};

// Writes `manifest_path` plus a companion blob at manifest_path + ".bin".
// Both writes are atomic (temp file + rename).
void write_tensor_file(const std::string& manifest_path,
                       const nlohmann::json& meta,
                       const std::vector<NamedTensor>& tensors);

// Validates shapes, offsets and per-tensor checksums; throws naming the
// offending tensor on any mismatch.
TensorFile read_tensor_file(const std::string& manifest_path);

void atomic_write_text(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

}  // namespace tb::io
