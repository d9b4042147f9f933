#include "tracebench/tensor_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tb::io {

namespace {

// Row-major byte image of a matrix (on-disk layout is platform independent
// given IEEE-754 little-endian doubles, which every supported target uses).
std::vector<double> row_major(const Matrix& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) out[k++] = m(i, j);
  }
  return out;
}

void atomic_write_bytes(const std::string& path, const char* data,
                        std::size_t len) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for write: " + tmp);
    f.write(data, static_cast<std::streamsize>(len));
    if (!f) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

const Matrix& TensorFile::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw std::runtime_error("tensor not found: " + name);
}

void write_tensor_file(const std::string& manifest_path,
                       const nlohmann::json& meta,
                       const std::vector<NamedTensor>& tensors) {
  std::vector<char> blob;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& t : tensors) {
    tb::num::require_finite(t.value, t.name.c_str());
    const auto values = row_major(t.value);
    const std::size_t bytes = values.size() * sizeof(double);
    const std::size_t offset = blob.size();
    blob.resize(offset + bytes);
    std::memcpy(blob.data() + offset, values.data(), bytes);
    index.push_back({{"name", t.name},
                     {"shape", {t.value.rows(), t.value.cols()}},
                     {"dtype", "f64"},
                     {"offset", offset},
                     {"length", bytes},
                     {"checksum", hex64(fnv1a64(blob.data() + offset, bytes))}});
  }
  nlohmann::json manifest = meta;
  manifest["tensors"] = std::move(index);
  atomic_write_bytes(manifest_path + ".bin", blob.data(), blob.size());
  atomic_write_text(manifest_path, manifest.dump(2) + "\n");
}

TensorFile read_tensor_file(const std::string& manifest_path) {
  nlohmann::json manifest;
  {
    std::ifstream f(manifest_path);
    if (!f) throw std::runtime_error("cannot open manifest: " + manifest_path);
    f >> manifest;
  }
  std::string blob;
  {
    std::ifstream f(manifest_path + ".bin", std::ios::binary);
    if (!f) throw std::runtime_error("cannot open blob: " + manifest_path + ".bin");
    std::ostringstream os;
    os << f.rdbuf();
    blob = os.str();
  }
  TensorFile out;
  out.meta = manifest;
  for (const auto& e : manifest.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    const auto shape = e.at("shape");
    const long rows = shape.at(0).get<long>();
    const long cols = shape.at(1).get<long>();
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t length = e.at("length").get<std::size_t>();
    if (e.at("dtype").get<std::string>() != "f64") {
      throw std::runtime_error("tensor " + name + ": unsupported dtype");
    }
    if (rows < 0 || cols < 0 ||
        length != static_cast<std::size_t>(rows) * cols * sizeof(double)) {
      throw std::runtime_error("tensor " + name + ": shape/length mismatch");
    }
    if (offset + length > blob.size()) {
      throw std::runtime_error("tensor " + name + ": blob truncated");
    }
    const std::uint64_t sum = fnv1a64(blob.data() + offset, length);
    if (hex64(sum) != e.at("checksum").get<std::string>()) {
      throw std::runtime_error("tensor " + name + ": checksum failure");
    }
    Matrix m(rows, cols);
    const double* p = reinterpret_cast<const double*>(blob.data() + offset);
    std::size_t k = 0;
    for (long i = 0; i < rows; ++i) {
      for (long j = 0; j < cols; ++j) m(i, j) = p[k++];
    }
    tb::num::require_finite(m, name.c_str());
    out.tensors.push_back({name, std::move(m)});
  }
  return out;
}

void atomic_write_text(const std::string& path, const std::string& content) {
  atomic_write_bytes(path, content.data(), content.size());
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace tb::io
