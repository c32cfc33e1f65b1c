#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "latentlab/common.hpp"

namespace latentlab {

// Shared on-disk container for model weights, concept caches and adapters:
// a text header of key=value lines, a "%tensors" separator, then named
// tensors as (u32 name length, name, u32 rank, u64 dims..., f64 row-major
// little-endian data).
struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

struct TensorFile {
  std::vector<std::pair<std::string, std::string>> header;  // ordered
  std::vector<NamedTensor> tensors;                         // ordered

  const std::string& header_value(const std::string& key) const;
  bool has_header(const std::string& key) const;
  const NamedTensor& tensor(const std::string& name) const;
};

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

NamedTensor make_tensor(std::string name, const Matrix& m);
NamedTensor make_tensor(std::string name, const Vector& v);
Matrix tensor_as_matrix(const NamedTensor& t);
Vector tensor_as_vector(const NamedTensor& t);

}  // namespace latentlab
