#include "latentlab/tensor_file.hpp"

#include <cstring>
#include <fstream>

namespace latentlab {

namespace {

constexpr const char* kSeparator = "%tensors";

template <typename T>
void write_raw(std::ofstream& out, const T* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(sizeof(T) * count));
}

template <typename T>
void read_raw(std::ifstream& in, T* data, std::size_t count, const std::string& what) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(sizeof(T) * count));
  check(static_cast<std::size_t>(in.gcount()) == sizeof(T) * count,
        "tensor file truncated while reading " + what);
}

}  // namespace

const std::string& TensorFile::header_value(const std::string& key) const {
  for (const auto& [k, v] : header)
    if (k == key) return v;
  throw Error("tensor file header missing key '" + key + "'");
}

bool TensorFile::has_header(const std::string& key) const {
  for (const auto& [k, v] : header)
    if (k == key) return true;
  return false;
}

const NamedTensor& TensorFile::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw Error("tensor file missing tensor '" + name + "'");
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot open '" + path.string() + "' for writing");
  for (const auto& [k, v] : file.header) out << k << "=" << v << "\n";
  out << kSeparator << "\n";
  for (const auto& t : file.tensors) {
    check(t.data.size() == t.numel(), "tensor '" + t.name + "' data/dims mismatch");
    const auto name_len = static_cast<std::uint32_t>(t.name.size());
    write_raw(out, &name_len, 1);
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    const auto rank = static_cast<std::uint32_t>(t.dims.size());
    write_raw(out, &rank, 1);
    write_raw(out, t.dims.data(), t.dims.size());
    write_raw(out, t.data.data(), t.data.size());
  }
  check(out.good(), "write failed for '" + path.string() + "'");
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open '" + path.string() + "'");
  TensorFile file;
  std::string line;
  bool saw_separator = false;
  while (std::getline(in, line)) {
    if (line == kSeparator) {
      saw_separator = true;
      break;
    }
    auto eq = line.find('=');
    check(eq != std::string::npos, "malformed header line '" + line + "'");
    file.header.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  check(saw_separator, "tensor file missing '" + std::string(kSeparator) + "' separator");
  while (true) {
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (in.gcount() == 0) break;  // clean EOF
    check(static_cast<std::size_t>(in.gcount()) == sizeof(name_len), "truncated tensor name length");
    NamedTensor t;
    t.name.resize(name_len);
    read_raw(in, t.name.data(), name_len, "tensor name");
    std::uint32_t rank = 0;
    read_raw(in, &rank, 1, "rank of '" + t.name + "'");
    t.dims.resize(rank);
    read_raw(in, t.dims.data(), rank, "dims of '" + t.name + "'");
    t.data.resize(t.numel());
    read_raw(in, t.data.data(), t.data.size(), "data of '" + t.name + "'");
    file.tensors.push_back(std::move(t));
  }
  return file;
}

NamedTensor make_tensor(std::string name, const Matrix& m) {
  NamedTensor t;
  t.name = std::move(name);
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

NamedTensor make_tensor(std::string name, const Vector& v) {
  NamedTensor t;
  t.name = std::move(name);
  t.dims = {static_cast<std::uint64_t>(v.size())};
  t.data.assign(v.data(), v.data() + v.size());
  return t;
}

Matrix tensor_as_matrix(const NamedTensor& t) {
  check(t.dims.size() == 2, "tensor '" + t.name + "' is not rank-2");
  Matrix m(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
  std::memcpy(m.data(), t.data.data(), t.data.size() * sizeof(double));
  return m;
}

Vector tensor_as_vector(const NamedTensor& t) {
  check(t.dims.size() == 1, "tensor '" + t.name + "' is not rank-1");
  Vector v(static_cast<Eigen::Index>(t.dims[0]));
  std::memcpy(v.data(), t.data.data(), t.data.size() * sizeof(double));
  return v;
}

}  // namespace latentlab
