#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "latentlab/tensor_file.hpp"

using namespace latentlab;

namespace {

std::filesystem::path temp_path(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("tensor file round trip is byte exact") {
  TensorFile file;
  file.header = {{"format_version", "1"}, {"kind", "test"}, {"note", "a b c"}};
  Matrix m(2, 3);
  m << 1.0, -2.5, 3.25, 0.0, 1e-300, -1e300;
  Vector v(4);
  v << 0.5, -0.25, 2.0, 9.75;
  file.tensors.push_back(make_tensor("weights.m", m));
  file.tensors.push_back(make_tensor("weights.v", v));

  const auto path_a = temp_path("tf_round_a.tf");
  const auto path_b = temp_path("tf_round_b.tf");
  write_tensor_file(path_a, file);
  const TensorFile loaded = read_tensor_file(path_a);

  CHECK(loaded.header == file.header);
  REQUIRE(loaded.tensors.size() == 2);
  CHECK(tensor_as_matrix(loaded.tensor("weights.m")) == m);
  CHECK(tensor_as_vector(loaded.tensor("weights.v")) == v);

  write_tensor_file(path_b, loaded);
  std::ifstream a(path_a, std::ios::binary), b(path_b, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string bytes_b((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
}

TEST_CASE("missing tensor and header lookups throw") {
  TensorFile file;
  file.header = {{"k", "v"}};
  CHECK_THROWS_AS(file.header_value("absent"), Error);
  CHECK_THROWS_AS(file.tensor("absent"), Error);
  CHECK(file.has_header("k"));
  CHECK_FALSE(file.has_header("absent"));
}

TEST_CASE("truncated tensor file is rejected") {
  TensorFile file;
  file.header = {{"format_version", "1"}};
  Vector v(8);
  v.setConstant(1.5);
  file.tensors.push_back(make_tensor("v", v));
  const auto path = temp_path("tf_truncated.tf");
  write_tensor_file(path, file);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 9);
  CHECK_THROWS_AS(read_tensor_file(path), Error);
}

TEST_CASE("rank and shape conversions are checked") {
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  NamedTensor t = make_tensor("m", m);
  CHECK_THROWS_AS(tensor_as_vector(t), Error);
  Vector v(3);
  v << 1, 2, 3;
  NamedTensor tv = make_tensor("v", v);
  CHECK_THROWS_AS(tensor_as_matrix(tv), Error);
  CHECK(tensor_as_vector(tv) == v);
}
