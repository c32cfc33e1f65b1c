#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace latentlab {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using TokenId = std::int32_t;

// Thrown for malformed inputs, violated invariants and I/O failures.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace latentlab
