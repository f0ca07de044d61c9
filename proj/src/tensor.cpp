#include "rrra/numkernel/tensor.hpp"

namespace rrra::num {

std::size_t product(std::span<const std::uint32_t> dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string shape_string(std::span<const std::uint32_t> dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

Tensor::Tensor(std::vector<std::uint32_t> d, std::vector<float> v)
    : dims(std::move(d)), data(std::move(v)) {
  for (auto x : dims)
    if (x == 0) throw InvalidArgument("tensor dims must be positive, got " + num::shape_string(dims));
  if (product(dims) != data.size()) {
    throw DimensionMismatch("tensor dims " + num::shape_string(dims) + " need " +
                            std::to_string(product(dims)) + " values, got " +
                            std::to_string(data.size()));
  }
}

bool Tensor::all_finite() const {
  for (float x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_string() const { return num::shape_string(dims); }

}  // namespace rrra::num
