#pragma once

#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mcdti/errors.hpp"

namespace mcdti::nn {

// Dense row-major tensor of up to 5 dimensions. float is the production
// scalar type; double instantiations exist for finite-difference gradient
// checking.
template <typename T>
struct NdArrayT {
  std::vector<int> shape;
  std::vector<T> data;

  NdArrayT() = default;
  explicit NdArrayT(std::vector<int> s) : shape(std::move(s)) {
    if (shape.empty() || shape.size() > 5)
      throw DimensionError("NdArray: rank must be 1..5, got " +
                           std::to_string(shape.size()));
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw DimensionError("NdArray: non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    data.assign(n, T(0));
  }

  std::size_t numel() const { return data.size(); }

  bool same_shape(const NdArrayT& other) const { return shape == other.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
  }

  template <typename U>
  NdArrayT<U> cast() const {
    NdArrayT<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using NdArray = NdArrayT<float>;

template <typename T>
inline void check_same_shape(const NdArrayT<T>& a, const NdArrayT<T>& b,
                             const char* what) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
}

// Shape helpers for the fixed layouts used by the network:
// activations are (channels, x, y, z), conv weights are
// (out_ch, in_ch, k, k, k), transpose-conv weights (in_ch, out_ch, 2, 2, 2).
template <typename T>
inline NdArrayT<T> make_activation(int c, int x, int y, int z) {
  return NdArrayT<T>({c, x, y, z});
}

}  // namespace mcdti::nn
