#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "mcdti/errors.hpp"
#include "mcdti/ndarray.hpp"
#include "mcdti/rng.hpp"

namespace mcdti::nn {

namespace detail {

// dst[x,y,z] += w * src[x+sx, y+sy, z+sz] over the in-range region.
// Both fields share the spatial extent (X, Y, Z); the inner z loop is
// contiguous so it vectorizes.
template <typename T>
inline void shifted_axpy(T* dst, const T* src, T w, int X, int Y, int Z, int sx, int sy,
                         int sz) {
  const int x0 = std::max(0, -sx), x1 = std::min(X, X - sx);
  const int y0 = std::max(0, -sy), y1 = std::min(Y, Y - sy);
  const int z0 = std::max(0, -sz), z1 = std::min(Z, Z - sz);
  for (int x = x0; x < x1; ++x) {
    for (int y = y0; y < y1; ++y) {
      T* drow = dst + (static_cast<std::size_t>(x) * Y + y) * Z;
      const T* srow = src + (static_cast<std::size_t>(x + sx) * Y + (y + sy)) * Z + sz;
      for (int z = z0; z < z1; ++z) drow[z] += w * srow[z];
    }
  }
}

// sum over the in-range region of a[x,y,z] * b[x+sx, y+sy, z+sz].
template <typename T>
inline T shifted_dot(const T* a, const T* b, int X, int Y, int Z, int sx, int sy, int sz) {
  const int x0 = std::max(0, -sx), x1 = std::min(X, X - sx);
  const int y0 = std::max(0, -sy), y1 = std::min(Y, Y - sy);
  const int z0 = std::max(0, -sz), z1 = std::min(Z, Z - sz);
  T acc = T(0);
  for (int x = x0; x < x1; ++x) {
    for (int y = y0; y < y1; ++y) {
      const T* arow = a + (static_cast<std::size_t>(x) * Y + y) * Z;
      const T* brow = b + (static_cast<std::size_t>(x + sx) * Y + (y + sy)) * Z + sz;
      T s = T(0);
      for (int z = z0; z < z1; ++z) s += arow[z] * brow[z];
      acc += s;
    }
  }
  return acc;
}

}  // namespace detail

// --- 3D convolution, odd kernel, zero padding k/2, stride 1 ("same") ---

template <typename T>
inline void check_conv_shapes(const NdArrayT<T>& x, const NdArrayT<T>& w,
                              const NdArrayT<T>& b) {
  if (x.shape.size() != 4) throw DimensionError("conv3d: input must be (c,x,y,z)");
  if (w.shape.size() != 5)
    throw DimensionError("conv3d: weights must be (out,in,k,k,k)");
  if (w.shape[2] != w.shape[3] || w.shape[2] != w.shape[4] || w.shape[2] % 2 == 0)
    throw DimensionError("conv3d: kernel must be cubic with odd size");
  if (w.shape[1] != x.shape[0])
    throw DimensionError("conv3d: input has " + std::to_string(x.shape[0]) +
                         " channels but weights expect " + std::to_string(w.shape[1]));
  if (b.shape.size() != 1 || b.shape[0] != w.shape[0])
    throw DimensionError("conv3d: bias must be (out_channels)");
}

template <typename T>
NdArrayT<T> conv3d(const NdArrayT<T>& x, const NdArrayT<T>& w, const NdArrayT<T>& b) {
  check_conv_shapes(x, w, b);
  const int C = x.shape[0], X = x.shape[1], Y = x.shape[2], Z = x.shape[3];
  const int O = w.shape[0], K = w.shape[2], P = K / 2;
  const std::size_t plane = static_cast<std::size_t>(X) * Y * Z;

  NdArrayT<T> y({O, X, Y, Z});
  for (int o = 0; o < O; ++o) {
    T* yo = y.data.data() + static_cast<std::size_t>(o) * plane;
    const T bo = b.data[o];
    for (std::size_t i = 0; i < plane; ++i) yo[i] = bo;
    for (int c = 0; c < C; ++c) {
      const T* xc = x.data.data() + static_cast<std::size_t>(c) * plane;
      const T* wk = w.data.data() +
                    ((static_cast<std::size_t>(o) * C + c) * K * K * K);
      for (int di = 0; di < K; ++di)
        for (int dj = 0; dj < K; ++dj)
          for (int dk = 0; dk < K; ++dk) {
            const T wv = wk[(static_cast<std::size_t>(di) * K + dj) * K + dk];
            if (wv == T(0)) continue;
            detail::shifted_axpy(yo, xc, wv, X, Y, Z, di - P, dj - P, dk - P);
          }
    }
  }
  return y;
}

template <typename T>
struct Conv3dGrads {
  NdArrayT<T> dx, dw, db;
};

template <typename T>
Conv3dGrads<T> conv3d_backward(const NdArrayT<T>& dy, const NdArrayT<T>& x,
                               const NdArrayT<T>& w) {
  if (dy.shape.size() != 4 || dy.shape[0] != w.shape[0])
    throw DimensionError("conv3d_backward: dy shape inconsistent with weights");
  if (dy.shape[1] != x.shape[1] || dy.shape[2] != x.shape[2] || dy.shape[3] != x.shape[3])
    throw DimensionError("conv3d_backward: dy spatial shape differs from input");
  const int C = x.shape[0], X = x.shape[1], Y = x.shape[2], Z = x.shape[3];
  const int O = w.shape[0], K = w.shape[2], P = K / 2;
  const std::size_t plane = static_cast<std::size_t>(X) * Y * Z;

  Conv3dGrads<T> g{NdArrayT<T>(x.shape), NdArrayT<T>(w.shape), NdArrayT<T>({O})};
  for (int o = 0; o < O; ++o) {
    const T* dyo = dy.data.data() + static_cast<std::size_t>(o) * plane;
    T acc = T(0);
    for (std::size_t i = 0; i < plane; ++i) acc += dyo[i];
    g.db.data[o] = acc;
    for (int c = 0; c < C; ++c) {
      T* dxc = g.dx.data.data() + static_cast<std::size_t>(c) * plane;
      const T* xc = x.data.data() + static_cast<std::size_t>(c) * plane;
      const std::size_t wbase = (static_cast<std::size_t>(o) * C + c) * K * K * K;
      for (int di = 0; di < K; ++di)
        for (int dj = 0; dj < K; ++dj)
          for (int dk = 0; dk < K; ++dk) {
            const std::size_t wi = wbase + (static_cast<std::size_t>(di) * K + dj) * K + dk;
            const T wv = w.data[wi];
            if (wv != T(0))
              detail::shifted_axpy(dxc, dyo, wv, X, Y, Z, P - di, P - dj, P - dk);
            g.dw.data[wi] +=
                detail::shifted_dot(dyo, xc, X, Y, Z, di - P, dj - P, dk - P);
          }
    }
  }
  return g;
}

// --- 2x2x2 max pooling, stride 2 ---

template <typename T>
struct MaxPoolResult {
  NdArrayT<T> y;
  std::vector<std::int32_t> argmax;  // flat input index per output element
};

template <typename T>
MaxPoolResult<T> maxpool3d(const NdArrayT<T>& x) {
  if (x.shape.size() != 4) throw DimensionError("maxpool3d: input must be (c,x,y,z)");
  const int C = x.shape[0], X = x.shape[1], Y = x.shape[2], Z = x.shape[3];
  if (X % 2 || Y % 2 || Z % 2)
    throw DimensionError("maxpool3d: spatial dims must be even, got " + x.shape_str());
  MaxPoolResult<T> r{NdArrayT<T>({C, X / 2, Y / 2, Z / 2}), {}};
  r.argmax.resize(r.y.numel());
  std::size_t oi = 0;
  for (int c = 0; c < C; ++c)
    for (int ox = 0; ox < X / 2; ++ox)
      for (int oy = 0; oy < Y / 2; ++oy)
        for (int oz = 0; oz < Z / 2; ++oz, ++oi) {
          T best = -std::numeric_limits<T>::infinity();
          std::int32_t besti = -1;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj)
              for (int dk = 0; dk < 2; ++dk) {
                const std::size_t xi =
                    ((static_cast<std::size_t>(c) * X + (2 * ox + di)) * Y +
                     (2 * oy + dj)) * Z + (2 * oz + dk);
                // strict > keeps the first maximum in scan order
                if (x.data[xi] > best) {
                  best = x.data[xi];
                  besti = static_cast<std::int32_t>(xi);
                }
              }
          r.y.data[oi] = best;
          r.argmax[oi] = besti;
        }
  return r;
}

template <typename T>
NdArrayT<T> maxpool3d_backward(const NdArrayT<T>& dy,
                               const std::vector<std::int32_t>& argmax,
                               const std::vector<int>& in_shape) {
  NdArrayT<T> dx(in_shape);
  if (dy.numel() != argmax.size())
    throw DimensionError("maxpool3d_backward: dy size does not match argmax");
  for (std::size_t i = 0; i < argmax.size(); ++i) dx.data[argmax[i]] += dy.data[i];
  return dx;
}

// --- transposed convolution, kernel 2, stride 2 (disjoint upsample) ---
// weights are (in_ch, out_ch, 2, 2, 2); each input voxel paints one 2^3
// output block, so output spatial dims double.

template <typename T>
NdArrayT<T> convtranspose3d(const NdArrayT<T>& x, const NdArrayT<T>& w,
                            const NdArrayT<T>& b) {
  if (x.shape.size() != 4) throw DimensionError("convtranspose3d: input must be (c,x,y,z)");
  if (w.shape.size() != 5 || w.shape[2] != 2 || w.shape[3] != 2 || w.shape[4] != 2)
    throw DimensionError("convtranspose3d: weights must be (in,out,2,2,2)");
  if (w.shape[0] != x.shape[0])
    throw DimensionError("convtranspose3d: input has " + std::to_string(x.shape[0]) +
                         " channels but weights expect " + std::to_string(w.shape[0]));
  const int C = x.shape[0], X = x.shape[1], Y = x.shape[2], Z = x.shape[3];
  const int O = w.shape[1];
  if (b.shape.size() != 1 || b.shape[0] != O)
    throw DimensionError("convtranspose3d: bias must be (out_channels)");

  NdArrayT<T> y({O, 2 * X, 2 * Y, 2 * Z});
  const std::size_t oplane = static_cast<std::size_t>(2 * X) * 2 * Y * 2 * Z;
  for (int o = 0; o < O; ++o) {
    T* yo = y.data.data() + static_cast<std::size_t>(o) * oplane;
    const T bo = b.data[o];
    for (std::size_t i = 0; i < oplane; ++i) yo[i] = bo;
  }
  for (int c = 0; c < C; ++c) {
    const T* xc = x.data.data() + static_cast<std::size_t>(c) * X * Y * Z;
    for (int o = 0; o < O; ++o) {
      T* yo = y.data.data() + static_cast<std::size_t>(o) * oplane;
      const T* wk = w.data.data() + (static_cast<std::size_t>(c) * O + o) * 8;
      for (int xi = 0; xi < X; ++xi)
        for (int yi = 0; yi < Y; ++yi) {
          const T* xrow = xc + (static_cast<std::size_t>(xi) * Y + yi) * Z;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) {
              T* yrow = yo + ((static_cast<std::size_t>(2 * xi + di) * 2 * Y) +
                              (2 * yi + dj)) * (2 * Z);
              const T w0 = wk[(static_cast<std::size_t>(di) * 2 + dj) * 2 + 0];
              const T w1 = wk[(static_cast<std::size_t>(di) * 2 + dj) * 2 + 1];
              for (int zi = 0; zi < Z; ++zi) {
                yrow[2 * zi] += w0 * xrow[zi];
                yrow[2 * zi + 1] += w1 * xrow[zi];
              }
            }
        }
    }
  }
  return y;
}

template <typename T>
Conv3dGrads<T> convtranspose3d_backward(const NdArrayT<T>& dy, const NdArrayT<T>& x,
                                        const NdArrayT<T>& w) {
  const int C = x.shape[0], X = x.shape[1], Y = x.shape[2], Z = x.shape[3];
  const int O = w.shape[1];
  if (dy.shape.size() != 4 || dy.shape[0] != O || dy.shape[1] != 2 * X ||
      dy.shape[2] != 2 * Y || dy.shape[3] != 2 * Z)
    throw DimensionError("convtranspose3d_backward: dy shape mismatch");

  Conv3dGrads<T> g{NdArrayT<T>(x.shape), NdArrayT<T>(w.shape), NdArrayT<T>({O})};
  const std::size_t oplane = static_cast<std::size_t>(2 * X) * 2 * Y * 2 * Z;
  for (int o = 0; o < O; ++o) {
    const T* dyo = dy.data.data() + static_cast<std::size_t>(o) * oplane;
    T acc = T(0);
    for (std::size_t i = 0; i < oplane; ++i) acc += dyo[i];
    g.db.data[o] = acc;
  }
  for (int c = 0; c < C; ++c) {
    T* dxc = g.dx.data.data() + static_cast<std::size_t>(c) * X * Y * Z;
    const T* xc = x.data.data() + static_cast<std::size_t>(c) * X * Y * Z;
    for (int o = 0; o < O; ++o) {
      const T* dyo = dy.data.data() + static_cast<std::size_t>(o) * oplane;
      const std::size_t wbase = (static_cast<std::size_t>(c) * O + o) * 8;
      for (int xi = 0; xi < X; ++xi)
        for (int yi = 0; yi < Y; ++yi) {
          T* dxrow = dxc + (static_cast<std::size_t>(xi) * Y + yi) * Z;
          const T* xrow = xc + (static_cast<std::size_t>(xi) * Y + yi) * Z;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) {
              const T* dyrow = dyo + ((static_cast<std::size_t>(2 * xi + di) * 2 * Y) +
                                      (2 * yi + dj)) * (2 * Z);
              const T w0 = w.data[wbase + (static_cast<std::size_t>(di) * 2 + dj) * 2 + 0];
              const T w1 = w.data[wbase + (static_cast<std::size_t>(di) * 2 + dj) * 2 + 1];
              T dw0 = T(0), dw1 = T(0);
              for (int zi = 0; zi < Z; ++zi) {
                dxrow[zi] += w0 * dyrow[2 * zi] + w1 * dyrow[2 * zi + 1];
                dw0 += xrow[zi] * dyrow[2 * zi];
                dw1 += xrow[zi] * dyrow[2 * zi + 1];
              }
              g.dw.data[wbase + (static_cast<std::size_t>(di) * 2 + dj) * 2 + 0] += dw0;
              g.dw.data[wbase + (static_cast<std::size_t>(di) * 2 + dj) * 2 + 1] += dw1;
            }
        }
    }
  }
  return g;
}

// --- ReLU ---

template <typename T>
NdArrayT<T> relu(const NdArrayT<T>& x) {
  NdArrayT<T> y(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return y;
}

// Gradient masked where the saved input was <= 0.
template <typename T>
NdArrayT<T> relu_backward(const NdArrayT<T>& dy, const NdArrayT<T>& x) {
  check_same_shape(dy, x, "relu_backward");
  NdArrayT<T> dx(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i)
    dx.data[i] = x.data[i] > T(0) ? dy.data[i] : T(0);
  return dx;
}

// --- element-wise inverted dropout ---

struct DropoutConfig {
  double rate = 0.0;  // drop probability p in [0, 0.95]

  void validate() const {
    if (rate < 0.0 || rate > 0.95)
      throw DimensionError("dropout rate must be in [0, 0.95], got " +
                           std::to_string(rate));
  }
};

// Samples one keep/drop decision per element: 1 keeps with probability
// 1-p. The mask depends only on the stream, never on the data.
inline std::vector<std::uint8_t> sample_dropout_mask(std::size_t n, double p,
                                                     rng::Stream& stream) {
  std::vector<std::uint8_t> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = stream.next_unit() >= p ? 1 : 0;
  return mask;
}

// Inverted scaling: kept elements are multiplied by 1/(1-p), so the
// expectation over masks equals the input.
template <typename T>
NdArrayT<T> dropout_apply(const NdArrayT<T>& x, const std::vector<std::uint8_t>& mask,
                          double p) {
  if (mask.size() != x.numel())
    throw DimensionError("dropout_apply: mask size does not match input");
  NdArrayT<T> y(x.shape);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < x.numel(); ++i)
    y.data[i] = mask[i] ? x.data[i] * scale : T(0);
  return y;
}

template <typename T>
NdArrayT<T> dropout_backward(const NdArrayT<T>& dy, const std::vector<std::uint8_t>& mask,
                             double p) {
  if (mask.size() != dy.numel())
    throw DimensionError("dropout_backward: mask size does not match gradient");
  NdArrayT<T> dx(dy.shape);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < dy.numel(); ++i)
    dx.data[i] = mask[i] ? dy.data[i] * scale : T(0);
  return dx;
}

// Convenience wrapper matching the (x, cfg, rng, active) contract; returns
// the output and the sampled mask. Inactive or p=0 passes x through with an
// all-keep mask.
template <typename T>
std::pair<NdArrayT<T>, std::vector<std::uint8_t>> dropout(const NdArrayT<T>& x,
                                                          const DropoutConfig& cfg,
                                                          rng::Stream& stream,
                                                          bool active) {
  cfg.validate();
  if (!active || cfg.rate == 0.0)
    return {x, std::vector<std::uint8_t>(x.numel(), 1)};
  auto mask = sample_dropout_mask(x.numel(), cfg.rate, stream);
  return {dropout_apply(x, mask, cfg.rate), std::move(mask)};
}

// --- channel concatenation ---

template <typename T>
NdArrayT<T> concat_channels(const NdArrayT<T>& a, const NdArrayT<T>& b) {
  if (a.shape.size() != 4 || b.shape.size() != 4)
    throw DimensionError("concat_channels: inputs must be (c,x,y,z)");
  for (int i = 1; i < 4; ++i)
    if (a.shape[i] != b.shape[i])
      throw DimensionError("concat_channels: spatial shape mismatch " + a.shape_str() +
                           " vs " + b.shape_str());
  NdArrayT<T> y({a.shape[0] + b.shape[0], a.shape[1], a.shape[2], a.shape[3]});
  std::copy(a.data.begin(), a.data.end(), y.data.begin());
  std::copy(b.data.begin(), b.data.end(), y.data.begin() + a.data.size());
  return y;
}

template <typename T>
std::pair<NdArrayT<T>, NdArrayT<T>> split_channels(const NdArrayT<T>& y, int c_first) {
  if (y.shape.size() != 4 || c_first <= 0 || c_first >= y.shape[0])
    throw DimensionError("split_channels: bad split point");
  NdArrayT<T> a({c_first, y.shape[1], y.shape[2], y.shape[3]});
  NdArrayT<T> b({y.shape[0] - c_first, y.shape[1], y.shape[2], y.shape[3]});
  std::copy(y.data.begin(), y.data.begin() + a.data.size(), a.data.begin());
  std::copy(y.data.begin() + a.data.size(), y.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

}  // namespace mcdti::nn
