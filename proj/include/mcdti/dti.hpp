#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mcdti/errors.hpp"
#include "mcdti/volume.hpp"

namespace mcdti::dti {

// One acquisition: diffusion weighting b in ms/um^2 (1.0 == 1000 s/mm^2)
// and a unit gradient direction. Direction is ignored when b == 0.
struct GradientEntry {
  double b = 0.0;
  std::array<double, 3> g = {0.0, 0.0, 0.0};
};

class DiffusionScheme {
 public:
  DiffusionScheme() = default;
  explicit DiffusionScheme(std::vector<GradientEntry> entries)
      : entries_(std::move(entries)) {}

  int n_volumes() const { return static_cast<int>(entries_.size()); }
  const GradientEntry& entry(int i) const { return entries_[i]; }
  const std::vector<GradientEntry>& entries() const { return entries_; }

  int n_b0() const {
    int n = 0;
    for (const auto& e : entries_) n += (e.b == 0.0);
    return n;
  }
  int n_diffusion() const { return n_volumes() - n_b0(); }

  // Fitting needs >= 1 b=0 volume, >= 6 weighted volumes, and unit
  // directions on every weighted volume.
  void validate_for_fit() const {
    for (int i = 0; i < n_volumes(); ++i) {
      const auto& e = entries_[i];
      if (e.b < 0.0)
        throw FormatError("scheme volume " + std::to_string(i) + ": negative b-value");
      if (e.b > 0.0) {
        const double n2 = e.g[0] * e.g[0] + e.g[1] * e.g[1] + e.g[2] * e.g[2];
        if (std::abs(std::sqrt(n2) - 1.0) > 1e-6)
          throw FormatError("scheme volume " + std::to_string(i) +
                            ": gradient direction is not unit norm");
      }
    }
    if (n_b0() < 1)
      throw FormatError("scheme deficiency: at least one b=0 volume is required");
    if (n_diffusion() < 6)
      throw FormatError("scheme deficiency: at least 6 diffusion-weighted volumes are "
                        "required, got " + std::to_string(n_diffusion()));
  }

  // Plain text, one `b gx gy gz` line per volume, parsed strictly.
  static DiffusionScheme parse_text(const std::string& text,
                                    const std::string& origin = "<text>") {
    std::vector<GradientEntry> entries;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::istringstream ls(line);
      std::string first;
      if (!(ls >> first)) continue;  // blank line
      GradientEntry e;
      std::istringstream fs(first);
      std::string junk;
      if (!(fs >> e.b) || (fs >> junk))
        throw FormatError(origin + ":" + std::to_string(lineno) + ": bad b-value");
      if (!(ls >> e.g[0] >> e.g[1] >> e.g[2]))
        throw FormatError(origin + ":" + std::to_string(lineno) +
                          ": expected `b gx gy gz`");
      if (ls >> junk)
        throw FormatError(origin + ":" + std::to_string(lineno) +
                          ": trailing content after `b gx gy gz`");
      entries.push_back(e);
    }
    return DiffusionScheme(std::move(entries));
  }

  static DiffusionScheme read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scheme file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse_text(os.str(), path);
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    for (const auto& e : entries_)
      os << e.b << " " << e.g[0] << " " << e.g[1] << " " << e.g[2] << "\n";
    return os.str();
  }

  void write_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write scheme file: " + path);
    out << to_text();
  }

 private:
  std::vector<GradientEntry> entries_;
};

// Symmetric diffusion tensor, um^2/ms.
struct DiffTensor {
  double dxx = 0, dyy = 0, dzz = 0, dxy = 0, dxz = 0, dyz = 0;

  std::array<std::array<double, 3>, 3> matrix() const {
    return {{{dxx, dxy, dxz}, {dxy, dyy, dyz}, {dxz, dyz, dzz}}};
  }
  double trace() const { return dxx + dyy + dzz; }
};

struct EigenTriple {
  std::array<double, 3> values = {0, 0, 0};               // descending
  std::array<std::array<double, 3>, 3> vectors = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
};

// Monoexponential signal S = s0 * exp(-b * g^T D g).
inline double signal(const DiffTensor& d, double s0, double b,
                     const std::array<double, 3>& g) {
  const double q = g[0] * (d.dxx * g[0] + d.dxy * g[1] + d.dxz * g[2]) +
                   g[1] * (d.dxy * g[0] + d.dyy * g[1] + d.dyz * g[2]) +
                   g[2] * (d.dxz * g[0] + d.dyz * g[1] + d.dzz * g[2]);
  return s0 * std::exp(-b * q);
}

namespace detail {

inline std::array<double, 3> cross(const std::array<double, 3>& a,
                                   const std::array<double, 3>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const std::array<double, 3>& a) {
  return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
}
inline std::array<double, 3> normalized(const std::array<double, 3>& a) {
  const double n = norm(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}
inline double dot(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

// Null vector of the rank-2 matrix (A - lambda I) via the largest cross
// product of its rows.
inline std::array<double, 3> null_vector(const std::array<std::array<double, 3>, 3>& m) {
  const auto c01 = cross(m[0], m[1]);
  const auto c02 = cross(m[0], m[2]);
  const auto c12 = cross(m[1], m[2]);
  const double n01 = norm(c01), n02 = norm(c02), n12 = norm(c12);
  if (n01 >= n02 && n01 >= n12 && n01 > 0) return {c01[0] / n01, c01[1] / n01, c01[2] / n01};
  if (n02 >= n12 && n02 > 0) return {c02[0] / n02, c02[1] / n02, c02[2] / n02};
  if (n12 > 0) return {c12[0] / n12, c12[1] / n12, c12[2] / n12};
  return {0, 0, 0};  // caller falls back to Jacobi
}

// Cyclic Jacobi rotations; unconditionally stable for symmetric input.
inline EigenTriple jacobi_eig3(std::array<std::array<double, 3>, 3> a) {
  std::array<std::array<double, 3>, 3> v = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if (off < 1e-30) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  EigenTriple out;
  std::array<int, 3> order = {0, 1, 2};
  std::array<double, 3> vals = {a[0][0], a[1][1], a[2][2]};
  for (int i = 0; i < 2; ++i)
    for (int j = i + 1; j < 3; ++j)
      if (vals[order[j]] > vals[order[i]]) std::swap(order[i], order[j]);
  for (int i = 0; i < 3; ++i) {
    out.values[i] = vals[order[i]];
    out.vectors[i] = {v[0][order[i]], v[1][order[i]], v[2][order[i]]};
  }
  return out;
}

}  // namespace detail

// Eigendecomposition of a symmetric 3x3 tensor, eigenvalues descending.
// Uses the closed-form trigonometric solution; near-degenerate spectra
// (characteristic discriminant below 1e-12) fall back to Jacobi rotations
// which stay accurate when eigenvalues collide.
inline EigenTriple eig_sym3(const DiffTensor& d) {
  const auto a = d.matrix();
  const double p1 = d.dxy * d.dxy + d.dxz * d.dxz + d.dyz * d.dyz;
  if (p1 == 0.0) {
    // Already diagonal.
    EigenTriple out;
    std::array<int, 3> order = {0, 1, 2};
    std::array<double, 3> vals = {d.dxx, d.dyy, d.dzz};
    for (int i = 0; i < 2; ++i)
      for (int j = i + 1; j < 3; ++j)
        if (vals[order[j]] > vals[order[i]]) std::swap(order[i], order[j]);
    for (int i = 0; i < 3; ++i) {
      out.values[i] = vals[order[i]];
      out.vectors[i] = {0, 0, 0};
      out.vectors[i][order[i]] = 1.0;
    }
    return out;
  }

  const double q = d.trace() / 3.0;
  const double p2 = (d.dxx - q) * (d.dxx - q) + (d.dyy - q) * (d.dyy - q) +
                    (d.dzz - q) * (d.dzz - q) + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  std::array<std::array<double, 3>, 3> bmat;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) bmat[i][j] = (a[i][j] - (i == j ? q : 0.0)) / p;
  const double detb =
      bmat[0][0] * (bmat[1][1] * bmat[2][2] - bmat[1][2] * bmat[2][1]) -
      bmat[0][1] * (bmat[1][0] * bmat[2][2] - bmat[1][2] * bmat[2][0]) +
      bmat[0][2] * (bmat[1][0] * bmat[2][1] - bmat[1][1] * bmat[2][0]);
  const double r = std::clamp(detb / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;

  EigenTriple out;
  out.values[0] = q + 2.0 * p * std::cos(phi);
  out.values[2] = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  out.values[1] = 3.0 * q - out.values[0] - out.values[2];

  const double d01 = out.values[0] - out.values[1];
  const double d02 = out.values[0] - out.values[2];
  const double d12 = out.values[1] - out.values[2];
  const double disc = d01 * d01 * d02 * d02 * d12 * d12;
  if (std::abs(disc) < 1e-12) return detail::jacobi_eig3(a);

  auto shifted = [&](double lambda) {
    auto m = a;
    for (int i = 0; i < 3; ++i) m[i][i] -= lambda;
    return m;
  };
  auto v1 = detail::null_vector(shifted(out.values[0]));
  auto v3 = detail::null_vector(shifted(out.values[2]));
  if (detail::norm(v1) < 0.5 || detail::norm(v3) < 0.5) return detail::jacobi_eig3(a);
  // Re-orthogonalize and complete a right-handed basis.
  const double proj = detail::dot(v3, v1);
  for (int i = 0; i < 3; ++i) v3[i] -= proj * v1[i];
  if (detail::norm(v3) < 1e-8) return detail::jacobi_eig3(a);
  v3 = detail::normalized(v3);
  const auto v2 = detail::cross(v3, v1);
  out.vectors[0] = v1;
  out.vectors[1] = v2;
  out.vectors[2] = v3;
  return out;
}

// Fractional anisotropy: sqrt(3/2) * ||lambda - mean|| / ||lambda||,
// clamped to [0, 1]; zero tensor maps to 0.
inline double fa(const EigenTriple& e) {
  const double l1 = e.values[0], l2 = e.values[1], l3 = e.values[2];
  const double nsq = l1 * l1 + l2 * l2 + l3 * l3;
  if (nsq == 0.0) return 0.0;
  const double m = (l1 + l2 + l3) / 3.0;
  const double dev = (l1 - m) * (l1 - m) + (l2 - m) * (l2 - m) + (l3 - m) * (l3 - m);
  return std::clamp(std::sqrt(1.5 * dev / nsq), 0.0, 1.0);
}

// Mean diffusivity in um^2/ms.
inline double md(const EigenTriple& e) {
  return (e.values[0] + e.values[1] + e.values[2]) / 3.0;
}

struct TensorFit {
  DiffTensor tensor;
  double s0 = 0.0;
  int clamped_samples = 0;
};

// Log-linear least squares against the 7-column design
//   [-b gx^2, -b gy^2, -b gz^2, -2b gx gy, -2b gx gz, -2b gy gz, 1]
// with ln S0 as the 7th unknown. The normal equations are factorized once
// per scheme and reused for every voxel. Non-positive signals are clamped
// to floor_frac * s0_ref and counted instead of failing the fit.
class TensorFitter {
 public:
  explicit TensorFitter(const DiffusionScheme& scheme, double floor_frac = 1e-6)
      : scheme_(scheme), floor_frac_(floor_frac) {
    scheme_.validate_for_fit();
    const int n = scheme_.n_volumes();
    design_.resize(static_cast<std::size_t>(n) * 7);
    for (int i = 0; i < n; ++i) {
      const auto& e = scheme_.entry(i);
      double* row = design_.data() + static_cast<std::size_t>(i) * 7;
      row[0] = -e.b * e.g[0] * e.g[0];
      row[1] = -e.b * e.g[1] * e.g[1];
      row[2] = -e.b * e.g[2] * e.g[2];
      row[3] = -2.0 * e.b * e.g[0] * e.g[1];
      row[4] = -2.0 * e.b * e.g[0] * e.g[2];
      row[5] = -2.0 * e.b * e.g[1] * e.g[2];
      row[6] = 1.0;
    }
    // Gram matrix and its Cholesky factor.
    std::array<double, 49> gram{};
    for (int i = 0; i < n; ++i) {
      const double* row = design_.data() + static_cast<std::size_t>(i) * 7;
      for (int a = 0; a < 7; ++a)
        for (int b = 0; b <= a; ++b) gram[a * 7 + b] += row[a] * row[b];
    }
    double scale = 0.0;
    for (int a = 0; a < 7; ++a) scale = std::max(scale, gram[a * 7 + a]);
    for (int a = 0; a < 7; ++a) {
      for (int b = 0; b <= a; ++b) {
        double s = gram[a * 7 + b];
        for (int k = 0; k < b; ++k) s -= chol_[a * 7 + k] * chol_[b * 7 + k];
        if (a == b) {
          if (s <= 1e-12 * scale)
            throw NumericError(
                "scheme deficiency: gradient directions do not span the 6 tensor "
                "components (rank-deficient design)");
          chol_[a * 7 + a] = std::sqrt(s);
        } else {
          chol_[a * 7 + b] = s / chol_[b * 7 + b];
        }
      }
    }
  }

  const DiffusionScheme& scheme() const { return scheme_; }

  TensorFit fit(std::span<const double> signals) const {
    const int n = scheme_.n_volumes();
    if (static_cast<int>(signals.size()) != n)
      throw DimensionError("fit_tensor: got " + std::to_string(signals.size()) +
                           " signals for a scheme of " + std::to_string(n) + " volumes");

    // Reference amplitude for the clamp floor: mean of positive b0 samples.
    double s0_ref = 0.0;
    int n_pos_b0 = 0;
    for (int i = 0; i < n; ++i) {
      if (scheme_.entry(i).b == 0.0 && signals[i] > 0.0) {
        s0_ref += signals[i];
        ++n_pos_b0;
      }
    }
    s0_ref = n_pos_b0 > 0 ? s0_ref / n_pos_b0 : 1.0;
    const double floor = floor_frac_ * s0_ref;

    TensorFit out;
    std::array<double, 7> rhs{};
    for (int i = 0; i < n; ++i) {
      double s = signals[i];
      if (!(s > 0.0)) {
        s = floor;
        ++out.clamped_samples;
      }
      const double ls = std::log(s);
      const double* row = design_.data() + static_cast<std::size_t>(i) * 7;
      for (int a = 0; a < 7; ++a) rhs[a] += row[a] * ls;
    }

    // Solve L L^T beta = rhs.
    std::array<double, 7> y{};
    for (int a = 0; a < 7; ++a) {
      double s = rhs[a];
      for (int k = 0; k < a; ++k) s -= chol_[a * 7 + k] * y[k];
      y[a] = s / chol_[a * 7 + a];
    }
    std::array<double, 7> beta{};
    for (int a = 6; a >= 0; --a) {
      double s = y[a];
      for (int k = a + 1; k < 7; ++k) s -= chol_[k * 7 + a] * beta[k];
      beta[a] = s / chol_[a * 7 + a];
    }

    out.tensor = DiffTensor{beta[0], beta[1], beta[2], beta[3], beta[4], beta[5]};
    out.s0 = std::exp(beta[6]);
    return out;
  }

 private:
  DiffusionScheme scheme_;
  double floor_frac_;
  std::vector<double> design_;
  std::array<double, 49> chol_{};
};

inline TensorFit fit_tensor(std::span<const double> signals, const DiffusionScheme& scheme,
                            double floor_frac = 1e-6) {
  return TensorFitter(scheme, floor_frac).fit(signals);
}

struct FitMaps {
  Volume fa_map;
  Volume md_map;
  Volume tensors;  // 6 channels: Dxx, Dyy, Dzz, Dxy, Dxz, Dyz
  std::size_t fitted_voxels = 0;
  std::size_t clamped_samples = 0;
};

// Per-voxel tensor fit inside the mask; outside-mask voxels are zero.
// Voxel fits are independent, so the scan is chunked across workers with
// disjoint output ranges; results are identical for any worker count.
inline FitMaps fit_volume(const Volume& dwi, const Mask& mask,
                          const DiffusionScheme& scheme, int workers = 1) {
  if (dwi.channels != scheme.n_volumes())
    throw DimensionError("fit_volume: volume has " + std::to_string(dwi.channels) +
                         " channels but scheme lists " +
                         std::to_string(scheme.n_volumes()) + " volumes");
  if (mask.dims != dwi.dims)
    throw DimensionError("fit_volume: mask dims " + mask.dims.str() +
                         " do not match volume dims " + dwi.dims.str());
  const TensorFitter fitter(scheme);

  FitMaps maps;
  maps.fa_map = Volume(1, dwi.dims, dwi.voxel_size_mm);
  maps.md_map = Volume(1, dwi.dims, dwi.voxel_size_mm);
  maps.tensors = Volume(6, dwi.dims, dwi.voxel_size_mm);

  const std::size_t nvox = dwi.dims.voxels();
  const int nw = std::max(1, workers);
  std::vector<std::size_t> fitted(nw, 0), clamped(nw, 0);

  auto run_range = [&](int w, std::size_t begin, std::size_t end) {
    const int nch = dwi.channels;
    std::vector<double> sig(nch);
    for (std::size_t v = begin; v < end; ++v) {
      if (!mask.bits[v]) continue;
      for (int c = 0; c < nch; ++c)
        sig[c] = dwi.data[static_cast<std::size_t>(c) * nvox + v];
      const TensorFit f = fitter.fit(sig);
      const EigenTriple e = eig_sym3(f.tensor);
      maps.fa_map.data[v] = static_cast<float>(fa(e));
      maps.md_map.data[v] = static_cast<float>(md(e));
      const std::array<double, 6> comps = {f.tensor.dxx, f.tensor.dyy, f.tensor.dzz,
                                           f.tensor.dxy, f.tensor.dxz, f.tensor.dyz};
      for (int c = 0; c < 6; ++c)
        maps.tensors.data[static_cast<std::size_t>(c) * nvox + v] =
            static_cast<float>(comps[c]);
      fitted[w] += 1;
      clamped[w] += static_cast<std::size_t>(f.clamped_samples);
    }
  };

  if (nw == 1) {
    run_range(0, 0, nvox);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (nvox + nw - 1) / nw;
    for (int w = 0; w < nw; ++w) {
      const std::size_t begin = std::min(nvox, static_cast<std::size_t>(w) * chunk);
      const std::size_t end = std::min(nvox, begin + chunk);
      pool.emplace_back(run_range, w, begin, end);
    }
    for (auto& t : pool) t.join();
  }
  for (int w = 0; w < nw; ++w) {
    maps.fitted_voxels += fitted[w];
    maps.clamped_samples += clamped[w];
  }
  return maps;
}

}  // namespace mcdti::dti
