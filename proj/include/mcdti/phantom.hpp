#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "mcdti/dti.hpp"
#include "mcdti/errors.hpp"
#include "mcdti/nifti.hpp"
#include "mcdti/rng.hpp"
#include "mcdti/volume.hpp"

namespace mcdti::phantom {

// Closed interval for a uniform tensor prior.
struct Range {
  double lo = 0.0, hi = 0.0;
  double sample(rng::Stream& s) const { return lo + (hi - lo) * s.next_unit(); }
};

// Synthetic head: an outer ellipsoid whose shell is cortical gray matter
// and whose interior is white matter, two CSF ventricles, two deep-gray
// nuclei, a corpus-callosum arc bridging the hemispheres, and a set of
// oriented white-matter tracts. All geometry is analytic so labels are
// exact. Radii and offsets are fractions of the half-extent per axis.
struct PhantomSpec {
  Dims dims{32, 32, 32};
  std::array<float, 3> voxel_size_mm = {1.25f, 1.25f, 1.25f};
  std::uint64_t seed = 0;

  // geometry (fractions of dims/2 unless noted)
  std::array<double, 3> outer_radii = {0.85, 0.92, 0.82};
  double shell_frac = 0.78;          // interior/shell boundary on the ellipsoid coordinate
  std::array<double, 3> ventricle_radii = {0.20, 0.34, 0.22};
  double ventricle_offset = 0.18;    // +/- x offset of each ventricle center
  std::array<double, 3> deep_gm_radii = {0.24, 0.30, 0.24};
  double deep_gm_offset = 0.38;      // +/- x offset of each nucleus
  double cc_arc_radius = 0.34;       // arc half-span in x
  double cc_arc_height = 0.26;       // arc rise in z above center
  double cc_tube_radius = 0.18;      // tube radius around the arc
  int tract_count = 2;
  double tract_radius = 0.14;
  double tract_offset = 0.45;        // +/- x offset of tract axes (along y)

  // per-tissue tensor priors, um^2/ms
  Range wm_axial{1.4, 1.8};
  Range wm_radial{0.2, 0.4};
  Range cortical_gm_d{0.7, 0.9};
  Range deep_gm_d{0.6, 0.8};
  Range deep_gm_aniso{0.0, 0.2};     // lambda1 = d(1+a), others d(1-a/2); FA <= 0.25
  Range csf_d{2.5, 3.0};
  Range cc_axial{1.6, 1.9};
  Range cc_radial{0.15, 0.3};

  // signal model
  std::array<double, kTissueCount> s0 = {0.0, 800.0, 900.0, 850.0, 1000.0, 780.0};
  double noise_sigma = 0.0;

  // acquisition scheme: n_b0 unweighted volumes, then the three orthogonal
  // directions, then extra_dirs more spread over the sphere, all at b_value
  int n_b0 = 2;
  int extra_dirs = 12;
  double b_value = 1.0;
};

struct PhantomDataset {
  Volume full_dwi;    // every scheme volume, noise applied when sigma > 0
  Volume input_dwi;   // 4 channels: first b=0 plus the three orthogonal DWIs
  Volume gt_fa;       // tensor fit of the noiseless full data
  Volume gt_md;
  TissueLabels labels;
  Mask mask;
  dti::DiffusionScheme scheme;
};

namespace detail {

inline std::array<double, 3> normalized(std::array<double, 3> v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

// Symmetric tensor with eigenvalues (l1, l2, l3) and principal axis u.
inline dti::DiffTensor oriented_tensor(double l1, double l2, double l3,
                                       std::array<double, 3> u) {
  u = normalized(u);
  // complete an orthonormal basis from the least-aligned coordinate axis
  std::array<double, 3> a = {1, 0, 0};
  if (std::abs(u[0]) > std::abs(u[1])) a = {0, 1, 0};
  if (std::abs(u[2]) < std::abs(u[0]) && std::abs(u[2]) < std::abs(u[1])) a = {0, 0, 1};
  std::array<double, 3> v = {u[1] * a[2] - u[2] * a[1], u[2] * a[0] - u[0] * a[2],
                             u[0] * a[1] - u[1] * a[0]};
  v = normalized(v);
  const std::array<double, 3> w = {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
                                   u[0] * v[1] - u[1] * v[0]};
  dti::DiffTensor d;
  auto add = [&](const std::array<double, 3>& e, double l) {
    d.dxx += l * e[0] * e[0];
    d.dyy += l * e[1] * e[1];
    d.dzz += l * e[2] * e[2];
    d.dxy += l * e[0] * e[1];
    d.dxz += l * e[0] * e[2];
    d.dyz += l * e[1] * e[2];
  };
  add(u, l1);
  add(v, l2);
  add(w, l3);
  return d;
}

inline std::array<double, 3> random_unit(rng::Stream& s) {
  for (;;) {
    std::array<double, 3> v = {s.next_gaussian(), s.next_gaussian(), s.next_gaussian()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-9) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

}  // namespace detail

// Deterministic scheme: b0 volumes first, then (1,0,0), (0,1,0), (0,0,1),
// then extra directions on a golden spiral.
inline dti::DiffusionScheme make_scheme(int n_b0, int extra_dirs, double b_value) {
  std::vector<dti::GradientEntry> entries;
  for (int i = 0; i < n_b0; ++i) entries.push_back({0.0, {0, 0, 0}});
  entries.push_back({b_value, {1, 0, 0}});
  entries.push_back({b_value, {0, 1, 0}});
  entries.push_back({b_value, {0, 0, 1}});
  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < extra_dirs; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / extra_dirs;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden_angle * i;
    entries.push_back({b_value, {r * std::cos(phi), r * std::sin(phi), z}});
  }
  return dti::DiffusionScheme(std::move(entries));
}

struct LabelField {
  TissueLabels labels;
  Mask mask;
  std::vector<std::array<double, 3>> principal;  // per voxel, for WM/CC
};

namespace detail {

inline LabelField build_geometry(const PhantomSpec& spec) {
  const Dims d = spec.dims;
  LabelField f;
  f.labels = TissueLabels(d);
  f.mask = Mask(d);
  f.principal.assign(d.voxels(), {0.0, 1.0, 0.0});

  const double cx = 0.5 * (d.nx - 1), cy = 0.5 * (d.ny - 1), cz = 0.5 * (d.nz - 1);
  const double hx = 0.5 * d.nx, hy = 0.5 * d.ny, hz = 0.5 * d.nz;
  const double rx = spec.outer_radii[0] * hx;
  const double ry = spec.outer_radii[1] * hy;
  const double rz = spec.outer_radii[2] * hz;

  auto in_ellipsoid = [](double px, double py, double pz, double ax, double ay,
                         double az) {
    const double q = (px / ax) * (px / ax) + (py / ay) * (py / ay) + (pz / az) * (pz / az);
    return q <= 1.0;
  };

  // corpus callosum arc samples in the x-z plane
  const int arc_samples = 64;
  std::vector<std::array<double, 3>> arc_pts(arc_samples);
  std::vector<std::array<double, 3>> arc_tan(arc_samples);
  const double arc_rx = spec.cc_arc_radius * hx;
  const double arc_rz = spec.cc_arc_height * hz;
  for (int i = 0; i < arc_samples; ++i) {
    const double th = std::numbers::pi * i / (arc_samples - 1);
    arc_pts[i] = {cx + arc_rx * std::cos(th), cy, cz + arc_rz * std::sin(th)};
    arc_tan[i] = normalized({-arc_rx * std::sin(th), 0.0, arc_rz * std::cos(th)});
  }
  const double cc_r = spec.cc_tube_radius * std::min({hx, hy, hz});

  for (int x = 0; x < d.nx; ++x)
    for (int y = 0; y < d.ny; ++y)
      for (int z = 0; z < d.nz; ++z) {
        const double px = x - cx, py = y - cy, pz = z - cz;
        const double rho = std::sqrt((px / rx) * (px / rx) + (py / ry) * (py / ry) +
                                     (pz / rz) * (pz / rz));
        if (rho > 1.0) continue;  // background

        const std::size_t vi = f.labels.index(x, y, z);
        Tissue t = rho > spec.shell_frac ? Tissue::CorticalGray : Tissue::WhiteMatter;

        if (t == Tissue::WhiteMatter) {
          // baseline orientation fans outward from the anterior-posterior axis
          f.principal[vi] = normalized({0.4 * px / rx, 1.0, 0.4 * pz / rz});
          // tracts are straight cylinders along y at +/- tract_offset
          const double tr = spec.tract_radius * std::min(hx, hz);
          for (int k = 0; k < spec.tract_count; ++k) {
            const double sign = k % 2 == 0 ? 1.0 : -1.0;
            const double ax = cx + sign * spec.tract_offset * hx * (1.0 + (k / 2) * 0.35);
            const double dx2 = (x - ax) * (x - ax) + pz * pz;
            if (dx2 <= tr * tr) f.principal[vi] = {0.0, 1.0, 0.0};
          }
          // deep gray nuclei
          for (double sign : {-1.0, 1.0}) {
            if (in_ellipsoid(px - sign * spec.deep_gm_offset * hx, py, pz,
                             spec.deep_gm_radii[0] * hx, spec.deep_gm_radii[1] * hy,
                             spec.deep_gm_radii[2] * hz))
              t = Tissue::DeepGray;
          }
          // corpus callosum tube overrides deep gray
          double best_d2 = 1e30;
          std::array<double, 3> best_tan = {1, 0, 0};
          for (int i = 0; i < arc_samples; ++i) {
            const double ddx = x - arc_pts[i][0];
            const double ddy = y - arc_pts[i][1];
            const double ddz = z - arc_pts[i][2];
            const double d2 = ddx * ddx + ddy * ddy + ddz * ddz;
            if (d2 < best_d2) {
              best_d2 = d2;
              best_tan = arc_tan[i];
            }
          }
          if (best_d2 <= cc_r * cc_r) {
            t = Tissue::CorpusCallosum;
            f.principal[vi] = best_tan;
          }
          // ventricles override everything
          for (double sign : {-1.0, 1.0}) {
            if (in_ellipsoid(px - sign * spec.ventricle_offset * hx, py, pz,
                             spec.ventricle_radii[0] * hx, spec.ventricle_radii[1] * hy,
                             spec.ventricle_radii[2] * hz))
              t = Tissue::Csf;
          }
        }

        f.labels.labels[vi] = static_cast<std::uint8_t>(t);
        f.mask.bits[vi] = 1;
      }

  std::array<std::size_t, kTissueCount> counts{};
  for (auto l : f.labels.labels) counts[l] += 1;
  for (int t = 1; t < kTissueCount; ++t) {
    if (counts[t] == 0)
      throw NumericError(std::string("phantom geometry produced an empty region for ") +
                         tissue_name(static_cast<Tissue>(t)));
  }
  return f;
}

}  // namespace detail

// Magnitude-MRI noise: out = sqrt((x + n1)^2 + n2^2) with n1, n2 iid
// N(0, sigma^2); sigma = 0 returns the input bit-identically.
inline Volume add_rician_noise(const Volume& vol, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw NumericError("add_rician_noise: sigma must be >= 0");
  if (sigma == 0.0) return vol;
  Volume out = vol;
  auto stream = rng::make_stream(seed, rng::Domain::PhantomNoise);
  for (auto& v : out.data) {
    const double n1 = v + sigma * stream.next_gaussian();
    const double n2 = sigma * stream.next_gaussian();
    v = static_cast<float>(std::sqrt(n1 * n1 + n2 * n2));
  }
  return out;
}

// Deterministic synthetic dataset. Ground-truth FA/MD come from the
// tensor fit of the noiseless full acquisition, not from the generating
// tensors, so the targets follow the same estimation path a measured
// dataset would.
inline PhantomDataset generate_phantom(const PhantomSpec& spec) {
  if (spec.dims.nx < 16 || spec.dims.ny < 16 || spec.dims.nz < 16)
    throw DimensionError("generate_phantom: dims must be >= 16 per axis");

  auto field = detail::build_geometry(spec);
  const Dims d = spec.dims;
  const std::size_t nvox = d.voxels();

  PhantomDataset ds;
  ds.labels = std::move(field.labels);
  ds.mask = std::move(field.mask);
  ds.scheme = make_scheme(spec.n_b0, spec.extra_dirs, spec.b_value);
  const int nch = ds.scheme.n_volumes();

  Volume noiseless(nch, d, spec.voxel_size_mm);
  auto tissue_stream = rng::make_stream(spec.seed, rng::Domain::PhantomTissue);

  for (std::size_t v = 0; v < nvox; ++v) {
    const Tissue t = static_cast<Tissue>(ds.labels.labels[v]);
    if (t == Tissue::Background) continue;

    dti::DiffTensor tensor;
    switch (t) {
      case Tissue::WhiteMatter: {
        const double ax = spec.wm_axial.sample(tissue_stream);
        const double rad = spec.wm_radial.sample(tissue_stream);
        tensor = detail::oriented_tensor(ax, rad, rad, field.principal[v]);
        break;
      }
      case Tissue::CorticalGray: {
        const double iso = spec.cortical_gm_d.sample(tissue_stream);
        tensor = dti::DiffTensor{iso, iso, iso, 0, 0, 0};
        break;
      }
      case Tissue::DeepGray: {
        const double iso = spec.deep_gm_d.sample(tissue_stream);
        const double a = spec.deep_gm_aniso.sample(tissue_stream);
        tensor = detail::oriented_tensor(iso * (1.0 + a), iso * (1.0 - 0.5 * a),
                                         iso * (1.0 - 0.5 * a),
                                         detail::random_unit(tissue_stream));
        break;
      }
      case Tissue::Csf: {
        const double iso = spec.csf_d.sample(tissue_stream);
        tensor = dti::DiffTensor{iso, iso, iso, 0, 0, 0};
        break;
      }
      case Tissue::CorpusCallosum: {
        const double ax = spec.cc_axial.sample(tissue_stream);
        const double rad = spec.cc_radial.sample(tissue_stream);
        tensor = detail::oriented_tensor(ax, rad, rad, field.principal[v]);
        break;
      }
      case Tissue::Background:
        break;
    }

    const double s0 = spec.s0[static_cast<std::size_t>(t)];
    for (int c = 0; c < nch; ++c) {
      const auto& e = ds.scheme.entry(c);
      noiseless.data[static_cast<std::size_t>(c) * nvox + v] =
          static_cast<float>(dti::signal(tensor, s0, e.b, e.g));
    }
  }

  // ground truth from the noiseless fit
  auto maps = dti::fit_volume(noiseless, ds.mask, ds.scheme);
  ds.gt_fa = std::move(maps.fa_map);
  ds.gt_md = std::move(maps.md_map);

  ds.full_dwi = add_rician_noise(noiseless, spec.noise_sigma, spec.seed);

  // network input: first b=0 plus the three orthogonal directions
  ds.input_dwi = Volume(4, d, spec.voxel_size_mm);
  const std::array<int, 4> pick = {0, spec.n_b0, spec.n_b0 + 1, spec.n_b0 + 2};
  for (int c = 0; c < 4; ++c) {
    const auto src = ds.full_dwi.channel(pick[c]);
    auto dst = ds.input_dwi.channel(c);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return ds;
}

// --- letter "M" artifact -------------------------------------------------

enum class ArtifactPolarity { Bright, Dark };

// Fixed 7x7 bitmap of the letter; 19 set bits.
inline constexpr std::array<const char*, 7> kLetterM = {
    "X.....X",
    "XX...XX",
    "X.X.X.X",
    "X..X..X",
    "X.....X",
    "X.....X",
    "X.....X",
};

struct ArtifactResult {
  Volume vol;
  Mask artifact_mask;
};

// Rasterizes the letter at an integer scale, centered in x-y, extruded
// over [slice_lo, slice_hi) in z. Bright sets affected voxels to
// scale_bright times the per-channel 99th percentile of the letter-region
// intensities; dark sets them to scale_dark. Voxels outside the letter are
// untouched.
inline ArtifactResult inject_letter_artifact(const Volume& vol, ArtifactPolarity polarity,
                                             int slice_lo, int slice_hi,
                                             int raster_scale = 0,
                                             double scale_bright = 3.0,
                                             double scale_dark = 0.0) {
  const Dims d = vol.dims;
  if (slice_lo < 0 || slice_hi > d.nz || slice_lo >= slice_hi)
    throw DimensionError("inject_letter_artifact: slice range [" +
                         std::to_string(slice_lo) + "," + std::to_string(slice_hi) +
                         ") outside volume depth " + std::to_string(d.nz));
  if (raster_scale <= 0) raster_scale = std::max(1, std::min(d.nx, d.ny) / 14);
  const int side = 7 * raster_scale;
  if (side > d.nx || side > d.ny)
    throw DimensionError("inject_letter_artifact: " + std::to_string(side) +
                         "-pixel raster exceeds volume extent " + d.str());
  const int x0 = (d.nx - side) / 2;
  const int y0 = (d.ny - side) / 2;

  ArtifactResult res{vol, Mask(d)};
  for (int bx = 0; bx < 7; ++bx)
    for (int by = 0; by < 7; ++by) {
      if (kLetterM[bx][by] != 'X') continue;
      for (int ux = 0; ux < raster_scale; ++ux)
        for (int uy = 0; uy < raster_scale; ++uy)
          for (int z = slice_lo; z < slice_hi; ++z)
            res.artifact_mask.set(x0 + bx * raster_scale + ux,
                                  y0 + by * raster_scale + uy, z, true);
    }

  for (int c = 0; c < vol.channels; ++c) {
    float fill = static_cast<float>(scale_dark);
    if (polarity == ArtifactPolarity::Bright) {
      std::vector<float> inside = masked_values(vol, res.artifact_mask, c);
      std::sort(inside.begin(), inside.end());
      const std::size_t idx =
          std::min(inside.size() - 1,
                   static_cast<std::size_t>(std::ceil(0.99 * inside.size())) - 1);
      fill = static_cast<float>(scale_bright * inside[idx]);
    }
    auto ch = res.vol.channel(c);
    for (std::size_t v = 0; v < d.voxels(); ++v)
      if (res.artifact_mask.bits[v]) ch[v] = fill;
  }
  return res;
}

// --- dataset directory layout --------------------------------------------

inline void save_dataset(const PhantomDataset& ds, const std::string& dir) {
  nifti::write_file(ds.full_dwi, dir + "/dwi_full.nii");
  nifti::write_file(ds.input_dwi, dir + "/dwi_input.nii");
  nifti::write_file(ds.gt_fa, dir + "/fa_gt.nii");
  nifti::write_file(ds.gt_md, dir + "/md_gt.nii");
  nifti::write_file(ds.labels, dir + "/labels.nii");
  nifti::write_file(ds.mask, dir + "/mask.nii");
  ds.scheme.write_file(dir + "/scheme.txt");
}

inline PhantomDataset load_dataset(const std::string& dir) {
  PhantomDataset ds;
  ds.full_dwi = nifti::read_file(dir + "/dwi_full.nii").vol;
  ds.input_dwi = nifti::read_file(dir + "/dwi_input.nii").vol;
  ds.gt_fa = nifti::read_file(dir + "/fa_gt.nii").vol;
  ds.gt_md = nifti::read_file(dir + "/md_gt.nii").vol;
  ds.labels = nifti::to_labels(nifti::read_file(dir + "/labels.nii").vol);
  ds.mask = nifti::to_mask(nifti::read_file(dir + "/mask.nii").vol);
  ds.scheme = dti::DiffusionScheme::read_file(dir + "/scheme.txt");
  return ds;
}

}  // namespace mcdti::phantom
