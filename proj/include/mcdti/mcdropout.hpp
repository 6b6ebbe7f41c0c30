#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mcdti/errors.hpp"
#include "mcdti/ndarray.hpp"
#include "mcdti/rng.hpp"
#include "mcdti/volume.hpp"

namespace mcdti::mc {

// Running per-element mean and M2 (sum of squared deviations) over MC
// passes, updated with the Welford recurrence. Accumulators are double so
// merging partial ensembles stays stable at 100+ passes.
class Ensemble {
 public:
  Ensemble() = default;
  explicit Ensemble(std::vector<int> shape)
      : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) n *= static_cast<std::size_t>(d);
    mean_.assign(n, 0.0);
    m2_.assign(n, 0.0);
  }

  const std::vector<int>& shape() const { return shape_; }
  std::size_t count() const { return n_; }
  std::size_t numel() const { return mean_.size(); }

  template <typename T>
  void update(const nn::NdArrayT<T>& sample) {
    if (sample.shape != shape_)
      throw DimensionError("ensemble update: sample shape " + sample.shape_str() +
                           " does not match ensemble");
    n_ += 1;
    const double inv_n = 1.0 / static_cast<double>(n_);
    for (std::size_t i = 0; i < mean_.size(); ++i) {
      const double x = static_cast<double>(sample.data[i]);
      const double delta = x - mean_[i];
      mean_[i] += delta * inv_n;
      m2_[i] += delta * (x - mean_[i]);
    }
  }

  // Chan's parallel update; associative and order-insensitive up to
  // floating-point roundoff.
  void merge(const Ensemble& other) {
    if (other.shape_ != shape_)
      throw DimensionError("ensemble merge: shape mismatch");
    if (other.n_ == 0) return;
    if (n_ == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(n_);
    const double nb = static_cast<double>(other.n_);
    const double nab = na + nb;
    for (std::size_t i = 0; i < mean_.size(); ++i) {
      const double delta = other.mean_[i] - mean_[i];
      mean_[i] += delta * (nb / nab);
      m2_[i] += other.m2_[i] + delta * delta * (na * nb / nab);
    }
    n_ += other.n_;
  }

  double mean_at(std::size_t i) const { return mean_[i]; }

  // Unbiased sample variance; requires >= 2 passes.
  double variance_at(std::size_t i) const {
    if (n_ < 2) throw NumericError("ensemble variance: need >= 2 passes");
    return m2_[i] / static_cast<double>(n_ - 1);
  }

  const std::vector<double>& means() const { return mean_; }
  const std::vector<double>& m2() const { return m2_; }

 private:
  std::vector<int> shape_;
  std::size_t n_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

template <typename T>
inline void welford_update(Ensemble& ens, const nn::NdArrayT<T>& sample) {
  ens.update(sample);
}

// N stochastic forward passes of any net exposing
// predict_mc(x, seed, pass). Pass k draws from streams keyed by
// (base_seed, k), so the result does not depend on execution order.
template <typename Net, typename T>
Ensemble mc_predict(const Net& net, const nn::NdArrayT<T>& x, int n_passes,
                    std::uint64_t base_seed) {
  if (n_passes < 1) throw NumericError("mc_predict: n_passes must be >= 1");
  Ensemble ens;
  for (int k = 0; k < n_passes; ++k) {
    const auto y = net.predict_mc(x, base_seed, static_cast<std::uint64_t>(k));
    if (k == 0) ens = Ensemble(y.shape);
    ens.update(y);
  }
  return ens;
}

struct UncertaintyMap {
  Volume cov;  // channels match the ensemble (FA CoV, MD CoV)
  double epsilon = 0.0;
  std::size_t low_mean_voxels = 0;  // in-mask elements where |mean| < epsilon
};

// Coefficient of variation: sample std over max(|mean|, epsilon), zero
// outside the mask. Low-mean elements are counted so downstream reports
// can flag them.
inline UncertaintyMap uncertainty_map(const Ensemble& ens, const Mask& mask,
                                      double epsilon = 1e-6,
                                      std::array<float, 3> voxel_size_mm = {1, 1, 1}) {
  if (ens.count() < 2)
    throw NumericError("uncertainty_map: need >= 2 passes, got " +
                       std::to_string(ens.count()));
  if (ens.shape().size() != 4)
    throw DimensionError("uncertainty_map: ensemble must be (c,x,y,z)");
  const int C = ens.shape()[0];
  const Dims dims{ens.shape()[1], ens.shape()[2], ens.shape()[3]};
  if (dims != mask.dims)
    throw DimensionError("uncertainty_map: mask dims " + mask.dims.str() +
                         " do not match ensemble");

  UncertaintyMap out;
  out.epsilon = epsilon;
  out.cov = Volume(C, dims, voxel_size_mm);
  const std::size_t nvox = dims.voxels();
  for (int c = 0; c < C; ++c) {
    for (std::size_t v = 0; v < nvox; ++v) {
      if (!mask.bits[v]) continue;
      const std::size_t i = static_cast<std::size_t>(c) * nvox + v;
      const double sd = std::sqrt(ens.variance_at(i));
      const double m = std::abs(ens.mean_at(i));
      if (m < epsilon) ++out.low_mean_voxels;
      out.cov.data[i] = static_cast<float>(sd / std::max(m, epsilon));
    }
  }
  return out;
}

// Ensemble means as (FA, MD) volumes; FA is clamped to [0, 1] at export.
inline std::pair<Volume, Volume> averaged_prediction(
    const Ensemble& ens, std::array<float, 3> voxel_size_mm = {1, 1, 1}) {
  if (ens.shape().size() != 4 || ens.shape()[0] != 2)
    throw DimensionError("averaged_prediction: ensemble must be (2,x,y,z)");
  const Dims dims{ens.shape()[1], ens.shape()[2], ens.shape()[3]};
  Volume fa_map(1, dims, voxel_size_mm);
  Volume md_map(1, dims, voxel_size_mm);
  const std::size_t nvox = dims.voxels();
  for (std::size_t v = 0; v < nvox; ++v) {
    fa_map.data[v] =
        std::clamp(static_cast<float>(ens.mean_at(v)), 0.0f, 1.0f);
    md_map.data[v] = static_cast<float>(ens.mean_at(nvox + v));
  }
  return {std::move(fa_map), std::move(md_map)};
}

struct BlockPassRecord {
  std::array<int, 3> origin;
  std::uint64_t pass;
  std::uint64_t stream_id;
};

struct InferenceResult {
  Volume fa_mean;   // clamped to [0,1]
  Volume md_mean;
  Volume fa_cov;    // empty volumes when n_passes < 2
  Volume md_cov;
  bool has_cov = false;
  std::size_t low_mean_fa = 0;
  std::size_t low_mean_md = 0;
  int n_passes = 0;
  std::uint64_t seed = 0;
  std::vector<BlockPassRecord> manifest;
};

namespace detail {

// Extracts one 4-channel input block as an NdArray; blocks are produced by
// volume tiling so missing voxels (pad case) are zero.
template <typename T>
inline nn::NdArrayT<T> block_to_ndarray(const Volume& block) {
  nn::NdArrayT<T> out(
      {block.channels, block.dims.nx, block.dims.ny, block.dims.nz});
  for (std::size_t i = 0; i < block.data.size(); ++i)
    out.data[i] = static_cast<T>(block.data[i]);
  return out;
}

inline Volume channel_to_volume(const Ensemble& ens, int channel, Dims dims,
                                std::array<float, 3> vox, bool clamp01) {
  Volume v(1, dims, vox);
  const std::size_t nvox = dims.voxels();
  for (std::size_t i = 0; i < nvox; ++i) {
    float val = static_cast<float>(ens.mean_at(static_cast<std::size_t>(channel) * nvox + i));
    if (clamp01) val = std::clamp(val, 0.0f, 1.0f);
    v.data[i] = val;
  }
  return v;
}

}  // namespace detail

namespace detail {

inline void parallel_for(std::size_t n, int workers,
                         const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const int nw = std::min<int>(workers, static_cast<int>(n));
  pool.reserve(nw);
  for (int w = 0; w < nw; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace detail

inline constexpr std::uint64_t kInferBlockDomain = 8;

inline std::uint64_t block_seed(std::uint64_t seed, std::size_t block_index) {
  return rng::stream_key(seed, kInferBlockDomain, block_index);
}

// Full-volume MC inference: tile the input, run n_passes stochastic
// passes per block, stitch per-block means and CoVs with overlap
// averaging, and zero everything outside the mask. Per-block pass seeds
// derive from (seed, block index) and are logged in the manifest, so a
// rerun with the same seed is bit-identical. Blocks are independent units
// of work; `workers` distributes them without changing any output.
template <typename Net>
InferenceResult infer_volume(const Net& net, const Volume& input, const Mask& mask,
                             const BlockSpec& spec, int n_passes, std::uint64_t seed,
                             double cov_epsilon = 1e-6, int workers = 1) {
  if (n_passes < 1) throw NumericError("infer_volume: n_passes must be >= 1");
  const auto blocks = extract_blocks(input, mask, spec, /*drop_empty=*/false);
  const bool want_cov = n_passes >= 2;

  std::vector<Volume> mean_blocks(blocks.size());
  std::vector<Volume> cov_blocks(want_cov ? blocks.size() : 0);

  detail::parallel_for(blocks.size(), workers, [&](std::size_t i) {
    const auto x = detail::block_to_ndarray<float>(blocks[i].vol);
    const Ensemble ens = mc_predict(net, x, n_passes, block_seed(seed, i));
    const int C = ens.shape()[0];
    const Dims bd = blocks[i].vol.dims;
    Volume mean_vol(C, bd, input.voxel_size_mm);
    for (std::size_t e = 0; e < ens.numel(); ++e)
      mean_vol.data[e] = static_cast<float>(ens.mean_at(e));
    mean_blocks[i] = std::move(mean_vol);
    if (want_cov)
      cov_blocks[i] =
          uncertainty_map(ens, blocks[i].mask_block, cov_epsilon, input.voxel_size_mm)
              .cov;
  });

  std::vector<PlacedBlock> placed(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i)
    placed[i] = {&mean_blocks[i], blocks[i].origin};
  Volume mean = stitch_blocks(placed, input.dims, input.voxel_size_mm);

  InferenceResult res;
  res.n_passes = n_passes;
  res.seed = seed;
  const std::size_t nvox = input.dims.voxels();

  res.fa_mean = Volume(1, input.dims, input.voxel_size_mm);
  res.md_mean = Volume(1, input.dims, input.voxel_size_mm);
  for (std::size_t v = 0; v < nvox; ++v) {
    if (!mask.bits[v]) continue;
    res.fa_mean.data[v] = std::clamp(mean.data[v], 0.0f, 1.0f);
    res.md_mean.data[v] = mean.data[nvox + v];
    if (std::abs(mean.data[v]) < cov_epsilon) ++res.low_mean_fa;
    if (std::abs(mean.data[nvox + v]) < cov_epsilon) ++res.low_mean_md;
  }

  if (want_cov) {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      placed[i] = {&cov_blocks[i], blocks[i].origin};
    Volume cov = stitch_blocks(placed, input.dims, input.voxel_size_mm);
    res.fa_cov = Volume(1, input.dims, input.voxel_size_mm);
    res.md_cov = Volume(1, input.dims, input.voxel_size_mm);
    for (std::size_t v = 0; v < nvox; ++v) {
      if (!mask.bits[v]) continue;
      res.fa_cov.data[v] = cov.data[v];
      res.md_cov.data[v] = cov.data[nvox + v];
    }
    res.has_cov = true;
  }

  res.manifest.reserve(blocks.size() * static_cast<std::size_t>(n_passes));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::uint64_t bseed = block_seed(seed, i);
    for (int k = 0; k < n_passes; ++k)
      res.manifest.push_back(
          {blocks[i].origin, static_cast<std::uint64_t>(k),
           rng::stream_key(bseed, static_cast<std::uint64_t>(rng::Domain::McDropout),
                           static_cast<std::uint64_t>(k), 0)});
  }
  return res;
}

}  // namespace mcdti::mc
