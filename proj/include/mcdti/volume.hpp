#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mcdti/errors.hpp"

namespace mcdti {

struct Dims {
  int nx = 0, ny = 0, nz = 0;

  bool operator==(const Dims&) const = default;
  std::size_t voxels() const {
    return static_cast<std::size_t>(nx) * ny * nz;
  }
  int operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  std::string str() const {
    std::ostringstream os;
    os << nx << "x" << ny << "x" << nz;
    return os.str();
  }
};

// Dense 4-D voxel grid, channel-major with z fastest:
// index = ((c*nx + x)*ny + y)*nz + z. Carrier for DWIs, FA/MD maps and
// uncertainty maps.
struct Volume {
  int channels = 0;
  Dims dims;
  std::array<float, 3> voxel_size_mm = {1.0f, 1.0f, 1.0f};
  std::vector<float> data;

  Volume() = default;
  Volume(int c, Dims d, std::array<float, 3> vox = {1.0f, 1.0f, 1.0f})
      : channels(c), dims(d), voxel_size_mm(vox), data(c * d.voxels(), 0.0f) {
    if (c <= 0 || d.nx <= 0 || d.ny <= 0 || d.nz <= 0)
      throw DimensionError("Volume: channels and dims must be positive, got c=" +
                           std::to_string(c) + " dims=" + d.str());
    if (vox[0] <= 0.0f || vox[1] <= 0.0f || vox[2] <= 0.0f)
      throw DimensionError("Volume: voxel size components must be > 0");
  }

  std::size_t index(int c, int x, int y, int z) const {
    return ((static_cast<std::size_t>(c) * dims.nx + x) * dims.ny + y) * dims.nz + z;
  }
  float at(int c, int x, int y, int z) const { return data[index(c, x, y, z)]; }
  float& at(int c, int x, int y, int z) { return data[index(c, x, y, z)]; }

  std::span<float> channel(int c) {
    return std::span<float>(data).subspan(static_cast<std::size_t>(c) * dims.voxels(),
                                          dims.voxels());
  }
  std::span<const float> channel(int c) const {
    return std::span<const float>(data).subspan(
        static_cast<std::size_t>(c) * dims.voxels(), dims.voxels());
  }
};

// One boolean per voxel; gates losses, fits and statistics.
struct Mask {
  Dims dims;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  explicit Mask(Dims d, bool fill = false)
      : dims(d), bits(d.voxels(), fill ? 1 : 0) {}

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * dims.ny + y) * dims.nz + z;
  }
  bool get(int x, int y, int z) const { return bits[index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool v) { bits[index(x, y, z)] = v ? 1 : 0; }

  std::size_t popcount() const {
    std::size_t n = 0;
    for (auto b : bits) n += (b != 0);
    return n;
  }
};

// Small unsigned label per voxel; 0 is background.
enum class Tissue : std::uint8_t {
  Background = 0,
  WhiteMatter = 1,
  CorticalGray = 2,
  DeepGray = 3,
  Csf = 4,
  CorpusCallosum = 5,
};
inline constexpr int kTissueCount = 6;

inline const char* tissue_name(Tissue t) {
  switch (t) {
    case Tissue::Background: return "background";
    case Tissue::WhiteMatter: return "white_matter";
    case Tissue::CorticalGray: return "cortical_gm";
    case Tissue::DeepGray: return "deep_gm";
    case Tissue::Csf: return "csf";
    case Tissue::CorpusCallosum: return "corpus_callosum";
  }
  return "unknown";
}

struct TissueLabels {
  Dims dims;
  std::vector<std::uint8_t> labels;

  TissueLabels() = default;
  explicit TissueLabels(Dims d) : dims(d), labels(d.voxels(), 0) {}

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * dims.ny + y) * dims.nz + z;
  }
  Tissue get(int x, int y, int z) const {
    return static_cast<Tissue>(labels[index(x, y, z)]);
  }
  void set(int x, int y, int z, Tissue t) {
    labels[index(x, y, z)] = static_cast<std::uint8_t>(t);
  }
};

// Block tiling parameters; 1 <= stride <= block componentwise.
struct BlockSpec {
  Dims block;
  Dims stride;

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (stride[a] < 1 || stride[a] > block[a])
        throw DimensionError("BlockSpec: stride must satisfy 1 <= stride <= block on axis " +
                             std::to_string(a));
    }
  }
};

struct ExtractedBlock {
  Volume vol;
  std::array<int, 3> origin = {0, 0, 0};
  Mask mask_block;
};

namespace detail {

// Deterministic 1-D origin list: multiples of the stride, with the last
// origin clamped so the final block ends exactly at the boundary. When the
// extent is smaller than the block there is a single origin 0 and callers
// zero-pad.
inline std::vector<int> block_origins_1d(int extent, int block, int stride) {
  std::vector<int> origins;
  if (extent <= block) {
    origins.push_back(0);
    return origins;
  }
  const int last = extent - block;
  for (int a = 0;; a += stride) {
    if (a >= last) {
      origins.push_back(last);
      break;
    }
    origins.push_back(a);
  }
  return origins;
}

}  // namespace detail

// Tiles `vol` into blocks of spec.block at spec.stride. Every in-volume
// voxel is covered by at least one block; blocks whose mask is all false
// are dropped when drop_empty is set. Voxels outside the volume (only
// possible when dims < block) read as zero with a false mask.
inline std::vector<ExtractedBlock> extract_blocks(const Volume& vol, const Mask& mask,
                                                  const BlockSpec& spec,
                                                  bool drop_empty = false) {
  spec.validate();
  if (mask.dims != vol.dims)
    throw DimensionError("extract_blocks: mask dims " + mask.dims.str() +
                         " do not match volume dims " + vol.dims.str());

  const auto ox = detail::block_origins_1d(vol.dims.nx, spec.block.nx, spec.stride.nx);
  const auto oy = detail::block_origins_1d(vol.dims.ny, spec.block.ny, spec.stride.ny);
  const auto oz = detail::block_origins_1d(vol.dims.nz, spec.block.nz, spec.stride.nz);

  std::vector<ExtractedBlock> out;
  out.reserve(ox.size() * oy.size() * oz.size());
  for (int bx : ox)
    for (int by : oy)
      for (int bz : oz) {
        ExtractedBlock eb;
        eb.origin = {bx, by, bz};
        eb.vol = Volume(vol.channels, spec.block, vol.voxel_size_mm);
        eb.mask_block = Mask(spec.block, false);
        bool any = false;
        for (int x = 0; x < spec.block.nx; ++x) {
          const int sx = bx + x;
          if (sx >= vol.dims.nx) continue;
          for (int y = 0; y < spec.block.ny; ++y) {
            const int sy = by + y;
            if (sy >= vol.dims.ny) continue;
            const int zn = std::min(spec.block.nz, vol.dims.nz - bz);
            for (int z = 0; z < zn; ++z) {
              const bool m = mask.get(sx, sy, bz + z);
              eb.mask_block.set(x, y, z, m);
              any = any || m;
            }
            for (int c = 0; c < vol.channels; ++c) {
              const float* src = vol.data.data() + vol.index(c, sx, sy, bz);
              float* dst = eb.vol.data.data() + eb.vol.index(c, x, y, 0);
              for (int z = 0; z < zn; ++z) dst[z] = src[z];
            }
          }
        }
        if (drop_empty && !any) continue;
        out.push_back(std::move(eb));
      }
  return out;
}

struct PlacedBlock {
  const Volume* vol;
  std::array<int, 3> origin;
};

// Reassembles a full volume from blocks; overlapping voxels hold the
// arithmetic mean of all covering values. Voxels a block would write
// outside `dims` are ignored (the zero-pad case). Throws if any voxel is
// left uncovered.
inline Volume stitch_blocks(std::span<const PlacedBlock> blocks, Dims dims,
                            std::array<float, 3> voxel_size_mm = {1.0f, 1.0f, 1.0f}) {
  if (blocks.empty()) throw DimensionError("stitch_blocks: no blocks given");
  const int channels = blocks.front().vol->channels;
  for (const auto& pb : blocks) {
    if (pb.vol->channels != channels)
      throw DimensionError("stitch_blocks: inconsistent channel counts");
    for (int a = 0; a < 3; ++a)
      if (pb.origin[a] < 0)
        throw DimensionError("stitch_blocks: negative origin on axis " + std::to_string(a));
  }

  std::vector<double> sum(static_cast<std::size_t>(channels) * dims.voxels(), 0.0);
  std::vector<std::uint32_t> count(dims.voxels(), 0);
  Volume out(channels, dims, voxel_size_mm);

  for (const auto& pb : blocks) {
    const Volume& b = *pb.vol;
    for (int x = 0; x < b.dims.nx; ++x) {
      const int sx = pb.origin[0] + x;
      if (sx >= dims.nx) continue;
      for (int y = 0; y < b.dims.ny; ++y) {
        const int sy = pb.origin[1] + y;
        if (sy >= dims.ny) continue;
        const int zn = std::min(b.dims.nz, dims.nz - pb.origin[2]);
        if (zn <= 0) continue;
        const std::size_t vox0 =
            (static_cast<std::size_t>(sx) * dims.ny + sy) * dims.nz + pb.origin[2];
        for (int z = 0; z < zn; ++z) count[vox0 + z] += 1;
        for (int c = 0; c < channels; ++c) {
          const float* src = b.data.data() + b.index(c, x, y, 0);
          double* dst = sum.data() + static_cast<std::size_t>(c) * dims.voxels() + vox0;
          for (int z = 0; z < zn; ++z) dst[z] += src[z];
        }
      }
    }
  }

  for (std::size_t v = 0; v < dims.voxels(); ++v) {
    if (count[v] == 0) {
      const int x = static_cast<int>(v / (static_cast<std::size_t>(dims.ny) * dims.nz));
      const int y = static_cast<int>((v / dims.nz) % dims.ny);
      const int z = static_cast<int>(v % dims.nz);
      throw DimensionError("stitch_blocks: voxel (" + std::to_string(x) + "," +
                           std::to_string(y) + "," + std::to_string(z) +
                           ") not covered by any block");
    }
  }
  for (int c = 0; c < channels; ++c) {
    const double* s = sum.data() + static_cast<std::size_t>(c) * dims.voxels();
    float* d = out.data.data() + static_cast<std::size_t>(c) * dims.voxels();
    for (std::size_t v = 0; v < dims.voxels(); ++v)
      d[v] = static_cast<float>(s[v] / count[v]);
  }
  return out;
}

// Values of one channel at mask-true voxels, in row-major order.
inline std::vector<float> masked_values(const Volume& vol, const Mask& mask, int channel) {
  if (mask.dims != vol.dims)
    throw DimensionError("masked_values: mask dims " + mask.dims.str() +
                         " do not match volume dims " + vol.dims.str());
  if (channel < 0 || channel >= vol.channels)
    throw DimensionError("masked_values: channel " + std::to_string(channel) +
                         " out of range [0," + std::to_string(vol.channels) + ")");
  std::vector<float> out;
  out.reserve(mask.popcount());
  const auto ch = vol.channel(channel);
  for (std::size_t v = 0; v < vol.dims.voxels(); ++v)
    if (mask.bits[v]) out.push_back(ch[v]);
  return out;
}

}  // namespace mcdti
