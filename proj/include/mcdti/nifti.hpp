#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mcdti/errors.hpp"
#include "mcdti/volume.hpp"

namespace mcdti {

static_assert(std::endian::native == std::endian::little,
              "nifti module assumes a little-endian host");

// Distinct failure modes of the reader.
class NiftiBadMagic : public FormatError {
 public:
  using FormatError::FormatError;
};
class NiftiUnsupportedDatatype : public FormatError {
 public:
  using FormatError::FormatError;
};
class NiftiTruncated : public FormatError {
 public:
  using FormatError::FormatError;
};

namespace nifti {

inline constexpr std::int16_t kDtUint8 = 2;
inline constexpr std::int16_t kDtInt16 = 4;
inline constexpr std::int16_t kDtFloat32 = 16;

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kVoxOffset = 352;

#pragma pack(push, 1)
struct Header {
  std::int32_t sizeof_hdr;     //   0
  char data_type[10];          //   4
  char db_name[18];            //  14
  std::int32_t extents;        //  32
  std::int16_t session_error;  //  36
  char regular;                //  38
  char dim_info;               //  39
  std::int16_t dim[8];         //  40
  float intent_p1;             //  56
  float intent_p2;             //  60
  float intent_p3;             //  64
  std::int16_t intent_code;    //  68
  std::int16_t datatype;       //  70
  std::int16_t bitpix;         //  72
  std::int16_t slice_start;    //  74
  float pixdim[8];             //  76
  float vox_offset;            // 108
  float scl_slope;             // 112
  float scl_inter;             // 116
  std::int16_t slice_end;      // 120
  char slice_code;             // 122
  char xyzt_units;             // 123
  float cal_max;               // 124
  float cal_min;               // 128
  float slice_duration;        // 132
  float toffset;               // 136
  std::int32_t glmax;          // 140
  std::int32_t glmin;          // 144
  char descrip[80];            // 148
  char aux_file[24];           // 228
  std::int16_t qform_code;     // 252
  std::int16_t sform_code;     // 254
  float quatern_b;             // 256
  float quatern_c;             // 260
  float quatern_d;             // 264
  float qoffset_x;             // 268
  float qoffset_y;             // 272
  float qoffset_z;             // 276
  float srow_x[4];             // 280
  float srow_y[4];             // 296
  float srow_z[4];             // 312
  char intent_name[16];        // 328
  char magic[4];               // 344
};
#pragma pack(pop)

static_assert(sizeof(Header) == kHeaderSize);
static_assert(offsetof(Header, dim) == 40);
static_assert(offsetof(Header, datatype) == 70);
static_assert(offsetof(Header, bitpix) == 72);
static_assert(offsetof(Header, pixdim) == 76);
static_assert(offsetof(Header, vox_offset) == 108);
static_assert(offsetof(Header, scl_slope) == 112);
static_assert(offsetof(Header, scl_inter) == 116);
static_assert(offsetof(Header, srow_x) == 280);
static_assert(offsetof(Header, magic) == 344);

struct File {
  Header header;
  Volume vol;
};

namespace detail {

inline Header make_header(int channels, Dims d, std::array<float, 3> vox,
                          std::int16_t datatype, std::int16_t bitpix) {
  for (int v : {d.nx, d.ny, d.nz, channels}) {
    if (v > 32767)
      throw DimensionError("write_nifti: dimension " + std::to_string(v) +
                           " exceeds the signed 16-bit limit");
  }
  Header h;
  std::memset(&h, 0, sizeof(h));
  h.sizeof_hdr = static_cast<std::int32_t>(kHeaderSize);
  h.regular = 'r';
  h.dim[0] = channels > 1 ? 4 : 3;
  h.dim[1] = static_cast<std::int16_t>(d.nx);
  h.dim[2] = static_cast<std::int16_t>(d.ny);
  h.dim[3] = static_cast<std::int16_t>(d.nz);
  h.dim[4] = static_cast<std::int16_t>(channels > 1 ? channels : 1);
  for (int i = 5; i < 8; ++i) h.dim[i] = 1;
  h.datatype = datatype;
  h.bitpix = bitpix;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = vox[0];
  h.pixdim[2] = vox[1];
  h.pixdim[3] = vox[2];
  h.pixdim[4] = 1.0f;
  h.vox_offset = static_cast<float>(kVoxOffset);
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  // Identity orientation with pixdim spacing; spatial semantics live in
  // pixdim only and our reader ignores these fields.
  h.sform_code = 1;
  h.srow_x[0] = vox[0];
  h.srow_y[1] = vox[1];
  h.srow_z[2] = vox[2];
  h.magic[0] = 'n';
  h.magic[1] = '+';
  h.magic[2] = '1';
  h.magic[3] = '\0';
  return h;
}

template <typename Raw>
inline void append_payload(std::vector<std::byte>& out, const std::vector<float>& data,
                           float scale = 1.0f) {
  const std::size_t start = out.size();
  out.resize(start + data.size() * sizeof(Raw));
  Raw* dst = reinterpret_cast<Raw*>(out.data() + start);
  for (std::size_t i = 0; i < data.size(); ++i)
    dst[i] = static_cast<Raw>(data[i] * scale);
}

}  // namespace detail

// Serializes a float32 volume: 348-byte header, 4 zero extension bytes,
// raw little-endian payload. Deterministic bytes for identical inputs.
inline std::vector<std::byte> write_nifti(const Volume& vol) {
  Header h = detail::make_header(vol.channels, vol.dims, vol.voxel_size_mm, kDtFloat32, 32);
  std::vector<std::byte> out(kVoxOffset, std::byte{0});
  std::memcpy(out.data(), &h, sizeof(h));
  const std::size_t start = out.size();
  out.resize(start + vol.data.size() * sizeof(float));
  std::memcpy(out.data() + start, vol.data.data(), vol.data.size() * sizeof(float));
  return out;
}

// Masks and label maps are stored as unsigned bytes.
inline std::vector<std::byte> write_nifti(const Mask& mask) {
  Header h = detail::make_header(1, mask.dims, {1.0f, 1.0f, 1.0f}, kDtUint8, 8);
  std::vector<std::byte> out(kVoxOffset, std::byte{0});
  std::memcpy(out.data(), &h, sizeof(h));
  out.insert(out.end(), reinterpret_cast<const std::byte*>(mask.bits.data()),
             reinterpret_cast<const std::byte*>(mask.bits.data() + mask.bits.size()));
  return out;
}

inline std::vector<std::byte> write_nifti(const TissueLabels& labels) {
  Header h = detail::make_header(1, labels.dims, {1.0f, 1.0f, 1.0f}, kDtUint8, 8);
  std::vector<std::byte> out(kVoxOffset, std::byte{0});
  std::memcpy(out.data(), &h, sizeof(h));
  out.insert(out.end(), reinterpret_cast<const std::byte*>(labels.labels.data()),
             reinterpret_cast<const std::byte*>(labels.labels.data() + labels.labels.size()));
  return out;
}

// Parses a little-endian NIfTI-1 byte stream holding uint8, int16 or
// float32 data. The 4th dimension maps to channels; scl_slope/scl_inter
// are applied when the slope is neither 0 nor 1.
inline File read_nifti(std::span<const std::byte> bytes) {
  if (bytes.size() < kVoxOffset)
    throw NiftiTruncated("nifti stream shorter than " + std::to_string(kVoxOffset) +
                         " bytes (got " + std::to_string(bytes.size()) + ")");
  Header h;
  std::memcpy(&h, bytes.data(), sizeof(h));
  if (h.sizeof_hdr != static_cast<std::int32_t>(kHeaderSize)) {
    const auto swapped = static_cast<std::int32_t>(
        __builtin_bswap32(static_cast<std::uint32_t>(h.sizeof_hdr)));
    if (swapped == static_cast<std::int32_t>(kHeaderSize))
      throw FormatError("big-endian nifti files are not supported");
    throw FormatError("bad sizeof_hdr " + std::to_string(h.sizeof_hdr) + ", expected 348");
  }
  if (!(h.magic[0] == 'n' && h.magic[1] == '+' && h.magic[2] == '1' && h.magic[3] == '\0'))
    throw NiftiBadMagic("bad magic, expected \"n+1\" single-file format");
  if (h.dim[0] != 3 && h.dim[0] != 4)
    throw FormatError("unsupported dim[0]=" + std::to_string(h.dim[0]) +
                      ", expected 3 or 4");

  const Dims d{h.dim[1], h.dim[2], h.dim[3]};
  const int channels = h.dim[0] == 4 ? h.dim[4] : 1;
  if (d.nx < 1 || d.ny < 1 || d.nz < 1 || channels < 1)
    throw FormatError("non-positive dimension in header");

  std::size_t elem_size = 0;
  switch (h.datatype) {
    case kDtUint8: elem_size = 1; break;
    case kDtInt16: elem_size = 2; break;
    case kDtFloat32: elem_size = 4; break;
    default:
      throw NiftiUnsupportedDatatype("unsupported datatype code " +
                                     std::to_string(h.datatype));
  }

  const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
  const std::size_t n = static_cast<std::size_t>(channels) * d.voxels();
  if (bytes.size() < offset + n * elem_size)
    throw NiftiTruncated("payload truncated: need " +
                         std::to_string(offset + n * elem_size) + " bytes, got " +
                         std::to_string(bytes.size()));

  std::array<float, 3> vox = {h.pixdim[1], h.pixdim[2], h.pixdim[3]};
  for (auto& v : vox)
    if (!(v > 0.0f)) v = 1.0f;

  File f{h, Volume(channels, d, vox)};
  const std::byte* p = bytes.data() + offset;
  switch (h.datatype) {
    case kDtUint8: {
      const auto* src = reinterpret_cast<const std::uint8_t*>(p);
      for (std::size_t i = 0; i < n; ++i) f.vol.data[i] = static_cast<float>(src[i]);
      break;
    }
    case kDtInt16: {
      const auto* src = reinterpret_cast<const std::int16_t*>(p);
      for (std::size_t i = 0; i < n; ++i) f.vol.data[i] = static_cast<float>(src[i]);
      break;
    }
    case kDtFloat32: {
      std::memcpy(f.vol.data.data(), p, n * sizeof(float));
      break;
    }
  }
  if (h.scl_slope != 0.0f && h.scl_slope != 1.0f) {
    for (auto& v : f.vol.data) v = v * h.scl_slope + h.scl_inter;
  }
  return f;
}

inline Mask to_mask(const Volume& vol) {
  if (vol.channels != 1)
    throw FormatError("mask file must have a single channel, got " +
                      std::to_string(vol.channels));
  Mask m(vol.dims);
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    const float v = vol.data[i];
    if (v != 0.0f && v != 1.0f)
      throw FormatError("mask voxel value " + std::to_string(v) + " is not 0 or 1");
    m.bits[i] = v != 0.0f;
  }
  return m;
}

inline TissueLabels to_labels(const Volume& vol) {
  if (vol.channels != 1)
    throw FormatError("label file must have a single channel, got " +
                      std::to_string(vol.channels));
  TissueLabels l(vol.dims);
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    const float v = vol.data[i];
    const int iv = static_cast<int>(v);
    if (static_cast<float>(iv) != v || iv < 0 || iv >= kTissueCount)
      throw FormatError("label voxel value " + std::to_string(v) +
                        " is not an integer in [0,5]");
    l.labels[i] = static_cast<std::uint8_t>(iv);
  }
  return l;
}

inline std::vector<std::byte> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw IoError("failed reading file: " + path);
  return bytes;
}

inline File read_file(const std::string& path) {
  const auto bytes = read_bytes(path);
  try {
    return read_nifti(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

template <typename T>
inline std::size_t write_file(const T& obj, const std::string& path) {
  const auto bytes = write_nifti(obj);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing file: " + path);
  return bytes.size();
}

}  // namespace nifti
}  // namespace mcdti
