#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcdti/errors.hpp"
#include "mcdti/layers.hpp"
#include "mcdti/ndarray.hpp"
#include "mcdti/rng.hpp"
#include "mcdti/volume.hpp"

namespace mcdti::nn {

// 3D U-Net with dropout on the decoding path. Encoder level i runs two
// 3x3x3 conv+ReLU pairs at base*2^i channels followed by 2x2x2 max
// pooling; the decoder mirrors it with a stride-2 transposed conv, skip
// concatenation and two conv+ReLU+dropout pairs; a final 1x1x1 conv maps
// to (FA, MD). With dropout_rate 0 this is a plain U-Net.
struct DUNetConfig {
  int depth = 5;
  int base_kernels = 32;
  int in_channels = 4;
  int out_channels = 2;
  double dropout_rate = 0.0;
  int block_size = 64;

  void validate() const {
    if (depth < 2) throw DimensionError("dunet: depth must be >= 2");
    if (base_kernels < 1) throw DimensionError("dunet: base_kernels must be >= 1");
    if (in_channels < 1 || out_channels < 1)
      throw DimensionError("dunet: channel counts must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate > 0.7)
      throw DimensionError("dunet: dropout_rate must be in [0, 0.7], got " +
                           std::to_string(dropout_rate));
    const int div = 1 << (depth - 1);
    if (block_size < div || block_size % div != 0)
      throw DimensionError("dunet: block_size " + std::to_string(block_size) +
                           " is not divisible by 2^(depth-1) = " + std::to_string(div));
  }

  int channels_at(int level) const { return base_kernels << level; }
};

enum class RunMode { Train, McInfer, Deterministic };

template <typename T>
struct ParamT {
  std::string name;
  NdArrayT<T> value;
  NdArrayT<T> grad;
};

template <typename T>
class DUNetT {
 public:
  static DUNetT build(const DUNetConfig& cfg, std::uint64_t init_seed) {
    cfg.validate();
    DUNetT net;
    net.cfg_ = cfg;
    net.init_seed_ = init_seed;

    const int d = cfg.depth;
    for (int i = 0; i < d; ++i) {
      const int in_ch = i == 0 ? cfg.in_channels : cfg.channels_at(i - 1);
      const int ch = cfg.channels_at(i);
      net.add_conv("enc" + std::to_string(i) + ".conv_a", ch, in_ch, 3);
      net.add_conv("enc" + std::to_string(i) + ".conv_b", ch, ch, 3);
    }
    for (int i = d - 2; i >= 0; --i) {
      const int ch = cfg.channels_at(i);
      const int deep_ch = cfg.channels_at(i + 1);
      net.add_convtranspose("dec" + std::to_string(i) + ".up", deep_ch, ch);
      net.add_conv("dec" + std::to_string(i) + ".conv_a", ch, 2 * ch, 3);
      net.add_conv("dec" + std::to_string(i) + ".conv_b", ch, ch, 3);
    }
    net.add_conv("head", cfg.out_channels, cfg.channels_at(0), 1);

    for (std::size_t p = 0; p < net.params_.size(); ++p)
      net.init_param(p, init_seed);
    return net;
  }

  const DUNetConfig& config() const { return cfg_; }
  std::uint64_t init_seed() const { return init_seed_; }
  void set_dropout_rate(double p) {
    DUNetConfig c = cfg_;
    c.dropout_rate = p;
    c.validate();
    cfg_ = c;
  }

  std::vector<ParamT<T>>& params() { return params_; }
  const std::vector<ParamT<T>>& params() const { return params_; }

  // Structural dropout sites: two per decoder level.
  std::size_t dropout_sites() const {
    return 2 * static_cast<std::size_t>(cfg_.depth - 1);
  }
  std::size_t active_dropout_sites() const {
    return cfg_.dropout_rate > 0.0 ? dropout_sites() : 0;
  }

  static std::size_t param_count(const DUNetConfig& cfg) {
    cfg.validate();
    std::size_t n = 0;
    auto conv = [&](int out, int in, int k) {
      n += static_cast<std::size_t>(out) * in * k * k * k + out;
    };
    for (int i = 0; i < cfg.depth; ++i) {
      const int in_ch = i == 0 ? cfg.in_channels : cfg.channels_at(i - 1);
      conv(cfg.channels_at(i), in_ch, 3);
      conv(cfg.channels_at(i), cfg.channels_at(i), 3);
    }
    for (int i = cfg.depth - 2; i >= 0; --i) {
      conv(cfg.channels_at(i), cfg.channels_at(i + 1), 2);  // transpose: in*out*8 + out
      conv(cfg.channels_at(i), 2 * cfg.channels_at(i), 3);
      conv(cfg.channels_at(i), cfg.channels_at(i), 3);
    }
    conv(cfg.out_channels, cfg.channels_at(0), 1);
    return n;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  // Training forward: samples dropout from (seed, TrainDropout, tag, site)
  // and records the tape consumed by backward().
  NdArrayT<T> forward(const NdArrayT<T>& x, RunMode mode, std::uint64_t seed = 0,
                      std::uint64_t tag = 0) {
    if (mode == RunMode::Train) {
      tape_.clear();
      return run(x, mode, seed, tag, &tape_);
    }
    return run(x, mode, seed, tag, nullptr);
  }

  // Deterministic forward: no RNG is touched regardless of dropout_rate.
  NdArrayT<T> predict(const NdArrayT<T>& x) const {
    return run(x, RunMode::Deterministic, 0, 0, nullptr);
  }

  // One stochastic MC pass; masks depend only on (seed, pass, site), so
  // passes are reproducible and order-independent.
  NdArrayT<T> predict_mc(const NdArrayT<T>& x, std::uint64_t seed,
                         std::uint64_t pass) const {
    return run(x, RunMode::McInfer, seed, pass, nullptr);
  }

  // Accumulates parameter gradients for the last Train forward.
  void backward(const NdArrayT<T>& dloss_dpred) {
    if (tape_.empty())
      throw NumericError("dunet backward: no recorded training forward pass");
    NdArrayT<T> g = dloss_dpred;
    std::vector<NdArrayT<T>> skip_grads(cfg_.depth - 1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      TapeStep& st = *it;
      switch (st.kind) {
        case OpKind::Conv: {
          auto grads = conv3d_backward(g, st.saved_input, params_[st.param].value);
          accumulate(params_[st.param].grad, grads.dw);
          accumulate(params_[st.param + 1].grad, grads.db);
          g = std::move(grads.dx);
          break;
        }
        case OpKind::ConvTranspose: {
          auto grads =
              convtranspose3d_backward(g, st.saved_input, params_[st.param].value);
          accumulate(params_[st.param].grad, grads.dw);
          accumulate(params_[st.param + 1].grad, grads.db);
          g = std::move(grads.dx);
          break;
        }
        case OpKind::Relu:
          g = relu_backward(g, st.saved_input);
          break;
        case OpKind::MaxPool:
          g = maxpool3d_backward(g, st.argmax, st.pool_in_shape);
          break;
        case OpKind::Dropout:
          g = dropout_backward(g, st.mask, cfg_.dropout_rate);
          break;
        case OpKind::Concat: {
          auto [g_up, g_skip] = split_channels(g, st.concat_first);
          skip_grads[st.slot] = std::move(g_skip);
          g = std::move(g_up);
          break;
        }
        case OpKind::SkipStore: {
          accumulate(g, skip_grads[st.slot]);
          break;
        }
      }
    }
    tape_.clear();
  }

  void zero_grads() {
    for (auto& p : params_)
      std::fill(p.grad.data.begin(), p.grad.data.end(), T(0));
  }

  template <typename U>
  DUNetT<U> cast() const {
    DUNetT<U> out;
    out.cfg_ = cfg_;
    out.init_seed_ = init_seed_;
    out.params_.reserve(params_.size());
    for (const auto& p : params_)
      out.params_.push_back(
          {p.name, p.value.template cast<U>(), p.grad.template cast<U>()});
    return out;
  }

 private:
  template <typename U>
  friend class DUNetT;

  enum class OpKind { Conv, ConvTranspose, Relu, MaxPool, Dropout, Concat, SkipStore };

  struct TapeStep {
    OpKind kind;
    int param = -1;
    NdArrayT<T> saved_input;
    std::vector<std::int32_t> argmax;
    std::vector<int> pool_in_shape;
    std::vector<std::uint8_t> mask;
    int concat_first = 0;
    int slot = -1;
  };

  static void accumulate(NdArrayT<T>& dst, const NdArrayT<T>& src) {
    check_same_shape(dst, src, "dunet accumulate");
    for (std::size_t i = 0; i < dst.numel(); ++i) dst.data[i] += src.data[i];
  }

  void add_conv(const std::string& name, int out_ch, int in_ch, int k) {
    params_.push_back({name + ".w", NdArrayT<T>({out_ch, in_ch, k, k, k}),
                       NdArrayT<T>({out_ch, in_ch, k, k, k})});
    params_.push_back({name + ".b", NdArrayT<T>({out_ch}), NdArrayT<T>({out_ch})});
  }

  void add_convtranspose(const std::string& name, int in_ch, int out_ch) {
    params_.push_back({name + ".w", NdArrayT<T>({in_ch, out_ch, 2, 2, 2}),
                       NdArrayT<T>({in_ch, out_ch, 2, 2, 2})});
    params_.push_back({name + ".b", NdArrayT<T>({out_ch}), NdArrayT<T>({out_ch})});
  }

  // He (fan-in) normal init for weights, zero biases. Each tensor draws
  // from its own stream keyed by registry position, so two builds from one
  // seed are identical.
  void init_param(std::size_t index, std::uint64_t seed) {
    auto& p = params_[index];
    if (p.value.shape.size() == 1) return;  // bias stays zero
    std::size_t fan_in;
    if (p.value.shape[2] == 2) {
      // transposed conv: each output voxel receives one tap per in-channel
      fan_in = static_cast<std::size_t>(p.value.shape[0]);
    } else {
      fan_in = static_cast<std::size_t>(p.value.shape[1]) * p.value.shape[2] *
               p.value.shape[3] * p.value.shape[4];
    }
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    auto stream = rng::make_stream(seed, rng::Domain::WeightInit, index);
    for (auto& v : p.value.data) v = static_cast<T>(stddev * stream.next_gaussian());
  }

  int param_index(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return static_cast<int>(i);
    throw NumericError("dunet: unknown parameter " + name);
  }

  NdArrayT<T> run(const NdArrayT<T>& x, RunMode mode, std::uint64_t seed,
                  std::uint64_t tag, std::vector<TapeStep>* tape) const {
    if (x.shape.size() != 4 || x.shape[0] != cfg_.in_channels ||
        x.shape[1] != cfg_.block_size || x.shape[2] != cfg_.block_size ||
        x.shape[3] != cfg_.block_size)
      throw DimensionError("dunet forward: expected input (" +
                           std::to_string(cfg_.in_channels) + "," +
                           std::to_string(cfg_.block_size) + "^3), got " + x.shape_str());

    const bool dropout_active =
        mode != RunMode::Deterministic && cfg_.dropout_rate > 0.0;
    const rng::Domain domain =
        mode == RunMode::Train ? rng::Domain::TrainDropout : rng::Domain::McDropout;
    std::size_t site = 0;

    auto conv_step = [&](const std::string& name, NdArrayT<T> h) {
      const int pi = param_index(name + ".w");
      NdArrayT<T> out = conv3d(h, params_[pi].value, params_[pi + 1].value);
      if (tape) {
        TapeStep st;
        st.kind = OpKind::Conv;
        st.param = pi;
        st.saved_input = std::move(h);
        tape->push_back(std::move(st));
      }
      return out;
    };
    auto relu_step = [&](NdArrayT<T> h) {
      NdArrayT<T> out = relu(h);
      if (tape) {
        TapeStep st;
        st.kind = OpKind::Relu;
        st.saved_input = std::move(h);
        tape->push_back(std::move(st));
      }
      return out;
    };
    auto dropout_step = [&](NdArrayT<T> h) {
      if (!dropout_active) {
        ++site;
        return h;
      }
      auto stream = rng::make_stream(seed, domain, tag, site);
      ++site;
      auto mask = sample_dropout_mask(h.numel(), cfg_.dropout_rate, stream);
      NdArrayT<T> out = dropout_apply(h, mask, cfg_.dropout_rate);
      if (tape) {
        TapeStep st;
        st.kind = OpKind::Dropout;
        st.mask = std::move(mask);
        tape->push_back(std::move(st));
      }
      return out;
    };

    std::vector<NdArrayT<T>> skips(cfg_.depth - 1);
    NdArrayT<T> h = x;
    for (int i = 0; i < cfg_.depth; ++i) {
      h = relu_step(conv_step("enc" + std::to_string(i) + ".conv_a", std::move(h)));
      h = relu_step(conv_step("enc" + std::to_string(i) + ".conv_b", std::move(h)));
      if (i < cfg_.depth - 1) {
        skips[i] = h;
        if (tape) {
          TapeStep st;
          st.kind = OpKind::SkipStore;
          st.slot = i;
          tape->push_back(std::move(st));
        }
        auto pooled = maxpool3d(h);
        if (tape) {
          TapeStep st;
          st.kind = OpKind::MaxPool;
          st.argmax = std::move(pooled.argmax);
          st.pool_in_shape = h.shape;
          tape->push_back(std::move(st));
        }
        h = std::move(pooled.y);
      }
    }

    for (int i = cfg_.depth - 2; i >= 0; --i) {
      const std::string dec = "dec" + std::to_string(i);
      const int pi = param_index(dec + ".up.w");
      NdArrayT<T> up = convtranspose3d(h, params_[pi].value, params_[pi + 1].value);
      if (tape) {
        TapeStep st;
        st.kind = OpKind::ConvTranspose;
        st.param = pi;
        st.saved_input = std::move(h);
        tape->push_back(std::move(st));
      }
      const int up_channels = up.shape[0];
      h = concat_channels(up, skips[i]);
      if (tape) {
        TapeStep st;
        st.kind = OpKind::Concat;
        st.concat_first = up_channels;
        st.slot = i;
        tape->push_back(std::move(st));
      }
      h = dropout_step(relu_step(conv_step(dec + ".conv_a", std::move(h))));
      h = dropout_step(relu_step(conv_step(dec + ".conv_b", std::move(h))));
    }

    return conv_step("head", std::move(h));
  }

  DUNetConfig cfg_;
  std::uint64_t init_seed_ = 0;
  std::vector<ParamT<T>> params_;
  std::vector<TapeStep> tape_;
};

using DUNet = DUNetT<float>;

// L1 loss over masked voxels of both channels, normalized by
// 2 * popcount(mask); the subgradient at zero difference is zero.
template <typename T>
std::pair<T, NdArrayT<T>> masked_l1(const NdArrayT<T>& pred, const NdArrayT<T>& target,
                                    const Mask& mask) {
  check_same_shape(pred, target, "masked_l1");
  if (pred.shape.size() != 4 || pred.shape[1] != mask.dims.nx ||
      pred.shape[2] != mask.dims.ny || pred.shape[3] != mask.dims.nz)
    throw DimensionError("masked_l1: mask dims " + mask.dims.str() +
                         " do not match prediction " + pred.shape_str());
  const std::size_t m = mask.popcount();
  if (m == 0) throw DimensionError("masked_l1: empty mask");

  const int C = pred.shape[0];
  const std::size_t nvox = mask.dims.voxels();
  const T norm = static_cast<T>(1.0 / (static_cast<double>(C) * m));
  NdArrayT<T> grad(pred.shape);
  double loss = 0.0;
  for (int c = 0; c < C; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * nvox;
    for (std::size_t v = 0; v < nvox; ++v) {
      if (!mask.bits[v]) continue;
      const T diff = pred.data[base + v] - target.data[base + v];
      loss += std::abs(static_cast<double>(diff));
      grad.data[base + v] = diff > T(0) ? norm : (diff < T(0) ? -norm : T(0));
    }
  }
  return {static_cast<T>(loss / (static_cast<double>(C) * m)), std::move(grad)};
}

// --- checkpoint serialization (float32, little-endian, byte-exact) ---

namespace ckpt_detail {

inline constexpr char kMagic[8] = {'M', 'C', 'D', 'T', 'I', 'C', 'K', 'P'};
inline constexpr std::uint32_t kVersion = 1;

template <typename V>
inline void put(std::vector<std::byte>& out, const V& v) {
  const std::size_t n = out.size();
  out.resize(n + sizeof(V));
  std::memcpy(out.data() + n, &v, sizeof(V));
}

template <typename V>
inline V take(std::span<const std::byte> bytes, std::size_t& pos) {
  if (pos + sizeof(V) > bytes.size())
    throw FormatError("checkpoint truncated at byte " + std::to_string(pos));
  V v;
  std::memcpy(&v, bytes.data() + pos, sizeof(V));
  pos += sizeof(V);
  return v;
}

}  // namespace ckpt_detail

inline std::vector<std::byte> save_checkpoint_bytes(const DUNetT<float>& net) {
  using namespace ckpt_detail;
  std::vector<std::byte> out;
  out.insert(out.end(), reinterpret_cast<const std::byte*>(kMagic),
             reinterpret_cast<const std::byte*>(kMagic) + 8);
  put(out, kVersion);
  const auto& cfg = net.config();
  put(out, static_cast<std::int32_t>(cfg.depth));
  put(out, static_cast<std::int32_t>(cfg.base_kernels));
  put(out, static_cast<std::int32_t>(cfg.in_channels));
  put(out, static_cast<std::int32_t>(cfg.out_channels));
  put(out, cfg.dropout_rate);
  put(out, static_cast<std::int32_t>(cfg.block_size));
  put(out, static_cast<std::uint64_t>(net.init_seed()));
  put(out, static_cast<std::uint32_t>(net.params().size()));
  for (const auto& p : net.params()) {
    put(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), reinterpret_cast<const std::byte*>(p.name.data()),
               reinterpret_cast<const std::byte*>(p.name.data() + p.name.size()));
    put(out, static_cast<std::uint32_t>(p.value.shape.size()));
    for (int d : p.value.shape) put(out, static_cast<std::int32_t>(d));
    const std::size_t n = out.size();
    out.resize(n + p.value.data.size() * sizeof(float));
    std::memcpy(out.data() + n, p.value.data.data(), p.value.data.size() * sizeof(float));
  }
  return out;
}

inline DUNetT<float> load_checkpoint_bytes(std::span<const std::byte> bytes) {
  using namespace ckpt_detail;
  std::size_t pos = 0;
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic");
  pos = 8;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  DUNetConfig cfg;
  cfg.depth = take<std::int32_t>(bytes, pos);
  cfg.base_kernels = take<std::int32_t>(bytes, pos);
  cfg.in_channels = take<std::int32_t>(bytes, pos);
  cfg.out_channels = take<std::int32_t>(bytes, pos);
  cfg.dropout_rate = take<double>(bytes, pos);
  cfg.block_size = take<std::int32_t>(bytes, pos);
  const auto init_seed = take<std::uint64_t>(bytes, pos);

  DUNetT<float> net = DUNetT<float>::build(cfg, init_seed);
  const auto n_tensors = take<std::uint32_t>(bytes, pos);
  if (n_tensors != net.params().size())
    throw FormatError("checkpoint: expected " + std::to_string(net.params().size()) +
                      " tensors, file has " + std::to_string(n_tensors));
  for (auto& p : net.params()) {
    const auto name_len = take<std::uint32_t>(bytes, pos);
    if (pos + name_len > bytes.size()) throw FormatError("checkpoint: truncated name");
    const std::string name(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
    pos += name_len;
    if (name != p.name)
      throw FormatError("checkpoint: tensor `" + name + "` does not match expected `" +
                        p.name + "`");
    const auto ndim = take<std::uint32_t>(bytes, pos);
    if (ndim != p.value.shape.size()) throw FormatError("checkpoint: rank mismatch for " + name);
    for (std::size_t i = 0; i < ndim; ++i) {
      const auto d = take<std::int32_t>(bytes, pos);
      if (d != p.value.shape[i])
        throw FormatError("checkpoint: shape mismatch for " + name);
    }
    const std::size_t nbytes = p.value.data.size() * sizeof(float);
    if (pos + nbytes > bytes.size()) throw FormatError("checkpoint: truncated payload");
    std::memcpy(p.value.data.data(), bytes.data() + pos, nbytes);
    pos += nbytes;
  }
  if (pos != bytes.size())
    throw FormatError("checkpoint: " + std::to_string(bytes.size() - pos) +
                      " trailing bytes");
  return net;
}

inline std::size_t save_checkpoint(const DUNetT<float>& net, const std::string& path) {
  const auto bytes = save_checkpoint_bytes(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path);
  return bytes.size();
}

inline DUNetT<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw IoError("failed reading checkpoint: " + path);
  try {
    return load_checkpoint_bytes(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace mcdti::nn
