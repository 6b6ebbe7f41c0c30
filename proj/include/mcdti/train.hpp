#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mcdti/dunet.hpp"
#include "mcdti/errors.hpp"
#include "mcdti/mcdropout.hpp"
#include "mcdti/phantom.hpp"
#include "mcdti/rng.hpp"
#include "mcdti/volume.hpp"

namespace mcdti::train {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment estimates per parameter tensor plus the step count.
template <typename T>
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const std::vector<nn::ParamT<T>>& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.push_back(nn::NdArrayT<T>(p.value.shape));
      v_.push_back(nn::NdArrayT<T>(p.value.shape));
    }
  }
  explicit AdamState(const nn::DUNetT<T>& net) : AdamState(net.params()) {}

  std::uint64_t step_count() const { return t_; }

  // Bias-corrected update; gradients are consumed and zeroed.
  void step(std::vector<nn::ParamT<T>>& params, const AdamConfig& cfg) {
    if (m_.size() != params.size())
      throw DimensionError("adam_step: state does not match the parameter set");
    t_ += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto& p = params[pi];
      auto& m = m_[pi].data;
      auto& v = v_[pi].data;
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const double g = static_cast<double>(p.grad.data[i]);
        if (std::isnan(g))
          throw NumericError("adam_step: NaN gradient in parameter " + p.name);
        const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        p.value.data[i] -=
            static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
      }
      std::fill(p.grad.data.begin(), p.grad.data.end(), T(0));
    }
  }

  void step(nn::DUNetT<T>& net, const AdamConfig& cfg) { step(net.params(), cfg); }

 private:
  std::uint64_t t_ = 0;
  std::vector<nn::NdArrayT<T>> m_;
  std::vector<nn::NdArrayT<T>> v_;
};

template <typename T>
inline void adam_step(nn::DUNetT<T>& net, AdamState<T>& state,
                      const AdamConfig& cfg = {}) {
  state.step(net, cfg);
}

// Seed-deterministic disjoint split by block; the validation set takes
// round(frac * n) items, at least 1 and at most n-1.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

inline DatasetSplit split_dataset(std::size_t n, double val_fraction,
                                  std::uint64_t seed) {
  if (n < 2) throw DimensionError("split_dataset: need at least 2 blocks to split");
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw DimensionError("split_dataset: val_fraction must be in (0, 1)");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  auto stream = rng::make_stream(seed, rng::Domain::Split);
  for (std::size_t i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[stream.next_below(i + 1)]);
  const std::size_t n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n))), 1,
      n - 1);
  DatasetSplit s;
  s.val.assign(perm.begin(), perm.begin() + n_val);
  s.train.assign(perm.begin() + n_val, perm.end());
  return s;
}

// One masked training example: 4-channel input, 2-channel (FA, MD) target.
struct TrainingBlock {
  nn::NdArray input;
  nn::NdArray target;
  Mask mask;
};

// Tiles every dataset into mask-overlapping blocks at stride block/2.
inline std::vector<TrainingBlock> make_training_blocks(
    const std::vector<phantom::PhantomDataset>& datasets, int block_size) {
  std::vector<TrainingBlock> out;
  for (const auto& ds : datasets) {
    Volume target(2, ds.gt_fa.dims, ds.gt_fa.voxel_size_mm);
    std::copy(ds.gt_fa.data.begin(), ds.gt_fa.data.end(), target.data.begin());
    std::copy(ds.gt_md.data.begin(), ds.gt_md.data.end(),
              target.data.begin() + ds.gt_fa.data.size());

    const BlockSpec spec{{block_size, block_size, block_size},
                         {std::max(1, block_size / 2), std::max(1, block_size / 2),
                          std::max(1, block_size / 2)}};
    auto in_blocks = extract_blocks(ds.input_dwi, ds.mask, spec, /*drop_empty=*/true);
    auto tgt_blocks = extract_blocks(target, ds.mask, spec, /*drop_empty=*/true);
    for (std::size_t i = 0; i < in_blocks.size(); ++i) {
      TrainingBlock tb;
      tb.input = mc::detail::block_to_ndarray<float>(in_blocks[i].vol);
      tb.target = mc::detail::block_to_ndarray<float>(tgt_blocks[i].vol);
      tb.mask = std::move(in_blocks[i].mask_block);
      out.push_back(std::move(tb));
    }
  }
  return out;
}

struct TrainConfig {
  int epochs = 50;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  int patience = 20;
  AdamConfig adam;

  void validate() const {
    if (epochs < 0) throw DimensionError("train: epochs must be >= 0");
    if (val_fraction <= 0.0 || val_fraction >= 1.0)
      throw DimensionError("train: val_fraction must be in (0, 1)");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  nn::DUNet best;          // lowest validation loss seen
  nn::DUNet final;         // state after the last completed epoch
  std::vector<EpochRecord> history;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  bool diverged = false;
};

// Block-level training: one block per step, dropout active, masked L1,
// Adam. Validation runs the deterministic forward. Returns the best-
// validation checkpoint; a NaN loss aborts with the last good one.
inline TrainResult train(nn::DUNet net, const std::vector<TrainingBlock>& blocks,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (blocks.empty()) throw DimensionError("train: no training blocks");
  const auto split = split_dataset(blocks.size(), cfg.val_fraction, cfg.seed);

  TrainResult res;
  AdamState<float> adam(net);
  std::uint64_t global_step = 0;
  res.best = net;
  int stale = 0;

  auto val_loss_of = [&](const nn::DUNet& n) {
    double total = 0.0;
    for (std::size_t idx : split.val) {
      const auto pred = n.predict(blocks[idx].input);
      total += nn::masked_l1(pred, blocks[idx].target, blocks[idx].mask).first;
    }
    return total / static_cast<double>(split.val.size());
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::size_t> order = split.train;
    auto shuffle_stream = rng::make_stream(cfg.seed, rng::Domain::Shuffle,
                                           static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_stream.next_below(i + 1)]);

    double train_total = 0.0;
    for (std::size_t idx : order) {
      const auto pred =
          net.forward(blocks[idx].input, nn::RunMode::Train, cfg.seed, global_step);
      auto [loss, grad] = nn::masked_l1(pred, blocks[idx].target, blocks[idx].mask);
      train_total += loss;
      net.backward(grad);
      adam.step(net, cfg.adam);
      ++global_step;
    }
    const double train_loss = train_total / static_cast<double>(order.size());
    const double val_loss = val_loss_of(net);
    const auto t1 = std::chrono::steady_clock::now();

    res.history.push_back(
        {epoch, train_loss, val_loss,
         std::chrono::duration<double>(t1 - t0).count()});

    if (std::isnan(train_loss) || std::isnan(val_loss)) {
      res.diverged = true;
      break;
    }
    if (val_loss < res.best_val_loss) {
      res.best_val_loss = val_loss;
      res.best = net;
      res.best_epoch = epoch;
      stale = 0;
    } else {
      ++stale;
    }
    if (stale > cfg.patience) break;
  }

  res.final = std::move(net);
  return res;
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_loss,seconds\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.3f\n", r.epoch, r.train_loss,
                  r.val_loss, r.seconds);
    out += buf;
  }
  return out;
}

}  // namespace mcdti::train
