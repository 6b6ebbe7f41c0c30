#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mcdti/dunet.hpp"
#include "mcdti/errors.hpp"
#include "mcdti/mcdropout.hpp"
#include "mcdti/phantom.hpp"
#include "mcdti/train.hpp"
#include "mcdti/volume.hpp"

namespace mcdti::eval {

// Mean absolute error over masked voxels of a single-channel map.
inline double mae(const Volume& pred, const Volume& gt, const Mask& mask) {
  if (pred.dims != gt.dims || pred.dims != mask.dims)
    throw DimensionError("mae: dims mismatch " + pred.dims.str() + " vs " +
                         gt.dims.str() + " vs " + mask.dims.str());
  if (pred.channels != 1 || gt.channels != 1)
    throw DimensionError("mae: expected single-channel maps");
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t v = 0; v < pred.dims.voxels(); ++v) {
    if (!mask.bits[v]) continue;
    total += std::abs(static_cast<double>(pred.data[v]) - gt.data[v]);
    ++n;
  }
  if (n == 0) throw DimensionError("mae: empty mask");
  return total / static_cast<double>(n);
}

struct TissueStat {
  Tissue tissue = Tissue::Background;
  double mean_cov = 0.0;
  std::size_t voxels = 0;
};

// Mean CoV per tissue label over a single-channel uncertainty map.
// Reports carry only tissues with >= 100 voxels; the raw stats include all.
inline std::vector<TissueStat> tissue_uncertainty(const Volume& cov_map,
                                                  const TissueLabels& labels) {
  if (cov_map.dims != labels.dims)
    throw DimensionError("tissue_uncertainty: dims mismatch");
  if (cov_map.channels != 1)
    throw DimensionError("tissue_uncertainty: expected a single-channel map");
  std::array<double, kTissueCount> sum{};
  std::array<std::size_t, kTissueCount> count{};
  for (std::size_t v = 0; v < cov_map.dims.voxels(); ++v) {
    const auto l = labels.labels[v];
    sum[l] += cov_map.data[v];
    count[l] += 1;
  }
  std::vector<TissueStat> out;
  for (int t = 1; t < kTissueCount; ++t) {
    TissueStat s;
    s.tissue = static_cast<Tissue>(t);
    s.voxels = count[t];
    s.mean_cov = count[t] ? sum[t] / static_cast<double>(count[t]) : 0.0;
    out.push_back(s);
  }
  return out;
}

inline constexpr std::size_t kTissueReportMinVoxels = 100;

// (mean CoV inside artifact within parenchyma) / (mean CoV in the rest of
// the parenchyma).
inline double artifact_contrast(const Volume& cov_map, const Mask& artifact_mask,
                                const Mask& parenchyma_mask) {
  if (cov_map.dims != artifact_mask.dims || cov_map.dims != parenchyma_mask.dims)
    throw DimensionError("artifact_contrast: dims mismatch");
  double in_sum = 0.0, out_sum = 0.0;
  std::size_t in_n = 0, out_n = 0;
  for (std::size_t v = 0; v < cov_map.dims.voxels(); ++v) {
    if (!parenchyma_mask.bits[v]) continue;
    if (artifact_mask.bits[v]) {
      in_sum += cov_map.data[v];
      ++in_n;
    } else {
      out_sum += cov_map.data[v];
      ++out_n;
    }
  }
  if (in_n == 0 || out_n == 0)
    throw DimensionError("artifact_contrast: artifact or background region is empty "
                         "within the parenchyma");
  return (in_sum / in_n) / (out_sum / out_n);
}

// --- reference values from published HCP-data experiments -----------------
// Embedded as labeled comparison columns only; never asserted against.

struct RefRow {
  double value;
  double mae_fa;
  double mae_md;
};

inline constexpr std::array<RefRow, 8> kRefHcpDropoutSweep = {{
    {0.0, 0.0498, 0.0524},
    {0.1, 0.0442, 0.0491},
    {0.2, 0.0438, 0.0496},
    {0.3, 0.0440, 0.0502},
    {0.4, 0.0442, 0.0506},
    {0.5, 0.0460, 0.0524},
    {0.6, 0.0479, 0.0537},
    {0.7, 0.0494, 0.0569},
}};

inline constexpr std::array<RefRow, 7> kRefHcpPredictionSweep = {{
    {1, 0.0460, 0.0529},
    {2, 0.0449, 0.0513},
    {5, 0.0442, 0.0503},
    {10, 0.0440, 0.0499},
    {20, 0.0439, 0.0497},
    {50, 0.0438, 0.0496},
    {100, 0.0438, 0.0496},
}};

// FA CoV by tissue reported for HCP-trained models.
inline constexpr double kRefHcpCovWhiteMatter = 0.0478;
inline constexpr double kRefHcpCovCorticalGray = 0.0756;
inline constexpr double kRefHcpCovCorpusCallosum = 0.0288;

template <std::size_t N>
inline std::optional<RefRow> ref_lookup(const std::array<RefRow, N>& table, double value) {
  for (const auto& r : table)
    if (std::abs(r.value - value) < 1e-12) return r;
  return std::nullopt;
}

// --- sweep machinery -------------------------------------------------------

// Everything a sweep cell needs to train and score one variant. Phantom
// subject i uses seed phantom_tmpl.seed + i; test subjects follow the
// training subjects.
struct SweepContext {
  nn::DUNetConfig net_cfg;
  train::TrainConfig train_cfg;
  phantom::PhantomSpec phantom_tmpl;
  int train_subjects = 2;
  int test_subjects = 1;
  int n_passes = 100;
  std::uint64_t init_seed = 0;
  std::uint64_t infer_seed = 0;
  std::string cache_dir;  // empty disables checkpoint caching
  int workers = 1;
  std::ostream* log = nullptr;
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::string phantom_fingerprint(const phantom::PhantomSpec& p) {
  std::ostringstream os;
  os.precision(17);
  os << p.dims.str() << "|" << p.voxel_size_mm[0] << "," << p.voxel_size_mm[1] << ","
     << p.voxel_size_mm[2] << "|seed=" << p.seed;
  for (double v : {p.outer_radii[0], p.outer_radii[1], p.outer_radii[2], p.shell_frac,
                   p.ventricle_radii[0], p.ventricle_radii[1], p.ventricle_radii[2],
                   p.ventricle_offset, p.deep_gm_radii[0], p.deep_gm_radii[1],
                   p.deep_gm_radii[2], p.deep_gm_offset, p.cc_arc_radius,
                   p.cc_arc_height, p.cc_tube_radius, p.tract_radius, p.tract_offset,
                   p.wm_axial.lo, p.wm_axial.hi, p.wm_radial.lo, p.wm_radial.hi,
                   p.cortical_gm_d.lo, p.cortical_gm_d.hi, p.deep_gm_d.lo,
                   p.deep_gm_d.hi, p.deep_gm_aniso.lo, p.deep_gm_aniso.hi, p.csf_d.lo,
                   p.csf_d.hi, p.cc_axial.lo, p.cc_axial.hi, p.cc_radial.lo,
                   p.cc_radial.hi, p.noise_sigma, p.b_value})
    os << "|" << v;
  os << "|tracts=" << p.tract_count << "|nb0=" << p.n_b0 << "|extra=" << p.extra_dirs;
  for (double v : p.s0) os << "," << v;
  return os.str();
}

inline std::string cell_fingerprint(const SweepContext& ctx, double dropout_rate,
                                    int n_subjects) {
  std::ostringstream os;
  os.precision(17);
  const auto& n = ctx.net_cfg;
  const auto& t = ctx.train_cfg;
  os << "net:" << n.depth << "," << n.base_kernels << "," << n.in_channels << ","
     << n.out_channels << "," << dropout_rate << "," << n.block_size
     << "|train:" << t.epochs << "," << t.val_fraction << "," << t.seed << ","
     << t.patience << "," << t.adam.lr << "," << t.adam.beta1 << "," << t.adam.beta2
     << "," << t.adam.epsilon << "|init:" << ctx.init_seed
     << "|subjects:" << n_subjects << "|phantom:" << phantom_fingerprint(ctx.phantom_tmpl);
  return os.str();
}

inline bool file_exists(const std::string& path) {
  std::ifstream f(path);
  return f.good();
}

}  // namespace detail

inline phantom::PhantomSpec subject_spec(const SweepContext& ctx, int subject_index) {
  phantom::PhantomSpec spec = ctx.phantom_tmpl;
  spec.seed = ctx.phantom_tmpl.seed + static_cast<std::uint64_t>(subject_index);
  return spec;
}

inline std::vector<phantom::PhantomDataset> make_train_subjects(const SweepContext& ctx,
                                                                int n_subjects) {
  std::vector<phantom::PhantomDataset> out;
  out.reserve(n_subjects);
  for (int i = 0; i < n_subjects; ++i)
    out.push_back(phantom::generate_phantom(subject_spec(ctx, i)));
  return out;
}

inline std::vector<phantom::PhantomDataset> make_test_subjects(const SweepContext& ctx) {
  std::vector<phantom::PhantomDataset> out;
  out.reserve(ctx.test_subjects);
  for (int i = 0; i < ctx.test_subjects; ++i)
    out.push_back(phantom::generate_phantom(subject_spec(ctx, ctx.train_subjects + i)));
  return out;
}

// Trains (or loads from the cache) the network for one sweep cell.
inline nn::DUNet trained_net(const SweepContext& ctx, double dropout_rate,
                             int n_subjects) {
  const std::string fp_str = detail::cell_fingerprint(ctx, dropout_rate, n_subjects);
  const std::uint64_t fp = detail::fnv1a(fp_str);
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(fp));
  const std::string cache_path =
      ctx.cache_dir.empty() ? "" : ctx.cache_dir + "/ckpt_" + hex + ".ckpt";

  if (!cache_path.empty() && detail::file_exists(cache_path)) {
    if (ctx.log)
      *ctx.log << "[sweep] cache hit " << hex << ", skipping training\n";
    return nn::load_checkpoint(cache_path);
  }

  nn::DUNetConfig cfg = ctx.net_cfg;
  cfg.dropout_rate = dropout_rate;
  nn::DUNet net = nn::DUNet::build(cfg, ctx.init_seed);
  const auto datasets = make_train_subjects(ctx, n_subjects);
  const auto blocks = train::make_training_blocks(datasets, cfg.block_size);
  auto result = train::train(std::move(net), blocks, ctx.train_cfg);
  if (!cache_path.empty()) {
    nn::save_checkpoint(result.best, cache_path);
    if (ctx.log) *ctx.log << "[sweep] cache store " << hex << "\n";
  }
  return std::move(result.best);
}

inline BlockSpec inference_block_spec(const nn::DUNetConfig& cfg) {
  return BlockSpec{{cfg.block_size, cfg.block_size, cfg.block_size},
                   {cfg.block_size, cfg.block_size, cfg.block_size}};
}

struct MaePair {
  double fa = 0.0;
  double md = 0.0;
};

// MAE of the n-pass averaged prediction against ground truth, averaged
// over test subjects.
inline MaePair mc_mae(const nn::DUNet& net, const std::vector<phantom::PhantomDataset>& tests,
                      int n_passes, std::uint64_t infer_seed, int workers = 1) {
  MaePair out;
  for (const auto& ds : tests) {
    const auto res = mc::infer_volume(net, ds.input_dwi, ds.mask,
                                      inference_block_spec(net.config()), n_passes,
                                      infer_seed, 1e-6, workers);
    out.fa += mae(res.fa_mean, ds.gt_fa, ds.mask);
    out.md += mae(res.md_mean, ds.gt_md, ds.mask);
  }
  out.fa /= tests.size();
  out.md /= tests.size();
  return out;
}

// MAE of the deterministic (dropout-inactive) forward.
inline MaePair deterministic_mae(const nn::DUNet& net,
                                 const std::vector<phantom::PhantomDataset>& tests,
                                 int workers = 1) {
  MaePair out;
  for (const auto& ds : tests) {
    nn::DUNet copy = net;
    copy.set_dropout_rate(0.0);
    const auto res = mc::infer_volume(copy, ds.input_dwi, ds.mask,
                                      inference_block_spec(net.config()), 1, 0, 1e-6,
                                      workers);
    out.fa += mae(res.fa_mean, ds.gt_fa, ds.mask);
    out.md += mae(res.md_mean, ds.gt_md, ds.mask);
  }
  out.fa /= tests.size();
  out.md /= tests.size();
  return out;
}

// --- sweep tables -----------------------------------------------------------

struct SweepRow {
  double value = 0.0;
  std::vector<std::pair<std::string, double>> metrics;  // NaN renders empty
};

struct SweepTable {
  std::string variable;
  std::vector<std::string> columns;
  std::vector<SweepRow> rows;
};

// MAE of the averaged prediction for each dropout rate, one trained
// network per rate.
inline SweepTable sweep_dropout(const std::vector<double>& rates, const SweepContext& ctx) {
  if (rates.empty()) throw UsageError("sweep_dropout: empty rate list");
  SweepTable table;
  table.variable = "dropout_rate";
  table.columns = {"mae_fa", "mae_md", "ref_hcp_mae_fa", "ref_hcp_mae_md"};
  const auto tests = make_test_subjects(ctx);
  for (double rate : rates) {
    const auto net = trained_net(ctx, rate, ctx.train_subjects);
    const auto m = mc_mae(net, tests, ctx.n_passes, ctx.infer_seed, ctx.workers);
    SweepRow row;
    row.value = rate;
    row.metrics = {{"mae_fa", m.fa}, {"mae_md", m.md}};
    const auto ref = ref_lookup(kRefHcpDropoutSweep, rate);
    row.metrics.emplace_back("ref_hcp_mae_fa", ref ? ref->mae_fa : std::nan(""));
    row.metrics.emplace_back("ref_hcp_mae_md", ref ? ref->mae_md : std::nan(""));
    table.rows.push_back(std::move(row));
  }
  return table;
}

// MAE versus number of averaged predictions. Every listed n is a prefix of
// one seeded pass sequence per block: pass k always draws from streams
// keyed by (block seed, k), so n and n' share their first min(n,n') passes.
inline SweepTable sweep_npredictions(const std::vector<int>& ns, const nn::DUNet& net,
                                     const std::vector<phantom::PhantomDataset>& tests,
                                     std::uint64_t infer_seed) {
  if (ns.empty()) throw UsageError("sweep_npredictions: empty n list");
  for (int n : ns)
    if (n < 1) throw UsageError("sweep_npredictions: n must be >= 1");

  SweepTable table;
  table.variable = "n_predictions";
  table.columns = {"mae_fa", "mae_md", "ref_hcp_mae_fa", "ref_hcp_mae_md"};

  std::vector<int> sorted = ns;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  const int max_n = sorted.back();

  std::map<int, MaePair> totals;
  for (const auto& ds : tests) {
    const auto spec = inference_block_spec(net.config());
    const auto blocks = extract_blocks(ds.input_dwi, ds.mask, spec, false);
    // per listed n, the stitched mean blocks
    std::map<int, std::vector<Volume>> mean_blocks;
    for (int n : sorted) mean_blocks[n].resize(blocks.size());

    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto x = mc::detail::block_to_ndarray<float>(blocks[i].vol);
      mc::Ensemble ens;
      const std::uint64_t bseed = mc::block_seed(infer_seed, i);
      for (int k = 0; k < max_n; ++k) {
        const auto y = net.predict_mc(x, bseed, static_cast<std::uint64_t>(k));
        if (k == 0) ens = mc::Ensemble(y.shape);
        ens.update(y);
        const auto hit = std::find(sorted.begin(), sorted.end(), k + 1);
        if (hit != sorted.end()) {
          Volume mv(2, blocks[i].vol.dims, ds.input_dwi.voxel_size_mm);
          for (std::size_t e = 0; e < ens.numel(); ++e)
            mv.data[e] = static_cast<float>(ens.mean_at(e));
          mean_blocks[*hit][i] = std::move(mv);
        }
      }
    }

    for (int n : sorted) {
      std::vector<PlacedBlock> placed(blocks.size());
      for (std::size_t i = 0; i < blocks.size(); ++i)
        placed[i] = {&mean_blocks[n][i], blocks[i].origin};
      Volume mean = stitch_blocks(placed, ds.input_dwi.dims, ds.input_dwi.voxel_size_mm);
      Volume fa_map(1, mean.dims, mean.voxel_size_mm);
      Volume md_map(1, mean.dims, mean.voxel_size_mm);
      const std::size_t nvox = mean.dims.voxels();
      for (std::size_t v = 0; v < nvox; ++v) {
        if (!ds.mask.bits[v]) continue;
        fa_map.data[v] = std::clamp(mean.data[v], 0.0f, 1.0f);
        md_map.data[v] = mean.data[nvox + v];
      }
      totals[n].fa += mae(fa_map, ds.gt_fa, ds.mask);
      totals[n].md += mae(md_map, ds.gt_md, ds.mask);
    }
  }

  for (int n : ns) {
    SweepRow row;
    row.value = n;
    row.metrics = {{"mae_fa", totals[n].fa / tests.size()},
                   {"mae_md", totals[n].md / tests.size()}};
    const auto ref = ref_lookup(kRefHcpPredictionSweep, n);
    row.metrics.emplace_back("ref_hcp_mae_fa", ref ? ref->mae_fa : std::nan(""));
    row.metrics.emplace_back("ref_hcp_mae_md", ref ? ref->mae_md : std::nan(""));
    table.rows.push_back(std::move(row));
  }
  return table;
}

// Three variants per training-set size: a plain U-Net's deterministic
// prediction, a single stochastic DU-Net prediction, and the n-pass
// DU-Net average, all from one init seed.
inline SweepTable sweep_training_size(const std::vector<int>& counts,
                                      const SweepContext& ctx) {
  if (counts.empty()) throw UsageError("sweep_training_size: empty subject-count list");
  SweepTable table;
  table.variable = "n_training_subjects";
  table.columns = {"mae_fa_unet", "mae_md_unet", "mae_fa_dunet_1", "mae_md_dunet_1",
                   "mae_fa_dunet_avg", "mae_md_dunet_avg"};
  SweepContext test_ctx = ctx;
  test_ctx.train_subjects = *std::max_element(counts.begin(), counts.end());
  const auto tests = make_test_subjects(test_ctx);
  for (int count : counts) {
    if (count < 1) throw UsageError("sweep_training_size: counts must be >= 1");
    const auto unet = trained_net(ctx, 0.0, count);
    const auto dunet = trained_net(ctx, ctx.net_cfg.dropout_rate, count);
    const auto m_unet = deterministic_mae(unet, tests, ctx.workers);
    const auto m_one = mc_mae(dunet, tests, 1, ctx.infer_seed, ctx.workers);
    const auto m_avg = mc_mae(dunet, tests, ctx.n_passes, ctx.infer_seed, ctx.workers);
    SweepRow row;
    row.value = count;
    row.metrics = {{"mae_fa_unet", m_unet.fa},     {"mae_md_unet", m_unet.md},
                   {"mae_fa_dunet_1", m_one.fa},   {"mae_md_dunet_1", m_one.md},
                   {"mae_fa_dunet_avg", m_avg.fa}, {"mae_md_dunet_avg", m_avg.md}};
    table.rows.push_back(std::move(row));
  }
  return table;
}

// --- report emission --------------------------------------------------------

namespace detail {

inline std::string format_metric(double v) {
  if (std::isnan(v)) return "";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace detail

inline std::string sweep_csv(const SweepTable& table) {
  std::ostringstream os;
  os << table.variable;
  for (const auto& c : table.columns) os << "," << c;
  os << "\n";
  for (const auto& row : table.rows) {
    os << detail::format_metric(row.value);
    for (const auto& c : table.columns) {
      double v = std::nan("");
      for (const auto& [k, x] : row.metrics)
        if (k == c) v = x;
      os << "," << detail::format_metric(v);
    }
    os << "\n";
  }
  return os.str();
}

// Long format for plotting: one metric per line.
inline std::string sweep_long_csv(const SweepTable& table) {
  std::ostringstream os;
  os << "variable,value,metric,metric_value\n";
  for (const auto& row : table.rows)
    for (const auto& [k, v] : row.metrics) {
      if (std::isnan(v)) continue;
      os << table.variable << "," << detail::format_metric(row.value) << "," << k << ","
         << detail::format_metric(v) << "\n";
    }
  return os.str();
}

inline void write_text(const std::string& text, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write file: " + path);
  out << text;
  if (!out) throw IoError("failed writing file: " + path);
}

// Per-subject evaluation record; artifact ratios are NaN when no artifact
// mask applies and tissue means appear only above the voxel threshold.
struct EvalReport {
  std::string subject;
  double mae_fa = std::nan("");
  double mae_md = std::nan("");
  std::vector<TissueStat> tissue_fa_cov;
  double artifact_ratio_fa = std::nan("");
  double artifact_ratio_md = std::nan("");
  int n_passes = 0;
  double dropout_rate = std::nan("");
  std::uint64_t seed = 0;
};

inline std::string report_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << "subject,mae_fa,mae_md";
  for (int t = 1; t < kTissueCount; ++t)
    os << ",cov_fa_" << tissue_name(static_cast<Tissue>(t));
  os << ",artifact_ratio_fa,artifact_ratio_md,n_passes,dropout_rate,seed\n";
  for (const auto& r : reports) {
    os << r.subject << "," << detail::format_metric(r.mae_fa) << ","
       << detail::format_metric(r.mae_md);
    for (int t = 1; t < kTissueCount; ++t) {
      double v = std::nan("");
      for (const auto& s : r.tissue_fa_cov)
        if (static_cast<int>(s.tissue) == t && s.voxels >= kTissueReportMinVoxels)
          v = s.mean_cov;
      os << "," << detail::format_metric(v);
    }
    os << "," << detail::format_metric(r.artifact_ratio_fa) << ","
       << detail::format_metric(r.artifact_ratio_md) << "," << r.n_passes << ","
       << detail::format_metric(r.dropout_rate) << "," << r.seed << "\n";
  }
  return os.str();
}

}  // namespace mcdti::eval
