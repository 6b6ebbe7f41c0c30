// Command-line pipeline: synthetic phantom generation, tensor fitting,
// DU-Net training, Monte-Carlo-dropout inference, evaluation and the
// accuracy sweeps. All runs are config-file driven with --key value
// overrides and write their resolved config snapshot next to the outputs.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcdti.hpp"

namespace fs = std::filesystem;
using namespace mcdti;
using nlohmann::json;

namespace {

struct KeySpec {
  const char* key;
  const char* fallback;  // nullptr marks a required key
  const char* help;
};

void print_usage() {
  std::cout <<
      "usage: mcdti <command> [--config FILE] [--key value ...]\n"
      "\n"
      "commands:\n"
      "  phantom   generate a synthetic dataset directory\n"
      "  fit       diffusion tensor fit: DWI + scheme + mask -> FA/MD maps\n"
      "  train     train the dropout U-Net on dataset directories\n"
      "  infer     Monte-Carlo-dropout inference from a checkpoint\n"
      "  eval      score predictions against ground truth\n"
      "  sweep     dropout-rate / prediction-count / training-size sweeps\n"
      "\n"
      "`--config FILE` loads flat `key = value` lines; later --key value\n"
      "arguments override it. Run `mcdti <command> --help` for keys.\n";
}

void print_keys(const std::string& cmd, const std::vector<KeySpec>& schema) {
  std::cout << "keys for `" << cmd << "`:\n";
  for (const auto& k : schema) {
    std::printf("  %-22s %s%s\n", k.key, k.help,
                k.fallback ? (std::string(" (default: ") +
                              (*k.fallback ? k.fallback : "empty") + ")")
                                 .c_str()
                           : " (required)");
  }
}

// Merges config file and command-line overrides against the schema,
// rejecting unknown keys and materializing defaults.
FlatConfig resolve_config(const std::string& cmd, const std::vector<KeySpec>& schema,
                          const std::vector<std::string>& args) {
  FlatConfig cfg;
  std::size_t i = 0;
  std::vector<std::pair<std::string, std::string>> overrides;
  while (i < args.size()) {
    const std::string& a = args[i];
    if (a == "--help" || a == "-h") {
      print_keys(cmd, schema);
      std::exit(0);
    }
    if (a.rfind("--", 0) != 0)
      throw UsageError(cmd + ": expected --key, got `" + a + "`");
    if (i + 1 >= args.size())
      throw UsageError(cmd + ": missing value after `" + a + "`");
    const std::string key = a.substr(2);
    const std::string value = args[i + 1];
    i += 2;
    if (key == "config") {
      cfg = FlatConfig::parse_file(value);
      continue;
    }
    overrides.emplace_back(key, value);
  }
  for (const auto& [k, v] : overrides) cfg.set(k, v);

  std::vector<std::string> allowed;
  for (const auto& k : schema) allowed.push_back(k.key);
  cfg.require_known_keys(allowed, cmd);

  for (const auto& k : schema) {
    if (!cfg.has(k.key)) {
      if (!k.fallback)
        throw UsageError(cmd + ": missing required key `" + std::string(k.key) + "`");
      if (*k.fallback) cfg.set(k.key, k.fallback);
    }
  }
  return cfg;
}

void write_snapshot(const FlatConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  cfg.write_file(dir + "/config.toml");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

phantom::PhantomSpec phantom_spec_from(const FlatConfig& cfg) {
  phantom::PhantomSpec spec;
  const int dims = static_cast<int>(cfg.get_int("dims", 32));
  spec.dims = {dims, dims, dims};
  const float vox = static_cast<float>(cfg.get_double("voxel_size", 1.25));
  spec.voxel_size_mm = {vox, vox, vox};
  spec.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  spec.noise_sigma = cfg.get_double("noise_sigma", 20.0);
  spec.n_b0 = static_cast<int>(cfg.get_int("n_b0", 2));
  spec.extra_dirs = static_cast<int>(cfg.get_int("extra_dirs", 12));
  spec.b_value = cfg.get_double("b_value", 1.0);
  return spec;
}

constexpr const char* kPhantomKeys[] = {"dims",       "voxel_size", "noise_sigma",
                                        "n_b0",       "extra_dirs", "b_value"};

std::vector<KeySpec> phantom_schema() {
  return {
      {"out", nullptr, "output dataset directory"},
      {"seed", "0", "generation seed"},
      {"dims", "32", "cubic volume extent"},
      {"voxel_size", "1.25", "isotropic voxel size in mm"},
      {"noise_sigma", "20", "Rician noise sigma in signal units"},
      {"n_b0", "2", "number of b=0 volumes"},
      {"extra_dirs", "12", "extra diffusion directions beyond the orthogonal three"},
      {"b_value", "1.0", "diffusion weighting in ms/um^2"},
      {"artifact", "none", "letter artifact: none | bright | dark"},
      {"artifact_slice_lo", "-1", "first affected z slice (-1 centers a 1/3 band)"},
      {"artifact_slice_hi", "-1", "one past the last affected z slice"},
      {"artifact_raster", "0", "integer raster scale of the 7x7 letter (0 = auto)"},
      {"artifact_bright", "3.0", "bright fill as a multiple of the p99 intensity"},
      {"artifact_dark", "0.0", "dark fill value"},
  };
}

int cmd_phantom(const std::vector<std::string>& args) {
  const auto cfg = resolve_config("phantom", phantom_schema(), args);
  const std::string out = cfg.get_string("out");
  const auto spec = phantom_spec_from(cfg);

  auto ds = phantom::generate_phantom(spec);

  const std::string artifact = cfg.get_string("artifact");
  if (artifact != "none") {
    if (artifact != "bright" && artifact != "dark")
      throw UsageError("phantom: artifact must be none, bright or dark");
    int lo = static_cast<int>(cfg.get_int("artifact_slice_lo"));
    int hi = static_cast<int>(cfg.get_int("artifact_slice_hi"));
    if (lo < 0 || hi < 0) {
      lo = spec.dims.nz / 3;
      hi = 2 * spec.dims.nz / 3;
    }
    const auto res = phantom::inject_letter_artifact(
        ds.input_dwi,
        artifact == "bright" ? phantom::ArtifactPolarity::Bright
                             : phantom::ArtifactPolarity::Dark,
        lo, hi, static_cast<int>(cfg.get_int("artifact_raster")),
        cfg.get_double("artifact_bright"), cfg.get_double("artifact_dark"));
    ds.input_dwi = res.vol;
    fs::create_directories(out);
    nifti::write_file(res.artifact_mask, out + "/artifact_mask.nii");
  }

  fs::create_directories(out);
  phantom::save_dataset(ds, out);
  write_snapshot(cfg, out);
  std::cout << "[phantom] wrote " << out << " (" << spec.dims.str() << ", "
            << ds.scheme.n_volumes() << " scheme volumes, mask "
            << ds.mask.popcount() << " voxels)\n";
  return 0;
}

std::vector<KeySpec> fit_schema() {
  return {
      {"dwi", nullptr, "input DWI volume (.nii)"},
      {"scheme", nullptr, "scheme file, one `b gx gy gz` line per volume"},
      {"mask", nullptr, "fit mask (.nii)"},
      {"out", nullptr, "output directory"},
      {"workers", "1", "parallel workers"},
  };
}

int cmd_fit(const std::vector<std::string>& args) {
  const auto cfg = resolve_config("fit", fit_schema(), args);
  const auto dwi = nifti::read_file(cfg.get_string("dwi")).vol;
  const auto scheme = dti::DiffusionScheme::read_file(cfg.get_string("scheme"));
  const auto mask = nifti::to_mask(nifti::read_file(cfg.get_string("mask")).vol);

  const auto maps = dti::fit_volume(dwi, mask, scheme,
                                    static_cast<int>(cfg.get_int("workers")));
  const std::string out = cfg.get_string("out");
  fs::create_directories(out);
  nifti::write_file(maps.fa_map, out + "/fa.nii");
  nifti::write_file(maps.md_map, out + "/md.nii");
  nifti::write_file(maps.tensors, out + "/tensors.nii");
  write_snapshot(cfg, out);
  std::cout << "[fit] fitted " << maps.fitted_voxels << " voxels, clamped "
            << maps.clamped_samples << " non-positive samples\n";
  return 0;
}

std::vector<KeySpec> train_schema() {
  return {
      {"data", nullptr, "comma-separated dataset directories"},
      {"out", nullptr, "run directory"},
      {"epochs", "50", "training epochs"},
      {"seed", "0", "training seed (shuffles, split, dropout)"},
      {"init_seed", "0", "weight initialization seed"},
      {"val_fraction", "0.2", "validation fraction of blocks"},
      {"patience", "20", "early-stop patience in epochs"},
      {"lr", "0.001", "Adam learning rate"},
      {"depth", "3", "U-Net depth"},
      {"base_kernels", "8", "channels at the first depth"},
      {"block_size", "16", "cubic training block size"},
      {"dropout_rate", "0.2", "decoder dropout rate"},
  };
}

int cmd_train(const std::vector<std::string>& args) {
  const auto cfg = resolve_config("train", train_schema(), args);
  const auto dirs = split_list(cfg.get_string("data"));
  if (dirs.empty()) throw UsageError("train: empty data list");

  std::vector<phantom::PhantomDataset> datasets;
  for (const auto& d : dirs) datasets.push_back(phantom::load_dataset(d));

  nn::DUNetConfig net_cfg;
  net_cfg.depth = static_cast<int>(cfg.get_int("depth"));
  net_cfg.base_kernels = static_cast<int>(cfg.get_int("base_kernels"));
  net_cfg.block_size = static_cast<int>(cfg.get_int("block_size"));
  net_cfg.dropout_rate = cfg.get_double("dropout_rate");
  net_cfg.validate();

  train::TrainConfig tcfg;
  tcfg.epochs = static_cast<int>(cfg.get_int("epochs"));
  tcfg.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  tcfg.val_fraction = cfg.get_double("val_fraction");
  tcfg.patience = static_cast<int>(cfg.get_int("patience"));
  tcfg.adam.lr = cfg.get_double("lr");

  const auto blocks = train::make_training_blocks(datasets, net_cfg.block_size);
  std::cout << "[train] " << blocks.size() << " blocks from " << dirs.size()
            << " datasets\n";

  auto net = nn::DUNet::build(net_cfg, static_cast<std::uint64_t>(cfg.get_int("init_seed")));
  const std::string out = cfg.get_string("out");
  write_snapshot(cfg, out);

  if (tcfg.epochs == 0) {
    nn::save_checkpoint(net, out + "/best.ckpt");
    nn::save_checkpoint(net, out + "/final.ckpt");
    eval::write_text(train::history_csv({}), out + "/history.csv");
    std::cout << "[train] 0 epochs requested; checkpoint equals initialization\n";
    return 0;
  }

  const auto result = train::train(std::move(net), blocks, tcfg);
  nn::save_checkpoint(result.best, out + "/best.ckpt");
  nn::save_checkpoint(result.final, out + "/final.ckpt");
  eval::write_text(train::history_csv(result.history), out + "/history.csv");
  if (result.diverged)
    std::cout << "[train] diverged; kept the last good checkpoint (epoch "
              << result.best_epoch << ")\n";
  std::cout << "[train] " << result.history.size() << " epochs, best val loss "
            << result.best_val_loss << " at epoch " << result.best_epoch << "\n";
  return 0;
}

std::vector<KeySpec> infer_schema() {
  return {
      {"checkpoint", nullptr, "trained network checkpoint"},
      {"data", "", "dataset directory (supplies input and mask)"},
      {"input", "", "4-channel input volume (.nii), overrides data"},
      {"mask", "", "inference mask (.nii), overrides data"},
      {"out", nullptr, "output directory"},
      {"n_passes", "100", "stochastic passes per block"},
      {"seed", "0", "inference seed"},
      {"dropout_override", "-1", "replace the checkpoint dropout rate (-1 keeps it)"},
      {"cov_epsilon", "1e-6", "mean floor for the CoV division"},
      {"workers", "1", "parallel workers over blocks"},
  };
}

int cmd_infer(const std::vector<std::string>& args) {
  const auto cfg = resolve_config("infer", infer_schema(), args);
  auto net = nn::load_checkpoint(cfg.get_string("checkpoint"));
  const double override_p = cfg.get_double("dropout_override");
  if (override_p >= 0.0) net.set_dropout_rate(override_p);

  const std::string data = cfg.get_string("data", "");
  std::string input_path = cfg.get_string("input", "");
  std::string mask_path = cfg.get_string("mask", "");
  if (input_path.empty()) {
    if (data.empty()) throw UsageError("infer: provide --data or --input/--mask");
    input_path = data + "/dwi_input.nii";
  }
  if (mask_path.empty()) {
    if (data.empty()) throw UsageError("infer: provide --data or --input/--mask");
    mask_path = data + "/mask.nii";
  }
  const auto input = nifti::read_file(input_path).vol;
  const auto mask = nifti::to_mask(nifti::read_file(mask_path).vol);

  const int bs = net.config().block_size;
  const int n_passes = static_cast<int>(cfg.get_int("n_passes"));
  const auto res = mc::infer_volume(net, input, mask, BlockSpec{{bs, bs, bs}, {bs, bs, bs}},
                                    n_passes,
                                    static_cast<std::uint64_t>(cfg.get_int("seed")),
                                    cfg.get_double("cov_epsilon"),
                                    static_cast<int>(cfg.get_int("workers")));

  const std::string out = cfg.get_string("out");
  fs::create_directories(out);
  nifti::write_file(res.fa_mean, out + "/fa_mean.nii");
  nifti::write_file(res.md_mean, out + "/md_mean.nii");
  if (res.has_cov) {
    nifti::write_file(res.fa_cov, out + "/fa_cov.nii");
    nifti::write_file(res.md_cov, out + "/md_cov.nii");
  } else {
    std::cout << "[infer] n_passes = 1: CoV maps need at least 2 passes, skipping "
                 "fa_cov.nii and md_cov.nii\n";
  }

  json manifest;
  manifest["n_passes"] = res.n_passes;
  manifest["seed"] = res.seed;
  manifest["dropout_rate"] = net.config().dropout_rate;
  manifest["low_mean_fa_voxels"] = res.low_mean_fa;
  manifest["low_mean_md_voxels"] = res.low_mean_md;
  manifest["cov_emitted"] = res.has_cov;
  if (!res.has_cov) manifest["cov_omitted_reason"] = "need >= 2 passes";
  json records = json::array();
  for (const auto& r : res.manifest) {
    char sid[32];
    std::snprintf(sid, sizeof(sid), "%016llx",
                  static_cast<unsigned long long>(r.stream_id));
    records.push_back({{"origin", {r.origin[0], r.origin[1], r.origin[2]}},
                       {"pass", r.pass},
                       {"stream_id", sid}});
  }
  manifest["block_passes"] = std::move(records);
  eval::write_text(manifest.dump(2) + "\n", out + "/manifest.json");
  write_snapshot(cfg, out);
  std::cout << "[infer] " << n_passes << " passes over "
            << res.manifest.size() / std::max(1, n_passes) << " blocks\n";
  return 0;
}

std::vector<KeySpec> eval_schema() {
  return {
      {"pred", nullptr, "prediction directory"},
      {"data", nullptr, "dataset directory with ground truth"},
      {"out", nullptr, "output directory"},
      {"pred_fa", "fa_mean.nii", "FA prediction file inside pred"},
      {"pred_md", "md_mean.nii", "MD prediction file inside pred"},
      {"subject", "subject0", "subject name for the report"},
      {"artifact_mask", "", "artifact mask (.nii); default: data/artifact_mask.nii if present"},
  };
}

int cmd_eval(const std::vector<std::string>& args) {
  const auto cfg = resolve_config("eval", eval_schema(), args);
  const std::string pred_dir = cfg.get_string("pred");
  const std::string data_dir = cfg.get_string("data");

  const auto ds = phantom::load_dataset(data_dir);
  const auto fa_pred = nifti::read_file(pred_dir + "/" + cfg.get_string("pred_fa")).vol;
  const auto md_pred = nifti::read_file(pred_dir + "/" + cfg.get_string("pred_md")).vol;

  eval::EvalReport rep;
  rep.subject = cfg.get_string("subject");
  rep.mae_fa = eval::mae(fa_pred, ds.gt_fa, ds.mask);
  rep.mae_md = eval::mae(md_pred, ds.gt_md, ds.mask);

  const std::string fa_cov_path = pred_dir + "/fa_cov.nii";
  Volume fa_cov;
  bool has_cov = fs::exists(fa_cov_path);
  if (has_cov) {
    fa_cov = nifti::read_file(fa_cov_path).vol;
    rep.tissue_fa_cov = eval::tissue_uncertainty(fa_cov, ds.labels);
  }

  std::string artifact_path = cfg.get_string("artifact_mask", "");
  if (artifact_path.empty() && fs::exists(data_dir + "/artifact_mask.nii"))
    artifact_path = data_dir + "/artifact_mask.nii";
  if (!artifact_path.empty() && has_cov) {
    const auto artifact = nifti::to_mask(nifti::read_file(artifact_path).vol);
    rep.artifact_ratio_fa = eval::artifact_contrast(fa_cov, artifact, ds.mask);
    const auto md_cov = nifti::read_file(pred_dir + "/md_cov.nii").vol;
    rep.artifact_ratio_md = eval::artifact_contrast(md_cov, artifact, ds.mask);
  }

  // carry inference bookkeeping into the report when available
  const std::string manifest_path = pred_dir + "/manifest.json";
  if (fs::exists(manifest_path)) {
    std::ifstream mf(manifest_path);
    const json manifest = json::parse(mf);
    rep.n_passes = manifest.value("n_passes", 0);
    rep.dropout_rate = manifest.value("dropout_rate", std::nan(""));
    rep.seed = manifest.value("seed", 0ull);
  }

  const std::string out = cfg.get_string("out");
  fs::create_directories(out);
  eval::write_text(eval::report_csv({rep}), out + "/report.csv");

  json jrep;
  jrep["subject"] = rep.subject;
  jrep["mae_fa"] = rep.mae_fa;
  jrep["mae_md_um2_per_ms"] = rep.mae_md;
  for (const auto& s : rep.tissue_fa_cov)
    if (s.voxels >= eval::kTissueReportMinVoxels)
      jrep["tissue_fa_cov"][tissue_name(s.tissue)] = s.mean_cov;
  if (!std::isnan(rep.artifact_ratio_fa)) {
    jrep["artifact_ratio_fa"] = rep.artifact_ratio_fa;
    jrep["artifact_ratio_md"] = rep.artifact_ratio_md;
  }
  jrep["ref_hcp_tissue_fa_cov"] = {{"white_matter", eval::kRefHcpCovWhiteMatter},
                                   {"cortical_gm", eval::kRefHcpCovCorticalGray},
                                   {"corpus_callosum", eval::kRefHcpCovCorpusCallosum}};
  json jcfg;
  for (const auto& k : cfg.keys()) jcfg[k] = cfg.get_string(k);
  jrep["config"] = jcfg;
  eval::write_text(jrep.dump(2) + "\n", out + "/report.json");
  write_snapshot(cfg, out);
  std::cout << "[eval] mae_fa " << rep.mae_fa << ", mae_md " << rep.mae_md << "\n";
  return 0;
}

std::vector<KeySpec> sweep_schema() {
  return {
      {"variable", nullptr, "dropout_rate | n_predictions | n_training_subjects"},
      {"values", nullptr, "comma-separated sweep values"},
      {"out", nullptr, "output directory"},
      {"depth", "3", "U-Net depth"},
      {"base_kernels", "8", "channels at the first depth"},
      {"block_size", "16", "cubic block size"},
      {"dropout_rate", "0.2", "DU-Net dropout rate"},
      {"epochs", "30", "training epochs per cell"},
      {"patience", "20", "early-stop patience"},
      {"lr", "0.001", "Adam learning rate"},
      {"seed", "0", "master seed (training, phantoms, inference)"},
      {"train_subjects", "2", "training phantoms"},
      {"test_subjects", "1", "held-out phantoms"},
      {"n_passes", "100", "averaged predictions"},
      {"dims", "24", "phantom extent"},
      {"voxel_size", "1.25", "phantom voxel size"},
      {"noise_sigma", "20", "phantom noise sigma"},
      {"n_b0", "2", "phantom b=0 volumes"},
      {"extra_dirs", "12", "phantom extra directions"},
      {"b_value", "1.0", "phantom b-value"},
      {"cache", "", "checkpoint cache directory (empty disables caching)"},
      {"workers", "1", "parallel workers"},
  };
}

int cmd_sweep(const std::vector<std::string>& args) {
  const auto cfg = resolve_config("sweep", sweep_schema(), args);

  eval::SweepContext ctx;
  ctx.net_cfg.depth = static_cast<int>(cfg.get_int("depth"));
  ctx.net_cfg.base_kernels = static_cast<int>(cfg.get_int("base_kernels"));
  ctx.net_cfg.block_size = static_cast<int>(cfg.get_int("block_size"));
  ctx.net_cfg.dropout_rate = cfg.get_double("dropout_rate");
  ctx.net_cfg.validate();
  ctx.train_cfg.epochs = static_cast<int>(cfg.get_int("epochs"));
  ctx.train_cfg.patience = static_cast<int>(cfg.get_int("patience"));
  ctx.train_cfg.adam.lr = cfg.get_double("lr");
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  ctx.train_cfg.seed = seed;
  ctx.init_seed = seed;
  ctx.infer_seed = seed;
  ctx.phantom_tmpl = phantom_spec_from(cfg);
  ctx.phantom_tmpl.seed = seed;
  ctx.train_subjects = static_cast<int>(cfg.get_int("train_subjects"));
  ctx.test_subjects = static_cast<int>(cfg.get_int("test_subjects"));
  ctx.n_passes = static_cast<int>(cfg.get_int("n_passes"));
  ctx.cache_dir = cfg.get_string("cache", "");
  ctx.workers = static_cast<int>(cfg.get_int("workers"));
  ctx.log = &std::cout;
  if (!ctx.cache_dir.empty()) fs::create_directories(ctx.cache_dir);

  const std::string variable = cfg.get_string("variable");
  const auto value_strings = split_list(cfg.get_string("values"));
  if (value_strings.empty()) throw UsageError("sweep: empty values list");

  eval::SweepTable table;
  if (variable == "dropout_rate") {
    std::vector<double> rates;
    for (const auto& s : value_strings) rates.push_back(std::stod(s));
    table = eval::sweep_dropout(rates, ctx);
  } else if (variable == "n_predictions") {
    std::vector<int> ns;
    for (const auto& s : value_strings) ns.push_back(std::stoi(s));
    const auto net = eval::trained_net(ctx, ctx.net_cfg.dropout_rate, ctx.train_subjects);
    const auto tests = eval::make_test_subjects(ctx);
    table = eval::sweep_npredictions(ns, net, tests, ctx.infer_seed);
  } else if (variable == "n_training_subjects") {
    std::vector<int> counts;
    for (const auto& s : value_strings) counts.push_back(std::stoi(s));
    table = eval::sweep_training_size(counts, ctx);
  } else {
    throw UsageError("sweep: unknown variable `" + variable + "`");
  }

  const std::string out = cfg.get_string("out");
  fs::create_directories(out);
  eval::write_text(eval::sweep_csv(table), out + "/sweep_" + variable + ".csv");
  eval::write_text(eval::sweep_long_csv(table),
                   out + "/sweep_" + variable + "_long.csv");
  json jt;
  jt["variable"] = table.variable;
  json jrows = json::array();
  for (const auto& r : table.rows) {
    json jr;
    jr["value"] = r.value;
    for (const auto& [k, v] : r.metrics)
      if (!std::isnan(v)) jr[k] = v;
    jrows.push_back(std::move(jr));
  }
  jt["rows"] = std::move(jrows);
  json jcfg;
  for (const auto& k : cfg.keys()) jcfg[k] = cfg.get_string(k);
  jt["config"] = jcfg;
  eval::write_text(jt.dump(2) + "\n", out + "/sweep_" + variable + ".json");
  write_snapshot(cfg, out);
  std::cout << "[sweep] " << variable << ": " << table.rows.size() << " rows -> " << out
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    print_usage();
    return 2;
  }
  const std::string cmd = argv[1];
  std::vector<std::string> args(argv + 2, argv + argc);
  try {
    if (cmd == "phantom") return cmd_phantom(args);
    if (cmd == "fit") return cmd_fit(args);
    if (cmd == "train") return cmd_train(args);
    if (cmd == "infer") return cmd_infer(args);
    if (cmd == "eval") return cmd_eval(args);
    if (cmd == "sweep") return cmd_sweep(args);
    if (cmd == "--help" || cmd == "-h" || cmd == "help") {
      print_usage();
      return 0;
    }
    std::cerr << "mcdti: unknown command `" << cmd << "`\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "mcdti " << cmd << ": " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    // unreadable or unwritable paths are caller mistakes, not internal bugs
    std::cerr << "mcdti " << cmd << ": " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "mcdti " << cmd << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mcdti " << cmd << ": error: " << e.what() << "\n";
    return 1;
  }
}
