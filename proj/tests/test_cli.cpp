#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcdti/config.hpp"
#include "mcdti/dunet.hpp"
#include "mcdti/nifti.hpp"
#include "mcdti/phantom.hpp"

namespace fs = std::filesystem;
using namespace mcdti;

namespace {

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const std::string log = "cli_out_" + std::to_string(counter++) + ".log";
  const std::string cmd = std::string(MCDTI_BIN) + " " + args + " > " + log + " 2>&1";
  const int rc = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  in.close();
  fs::remove(log);
  return {WEXITSTATUS(rc), ss.str()};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

const std::string kPhantomArgs =
    " --dims 24 --noise_sigma 10 --extra_dirs 4 --voxel_size 1.0";

}  // namespace

TEST_CASE("usage errors exit with code 2", "[cli]") {
  REQUIRE(run_cli("frobnicate").exit_code == 2);
  REQUIRE(run_cli("phantom --no_such_key 1 --out x").exit_code == 2);
  REQUIRE(run_cli("phantom").exit_code == 2);  // missing required key
  const auto help = run_cli("--help");
  REQUIRE(help.exit_code == 0);
  REQUIRE(help.output.find("phantom") != std::string::npos);
}

TEST_CASE("phantom writes the dataset layout deterministically", "[cli]") {
  TempDir a("cli_phantom_a"), b("cli_phantom_b");
  const auto ra = run_cli("phantom --out " + a.str() + " --seed 7" + kPhantomArgs);
  INFO(ra.output);
  REQUIRE(ra.exit_code == 0);
  for (const char* f : {"dwi_full.nii", "dwi_input.nii", "fa_gt.nii", "md_gt.nii",
                        "labels.nii", "mask.nii", "scheme.txt", "config.toml"})
    REQUIRE(fs::exists(a.path / f));

  const auto rb = run_cli("phantom --out " + b.str() + " --seed 7" + kPhantomArgs);
  REQUIRE(rb.exit_code == 0);
  for (const char* f : {"dwi_full.nii", "dwi_input.nii", "fa_gt.nii", "md_gt.nii",
                        "labels.nii", "mask.nii", "scheme.txt"})
    REQUIRE(read_file((a.path / f).string()) == read_file((b.path / f).string()));
}

TEST_CASE("phantom artifact modifies only masked voxels of the input", "[cli]") {
  TempDir clean("cli_art_clean"), bright("cli_art_bright");
  REQUIRE(run_cli("phantom --out " + clean.str() + " --seed 3" + kPhantomArgs)
              .exit_code == 0);
  REQUIRE(run_cli("phantom --out " + bright.str() + " --seed 3 --artifact bright" +
                  kPhantomArgs)
              .exit_code == 0);
  REQUIRE(fs::exists(bright.path / "artifact_mask.nii"));
  REQUIRE_FALSE(fs::exists(clean.path / "artifact_mask.nii"));

  const auto mask =
      nifti::to_mask(nifti::read_file((bright.path / "artifact_mask.nii").string()).vol);
  const auto in_clean =
      nifti::read_file((clean.path / "dwi_input.nii").string()).vol;
  const auto in_bright =
      nifti::read_file((bright.path / "dwi_input.nii").string()).vol;
  REQUIRE(mask.popcount() > 0);
  bool any_changed = false;
  for (int c = 0; c < 4; ++c)
    for (std::size_t v = 0; v < mask.bits.size(); ++v) {
      const std::size_t i = c * mask.bits.size() + v;
      if (mask.bits[v])
        any_changed = any_changed || in_clean.data[i] != in_bright.data[i];
      else
        REQUIRE(in_clean.data[i] == in_bright.data[i]);
    }
  REQUIRE(any_changed);
  // the other files are untouched by the artifact
  REQUIRE(read_file((clean.path / "fa_gt.nii").string()) ==
          read_file((bright.path / "fa_gt.nii").string()));
  REQUIRE(read_file((clean.path / "dwi_full.nii").string()) ==
          read_file((bright.path / "dwi_full.nii").string()));
}

TEST_CASE("fit of noiseless data reproduces the shipped ground truth", "[cli]") {
  TempDir ds("cli_fit_ds"), out("cli_fit_out");
  REQUIRE(run_cli("phantom --out " + ds.str() +
                  " --seed 5 --dims 20 --noise_sigma 0 --extra_dirs 4")
              .exit_code == 0);
  const auto r = run_cli("fit --dwi " + ds.str() + "/dwi_full.nii --scheme " + ds.str() +
                         "/scheme.txt --mask " + ds.str() + "/mask.nii --out " +
                         out.str());
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  const auto fitted = nifti::read_file(out.str() + "/fa.nii").vol;
  const auto gt = nifti::read_file(ds.str() + "/fa_gt.nii").vol;
  REQUIRE(fitted.data.size() == gt.data.size());
  for (std::size_t i = 0; i < gt.data.size(); ++i)
    REQUIRE(fitted.data[i] == Catch::Approx(gt.data[i]).margin(1e-6));
}

TEST_CASE("fit with a missing scheme file exits with code 2", "[cli]") {
  TempDir ds("cli_fit_missing");
  REQUIRE(run_cli("phantom --out " + ds.str() + " --seed 1 --dims 20 --extra_dirs 4")
              .exit_code == 0);
  const auto r = run_cli("fit --dwi " + ds.str() + "/dwi_full.nii --scheme " + ds.str() +
                         "/nonexistent.txt --mask " + ds.str() + "/mask.nii --out x");
  REQUIRE(r.exit_code == 2);
  REQUIRE(r.output.find("nonexistent.txt") != std::string::npos);
}

TEST_CASE("fit rejects schemes with fewer than six directions", "[cli]") {
  TempDir ds("cli_fit_few");
  REQUIRE(run_cli("phantom --out " + ds.str() + " --seed 1 --dims 20 --extra_dirs 4")
              .exit_code == 0);
  std::ofstream bad(ds.str() + "/bad_scheme.txt");
  bad << "0 0 0 0\n1 1 0 0\n1 0 1 0\n1 0 0 1\n";
  bad.close();
  const auto r = run_cli("fit --dwi " + ds.str() + "/dwi_input.nii --scheme " + ds.str() +
                         "/bad_scheme.txt --mask " + ds.str() + "/mask.nii --out x");
  REQUIRE(r.exit_code == 2);
  REQUIRE(r.output.find("6") != std::string::npos);
}

namespace {

const std::string kTrainArgs =
    " --depth 2 --base_kernels 2 --block_size 8 --epochs 2 --seed 4";

}

TEST_CASE("train with zero epochs checkpoints the initialization", "[cli]") {
  TempDir ds("cli_train0_ds"), run("cli_train0_run");
  REQUIRE(run_cli("phantom --out " + ds.str() + " --seed 2" + kPhantomArgs)
              .exit_code == 0);
  const auto r = run_cli("train --data " + ds.str() + " --out " + run.str() +
                         " --depth 2 --base_kernels 2 --block_size 8 --epochs 0 "
                         "--init_seed 9");
  INFO(r.output);
  REQUIRE(r.exit_code == 0);

  const auto ckpt = nn::load_checkpoint(run.str() + "/best.ckpt");
  const auto reference = nn::DUNet::build(ckpt.config(), 9);
  for (std::size_t i = 0; i < reference.params().size(); ++i)
    REQUIRE(ckpt.params()[i].value.data == reference.params()[i].value.data);

  // header-only history
  REQUIRE(read_file(run.str() + "/history.csv") == "epoch,train_loss,val_loss,seconds\n");
}

TEST_CASE("train runs are deterministic and history has one row per epoch", "[cli]") {
  TempDir ds("cli_train_ds"), run1("cli_train_r1"), run2("cli_train_r2");
  REQUIRE(run_cli("phantom --out " + ds.str() + " --seed 6" + kPhantomArgs)
              .exit_code == 0);
  const auto r1 = run_cli("train --data " + ds.str() + " --out " + run1.str() + kTrainArgs);
  INFO(r1.output);
  REQUIRE(r1.exit_code == 0);
  const auto r2 = run_cli("train --data " + ds.str() + " --out " + run2.str() + kTrainArgs);
  REQUIRE(r2.exit_code == 0);

  REQUIRE(read_file(run1.str() + "/best.ckpt") == read_file(run2.str() + "/best.ckpt"));
  REQUIRE(read_file(run1.str() + "/final.ckpt") == read_file(run2.str() + "/final.ckpt"));

  // history matches except for the wall-time column
  auto strip_seconds = [](const std::string& csv) {
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) {
      const auto last = line.rfind(',');
      out += line.substr(0, last) + "\n";
    }
    return out;
  };
  const auto h1 = read_file(run1.str() + "/history.csv");
  REQUIRE(strip_seconds(h1) == strip_seconds(read_file(run2.str() + "/history.csv")));
  REQUIRE(std::count(h1.begin(), h1.end(), '\n') == 3);  // header + 2 epochs
}

TEST_CASE("infer writes maps, manifest and honors pass-count contracts", "[cli]") {
  TempDir ds("cli_infer_ds"), run("cli_infer_run"), out("cli_infer_out"),
      out1("cli_infer_out1"), outd("cli_infer_outd");
  REQUIRE(run_cli("phantom --out " + ds.str() + " --seed 8" + kPhantomArgs)
              .exit_code == 0);
  REQUIRE(run_cli("train --data " + ds.str() + " --out " + run.str() + kTrainArgs +
                  " --dropout_rate 0.2")
              .exit_code == 0);

  SECTION("multi-pass run emits CoV maps and a complete manifest") {
    const auto r = run_cli("infer --checkpoint " + run.str() + "/best.ckpt --data " +
                           ds.str() + " --out " + out.str() + " --n_passes 3 --seed 5");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    for (const char* f : {"fa_mean.nii", "md_mean.nii", "fa_cov.nii", "md_cov.nii",
                          "manifest.json", "config.toml"})
      REQUIRE(fs::exists(out.path / f));

    std::ifstream mf(out.str() + "/manifest.json");
    const auto manifest = nlohmann::json::parse(mf);
    REQUIRE(manifest["n_passes"] == 3);
    // 24^3 tiled by 8^3 blocks: 27 blocks, 3 passes each
    REQUIRE(manifest["block_passes"].size() == 27 * 3);
    std::set<std::string> ids;
    for (const auto& r2 : manifest["block_passes"])
      ids.insert(r2["stream_id"].get<std::string>());
    REQUIRE(ids.size() == 27 * 3);
  }

  SECTION("single-pass run omits CoV maps and says why") {
    const auto r = run_cli("infer --checkpoint " + run.str() + "/best.ckpt --data " +
                           ds.str() + " --out " + out1.str() + " --n_passes 1");
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(out1.path / "fa_mean.nii"));
    REQUIRE_FALSE(fs::exists(out1.path / "fa_cov.nii"));
    REQUIRE(r.output.find("at least 2 passes") != std::string::npos);
  }

  SECTION("dropout override 0 reproduces deterministic inference") {
    const auto ra = run_cli("infer --checkpoint " + run.str() + "/best.ckpt --data " +
                            ds.str() + " --out " + outd.str() +
                            " --n_passes 4 --seed 1 --dropout_override 0");
    REQUIRE(ra.exit_code == 0);
    const auto fa1 = read_file(outd.str() + "/fa_mean.nii");
    fs::remove_all(outd.path);
    const auto rb = run_cli("infer --checkpoint " + run.str() + "/best.ckpt --data " +
                            ds.str() + " --out " + outd.str() +
                            " --n_passes 4 --seed 2 --dropout_override 0");
    REQUIRE(rb.exit_code == 0);
    // different seeds, identical outputs: no stochastic sites remain
    REQUIRE(fa1 == read_file(outd.str() + "/fa_mean.nii"));
  }
}

TEST_CASE("eval of the ground truth against itself reports zero MAE", "[cli]") {
  TempDir ds("cli_eval_ds"), out("cli_eval_out");
  REQUIRE(run_cli("phantom --out " + ds.str() + " --seed 9" + kPhantomArgs)
              .exit_code == 0);
  const auto r = run_cli("eval --pred " + ds.str() + " --data " + ds.str() +
                         " --pred_fa fa_gt.nii --pred_md md_gt.nii --out " + out.str());
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  const auto csv = read_file(out.str() + "/report.csv");
  REQUIRE(csv.find("subject0,0,0,") != std::string::npos);

  // the JSON fingerprint parses back to the resolved config
  std::ifstream jf(out.str() + "/report.json");
  const auto jrep = nlohmann::json::parse(jf);
  FlatConfig back;
  for (const auto& [k, v] : jrep["config"].items()) back.set(k, v.get<std::string>());
  const auto snapshot = FlatConfig::parse_file(out.str() + "/config.toml");
  for (const auto& k : snapshot.keys())
    REQUIRE(back.get_string(k) == snapshot.get_string(k));
}

TEST_CASE("sweep over one value emits a single row and caches checkpoints", "[cli]") {
  TempDir out("cli_sweep_out"), cache("cli_sweep_cache"), out2("cli_sweep_out2");
  const std::string common =
      "sweep --variable dropout_rate --values 0.2 --depth 2 --base_kernels 2 "
      "--block_size 8 --epochs 1 --train_subjects 1 --n_passes 2 --dims 20 "
      "--noise_sigma 10 --extra_dirs 4 --cache " + cache.str();
  const auto r1 = run_cli(common + " --out " + out.str());
  INFO(r1.output);
  REQUIRE(r1.exit_code == 0);
  const auto csv = read_file(out.str() + "/sweep_dropout_rate.csv");
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 2);  // header + 1 row
  REQUIRE(csv.find("0.0438") != std::string::npos);        // reference column
  REQUIRE(fs::exists(out.path / "sweep_dropout_rate_long.csv"));
  REQUIRE(fs::exists(out.path / "sweep_dropout_rate.json"));
  REQUIRE(r1.output.find("cache hit") == std::string::npos);

  const auto r2 = run_cli(common + " --out " + out2.str());
  REQUIRE(r2.exit_code == 0);
  REQUIRE(r2.output.find("cache hit") != std::string::npos);
  REQUIRE(read_file(out2.str() + "/sweep_dropout_rate.csv") == csv);
}
