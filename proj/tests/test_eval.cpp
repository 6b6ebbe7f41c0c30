#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <sstream>
#include <vector>

#include "mcdti/eval.hpp"
#include "mcdti/rng.hpp"

using namespace mcdti;

namespace {

Volume random_map(Dims d, std::uint64_t seed, double offset = 0.0) {
  Volume v(1, d);
  rng::Stream s(rng::stream_key(seed));
  for (auto& x : v.data) x = static_cast<float>(s.next_unit() + offset);
  return v;
}

}  // namespace

TEST_CASE("mae closed forms and oracle", "[eval]") {
  const Dims d{4, 4, 4};
  const Volume a = random_map(d, 1);
  const Mask mask(d, true);

  REQUIRE(eval::mae(a, a, mask) == 0.0);

  Volume shifted = a;
  for (auto& x : shifted.data) x += 0.05f;
  REQUIRE(eval::mae(shifted, a, mask) == Catch::Approx(0.05).margin(1e-6));

  const Volume b = random_map(d, 2);
  Mask half(d, false);
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y) half.set(x, y, 0, true);
  double expect = 0.0;
  std::size_t n = 0;
  for (std::size_t v = 0; v < d.voxels(); ++v)
    if (half.bits[v]) {
      expect += std::abs(a.data[v] - b.data[v]);
      ++n;
    }
  REQUIRE(eval::mae(a, b, half) == Catch::Approx(expect / n).margin(1e-7));

  const Mask none(d, false);
  REQUIRE_THROWS_AS(eval::mae(a, b, none), DimensionError);
}

TEST_CASE("mae is a metric: symmetric with the triangle inequality", "[eval]") {
  const Dims d{5, 4, 3};
  const Mask mask(d, true);
  for (int trial = 0; trial < 10; ++trial) {
    const Volume a = random_map(d, 10 + trial);
    const Volume b = random_map(d, 20 + trial);
    const Volume c = random_map(d, 30 + trial);
    const double ab = eval::mae(a, b, mask);
    const double ba = eval::mae(b, a, mask);
    REQUIRE(ab == Catch::Approx(ba).margin(1e-12));
    REQUIRE(ab <= eval::mae(a, c, mask) + eval::mae(c, b, mask) + 1e-9);
  }
}

TEST_CASE("tissue uncertainty means", "[eval]") {
  const Dims d{8, 8, 8};
  TissueLabels labels(d);
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y)
      for (int z = 0; z < 8; ++z)
        labels.set(x, y, z, static_cast<Tissue>((x + y + z) % kTissueCount));

  SECTION("uniform map gives equal means") {
    Volume cov(1, d);
    std::fill(cov.data.begin(), cov.data.end(), 0.25f);
    const auto stats = eval::tissue_uncertainty(cov, labels);
    for (const auto& s : stats) {
      REQUIRE(s.mean_cov == Catch::Approx(0.25).margin(1e-7));
      REQUIRE(s.voxels > 0);
    }
  }
  SECTION("map equal to the label id recovers the ids") {
    Volume cov(1, d);
    for (std::size_t v = 0; v < d.voxels(); ++v)
      cov.data[v] = static_cast<float>(labels.labels[v]);
    const auto stats = eval::tissue_uncertainty(cov, labels);
    for (const auto& s : stats)
      REQUIRE(s.mean_cov == Catch::Approx(static_cast<double>(s.tissue)).margin(1e-7));
  }
}

TEST_CASE("artifact contrast ratios", "[eval]") {
  const Dims d{6, 6, 6};
  Mask parenchyma(d, true);
  Mask artifact(d, false);
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 3; ++y)
      for (int z = 0; z < 3; ++z) artifact.set(x, y, z, true);

  Volume cov(1, d);
  std::fill(cov.data.begin(), cov.data.end(), 0.2f);
  REQUIRE(eval::artifact_contrast(cov, artifact, parenchyma) ==
          Catch::Approx(1.0).margin(1e-7));

  for (std::size_t v = 0; v < d.voxels(); ++v)
    if (artifact.bits[v]) cov.data[v] = 0.4f;
  REQUIRE(eval::artifact_contrast(cov, artifact, parenchyma) ==
          Catch::Approx(2.0).margin(1e-6));

  const Mask empty(d, false);
  REQUIRE_THROWS_AS(eval::artifact_contrast(cov, empty, parenchyma), DimensionError);
}

TEST_CASE("sweep csv layout with reference columns", "[eval]") {
  eval::SweepTable table;
  table.variable = "dropout_rate";
  table.columns = {"mae_fa", "mae_md", "ref_hcp_mae_fa", "ref_hcp_mae_md"};

  SECTION("empty table is header-only") {
    REQUIRE(eval::sweep_csv(table) ==
            "dropout_rate,mae_fa,mae_md,ref_hcp_mae_fa,ref_hcp_mae_md\n");
  }

  SECTION("rows render and missing references stay blank") {
    eval::SweepRow matched;
    matched.value = 0.2;
    matched.metrics = {{"mae_fa", 0.05},
                       {"mae_md", 0.06},
                       {"ref_hcp_mae_fa", 0.0438},
                       {"ref_hcp_mae_md", 0.0496}};
    eval::SweepRow unmatched;
    unmatched.value = 0.25;
    unmatched.metrics = {{"mae_fa", 0.07},
                         {"mae_md", 0.08},
                         {"ref_hcp_mae_fa", std::nan("")},
                         {"ref_hcp_mae_md", std::nan("")}};
    table.rows = {matched, unmatched};
    const auto csv = eval::sweep_csv(table);
    REQUIRE(csv.find("0.2,0.05,0.06,0.0438,0.0496\n") != std::string::npos);
    REQUIRE(csv.find("0.25,0.07,0.08,,\n") != std::string::npos);

    const auto longcsv = eval::sweep_long_csv(table);
    REQUIRE(longcsv.find("variable,value,metric,metric_value\n") == 0);
    REQUIRE(longcsv.find("dropout_rate,0.2,mae_fa,0.05\n") != std::string::npos);
    // NaN metrics are omitted from the long format
    REQUIRE(longcsv.find("0.25,ref_hcp_mae_fa") == std::string::npos);
  }
}

TEST_CASE("reference tables match their source rows", "[eval]") {
  const auto r = eval::ref_lookup(eval::kRefHcpDropoutSweep, 0.2);
  REQUIRE(r.has_value());
  REQUIRE(r->mae_fa == 0.0438);
  REQUIRE(r->mae_md == 0.0496);
  const auto n1 = eval::ref_lookup(eval::kRefHcpPredictionSweep, 1);
  REQUIRE(n1->mae_fa == 0.0460);
  REQUIRE(n1->mae_md == 0.0529);
  REQUIRE_FALSE(eval::ref_lookup(eval::kRefHcpDropoutSweep, 0.25).has_value());
}

namespace {

eval::SweepContext tiny_ctx(const std::string& cache_dir = "") {
  eval::SweepContext ctx;
  ctx.net_cfg = {.depth = 2, .base_kernels = 2, .dropout_rate = 0.2, .block_size = 8};
  ctx.train_cfg.epochs = 0;  // keep unit-level sweeps cheap
  ctx.train_cfg.seed = 3;
  ctx.phantom_tmpl.dims = {16, 16, 16};
  ctx.phantom_tmpl.seed = 50;
  ctx.phantom_tmpl.noise_sigma = 10.0;
  ctx.train_subjects = 1;
  ctx.test_subjects = 1;
  ctx.n_passes = 4;
  ctx.cache_dir = cache_dir;
  return ctx;
}

}  // namespace

TEST_CASE("npredictions sweep with a single n equals single-pass inference", "[eval]") {
  const auto ctx = tiny_ctx();
  auto net = nn::DUNet::build(ctx.net_cfg, 5);
  const auto tests = eval::make_test_subjects(ctx);

  const auto table = eval::sweep_npredictions({1}, net, tests, 77);
  REQUIRE(table.rows.size() == 1);
  REQUIRE(table.rows[0].value == 1);

  const auto direct = eval::mc_mae(net, tests, 1, 77);
  REQUIRE(table.rows[0].metrics[0].second == Catch::Approx(direct.fa).margin(1e-12));
  REQUIRE(table.rows[0].metrics[1].second == Catch::Approx(direct.md).margin(1e-12));
}

TEST_CASE("npredictions sweep reuses one seeded pass sequence", "[eval]") {
  const auto ctx = tiny_ctx();
  auto net = nn::DUNet::build(ctx.net_cfg, 6);
  const auto tests = eval::make_test_subjects(ctx);

  const auto table = eval::sweep_npredictions({1, 2, 4}, net, tests, 33);
  REQUIRE(table.rows.size() == 3);
  // each listed n matches an independent infer_volume run with that n
  for (const auto& row : table.rows) {
    const auto direct = eval::mc_mae(net, tests, static_cast<int>(row.value), 33);
    REQUIRE(row.metrics[0].second == Catch::Approx(direct.fa).margin(1e-9));
    REQUIRE(row.metrics[1].second == Catch::Approx(direct.md).margin(1e-9));
  }
}

TEST_CASE("dropout sweep emits one row per rate", "[eval]") {
  const auto ctx = tiny_ctx();
  const auto table = eval::sweep_dropout({0.2}, ctx);
  REQUIRE(table.rows.size() == 1);
  REQUIRE(table.rows[0].value == 0.2);
  // the 0.2 row carries the reference comparison values
  REQUIRE(table.rows[0].metrics[2].second == 0.0438);
}

TEST_CASE("empty sweep inputs are usage errors", "[eval]") {
  const auto ctx = tiny_ctx();
  auto net = nn::DUNet::build(ctx.net_cfg, 5);
  REQUIRE_THROWS_AS(eval::sweep_dropout({}, ctx), UsageError);
  REQUIRE_THROWS_AS(eval::sweep_npredictions({}, net, {}, 0), UsageError);
  REQUIRE_THROWS_AS(eval::sweep_training_size({}, ctx), UsageError);
}

TEST_CASE("training-size sweep: p=0 DU-Net column equals the plain U-Net column",
          "[eval]") {
  auto ctx = tiny_ctx();
  ctx.net_cfg.dropout_rate = 0.0;  // DU-Net with p=0 is the plain network
  const auto table = eval::sweep_training_size({1}, ctx);
  REQUIRE(table.rows.size() == 1);
  const auto& m = table.rows[0].metrics;
  // with p=0 a single "stochastic" pass and the 4-pass average are both the
  // deterministic prediction
  REQUIRE(m[0].second == Catch::Approx(m[2].second).margin(1e-12));  // fa: unet vs 1
  REQUIRE(m[2].second == Catch::Approx(m[4].second).margin(1e-12));  // fa: 1 vs avg
  REQUIRE(m[1].second == Catch::Approx(m[3].second).margin(1e-12));  // md
}

TEST_CASE("checkpoint cache hits skip retraining", "[eval]") {
  const std::string dir = "test_eval_cache_tmp";
  std::filesystem::create_directories(dir);
  auto ctx = tiny_ctx(dir);
  std::ostringstream log;
  ctx.log = &log;

  const auto first = eval::trained_net(ctx, 0.2, 1);
  REQUIRE(log.str().find("cache store") != std::string::npos);
  REQUIRE(log.str().find("cache hit") == std::string::npos);

  const auto second = eval::trained_net(ctx, 0.2, 1);
  REQUIRE(log.str().find("cache hit") != std::string::npos);
  for (std::size_t i = 0; i < first.params().size(); ++i)
    REQUIRE(first.params()[i].value.data == second.params()[i].value.data);
  std::filesystem::remove_all(dir);
}

TEST_CASE("report csv hides tissues below the voxel threshold", "[eval]") {
  eval::EvalReport rep;
  rep.subject = "subject0";
  rep.mae_fa = 0.04;
  rep.mae_md = 0.05;
  rep.tissue_fa_cov = {{Tissue::WhiteMatter, 0.11, 500},
                       {Tissue::CorpusCallosum, 0.07, 12}};  // below threshold
  rep.n_passes = 8;
  rep.dropout_rate = 0.2;
  const auto csv = eval::report_csv({rep});
  REQUIRE(csv.find("subject,mae_fa,mae_md,cov_fa_white_matter") == 0);
  REQUIRE(csv.find("subject0,0.04,0.05,0.11,,,,")!= std::string::npos);
}
