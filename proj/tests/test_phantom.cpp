#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <vector>

#include "mcdti/dti.hpp"
#include "mcdti/phantom.hpp"
#include "mcdti/rng.hpp"

using namespace mcdti;

namespace {

phantom::PhantomSpec small_spec(std::uint64_t seed, double sigma = 0.0) {
  phantom::PhantomSpec spec;
  spec.dims = {24, 24, 24};
  spec.seed = seed;
  spec.noise_sigma = sigma;
  return spec;
}

double tissue_mean(const Volume& map, const TissueLabels& labels, Tissue t) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t v = 0; v < map.dims.voxels(); ++v)
    if (labels.labels[v] == static_cast<std::uint8_t>(t)) {
      sum += map.data[v];
      ++n;
    }
  REQUIRE(n > 0);
  return sum / n;
}

}  // namespace

TEST_CASE("identical specs generate bit-identical datasets", "[phantom]") {
  const auto a = phantom::generate_phantom(small_spec(11, 15.0));
  const auto b = phantom::generate_phantom(small_spec(11, 15.0));
  REQUIRE(a.full_dwi.data == b.full_dwi.data);
  REQUIRE(a.input_dwi.data == b.input_dwi.data);
  REQUIRE(a.gt_fa.data == b.gt_fa.data);
  REQUIRE(a.gt_md.data == b.gt_md.data);
  REQUIRE(a.labels.labels == b.labels.labels);
  REQUIRE(a.mask.bits == b.mask.bits);

  const auto c = phantom::generate_phantom(small_spec(12, 15.0));
  REQUIRE(a.full_dwi.data != c.full_dwi.data);
}

TEST_CASE("every tissue region is populated and labels fill the mask", "[phantom]") {
  const auto ds = phantom::generate_phantom(small_spec(1));
  std::array<std::size_t, kTissueCount> counts{};
  for (std::size_t v = 0; v < ds.labels.labels.size(); ++v) {
    counts[ds.labels.labels[v]] += 1;
    REQUIRE((ds.labels.labels[v] != 0) == (ds.mask.bits[v] != 0));
  }
  for (int t = 1; t < kTissueCount; ++t) REQUIRE(counts[t] >= 100);
}

TEST_CASE("noiseless ground truth reflects the generating priors", "[phantom]") {
  const auto ds = phantom::generate_phantom(small_spec(2, 0.0));

  // sigma = 0: the stored full data are the noiseless signals, so refitting
  // them reproduces the shipped ground truth exactly
  const auto maps = dti::fit_volume(ds.full_dwi, ds.mask, ds.scheme);
  REQUIRE(maps.fa_map.data == ds.gt_fa.data);
  REQUIRE(maps.md_map.data == ds.gt_md.data);

  // per-voxel values land in the ranges implied by the tensor priors
  for (std::size_t v = 0; v < ds.labels.labels.size(); ++v) {
    const auto t = static_cast<Tissue>(ds.labels.labels[v]);
    const double fa = ds.gt_fa.data[v];
    const double md = ds.gt_md.data[v];
    switch (t) {
      case Tissue::Csf:
        REQUIRE(fa < 1e-4);
        REQUIRE((md > 2.5 - 1e-4 && md < 3.0 + 1e-4));
        break;
      case Tissue::CorticalGray:
        REQUIRE(fa < 1e-4);
        REQUIRE((md > 0.7 - 1e-4 && md < 0.9 + 1e-4));
        break;
      case Tissue::WhiteMatter:
        // FA of (1.4, 0.4, 0.4) .. (1.8, 0.2, 0.2)
        REQUIRE((fa > 0.60 && fa < 0.90));
        break;
      case Tissue::DeepGray:
        REQUIRE(fa <= 0.25 + 1e-4);
        break;
      case Tissue::CorpusCallosum:
        REQUIRE(fa > 0.70);
        break;
      case Tissue::Background:
        REQUIRE(fa == 0.0);
        break;
    }
  }
}

TEST_CASE("tissue contrast orderings hold across seeds", "[phantom]") {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto ds = phantom::generate_phantom(small_spec(seed));
    const double fa_cc = tissue_mean(ds.gt_fa, ds.labels, Tissue::CorpusCallosum);
    const double fa_wm = tissue_mean(ds.gt_fa, ds.labels, Tissue::WhiteMatter);
    const double fa_dgm = tissue_mean(ds.gt_fa, ds.labels, Tissue::DeepGray);
    const double fa_cgm = tissue_mean(ds.gt_fa, ds.labels, Tissue::CorticalGray);
    const double fa_csf = tissue_mean(ds.gt_fa, ds.labels, Tissue::Csf);
    REQUIRE(fa_cc > fa_wm);
    REQUIRE(fa_wm > fa_dgm);
    REQUIRE(fa_dgm > fa_cgm);
    REQUIRE(std::abs(fa_cgm - fa_csf) < 0.01);

    const double md_csf = tissue_mean(ds.gt_md, ds.labels, Tissue::Csf);
    const double md_cgm = tissue_mean(ds.gt_md, ds.labels, Tissue::CorticalGray);
    const double md_wm = tissue_mean(ds.gt_md, ds.labels, Tissue::WhiteMatter);
    REQUIRE(md_csf > md_cgm);
    REQUIRE(md_cgm > md_wm);
  }
}

TEST_CASE("input channels are the first b0 and the orthogonal directions", "[phantom]") {
  const auto ds = phantom::generate_phantom(small_spec(3, 10.0));
  REQUIRE(ds.input_dwi.channels == 4);
  REQUIRE(ds.scheme.entry(0).b == 0.0);
  // channel 0 <- scheme volume 0 (first b0); channels 1..3 <- the x/y/z
  // unit directions that follow the b0 volumes
  const int nb0 = 2;
  REQUIRE(ds.scheme.entry(nb0).g == std::array<double, 3>{1, 0, 0});
  REQUIRE(ds.scheme.entry(nb0 + 1).g == std::array<double, 3>{0, 1, 0});
  REQUIRE(ds.scheme.entry(nb0 + 2).g == std::array<double, 3>{0, 0, 1});
  for (int c = 0; c < 4; ++c) {
    const int src = c == 0 ? 0 : nb0 + c - 1;
    const auto a = ds.input_dwi.channel(c);
    const auto b = ds.full_dwi.channel(src);
    REQUIRE(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST_CASE("generated scheme is valid for fitting", "[phantom]") {
  const auto scheme = phantom::make_scheme(2, 12, 1.0);
  REQUIRE(scheme.n_volumes() == 2 + 3 + 12);
  REQUIRE_NOTHROW(scheme.validate_for_fit());
}

TEST_CASE("rician noise properties", "[phantom]") {
  Volume v(1, {8, 8, 8});
  rng::Stream s(rng::stream_key(21));
  for (auto& x : v.data) x = static_cast<float>(100.0 * s.next_unit());

  SECTION("sigma zero is the identity") {
    const auto out = phantom::add_rician_noise(v, 0.0, 5);
    REQUIRE(out.data == v.data);
  }
  SECTION("outputs are nonnegative") {
    Volume mixed = v;
    for (std::size_t i = 0; i < mixed.data.size(); i += 2) mixed.data[i] *= -1.0f;
    const auto out = phantom::add_rician_noise(mixed, 30.0, 6);
    for (float x : out.data) REQUIRE(x >= 0.0f);
  }
  SECTION("zero signal gives the Rayleigh mean sigma*sqrt(pi/2)") {
    Volume zeros(1, {20, 20, 25});  // 10^4 samples
    const auto out = phantom::add_rician_noise(zeros, 1.0, 7);
    double mean = 0.0;
    for (float x : out.data) mean += x;
    mean /= out.data.size();
    REQUIRE(mean == Catch::Approx(std::sqrt(std::numbers::pi / 2.0)).epsilon(0.01));
  }
  SECTION("determinism under a fixed seed") {
    const auto a = phantom::add_rician_noise(v, 12.0, 8);
    const auto b = phantom::add_rician_noise(v, 12.0, 8);
    REQUIRE(a.data == b.data);
    const auto c = phantom::add_rician_noise(v, 12.0, 9);
    REQUIRE(a.data != c.data);
  }
}

TEST_CASE("letter artifact geometry and values", "[phantom]") {
  const auto ds = phantom::generate_phantom(small_spec(4, 5.0));

  SECTION("dark polarity zeroes exactly the masked voxels") {
    const auto res = phantom::inject_letter_artifact(
        ds.input_dwi, phantom::ArtifactPolarity::Dark, 10, 14, 2);
    // 19 bits, scale 2, 4 slices
    REQUIRE(res.artifact_mask.popcount() == 19 * 4 * 4);
    for (std::size_t v = 0; v < ds.input_dwi.dims.voxels(); ++v) {
      for (int c = 0; c < 4; ++c) {
        const std::size_t i = c * ds.input_dwi.dims.voxels() + v;
        if (res.artifact_mask.bits[v])
          REQUIRE(res.vol.data[i] == 0.0f);
        else
          REQUIRE(res.vol.data[i] == ds.input_dwi.data[i]);
      }
    }
  }

  SECTION("bright polarity uses 3x the in-letter 99th percentile") {
    const auto res = phantom::inject_letter_artifact(
        ds.input_dwi, phantom::ArtifactPolarity::Bright, 11, 13, 1);
    for (int c = 0; c < 4; ++c) {
      auto inside = masked_values(ds.input_dwi, res.artifact_mask, c);
      std::sort(inside.begin(), inside.end());
      const std::size_t idx = std::min(
          inside.size() - 1,
          static_cast<std::size_t>(std::ceil(0.99 * inside.size())) - 1);
      const float expected = 3.0f * inside[idx];
      for (std::size_t v = 0; v < ds.input_dwi.dims.voxels(); ++v)
        if (res.artifact_mask.bits[v])
          REQUIRE(res.vol.data[c * ds.input_dwi.dims.voxels() + v] == expected);
    }
  }

  SECTION("slice range and raster bounds are validated") {
    REQUIRE_THROWS_AS(phantom::inject_letter_artifact(
                          ds.input_dwi, phantom::ArtifactPolarity::Dark, 10, 30, 1),
                      DimensionError);
    REQUIRE_THROWS_AS(phantom::inject_letter_artifact(
                          ds.input_dwi, phantom::ArtifactPolarity::Dark, 10, 14, 4),
                      DimensionError);
  }
}

TEST_CASE("dataset directory round trip", "[phantom]") {
  const auto ds = phantom::generate_phantom(small_spec(5, 8.0));
  const std::string dir = "test_phantom_tmp";
  std::filesystem::create_directories(dir);
  phantom::save_dataset(ds, dir);
  const auto back = phantom::load_dataset(dir);
  REQUIRE(back.full_dwi.data == ds.full_dwi.data);
  REQUIRE(back.input_dwi.data == ds.input_dwi.data);
  REQUIRE(back.gt_fa.data == ds.gt_fa.data);
  REQUIRE(back.labels.labels == ds.labels.labels);
  REQUIRE(back.mask.bits == ds.mask.bits);
  REQUIRE(back.scheme.n_volumes() == ds.scheme.n_volumes());
  std::filesystem::remove_all(dir);
}
