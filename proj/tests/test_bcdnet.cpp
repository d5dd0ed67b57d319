#include <cmath>
#include <filesystem>
#include <fstream>

#include "dect/bcdnet.hpp"
#include "dect/eval.hpp"
#include "dect/phantom.hpp"
#include "dect/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace dect;
namespace fs = std::filesystem;

namespace {

const DecompPhysics kPhysics{{0.2, 0.25, 0.25, 0.6}, {15625.0, 15625.0}};

TrainPair make_pair(std::uint64_t phantom_seed, double sigma, std::uint64_t noise_seed,
                    int size = 48) {
  const PhantomSpec spec = PhantomSpec::sample(size, phantom_seed);
  auto [water, bone] = generate_phantom(spec);
  const NoiseSpec noise{sigma, sigma, noise_seed};
  AttenuationPair y = synthesize_measurements(water, bone, kPhysics, noise);
  return {std::move(water), std::move(bone), std::move(y)};
}

TrainConfig desk_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.batch_size = 100;
  cfg.epochs = 4;
  cfg.lr0 = 1e-2;
  cfg.seed = seed;
  cfg.alpha_init_cross = std::log(0.1);
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

BcdNetModel tiny_model(int iterations, double alpha_value, double beta) {
  Rng rng(555);
  BcdNetModel model;
  model.variant = RefinerVariant::DistinctCross;
  model.patch_side = 2;
  model.filters_per_group = 2;
  model.beta = beta;
  model.seed = 1;
  for (int i = 0; i < iterations; ++i) {
    Mat encode(4, 8), decode(8, 4);
    for (double& v : encode.data()) v = rng.gaussian(0, 0.4);
    for (double& v : decode.data()) v = rng.gaussian(0, 0.4);
    model.iterations.push_back(RefinerParams::make(RefinerVariant::DistinctCross, 2, 2, encode,
                                                   decode, std::vector<double>(4, alpha_value)));
  }
  return model;
}

}  // namespace

TEST_CASE("train_bcdnet: structure, zero-noise regression, determinism") {
  std::vector<TrainPair> pairs{make_pair(1, 0.0, 0)};
  // zero noise: weights are reported as 1.0 and essentially no prior is needed
  DecompPhysics ph = kPhysics;
  ph.noise_weight = {1.0, 1.0};

  TrainConfig cfg = desk_config(2024);
  const TrainModelResult res =
      train_bcdnet(pairs, ph, RefinerVariant::DistinctCross, 1e-5, 2, 4, 4, cfg, "digest");
  CHECK(res.model.iteration_count() == 2);
  CHECK(res.stats.size() == 3);
  CHECK(res.stats[0].iteration == 0);
  CHECK(res.stats[0].rmse_water == doctest::Approx(0.0).epsilon(1e-10));

  // perfect inputs must not be degraded beyond 1e-3 g/cm^3
  CHECK(res.stats.back().rmse_water <= 1e-3);
  CHECK(res.stats.back().rmse_bone <= 1e-3);

  const TrainModelResult rerun =
      train_bcdnet(pairs, ph, RefinerVariant::DistinctCross, 1e-5, 2, 4, 4, cfg, "digest");
  const std::string p1 = (fs::temp_directory_path() / "dect_model_a.bcdn").string();
  const std::string p2 = (fs::temp_directory_path() / "dect_model_b.bcdn").string();
  save_model(res.model, p1);
  save_model(rerun.model, p2);
  CHECK(slurp(p1) == slurp(p2));
  fs::remove(p1);
  fs::remove(p2);

  // single-iteration training is just refine-once + one closed-form update
  const TrainModelResult one =
      train_bcdnet(pairs, ph, RefinerVariant::DistinctCross, 1e-5, 1, 4, 4, cfg);
  CHECK(one.model.iteration_count() == 1);
  CHECK(one.stats.size() == 2);
}

TEST_CASE("apply_model: saturated thresholds reduce to the analytic fixed point") {
  const BcdNetModel model = tiny_model(3, 40.0, 7.5);  // thresholds ~ e^40 kill the refiner
  const TrainPair tp = make_pair(2, 0.004, 9, 24);
  const DecompositionTrace trace = apply_model(model, tp.measurements, kPhysics);
  CHECK(trace.iterates.size() == 4);

  const Mat22 a0 = kPhysics.mass_atten;
  const Mat22 w0 = Mat22::diag(kPhysics.noise_weight[0], kPhysics.noise_weight[1]);
  const Mat22 system = a0.transposed() * w0 * a0 + Mat22::diag(2 * model.beta, 2 * model.beta);
  const Mat22 atw = a0.transposed() * w0;
  for (size_t i = 1; i < trace.iterates.size(); ++i) {
    for (std::int64_t j = 0; j < tp.measurements.high.size(); ++j) {
      const auto rhs = atw.apply({tp.measurements.high.data[j], tp.measurements.low.data[j]});
      const auto expect = oracle::solve2(system, rhs[0], rhs[1]);
      CHECK(trace.iterates[i].first.grid.data[j] ==
            doctest::Approx(expect[0]).epsilon(1e-10));
      CHECK(trace.iterates[i].second.grid.data[j] ==
            doctest::Approx(expect[1]).epsilon(1e-10));
    }
  }
}

TEST_CASE("apply_model: beta override 0 pins every iterate to direct inversion") {
  const BcdNetModel model = tiny_model(2, -0.5, 1234.0);
  const TrainPair tp = make_pair(3, 0.008, 11, 24);
  const DecompositionTrace trace = apply_model(model, tp.measurements, kPhysics, 0.0);
  const auto di = direct_inversion(tp.measurements, kPhysics);
  for (const auto& it : trace.iterates)
    for (std::int64_t j = 0; j < di.first.grid.size(); ++j) {
      CHECK(it.first.grid.data[j] ==
            doctest::Approx(di.first.grid.data[j]).epsilon(1e-12));
      CHECK(it.second.grid.data[j] ==
            doctest::Approx(di.second.grid.data[j]).epsilon(1e-12));
    }
}

TEST_CASE("model save/load: lossless round trip and corrupt-file errors") {
  const BcdNetModel model = tiny_model(2, -0.3, 42.0);
  const std::string path = (fs::temp_directory_path() / "dect_roundtrip.bcdn").string();
  save_model(model, path);
  const BcdNetModel back = load_model(path);
  CHECK(back.iteration_count() == 2);
  CHECK(back.beta == model.beta);
  CHECK(back.variant == model.variant);
  for (int i = 0; i < 2; ++i) {
    CHECK(bit_equal(back.iterations[i].encode, model.iterations[i].encode));
    CHECK(bit_equal(back.iterations[i].decode, model.iterations[i].decode));
    CHECK(back.iterations[i].log_thresholds == model.iterations[i].log_thresholds);
  }

  // save(load(f)) is byte-identical
  const std::string path2 = (fs::temp_directory_path() / "dect_roundtrip2.bcdn").string();
  save_model(back, path2);
  CHECK(slurp(path) == slurp(path2));

  std::string bytes = slurp(path);
  bytes[0] = 'X';
  {
    std::ofstream out(path2, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(load_model(path2), doctest::Contains("magic"), std::runtime_error);

  bytes[0] = 'B';
  bytes[4] = 9;  // version 9
  {
    std::ofstream out(path2, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(load_model(path2), doctest::Contains("unsupported"), std::runtime_error);

  bytes[4] = 1;
  {
    std::ofstream out(path2, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 9));
  }
  CHECK_THROWS_WITH_AS(load_model(path2), doctest::Contains("truncated"), std::runtime_error);

  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("train_bcdnet improves a noisy desk problem end to end") {
  std::vector<TrainPair> pairs{make_pair(4, 0.008, 21, 64), make_pair(5, 0.008, 22, 64)};
  TrainConfig cfg = desk_config(31337);
  cfg.epochs = 10;
  cfg.alpha_init_water = cfg.alpha_init_bone = std::log(0.1);
  const TrainModelResult res =
      train_bcdnet(pairs, kPhysics, RefinerVariant::IdenticalIndividual, 300.0, 2, 4, 8, cfg);
  CHECK(res.stats.back().rmse_water < res.stats.front().rmse_water);
  CHECK(res.stats.back().rmse_bone < res.stats.front().rmse_bone);

  // held-out generalization at the full desk scale is gated in the
  // acceptance suite; two toy training phantoms are not enough for it
  const TrainPair held = make_pair(6, 0.008, 23, 64);
  const DecompositionTrace trace = apply_model(res.model, held.measurements, kPhysics);
  CHECK(trace.iterates.size() == 3);
  for (const auto& it : trace.iterates) {
    it.first.grid.validate("held-out iterate");
    it.second.grid.validate("held-out iterate");
  }
}
