#include <cmath>
#include <functional>
#include <numeric>

#include "dect/phantom.hpp"
#include "dect/physics.hpp"
#include "dect/rng.hpp"
#include "dect/training.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace dect;

namespace {

Mat random_mat(Rng& rng, int rows, int cols, double std = 0.4) {
  Mat m(rows, cols);
  for (double& v : m.data()) v = rng.gaussian(0.0, std);
  return m;
}

std::vector<double> random_alpha(Rng& rng, int n) {
  std::vector<double> a(static_cast<size_t>(n));
  for (double& v : a) v = rng.uniform(-1.5, 0.0);
  return a;
}

// instance with a comfortable threshold margin so finite differences stay on
// one side of the dead zone
struct Instance {
  RefinerParams params;
  MiniBatch batch;
};

Instance margin_instance(Rng& rng, RefinerVariant v, int r, int K, int B) {
  const int R = r * r;
  for (;;) {
    RefinerParams params =
        variant_is_identical(v)
            ? RefinerParams::make_identical(v, r, K, random_mat(rng, 2 * K, 2 * R),
                                            random_alpha(rng, 2 * K))
            : RefinerParams::make(v, r, K, random_mat(rng, 2 * K, 2 * R),
                                  random_mat(rng, 2 * R, 2 * K), random_alpha(rng, 2 * K));
    MiniBatch batch{random_mat(rng, 2 * R, B, 1.0), random_mat(rng, 2 * R, B, 1.0)};
    const Mat pre = matmul(params.encode, batch.inputs);
    bool ok = true;
    for (int k = 0; k < pre.rows() && ok; ++k) {
      const double a = std::exp(params.log_thresholds[k]);
      for (int b = 0; b < pre.cols() && ok; ++b)
        if (std::abs(std::abs(pre(k, b)) - a) < 1e-3) ok = false;
    }
    if (ok) return {std::move(params), std::move(batch)};
  }
}

double fd(const std::function<double()>& f, double& slot) {
  const double saved = slot;
  const double h = 1e-5 * std::max(1.0, std::abs(saved));
  slot = saved + h;
  const double lp = f();
  slot = saved - h;
  const double lm = f();
  slot = saved;
  return (lp - lm) / (2.0 * h);
}

}  // namespace

TEST_CASE("loss: dead network, zero targets, brute-force oracle") {
  Rng rng(3);
  const int r = 2, R = 4, K = 2, B = 5;
  Mat targets = random_mat(rng, 2 * R, B, 1.0);
  Mat inputs = random_mat(rng, 2 * R, B, 1.0);

  // zero encoder leaves only the target energy
  RefinerParams dead = RefinerParams::make(RefinerVariant::DistinctCross, r, K, Mat(2 * K, 2 * R),
                                           random_mat(rng, 2 * R, 2 * K), random_alpha(rng, 2 * K));
  double energy = 0.0;
  for (double v : targets.data()) energy += v * v;
  CHECK(refiner_loss(dead, targets, inputs) == doctest::Approx(energy / B).epsilon(1e-14));

  Mat zeros(2 * R, B);
  CHECK(refiner_loss(dead, zeros, inputs) == 0.0);

  RefinerParams p = RefinerParams::make(RefinerVariant::DistinctCross, r, K,
                                        random_mat(rng, 2 * K, 2 * R),
                                        random_mat(rng, 2 * R, 2 * K), random_alpha(rng, 2 * K));
  const double got = refiner_loss(p, targets, inputs);
  const double want =
      oracle::brute_force_loss(p.decode, p.encode, p.log_thresholds, targets, inputs);
  CHECK(got == doctest::Approx(want).epsilon(1e-13));

  // invariant under a simultaneous column permutation
  std::vector<std::int64_t> perm(B);
  std::iota(perm.begin(), perm.end(), 0);
  Rng prng(8);
  prng.shuffle(perm);
  TrainingCorpus corpus{targets, inputs};
  const MiniBatch shuffled = gather_batch(corpus, perm);
  CHECK(refiner_loss(p, shuffled.targets, shuffled.inputs) == doctest::Approx(got).epsilon(1e-13));
}

TEST_CASE("gradients vanish at zero residual and for a zero encoder") {
  Rng rng(13);
  const int r = 2, R = 4, K = 2, B = 6;
  RefinerParams p = RefinerParams::make(RefinerVariant::DistinctCross, r, K,
                                        random_mat(rng, 2 * K, 2 * R),
                                        random_mat(rng, 2 * R, 2 * K), random_alpha(rng, 2 * K));
  Mat inputs = random_mat(rng, 2 * R, B, 1.0);

  // construct targets that the network reproduces exactly
  Mat feat = matmul(p.encode, inputs);
  soft_threshold_rows(feat, p.log_thresholds);
  Mat targets = matmul(p.decode, feat);
  const GradientBatch g = grad_distinct(p, {targets, inputs});
  for (double v : g.decode_grad.data()) CHECK(v == 0.0);
  for (double v : g.encode_grad.data()) CHECK(v == 0.0);
  for (double v : g.log_threshold_grad) CHECK(v == 0.0);

  RefinerParams dead = RefinerParams::make(RefinerVariant::DistinctCross, r, K, Mat(2 * K, 2 * R),
                                           p.decode, p.log_thresholds);
  const GradientBatch gz = grad_distinct(dead, {random_mat(rng, 2 * R, B, 1.0), inputs});
  for (double v : gz.decode_grad.data()) CHECK(v == 0.0);  // features are all zero
  for (double v : gz.log_threshold_grad) CHECK(v == 0.0);  // sign(0) = 0
  for (double v : gz.encode_grad.data()) CHECK(v == 0.0);  // indicator never fires

  CHECK_THROWS_AS(grad_distinct(RefinerParams::make_identical(RefinerVariant::IdenticalCross, r,
                                                              K, p.encode, p.log_thresholds),
                                MiniBatch{targets, inputs}),
                  std::invalid_argument);
  CHECK_THROWS_AS(grad_identical(p, {targets, inputs}), std::invalid_argument);
}

TEST_CASE("analytic gradients match finite differences (spot checks)") {
  Rng rng(29);
  for (RefinerVariant v : {RefinerVariant::DistinctCross, RefinerVariant::IdenticalCross,
                           RefinerVariant::DistinctIndividual, RefinerVariant::IdenticalIndividual}) {
    for (int t = 0; t < 5; ++t) {
      Instance inst = margin_instance(rng, v, 2, 2, 5);
      const int r = 2, K = 2, R = 4;
      const GradientBatch analytic = variant_is_identical(v)
                                         ? grad_identical(inst.params, inst.batch)
                                         : grad_distinct(inst.params, inst.batch);
      Mat encode = inst.params.encode;
      Mat decode = inst.params.decode;
      std::vector<double> alpha = inst.params.log_thresholds;
      auto loss_at = [&]() {
        const RefinerParams p =
            variant_is_identical(v)
                ? RefinerParams::make_identical(v, r, K, encode, alpha)
                : RefinerParams::make(v, r, K, encode, decode, alpha);
        return refiner_loss(p, inst.batch.targets, inst.batch.inputs);
      };
      auto close = [&](double got, double want) {
        CHECK(std::abs(got - want) / (std::abs(want) + 1e-8) <= 1e-5);
      };
      for (int g = 0; g < 2; ++g)
        for (int m = 0; m < 2; ++m) {
          if (!variant_is_cross(v) && g != m) continue;
          for (int k = 0; k < K; ++k)
            for (int rr = 0; rr < R; ++rr) {
              close(analytic.encode_grad(g * K + k, m * R + rr),
                    fd(loss_at, encode(g * K + k, m * R + rr)));
              if (!variant_is_identical(v))
                close(analytic.decode_grad(m * R + rr, g * K + k),
                      fd(loss_at, decode(m * R + rr, g * K + k)));
            }
        }
      for (int k = 0; k < 2 * K; ++k)
        close(analytic.log_threshold_grad[k], fd(loss_at, alpha[k]));
    }
  }
}

TEST_CASE("tied-decoder gradient matches the hand-expanded scalar derivative") {
  // single pixel patches, one filter per material, one column
  const double ew = 0.8, eb = -1.1;
  const double aw = std::log(0.3), ab = std::log(0.5);
  const double xw = 1.4, xb = -0.9;    // targets
  const double iw = 2.0, ib = -1.7;    // inputs; |e*x'| is well past both thresholds
  Mat encode(2, 2);
  encode(0, 0) = ew;
  encode(1, 1) = eb;
  RefinerParams p = RefinerParams::make_identical(RefinerVariant::IdenticalIndividual, 1, 1,
                                                  encode, {aw, ab});
  Mat targets(2, 1), inputs(2, 1);
  targets(0, 0) = xw;
  targets(1, 0) = xb;
  inputs(0, 0) = iw;
  inputs(1, 0) = ib;
  const GradientBatch g = grad_identical(p, {targets, inputs});

  auto scalar = [](double e, double alpha, double x, double xin) {
    const double a = std::exp(alpha);
    const double c = e * xin;
    const double s = c > 0 ? 1.0 : -1.0;
    const double z = c - a * s;          // active by construction
    const double resid = x - e * z;
    const double de = -2.0 * resid * (z + e * xin);
    const double dalpha = 2.0 * e * resid * a * s;
    return std::pair<double, double>(de, dalpha);
  };
  const auto [dew, daw] = scalar(ew, aw, xw, iw);
  const auto [deb, dab] = scalar(eb, ab, xb, ib);
  CHECK(g.encode_grad(0, 0) == doctest::Approx(dew).epsilon(1e-12));
  CHECK(g.encode_grad(1, 1) == doctest::Approx(deb).epsilon(1e-12));
  CHECK(g.log_threshold_grad[0] == doctest::Approx(daw).epsilon(1e-12));
  CHECK(g.log_threshold_grad[1] == doctest::Approx(dab).epsilon(1e-12));
}

TEST_CASE("individual restriction: zero cross blocks, diagonal matches per-material formulas") {
  Rng rng(37);
  Instance inst = margin_instance(rng, RefinerVariant::DistinctIndividual, 2, 2, 6);
  const int R = 4, K = 2, B = 6;
  const GradientBatch g = grad_distinct(inst.params, inst.batch);

  for (int gg = 0; gg < 2; ++gg)
    for (int m = 0; m < 2; ++m) {
      if (gg == m) continue;
      for (int k = 0; k < K; ++k)
        for (int rr = 0; rr < R; ++rr) {
          CHECK(g.encode_grad(gg * K + k, m * R + rr) == 0.0);
          CHECK(g.decode_grad(m * R + rr, gg * K + k) == 0.0);
        }
    }

  // per-material reference computed with plain loops
  for (int m = 0; m < 2; ++m) {
    for (int k = 0; k < K; ++k) {
      for (int rr = 0; rr < R; ++rr) {
        double gd = 0.0, ge = 0.0;
        double galpha = 0.0;
        for (int b = 0; b < B; ++b) {
          // features and residual for this column, this material
          std::vector<double> feat(K), pre(K);
          for (int kk = 0; kk < K; ++kk) {
            double acc = 0.0;
            for (int r2 = 0; r2 < R; ++r2)
              acc += inst.params.encode(m * K + kk, m * R + r2) *
                     inst.batch.inputs(m * R + r2, b);
            pre[kk] = acc;
            feat[kk] = oracle::soft(acc, std::exp(inst.params.log_thresholds[m * K + kk]));
          }
          std::vector<double> resid(R);
          for (int r2 = 0; r2 < R; ++r2) {
            double rec = 0.0;
            for (int kk = 0; kk < K; ++kk)
              rec += inst.params.decode(m * R + r2, m * K + kk) * feat[kk];
            resid[r2] = inst.batch.targets(m * R + r2, b) - rec;
          }
          gd += resid[rr] * feat[k];
          double back = 0.0;
          for (int r2 = 0; r2 < R; ++r2)
            back += inst.params.decode(m * R + r2, m * K + k) * resid[r2];
          const double a = std::exp(inst.params.log_thresholds[m * K + k]);
          if (std::abs(pre[k]) > a) ge += back * inst.batch.inputs(m * R + rr, b);
          if (rr == 0) galpha += back * a * (feat[k] > 0 ? 1.0 : (feat[k] < 0 ? -1.0 : 0.0));
        }
        CHECK(g.decode_grad(m * R + rr, m * K + k) ==
              doctest::Approx(-2.0 / B * gd).epsilon(1e-11));
        CHECK(g.encode_grad(m * K + k, m * R + rr) ==
              doctest::Approx(-2.0 / B * ge).epsilon(1e-11));
        if (rr == 0)
          CHECK(g.log_threshold_grad[m * K + k] ==
                doctest::Approx(2.0 / B * galpha).epsilon(1e-11));
      }
    }
  }
}

TEST_CASE("batch sampler: determinism, coverage, edge cases") {
  const BatchSampler s(10, 4, 99);
  const auto a = s.epoch_batches(0);
  const auto b = s.epoch_batches(0);
  CHECK(a == b);
  CHECK(a.size() == 3);  // 4 + 4 + 2
  CHECK(a.back().size() == 2);
  std::vector<bool> seen(10, false);
  for (const auto& batch : a)
    for (auto idx : batch) {
      CHECK(!seen[idx]);
      seen[idx] = true;
    }
  for (bool v : seen) CHECK(v);
  CHECK(a != s.epoch_batches(1));  // different epoch, different permutation

  const BatchSampler whole(6, 6, 1);
  const auto w = whole.epoch_batches(0);
  CHECK(w.size() == 1);
  CHECK(w[0].size() == 6);

  CHECK_THROWS_AS(BatchSampler(4, 5, 0), std::invalid_argument);
}

TEST_CASE("train_refiner: descent on clean data, determinism, denoising efficacy") {
  // desk-scale denoising corpus from the synthetic pipeline
  const PhantomSpec spec = PhantomSpec::sample(64, 5);
  const auto [water, bone] = generate_phantom(spec);
  DecompPhysics ph{{0.2, 0.25, 0.25, 0.6}, {15625.0, 15625.0}};
  const NoiseSpec noise{0.008, 0.008, 42};
  const AttenuationPair y = synthesize_measurements(water, bone, ph, noise);
  const auto noisy = direct_inversion(y, ph);
  const TrainingCorpus full = build_training_corpus({{water, bone}}, {noisy}, 4);

  // truncate to the spec'd desk corpus size
  TrainingCorpus corpus;
  const int P = 2000;
  corpus.targets = Mat(full.targets.rows(), P);
  corpus.inputs = Mat(full.inputs.rows(), P);
  for (int r = 0; r < full.targets.rows(); ++r)
    for (int c = 0; c < P; ++c) {
      corpus.targets(r, c) = full.targets(r, c);
      corpus.inputs(r, c) = full.inputs(r, c);
    }

  TrainConfig cfg;
  cfg.batch_size = 200;
  cfg.epochs = 20;
  cfg.lr0 = 1e-2;
  cfg.seed = 77;
  cfg.alpha_init_cross = std::log(0.1);

  const TrainResult run1 = train_refiner(corpus, RefinerVariant::DistinctCross, 4, 8, cfg);
  const TrainResult run2 = train_refiner(corpus, RefinerVariant::DistinctCross, 4, 8, cfg);
  CHECK(bit_equal(run1.params.encode, run2.params.encode));
  CHECK(bit_equal(run1.params.decode, run2.params.decode));
  CHECK(run1.params.log_thresholds == run2.params.log_thresholds);

  // zero-network baseline loss, measured by the brute-force oracle
  const double baseline = oracle::brute_force_loss(
      Mat(corpus.targets.rows(), 16), Mat(16, corpus.targets.rows()),
      std::vector<double>(16, 0.0), corpus.targets, corpus.inputs);
  const double final_loss = run1.curves.at(0).records.back().loss;
  CHECK(final_loss <= 0.5 * baseline);

  // clean inputs: training must not end above where it started
  TrainingCorpus clean{corpus.targets, corpus.targets};
  const TrainResult rc = train_refiner(clean, RefinerVariant::DistinctCross, 4, 8, cfg);
  CHECK(rc.curves.at(0).records.back().loss <= rc.curves.at(0).records.front().loss);
  CHECK(rc.curves.at(0).records.back().loss <= baseline);

  // individual variants produce one curve per material
  const TrainResult ri = train_refiner(corpus, RefinerVariant::IdenticalIndividual, 4, 8, cfg);
  CHECK(ri.curves.size() == 2);
  CHECK(ri.curves[0].name == "water");
  CHECK(ri.curves[1].name == "bone");
  ri.params.validate();
}

TEST_CASE("build_training_corpus pairs columns spatially") {
  Rng rng(61);
  std::vector<std::pair<MaterialImage, MaterialImage>> refs, cur;
  for (int l = 0; l < 2; ++l) {
    ImageGrid a(5, 4), b(5, 4), c(5, 4), d(5, 4);
    for (double& v : a.data) v = rng.gaussian(0, 1);
    for (double& v : b.data) v = rng.gaussian(0, 1);
    for (double& v : c.data) v = rng.gaussian(0, 1);
    for (double& v : d.data) v = rng.gaussian(0, 1);
    refs.push_back({MaterialImage{a, Material::Water}, MaterialImage{b, Material::Bone}});
    cur.push_back({MaterialImage{c, Material::Water}, MaterialImage{d, Material::Bone}});
  }
  const TrainingCorpus corpus = build_training_corpus(refs, cur, 2);
  CHECK(corpus.targets.rows() == 8);
  CHECK(corpus.column_count() == 40);
  const PatchExtractor pe(5, 4, 2);
  const Mat second = pe.extract_pair(refs[1].first.grid, refs[1].second.grid);
  for (int r = 0; r < 8; ++r) CHECK(corpus.targets(r, 20 + 3) == second(r, 3));
}
