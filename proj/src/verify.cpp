#include "dect/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>

#include "dect/eval.hpp"
#include "dect/phantom.hpp"
#include "dect/physics.hpp"
#include "dect/refiner.hpp"
#include "dect/rng.hpp"
#include "dect/training.hpp"

namespace dect {

namespace {

ImageGrid random_image(Rng& rng, int w, int h, double scale = 1.0) {
  ImageGrid img(w, h);
  for (double& v : img.data) v = rng.gaussian(0.0, scale);
  return img;
}

Mat random_mat(Rng& rng, int rows, int cols, double std) {
  Mat m(rows, cols);
  for (double& v : m.data()) v = rng.gaussian(0.0, std);
  return m;
}

std::vector<double> random_alpha(Rng& rng, int n, double lo = -1.5, double hi = 0.0) {
  std::vector<double> a(static_cast<size_t>(n));
  for (double& v : a) v = rng.uniform(lo, hi);
  return a;
}

RefinerParams random_params(Rng& rng, RefinerVariant v, int r, int K) {
  const int R = r * r;
  if (variant_is_identical(v))
    return RefinerParams::make_identical(v, r, K, random_mat(rng, 2 * K, 2 * R, 0.4),
                                         random_alpha(rng, 2 * K));
  return RefinerParams::make(v, r, K, random_mat(rng, 2 * K, 2 * R, 0.4),
                             random_mat(rng, 2 * R, 2 * K, 0.4), random_alpha(rng, 2 * K));
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// --- check 1: the convolution route must reproduce the patch route ---------

CheckResult check_equivalence(const VerifyOptions& opts) {
  Rng rng(derive_seed(opts.seed, 1));
  const RefinerVariant variants[4] = {
      RefinerVariant::DistinctCross, RefinerVariant::IdenticalCross,
      RefinerVariant::DistinctIndividual, RefinerVariant::IdenticalIndividual};
  const int sides[3] = {2, 3, 4};
  const int filters[3] = {1, 2, 4};
  double worst = 0.0;
  for (int t = 0; t < opts.trials_equivalence; ++t) {
    const int r = sides[rng.uniform_int(0, 2)];
    const int K = filters[rng.uniform_int(0, 2)];
    const int w = rng.uniform_int(8, 16);
    const int h = rng.uniform_int(8, 16);
    const RefinerVariant v = variants[t % 4];
    const RefinerParams params = random_params(rng, v, r, K);
    const MaterialImage water{random_image(rng, w, h), Material::Water};
    const MaterialImage bone{random_image(rng, w, h), Material::Bone};
    const auto patch = refine(params, water, bone);
    const auto conv = refine_conv(params, water, bone);
    double scale = std::max(max_abs(patch.first.grid.data), max_abs(patch.second.grid.data));
    scale = std::max(scale, 1e-300);
    for (std::int64_t j = 0; j < patch.first.grid.size(); ++j) {
      worst = std::max(worst,
                       std::abs(patch.first.grid.data[j] - conv.first.grid.data[j]) / scale);
      worst = std::max(worst,
                       std::abs(patch.second.grid.data[j] - conv.second.grid.data[j]) / scale);
    }
  }
  return {"conv_patch_equivalence", worst <= 1e-9, worst, 1e-9,
          std::to_string(opts.trials_equivalence) + " random instances"};
}

// --- check 2: image-domain loss is bounded by the patch loss ---------------

CheckResult check_loss_bound(const VerifyOptions& opts) {
  Rng rng(derive_seed(opts.seed, 2));
  double worst = -1.0;  // signed (conv - patch) / patch, should stay <= ~0
  for (int t = 0; t < opts.trials_loss_bound; ++t) {
    const int r = rng.uniform_int(2, 3);
    const int K = rng.uniform_int(1, 2);
    const int w = rng.uniform_int(8, 14);
    const int h = rng.uniform_int(8, 14);
    const int L = rng.uniform_int(1, 2);
    const RefinerParams params = random_params(rng, RefinerVariant::DistinctCross, r, K);
    const int R = r * r;

    double conv_loss = 0.0, patch_loss = 0.0;
    for (int l = 0; l < L; ++l) {
      const MaterialImage tw{random_image(rng, w, h), Material::Water};
      const MaterialImage tb{random_image(rng, w, h), Material::Bone};
      const MaterialImage xw{random_image(rng, w, h), Material::Water};
      const MaterialImage xb{random_image(rng, w, h), Material::Bone};
      const auto z = refine_conv(params, xw, xb);
      for (std::int64_t j = 0; j < tw.grid.size(); ++j) {
        const double dw = tw.grid.data[j] - z.first.grid.data[j];
        const double db = tb.grid.data[j] - z.second.grid.data[j];
        conv_loss += dw * dw + db * db;
      }
      const PatchExtractor pe(w, h, r);
      const Mat targets = pe.extract_pair(tw.grid, tb.grid);
      Mat feat = matmul(params.encode, pe.extract_pair(xw.grid, xb.grid));
      soft_threshold_rows(feat, params.log_thresholds);
      const Mat rec = matmul(params.decode, feat);
      for (size_t i = 0; i < rec.data().size(); ++i) {
        const double d = targets.data()[i] - rec.data()[i];
        patch_loss += d * d;
      }
    }
    conv_loss /= 2.0 * L;
    patch_loss /= 2.0 * L * R;
    worst = std::max(worst, (conv_loss - patch_loss) / std::max(patch_loss, 1e-300));
  }
  return {"patch_loss_bound", worst <= 1e-12, worst, 1e-12,
          "signed (image loss - patch loss) / patch loss"};
}

// --- check 3: analytic subgradients against central finite differences -----

struct GradInstance {
  RefinerParams params;
  MiniBatch batch;
};

// Resamples until every pre-activation clears its threshold by the margin, so
// finite differences cannot cross the indicator boundary.
GradInstance margin_instance(Rng& rng, RefinerVariant v, double margin) {
  for (;;) {
    const int r = 2;
    const int K = rng.uniform_int(1, 2);
    const int B = rng.uniform_int(3, 8);
    const int R = r * r;
    RefinerParams params = random_params(rng, v, r, K);
    MiniBatch batch;
    batch.targets = random_mat(rng, 2 * R, B, 1.0);
    batch.inputs = random_mat(rng, 2 * R, B, 1.0);
    const Mat pre = matmul(params.encode, batch.inputs);
    bool ok = true;
    for (int k = 0; k < pre.rows() && ok; ++k) {
      const double a = std::exp(params.log_thresholds[k]);
      for (int b = 0; b < pre.cols() && ok; ++b)
        if (std::abs(std::abs(pre(k, b)) - a) < margin) ok = false;
    }
    if (ok) return {std::move(params), std::move(batch)};
  }
}

// Rebuilds a constrained parameter set from raw components; the returned
// closure is what finite differences get to poke.
struct FreeParams {
  Mat encode;
  Mat decode;  // ignored for identical variants
  std::vector<double> alpha;
};

RefinerParams build_params(RefinerVariant v, int r, int K, const FreeParams& fp) {
  if (variant_is_identical(v))
    return RefinerParams::make_identical(v, r, K, fp.encode, fp.alpha);
  return RefinerParams::make(v, r, K, fp.encode, fp.decode, fp.alpha);
}

CheckResult check_gradients(const VerifyOptions& opts, RefinerVariant v) {
  Rng rng(derive_seed(opts.seed, 3 + static_cast<std::uint64_t>(v)));
  constexpr double kMargin = 1e-3;
  double worst = 0.0;
  for (int t = 0; t < opts.trials_gradients; ++t) {
    GradInstance inst = margin_instance(rng, v, kMargin);
    const int r = inst.params.patch_side;
    const int K = inst.params.filters_per_group;
    const int R = r * r;

    GradientBatch analytic = variant_is_identical(v) ? grad_identical(inst.params, inst.batch)
                                                     : grad_distinct(inst.params, inst.batch);
    if (opts.inject_gradient_defect && v == RefinerVariant::DistinctCross)
      analytic.encode_grad(0, 0) = -analytic.encode_grad(0, 0);

    FreeParams fp{inst.params.encode, inst.params.decode, inst.params.log_thresholds};
    auto loss_at = [&]() {
      const RefinerParams p = build_params(v, r, K, fp);
      return refiner_loss(p, inst.batch.targets, inst.batch.inputs);
    };
    auto fd = [&](double& slot) {
      const double saved = slot;
      const double h = 3e-5 * std::max(1.0, std::abs(saved));
      slot = saved + h;
      const double lp = loss_at();
      slot = saved - h;
      const double lm = loss_at();
      slot = saved;
      return (lp - lm) / (2.0 * h);
    };
    auto record = [&](double got, double want) {
      worst = std::max(worst, std::abs(got - want) / (std::abs(want) + 1e-8));
    };

    const bool cross = variant_is_cross(v);
    for (int g = 0; g < 2; ++g)
      for (int m = 0; m < 2; ++m) {
        if (!cross && g != m) continue;  // tied-to-zero blocks are not free
        for (int k = 0; k < K; ++k)
          for (int rr = 0; rr < R; ++rr) {
            record(analytic.encode_grad(g * K + k, m * R + rr),
                   fd(fp.encode(g * K + k, m * R + rr)));
            if (!variant_is_identical(v))
              record(analytic.decode_grad(m * R + rr, g * K + k),
                     fd(fp.decode(m * R + rr, g * K + k)));
          }
      }
    for (int k = 0; k < 2 * K; ++k)
      record(analytic.log_threshold_grad[k], fd(fp.alpha[k]));
  }
  return {std::string("gradients_") + variant_name(v), worst <= 1e-5, worst, 1e-5,
          std::to_string(opts.trials_gradients) + " instances, margin 1e-3"};
}

// --- check 4: constrained full architecture reproduces each variant --------

CheckResult check_specialization(const VerifyOptions& opts) {
  Rng rng(derive_seed(opts.seed, 11));
  int mismatched = 0;
  for (int t = 0; t < opts.trials_specialization; ++t) {
    const int r = rng.uniform_int(2, 3);
    const int K = rng.uniform_int(1, 2);
    const RefinerVariant v = (t % 3 == 0)   ? RefinerVariant::IdenticalCross
                             : (t % 3 == 1) ? RefinerVariant::DistinctIndividual
                                            : RefinerVariant::IdenticalIndividual;
    const RefinerParams special = random_params(rng, v, r, K);
    // the same constrained tensors, declared as the full architecture
    const RefinerParams full = RefinerParams::make(RefinerVariant::DistinctCross, r, K,
                                                   special.encode, special.decode,
                                                   special.log_thresholds);
    const int w = rng.uniform_int(8, 12);
    const int h = rng.uniform_int(8, 12);
    const MaterialImage water{random_image(rng, w, h), Material::Water};
    const MaterialImage bone{random_image(rng, w, h), Material::Bone};
    const auto a = refine(special, water, bone);
    const auto b = refine(full, water, bone);
    if (a.first.grid.data != b.first.grid.data || a.second.grid.data != b.second.grid.data)
      ++mismatched;
  }
  return {"variant_specialization", mismatched == 0, static_cast<double>(mismatched), 0.0,
          std::to_string(opts.trials_specialization) + " instances, bitwise"};
}

// --- check 5: the closed-form update minimizes its per-pixel cost ----------

DecompPhysics random_physics(Rng& rng) {
  DecompPhysics ph;
  for (;;) {
    ph.mass_atten = {rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0),
                     rng.uniform(0.05, 1.0)};
    if (std::abs(ph.mass_atten.det()) > 0.02 * ph.mass_atten.frobenius_sq()) break;
  }
  ph.noise_weight = {rng.uniform(0.5, 2e4), rng.uniform(0.5, 2e4)};
  return ph;
}

CheckResult check_mbid_optimality(const VerifyOptions& opts) {
  Rng rng(derive_seed(opts.seed, 12));
  double worst = 0.0;
  for (int t = 0; t < opts.trials_mbid; ++t) {
    const DecompPhysics ph = random_physics(rng);
    const double betas[5] = {0.0, 0.37, 5.0, 1e3, rng.uniform(1.0, 1e4)};
    const double beta = betas[t % 5];
    const int w = 4, h = 4;
    AttenuationPair y{random_image(rng, w, h), random_image(rng, w, h)};
    std::pair<MaterialImage, MaterialImage> z{
        MaterialImage{random_image(rng, w, h), Material::Water},
        MaterialImage{random_image(rng, w, h), Material::Bone}};
    const auto x = mbid_update(y, z, ph, beta);
    const Mat22& a0 = ph.mass_atten;
    for (std::int64_t j = 0; j < y.high.size(); ++j) {
      const double xw = x.first.grid.data[j], xb = x.second.grid.data[j];
      const double rh = a0.m00 * xw + a0.m01 * xb - y.high.data[j];
      const double rl = a0.m10 * xw + a0.m11 * xb - y.low.data[j];
      const double gw = a0.m00 * ph.noise_weight[0] * rh + a0.m10 * ph.noise_weight[1] * rl +
                        2.0 * beta * (xw - z.first.grid.data[j]);
      const double gb = a0.m01 * ph.noise_weight[0] * rh + a0.m11 * ph.noise_weight[1] * rl +
                        2.0 * beta * (xb - z.second.grid.data[j]);
      const double ynorm = std::hypot(y.high.data[j], y.low.data[j]);
      const double znorm = std::hypot(z.first.grid.data[j], z.second.grid.data[j]);
      worst = std::max(worst, std::hypot(gw, gb) / (ynorm + znorm + 1.0));
    }
  }
  return {"mbid_optimality", worst <= 1e-10, worst, 1e-10,
          "per-pixel cost gradient at the closed-form solution"};
}

CheckResult check_mbid_beta0(const VerifyOptions& opts) {
  Rng rng(derive_seed(opts.seed, 13));
  double worst = 0.0;
  for (int t = 0; t < opts.trials_mbid; ++t) {
    const DecompPhysics ph = random_physics(rng);
    const int w = 4, h = 4;
    AttenuationPair y{random_image(rng, w, h), random_image(rng, w, h)};
    std::pair<MaterialImage, MaterialImage> z{
        MaterialImage{random_image(rng, w, h), Material::Water},
        MaterialImage{random_image(rng, w, h), Material::Bone}};
    const auto a = mbid_update(y, z, ph, 0.0);
    const auto b = direct_inversion(y, ph);
    for (std::int64_t j = 0; j < y.high.size(); ++j) {
      const double sw = std::abs(b.first.grid.data[j]) + 1e-300;
      const double sb = std::abs(b.second.grid.data[j]) + 1e-300;
      worst = std::max(worst, std::abs(a.first.grid.data[j] - b.first.grid.data[j]) / sw);
      worst = std::max(worst, std::abs(a.second.grid.data[j] - b.second.grid.data[j]) / sb);
    }
  }
  return {"mbid_beta0_matches_direct_inversion", worst <= 1e-12, worst, 1e-12, ""};
}

CheckResult check_mbid_large_beta(const VerifyOptions& opts) {
  Rng rng(derive_seed(opts.seed, 14));
  double worst = 0.0;
  for (int t = 0; t < opts.trials_mbid; ++t) {
    const DecompPhysics ph = random_physics(rng);
    const int w = 4, h = 4;
    AttenuationPair y{random_image(rng, w, h), random_image(rng, w, h)};
    ImageGrid zw(w, h), zb(w, h);
    for (double& v : zw.data) v = rng.uniform(0.5, 1.5);
    for (double& v : zb.data) v = rng.uniform(0.5, 1.5);
    std::pair<MaterialImage, MaterialImage> z{MaterialImage{zw, Material::Water},
                                              MaterialImage{zb, Material::Bone}};
    const auto x = mbid_update(y, z, ph, 1e12);
    for (std::int64_t j = 0; j < y.high.size(); ++j) {
      const double dw = x.first.grid.data[j] - zw.data[j];
      const double db = x.second.grid.data[j] - zb.data[j];
      worst = std::max(worst, std::hypot(dw, db) / std::hypot(zw.data[j], zb.data[j]));
    }
  }
  return {"mbid_large_beta_prox", worst <= 1e-6, worst, 1e-6, "beta = 1e12 pins x to z"};
}

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& opts) {
  std::vector<CheckResult> results;
  results.push_back(check_equivalence(opts));
  results.push_back(check_loss_bound(opts));
  for (RefinerVariant v : {RefinerVariant::DistinctCross, RefinerVariant::IdenticalCross,
                           RefinerVariant::DistinctIndividual, RefinerVariant::IdenticalIndividual})
    results.push_back(check_gradients(opts, v));
  results.push_back(check_specialization(opts));
  results.push_back(check_mbid_optimality(opts));
  results.push_back(check_mbid_beta0(opts));
  results.push_back(check_mbid_large_beta(opts));
  return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

}  // namespace dect
