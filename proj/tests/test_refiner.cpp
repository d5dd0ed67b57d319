#include <cmath>

#include "dect/parallel.hpp"
#include "dect/refiner.hpp"
#include "dect/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace dect;

namespace {

ImageGrid random_image(Rng& rng, int w, int h, double scale = 1.0) {
  ImageGrid img(w, h);
  for (double& v : img.data) v = rng.gaussian(0.0, scale);
  return img;
}

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

}  // namespace

TEST_CASE("soft threshold: worked values and properties") {
  CHECK(soft_threshold(2.5, 1.0) == 1.5);
  CHECK(soft_threshold(0.5, 1.0) == 0.0);
  CHECK(soft_threshold(-2.0, 0.0) == -2.0);
  CHECK(soft_threshold(1.0, 1.0) == 0.0);  // tie maps into the dead zone

  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const double a = rng.uniform(0.0, 2.0);
    const double b = rng.gaussian(0.0, 2.0);
    const double s = soft_threshold(b, a);
    CHECK(std::abs(s - b) <= a + 1e-15);  // shrinks by at most a
    CHECK(s * b >= 0.0);                  // never flips sign
  }

  // permutation invariance: thresholding commutes with reindexing
  std::vector<double> b = {1.5, -0.2, 0.9, -3.0};
  std::vector<double> a = {0.5, 0.5, 1.0, 1.0};
  const std::vector<int> perm = {2, 0, 3, 1};
  std::vector<double> pb(4), pa(4);
  for (int i = 0; i < 4; ++i) {
    pb[i] = b[perm[i]];
    pa[i] = a[perm[i]];
  }
  const auto direct = soft_threshold(pb, pa);
  const auto reference = soft_threshold(b, a);
  for (int i = 0; i < 4; ++i) CHECK(direct[i] == reference[perm[i]]);

  CHECK_THROWS_AS(soft_threshold(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(soft_threshold(std::vector<double>{1.0}, std::vector<double>{-0.1}),
                  std::invalid_argument);
}

TEST_CASE("patch extraction: 1x1, constants, periodic wrap oracle") {
  ImageGrid w(3, 3), b(3, 3);
  for (int i = 0; i < 9; ++i) {
    w.data[i] = i;           // ramp 0..8
    b.data[i] = 10.0 * i;
  }

  const PatchExtractor p1(3, 3, 1);
  const Mat cols = p1.extract_pair(w, b);
  CHECK(cols.rows() == 2);
  for (int j = 0; j < 9; ++j) {
    CHECK(cols(0, j) == w.data[j]);
    CHECK(cols(1, j) == b.data[j]);
  }

  ImageGrid cw(4, 4), cb(4, 4);
  std::fill(cw.data.begin(), cw.data.end(), 1.25);
  std::fill(cb.data.begin(), cb.data.end(), -0.5);
  const PatchExtractor p2(4, 4, 2);
  const Mat ccols = p2.extract_pair(cw, cb);
  for (int j = 0; j < 16; ++j)
    for (int r = 0; r < 4; ++r) {
      CHECK(ccols(r, j) == 1.25);
      CHECK(ccols(4 + r, j) == -0.5);
    }

  // patch anchored at the bottom-right pixel (row 2, col 2) of the ramp wraps
  // to row 0 / col 0: offsets (0,0)->8, (0,1)->6, (1,0)->2, (1,1)->0
  const PatchExtractor p3(3, 3, 2);
  const Mat wrap = p3.extract(w);
  const int j = 2 * 3 + 2;
  CHECK(wrap(0, j) == 8.0);
  CHECK(wrap(1, j) == 6.0);
  CHECK(wrap(2, j) == 2.0);
  CHECK(wrap(3, j) == 0.0);

  CHECK_THROWS_WITH_AS(PatchExtractor(3, 3, 4), doctest::Contains("larger"),
                       std::invalid_argument);
}

TEST_CASE("aggregate is the left inverse of extract") {
  Rng rng(17);

  const PatchExtractor pe(8, 8, 3);
  const ImageGrid img = random_image(rng, 8, 8);
  const ImageGrid back = pe.aggregate(pe.extract(img), img.pixel_size_mm);
  for (int i = 0; i < 64; ++i)
    CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-12));

  Mat zeros(9, 64);
  const ImageGrid z = pe.aggregate(zeros, 1.0);
  for (double v : z.data) CHECK(v == 0.0);

  // frame bound from the proof of the loss-bound proposition:
  // || sum_j P_j^T v_j ||^2 <= R * sum_j ||v_j||^2
  for (int t = 0; t < 20; ++t) {
    const int side = 2 + static_cast<int>(rng.below(3));
    const int n = 6 + static_cast<int>(rng.below(5));
    const PatchExtractor p(n, n, side);
    const int R = side * side;
    Mat v = random_mat(rng, R, n * n, 1.0);
    const ImageGrid agg = p.aggregate(v, 1.0);  // (1/R) sum P^T v
    double lhs = 0.0;
    for (double x : agg.data) lhs += x * x;
    lhs *= static_cast<double>(R) * R;  // undo the 1/R
    double rhs = 0.0;
    for (double x : v.data()) rhs += x * x;
    CHECK(lhs <= R * rhs * (1.0 + 1e-12));
  }
}

TEST_CASE("refine: dead thresholds, near-identity, zero encoder") {
  Rng rng(23);
  const ImageGrid wimg = random_image(rng, 10, 9);
  const ImageGrid bimg = random_image(rng, 10, 9);
  const MaterialImage water{wimg, Material::Water};
  const MaterialImage bone{bimg, Material::Bone};

  // thresholds around e^40 swallow every feature
  {
    RefinerParams p = RefinerParams::make(RefinerVariant::DistinctCross, 2, 2,
                                          random_mat(rng, 4, 8), random_mat(rng, 8, 4),
                                          std::vector<double>(4, 40.0));
    const auto [zw, zb] = refine(p, water, bone);
    for (double v : zw.grid.data) CHECK(v == 0.0);
    for (double v : zb.grid.data) CHECK(v == 0.0);
  }

  // 1x1 identity autoencoder with negligible threshold reproduces the input
  {
    Mat encode = Mat(2, 2);
    encode(0, 0) = encode(1, 1) = 1.0;
    Mat decode = encode;
    RefinerParams p = RefinerParams::make(RefinerVariant::DistinctCross, 1, 1, encode, decode,
                                          std::vector<double>(2, -40.0));
    const auto [zw, zb] = refine(p, water, bone);
    for (int i = 0; i < wimg.size(); ++i) {
      CHECK(zw.grid.data[i] == doctest::Approx(wimg.data[i]).epsilon(1e-12));
      CHECK(zb.grid.data[i] == doctest::Approx(bimg.data[i]).epsilon(1e-12));
    }
  }

  // zero encoder kills the hidden layer
  {
    RefinerParams p = RefinerParams::make(RefinerVariant::DistinctCross, 2, 2, Mat(4, 8),
                                          random_mat(rng, 8, 4), random_alpha(rng, 4));
    const auto [zw, zb] = refine_conv(p, water, bone);
    for (double v : zw.grid.data) CHECK(v == 0.0);
    for (double v : zb.grid.data) CHECK(v == 0.0);
  }
}

TEST_CASE("refine equals refine_conv on random instances") {
  Rng rng(31);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const int r = 2 + static_cast<int>(rng.below(3));
    const int K = 1 + static_cast<int>(rng.below(3));
    const int R = r * r;
    const int w = 8 + static_cast<int>(rng.below(5));
    const int h = 8 + static_cast<int>(rng.below(5));
    RefinerParams p = RefinerParams::make(RefinerVariant::DistinctCross, r, K,
                                          random_mat(rng, 2 * K, 2 * R),
                                          random_mat(rng, 2 * R, 2 * K), random_alpha(rng, 2 * K));
    const MaterialImage water{random_image(rng, w, h), Material::Water};
    const MaterialImage bone{random_image(rng, w, h), Material::Bone};
    const auto a = refine(p, water, bone);
    const auto b = refine_conv(p, water, bone);
    double scale = 1e-300;
    for (double v : a.first.grid.data) scale = std::max(scale, std::abs(v));
    for (double v : a.second.grid.data) scale = std::max(scale, std::abs(v));
    for (int i = 0; i < a.first.grid.size(); ++i) {
      worst = std::max(worst, std::abs(a.first.grid.data[i] - b.first.grid.data[i]) / scale);
      worst = std::max(worst, std::abs(a.second.grid.data[i] - b.second.grid.data[i]) / scale);
    }
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("identical-individual evaluation matches a direct per-material oracle") {
  Rng rng(41);
  for (int t = 0; t < 10; ++t) {
    const int r = 2 + static_cast<int>(rng.below(2));
    const int K = 1 + static_cast<int>(rng.below(2));
    const int R = r * r;
    const Mat ew = random_mat(rng, K, R);
    const Mat eb = random_mat(rng, K, R);
    std::vector<double> aw = random_alpha(rng, K);
    std::vector<double> ab = random_alpha(rng, K);
    RefinerParams p = RefinerParams::make_individual(RefinerVariant::IdenticalIndividual, r, K,
                                                     ew, Mat(), aw, eb, Mat(), ab);
    const MaterialImage water{random_image(rng, 9, 8), Material::Water};
    const MaterialImage bone{random_image(rng, 9, 8), Material::Bone};
    const auto [zw, zb] = refine(p, water, bone);
    const ImageGrid ow = oracle::identical_individual_direct(ew, aw, r, water.grid);
    const ImageGrid ob = oracle::identical_individual_direct(eb, ab, r, bone.grid);
    for (int i = 0; i < ow.size(); ++i) {
      CHECK(zw.grid.data[i] == doctest::Approx(ow.data[i]).epsilon(1e-10));
      CHECK(zb.grid.data[i] == doctest::Approx(ob.data[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("variant constraints and bitwise specialization") {
  Rng rng(53);
  const int r = 2, K = 2, R = 4;

  // identical: decoder must be the encoder transpose
  RefinerParams id = RefinerParams::make_identical(RefinerVariant::IdenticalCross, r, K,
                                                   random_mat(rng, 2 * K, 2 * R),
                                                   random_alpha(rng, 2 * K));
  CHECK(bit_equal(id.decode, transpose(id.encode)));

  // individual: cross blocks zeroed even if the inputs are dense
  RefinerParams ind = RefinerParams::make(RefinerVariant::DistinctIndividual, r, K,
                                          random_mat(rng, 2 * K, 2 * R),
                                          random_mat(rng, 2 * R, 2 * K), random_alpha(rng, 2 * K));
  for (int g = 0; g < 2; ++g)
    for (int m = 0; m < 2; ++m) {
      if (g == m) continue;
      for (int k = 0; k < K; ++k)
        for (int rr = 0; rr < R; ++rr) {
          CHECK(ind.encode(g * K + k, m * R + rr) == 0.0);
          CHECK(ind.decode(m * R + rr, g * K + k) == 0.0);
        }
    }

  // a constrained full-architecture evaluation reproduces each variant bitwise
  for (RefinerVariant v : {RefinerVariant::IdenticalCross, RefinerVariant::DistinctIndividual,
                           RefinerVariant::IdenticalIndividual}) {
    RefinerParams special =
        variant_is_identical(v)
            ? RefinerParams::make_identical(v, r, K, random_mat(rng, 2 * K, 2 * R),
                                            random_alpha(rng, 2 * K))
            : RefinerParams::make(v, r, K, random_mat(rng, 2 * K, 2 * R),
                                  random_mat(rng, 2 * R, 2 * K), random_alpha(rng, 2 * K));
    RefinerParams full = RefinerParams::make(RefinerVariant::DistinctCross, r, K, special.encode,
                                             special.decode, special.log_thresholds);
    const MaterialImage water{random_image(rng, 8, 8), Material::Water};
    const MaterialImage bone{random_image(rng, 8, 8), Material::Bone};
    const auto a = refine(special, water, bone);
    const auto b = refine(full, water, bone);
    CHECK(a.first.grid.data == b.first.grid.data);
    CHECK(a.second.grid.data == b.second.grid.data);
  }

  // validate() must reject a broken tie
  RefinerParams broken = id;
  broken.decode(0, 0) += 1.0;
  CHECK_THROWS_WITH_AS(broken.validate(), doctest::Contains("tied"), std::runtime_error);
}

TEST_CASE("results are invariant to the worker count") {
  Rng rng(67);
  // large enough that the parallel paths actually engage
  const int r = 4, K = 8, R = 16;
  RefinerParams p = RefinerParams::make(RefinerVariant::DistinctCross, r, K,
                                        random_mat(rng, 2 * K, 2 * R),
                                        random_mat(rng, 2 * R, 2 * K), random_alpha(rng, 2 * K));
  const MaterialImage water{random_image(rng, 96, 96), Material::Water};
  const MaterialImage bone{random_image(rng, 96, 96), Material::Bone};

  set_worker_count(1);
  const auto serial = refine(p, water, bone);
  const Mat serial_patches = PatchExtractor(96, 96, r).extract_pair(water.grid, bone.grid);
  set_worker_count(4);
  const auto threaded = refine(p, water, bone);
  const Mat threaded_patches = PatchExtractor(96, 96, r).extract_pair(water.grid, bone.grid);
  set_worker_count(1);

  CHECK(serial.first.grid.data == threaded.first.grid.data);
  CHECK(serial.second.grid.data == threaded.second.grid.data);
  CHECK(bit_equal(serial_patches, threaded_patches));
}
