#include "dect/refiner.hpp"

#include <cmath>
#include <stdexcept>

#include "dect/parallel.hpp"

namespace dect {

const char* variant_name(RefinerVariant v) {
  switch (v) {
    case RefinerVariant::DistinctCross: return "distinct-cross";
    case RefinerVariant::IdenticalCross: return "identical-cross";
    case RefinerVariant::DistinctIndividual: return "distinct-individual";
    case RefinerVariant::IdenticalIndividual: return "identical-individual";
  }
  throw std::logic_error("unknown refiner variant");
}

RefinerVariant variant_from_name(const std::string& name) {
  if (name == "distinct-cross") return RefinerVariant::DistinctCross;
  if (name == "identical-cross") return RefinerVariant::IdenticalCross;
  if (name == "distinct-individual") return RefinerVariant::DistinctIndividual;
  if (name == "identical-individual") return RefinerVariant::IdenticalIndividual;
  throw std::invalid_argument("unknown refiner variant: " + name);
}

bool variant_is_cross(RefinerVariant v) {
  return v == RefinerVariant::DistinctCross || v == RefinerVariant::IdenticalCross;
}

bool variant_is_identical(RefinerVariant v) {
  return v == RefinerVariant::IdenticalCross || v == RefinerVariant::IdenticalIndividual;
}

RefinerParams RefinerParams::make(RefinerVariant v, int patch_side, int filters_per_group,
                                  Mat encode, Mat decode,
                                  std::vector<double> log_thresholds) {
  RefinerParams p;
  p.variant = v;
  p.patch_side = patch_side;
  p.filters_per_group = filters_per_group;
  p.encode = std::move(encode);
  p.decode = std::move(decode);
  p.log_thresholds = std::move(log_thresholds);
  p.enforce_constraints();
  p.validate();
  return p;
}

RefinerParams RefinerParams::make_identical(RefinerVariant v, int patch_side,
                                            int filters_per_group, Mat encode,
                                            std::vector<double> log_thresholds) {
  if (!variant_is_identical(v))
    throw std::invalid_argument("make_identical requires an identical variant");
  Mat decode;  // rebuilt from the encoder by enforce_constraints
  return make(v, patch_side, filters_per_group, std::move(encode), std::move(decode),
              std::move(log_thresholds));
}

RefinerParams RefinerParams::make_individual(RefinerVariant v, int patch_side,
                                             int filters_per_group, const Mat& encode_water,
                                             const Mat& decode_water,
                                             const std::vector<double>& thr_water,
                                             const Mat& encode_bone, const Mat& decode_bone,
                                             const std::vector<double>& thr_bone) {
  if (variant_is_cross(v))
    throw std::invalid_argument("make_individual requires an individual variant");
  const int R = patch_side * patch_side;
  const int K = filters_per_group;
  auto check_block = [&](const Mat& e, const Mat& d, const std::vector<double>& t,
                         const char* which) {
    if (e.rows() != K || e.cols() != R)
      throw std::invalid_argument(std::string("bad encoder block shape for ") + which);
    if (v == RefinerVariant::DistinctIndividual && (d.rows() != R || d.cols() != K))
      throw std::invalid_argument(std::string("bad decoder block shape for ") + which);
    if (t.size() != static_cast<size_t>(K))
      throw std::invalid_argument(std::string("bad threshold count for ") + which);
  };
  check_block(encode_water, decode_water, thr_water, "water");
  check_block(encode_bone, decode_bone, thr_bone, "bone");

  Mat encode(2 * K, 2 * R);
  Mat decode(2 * R, 2 * K);
  std::vector<double> alpha(2 * K);
  for (int m = 0; m < 2; ++m) {
    const Mat& e = m == 0 ? encode_water : encode_bone;
    const std::vector<double>& t = m == 0 ? thr_water : thr_bone;
    for (int k = 0; k < K; ++k) {
      alpha[m * K + k] = t[k];
      for (int r = 0; r < R; ++r) encode(m * K + k, m * R + r) = e(k, r);
    }
    if (v == RefinerVariant::DistinctIndividual) {
      const Mat& d = m == 0 ? decode_water : decode_bone;
      for (int r = 0; r < R; ++r)
        for (int k = 0; k < K; ++k) decode(m * R + r, m * K + k) = d(r, k);
    }
  }
  return make(v, patch_side, filters_per_group, std::move(encode), std::move(decode),
              std::move(alpha));
}

void RefinerParams::enforce_constraints() {
  const int R = patch_len();
  const int K = filters_per_group;
  if (!variant_is_cross(variant)) {
    // zero the off-diagonal coupling blocks
    for (int g = 0; g < 2; ++g)
      for (int m = 0; m < 2; ++m) {
        if (g == m) continue;
        for (int k = 0; k < K; ++k)
          for (int r = 0; r < R; ++r) encode(g * K + k, m * R + r) = 0.0;
      }
  }
  if (variant_is_identical(variant)) {
    decode = transpose(encode);
  } else if (!variant_is_cross(variant)) {
    for (int m = 0; m < 2; ++m)
      for (int g = 0; g < 2; ++g) {
        if (g == m) continue;
        for (int r = 0; r < R; ++r)
          for (int k = 0; k < K; ++k) decode(m * R + r, g * K + k) = 0.0;
      }
  }
}

void RefinerParams::validate() const {
  if (patch_side < 1) throw std::runtime_error("patch side must be >= 1");
  if (filters_per_group < 1) throw std::runtime_error("filter count must be >= 1");
  const int R = patch_len();
  const int K = filters_per_group;
  if (encode.rows() != 2 * K || encode.cols() != 2 * R)
    throw std::runtime_error("encoder matrix has the wrong shape");
  if (decode.rows() != 2 * R || decode.cols() != 2 * K)
    throw std::runtime_error("decoder matrix has the wrong shape");
  if (log_thresholds.size() != static_cast<size_t>(2 * K))
    throw std::runtime_error("threshold vector has the wrong length");
  if (!all_finite(encode) || !all_finite(decode))
    throw std::runtime_error("refiner parameters contain non-finite entries");
  for (double a : log_thresholds)
    if (!std::isfinite(a)) throw std::runtime_error("non-finite log threshold");
  if (variant_is_identical(variant) && !bit_equal(decode, transpose(encode)))
    throw std::runtime_error("identical variant decoder is not tied to the encoder");
  if (!variant_is_cross(variant)) {
    for (int g = 0; g < 2; ++g)
      for (int m = 0; m < 2; ++m) {
        if (g == m) continue;
        for (int k = 0; k < K; ++k)
          for (int r = 0; r < R; ++r)
            if (encode(g * K + k, m * R + r) != 0.0 || decode(m * R + r, g * K + k) != 0.0)
              throw std::runtime_error("individual variant has nonzero cross blocks");
      }
  }
}

double soft_threshold(double b, double a) {
  if (std::abs(b) > a) return b - a * (b > 0 ? 1.0 : -1.0);
  return 0.0;
}

std::vector<double> soft_threshold(const std::vector<double>& b, const std::vector<double>& a) {
  if (b.size() != a.size()) throw std::invalid_argument("soft_threshold: length mismatch");
  std::vector<double> out(b.size());
  for (size_t i = 0; i < b.size(); ++i) {
    if (a[i] < 0) throw std::invalid_argument("soft_threshold: thresholds must be nonnegative");
    out[i] = soft_threshold(b[i], a[i]);
  }
  return out;
}

void soft_threshold_rows(Mat& m, const std::vector<double>& log_thresholds) {
  if (log_thresholds.size() != static_cast<size_t>(m.rows()))
    throw std::invalid_argument("soft_threshold_rows: one threshold per row required");
  for (int r = 0; r < m.rows(); ++r) {
    const double a = std::exp(log_thresholds[r]);
    double* row = m.row_ptr(r);
    for (int c = 0; c < m.cols(); ++c) row[c] = soft_threshold(row[c], a);
  }
}

PatchExtractor::PatchExtractor(int width, int height, int patch_side)
    : width_(width), height_(height), side_(patch_side) {
  if (width < 1 || height < 1) throw std::invalid_argument("patch extraction needs a real image");
  if (patch_side < 1) throw std::invalid_argument("patch side must be >= 1");
  if (patch_side > width || patch_side > height)
    throw std::invalid_argument("patch larger than image");
}

Mat PatchExtractor::extract(const ImageGrid& img) const {
  if (img.width != width_ || img.height != height_)
    throw std::invalid_argument("extract: image geometry mismatch");
  const int R = patch_len();
  const std::int64_t N = patch_count();
  Mat out(R, static_cast<int>(N));
  parallel_for(N, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t j = lo; j < hi; ++j) {
      const int py = static_cast<int>(j / width_);
      const int px = static_cast<int>(j % width_);
      for (int dy = 0; dy < side_; ++dy) {
        const int sy = py + dy < height_ ? py + dy : py + dy - height_;
        const double* src = img.data.data() + static_cast<size_t>(sy) * width_;
        for (int dx = 0; dx < side_; ++dx) {
          const int sx = px + dx < width_ ? px + dx : px + dx - width_;
          out(dy * side_ + dx, static_cast<int>(j)) = src[sx];
        }
      }
    }
  });
  return out;
}

Mat PatchExtractor::extract_pair(const ImageGrid& water, const ImageGrid& bone) const {
  if (!water.same_geometry(bone))
    throw std::invalid_argument("extract_pair: images are not co-registered");
  const Mat top = extract(water);
  const Mat bottom = extract(bone);
  const int R = patch_len();
  Mat out(2 * R, top.cols());
  for (int r = 0; r < R; ++r) {
    const double* ts = top.row_ptr(r);
    const double* bs = bottom.row_ptr(r);
    double* td = out.row_ptr(r);
    double* bd = out.row_ptr(R + r);
    for (int c = 0; c < top.cols(); ++c) {
      td[c] = ts[c];
      bd[c] = bs[c];
    }
  }
  return out;
}

namespace {

// Gather form of (1/R) sum_j P_j^T: pixel p collects entry (dy,dx) of the
// patch anchored at (p - (dy,dx)) mod size. One pass per output pixel keeps
// the sum order fixed for any worker count.
void aggregate_rows(const Mat& patches, int row0, int side, int width, int height,
                    ImageGrid& out) {
  const int R = side * side;
  const double inv_r = 1.0 / static_cast<double>(R);
  parallel_for(static_cast<std::int64_t>(width) * height, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t p = lo; p < hi; ++p) {
      const int py = static_cast<int>(p / width);
      const int px = static_cast<int>(p % width);
      double acc = 0.0;
      for (int dy = 0; dy < side; ++dy) {
        const int jy = py - dy >= 0 ? py - dy : py - dy + height;
        for (int dx = 0; dx < side; ++dx) {
          const int jx = px - dx >= 0 ? px - dx : px - dx + width;
          acc += patches(row0 + dy * side + dx, jy * width + jx);
        }
      }
      out.data[p] = acc * inv_r;
    }
  });
}

}  // namespace

ImageGrid PatchExtractor::aggregate(const Mat& patches, double pixel_size_mm) const {
  if (patches.rows() != patch_len() || patches.cols() != patch_count())
    throw std::invalid_argument("aggregate: patch matrix shape mismatch");
  ImageGrid out(width_, height_, pixel_size_mm);
  aggregate_rows(patches, 0, side_, width_, height_, out);
  return out;
}

std::pair<ImageGrid, ImageGrid> PatchExtractor::aggregate_pair(const Mat& patches,
                                                               double pixel_size_mm) const {
  const int R = patch_len();
  if (patches.rows() != 2 * R || patches.cols() != patch_count())
    throw std::invalid_argument("aggregate_pair: patch matrix shape mismatch");
  ImageGrid water(width_, height_, pixel_size_mm);
  ImageGrid bone(width_, height_, pixel_size_mm);
  aggregate_rows(patches, 0, side_, width_, height_, water);
  aggregate_rows(patches, R, side_, width_, height_, bone);
  return {std::move(water), std::move(bone)};
}

namespace {

void check_refine_inputs(const RefinerParams& params, const MaterialImage& water,
                         const MaterialImage& bone) {
  params.validate();
  if (!water.grid.same_geometry(bone.grid))
    throw std::invalid_argument("refine: material images are not co-registered");
  if (params.patch_side > water.grid.width || params.patch_side > water.grid.height)
    throw std::invalid_argument("refine: patch larger than image");
}

}  // namespace

std::pair<MaterialImage, MaterialImage> refine(const RefinerParams& params,
                                               const MaterialImage& water,
                                               const MaterialImage& bone) {
  check_refine_inputs(params, water, bone);
  const PatchExtractor pe(water.grid.width, water.grid.height, params.patch_side);
  Mat features = matmul(params.encode, pe.extract_pair(water.grid, bone.grid));
  soft_threshold_rows(features, params.log_thresholds);
  const Mat decoded = matmul(params.decode, features);
  auto [zw, zb] = pe.aggregate_pair(decoded, water.grid.pixel_size_mm);
  return {MaterialImage{std::move(zw), Material::Water},
          MaterialImage{std::move(zb), Material::Bone}};
}

std::pair<MaterialImage, MaterialImage> refine_conv(const RefinerParams& params,
                                                    const MaterialImage& water,
                                                    const MaterialImage& bone) {
  check_refine_inputs(params, water, bone);
  const int W = water.grid.width, H = water.grid.height;
  const int r = params.patch_side, R = r * r, K = params.filters_per_group;
  const std::int64_t N = static_cast<std::int64_t>(W) * H;
  const ImageGrid* inputs[2] = {&water.grid, &bone.grid};

  // Encode: hidden channel g*K+k is the sum over materials of the circular
  // cross-correlation with that channel's encoder filter, then thresholded.
  std::vector<std::vector<double>> hidden(static_cast<size_t>(2 * K));
  for (int kk = 0; kk < 2 * K; ++kk) {
    hidden[kk].assign(static_cast<size_t>(N), 0.0);
    auto& h = hidden[kk];
    const double a = std::exp(params.log_thresholds[kk]);
    const double* erow = params.encode.row_ptr(kk);
    parallel_for(N, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t p = lo; p < hi; ++p) {
        const int py = static_cast<int>(p / W);
        const int px = static_cast<int>(p % W);
        double acc = 0.0;
        for (int m = 0; m < 2; ++m) {
          const double* img = inputs[m]->data.data();
          const double* filt = erow + m * R;
          for (int dy = 0; dy < r; ++dy) {
            const int sy = py + dy < H ? py + dy : py + dy - H;
            const double* src = img + static_cast<size_t>(sy) * W;
            for (int dx = 0; dx < r; ++dx) {
              const int sx = px + dx < W ? px + dx : px + dx - W;
              acc += filt[dy * r + dx] * src[sx];
            }
          }
        }
        h[p] = soft_threshold(acc, a);
      }
    });
  }

  // Decode: circular convolution with the decoder columns, scaled by 1/R to
  // match the patch-aggregation normalization.
  std::pair<MaterialImage, MaterialImage> out{
      MaterialImage{ImageGrid(W, H, water.grid.pixel_size_mm), Material::Water},
      MaterialImage{ImageGrid(W, H, water.grid.pixel_size_mm), Material::Bone}};
  ImageGrid* outputs[2] = {&out.first.grid, &out.second.grid};
  const double inv_r = 1.0 / static_cast<double>(R);
  for (int m = 0; m < 2; ++m) {
    ImageGrid& z = *outputs[m];
    parallel_for(N, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t p = lo; p < hi; ++p) {
        const int py = static_cast<int>(p / W);
        const int px = static_cast<int>(p % W);
        double acc = 0.0;
        for (int kk = 0; kk < 2 * K; ++kk) {
          const double* h = hidden[kk].data();
          for (int dy = 0; dy < r; ++dy) {
            const int sy = py - dy >= 0 ? py - dy : py - dy + H;
            const double* src = h + static_cast<size_t>(sy) * W;
            for (int dx = 0; dx < r; ++dx) {
              const int sx = px - dx >= 0 ? px - dx : px - dx + W;
              acc += params.decode(m * R + dy * r + dx, kk) * src[sx];
            }
          }
        }
        z.data[p] = acc * inv_r;
      }
    });
  }
  return out;
}

}  // namespace dect
