#include "dect/training.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "dect/parallel.hpp"
#include "dect/rng.hpp"

namespace dect {

void TrainingCorpus::validate() const {
  if (!targets.same_shape(inputs))
    throw std::runtime_error("training corpus target/input shapes differ");
  if (targets.rows() < 2 || targets.rows() % 2 != 0)
    throw std::runtime_error("training corpus rows must be 2R");
  if (targets.cols() < 1) throw std::runtime_error("training corpus is empty");
  if (!all_finite(targets) || !all_finite(inputs))
    throw std::runtime_error("training corpus contains non-finite entries");
}

TrainingCorpus build_training_corpus(
    const std::vector<std::pair<MaterialImage, MaterialImage>>& references,
    const std::vector<std::pair<MaterialImage, MaterialImage>>& current, int patch_side) {
  if (references.empty() || references.size() != current.size())
    throw std::invalid_argument("corpus needs matching, nonempty reference/current lists");
  const int R = patch_side * patch_side;
  std::int64_t total = 0;
  for (const auto& ref : references)
    total += static_cast<std::int64_t>(ref.first.grid.width) * ref.first.grid.height;

  TrainingCorpus corpus;
  corpus.targets = Mat(2 * R, static_cast<int>(total));
  corpus.inputs = Mat(2 * R, static_cast<int>(total));
  std::int64_t at = 0;
  for (size_t l = 0; l < references.size(); ++l) {
    const auto& ref = references[l];
    const auto& cur = current[l];
    if (!ref.first.grid.same_geometry(cur.first.grid) ||
        !ref.first.grid.same_geometry(ref.second.grid) ||
        !ref.first.grid.same_geometry(cur.second.grid))
      throw std::invalid_argument("corpus images are not co-registered");
    const PatchExtractor pe(ref.first.grid.width, ref.first.grid.height, patch_side);
    const Mat t = pe.extract_pair(ref.first.grid, ref.second.grid);
    const Mat x = pe.extract_pair(cur.first.grid, cur.second.grid);
    for (int r = 0; r < 2 * R; ++r) {
      double* td = corpus.targets.row_ptr(r) + at;
      double* xd = corpus.inputs.row_ptr(r) + at;
      const double* ts = t.row_ptr(r);
      const double* xs = x.row_ptr(r);
      for (int c = 0; c < t.cols(); ++c) {
        td[c] = ts[c];
        xd[c] = xs[c];
      }
    }
    at += t.cols();
  }
  corpus.validate();
  return corpus;
}

namespace {

Mat gather(const Mat& src, int row0, int nrows, const std::vector<std::int64_t>& cols) {
  Mat out(nrows, static_cast<int>(cols.size()));
  for (int r = 0; r < nrows; ++r) {
    const double* s = src.row_ptr(row0 + r);
    double* d = out.row_ptr(r);
    for (size_t c = 0; c < cols.size(); ++c) d[c] = s[cols[c]];
  }
  return out;
}

}  // namespace

MiniBatch gather_batch(const TrainingCorpus& corpus, const std::vector<std::int64_t>& columns) {
  for (std::int64_t c : columns)
    if (c < 0 || c >= corpus.column_count())
      throw std::invalid_argument("batch column index out of range");
  return {gather(corpus.targets, 0, corpus.targets.rows(), columns),
          gather(corpus.inputs, 0, corpus.inputs.rows(), columns)};
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epoch count must be >= 1");
  if (!(lr0 > 0)) throw std::invalid_argument("initial learning rate must be positive");
  if (!(lr_decay > 0) || lr_decay > 1)
    throw std::invalid_argument("learning-rate decay must be in (0, 1]");
  if (lr_period < 1) throw std::invalid_argument("learning-rate period must be >= 1");
  if (!(filter_init_std > 0)) throw std::invalid_argument("filter init std must be positive");
}

namespace {

struct BlockGrads {
  Mat decode;  // empty when the decoder is tied
  Mat encode;
  std::vector<double> alpha;
};

// Shared core for one (decode, encode, alpha) problem of any size. X and Xin
// are the batch slices; returns the features Z through out so the callers can
// reuse them.
struct ForwardPass {
  Mat pre;   // E Xin
  Mat feat;  // T_exp(alpha)(E Xin)
};

ForwardPass forward(const Mat& encode, const std::vector<double>& alpha, const Mat& xin) {
  ForwardPass f;
  f.pre = matmul(encode, xin);
  f.feat = f.pre;
  soft_threshold_rows(f.feat, alpha);
  return f;
}

// dL/dalpha_k = (2/B) exp(alpha_k) sum_b back(k,b) * sign(feat(k,b))
std::vector<double> alpha_grad(const Mat& back, const Mat& feat,
                               const std::vector<double>& alpha, double scale) {
  std::vector<double> g(alpha.size(), 0.0);
  for (int k = 0; k < back.rows(); ++k) {
    const double* br = back.row_ptr(k);
    const double* fr = feat.row_ptr(k);
    double acc = 0.0;
    for (int b = 0; b < back.cols(); ++b) {
      if (fr[b] > 0)
        acc += br[b];
      else if (fr[b] < 0)
        acc -= br[b];
    }
    g[k] = scale * std::exp(alpha[k]) * acc;
  }
  return g;
}

// Active-set mask applied in place: keep back(k,b) only where the
// pre-activation cleared its threshold (strict inequality, matching the
// dead-zone convention).
void mask_active(Mat& back, const Mat& pre, const std::vector<double>& alpha) {
  for (int k = 0; k < back.rows(); ++k) {
    const double a = std::exp(alpha[k]);
    double* br = back.row_ptr(k);
    const double* pr = pre.row_ptr(k);
    for (int b = 0; b < back.cols(); ++b)
      if (!(std::abs(pr[b]) > a)) br[b] = 0.0;
  }
}

void scale_mat(Mat& m, double s) {
  for (double& v : m.data()) v *= s;
}

BlockGrads block_grads_distinct(const Mat& decode, const Mat& encode,
                                const std::vector<double>& alpha, const Mat& x,
                                const Mat& xin) {
  const double scale = -2.0 / static_cast<double>(x.cols());
  ForwardPass f = forward(encode, alpha, xin);
  Mat resid = matmul(decode, f.feat);
  for (size_t i = 0; i < resid.data().size(); ++i) resid.data()[i] = x.data()[i] - resid.data()[i];

  BlockGrads g;
  g.decode = matmul_abt(resid, f.feat);
  scale_mat(g.decode, scale);

  Mat back = matmul_atb(decode, resid);  // D^T (X - D Z)
  g.alpha = alpha_grad(back, f.feat, alpha, -scale);
  mask_active(back, f.pre, alpha);
  g.encode = matmul_abt(back, xin);
  scale_mat(g.encode, scale);
  return g;
}

BlockGrads block_grads_identical(const Mat& encode, const std::vector<double>& alpha,
                                 const Mat& x, const Mat& xin) {
  const double scale = -2.0 / static_cast<double>(x.cols());
  ForwardPass f = forward(encode, alpha, xin);
  Mat resid = matmul_atb(encode, f.feat);  // E^T Z
  for (size_t i = 0; i < resid.data().size(); ++i) resid.data()[i] = x.data()[i] - resid.data()[i];

  BlockGrads g;
  Mat back = matmul(encode, resid);  // E (X - E^T Z) == D^T (X - D Z)
  g.alpha = alpha_grad(back, f.feat, alpha, -scale);
  mask_active(back, f.pre, alpha);
  // Chain rule through both the encoder and the tied decoder.
  g.encode = matmul_abt(back, xin);
  const Mat through_decoder = matmul_abt(f.feat, resid);
  for (size_t i = 0; i < g.encode.data().size(); ++i)
    g.encode.data()[i] = scale * (g.encode.data()[i] + through_decoder.data()[i]);
  return g;
}

void embed_block(Mat& dst, const Mat& src, int row0, int col0) {
  for (int r = 0; r < src.rows(); ++r)
    for (int c = 0; c < src.cols(); ++c) dst(row0 + r, col0 + c) = src(r, c);
}

}  // namespace

double refiner_loss(const RefinerParams& params, const Mat& targets, const Mat& inputs) {
  if (!targets.same_shape(inputs)) throw std::invalid_argument("loss: shape mismatch");
  if (targets.rows() != 2 * params.patch_len())
    throw std::invalid_argument("loss: corpus rows do not match the patch length");
  // Streamed over column tiles; tiles combine in ascending order.
  constexpr int kTile = 8192;
  const std::int64_t cols = targets.cols();
  double acc = 0.0;
  std::vector<std::int64_t> idx;
  for (std::int64_t c0 = 0; c0 < cols; c0 += kTile) {
    const std::int64_t c1 = std::min<std::int64_t>(cols, c0 + kTile);
    idx.resize(c1 - c0);
    std::iota(idx.begin(), idx.end(), c0);
    const Mat xt = gather(targets, 0, targets.rows(), idx);
    const Mat xi = gather(inputs, 0, inputs.rows(), idx);
    ForwardPass f = forward(params.encode, params.log_thresholds, xi);
    const Mat rec = matmul(params.decode, f.feat);
    double tile = 0.0;
    for (size_t i = 0; i < rec.data().size(); ++i) {
      const double d = xt.data()[i] - rec.data()[i];
      tile += d * d;
    }
    acc += tile;
  }
  return acc / static_cast<double>(cols);
}

GradientBatch grad_distinct(const RefinerParams& params, const MiniBatch& batch) {
  if (variant_is_identical(params.variant))
    throw std::invalid_argument("grad_distinct requires a distinct variant");
  const int R = params.patch_len();
  const int K = params.filters_per_group;
  if (batch.targets.rows() != 2 * R || !batch.targets.same_shape(batch.inputs))
    throw std::invalid_argument("grad_distinct: batch shape mismatch");

  GradientBatch g;
  g.decode_grad = Mat(2 * R, 2 * K);
  g.encode_grad = Mat(2 * K, 2 * R);
  g.log_threshold_grad.assign(2 * K, 0.0);
  if (params.variant == RefinerVariant::DistinctCross) {
    BlockGrads b = block_grads_distinct(params.decode, params.encode, params.log_thresholds,
                                        batch.targets, batch.inputs);
    g.decode_grad = std::move(b.decode);
    g.encode_grad = std::move(b.encode);
    g.log_threshold_grad = std::move(b.alpha);
    return g;
  }
  // DistinctIndividual: the materials decouple, so run the same formulas on
  // each diagonal block; cross-block gradients stay identically zero.
  for (int m = 0; m < 2; ++m) {
    Mat decode_m(R, K), encode_m(K, R);
    std::vector<double> alpha_m(K);
    for (int k = 0; k < K; ++k) {
      alpha_m[k] = params.log_thresholds[m * K + k];
      for (int r = 0; r < R; ++r) {
        decode_m(r, k) = params.decode(m * R + r, m * K + k);
        encode_m(k, r) = params.encode(m * K + k, m * R + r);
      }
    }
    std::vector<std::int64_t> all(batch.targets.cols());
    std::iota(all.begin(), all.end(), 0);
    const Mat xm = gather(batch.targets, m * R, R, all);
    const Mat xinm = gather(batch.inputs, m * R, R, all);
    BlockGrads b = block_grads_distinct(decode_m, encode_m, alpha_m, xm, xinm);
    embed_block(g.decode_grad, b.decode, m * R, m * K);
    embed_block(g.encode_grad, b.encode, m * K, m * R);
    for (int k = 0; k < K; ++k) g.log_threshold_grad[m * K + k] = b.alpha[k];
  }
  return g;
}

GradientBatch grad_identical(const RefinerParams& params, const MiniBatch& batch) {
  if (!variant_is_identical(params.variant))
    throw std::invalid_argument("grad_identical requires an identical variant");
  const int R = params.patch_len();
  const int K = params.filters_per_group;
  if (batch.targets.rows() != 2 * R || !batch.targets.same_shape(batch.inputs))
    throw std::invalid_argument("grad_identical: batch shape mismatch");

  GradientBatch g;
  g.encode_grad = Mat(2 * K, 2 * R);
  g.log_threshold_grad.assign(2 * K, 0.0);
  if (params.variant == RefinerVariant::IdenticalCross) {
    BlockGrads b = block_grads_identical(params.encode, params.log_thresholds, batch.targets,
                                         batch.inputs);
    g.encode_grad = std::move(b.encode);
    g.log_threshold_grad = std::move(b.alpha);
    return g;
  }
  for (int m = 0; m < 2; ++m) {
    Mat encode_m(K, R);
    std::vector<double> alpha_m(K);
    for (int k = 0; k < K; ++k) {
      alpha_m[k] = params.log_thresholds[m * K + k];
      for (int r = 0; r < R; ++r) encode_m(k, r) = params.encode(m * K + k, m * R + r);
    }
    std::vector<std::int64_t> all(batch.targets.cols());
    std::iota(all.begin(), all.end(), 0);
    const Mat xm = gather(batch.targets, m * R, R, all);
    const Mat xinm = gather(batch.inputs, m * R, R, all);
    BlockGrads b = block_grads_identical(encode_m, alpha_m, xm, xinm);
    embed_block(g.encode_grad, b.encode, m * K, m * R);
    for (int k = 0; k < K; ++k) g.log_threshold_grad[m * K + k] = b.alpha[k];
  }
  return g;
}

BatchSampler::BatchSampler(std::int64_t total, int batch_size, std::uint64_t seed)
    : total_(total), batch_(batch_size), seed_(seed) {
  if (total < 1) throw std::invalid_argument("sampler needs at least one column");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (batch_size > total)
    throw std::invalid_argument("batch size exceeds the number of columns");
}

std::vector<std::vector<std::int64_t>> BatchSampler::epoch_batches(int epoch) const {
  std::vector<std::int64_t> perm(static_cast<size_t>(total_));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(perm);
  std::vector<std::vector<std::int64_t>> batches;
  for (std::int64_t at = 0; at < total_; at += batch_) {
    const std::int64_t end = std::min<std::int64_t>(total_, at + batch_);
    batches.emplace_back(perm.begin() + at, perm.begin() + end);
  }
  return batches;
}

namespace {

struct AdamState {
  std::vector<double> m, v;
  explicit AdamState(size_t n) : m(n, 0.0), v(n, 0.0) {}
};

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void adam_step(double* theta, const double* grad, AdamState& st, double lr, std::int64_t t) {
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
  for (size_t i = 0; i < st.m.size(); ++i) {
    st.m[i] = kAdamBeta1 * st.m[i] + (1.0 - kAdamBeta1) * grad[i];
    st.v[i] = kAdamBeta2 * st.v[i] + (1.0 - kAdamBeta2) * grad[i] * grad[i];
    theta[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + kAdamEps);
  }
}

struct ProblemResult {
  Mat encode;
  Mat decode;
  std::vector<double> alpha;
  std::vector<TrainingRecord> records;
};

// One optimization problem: rows [row0, row0+nrows) of the corpus, `hidden`
// feature channels, free decoder unless tied.
ProblemResult optimize_problem(const TrainingCorpus& corpus, int row0, int nrows, int hidden,
                               bool tied_decoder, double alpha_init, const TrainConfig& cfg,
                               std::uint64_t seed, const std::string& label) {
  ProblemResult res;
  Rng init(derive_seed(seed, 1));
  res.encode = Mat(hidden, nrows);
  if (!tied_decoder) {
    res.decode = Mat(nrows, hidden);
    for (double& v : res.decode.data()) v = init.gaussian(0.0, cfg.filter_init_std);
  }
  for (double& v : res.encode.data()) v = init.gaussian(0.0, cfg.filter_init_std);
  res.alpha.assign(static_cast<size_t>(hidden), alpha_init);

  AdamState st_decode(tied_decoder ? 0 : res.decode.data().size());
  AdamState st_encode(res.encode.data().size());
  AdamState st_alpha(res.alpha.size());

  const BatchSampler sampler(corpus.column_count(), cfg.batch_size, derive_seed(seed, 2));
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr0 * std::pow(cfg.lr_decay, epoch / cfg.lr_period);
    for (const auto& columns : sampler.epoch_batches(epoch)) {
      const Mat x = gather(corpus.targets, row0, nrows, columns);
      const Mat xin = gather(corpus.inputs, row0, nrows, columns);
      ++step;
      if (tied_decoder) {
        BlockGrads g = block_grads_identical(res.encode, res.alpha, x, xin);
        adam_step(res.encode.data().data(), g.encode.data().data(), st_encode, lr, step);
        adam_step(res.alpha.data(), g.alpha.data(), st_alpha, lr, step);
      } else {
        BlockGrads g = block_grads_distinct(res.decode, res.encode, res.alpha, x, xin);
        adam_step(res.decode.data().data(), g.decode.data().data(), st_decode, lr, step);
        adam_step(res.encode.data().data(), g.encode.data().data(), st_encode, lr, step);
        adam_step(res.alpha.data(), g.alpha.data(), st_alpha, lr, step);
      }
    }

    // Full-corpus loss, streamed in column tiles.
    constexpr int kTile = 8192;
    double acc = 0.0;
    std::vector<std::int64_t> idx;
    const Mat decode_eval = tied_decoder ? transpose(res.encode) : res.decode;
    for (std::int64_t c0 = 0; c0 < corpus.column_count(); c0 += kTile) {
      const std::int64_t c1 = std::min<std::int64_t>(corpus.column_count(), c0 + kTile);
      idx.resize(c1 - c0);
      std::iota(idx.begin(), idx.end(), c0);
      const Mat xt = gather(corpus.targets, row0, nrows, idx);
      const Mat xi = gather(corpus.inputs, row0, nrows, idx);
      ForwardPass f = forward(res.encode, res.alpha, xi);
      const Mat rec = matmul(decode_eval, f.feat);
      for (size_t i = 0; i < rec.data().size(); ++i) {
        const double d = xt.data()[i] - rec.data()[i];
        acc += d * d;
      }
    }
    const double loss = acc / static_cast<double>(corpus.column_count());
    if (!std::isfinite(loss))
      throw std::runtime_error("training diverged (non-finite loss) in problem '" + label +
                               "' at epoch " + std::to_string(epoch));
    res.records.push_back({epoch, step, loss, lr});
  }
  return res;
}

}  // namespace

TrainResult train_refiner(const TrainingCorpus& corpus, RefinerVariant variant, int patch_side,
                          int filters_per_group, const TrainConfig& cfg) {
  cfg.validate();
  corpus.validate();
  const int R = patch_side * patch_side;
  const int K = filters_per_group;
  if (corpus.targets.rows() != 2 * R)
    throw std::invalid_argument("corpus rows do not match the requested patch size");

  TrainResult out;
  if (variant_is_cross(variant)) {
    ProblemResult p = optimize_problem(corpus, 0, 2 * R, 2 * K, variant_is_identical(variant),
                                       cfg.alpha_init_cross, cfg, derive_seed(cfg.seed, 0),
                                       variant_name(variant));
    out.curves.push_back({"refiner", std::move(p.records)});
    out.params = variant_is_identical(variant)
                     ? RefinerParams::make_identical(variant, patch_side, K, std::move(p.encode),
                                                     std::move(p.alpha))
                     : RefinerParams::make(variant, patch_side, K, std::move(p.encode),
                                           std::move(p.decode), std::move(p.alpha));
    return out;
  }

  ProblemResult water =
      optimize_problem(corpus, 0, R, K, variant_is_identical(variant), cfg.alpha_init_water,
                       cfg, derive_seed(cfg.seed, 0), "water");
  ProblemResult bone =
      optimize_problem(corpus, R, R, K, variant_is_identical(variant), cfg.alpha_init_bone,
                       cfg, derive_seed(cfg.seed, 1), "bone");
  out.curves.push_back({"water", std::move(water.records)});
  out.curves.push_back({"bone", std::move(bone.records)});
  out.params = RefinerParams::make_individual(variant, patch_side, K, water.encode, water.decode,
                                              water.alpha, bone.encode, bone.decode, bone.alpha);
  return out;
}

std::string curve_csv(const std::vector<TrainingRecord>& records) {
  std::string out = "epoch,step,loss,learning_rate\n";
  char buf[128];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%d,%lld,%.17g,%.17g\n", r.epoch,
                  static_cast<long long>(r.step), r.loss, r.learning_rate);
    out += buf;
  }
  return out;
}

}  // namespace dect
