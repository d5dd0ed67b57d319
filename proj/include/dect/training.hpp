#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dect/linalg.hpp"
#include "dect/refiner.hpp"

namespace dect {

// Paired patch matrices: targets from reference images, inputs from the
// current decompositions, spatially aligned column by column. Always stacked
// two-material (2R x P); individual-material training slices the halves.
struct TrainingCorpus {
  Mat targets;
  Mat inputs;

  std::int64_t column_count() const { return targets.cols(); }
  void validate() const;
};

TrainingCorpus build_training_corpus(
    const std::vector<std::pair<MaterialImage, MaterialImage>>& references,
    const std::vector<std::pair<MaterialImage, MaterialImage>>& current,
    int patch_side);

struct MiniBatch {
  Mat targets;  // 2R x B (or R x B for a single material)
  Mat inputs;
};

MiniBatch gather_batch(const TrainingCorpus& corpus, const std::vector<std::int64_t>& columns);

struct TrainConfig {
  int batch_size = 10000;
  int epochs = 50;
  double lr0 = 3e-4;
  double lr_decay = 0.9;   // multiplied in every lr_period epochs
  int lr_period = 5;
  std::uint64_t seed = 0;
  double filter_init_std = 0.1;
  // Log-domain threshold initializers. Individual-material refiners use the
  // per-material values; cross-material refiners use the shared one.
  double alpha_init_water = -0.12783337150988489;  // log(0.88)
  double alpha_init_bone = -0.2231435513142097;    // log(0.8)
  double alpha_init_cross = -0.12783337150988489;  // log(0.88)

  void validate() const;
};

// Subgradients of the batch loss, shaped like the parameters. Blocks that the
// variant ties or zeroes are zero; identical variants have no decoder grad.
struct GradientBatch {
  Mat decode_grad;   // empty for identical variants
  Mat encode_grad;
  std::vector<double> log_threshold_grad;
};

// (1/cols) || targets - D T_exp(alpha)(E inputs) ||_F^2, evaluated in column
// tiles with a fixed accumulation order.
double refiner_loss(const RefinerParams& params, const Mat& targets, const Mat& inputs);

// Batch subgradients for the free-decoder variants. With
// Z = T_exp(alpha)(E X_in) and the indicator M = [|E X_in| > exp(alpha)]:
//   dL/dD = -(2/B) (X - D Z) Z^T
//   dL/dE = -(2/B) (D^T (X - D Z) .* M) X_in^T
//   dL/dalpha = (2/B) rowsum( D^T (X - D Z) .* exp(alpha) .* sign(Z) )
// DistinctIndividual applies the same formulas per material block.
GradientBatch grad_distinct(const RefinerParams& params, const MiniBatch& batch);

// Tied-decoder (D = E^T) variants pick up a second chain-rule term:
//   dL/dE = -(2/B) (E (X - E^T Z) .* M) X_in^T  -  (2/B) Z (X - E^T Z)^T
// with dL/dalpha as above (D^T = E).
GradientBatch grad_identical(const RefinerParams& params, const MiniBatch& batch);

// Deterministic epoch batching: a seeded permutation of the column indices,
// split into ceil(P/B) chunks (last one possibly short).
class BatchSampler {
 public:
  BatchSampler(std::int64_t total, int batch_size, std::uint64_t seed);
  std::vector<std::vector<std::int64_t>> epoch_batches(int epoch) const;
  std::int64_t total() const { return total_; }
  int batch_size() const { return batch_; }

 private:
  std::int64_t total_;
  int batch_;
  std::uint64_t seed_;
};

struct TrainingRecord {
  int epoch = 0;
  std::int64_t step = 0;   // cumulative Adam steps
  double loss = 0;         // full-corpus loss at epoch end
  double learning_rate = 0;
};

struct NamedCurve {
  std::string name;
  std::vector<TrainingRecord> records;
};

struct TrainResult {
  RefinerParams params;
  std::vector<NamedCurve> curves;  // one per optimization problem
};

// Trains one iteration's refiner from fresh random initialization with Adam
// (0.9, 0.999, 1e-8) and the stepped learning-rate schedule. Individual
// variants run one optimization per material on the corpus halves. Identical
// seeds give bit-identical parameters.
TrainResult train_refiner(const TrainingCorpus& corpus, RefinerVariant variant,
                          int patch_side, int filters_per_group, const TrainConfig& cfg);

std::string curve_csv(const std::vector<TrainingRecord>& records);

}  // namespace dect
