#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dect/physics.hpp"
#include "dect/refiner.hpp"
#include "dect/training.hpp"

namespace dect {

// A trained decomposition network: one refiner per iteration plus the data-fit
// weight used by the closed-form update between refinements.
struct BcdNetModel {
  RefinerVariant variant = RefinerVariant::DistinctCross;
  int patch_side = 0;
  int filters_per_group = 0;
  double beta = 0;
  std::uint64_t seed = 0;
  std::string config_digest;  // hex digest of the originating config
  TrainConfig train_config;
  std::vector<RefinerParams> iterations;

  int iteration_count() const { return static_cast<int>(iterations.size()); }
  void validate() const;
};

struct TrainPair {
  MaterialImage water_ref;
  MaterialImage bone_ref;
  AttenuationPair measurements;
};

struct IterationStats {
  int iteration = 0;        // 0 = direct inversion
  double rmse_water = 0;    // mean over training pairs, tissue ROI
  double rmse_bone = 0;
  double final_train_loss = 0;  // last epoch loss (0 for iteration 0)
};

struct TrainModelResult {
  BcdNetModel model;
  std::vector<IterationStats> stats;      // length I + 1
  std::vector<NamedCurve> curves;         // refiner training curves
};

// One refinement pass per iteration: train the refiner on patches paired
// between the references and the current decompositions, refine every pair,
// then take the closed-form update. x^(0) is the direct inversion.
TrainModelResult train_bcdnet(const std::vector<TrainPair>& pairs,
                              const DecompPhysics& physics, RefinerVariant variant,
                              double beta, int iterations, int patch_side,
                              int filters_per_group, const TrainConfig& cfg,
                              const std::string& config_digest = "");

// All iterates including x^(0); length = model iterations + 1.
struct DecompositionTrace {
  std::vector<std::pair<MaterialImage, MaterialImage>> iterates;
};

DecompositionTrace apply_model(const BcdNetModel& model, const AttenuationPair& y,
                               const DecompPhysics& physics,
                               std::optional<double> beta_override = std::nullopt);

// BCDN container: "BCDN" magic, u32 version, u32 JSON metadata length,
// metadata, then per iteration the raw little-endian arrays decode, encode,
// log_thresholds. Round trips losslessly.
void save_model(const BcdNetModel& model, const std::string& path);
BcdNetModel load_model(const std::string& path);

}  // namespace dect
