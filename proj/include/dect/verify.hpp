#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dect {

// Self-contained numerical checks of the core identities: the patch and
// convolution evaluation routes agree, the image-domain training loss is
// bounded by the patch loss, every variant's analytic subgradients match
// central finite differences, the constrained full architecture reproduces
// each specialized variant bit for bit, and the closed-form update is the
// exact minimizer of its per-pixel cost.
struct CheckResult {
  std::string name;
  bool pass = false;
  double measured = 0;  // worst observed value
  double bound = 0;     // pass threshold
  std::string detail;
};

struct VerifyOptions {
  int trials_equivalence = 200;
  int trials_loss_bound = 100;
  int trials_gradients = 100;   // per variant
  int trials_specialization = 50;
  int trials_mbid = 50;
  std::uint64_t seed = 20240601;
  // Test fixture: flips one sign in the analytic encoder gradient so the
  // gradient check must fail. Proves the suite can catch a broken build.
  bool inject_gradient_defect = false;
};

std::vector<CheckResult> run_verification(const VerifyOptions& opts);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace dect
