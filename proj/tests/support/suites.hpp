#pragma once

// Property suites shared by the unit tests and the acceptance runner.

#include <string>
#include <vector>

namespace mist::suites {

struct Check {
  std::string name;
  double value = 0;      // measured quantity (error, accuracy, ...)
  double threshold = 0;  // limit the value is compared against
  bool pass = false;
};

bool all_pass(const std::vector<Check>& checks);
std::string describe_failures(const std::vector<Check>& checks);

/// Central-difference checks (64-bit, h = 1e-4) of every tensor op.
std::vector<Check> op_gradients();
/// g_total on a 16x16, two-level configuration against finite differences.
std::vector<Check> end_to_end_gradients();
/// Plane statistics of instance_norm and adain on `trials` random tensors.
std::vector<Check> normalization(int trials = 1000);
/// SSIM/PSNR against direct per-window formulas plus closed-form cases.
std::vector<Check> metric_oracles(int pairs = 50);
/// cl = csl + ccl, loss zero cases, objective assembly.
std::vector<Check> loss_identities();

}  // namespace mist::suites
