#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dannet {

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  int64_t elements = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_err = 0.0;
  double threshold = 1e-3;
  bool passed = false;
  std::string worst_group;
};

/// Central finite differences (step 1e-6, double precision) against the
/// analytic backward pass on a seeded tiny model: 2 blocks x 2 layers,
/// growth rate 4. Per-group errors are normalized by the group's gradient
/// scale so near-zero elements do not drown the report in roundoff.
GradCheckReport gradcheck_tiny_densenet(uint64_t seed, bool corrupt_conv_backward = false);

struct EquivalencePoint {
  double lambda = 0.0;
  double max_ulp = 0.0;
  std::string worst_param;
};

struct EquivalenceReport {
  std::vector<EquivalencePoint> points;
  double max_ulp = 0.0;
  bool passed = false;  // every parameter within 1 ulp
};

/// Verifies that one step through the reversal-layer graph equals one step
/// of the explicit three-way update on randomly built tiny models.
EquivalenceReport check_update_equivalence(const std::vector<double>& lambdas, int num_models, uint64_t seed);

/// Units in the last place between two doubles; 0 for bitwise-equal values
/// and for +0/-0.
int64_t ulp_distance(double a, double b);

}  // namespace dannet
