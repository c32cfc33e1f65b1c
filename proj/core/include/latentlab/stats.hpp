#pragma once

#include <vector>

#include "latentlab/common.hpp"

namespace latentlab {

struct StatResult {
  double estimate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 1.0;
  bool degenerate = false;  // zero-variance groups
};

struct ProportionGroup {
  int n = 0;       // ok outcomes
  double p_hat = 0.0;
};

// Two-proportion difference with unpooled-variance normal CI and z-test.
StatResult compare_proportions(const ProportionGroup& a, const ProportionGroup& b);

// Sample Pearson correlation; two-sided p from the t distribution with
// n-2 degrees of freedom.
StatResult pearson(const std::vector<double>& xs, const std::vector<double>& ys);

double normal_cdf(double x);
// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);
double student_t_two_sided_p(double t, double dof);

}  // namespace latentlab
