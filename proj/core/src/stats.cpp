#include "latentlab/stats.hpp"

#include <cmath>

namespace latentlab {

namespace {

constexpr double kZ95 = 1.959963984540054;  // Phi^-1(0.975)

// Lentz continued fraction for the incomplete beta, as in standard
// numerical references.
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

double incomplete_beta(double a, double b, double x) {
  check(x >= 0.0 && x <= 1.0, "incomplete_beta x out of [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(ln_front) * betacf(a, b, x) / a;
  return 1.0 - std::exp(ln_front) * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double dof) {
  check(dof > 0.0, "degrees of freedom must be positive");
  const double x = dof / (dof + t * t);
  return incomplete_beta(0.5 * dof, 0.5, x);
}

StatResult compare_proportions(const ProportionGroup& a, const ProportionGroup& b) {
  check(a.n > 0 && b.n > 0, "both groups must be non-empty");
  check(a.p_hat >= 0.0 && a.p_hat <= 1.0 && b.p_hat >= 0.0 && b.p_hat <= 1.0,
        "proportions must lie in [0,1]");
  StatResult result;
  result.estimate = a.p_hat - b.p_hat;
  const double var = a.p_hat * (1.0 - a.p_hat) / a.n + b.p_hat * (1.0 - b.p_hat) / b.n;
  if (var == 0.0) {
    result.degenerate = true;
    result.ci_low = result.ci_high = result.estimate;
    result.p_value = result.estimate == 0.0 ? 1.0 : 0.0;
    return result;
  }
  const double se = std::sqrt(var);
  result.ci_low = result.estimate - kZ95 * se;
  result.ci_high = result.estimate + kZ95 * se;
  const double z = result.estimate / se;
  // Survival form: 2*(1 - cdf(|z|)) underflows for large |z|.
  result.p_value = std::min(1.0, 2.0 * normal_cdf(-std::fabs(z)));
  return result;
}

StatResult pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  check(xs.size() == ys.size(), "pearson inputs must have equal length");
  const std::size_t n = xs.size();
  check(n >= 3, "pearson needs at least 3 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  check(sxx > 0.0 && syy > 0.0, "pearson inputs must have nonzero variance");
  StatResult result;
  double r = sxy / std::sqrt(sxx * syy);
  r = std::clamp(r, -1.0, 1.0);
  result.estimate = r;
  result.ci_low = result.ci_high = r;  // no CI defined for this fixture statistic
  const double dof = static_cast<double>(n) - 2.0;
  if (std::fabs(r) == 1.0) {
    result.p_value = 0.0;
  } else {
    const double t = r * std::sqrt(dof / (1.0 - r * r));
    result.p_value = student_t_two_sided_p(t, dof);
  }
  return result;
}

}  // namespace latentlab
