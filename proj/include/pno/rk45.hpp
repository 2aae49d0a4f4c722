#pragma once

#include "pno/common.hpp"

#include <functional>

namespace pno {

struct IntegrationError : std::runtime_error {
  double t_fail = 0.0;
  explicit IntegrationError(const std::string& msg, double t)
      : std::runtime_error(msg), t_fail(t) {}
};

struct Rk45Options {
  double rel_tol = 1e-6;
  double abs_tol = 1e-8;
  double max_step = std::numeric_limits<double>::infinity();
  long max_steps = 2'000'000;
  double first_step = 0.0;  // 0: choose automatically
};

/// Piecewise-quartic continuous extension of an embedded 4(5) solution.
/// Segments run in integration order; spans may be reversed (backward time).
class DenseSolution {
 public:
  struct Segment {
    double t0 = 0, h = 0;  // h signed
    VectorXd y0;
    MatrixXd q;  // n x 4 interpolation coefficients
  };

  double t_begin() const { return t_begin_; }
  double t_end() const { return t_end_; }
  int dim() const { return segments_.empty() ? 0 : static_cast<int>(segments_[0].y0.size()); }

  VectorXd eval(double t) const;
  /// samples at strictly monotone times running in the integration direction
  MatrixXd sample(const VectorXd& times) const;

  std::vector<Segment> segments_;
  double t_begin_ = 0, t_end_ = 0;
  VectorXd y_final_;
};

using VectorField = std::function<VectorXd(double, const VectorXd&)>;

/// Adaptive Dormand-Prince 4(5) with free continuous extension. t1 < t0
/// integrates backward. Throws IntegrationError on step-size underflow.
DenseSolution rk45_integrate(const VectorField& f, const VectorXd& y0, double t0, double t1,
                             const Rk45Options& opts = {});

}  // namespace pno
