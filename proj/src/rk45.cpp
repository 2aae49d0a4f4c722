#include "pno/rk45.hpp"

#include <algorithm>
#include <cmath>

namespace pno {

namespace {

// Dormand-Prince coefficients, FSAL form.
const double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
const double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
const double kB[7] = {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0.0};
const double kE[7] = {71.0 / 57600,   0.0,        -71.0 / 16695, 71.0 / 1920,
                      -17253.0 / 339200, 22.0 / 525, -1.0 / 40};
// quartic continuous-extension weights (columns of x, x^2, x^3, x^4)
const double kP[7][4] = {
    {1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0},
    {0.0, 0.0, 0.0, 0.0},
    {0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0,
     87487479700.0 / 32700410799.0},
    {0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0},
    {0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0,
     701980252875.0 / 199316789632.0},
    {0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0},
    {0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0},
};

double error_norm(const VectorXd& err, const VectorXd& y0, const VectorXd& y1,
                  const Rk45Options& o) {
  double acc = 0.0;
  for (int i = 0; i < err.size(); ++i) {
    const double scale = o.abs_tol + o.rel_tol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = err[i] / scale;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}

double initial_step(const VectorField& f, double t0, const VectorXd& y0, const VectorXd& f0,
                    double dir, double span, const Rk45Options& o) {
  if (o.first_step > 0) return std::min(o.first_step, span);
  auto rms = [&](const VectorXd& v, const VectorXd& ref) {
    double acc = 0;
    for (int i = 0; i < v.size(); ++i) {
      const double sc = o.abs_tol + o.rel_tol * std::abs(ref[i]);
      acc += (v[i] / sc) * (v[i] / sc);
    }
    return std::sqrt(acc / static_cast<double>(v.size()));
  };
  const double d0 = rms(y0, y0);
  const double d1 = rms(f0, y0);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  VectorXd y1 = y0 + h0 * dir * f0;
  VectorXd f1 = f(t0 + h0 * dir, y1);
  const double d2 = rms(f1 - f0, y0) / h0;
  double h1;
  if (d1 <= 1e-15 && d2 <= 1e-15)
    h1 = std::max(1e-6, h0 * 1e-3);
  else
    h1 = std::pow(0.01 / std::max(d1, d2), 0.2);
  return std::min({100 * h0, h1, span, o.max_step});
}

}  // namespace

VectorXd DenseSolution::eval(double t) const {
  if (segments_.empty()) throw std::logic_error("DenseSolution: empty");
  const double dir = segments_[0].h >= 0 ? 1.0 : -1.0;
  const double tol = 1e-9 * (1.0 + std::abs(t_end_ - t_begin_));
  if ((t - t_begin_) * dir < -tol || (t - t_end_) * dir > tol)
    throw std::domain_error("DenseSolution::eval: time outside the solved span");
  // binary search for the segment containing t (in march order)
  size_t lo = 0, hi = segments_.size() - 1;
  while (lo < hi) {
    const size_t mid = (lo + hi) / 2;
    const auto& s = segments_[mid];
    if ((t - (s.t0 + s.h)) * dir > 0)
      lo = mid + 1;
    else
      hi = mid;
  }
  const auto& s = segments_[lo];
  double x = s.h != 0 ? (t - s.t0) / s.h : 0.0;
  x = std::clamp(x, 0.0, 1.0);
  Eigen::Vector4d px(x, x * x, x * x * x, x * x * x * x);
  return s.y0 + s.h * (s.q * px);
}

MatrixXd DenseSolution::sample(const VectorXd& times) const {
  MatrixXd out(dim(), times.size());
  for (int k = 0; k < times.size(); ++k) out.col(k) = eval(times[k]);
  return out;
}

DenseSolution rk45_integrate(const VectorField& f, const VectorXd& y0, double t0, double t1,
                             const Rk45Options& opts) {
  if (!y0.allFinite()) throw IntegrationError("rk45: non-finite initial state", t0);
  DenseSolution sol;
  sol.t_begin_ = t0;
  sol.t_end_ = t1;
  const int n = static_cast<int>(y0.size());
  if (t1 == t0) {
    DenseSolution::Segment seg;
    seg.t0 = t0;
    seg.h = 0;
    seg.y0 = y0;
    seg.q = MatrixXd::Zero(n, 4);
    sol.segments_.push_back(std::move(seg));
    sol.y_final_ = y0;
    return sol;
  }
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);

  std::vector<VectorXd> k(7, VectorXd(n));
  VectorXd y = y0;
  double t = t0;
  k[0] = f(t, y);
  double h = initial_step(f, t0, y0, k[0], dir, span, opts);
  const double h_min = std::max(1e-14 * span, 1e-300);

  long steps = 0;
  while ((t1 - t) * dir > 0) {
    if (++steps > opts.max_steps) throw IntegrationError("rk45: step budget exhausted", t);
    const double remaining = std::abs(t1 - t);
    const double t_eps = 4 * std::numeric_limits<double>::epsilon() *
                         std::max({1.0, std::abs(t0), std::abs(t1)});
    if (remaining <= t_eps) {  // roundoff sliver: arrival
      t = t1;
      break;
    }
    h = std::min({h, opts.max_step, remaining});
    bool last = h >= remaining * (1.0 - 1e-12);
    bool accepted = false;
    VectorXd y_new, err;
    while (!accepted) {
      if (h < h_min) throw IntegrationError("rk45: step size underflow", t);
      if (h < remaining * (1.0 - 1e-12)) last = false;
      const double hs = h * dir;
      for (int s = 1; s < 7; ++s) {
        VectorXd acc = y;
        for (int j = 0; j < s; ++j)
          if (kA[s][j] != 0.0) acc += hs * kA[s][j] * k[j];
        k[s] = f(t + kC[s] * hs, acc);
      }
      y_new = y;
      for (int s = 0; s < 7; ++s)
        if (kB[s] != 0.0) y_new += hs * kB[s] * k[s];
      err = VectorXd::Zero(n);
      for (int s = 0; s < 7; ++s)
        if (kE[s] != 0.0) err += hs * kE[s] * k[s];
      if (!y_new.allFinite()) {
        h *= 0.2;
        continue;
      }
      const double en = error_norm(err, y, y_new, opts);
      if (en <= 1.0) {
        accepted = true;
        double factor = en == 0.0 ? 10.0 : std::min(10.0, std::max(0.2, 0.9 * std::pow(en, -0.2)));
        DenseSolution::Segment seg;
        seg.t0 = t;
        seg.h = hs;
        seg.y0 = y;
        seg.q.resize(n, 4);
        for (int c = 0; c < 4; ++c) {
          VectorXd col = VectorXd::Zero(n);
          for (int s = 0; s < 7; ++s)
            if (kP[s][c] != 0.0) col += kP[s][c] * k[s];
          seg.q.col(c) = col;
        }
        sol.segments_.push_back(std::move(seg));
        t = last ? t1 : t + hs;
        y = y_new;
        k[0] = k[6];  // FSAL
        h *= factor;
      } else {
        h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
      }
    }
  }
  sol.y_final_ = y;
  sol.t_end_ = t1;
  return sol;
}

}  // namespace pno
