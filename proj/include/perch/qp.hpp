#pragma once

// Convex trajectory QP: quadratic jerk cost, triple-integrator equality
// dynamics per axis, infinity-norm boxes on acceleration and jerk, fixed
// endpoint states. Solved by an OSQP-style operator-splitting iteration with
// one banded LDL^T factorization of the KKT system reused across iterations,
// plus an active-set polish step that tightens the returned point. The cost
// and constraints separate per axis, so the three axes are solved as
// independent 1-D problems.
//
// Public state ordering: 9-vectors are [pos(3), vel(3), acc(3)], solution
// rows use the same layout. Internally each axis works in the time-scaled
// variables (p, v*dt, a*dt^2, j*dt^3), which keeps the KKT matrix well
// conditioned uniformly in N and dt; results and residuals are reported in
// original units.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "perch/core.hpp"

namespace perch::qp {

enum class QpStatus { optimal, infeasible, max_iterations };

struct QpProblem {
  int horizon = 0;   // N
  double dt = 0.0;
  Vec9 x0 = Vec9::Zero();
  Vec9 xf = Vec9::Zero();
  double a_max = 0.0;
  double j_max = 0.0;
  double jerk_weight = 1.0;

  void validate() const {
    if (horizon < 2) throw ConfigError("qp horizon must be >= 2");
    if (!(dt > 0.0)) throw ConfigError("qp dt must be > 0");
    if (!(a_max > 0.0) || !(j_max > 0.0))
      throw ConfigError("qp a_max and j_max must be > 0");
    if (jerk_weight < 0.0) throw ConfigError("qp jerk_weight must be >= 0");
    for (int k = 0; k < 3; ++k) {
      if (std::abs(x0(6 + k)) > a_max || std::abs(xf(6 + k)) > a_max)
        throw ConfigError("qp endpoint acceleration outside the box");
    }
  }
};

/// Dual variables for one axis, in original units. Row layout follows the
/// constraint groups: initial state (3), terminal state (3), dynamics
/// (N x 3 for the p/v/a rows of step t), acceleration boxes (N+1), jerk
/// boxes (N).
struct AxisDuals {
  Vec3 init = Vec3::Zero();
  Vec3 term = Vec3::Zero();
  Eigen::MatrixXd dyn;    // N x 3
  Eigen::VectorXd abox;   // N+1
  Eigen::VectorXd jbox;   // N
};

struct QpSolution {
  Eigen::MatrixXd states;  // (N+1) x 9
  Eigen::MatrixXd jerks;   // N x 3
  QpStatus status = QpStatus::max_iterations;
  int iterations = 0;
  double primal_residual = std::numeric_limits<double>::infinity();
  double dual_residual = std::numeric_limits<double>::infinity();
  std::array<AxisDuals, 3> duals;
};

struct KktResiduals {
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
};

struct QpSettings {
  double sigma = 1e-6;        // x-regularization
  double rho0 = 0.1;          // initial penalty on box rows
  double rho_eq_scale = 1e3;  // equality rows get rho0 * this
  double alpha = 1.6;         // over-relaxation
  int max_iterations = 4000;
  int check_every = 25;       // residual / rho / certificate cadence
  double eps_infeasible = 1e-5;
};

namespace detail {

/// Symmetric banded LDL^T without pivoting. Safe here because the KKT matrix
/// is quasi-definite (positive diagonal on variables, negative on rows).
class BandLdlt {
 public:
  void resize(int n, int bw) {
    n_ = n;
    bw_ = bw;
    band_.assign(static_cast<std::size_t>(n) * (bw + 1), 0.0);
    d_.assign(n, 0.0);
  }

  // i >= j, i - j <= bw
  double& at(int i, int j) { return band_[std::size_t(j) * (bw_ + 1) + (i - j)]; }

  bool factorize() {
    const int w = bw_ + 1;
    for (int j = 0; j < n_; ++j) {
      double dj = band_[std::size_t(j) * w];
      for (int k = std::max(0, j - bw_); k < j; ++k)
        dj -= band_[std::size_t(k) * w + (j - k)] * band_[std::size_t(k) * w + (j - k)] * d_[k];
      if (std::abs(dj) < 1e-300 || !std::isfinite(dj)) return false;
      d_[j] = dj;
      const int imax = std::min(n_ - 1, j + bw_);
      for (int i = j + 1; i <= imax; ++i) {
        double s = band_[std::size_t(j) * w + (i - j)];
        for (int k = std::max(0, i - bw_); k < j; ++k)
          s -= band_[std::size_t(k) * w + (i - k)] * band_[std::size_t(k) * w + (j - k)] * d_[k];
        band_[std::size_t(j) * w + (i - j)] = s / dj;
      }
    }
    return true;
  }

  void solve(Eigen::VectorXd& b) const {
    const int w = bw_ + 1;
    for (int j = 0; j < n_; ++j) {
      const double bj = b[j];
      const int imax = std::min(n_ - 1, j + bw_);
      for (int i = j + 1; i <= imax; ++i)
        b[i] -= band_[std::size_t(j) * w + (i - j)] * bj;
    }
    for (int j = 0; j < n_; ++j) b[j] /= d_[j];
    for (int j = n_ - 1; j >= 0; --j) {
      double s = b[j];
      const int imax = std::min(n_ - 1, j + bw_);
      for (int i = j + 1; i <= imax; ++i)
        s -= band_[std::size_t(j) * w + (i - j)] * b[i];
      b[j] = s;
    }
  }

 private:
  int n_ = 0, bw_ = 0;
  std::vector<double> band_;
  std::vector<double> d_;
};

struct AxisProblem {
  int N = 0;
  double h = 0.0;  // dt
  double p0 = 0, v0 = 0, a0 = 0;
  double pf = 0, vf = 0, af = 0;
  double a_max = 0, j_max = 0;
  double w = 1.0;  // jerk weight
};

struct AxisSolution {
  Eigen::VectorXd pos, vel, acc;  // N+1
  Eigen::VectorXd jerk;           // N
  AxisDuals duals;
  QpStatus status = QpStatus::max_iterations;
  int iterations = 0;
  double primal_res = std::numeric_limits<double>::infinity();
  double dual_res = std::numeric_limits<double>::infinity();
};

/// KKT residuals of one axis in original units; shared by the solver's
/// termination check and the public kkt_residuals.
inline KktResiduals axis_residuals(const AxisProblem& pr, const Eigen::VectorXd& pos,
                                   const Eigen::VectorXd& vel, const Eigen::VectorXd& acc,
                                   const Eigen::VectorXd& jerk, const AxisDuals& y) {
  const int N = pr.N;
  const double h = pr.h;
  KktResiduals r;

  auto bump = [](double& acc_max, double v) { acc_max = std::max(acc_max, std::abs(v)); };

  // Primal: dynamics, endpoints, box excess.
  for (int t = 0; t < N; ++t) {
    bump(r.primal, pos(t + 1) - pos(t) - h * vel(t) - 0.5 * h * h * acc(t) -
                       h * h * h / 6.0 * jerk(t));
    bump(r.primal, vel(t + 1) - vel(t) - h * acc(t) - 0.5 * h * h * jerk(t));
    bump(r.primal, acc(t + 1) - acc(t) - h * jerk(t));
    bump(r.primal, std::max(0.0, std::abs(jerk(t)) - pr.j_max));
  }
  for (int t = 0; t <= N; ++t)
    bump(r.primal, std::max(0.0, std::abs(acc(t)) - pr.a_max));
  bump(r.primal, pos(0) - pr.p0);
  bump(r.primal, vel(0) - pr.v0);
  bump(r.primal, acc(0) - pr.a0);
  bump(r.primal, pos(N) - pr.pf);
  bump(r.primal, vel(N) - pr.vf);
  bump(r.primal, acc(N) - pr.af);

  // Dual: stationarity of the Lagrangian per variable.
  for (int t = 0; t <= N; ++t) {
    double sp = 0.0, sv = 0.0, sa = 0.0;
    if (t < N) {
      sp -= y.dyn(t, 0);
      sv -= h * y.dyn(t, 0) + y.dyn(t, 1);
      sa -= 0.5 * h * h * y.dyn(t, 0) + h * y.dyn(t, 1) + y.dyn(t, 2);
    }
    if (t > 0) {
      sp += y.dyn(t - 1, 0);
      sv += y.dyn(t - 1, 1);
      sa += y.dyn(t - 1, 2);
    }
    if (t == 0) { sp += y.init(0); sv += y.init(1); sa += y.init(2); }
    if (t == N) { sp += y.term(0); sv += y.term(1); sa += y.term(2); }
    sa += y.abox(t);
    bump(r.dual, sp);
    bump(r.dual, sv);
    bump(r.dual, sa);
  }
  for (int t = 0; t < N; ++t) {
    const double sj = 2.0 * pr.w * jerk(t) - h * h * h / 6.0 * y.dyn(t, 0) -
                      0.5 * h * h * y.dyn(t, 1) - h * y.dyn(t, 2) + y.jbox(t);
    bump(r.dual, sj);
  }

  // Complementarity on the box rows.
  auto comp = [&](double mult, double val, double lo, double hi) {
    if (mult > 0.0) return mult * std::abs(hi - val);
    if (mult < 0.0) return -mult * std::abs(val - lo);
    return 0.0;
  };
  for (int t = 0; t <= N; ++t)
    bump(r.complementarity, comp(y.abox(t), acc(t), -pr.a_max, pr.a_max));
  for (int t = 0; t < N; ++t)
    bump(r.complementarity, comp(y.jbox(t), jerk(t), -pr.j_max, pr.j_max));
  return r;
}

/// One-axis operator-splitting solver with reusable workspace.
class AxisQp {
 public:
  AxisSolution solve(const AxisProblem& pr, double tol, const QpSettings& st,
                     const Eigen::VectorXd* warm_x = nullptr,
                     const Eigen::VectorXd* warm_y = nullptr) {
    setup(pr, st);
    const int nv = nv_, nc = nc_;

    Eigen::VectorXd x = Eigen::VectorXd::Zero(nv);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(nc);
    if (warm_x && warm_x->size() == nv) x = *warm_x;
    if (warm_y && warm_y->size() == nc) y = *warm_y;
    Eigen::VectorXd z = a_mul(x);
    clamp_rows(z);

    Eigen::VectorXd y_prev = y, rhs(nk_), xt(nv), nu(nc), zt(nc), w(nc), ax(nv == 0 ? 0 : nc);

    AxisSolution best;
    double best_score = std::numeric_limits<double>::infinity();
    double eps_work = std::min(1e-5, tol);

    int iter = 0;
    for (iter = 1; iter <= st.max_iterations; ++iter) {
      // x-update via the cached KKT factorization.
      rhs.setZero();
      for (int v = 0; v < nv; ++v) rhs(kvar_[v]) = st.sigma * x(v);
      for (int r = 0; r < nc; ++r) rhs(kcon_[r]) = z(r) - y(r) / rho_[r];
      ldlt_.solve(rhs);
      for (int v = 0; v < nv; ++v) xt(v) = rhs(kvar_[v]);
      for (int r = 0; r < nc; ++r) nu(r) = rhs(kcon_[r]);
      for (int r = 0; r < nc; ++r) zt(r) = z(r) + (nu(r) - y(r)) / rho_[r];

      x = st.alpha * xt + (1.0 - st.alpha) * x;
      w = st.alpha * zt + (1.0 - st.alpha) * z;
      y_prev = y;
      Eigen::VectorXd z_new = w + y.cwiseQuotient(rho_);
      clamp_rows(z_new);
      y += rho_.cwiseProduct(w - z_new);
      z = z_new;

      if (iter % st.check_every != 0 && iter != st.max_iterations) continue;

      ax = a_mul(x);
      const double rp = (ax - z).lpNorm<Eigen::Infinity>();
      const double rp_rel = std::max({1.0, ax.lpNorm<Eigen::Infinity>(),
                                      z.lpNorm<Eigen::Infinity>()});
      Eigen::VectorXd px = p_mul(x);
      Eigen::VectorXd aty = at_mul(y);
      const double rd = (px + aty).lpNorm<Eigen::Infinity>();
      const double rd_rel = std::max({1.0, px.lpNorm<Eigen::Infinity>(),
                                      aty.lpNorm<Eigen::Infinity>()});

      if (rp <= eps_work * rp_rel && rd <= eps_work * rd_rel) {
        AxisSolution cand = extract(pr, x, y, iter);
        KktResiduals res = axis_residuals(pr, cand.pos, cand.vel, cand.acc,
                                          cand.jerk, cand.duals);
        double score = std::max(res.primal, res.dual);
        AxisSolution pol;
        if (polish(pr, st, x, y, pol)) {
          pol.iterations = iter;
          KktResiduals pres = axis_residuals(pr, pol.pos, pol.vel, pol.acc,
                                             pol.jerk, pol.duals);
          const double pscore = std::max(pres.primal, pres.dual);
          if (pscore < score) {
            cand = pol;
            res = pres;
            score = pscore;
          }
        }
        cand.primal_res = res.primal;
        cand.dual_res = res.dual;
        if (score < best_score) {
          best = cand;
          best_score = score;
        }
        if (score <= tol) {
          best.status = QpStatus::optimal;
          return best;
        }
        eps_work = std::max(eps_work * 0.1, 1e-13);
      }

      // Primal infeasibility certificate on the one-iteration dual delta.
      Eigen::VectorXd dy = y - y_prev;
      const double dy_norm = dy.lpNorm<Eigen::Infinity>();
      if (dy_norm > 1e-14) {
        const double at_dy = at_mul(dy).lpNorm<Eigen::Infinity>();
        double support = 0.0;
        for (int r = 0; r < nc; ++r)
          support += hi_[r] * std::max(dy(r), 0.0) + lo_[r] * std::min(dy(r), 0.0);
        if (at_dy <= st.eps_infeasible * dy_norm &&
            support <= -st.eps_infeasible * dy_norm) {
          AxisSolution out = extract(pr, x, y, iter);
          out.status = QpStatus::infeasible;
          return out;
        }
      }

      // Adaptive penalty, OSQP style.
      if (iter % st.check_every == 0 && iter < st.max_iterations) {
        const double num = rp / rp_rel;
        const double den = std::max(rd / rd_rel, 1e-16);
        const double ratio = std::sqrt(num / den);
        if (ratio > 5.0 || ratio < 0.2) {
          rho_base_ = std::clamp(rho_base_ * ratio, 1e-6, 1e6);
          set_rho(st);
          assemble_and_factor(st);
        }
      }
    }

    if (best_score < std::numeric_limits<double>::infinity()) {
      best.status = QpStatus::max_iterations;
      best.iterations = st.max_iterations;
      return best;
    }
    AxisSolution out = extract(pr, x, y, st.max_iterations);
    out.status = QpStatus::max_iterations;
    KktResiduals res =
        axis_residuals(pr, out.pos, out.vel, out.acc, out.jerk, out.duals);
    out.primal_res = res.primal;
    out.dual_res = res.dual;
    return out;
  }

  /// Scaled warm-start vectors for a previous solution of the same shape.
  void pack_warm(const AxisProblem& pr, const Eigen::VectorXd& pos,
                 const Eigen::VectorXd& vel, const Eigen::VectorXd& acc,
                 const Eigen::VectorXd& jerk, const AxisDuals& duals,
                 Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    const int N = pr.N;
    const double h = pr.h;
    x.resize(4 * N + 3);
    y.resize(5 * N + 7);
    const double dual_scale = h * h * h * h * h * h / std::max(pr.w, 1e-300);
    for (int t = 0; t <= N; ++t) {
      x(4 * std::min(t, N) + 0) = pos(t);
    }
    for (int t = 0; t <= N; ++t) {
      const int base = var_state_base(t, N);
      x(base + 0) = pos(t);
      x(base + 1) = vel(t) * h;
      x(base + 2) = acc(t) * h * h;
    }
    for (int t = 0; t < N; ++t) x(4 * t + 3) = jerk(t) * h * h * h;
    // Rows in the same order rows_ were built: init, per-t boxes/dynamics,
    // final accel box, terminal.
    int r = 0;
    y(r++) = duals.init(0) * dual_scale;
    y(r++) = duals.init(1) * dual_scale * h;
    y(r++) = duals.init(2) * dual_scale * h * h;
    for (int t = 0; t < N; ++t) {
      y(r++) = duals.abox(t) * dual_scale * h * h;
      y(r++) = duals.jbox(t) * dual_scale * h * h * h;
      y(r++) = duals.dyn(t, 0) * dual_scale;
      y(r++) = duals.dyn(t, 1) * dual_scale * h;
      y(r++) = duals.dyn(t, 2) * dual_scale * h * h;
    }
    y(r++) = duals.abox(N) * dual_scale * h * h;
    y(r++) = duals.term(0) * dual_scale;
    y(r++) = duals.term(1) * dual_scale * h;
    y(r++) = duals.term(2) * dual_scale * h * h;
  }

 private:
  struct Entry {
    int var;
    double coef;
  };
  struct Row {
    std::array<Entry, 5> e{};
    int n = 0;
    double lo = 0.0, hi = 0.0;
    bool eq = false;
    int kc = 0;      // position in the banded KKT ordering
    double scale = 1.0;  // scaled row = scale * original row
    enum Kind { init, term, dyn, abox, jbox } kind = dyn;
    int t = 0, comp = 0;
  };

  static int var_state_base(int t, int N) { return t < N ? 4 * t : 4 * N; }

  void setup(const AxisProblem& pr, const QpSettings& st) {
    const int N = pr.N;
    const double h = pr.h;
    N_ = N;
    h_ = h;
    nv_ = 4 * N + 3;
    nc_ = 5 * N + 7;
    nk_ = nv_ + nc_;

    kvar_.resize(nv_);
    for (int t = 0; t < N; ++t) {
      for (int i = 0; i < 3; ++i) kvar_[4 * t + i] = 9 * t + i;
      kvar_[4 * t + 3] = 9 * t + 3;
    }
    for (int i = 0; i < 3; ++i) kvar_[4 * N + i] = 9 * N + i;

    pdiag_.assign(nv_, 0.0);
    for (int t = 0; t < N; ++t) pdiag_[4 * t + 3] = 2.0;  // scaled jerk cost

    rows_.clear();
    rows_.reserve(nc_);
    auto add = [&](Row r) { rows_.push_back(r); };

    auto state_bound = [&](int i, bool initial) {
      const double p = initial ? pr.p0 : pr.pf;
      const double v = initial ? pr.v0 : pr.vf;
      const double a = initial ? pr.a0 : pr.af;
      if (i == 0) return p;
      if (i == 1) return v * h;
      return a * h * h;
    };
    const double s_state[3] = {1.0, h, h * h};

    for (int i = 0; i < 3; ++i) {
      Row r;
      r.e[0] = {4 * 0 + i, 1.0};
      r.n = 1;
      r.lo = r.hi = state_bound(i, true);
      r.eq = true;
      r.kc = 4 + i;
      r.scale = s_state[i];
      r.kind = Row::init;
      r.comp = i;
      add(r);
    }
    for (int t = 0; t < N; ++t) {
      Row ab;
      ab.e[0] = {4 * t + 2, 1.0};
      ab.n = 1;
      ab.hi = pr.a_max * h * h;
      ab.lo = -ab.hi;
      ab.kc = t == 0 ? 7 : 9 * t + 7;
      ab.scale = h * h;
      ab.kind = Row::abox;
      ab.t = t;
      add(ab);

      Row jb;
      jb.e[0] = {4 * t + 3, 1.0};
      jb.n = 1;
      jb.hi = pr.j_max * h * h * h;
      jb.lo = -jb.hi;
      jb.kc = t == 0 ? 8 : 9 * t + 8;
      jb.scale = h * h * h;
      jb.kind = Row::jbox;
      jb.t = t;
      add(jb);

      const int xb = 4 * t;
      const int xn = var_state_base(t + 1, N);
      const int kc_base = (t + 1 <= N - 1) ? 9 * (t + 1) + 4 : 9 * N + 3;
      // p-row
      {
        Row r;
        r.e[0] = {xn + 0, 1.0};
        r.e[1] = {xb + 0, -1.0};
        r.e[2] = {xb + 1, -1.0};
        r.e[3] = {xb + 2, -0.5};
        r.e[4] = {xb + 3, -1.0 / 6.0};
        r.n = 5;
        r.eq = true;
        r.kc = kc_base + 0;
        r.scale = 1.0;
        r.kind = Row::dyn;
        r.t = t;
        r.comp = 0;
        add(r);
      }
      // v-row
      {
        Row r;
        r.e[0] = {xn + 1, 1.0};
        r.e[1] = {xb + 1, -1.0};
        r.e[2] = {xb + 2, -1.0};
        r.e[3] = {xb + 3, -0.5};
        r.n = 4;
        r.eq = true;
        r.kc = kc_base + 1;
        r.scale = h;
        r.kind = Row::dyn;
        r.t = t;
        r.comp = 1;
        add(r);
      }
      // a-row
      {
        Row r;
        r.e[0] = {xn + 2, 1.0};
        r.e[1] = {xb + 2, -1.0};
        r.e[2] = {xb + 3, -1.0};
        r.n = 3;
        r.eq = true;
        r.kc = kc_base + 2;
        r.scale = h * h;
        r.kind = Row::dyn;
        r.t = t;
        r.comp = 2;
        add(r);
      }
    }
    {
      Row ab;
      ab.e[0] = {4 * N + 2, 1.0};
      ab.n = 1;
      ab.hi = pr.a_max * h * h;
      ab.lo = -ab.hi;
      ab.kc = 9 * N + 6;
      ab.scale = h * h;
      ab.kind = Row::abox;
      ab.t = N;
      add(ab);
    }
    for (int i = 0; i < 3; ++i) {
      Row r;
      r.e[0] = {4 * N + i, 1.0};
      r.n = 1;
      r.lo = r.hi = state_bound(i, false);
      r.eq = true;
      r.kc = 9 * N + 7 + i;
      r.scale = s_state[i];
      r.kind = Row::term;
      r.comp = i;
      add(r);
    }

    kcon_.resize(nc_);
    lo_.resize(nc_);
    hi_.resize(nc_);
    for (int r = 0; r < nc_; ++r) {
      kcon_[r] = rows_[r].kc;
      lo_(r) = rows_[r].lo;
      hi_(r) = rows_[r].hi;
    }

    rho_base_ = st.rho0;
    set_rho(st);
    assemble_and_factor(st);
  }

  void set_rho(const QpSettings& st) {
    rho_.resize(nc_);
    for (int r = 0; r < nc_; ++r)
      rho_(r) = rows_[r].eq ? std::min(rho_base_ * st.rho_eq_scale, 1e6)
                            : rho_base_;
  }

  void assemble_and_factor(const QpSettings& st) {
    ldlt_.resize(nk_, kBw);
    for (int v = 0; v < nv_; ++v) ldlt_.at(kvar_[v], kvar_[v]) = pdiag_[v] + st.sigma;
    for (int r = 0; r < nc_; ++r) {
      ldlt_.at(kcon_[r], kcon_[r]) = -1.0 / rho_(r);
      for (int e = 0; e < rows_[r].n; ++e)
        ldlt_.at(kcon_[r], kvar_[rows_[r].e[e].var]) = rows_[r].e[e].coef;
    }
    if (!ldlt_.factorize()) throw SimFault("qp kkt factorization failed");
  }

  Eigen::VectorXd a_mul(const Eigen::VectorXd& x) const {
    Eigen::VectorXd out(nc_);
    for (int r = 0; r < nc_; ++r) {
      double s = 0.0;
      for (int e = 0; e < rows_[r].n; ++e)
        s += rows_[r].e[e].coef * x(rows_[r].e[e].var);
      out(r) = s;
    }
    return out;
  }

  Eigen::VectorXd at_mul(const Eigen::VectorXd& y) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(nv_);
    for (int r = 0; r < nc_; ++r)
      for (int e = 0; e < rows_[r].n; ++e)
        out(rows_[r].e[e].var) += rows_[r].e[e].coef * y(r);
    return out;
  }

  Eigen::VectorXd p_mul(const Eigen::VectorXd& x) const {
    Eigen::VectorXd out(nv_);
    for (int v = 0; v < nv_; ++v) out(v) = pdiag_[v] * x(v);
    return out;
  }

  void clamp_rows(Eigen::VectorXd& z) const {
    for (int r = 0; r < nc_; ++r) z(r) = std::clamp(z(r), lo_(r), hi_(r));
  }

  AxisSolution extract(const AxisProblem& pr, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& y, int iter) const {
    const int N = pr.N;
    const double h = pr.h;
    AxisSolution out;
    out.pos.resize(N + 1);
    out.vel.resize(N + 1);
    out.acc.resize(N + 1);
    out.jerk.resize(N);
    for (int t = 0; t <= N; ++t) {
      const int base = var_state_base(t, N);
      out.pos(t) = x(base + 0);
      out.vel(t) = x(base + 1) / h;
      out.acc(t) = x(base + 2) / (h * h);
    }
    for (int t = 0; t < N; ++t) out.jerk(t) = x(4 * t + 3) / (h * h * h);

    out.duals.dyn.setZero(N, 3);
    out.duals.abox.setZero(N + 1);
    out.duals.jbox.setZero(N);
    const double k = pr.w / (h * h * h * h * h * h);
    for (int r = 0; r < nc_; ++r) {
      const double orig = y(r) * rows_[r].scale * k;
      switch (rows_[r].kind) {
        case Row::init: out.duals.init(rows_[r].comp) = orig; break;
        case Row::term: out.duals.term(rows_[r].comp) = orig; break;
        case Row::dyn: out.duals.dyn(rows_[r].t, rows_[r].comp) = orig; break;
        case Row::abox: out.duals.abox(rows_[r].t) = orig; break;
        case Row::jbox: out.duals.jbox(rows_[r].t) = orig; break;
      }
    }
    out.iterations = iter;
    return out;
  }

  /// Active-set polish: re-solve the KKT system with active boxes promoted
  /// to equalities and inactive rows released, then refine. Returns false if
  /// the reduced system could not be factored.
  bool polish(const AxisProblem& pr, const QpSettings& st,
              const Eigen::VectorXd& x_in, const Eigen::VectorXd& y_in,
              AxisSolution& out) {
    constexpr double kReg = 1e-9;
    constexpr double kRelease = 1e9;
    std::vector<int> side(nc_, 0);  // -1 lower, +1 upper, 0 inactive
    for (int r = 0; r < nc_; ++r) {
      if (rows_[r].eq) continue;
      if (y_in(r) > 1e-10) side[r] = 1;
      else if (y_in(r) < -1e-10) side[r] = -1;
    }

    polish_ldlt_.resize(nk_, kBw);
    for (int v = 0; v < nv_; ++v)
      polish_ldlt_.at(kvar_[v], kvar_[v]) = pdiag_[v] + kReg;
    for (int r = 0; r < nc_; ++r) {
      const bool active = rows_[r].eq || side[r] != 0;
      polish_ldlt_.at(kcon_[r], kcon_[r]) = active ? -kReg : -kRelease;
      for (int e = 0; e < rows_[r].n; ++e)
        polish_ldlt_.at(kcon_[r], kvar_[rows_[r].e[e].var]) = rows_[r].e[e].coef;
    }
    if (!polish_ldlt_.factorize()) return false;

    auto rhs_exact = [&](Eigen::VectorXd& rhs) {
      rhs.setZero();
      for (int r = 0; r < nc_; ++r) {
        if (rows_[r].eq) rhs(kcon_[r]) = lo_(r);
        else if (side[r] > 0) rhs(kcon_[r]) = hi_(r);
        else if (side[r] < 0) rhs(kcon_[r]) = lo_(r);
      }
    };
    // Exact (unregularized) KKT product for iterative refinement; released
    // rows are pinned at nu = 0.
    auto exact_mul = [&](const Eigen::VectorXd& sol, Eigen::VectorXd& outv) {
      outv.setZero();
      for (int v = 0; v < nv_; ++v) outv(kvar_[v]) = pdiag_[v] * sol(kvar_[v]);
      for (int r = 0; r < nc_; ++r) {
        const bool active = rows_[r].eq || side[r] != 0;
        if (!active) {
          outv(kcon_[r]) = sol(kcon_[r]);
          continue;
        }
        double s = 0.0;
        for (int e = 0; e < rows_[r].n; ++e) {
          s += rows_[r].e[e].coef * sol(kvar_[rows_[r].e[e].var]);
          outv(kvar_[rows_[r].e[e].var]) += rows_[r].e[e].coef * sol(kcon_[r]);
        }
        outv(kcon_[r]) = s;
      }
    };

    Eigen::VectorXd rhs(nk_), sol(nk_), prod(nk_), corr(nk_);
    rhs_exact(rhs);
    sol = rhs;
    polish_ldlt_.solve(sol);
    for (int pass = 0; pass < 3; ++pass) {
      exact_mul(sol, prod);
      corr = rhs - prod;
      if (corr.lpNorm<Eigen::Infinity>() < 1e-15) break;
      polish_ldlt_.solve(corr);
      sol += corr;
    }

    Eigen::VectorXd xp(nv_), yp(nc_);
    for (int v = 0; v < nv_; ++v) xp(v) = sol(kvar_[v]);
    for (int r = 0; r < nc_; ++r) {
      const bool active = rows_[r].eq || side[r] != 0;
      yp(r) = active ? sol(kcon_[r]) : 0.0;
    }
    if (!xp.allFinite() || !yp.allFinite()) return false;
    out = extract(pr, xp, yp, 0);
    return true;
  }

  static constexpr int kBw = 15;

  int N_ = 0, nv_ = 0, nc_ = 0, nk_ = 0;
  double h_ = 0.0;
  double rho_base_ = 0.1;
  std::vector<Row> rows_;
  std::vector<int> kvar_, kcon_;
  std::vector<double> pdiag_;
  Eigen::VectorXd lo_, hi_, rho_;
  BandLdlt ldlt_, polish_ldlt_;
};

}  // namespace detail

/// QP solver with reusable workspace; one instance per thread of use.
class QpSolver {
 public:
  QpSettings& settings() { return settings_; }

  /// Remember a solution to warm-start the next solve of identical shape.
  void warm_start(const QpSolution& sol) { warm_ = sol; have_warm_ = true; }
  void clear_warm_start() { have_warm_ = false; }

  QpSolution solve(const QpProblem& problem, double tol) {
    problem.validate();
    const int N = problem.horizon;
    QpSolution out;
    out.states.setZero(N + 1, 9);
    out.jerks.setZero(N, 3);
    out.status = QpStatus::optimal;
    out.iterations = 0;
    out.primal_residual = 0.0;
    out.dual_residual = 0.0;

    const bool use_warm = have_warm_ && warm_.states.rows() == N + 1;

    for (int k = 0; k < 3; ++k) {
      detail::AxisProblem ap;
      ap.N = N;
      ap.h = problem.dt;
      ap.p0 = problem.x0(k);
      ap.v0 = problem.x0(3 + k);
      ap.a0 = problem.x0(6 + k);
      ap.pf = problem.xf(k);
      ap.vf = problem.xf(3 + k);
      ap.af = problem.xf(6 + k);
      ap.a_max = problem.a_max;
      ap.j_max = problem.j_max;
      ap.w = problem.jerk_weight;

      Eigen::VectorXd wx, wy;
      if (use_warm) {
        Eigen::VectorXd pos(N + 1), vel(N + 1), acc(N + 1), jerk(N);
        for (int t = 0; t <= N; ++t) {
          pos(t) = warm_.states(t, k);
          vel(t) = warm_.states(t, 3 + k);
          acc(t) = warm_.states(t, 6 + k);
        }
        for (int t = 0; t < N; ++t) jerk(t) = warm_.jerks(t, k);
        axis_.pack_warm(ap, pos, vel, acc, jerk, warm_.duals[k], wx, wy);
      }

      detail::AxisSolution as =
          axis_.solve(ap, tol, settings_, use_warm ? &wx : nullptr,
                      use_warm ? &wy : nullptr);

      for (int t = 0; t <= N; ++t) {
        out.states(t, k) = as.pos(t);
        out.states(t, 3 + k) = as.vel(t);
        out.states(t, 6 + k) = as.acc(t);
      }
      for (int t = 0; t < N; ++t) out.jerks(t, k) = as.jerk(t);
      out.duals[k] = as.duals;
      out.iterations = std::max(out.iterations, as.iterations);
      out.primal_residual = std::max(out.primal_residual, as.primal_res);
      out.dual_residual = std::max(out.dual_residual, as.dual_res);

      if (as.status == QpStatus::infeasible) out.status = QpStatus::infeasible;
      else if (as.status == QpStatus::max_iterations &&
               out.status == QpStatus::optimal)
        out.status = QpStatus::max_iterations;
    }
    have_warm_ = false;
    return out;
  }

 private:
  QpSettings settings_;
  detail::AxisQp axis_;
  QpSolution warm_;
  bool have_warm_ = false;
};

inline QpSolution solve_qp(const QpProblem& problem, double tol = 1e-6) {
  QpSolver solver;
  return solver.solve(problem, tol);
}

/// KKT residuals of a candidate solution in original units.
inline KktResiduals kkt_residuals(const QpProblem& problem,
                                  const QpSolution& solution) {
  const int N = problem.horizon;
  KktResiduals worst;
  for (int k = 0; k < 3; ++k) {
    detail::AxisProblem ap;
    ap.N = N;
    ap.h = problem.dt;
    ap.p0 = problem.x0(k);
    ap.v0 = problem.x0(3 + k);
    ap.a0 = problem.x0(6 + k);
    ap.pf = problem.xf(k);
    ap.vf = problem.xf(3 + k);
    ap.af = problem.xf(6 + k);
    ap.a_max = problem.a_max;
    ap.j_max = problem.j_max;
    ap.w = problem.jerk_weight;

    Eigen::VectorXd pos(N + 1), vel(N + 1), acc(N + 1), jerk(N);
    for (int t = 0; t <= N; ++t) {
      pos(t) = solution.states(t, k);
      vel(t) = solution.states(t, 3 + k);
      acc(t) = solution.states(t, 6 + k);
    }
    for (int t = 0; t < N; ++t) jerk(t) = solution.jerks(t, k);

    const KktResiduals r =
        detail::axis_residuals(ap, pos, vel, acc, jerk, solution.duals[k]);
    worst.primal = std::max(worst.primal, r.primal);
    worst.dual = std::max(worst.dual, r.dual);
    worst.complementarity = std::max(worst.complementarity, r.complementarity);
  }
  return worst;
}

}  // namespace perch::qp
