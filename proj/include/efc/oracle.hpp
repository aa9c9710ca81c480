#pragma once

#include <Eigen/Dense>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "efc/control.hpp"
#include "efc/grid.hpp"
#include "efc/plant.hpp"

namespace efc {

/// Data of the steady-state optimal EFC problem with line-flow constraints:
/// minimize the quadratic regulation cost subject to the post-fault network
/// balances (both actual and virtual) and the flow bands of the declared
/// lines.
struct TsoefcProblem {
  const GridModel* grid = nullptr;
  Eigen::VectorXd p_in;  ///< post-fault injections, full bus vector
  bool constraints_enabled = true;

  std::vector<int> upper_lines() const {
    return constraints_enabled ? upper_bounded_lines(*grid) : std::vector<int>{};
  }
  std::vector<int> lower_lines() const {
    return constraints_enabled ? lower_bounded_lines(*grid) : std::vector<int>{};
  }
};

enum class BoundSide { Upper, Lower };

struct ActiveBound {
  int line;  ///< line index
  BoundSide side;
};

/// Primal-dual optimum with the active-set record. gamma vectors follow the
/// problem's bounded-line lists; tau is identified with the (zero) steady
/// frequency.
struct TsoefcSolution {
  Eigen::VectorXd p_gen, p_hvdc, freq_gen, flow, phi;
  Eigen::VectorXd tau, lambda;
  Eigen::VectorXd gamma_up, gamma_lo;
  std::vector<ActiveBound> active_set;
  double objective = 0.0;
};

/// A full primal-dual point, e.g. a simulation steady state with tau taken
/// as the measured bus frequencies.
struct PrimalDualPoint {
  Eigen::VectorXd p_gen, p_hvdc, freq_gen, flow, phi;
  Eigen::VectorXd tau, lambda, gamma_up, gamma_lo;
};

inline PrimalDualPoint to_point(const TsoefcSolution& s) {
  return {s.p_gen, s.p_hvdc, s.freq_gen, s.flow, s.phi, s.tau, s.lambda, s.gamma_up, s.gamma_lo};
}

struct KktResiduals {
  double stationarity = 0.0;
  double complementarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;

  double max_abs() const {
    return std::max(std::max(stationarity, complementarity), std::max(primal, dual));
  }
};

namespace detail {

/// Column layout of the reduced QP: [p^G | p^D | phi at non-reference buses].
struct QpLayout {
  int n, n_gen, n_hvdc, ref;
  std::vector<int> phi_col;  ///< per bus; -1 at the reference bus

  explicit QpLayout(const GridModel& grid) {
    if (grid.generator_count() == 0)
      throw SingularSystemError("TS-OEFC needs a generator bus as angle reference");
    n = grid.size();
    n_gen = grid.generator_count();
    n_hvdc = grid.hvdc_count();
    ref = grid.generator_buses()[0];
    phi_col.assign(n, -1);
    int col = n_gen + n_hvdc;
    for (int i = 0; i < n; ++i)
      if (i != ref) phi_col[i] = col++;
  }
  int cols() const { return n_gen + n_hvdc + n - 1; }
};

}  // namespace detail

/// Reference solution of the TS-OEFC problem by active-set enumeration.
/// The frequency penalty vanishes at the optimum, so omega = 0 is imposed
/// and the problem reduces to an equality-constrained QP in
/// (p^G, p^D, phi) per candidate set of binding line bounds. Each candidate
/// KKT system is solved densely; the feasible candidate with the lowest
/// objective wins, ties broken by enumeration order (per-line codes
/// none < upper < lower, first line most significant).
inline TsoefcSolution solve_tsoefc(const TsoefcProblem& problem) {
  const GridModel& grid = *problem.grid;
  const detail::QpLayout lay(grid);
  const double tol = 1e-8;

  const Eigen::VectorXd alpha = grid.gen_alpha();
  const Eigen::VectorXd beta = grid.hvdc_beta();
  const Eigen::VectorXd sched_gen = grid.gen_schedule();
  const Eigen::VectorXd sched_hvdc = grid.hvdc_schedule();
  const Eigen::MatrixXd& L = grid.laplacian();

  const int m = lay.cols();

  Eigen::VectorXd hdiag = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(m);
  hdiag.head(lay.n_gen) = alpha;
  hdiag.segment(lay.n_gen, lay.n_hvdc) = beta;
  c.head(lay.n_gen) = alpha.cwiseProduct(sched_gen);
  c.segment(lay.n_gen, lay.n_hvdc) = beta.cwiseProduct(sched_hvdc);

  // Equality Jacobian of P^in + d p^G + e p^D - L phi = 0.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(lay.n, m);
  for (int k = 0; k < lay.n_gen; ++k) J(grid.generator_buses()[k], k) = 1.0;
  for (int k = 0; k < lay.n_hvdc; ++k) J(grid.hvdc_buses()[k], lay.n_gen + k) = 1.0;
  for (int i = 0; i < lay.n; ++i)
    for (int j = 0; j < lay.n; ++j)
      if (lay.phi_col[j] >= 0) J(i, lay.phi_col[j]) = -L(i, j);

  // One entry per line carrying any bound; per-line candidate codes are
  // 0 = inactive, 1 = upper binding, 2 = lower binding.
  struct BoundedLine {
    int line;
    bool has_upper, has_lower;
  };
  std::vector<BoundedLine> bounded;
  if (problem.constraints_enabled) {
    for (int e = 0; e < grid.line_count(); ++e) {
      const Line& ln = grid.line(e);
      if (ln.bounded()) bounded.push_back({e, ln.limit_upper.has_value(), ln.limit_lower.has_value()});
    }
  }
  if (bounded.size() > 12)
    throw Error("active-set enumeration supports at most 12 bounded lines, got " +
                std::to_string(bounded.size()));

  const std::vector<int> up_list = problem.upper_lines();
  const std::vector<int> lo_list = problem.lower_lines();

  bool found = false;
  double best_obj = 0.0;
  Eigen::VectorXd best_v, best_lambda;
  std::vector<std::pair<int, BoundSide>> best_active;
  Eigen::VectorXd best_gact;

  std::vector<int> code(bounded.size(), 0);
  bool done = false;
  while (!done) {
    // Assemble the candidate's active rows.
    std::vector<std::pair<int, BoundSide>> active;
    for (size_t k = 0; k < bounded.size(); ++k) {
      if (code[k] == 1) active.push_back({bounded[k].line, BoundSide::Upper});
      if (code[k] == 2) active.push_back({bounded[k].line, BoundSide::Lower});
    }
    const int na = static_cast<int>(active.size());
    const int dim = m + lay.n + na;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd rhs(dim);
    K.topLeftCorner(m, m).diagonal() = hdiag;
    K.block(m, 0, lay.n, m) = J;
    K.block(0, m, m, lay.n) = J.transpose();
    rhs.head(m) = c;
    rhs.segment(m, lay.n) = -problem.p_in;
    for (int a = 0; a < na; ++a) {
      const Line& ln = grid.line(active[a].first);
      const int i = grid.index_of(ln.from);
      const int j = grid.index_of(ln.to);
      const double sgn = active[a].second == BoundSide::Upper ? 1.0 : -1.0;
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(m);
      if (lay.phi_col[i] >= 0) row(lay.phi_col[i]) = sgn * ln.susceptance;
      if (lay.phi_col[j] >= 0) row(lay.phi_col[j]) = -sgn * ln.susceptance;
      K.block(m + lay.n + a, 0, 1, m) = row;
      K.block(0, m + lay.n + a, m, 1) = row.transpose();
      rhs(m + lay.n + a) =
          active[a].second == BoundSide::Upper ? *ln.limit_upper : -*ln.limit_lower;
    }

    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (lu.isInvertible()) {
      const Eigen::VectorXd sol = lu.solve(rhs);
      const Eigen::VectorXd v = sol.head(m);
      const Eigen::VectorXd lam = sol.segment(m, lay.n);
      const Eigen::VectorXd gact = sol.tail(na);

      bool ok = (gact.size() == 0) || (gact.minCoeff() >= -tol);
      if (ok) {
        Eigen::VectorXd phi = Eigen::VectorXd::Zero(lay.n);
        for (int i = 0; i < lay.n; ++i)
          if (lay.phi_col[i] >= 0) phi(i) = v(lay.phi_col[i]);
        const Eigen::VectorXd vf = dc_power_flow(grid, phi);
        for (size_t k = 0; k < bounded.size() && ok; ++k) {
          const Line& ln = grid.line(bounded[k].line);
          if (bounded[k].has_upper && code[k] != 1 && vf(bounded[k].line) > *ln.limit_upper + tol)
            ok = false;
          if (bounded[k].has_lower && code[k] != 2 && vf(bounded[k].line) < *ln.limit_lower - tol)
            ok = false;
        }
        if (ok) {
          const Eigen::VectorXd ug = v.head(lay.n_gen) - sched_gen;
          const Eigen::VectorXd ud = v.segment(lay.n_gen, lay.n_hvdc) - sched_hvdc;
          const double obj = 0.5 * ug.cwiseProduct(ug).dot(alpha) +
                             0.5 * ud.cwiseProduct(ud).dot(beta);
          if (!found || obj < best_obj - 1e-12) {
            found = true;
            best_obj = obj;
            best_v = v;
            best_lambda = lam;
            best_active = active;
            best_gact = gact;
          }
        }
      }
    }

    // Odometer over per-line codes, first line most significant.
    done = true;
    for (int k = static_cast<int>(bounded.size()) - 1; k >= 0; --k) {
      do {
        ++code[k];
      } while (code[k] == 1 && !bounded[k].has_upper);
      if (code[k] == 2 && !bounded[k].has_lower) code[k] = 3;
      if (code[k] <= 2) {
        done = false;
        break;
      }
      code[k] = 0;
    }
  }

  if (!found)
    throw InfeasibleProblemError("TS-OEFC problem has no feasible active set (Assumption 2 violated)");

  TsoefcSolution s;
  s.p_gen = best_v.head(lay.n_gen);
  s.p_hvdc = best_v.segment(lay.n_gen, lay.n_hvdc);
  s.freq_gen = Eigen::VectorXd::Zero(lay.n_gen);
  s.phi = Eigen::VectorXd::Zero(lay.n);
  for (int i = 0; i < lay.n; ++i)
    if (lay.phi_col[i] >= 0) s.phi(i) = best_v(lay.phi_col[i]);
  s.flow = dc_power_flow(grid, s.phi);
  s.tau = Eigen::VectorXd::Zero(lay.n);
  s.lambda = best_lambda;
  s.gamma_up = Eigen::VectorXd::Zero(up_list.size());
  s.gamma_lo = Eigen::VectorXd::Zero(lo_list.size());
  for (size_t a = 0; a < best_active.size(); ++a) {
    const auto& [line, side] = best_active[a];
    if (side == BoundSide::Upper) {
      auto it = std::find(up_list.begin(), up_list.end(), line);
      s.gamma_up(it - up_list.begin()) = best_gact(a);
    } else {
      auto it = std::find(lo_list.begin(), lo_list.end(), line);
      s.gamma_lo(it - lo_list.begin()) = best_gact(a);
    }
    s.active_set.push_back({line, side});
  }
  s.objective = best_obj;
  return s;
}

/// Max-norm residuals of the KKT conditions at an arbitrary primal-dual
/// point. Complementarity is measured as |gamma * slack| with gamma clipped
/// at zero; clipping violations show up in the dual residual instead.
inline KktResiduals kkt_residuals(const TsoefcProblem& problem, const PrimalDualPoint& pt) {
  const GridModel& grid = *problem.grid;
  const Eigen::VectorXd alpha = grid.gen_alpha();
  const Eigen::VectorXd beta = grid.hvdc_beta();
  KktResiduals r;

  const auto& gens = grid.generator_buses();
  const auto& hv = grid.hvdc_buses();

  // Stationarity in p^G, p^D, omega, P, phi.
  for (size_t k = 0; k < gens.size(); ++k) {
    const int i = gens[k];
    r.stationarity = std::max(
        r.stationarity,
        std::abs(alpha(k) * (pt.p_gen(k) - grid.bus(i).p_sched) + pt.tau(i) + pt.lambda(i)));
    r.stationarity = std::max(
        r.stationarity, std::abs(grid.bus(i).damping * (pt.freq_gen(k) - pt.tau(i))));
  }
  for (size_t k = 0; k < hv.size(); ++k) {
    const int i = hv[k];
    r.stationarity = std::max(
        r.stationarity,
        std::abs(beta(k) * (pt.p_hvdc(k) - grid.bus(i).p_sched) + pt.tau(i) + pt.lambda(i)));
  }
  for (int e = 0; e < grid.line_count(); ++e)
    r.stationarity = std::max(r.stationarity, std::abs(pt.tau(grid.index_of(grid.line(e).to)) -
                                                       pt.tau(grid.index_of(grid.line(e).from))));
  const std::vector<int> up_list = problem.upper_lines();
  const std::vector<int> lo_list = problem.lower_lines();
  Eigen::VectorXd per_line = Eigen::VectorXd::Zero(grid.line_count());
  for (size_t k = 0; k < up_list.size(); ++k) per_line(up_list[k]) += pt.gamma_up(k);
  for (size_t k = 0; k < lo_list.size(); ++k) per_line(lo_list[k]) -= pt.gamma_lo(k);
  const Eigen::VectorXd sphi = -grid.laplacian() * pt.lambda +
                               grid.incidence() * grid.susceptances().cwiseProduct(per_line);
  r.stationarity = std::max(r.stationarity, sphi.cwiseAbs().maxCoeff());

  // Primal feasibility: both balance families plus the flow bands.
  const Eigen::VectorXd nodal_flow = grid.incidence() * pt.flow;
  const Eigen::VectorXd nodal_virtual = grid.laplacian() * pt.phi;
  for (int i = 0; i < grid.size(); ++i) {
    double inj = problem.p_in(i);
    double omega_term = 0.0;
    if (grid.bus(i).is_generator()) {
      for (size_t k = 0; k < gens.size(); ++k)
        if (gens[k] == i) {
          inj += pt.p_gen(k);
          omega_term = grid.bus(i).damping * pt.freq_gen(k);
        }
    } else if (grid.bus(i).is_hvdc()) {
      for (size_t k = 0; k < hv.size(); ++k)
        if (hv[k] == i) inj += pt.p_hvdc(k);
    }
    r.primal = std::max(r.primal, std::abs(inj - omega_term - nodal_flow(i)));
    r.primal = std::max(r.primal, std::abs(inj - nodal_virtual(i)));
  }
  const Eigen::VectorXd vf =
      grid.susceptances().cwiseProduct(grid.incidence().transpose() * pt.phi);
  for (size_t k = 0; k < up_list.size(); ++k) {
    const double slack = vf(up_list[k]) - *grid.line(up_list[k]).limit_upper;
    r.primal = std::max(r.primal, std::max(0.0, slack));
    r.complementarity = std::max(r.complementarity, std::abs(std::max(pt.gamma_up(k), 0.0) * slack));
    r.dual = std::max(r.dual, std::max(0.0, -pt.gamma_up(k)));
  }
  for (size_t k = 0; k < lo_list.size(); ++k) {
    const double slack = *grid.line(lo_list[k]).limit_lower - vf(lo_list[k]);
    r.primal = std::max(r.primal, std::max(0.0, slack));
    r.complementarity = std::max(r.complementarity, std::abs(std::max(pt.gamma_lo(k), 0.0) * slack));
    r.dual = std::max(r.dual, std::max(0.0, -pt.gamma_lo(k)));
  }
  return r;
}

/// Stepsizes of the partial primal-dual algorithm. The identified values
/// make the algorithm coincide with the closed-loop physics.
struct PdStepsizes {
  Eigen::VectorXd k_gen;   ///< 1 / (alpha T^G)
  Eigen::VectorXd k_hvdc;  ///< 1 / (beta T^D)
  Eigen::VectorXd k_flow;  ///< B per line
  Eigen::VectorXd k_tau;   ///< 1 / M

  static PdStepsizes identified(const GridModel& grid) {
    PdStepsizes s;
    s.k_gen = grid.gen_alpha().cwiseProduct(grid.gen_t_reg()).cwiseInverse();
    s.k_hvdc = grid.hvdc_beta().cwiseProduct(grid.hvdc_t_reg()).cwiseInverse();
    s.k_flow = grid.susceptances();
    s.k_tau = grid.gen_inertia().cwiseInverse();
    return s;
  }
};

/// One iterate of the partial primal-dual algorithm.
struct PdIterate {
  Eigen::VectorXd p_gen, p_hvdc, flow, phi;
  Eigen::VectorXd tau_gen, lambda, gamma_up, gamma_lo;
};

/// Iterate sitting exactly at a primal-dual optimum (stationary point).
inline PdIterate pd_from_solution(const TsoefcProblem& problem, const TsoefcSolution& s) {
  const GridModel& grid = *problem.grid;
  PdIterate it;
  it.p_gen = s.p_gen;
  it.p_hvdc = s.p_hvdc;
  it.flow = s.flow;
  it.phi = s.phi;
  it.tau_gen = Eigen::VectorXd::Zero(grid.generator_count());
  it.lambda = s.lambda;
  it.gamma_up = s.gamma_up;
  it.gamma_lo = s.gamma_lo;
  return it;
}

/// Discrete trajectory of the partial primal-dual algorithm, using the same
/// operator splitting as the closed-loop runner: the dual/virtual block
/// advances by one Jacobi Euler step, the eliminated multipliers are solved
/// consistently with the order law (HvdcFrequencySolver) to form fresh
/// orders, and the physical block advances by RK4 with those orders frozen.
/// Requires the identified flow stepsize (k_flow = B).
inline std::vector<PdIterate> primal_dual_trajectory(const TsoefcProblem& problem,
                                                     const ControlGains& gains,
                                                     const PdStepsizes& step,
                                                     const PdIterate& start, int steps,
                                                     double dt) {
  const GridModel& grid = *problem.grid;
  if ((step.k_flow - grid.susceptances()).cwiseAbs().maxCoeff() != 0.0)
    throw Error("primal_dual_trajectory requires the identified flow stepsize K^P = B");
  if (grid.generator_count() == 0)
    throw SingularSystemError("partial primal-dual algorithm needs a generator bus");

  MinorSolver elim(grid, grid.generator_buses());
  HvdcFrequencySolver consistency(grid);
  const auto& gens = grid.generator_buses();
  const auto& hv = grid.hvdc_buses();
  const auto& alg = grid.algebraic_buses();
  std::vector<int> hvdc_in_alg;
  for (int h : hv)
    for (size_t k = 0; k < alg.size(); ++k)
      if (alg[k] == h) hvdc_in_alg.push_back(static_cast<int>(k));

  const Eigen::VectorXd sched_gen = grid.gen_schedule();
  const Eigen::VectorXd sched_hvdc = grid.hvdc_schedule();
  const Eigen::VectorXd inv_alpha = grid.gen_alpha().cwiseInverse();
  const Eigen::VectorXd inv_beta = grid.hvdc_beta().cwiseInverse();
  const Eigen::VectorXd t_gen = step.k_gen.cwiseProduct(grid.gen_alpha()).cwiseInverse();
  const Eigen::VectorXd t_hvdc = step.k_hvdc.cwiseProduct(grid.hvdc_beta()).cwiseInverse();
  const Eigen::VectorXd damping = grid.gen_damping();
  const std::vector<int> up_list = problem.upper_lines();
  const std::vector<int> lo_list = problem.lower_lines();

  auto tau_full = [&](const Eigen::VectorXd& tau_gen, const Eigen::VectorXd& p_hvdc_dot) {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(alg.size());
    for (size_t k = 0; k < hvdc_in_alg.size(); ++k) rhs(hvdc_in_alg[k]) = p_hvdc_dot(k);
    return elim.assemble(elim.solve(rhs, tau_gen), tau_gen);
  };

  std::vector<PdIterate> out;
  out.reserve(steps + 1);
  out.push_back(start);
  PdIterate it = start;

  for (int n = 0; n < steps; ++n) {
    // Dual/virtual block: lambda and gamma advance from the previous
    // iterate, then phi from the fresh values (same stagger as the
    // controller).
    Eigen::VectorXd balance = problem.p_in - grid.laplacian() * it.phi;
    for (size_t k = 0; k < gens.size(); ++k) balance(gens[k]) += it.p_gen(k);
    for (size_t k = 0; k < hv.size(); ++k) balance(hv[k]) += it.p_hvdc(k);
    const Eigen::VectorXd vf =
        grid.susceptances().cwiseProduct(grid.incidence().transpose() * it.phi);

    PdIterate next = it;
    next.lambda = it.lambda + dt * gains.k_lambda.cwiseProduct(balance);
    std::uint8_t branch = 0;
    for (size_t k = 0; k < up_list.size(); ++k)
      next.gamma_up(k) = projected_gamma_update(
          it.gamma_up(k), vf(up_list[k]) - *grid.line(up_list[k]).limit_upper,
          gains.k_gamma_up(k), dt, branch);
    for (size_t k = 0; k < lo_list.size(); ++k)
      next.gamma_lo(k) = projected_gamma_update(
          it.gamma_lo(k), *grid.line(lo_list[k]).limit_lower - vf(lo_list[k]),
          gains.k_gamma_lo(k), dt, branch);

    Eigen::VectorXd per_line = Eigen::VectorXd::Zero(grid.line_count());
    for (size_t k = 0; k < up_list.size(); ++k) per_line(up_list[k]) += next.gamma_up(k);
    for (size_t k = 0; k < lo_list.size(); ++k) per_line(lo_list[k]) -= next.gamma_lo(k);
    const Eigen::VectorXd nodal_gamma =
        grid.incidence() * grid.susceptances().cwiseProduct(per_line);
    const Eigen::VectorXd nodal_lambda = grid.laplacian() * next.lambda;
    next.phi = it.phi + dt * gains.k_phi.cwiseProduct(nodal_lambda - nodal_gamma);

    // Eliminated multipliers consistent with the order law, then fresh orders.
    const Eigen::VectorXd tau = consistency.consistent(it.tau_gen, it.p_hvdc, next.lambda);
    Eigen::VectorXd u_gen(gens.size()), u_hvdc(hv.size());
    for (size_t k = 0; k < gens.size(); ++k)
      u_gen(k) = -inv_alpha(k) * (tau(gens[k]) + next.lambda(gens[k]));
    for (size_t k = 0; k < hv.size(); ++k)
      u_hvdc(k) = -inv_beta(k) * (tau(hv[k]) + next.lambda(hv[k]));

    // Physical block, RK4 with frozen orders.
    struct Phys {
      Eigen::VectorXd p_gen, p_hvdc, flow, tau_gen;
    };
    auto deriv = [&](const Phys& s) {
      Phys d;
      d.p_gen = (-s.p_gen + sched_gen + u_gen).cwiseQuotient(t_gen);
      d.p_hvdc = (-s.p_hvdc + sched_hvdc + u_hvdc).cwiseQuotient(t_hvdc);
      const Eigen::VectorXd nodal = grid.incidence() * s.flow;
      d.tau_gen.resize(gens.size());
      for (size_t k = 0; k < gens.size(); ++k)
        d.tau_gen(k) = step.k_tau(k) * (problem.p_in(gens[k]) + s.p_gen(k) - nodal(gens[k]) -
                                        damping(k) * s.tau_gen(k));
      d.flow = step.k_flow.cwiseProduct(grid.incidence().transpose() *
                                        tau_full(s.tau_gen, d.p_hvdc));
      return d;
    };
    auto advance = [](const Phys& s, const Phys& d, double h) {
      return Phys{s.p_gen + h * d.p_gen, s.p_hvdc + h * d.p_hvdc, s.flow + h * d.flow,
                  s.tau_gen + h * d.tau_gen};
    };
    Phys s0{it.p_gen, it.p_hvdc, it.flow, it.tau_gen};
    Phys k1 = deriv(s0);
    Phys k2 = deriv(advance(s0, k1, dt / 2));
    Phys k3 = deriv(advance(s0, k2, dt / 2));
    Phys k4 = deriv(advance(s0, k3, dt));
    next.p_gen = s0.p_gen + (dt / 6.0) * (k1.p_gen + 2 * k2.p_gen + 2 * k3.p_gen + k4.p_gen);
    next.p_hvdc = s0.p_hvdc + (dt / 6.0) * (k1.p_hvdc + 2 * k2.p_hvdc + 2 * k3.p_hvdc + k4.p_hvdc);
    next.flow = s0.flow + (dt / 6.0) * (k1.flow + 2 * k2.flow + 2 * k3.flow + k4.flow);
    next.tau_gen =
        s0.tau_gen + (dt / 6.0) * (k1.tau_gen + 2 * k2.tau_gen + 2 * k3.tau_gen + k4.tau_gen);

    if (!(next.p_gen.allFinite() && next.p_hvdc.allFinite() && next.flow.allFinite() &&
          next.tau_gen.allFinite() && next.lambda.allFinite() && next.phi.allFinite()))
      throw IntegrationDivergedError("partial primal-dual iterate became non-finite");

    it = next;
    out.push_back(it);
  }
  return out;
}

/// Diagonal weights of the quadratic Lyapunov function, the inverses of the
/// primal-dual stepsizes so that V decreases along the algorithm flow:
/// x1 = (p^G, p^D, P, phi), y1 = (tau^G, lambda), z = (gamma+, gamma-).
struct LyapunovGains {
  Eigen::VectorXd x1, y1, z;

  static LyapunovGains standard(const GridModel& grid, const ControlGains& gains) {
    LyapunovGains g;
    const int n = grid.size();
    const int ne = grid.line_count();
    g.x1.resize(grid.generator_count() + grid.hvdc_count() + ne + n);
    g.x1 << grid.gen_alpha().cwiseProduct(grid.gen_t_reg()),
        grid.hvdc_beta().cwiseProduct(grid.hvdc_t_reg()), grid.susceptances().cwiseInverse(),
        gains.k_phi.cwiseInverse();
    g.y1.resize(grid.generator_count() + n);
    g.y1 << grid.gen_inertia(), gains.k_lambda.cwiseInverse();
    g.z.resize(gains.k_gamma_up.size() + gains.k_gamma_lo.size());
    if (g.z.size() > 0)
      g.z << gains.k_gamma_up.cwiseInverse(), gains.k_gamma_lo.cwiseInverse();
    return g;
  }
};

/// V = 1/2 ||x1 - x1*||^2_{K} + 1/2 ||y1 - y1*||^2 + 1/2 ||z - z*||^2 with the
/// given diagonal weights; zero exactly at the equilibrium.
inline double lyapunov_value(const PrimalDualPoint& pt, const TsoefcSolution& eq,
                             const LyapunovGains& g) {
  Eigen::VectorXd dx(pt.p_gen.size() + pt.p_hvdc.size() + pt.flow.size() + pt.phi.size());
  dx << pt.p_gen - eq.p_gen, pt.p_hvdc - eq.p_hvdc, pt.flow - eq.flow, pt.phi - eq.phi;
  Eigen::VectorXd dy(pt.freq_gen.size() + pt.lambda.size());
  dy << pt.freq_gen - eq.freq_gen, pt.lambda - eq.lambda;
  double v = 0.5 * dx.cwiseProduct(dx).dot(g.x1) + 0.5 * dy.cwiseProduct(dy).dot(g.y1);
  if (g.z.size() > 0) {
    Eigen::VectorXd dz(pt.gamma_up.size() + pt.gamma_lo.size());
    dz << pt.gamma_up - eq.gamma_up, pt.gamma_lo - eq.gamma_lo;
    v += 0.5 * dz.cwiseProduct(dz).dot(g.z);
  }
  return v;
}

struct SteadyEstimate {
  bool settled = false;
  Eigen::VectorXd mean;
  double max_change = 0.0;  ///< largest per-component range inside the window
};

/// Trailing-window equilibrium estimate: settled iff every component moved
/// by less than tol across the trailing window; the estimate is the window
/// mean.
inline SteadyEstimate steady_state_extract(const std::vector<double>& times,
                                           const std::vector<Eigen::VectorXd>& series,
                                           double window, double tol) {
  SteadyEstimate est;
  if (series.empty() || times.size() != series.size()) return est;
  const double t_end = times.back();
  size_t first = series.size();
  for (size_t k = 0; k < series.size(); ++k)
    if (times[k] >= t_end - window) {
      first = k;
      break;
    }
  if (first == series.size() || first == 0) return est;  // window not shorter than the trajectory

  Eigen::VectorXd lo = series[first], hi = series[first], sum = series[first];
  for (size_t k = first + 1; k < series.size(); ++k) {
    lo = lo.cwiseMin(series[k]);
    hi = hi.cwiseMax(series[k]);
    sum += series[k];
  }
  est.mean = sum / double(series.size() - first);
  est.max_change = (hi - lo).maxCoeff();
  est.settled = est.max_change < tol;
  return est;
}

}  // namespace efc
