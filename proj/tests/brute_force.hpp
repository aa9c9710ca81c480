#pragma once

#include <cmath>
#include <limits>

#include "efc/grid.hpp"

namespace efc::testing {

/// Dense grid-search reference for the steady-state allocation problem on
/// the three-bus chain (generator - passive - HVDC). It never touches the
/// library's solvers: the power balance eliminates one variable, the chain
/// structure gives the flows in closed form, and the remaining degree of
/// freedom is scanned on a fine grid with one refinement pass.
struct BruteResult {
  bool feasible = false;
  double u_gen = 0, u_hvdc = 0;
  double p_gen = 0, p_hvdc = 0;
  double flow_12 = 0, flow_23 = 0;
  double objective = std::numeric_limits<double>::infinity();
};

inline BruteResult brute_force_tiny(const GridModel& grid, const Eigen::VectorXd& p_in,
                                    bool constraints_enabled = true) {
  const Bus& gen = grid.bus(0);
  const Bus& hvdc = grid.bus(2);
  const double total_u = -(p_in.sum() + gen.p_sched + hvdc.p_sched);
  const double feas_tol = 1e-9;

  auto evaluate = [&](double u_gen, BruteResult& best) {
    const double u_hvdc = total_u - u_gen;
    const double p_gen = gen.p_sched + u_gen;
    const double p_hvdc = hvdc.p_sched + u_hvdc;
    const double flow_12 = p_in(0) + p_gen;
    const double flow_23 = -(p_in(2) + p_hvdc);
    if (constraints_enabled) {
      const Line& l12 = grid.line(0);
      const Line& l23 = grid.line(1);
      if (l12.limit_upper && flow_12 > *l12.limit_upper + feas_tol) return;
      if (l12.limit_lower && flow_12 < *l12.limit_lower - feas_tol) return;
      if (l23.limit_upper && flow_23 > *l23.limit_upper + feas_tol) return;
      if (l23.limit_lower && flow_23 < *l23.limit_lower - feas_tol) return;
    }
    const double obj =
        0.5 * gen.alpha * u_gen * u_gen + 0.5 * hvdc.beta() * u_hvdc * u_hvdc;
    if (obj < best.objective) {
      best = {true, u_gen, u_hvdc, p_gen, p_hvdc, flow_12, flow_23, obj};
    }
  };

  BruteResult best;
  for (double u = -2.0; u <= 2.0; u += 1e-4) evaluate(u, best);
  if (!best.feasible) return best;
  const double center = best.u_gen;
  BruteResult refined;
  for (double u = center - 2e-4; u <= center + 2e-4; u += 1e-6) evaluate(u, refined);
  return refined.feasible ? refined : best;
}

}  // namespace efc::testing
