#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "efc/coordination.hpp"
#include "efc/oracle.hpp"
#include "efc/scenario.hpp"

namespace efc {

/// One decimated snapshot. Plant and controller fields hold the values at
/// time t (before that step's updates); u holds the orders computed during
/// the step starting at t.
struct TrajectorySample {
  double time = 0;
  Eigen::VectorXd angle_gen, freq_gen, p_gen, p_hvdc;
  Eigen::VectorXd freq_bus;  ///< measured with the previously applied orders
  Eigen::VectorXd flow;
  Eigen::VectorXd lambda, phi, gamma_up, gamma_lo;
  Eigen::VectorXd u_gen, u_hvdc;
  int gate = 0;  ///< 0 inactive, 1 active
  int law = 0;   ///< 0 droop, 1 fully-distributed, 2 semi-distributed
  double lyapunov = std::numeric_limits<double>::quiet_NaN();
};

struct Trajectory {
  std::vector<TrajectorySample> samples;
};

struct RunReport {
  bool settled = false;
  double settle_change = 0.0;    ///< largest per-component range in the window
  double steady_freq_hz = 0.0;
  bool efc_engaged = false;
  double activation_time = -1.0;
  ControlLaw final_law = ControlLaw::Droop;

  Eigen::VectorXd steady_p_gen, steady_p_hvdc, steady_flow, steady_freq_bus;
  Eigen::VectorXd steady_lambda, steady_phi, steady_gamma_up, steady_gamma_lo;

  bool kkt_valid = false;
  KktResiduals kkt;
  bool oracle_valid = false;
  std::optional<TsoefcSolution> oracle;
  double oracle_primal_error = std::numeric_limits<double>::quiet_NaN();

  long lyapunov_checked_pairs = 0;
  long lyapunov_violations = 0;
  double lyapunov_max = 0.0;

  long saturation_steps = 0;
  double max_order_step_jump = 0.0;
  double gamma_min = 0.0;  ///< smallest multiplier seen anywhere on the trajectory

  CommReport comm;
  double wall_seconds = 0.0;
};

struct RunResult {
  Trajectory trajectory;
  RunReport report;
};

namespace detail {

inline ControlLaw choose_law(const Scenario& sc, GateState gate, double t) {
  switch (sc.law) {
    case LawMode::DroopOnly: return ControlLaw::Droop;
    case LawMode::ForceSemi:
      return gate == GateState::Active ? ControlLaw::SemiDistributed : ControlLaw::Droop;
    case LawMode::ForceFully:
      return gate == GateState::Active ? ControlLaw::FullyDistributed : ControlLaw::Droop;
    case LawMode::Auto: return select_law(sc.center.at(t), gate);
  }
  return ControlLaw::Droop;
}

inline PrimalDualPoint point_from(const PlantState& state, const ControllerState& ctrl,
                                  const PlantView& view) {
  PrimalDualPoint pt;
  pt.p_gen = state.p_gen;
  pt.p_hvdc = state.p_hvdc;
  pt.freq_gen = state.freq_gen;
  pt.flow = view.flow;
  pt.phi = ctrl.phi;
  pt.tau = view.freq;
  pt.lambda = ctrl.lambda;
  pt.gamma_up = ctrl.gamma_up;
  pt.gamma_lo = ctrl.gamma_lo;
  return pt;
}

/// Shift the equilibrium's virtual angles so the conserved quantity
/// sum(phi_i / K_i^phi) matches the trajectory's, making V -> 0 possible.
inline void align_phi_gauge(TsoefcSolution& eq, const Eigen::VectorXd& phi_now,
                            const Eigen::VectorXd& k_phi) {
  const Eigen::VectorXd w = k_phi.cwiseInverse();
  const double shift = w.dot(phi_now - eq.phi) / w.sum();
  eq.phi.array() += shift;
  // Flows are differences of phi, unaffected by the shift.
}

}  // namespace detail

/// Runs one scenario: fixed-step loop applying disturbances, the dead-zone
/// gate, law selection with handover, the controller step, the order
/// computation and the plant step, in that order. Emits the decimated
/// trajectory and a report with every steady-state and per-step statistic.
inline RunResult run(const Scenario& sc) {
  const auto t_start = std::chrono::steady_clock::now();
  const GridModel& grid = sc.grid;
  {
    auto violations = validate_grid(grid);
    if (!violations.empty()) throw ValidationError("run: grid is invalid: " + violations.front());
  }

  PlantModel plant(grid);
  ControlModel control(grid, sc.gains(), sc.constraints_enabled);
  HvdcFrequencySolver freq_solver(grid);
  const double nominal = grid.nominal_hz();

  // Reference optimum of the post-fault problem, for the Lyapunov series
  // and the optimality comparison. Infeasibility is reported, not fatal.
  TsoefcProblem problem{&grid, sc.post_fault_injections(), sc.constraints_enabled};
  std::optional<TsoefcSolution> oracle;
  try {
    oracle = solve_tsoefc(problem);
  } catch (const InfeasibleProblemError&) {
  }
  const LyapunovGains lyap_gains = LyapunovGains::standard(grid, control.gains());
  bool lyap_aligned = false;
  TsoefcSolution lyap_eq;  // gauge-aligned copy once EFC engages

  PlantState state = plant.equilibrium(grid.base_injections());
  ControllerState ctrl = control.initial();
  ControlOrders u_prev = ControlOrders::zero(grid);

  const long steps = std::lround(sc.t_end / sc.dt);
  const double last_event = sc.last_event_time();

  RunResult out;
  RunReport& rep = out.report;
  rep.gamma_min = 0.0;

  std::vector<double> v_series(steps + 1, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> fully_flag(steps + 1, 0), transition_flag(steps + 1, 0);
  std::vector<std::uint8_t> prev_branches;
  bool have_prev_branches = false;

  SaturationLog satlog;
  auto& samples = out.trajectory.samples;
  samples.reserve(steps / sc.decimation + 2);

  for (long k = 0; k <= steps; ++k) {
    const double t = k * sc.dt;
    const Eigen::VectorXd p_in = injections_at(grid, sc.disturbances, t);
    const PlantView view = plant.view(state, u_prev, p_in, t);

    // Dead-zone gate on the worst bus frequency.
    GateState gate = ctrl.gate;
    if (sc.law == LawMode::DroopOnly) {
      gate = GateState::Inactive;
    } else if (sc.dead_zone.enabled) {
      int worst = 0;
      view.freq.cwiseAbs().maxCoeff(&worst);
      gate = dead_zone_gate(nominal * (1.0 + view.freq(worst)), sc.dead_zone, ctrl.gate);
    } else {
      gate = GateState::Active;
    }
    if (gate == GateState::Active && ctrl.gate == GateState::Inactive) {
      ctrl = control.activate(view, ctrl.active_law);
      if (rep.activation_time < 0.0) rep.activation_time = t;
      rep.efc_engaged = true;
      have_prev_branches = false;
    }
    ctrl.gate = gate;

    const ControlLaw law = detail::choose_law(sc, gate, t);
    if (law != ctrl.active_law) ctrl = handover(ctrl, ctrl.active_law, law);

    const bool efc = law != ControlLaw::Droop && gate == GateState::Active;

    // Lyapunov value of the pre-update state against the post-fault optimum.
    if (oracle && efc && t >= last_event) {
      if (!lyap_aligned) {
        lyap_eq = *oracle;
        detail::align_phi_gauge(lyap_eq, ctrl.phi, control.gains().k_phi);
        lyap_aligned = true;
      }
      v_series[k] = lyapunov_value(detail::point_from(state, ctrl, view), lyap_eq, lyap_gains);
      fully_flag[k] = law == ControlLaw::FullyDistributed;
    }

    if (ctrl.gamma_up.size() > 0)
      rep.gamma_min = std::min(rep.gamma_min, ctrl.gamma_up.minCoeff());
    if (ctrl.gamma_lo.size() > 0)
      rep.gamma_min = std::min(rep.gamma_min, ctrl.gamma_lo.minCoeff());

    const bool record = (k % sc.decimation == 0) || k == steps;
    size_t sample_index = 0;
    if (record) {
      TrajectorySample s;
      s.time = t;
      s.angle_gen = state.angle_gen;
      s.freq_gen = state.freq_gen;
      s.p_gen = state.p_gen;
      s.p_hvdc = state.p_hvdc;
      s.freq_bus = view.freq;
      s.flow = view.flow;
      s.lambda = ctrl.lambda;
      s.phi = ctrl.phi;
      s.gamma_up = ctrl.gamma_up;
      s.gamma_lo = ctrl.gamma_lo;
      s.gate = gate == GateState::Active ? 1 : 0;
      s.law = static_cast<int>(law);
      s.lyapunov = v_series[k];
      samples.push_back(std::move(s));
      sample_index = samples.size() - 1;
    }

    if (k == steps) {
      samples[sample_index].u_gen = u_prev.gen;
      samples[sample_index].u_hvdc = u_prev.hvdc;
      break;
    }

    // Controller step, then fresh orders.
    ControlOrders u;
    if (efc) {
      ControlModel::StepResult r = law == ControlLaw::FullyDistributed
                                       ? control.fully_step(ctrl, view, sc.dt)
                                       : control.semi_step(ctrl, view, sc.dt);
      if (have_prev_branches && r.branches != prev_branches) transition_flag[k] = 1;
      prev_branches = r.branches;
      have_prev_branches = true;
      ctrl = std::move(r.state);
      const Eigen::VectorXd freq_orders =
          freq_solver.consistent(state.freq_gen, state.p_hvdc, ctrl.lambda);
      u = control.control_orders(ctrl, freq_orders);
    } else {
      u = control.droop_orders(view.freq);
    }
    if (record) {
      samples[sample_index].u_gen = u.gen;
      samples[sample_index].u_hvdc = u.hvdc;
    }

    if (k > 0) {
      double jump = 0.0;
      if (u.gen.size() > 0) jump = (u.gen - u_prev.gen).cwiseAbs().maxCoeff();
      if (u.hvdc.size() > 0)
        jump = std::max(jump, (u.hvdc - u_prev.hvdc).cwiseAbs().maxCoeff());
      rep.max_order_step_jump = std::max(rep.max_order_step_jump, jump);
    }

    state = plant.step(state, u, p_in, sc.dt, &satlog);
    u_prev = u;
  }

  rep.saturation_steps = satlog.steps;
  rep.final_law = static_cast<ControlLaw>(samples.back().law);
  rep.comm = comm_line_count(grid, rep.final_law);
  rep.oracle_valid = oracle.has_value();
  if (oracle) rep.oracle = oracle;

  // Lyapunov descent bookkeeping: compare consecutive valid values whose
  // connecting step ran the fully-distributed law without a projection
  // branch change.
  for (long k = 0; k <= steps; ++k)
    if (std::isfinite(v_series[k])) rep.lyapunov_max = std::max(rep.lyapunov_max, v_series[k]);
  const double eps_num = 1e-8 * rep.lyapunov_max;
  for (long k = 0; k + 1 <= steps; ++k) {
    if (!std::isfinite(v_series[k]) || !std::isfinite(v_series[k + 1])) continue;
    if (!fully_flag[k] || !fully_flag[k + 1]) continue;
    if (transition_flag[k]) continue;
    ++rep.lyapunov_checked_pairs;
    if (v_series[k + 1] > v_series[k] + eps_num) ++rep.lyapunov_violations;
  }

  // Steady state over the trailing window of the decimated trajectory.
  {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> series;
    for (const auto& s : samples) {
      times.push_back(s.time);
      Eigen::VectorXd v(s.freq_bus.size() + s.p_gen.size() + s.p_hvdc.size() + s.flow.size() +
                        s.lambda.size() + s.phi.size() + s.gamma_up.size() + s.gamma_lo.size());
      v << s.freq_bus, s.p_gen, s.p_hvdc, s.flow, s.lambda, s.phi, s.gamma_up, s.gamma_lo;
      series.push_back(std::move(v));
    }
    SteadyEstimate est = steady_state_extract(times, series, sc.settle_window, sc.settle_tol);
    rep.settled = est.settled;
    rep.settle_change = est.max_change;
    if (est.mean.size() > 0) {
      const int n = grid.size();
      const int ng = grid.generator_count();
      const int nd = grid.hvdc_count();
      const int ne = grid.line_count();
      int off = 0;
      rep.steady_freq_bus = est.mean.segment(off, n); off += n;
      rep.steady_p_gen = est.mean.segment(off, ng); off += ng;
      rep.steady_p_hvdc = est.mean.segment(off, nd); off += nd;
      rep.steady_flow = est.mean.segment(off, ne); off += ne;
      rep.steady_lambda = est.mean.segment(off, n); off += n;
      rep.steady_phi = est.mean.segment(off, n); off += n;
      rep.steady_gamma_up = est.mean.segment(off, ctrl.gamma_up.size());
      off += ctrl.gamma_up.size();
      rep.steady_gamma_lo = est.mean.segment(off, ctrl.gamma_lo.size());

      double mean_gen_freq = 0.0;
      for (int g = 0; g < ng; ++g) mean_gen_freq += rep.steady_freq_bus(grid.generator_buses()[g]);
      mean_gen_freq /= std::max(ng, 1);
      rep.steady_freq_hz = nominal * (1.0 + mean_gen_freq);

      if (rep.efc_engaged) {
        PrimalDualPoint pt;
        pt.p_gen = rep.steady_p_gen;
        pt.p_hvdc = rep.steady_p_hvdc;
        pt.freq_gen.resize(ng);
        for (int g = 0; g < ng; ++g) pt.freq_gen(g) = rep.steady_freq_bus(grid.generator_buses()[g]);
        pt.flow = rep.steady_flow;
        pt.phi = rep.steady_phi;
        pt.tau = rep.steady_freq_bus;
        pt.lambda = rep.steady_lambda;
        pt.gamma_up = rep.steady_gamma_up;
        pt.gamma_lo = rep.steady_gamma_lo;
        rep.kkt = kkt_residuals(problem, pt);
        rep.kkt_valid = true;

        if (oracle) {
          const int ref = grid.generator_buses()[0];
          double err = 0.0;
          err = std::max(err, (rep.steady_p_gen - oracle->p_gen).cwiseAbs().maxCoeff());
          err = std::max(err, (rep.steady_p_hvdc - oracle->p_hvdc).cwiseAbs().maxCoeff());
          err = std::max(err, (rep.steady_flow - oracle->flow).cwiseAbs().maxCoeff());
          err = std::max(err, pt.freq_gen.cwiseAbs().maxCoeff());  // omega* = 0
          Eigen::VectorXd phi_regauged = rep.steady_phi.array() - rep.steady_phi(ref);
          err = std::max(err, (phi_regauged - oracle->phi).cwiseAbs().maxCoeff());
          rep.oracle_primal_error = err;
        }
      }
    }
  }

  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

}  // namespace efc
