#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "efc/grid.hpp"
#include "efc/plant.hpp"

namespace efc {

enum class GateState { Inactive, Active };
enum class ControlLaw { Droop, FullyDistributed, SemiDistributed };

inline const char* to_string(ControlLaw law) {
  switch (law) {
    case ControlLaw::Droop: return "droop";
    case ControlLaw::FullyDistributed: return "fully-distributed";
    case ControlLaw::SemiDistributed: return "semi-distributed";
  }
  return "?";
}

/// Projection keeping inequality multipliers nonnegative:
/// returns b if a > 0 or b > 0, else 0.
inline double projection_plus(double b, double a) {
  return (a > 0.0 || b > 0.0) ? b : 0.0;
}

/// Projected Euler update of one line multiplier. Returns the new value and
/// records which projection branch was taken: 0 = derivative held at zero,
/// 1 = derivative passed, 2 = passed but clipped at the orthant boundary.
inline double projected_gamma_update(double gamma, double b, double gain, double dt,
                                     std::uint8_t& branch) {
  if (!(gamma > 0.0 || b > 0.0)) {
    branch = 0;
    return gamma;
  }
  double next = gamma + dt * gain * b;
  if (next < 0.0) {
    branch = 2;
    return 0.0;
  }
  branch = 1;
  return next;
}

struct DeadZoneConfig {
  bool enabled = true;
  double threshold_hz = 49.8;  ///< under-frequency limit; mirrored over-frequency at 2*nominal - threshold
  bool latching = true;        ///< once triggered, EFC stays engaged
  double nominal_hz = 50.0;
};

/// Gate transition for one measured frequency. The over-frequency mirror of
/// the threshold is applied symmetrically around the nominal value.
inline GateState dead_zone_gate(double frequency_hz, const DeadZoneConfig& cfg, GateState gate) {
  const double upper = 2.0 * cfg.nominal_hz - cfg.threshold_hz;
  const bool outside = frequency_hz < cfg.threshold_hz || frequency_hz > upper;
  if (gate == GateState::Inactive) return outside ? GateState::Active : GateState::Inactive;
  if (cfg.latching) return GateState::Active;
  return outside ? GateState::Active : GateState::Inactive;
}

/// Cyber state of the distributed EFC. gamma entries exist only for lines
/// with a declared limit on that side; their order follows the bounded-line
/// lists of the ControlModel.
struct ControllerState {
  Eigen::VectorXd lambda;    ///< per bus
  Eigen::VectorXd phi;       ///< virtual angles, per bus
  Eigen::VectorXd gamma_up;  ///< per upper-bounded line, >= 0
  Eigen::VectorXd gamma_lo;  ///< per lower-bounded line, >= 0
  GateState gate = GateState::Inactive;
  ControlLaw active_law = ControlLaw::Droop;
};

struct ControlGains {
  Eigen::VectorXd k_lambda;    ///< per bus
  Eigen::VectorXd k_phi;       ///< per bus
  Eigen::VectorXd k_gamma_up;  ///< per upper-bounded line
  Eigen::VectorXd k_gamma_lo;  ///< per lower-bounded line
};

/// Lines carrying an upper / lower flow limit, in declaration order.
inline std::vector<int> upper_bounded_lines(const GridModel& grid) {
  std::vector<int> v;
  for (int e = 0; e < grid.line_count(); ++e)
    if (grid.line(e).limit_upper) v.push_back(e);
  return v;
}
inline std::vector<int> lower_bounded_lines(const GridModel& grid) {
  std::vector<int> v;
  for (int e = 0; e < grid.line_count(); ++e)
    if (grid.line(e).limit_lower) v.push_back(e);
  return v;
}

/// Uniform gains expanded to the per-bus / per-line vectors.
inline ControlGains uniform_gains(const GridModel& grid, double k_lambda, double k_phi,
                                  double k_gamma, bool constraints_enabled = true) {
  ControlGains g;
  g.k_lambda = Eigen::VectorXd::Constant(grid.size(), k_lambda);
  g.k_phi = Eigen::VectorXd::Constant(grid.size(), k_phi);
  const size_t nu = constraints_enabled ? upper_bounded_lines(grid).size() : 0;
  const size_t nl = constraints_enabled ? lower_bounded_lines(grid).size() : 0;
  g.k_gamma_up = Eigen::VectorXd::Constant(nu, k_gamma);
  g.k_gamma_lo = Eigen::VectorXd::Constant(nl, k_gamma);
  return g;
}

/// Resolves the algebraic loop between the HVDC orders and the bus
/// frequencies they instantaneously create. Under the DC power flow DAE,
/// the frequency of an HVDC bus contains the p^D rate, which contains the
/// order, which contains the frequency; substituting the order law into the
/// differentiated balance gives one symmetric positive definite system
///   (L[A,A] + S_D diag(1/(beta T^D)) S_D^T) omega_A = S_D r - L[A,G] omega_G
/// with r = (-p^D + P^D - lambda/beta)/T^D, factored once per grid.
class HvdcFrequencySolver {
 public:
  explicit HvdcFrequencySolver(const GridModel& grid) : grid_(&grid) {
    if (grid.generator_count() == 0)
      throw SingularSystemError("frequency consistency solve requires a generator bus");
    const auto& alg = grid.algebraic_buses();
    const auto& gens = grid.generator_buses();
    const auto& hv = grid.hvdc_buses();
    for (int h : hv)
      for (size_t k = 0; k < alg.size(); ++k)
        if (alg[k] == h) hvdc_in_alg_.push_back(static_cast<int>(k));

    const Eigen::MatrixXd& L = grid.laplacian();
    Eigen::MatrixXd minor(alg.size(), alg.size());
    coupling_.resize(alg.size(), gens.size());
    for (size_t r = 0; r < alg.size(); ++r) {
      for (size_t c = 0; c < alg.size(); ++c) minor(r, c) = L(alg[r], alg[c]);
      for (size_t c = 0; c < gens.size(); ++c) coupling_(r, c) = L(alg[r], gens[c]);
    }
    inv_beta_ = grid.hvdc_beta().cwiseInverse();
    t_hvdc_ = grid.hvdc_t_reg();
    sched_hvdc_ = grid.hvdc_schedule();
    for (size_t k = 0; k < hvdc_in_alg_.size(); ++k)
      minor(hvdc_in_alg_[k], hvdc_in_alg_[k]) += inv_beta_(k) / t_hvdc_(k);
    llt_.compute(minor);
    if (llt_.info() != Eigen::Success)
      throw SingularSystemError("augmented frequency minor is not positive definite");
  }

  /// Full bus frequency vector consistent with the EFC order law applied at
  /// this instant. lambda is the full per-bus multiplier vector.
  Eigen::VectorXd consistent(const Eigen::VectorXd& freq_gen, const Eigen::VectorXd& p_hvdc,
                             const Eigen::VectorXd& lambda) const {
    const auto& alg = grid_->algebraic_buses();
    const auto& hv = grid_->hvdc_buses();
    Eigen::VectorXd rhs = -coupling_ * freq_gen;
    for (size_t k = 0; k < hvdc_in_alg_.size(); ++k)
      rhs(hvdc_in_alg_[k]) += (-p_hvdc(k) + sched_hvdc_(k) - inv_beta_(k) * lambda(hv[k])) /
                              t_hvdc_(k);
    const Eigen::VectorXd omega_a = llt_.solve(rhs);
    Eigen::VectorXd full(grid_->size());
    const auto& gens = grid_->generator_buses();
    for (size_t k = 0; k < alg.size(); ++k) full(alg[k]) = omega_a(k);
    for (size_t k = 0; k < gens.size(); ++k) full(gens[k]) = freq_gen(k);
    return full;
  }

 private:
  const GridModel* grid_;
  std::vector<int> hvdc_in_alg_;
  Eigen::MatrixXd coupling_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd inv_beta_, t_hvdc_, sched_hvdc_;
};

/// The two optimal control laws plus the droop baseline. All stepping is
/// pure (state in, state out); the fully-distributed update reads only bus
/// and neighbour values already published in the current round (two
/// exchanges per control period).
class ControlModel {
 public:
  ControlModel(const GridModel& grid, ControlGains gains, bool constraints_enabled = true)
      : grid_(&grid), gains_(std::move(gains)), constraints_enabled_(constraints_enabled) {
    if (constraints_enabled_) {
      up_lines_ = upper_bounded_lines(grid);
      lo_lines_ = lower_bounded_lines(grid);
    }
    inv_alpha_ = grid.gen_alpha().cwiseInverse();
    inv_beta_ = grid.hvdc_beta().cwiseInverse();
    gen_pos_.assign(grid.size(), -1);
    for (size_t k = 0; k < grid.generator_buses().size(); ++k)
      gen_pos_[grid.generator_buses()[k]] = static_cast<int>(k);
    if (!grid.hvdc_buses().empty()) central_.emplace(grid, grid.hvdc_buses());
  }

  const GridModel& grid() const { return *grid_; }
  const ControlGains& gains() const { return gains_; }
  bool constraints_enabled() const { return constraints_enabled_; }
  const std::vector<int>& upper_lines() const { return up_lines_; }
  const std::vector<int>& lower_lines() const { return lo_lines_; }

  /// All-zero state with the gate released.
  ControllerState initial() const {
    ControllerState s;
    s.lambda = Eigen::VectorXd::Zero(grid_->size());
    s.phi = Eigen::VectorXd::Zero(grid_->size());
    s.gamma_up = Eigen::VectorXd::Zero(up_lines_.size());
    s.gamma_lo = Eigen::VectorXd::Zero(lo_lines_.size());
    return s;
  }

  /// State at gate activation: lambda = 0, gamma = 0 and phi seeded with the
  /// measured angles so virtual flows start equal to actual flows.
  ControllerState activate(const PlantView& view, ControlLaw law) const {
    ControllerState s = initial();
    s.phi = view.angle;
    s.gate = GateState::Active;
    s.active_law = law;
    return s;
  }

  /// Baseline droop: u^G = -(1/alpha) * omega, HVDC links hold schedule.
  ControlOrders droop_orders(const Eigen::VectorXd& bus_freq) const {
    ControlOrders u = ControlOrders::zero(*grid_);
    const auto& gens = grid_->generator_buses();
    for (size_t k = 0; k < gens.size(); ++k) u.gen(k) = -inv_alpha_(k) * bus_freq(gens[k]);
    return u;
  }

  /// EFC orders u^G = -(1/alpha)(omega + lambda), u^D = -(1/beta)(omega + lambda).
  ControlOrders control_orders(const ControllerState& ctrl, const Eigen::VectorXd& bus_freq) const {
    ControlOrders u = ControlOrders::zero(*grid_);
    const auto& gens = grid_->generator_buses();
    const auto& hv = grid_->hvdc_buses();
    for (size_t k = 0; k < gens.size(); ++k)
      u.gen(k) = -inv_alpha_(k) * (bus_freq(gens[k]) + ctrl.lambda(gens[k]));
    for (size_t k = 0; k < hv.size(); ++k)
      u.hvdc(k) = -inv_beta_(k) * (bus_freq(hv[k]) + ctrl.lambda(hv[k]));
    return u;
  }

  /// Virtual line flows B_ij (phi_i - phi_j).
  Eigen::VectorXd virtual_flows(const Eigen::VectorXd& phi) const {
    return grid_->susceptances().cwiseProduct(grid_->incidence().transpose() * phi);
  }

  struct StepResult {
    ControllerState state;
    /// Per gamma entry (upper list then lower list): 0 = projection held the
    /// derivative at zero, 1 = derivative passed, 2 = passed but the Euler
    /// update was clipped at zero. A change between consecutive steps marks
    /// a projection transition.
    std::vector<std::uint8_t> branches;
  };

  /// Staggered explicit update of the fully-distributed law. lambda and the
  /// line multipliers advance first from previous-step values; the virtual
  /// angles then advance from the freshly published lambda and gamma. The
  /// stagger keeps the conservative lambda/phi and gamma/phi pairs from
  /// accumulating discretization energy, so the physical damping decides
  /// stability. One control period needs two neighbour exchanges.
  StepResult fully_step(const ControllerState& ctrl, const PlantView& view, double dt) const {
    const Eigen::VectorXd nodal_flow = grid_->incidence() * view.flow;
    const Eigen::VectorXd nodal_virtual = grid_->laplacian() * ctrl.phi;

    StepResult r;
    r.state = ctrl;
    Eigen::VectorXd mismatch = nodal_flow - nodal_virtual;
    const auto& gens = grid_->generator_buses();
    for (size_t k = 0; k < gens.size(); ++k)
      mismatch(gens[k]) += view.accel_gen(k) + grid_->bus(gens[k]).damping * view.freq(gens[k]);
    r.state.lambda += dt * gains_.k_lambda.cwiseProduct(mismatch);
    step_gamma(ctrl, r, dt);
    const Eigen::VectorXd nodal_lambda = grid_->laplacian() * r.state.lambda;
    const Eigen::VectorXd nodal_gamma = nodal_gamma_term(r.state);
    r.state.phi += dt * gains_.k_phi.cwiseProduct(nodal_lambda - nodal_gamma);
    return r;
  }

  /// Semi-distributed law: HVDC buses integrate lambda/phi locally; the
  /// control center then solves the stationarity equations for the
  /// generator/passive buses with the HVDC values fixed; gamma is iterated
  /// with the freshly solved virtual angles.
  StepResult semi_step(const ControllerState& ctrl, const PlantView& view, double dt) const {
    if (!central_)
      throw SingularSystemError("semi-distributed law requires at least one HVDC bus");
    const Eigen::VectorXd nodal_flow = grid_->incidence() * view.flow;
    const Eigen::VectorXd nodal_virtual = grid_->laplacian() * ctrl.phi;
    const Eigen::VectorXd nodal_lambda = grid_->laplacian() * ctrl.lambda;
    const Eigen::VectorXd nodal_gamma = nodal_gamma_term(ctrl);

    StepResult r;
    r.state = ctrl;
    const auto& hv = grid_->hvdc_buses();
    Eigen::VectorXd lambda_hvdc(hv.size()), phi_hvdc(hv.size());
    for (size_t k = 0; k < hv.size(); ++k) {
      const int i = hv[k];
      lambda_hvdc(k) = ctrl.lambda(i) + dt * gains_.k_lambda(i) * (nodal_flow(i) - nodal_virtual(i));
      phi_hvdc(k) = ctrl.phi(i) + dt * gains_.k_phi(i) * (nodal_lambda(i) - nodal_gamma(i));
    }

    // Central solves over the generator/passive principal minor.
    const auto& free = central_->free_buses();
    Eigen::VectorXd rhs_lambda(free.size()), rhs_phi(free.size());
    for (size_t k = 0; k < free.size(); ++k) {
      const int i = free[k];
      rhs_lambda(k) = nodal_gamma(i);
      rhs_phi(k) = nodal_flow(i);
      if (grid_->bus(i).is_generator()) {
        int g = gen_position(i);
        rhs_phi(k) += view.accel_gen(g) + grid_->bus(i).damping * view.freq(i);
      }
    }
    r.state.lambda = central_->assemble(central_->solve(rhs_lambda, lambda_hvdc), lambda_hvdc);
    r.state.phi = central_->assemble(central_->solve(rhs_phi, phi_hvdc), phi_hvdc);

    step_gamma_from(r.state.phi, ctrl, r, dt);
    return r;
  }

 private:
  /// Sum_e C_{i,e} B_e (gamma_e^+ - gamma_e^-) as a bus vector.
  Eigen::VectorXd nodal_gamma_term(const ControllerState& ctrl) const {
    Eigen::VectorXd per_line = Eigen::VectorXd::Zero(grid_->line_count());
    for (size_t k = 0; k < up_lines_.size(); ++k) per_line(up_lines_[k]) += ctrl.gamma_up(k);
    for (size_t k = 0; k < lo_lines_.size(); ++k) per_line(lo_lines_[k]) -= ctrl.gamma_lo(k);
    return grid_->incidence() * grid_->susceptances().cwiseProduct(per_line);
  }

  void step_gamma(const ControllerState& ctrl, StepResult& r, double dt) const {
    step_gamma_from(ctrl.phi, ctrl, r, dt);
  }

  /// Projected Euler on the line multipliers; projection semantics are
  /// preserved exactly (gamma never leaves the nonnegative orthant).
  void step_gamma_from(const Eigen::VectorXd& phi, const ControllerState& ctrl, StepResult& r,
                       double dt) const {
    const Eigen::VectorXd vf = virtual_flows(phi);
    r.branches.assign(up_lines_.size() + lo_lines_.size(), 0);
    for (size_t k = 0; k < up_lines_.size(); ++k) {
      const int e = up_lines_[k];
      const double b = vf(e) - *grid_->line(e).limit_upper;
      r.state.gamma_up(k) = projected_gamma_update(ctrl.gamma_up(k), b, gains_.k_gamma_up(k), dt,
                                                   r.branches[k]);
    }
    for (size_t k = 0; k < lo_lines_.size(); ++k) {
      const int e = lo_lines_[k];
      const double b = *grid_->line(e).limit_lower - vf(e);
      r.state.gamma_lo(k) = projected_gamma_update(ctrl.gamma_lo(k), b, gains_.k_gamma_lo(k), dt,
                                                   r.branches[up_lines_.size() + k]);
    }
  }

  int gen_position(int bus_index) const { return gen_pos_[bus_index]; }

  const GridModel* grid_;
  ControlGains gains_;
  bool constraints_enabled_;
  std::vector<int> up_lines_, lo_lines_;
  std::vector<int> gen_pos_;
  Eigen::VectorXd inv_alpha_, inv_beta_;
  std::optional<MinorSolver> central_;
};

}  // namespace efc
