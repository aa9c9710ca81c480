#pragma once

#include <Eigen/Dense>
#include <vector>

#include "efc/grid.hpp"

namespace efc {

/// Physical state of the closed loop: generator angles and frequency
/// deviations plus the regulated outputs of generators and HVDC links.
/// Angles at HVDC/passive buses are algebraic and derived on demand.
struct PlantState {
  Eigen::VectorXd angle_gen;  ///< theta^G, p.u. rad
  Eigen::VectorXd freq_gen;   ///< omega^G, p.u.
  Eigen::VectorXd p_gen;      ///< p^G, p.u.
  Eigen::VectorXd p_hvdc;     ///< p^D, p.u. (positive = into the AC main system)

  bool all_finite() const {
    return angle_gen.allFinite() && freq_gen.allFinite() && p_gen.allFinite() &&
           p_hvdc.allFinite();
  }
};

/// Time derivative of a PlantState, same layout.
struct PlantDerivatives {
  Eigen::VectorXd angle_gen, freq_gen, p_gen, p_hvdc;
};

/// Control orders for generators and HVDC links.
struct ControlOrders {
  Eigen::VectorXd gen;   ///< u^G
  Eigen::VectorXd hvdc;  ///< u^D

  static ControlOrders zero(const GridModel& grid) {
    return {Eigen::VectorXd::Zero(grid.generator_count()),
            Eigen::VectorXd::Zero(grid.hvdc_count())};
  }
};

/// A step change of the injection at one bus, active from `time` on.
struct Disturbance {
  int bus = 0;        ///< bus id
  double delta_p = 0; ///< p.u.
  double time = 0;    ///< s
};
using DisturbanceSet = std::vector<Disturbance>;

/// Injections P^in(t): base values plus every disturbance active at t.
inline Eigen::VectorXd injections_at(const GridModel& grid, const DisturbanceSet& disturbances,
                                     double t) {
  Eigen::VectorXd p = grid.base_injections();
  for (const Disturbance& d : disturbances)
    if (d.time <= t) p(grid.index_of(d.bus)) += d.delta_p;
  return p;
}

/// Measurement snapshot handed to the controllers. All fields derive from
/// one PlantState and the orders applied over the preceding step.
struct PlantView {
  double time = 0;
  Eigen::VectorXd angle;      ///< per-bus theta, algebraic buses included
  Eigen::VectorXd freq;       ///< per-bus omega, p.u.
  Eigen::VectorXd accel_gen;  ///< M_i * omega_i_dot per generator
  Eigen::VectorXd flow;       ///< per-line P, p.u.
};

/// Counts integration steps on which the HVDC actuator bounds clamped p^D.
struct SaturationLog {
  long steps = 0;
};

/// Closed-loop physical dynamics: the swing equations with the algebraic
/// bus balances eliminated exactly through the Laplacian principal minor
/// (generator buses fixed). All methods are pure; the model only caches
/// grid-derived constants.
class PlantModel {
 public:
  explicit PlantModel(const GridModel& grid) : grid_(&grid), algebraic_(make_solver(grid)) {
    inertia_ = grid.gen_inertia();
    damping_ = grid.gen_damping();
    t_gen_ = grid.gen_t_reg();
    t_hvdc_ = grid.hvdc_t_reg();
    sched_gen_ = grid.gen_schedule();
    sched_hvdc_ = grid.hvdc_schedule();
    const auto& alg = grid.algebraic_buses();
    for (int h : grid.hvdc_buses())
      for (size_t k = 0; k < alg.size(); ++k)
        if (alg[k] == h) hvdc_in_algebraic_.push_back(static_cast<int>(k));
  }

  const GridModel& grid() const { return *grid_; }

  /// Full bus angle vector from generator angles and the (exogenous plus
  /// HVDC) injections at algebraic buses. `node_injections` must hold
  /// P^in + p^D contributions for every bus.
  Eigen::VectorXd eliminate_algebraic(const Eigen::VectorXd& gen_angles,
                                      const Eigen::VectorXd& node_injections) const {
    const auto& alg = grid_->algebraic_buses();
    Eigen::VectorXd rhs(alg.size());
    for (size_t k = 0; k < alg.size(); ++k) rhs(k) = node_injections(alg[k]);
    return algebraic_.assemble(algebraic_.solve(rhs, gen_angles), gen_angles);
  }

  /// Exogenous + HVDC injections for a given state.
  Eigen::VectorXd node_injections(const PlantState& state, const Eigen::VectorXd& p_in) const {
    Eigen::VectorXd inj = p_in;
    const auto& hv = grid_->hvdc_buses();
    for (size_t k = 0; k < hv.size(); ++k) inj(hv[k]) += state.p_hvdc(k);
    return inj;
  }

  PlantDerivatives derivatives(const PlantState& state, const ControlOrders& orders,
                               const Eigen::VectorXd& p_in) const {
    return derivatives_at(state, orders, p_in,
                          eliminate_algebraic(state.angle_gen, node_injections(state, p_in)));
  }

  /// Per-bus frequencies. Generator buses report the state; algebraic bus
  /// frequencies come from differentiating the elimination relation, with
  /// injection rates zero between events and p^D rates from `derivs`.
  Eigen::VectorXd bus_frequency(const PlantState& state, const PlantDerivatives& derivs) const {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(grid_->algebraic_buses().size());
    for (size_t k = 0; k < hvdc_in_algebraic_.size(); ++k)
      rhs(hvdc_in_algebraic_[k]) = derivs.p_hvdc(k);
    return algebraic_.assemble(algebraic_.solve(rhs, state.freq_gen), state.freq_gen);
  }

  /// Snapshot at time t. `applied` holds the orders in effect over the
  /// preceding step, so accelerations and bus frequencies reflect what the
  /// plant is currently doing.
  PlantView view(const PlantState& state, const ControlOrders& applied,
                 const Eigen::VectorXd& p_in, double t) const {
    PlantView v;
    v.time = t;
    v.angle = eliminate_algebraic(state.angle_gen, node_injections(state, p_in));
    v.flow = dc_power_flow(*grid_, v.angle);
    PlantDerivatives d = derivatives_at(state, applied, p_in, v.angle);
    v.accel_gen = inertia_.cwiseProduct(d.freq_gen);
    v.freq = bus_frequency(state, d);
    return v;
  }

  /// Classical RK4 update with the control orders held constant over the
  /// step (zero-order hold). HVDC outputs are clamped to their declared
  /// actuator bounds afterwards.
  PlantState step(const PlantState& state, const ControlOrders& orders,
                  const Eigen::VectorXd& p_in, double dt, SaturationLog* log = nullptr) const {
    PlantDerivatives k1 = derivatives(state, orders, p_in);
    PlantDerivatives k2 = derivatives(advance(state, k1, dt / 2), orders, p_in);
    PlantDerivatives k3 = derivatives(advance(state, k2, dt / 2), orders, p_in);
    PlantDerivatives k4 = derivatives(advance(state, k3, dt), orders, p_in);

    PlantState out;
    auto combine = [dt](const Eigen::VectorXd& x, const Eigen::VectorXd& a,
                        const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                        const Eigen::VectorXd& d) {
      return (x + (dt / 6.0) * (a + 2.0 * b + 2.0 * c + d)).eval();
    };
    out.angle_gen = combine(state.angle_gen, k1.angle_gen, k2.angle_gen, k3.angle_gen, k4.angle_gen);
    out.freq_gen = combine(state.freq_gen, k1.freq_gen, k2.freq_gen, k3.freq_gen, k4.freq_gen);
    out.p_gen = combine(state.p_gen, k1.p_gen, k2.p_gen, k3.p_gen, k4.p_gen);
    out.p_hvdc = combine(state.p_hvdc, k1.p_hvdc, k2.p_hvdc, k3.p_hvdc, k4.p_hvdc);

    bool clamped = false;
    const auto& hv = grid_->hvdc_buses();
    for (size_t k = 0; k < hv.size(); ++k) {
      const Bus& b = grid_->bus(hv[k]);
      if (b.p_max && out.p_hvdc(k) > *b.p_max) { out.p_hvdc(k) = *b.p_max; clamped = true; }
      if (b.p_min && out.p_hvdc(k) < *b.p_min) { out.p_hvdc(k) = *b.p_min; clamped = true; }
    }
    if (clamped && log) ++log->steps;

    if (!out.all_finite()) throw IntegrationDivergedError("plant state became non-finite");
    return out;
  }

  /// Synchronous equilibrium for balanced injections: scheduled outputs,
  /// zero frequency, angles from the DC power flow with the first generator
  /// bus as angle reference.
  PlantState equilibrium(const Eigen::VectorXd& p_in) const {
    if (grid_->generator_count() == 0)
      throw SingularSystemError("equilibrium requires a generator bus");
    PlantState s;
    s.freq_gen = Eigen::VectorXd::Zero(grid_->generator_count());
    s.p_gen = sched_gen_;
    s.p_hvdc = sched_hvdc_;

    Eigen::VectorXd inj = node_injections(s, p_in);
    const auto& gens = grid_->generator_buses();
    for (size_t k = 0; k < gens.size(); ++k) inj(gens[k]) += s.p_gen(k);

    const int ref = gens[0];
    MinorSolver solver(*grid_, {ref});
    Eigen::VectorXd rhs(grid_->size() - 1);
    int r = 0;
    for (int i = 0; i < grid_->size(); ++i)
      if (i != ref) rhs(r++) = inj(i);
    Eigen::VectorXd theta =
        solver.assemble(solver.solve(rhs, Eigen::VectorXd::Zero(1)), Eigen::VectorXd::Zero(1));
    s.angle_gen.resize(gens.size());
    for (size_t k = 0; k < gens.size(); ++k) s.angle_gen(k) = theta(gens[k]);
    return s;
  }

 private:
  static MinorSolver make_solver(const GridModel& grid) {
    if (grid.generator_count() == 0)
      throw SingularSystemError("algebraic elimination requires a generator bus");
    return MinorSolver(grid, grid.generator_buses());
  }

  PlantDerivatives derivatives_at(const PlantState& state, const ControlOrders& orders,
                                  const Eigen::VectorXd& p_in,
                                  const Eigen::VectorXd& theta_full) const {
    const Eigen::VectorXd flow = dc_power_flow(*grid_, theta_full);
    const Eigen::VectorXd nodal = grid_->incidence() * flow;
    const auto& gens = grid_->generator_buses();

    PlantDerivatives d;
    d.angle_gen = state.freq_gen;
    d.freq_gen.resize(gens.size());
    for (size_t k = 0; k < gens.size(); ++k)
      d.freq_gen(k) = (p_in(gens[k]) + state.p_gen(k) - nodal(gens[k]) -
                       damping_(k) * state.freq_gen(k)) /
                      inertia_(k);
    d.p_gen = (-state.p_gen + sched_gen_ + orders.gen).cwiseQuotient(t_gen_);
    d.p_hvdc = (-state.p_hvdc + sched_hvdc_ + orders.hvdc).cwiseQuotient(t_hvdc_);
    return d;
  }

  static PlantState advance(const PlantState& s, const PlantDerivatives& d, double h) {
    return {s.angle_gen + h * d.angle_gen, s.freq_gen + h * d.freq_gen, s.p_gen + h * d.p_gen,
            s.p_hvdc + h * d.p_hvdc};
  }

  const GridModel* grid_;
  MinorSolver algebraic_;
  std::vector<int> hvdc_in_algebraic_;
  Eigen::VectorXd inertia_, damping_, t_gen_, t_hvdc_, sched_gen_, sched_hvdc_;
};

}  // namespace efc
