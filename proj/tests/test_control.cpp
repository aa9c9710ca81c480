#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "efc/control.hpp"
#include "efc/plant.hpp"
#include "test_util.hpp"

using namespace efc;
using namespace efc::testing;

namespace {

struct TinyEquilibrium {
  GridModel grid;
  PlantModel plant;
  PlantState state;
  ControllerState ctrl;
  Eigen::VectorXd p_in;

  // Hand-computed optimum of the tiny chain after a -0.4 p.u. event at the
  // passive bus, without binding line limits: lambda is uniform at
  // -0.4 / (1/alpha + 1/beta) and both units share the imbalance at equal
  // marginal cost.
  explicit TinyEquilibrium(std::optional<double> upper = std::nullopt)
      : grid(tiny_chain_grid(upper)), plant(grid), p_in(grid.base_injections()) {
    p_in(1) -= 0.4;
    const double lambda = -0.4 / (5.0 + 12.5);
    const double p_gen = 1.0 + 5.0 * (-lambda);
    const double p_hvdc = 0.5 + 12.5 * (-lambda);
    state.freq_gen = Eigen::VectorXd::Zero(1);
    state.p_gen = Eigen::VectorXd::Constant(1, p_gen);
    state.p_hvdc = Eigen::VectorXd::Constant(1, p_hvdc);
    state.angle_gen = Eigen::VectorXd::Zero(1);

    Eigen::VectorXd inj = p_in;
    inj(0) += p_gen;
    inj(2) += p_hvdc;
    Eigen::VectorXd theta = plant.eliminate_algebraic(state.angle_gen, inj);
    // Re-solve with the generator angle as reference: theta already is.
    ctrl.lambda = Eigen::VectorXd::Constant(3, lambda);
    ctrl.phi = theta;
    ctrl.gamma_up = Eigen::VectorXd::Zero(upper ? 1 : 0);
    ctrl.gamma_lo = Eigen::VectorXd::Zero(0);
    ctrl.gate = GateState::Active;
    ctrl.active_law = ControlLaw::FullyDistributed;
  }
};

}  // namespace

TEST_CASE("projection operator branches") {
  CHECK(projection_plus(2.0, -1.0) == 2.0);
  CHECK(projection_plus(-3.0, 1.0) == -3.0);
  CHECK(projection_plus(-3.0, 0.0) == 0.0);
}

TEST_CASE("projection operator matches its definition on random inputs") {
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::uniform_int_distribution<int> special(0, 9);
  for (int k = 0; k < 100000; ++k) {
    double a = dist(rng), b = dist(rng);
    if (special(rng) == 0) a = 0.0;
    if (special(rng) == 0) b = 0.0;
    const double expected = (a > 0.0 || b > 0.0) ? b : 0.0;
    REQUIRE(projection_plus(b, a) == expected);
  }
}

TEST_CASE("dead zone gate") {
  DeadZoneConfig cfg;  // 49.8 Hz threshold, latching
  CHECK(dead_zone_gate(49.9, cfg, GateState::Inactive) == GateState::Inactive);
  CHECK(dead_zone_gate(49.7, cfg, GateState::Inactive) == GateState::Active);
  CHECK(dead_zone_gate(50.0, cfg, GateState::Active) == GateState::Active);  // latched

  cfg.latching = false;
  CHECK(dead_zone_gate(50.0, cfg, GateState::Active) == GateState::Inactive);
  CHECK(dead_zone_gate(49.7, cfg, GateState::Active) == GateState::Active);

  // Over-frequency mirror at 2 * 50 - 49.8 = 50.2 Hz.
  CHECK(dead_zone_gate(50.3, cfg, GateState::Inactive) == GateState::Active);
  CHECK(dead_zone_gate(50.1, cfg, GateState::Inactive) == GateState::Inactive);
}

TEST_CASE("droop orders") {
  GridModel grid({make_gen(1, 0.16), make_gen(2, 0.32), make_hvdc(3)},
                 {make_line(1, 2), make_line(2, 3)});
  ControlModel ctrl(grid, uniform_gains(grid, 0.01, 0.01, 0.005));

  ControlOrders u0 = ctrl.droop_orders(Eigen::VectorXd::Zero(3));
  CHECK(u0.gen.cwiseAbs().maxCoeff() == 0.0);
  CHECK(u0.hvdc.cwiseAbs().maxCoeff() == 0.0);

  Eigen::VectorXd freq = Eigen::VectorXd::Constant(3, -0.002);
  ControlOrders u = ctrl.droop_orders(freq);
  CHECK(u.gen(0) == Catch::Approx(0.0125));
  CHECK(u.gen(1) == Catch::Approx(0.00625));  // doubled alpha halves the order
  CHECK(u.hvdc(0) == 0.0);                    // LCCs hold schedule outside EFC
}

TEST_CASE("EFC order coefficients match the declared margins") {
  Bus lcc1 = make_hvdc(2, 0.04, 1.05, 0.1, 6.45);
  Bus lcc2 = make_hvdc(3, 0.04, 1.20, 0.1, 6.30);
  GridModel grid({make_gen(1)}, {});
  CHECK(1.0 / lcc1.beta() == Catch::Approx(13.78).epsilon(1e-3));
  CHECK(1.0 / lcc2.beta() == Catch::Approx(18.00).epsilon(1e-12));

  GridModel g2({make_gen(1), lcc1, lcc2}, {make_line(1, 2), make_line(1, 3)});
  ControlModel cm(g2, uniform_gains(g2, 0.01, 0.01, 0.005));
  ControllerState cs = cm.initial();
  cs.lambda = Eigen::VectorXd::Constant(3, -0.01);
  ControlOrders u = cm.control_orders(cs, Eigen::VectorXd::Zero(3));
  CHECK(u.hvdc(0) == Catch::Approx(0.01 * 1.05 * 1.05 / (2 * 0.04)));
  CHECK(u.hvdc(1) == Catch::Approx(0.18));
}

TEST_CASE("EFC orders reduce to droop when lambda is zero") {
  GridModel grid = tiny_chain_grid();
  ControlModel cm(grid, uniform_gains(grid, 0.01, 0.01, 0.005));
  ControllerState cs = cm.initial();
  Eigen::VectorXd freq(3);
  freq << -0.004, -0.0041, -0.0042;
  ControlOrders efc = cm.control_orders(cs, freq);
  ControlOrders droop = cm.droop_orders(freq);
  CHECK(efc.gen(0) == droop.gen(0));
}

TEST_CASE("fully distributed step is stationary at the optimum") {
  TinyEquilibrium eq;
  ControlModel cm(eq.grid, uniform_gains(eq.grid, 0.01, 0.01, 0.005));
  ControlOrders u = cm.control_orders(eq.ctrl, Eigen::VectorXd::Zero(3));
  PlantView view = eq.plant.view(eq.state, u, eq.p_in, 0.0);

  auto r = cm.fully_step(eq.ctrl, view, 1e-3);
  CHECK((r.state.lambda - eq.ctrl.lambda).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((r.state.phi - eq.ctrl.phi).cwiseAbs().maxCoeff() < 1e-14);

  PlantDerivatives d = eq.plant.derivatives(eq.state, u, eq.p_in);
  CHECK(d.freq_gen.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(d.p_gen.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(d.p_hvdc.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gamma stays at zero below the limit and grows above it") {
  TinyEquilibrium eq(/*upper=*/2.0);  // far above the 1.114 p.u. flow
  ControlModel cm(eq.grid, uniform_gains(eq.grid, 0.01, 0.01, 0.005));
  ControlOrders u = cm.control_orders(eq.ctrl, Eigen::VectorXd::Zero(3));
  PlantView view = eq.plant.view(eq.state, u, eq.p_in, 0.0);

  auto r = cm.fully_step(eq.ctrl, view, 1e-3);
  CHECK(r.state.gamma_up(0) == 0.0);
  CHECK(r.branches[0] == 0);

  // Tighten the limit below the current virtual flow: gamma must increase.
  GridModel tight = tiny_chain_grid(/*upper=*/1.0);
  ControlModel cm2(tight, uniform_gains(tight, 0.01, 0.01, 0.005));
  auto r2 = cm2.fully_step(eq.ctrl, view, 1e-3);
  CHECK(r2.state.gamma_up(0) > 0.0);
  CHECK(r2.branches[0] == 1);
}

TEST_CASE("gamma never leaves the nonnegative orthant") {
  GridModel grid = tiny_chain_grid(/*upper=*/1.05);
  ControlModel cm(grid, uniform_gains(grid, 0.01, 0.01, 0.5));
  PlantModel plant(grid);
  Eigen::VectorXd p_in = grid.base_injections();
  PlantState s = plant.equilibrium(p_in);
  ControlOrders u = ControlOrders::zero(grid);
  PlantView view = plant.view(s, u, p_in, 0.0);
  ControllerState cs = cm.activate(view, ControlLaw::FullyDistributed);
  cs.gamma_up(0) = 1e-4;  // small positive multiplier with negative slack

  std::mt19937 rng(5);
  std::normal_distribution<double> noise(0.0, 0.02);
  for (int k = 0; k < 200; ++k) {
    cs.phi(0) += noise(rng);
    auto r = cm.fully_step(cs, view, 1e-2);
    cs = r.state;
    REQUIRE(cs.gamma_up.minCoeff() >= 0.0);
  }
}

TEST_CASE("semi distributed step solves the homogeneous lambda system to zero") {
  GridModel grid = tiny_chain_grid();
  ControlModel cm(grid, uniform_gains(grid, 0.01, 0.01, 0.005));
  PlantModel plant(grid);
  Eigen::VectorXd p_in = grid.base_injections();
  PlantState s = plant.equilibrium(p_in);
  ControlOrders u = ControlOrders::zero(grid);
  PlantView view = plant.view(s, u, p_in, 0.0);
  ControllerState cs = cm.activate(view, ControlLaw::SemiDistributed);

  auto r = cm.semi_step(cs, view, 1e-3);
  CHECK(r.state.lambda.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("semi distributed step is stationary at the optimum") {
  TinyEquilibrium eq;
  ControlModel cm(eq.grid, uniform_gains(eq.grid, 0.01, 0.01, 0.005));
  ControlOrders u = cm.control_orders(eq.ctrl, Eigen::VectorXd::Zero(3));
  PlantView view = eq.plant.view(eq.state, u, eq.p_in, 0.0);

  auto r = cm.semi_step(eq.ctrl, view, 1e-3);
  CHECK((r.state.lambda - eq.ctrl.lambda).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((r.state.phi - eq.ctrl.phi).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("central solutions satisfy the stationarity equations") {
  GridModel grid = tiny_chain_grid(/*upper=*/1.05);
  ControlModel cm(grid, uniform_gains(grid, 0.01, 0.01, 0.005));
  PlantModel plant(grid);
  Eigen::VectorXd p_in = grid.base_injections();
  p_in(1) -= 0.4;
  PlantState s = plant.equilibrium(grid.base_injections());
  ControlOrders u = ControlOrders::zero(grid);
  // A few plant steps into the transient so the view is non-trivial.
  for (int k = 0; k < 500; ++k) s = plant.step(s, u, p_in, 1e-3);
  PlantView view = plant.view(s, u, p_in, 0.5);
  ControllerState cs = cm.activate(view, ControlLaw::SemiDistributed);
  cs.gamma_up(0) = 0.01;

  auto r = cm.semi_step(cs, view, 1e-3);

  // Residuals of the two central equation sets at generator/passive buses,
  // using the gamma values the solve saw.
  Eigen::VectorXd per_line = Eigen::VectorXd::Zero(grid.line_count());
  per_line(0) = cs.gamma_up(0);
  Eigen::VectorXd nodal_gamma =
      grid.incidence() * grid.susceptances().cwiseProduct(per_line);
  Eigen::VectorXd res_a = grid.laplacian() * r.state.lambda - nodal_gamma;
  Eigen::VectorXd nodal_flow = grid.incidence() * view.flow;
  Eigen::VectorXd rhs_b = nodal_flow;
  rhs_b(0) += view.accel_gen(0) + grid.bus(0).damping * view.freq(0);
  Eigen::VectorXd res_b = grid.laplacian() * r.state.phi - rhs_b;
  for (int i : {0, 1}) {  // generator and passive bus rows
    CHECK(std::abs(res_a(i)) < 1e-10);
    CHECK(std::abs(res_b(i)) < 1e-10);
  }
}

TEST_CASE("consistent frequency solve closes the HVDC order loop") {
  GridModel grid = tiny_chain_grid();
  PlantModel plant(grid);
  HvdcFrequencySolver solver(grid);
  Eigen::VectorXd p_in = grid.base_injections();
  p_in(1) -= 0.4;
  PlantState s = plant.equilibrium(grid.base_injections());
  for (int k = 0; k < 800; ++k) s = plant.step(s, ControlOrders::zero(grid), p_in, 1e-3);

  Eigen::VectorXd lambda = Eigen::VectorXd::Constant(3, -0.015);
  Eigen::VectorXd omega = solver.consistent(s.freq_gen, s.p_hvdc, lambda);
  CHECK(omega(0) == s.freq_gen(0));

  // Substituting the implied order back through the plant reproduces the
  // same HVDC bus frequency.
  ControlModel cm(grid, uniform_gains(grid, 0.01, 0.01, 0.005));
  ControllerState cs = cm.initial();
  cs.lambda = lambda;
  ControlOrders u = cm.control_orders(cs, omega);
  PlantDerivatives d = plant.derivatives(s, u, p_in);
  Eigen::VectorXd check = plant.bus_frequency(s, d);
  CHECK((check - omega).cwiseAbs().maxCoeff() < 1e-12);
}
