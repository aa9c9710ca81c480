#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "efc/coordination.hpp"
#include "test_util.hpp"

using namespace efc;
using namespace efc::testing;

TEST_CASE("law selection follows gate and center status") {
  CHECK(select_law(CenterStatus::Normal, GateState::Inactive) == ControlLaw::Droop);
  CHECK(select_law(CenterStatus::Failed, GateState::Inactive) == ControlLaw::Droop);
  CHECK(select_law(CenterStatus::Normal, GateState::Active) == ControlLaw::SemiDistributed);
  CHECK(select_law(CenterStatus::Failed, GateState::Active) == ControlLaw::FullyDistributed);
}

TEST_CASE("law selection is deterministic over a replayed timeline") {
  CenterTimeline tl({{0.0, CenterStatus::Normal},
                     {40.0, CenterStatus::Failed},
                     {120.0, CenterStatus::Normal}});
  std::vector<ControlLaw> first, second;
  for (int pass = 0; pass < 2; ++pass) {
    auto& out = pass == 0 ? first : second;
    for (double t = 0.0; t < 200.0; t += 7.3)
      out.push_back(select_law(tl.at(t), t > 21.0 ? GateState::Active : GateState::Inactive));
  }
  CHECK(first == second);
}

TEST_CASE("center timeline validates its events") {
  CHECK_THROWS_AS(CenterTimeline({{1.0, CenterStatus::Normal}}), ValidationError);
  CHECK_THROWS_AS(CenterTimeline({{0.0, CenterStatus::Normal}, {0.0, CenterStatus::Failed}}),
                  ValidationError);
  CenterTimeline tl({{0.0, CenterStatus::Normal}, {40.0, CenterStatus::Failed}});
  CHECK(tl.at(39.9) == CenterStatus::Normal);
  CHECK(tl.at(40.0) == CenterStatus::Failed);
}

TEST_CASE("handover relabels the law and keeps the state") {
  GridModel grid = tiny_chain_grid(/*upper=*/1.05);
  ControlModel cm(grid, uniform_gains(grid, 0.01, 0.01, 0.005));
  ControllerState cs = cm.initial();
  cs.lambda.setConstant(-0.02);
  cs.phi.setConstant(0.1);
  cs.gamma_up.setConstant(0.3);
  cs.active_law = ControlLaw::SemiDistributed;

  ControllerState fully = handover(cs, ControlLaw::SemiDistributed, ControlLaw::FullyDistributed);
  CHECK(fully.active_law == ControlLaw::FullyDistributed);
  CHECK((fully.lambda - cs.lambda).cwiseAbs().maxCoeff() == 0.0);
  CHECK((fully.gamma_up - cs.gamma_up).cwiseAbs().maxCoeff() == 0.0);

  ControllerState back = handover(fully, ControlLaw::FullyDistributed, ControlLaw::SemiDistributed);
  CHECK(back.active_law == ControlLaw::SemiDistributed);
  CHECK((back.lambda - cs.lambda).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.phi - cs.phi).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(handover(cs, ControlLaw::Droop, ControlLaw::Droop), std::invalid_argument);
}

TEST_CASE("communication counts for the smallest grid") {
  GridModel grid = two_bus_grid();
  CHECK(comm_line_count(grid, ControlLaw::FullyDistributed).line_count == 2);
  CHECK(comm_line_count(grid, ControlLaw::SemiDistributed).line_count == 4);
}

TEST_CASE("communication counts follow the formulas on random grids") {
  std::mt19937 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    GridModel grid = random_grid(rng, 3 + trial);
    CHECK(comm_line_count(grid, ControlLaw::FullyDistributed).line_count ==
          2L * grid.line_count());
    CHECK(comm_line_count(grid, ControlLaw::SemiDistributed).line_count ==
          2L * grid.size() - grid.passive_count());
  }
}

TEST_CASE("dense grids favour the semi-distributed law") {
  // Triangle with one passive bus: n_e = 3 > n - n_P/2 = 2.5.
  GridModel grid({make_gen(1), make_gen(2), make_passive(3)},
                 {make_line(1, 2), make_line(2, 3), make_line(1, 3)});
  auto fully = comm_line_count(grid, ControlLaw::FullyDistributed);
  auto semi = comm_line_count(grid, ControlLaw::SemiDistributed);
  CHECK(fully.line_count > semi.line_count);
}
