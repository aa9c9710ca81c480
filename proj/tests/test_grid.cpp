#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "efc/grid.hpp"
#include "test_util.hpp"

using namespace efc;
using namespace efc::testing;

TEST_CASE("validate_grid accepts a minimal valid grid") {
  GridModel grid = two_bus_grid();
  CHECK(validate_grid(grid).empty());
}

TEST_CASE("validate_grid flags a bus mixing generator and HVDC roles") {
  Bus mixed = make_gen(1);
  mixed.margin = 1.0;  // HVDC parameter on a generator bus
  GridModel grid({mixed, make_gen(2)}, {make_line(1, 2)});
  auto report = validate_grid(grid);
  REQUIRE_FALSE(report.empty());
  bool cites = false;
  for (const auto& msg : report)
    if (msg.find("Assumption 1") != std::string::npos) cites = true;
  CHECK(cites);
}

TEST_CASE("validate_grid flags disconnected components") {
  GridModel grid({make_gen(1), make_gen(2), make_gen(3), make_gen(4)},
                 {make_line(1, 2), make_line(3, 4)});
  auto report = validate_grid(grid);
  REQUIRE_FALSE(report.empty());
  bool cites = false;
  for (const auto& msg : report)
    if (msg.find("not connected") != std::string::npos) cites = true;
  CHECK(cites);
}

TEST_CASE("validate_grid flags bad parameters and line data") {
  Bus g = make_gen(1);
  g.inertia = 0.0;
  Line self = make_line(2, 2);
  Line bad_limits = make_line(1, 2);
  bad_limits.limit_lower = 2.0;
  bad_limits.limit_upper = 1.0;
  GridModel grid({g, make_gen(2)}, {make_line(1, 2), make_line(2, 1), self, bad_limits});
  auto report = validate_grid(grid);
  CHECK(report.size() >= 4);  // M <= 0, duplicate pair, self loop, limit order
}

TEST_CASE("grid construction rejects structural defects") {
  CHECK_THROWS_AS(GridModel({make_gen(1), make_gen(1)}, {}), ValidationError);
  CHECK_THROWS_AS(GridModel({make_gen(1)}, {make_line(1, 7)}), ValidationError);
}

TEST_CASE("incidence matrix for a single line") {
  GridModel grid = two_bus_grid();
  Eigen::MatrixXd C = incidence_matrix(grid);
  REQUIRE(C.rows() == 2);
  REQUIRE(C.cols() == 1);
  CHECK(C(0, 0) == 1.0);
  CHECK(C(1, 0) == -1.0);
}

TEST_CASE("incidence matrix for a path graph") {
  GridModel grid({make_gen(1), make_gen(2), make_gen(3)}, {make_line(1, 2), make_line(2, 3)});
  Eigen::MatrixXd C = incidence_matrix(grid);
  Eigen::MatrixXd expected(3, 2);
  expected << 1, 0, -1, 1, 0, -1;
  CHECK((C - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("incidence columns always sum to zero") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    GridModel grid = random_grid(rng, 3 + trial % 12);
    Eigen::RowVectorXd sums = Eigen::RowVectorXd::Ones(grid.size()) * grid.incidence();
    CHECK(sums.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("weighted Laplacian of a single line") {
  GridModel grid = two_bus_grid(5.0);
  Eigen::MatrixXd expected(2, 2);
  expected << 5, -5, -5, 5;
  CHECK((weighted_laplacian(grid) - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("weighted Laplacian of a unit triangle") {
  GridModel grid({make_gen(1), make_gen(2), make_gen(3)},
                 {make_line(1, 2), make_line(2, 3), make_line(1, 3)});
  Eigen::MatrixXd L = weighted_laplacian(grid);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(L(i, j) == Catch::Approx(i == j ? 2.0 : -1.0));
}

TEST_CASE("Laplacian has zero row sums and rank n-1") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 15; ++trial) {
    GridModel grid = random_grid(rng, 3 + trial);
    Eigen::MatrixXd L = weighted_laplacian(grid);
    CHECK((L * Eigen::VectorXd::Ones(grid.size())).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((L - L.transpose()).cwiseAbs().maxCoeff() == 0.0);

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(L);
    const auto& sv = svd.singularValues();
    int rank = 0;
    for (int k = 0; k < sv.size(); ++k)
      if (sv(k) > 1e-9 * sv(0)) ++rank;
    CHECK(rank == grid.size() - 1);
  }
}

TEST_CASE("dc power flow basics") {
  GridModel grid = two_bus_grid(5.0);
  Eigen::VectorXd theta(2);
  theta << 0.1, 0.0;
  CHECK(dc_power_flow(grid, theta)(0) == Catch::Approx(0.5));

  Eigen::VectorXd equal = Eigen::VectorXd::Constant(2, 0.3);
  CHECK(dc_power_flow(grid, equal).cwiseAbs().maxCoeff() == 0.0);

  Eigen::VectorXd shifted = theta.array() + 4.2;
  CHECK((dc_power_flow(grid, theta) - dc_power_flow(grid, shifted)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dc power flow is linear and nodally consistent") {
  std::mt19937 rng(3);
  std::normal_distribution<double> dist(0.0, 0.2);
  for (int trial = 0; trial < 10; ++trial) {
    GridModel grid = random_grid(rng, 4 + trial);
    Eigen::VectorXd t1(grid.size()), t2(grid.size());
    for (int i = 0; i < grid.size(); ++i) {
      t1(i) = dist(rng);
      t2(i) = dist(rng);
    }
    Eigen::VectorXd lhs = dc_power_flow(grid, 2.0 * t1 - 3.0 * t2);
    Eigen::VectorXd rhs = 2.0 * dc_power_flow(grid, t1) - 3.0 * dc_power_flow(grid, t2);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);

    Eigen::VectorXd nodal = grid.incidence() * dc_power_flow(grid, t1);
    CHECK((nodal - grid.laplacian() * t1).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("principal minor solve on two buses") {
  GridModel grid = two_bus_grid(5.0);
  Eigen::VectorXd rhs(1);
  rhs << 0.5;
  Eigen::VectorXd x = principal_minor_solve(grid, {{1, 0.0}}, rhs);
  CHECK(x(0) == Catch::Approx(0.1));
}

TEST_CASE("principal minor solve of a zero system is zero") {
  GridModel grid({make_gen(1), make_gen(2), make_passive(3)},
                 {make_line(1, 2), make_line(2, 3)});
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(1);
  Eigen::VectorXd x = principal_minor_solve(grid, {{0, 0.0}, {1, 0.0}}, rhs);
  CHECK(x(0) == 0.0);
}

TEST_CASE("principal minor solve rejects an empty fixed set") {
  GridModel grid = two_bus_grid();
  CHECK_THROWS_AS(principal_minor_solve(grid, {}, Eigen::VectorXd::Zero(2)),
                  SingularSystemError);
}

TEST_CASE("principal minor solutions satisfy the subsystem") {
  std::mt19937 rng(23);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    GridModel grid = random_grid(rng, 5 + trial);
    std::vector<int> fixed{0};
    Eigen::VectorXd fixed_vals(1);
    fixed_vals << dist(rng);
    MinorSolver solver(grid, fixed);
    Eigen::VectorXd rhs(grid.size() - 1);
    for (int k = 0; k < rhs.size(); ++k) rhs(k) = dist(rng);
    Eigen::VectorXd x = solver.solve(rhs, fixed_vals);
    Eigen::VectorXd full = solver.assemble(x, fixed_vals);
    Eigen::VectorXd residual = grid.laplacian() * full;
    for (size_t k = 0; k < solver.free_buses().size(); ++k)
      CHECK(std::abs(residual(solver.free_buses()[k]) - rhs(k)) < 1e-10);
  }
}
