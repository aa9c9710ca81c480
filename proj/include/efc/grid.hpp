#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "efc/errors.hpp"

namespace efc {

enum class BusKind { Generator, HvdcConnected, Passive };

inline const char* to_string(BusKind k) {
  switch (k) {
    case BusKind::Generator: return "generator";
    case BusKind::HvdcConnected: return "hvdc";
    case BusKind::Passive: return "passive";
  }
  return "?";
}

/// One bus of the AC main system. Physical quantities are in per unit on
/// the grid base; time constants in seconds. Fields that do not apply to
/// the bus kind stay at zero.
struct Bus {
  int id = 0;
  BusKind kind = BusKind::Passive;

  double inertia = 0.0;     ///< M, generator only
  double damping = 0.0;     ///< D, generator only
  double t_reg = 0.0;       ///< power regulation inertia T^G / T^D
  double p_sched = 0.0;     ///< scheduled output P^G / P^D
  double p_in = 0.0;        ///< base injection (>0) or demand (<0)
  double alpha = 0.0;       ///< generator cost coefficient
  double beta_tilde = 0.0;  ///< HVDC cost coefficient
  double margin = 0.0;      ///< HVDC power regulation margin Z^D

  std::optional<double> p_min;  ///< HVDC actuator floor
  std::optional<double> p_max;  ///< HVDC actuator ceiling (overload bound)

  bool is_generator() const { return kind == BusKind::Generator; }
  bool is_hvdc() const { return kind == BusKind::HvdcConnected; }

  /// Effective HVDC cost coefficient beta = 2*beta_tilde / margin^2.
  double beta() const { return 2.0 * beta_tilde / (margin * margin); }
};

/// Directed transmission line. If ij is a line then ji is not.
struct Line {
  int from = 0;
  int to = 0;
  double susceptance = 0.0;  ///< B, p.u.
  std::optional<double> limit_lower;
  std::optional<double> limit_upper;

  bool bounded() const { return limit_lower.has_value() || limit_upper.has_value(); }
};

/// Immutable network model. Bus and line order is declaration order; every
/// vector and matrix in the library uses it. Construction fails on
/// structural defects (duplicate ids, unknown endpoints); everything else
/// is reported by validate_grid.
class GridModel {
 public:
  GridModel(std::vector<Bus> buses, std::vector<Line> lines, double base_mva = 100.0,
            double nominal_hz = 50.0)
      : buses_(std::move(buses)),
        lines_(std::move(lines)),
        base_mva_(base_mva),
        nominal_hz_(nominal_hz) {
    for (int i = 0; i < static_cast<int>(buses_.size()); ++i) {
      if (!index_.emplace(buses_[i].id, i).second)
        throw ValidationError("duplicate bus id " + std::to_string(buses_[i].id));
      switch (buses_[i].kind) {
        case BusKind::Generator: generators_.push_back(i); break;
        case BusKind::HvdcConnected: hvdc_.push_back(i); break;
        case BusKind::Passive: passive_.push_back(i); break;
      }
    }
    for (int i = 0; i < static_cast<int>(buses_.size()); ++i)
      if (!buses_[i].is_generator()) algebraic_.push_back(i);

    const int n = size();
    const int ne = line_count();
    incidence_ = Eigen::MatrixXd::Zero(n, ne);
    susceptance_.resize(ne);
    for (int e = 0; e < ne; ++e) {
      const Line& ln = lines_[e];
      auto fi = index_.find(ln.from);
      auto ti = index_.find(ln.to);
      if (fi == index_.end() || ti == index_.end())
        throw ValidationError("line " + std::to_string(ln.from) + "-" + std::to_string(ln.to) +
                              " references an unknown bus");
      if (fi->second != ti->second) {
        incidence_(fi->second, e) = 1.0;
        incidence_(ti->second, e) = -1.0;
      }
      susceptance_(e) = ln.susceptance;
    }
    laplacian_ = incidence_ * susceptance_.asDiagonal() * incidence_.transpose();
  }

  int size() const { return static_cast<int>(buses_.size()); }
  int line_count() const { return static_cast<int>(lines_.size()); }
  int generator_count() const { return static_cast<int>(generators_.size()); }
  int hvdc_count() const { return static_cast<int>(hvdc_.size()); }
  int passive_count() const { return static_cast<int>(passive_.size()); }

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Line>& lines() const { return lines_; }
  const Bus& bus(int index) const { return buses_[index]; }
  const Line& line(int index) const { return lines_[index]; }
  double base_mva() const { return base_mva_; }
  double nominal_hz() const { return nominal_hz_; }

  /// Bus indices by kind, in declaration order.
  const std::vector<int>& generator_buses() const { return generators_; }
  const std::vector<int>& hvdc_buses() const { return hvdc_; }
  const std::vector<int>& passive_buses() const { return passive_; }
  /// HVDC and passive buses (the buses with algebraic balance equations).
  const std::vector<int>& algebraic_buses() const { return algebraic_; }

  int index_of(int bus_id) const {
    auto it = index_.find(bus_id);
    if (it == index_.end()) throw ValidationError("unknown bus id " + std::to_string(bus_id));
    return it->second;
  }
  bool has_bus(int bus_id) const { return index_.count(bus_id) != 0; }

  /// n x n_e node-branch incidence matrix C.
  const Eigen::MatrixXd& incidence() const { return incidence_; }
  /// Per-line susceptances as a vector (diagonal of B).
  const Eigen::VectorXd& susceptances() const { return susceptance_; }
  /// Weighted Laplacian C * diag(B) * C^T.
  const Eigen::MatrixXd& laplacian() const { return laplacian_; }

  /// Base injections P^in as a full bus vector.
  Eigen::VectorXd base_injections() const {
    Eigen::VectorXd p(size());
    for (int i = 0; i < size(); ++i) p(i) = buses_[i].p_in;
    return p;
  }

  /// Scheduled outputs of all generators / HVDC links, in kind order.
  Eigen::VectorXd gen_schedule() const { return gather(generators_, &Bus::p_sched); }
  Eigen::VectorXd hvdc_schedule() const { return gather(hvdc_, &Bus::p_sched); }
  Eigen::VectorXd gen_inertia() const { return gather(generators_, &Bus::inertia); }
  Eigen::VectorXd gen_damping() const { return gather(generators_, &Bus::damping); }
  Eigen::VectorXd gen_t_reg() const { return gather(generators_, &Bus::t_reg); }
  Eigen::VectorXd hvdc_t_reg() const { return gather(hvdc_, &Bus::t_reg); }
  Eigen::VectorXd gen_alpha() const { return gather(generators_, &Bus::alpha); }
  Eigen::VectorXd hvdc_beta() const {
    Eigen::VectorXd b(hvdc_count());
    for (int k = 0; k < hvdc_count(); ++k) b(k) = buses_[hvdc_[k]].beta();
    return b;
  }

 private:
  Eigen::VectorXd gather(const std::vector<int>& idx, double Bus::*field) const {
    Eigen::VectorXd v(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) v(k) = buses_[idx[k]].*field;
    return v;
  }

  std::vector<Bus> buses_;
  std::vector<Line> lines_;
  double base_mva_;
  double nominal_hz_;
  std::unordered_map<int, int> index_;
  std::vector<int> generators_, hvdc_, passive_, algebraic_;
  Eigen::MatrixXd incidence_;
  Eigen::VectorXd susceptance_;
  Eigen::MatrixXd laplacian_;
};

/// Checks every bus/line/grid invariant. Violations are returned as text,
/// an empty report means the grid is valid. Never throws.
inline std::vector<std::string> validate_grid(const GridModel& grid) {
  std::vector<std::string> report;
  auto add = [&report](const std::string& msg) { report.push_back(msg); };

  for (const Bus& b : grid.buses()) {
    const std::string tag = "bus " + std::to_string(b.id);
    switch (b.kind) {
      case BusKind::Generator:
        if (b.inertia <= 0.0) add(tag + ": generator inertia M must be > 0");
        if (b.damping <= 0.0) add(tag + ": generator damping D must be > 0");
        if (b.t_reg <= 0.0) add(tag + ": generator regulation inertia T must be > 0");
        if (b.alpha <= 0.0) add(tag + ": generator cost coefficient alpha must be > 0");
        if (b.beta_tilde != 0.0 || b.margin != 0.0 || b.p_min || b.p_max)
          add(tag + ": generator bus carries HVDC parameters (Assumption 1: an "
                    "HVDC-connected bus cannot be a generator bus)");
        break;
      case BusKind::HvdcConnected:
        if (b.t_reg <= 0.0) add(tag + ": HVDC regulation inertia T must be > 0");
        if (b.beta_tilde <= 0.0) add(tag + ": HVDC cost coefficient must be > 0");
        if (b.margin <= 0.0) add(tag + ": HVDC regulation margin Z must be > 0");
        if (b.inertia != 0.0 || b.damping != 0.0 || b.alpha != 0.0)
          add(tag + ": HVDC bus carries generator parameters (Assumption 1: an "
                    "HVDC-connected bus cannot be a generator bus)");
        break;
      case BusKind::Passive:
        if (b.inertia != 0.0 || b.damping != 0.0 || b.alpha != 0.0 || b.beta_tilde != 0.0)
          add(tag + ": passive bus carries generator or HVDC parameters");
        break;
    }
  }

  for (int e = 0; e < grid.line_count(); ++e) {
    const Line& ln = grid.line(e);
    const std::string tag = "line " + std::to_string(ln.from) + "-" + std::to_string(ln.to);
    if (ln.from == ln.to) add(tag + ": self loop");
    if (ln.susceptance <= 0.0) add(tag + ": susceptance must be > 0");
    if (ln.limit_lower && ln.limit_upper && *ln.limit_lower > *ln.limit_upper)
      add(tag + ": lower flow limit exceeds upper flow limit");
    for (int f = e + 1; f < grid.line_count(); ++f) {
      const Line& o = grid.line(f);
      if ((o.from == ln.from && o.to == ln.to) || (o.from == ln.to && o.to == ln.from))
        add(tag + ": duplicate unordered bus pair");
    }
  }

  if (grid.generator_count() == 0) add("grid has no generator bus");

  // Connectivity by traversal over the undirected line graph.
  if (grid.size() > 0) {
    std::vector<char> seen(grid.size(), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      int i = stack.back();
      stack.pop_back();
      for (int e = 0; e < grid.line_count(); ++e) {
        if (grid.incidence()(i, e) == 0.0) continue;
        for (int j = 0; j < grid.size(); ++j) {
          if (!seen[j] && grid.incidence()(j, e) != 0.0) {
            seen[j] = 1;
            stack.push_back(j);
          }
        }
      }
    }
    for (int i = 0; i < grid.size(); ++i)
      if (!seen[i]) {
        add("grid is not connected (bus " + std::to_string(grid.bus(i).id) +
            " unreachable from bus " + std::to_string(grid.bus(0).id) + ")");
        break;
      }
  }
  return report;
}

inline const Eigen::MatrixXd& incidence_matrix(const GridModel& grid) { return grid.incidence(); }
inline const Eigen::MatrixXd& weighted_laplacian(const GridModel& grid) { return grid.laplacian(); }

/// Line flows P_e = B_ij (theta_i - theta_j) for a full bus angle vector.
inline Eigen::VectorXd dc_power_flow(const GridModel& grid, const Eigen::VectorXd& angles) {
  return grid.susceptances().cwiseProduct(grid.incidence().transpose() * angles);
}

/// Solver for Laplacian subsystems L[free,free] x = rhs - L[free,fixed] x_fixed.
/// The principal minor on the free set is positive definite whenever the grid
/// is connected and the fixed set is non-empty, so the factorization is done
/// once and reused.
class MinorSolver {
 public:
  MinorSolver(const GridModel& grid, std::vector<int> fixed_indices)
      : fixed_(std::move(fixed_indices)) {
    if (fixed_.empty())
      throw SingularSystemError("principal minor solve requires a non-empty fixed bus set");
    std::vector<char> is_fixed(grid.size(), 0);
    for (int i : fixed_) is_fixed.at(i) = 1;
    for (int i = 0; i < grid.size(); ++i)
      if (!is_fixed[i]) free_.push_back(i);

    const Eigen::MatrixXd& L = grid.laplacian();
    Eigen::MatrixXd minor(free_.size(), free_.size());
    coupling_.resize(free_.size(), fixed_.size());
    for (size_t r = 0; r < free_.size(); ++r) {
      for (size_t c = 0; c < free_.size(); ++c) minor(r, c) = L(free_[r], free_[c]);
      for (size_t c = 0; c < fixed_.size(); ++c) coupling_(r, c) = L(free_[r], fixed_[c]);
    }
    llt_.compute(minor);
    if (llt_.info() != Eigen::Success)
      throw SingularSystemError("Laplacian principal minor is not positive definite "
                                "(disconnected or invalid grid)");
  }

  const std::vector<int>& free_buses() const { return free_; }
  const std::vector<int>& fixed_buses() const { return fixed_; }

  /// rhs ordered like free_buses(), fixed values like fixed_buses().
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs_free,
                        const Eigen::VectorXd& fixed_values) const {
    return llt_.solve(rhs_free - coupling_ * fixed_values);
  }

  /// Assembles the full bus vector from solved free values and fixed values.
  Eigen::VectorXd assemble(const Eigen::VectorXd& free_values,
                           const Eigen::VectorXd& fixed_values) const {
    Eigen::VectorXd full(free_.size() + fixed_.size());
    for (size_t k = 0; k < free_.size(); ++k) full(free_[k]) = free_values(k);
    for (size_t k = 0; k < fixed_.size(); ++k) full(fixed_[k]) = fixed_values(k);
    return full;
  }

 private:
  std::vector<int> fixed_, free_;
  Eigen::MatrixXd coupling_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// One-shot principal minor solve. fixed holds (bus index, fixed value)
/// pairs; rhs is ordered like the resulting free bus list (all buses not in
/// fixed, in declaration order).
inline Eigen::VectorXd principal_minor_solve(const GridModel& grid,
                                             const std::vector<std::pair<int, double>>& fixed,
                                             const Eigen::VectorXd& rhs) {
  std::vector<int> idx;
  Eigen::VectorXd vals(fixed.size());
  for (size_t k = 0; k < fixed.size(); ++k) {
    idx.push_back(fixed[k].first);
    vals(k) = fixed[k].second;
  }
  MinorSolver solver(grid, idx);
  return solver.solve(rhs, vals);
}

}  // namespace efc
