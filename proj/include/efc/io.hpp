#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "efc/runner.hpp"
#include "efc/scenario.hpp"

namespace efc {

namespace detail {

/// Shortest decimal text that round-trips the double exactly.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);  // fixed newlines on every platform
  if (!out) throw Error("cannot open output file '" + p.string() + "'");
  return out;
}

}  // namespace detail

/// plant.csv, controller.csv and lyapunov.csv under `dir`. Powers in MW,
/// frequencies in Hz, multipliers and virtual angles in p.u.; identical
/// inputs produce byte-identical files.
inline void emit_timeseries(const Trajectory& traj, const Scenario& sc,
                            const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const GridModel& grid = sc.grid;
  const double base = grid.base_mva();
  const double nominal = grid.nominal_hz();
  const auto up_lines = sc.constraints_enabled ? upper_bounded_lines(grid) : std::vector<int>{};
  const auto lo_lines = sc.constraints_enabled ? lower_bounded_lines(grid) : std::vector<int>{};

  {
    auto out = detail::open_out(fs::path(dir) / "plant.csv");
    out << "time";
    for (int g : grid.generator_buses()) out << ",f_bus" << grid.bus(g).id;
    for (int g : grid.generator_buses()) out << ",pG_" << grid.bus(g).id;
    for (int h : grid.hvdc_buses()) out << ",pD_" << grid.bus(h).id;
    for (const Line& ln : grid.lines()) out << ",P_" << ln.from << "_" << ln.to;
    out << "\n";
    for (const auto& s : traj.samples) {
      out << detail::fmt(s.time);
      for (int k = 0; k < grid.generator_count(); ++k)
        out << "," << detail::fmt(nominal * (1.0 + s.freq_gen(k)));
      for (int k = 0; k < grid.generator_count(); ++k) out << "," << detail::fmt(base * s.p_gen(k));
      for (int k = 0; k < grid.hvdc_count(); ++k) out << "," << detail::fmt(base * s.p_hvdc(k));
      for (int e = 0; e < grid.line_count(); ++e) out << "," << detail::fmt(base * s.flow(e));
      out << "\n";
    }
  }
  {
    auto out = detail::open_out(fs::path(dir) / "controller.csv");
    out << "time";
    for (const Bus& b : grid.buses()) out << ",lambda_" << b.id;
    for (const Bus& b : grid.buses()) out << ",phi_" << b.id;
    for (int e : up_lines) out << ",gammaP_" << grid.line(e).from << "_" << grid.line(e).to;
    for (int e : lo_lines) out << ",gammaM_" << grid.line(e).from << "_" << grid.line(e).to;
    out << ",gate,law\n";
    for (const auto& s : traj.samples) {
      out << detail::fmt(s.time);
      for (int i = 0; i < grid.size(); ++i) out << "," << detail::fmt(s.lambda(i));
      for (int i = 0; i < grid.size(); ++i) out << "," << detail::fmt(s.phi(i));
      for (int k = 0; k < s.gamma_up.size(); ++k) out << "," << detail::fmt(s.gamma_up(k));
      for (int k = 0; k < s.gamma_lo.size(); ++k) out << "," << detail::fmt(s.gamma_lo(k));
      out << "," << s.gate << "," << s.law << "\n";
    }
  }
  {
    auto out = detail::open_out(fs::path(dir) / "lyapunov.csv");
    out << "time,V\n";
    for (const auto& s : traj.samples)
      if (std::isfinite(s.lyapunov))
        out << detail::fmt(s.time) << "," << detail::fmt(s.lyapunov) << "\n";
  }
}

inline void emit_report(const RunReport& rep, const Scenario& sc, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto out = detail::open_out(fs::path(dir) / "report.txt");
  const GridModel& grid = sc.grid;
  const double base = grid.base_mva();

  out << "scenario: " << sc.name << "\n";
  out << "law mode: " << to_string(sc.law) << "\n";
  out << "final law: " << to_string(rep.final_law) << "\n";
  out << "dead zone: " << (sc.dead_zone.enabled ? "enabled" : "disabled") << " at "
      << sc.dead_zone.threshold_hz << " Hz\n";
  out << "constraints: " << (sc.constraints_enabled ? "enabled" : "disabled") << "\n";
  out << "efc engaged: " << (rep.efc_engaged ? "yes" : "no");
  if (rep.efc_engaged) out << " (activation at " << rep.activation_time << " s)";
  out << "\n";
  out << "settled: " << (rep.settled ? "yes" : "no") << " (window " << sc.settle_window
      << " s, max change " << rep.settle_change << ")\n";
  out << "steady frequency: " << detail::fmt(rep.steady_freq_hz) << " Hz\n";

  out << "\nLCC steady power (MW):\n";
  for (int k = 0; k < grid.hvdc_count(); ++k) {
    const Bus& b = grid.bus(grid.hvdc_buses()[k]);
    out << "  bus " << b.id << ": " << detail::fmt(base * rep.steady_p_hvdc(k)) << " (schedule "
        << base * b.p_sched << ", regulation "
        << detail::fmt(base * (rep.steady_p_hvdc(k) - b.p_sched)) << ")\n";
  }

  out << "\nflow-limited lines (MW):\n";
  for (int e = 0; e < grid.line_count(); ++e) {
    const Line& ln = grid.line(e);
    if (!ln.bounded()) continue;
    const double flow = base * rep.steady_flow(e);
    bool exceeded = false;
    if (ln.limit_upper && flow > base * *ln.limit_upper) exceeded = true;
    if (ln.limit_lower && flow < base * *ln.limit_lower) exceeded = true;
    out << "  line " << ln.from << "-" << ln.to << ": " << detail::fmt(flow) << " in [";
    out << (ln.limit_lower ? std::to_string(base * *ln.limit_lower) : std::string("-inf"));
    out << ", ";
    out << (ln.limit_upper ? std::to_string(base * *ln.limit_upper) : std::string("+inf"));
    out << "] -> " << (exceeded ? "EXCEEDED" : "ok") << "\n";
  }

  out << "\noptimality:\n";
  if (rep.kkt_valid) {
    out << "  kkt stationarity:     " << detail::fmt(rep.kkt.stationarity) << "\n";
    out << "  kkt complementarity:  " << detail::fmt(rep.kkt.complementarity) << "\n";
    out << "  kkt primal:           " << detail::fmt(rep.kkt.primal) << "\n";
    out << "  kkt dual:             " << detail::fmt(rep.kkt.dual) << "\n";
  } else {
    out << "  kkt residuals: not evaluated (EFC never engaged)\n";
  }
  if (rep.oracle_valid && rep.oracle) {
    out << "  reference objective:  " << detail::fmt(rep.oracle->objective) << "\n";
    out << "  active set:";
    if (rep.oracle->active_set.empty()) out << " (empty)";
    for (const auto& a : rep.oracle->active_set)
      out << " line " << grid.line(a.line).from << "-" << grid.line(a.line).to
          << (a.side == BoundSide::Upper ? " upper" : " lower");
    out << "\n";
    if (rep.kkt_valid)
      out << "  primal match error:   " << detail::fmt(rep.oracle_primal_error) << " p.u.\n";
  } else {
    out << "  reference problem infeasible or skipped\n";
  }

  out << "\nlyapunov descent: " << rep.lyapunov_violations << " violations over "
      << rep.lyapunov_checked_pairs << " checked pairs (max V " << detail::fmt(rep.lyapunov_max)
      << ")\n";
  out << "saturation steps: " << rep.saturation_steps << "\n";
  out << "max order step jump: " << detail::fmt(rep.max_order_step_jump) << " p.u.\n";
  out << "gamma minimum: " << detail::fmt(rep.gamma_min) << "\n";
  out << "communication lines (" << to_string(rep.comm.law) << "): " << rep.comm.line_count
      << "\n";
  out << "wall time: " << rep.wall_seconds << " s\n";
}

namespace detail {

inline void write_plot(const std::filesystem::path& path, const std::string& body) {
  auto out = open_out(path);
  out << "#!/usr/bin/env python3\n"
      << "# Reads the CSV files next to this script and renders one figure.\n"
      << "import csv, os\n"
      << "import matplotlib\n"
      << "matplotlib.use('Agg')\n"
      << "import matplotlib.pyplot as plt\n"
      << "here = os.path.dirname(os.path.abspath(__file__))\n"
      << "def load(name):\n"
      << "    with open(os.path.join(here, name)) as f:\n"
      << "        rows = list(csv.reader(f))\n"
      << "    head = rows[0]\n"
      << "    data = {h: [float(r[i]) for r in rows[1:]] for i, h in enumerate(head)}\n"
      << "    return head, data\n"
      << body;
}

}  // namespace detail

/// Python scripts that render the run's figures from the CSVs: system
/// frequency, LCC powers, limited line flows and the regulation allocation.
inline void emit_plots(const Trajectory& traj, const Scenario& sc, const std::string& dir) {
  namespace fs = std::filesystem;
  if (traj.samples.empty()) return;
  fs::create_directories(dir);
  const GridModel& grid = sc.grid;
  const double base = grid.base_mva();

  {
    std::ostringstream b;
    b << "head, d = load('plant.csv')\n"
      << "fig, ax = plt.subplots(figsize=(7, 4))\n"
      << "for h in head:\n"
      << "    if h.startswith('f_bus'):\n"
      << "        ax.plot(d['time'], d[h], label=h)\n"
      << "ax.axhline(" << grid.nominal_hz() << ", color='k', lw=0.6, ls=':')\n";
    if (sc.dead_zone.enabled)
      b << "ax.axhline(" << sc.dead_zone.threshold_hz
        << ", color='r', lw=0.8, ls='--', label='dead zone')\n";
    b << "ax.set_xlabel('time [s]'); ax.set_ylabel('frequency [Hz]')\n"
      << "ax.legend(fontsize=7, ncol=2); ax.grid(alpha=0.3)\n"
      << "fig.tight_layout(); fig.savefig(os.path.join(here, 'frequency.png'), dpi=150)\n";
    detail::write_plot(fs::path(dir) / "plot_frequency.py", b.str());
  }
  {
    std::ostringstream b;
    b << "head, d = load('plant.csv')\n"
      << "fig, ax = plt.subplots(figsize=(7, 4))\n"
      << "for h in head:\n"
      << "    if h.startswith('pD_'):\n"
      << "        ax.plot(d['time'], d[h], label=h)\n";
    for (int h : grid.hvdc_buses()) {
      const Bus& bus = grid.bus(h);
      if (bus.p_max)
        b << "ax.axhline(" << base * *bus.p_max << ", color='k', lw=0.8, ls='--')\n";
      if (bus.p_min)
        b << "ax.axhline(" << base * *bus.p_min << ", color='k', lw=0.8, ls='--')\n";
    }
    b << "ax.set_xlabel('time [s]'); ax.set_ylabel('LCC power [MW]')\n"
      << "ax.legend(fontsize=8); ax.grid(alpha=0.3)\n"
      << "fig.tight_layout(); fig.savefig(os.path.join(here, 'lcc_power.png'), dpi=150)\n";
    detail::write_plot(fs::path(dir) / "plot_lcc_power.py", b.str());
  }
  {
    std::ostringstream b;
    b << "head, d = load('plant.csv')\n"
      << "fig, ax = plt.subplots(figsize=(7, 4))\n";
    for (int e = 0; e < grid.line_count(); ++e) {
      const Line& ln = grid.line(e);
      if (!ln.bounded()) continue;
      b << "ax.plot(d['time'], d['P_" << ln.from << "_" << ln.to << "'], label='line " << ln.from
        << "-" << ln.to << "')\n";
      if (ln.limit_upper)
        b << "ax.axhline(" << base * *ln.limit_upper << ", color='k', lw=0.8, ls='--')\n";
      if (ln.limit_lower)
        b << "ax.axhline(" << base * *ln.limit_lower << ", color='k', lw=0.8, ls='--')\n";
    }
    b << "ax.set_xlabel('time [s]'); ax.set_ylabel('line flow [MW]')\n"
      << "ax.legend(fontsize=8); ax.grid(alpha=0.3)\n"
      << "fig.tight_layout(); fig.savefig(os.path.join(here, 'line_flows.png'), dpi=150)\n";
    detail::write_plot(fs::path(dir) / "plot_line_flows.py", b.str());
  }
  {
    std::ostringstream b;
    b << "head, d = load('plant.csv')\n"
      << "names, regs, margins = [], [], []\n";
    for (int k = 0; k < grid.hvdc_count(); ++k) {
      const Bus& bus = grid.bus(grid.hvdc_buses()[k]);
      b << "names.append('bus " << bus.id << "')\n"
        << "regs.append(d['pD_" << bus.id << "'][-1] - " << base * bus.p_sched << ")\n"
        << "margins.append(" << base * bus.margin << ")\n";
    }
    b << "fig, ax = plt.subplots(figsize=(6, 4))\n"
      << "x = range(len(names))\n"
      << "ax.bar([i - 0.2 for i in x], regs, width=0.4, label='steady regulation [MW]')\n"
      << "ax.bar([i + 0.2 for i in x], margins, width=0.4, label='regulation margin [MW]')\n"
      << "ax.set_xticks(list(x)); ax.set_xticklabels(names)\n"
      << "ax.legend(); ax.grid(alpha=0.3, axis='y')\n"
      << "fig.tight_layout(); fig.savefig(os.path.join(here, 'allocation.png'), dpi=150)\n";
    detail::write_plot(fs::path(dir) / "plot_allocation.py", b.str());
  }
}

/// Text dump of the reference optimum, for the oracle subcommand.
inline void emit_oracle(const TsoefcSolution& s, const TsoefcProblem& problem,
                        const Scenario& sc, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto out = detail::open_out(fs::path(dir) / "oracle.txt");
  const GridModel& grid = *problem.grid;
  const double base = grid.base_mva();
  out << "scenario: " << sc.name << "\n";
  out << "objective: " << detail::fmt(s.objective) << "\n";
  out << "active set:";
  if (s.active_set.empty()) out << " (empty)";
  for (const auto& a : s.active_set)
    out << " line " << grid.line(a.line).from << "-" << grid.line(a.line).to
        << (a.side == BoundSide::Upper ? " upper" : " lower");
  out << "\n\ngenerators (MW):\n";
  for (int k = 0; k < grid.generator_count(); ++k)
    out << "  bus " << grid.bus(grid.generator_buses()[k]).id << ": p* = "
        << detail::fmt(base * s.p_gen(k)) << "\n";
  out << "\nLCC-HVDC (MW):\n";
  for (int k = 0; k < grid.hvdc_count(); ++k)
    out << "  bus " << grid.bus(grid.hvdc_buses()[k]).id << ": p* = "
        << detail::fmt(base * s.p_hvdc(k)) << "\n";
  out << "\nflows on limited lines (MW):\n";
  for (int e = 0; e < grid.line_count(); ++e)
    if (grid.line(e).bounded())
      out << "  line " << grid.line(e).from << "-" << grid.line(e).to << ": "
          << detail::fmt(base * s.flow(e)) << "\n";
  out << "\nlambda (p.u.):\n";
  for (int i = 0; i < grid.size(); ++i)
    out << "  bus " << grid.bus(i).id << ": " << detail::fmt(s.lambda(i)) << "\n";
  const KktResiduals r = kkt_residuals(problem, to_point(s));
  out << "\nkkt residual: " << detail::fmt(r.max_abs()) << "\n";
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw Error("csv column '" + name + "' not found");
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open csv file '" + path + "'");
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw Error("csv file '" + path + "' is empty");
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) t.header.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    while (std::getline(ls, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace efc
