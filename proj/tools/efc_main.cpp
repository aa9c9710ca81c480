#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "efc/io.hpp"
#include "efc/runner.hpp"
#include "efc/scenario.hpp"

namespace {

struct Overrides {
  std::string law;
  std::string dead_zone;
  std::string constraints;
};

void apply(const Overrides& ov, efc::Scenario& sc) {
  if (!ov.law.empty()) sc.law = efc::parse_law_mode(ov.law);
  if (!ov.dead_zone.empty()) sc.dead_zone.enabled = ov.dead_zone == "on";
  if (!ov.constraints.empty()) sc.constraints_enabled = ov.constraints == "on";
}

void add_switch(CLI::App* cmd, std::string& target, const char* name, const char* desc) {
  cmd->add_option(name, target, desc)->check(CLI::IsMember({"on", "off"}));
}

int do_run(const std::string& scenario_path, const std::string& out_dir, const Overrides& ov) {
  efc::Scenario sc = efc::load_scenario(scenario_path);
  apply(ov, sc);
  efc::RunResult r = efc::run(sc);
  efc::emit_timeseries(r.trajectory, sc, out_dir);
  efc::emit_report(r.report, sc, out_dir);
  efc::emit_plots(r.trajectory, sc, out_dir);
  std::printf("run complete: %s -> %s\n", sc.name.c_str(), out_dir.c_str());
  std::printf("  settled: %s, steady frequency %.6f Hz, wall %.2f s\n",
              r.report.settled ? "yes" : "no", r.report.steady_freq_hz, r.report.wall_seconds);
  return 0;
}

int do_oracle(const std::string& scenario_path, const std::string& out_dir, const Overrides& ov) {
  efc::Scenario sc = efc::load_scenario(scenario_path);
  apply(ov, sc);
  efc::TsoefcProblem problem{&sc.grid, sc.post_fault_injections(), sc.constraints_enabled};
  efc::TsoefcSolution sol = efc::solve_tsoefc(problem);
  efc::emit_oracle(sol, problem, sc, out_dir);
  std::printf("oracle solved: objective %.9g, %zu active bounds -> %s/oracle.txt\n",
              sol.objective, sol.active_set.size(), out_dir.c_str());
  return 0;
}

int do_check(const std::string& scenario_path, const Overrides& ov) {
  efc::Scenario sc = efc::load_scenario(scenario_path);
  apply(ov, sc);
  efc::RunResult r = efc::run(sc);
  const efc::RunReport& rep = r.report;
  const double base = sc.grid.base_mva();

  int failures = 0;
  auto verdict = [&failures](bool ok, const std::string& what) {
    std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", what.c_str());
    if (!ok) ++failures;
  };

  verdict(rep.settled, "trajectory settles inside the trailing window");
  if (rep.efc_engaged) {
    verdict(std::abs(rep.steady_freq_hz - sc.grid.nominal_hz()) < 1e-3,
            "steady frequency within 1e-3 Hz of nominal");
    verdict(rep.kkt_valid && rep.kkt.max_abs() < 1e-6,
            "KKT residuals below 1e-6 at the steady state");
    if (rep.oracle_valid)
      verdict(rep.oracle_primal_error < 1e-4,
              "steady state matches the reference optimum within 1e-4 p.u.");
    if (sc.constraints_enabled) {
      bool in_band = true;
      for (int e = 0; e < sc.grid.line_count(); ++e) {
        const efc::Line& ln = sc.grid.line(e);
        if (!ln.bounded()) continue;
        const double flow = base * rep.steady_flow(e);
        if (ln.limit_upper && flow > base * *ln.limit_upper + 0.1) in_band = false;
        if (ln.limit_lower && flow < base * *ln.limit_lower - 0.1) in_band = false;
      }
      verdict(in_band, "flow-limited lines stay within their bands (0.1 MW slack)");
    }
  }
  verdict(rep.gamma_min >= 0.0, "line multipliers never leave the nonnegative orthant");
  if (rep.lyapunov_checked_pairs > 0)
    verdict(rep.lyapunov_violations == 0,
            "Lyapunov function non-increasing between projection transitions");
  return failures == 0 ? 0 : 1;
}

int do_plot(const std::string& dir) {
  namespace fs = std::filesystem;
  int found = 0;
  for (const char* script : {"plot_frequency.py", "plot_lcc_power.py", "plot_line_flows.py",
                             "plot_allocation.py"}) {
    fs::path p = fs::path(dir) / script;
    if (!fs::exists(p)) continue;
    ++found;
    const std::string cmd = "python3 '" + p.string() + "'";
    if (std::system(cmd.c_str()) != 0) {
      std::fprintf(stderr, "plot script failed: %s\n", p.string().c_str());
      return 1;
    }
  }
  if (found == 0) {
    std::fprintf(stderr, "no plot scripts in '%s' (produce them with `efc run`)\n", dir.c_str());
    return 1;
  }
  std::printf("rendered %d figures in %s\n", found, dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed emergency frequency control simulator"};
  app.require_subcommand(1);

  std::string scenario_path, out_dir = "out";
  Overrides ov;

  CLI::App* cmd_run = app.add_subcommand("run", "simulate a scenario and emit CSVs plus report");
  cmd_run->add_option("scenario", scenario_path, "scenario file")->required();
  cmd_run->add_option("--out", out_dir, "output directory");
  cmd_run->add_option("--law", ov.law, "law mode: auto|semi|fully|droop");
  add_switch(cmd_run, ov.dead_zone, "--dead-zone", "dead zone on|off");
  add_switch(cmd_run, ov.constraints, "--constraints", "line-flow constraints on|off");

  CLI::App* cmd_oracle = app.add_subcommand("oracle", "solve the steady-state problem only");
  cmd_oracle->add_option("scenario", scenario_path, "scenario file")->required();
  cmd_oracle->add_option("--out", out_dir, "output directory");
  add_switch(cmd_oracle, ov.constraints, "--constraints", "line-flow constraints on|off");

  CLI::App* cmd_check = app.add_subcommand("check", "run the scenario's acceptance checks");
  cmd_check->add_option("scenario", scenario_path, "scenario file")->required();
  cmd_check->add_option("--law", ov.law, "law mode: auto|semi|fully|droop");
  add_switch(cmd_check, ov.dead_zone, "--dead-zone", "dead zone on|off");
  add_switch(cmd_check, ov.constraints, "--constraints", "line-flow constraints on|off");

  CLI::App* cmd_plot = app.add_subcommand("plot", "render the figures of a finished run");
  cmd_plot->add_option("dir", out_dir, "directory with run outputs")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_run->parsed()) return do_run(scenario_path, out_dir, ov);
    if (cmd_oracle->parsed()) return do_oracle(scenario_path, out_dir, ov);
    if (cmd_check->parsed()) return do_check(scenario_path, ov);
    if (cmd_plot->parsed()) return do_plot(out_dir);
  } catch (const efc::ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return 1;
  } catch (const efc::ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 1;
  } catch (const efc::Error& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 2;
  }
  return 0;
}
