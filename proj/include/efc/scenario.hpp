#pragma once

#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "efc/control.hpp"
#include "efc/coordination.hpp"
#include "efc/grid.hpp"
#include "efc/plant.hpp"

namespace efc {

enum class LawMode { Auto, ForceSemi, ForceFully, DroopOnly };

inline const char* to_string(LawMode m) {
  switch (m) {
    case LawMode::Auto: return "auto";
    case LawMode::ForceSemi: return "force-semi";
    case LawMode::ForceFully: return "force-fully";
    case LawMode::DroopOnly: return "droop-only";
  }
  return "?";
}

/// A complete simulation case: the grid, the events, the control
/// configuration and the integration settings.
struct Scenario {
  explicit Scenario(GridModel g) : grid(std::move(g)) {}

  std::string name;
  GridModel grid;
  DisturbanceSet disturbances;
  CenterTimeline center;
  DeadZoneConfig dead_zone;
  double k_lambda = 0.01;
  double k_phi = 0.01;
  double k_gamma = 0.005;
  LawMode law = LawMode::Auto;
  bool constraints_enabled = true;
  double t_end = 200.0;
  double dt = 1e-3;
  int decimation = 100;
  double settle_window = 30.0;  ///< trailing window for steady-state extraction, s
  double settle_tol = 1e-6;     ///< per-component change tolerance inside the window

  ControlGains gains() const {
    return uniform_gains(grid, k_lambda, k_phi, k_gamma, constraints_enabled);
  }

  /// Injections after every declared disturbance has been applied.
  Eigen::VectorXd post_fault_injections() const {
    Eigen::VectorXd p = grid.base_injections();
    for (const Disturbance& d : disturbances) p(grid.index_of(d.bus)) += d.delta_p;
    return p;
  }

  double last_event_time() const {
    double t = 0.0;
    for (const Disturbance& d : disturbances) t = std::max(t, d.time);
    return t;
  }
};

inline LawMode parse_law_mode(const std::string& s) {
  if (s == "auto") return LawMode::Auto;
  if (s == "force-semi" || s == "semi") return LawMode::ForceSemi;
  if (s == "force-fully" || s == "fully") return LawMode::ForceFully;
  if (s == "droop-only" || s == "droop") return LawMode::DroopOnly;
  throw ParseError("unknown law mode '" + s + "' (auto, force-semi, force-fully, droop-only)");
}

namespace detail {

inline double num_at(const nlohmann::json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key)) throw ParseError(ctx + ": missing field '" + key + "'");
  if (!j[key].is_number()) throw ParseError(ctx + ": field '" + key + "' must be a number");
  return j[key].get<double>();
}

inline double num_or(const nlohmann::json& j, const char* key, double fallback,
                     const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) throw ParseError(ctx + ": field '" + key + "' must be a number");
  return j[key].get<double>();
}

}  // namespace detail

/// Parses and validates a scenario file. Parse problems raise ParseError
/// with field context; semantic problems raise ValidationError listing the
/// violations.
inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scenario file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("scenario '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw ParseError("scenario '" + path + "': top level must be an object");

  using detail::num_at;
  using detail::num_or;

  const double base_mva = num_or(j, "base_mva", 100.0, "scenario");
  const double nominal_hz = num_or(j, "nominal_hz", 50.0, "scenario");

  std::vector<Bus> buses;
  if (!j.contains("buses") || !j["buses"].is_array())
    throw ParseError("scenario: 'buses' must be an array");
  for (size_t i = 0; i < j["buses"].size(); ++i) {
    const auto& jb = j["buses"][i];
    const std::string ctx = "buses[" + std::to_string(i) + "]";
    Bus b;
    b.id = static_cast<int>(num_at(jb, "id", ctx));
    const std::string kind = jb.value("kind", "passive");
    if (kind == "generator") {
      b.kind = BusKind::Generator;
      b.inertia = num_at(jb, "inertia", ctx);
      b.damping = num_at(jb, "damping", ctx);
      b.t_reg = num_at(jb, "t_reg", ctx);
      b.alpha = num_at(jb, "alpha", ctx);
      b.p_sched = num_or(jb, "p_sched", 0.0, ctx);
    } else if (kind == "hvdc") {
      b.kind = BusKind::HvdcConnected;
      b.t_reg = num_at(jb, "t_reg", ctx);
      b.beta_tilde = num_at(jb, "beta_tilde", ctx);
      b.margin = num_at(jb, "margin", ctx);
      b.p_sched = num_or(jb, "p_sched", 0.0, ctx);
      if (jb.contains("p_min")) b.p_min = num_at(jb, "p_min", ctx);
      if (jb.contains("p_max")) b.p_max = num_at(jb, "p_max", ctx);
    } else if (kind == "passive") {
      b.kind = BusKind::Passive;
    } else {
      throw ParseError(ctx + ": unknown kind '" + kind + "'");
    }
    b.p_in = num_or(jb, "p_in", 0.0, ctx);
    buses.push_back(b);
  }

  std::vector<Line> lines;
  if (!j.contains("lines") || !j["lines"].is_array())
    throw ParseError("scenario: 'lines' must be an array");
  for (size_t i = 0; i < j["lines"].size(); ++i) {
    const auto& jl = j["lines"][i];
    const std::string ctx = "lines[" + std::to_string(i) + "]";
    Line ln;
    ln.from = static_cast<int>(num_at(jl, "from", ctx));
    ln.to = static_cast<int>(num_at(jl, "to", ctx));
    ln.susceptance = num_at(jl, "susceptance", ctx);
    if (jl.contains("limit_upper")) ln.limit_upper = num_at(jl, "limit_upper", ctx);
    if (jl.contains("limit_lower")) ln.limit_lower = num_at(jl, "limit_lower", ctx);
    lines.push_back(ln);
  }

  Scenario sc(GridModel(std::move(buses), std::move(lines), base_mva, nominal_hz));
  sc.name = j.value("name", std::string("scenario"));

  auto violations = validate_grid(sc.grid);
  if (!violations.empty()) {
    std::string msg = "scenario '" + sc.name + "' grid is invalid:";
    for (const auto& v : violations) msg += "\n  - " + v;
    throw ValidationError(msg);
  }

  if (j.contains("disturbances")) {
    for (size_t i = 0; i < j["disturbances"].size(); ++i) {
      const auto& jd = j["disturbances"][i];
      const std::string ctx = "disturbances[" + std::to_string(i) + "]";
      Disturbance d;
      d.bus = static_cast<int>(num_at(jd, "bus", ctx));
      d.delta_p = num_at(jd, "delta_p", ctx);
      d.time = num_or(jd, "time", 0.0, ctx);
      if (!sc.grid.has_bus(d.bus)) throw ValidationError(ctx + ": unknown bus " + std::to_string(d.bus));
      if (d.time < 0.0) throw ValidationError(ctx + ": activation time must be >= 0");
      sc.disturbances.push_back(d);
    }
  }

  if (j.contains("center")) {
    std::vector<CenterTimeline::Event> events;
    for (size_t i = 0; i < j["center"].size(); ++i) {
      const auto& je = j["center"][i];
      const std::string ctx = "center[" + std::to_string(i) + "]";
      const std::string status = je.value("status", "normal");
      if (status != "normal" && status != "failed")
        throw ParseError(ctx + ": status must be 'normal' or 'failed'");
      events.push_back({num_at(je, "time", ctx),
                        status == "normal" ? CenterStatus::Normal : CenterStatus::Failed});
    }
    sc.center = CenterTimeline(std::move(events));
  }

  sc.dead_zone.nominal_hz = nominal_hz;
  if (j.contains("dead_zone")) {
    const auto& jd = j["dead_zone"];
    sc.dead_zone.enabled = jd.value("enabled", true);
    sc.dead_zone.threshold_hz = num_or(jd, "threshold_hz", 49.8, "dead_zone");
    sc.dead_zone.latching = jd.value("latching", true);
    if (sc.dead_zone.enabled &&
        (sc.dead_zone.threshold_hz <= 0.99 * nominal_hz || sc.dead_zone.threshold_hz >= nominal_hz))
      throw ValidationError("dead_zone: threshold must lie between the load-shedding level (" +
                            std::to_string(0.99 * nominal_hz) + " Hz) and the nominal frequency");
  }

  if (j.contains("gains")) {
    const auto& jg = j["gains"];
    sc.k_lambda = num_or(jg, "k_lambda", sc.k_lambda, "gains");
    sc.k_phi = num_or(jg, "k_phi", sc.k_phi, "gains");
    sc.k_gamma = num_or(jg, "k_gamma", sc.k_gamma, "gains");
    if (sc.k_lambda <= 0 || sc.k_phi <= 0 || sc.k_gamma <= 0)
      throw ValidationError("gains: control gains must be strictly positive");
  }

  if (j.contains("law")) sc.law = parse_law_mode(j["law"].get<std::string>());
  if (j.contains("constraints")) sc.constraints_enabled = j["constraints"].get<bool>();

  if (j.contains("integration")) {
    const auto& ji = j["integration"];
    sc.t_end = num_or(ji, "t_end", sc.t_end, "integration");
    sc.dt = num_or(ji, "dt", sc.dt, "integration");
  }
  if (sc.t_end <= 0.0) throw ValidationError("integration: t_end must be > 0");
  if (sc.dt <= 0.0) throw ValidationError("integration: dt must be > 0");

  if (j.contains("output")) {
    const auto& jo = j["output"];
    sc.decimation = static_cast<int>(num_or(jo, "decimation", sc.decimation, "output"));
    sc.settle_window = num_or(jo, "window", sc.settle_window, "output");
    sc.settle_tol = num_or(jo, "settle_tol", sc.settle_tol, "output");
    if (sc.decimation < 1) throw ValidationError("output: decimation must be >= 1");
  }

  // The runner starts from a synchronous equilibrium; the pre-fault
  // schedule must balance.
  const double balance = sc.grid.base_injections().sum() + sc.grid.gen_schedule().sum() +
                         sc.grid.hvdc_schedule().sum();
  if (std::abs(balance) > 1e-9)
    throw ValidationError("scenario '" + sc.name + "': pre-fault schedule is unbalanced by " +
                          std::to_string(balance) + " p.u.");
  return sc;
}

}  // namespace efc
