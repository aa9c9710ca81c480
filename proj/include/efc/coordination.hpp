#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "efc/control.hpp"
#include "efc/grid.hpp"

namespace efc {

enum class CenterStatus { Normal, Failed };

inline const char* to_string(CenterStatus s) {
  return s == CenterStatus::Normal ? "normal" : "failed";
}

/// Time-stamped health of the AC main system control center. Failure is a
/// scenario event, not a stochastic process.
class CenterTimeline {
 public:
  struct Event {
    double time;
    CenterStatus status;
  };

  CenterTimeline() : events_{{0.0, CenterStatus::Normal}} {}

  explicit CenterTimeline(std::vector<Event> events) : events_(std::move(events)) {
    if (events_.empty() || events_.front().time != 0.0)
      throw ValidationError("center timeline must define a status at t = 0");
    for (size_t k = 1; k < events_.size(); ++k)
      if (events_[k].time <= events_[k - 1].time)
        throw ValidationError("center timeline times must be strictly increasing");
  }

  CenterStatus at(double t) const {
    CenterStatus s = events_.front().status;
    for (const Event& e : events_)
      if (e.time <= t) s = e.status;
    return s;
  }

  const std::vector<Event>& events() const { return events_; }

 private:
  std::vector<Event> events_;
};

/// Complementary law selection (dead zone first, then center health):
/// no emergency -> droop; emergency with a healthy center -> semi-distributed;
/// emergency with a failed center -> fully-distributed backup.
inline ControlLaw select_law(CenterStatus status, GateState gate) {
  if (gate == GateState::Inactive) return ControlLaw::Droop;
  return status == CenterStatus::Normal ? ControlLaw::SemiDistributed
                                        : ControlLaw::FullyDistributed;
}

/// Switches the active law while keeping the controller trajectory
/// continuous. The state always carries lambda/phi for every bus, so the
/// semi -> fully direction seeds the generator/passive integrators with the
/// last central solution and the reverse direction simply hands those
/// entries back to the central solve. gamma passes through unchanged.
inline ControllerState handover(const ControllerState& ctrl, ControlLaw from, ControlLaw to) {
  if (from == to) throw std::invalid_argument("handover requires two distinct laws");
  ControllerState out = ctrl;
  out.active_law = to;
  return out;
}

struct CommReport {
  ControlLaw law;
  long line_count = 0;
  std::vector<std::string> payload;  ///< variable names exchanged per line
};

/// Communication burden of a law, measured in required communication lines:
/// 2*n_e for the fully-distributed law (both directions of every branch),
/// 2*n - n_P for the semi-distributed law (an order/iteration pair per
/// generator and HVDC bus, a measurement uplink only for passive buses).
inline CommReport comm_line_count(const GridModel& grid, ControlLaw law) {
  CommReport r;
  r.law = law;
  switch (law) {
    case ControlLaw::FullyDistributed:
      r.line_count = 2L * grid.line_count();
      r.payload = {"theta", "phi", "lambda"};
      break;
    case ControlLaw::SemiDistributed:
      r.line_count = 2L * grid.size() - grid.passive_count();
      r.payload = {"theta", "omega", "phi", "lambda", "u"};
      break;
    case ControlLaw::Droop:
      r.line_count = 0;
      break;
  }
  return r;
}

}  // namespace efc
