#pragma once

#include <string_view>

#include "cml/analytic.hpp"

namespace cml {

/// Two levels closer than this are the same level; a value this close to a
/// threshold has reached it.
inline constexpr double kLevelTolerance = 1e-12;

enum class MonitorStatus { pre_b, active, inactive };

std::string_view to_string(MonitorStatus status);

/// Downcrossing monitor of one component.
///
/// A component is inactive until it first reaches b, active from then until
/// it next reaches a (which completes one downcrossing), inactive until it
/// reaches b again, and so on.
struct MonitorState {
    MonitorStatus status = MonitorStatus::pre_b;
    bool reached_b = false;
    int downcrossings = 0;
    double sup_value = 0.0;

    /// Record that the path touched `value`. Only touches at or above b and
    /// at or below a change the status.
    void visit(double value, const ThresholdPair& pair) noexcept {
        if (value > sup_value) sup_value = value;
        if (value >= pair.b() - kLevelTolerance) {
            reached_b = true;
            status = MonitorStatus::active;
        } else if (value <= pair.a() + kLevelTolerance && status == MonitorStatus::active) {
            ++downcrossings;
            status = MonitorStatus::inactive;
        }
    }

    bool active() const noexcept { return status == MonitorStatus::active; }

    friend bool operator==(const MonitorState&, const MonitorState&) = default;
};

/// Fresh monitor for a path starting at `start`.
MonitorState start_monitor(double start, const ThresholdPair& pair);

} // namespace cml
