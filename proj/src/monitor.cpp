#include "cml/monitor.hpp"

namespace cml {

std::string_view to_string(MonitorStatus status) {
    switch (status) {
    case MonitorStatus::pre_b: return "pre_b";
    case MonitorStatus::active: return "active";
    case MonitorStatus::inactive: return "inactive";
    }
    return "unknown";
}

MonitorState start_monitor(double start, const ThresholdPair& pair) {
    MonitorState m;
    m.sup_value = start;
    m.visit(start, pair);
    return m;
}

} // namespace cml
