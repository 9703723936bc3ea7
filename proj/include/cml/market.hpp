#pragma once

// Ingestion of quoted winning probabilities (CSV time,contestant,prob) and
// crossing counts on the observed paths.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cml/analytic.hpp"
#include "cml/monitor.hpp"

namespace cml {

inline constexpr double kNormalisationSlack = 0.05;

struct MarketSample {
    std::int64_t time = 0; ///< seconds since the epoch
    double prob = 0.0;
};

struct MarketSeries {
    std::vector<std::string> contestants;        ///< in order of first appearance
    std::vector<std::vector<MarketSample>> paths; ///< parallel to contestants
    std::vector<std::int64_t> renormalised;      ///< common timestamps whose sum was not 1
};

/// Seconds since the epoch for an integer or an ISO-8601 date/time
/// (YYYY-MM-DD[THH:MM[:SS[.fff]]][Z|+HH:MM|-HH:MM]). Throws InputError.
std::int64_t parse_timestamp(std::string_view text);

MarketSeries parse_market_csv(std::istream& in);
MarketSeries ingest_market_csv(const std::string& path);

enum class Interpolation { linear, step };
Interpolation parse_interpolation(std::string_view name);

/// Monitor after following the path through the given samples.
MonitorState crossing_monitor(std::span<const double> path, const ThresholdPair& pair,
                              Interpolation interp = Interpolation::linear);

struct MarketStats {
    ThresholdPair pair{0.1, 0.25};
    std::vector<std::string> contestants;
    std::vector<MonitorState> monitors;
    int n_b = 0;
    int d_ab = 0;
    BoundBundle expected;
};

MarketStats crossing_stats_from_series(const MarketSeries& series, const ThresholdPair& pair,
                                       Interpolation interp = Interpolation::linear);

nlohmann::ordered_json to_json(const MarketStats& stats);

} // namespace cml
