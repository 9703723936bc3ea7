#pragma once

// Command-line front end: simulate, wf, pde, bounds, analyze, report.
//
// Option values come from, in increasing precedence: built-in defaults, a
// --config file of key=value lines named like the long flags, CML_<FLAG>
// environment variables, and the command line.
//
// Exit codes: 0 success, 2 invalid input or arguments, 3 runtime failure.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace cml {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitRuntime = 3;

struct SimulateSettings {
    std::string program = "sequential";
    double a = 0.1;
    double b = 0.25;
    double b0 = 0.05;
    int n0 = 0;  ///< 0: 100, or 40 atoms for smallspread
    int m0 = 64;
    int depth = 3;
    std::string p_file;
    std::uint64_t runs = 10000;
    std::uint64_t seed = 42;
    int workers = 0;
    bool serial = false;
    std::string trace_path;
    // wf
    int k = 1000;
    double h = 1e-5;
    double max_time = 1e3;
    bool no_bridge = false;
};

/// Probabilities separated by whitespace or commas; '#' starts a comment.
std::vector<double> read_probability_file(const std::string& path);

/// The JSON document written by `simulate` (and `wf` without --cov3).
nlohmann::ordered_json simulate_document(const SimulateSettings& s);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace cml
