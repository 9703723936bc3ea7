#pragma once

// The extremal constructions, expressed as stage planners for the engine.
//
// A ConstructionProgram is immutable and shared between runs. Each run
// creates its own planner state, which inspects the live configuration and
// emits the next stage until the process is absorbed.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cml/analytic.hpp"
#include "cml/engine.hpp"
#include "cml/rng.hpp"

namespace cml {

enum class ProgramKind { survivor, survivor_zero_prefix, sequential, small_spread, embed_prefix };

std::string_view to_string(ProgramKind kind);
/// Accepts the CLI names: survivor, survivor0, sequential, smallspread, embed.
ProgramKind parse_program_kind(std::string_view name);

/// One atom of a dyadic refinement, tagged with the atom of p it came from.
struct RefinedAtom {
    double value = 0.0;
    int parent = 0;
    friend bool operator==(const RefinedAtom&, const RefinedAtom&) = default;
};

struct ConstructionProgram {
    ProgramKind kind = ProgramKind::sequential;
    std::vector<double> initial; ///< starting component values, by id
    std::vector<int> parents;    ///< per starting component, -1 if unsplit
    ThresholdPair levels{0.1, 0.25}; ///< the construction's own thresholds
    double b0 = 0.0;                 ///< sequential
    int m0 = 0;                      ///< survivor0
    int depth = 0;                   ///< embed
    /// embed: chain[m] is the ranked refinement p^m, m = 0..depth
    std::vector<std::vector<RefinedAtom>> chain;
};

/// Survivor: freeze at b while pairs of components below b are reflection
/// coupled; N_b takes only the values floor(1/b) and ceil(1/b).
ConstructionProgram survivor_program(std::span<const double> p, const ThresholdPair& pair);
ConstructionProgram survivor_program(int n0, const ThresholdPair& pair);

/// Survivor started from M0 atoms at 1/M0, passing through m atoms at 1/m
/// for every m down to ceil(1/b).
ConstructionProgram survivor_zero_prefix_program(int m0, const ThresholdPair& pair);

/// Components examined one at a time with the rest tied; geometric profile
/// p_i = b0 (1 - b0)^(i-1) truncated at tail mass 1e-12.
ConstructionProgram sequential_program(double b0, const ThresholdPair& pair);

/// Stage machine with deterministic ranked evolution, then tied continuation.
ConstructionProgram small_spread_program(std::span<const double> p0, const ThresholdPair& pair);

/// Start at the depth-k dyadic refinement of p and merge back to p.
ConstructionProgram embed_prefix_program(std::span<const double> p, int k, const ThresholdPair& pair);

/// Geometric profile used by the sequential program.
std::vector<double> geometric_profile(double b0, double tail_mass = 1e-12);

/// p^0 = rank(p), ..., p^k: atoms above 2^-m split into 2^j equal copies,
/// j minimal with 2^-j p_i <= 2^-m. Each level is ranked.
std::vector<std::vector<RefinedAtom>> dyadic_refinement_chain(std::span<const double> p, int k);

RunRecord run_program(const ConstructionProgram& program, const ThresholdPair& pair, RandomStream& rng,
                      const EngineOptions& options = {});

} // namespace cml
