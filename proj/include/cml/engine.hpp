#pragma once

// Time-free sampler for staged constructions of feasible processes.
//
// A stage moves one driver component between adjacent levels of a grid; the
// driver's next level is chosen with the gambler's-ruin probabilities, which
// are exact for any continuous martingale. Tied components follow affine maps
// of the driver. The grid contains every driver level at which any moving
// component touches a or b, so crossing monitors are exact.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "cml/analytic.hpp"
#include "cml/monitor.hpp"
#include "cml/rng.hpp"

namespace cml {

struct Component {
    int id = 0;
    int parent = -1; ///< originating atom for split components, -1 otherwise
    double value = 0.0;
    bool frozen = false;
    MonitorState monitor;
};

struct Configuration {
    std::vector<Component> components; ///< components[i].id == i
    double total = 1.0;

    Configuration() = default;
    /// Components with the given starting values; monitors see the start.
    Configuration(std::span<const double> values, const ThresholdPair& pair,
                  std::span<const int> parents = {});

    Component& at(int id) { return components.at(static_cast<std::size_t>(id)); }
    const Component& at(int id) const { return components.at(static_cast<std::size_t>(id)); }
    std::size_t size() const noexcept { return components.size(); }
    double sum() const noexcept;

    /// Id of the component at value 1, if the configuration is absorbed.
    std::optional<int> winner() const noexcept;
    /// Sum of monitor reached_b flags.
    int n_b() const noexcept;
    /// Sum of monitor downcrossing counts.
    int d_ab() const noexcept;
};

/// value = c0 + c1 * driver
struct TiedMap {
    int id = 0;
    double c0 = 0.0;
    double c1 = 0.0;
    double value_at(double driver) const noexcept { return c0 + c1 * driver; }
};

/// On arrival of the driver at `level`, components `ids` freeze. When
/// `targets` is non-empty it holds the exact value each of them is set to.
struct FreezeRule {
    double level = 0.0;
    std::vector<int> ids;
    std::vector<double> targets;
};

struct StageSpec {
    int driver_id = -1;
    std::vector<TiedMap> tied;
    std::vector<double> stop_levels; ///< strictly increasing driver levels
    std::vector<FreezeRule> freeze_rules;

    void clear() {
        driver_id = -1;
        tied.clear();
        stop_levels.clear();
        freeze_rules.clear();
    }
};

struct RunRecord {
    int n_b = 0;
    int d_ab = 0;
    int winner_id = -1;
    std::vector<MonitorState> per_component;
    std::uint64_t stages_executed = 0;
    std::uint64_t elementary_moves = 0;
    bool truncated = false;

    /// Small-spread stage machine: state at machine termination.
    struct Machine {
        int downcrossings = 0;
        int above_b = 0;
        int in_zero_b = 0;
        int stages = 0;
    };
    std::optional<Machine> machine;
    /// Embed-prefix: every merge phase ended at the precomputed refinement.
    std::optional<bool> refinement_matched;
};

struct TraceRow {
    std::uint64_t run_id = 0;
    std::uint64_t stage = 0;
    int component_id = 0;
    double value = 0.0;
    MonitorStatus status = MonitorStatus::pre_b;
};

/// CSV event trace, one row per component update of each elementary move.
class TraceWriter {
public:
    explicit TraceWriter(std::ostream& out);
    void write(const TraceRow& row);

private:
    std::ostream* out_;
};

class StageObserver {
public:
    virtual ~StageObserver() = default;
    virtual void on_stage_begin(const Configuration&, const StageSpec&) {}
    virtual void on_stage_end(const Configuration&, const StageSpec&) {}
    /// When true, tied values are materialised after every move and
    /// on_move is called with the full configuration.
    virtual bool wants_moves() const { return false; }
    virtual void on_move(const Configuration&) {}
};

struct EngineOptions {
    std::uint64_t move_budget = 10'000'000;
    std::uint64_t run_id = 0;
    TraceWriter* trace = nullptr;
    StageObserver* observer = nullptr;
    /// Check after every move that no tied component jumped over a threshold.
    bool check_crossings = false;
};

namespace detail {
struct CompiledStage {
    std::vector<double> levels;
    std::vector<double> up_prob;
    std::vector<int> stop_rule;                 ///< -1: pass through, -2: stop, >=0: freeze rule index
    std::vector<std::uint32_t> touch_offsets;   ///< CSR over levels
    std::vector<std::uint32_t> touch_tied;      ///< indices into StageSpec::tied
    std::vector<std::pair<std::uint32_t, std::uint32_t>> touch_scratch;
    std::vector<std::pair<double, int>> candidates;
    std::vector<std::pair<double, std::uint32_t>> preimages;
    std::vector<int> rule_level;
};
} // namespace detail

/// Per-run engine state: options, move and stage counters, scratch space.
struct RunContext {
    EngineOptions options;
    std::uint64_t moves = 0;
    std::uint64_t stages = 0;
    detail::CompiledStage scratch;

    RunContext() = default;
    explicit RunContext(const EngineOptions& opts) : options(opts) {}
};

/// Returns `upper` with probability (x - lower) / (upper - lower), else `lower`.
double gambler_step(RandomStream& rng, double x, double lower, double upper);

/// Adds a, b and the driver preimages of a and b under every tied map to the
/// stop levels, clipped to the driver's range; merges levels within
/// kLevelTolerance, keeping the original stop level.
StageSpec build_stage_grid(const StageSpec& spec, const ThresholdPair& pair);

/// Runs one stage in place until the driver reaches a level carrying a
/// freeze rule or an end of the grid.
void run_stage(Configuration& config, const StageSpec& spec, const ThresholdPair& pair,
               RandomStream& rng, RunContext& ctx);

/// Reflection of driver d against partner p with their sum fixed; each
/// freezes on reaching 0 or cap. Same law and random draws as run_stage on
/// the equivalent spec, without building one. Returns false, touching
/// nothing, unless the stage is a single step in which no monitor can change.
bool run_capped_reflection(Configuration& config, int d, int p, double cap, const ThresholdPair& pair,
                           RandomStream& rng, RunContext& ctx);

/// Value-semantics form of run_stage with default options.
Configuration run_stage(const Configuration& config, const StageSpec& spec,
                        const ThresholdPair& pair, RandomStream& rng);

/// Collects monitors and totals from an absorbed configuration.
RunRecord make_record(const Configuration& config, const RunContext& ctx);

} // namespace cml
