#include "cml/engine.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <string>

#include "cml/error.hpp"

namespace cml {

namespace {

constexpr double kMassTolerance = 1e-9;
constexpr int kPassThrough = -1;
constexpr int kStopNoFreeze = -2;

enum Priority : int { kStopLevel = 0, kThresholdLevel = 1 };

double snap_unit(double v) {
    if (std::abs(v) <= kLevelTolerance) return 0.0;
    if (std::abs(v - 1.0) <= kLevelTolerance) return 1.0;
    return std::clamp(v, 0.0, 1.0);
}

// Appends a, b and the tied preimages of a and b that fall in [lo, hi].
void append_threshold_levels(const StageSpec& spec, const ThresholdPair& pair, double lo, double hi,
                             std::vector<std::pair<double, int>>& out) {
    auto in_range = [&](double g) { return g >= lo - kLevelTolerance && g <= hi + kLevelTolerance; };
    for (double t : {pair.a(), pair.b()}) {
        if (in_range(t)) out.emplace_back(t, kThresholdLevel);
    }
    for (const auto& tm : spec.tied) {
        if (tm.c1 == 0.0) continue;
        for (double t : {pair.a(), pair.b()}) {
            const double g = (t - tm.c0) / tm.c1;
            if (in_range(g)) out.emplace_back(std::clamp(g, lo, hi), kThresholdLevel);
        }
    }
}

// Sorts candidates and merges clusters closer than the level tolerance,
// keeping the highest-priority member of each cluster.
void merge_levels(std::vector<std::pair<double, int>>& cand, std::vector<double>& levels) {
    std::sort(cand.begin(), cand.end());
    levels.clear();
    std::size_t i = 0;
    while (i < cand.size()) {
        std::size_t best = i;
        std::size_t j = i;
        while (j + 1 < cand.size() && cand[j + 1].first - cand[i].first <= kLevelTolerance) {
            ++j;
            if (cand[j].second < cand[best].second) best = j;
        }
        levels.push_back(cand[best].first);
        i = j + 1;
    }
}

std::ptrdiff_t locate(const std::vector<double>& levels, double g) {
    auto it = std::lower_bound(levels.begin(), levels.end(), g - kLevelTolerance);
    for (int step = 0; step < 2 && it != levels.end(); ++step, ++it) {
        if (std::abs(*it - g) <= kLevelTolerance) return it - levels.begin();
    }
    return -1;
}

void validate_stops(const std::vector<double>& stops) {
    if (stops.empty()) throw PreconditionError("stage has no stop levels");
    for (std::size_t i = 1; i < stops.size(); ++i) {
        if (!(stops[i] > stops[i - 1])) throw PreconditionError("stage stop levels must be strictly increasing");
    }
}

void compile_stage(const Configuration& config, const StageSpec& spec, const ThresholdPair& pair,
                   detail::CompiledStage& cs, double& fixed_mass, double& tied_c0, double& tied_c1) {
    if (spec.driver_id < 0 || static_cast<std::size_t>(spec.driver_id) >= config.size()) {
        throw PreconditionError("stage driver id out of range");
    }
    const Component& driver = config.at(spec.driver_id);
    if (driver.frozen) throw PreconditionError("stage driver is frozen");
    validate_stops(spec.stop_levels);
    const double lo = spec.stop_levels.front();
    const double hi = spec.stop_levels.back();
    const double start = driver.value;
    if (start < lo - kLevelTolerance || start > hi + kLevelTolerance) {
        throw PreconditionError("driver value outside its stop range");
    }

    double moving_mass = start;
    tied_c0 = 0.0;
    tied_c1 = 0.0;
    cs.candidates.clear();
    cs.touch_scratch.clear();
    cs.preimages.clear();
    const std::size_t count = config.size();
    for (std::size_t k = 0; k < spec.tied.size(); ++k) {
        const auto& tm = spec.tied[k];
        if (tm.id < 0 || static_cast<std::size_t>(tm.id) >= count || tm.id == spec.driver_id) {
            throw PreconditionError("invalid tied component id");
        }
        const Component& c = config.components[static_cast<std::size_t>(tm.id)];
        if (c.frozen) throw PreconditionError("tied component is frozen");
        if (std::abs(tm.value_at(start) - c.value) > kMassTolerance) {
            throw PreconditionError("tied map disagrees with the component's current value");
        }
        const double v_lo = tm.value_at(lo);
        const double v_hi = tm.value_at(hi);
        const double v_min = std::min(v_lo, v_hi);
        const double v_max = std::max(v_lo, v_hi);
        if (v_min < -kMassTolerance || v_max > 1.0 + kMassTolerance) {
            throw PreconditionError("tied map leaves [0,1] over the driver's range");
        }
        moving_mass += c.value;
        tied_c0 += tm.c0;
        tied_c1 += tm.c1;
        if (tm.c1 == 0.0) continue;
        // The component touches a threshold only if it lies in its value range.
        const double slack = std::abs(tm.c1) * kLevelTolerance;
        // Touching a only matters to an active monitor or one that can reach b here.
        const bool a_matters = c.monitor.active() || v_max >= pair.b() - kLevelTolerance;
        for (double t : {pair.a(), pair.b()}) {
            if (t < v_min - slack || t > v_max + slack) continue;
            if (t == pair.a() && !a_matters) continue;
            const double g = (t - tm.c0) / tm.c1;
            if (g < lo - kLevelTolerance || g > hi + kLevelTolerance) continue;
            const double gc = std::clamp(g, lo, hi);
            cs.candidates.emplace_back(gc, kThresholdLevel);
            cs.preimages.emplace_back(gc, static_cast<std::uint32_t>(k));
        }
    }
    // Frozen components hold total - moving mass; run_program checks the
    // absorbed configuration, and check_crossings rechecks every stage.
    fixed_mass = config.total - moving_mass;

    for (double s : spec.stop_levels) cs.candidates.emplace_back(s, kStopLevel);
    const bool driver_a_matters = driver.monitor.active() || hi >= pair.b() - kLevelTolerance;
    for (double t : {pair.a(), pair.b()}) {
        if (t == pair.a() && !driver_a_matters) continue;
        if (t >= lo - kLevelTolerance && t <= hi + kLevelTolerance) cs.candidates.emplace_back(t, kThresholdLevel);
    }
    merge_levels(cs.candidates, cs.levels);

    const std::size_t n = cs.levels.size();
    cs.stop_rule.assign(n, kPassThrough);
    for (std::size_t r = 0; r < spec.freeze_rules.size(); ++r) {
        const auto idx = locate(cs.levels, spec.freeze_rules[r].level);
        if (idx < 0) throw PreconditionError("freeze rule level outside the driver's range");
        cs.stop_rule[static_cast<std::size_t>(idx)] = static_cast<int>(r);
    }
    if (cs.stop_rule.front() == kPassThrough) cs.stop_rule.front() = kStopNoFreeze;
    if (cs.stop_rule.back() == kPassThrough) cs.stop_rule.back() = kStopNoFreeze;
    // A driver that cannot move needs no balancing tied maps.
    const auto start_idx = locate(cs.levels, std::clamp(start, lo, hi));
    const bool moves = start_idx < 0 || cs.stop_rule[static_cast<std::size_t>(start_idx)] == kPassThrough;
    if (moves && std::abs(1.0 + tied_c1) > kMassTolerance) {
        throw PreconditionError("stage does not conserve mass: driver and tied slopes must cancel");
    }

    cs.up_prob.assign(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        cs.up_prob[i] = (cs.levels[i] - cs.levels[i - 1]) / (cs.levels[i + 1] - cs.levels[i - 1]);
    }

    for (const auto& [g, k] : cs.preimages) {
        const auto idx = locate(cs.levels, g);
        if (idx < 0) throw ConsistencyError("threshold preimage missing from stage grid");
        cs.touch_scratch.emplace_back(static_cast<std::uint32_t>(idx), k);
    }
    std::sort(cs.touch_scratch.begin(), cs.touch_scratch.end());
    cs.touch_offsets.assign(n + 1, 0);
    cs.touch_tied.resize(cs.touch_scratch.size());
    for (const auto& [lvl, k] : cs.touch_scratch) ++cs.touch_offsets[lvl + 1];
    for (std::size_t i = 0; i < n; ++i) cs.touch_offsets[i + 1] += cs.touch_offsets[i];
    for (std::size_t t = 0; t < cs.touch_scratch.size(); ++t) cs.touch_tied[t] = cs.touch_scratch[t].second;
}

// Sets final values and sups, freezes components at zero and applies the
// freeze rule of the level the driver stopped at.
void finish_stage(Configuration& config, const StageSpec& spec, double g, double g_min, double g_max, int rule_index) {
    Component& driver = config.components[static_cast<std::size_t>(spec.driver_id)];
    driver.value = snap_unit(g);
    for (const auto& tm : spec.tied) {
        Component& c = config.components[static_cast<std::size_t>(tm.id)];
        c.value = snap_unit(tm.value_at(g));
        c.monitor.sup_value = std::max({c.monitor.sup_value, tm.value_at(g_min), tm.value_at(g_max)});
        if (c.value == 0.0) c.frozen = true;
    }
    if (driver.value == 0.0) driver.frozen = true;

    if (rule_index >= 0) {
        const FreezeRule& rule = spec.freeze_rules[static_cast<std::size_t>(rule_index)];
        for (std::size_t k = 0; k < rule.ids.size(); ++k) {
            Component& c = config.at(rule.ids[k]);
            c.frozen = true;
            if (k < rule.targets.size()) c.value = rule.targets[k];
        }
    }
}

// Two-component stage between two stops in which no monitor can change: a
// component must be active or able to reach b for a touch to matter. The
// grid is then {lo, start, hi} and the stage is one gambler's-ruin step.
// Returns false, leaving everything untouched, when the stage is not of
// this form.
bool run_inert_pair_stage(Configuration& config, const StageSpec& spec, const ThresholdPair& pair,
                          RandomStream& rng, RunContext& ctx) {
    const std::size_t count = config.size();
    const auto& tm = spec.tied.front();
    if (spec.stop_levels.size() != 2 || spec.driver_id < 0 || static_cast<std::size_t>(spec.driver_id) >= count ||
        tm.id < 0 || static_cast<std::size_t>(tm.id) >= count || tm.id == spec.driver_id) {
        return false;
    }
    Component& driver = config.components[static_cast<std::size_t>(spec.driver_id)];
    const Component& partner = config.components[static_cast<std::size_t>(tm.id)];
    if (driver.frozen || partner.frozen || driver.monitor.active() || partner.monitor.active()) return false;
    const double lo = spec.stop_levels[0];
    const double hi = spec.stop_levels[1];
    const double start = driver.value;
    if (!(hi > lo) || start < lo - kLevelTolerance || start > hi + kLevelTolerance) return false;
    if (std::abs(1.0 + tm.c1) > kMassTolerance || std::abs(tm.value_at(start) - partner.value) > kMassTolerance) {
        return false;
    }
    const double v_lo = tm.value_at(lo);
    const double v_hi = tm.value_at(hi);
    const double reach = pair.b() - kLevelTolerance;
    if (hi >= reach || std::max(v_lo, v_hi) >= reach || std::min(v_lo, v_hi) < -kMassTolerance) return false;

    int rule_at[2] = {kStopNoFreeze, kStopNoFreeze};
    for (std::size_t r = 0; r < spec.freeze_rules.size(); ++r) {
        const double level = spec.freeze_rules[r].level;
        if (std::abs(level - lo) <= kLevelTolerance) {
            rule_at[0] = static_cast<int>(r);
        } else if (std::abs(level - hi) <= kLevelTolerance) {
            rule_at[1] = static_cast<int>(r);
        } else {
            return false;
        }
    }

    int end;
    if (start - lo <= kLevelTolerance) {
        end = 0;
    } else if (hi - start <= kLevelTolerance) {
        end = 1;
    } else {
        if (++ctx.moves > ctx.options.move_budget) return false;
        end = uniform01(rng) < (start - lo) / (hi - lo) ? 1 : 0;
    }
    const double g = end == 1 ? hi : lo;
    driver.monitor.visit(g, pair);
    finish_stage(config, spec, g, end == 1 ? std::min(start, hi) : lo, end == 1 ? hi : std::max(start, lo),
                 rule_at[end]);
    ++ctx.stages;
    return true;
}

} // namespace

bool run_capped_reflection(Configuration& config, int d, int p, double cap, const ThresholdPair& pair,
                           RandomStream& rng, RunContext& ctx) {
    const auto& opts = ctx.options;
    const std::size_t count = config.size();
    if (opts.observer || opts.trace || opts.check_crossings || d < 0 || p < 0 || d == p ||
        static_cast<std::size_t>(d) >= count || static_cast<std::size_t>(p) >= count) {
        return false;
    }
    Component& driver = config.components[static_cast<std::size_t>(d)];
    Component& partner = config.components[static_cast<std::size_t>(p)];
    if (driver.frozen || partner.frozen || driver.monitor.active() || partner.monitor.active()) return false;
    const double start = driver.value;
    const double s = start + partner.value;
    const double lo = std::max(0.0, s - cap);
    const double hi = std::min(s, cap);
    const double reach = pair.b() - kLevelTolerance;
    if (!(hi - lo > kLevelTolerance) || start < lo - kLevelTolerance || start > hi + kLevelTolerance) return false;
    const double v_lo = s - lo;
    const double v_hi = s - hi;
    if (hi >= reach || std::max(v_lo, v_hi) >= reach || std::min(v_lo, v_hi) < -kMassTolerance) return false;

    int end;
    if (start - lo <= kLevelTolerance) {
        end = 0;
    } else if (hi - start <= kLevelTolerance) {
        end = 1;
    } else {
        if (ctx.moves + 1 > opts.move_budget) return false;
        ++ctx.moves;
        end = uniform01(rng) < (start - lo) / (hi - lo) ? 1 : 0;
    }
    const double g = end == 1 ? hi : lo;
    driver.monitor.visit(g, pair);
    const double g_min = end == 1 ? std::min(start, hi) : lo;
    const double g_max = end == 1 ? hi : std::max(start, lo);
    driver.value = snap_unit(g);
    partner.value = snap_unit(s + -1.0 * g);
    partner.monitor.sup_value = std::max({partner.monitor.sup_value, s + -1.0 * g_min, s + -1.0 * g_max});
    if (partner.value == 0.0) partner.frozen = true;
    if (driver.value == 0.0) driver.frozen = true;
    // freeze rules of the stop reached: driver at 0 or cap, partner at cap or 0
    const double d_target = end == 1 ? cap : 0.0;
    const double p_target = end == 1 ? 0.0 : cap;
    const double p_level = end == 1 ? s : s - cap;
    if (std::abs(d_target - g) <= kLevelTolerance) {
        driver.frozen = true;
        driver.value = d_target;
    }
    if (std::abs(p_level - g) <= kLevelTolerance) {
        partner.frozen = true;
        partner.value = p_target;
    }
    ++ctx.stages;
    return true;
}

Configuration::Configuration(std::span<const double> values, const ThresholdPair& pair,
                             std::span<const int> parents) {
    components.reserve(values.size());
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(values[i] >= 0.0 && values[i] <= 1.0)) throw DomainError("component value outside [0,1]");
        Component c;
        c.id = static_cast<int>(i);
        c.parent = i < parents.size() ? parents[i] : -1;
        c.value = values[i];
        c.frozen = values[i] == 0.0;
        c.monitor = start_monitor(values[i], pair);
        components.push_back(c);
        s += values[i];
    }
    total = s;
}

double Configuration::sum() const noexcept {
    double s = 0.0;
    for (const auto& c : components) s += c.value;
    return s;
}

std::optional<int> Configuration::winner() const noexcept {
    for (const auto& c : components) {
        if (c.value == 1.0) return c.id;
    }
    return std::nullopt;
}

int Configuration::n_b() const noexcept {
    int n = 0;
    for (const auto& c : components) n += c.monitor.reached_b ? 1 : 0;
    return n;
}

int Configuration::d_ab() const noexcept {
    int d = 0;
    for (const auto& c : components) d += c.monitor.downcrossings;
    return d;
}

TraceWriter::TraceWriter(std::ostream& out) : out_(&out) {
    *out_ << "run_id,stage,component_id,value,status\n";
}

void TraceWriter::write(const TraceRow& row) {
    *out_ << row.run_id << ',' << row.stage << ',' << row.component_id << ',' << row.value << ','
          << to_string(row.status) << '\n';
}

double gambler_step(RandomStream& rng, double x, double lower, double upper) {
    if (!(lower < upper)) throw DomainError("gambler_step: degenerate interval");
    if (!(x >= lower && x <= upper)) throw DomainError("gambler_step: start outside [lower, upper]");
    const double p_up = (x - lower) / (upper - lower);
    return uniform01(rng) < p_up ? upper : lower;
}

StageSpec build_stage_grid(const StageSpec& spec, const ThresholdPair& pair) {
    validate_stops(spec.stop_levels);
    std::vector<std::pair<double, int>> cand;
    for (double s : spec.stop_levels) cand.emplace_back(s, kStopLevel);
    append_threshold_levels(spec, pair, spec.stop_levels.front(), spec.stop_levels.back(), cand);
    StageSpec out = spec;
    merge_levels(cand, out.stop_levels);
    return out;
}

void run_stage(Configuration& config, const StageSpec& spec, const ThresholdPair& pair, RandomStream& rng,
               RunContext& ctx) {
    const auto& opts0 = ctx.options;
    if (spec.tied.size() == 1 && !opts0.observer && !opts0.trace && !opts0.check_crossings &&
        run_inert_pair_stage(config, spec, pair, rng, ctx)) {
        return;
    }
    auto& cs = ctx.scratch;
    double fixed_mass = 0.0;
    double c0_sum = 0.0;
    double c1_sum = 0.0;
    compile_stage(config, spec, pair, cs, fixed_mass, c0_sum, c1_sum);
    if (ctx.options.check_crossings && std::abs(config.sum() - config.total) > kMassTolerance) {
        throw ConsistencyError("configuration mass differs from its total");
    }

    const auto& opts = ctx.options;
    if (opts.observer) opts.observer->on_stage_begin(config, spec);
    const bool per_move = opts.observer && opts.observer->wants_moves();

    Component& driver = config.at(spec.driver_id);
    const double x0 = std::clamp(driver.value, cs.levels.front(), cs.levels.back());

    auto budget = [&](double where) {
        if (++ctx.moves > opts.move_budget) {
            std::ostringstream msg;
            msg << "move budget of " << opts.move_budget << " exceeded: run " << opts.run_id << ", stage "
                << ctx.stages << ", driver " << spec.driver_id << " at level " << where << ", "
                << cs.levels.size() << " grid levels";
            throw RunawayError(msg.str());
        }
    };

    // Arrival of the driver at level idx, coming from driver level g0.
    auto arrive = [&](std::size_t idx, double g0) {
        const double g = cs.levels[idx];
        driver.monitor.visit(g, pair);
        for (auto t = cs.touch_offsets[idx]; t < cs.touch_offsets[idx + 1]; ++t) {
            const auto& tm = spec.tied[cs.touch_tied[t]];
            config.at(tm.id).monitor.visit(tm.value_at(g), pair);
        }

        const double mass = fixed_mass + g + c0_sum + c1_sum * g;
        if (std::abs(mass - config.total) > kMassTolerance) {
            throw ConsistencyError("mass not conserved after elementary move");
        }

        if (opts.check_crossings) {
            for (const auto& tm : spec.tied) {
                for (double th : {pair.a(), pair.b()}) {
                    const double d0 = tm.value_at(g0) - th;
                    const double d1 = tm.value_at(g) - th;
                    if (std::abs(d0) > kLevelTolerance && std::abs(d1) > kLevelTolerance && (d0 < 0) != (d1 < 0)) {
                        throw ConsistencyError("tied component crossed a threshold between grid levels");
                    }
                }
            }
        }

        if (opts.trace) {
            opts.trace->write({opts.run_id, ctx.stages, driver.id, g, driver.monitor.status});
            for (auto t = cs.touch_offsets[idx]; t < cs.touch_offsets[idx + 1]; ++t) {
                const auto& tm = spec.tied[cs.touch_tied[t]];
                const auto& c = config.at(tm.id);
                opts.trace->write({opts.run_id, ctx.stages, c.id, tm.value_at(g), c.monitor.status});
            }
        }

        if (per_move) {
            driver.value = g;
            for (const auto& tm : spec.tied) config.at(tm.id).value = tm.value_at(g);
            opts.observer->on_move(config);
        }
    };

    // The start is not a grid level unless it coincides with one: levels
    // the driver never returns to would only slow the walk down.
    // Range of the driver's path, for the tied sups: the start, not the
    // level on the far side of it.
    std::size_t idx;
    double g_min = x0;
    double g_max = x0;
    if (const auto at = locate(cs.levels, x0); at >= 0) {
        idx = static_cast<std::size_t>(at);
        driver.monitor.visit(cs.levels[idx], pair);
        g_min = g_max = cs.levels[idx];
    } else {
        const auto above = static_cast<std::size_t>(std::upper_bound(cs.levels.begin(), cs.levels.end(), x0) - cs.levels.begin());
        const std::size_t below = above - 1;
        budget(x0);
        const double p_up = (x0 - cs.levels[below]) / (cs.levels[above] - cs.levels[below]);
        idx = uniform01(rng) < p_up ? above : below;
        g_min = std::min(g_min, cs.levels[idx]);
        g_max = std::max(g_max, cs.levels[idx]);
        arrive(idx, x0);
    }

    while (cs.stop_rule[idx] == kPassThrough) {
        budget(cs.levels[idx]);
        const double g0 = cs.levels[idx];
        idx = uniform01(rng) < cs.up_prob[idx] ? idx + 1 : idx - 1;
        g_min = std::min(g_min, cs.levels[idx]);
        g_max = std::max(g_max, cs.levels[idx]);
        arrive(idx, g0);
    }

    finish_stage(config, spec, cs.levels[idx], g_min, g_max, cs.stop_rule[idx]);
    ++ctx.stages;
    if (opts.observer) opts.observer->on_stage_end(config, spec);
}

Configuration run_stage(const Configuration& config, const StageSpec& spec, const ThresholdPair& pair,
                        RandomStream& rng) {
    Configuration out = config;
    RunContext ctx;
    run_stage(out, spec, pair, rng, ctx);
    return out;
}

RunRecord make_record(const Configuration& config, const RunContext& ctx) {
    RunRecord rec;
    rec.per_component.reserve(config.size());
    for (const auto& c : config.components) rec.per_component.push_back(c.monitor);
    rec.n_b = config.n_b();
    rec.d_ab = config.d_ab();
    rec.winner_id = config.winner().value_or(-1);
    rec.stages_executed = ctx.stages;
    rec.elementary_moves = ctx.moves;
    return rec;
}

} // namespace cml
