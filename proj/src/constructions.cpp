#include "cml/constructions.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

#include "cml/error.hpp"

namespace cml {

namespace {

constexpr double kTol = kLevelTolerance;
constexpr double kMassTol = 1e-9;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr long kMachineCaseCap = 1'000'000;

/// Freeze a component when it reaches lo or hi; infinite ends never fire.
struct Band {
    double lo = 0.0;
    double hi = kInf;
};

void check_distribution(std::span<const double> p, const char* what) {
    if (p.empty()) throw PreconditionError(std::string(what) + ": empty distribution");
    double s = 0.0;
    for (double v : p) {
        if (!(v >= 0.0 && v <= 1.0)) throw PreconditionError(std::string(what) + ": atom outside [0,1]");
        s += v;
    }
    if (std::abs(s - 1.0) > kMassTol) throw PreconditionError(std::string(what) + ": distribution must sum to 1");
}

// Reflection coupling of driver d and partner p; their sum is held fixed
// and the stage ends as soon as either reaches a freeze level of its band
// or zero.
void reflection_stage(const Configuration& cfg, int d, int p, Band bd, Band bp, StageSpec& out) {
    const double vd = cfg.components[static_cast<std::size_t>(d)].value;
    const double s = vd + cfg.components[static_cast<std::size_t>(p)].value;

    struct Event {
        double g;
        int id;
        double target;
    };
    Event lower[3];
    Event upper[3];
    int nl = 0;
    int nu = 0;
    lower[nl++] = {0.0, d, 0.0};
    if (std::isfinite(bd.lo)) lower[nl++] = {bd.lo, d, bd.lo};
    if (std::isfinite(bp.hi)) lower[nl++] = {s - bp.hi, p, bp.hi};
    upper[nu++] = {s, p, 0.0};
    if (std::isfinite(bd.hi)) upper[nu++] = {bd.hi, d, bd.hi};
    if (std::isfinite(bp.lo)) upper[nu++] = {s - bp.lo, p, bp.lo};

    double low = -kInf;
    for (int i = 0; i < nl; ++i) low = std::max(low, lower[i].g);
    double high = kInf;
    for (int i = 0; i < nu; ++i) high = std::min(high, upper[i].g);
    if (!(high - low > kTol)) throw ConsistencyError("degenerate reflection stage");
    if (vd < low - kTol || vd > high + kTol) throw ConsistencyError("reflection driver outside its band");

    // Reuse the rule storage of the previous stage.
    out.driver_id = d;
    out.tied.resize(1);
    out.tied[0] = {p, s, -1.0};
    out.stop_levels.resize(2);
    out.stop_levels[0] = low;
    out.stop_levels[1] = high;
    out.freeze_rules.resize(2);
    auto fill_rule = [d](FreezeRule& rule, double level, const Event* ev, int n) {
        int ids[3];
        double targets[3];
        int k = 0;
        bool driver_seen = false;
        for (int i = 0; i < n; ++i) {
            if (std::abs(ev[i].g - level) > kTol) continue;
            if (ev[i].id == d) {
                if (driver_seen) continue;
                driver_seen = true;
            }
            ids[k] = ev[i].id;
            targets[k++] = ev[i].target;
        }
        rule.level = level;
        // resize keeps capacity; assign() with a pointer range costs a memcpy call
        rule.ids.resize(static_cast<std::size_t>(k));
        rule.targets.resize(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) {
            rule.ids[static_cast<std::size_t>(i)] = ids[i];
            rule.targets[static_cast<std::size_t>(i)] = targets[i];
        }
    };
    fill_rule(out.freeze_rules[0], low, lower, nl);
    fill_rule(out.freeze_rules[1], high, upper, nu);
}

// Driver d runs between 0 and 1; every other live component is held
// proportional to 1 - driver. Returns false when nothing else is live.
bool tied_sweep_stage(const Configuration& cfg, int d, StageSpec& out) {
    double rest = 0.0;
    for (const auto& c : cfg.components) {
        if (c.id != d && c.value > 0.0) rest += c.value;
    }
    if (rest == 0.0) return false;
    out.clear();
    out.driver_id = d;
    const double inv = 1.0 / rest;
    for (const auto& c : cfg.components) {
        if (c.id == d || c.value <= 0.0) continue;
        const double w = c.value * inv;
        out.tied.push_back({c.id, w, -w});
    }
    out.stop_levels = {0.0, 1.0};
    out.freeze_rules.push_back({0.0, {d}, {0.0}});
    out.freeze_rules.push_back({1.0, {d}, {1.0}});
    return true;
}

// Two largest components (ties: smaller id) among those accepted by `pick`.
template <class Pred>
std::pair<int, int> two_largest(const Configuration& cfg, Pred pick) {
    int first = -1;
    int second = -1;
    for (const auto& c : cfg.components) {
        if (!pick(c)) continue;
        if (first < 0 || c.value > cfg.at(first).value) {
            second = first;
            first = c.id;
        } else if (second < 0 || c.value > cfg.at(second).value) {
            second = c.id;
        }
    }
    return {first, second};
}

class Planner {
public:
    virtual ~Planner() = default;
    /// Fills `stage` and returns true, or returns false once absorbed.
    virtual bool next(Configuration& cfg, StageSpec& stage) = 0;
    virtual void finish(RunRecord&) const {}

    /// Set by next() instead of filling the stage: a reflection of d
    /// against p with both frozen at 0 and cap.
    struct CappedPair {
        int d = -1;
        int p = -1;
        double cap = 0.0;
    };
    const CappedPair* capped_pair() const { return capped_.d >= 0 ? &capped_ : nullptr; }

protected:
    CappedPair capped_;
};

/// Tied sweeps until absorption: one driver at a time, the rest tied.
class SweepPlanner final : public Planner {
public:
    enum class Order { by_id, largest_first, smallest_first };
    explicit SweepPlanner(Order order) : order_(order) {}

    bool next(Configuration& cfg, StageSpec& stage) override {
        if (!prepared_) {
            for (auto& c : cfg.components) c.frozen = c.value == 0.0;
            prepared_ = true;
            if (cfg.winner()) return false;
        } else if (last_ >= 0 && cfg.at(last_).value == 1.0) {
            // Tied components stay below 1 - driver, so only the driver can win.
            return false;
        }
        last_ = pick(cfg);
        if (last_ >= 0 && tied_sweep_stage(cfg, last_, stage)) return true;
        if (last_ < 0) throw ConsistencyError("no live component left");
        Component& c = cfg.at(last_);
        if (std::abs(c.value - 1.0) > kMassTol) throw ConsistencyError("lone survivor is not at 1");
        c.value = 1.0;
        c.monitor.visit(1.0, pair_);
        return false;
    }

    void set_pair(const ThresholdPair& pair) { pair_ = pair; }

private:

    int pick(const Configuration& cfg) {
        if (order_ == Order::by_id) {
            while (static_cast<std::size_t>(cursor_) < cfg.size() && cfg.at(cursor_).value == 0.0) ++cursor_;
            return static_cast<std::size_t>(cursor_) < cfg.size() ? cursor_ : -1;
        }
        const bool largest = order_ == Order::largest_first;
        int best = -1;
        for (const auto& c : cfg.components) {
            if (c.value <= 0.0) continue;
            if (best < 0 || (largest ? c.value > cfg.at(best).value : c.value < cfg.at(best).value)) best = c.id;
        }
        return best;
    }

    Order order_;
    bool prepared_ = false;
    int cursor_ = 0;
    int last_ = -1;
    ThresholdPair pair_{0.1, 0.25};
};

// Components eligible for pairing, ordered by value (ties: smaller id).
// Only the coupled pair changes in a stage, so the bulk is sorted once and
// read from the front; members returned after a stage go to a small heap.
class PairPool {
public:
    void clear() {
        sorted_.clear();
        front_ = 0;
        heap_.clear();
    }

    /// Bulk insertion; call seal() before popping.
    void stage(const Component& c) { sorted_.push_back({c.value, c.id}); }
    void seal() {
        const auto first = sorted_.begin() + static_cast<std::ptrdiff_t>(front_);
        if (!std::is_sorted(first, sorted_.end(), above)) std::sort(first, sorted_.end(), above);
    }

    void add(const Component& c) {
        heap_.push_back({c.value, c.id});
        std::push_heap(heap_.begin(), heap_.end(), below);
    }

    /// The two largest current entries accepted by `ok`, or -1 where missing.
    /// Stale or rejected entries are discarded; a lone find is kept.
    template <class Ok>
    std::pair<int, int> pop_two(const Configuration& cfg, Ok ok) {
        int got[2] = {-1, -1};
        int n = 0;
        while (n < 2) {
            Entry e;
            const bool have_sorted = front_ < sorted_.size();
            if (!heap_.empty() && (!have_sorted || below(sorted_[front_], heap_.front()))) {
                std::pop_heap(heap_.begin(), heap_.end(), below);
                e = heap_.back();
                heap_.pop_back();
            } else if (have_sorted) {
                e = sorted_[front_++];
            } else {
                break;
            }
            const Component& c = cfg.components[static_cast<std::size_t>(e.id)];
            if (c.value == e.value && ok(c)) got[n++] = e.id;
        }
        if (n == 1) add(cfg.at(got[0]));
        return {got[0], got[1]};
    }

private:
    struct Entry {
        double value;
        int id;
    };
    static constexpr auto below = [](const Entry& x, const Entry& y) {
        return x.value < y.value || (x.value == y.value && x.id > y.id);
    };
    static constexpr auto above = [](const Entry& x, const Entry& y) { return below(y, x); };
    std::vector<Entry> sorted_;
    std::size_t front_ = 0;
    std::vector<Entry> heap_;
};

class SurvivorPlanner final : public Planner {
public:
    explicit SurvivorPlanner(double b) : b_(b) {}

    bool next(Configuration& cfg, StageSpec& stage) override {
        const auto below_b = [this](const Component& c) {
            return !c.frozen && c.value > kTol && c.value < b_ - kTol;
        };
        if (!initialised_) {
            pool_.clear();
            for (auto& c : cfg.components) {
                c.frozen = c.value == 0.0 || c.value >= b_ - kTol;
                if (below_b(c)) pool_.stage(c);
            }
            pool_.seal();
            initialised_ = true;
        } else if (phase_ == Phase::pairs) {
            for (int id : pair_) {
                if (below_b(cfg.at(id))) pool_.add(cfg.at(id));
            }
        }
        if (phase_ == Phase::pairs) {
            const auto [i, j] = pool_.pop_two(cfg, below_b);
            if (j >= 0) {
                pair_ = {i, j};
                reflection_stage(cfg, i, j, {0.0, b_}, {0.0, b_}, stage);
                return true;
            }
            phase_ = Phase::residual;
        }
        if (phase_ == Phase::residual) {
            phase_ = Phase::fixation;
            const auto [r, none] = two_largest(cfg, below_b);
            if (r >= 0) {
                int partner = -1;
                for (const auto& c : cfg.components) {
                    if (c.value >= b_ - kTol) {
                        partner = c.id;
                        break;
                    }
                }
                if (partner < 0) throw ConsistencyError("survivor residual has no partner at b");
                cfg.at(partner).frozen = false;
                reflection_stage(cfg, r, partner, {0.0, b_}, {-kInf, kInf}, stage);
                return true;
            }
        }
        return sweep_.next(cfg, stage);
    }

    void set_pair(const ThresholdPair& pair) { sweep_.set_pair(pair); }

private:
    enum class Phase { pairs, residual, fixation };
    double b_;
    bool initialised_ = false;
    Phase phase_ = Phase::pairs;
    std::array<int, 2> pair_{-1, -1};
    PairPool pool_;
    SweepPlanner sweep_{SweepPlanner::Order::largest_first};
};

class SurvivorZeroPlanner final : public Planner {
public:
    SurvivorZeroPlanner(int m0, double b) : m_(m0), tail_(b) {
        m_stop_ = 1;
        while (1.0 / m_stop_ > b + kTol) ++m_stop_;
    }

    bool next(Configuration& cfg, StageSpec& stage) override {
        capped_.d = -1;
        while (m_ > m_stop_) {
            const double target = 1.0 / (m_ - 1);
            const auto eligible = [target](const Component& c) {
                return !c.frozen && c.value > kTol && c.value < target - kTol;
            };
            if (!open_) {
                pool_.clear();
                for (const auto& c : cfg.components) {
                    if (eligible(c)) pool_.stage(c);
                }
                pool_.seal();
                open_ = true;
            } else {
                for (int id : pair_) {
                    if (eligible(cfg.at(id))) pool_.add(cfg.at(id));
                }
            }
            const auto [i, j] = pool_.pop_two(cfg, eligible);
            if (j >= 0) {
                pair_ = {i, j};
                capped_ = {i, j, target};
                return true;
            }
            for (auto& c : cfg.components) {
                if (std::abs(c.value - target) <= kMassTol) c.value = target;
                c.frozen = c.value == 0.0;
            }
            open_ = false;
            --m_;
        }
        return tail_.next(cfg, stage);
    }

    void set_pair(const ThresholdPair& pair) { tail_.set_pair(pair); }

private:
    int m_;
    int m_stop_ = 1;
    bool open_ = false;
    std::array<int, 2> pair_{-1, -1};
    PairPool pool_;
    SurvivorPlanner tail_;
};

class SmallSpreadPlanner final : public Planner {
public:
    explicit SmallSpreadPlanner(const ThresholdPair& levels)
        : a_(levels.a()), b_(levels.b()), unit_(stage_unit(levels.alpha())) {}

    bool next(Configuration& cfg, StageSpec& stage) override {
        while (!machine_done_) {
            if (group_open_) {
                if (group_pair(cfg, stage)) return true;
                close_group(cfg);
            }
            if (queued_ < steps_.size()) {
                open_group(cfg, steps_[queued_++]);
                continue;
            }
            if (!plan_case(cfg)) finish_machine(cfg);
        }
        return sweep_.next(cfg, stage);
    }

    void finish(RunRecord& rec) const override { rec.machine = summary_; }

    void set_pair(const ThresholdPair& pair) { sweep_.set_pair(pair); }

private:
    enum class Step { at_b_to_a, at_a_to_zero_or_b, above_b_to_b, active_mid, inactive_mid, low_to_zero_or_b };

    bool at(double v, double level) const { return std::abs(v - level) <= kTol; }
    bool mid(double v) const { return v > a_ + kTol && v < b_ - kTol; }
    bool low(double v) const { return v > kTol && v <= a_ + kTol; }
    bool above(double v) const { return v > b_ + kTol; }

    bool plan_case(const Configuration& cfg) {
        if (++cases_ > kMachineCaseCap) throw RunawayError("small-spread stage machine did not terminate");
        int n_at_b = 0, n_active = 0, n_inactive = 0, n_low = 0, n_above = 0;
        for (const auto& c : cfg.components) {
            const double v = c.value;
            if (at(v, b_)) ++n_at_b;
            else if (mid(v)) (c.monitor.active() ? n_active : n_inactive) += 1;
            else if (low(v)) ++n_low;
            else if (above(v)) ++n_above;
        }
        steps_.clear();
        queued_ = 0;
        if (n_at_b >= 1 + unit_) {
            steps_ = {Step::at_b_to_a, Step::at_a_to_zero_or_b};
            if (n_above > 0) steps_.push_back(Step::above_b_to_b);
        } else if (n_active >= 2 * unit_ + 1) {
            steps_ = {Step::active_mid};
        } else if (n_inactive >= 2 * unit_ + 1) {
            steps_ = {Step::inactive_mid};
        } else if (n_low >= std::max(unit_, 2)) {
            // A lone component cannot evolve on its own, so case 4 needs two.
            steps_ = {Step::low_to_zero_or_b};
        } else {
            return false;
        }
        return true;
    }

    void open_group(Configuration& cfg, Step step) {
        members_.clear();
        for (auto& c : cfg.components) {
            const double v = c.value;
            bool in = false;
            switch (step) {
            case Step::at_b_to_a: in = at(v, b_); band_ = {a_, kInf}; break;
            case Step::at_a_to_zero_or_b: in = v > kTol && at(v, a_); band_ = {0.0, b_}; break;
            case Step::above_b_to_b: in = above(v); band_ = {b_, kInf}; break;
            case Step::active_mid: in = mid(v) && c.monitor.active(); band_ = {a_, b_}; break;
            case Step::inactive_mid: in = mid(v) && !c.monitor.active(); band_ = {a_, b_}; break;
            case Step::low_to_zero_or_b: in = low(v); band_ = {0.0, b_}; break;
            }
            c.frozen = !in;
            if (in) members_.push_back(c.id);
        }
        group_open_ = true;
    }

    bool group_pair(const Configuration& cfg, StageSpec& stage) {
        const Band band = band_;
        const auto [i, j] = two_largest(cfg, [&](const Component& c) {
            if (c.frozen || c.value <= kTol) return false;
            return c.value > band.lo + kTol && c.value < band.hi - kTol;
        });
        if (j < 0) return false;
        reflection_stage(cfg, i, j, band_, band_, stage);
        ++summary_.stages;
        return true;
    }

    void close_group(Configuration& cfg) {
        for (int id : members_) {
            Component& c = cfg.at(id);
            if (std::isfinite(band_.lo) && at(c.value, band_.lo)) c.value = band_.lo;
            if (std::isfinite(band_.hi) && at(c.value, band_.hi)) c.value = band_.hi;
        }
        for (auto& c : cfg.components) c.frozen = true;
        group_open_ = false;
    }

    void finish_machine(Configuration& cfg) {
        summary_.downcrossings = cfg.d_ab();
        for (const auto& c : cfg.components) {
            if (c.value > b_ + kTol) ++summary_.above_b;
            else if (c.value > 0.0) ++summary_.in_zero_b;
        }
        machine_done_ = true;
    }

    double a_;
    double b_;
    int unit_;
    bool machine_done_ = false;
    bool group_open_ = false;
    long cases_ = 0;
    std::vector<Step> steps_;
    std::size_t queued_ = 0;
    std::vector<int> members_;
    Band band_;
    RunRecord::Machine summary_;
    // Small components first: the large one then rarely falls back to a.
    SweepPlanner sweep_{SweepPlanner::Order::smallest_first};
};

class EmbedPlanner final : public Planner {
public:
    explicit EmbedPlanner(const ConstructionProgram& program) : chain_(program.chain), m_(program.depth) {}

    bool next(Configuration& cfg, StageSpec& stage) override {
        while (m_ > 0) {
            if (!open_) open_transition(cfg);
            if (merge_pair(cfg, stage)) return true;
            close_transition(cfg);
        }
        return sweep_.next(cfg, stage);
    }

    void finish(RunRecord& rec) const override { rec.refinement_matched = matched_; }

    void set_pair(const ThresholdPair& pair) { sweep_.set_pair(pair); }

private:
    // Splits the live components into those kept (matched by value against
    // the coarser level) and the merge set; the unmatched coarse atoms are
    // the merge targets.
    void open_transition(Configuration& cfg) {
        const auto& target = chain_[static_cast<std::size_t>(m_ - 1)];
        std::vector<int> live;
        for (const auto& c : cfg.components) {
            if (c.value > 0.0) live.push_back(c.id);
        }
        std::stable_sort(live.begin(), live.end(),
                         [&](int x, int y) { return cfg.at(x).value > cfg.at(y).value; });
        merge_.clear();
        targets_.clear();
        std::size_t i = 0;
        std::size_t j = 0;
        while (i < live.size() || j < target.size()) {
            if (i == live.size()) {
                targets_.push_back(target[j++].value);
            } else if (j == target.size()) {
                merge_.push_back(live[i++]);
            } else {
                const double v = cfg.at(live[i]).value;
                const double q = target[j].value;
                if (std::abs(v - q) <= kTol) {
                    ++i;
                    ++j;
                } else if (v > q) {
                    merge_.push_back(live[i++]);
                } else {
                    targets_.push_back(target[j++].value);
                }
            }
        }
        std::sort(targets_.begin(), targets_.end());
        double max_merge = 0.0;
        for (int id : merge_) max_merge = std::max(max_merge, cfg.at(id).value);
        if (!targets_.empty() && max_merge > targets_.front() + kTol) {
            throw ConsistencyError("refinement step violates max(merge set) <= min(targets)");
        }
        for (auto& c : cfg.components) c.frozen = true;
        for (int id : merge_) cfg.at(id).frozen = false;
        open_ = true;
    }

    bool merge_pair(Configuration& cfg, StageSpec& stage) {
        // Drop members frozen by the previous stage; one that stopped at the
        // smallest target consumes it.
        std::erase_if(merge_, [&](int id) {
            const Component& c = cfg.at(id);
            if (!c.frozen) return false;
            if (c.value > 0.0 && !targets_.empty()) targets_.erase(targets_.begin());
            return true;
        });
        if (merge_.size() >= 2) {
            const double t = targets_.empty() ? kInf : targets_.front();
            const auto [i, j] = two_largest(cfg, [&](const Component& c) {
                return std::find(merge_.begin(), merge_.end(), c.id) != merge_.end();
            });
            reflection_stage(cfg, i, j, {0.0, t}, {0.0, t}, stage);
            return true;
        }
        if (merge_.size() == 1) {
            Component& c = cfg.at(merge_.front());
            const double expect = targets_.empty() ? 0.0 : targets_.front();
            if (std::abs(c.value - expect) <= kMassTol && targets_.size() <= 1) {
                c.value = expect;
                targets_.clear();
            } else {
                matched_ = false;
            }
            c.frozen = true;
            merge_.clear();
        }
        if (!targets_.empty()) matched_ = false;
        return false;
    }

    void close_transition(Configuration& cfg) {
        std::vector<double> now;
        for (auto& c : cfg.components) {
            if (c.value > 0.0) now.push_back(c.value);
            c.frozen = c.value == 0.0;
        }
        std::sort(now.begin(), now.end(), std::greater<>());
        const auto& target = chain_[static_cast<std::size_t>(m_ - 1)];
        bool same = now.size() == target.size();
        for (std::size_t i = 0; same && i < now.size(); ++i) same = now[i] == target[i].value;
        if (!same) matched_ = false;
        open_ = false;
        --m_;
    }

    const std::vector<std::vector<RefinedAtom>>& chain_;
    int m_;
    bool open_ = false;
    bool matched_ = true;
    std::vector<int> merge_;
    std::vector<double> targets_;
    SweepPlanner sweep_{SweepPlanner::Order::largest_first};
};

std::unique_ptr<Planner> make_planner(const ConstructionProgram& program, const ThresholdPair& pair) {
    switch (program.kind) {
    case ProgramKind::survivor: {
        auto p = std::make_unique<SurvivorPlanner>(program.levels.b());
        p->set_pair(pair);
        return p;
    }
    case ProgramKind::survivor_zero_prefix: {
        auto p = std::make_unique<SurvivorZeroPlanner>(program.m0, program.levels.b());
        p->set_pair(pair);
        return p;
    }
    case ProgramKind::sequential: {
        auto p = std::make_unique<SweepPlanner>(SweepPlanner::Order::by_id);
        p->set_pair(pair);
        return p;
    }
    case ProgramKind::small_spread: {
        auto p = std::make_unique<SmallSpreadPlanner>(program.levels);
        p->set_pair(pair);
        return p;
    }
    case ProgramKind::embed_prefix: {
        auto p = std::make_unique<EmbedPlanner>(program);
        p->set_pair(pair);
        return p;
    }
    }
    throw PreconditionError("unknown program kind");
}

} // namespace

std::string_view to_string(ProgramKind kind) {
    switch (kind) {
    case ProgramKind::survivor: return "survivor";
    case ProgramKind::survivor_zero_prefix: return "survivor0";
    case ProgramKind::sequential: return "sequential";
    case ProgramKind::small_spread: return "smallspread";
    case ProgramKind::embed_prefix: return "embed";
    }
    return "unknown";
}

ProgramKind parse_program_kind(std::string_view name) {
    if (name == "survivor") return ProgramKind::survivor;
    if (name == "survivor0" || name == "survivor_zero_prefix") return ProgramKind::survivor_zero_prefix;
    if (name == "sequential") return ProgramKind::sequential;
    if (name == "smallspread" || name == "small_spread") return ProgramKind::small_spread;
    if (name == "embed" || name == "embed_prefix") return ProgramKind::embed_prefix;
    throw PreconditionError("unknown program '" + std::string(name) + "'");
}

std::vector<double> geometric_profile(double b0, double tail_mass) {
    if (!(b0 > 0.0 && b0 < 1.0)) throw PreconditionError("geometric profile needs 0 < b0 < 1");
    std::vector<double> p;
    double rest = 1.0;
    for (;;) {
        const double atom = b0 * rest;
        if (rest - atom <= tail_mass) {
            p.push_back(rest);
            break;
        }
        p.push_back(atom);
        rest -= atom;
    }
    return p;
}

std::vector<std::vector<RefinedAtom>> dyadic_refinement_chain(std::span<const double> p, int k) {
    if (k < 0) throw PreconditionError("refinement depth must be nonnegative");
    std::vector<RefinedAtom> ranked;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) ranked.push_back({p[i], 0});
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.value > y.value; });
    for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i].parent = static_cast<int>(i);

    std::vector<std::vector<RefinedAtom>> chain;
    for (int m = 0; m <= k; ++m) {
        const double cap = std::ldexp(1.0, -m);
        std::vector<RefinedAtom> level;
        for (const auto& atom : ranked) {
            if (atom.value <= cap) {
                level.push_back(atom);
                continue;
            }
            int j = 1;
            while (std::ldexp(atom.value, -j) > cap) ++j;
            const double piece = std::ldexp(atom.value, -j);
            for (long c = 0; c < (1L << j); ++c) level.push_back({piece, atom.parent});
        }
        std::stable_sort(level.begin(), level.end(), [](const auto& x, const auto& y) {
            return x.value > y.value || (x.value == y.value && x.parent < y.parent);
        });
        chain.push_back(std::move(level));
    }
    return chain;
}

ConstructionProgram survivor_program(std::span<const double> p, const ThresholdPair& pair) {
    check_distribution(p, "survivor");
    if (*std::max_element(p.begin(), p.end()) > pair.b() + kTol) {
        throw PreconditionError("survivor: every initial atom must be at most b");
    }
    ConstructionProgram prog;
    prog.kind = ProgramKind::survivor;
    prog.initial.assign(p.begin(), p.end());
    prog.parents.assign(p.size(), -1);
    prog.levels = pair;
    return prog;
}

ConstructionProgram survivor_program(int n0, const ThresholdPair& pair) {
    if (n0 < 1) throw PreconditionError("survivor: n0 must be positive");
    const std::vector<double> p(static_cast<std::size_t>(n0), 1.0 / n0);
    return survivor_program(p, pair);
}

ConstructionProgram survivor_zero_prefix_program(int m0, const ThresholdPair& pair) {
    if (m0 < 2) throw PreconditionError("survivor0: M0 must be at least 2");
    if (1.0 / m0 > pair.b() + kTol) throw PreconditionError("survivor0: 1/M0 must be at most b");
    ConstructionProgram prog;
    prog.kind = ProgramKind::survivor_zero_prefix;
    prog.initial.assign(static_cast<std::size_t>(m0), 1.0 / m0);
    prog.parents.assign(prog.initial.size(), -1);
    prog.levels = pair;
    prog.m0 = m0;
    return prog;
}

ConstructionProgram sequential_program(double b0, const ThresholdPair& pair) {
    if (!(b0 > 0.0)) throw PreconditionError("sequential: b0 must be positive");
    if (b0 > pair.b() + kTol) throw PreconditionError("sequential: b0 must be at most b");
    ConstructionProgram prog;
    prog.kind = ProgramKind::sequential;
    prog.initial = geometric_profile(b0);
    prog.parents.assign(prog.initial.size(), -1);
    prog.levels = pair;
    prog.b0 = b0;
    return prog;
}

ConstructionProgram small_spread_program(std::span<const double> p0, const ThresholdPair& pair) {
    check_distribution(p0, "smallspread");
    for (double v : p0) {
        if (!(v > 0.0)) throw PreconditionError("smallspread: atoms must be positive");
        if (v >= pair.b()) throw PreconditionError("smallspread: atoms must lie in (0, b)");
    }
    ConstructionProgram prog;
    prog.kind = ProgramKind::small_spread;
    prog.initial.assign(p0.begin(), p0.end());
    prog.parents.assign(p0.size(), -1);
    prog.levels = pair;
    return prog;
}

ConstructionProgram embed_prefix_program(std::span<const double> p, int k, const ThresholdPair& pair) {
    if (k < 0) throw PreconditionError("embed: refinement depth must be nonnegative");
    check_distribution(p, "embed");
    ConstructionProgram prog;
    prog.kind = ProgramKind::embed_prefix;
    prog.levels = pair;
    prog.depth = k;
    prog.chain = dyadic_refinement_chain(p, k);
    for (const auto& atom : prog.chain.back()) {
        prog.initial.push_back(atom.value);
        prog.parents.push_back(atom.parent);
    }
    return prog;
}

RunRecord run_program(const ConstructionProgram& program, const ThresholdPair& pair, RandomStream& rng,
                      const EngineOptions& options) {
    Configuration cfg(program.initial, pair, program.parents);
    RunContext ctx(options);
    auto planner = make_planner(program, pair);
    StageSpec stage;
    while (planner->next(cfg, stage)) {
        if (const auto* cp = planner->capped_pair()) {
            if (run_capped_reflection(cfg, cp->d, cp->p, cp->cap, pair, rng, ctx)) continue;
            reflection_stage(cfg, cp->d, cp->p, {0.0, cp->cap}, {0.0, cp->cap}, stage);
        }
        run_stage(cfg, stage, pair, rng, ctx);
    }

    const auto w = cfg.winner();
    if (!w) throw ConsistencyError("program stopped before absorption");
    for (const auto& c : cfg.components) {
        if (c.id != *w && c.value != 0.0) throw ConsistencyError("program stopped with mass outside the winner");
    }
    RunRecord rec = make_record(cfg, ctx);
    planner->finish(rec);
    return rec;
}

} // namespace cml
