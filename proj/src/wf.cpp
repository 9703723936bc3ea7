#include "cml/wf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/random/normal_distribution.hpp>

#include "cml/error.hpp"

namespace cml {

namespace {

constexpr double kExpCutoff = 40.0;

using Normal = boost::random::normal_distribution<double>;

struct Scratch {
    std::vector<double> root;
    std::vector<double> noise;
};

// Probability that a bridge from u to v over a step of length h, with
// variance rate s2, touches `level` (u and v on the same side of it).
double bridge_hit(double u, double v, double level, double s2, double h) {
    const double arg = 2.0 * (level - u) * (level - v) / (s2 * h);
    if (arg > kExpCutoff) return 0.0;
    return std::exp(-arg);
}

// Advances the live components in `alive` by one step. Absorbed components
// leave `alive`; on fixation only the winner remains.
void step_alive(std::vector<double>& x, std::vector<int>& alive, double h, RandomStream& rng, Scratch& s) {
    const std::size_t n = alive.size();
    s.root.resize(n);
    s.noise.resize(n);
    Normal normal;
    double proj = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        s.root[t] = std::sqrt(x[static_cast<std::size_t>(alive[t])]);
        s.noise[t] = normal(rng);
        proj += s.root[t] * s.noise[t];
    }
    const double sh = std::sqrt(h);
    int winner = -1;
    for (std::size_t t = 0; t < n; ++t) {
        double& v = x[static_cast<std::size_t>(alive[t])];
        v += sh * s.root[t] * (s.noise[t] - s.root[t] * proj);
        if (v >= 1.0 && (winner < 0 || v > x[static_cast<std::size_t>(winner)])) winner = alive[t];
    }
    if (winner >= 0) {
        for (int i : alive) x[static_cast<std::size_t>(i)] = 0.0;
        x[static_cast<std::size_t>(winner)] = 1.0;
        alive.assign(1, winner);
        return;
    }
    double kept = 0.0;
    std::size_t w = 0;
    for (std::size_t t = 0; t < n; ++t) {
        double& v = x[static_cast<std::size_t>(alive[t])];
        if (v <= 0.0) {
            v = 0.0;
        } else {
            kept += v;
            alive[w++] = alive[t];
        }
    }
    alive.resize(w);
    if (w == 1) {
        x[static_cast<std::size_t>(alive[0])] = 1.0;
        return;
    }
    const double scale = 1.0 / kept;
    for (int i : alive) x[static_cast<std::size_t>(i)] *= scale;
}

void observe(MonitorState& m, double u, double v, const ThresholdPair& pair, bool bridge, double h,
             RandomStream& rng) {
    if (bridge) {
        const double mid = 0.5 * (u + v);
        const double s2 = mid * (1.0 - mid);
        if (s2 > 0.0) {
            if (!m.active()) {
                if (u < pair.b() && v < pair.b()) {
                    const double p = bridge_hit(u, v, pair.b(), s2, h);
                    if (p > 0.0 && uniform01(rng) < p) m.visit(pair.b(), pair);
                }
            } else if (u > pair.a() && v > pair.a()) {
                const double p = bridge_hit(u, v, pair.a(), s2, h);
                if (p > 0.0 && uniform01(rng) < p) m.visit(pair.a(), pair);
            }
        }
    }
    m.visit(v, pair);
}

// Two live components summing to 1: the exact walk of one of them on the
// level grid finishes the path.
void finish_pair(std::vector<double>& x, std::vector<MonitorState>& mon, std::vector<int>& alive,
                 const ThresholdPair& pair, RandomStream& rng) {
    const int i = alive[0];
    const int j = alive[1];
    Configuration cfg(x, pair);
    for (std::size_t c = 0; c < x.size(); ++c) cfg.components[c].monitor = mon[c];
    const double s = x[static_cast<std::size_t>(i)] + x[static_cast<std::size_t>(j)];
    StageSpec stage;
    stage.driver_id = i;
    stage.tied.push_back({j, s, -1.0});
    stage.stop_levels = {0.0, s};
    stage.freeze_rules.push_back({0.0, {i, j}, {0.0, s}});
    stage.freeze_rules.push_back({s, {i, j}, {s, 0.0}});
    RunContext ctx;
    run_stage(cfg, stage, pair, rng, ctx);
    for (int c : {i, j}) {
        x[static_cast<std::size_t>(c)] = cfg.at(c).value;
        mon[static_cast<std::size_t>(c)] = cfg.at(c).monitor;
    }
    alive.assign(1, x[static_cast<std::size_t>(i)] >= x[static_cast<std::size_t>(j)] ? i : j);
    x[static_cast<std::size_t>(alive[0])] = 1.0;
}

struct PathResult {
    bool truncated = false;
    std::uint64_t steps = 0;
};

// Runs until one component is left, the time cap, or stop(x, mon) is true.
template <class Stop>
PathResult simulate_path(std::vector<double>& x, std::vector<MonitorState>& mon, double t0,
                         const WfRunParams& params, RandomStream& rng, Stop stop) {
    std::vector<int> alive;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) alive.push_back(static_cast<int>(i));
    }
    std::vector<int> before;
    std::vector<double> prev;
    Scratch scratch;
    PathResult res;
    double t = t0;
    const ThresholdPair& pair = params.monitors;
    while (alive.size() > 1 && !stop(x, mon)) {
        if (params.exact_two_allele_tail && alive.size() == 2) {
            finish_pair(x, mon, alive, pair, rng);
            break;
        }
        if (t >= params.max_time) {
            res.truncated = true;
            break;
        }
        before = alive;
        prev.resize(before.size());
        for (std::size_t q = 0; q < before.size(); ++q) prev[q] = x[static_cast<std::size_t>(before[q])];
        step_alive(x, alive, params.h, rng, scratch);
        t += params.h;
        ++res.steps;
        for (std::size_t q = 0; q < before.size(); ++q) {
            const auto i = static_cast<std::size_t>(before[q]);
            observe(mon[i], prev[q], x[i], pair, params.bridge_correction, params.h, rng);
        }
    }
    return res;
}

} // namespace

WfState::WfState(std::vector<double> start) : values(std::move(start)), absorbed(values.size(), 0) {
    for (std::size_t i = 0; i < values.size(); ++i) absorbed[i] = values[i] <= 0.0 || values[i] >= 1.0;
}

int WfState::alive() const noexcept {
    return static_cast<int>(std::count(absorbed.begin(), absorbed.end(), 0));
}

bool WfState::fixed() const noexcept {
    return std::find(values.begin(), values.end(), 1.0) != values.end();
}

WfState equal_start(int k) {
    if (k < 1) throw PreconditionError("equal start needs k >= 1");
    return WfState(std::vector<double>(static_cast<std::size_t>(k), 1.0 / k));
}

void validate(const WfRunParams& params) {
    if (params.k < 2) throw PreconditionError("wf: k must be at least 2");
    if (!(params.h > 0.0)) throw PreconditionError("wf: step h must be positive");
    if (!(params.max_time > 0.0)) throw PreconditionError("wf: max_time must be positive");
}

void wf_step(WfState& state, double h, RandomStream& rng) {
    if (!(h > 0.0)) throw PreconditionError("wf: step h must be positive");
    if (state.fixed()) return;
    std::vector<int> alive;
    for (std::size_t i = 0; i < state.size(); ++i) {
        if (!state.absorbed[i]) alive.push_back(static_cast<int>(i));
    }
    if (alive.size() < 2) return;
    Scratch scratch;
    step_alive(state.values, alive, h, rng, scratch);
    std::fill(state.absorbed.begin(), state.absorbed.end(), 1);
    for (int i : alive) state.absorbed[static_cast<std::size_t>(i)] = state.values[static_cast<std::size_t>(i)] >= 1.0;
    state.time += h;
}

RunRecord wf_run(const WfRunParams& params, const WfState& start, RandomStream& rng) {
    if (start.size() < 2) throw PreconditionError("wf: need at least two components");
    if (!(params.h > 0.0) || !(params.max_time > 0.0)) throw PreconditionError("wf: invalid step or time cap");
    const double total = std::accumulate(start.values.begin(), start.values.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) throw PreconditionError("wf: start must sum to 1");

    std::vector<double> x = start.values;
    std::vector<MonitorState> mon;
    mon.reserve(x.size());
    for (double v : x) mon.push_back(start_monitor(v, params.monitors));
    const PathResult path = simulate_path(x, mon, start.time, params, rng,
                                          [](const std::vector<double>&, const std::vector<MonitorState>&) {
                                              return false;
                                          });
    RunRecord rec;
    rec.per_component = mon;
    rec.truncated = path.truncated;
    rec.elementary_moves = path.steps;
    for (const auto& m : mon) {
        rec.n_b += m.reached_b ? 1 : 0;
        rec.d_ab += m.downcrossings;
    }
    if (!path.truncated) {
        const auto it = std::find(x.begin(), x.end(), 1.0);
        if (it == x.end()) throw ConsistencyError("wf path ended without a winner");
        rec.winner_id = static_cast<int>(it - x.begin());
    }
    return rec;
}

std::vector<RunOutcome> wf_batch(const WfRunParams& params, Execution exec, int workers) {
    validate(params);
    return map_runs<RunOutcome>(params.runs, exec, workers, [&](std::uint64_t i) {
        RandomStream rng = make_stream(params.seed, i);
        return outcome_of(wf_run(params, equal_start(params.k), rng));
    });
}

Cov3Estimate cov3_mc(double x, double y, double b, const WfRunParams& params, Execution exec, int workers) {
    if (!(b > 0.0 && b < 1.0)) throw DomainError("cov3: b must lie in (0,1)");
    if (!(x >= 0.0 && y >= 0.0 && x + y < 1.0)) throw PreconditionError("cov3: need x, y >= 0 and x + y < 1");
    if (!(x < b && y < b)) throw PreconditionError("cov3: need x, y < b");
    if (!(params.h > 0.0) || !(params.max_time > 0.0) || params.runs < 2) {
        throw PreconditionError("cov3: invalid step, time cap or run count");
    }
    Cov3Estimate est;
    est.runs = params.runs;
    if (x == 0.0 || y == 0.0) return est;

    WfRunParams p = params;
    p.monitors = ThresholdPair(0.5 * b, b);
    // 0: miss, 1: both reached, 2: truncated
    const auto results = map_runs<int>(p.runs, exec, workers, [&](std::uint64_t i) {
        RandomStream rng = make_stream(p.seed, i);
        std::vector<double> v = {x, y, 1.0 - x - y};
        std::vector<MonitorState> mon;
        for (double s : v) mon.push_back(start_monitor(s, p.monitors));
        auto decided = [](const std::vector<double>& val, const std::vector<MonitorState>& m) {
            if (m[0].reached_b && m[1].reached_b) return true;
            return (val[0] == 0.0 && !m[0].reached_b) || (val[1] == 0.0 && !m[1].reached_b);
        };
        const PathResult path = simulate_path(v, mon, 0.0, p, rng, decided);
        if (mon[0].reached_b && mon[1].reached_b) return 1;
        return path.truncated ? 2 : 0;
    });
    std::uint64_t hits = 0;
    for (int r : results) {
        if (r == 1) ++hits;
        if (r == 2) ++est.truncated;
    }
    const double n = static_cast<double>(p.runs - est.truncated);
    if (n < 2) throw RunawayError("cov3: every path hit the time cap");
    est.estimate = static_cast<double>(hits) / n;
    est.std_error = std::sqrt(est.estimate * (1.0 - est.estimate) / (n - 1.0));
    return est;
}

} // namespace cml
