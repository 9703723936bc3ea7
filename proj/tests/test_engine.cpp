#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "cml/engine.hpp"
#include "cml/error.hpp"
#include "oracles.hpp"

using namespace cml;

namespace {

bool has_level(const std::vector<double>& v, double x) {
    return std::any_of(v.begin(), v.end(), [x](double g) { return std::abs(g - x) <= 1e-12; });
}

StageSpec reflection(int d, int p, double s, std::vector<double> stops) {
    StageSpec st;
    st.driver_id = d;
    st.tied.push_back({p, s, -1.0});
    st.stop_levels = std::move(stops);
    return st;
}

} // namespace

TEST_CASE("gambler_step frequencies") {
    auto rng = make_stream(42, 0);
    const int n = 1'000'000;
    int up = 0;
    for (int i = 0; i < n; ++i) up += gambler_step(rng, 0.5, 0.0, 1.0) == 1.0;
    CHECK(std::abs(up / double(n) - 0.5) <= 4 * std::sqrt(0.25 / n));

    up = 0;
    for (int i = 0; i < n; ++i) up += gambler_step(rng, 0.3, 0.2, 0.6) == 0.6;
    CHECK(std::abs(up / double(n) - 0.25) <= 4 * std::sqrt(0.25 * 0.75 / n));

    for (int i = 0; i < 1000; ++i) CHECK(gambler_step(rng, 0.2, 0.2, 0.6) == 0.2);
    CHECK_THROWS_AS(gambler_step(rng, 0.2, 0.2, 0.2), DomainError);
    CHECK_THROWS_AS(gambler_step(rng, 0.7, 0.2, 0.6), DomainError);
}

TEST_CASE("streams are reproducible and distinct") {
    auto s1 = make_stream(42, 7);
    auto s2 = make_stream(42, 7);
    auto s3 = make_stream(42, 8);
    auto s4 = make_stream(43, 7);
    const auto x = s1();
    CHECK(x == s2());
    CHECK(x != s3());
    CHECK(x != s4());
    for (int i = 0; i < 1000; ++i) {
        const double u = uniform01(s1);
        CHECK((u >= 0.0 && u < 1.0));
    }
}

TEST_CASE("stage grid") {
    const ThresholdPair pair(0.1, 0.25);
    SUBCASE("driver alone over [0,1]") {
        StageSpec st;
        st.driver_id = 0;
        st.stop_levels = {0.0, 1.0};
        const auto g = build_stage_grid(st, pair).stop_levels;
        CHECK(g == std::vector<double>{0.0, 0.1, 0.25, 1.0});
    }
    SUBCASE("proportional tie") {
        StageSpec st;
        st.driver_id = 0;
        st.tied.push_back({1, 0.6, -0.6});
        st.stop_levels = {0.0, 1.0};
        const auto g = build_stage_grid(st, pair).stop_levels;
        CHECK(has_level(g, 1.0 - 0.25 / 0.6));
        CHECK(has_level(g, 1.0 - 0.1 / 0.6));
        CHECK(std::is_sorted(g.begin(), g.end()));
    }
    SUBCASE("reflection pair") {
        const auto g = build_stage_grid(reflection(0, 1, 0.7, {0.0, 0.7}), pair).stop_levels;
        CHECK(has_level(g, 0.6));
        CHECK(has_level(g, 0.45));
        CHECK(g.front() == 0.0);
        CHECK(g.back() == 0.7);
    }
    SUBCASE("constant tie contributes nothing; close levels merge") {
        StageSpec st;
        st.driver_id = 0;
        st.tied.push_back({1, 0.3, 0.0});
        st.stop_levels = {0.0, 0.1 + 1e-13, 0.5};
        const auto g = build_stage_grid(st, pair).stop_levels;
        CHECK(g.size() == 4);
        CHECK(g[1] == 0.1 + 1e-13); // the stop level wins the merge
    }
    SUBCASE("unsorted stops rejected") {
        StageSpec st;
        st.driver_id = 0;
        st.stop_levels = {0.5, 0.2};
        CHECK_THROWS_AS(build_stage_grid(st, pair), PreconditionError);
    }
}

TEST_CASE("reflection stage law") {
    // (0.3, 0.4) coupled, third component frozen at 0.3
    const ThresholdPair pair(0.1, 0.25);
    const std::vector<double> start{0.3, 0.4, 0.3};
    const int n = 100'000;
    int top = 0;
    double mean_driver = 0.0;
    for (int r = 0; r < n; ++r) {
        Configuration cfg(start, pair);
        cfg.at(2).frozen = true;
        auto rng = make_stream(11, static_cast<std::uint64_t>(r));
        RunContext ctx;
        auto st = reflection(0, 1, 0.7, {0.0, 0.7});
        run_stage(cfg, st, pair, rng, ctx);
        const double d = cfg.at(0).value;
        REQUIRE((d == 0.0 || d == 0.7));
        REQUIRE(cfg.at(1).value == doctest::Approx(0.7 - d).epsilon(1e-12));
        REQUIRE(cfg.at(2).value == 0.3);
        REQUIRE(std::abs(cfg.sum() - 1.0) <= 1e-9);
        top += d == 0.7;
        mean_driver += d;
    }
    CHECK(std::abs(top / double(n) - 3.0 / 7.0) <= 4 * std::sqrt(3.0 / 7.0 * 4.0 / 7.0 / n));
    // martingale: E[driver after] = 0.3
    CHECK(std::abs(mean_driver / n - 0.3) <= 4 * 0.7 * std::sqrt(3.0 / 7.0 * 4.0 / 7.0 / n));
}

TEST_CASE("tied sup is the maximum along the path") {
    const ThresholdPair pair(0.1, 0.25);
    const std::vector<double> start{0.05, 0.05, 0.9};
    StageObserver general;
    for (StageObserver* obs : {static_cast<StageObserver*>(nullptr), &general}) {
        int seen_up = 0;
        for (int r = 0; r < 200; ++r) {
            Configuration cfg(start, pair);
            cfg.at(2).frozen = true;
            auto rng = make_stream(5, static_cast<std::uint64_t>(r));
            EngineOptions opts;
            opts.observer = obs;
            RunContext ctx(opts);
            run_stage(cfg, reflection(0, 1, 0.1, {0.0, 0.1}), pair, rng, ctx);
            const bool up = cfg.at(0).value == 0.1;
            seen_up += up;
            // the partner only falls when the driver rises
            CHECK(cfg.at(1).monitor.sup_value == doctest::Approx(up ? 0.05 : 0.1).epsilon(1e-12));
            CHECK(cfg.at(0).monitor.sup_value == doctest::Approx(up ? 0.1 : 0.05).epsilon(1e-12));
        }
        CHECK(seen_up > 50);
        CHECK(seen_up < 150);
    }
}

TEST_CASE("driver at b reaches 1 before a with probability (b-a)/(1-a)") {
    const ThresholdPair pair(0.1, 0.25);
    const std::vector<double> start{0.25, 0.75};
    const int n = 100'000;
    int one = 0;
    for (int r = 0; r < n; ++r) {
        Configuration cfg(start, pair);
        auto rng = make_stream(5, static_cast<std::uint64_t>(r));
        RunContext ctx;
        run_stage(cfg, reflection(0, 1, 1.0, {0.1, 1.0}), pair, rng, ctx);
        one += cfg.at(0).value == 1.0;
        if (cfg.at(0).value == 1.0) REQUIRE(cfg.winner() == 0);
    }
    const double p = 0.15 / 0.9;
    CHECK(std::abs(one / double(n) - p) <= 4 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("absorbed driver terminates immediately") {
    const ThresholdPair pair(0.1, 0.25);
    const std::vector<double> start{1.0, 0.0, 0.0};
    Configuration cfg(start, pair);
    StageSpec st;
    st.driver_id = 0;
    st.stop_levels = {0.0, 1.0};
    auto rng = make_stream(1, 0);
    RunContext ctx;
    run_stage(cfg, st, pair, rng, ctx);
    CHECK(ctx.moves == 0);
    CHECK(cfg.winner() == 0);
    const auto rec = make_record(cfg, ctx);
    CHECK(rec.winner_id == 0);
    CHECK(rec.n_b == 1);
    CHECK(rec.per_component[0].reached_b);
}

TEST_CASE("single component monitor follows the modified geometric law") {
    // driver from b over {0, 1}; the complement is tied with slope -1
    const ThresholdPair pair(0.1, 0.25);
    const std::vector<double> start{0.25, 0.75};
    const int n = 50'000;
    std::vector<long long> counts(60, 0);
    for (int r = 0; r < n; ++r) {
        Configuration cfg(start, pair);
        auto rng = make_stream(42, static_cast<std::uint64_t>(r));
        RunContext ctx;
        run_stage(cfg, reflection(0, 1, 1.0, {0.0, 1.0}), pair, rng, ctx);
        const int d = cfg.at(0).monitor.downcrossings;
        REQUIRE(d < 60);
        ++counts[static_cast<std::size_t>(d)];
    }
    // pooled chi-square, computed here rather than through the stats module
    const auto pmf = oracle::lattice_downcrossing_pmf(20, 2, 5, 5, 59);
    double chi2 = 0.0, obs = 0.0, expct = 0.0;
    int cells = 0;
    double tail_p = 1.0;
    for (int d = 0; d < 60; ++d) {
        obs += double(counts[static_cast<std::size_t>(d)]);
        expct += n * pmf[static_cast<std::size_t>(d)];
        tail_p -= pmf[static_cast<std::size_t>(d)];
        if (expct >= 5.0 && n * tail_p >= 5.0) {
            chi2 += (obs - expct) * (obs - expct) / expct;
            ++cells;
            obs = expct = 0.0;
        }
    }
    expct += n * tail_p;
    chi2 += (obs - expct) * (obs - expct) / expct;
    ++cells;
    const double p_value = boost::math::gamma_q((cells - 1) / 2.0, chi2 / 2.0);
    CHECK(cells > 5);
    CHECK(p_value >= 0.01);
}

TEST_CASE("tied stage is a martingale for every component") {
    // driver 0.2; 0.5 and 0.3 tied to (1 - driver); stops {0.05, 0.6}
    const ThresholdPair pair(0.1, 0.25);
    const std::vector<double> start{0.2, 0.5, 0.3};
    const int n = 100'000;
    std::vector<std::vector<double>> after(3);
    for (int r = 0; r < n; ++r) {
        Configuration cfg(start, pair);
        StageSpec st;
        st.driver_id = 0;
        st.tied.push_back({1, 0.5 / 0.8, -0.5 / 0.8});
        st.tied.push_back({2, 0.3 / 0.8, -0.3 / 0.8});
        st.stop_levels = {0.05, 0.6};
        auto rng = make_stream(3, static_cast<std::uint64_t>(r));
        RunContext ctx(EngineOptions{.check_crossings = true});
        run_stage(cfg, st, pair, rng, ctx);
        REQUIRE(std::abs(cfg.sum() - 1.0) <= 1e-9);
        for (int k = 0; k < 3; ++k) after[static_cast<std::size_t>(k)].push_back(cfg.at(k).value);
    }
    for (int k = 0; k < 3; ++k) {
        const auto& v = after[static_cast<std::size_t>(k)];
        const double se = std::sqrt(oracle::variance(v) / n);
        CHECK(std::abs(oracle::mean(v) - start[static_cast<std::size_t>(k)]) <= 4 * se);
    }
}

TEST_CASE("tied components are monitored at their own crossings") {
    // the partner of a reflection starts at 0.6 and must pass b = 0.25 and a
    // = 0.1 on its way down; the driver goes from 0.1 to 0.7
    const ThresholdPair pair(0.1, 0.25);
    const std::vector<double> start{0.1, 0.6, 0.3};
    Configuration cfg(start, pair);
    cfg.at(2).frozen = true;
    CHECK(cfg.at(1).monitor.active());
    auto rng = make_stream(1, 1);
    RunContext ctx;
    // force the top: stops {0.1, 0.7}, the driver starts at the bottom stop,
    // so rerun until it reaches 0.7
    for (int tries = 0; tries < 100 && cfg.at(0).value != 0.7; ++tries) {
        Configuration c(start, pair);
        c.at(2).frozen = true;
        run_stage(c, reflection(0, 1, 0.7, {0.0, 0.7}), pair, rng, ctx);
        if (c.at(0).value == 0.7) cfg = c;
    }
    REQUIRE(cfg.at(0).value == 0.7);
    CHECK(cfg.at(1).value == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cfg.at(1).monitor.downcrossings == 1);
    CHECK(cfg.at(0).monitor.reached_b);
    CHECK(cfg.at(1).frozen);
}

TEST_CASE("freeze rules set exact targets") {
    const ThresholdPair pair(0.1, 0.25);
    const std::vector<double> start{0.15, 0.15, 0.7};
    StageSpec st = reflection(0, 1, 0.3, {0.05, 0.25});
    st.freeze_rules.push_back({0.05, {1}, {0.25}});
    st.freeze_rules.push_back({0.25, {0}, {0.25}});
    for (int r = 0; r < 200; ++r) {
        Configuration cfg(start, pair);
        cfg.at(2).frozen = true;
        auto rng = make_stream(9, static_cast<std::uint64_t>(r));
        RunContext ctx;
        run_stage(cfg, st, pair, rng, ctx);
        const bool up = cfg.at(0).value == 0.25;
        CHECK((up ? cfg.at(0).frozen : cfg.at(1).frozen));
        CHECK((up ? cfg.at(1).value : cfg.at(0).value) == doctest::Approx(0.05));
        CHECK((up ? cfg.at(0).value : cfg.at(1).value) == 0.25);
    }
}

TEST_CASE("stage preconditions") {
    const ThresholdPair pair(0.1, 0.25);
    const std::vector<double> start{0.3, 0.4, 0.3};
    auto rng = make_stream(1, 0);
    auto run = [&](Configuration cfg, const StageSpec& st) {
        RunContext ctx;
        run_stage(cfg, st, pair, rng, ctx);
    };
    Configuration cfg(start, pair);

    SUBCASE("frozen driver") {
        Configuration c = cfg;
        c.at(0).frozen = true;
        CHECK_THROWS_AS(run(c, reflection(0, 1, 0.7, {0.0, 0.7})), PreconditionError);
    }
    SUBCASE("driver outside stops") { CHECK_THROWS_AS(run(cfg, reflection(0, 1, 0.7, {0.4, 0.7})), PreconditionError); }
    SUBCASE("tied map disagrees") { CHECK_THROWS_AS(run(cfg, reflection(0, 1, 0.8, {0.0, 0.7})), PreconditionError); }
    SUBCASE("mass not conserved") {
        StageSpec st;
        st.driver_id = 0;
        st.stop_levels = {0.0, 0.7};
        CHECK_THROWS_AS(run(cfg, st), PreconditionError);
    }
    SUBCASE("tied map leaves [0,1]") { CHECK_THROWS_AS(run(cfg, reflection(0, 1, 0.7, {0.0, 0.9})), PreconditionError); }
    SUBCASE("bad ids") {
        CHECK_THROWS_AS(run(cfg, reflection(5, 1, 0.7, {0.0, 0.7})), PreconditionError);
        CHECK_THROWS_AS(run(cfg, reflection(0, 0, 0.6, {0.0, 0.6})), PreconditionError);
    }
    SUBCASE("freeze rule off the grid") {
        auto st = reflection(0, 1, 0.7, {0.0, 0.7});
        st.freeze_rules.push_back({0.9, {0}, {}});
        CHECK_THROWS_AS(run(cfg, st), PreconditionError);
    }
    SUBCASE("configuration values") {
        const std::vector<double> bad{0.5, 1.5};
        CHECK_THROWS_AS(Configuration(bad, pair), DomainError);
    }
}

TEST_CASE("move budget") {
    const ThresholdPair pair(0.1, 0.25);
    const std::vector<double> start{0.5, 0.5};
    std::vector<double> stops;
    for (int i = 0; i <= 1000; ++i) stops.push_back(i / 1000.0);
    StageSpec st = reflection(0, 1, 1.0, stops);
    st.stop_levels = stops;
    Configuration cfg(start, pair);
    auto rng = make_stream(1, 0);
    RunContext ctx(EngineOptions{.move_budget = 50});
    CHECK_THROWS_AS(run_stage(cfg, st, pair, rng, ctx), RunawayError);
}

TEST_CASE("trace rows and observer") {
    const ThresholdPair pair(0.1, 0.25);
    const std::vector<double> start{0.3, 0.4, 0.3};
    std::ostringstream out;
    TraceWriter trace(out);

    struct Counter : StageObserver {
        int begins = 0, ends = 0, moves = 0;
        double worst = 0.0;
        void on_stage_begin(const Configuration&, const StageSpec&) override { ++begins; }
        void on_stage_end(const Configuration&, const StageSpec&) override { ++ends; }
        bool wants_moves() const override { return true; }
        void on_move(const Configuration& c) override {
            ++moves;
            worst = std::max(worst, std::abs(c.sum() - 1.0));
        }
    } obs;

    Configuration cfg(start, pair);
    cfg.at(2).frozen = true;
    auto rng = make_stream(2, 0);
    RunContext ctx(EngineOptions{.run_id = 7, .trace = &trace, .observer = &obs});
    run_stage(cfg, reflection(0, 1, 0.7, {0.0, 0.7}), pair, rng, ctx);
    CHECK(obs.begins == 1);
    CHECK(obs.ends == 1);
    CHECK(obs.moves == static_cast<int>(ctx.moves));
    CHECK(obs.worst <= 1e-9);

    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "run_id,stage,component_id,value,status");
    int rows = 0;
    while (std::getline(in, line)) {
        CHECK(line.rfind("7,0,", 0) == 0);
        ++rows;
    }
    CHECK(rows >= static_cast<int>(ctx.moves));
}

TEST_CASE("value form leaves the input untouched") {
    const ThresholdPair pair(0.1, 0.25);
    const std::vector<double> start{0.3, 0.4, 0.3};
    Configuration cfg(start, pair);
    cfg.at(2).frozen = true;
    auto rng = make_stream(4, 0);
    const auto out = run_stage(cfg, reflection(0, 1, 0.7, {0.0, 0.7}), pair, rng);
    CHECK(cfg.at(0).value == 0.3);
    CHECK((out.at(0).value == 0.0 || out.at(0).value == 0.7));
}

TEST_CASE("monitor transitions") {
    const ThresholdPair pair(0.1, 0.25);
    MonitorState m = start_monitor(0.15, pair);
    CHECK(m.status == MonitorStatus::pre_b);
    m.visit(0.05, pair);
    CHECK(m.downcrossings == 0);
    m.visit(0.25, pair);
    CHECK(m.status == MonitorStatus::active);
    m.visit(0.2, pair);
    CHECK(m.status == MonitorStatus::active);
    m.visit(0.1, pair);
    CHECK(m.status == MonitorStatus::inactive);
    CHECK(m.downcrossings == 1);
    m.visit(0.05, pair);
    CHECK(m.downcrossings == 1);
    m.visit(0.3, pair);
    m.visit(0.0, pair);
    CHECK(m.downcrossings == 2);
    CHECK(m.sup_value == 0.3);
    CHECK(to_string(MonitorStatus::inactive) == "inactive");
}
