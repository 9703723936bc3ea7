#include <doctest.h>

#include <random>
#include <stdexcept>
#include <vector>

#include "cml/batch.hpp"
#include "cml/constructions.hpp"
#include "cml/pde.hpp"
#include "cml/sparse.hpp"
#include "cml/wf.hpp"

using namespace cml;

namespace {

bool same(const RunOutcome& x, const RunOutcome& y) {
    const bool machine = x.machine.has_value() == y.machine.has_value() &&
                         (!x.machine || (x.machine->downcrossings == y.machine->downcrossings &&
                                         x.machine->above_b == y.machine->above_b &&
                                         x.machine->in_zero_b == y.machine->in_zero_b &&
                                         x.machine->stages == y.machine->stages));
    return x.n_b == y.n_b && x.d_ab == y.d_ab && x.winner == y.winner && x.stages == y.stages &&
           x.truncated == y.truncated && machine && x.chain_ok == y.chain_ok;
}

void check_batch(const ConstructionProgram& prog, std::uint64_t runs) {
    BatchOptions opts;
    opts.runs = runs;
    opts.seed = 42;
    opts.execution = Execution::serial;
    const auto s = run_batch(prog, opts);
    opts.execution = Execution::parallel;
    for (int workers : {1, 3, 8}) {
        opts.workers = workers;
        const auto p = run_batch(prog, opts);
        REQUIRE(p.size() == s.size());
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(same(s[i], p[i]));
    }
}

CsrMatrix random_matrix(int n, std::mt19937_64& g) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    CsrMatrix a;
    a.cols = n;
    for (int r = 0; r < n; ++r) {
        a.push(r, 8.0 + u(g));
        for (int k = 0; k < 4; ++k) a.push(static_cast<int>(g() % static_cast<unsigned>(n)), u(g));
        a.end_row();
    }
    return a;
}

} // namespace

TEST_CASE("construction batches match serial runs") {
    const ThresholdPair pair(0.1, 0.25);
    check_batch(survivor_program(40, pair), 300);
    check_batch(survivor_zero_prefix_program(16, pair), 100);
    check_batch(sequential_program(0.05, pair), 300);
    const std::vector<double> p(40, 0.025);
    check_batch(small_spread_program(p, ThresholdPair(0.05, 0.1)), 300);
    const std::vector<double> q = {0.6, 0.4};
    check_batch(embed_prefix_program(q, 3, pair), 300);
}

TEST_CASE("run i depends only on the seed and i") {
    BatchOptions opts;
    opts.runs = 50;
    opts.seed = 5;
    const auto prog = sequential_program(0.05, ThresholdPair(0.1, 0.25));
    const auto full = run_batch(prog, opts);
    opts.runs = 20;
    const auto prefix = run_batch(prog, opts);
    for (std::size_t i = 0; i < prefix.size(); ++i) CHECK(same(prefix[i], full[i]));
}

TEST_CASE("wf batches match serial runs") {
    WfRunParams p;
    p.k = 6;
    p.h = 1e-3;
    p.runs = 64;
    p.monitors = ThresholdPair(0.1, 0.3);
    const auto s = wf_batch(p, Execution::serial);
    const auto q = wf_batch(p, Execution::parallel, 4);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(same(s[i], q[i]));

    p.runs = 200;
    const auto c1 = cov3_mc(0.2, 0.3, 0.5, p, Execution::serial);
    const auto c2 = cov3_mc(0.2, 0.3, 0.5, p, Execution::parallel, 3);
    CHECK(c1.estimate == c2.estimate);
    CHECK(c1.std_error == c2.std_error);
}

TEST_CASE("exceptions cross the parallel loop") {
    auto fn = [](std::uint64_t i) -> int {
        if (i == 37 || i == 90) throw std::runtime_error("run " + std::to_string(i));
        return static_cast<int>(i);
    };
    for (auto exec : {Execution::serial, Execution::parallel}) {
        try {
            map_runs<int>(100, exec, 4, fn);
            FAIL("no exception");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()) == "run 37");
        }
    }
    const auto v = map_runs<int>(100, Execution::parallel, 4, [](std::uint64_t i) { return static_cast<int>(2 * i); });
    for (int i = 0; i < 100; ++i) CHECK(v[static_cast<std::size_t>(i)] == 2 * i);
}

TEST_CASE("kernels are bit-identical") {
    std::mt19937_64 g(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int n : {1, 100, 4096, 4097, 30000}) {
        const auto a = random_matrix(n, g);
        std::vector<double> x(static_cast<std::size_t>(n)), ys(x.size()), yp(x.size());
        for (auto& v : x) v = u(g);
        spmv(a, x, ys, Execution::serial);
        spmv(a, x, yp, Execution::parallel);
        CHECK(ys == yp);
        CHECK(dot(x, ys, Execution::serial) == dot(x, ys, Execution::parallel));

        // serial reference of the matrix product
        for (int r = 0; r < n; ++r) {
            double s = 0.0;
            for (int k = a.row_ptr[static_cast<std::size_t>(r)]; k < a.row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
                s += a.val[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(a.col[static_cast<std::size_t>(k)])];
            }
            CHECK(ys[static_cast<std::size_t>(r)] == doctest::Approx(s).epsilon(1e-14));
        }
        long double ref = 0.0L;
        for (std::size_t i = 0; i < x.size(); ++i) ref += static_cast<long double>(x[i]) * ys[i];
        CHECK(dot(x, ys, Execution::serial) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-10));
    }
}

TEST_CASE("solver and pde are bit-identical") {
    std::mt19937_64 g(2);
    const auto a = random_matrix(5000, g);
    std::vector<double> rhs(5000, 1.0);
    std::vector<double> xs(5000, 0.0), xp(5000, 0.0);
    const auto ss = bicgstab(a, rhs, xs, 1e-12, 500, Execution::serial);
    const auto sp = bicgstab(a, rhs, xp, 1e-12, 500, Execution::parallel);
    CHECK(ss.converged);
    CHECK(ss.iterations == sp.iterations);
    CHECK(xs == xp);

    const auto ps = pde_solve(pde_assemble(0.5, 63), 1e-10, Execution::serial);
    const auto pp = pde_solve(pde_assemble(0.5, 63), 1e-10, Execution::parallel);
    CHECK(ps.grid.values == pp.grid.values);
    CHECK(ps.stats.iterations == pp.stats.iterations);
}
