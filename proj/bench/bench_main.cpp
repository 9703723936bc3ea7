// Serial versus OpenMP timings for the run distributor and the sparse
// kernels. Results of both forms must agree bit for bit.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>

#include <omp.h>

#include "cml/batch.hpp"
#include "cml/constructions.hpp"
#include "cml/pde.hpp"
#include "cml/sparse.hpp"

using namespace cml;

namespace {

template <class Fn>
double seconds(Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(const char* name, double serial, double parallel, bool same) {
    std::printf("%-28s serial %9.4f s  parallel %9.4f s  speedup %5.2f  %s\n", name, serial, parallel,
                serial / parallel, same ? "identical" : "MISMATCH");
}

} // namespace

int main(int argc, char** argv) {
    std::uint64_t runs = 20000;
    if (argc > 1) {
        char* end = nullptr;
        runs = std::strtoull(argv[1], &end, 10);
        if (argc > 2 || *end != '\0' || runs == 0) {
            std::fprintf(stderr, "usage: cml_bench [runs]\n");
            return 2;
        }
    }
    std::printf("threads: %d\n", omp_get_max_threads());
    bool ok = true;

    {
        const auto prog = sequential_program(0.05, ThresholdPair(0.1, 0.25));
        BatchOptions o;
        o.runs = runs;
        std::vector<RunOutcome> s, p;
        o.execution = Execution::serial;
        const double ts = seconds([&] { s = run_batch(prog, o); });
        o.execution = Execution::parallel;
        const double tp = seconds([&] { p = run_batch(prog, o); });
        bool same = s.size() == p.size();
        for (std::size_t i = 0; same && i < s.size(); ++i) same = s[i].n_b == p[i].n_b && s[i].d_ab == p[i].d_ab;
        report("sequential program batch", ts, tp, same);
        ok = ok && same;
    }
    {
        const auto sys = pde_assemble(0.5, 511);
        std::vector<double> x(sys.rhs.size(), 1.0), ys(x.size()), yp(x.size());
        const int reps = 200;
        const double ts = seconds([&] {
            for (int r = 0; r < reps; ++r) spmv(sys.matrix, x, ys, Execution::serial);
        });
        const double tp = seconds([&] {
            for (int r = 0; r < reps; ++r) spmv(sys.matrix, x, yp, Execution::parallel);
        });
        report("spmv x200 (m=511)", ts, tp, ys == yp);
        ok = ok && ys == yp;

        double ds = 0, dp = 0;
        const double t2 = seconds([&] {
            for (int r = 0; r < reps; ++r) ds += dot(ys, x, Execution::serial);
        });
        const double t3 = seconds([&] {
            for (int r = 0; r < reps; ++r) dp += dot(yp, x, Execution::parallel);
        });
        report("dot x200 (m=511)", t2, t3, ds == dp);
        ok = ok && ds == dp;
    }
    {
        PdeSolution s, p;
        const auto sys = pde_assemble(0.5, 127);
        const double ts = seconds([&] { s = pde_solve(sys, 1e-10, Execution::serial); });
        const double tp = seconds([&] { p = pde_solve(sys, 1e-10, Execution::parallel); });
        report("pde solve (m=127)", ts, tp, s.grid.values == p.grid.values);
        ok = ok && s.grid.values == p.grid.values;
    }
    return ok ? 0 : 1;
}
