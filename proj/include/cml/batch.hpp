#pragma once

// Distribution of independent runs over OpenMP threads. Run i always uses
// make_stream(seed, i), so serial and parallel execution give identical
// results in identical order.

#include <cstdint>
#include <exception>
#include <optional>
#include <vector>

#include <omp.h>

#include "cml/constructions.hpp"
#include "cml/engine.hpp"

namespace cml {

enum class Execution { serial, parallel };

/// The part of a RunRecord kept for aggregation.
struct RunOutcome {
    int n_b = 0;
    int d_ab = 0;
    int winner = -1;
    std::uint64_t stages = 0;
    bool truncated = false;
    std::optional<RunRecord::Machine> machine;
    std::optional<bool> chain_ok;
};

struct BatchOptions {
    std::uint64_t runs = 0;
    std::uint64_t seed = 42;
    Execution execution = Execution::parallel;
    int workers = 0; ///< 0: OpenMP default
    EngineOptions engine;
};

/// out[i] = fn(i) for i < n. Exceptions thrown by fn are rethrown after
/// the loop (the first one by index).
template <class T, class Fn>
std::vector<T> map_runs(std::uint64_t n, Execution exec, int workers, Fn&& fn) {
    std::vector<T> out(n);
    if (exec == Execution::serial || n < 2) {
        for (std::uint64_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::vector<std::exception_ptr> errors(n);
    bool failed = false;
    const long long count = static_cast<long long>(n);
    const int threads = workers > 0 ? workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 16) num_threads(threads) reduction(|| : failed)
    for (long long i = 0; i < count; ++i) {
        try {
            out[static_cast<std::size_t>(i)] = fn(static_cast<std::uint64_t>(i));
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
            failed = true;
        }
    }
    if (failed) {
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    return out;
}

RunOutcome outcome_of(const RunRecord& record);

/// Runs the program `options.runs` times at its own thresholds. A trace
/// writer or an observer forces serial execution.
std::vector<RunOutcome> run_batch(const ConstructionProgram& program, const BatchOptions& options);

} // namespace cml
