#pragma once

// Euler-Maruyama simulation of the k-allele Wright-Fisher diffusion with
// crossing monitors and a Brownian-bridge correction for missed hits.

#include <cstdint>
#include <vector>

#include "cml/analytic.hpp"
#include "cml/batch.hpp"
#include "cml/engine.hpp"
#include "cml/monitor.hpp"
#include "cml/rng.hpp"

namespace cml {

struct WfState {
    std::vector<double> values;
    std::vector<char> absorbed;
    double time = 0.0;

    explicit WfState(std::vector<double> start);
    std::size_t size() const noexcept { return values.size(); }
    int alive() const noexcept;
    bool fixed() const noexcept;
};

/// k components at 1/k.
WfState equal_start(int k);

struct WfRunParams {
    int k = 1000;
    double h = 1e-5;
    std::uint64_t seed = 42;
    ThresholdPair monitors{0.1, 0.25};
    bool bridge_correction = true;
    double max_time = 1e3;
    std::uint64_t runs = 1000;
    /// Once two components remain their sum is 1 and either one is a
    /// one-dimensional martingale; finish with the exact level-grid walk.
    bool exact_two_allele_tail = true;
};

void validate(const WfRunParams& params);

/// One step of size h. Increments have covariance h x_i (delta_ij - x_j);
/// components at or below 0 are absorbed and the survivors renormalised,
/// a component at or above 1 fixes the process.
void wf_step(WfState& state, double h, RandomStream& rng);

/// Single path to fixation or max_time (then record.truncated is set).
RunRecord wf_run(const WfRunParams& params, const WfState& start, RandomStream& rng);

/// params.runs paths from equal_start(params.k); run i uses make_stream(seed, i).
std::vector<RunOutcome> wf_batch(const WfRunParams& params, Execution exec = Execution::parallel,
                                 int workers = 0);

struct Cov3Estimate {
    double estimate = 0.0;
    double std_error = 0.0;
    std::uint64_t runs = 0;
    std::uint64_t truncated = 0;
};

/// Fraction of 3-allele paths from (x, y, 1-x-y) in which both of the first
/// two components reach b. Uses params.h, seed, runs, bridge_correction,
/// max_time and the exact tail.
Cov3Estimate cov3_mc(double x, double y, double b, const WfRunParams& params,
                     Execution exec = Execution::parallel, int workers = 0);

} // namespace cml
