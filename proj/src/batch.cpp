#include "cml/batch.hpp"

namespace cml {

RunOutcome outcome_of(const RunRecord& record) {
    RunOutcome o;
    o.n_b = record.n_b;
    o.d_ab = record.d_ab;
    o.winner = record.winner_id;
    o.stages = record.stages_executed;
    o.truncated = record.truncated;
    o.machine = record.machine;
    o.chain_ok = record.refinement_matched;
    return o;
}

std::vector<RunOutcome> run_batch(const ConstructionProgram& program, const BatchOptions& options) {
    const Execution exec = (options.engine.trace || options.engine.observer) ? Execution::serial : options.execution;
    return map_runs<RunOutcome>(options.runs, exec, options.workers, [&](std::uint64_t i) {
        EngineOptions eo = options.engine;
        eo.run_id = i;
        RandomStream rng = make_stream(options.seed, i);
        return outcome_of(run_program(program, program.levels, rng, eo));
    });
}

} // namespace cml
