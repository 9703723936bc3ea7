#include "cml/rng.hpp"

namespace cml {

RandomStream make_stream(std::uint64_t master_seed, std::uint64_t run_index) {
    std::seed_seq seq{
        static_cast<std::uint32_t>(master_seed),
        static_cast<std::uint32_t>(master_seed >> 32),
        static_cast<std::uint32_t>(run_index),
        static_cast<std::uint32_t>(run_index >> 32),
        0x636d6cu,
    };
    return RandomStream(seq);
}

} // namespace cml
