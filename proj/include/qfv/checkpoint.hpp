#pragma once

#include <cstdint>
#include <string>

#include "qfv/nn.hpp"

namespace qfv {

enum class StageTag : uint32_t { stage1 = 1, prior_cont = 2, prior_disc = 3 };

std::string stage_tag_name(StageTag tag);

/// Checkpoint container `QFVK`: config echo, training-position metadata, and
/// named little-endian f64 parameter blocks. Round trips bit-exactly.
struct Checkpoint {
    StageTag stage = StageTag::stage1;
    std::string config_text;
    uint64_t steps_done = 0;
    uint64_t rng_seed = 0;
    uint64_t rng_counter = 0;
    ParamStore params;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace qfv
