#include "qfv/checkpoint.hpp"

#include "qfv/errors.hpp"
#include "qfv/io.hpp"

namespace qfv {

namespace {
constexpr uint32_t kCheckpointMagic = 0x4B564651;  // "QFVK"
constexpr uint32_t kCheckpointVersion = 1;
}  // namespace

std::string stage_tag_name(StageTag tag) {
    switch (tag) {
        case StageTag::stage1: return "stage1";
        case StageTag::prior_cont: return "prior-cont";
        case StageTag::prior_disc: return "prior-disc";
    }
    return "unknown";
}

void Checkpoint::save(const std::string& path) const {
    BinaryWriter out;
    out.u32(kCheckpointMagic);
    out.u32(kCheckpointVersion);
    out.u32(static_cast<uint32_t>(stage));
    out.u64(config_text.size());
    out.raw(config_text.data(), config_text.size());
    out.u64(steps_done);
    out.u64(rng_seed);
    out.u64(rng_counter);
    out.u64(params.block_count());
    for (size_t i = 0; i < params.block_count(); ++i) {
        const ParamBlock& b = params.block(i);
        out.str(b.name);
        out.u32(static_cast<uint32_t>(b.shape.size()));
        for (size_t d : b.shape) out.u64(d);
        out.f64_array(b.value);
    }
    out.save(path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    BinaryReader in = BinaryReader::from_file(path);
    uint32_t magic, version;
    try {
        magic = in.u32();
        version = in.u32();
    } catch (const FormatError&) {
        throw FormatError("checkpoint file too short for header: " + path);
    }
    if (magic != kCheckpointMagic) throw FormatError("bad checkpoint magic in " + path);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " +
                          path);
    Checkpoint ckpt;
    uint32_t stage = in.u32();
    if (stage < 1 || stage > 3) throw FormatError("bad stage tag in " + path);
    ckpt.stage = static_cast<StageTag>(stage);
    uint64_t cfg_len = in.u64();
    if (cfg_len > in.remaining()) throw FormatError("truncated config echo in " + path);
    ckpt.config_text.resize(cfg_len);
    in.raw(ckpt.config_text.data(), cfg_len);
    ckpt.steps_done = in.u64();
    ckpt.rng_seed = in.u64();
    ckpt.rng_counter = in.u64();
    uint64_t n_blocks = in.u64();
    for (uint64_t i = 0; i < n_blocks; ++i) {
        try {
            std::string name = in.str();
            uint32_t ndim = in.u32();
            std::vector<size_t> shape(ndim);
            for (auto& d : shape) d = in.u64();
            ParamBlock& block = ckpt.params.add(name, shape);
            in.f64_array(block.value);
        } catch (const FormatError& e) {
            throw FormatError("checkpoint block " + std::to_string(i) + " of " + path + ": " +
                              e.what());
        }
    }
    return ckpt;
}

}  // namespace qfv
