#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qfv/metrics.hpp"
#include "qfv/model.hpp"

namespace qfv {

enum class RecordKind : uint32_t { copysynth = 0, samples = 1 };

/// One decoded utterance (reconstruction or random sample): predicted frames,
/// decoder attention, and the latent sequence that produced them.
struct SampleRecord {
    std::string utterance_id;
    uint64_t sample_index = 0;
    FrameMatrix frames;
    FrameMatrix attention;
    LatentSequence latents;
};

/// Binary container `QFVS` for sample/reconstruction records.
struct SampleSet {
    RecordKind kind = RecordKind::copysynth;
    uint64_t codebook_size = 0;
    uint64_t latent_dim = 0;
    std::string prior = "posterior";
    double scale = 0.0;
    std::string config_digest;
    std::vector<SampleRecord> records;

    void save(const std::string& path) const;
    static SampleSet load(const std::string& path);
};

/// Line-oriented metric records: one self-describing header line, one record
/// per line, `__mean__` row for corpus means.
struct MetricSet {
    std::string kind;  // "copysynth" | "diversity"
    std::map<std::string, std::string> meta;
    std::vector<std::string> columns;  // excludes the leading id column
    std::vector<std::string> row_ids;
    std::vector<std::vector<double>> rows;

    void save(const std::string& path) const;
    std::string render() const;
    static MetricSet load(const std::string& path);
    static MetricSet parse(const std::string& text);
};

}  // namespace qfv
