#include "qfv/records.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "qfv/errors.hpp"
#include "qfv/io.hpp"

namespace qfv {

namespace {
constexpr uint32_t kSampleMagic = 0x53564651;  // "QFVS"
constexpr uint32_t kSampleVersion = 1;
constexpr int kMetricVersion = 1;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace

void SampleSet::save(const std::string& path) const {
    BinaryWriter out;
    out.u32(kSampleMagic);
    out.u32(kSampleVersion);
    out.u32(static_cast<uint32_t>(kind));
    out.u64(codebook_size);
    out.u64(latent_dim);
    out.str(prior);
    out.f64(scale);
    out.str(config_digest);
    out.u64(records.size());
    for (const auto& rec : records) {
        out.str(rec.utterance_id);
        out.u64(rec.sample_index);
        out.u64(rec.frames.t);
        out.u64(rec.frames.f);
        out.f64_array(rec.frames.v);
        out.u64(rec.attention.t);
        out.u64(rec.attention.f);
        out.f64_array(rec.attention.v);
        out.u64(rec.latents.n);
        out.u64(rec.latents.d);
        out.f64_array(rec.latents.z);
        out.u64(rec.latents.indices.size());
        for (size_t idx : rec.latents.indices) out.u64(idx);
    }
    out.save(path);
}

SampleSet SampleSet::load(const std::string& path) {
    BinaryReader in = BinaryReader::from_file(path);
    uint32_t magic, version;
    try {
        magic = in.u32();
        version = in.u32();
    } catch (const FormatError&) {
        throw FormatError("sample file too short for header: " + path);
    }
    if (magic != kSampleMagic) throw FormatError("bad sample-set magic in " + path);
    if (version != kSampleVersion)
        throw FormatError("unsupported sample-set version " + std::to_string(version));
    SampleSet set;
    uint32_t kind = in.u32();
    if (kind > 1) throw FormatError("bad record kind in " + path);
    set.kind = static_cast<RecordKind>(kind);
    set.codebook_size = in.u64();
    set.latent_dim = in.u64();
    set.prior = in.str();
    set.scale = in.f64();
    set.config_digest = in.str();
    uint64_t count = in.u64();
    set.records.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        try {
            SampleRecord rec;
            rec.utterance_id = in.str();
            rec.sample_index = in.u64();
            uint64_t ft = in.u64(), ff = in.u64();
            rec.frames = FrameMatrix(ft, ff);
            in.f64_array(rec.frames.v);
            uint64_t at = in.u64(), af = in.u64();
            rec.attention = FrameMatrix(at, af);
            in.f64_array(rec.attention.v);
            rec.latents.n = in.u64();
            rec.latents.d = in.u64();
            rec.latents.z.resize(rec.latents.n * rec.latents.d);
            in.f64_array(rec.latents.z);
            uint64_t n_idx = in.u64();
            rec.latents.indices.resize(n_idx);
            for (auto& idx : rec.latents.indices) idx = in.u64();
            set.records.push_back(std::move(rec));
        } catch (const FormatError& e) {
            throw FormatError("sample record " + std::to_string(i) + " of " + path + ": " +
                              e.what());
        }
    }
    return set;
}

std::string MetricSet::render() const {
    std::ostringstream out;
    out << "#qfv-metrics v=" << kMetricVersion << " kind=" << kind;
    for (const auto& [k, v] : meta) out << " " << k << "=" << v;
    out << " columns=id";
    for (const auto& c : columns) out << "," << c;
    out << "\n";
    for (size_t r = 0; r < rows.size(); ++r) {
        out << row_ids[r];
        for (double v : rows[r]) out << " " << format_double(v);
        out << "\n";
    }
    return out.str();
}

void MetricSet::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << render();
    if (!out) throw IoError("write failed: " + path);
}

MetricSet MetricSet::parse(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("metric records: empty file");
    MetricSet set;
    {
        std::istringstream header(line);
        std::string tok;
        header >> tok;
        if (tok != "#qfv-metrics") throw FormatError("metric records: bad header");
        while (header >> tok) {
            size_t eq = tok.find('=');
            if (eq == std::string::npos)
                throw FormatError("metric records: malformed header token " + tok);
            std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
            if (key == "v") {
                if (std::stoi(value) != kMetricVersion)
                    throw FormatError("metric records: unsupported version " + value);
            } else if (key == "kind") {
                set.kind = value;
            } else if (key == "columns") {
                std::istringstream cols(value);
                std::string c;
                bool first = true;
                while (std::getline(cols, c, ',')) {
                    if (first) {
                        first = false;  // leading id column
                        continue;
                    }
                    set.columns.push_back(c);
                }
            } else {
                set.meta[key] = value;
            }
        }
    }
    if (set.kind.empty()) throw FormatError("metric records: missing kind");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string id;
        row >> id;
        std::vector<double> values;
        double v;
        while (row >> v) values.push_back(v);
        if (values.size() != set.columns.size())
            throw FormatError("metric records: row width mismatch at " + id);
        set.row_ids.push_back(id);
        set.rows.push_back(std::move(values));
    }
    return set;
}

MetricSet MetricSet::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse(ss.str());
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

}  // namespace qfv
