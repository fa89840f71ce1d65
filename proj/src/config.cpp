#include "qfv/config.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "qfv/errors.hpp"

namespace qfv {

std::string prior_kind_name(PriorKind kind) {
    switch (kind) {
        case PriorKind::independent: return "independent";
        case PriorKind::ar_continuous: return "ar-continuous";
        case PriorKind::ar_discrete: return "ar-discrete";
    }
    return "independent";
}

PriorKind prior_kind_from_name(const std::string& name) {
    if (name == "independent") return PriorKind::independent;
    if (name == "ar-continuous") return PriorKind::ar_continuous;
    if (name == "ar-discrete") return PriorKind::ar_discrete;
    throw ConfigError("unknown prior kind: " + name);
}

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Field {
    enum Type { U64, F64, BOOL, STR } type;
    void* ptr;
};

std::map<std::string, Field> field_table(ExperimentConfig& c) {
    auto u = [](size_t& v) { return Field{Field::U64, &v}; };
    auto u64f = [](uint64_t& v) { return Field{Field::U64, &v}; };
    auto f = [](double& v) { return Field{Field::F64, &v}; };
    auto b = [](bool& v) { return Field{Field::BOOL, &v}; };
    auto s = [](std::string& v) { return Field{Field::STR, &v}; };
    return {
        {"seed", u64f(c.seed)},
        {"corpus.train_utterances", u(c.corpus_train_utterances)},
        {"corpus.test_utterances", u(c.corpus_test_utterances)},
        {"corpus.vocab", u(c.corpus_vocab)},
        {"corpus.min_tokens", u(c.corpus_min_tokens)},
        {"corpus.max_tokens", u(c.corpus_max_tokens)},
        {"corpus.f0_min_hz", f(c.corpus_f0_min_hz)},
        {"corpus.f0_max_hz", f(c.corpus_f0_max_hz)},
        {"corpus.dur_min_frames", u(c.corpus_dur_min_frames)},
        {"corpus.dur_max_frames", u(c.corpus_dur_max_frames)},
        {"corpus.energy_min", f(c.corpus_energy_min)},
        {"corpus.energy_max", f(c.corpus_energy_max)},
        {"corpus.noise_level", f(c.corpus_noise_level)},
        {"corpus.sample_rate", u(c.corpus_sample_rate)},
        {"corpus.stft_window", u(c.corpus_stft_window)},
        {"corpus.stft_hop", u(c.corpus_stft_hop)},
        {"corpus.frame_bins", u(c.corpus_frame_bins)},
        {"model.latent_dim", u(c.model_latent_dim)},
        {"model.embed_dim", u(c.model_embed_dim)},
        {"model.enc_hidden", u(c.model_enc_hidden)},
        {"model.ref_attn_dim", u(c.model_ref_attn_dim)},
        {"model.ref_value_dim", u(c.model_ref_value_dim)},
        {"model.dec_hidden", u(c.model_dec_hidden)},
        {"model.dec_attn_dim", u(c.model_dec_attn_dim)},
        {"model.prenet_dim", u(c.model_prenet_dim)},
        {"model.codebook_size", u(c.model_codebook_size)},
        {"model.beta", f(c.model_beta)},
        {"model.gamma", f(c.model_gamma)},
        {"model.frames_per_token", f(c.model_frames_per_token)},
        {"model.input_drop", f(c.model_input_drop)},
        {"model.attn_bias_sigma", f(c.model_attn_bias_sigma)},
        {"train.steps", u(c.train_steps)},
        {"train.batch", u(c.train_batch)},
        {"train.step_size", f(c.train_step_size)},
        {"train.decay_factor", f(c.train_decay_factor)},
        {"train.decay_interval", u(c.train_decay_interval)},
        {"train.clip_norm", f(c.train_clip_norm)},
        {"train.log_interval", u(c.train_log_interval)},
        {"train.beta_warmup_steps", u(c.train_beta_warmup_steps)},
        {"prior.kind", s(c.prior_kind)},
        {"prior.hidden", u(c.prior_hidden)},
        {"prior.epochs", u(c.prior_epochs)},
        {"prior.batch", u(c.prior_batch)},
        {"prior.step_size", f(c.prior_step_size)},
        {"sampling.scale", f(c.sampling_scale)},
        {"sampling.samples_per_utterance", u(c.sampling_samples_per_utterance)},
        {"sampling.utterances", u(c.sampling_utterances)},
        {"sampling.frames_per_token", f(c.sampling_frames_per_token)},
        {"sampling.temperature", f(c.sampling_temperature)},
        {"eval.griffin_lim_iters", u(c.eval_griffin_lim_iters)},
        {"eval.yin_threshold", f(c.eval_yin_threshold)},
        {"eval.yin_window", u(c.eval_yin_window)},
        {"eval.mcd_include_c0", b(c.eval_mcd_include_c0)},
        {"paths.corpus_train", s(c.paths_corpus_train)},
        {"paths.corpus_test", s(c.paths_corpus_test)},
    };
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

CorpusSpec ExperimentConfig::corpus_spec() const {
    CorpusSpec spec;
    spec.vocab = corpus_vocab;
    spec.min_tokens = corpus_min_tokens;
    spec.max_tokens = corpus_max_tokens;
    spec.f0_min_hz = corpus_f0_min_hz;
    spec.f0_max_hz = corpus_f0_max_hz;
    spec.dur_min_frames = corpus_dur_min_frames;
    spec.dur_max_frames = corpus_dur_max_frames;
    spec.energy_min = corpus_energy_min;
    spec.energy_max = corpus_energy_max;
    spec.noise_level = corpus_noise_level;
    spec.sample_rate = static_cast<double>(corpus_sample_rate);
    spec.stft_window = corpus_stft_window;
    spec.stft_hop = corpus_stft_hop;
    spec.frame_bins = corpus_frame_bins;
    spec.seed = seed;
    return spec;
}

void ExperimentConfig::validate() const {
    corpus_spec().validate();
    prior_kind_from_name(prior_kind);
    if (model_latent_dim == 0) throw ConfigError("model.latent_dim must be positive");
    if (model_enc_hidden == 0 || model_dec_hidden == 0)
        throw ConfigError("hidden sizes must be positive");
    if (sampling_scale < 0.0) throw ConfigError("sampling.scale must be nonnegative");
    if (sampling_temperature < 0.0) throw ConfigError("sampling.temperature must be nonnegative");
    if (train_batch == 0 || prior_batch == 0) throw ConfigError("batch sizes must be positive");
    if (!(train_step_size > 0.0) || !(prior_step_size > 0.0))
        throw ConfigError("step sizes must be positive");
    if (model_frames_per_token <= 0.0 || sampling_frames_per_token <= 0.0)
        throw ConfigError("frames_per_token must be positive");
    if (model_input_drop < 0.0 || model_input_drop >= 1.0)
        throw ConfigError("model.input_drop must lie in [0, 1)");
    if (model_attn_bias_sigma <= 0.0) throw ConfigError("attn_bias_sigma must be positive");
    if (eval_griffin_lim_iters == 0) throw ConfigError("eval.griffin_lim_iters must be positive");
    if (paths_corpus_train.empty() || paths_corpus_test.empty())
        throw ConfigError("corpus paths must be nonempty");
}

std::string ExperimentConfig::canonical_text() const {
    auto& self = const_cast<ExperimentConfig&>(*this);
    auto table = field_table(self);
    std::ostringstream out;
    for (const auto& [key, field] : table) {  // std::map iterates in key order
        out << key << " = ";
        switch (field.type) {
            case Field::U64:
                if (key == "seed")
                    out << *static_cast<uint64_t*>(field.ptr);
                else
                    out << *static_cast<size_t*>(field.ptr);
                break;
            case Field::F64: out << format_double(*static_cast<double*>(field.ptr)); break;
            case Field::BOOL: out << (*static_cast<bool*>(field.ptr) ? "true" : "false"); break;
            case Field::STR: out << *static_cast<std::string*>(field.ptr); break;
        }
        out << "\n";
    }
    return out.str();
}

std::string ExperimentConfig::digest() const {
    std::string text = canonical_text();
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
    ExperimentConfig config;
    auto table = field_table(config);
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": missing '='");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        auto it = table.find(key);
        if (it == table.end())
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                              "'");
        const Field& field = it->second;
        try {
            switch (field.type) {
                case Field::U64: {
                    if (key == "seed")
                        *static_cast<uint64_t*>(field.ptr) = std::stoull(value);
                    else
                        *static_cast<size_t*>(field.ptr) = std::stoull(value);
                    break;
                }
                case Field::F64: *static_cast<double*>(field.ptr) = std::stod(value); break;
                case Field::BOOL: {
                    if (value == "true")
                        *static_cast<bool*>(field.ptr) = true;
                    else if (value == "false")
                        *static_cast<bool*>(field.ptr) = false;
                    else
                        throw std::invalid_argument("bool");
                    break;
                }
                case Field::STR: *static_cast<std::string*>(field.ptr) = value; break;
            }
        } catch (const std::exception&) {
            throw ConfigError("config line " + std::to_string(line_no) + ": bad value for '" +
                              key + "'");
        }
    }
    config.validate();
    return config;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

}  // namespace qfv
