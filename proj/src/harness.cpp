#include "qfv/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "qfv/errors.hpp"

namespace qfv {

namespace {

namespace fs = std::filesystem;

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

std::string fmt(double v, const char* spec = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

uint64_t bytes_digest(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

std::vector<PriorTrainItem> collect_prior_items(const QfvaeModel& model,
                                                const std::vector<Utterance>& corpus) {
    std::vector<PriorTrainItem> items;
    items.reserve(corpus.size());
    for (const auto& utt : corpus) {
        auto an = model.analyze(utt);
        PriorTrainItem item;
        item.post = std::move(an.post);
        item.encodings = std::move(an.encodings);
        items.push_back(std::move(item));
    }
    return items;
}

FrameMatrix clamp_nonnegative(const FrameMatrix& frames) {
    FrameMatrix out = frames;
    for (double& v : out.v) v = std::max(v, 0.0);
    return out;
}

}  // namespace

QfvaeModel model_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.stage != StageTag::stage1)
        throw ConfigError("checkpoint is not a stage-1 model (tag " + stage_tag_name(ckpt.stage) +
                          ")");
    ExperimentConfig cfg = ExperimentConfig::from_text(ckpt.config_text);
    QfvaeModel model;
    model.hp = ModelHyper::from_config(cfg);
    model.params = ckpt.params;
    return model;
}

PitchTrack pitch_track_for(const ExperimentConfig& cfg, std::span<const double> waveform) {
    return yin_f0(waveform, cfg.eval_yin_window, cfg.corpus_stft_hop,
                  static_cast<double>(cfg.corpus_sample_rate), cfg.corpus_f0_min_hz,
                  cfg.corpus_f0_max_hz, cfg.eval_yin_threshold);
}

std::vector<double> resynthesize(const ExperimentConfig& cfg, const FrameMatrix& frames) {
    RngStream phase_rng(bytes_digest(frames.v.data(), frames.v.size() * sizeof(double)));
    return griffin_lim(frames, cfg.corpus_stft_window, cfg.corpus_stft_hop,
                       cfg.eval_griffin_lim_iters, phase_rng);
}

ProsodyMeasurements record_prosody(const ExperimentConfig& cfg, const SampleRecord& rec) {
    std::vector<double> wav = resynthesize(cfg, rec.frames);
    PitchTrack pitch = pitch_track_for(cfg, wav);
    double hop_ms = static_cast<double>(cfg.corpus_stft_hop) /
                    static_cast<double>(cfg.corpus_sample_rate) * 1000.0;
    return phoneme_prosody(rec.frames, rec.attention, pitch, hop_ms);
}

void cmd_gen_corpus(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log) {
    ensure_dir(out_dir);
    CorpusSpec spec = cfg.corpus_spec();
    spec.validate();
    RngStream train_rng = RngStream(cfg.seed).split(1);
    RngStream test_rng = RngStream(cfg.seed).split(2);
    std::vector<Utterance> train, test;
    char id[32];
    for (size_t i = 0; i < cfg.corpus_train_utterances; ++i) {
        std::snprintf(id, sizeof id, "tr%04zu", i);
        RngStream utt_rng = train_rng.split(i);
        train.push_back(gen_utterance(utt_rng, spec, id));
    }
    for (size_t i = 0; i < cfg.corpus_test_utterances; ++i) {
        std::snprintf(id, sizeof id, "te%04zu", i);
        RngStream utt_rng = test_rng.split(i);
        test.push_back(gen_utterance(utt_rng, spec, id));
    }
    write_corpus(join(out_dir, cfg.paths_corpus_train), train);
    write_corpus(join(out_dir, cfg.paths_corpus_test), test);
    log << "gen-corpus: wrote " << train.size() << " train + " << test.size()
        << " test utterances (config " << cfg.digest() << ")\n";
}

std::string cmd_train(const ExperimentConfig& cfg, const std::string& out_dir,
                      const std::string& tag, const std::string& resume_path, std::ostream& log) {
    ensure_dir(out_dir);
    std::vector<Utterance> corpus = read_corpus(join(out_dir, cfg.paths_corpus_train));
    TrainState state;
    size_t remaining = cfg.train_steps;
    if (resume_path.empty()) {
        state = init_stage1(cfg, corpus, RngStream(cfg.seed).split(3));
    } else {
        Checkpoint ckpt = Checkpoint::load(resume_path);
        state.model = model_from_checkpoint(ckpt);
        state.rng = RngStream(ckpt.rng_seed, ckpt.rng_counter);
        state.steps_done = ckpt.steps_done;
        if (state.steps_done >= cfg.train_steps)
            throw ConfigError("resume: checkpoint already has " +
                              std::to_string(state.steps_done) + " steps");
        remaining = cfg.train_steps - state.steps_done;
    }
    auto entries = train_stage1_steps(state, corpus, cfg, remaining);

    Checkpoint ckpt;
    ckpt.stage = StageTag::stage1;
    ckpt.config_text = cfg.canonical_text();
    ckpt.steps_done = state.steps_done;
    ckpt.rng_seed = state.rng.seed();
    ckpt.rng_counter = state.rng.counter();
    ckpt.params = state.model.params;
    std::string ckpt_path = join(out_dir, "stage1" + tag + ".qfvk");
    ckpt.save(ckpt_path);

    std::ostringstream tl;
    tl << "# step lr total recon_mse kl quantization commitment perplexity\n";
    for (const auto& e : entries)
        tl << e.step << " " << fmt(e.lr, "%.17g") << " " << fmt(e.total, "%.17g") << " "
           << fmt(e.recon_mse, "%.17g") << " " << fmt(e.kl, "%.17g") << " "
           << fmt(e.quantization, "%.17g") << " " << fmt(e.commitment, "%.17g") << " "
           << fmt(e.perplexity, "%.17g") << "\n";
    write_text(join(out_dir, "train_log" + tag + ".txt"), tl.str());

    log << "train: " << (cfg.model_codebook_size > 0
                             ? "qfvae k=" + std::to_string(cfg.model_codebook_size)
                             : std::string("baseline"))
        << " steps=" << state.steps_done << " final_recon_mse="
        << fmt(entries.empty() ? 0.0 : entries.back().recon_mse) << " -> " << ckpt_path << "\n";
    return ckpt_path;
}

std::string cmd_fit_prior(const ExperimentConfig& cfg, const std::string& out_dir,
                          const std::string& stage1_path, const std::string& tag,
                          std::ostream& log) {
    ensure_dir(out_dir);
    PriorKind kind = prior_kind_from_name(cfg.prior_kind);
    if (kind == PriorKind::independent)
        throw ConfigError("fit-prior: prior.kind must be ar-continuous or ar-discrete");
    Checkpoint stage1 = Checkpoint::load(stage1_path);
    QfvaeModel model = model_from_checkpoint(stage1);
    if (kind == PriorKind::ar_discrete && !model.hp.quantized())
        throw ConfigError("fit-prior: ar-discrete prior requires a quantized (QFVAE) checkpoint");

    std::vector<Utterance> corpus = read_corpus(join(out_dir, cfg.paths_corpus_train));
    if (corpus.empty()) throw DomainError("fit-prior: empty training corpus");
    std::vector<PriorTrainItem> items = collect_prior_items(model, corpus);

    uint64_t stage1_checksum = 0;
    for (size_t i = 0; i < model.params.block_count(); ++i) {
        const auto& b = model.params.block(i);
        stage1_checksum ^= bytes_digest(b.value.data(), b.value.size() * sizeof(double));
    }

    RngStream rng = RngStream(cfg.seed).split(4);
    PriorTrainLog fit_log;
    Checkpoint out;
    out.config_text = cfg.canonical_text();
    if (kind == PriorKind::ar_continuous) {
        ContinuousARPrior prior = fit_prior_continuous(items, cfg, rng, &fit_log);
        out.stage = StageTag::prior_cont;
        out.params = prior.params;
    } else {
        DiscreteARPrior prior = fit_prior_discrete(items, model.codebook(), cfg, rng, &fit_log);
        out.stage = StageTag::prior_disc;
        out.params = prior.params;
    }
    out.rng_seed = rng.seed();
    out.rng_counter = rng.counter();
    out.steps_done = cfg.prior_epochs;

    uint64_t stage1_checksum_after = 0;
    for (size_t i = 0; i < model.params.block_count(); ++i) {
        const auto& b = model.params.block(i);
        stage1_checksum_after ^= bytes_digest(b.value.data(), b.value.size() * sizeof(double));
    }
    if (stage1_checksum != stage1_checksum_after)
        throw TrainingError("fit-prior: stage-1 parameters changed during prior fitting");

    std::string ckpt_path = join(out_dir, "prior" + tag + ".qfvk");
    out.save(ckpt_path);

    std::ostringstream curve;
    curve << "# epoch mean_loss_per_token\n";
    for (size_t i = 0; i < fit_log.epoch_loss.size(); ++i)
        curve << i << " " << fmt(fit_log.epoch_loss[i], "%.17g") << "\n";
    write_text(join(out_dir, "prior_log" + tag + ".txt"), curve.str());

    log << "fit-prior: " << cfg.prior_kind << " epochs=" << cfg.prior_epochs << " final_loss="
        << fmt(fit_log.epoch_loss.empty() ? 0.0 : fit_log.epoch_loss.back()) << " -> "
        << ckpt_path << "\n";
    return ckpt_path;
}

std::string cmd_sample(const ExperimentConfig& cfg, const std::string& out_dir,
                       const std::string& stage1_path, const std::string& prior_path,
                       const std::string& tag, std::ostream& log) {
    ensure_dir(out_dir);
    PriorKind kind = prior_kind_from_name(cfg.prior_kind);
    Checkpoint stage1 = Checkpoint::load(stage1_path);
    QfvaeModel model = model_from_checkpoint(stage1);

    ContinuousARPrior cont_prior;
    DiscreteARPrior disc_prior;
    if (kind != PriorKind::independent) {
        if (prior_path.empty()) throw ConfigError("sample: AR prior requires --prior-checkpoint");
        Checkpoint prior_ckpt = Checkpoint::load(prior_path);
        ExperimentConfig prior_cfg = ExperimentConfig::from_text(prior_ckpt.config_text);
        if (prior_cfg.model_latent_dim != model.hp.latent_dim ||
            prior_cfg.model_codebook_size != model.hp.codebook_size)
            throw ConfigError("sample: prior checkpoint is inconsistent with the stage-1 model");
        PriorHyper php;
        php.latent_dim = model.hp.latent_dim;
        php.enc_dim = model.hp.enc_out();
        php.hidden = prior_cfg.prior_hidden;
        if (kind == PriorKind::ar_continuous) {
            if (prior_ckpt.stage != StageTag::prior_cont)
                throw ConfigError("sample: prior checkpoint is not ar-continuous");
            cont_prior.hp = php;
            cont_prior.params = prior_ckpt.params;
        } else {
            if (prior_ckpt.stage != StageTag::prior_disc)
                throw ConfigError("sample: prior checkpoint is not ar-discrete");
            if (!model.hp.quantized())
                throw ConfigError("sample: ar-discrete prior requires a QFVAE checkpoint");
            php.codebook_size = model.hp.codebook_size;
            disc_prior.hp = php;
            disc_prior.params = prior_ckpt.params;
        }
    }

    std::vector<Utterance> test = read_corpus(join(out_dir, cfg.paths_corpus_test));
    if (test.empty()) throw DomainError("sample: empty test corpus");
    size_t n_utts = std::min(cfg.sampling_utterances, test.size());

    Codebook cb;
    bool vq = model.hp.quantized();
    if (vq) cb = model.codebook();

    SampleSet set;
    set.kind = RecordKind::samples;
    set.codebook_size = model.hp.codebook_size;
    set.latent_dim = model.hp.latent_dim;
    set.prior = cfg.prior_kind;
    set.scale = cfg.sampling_scale;
    set.config_digest = cfg.digest();

    RngStream base = RngStream(cfg.seed).split(5);
    for (size_t u = 0; u < n_utts; ++u) {
        const Utterance& utt = test[u];
        std::vector<double> y = model.encode_tokens(utt.tokens);
        size_t n = utt.tokens.size();
        size_t free_frames = static_cast<size_t>(
            std::llround(static_cast<double>(n) * cfg.sampling_frames_per_token));
        for (size_t s = 0; s < cfg.sampling_samples_per_utterance; ++s) {
            RngStream rng = base.split(u * 1000003ull + s);
            LatentSequence latents;
            switch (kind) {
                case PriorKind::independent:
                    latents = sample_independent(n, model.hp.latent_dim, cfg.sampling_scale, rng,
                                                 vq ? &cb : nullptr);
                    break;
                case PriorKind::ar_continuous:
                    latents = cont_prior.sample(y, n, rng, vq ? &cb : nullptr);
                    break;
                case PriorKind::ar_discrete:
                    latents = disc_prior.sample(y, n, rng, cb, cfg.sampling_temperature);
                    break;
            }
            DecoderOutput dec = model.decode(y, latents, nullptr, free_frames);
            SampleRecord rec;
            rec.utterance_id = utt.id;
            rec.sample_index = s;
            rec.frames = clamp_nonnegative(dec.frames);
            rec.attention = std::move(dec.attention);
            rec.latents = std::move(latents);
            set.records.push_back(std::move(rec));
        }
    }
    std::string path = join(out_dir, "samples" + tag + ".qfvs");
    set.save(path);
    log << "sample: prior=" << cfg.prior_kind << " scale=" << fmt(cfg.sampling_scale) << " "
        << set.records.size() << " records -> " << path << "\n";
    return path;
}

std::string cmd_copy_synth(const ExperimentConfig& cfg, const std::string& out_dir,
                           const std::string& stage1_path, const std::string& tag,
                           std::ostream& log) {
    ensure_dir(out_dir);
    Checkpoint stage1 = Checkpoint::load(stage1_path);
    QfvaeModel model = model_from_checkpoint(stage1);
    std::vector<Utterance> test = read_corpus(join(out_dir, cfg.paths_corpus_test));
    if (test.empty()) throw DomainError("copy-synth: empty test corpus");

    SampleSet set;
    set.kind = RecordKind::copysynth;
    set.codebook_size = model.hp.codebook_size;
    set.latent_dim = model.hp.latent_dim;
    set.prior = "posterior";
    set.scale = 0.0;
    set.config_digest = cfg.digest();

    for (const auto& utt : test) {
        auto an = model.analyze(utt);
        LatentSequence latents;
        latents.n = an.post.n;
        latents.d = an.post.d;
        latents.z = an.post.mu;  // posterior means, no sampling noise
        if (model.hp.quantized()) latents = model.quantize_latents(latents);
        DecoderOutput dec = model.decode(an.encodings, latents, &utt.frames);
        SampleRecord rec;
        rec.utterance_id = utt.id;
        rec.sample_index = 0;
        rec.frames = clamp_nonnegative(dec.frames);
        rec.attention = std::move(dec.attention);
        rec.latents = std::move(latents);
        set.records.push_back(std::move(rec));
    }
    std::string path = join(out_dir, "copysynth" + tag + ".qfvs");
    set.save(path);
    log << "copy-synth: " << set.records.size() << " reconstructions -> " << path << "\n";
    return path;
}

std::string cmd_evaluate(const ExperimentConfig& cfg, const std::string& out_dir,
                         const std::string& records_path, const std::string& corpus_path,
                         const std::string& tag, std::ostream& log) {
    ensure_dir(out_dir);
    SampleSet set = SampleSet::load(records_path);
    if (set.records.empty()) throw DataError("evaluate: empty record set in " + records_path);

    MetricSet metrics;
    metrics.meta["model"] = set.codebook_size > 0 ? "qfvae" : "baseline";
    metrics.meta["codebook"] = std::to_string(set.codebook_size);
    metrics.meta["config"] = set.config_digest;

    if (set.kind == RecordKind::copysynth) {
        std::vector<Utterance> refs = read_corpus(corpus_path);
        std::map<std::string, const Utterance*> by_id;
        for (const auto& u : refs) by_id[u.id] = &u;
        metrics.kind = "copysynth";
        metrics.columns = {"ffe", "mcd"};
        double ffe_sum = 0.0, mcd_sum = 0.0;
        for (const auto& rec : set.records) {
            auto it = by_id.find(rec.utterance_id);
            if (it == by_id.end())
                throw DataError("evaluate: no reference utterance " + rec.utterance_id);
            const Utterance& ref = *it->second;
            PitchTrack ref_pitch = pitch_track_for(cfg, ref.waveform);
            std::vector<double> est_wav = resynthesize(cfg, rec.frames);
            PitchTrack est_pitch = pitch_track_for(cfg, est_wav);
            double ffe_v = ffe(ref_pitch, est_pitch);
            // frames are band-limited to frame_bins of window/2, so the
            // cepstral band tops out at the cropped Nyquist
            double band_rate = static_cast<double>(cfg.corpus_sample_rate) *
                               static_cast<double>(cfg.corpus_frame_bins) /
                               static_cast<double>(cfg.corpus_stft_window / 2);
            FrameMatrix ref_cep = mfcc(ref.frames, 13, band_rate);
            FrameMatrix est_cep = mfcc(rec.frames, 13, band_rate);
            double mcd_v = mcd(ref_cep, est_cep, cfg.eval_mcd_include_c0);
            metrics.row_ids.push_back(rec.utterance_id);
            metrics.rows.push_back({ffe_v, mcd_v});
            ffe_sum += ffe_v;
            mcd_sum += mcd_v;
        }
        double n = static_cast<double>(set.records.size());
        metrics.row_ids.push_back("__mean__");
        metrics.rows.push_back({ffe_sum / n, mcd_sum / n});
    } else {
        metrics.kind = "diversity";
        metrics.meta["prior"] = set.prior;
        metrics.meta["scale"] = fmt(set.scale, "%.17g");
        metrics.columns = {"e_std", "f0_std_hz", "dur_std_ms"};
        std::map<std::string, std::vector<const SampleRecord*>> groups;
        std::vector<std::string> order;
        for (const auto& rec : set.records) {
            if (!groups.count(rec.utterance_id)) order.push_back(rec.utterance_id);
            groups[rec.utterance_id].push_back(&rec);
        }
        DiversityStats mean_stats;
        for (const auto& id : order) {
            const auto& recs = groups[id];
            if (recs.size() < 2)
                throw DataError("evaluate: utterance " + id + " has fewer than 2 samples");
            std::vector<ProsodyMeasurements> measurements;
            measurements.reserve(recs.size());
            for (const auto* rec : recs) measurements.push_back(record_prosody(cfg, *rec));
            DiversityStats stats = diversity_stats(measurements);
            metrics.row_ids.push_back(id);
            metrics.rows.push_back({stats.energy, stats.f0_hz, stats.duration_ms});
            mean_stats.energy += stats.energy;
            mean_stats.f0_hz += stats.f0_hz;
            mean_stats.duration_ms += stats.duration_ms;
        }
        double n = static_cast<double>(order.size());
        metrics.row_ids.push_back("__mean__");
        metrics.rows.push_back({mean_stats.energy / n, mean_stats.f0_hz / n,
                                mean_stats.duration_ms / n});
    }
    std::string path = join(out_dir, "metrics_" + metrics.kind + tag + ".txt");
    metrics.save(path);
    log << "evaluate: " << metrics.kind << " on " << set.records.size() << " records -> " << path
        << "\n";
    return path;
}

std::string cmd_report(const std::vector<std::string>& metric_paths, const std::string& out_dir,
                       std::ostream& log) {
    if (metric_paths.empty()) throw DomainError("report: need at least one metric record file");
    ensure_dir(out_dir);
    std::vector<MetricSet> copysynth, diversity;
    for (const auto& path : metric_paths) {
        MetricSet set = MetricSet::load(path);
        if (set.kind == "copysynth")
            copysynth.push_back(std::move(set));
        else if (set.kind == "diversity")
            diversity.push_back(std::move(set));
        else
            throw FormatError("report: unknown metric kind " + set.kind + " in " + path);
    }

    auto mean_row = [](const MetricSet& set) -> const std::vector<double>& {
        for (size_t i = 0; i < set.row_ids.size(); ++i)
            if (set.row_ids[i] == "__mean__") return set.rows[i];
        throw FormatError("report: record set lacks a __mean__ row");
    };
    auto meta = [](const MetricSet& set, const std::string& key) {
        auto it = set.meta.find(key);
        return it == set.meta.end() ? std::string("-") : it->second;
    };

    std::ostringstream out;
    if (!copysynth.empty()) {
        std::sort(copysynth.begin(), copysynth.end(), [&](const MetricSet& a, const MetricSet& b) {
            auto ka = std::stoull(meta(a, "codebook") == "-" ? "0" : meta(a, "codebook"));
            auto kb = std::stoull(meta(b, "codebook") == "-" ? "0" : meta(b, "codebook"));
            if (meta(a, "model") != meta(b, "model")) return meta(a, "model") < meta(b, "model");
            return ka < kb;
        });
        out << "Reconstruction (copy synthesis)\n";
        out << "  model     K        FFE        MCD   config\n";
        for (const auto& set : copysynth) {
            const auto& row = mean_row(set);
            char line[160];
            std::snprintf(line, sizeof line, "  %-8s %4s %10.4f %10.4f   %s\n",
                          meta(set, "model").c_str(),
                          meta(set, "model") == "baseline" ? "-" : meta(set, "codebook").c_str(),
                          row[0], row[1], meta(set, "config").c_str());
            out << line;
        }
        out << "\n";
    }
    if (!diversity.empty()) {
        std::sort(diversity.begin(), diversity.end(), [&](const MetricSet& a, const MetricSet& b) {
            if (meta(a, "model") != meta(b, "model")) return meta(a, "model") < meta(b, "model");
            if (meta(a, "prior") != meta(b, "prior")) return meta(a, "prior") < meta(b, "prior");
            return std::stod(meta(a, "scale")) < std::stod(meta(b, "scale"));
        });
        out << "Sampling diversity (mean per-phoneme stddev)\n";
        out << "  model     prior           scale        E     F0(Hz)    Dur(ms)   config\n";
        for (const auto& set : diversity) {
            const auto& row = mean_row(set);
            char line[200];
            std::snprintf(line, sizeof line, "  %-8s %-14s %6.2f %8.4f %10.3f %10.3f   %s\n",
                          meta(set, "model").c_str(), meta(set, "prior").c_str(),
                          std::stod(meta(set, "scale")), row[0], row[1], row[2],
                          meta(set, "config").c_str());
            out << line;
        }
        out << "\n";
    }
    std::string text = out.str();
    write_text(join(out_dir, "report.txt"), text);
    log << text;
    return text;
}

}  // namespace qfv
