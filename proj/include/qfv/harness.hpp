#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "qfv/checkpoint.hpp"
#include "qfv/config.hpp"
#include "qfv/model.hpp"
#include "qfv/priors.hpp"
#include "qfv/records.hpp"

namespace qfv {

/// Subcommand implementations shared by the CLI and the test suites. All
/// functions are deterministic given (config, seed) and write only under
/// `out_dir`.

void cmd_gen_corpus(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log);

/// Trains stage 1 (baseline when codebook_size == 0) and writes
/// stage1<tag>.qfvk plus train_log<tag>.txt. `resume_path` continues a run.
std::string cmd_train(const ExperimentConfig& cfg, const std::string& out_dir,
                      const std::string& tag, const std::string& resume_path, std::ostream& log);

/// Fits the configured AR prior against a frozen stage-1 checkpoint; writes
/// prior<tag>.qfvk plus prior_log<tag>.txt.
std::string cmd_fit_prior(const ExperimentConfig& cfg, const std::string& out_dir,
                          const std::string& stage1_path, const std::string& tag,
                          std::ostream& log);

/// Draws the configured number of free-running samples per test utterance
/// under the configured prior; writes samples<tag>.qfvs.
std::string cmd_sample(const ExperimentConfig& cfg, const std::string& out_dir,
                       const std::string& stage1_path, const std::string& prior_path,
                       const std::string& tag, std::ostream& log);

/// Teacher-style reconstruction of every test utterance from posterior means;
/// writes copysynth<tag>.qfvs.
std::string cmd_copy_synth(const ExperimentConfig& cfg, const std::string& out_dir,
                           const std::string& stage1_path, const std::string& tag,
                           std::ostream& log);

/// Computes FFE/MCD (copysynth records) or per-phoneme diversity stats
/// (sample records); writes metrics_<kind><tag>.txt.
std::string cmd_evaluate(const ExperimentConfig& cfg, const std::string& out_dir,
                         const std::string& records_path, const std::string& corpus_path,
                         const std::string& tag, std::ostream& log);

/// Renders aligned text tables from metric record files; writes report.txt
/// under out_dir and returns the rendered text.
std::string cmd_report(const std::vector<std::string>& metric_paths, const std::string& out_dir,
                       std::ostream& log);

// ---- helpers shared with tests ----

/// Reconstructs a stage-1 model from a checkpoint (config echo + blocks).
QfvaeModel model_from_checkpoint(const Checkpoint& ckpt);

/// Pitch track of a waveform aligned with its corpus STFT frames.
PitchTrack pitch_track_for(const ExperimentConfig& cfg, std::span<const double> waveform);

/// Griffin-Lim resynthesis with a phase-init stream keyed by the frame bytes,
/// so identical frames resynthesize identically.
std::vector<double> resynthesize(const ExperimentConfig& cfg, const FrameMatrix& frames);

/// Per-record prosody measurements used by the diversity evaluation.
ProsodyMeasurements record_prosody(const ExperimentConfig& cfg, const SampleRecord& rec);

}  // namespace qfv
