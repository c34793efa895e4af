#pragma once

#include "folkvae/corpus.hpp"
#include "folkvae/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace folkvae::eval {

struct ReconAccuracy {
    double pooled = 0.0;  // correct positions / total positions, both streams
    double pitch = 0.0;
    double rhythm = 0.0;
};

// Deterministic: encodes with ZERO noise (posterior means) and decodes pitch
// and rhythm by argmax.
ReconAccuracy reconstruction_accuracy(const model::MelodyVae& m,
                                      std::span<const corpus::TernaryWindow> windows);

// --- independent style recognizer -------------------------------------------

// Residual bidirectional recurrent classifier over token windows. Internally
// it reuses the encoder architecture with a linear softmax head; decoder
// parameters exist but are never trained or read.
struct RecognizerConfig {
    int hidden = 64;
    int style_dim = 32;   // classifier input is 2*style_dim summary features
    int content_dim = 8;
    int embed_dim = 32;
    int encoder_layers = 2;
    int epochs = 8;
    int batch_size = 50;
    double lr = 0.005;
    double val_fraction = 0.2;
    uint64_t seed = 1;
    int threads = 0;
};

struct StyleRecognizer {
    model::MelodyVae net;
    double test_accuracy = 0.0;

    explicit StyleRecognizer(const model::ModelConfig& cfg) : net(cfg) {}
    int predict(const corpus::TernaryWindow& w) const;
    std::vector<double> probs(const corpus::TernaryWindow& w) const;
};

StyleRecognizer train_style_recognizer(std::span<const corpus::TernaryWindow> windows,
                                       const corpus::Vocabulary& vocab,
                                       const RecognizerConfig& cfg);

void save_recognizer(const std::string& path, const StyleRecognizer& r,
                     const corpus::Vocabulary& vocab);
StyleRecognizer load_recognizer(const std::string& path);

// --- style recognition over re-decoded windows --------------------------------

enum class StyleVariant { PitchStyle, RhythmStyle, TotalStyle };

StyleVariant variant_from_name(const std::string& name);

// For each window: keep the designated style sub-vector(s) of its posterior
// means, fill every other latent slot with standard-normal draws, decode
// pitch/rhythm by argmax, rebuild intervals from the decoded pitches, and
// classify with the recognizer. Returns accuracy against the true regions.
double style_recognition_accuracy(const model::MelodyVae& m, const StyleRecognizer& rec,
                                  const corpus::Vocabulary& vocab, StyleVariant variant,
                                  std::span<const corpus::TernaryWindow> windows,
                                  int n_samples, uint64_t seed);

// --- linear probes --------------------------------------------------------------

struct ProbeResult {
    double style_accuracy = 0.0;    // fresh linear probe on z_s means
    double content_accuracy = 0.0;  // fresh linear probe on z_c means
};

ProbeResult probe_latents(const model::MelodyVae& m,
                          std::span<const corpus::TernaryWindow> windows, uint64_t seed);

// --- report ----------------------------------------------------------------------

struct EvalReport {
    ReconAccuracy reconstruction;
    double style_recognition_pitch = 0.0;
    double style_recognition_rhythm = 0.0;
    double style_recognition_total = 0.0;
    double recognizer_test_accuracy = 0.0;
    ProbeResult probes;
    std::vector<std::vector<int>> confusion;  // [true][predicted], recognizer on variant c

    std::string to_json() const;
};

EvalReport evaluate(const model::MelodyVae& m, const StyleRecognizer& rec,
                    const corpus::Vocabulary& vocab,
                    std::span<const corpus::TernaryWindow> windows, int n_samples,
                    uint64_t seed);

// --- latent export + 2-D projection plots ------------------------------------------

// CSV with one row per window: region, then mean vectors z_ps, z_rs, z_s, z_c.
void export_latents(const model::MelodyVae& m,
                    std::span<const corpus::TernaryWindow> windows,
                    const corpus::Vocabulary& vocab, const std::string& path);

// Reads a latents CSV and writes one scatter SVG per latent family
// (pitch_style, rhythm_style, total_style, total_content) into out_dir,
// embedding each family with t-SNE (fixed seed, given perplexity).
void plot_latents(const std::string& latents_csv, const std::string& out_dir,
                  double perplexity, uint64_t seed, int max_points = 1000);

} // namespace folkvae::eval
