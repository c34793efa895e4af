#pragma once

#include "folkvae/corpus.hpp"
#include "folkvae/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace folkvae::gen {

// Per-region centroids of the posterior style means (z_s = ps + rs, in the
// training concatenation order), used to condition generation on a label.
struct StyleBank {
    int style_total = 0;                    // 2 * style_dim
    std::vector<std::string> regions;
    std::vector<std::vector<double>> centroids;
    std::vector<int> counts;

    int region_id(const std::string& name) const;
};

StyleBank build_style_bank(const model::MelodyVae& m,
                           std::span<const corpus::TernaryWindow> windows,
                           const corpus::Vocabulary& vocab);

void save_style_bank(const std::string& path, const StyleBank& bank);
StyleBank load_style_bank(const std::string& path);

struct GenerateOptions {
    std::string region;
    int n_samples = 5;
    double temperature = 1.0;
    double style_jitter = 0.0;  // optional sigma added to the centroid
    uint64_t seed = 7;
};

struct GeneratedSample {
    corpus::TernaryWindow window;
    std::vector<double> z_s, z_c;
};

// Z_s := centroid (+ jitter), Z_c ~ N(0, I); pitch and rhythm sampled with
// temperature softmax; intervals re-derived from the sampled pitches.
// (region, seed, temperature) fully determine the output.
std::vector<GeneratedSample> generate(const model::MelodyVae& m, const StyleBank& bank,
                                      const corpus::Vocabulary& vocab,
                                      const GenerateOptions& opt);

// Monophonic MIDI render of one window at the vocabulary's grid; REST tokens
// become gaps; byte-stable across runs.
void render_midi(const corpus::TernaryWindow& w, const corpus::Vocabulary& vocab,
                 const std::string& out_path);

// parse_midi(render_midi(w)) round-trip helper: re-tokanized pitch/rhythm
// token values of a rendered window.
corpus::TokenStreams reparse_midi(const std::string& path, const corpus::Vocabulary& vocab);

} // namespace folkvae::gen
