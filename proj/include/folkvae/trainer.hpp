#pragma once

#include "folkvae/corpus.hpp"
#include "folkvae/losses.hpp"
#include "folkvae/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace folkvae::train {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 50;
    double vae_lr = 0.01;         // adaptive-moment optimizer on the VAE
    double classifier_lr = 0.005; // plain SGD on both classifiers
    double beta_start = 0.0;
    double beta_end = 0.15;
    losses::AblationFlags flags;
    uint64_t seed = 1;
    double val_fraction = 0.1;    // held-out songs, never windows
    double grad_clip = 5.0;
    int adversary_steps = 1;      // adversary updates per vae step
    int threads = 0;              // 0 = hardware concurrency
    int stop_after_epoch = 0;     // >0: pause the run once this epoch count is
                                  // reached; the beta horizon still spans `epochs`
    uint64_t anneal_steps = 0;    // beta ramp horizon in optimizer steps;
                                  // 0 derives epochs * batches-per-epoch

    void validate() const;
};

// beta_start + (beta_end - beta_start) * step / total_steps, clamped at the
// endpoint for step > total_steps.
double beta_schedule(uint64_t step, uint64_t total_steps, const TrainConfig& cfg);

// --- optimizer helpers (also used by the style recognizer) -------------------

struct AdamState {
    std::vector<double> m, v;
    uint64_t t = 0;
    explicit AdamState(size_t n) : m(n, 0.0), v(n, 0.0) {}
};

using Ranges = std::vector<std::pair<size_t, size_t>>;

double global_norm(const std::vector<double>& g, const Ranges& ranges);
void clip_global_norm(std::vector<double>& g, const Ranges& ranges, double max_norm);
void apply_adam(std::vector<double>& values, const std::vector<double>& g, AdamState& st,
                double lr, const Ranges& ranges);
void apply_sgd(std::vector<double>& values, const std::vector<double>& g, double lr,
               const Ranges& ranges);

// --- trainer -----------------------------------------------------------------

struct TrainResult {
    std::string last_checkpoint;
    std::string best_checkpoint;
    std::string metrics_path;
    double best_val_accuracy = -1.0;
    double final_val_accuracy = -1.0;
    uint64_t steps = 0;
};

class Trainer {
public:
    Trainer(model::MelodyVae& model, const TrainConfig& cfg);

    // Step one: update ONLY the adversary classifier on cross-entropy against
    // true labels; latents are treated as constants. Returns the mean CE.
    double adversary_step(std::span<const corpus::TernaryWindow> batch, uint64_t step_id);

    // Step two: full objective backward with the adversary classifier frozen;
    // updates the VAE (Adam) and the style classifier (SGD).
    losses::LossReport vae_step(std::span<const corpus::TernaryWindow> batch,
                                uint64_t step_id, double beta);

    // Full loop: seeded song-level split, shuffled mini-batches, per-epoch
    // validation reconstruction accuracy, last/best checkpoints + metrics log
    // under out_dir. Pass resume to continue a run bit-exactly from its
    // last checkpoint.
    TrainResult train(const std::vector<corpus::TernaryWindow>& windows,
                      const corpus::Vocabulary& vocab, const std::string& out_dir,
                      const model::TrainerPersist* resume = nullptr);

    const AdamState& adam() const { return adam_; }

private:
    model::MelodyVae& model_;
    TrainConfig cfg_;
    AdamState adam_;
    Ranges vae_ranges_, style_ranges_, adversary_ranges_;
    int threads_ = 1;
    // fixed number of reduction chunks so results do not depend on the
    // thread count
    static constexpr int kChunks = 4;
    std::vector<model::GradBuffer> chunk_grads_;
};

} // namespace folkvae::train
