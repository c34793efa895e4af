#pragma once

#include "folkvae/corpus.hpp"
#include "folkvae/losses.hpp"
#include "folkvae/rng.hpp"
#include "folkvae/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace folkvae::model {

// Latent layout used everywhere (training, generation, evaluation):
//   z_p = ps + pc          pitch variable        (style_dim + content_dim)
//   z_r = rs + rc          rhythm variable
//   z_s = ps + rs          total style           (2 * style_dim)
//   z_c = pc + rc          total content         (2 * content_dim)
//   z_m = ps + pc + rs + rc  melody decoder input
struct ModelConfig {
    int seq_len = 32;
    int hidden = 128;
    int style_dim = 32;
    int content_dim = 96;
    int encoder_layers = 2;
    int decoder_layers = 2;
    int embed_dim = 64;   // per stream; ignored in one-hot mode
    int pos_dim = 16;     // learned step-index embedding fed to decoders
    bool one_hot_input = false;
    bool autoregressive = false;  // teacher-forced AR decoders (default off)
    bool sum_reduction = false;   // summed sequence losses instead of means
    int pitch_vocab = 0;
    int interval_vocab = 0;
    int rhythm_vocab = 0;
    int n_regions = 0;
    uint64_t init_seed = 1;

    void validate() const;
    int stream_embed_width(int vocab) const { return one_hot_input ? vocab : embed_dim; }
    int input_width() const {
        return stream_embed_width(pitch_vocab) + stream_embed_width(interval_vocab) +
               stream_embed_width(rhythm_vocab);
    }
    int z_stream() const { return style_dim + content_dim; }
    int z_style_total() const { return 2 * style_dim; }
    int z_content_total() const { return 2 * content_dim; }
    int z_all() const { return 2 * (style_dim + content_dim); }
    int melody_width() const { return pitch_vocab + interval_vocab + rhythm_vocab; }

    bool operator==(const ModelConfig&) const = default;
};

enum class ParamGroup { Vae, StyleClassifier, AdversaryClassifier };

struct ParamInfo {
    std::string name;
    int rows = 0;
    int cols = 0;
    size_t offset = 0;
    ParamGroup group = ParamGroup::Vae;
    size_t count() const { return size_t(rows) * cols; }
};

// All trainable parameters live in one flat double array with named,
// group-tagged slices; gradients are plain mirror vectors so each worker
// thread can own one.
class ParamArena {
public:
    int add(std::string name, int rows, int cols, ParamGroup group);
    void freeze();  // allocates storage; add() is invalid afterwards

    size_t size() const { return total_; }
    const std::vector<ParamInfo>& infos() const { return infos_; }
    const ParamInfo& info(int idx) const { return infos_[size_t(idx)]; }

    double* p(int idx) { return values_.data() + infos_[size_t(idx)].offset; }
    const double* p(int idx) const { return values_.data() + infos_[size_t(idx)].offset; }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    // [offset, offset+count) pairs covering a group, in arena order
    std::vector<std::pair<size_t, size_t>> group_ranges(ParamGroup g) const;

private:
    std::vector<ParamInfo> infos_;
    std::vector<double> values_;
    size_t total_ = 0;
    bool frozen_ = false;
};

struct GradBuffer {
    std::vector<double> g;
    explicit GradBuffer(size_t n) : g(n, 0.0) {}
    void zero() { std::fill(g.begin(), g.end(), 0.0); }
    double* at(const ParamArena& a, int idx) { return g.data() + a.info(idx).offset; }
};

// --- latents ----------------------------------------------------------------

struct Latent {
    std::vector<double> mu, logvar, eps, z;
};

struct LatentBundle {
    Latent ps, pc, rs, rc;
    bool all_finite() const;
};

struct LatentNoise {
    std::vector<double> ps, pc, rs, rc;
    static LatentNoise zero(const ModelConfig& cfg);
    static LatentNoise gaussian(const ModelConfig& cfg, Rng& rng);
};

std::vector<double> pitch_latent(const LatentBundle& b);    // ps+pc
std::vector<double> rhythm_latent(const LatentBundle& b);   // rs+rc
std::vector<double> style_latent(const LatentBundle& b);    // ps+rs
std::vector<double> content_latent(const LatentBundle& b);  // pc+rc
std::vector<double> melody_latent(const LatentBundle& b);   // ps+pc+rs+rc

// --- traces (forward activations kept for backward) -------------------------

struct GruDirTrace {
    Mat r, z, n, vn, h;  // T x H each, in processing order
    std::vector<double> h0;
};

struct EncBlockTrace {
    Mat x;        // block input, T x in
    Mat x_rev;    // reversed rows (backward direction input)
    GruDirTrace fw, bw;
    Mat y;        // post-residual output, T x 2H
};

struct EncoderTrace {
    Mat inputs;   // embedded window, T x input_width
    std::vector<EncBlockTrace> blocks;
    std::vector<double> summary;  // 2H
};

struct EncodeResult {
    LatentBundle bundle;
    EncoderTrace trace;
};

struct DecoderTrace {
    Mat x;  // layer-0 step inputs, T x in0
    std::vector<GruDirTrace> layers;
    std::vector<std::vector<double>> h0;  // per layer
    Mat logits;       // T x out
    Mat activations;  // sigmoid(logits); filled for melody/adversary passes
    std::vector<double> z;  // latent fed in (kept for weight grads)
};

enum class DecoderKind { Pitch, Rhythm, Melody };

struct ClassifierTrace {
    std::vector<double> z;
    std::vector<double> probs;
};

// Spec-facing output record of the three true-latent decoder passes.
struct DecoderOutput {
    Mat pitch_logits;
    Mat rhythm_logits;
    Mat melody_activations;
};

// --- per-window objective pass ----------------------------------------------

struct WindowTrace {
    EncodeResult enc;
    DecoderTrace dec_pitch, dec_rhythm, dec_melody;
    DecoderTrace adv_pitch, adv_rhythm;  // wrong-latent passes (flags.adv_pr)
    ClassifierTrace style, adversary;
    Mat melody_target;  // T x melody_width multi-hot
};

struct WindowLosses {
    double recon_pitch = 0, recon_rhythm = 0, recon_melody = 0, kl_total = 0;
    double adv_pitch = 0, adv_rhythm = 0, style_ce = 0, adversary_entropy = 0;
};

class MelodyVae {
public:
    explicit MelodyVae(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    ParamArena& arena() { return arena_; }
    const ParamArena& arena() const { return arena_; }

    void init_params();  // uniform fan-in init seeded by cfg.init_seed

    // --- spec operations ---
    Mat embed_melody(std::span<const int> pitch_ids, std::span<const int> interval_ids,
                     std::span<const int> rhythm_ids) const;
    EncodeResult encode(const Mat& inputs, const LatentNoise& noise) const;
    Mat decode_pitch(std::span<const double> z_p) const;
    Mat decode_rhythm(std::span<const double> z_r) const;
    Mat decode_melody(const LatentBundle& bundle) const;
    std::vector<double> classify_style(std::span<const double> z_s) const;
    std::vector<double> classify_adversary(std::span<const double> z_c) const;

    // --- training-path pass over one window ---
    WindowLosses forward_window(const corpus::TernaryWindow& w, const LatentNoise& noise,
                                const losses::AblationFlags& flags, WindowTrace& trace) const;
    // Accumulates d(total)/d(theta) into grads, all terms weighted by `scale`
    // (1/batch for batch means). Produces gradients for every parameter
    // including both classifiers; the trainer decides which slices to apply.
    void backward_window(const corpus::TernaryWindow& w, const losses::AblationFlags& flags,
                         double beta, const WindowTrace& trace, double scale,
                         GradBuffer& grads) const;

    // Encoder-only forward used by adversary_step and the evaluator.
    EncodeResult encode_window(const corpus::TernaryWindow& w, const LatentNoise& noise) const;

    // Classifier-only path (posterior MEANS -> style head); this is what the
    // independent style recognizer trains. Only the embeddings, encoder,
    // mu-heads and style head receive gradients.
    std::vector<double> recognize_probs(const corpus::TernaryWindow& w,
                                        WindowTrace* trace = nullptr) const;
    void recognize_backward(const corpus::TernaryWindow& w, const WindowTrace& trace,
                            double scale, GradBuffer& grads) const;

    // Decoder pass with trace (generation and evaluation reuse this).
    DecoderTrace run_decoder(DecoderKind kind, std::span<const double> z,
                             const corpus::TernaryWindow* teacher) const;

    // Single-step decode for autoregressive sampling; state holds per-layer
    // hidden vectors and is initialised from z.
    struct StepState {
        std::vector<std::vector<double>> h;
        int t = 0;
    };
    StepState start_step_state(DecoderKind kind, std::span<const double> z) const;
    std::vector<double> decode_step(DecoderKind kind, std::span<const double> z,
                                    StepState& state,
                                    std::span<const int> prev_ids) const;

    Mat melody_multi_hot(const corpus::TernaryWindow& w) const;

private:
    struct Embedding { int table = -1; int vocab = 0, dim = 0; };
    struct LinearP { int w = -1, b = -1; int out = 0, in = 0; };
    struct GruDirP { int wx = -1, wh = -1, bx = -1, bh = -1; int in = 0, hidden = 0; };
    struct EncBlockP { GruDirP fw, bw; int wskip = -1; int in = 0; };
    struct DecoderP {
        int zdim = 0;
        int pos = -1;
        std::vector<LinearP> h0;
        std::vector<GruDirP> layers;
        LinearP out;
        int out_dim = 0;
        int ar_width = 0;  // width of teacher-forced input slice (AR mode)
    };

    std::span<const int> window_prefix(const std::array<int, corpus::kWindowLen>& ids) const;
    GruDirP add_gru(const std::string& name, int in, int hidden);
    LinearP add_linear(const std::string& name, int out, int in, ParamGroup g);
    DecoderP add_decoder(const std::string& name, int zdim, int out_dim, int ar_width);

    void embed_stream(const Embedding& e, std::span<const int> ids, Mat& dst, int col0) const;
    void gru_dir_forward(const GruDirP& p, const Mat& x, GruDirTrace& tr) const;
    void gru_dir_backward(const GruDirP& p, const Mat& x, const GruDirTrace& tr,
                          const Mat& dH, std::vector<double>* dh0, Mat* dX,
                          GradBuffer& g) const;
    void encoder_forward(const Mat& inputs, EncoderTrace& tr) const;
    void encoder_backward(const EncoderTrace& tr, const std::vector<double>& dsummary,
                          Mat& dinputs, GradBuffer& g) const;
    void decoder_forward(const DecoderP& p, std::span<const double> z,
                         const Mat* ar_inputs, DecoderTrace& tr) const;
    void decoder_backward(const DecoderP& p, const DecoderTrace& tr, const Mat& dlogits,
                          std::vector<double>& dz, Mat* d_ar_inputs, GradBuffer& g) const;
    const DecoderP& decoder(DecoderKind kind) const;
    Mat ar_inputs_for(DecoderKind kind, const corpus::TernaryWindow& w) const;
    void scatter_embedding_grads(std::span<const int> ids, const Mat& dinputs, int col0,
                                 const Embedding& e, GradBuffer& g) const;
    void input_grads_to_embeddings(const corpus::TernaryWindow& w, const Mat& dinputs,
                                   GradBuffer& g) const;
    void ar_grads_to_embeddings(DecoderKind kind, const corpus::TernaryWindow& w,
                                const Mat& d_ar, GradBuffer& g) const;

    ModelConfig cfg_;
    ParamArena arena_;

    Embedding emb_pitch_, emb_interval_, emb_rhythm_;
    std::vector<EncBlockP> enc_blocks_;
    LinearP head_mu_[4], head_lv_[4];  // order: ps, pc, rs, rc
    DecoderP dec_pitch_, dec_rhythm_, dec_melody_;
    LinearP cls_style_, cls_adversary_;

    friend class CheckpointCodec;
};

// --- checkpoint --------------------------------------------------------------

// Optional trainer block persisted with the model so interrupted runs resume
// bit-exactly.
struct TrainerPersist {
    std::vector<double> adam_m, adam_v;
    uint64_t adam_t = 0;
    std::array<uint64_t, 4> rng_state{};
    uint64_t global_step = 0;
    int epoch = 0;
    double best_val_accuracy = -1.0;
    std::string ablation = "total";
};

struct Checkpoint {
    ModelConfig config;
    corpus::Vocabulary vocab;
    uint64_t step = 0;
    std::optional<TrainerPersist> trainer;
};

void save_checkpoint(const std::string& path, const MelodyVae& model,
                     const corpus::Vocabulary& vocab, uint64_t step,
                     const TrainerPersist* trainer = nullptr);

struct LoadedCheckpoint {
    MelodyVae model;
    corpus::Vocabulary vocab;
    uint64_t step = 0;
    std::optional<TrainerPersist> trainer;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace folkvae::model
