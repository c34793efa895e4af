#include "folkvae/trainer.hpp"
#include "folkvae/error.hpp"
#include "folkvae/evaluator.hpp"
#include "folkvae/kernels.hpp"
#include "folkvae/parallel.hpp"
#include "folkvae/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

namespace folkvae::train {

using nlohmann::json;

namespace {

// stream tags for deriving per-sample noise
constexpr uint64_t kAdvTag = 0xadf0adf0adf0adf0ull;
constexpr uint64_t kVaeTag = 0x5a5a5a5a5a5a5a5aull;
constexpr uint64_t kShuffleTag = 0x0badc0de0badc0deull;
constexpr uint64_t kSplitTag = 0x5eedf00d5eedf00dull;

} // namespace

void TrainConfig::validate() const {
    if (epochs <= 0 || batch_size <= 0) throw config_error("epochs and batch size must be > 0");
    if (vae_lr <= 0 || classifier_lr <= 0) throw config_error("learning rates must be > 0");
    if (beta_start < 0 || beta_start > beta_end)
        throw config_error("need 0 <= beta_start <= beta_end");
    if (val_fraction < 0 || val_fraction >= 1)
        throw config_error("val_fraction must be in [0,1)");
    if (grad_clip <= 0) throw config_error("grad_clip must be > 0");
    if (adversary_steps < 1) throw config_error("adversary_steps must be >= 1");
}

double beta_schedule(uint64_t step, uint64_t total_steps, const TrainConfig& cfg) {
    if (total_steps == 0) throw config_error("beta_schedule: total_steps must be > 0");
    if (step >= total_steps) return cfg.beta_end;
    return cfg.beta_start +
           (cfg.beta_end - cfg.beta_start) * double(step) / double(total_steps);
}

double global_norm(const std::vector<double>& g, const Ranges& ranges) {
    double sq = 0.0;
    for (const auto& [lo, hi] : ranges)
        sq += kernels::active().dot(g.data() + lo, g.data() + lo, int(hi - lo));
    return std::sqrt(sq);
}

void clip_global_norm(std::vector<double>& g, const Ranges& ranges, double max_norm) {
    const double norm = global_norm(g, ranges);
    if (norm <= max_norm || norm == 0.0) return;
    const double s = max_norm / norm;
    for (const auto& [lo, hi] : ranges) kernels::active().scale(g.data() + lo, s, int(hi - lo));
}

void apply_adam(std::vector<double>& values, const std::vector<double>& g, AdamState& st,
                double lr, const Ranges& ranges) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    st.t += 1;
    const double c1 = 1.0 - std::pow(b1, double(st.t));
    const double c2 = 1.0 - std::pow(b2, double(st.t));
    for (const auto& [lo, hi] : ranges) {
        for (size_t i = lo; i < hi; ++i) {
            st.m[i] = b1 * st.m[i] + (1.0 - b1) * g[i];
            st.v[i] = b2 * st.v[i] + (1.0 - b2) * g[i] * g[i];
            values[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps);
        }
    }
}

void apply_sgd(std::vector<double>& values, const std::vector<double>& g, double lr,
               const Ranges& ranges) {
    for (const auto& [lo, hi] : ranges)
        for (size_t i = lo; i < hi; ++i) values[i] -= lr * g[i];
}

// --- trainer -------------------------------------------------------------------

Trainer::Trainer(model::MelodyVae& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), adam_(model.arena().size()) {
    cfg_.validate();
    vae_ranges_ = model.arena().group_ranges(model::ParamGroup::Vae);
    style_ranges_ = model.arena().group_ranges(model::ParamGroup::StyleClassifier);
    adversary_ranges_ = model.arena().group_ranges(model::ParamGroup::AdversaryClassifier);
    threads_ = cfg_.threads > 0 ? cfg_.threads
                                : std::max(1u, std::thread::hardware_concurrency());
    threads_ = std::min(threads_, kChunks);
    for (int i = 0; i < kChunks; ++i) chunk_grads_.emplace_back(model.arena().size());
}

double Trainer::adversary_step(std::span<const corpus::TernaryWindow> batch,
                               uint64_t step_id) {
    if (batch.empty()) throw data_error("adversary_step: empty batch");
    const auto& cfg = model_.config();
    const int B = int(batch.size());
    const auto& kb = kernels::active();

    // grads only touch the (tiny) adversary classifier; the classifier is
    // trained on the posterior MEANS it later judges, in parallel with a
    // fixed reduction order
    std::vector<std::vector<double>> zc(static_cast<size_t>(B));
    parallel_chunks(B, threads_, [&](int begin, int end, int) {
        const auto zero = model::LatentNoise::zero(cfg);
        for (int i = begin; i < end; ++i) {
            auto enc = model_.encode_window(batch[size_t(i)], zero);
            zc[size_t(i)] = enc.bundle.pc.mu;
            zc[size_t(i)].insert(zc[size_t(i)].end(), enc.bundle.rc.mu.begin(),
                                 enc.bundle.rc.mu.end());
        }
    });

    const int K = cfg.n_regions, Zc = cfg.z_content_total();
    std::vector<double> dW(size_t(K) * Zc, 0.0), db(size_t(K), 0.0);
    double loss = 0.0;
    model::GradBuffer& g = chunk_grads_[0];
    g.zero();
    for (int i = 0; i < B; ++i) {
        const auto probs = model_.classify_adversary(zc[size_t(i)]);
        loss += losses::style_ce(probs, batch[size_t(i)].region);
        for (int j = 0; j < K; ++j) {
            const double d = (probs[size_t(j)] - (j == batch[size_t(i)].region ? 1.0 : 0.0)) / B;
            kb.axpy(dW.data() + size_t(j) * Zc, d, zc[size_t(i)].data(), Zc);
            db[size_t(j)] += d;
        }
    }
    loss /= B;

    // pack into an arena-shaped gradient so clipping/updating reuse the
    // shared helpers
    for (const auto& info : model_.arena().infos()) {
        if (info.group != model::ParamGroup::AdversaryClassifier) continue;
        double* dst = g.g.data() + info.offset;
        if (info.cols == 1)
            std::copy(db.begin(), db.end(), dst);
        else
            std::copy(dW.begin(), dW.end(), dst);
    }
    apply_sgd(model_.arena().values(), g.g, cfg_.classifier_lr, adversary_ranges_);
    return loss;
}

losses::LossReport Trainer::vae_step(std::span<const corpus::TernaryWindow> batch,
                                     uint64_t step_id, double beta) {
    if (batch.empty()) throw data_error("vae_step: empty batch");
    const auto& cfg = model_.config();
    const int B = int(batch.size());
    const double scale = 1.0 / B;

    std::vector<model::WindowLosses> per_sample(static_cast<size_t>(B));
    for (auto& cg : chunk_grads_) cg.zero();

    // samples are assigned to a fixed number of chunks (not to threads), so
    // the reduction order and therefore the result never depends on the
    // thread count
    const int per_chunk = (B + kChunks - 1) / kChunks;
    parallel_chunks(kChunks, threads_, [&](int cbegin, int cend, int) {
        for (int c = cbegin; c < cend; ++c) {
            const int lo = c * per_chunk;
            const int hi = std::min(B, lo + per_chunk);
            for (int i = lo; i < hi; ++i) {
                Rng noise_rng(Rng::mix(cfg_.seed, kVaeTag, step_id, uint64_t(i)));
                const auto noise = model::LatentNoise::gaussian(cfg, noise_rng);
                model::WindowTrace trace;
                per_sample[size_t(i)] =
                    model_.forward_window(batch[size_t(i)], noise, cfg_.flags, trace);
                model_.backward_window(batch[size_t(i)], cfg_.flags, beta, trace, scale,
                                       chunk_grads_[size_t(c)]);
            }
        }
    });

    model::GradBuffer& g = chunk_grads_[0];
    for (int c = 1; c < kChunks; ++c)
        for (size_t i = 0; i < g.g.size(); ++i) g.g[i] += chunk_grads_[size_t(c)].g[i];

    model::WindowLosses sum;
    for (const auto& s : per_sample) {
        sum.recon_pitch += s.recon_pitch;
        sum.recon_rhythm += s.recon_rhythm;
        sum.recon_melody += s.recon_melody;
        sum.kl_total += s.kl_total;
        sum.adv_pitch += s.adv_pitch;
        sum.adv_rhythm += s.adv_rhythm;
        sum.style_ce += s.style_ce;
        sum.adversary_entropy += s.adversary_entropy;
    }
    const losses::LossReport report = losses::total_loss(
        sum.recon_pitch / B, sum.recon_rhythm / B, sum.recon_melody / B, sum.kl_total / B,
        sum.adv_pitch / B, sum.adv_rhythm / B, sum.style_ce / B, sum.adversary_entropy / B,
        beta, cfg_.flags);
    if (const std::string bad = report.first_non_finite(); !bad.empty())
        throw model_error("vae_step: non-finite loss component '" + bad + "' at step " +
                          std::to_string(step_id));

    // the clip exists for recurrent spikes; the linear classifier heads
    // take their raw gradients
    clip_global_norm(g.g, vae_ranges_, cfg_.grad_clip);
    apply_adam(model_.arena().values(), g.g, adam_, cfg_.vae_lr, vae_ranges_);
    apply_sgd(model_.arena().values(), g.g, cfg_.classifier_lr, style_ranges_);
    return report;
}

TrainResult Trainer::train(const std::vector<corpus::TernaryWindow>& windows,
                           const corpus::Vocabulary& vocab, const std::string& out_dir,
                           const model::TrainerPersist* resume) {
    namespace fs = std::filesystem;
    const auto& mcfg = model_.config();
    if (windows.empty()) throw data_error("train: empty dataset");
    if (int(vocab.pitch_tokens.size()) != mcfg.pitch_vocab ||
        int(vocab.interval_tokens.size()) != mcfg.interval_vocab ||
        int(vocab.rhythm_tokens.size()) != mcfg.rhythm_vocab ||
        int(vocab.region_labels.size()) != mcfg.n_regions)
        throw config_error("train: vocabulary does not match the model configuration");

    fs::create_directories(out_dir);

    // song-level split so no window leaks across it
    std::vector<std::string> song_ids;
    {
        std::map<std::string, bool> seen;
        for (const auto& w : windows) seen.emplace(w.source_song, true);
        for (const auto& [id, _] : seen) song_ids.push_back(id);
    }
    Rng split_rng(Rng::mix(cfg_.seed, kSplitTag));
    split_rng.shuffle(song_ids);
    const size_t n_val_songs = size_t(std::floor(cfg_.val_fraction * double(song_ids.size())));
    std::map<std::string, bool> is_val;
    for (size_t i = 0; i < n_val_songs; ++i) is_val[song_ids[i]] = true;

    std::vector<int> train_idx, val_idx;
    for (size_t i = 0; i < windows.size(); ++i)
        (is_val.count(windows[i].source_song) ? val_idx : train_idx).push_back(int(i));
    if (train_idx.empty()) throw data_error("train: no training windows after the split");

    std::vector<corpus::TernaryWindow> val_windows;
    val_windows.reserve(val_idx.size());
    for (int i : val_idx) val_windows.push_back(windows[size_t(i)]);

    const uint64_t bpe = (train_idx.size() + cfg_.batch_size - 1) / cfg_.batch_size;
    const uint64_t total_steps =
        cfg_.anneal_steps > 0 ? cfg_.anneal_steps : uint64_t(cfg_.epochs) * bpe;

    uint64_t global_step = 0;
    int start_epoch = 0;
    double best_val = -1.0;
    if (resume) {
        if (resume->adam_m.size() != adam_.m.size())
            throw config_error("resume: optimizer state does not match the model");
        adam_.m = resume->adam_m;
        adam_.v = resume->adam_v;
        adam_.t = resume->adam_t;
        global_step = resume->global_step;
        start_epoch = resume->epoch;
        best_val = resume->best_val_accuracy;
    }

    const std::string metrics_path = out_dir + "/metrics.jsonl";
    std::ofstream metrics(metrics_path, resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw io_error("cannot write " + metrics_path);

    std::vector<double> best_params;
    const std::string last_path = out_dir + "/checkpoint_last.fvae";
    const std::string best_path = out_dir + "/checkpoint_best.fvae";

    auto save_state = [&](const std::string& path, int epoch_done) {
        model::TrainerPersist persist;
        persist.adam_m = adam_.m;
        persist.adam_v = adam_.v;
        persist.adam_t = adam_.t;
        persist.rng_state = {cfg_.seed, 0, 0, 0};
        persist.global_step = global_step;
        persist.epoch = epoch_done;
        persist.best_val_accuracy = best_val;
        persist.ablation = losses::flags_to_name(cfg_.flags);
        model::save_checkpoint(path, model_, vocab, global_step, &persist);
    };

    const int end_epoch = cfg_.stop_after_epoch > 0
                              ? std::min(cfg_.epochs, cfg_.stop_after_epoch)
                              : cfg_.epochs;
    TrainResult result;
    for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
        std::vector<int> perm = train_idx;
        Rng shuffle_rng(Rng::mix(cfg_.seed, kShuffleTag, uint64_t(epoch)));
        shuffle_rng.shuffle(perm);

        for (size_t off = 0; off < perm.size(); off += size_t(cfg_.batch_size)) {
            const size_t batch_n = std::min(size_t(cfg_.batch_size), perm.size() - off);
            std::vector<corpus::TernaryWindow> batch;
            batch.reserve(batch_n);
            for (size_t i = 0; i < batch_n; ++i)
                batch.push_back(windows[size_t(perm[off + i])]);

            const double beta = beta_schedule(global_step, total_steps, cfg_);
            double adv_ce = std::numeric_limits<double>::quiet_NaN();
            if (cfg_.flags.adv_zc) {
                for (int k = 0; k < cfg_.adversary_steps; ++k)
                    adv_ce = adversary_step(batch,
                                            global_step * uint64_t(cfg_.adversary_steps) +
                                                uint64_t(k));
            }
            const losses::LossReport report = vae_step(batch, global_step, beta);

            json line = json::parse(report.to_json_line());
            line["step"] = global_step;
            line["epoch"] = epoch;
            if (cfg_.flags.adv_zc) line["adversary_ce"] = adv_ce;
            metrics << line.dump() << "\n";
            ++global_step;
        }

        double val_acc = -1.0;
        if (!val_windows.empty()) {
            val_acc = eval::reconstruction_accuracy(model_, val_windows).pooled;
            json line;
            line["epoch"] = epoch;
            line["val_accuracy"] = val_acc;
            metrics << line.dump() << "\n";
            if (val_acc > best_val) {
                best_val = val_acc;
                best_params = model_.arena().values();
            }
        }
        result.final_val_accuracy = val_acc;
        save_state(last_path, epoch + 1);
        metrics.flush();
    }

    if (!best_params.empty()) {
        std::vector<double> current = model_.arena().values();
        model_.arena().values() = best_params;
        save_state(best_path, end_epoch);
        model_.arena().values() = std::move(current);
    } else {
        save_state(best_path, end_epoch);
        best_val = result.final_val_accuracy;
    }

    result.last_checkpoint = last_path;
    result.best_checkpoint = best_path;
    result.metrics_path = metrics_path;
    result.best_val_accuracy = best_val;
    result.steps = global_step;
    return result;
}

} // namespace folkvae::train
