#include "folkvae/evaluator.hpp"
#include "folkvae/error.hpp"
#include "folkvae/parallel.hpp"
#include "folkvae/rng.hpp"
#include "folkvae/svgplot.hpp"
#include "folkvae/trainer.hpp"
#include "folkvae/tsne.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace folkvae::eval {

using nlohmann::json;

namespace {

constexpr uint64_t kVariantTag = 0x7a11e7a11e7a11e7ull;
constexpr uint64_t kProbeTag = 0x9a0b9a0b9a0b9a0bull;
constexpr uint64_t kRecogTag = 0x3c093c093c093c09ull;

int argmax_row(const double* row, int n) {
    int best = 0;
    for (int j = 1; j < n; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

std::vector<int> greedy_decode(const model::MelodyVae& m, model::DecoderKind kind,
                               std::span<const double> z) {
    const auto& cfg = m.config();
    std::vector<int> ids(size_t(cfg.seq_len));
    if (!cfg.autoregressive) {
        const Mat logits = m.run_decoder(kind, z, nullptr).logits;
        for (int t = 0; t < cfg.seq_len; ++t)
            ids[size_t(t)] = argmax_row(logits.row(t), logits.cols);
        return ids;
    }
    auto st = m.start_step_state(kind, z);
    int prev = 0;
    for (int t = 0; t < cfg.seq_len; ++t) {
        const int prev_arr[1] = {prev};
        const auto logits =
            m.decode_step(kind, z, st, t == 0 ? std::span<const int>{}
                                              : std::span<const int>(prev_arr, 1));
        ids[size_t(t)] = argmax_row(logits.data(), int(logits.size()));
        prev = ids[size_t(t)];
    }
    return ids;
}

// song-level split shared by the recognizer and the probes
std::pair<std::vector<int>, std::vector<int>> split_by_song(
    std::span<const corpus::TernaryWindow> windows, double test_fraction, uint64_t seed) {
    std::vector<std::string> songs;
    {
        std::set<std::string> seen;
        for (const auto& w : windows) seen.insert(w.source_song);
        songs.assign(seen.begin(), seen.end());
    }
    Rng rng(seed);
    rng.shuffle(songs);
    const size_t n_test = size_t(std::floor(test_fraction * double(songs.size())));
    std::set<std::string> test_songs(songs.begin(), songs.begin() + long(n_test));
    std::vector<int> train_idx, test_idx;
    for (size_t i = 0; i < windows.size(); ++i)
        (test_songs.count(windows[i].source_song) ? test_idx : train_idx).push_back(int(i));
    return {train_idx, test_idx};
}

} // namespace

ReconAccuracy reconstruction_accuracy(const model::MelodyVae& m,
                                      std::span<const corpus::TernaryWindow> windows) {
    if (windows.empty()) throw data_error("reconstruction_accuracy: empty test set");
    const auto& cfg = m.config();
    const int n = int(windows.size());
    const int threads = int(std::max(1u, std::thread::hardware_concurrency()));

    std::vector<long> pitch_ok(size_t(threads), 0), rhythm_ok(size_t(threads), 0);
    parallel_chunks(n, threads, [&](int begin, int end, int worker) {
        const auto zero = model::LatentNoise::zero(cfg);
        for (int i = begin; i < end; ++i) {
            const auto& w = windows[size_t(i)];
            const auto enc = m.encode_window(w, zero);
            const corpus::TernaryWindow* teacher = cfg.autoregressive ? &w : nullptr;
            const Mat pl = m.run_decoder(model::DecoderKind::Pitch,
                                          model::pitch_latent(enc.bundle), teacher).logits;
            const Mat rl = m.run_decoder(model::DecoderKind::Rhythm,
                                          model::rhythm_latent(enc.bundle), teacher).logits;
            for (int t = 0; t < cfg.seq_len; ++t) {
                if (argmax_row(pl.row(t), pl.cols) == w.pitch_ids[size_t(t)])
                    pitch_ok[size_t(worker)]++;
                if (argmax_row(rl.row(t), rl.cols) == w.rhythm_ids[size_t(t)])
                    rhythm_ok[size_t(worker)]++;
            }
        }
    });
    long p_ok = 0, r_ok = 0;
    for (int w = 0; w < threads; ++w) { p_ok += pitch_ok[size_t(w)]; r_ok += rhythm_ok[size_t(w)]; }
    const double total = double(n) * cfg.seq_len;
    ReconAccuracy acc;
    acc.pitch = double(p_ok) / total;
    acc.rhythm = double(r_ok) / total;
    acc.pooled = double(p_ok + r_ok) / (2.0 * total);
    return acc;
}

// --- recognizer ---------------------------------------------------------------

int StyleRecognizer::predict(const corpus::TernaryWindow& w) const {
    const auto p = net.recognize_probs(w);
    return argmax_row(p.data(), int(p.size()));
}

std::vector<double> StyleRecognizer::probs(const corpus::TernaryWindow& w) const {
    return net.recognize_probs(w);
}

StyleRecognizer train_style_recognizer(std::span<const corpus::TernaryWindow> windows,
                                       const corpus::Vocabulary& vocab,
                                       const RecognizerConfig& cfg) {
    if (vocab.region_labels.size() < 2)
        throw data_error("train_style_recognizer: need at least 2 regions");
    if (windows.empty()) throw data_error("train_style_recognizer: empty dataset");

    model::ModelConfig mc;
    mc.seq_len = corpus::kWindowLen;
    mc.hidden = cfg.hidden;
    mc.style_dim = cfg.style_dim;
    mc.content_dim = cfg.content_dim;
    mc.encoder_layers = cfg.encoder_layers;
    mc.decoder_layers = 1;
    mc.embed_dim = cfg.embed_dim;
    mc.pos_dim = 4;
    mc.pitch_vocab = int(vocab.pitch_tokens.size());
    mc.interval_vocab = int(vocab.interval_tokens.size());
    mc.rhythm_vocab = int(vocab.rhythm_tokens.size());
    mc.n_regions = int(vocab.region_labels.size());
    mc.init_seed = Rng::mix(cfg.seed, kRecogTag);

    StyleRecognizer rec(mc);
    rec.net.init_params();

    auto [train_idx, test_idx] = split_by_song(windows, cfg.val_fraction,
                                               Rng::mix(cfg.seed, kRecogTag, 1));
    if (train_idx.empty()) throw data_error("train_style_recognizer: empty training split");

    auto& arena = rec.net.arena();
    train::AdamState adam(arena.size());
    train::Ranges ranges = arena.group_ranges(model::ParamGroup::Vae);
    const auto style_ranges = arena.group_ranges(model::ParamGroup::StyleClassifier);
    ranges.insert(ranges.end(), style_ranges.begin(), style_ranges.end());

    const int threads = cfg.threads > 0 ? cfg.threads
                                        : int(std::max(1u, std::thread::hardware_concurrency()));
    constexpr int kChunks = 4;
    std::vector<model::GradBuffer> chunk_grads;
    for (int c = 0; c < kChunks; ++c) chunk_grads.emplace_back(arena.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> perm = train_idx;
        Rng shuffle_rng(Rng::mix(cfg.seed, kRecogTag, 2, uint64_t(epoch)));
        shuffle_rng.shuffle(perm);
        for (size_t off = 0; off < perm.size(); off += size_t(cfg.batch_size)) {
            const int B = int(std::min(size_t(cfg.batch_size), perm.size() - off));
            for (auto& cg : chunk_grads) cg.zero();
            const int per_chunk = (B + kChunks - 1) / kChunks;
            parallel_chunks(kChunks, threads, [&](int cb, int ce, int) {
                for (int c = cb; c < ce; ++c) {
                    for (int i = c * per_chunk; i < std::min(B, (c + 1) * per_chunk); ++i) {
                        const auto& w = windows[size_t(perm[off + size_t(i)])];
                        model::WindowTrace tr;
                        rec.net.recognize_probs(w, &tr);
                        rec.net.recognize_backward(w, tr, 1.0 / B, chunk_grads[size_t(c)]);
                    }
                }
            });
            auto& g = chunk_grads[0];
            for (int c = 1; c < kChunks; ++c)
                for (size_t i = 0; i < g.g.size(); ++i) g.g[i] += chunk_grads[size_t(c)].g[i];
            train::clip_global_norm(g.g, ranges, 5.0);
            train::apply_adam(arena.values(), g.g, adam, cfg.lr, ranges);
        }
    }

    const auto& test = test_idx.empty() ? train_idx : test_idx;
    long ok = 0;
    for (int i : test)
        if (rec.predict(windows[size_t(i)]) == windows[size_t(i)].region) ++ok;
    rec.test_accuracy = double(ok) / double(test.size());
    return rec;
}

void save_recognizer(const std::string& path, const StyleRecognizer& r,
                     const corpus::Vocabulary& vocab) {
    // encode the recognizer's own test accuracy in the step field scaled by 1e6
    model::save_checkpoint(path, r.net, vocab, uint64_t(r.test_accuracy * 1e6));
}

StyleRecognizer load_recognizer(const std::string& path) {
    auto loaded = model::load_checkpoint(path);
    StyleRecognizer rec(loaded.model.config());
    rec.net.arena().values() = loaded.model.arena().values();
    rec.test_accuracy = double(loaded.step) / 1e6;
    return rec;
}

// --- variant recognition -------------------------------------------------------

StyleVariant variant_from_name(const std::string& name) {
    if (name == "pitch-style") return StyleVariant::PitchStyle;
    if (name == "rhythm-style") return StyleVariant::RhythmStyle;
    if (name == "total-style") return StyleVariant::TotalStyle;
    throw config_error("unknown style variant '" + name +
                       "' (expected pitch-style|rhythm-style|total-style)");
}

namespace {

corpus::TernaryWindow decode_variant_window(const model::MelodyVae& m,
                                            const corpus::Vocabulary& vocab,
                                            const corpus::TernaryWindow& w,
                                            StyleVariant variant, uint64_t sample_seed) {
    const auto& cfg = m.config();
    const auto enc = m.encode_window(w, model::LatentNoise::zero(cfg));
    const auto& b = enc.bundle;

    const bool keep_ps = variant != StyleVariant::RhythmStyle;
    const bool keep_rs = variant != StyleVariant::PitchStyle;

    Rng rng(sample_seed);
    auto slot = [&](const std::vector<double>& mu, bool keep) {
        std::vector<double> v(mu.size());
        for (size_t d = 0; d < v.size(); ++d) {
            const double g = rng.gaussian();  // fixed draw order across variants
            v[d] = keep ? mu[d] : g;
        }
        return v;
    };
    const auto ps = slot(b.ps.mu, keep_ps);
    const auto pc = slot(b.pc.mu, false);
    const auto rs = slot(b.rs.mu, keep_rs);
    const auto rc = slot(b.rc.mu, false);

    std::vector<double> z_p(ps);
    z_p.insert(z_p.end(), pc.begin(), pc.end());
    std::vector<double> z_r(rs);
    z_r.insert(z_r.end(), rc.begin(), rc.end());

    const auto pitch_ids = greedy_decode(m, model::DecoderKind::Pitch, z_p);
    const auto rhythm_ids = greedy_decode(m, model::DecoderKind::Rhythm, z_r);
    return corpus::window_from_decoded(pitch_ids, rhythm_ids, vocab, w.region,
                                       w.source_song);
}

} // namespace

double style_recognition_accuracy(const model::MelodyVae& m, const StyleRecognizer& rec,
                                  const corpus::Vocabulary& vocab, StyleVariant variant,
                                  std::span<const corpus::TernaryWindow> windows,
                                  int n_samples, uint64_t seed) {
    if (windows.empty()) throw data_error("style_recognition_accuracy: empty window set");
    std::vector<int> idx(windows.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
    if (n_samples > 0 && size_t(n_samples) < idx.size()) {
        Rng rng(Rng::mix(seed, kVariantTag, 7));
        rng.shuffle(idx);
        idx.resize(size_t(n_samples));
    }

    const int threads = int(std::max(1u, std::thread::hardware_concurrency()));
    std::vector<long> ok(size_t(threads), 0);
    parallel_chunks(int(idx.size()), threads, [&](int begin, int end, int worker) {
        for (int i = begin; i < end; ++i) {
            const auto& w = windows[size_t(idx[size_t(i)])];
            const auto decoded = decode_variant_window(
                m, vocab, w, variant, Rng::mix(seed, kVariantTag, uint64_t(idx[size_t(i)])));
            if (rec.predict(decoded) == w.region) ok[size_t(worker)]++;
        }
    });
    long total_ok = 0;
    for (long v : ok) total_ok += v;
    return double(total_ok) / double(idx.size());
}

// --- probes ------------------------------------------------------------------------

namespace {

// multinomial logistic regression, deterministic zero init, standardized
// features, plain full-batch gradient descent
double linear_probe_accuracy(const std::vector<std::vector<double>>& features,
                             const std::vector<int>& labels,
                             const std::vector<int>& train_idx,
                             const std::vector<int>& test_idx, int n_classes) {
    const int d = int(features.front().size());
    std::vector<double> mean(size_t(d), 0.0), stdev(size_t(d), 0.0);
    for (int i : train_idx)
        for (int j = 0; j < d; ++j) mean[size_t(j)] += features[size_t(i)][size_t(j)];
    for (auto& v : mean) v /= double(train_idx.size());
    for (int i : train_idx)
        for (int j = 0; j < d; ++j) {
            const double c = features[size_t(i)][size_t(j)] - mean[size_t(j)];
            stdev[size_t(j)] += c * c;
        }
    for (auto& v : stdev) v = std::sqrt(v / double(train_idx.size())) + 1e-8;

    auto standardized = [&](int i, int j) {
        return (features[size_t(i)][size_t(j)] - mean[size_t(j)]) / stdev[size_t(j)];
    };

    std::vector<double> W(size_t(n_classes) * d, 0.0), bias(size_t(n_classes), 0.0);
    std::vector<double> logits(static_cast<size_t>(n_classes)), probs(static_cast<size_t>(n_classes));
    std::vector<double> gW(W.size()), gb(bias.size());
    constexpr int kIters = 300;
    constexpr double kLr = 0.5, kL2 = 1e-4;

    for (int it = 0; it < kIters; ++it) {
        std::fill(gW.begin(), gW.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (int i : train_idx) {
            for (int c = 0; c < n_classes; ++c) {
                double acc = bias[size_t(c)];
                for (int j = 0; j < d; ++j)
                    acc += W[size_t(c) * d + size_t(j)] * standardized(i, j);
                logits[size_t(c)] = acc;
            }
            losses::softmax(logits, probs);
            for (int c = 0; c < n_classes; ++c) {
                const double delta =
                    (probs[size_t(c)] - (c == labels[size_t(i)] ? 1.0 : 0.0)) /
                    double(train_idx.size());
                gb[size_t(c)] += delta;
                for (int j = 0; j < d; ++j)
                    gW[size_t(c) * d + size_t(j)] += delta * standardized(i, j);
            }
        }
        for (size_t k = 0; k < W.size(); ++k) W[k] -= kLr * (gW[k] + kL2 * W[k]);
        for (size_t k = 0; k < bias.size(); ++k) bias[k] -= kLr * gb[k];
    }

    long ok = 0;
    for (int i : test_idx) {
        int best = 0;
        double best_v = -1e300;
        for (int c = 0; c < n_classes; ++c) {
            double acc = bias[size_t(c)];
            for (int j = 0; j < d; ++j)
                acc += W[size_t(c) * d + size_t(j)] * standardized(i, j);
            if (acc > best_v) { best_v = acc; best = c; }
        }
        if (best == labels[size_t(i)]) ++ok;
    }
    return test_idx.empty() ? 0.0 : double(ok) / double(test_idx.size());
}

} // namespace

ProbeResult probe_latents(const model::MelodyVae& m,
                          std::span<const corpus::TernaryWindow> windows, uint64_t seed) {
    if (windows.empty()) throw data_error("probe_latents: empty dataset");
    const auto& cfg = m.config();
    const int n = int(windows.size());

    std::vector<std::vector<double>> zs(static_cast<size_t>(n)), zc(static_cast<size_t>(n));
    std::vector<int> labels(static_cast<size_t>(n));
    const int threads = int(std::max(1u, std::thread::hardware_concurrency()));
    parallel_chunks(n, threads, [&](int begin, int end, int) {
        const auto zero = model::LatentNoise::zero(cfg);
        for (int i = begin; i < end; ++i) {
            const auto enc = m.encode_window(windows[size_t(i)], zero);
            auto& b = enc.bundle;
            zs[size_t(i)] = b.ps.mu;
            zs[size_t(i)].insert(zs[size_t(i)].end(), b.rs.mu.begin(), b.rs.mu.end());
            zc[size_t(i)] = b.pc.mu;
            zc[size_t(i)].insert(zc[size_t(i)].end(), b.rc.mu.begin(), b.rc.mu.end());
            labels[size_t(i)] = windows[size_t(i)].region;
        }
    });

    auto [train_idx, test_idx] = split_by_song(windows, 0.2, Rng::mix(seed, kProbeTag));
    if (test_idx.empty()) { test_idx = train_idx; }
    const int n_classes = 1 + *std::max_element(labels.begin(), labels.end());

    ProbeResult out;
    out.style_accuracy = linear_probe_accuracy(zs, labels, train_idx, test_idx, n_classes);
    out.content_accuracy = linear_probe_accuracy(zc, labels, train_idx, test_idx, n_classes);
    return out;
}

// --- report --------------------------------------------------------------------------

std::string EvalReport::to_json() const {
    json j;
    j["reconstruction_accuracy"] = reconstruction.pooled;
    j["reconstruction_accuracy_pitch"] = reconstruction.pitch;
    j["reconstruction_accuracy_rhythm"] = reconstruction.rhythm;
    j["style_recognition"] = {{"pitch_style", style_recognition_pitch},
                              {"rhythm_style", style_recognition_rhythm},
                              {"total_style", style_recognition_total}};
    j["recognizer_test_accuracy"] = recognizer_test_accuracy;
    j["probe_style_accuracy"] = probes.style_accuracy;
    j["probe_content_accuracy"] = probes.content_accuracy;
    j["confusion"] = confusion;
    return j.dump(2);
}

EvalReport evaluate(const model::MelodyVae& m, const StyleRecognizer& rec,
                    const corpus::Vocabulary& vocab,
                    std::span<const corpus::TernaryWindow> windows, int n_samples,
                    uint64_t seed) {
    EvalReport r;
    r.reconstruction = reconstruction_accuracy(m, windows);
    r.style_recognition_pitch = style_recognition_accuracy(
        m, rec, vocab, StyleVariant::PitchStyle, windows, n_samples, seed);
    r.style_recognition_rhythm = style_recognition_accuracy(
        m, rec, vocab, StyleVariant::RhythmStyle, windows, n_samples, seed);
    r.style_recognition_total = style_recognition_accuracy(
        m, rec, vocab, StyleVariant::TotalStyle, windows, n_samples, seed);
    r.recognizer_test_accuracy = rec.test_accuracy;
    r.probes = probe_latents(m, windows, seed);

    // confusion of the recognizer over total-style re-decodes
    const int K = m.config().n_regions;
    r.confusion.assign(size_t(K), std::vector<int>(size_t(K), 0));
    std::vector<int> idx(windows.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
    if (n_samples > 0 && size_t(n_samples) < idx.size()) {
        Rng rng(Rng::mix(seed, kVariantTag, 7));
        rng.shuffle(idx);
        idx.resize(size_t(n_samples));
    }
    for (int i : idx) {
        const auto& w = windows[size_t(i)];
        const auto decoded = decode_variant_window(m, vocab, w, StyleVariant::TotalStyle,
                                                   Rng::mix(seed, kVariantTag, uint64_t(i)));
        r.confusion[size_t(w.region)][size_t(rec.predict(decoded))]++;
    }
    return r;
}

// --- latent export + plots --------------------------------------------------------------

void export_latents(const model::MelodyVae& m,
                    std::span<const corpus::TernaryWindow> windows,
                    const corpus::Vocabulary& vocab, const std::string& path) {
    if (windows.empty()) throw data_error("export_latents: empty dataset");
    const auto& cfg = m.config();
    const int S = cfg.style_dim, C = cfg.content_dim;

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    out << "region";
    auto cols = [&](const char* prefix, int n) {
        for (int i = 0; i < n; ++i) out << "," << prefix << "_" << i;
    };
    cols("ps", S); cols("rs", S); cols("zs", 2 * S); cols("zc", 2 * C);
    out << "\n";

    const int n = int(windows.size());
    std::vector<std::string> rows(static_cast<size_t>(n));
    const int threads = int(std::max(1u, std::thread::hardware_concurrency()));
    parallel_chunks(n, threads, [&](int begin, int end, int) {
        const auto zero = model::LatentNoise::zero(cfg);
        char buf[32];
        for (int i = begin; i < end; ++i) {
            const auto enc = m.encode_window(windows[size_t(i)], zero);
            const auto& b = enc.bundle;
            std::string line = vocab.region_labels[size_t(windows[size_t(i)].region)];
            auto append = [&](const std::vector<double>& v) {
                for (double x : v) {
                    std::snprintf(buf, sizeof buf, ",%.17g", x);
                    line += buf;
                }
            };
            append(b.ps.mu);
            append(b.rs.mu);
            append(b.ps.mu); append(b.rs.mu);  // z_s = ps + rs
            append(b.pc.mu); append(b.rc.mu);  // z_c = pc + rc
            rows[size_t(i)] = std::move(line);
        }
    });
    for (const auto& line : rows) out << line << "\n";
    if (!out) throw io_error("short write to " + path);
}

void plot_latents(const std::string& latents_csv, const std::string& out_dir,
                  double perplexity, uint64_t seed, int max_points) {
    std::ifstream in(latents_csv);
    if (!in) throw io_error("cannot open " + latents_csv);
    std::string header;
    if (!std::getline(in, header)) throw parse_error(latents_csv + ": empty file");

    // column families from the header prefixes
    std::vector<std::string> names;
    {
        std::stringstream ss(header);
        std::string tok;
        while (std::getline(ss, tok, ',')) names.push_back(tok);
    }
    if (names.empty() || names[0] != "region")
        throw parse_error(latents_csv + ": first column must be 'region'");
    std::map<std::string, std::pair<int, int>> fam;  // prefix -> [first, last)
    for (size_t c = 1; c < names.size(); ++c) {
        const auto us = names[c].rfind('_');
        const std::string prefix = names[c].substr(0, us);
        auto it = fam.find(prefix);
        if (it == fam.end()) fam[prefix] = {int(c), int(c) + 1};
        else it->second.second = int(c) + 1;
    }

    std::vector<std::vector<double>> values;
    std::vector<std::string> regions;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        std::getline(ss, tok, ',');
        regions.push_back(tok);
        std::vector<double> row;
        while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
        if (row.size() != names.size() - 1)
            throw parse_error(latents_csv + ": ragged row");
        values.push_back(std::move(row));
    }
    if (values.size() < 8) throw data_error("plot_latents: too few rows to embed");

    std::vector<std::string> label_names;
    {
        std::set<std::string> s(regions.begin(), regions.end());
        label_names.assign(s.begin(), s.end());
    }
    auto label_id = [&](const std::string& r) {
        return int(std::find(label_names.begin(), label_names.end(), r) - label_names.begin());
    };

    std::vector<int> idx(values.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
    if (max_points > 0 && size_t(max_points) < idx.size()) {
        Rng rng(Rng::mix(seed, 0x9107a3c1ull));
        rng.shuffle(idx);
        idx.resize(size_t(max_points));
    }

    std::filesystem::create_directories(out_dir);
    const std::pair<std::string, std::string> panels[] = {
        {"ps", "pitch_style"}, {"rs", "rhythm_style"}, {"zs", "total_style"},
        {"zc", "total_content"}};
    for (const auto& [prefix, fname] : panels) {
        auto it = fam.find(prefix);
        if (it == fam.end()) throw parse_error(latents_csv + ": missing columns " + prefix);
        const auto [c0, c1] = it->second;
        Mat X(int(idx.size()), c1 - c0);
        std::vector<int> labels(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) {
            for (int c = c0; c < c1; ++c)
                X.at(int(i), c - c0) = values[size_t(idx[i])][size_t(c) - 1];
            labels[i] = label_id(regions[size_t(idx[i])]);
        }
        const Mat Y = tsne_2d(X, perplexity, 500, Rng::mix(seed, uint64_t(c0)));
        write_scatter_svg(out_dir + "/" + fname + ".svg", Y, labels, label_names,
                          fname + " latent space");
    }
}

} // namespace folkvae::eval
