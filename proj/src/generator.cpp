#include "folkvae/generator.hpp"
#include "folkvae/error.hpp"
#include "folkvae/losses.hpp"
#include "folkvae/midi.hpp"
#include "folkvae/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace folkvae::gen {

using nlohmann::json;

int StyleBank::region_id(const std::string& name) const {
    for (size_t i = 0; i < regions.size(); ++i)
        if (regions[i] == name) return int(i);
    throw data_error("style bank has no region '" + name + "'");
}

StyleBank build_style_bank(const model::MelodyVae& m,
                           std::span<const corpus::TernaryWindow> windows,
                           const corpus::Vocabulary& vocab) {
    if (windows.empty()) throw data_error("build_style_bank: empty dataset");
    const auto& cfg = m.config();
    if (int(vocab.region_labels.size()) != cfg.n_regions)
        throw config_error("build_style_bank: vocabulary regions do not match the model");

    StyleBank bank;
    bank.style_total = cfg.z_style_total();
    bank.regions = vocab.region_labels;
    bank.centroids.assign(bank.regions.size(),
                          std::vector<double>(size_t(bank.style_total), 0.0));
    bank.counts.assign(bank.regions.size(), 0);

    const auto zero = model::LatentNoise::zero(cfg);
    for (const auto& w : windows) {
        const auto enc = m.encode_window(w, zero);
        auto& c = bank.centroids[size_t(w.region)];
        for (int i = 0; i < cfg.style_dim; ++i) c[size_t(i)] += enc.bundle.ps.mu[size_t(i)];
        for (int i = 0; i < cfg.style_dim; ++i)
            c[size_t(cfg.style_dim + i)] += enc.bundle.rs.mu[size_t(i)];
        bank.counts[size_t(w.region)]++;
    }
    for (size_t r = 0; r < bank.regions.size(); ++r) {
        if (bank.counts[r] == 0)
            throw data_error("build_style_bank: region '" + bank.regions[r] +
                             "' has no windows");
        for (auto& v : bank.centroids[r]) v /= double(bank.counts[r]);
    }
    return bank;
}

void save_style_bank(const std::string& path, const StyleBank& bank) {
    json j;
    j["style_total"] = bank.style_total;
    j["regions"] = bank.regions;
    j["counts"] = bank.counts;
    j["centroids"] = bank.centroids;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

StyleBank load_style_bank(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw parse_error(path + ": " + e.what());
    }
    StyleBank bank;
    try {
        bank.style_total = j.at("style_total").get<int>();
        bank.regions = j.at("regions").get<std::vector<std::string>>();
        bank.counts = j.at("counts").get<std::vector<int>>();
        bank.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
    } catch (const json::exception& e) {
        throw parse_error(path + ": " + e.what());
    }
    if (bank.centroids.size() != bank.regions.size())
        throw parse_error(path + ": centroid/region count mismatch");
    for (const auto& c : bank.centroids)
        if (int(c.size()) != bank.style_total)
            throw parse_error(path + ": centroid width mismatch");
    return bank;
}

namespace {

int sample_categorical(std::span<const double> logits, double temperature, Rng& rng) {
    std::vector<double> scaled(logits.size());
    for (size_t j = 0; j < logits.size(); ++j) scaled[j] = logits[j] / temperature;
    std::vector<double> probs(logits.size());
    losses::softmax(scaled, probs);
    double u = rng.uniform();
    for (size_t j = 0; j < probs.size(); ++j) {
        if (u < probs[j]) return int(j);
        u -= probs[j];
    }
    return int(probs.size()) - 1;
}

std::vector<int> sample_decode(const model::MelodyVae& m, model::DecoderKind kind,
                               std::span<const double> z, double temperature, Rng& rng) {
    const auto& cfg = m.config();
    std::vector<int> ids(size_t(cfg.seq_len));
    if (!cfg.autoregressive) {
        const Mat logits = m.run_decoder(kind, z, nullptr).logits;
        for (int t = 0; t < cfg.seq_len; ++t)
            ids[size_t(t)] = sample_categorical(
                std::span(logits.row(t), size_t(logits.cols)), temperature, rng);
        return ids;
    }
    auto st = m.start_step_state(kind, z);
    int prev = 0;
    for (int t = 0; t < cfg.seq_len; ++t) {
        const int prev_arr[1] = {prev};
        const auto logits =
            m.decode_step(kind, z, st, t == 0 ? std::span<const int>{}
                                              : std::span<const int>(prev_arr, 1));
        ids[size_t(t)] = sample_categorical(logits, temperature, rng);
        prev = ids[size_t(t)];
    }
    return ids;
}

} // namespace

std::vector<GeneratedSample> generate(const model::MelodyVae& m, const StyleBank& bank,
                                      const corpus::Vocabulary& vocab,
                                      const GenerateOptions& opt) {
    if (opt.temperature <= 0.0) throw config_error("generate: temperature must be > 0");
    if (opt.n_samples <= 0) throw config_error("generate: n_samples must be > 0");
    const auto& cfg = m.config();
    if (bank.style_total != cfg.z_style_total())
        throw config_error("generate: style bank does not match the model");
    const int region = bank.region_id(opt.region);
    const auto& centroid = bank.centroids[size_t(region)];
    const int S = cfg.style_dim, C = cfg.content_dim;

    std::vector<GeneratedSample> out;
    out.reserve(size_t(opt.n_samples));
    for (int s = 0; s < opt.n_samples; ++s) {
        Rng rng(Rng::mix(opt.seed, 0x9e11e7a7ull, uint64_t(s)));
        GeneratedSample sample;
        sample.z_s = centroid;
        if (opt.style_jitter > 0.0)
            for (auto& v : sample.z_s) v += opt.style_jitter * rng.gaussian();
        sample.z_c.resize(size_t(2 * C));
        for (auto& v : sample.z_c) v = rng.gaussian();

        // split z_s/(z_c) back into per-stream parts with the layout of
        // training: z_s = ps+rs, z_c = pc+rc
        std::vector<double> z_p(size_t(S + C)), z_r(size_t(S + C));
        std::copy(sample.z_s.begin(), sample.z_s.begin() + S, z_p.begin());
        std::copy(sample.z_c.begin(), sample.z_c.begin() + C, z_p.begin() + S);
        std::copy(sample.z_s.begin() + S, sample.z_s.end(), z_r.begin());
        std::copy(sample.z_c.begin() + C, sample.z_c.end(), z_r.begin() + S);

        const auto pitch_ids = sample_decode(m, model::DecoderKind::Pitch, z_p,
                                             opt.temperature, rng);
        const auto rhythm_ids = sample_decode(m, model::DecoderKind::Rhythm, z_r,
                                              opt.temperature, rng);
        sample.window = corpus::window_from_decoded(
            pitch_ids, rhythm_ids, vocab, region,
            "generated/" + opt.region + "/" + std::to_string(s));
        out.push_back(std::move(sample));
    }
    return out;
}

void render_midi(const corpus::TernaryWindow& w, const corpus::Vocabulary& vocab,
                 const std::string& out_path) {
    std::vector<std::pair<int, int>> events;
    events.reserve(corpus::kWindowLen);
    for (int t = 0; t < corpus::kWindowLen; ++t) {
        const int pid = w.pitch_ids[size_t(t)];
        const int rid = w.rhythm_ids[size_t(t)];
        if (pid < 0 || size_t(pid) >= vocab.pitch_tokens.size() || rid < 0 ||
            size_t(rid) >= vocab.rhythm_tokens.size())
            throw data_error("render_midi: token id out of range at step " +
                             std::to_string(t));
        events.emplace_back(vocab.pitch_tokens[size_t(pid)],
                            vocab.rhythm_tokens[size_t(rid)]);
    }
    midi::write_monophonic_smf(out_path, events, vocab.grid);
}

corpus::TokenStreams reparse_midi(const std::string& path, const corpus::Vocabulary& vocab) {
    const auto events = corpus::parse_midi(path, vocab.grid);
    return corpus::tokenize(events);
}

} // namespace folkvae::gen
