#include "doctest.h"

#include "folkvae/error.hpp"
#include "folkvae/model.hpp"
#include "folkvae/rng.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace folkvae;
using namespace folkvae::model;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.seq_len = 8;
    c.hidden = 8;
    c.style_dim = 4;
    c.content_dim = 12;
    c.embed_dim = 6;
    c.pos_dim = 3;
    c.pitch_vocab = 5;
    c.interval_vocab = 5;
    c.rhythm_vocab = 5;
    c.n_regions = 2;
    c.init_seed = 99;
    return c;
}

corpus::TernaryWindow random_window(Rng& rng, const ModelConfig& cfg) {
    corpus::TernaryWindow w;
    for (int t = 0; t < corpus::kWindowLen; ++t) {
        w.pitch_ids[size_t(t)] = int(rng.uniform_int(uint64_t(cfg.pitch_vocab)));
        w.interval_ids[size_t(t)] = int(rng.uniform_int(uint64_t(cfg.interval_vocab)));
        w.rhythm_ids[size_t(t)] = int(rng.uniform_int(uint64_t(cfg.rhythm_vocab)));
    }
    w.region = int(rng.uniform_int(uint64_t(cfg.n_regions)));
    w.source_song = "test";
    return w;
}

std::vector<int> ids_of(Rng& rng, int n, int vocab) {
    std::vector<int> v(static_cast<size_t>(n));
    for (auto& x : v) x = int(rng.uniform_int(uint64_t(vocab)));
    return v;
}

} // namespace

TEST_CASE("embed_melody locality and one-hot widths") {
    ModelConfig cfg = tiny_config();
    MelodyVae m(cfg);
    m.init_params();
    Rng rng(1);

    SUBCASE("equal ids give equal rows") {
        std::vector<int> same(8, 2);
        const Mat e = m.embed_melody(same, same, same);
        CHECK(e.rows == 8);
        CHECK(e.cols == 18);
        for (int t = 1; t < 8; ++t)
            for (int j = 0; j < e.cols; ++j) CHECK(e.at(t, j) == e.at(0, j));
    }
    SUBCASE("a single changed id changes only that step") {
        auto p = ids_of(rng, 8, 5), i = ids_of(rng, 8, 5), r = ids_of(rng, 8, 5);
        auto p2 = p;
        p2[5] = (p[5] + 1) % 5;
        const Mat a = m.embed_melody(p, i, r);
        const Mat b = m.embed_melody(p2, i, r);
        for (int t = 0; t < 8; ++t) {
            bool differs = false;
            for (int j = 0; j < a.cols; ++j) differs = differs || a.at(t, j) != b.at(t, j);
            CHECK(differs == (t == 5));
        }
    }
    SUBCASE("one-hot mode with the reference vocab sizes gives width 144") {
        ModelConfig c2 = tiny_config();
        c2.one_hot_input = true;
        c2.pitch_vocab = 40;
        c2.interval_vocab = 46;
        c2.rhythm_vocab = 58;
        c2.seq_len = 32;
        MelodyVae m2(c2);
        Rng r2(3);
        const Mat e = m2.embed_melody(ids_of(r2, 32, 40), ids_of(r2, 32, 46),
                                      ids_of(r2, 32, 58));
        CHECK(e.cols == 144);
        for (int t = 0; t < 32; ++t) {
            double sum = 0.0;
            for (int j = 0; j < e.cols; ++j) sum += e.at(t, j);
            CHECK(sum == 3.0);  // exactly one 1 per stream
        }
    }
    SUBCASE("out-of-range id is an error") {
        auto p = ids_of(rng, 8, 5);
        p[0] = 7;
        CHECK_THROWS_AS(m.embed_melody(p, ids_of(rng, 8, 5), ids_of(rng, 8, 5)), Error);
    }
}

TEST_CASE("encode reparameterization identities") {
    ModelConfig cfg = tiny_config();
    MelodyVae m(cfg);
    m.init_params();
    Rng rng(2);
    const Mat inputs = m.embed_melody(ids_of(rng, 8, 5), ids_of(rng, 8, 5), ids_of(rng, 8, 5));

    SUBCASE("zero noise makes samples equal means exactly") {
        const auto res = m.encode(inputs, LatentNoise::zero(cfg));
        CHECK(res.bundle.ps.z == res.bundle.ps.mu);
        CHECK(res.bundle.pc.z == res.bundle.pc.mu);
        CHECK(res.bundle.rs.z == res.bundle.rs.mu);
        CHECK(res.bundle.rc.z == res.bundle.rc.mu);
    }
    SUBCASE("unit noise with zero logvar shifts the mean by one") {
        MelodyVae zeroed(cfg);  // all parameters zero -> mu = 0, logvar = 0
        LatentNoise ones = LatentNoise::zero(cfg);
        for (auto* v : {&ones.ps, &ones.pc, &ones.rs, &ones.rc})
            for (auto& x : *v) x = 1.0;
        const auto res = zeroed.encode(inputs, ones);
        for (const Latent* l : {&res.bundle.ps, &res.bundle.pc, &res.bundle.rs,
                                &res.bundle.rc})
            for (size_t d = 0; d < l->z.size(); ++d)
                CHECK(l->z[d] == doctest::Approx(l->mu[d] + 1.0).epsilon(1e-15));
    }
    SUBCASE("same input and noise twice is bitwise identical") {
        Rng nrng(7);
        const auto noise = LatentNoise::gaussian(cfg, nrng);
        const auto a = m.encode(inputs, noise);
        const auto b = m.encode(inputs, noise);
        CHECK(a.bundle.ps.z == b.bundle.ps.z);
        CHECK(a.bundle.rc.z == b.bundle.rc.z);
        CHECK(a.trace.summary == b.trace.summary);
    }
    SUBCASE("latent dims follow the config") {
        const auto res = m.encode(inputs, LatentNoise::zero(cfg));
        CHECK(res.bundle.ps.mu.size() == 4);
        CHECK(res.bundle.pc.mu.size() == 12);
        CHECK(res.bundle.rs.mu.size() == 4);
        CHECK(res.bundle.rc.mu.size() == 12);
    }
    SUBCASE("wrong noise length is an error") {
        LatentNoise bad = LatentNoise::zero(cfg);
        bad.ps.push_back(0.0);
        CHECK_THROWS_AS(m.encode(inputs, bad), Error);
    }
    SUBCASE("non-finite activations raise an error naming a step") {
        MelodyVae poisoned(cfg);
        poisoned.init_params();
        poisoned.arena().values()[100] = std::numeric_limits<double>::quiet_NaN();
        try {
            poisoned.encode(inputs, LatentNoise::zero(cfg));
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("step") != std::string::npos);
        }
    }
}

TEST_CASE("default paper-scale dims: 32/96 style/content, 256-dim melody latent") {
    ModelConfig cfg;
    cfg.pitch_vocab = 40;
    cfg.interval_vocab = 46;
    cfg.rhythm_vocab = 58;
    cfg.n_regions = 6;
    MelodyVae m(cfg);
    m.init_params();
    Rng rng(5);
    const auto w = random_window(rng, cfg);
    const auto enc = m.encode_window(w, LatentNoise::zero(cfg));
    CHECK(enc.bundle.ps.mu.size() == 32);
    CHECK(enc.bundle.pc.mu.size() == 96);
    CHECK(melody_latent(enc.bundle).size() == 256);
    CHECK(style_latent(enc.bundle).size() == 64);
    CHECK(content_latent(enc.bundle).size() == 192);

    const Mat act = m.decode_melody(enc.bundle);
    CHECK(act.rows == 32);
    CHECK(act.cols == 144);
    for (double x : act.v) CHECK((x > 0.0 && x < 1.0));
}

TEST_CASE("decoders: shape contracts, errors, latent sensitivity") {
    ModelConfig cfg = tiny_config();
    MelodyVae m(cfg);
    m.init_params();
    Rng rng(3);

    std::vector<double> z(size_t(cfg.z_stream()), 0.0);
    const Mat logits = m.decode_pitch(z);
    CHECK(logits.rows == cfg.seq_len);
    CHECK(logits.cols == cfg.pitch_vocab);
    for (double x : logits.v) CHECK(std::isfinite(x));

    const Mat rl = m.decode_rhythm(z);
    CHECK(rl.cols == cfg.rhythm_vocab);

    std::vector<double> wrong(size_t(cfg.z_stream()) + 1, 0.0);
    CHECK_THROWS_AS(m.decode_pitch(wrong), Error);

    std::vector<double> z2(size_t(cfg.z_stream()));
    for (auto& x : z2) x = rng.gaussian();
    const Mat l2 = m.decode_pitch(z2);
    bool differs = false;
    for (size_t i = 0; i < logits.v.size(); ++i) differs = differs || logits.v[i] != l2.v[i];
    CHECK(differs);
}

TEST_CASE("melody multi-hot target layout") {
    ModelConfig cfg = tiny_config();
    MelodyVae m(cfg);
    corpus::TernaryWindow w;
    w.pitch_ids.fill(3);
    w.interval_ids.fill(0);
    w.rhythm_ids.fill(2);
    w.pitch_ids[0] = 3; w.interval_ids[0] = 0; w.rhythm_ids[0] = 2;
    const Mat target = m.melody_multi_hot(w);
    // but the model's seq_len is 8: only the first 8 steps are read
    CHECK(target.rows == cfg.seq_len);
    CHECK(target.cols == 15);
    CHECK(target.at(0, 3) == 1.0);
    CHECK(target.at(0, 5 + 0) == 1.0);
    CHECK(target.at(0, 10 + 2) == 1.0);
    double sum = 0.0;
    for (int j = 0; j < target.cols; ++j) sum += target.at(0, j);
    CHECK(sum == 3.0);
}

TEST_CASE("classifiers are softmax heads") {
    ModelConfig cfg = tiny_config();
    cfg.n_regions = 6;
    MelodyVae zeroed(cfg);  // zero weights -> uniform output
    std::vector<double> zs(size_t(cfg.z_style_total()), 0.3);
    const auto probs = zeroed.classify_style(zs);
    REQUIRE(probs.size() == 6);
    for (double p : probs) CHECK(p == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

    MelodyVae m(cfg);
    m.init_params();
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> z(size_t(cfg.z_style_total()));
        for (auto& x : z) x = 3.0 * rng.gaussian();
        const auto p = m.classify_style(z);
        double sum = 0.0;
        for (double v : p) { CHECK(v > 0.0); sum += v; }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    std::vector<double> zc(size_t(cfg.z_content_total()), 0.0);
    CHECK(m.classify_adversary(zc).size() == 6);
    CHECK_THROWS_AS(m.classify_style(zc), Error);
    std::vector<double> bad(3, 0.0);
    CHECK_THROWS_AS(m.classify_adversary(bad), Error);
}

TEST_CASE("residual block surgery: zeroed recurrent transform is the identity") {
    ModelConfig cfg = tiny_config();
    MelodyVae m(cfg);
    m.init_params();
    // zero every parameter of the second block (its skip is the identity)
    auto& arena = m.arena();
    for (const auto& info : arena.infos()) {
        if (info.name.rfind("enc.block1.", 0) == 0) {
            double* p = arena.values().data() + info.offset;
            std::fill(p, p + info.count(), 0.0);
        }
    }
    Rng rng(6);
    const Mat inputs = m.embed_melody(ids_of(rng, 8, 5), ids_of(rng, 8, 5), ids_of(rng, 8, 5));
    const auto res = m.encode(inputs, LatentNoise::zero(cfg));
    const auto& blk = res.trace.blocks[1];
    REQUIRE(blk.y.rows == blk.x.rows);
    REQUIRE(blk.y.cols == blk.x.cols);
    for (size_t i = 0; i < blk.y.v.size(); ++i)
        CHECK(blk.y.v[i] == doctest::Approx(blk.x.v[i]).epsilon(1e-15));
}

TEST_CASE("checkpoint round-trip is bitwise") {
    ModelConfig cfg = tiny_config();
    MelodyVae m(cfg);
    m.init_params();
    corpus::Vocabulary vocab;
    vocab.grid = 4;
    vocab.pitch_tokens = {corpus::kRestPitch, 60, 62, 64, 67};
    vocab.interval_tokens = {corpus::kIntervalNone, corpus::kIntervalPad, -2, 2, 5};
    vocab.rhythm_tokens = {1, 2, 3, 4, 8};
    vocab.region_labels = {"a", "b"};

    const auto path = (std::filesystem::temp_directory_path() / "folkvae_ckpt.fvae").string();
    save_checkpoint(path, m, vocab, 123);
    auto loaded = load_checkpoint(path);
    CHECK(loaded.step == 123);
    CHECK(loaded.vocab == vocab);
    CHECK(loaded.model.config() == cfg);
    CHECK(loaded.model.arena().values() == m.arena().values());

    // identical forward outputs on a fixed input and noise
    Rng rng(8);
    const auto w = random_window(rng, cfg);
    Rng nrng(9);
    const auto noise = LatentNoise::gaussian(cfg, nrng);
    const auto a = m.encode_window(w, noise);
    const auto b = loaded.model.encode_window(w, noise);
    CHECK(a.bundle.ps.z == b.bundle.ps.z);
    CHECK(a.bundle.rc.z == b.bundle.rc.z);

    // a second save produces identical bytes
    const auto path2 = (std::filesystem::temp_directory_path() / "folkvae_ckpt2.fvae").string();
    save_checkpoint(path2, loaded.model, loaded.vocab, 123);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), {});
    const std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);

    // config mismatch is rejected
    ModelConfig other = cfg;
    other.hidden = 16;
    MelodyVae m2(other);
    m2.init_params();
    save_checkpoint(path2, m2, vocab, 1);
    auto reloaded = load_checkpoint(path2);
    CHECK(reloaded.model.config().hidden == 16);
}

TEST_CASE("output shapes depend on config only, not content") {
    ModelConfig cfg = tiny_config();
    MelodyVae m(cfg);
    m.init_params();
    Rng rng(10);
    for (int rep = 0; rep < 5; ++rep) {
        const auto w = random_window(rng, cfg);
        Rng nrng(100 + uint64_t(rep));
        model::WindowTrace tr;
        m.forward_window(w, LatentNoise::gaussian(cfg, nrng), losses::AblationFlags{}, tr);
        CHECK(tr.dec_pitch.logits.rows == cfg.seq_len);
        CHECK(tr.dec_pitch.logits.cols == cfg.pitch_vocab);
        CHECK(tr.dec_rhythm.logits.cols == cfg.rhythm_vocab);
        CHECK(tr.dec_melody.activations.cols == cfg.melody_width());
        CHECK(tr.adv_pitch.logits.cols == cfg.pitch_vocab);
    }
}

TEST_CASE("autoregressive mode runs forward and step-decoding agrees on teacher inputs") {
    ModelConfig cfg = tiny_config();
    cfg.autoregressive = true;
    MelodyVae m(cfg);
    m.init_params();
    Rng rng(11);
    const auto w = random_window(rng, cfg);

    Rng nrng(12);
    model::WindowTrace tr;
    const auto losses_out =
        m.forward_window(w, LatentNoise::gaussian(cfg, nrng), losses::AblationFlags{}, tr);
    CHECK(std::isfinite(losses_out.recon_pitch));

    // step decoder fed the same teacher tokens reproduces run_decoder logits
    const auto z = pitch_latent(tr.enc.bundle);
    auto st = m.start_step_state(DecoderKind::Pitch, z);
    for (int t = 0; t < cfg.seq_len; ++t) {
        const int prev[1] = {t > 0 ? w.pitch_ids[size_t(t - 1)] : 0};
        const auto logits = m.decode_step(DecoderKind::Pitch, z, st,
                                          t == 0 ? std::span<const int>{}
                                                 : std::span<const int>(prev, 1));
        for (int j = 0; j < cfg.pitch_vocab; ++j)
            CHECK(logits[size_t(j)] ==
                  doctest::Approx(tr.dec_pitch.logits.at(t, j)).epsilon(1e-12));
    }
}
