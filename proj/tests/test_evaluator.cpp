#include "doctest.h"

#include "folkvae/corpus.hpp"
#include "folkvae/evaluator.hpp"
#include "folkvae/model.hpp"
#include "folkvae/rng.hpp"
#include "folkvae/tsne.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace folkvae;
using namespace folkvae::model;

namespace {

struct Fixture {
    corpus::Vocabulary vocab;
    std::vector<corpus::TernaryWindow> windows;
    ModelConfig mc;
};

Fixture make_fixture(int songs_per_style, uint64_t seed) {
    corpus::SyntheticStyleSpec lo{"lo", {48, 50, 52, 55}, {{2, 0.6}, {4, 0.4}},
                                  {{-2, 0.5}, {2, 0.5}}};
    corpus::SyntheticStyleSpec hi{"hi", {72, 74, 76, 79}, {{1, 0.5}, {3, 0.5}},
                                  {{-3, 0.4}, {3, 0.6}}};
    const auto songs = corpus::synthesize_corpus({lo, hi}, songs_per_style, 40, seed);
    Fixture f;
    f.vocab = corpus::build_vocabulary(songs, 4);
    for (const auto& s : songs) {
        const auto ws = corpus::windows_for_song(s, f.vocab);
        f.windows.insert(f.windows.end(), ws.begin(), ws.end());
    }
    f.mc.hidden = 12;
    f.mc.style_dim = 3;
    f.mc.content_dim = 5;
    f.mc.embed_dim = 6;
    f.mc.pos_dim = 3;
    f.mc.pitch_vocab = int(f.vocab.pitch_tokens.size());
    f.mc.interval_vocab = int(f.vocab.interval_tokens.size());
    f.mc.rhythm_vocab = int(f.vocab.rhythm_tokens.size());
    f.mc.n_regions = int(f.vocab.region_labels.size());
    f.mc.init_seed = seed;
    return f;
}

} // namespace

TEST_CASE("reconstruction accuracy endpoints via bias surgery") {
    Fixture f = make_fixture(2, 51);
    // constant-token windows: a constant decoder replicates them perfectly
    corpus::TernaryWindow w;
    w.pitch_ids.fill(2);
    w.interval_ids.fill(1);
    w.rhythm_ids.fill(1);
    w.region = 0;
    w.source_song = "const";
    std::vector<corpus::TernaryWindow> windows{w, w};

    MelodyVae m(f.mc);  // all parameters zero
    auto set_bias = [&](const std::string& name, int hot) {
        for (const auto& info : m.arena().infos()) {
            if (info.name != name) continue;
            double* p = m.arena().values().data() + info.offset;
            std::fill(p, p + info.count(), 0.0);
            p[hot] = 10.0;
        }
    };
    SUBCASE("decoder biased to the target tokens scores 1.0") {
        set_bias("dec.pitch.out.b", 2);
        set_bias("dec.rhythm.out.b", 1);
        const auto acc = eval::reconstruction_accuracy(m, windows);
        CHECK(acc.pooled == 1.0);
        CHECK(acc.pitch == 1.0);
        CHECK(acc.rhythm == 1.0);
    }
    SUBCASE("decoder biased to a never-occurring token scores 0.0") {
        set_bias("dec.pitch.out.b", 3);
        set_bias("dec.rhythm.out.b", 2);
        const auto acc = eval::reconstruction_accuracy(m, windows);
        CHECK(acc.pooled == 0.0);
    }
    CHECK_THROWS(eval::reconstruction_accuracy(m, {}));
}

TEST_CASE("style recognizer separates planted styles and fails on shuffled labels") {
    Fixture f = make_fixture(12, 52);  // 2 styles x 12 songs x 9 windows = 216
    eval::RecognizerConfig rc;
    rc.hidden = 12;
    rc.style_dim = 8;
    rc.content_dim = 4;
    rc.embed_dim = 8;
    rc.epochs = 4;
    rc.seed = 3;

    const auto rec = eval::train_style_recognizer(f.windows, f.vocab, rc);
    MESSAGE("recognizer held-out accuracy: ", rec.test_accuracy);
    CHECK(rec.test_accuracy >= 0.95);

    SUBCASE("window-shuffled labels stay near chance on held-out songs") {
        auto shuffled = f.windows;
        Rng rng(9);
        for (auto& w : shuffled) w.region = int(rng.uniform_int(2));
        const auto rec2 = eval::train_style_recognizer(shuffled, f.vocab, rc);
        MESSAGE("label-shuffled accuracy: ", rec2.test_accuracy);
        CHECK(rec2.test_accuracy > 0.5 - 0.1);
        CHECK(rec2.test_accuracy < 0.5 + 0.1);
    }
    SUBCASE("fewer than 2 regions is an error") {
        corpus::Vocabulary v1 = f.vocab;
        v1.region_labels = {"only"};
        CHECK_THROWS(eval::train_style_recognizer(f.windows, v1, rc));
    }
    SUBCASE("recognizer checkpoints round-trip") {
        const auto path =
            (std::filesystem::temp_directory_path() / "folkvae_rec.fvae").string();
        eval::save_recognizer(path, rec, f.vocab);
        const auto rec2 = eval::load_recognizer(path);
        CHECK(rec2.test_accuracy == doctest::Approx(rec.test_accuracy).epsilon(1e-6));
        for (const auto& w : {f.windows.front(), f.windows.back()})
            CHECK(rec2.predict(w) == rec.predict(w));
    }
    SUBCASE("recognizer shares no parameters with a generative model") {
        MelodyVae m(f.mc);
        m.init_params();
        CHECK(&m.arena() != &rec.net.arena());
        CHECK(m.arena().values().data() != rec.net.arena().values().data());
    }
}

TEST_CASE("style recognition accuracy runs all variants and stays in [0,1]") {
    Fixture f = make_fixture(3, 53);
    MelodyVae m(f.mc);
    m.init_params();
    eval::RecognizerConfig rc;
    rc.hidden = 12;
    rc.style_dim = 8;
    rc.content_dim = 4;
    rc.embed_dim = 8;
    rc.epochs = 2;
    rc.seed = 5;
    const auto rec = eval::train_style_recognizer(f.windows, f.vocab, rc);

    for (auto v : {eval::StyleVariant::PitchStyle, eval::StyleVariant::RhythmStyle,
                   eval::StyleVariant::TotalStyle}) {
        const double acc =
            eval::style_recognition_accuracy(m, rec, f.vocab, v, f.windows, 20, 77);
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
        // deterministic under a fixed seed
        CHECK(acc ==
              eval::style_recognition_accuracy(m, rec, f.vocab, v, f.windows, 20, 77));
    }
    CHECK(eval::variant_from_name("pitch-style") == eval::StyleVariant::PitchStyle);
    CHECK_THROWS(eval::variant_from_name("tempo-style"));
}

TEST_CASE("probes are deterministic and bounded; accuracy bounds hold") {
    Fixture f = make_fixture(6, 54);
    MelodyVae m(f.mc);
    m.init_params();
    const auto p1 = eval::probe_latents(m, f.windows, 11);
    const auto p2 = eval::probe_latents(m, f.windows, 11);
    CHECK(p1.style_accuracy == p2.style_accuracy);
    CHECK(p1.content_accuracy == p2.content_accuracy);
    for (double a : {p1.style_accuracy, p1.content_accuracy}) {
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }
    MESSAGE("untrained probes: style=", p1.style_accuracy, " content=", p1.content_accuracy);
}

TEST_CASE("evaluate produces a consistent report and confusion matrix") {
    Fixture f = make_fixture(3, 55);
    MelodyVae m(f.mc);
    m.init_params();
    eval::RecognizerConfig rc;
    rc.hidden = 12;
    rc.style_dim = 8;
    rc.content_dim = 4;
    rc.embed_dim = 8;
    rc.epochs = 2;
    rc.seed = 5;
    const auto rec = eval::train_style_recognizer(f.windows, f.vocab, rc);

    const auto report = eval::evaluate(m, rec, f.vocab, f.windows, 16, 99);
    for (double a : {report.reconstruction.pooled, report.style_recognition_pitch,
                     report.style_recognition_rhythm, report.style_recognition_total,
                     report.probes.style_accuracy, report.probes.content_accuracy}) {
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }
    // confusion rows sum to the per-region evaluation counts
    int total = 0, diag = 0;
    for (size_t r = 0; r < report.confusion.size(); ++r)
        for (size_t c = 0; c < report.confusion[r].size(); ++c) {
            total += report.confusion[r][c];
            if (r == c) diag += report.confusion[r][c];
        }
    CHECK(total == 16);
    CHECK(double(diag) / double(total) ==
          doctest::Approx(report.style_recognition_total).epsilon(1e-12));
    CHECK(report.to_json().find("reconstruction_accuracy") != std::string::npos);
}

TEST_CASE("latent export: row count, widths, byte-identical re-export") {
    Fixture f = make_fixture(2, 56);
    // paper-scale dims so the exported widths are 32/32/64/192
    ModelConfig mc = f.mc;
    mc.hidden = 16;
    mc.style_dim = 32;
    mc.content_dim = 96;
    MelodyVae m(mc);
    m.init_params();

    namespace fs = std::filesystem;
    const auto p1 = (fs::temp_directory_path() / "folkvae_lat1.csv").string();
    const auto p2 = (fs::temp_directory_path() / "folkvae_lat2.csv").string();
    eval::export_latents(m, f.windows, f.vocab, p1);
    eval::export_latents(m, f.windows, f.vocab, p2);

    std::ifstream in1(p1), in2(p2);
    const std::string b1((std::istreambuf_iterator<char>(in1)), {});
    const std::string b2((std::istreambuf_iterator<char>(in2)), {});
    CHECK(b1 == b2);

    std::stringstream ss(b1);
    std::string header;
    std::getline(ss, header);
    int commas = 0;
    for (char c : header) commas += c == ',' ? 1 : 0;
    CHECK(commas == 32 + 32 + 64 + 192);
    int rows = 0;
    std::string line;
    while (std::getline(ss, line))
        if (!line.empty()) ++rows;
    CHECK(rows == int(f.windows.size()));
}

TEST_CASE("tsne_2d separates planted clusters and is deterministic") {
    Rng rng(77);
    const int per = 25;
    Mat X(3 * per, 6);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < per; ++i)
            for (int j = 0; j < 6; ++j)
                X.at(c * per + i, j) = 8.0 * c + 0.3 * rng.gaussian();

    const Mat Y = eval::tsne_2d(X, 10.0, 300, 5);
    REQUIRE(Y.rows == 3 * per);
    REQUIRE(Y.cols == 2);
    for (double v : Y.v) CHECK(std::isfinite(v));

    const Mat Y2 = eval::tsne_2d(X, 10.0, 300, 5);
    CHECK(Y.v == Y2.v);

    auto mean_dist = [&](bool same_cluster) {
        double acc = 0.0;
        int n = 0;
        for (int a = 0; a < Y.rows; ++a)
            for (int b = a + 1; b < Y.rows; ++b) {
                if ((a / per == b / per) != same_cluster) continue;
                const double dx = Y.at(a, 0) - Y.at(b, 0);
                const double dy = Y.at(a, 1) - Y.at(b, 1);
                acc += std::sqrt(dx * dx + dy * dy);
                ++n;
            }
        return acc / n;
    };
    CHECK(mean_dist(true) < mean_dist(false));
}

TEST_CASE("plot_latents writes one SVG per latent family") {
    Fixture f = make_fixture(2, 57);
    MelodyVae m(f.mc);
    m.init_params();
    namespace fs = std::filesystem;
    const auto csv = (fs::temp_directory_path() / "folkvae_plot.csv").string();
    const auto dir = (fs::temp_directory_path() / "folkvae_figs").string();
    fs::remove_all(dir);
    eval::export_latents(m, f.windows, f.vocab, csv);
    eval::plot_latents(csv, dir, 5.0, 3, 40);
    for (const char* name :
         {"pitch_style.svg", "rhythm_style.svg", "total_style.svg", "total_content.svg"}) {
        CHECK(fs::exists(dir + "/" + std::string(name)));
        CHECK(fs::file_size(dir + "/" + std::string(name)) > 500);
    }
}
