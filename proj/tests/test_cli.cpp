#include "doctest.h"

#include "folkvae/cli.hpp"

#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using folkvae::cli::dispatch;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kSpecJson = R"({
  "songs_per_style": 6,
  "song_length": 40,
  "grid": 4,
  "styles": [
    {"name": "lo", "pitch_set": [48, 50, 52, 55], "durations": {"2": 0.6, "4": 0.4},
     "intervals": {"-2": 0.5, "2": 0.5}},
    {"name": "hi", "pitch_set": [72, 74, 76, 79], "durations": {"1": 0.6, "3": 0.4},
     "intervals": {"-2": 0.5, "2": 0.5}}
  ]
})";

struct TempDir {
    fs::path dir;
    explicit TempDir(const std::string& name) : dir(fs::temp_directory_path() / name) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    std::string operator/(const std::string& leaf) const { return (dir / leaf).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("help exits 0, unknown flags and subcommands exit 2") {
    CHECK(dispatch({"--help"}) == 0);
    CHECK(dispatch({"frobnicate"}) == 2);
    CHECK(dispatch({"synth", "--no-such-flag", "x"}) == 2);
    CHECK(dispatch({}) == 2);
}

TEST_CASE("missing inputs exit 1 with a categorized error") {
    TempDir td("folkvae_cli_err");
    CHECK(dispatch({"train", "--data", td / "absent.jsonl", "--vocab", td / "absent.json"}) ==
          1);
    CHECK(dispatch({"plot", "--latents", td / "absent.csv", "--out", td / "figs"}) == 1);
}

TEST_CASE("synth then re-synth is byte-identical; runconfig written") {
    TempDir td("folkvae_cli_synth");
    const auto spec = td / "specs.json";
    std::ofstream(spec) << kSpecJson;

    const auto data = td / "data.jsonl";
    const auto vocab = td / "vocab.json";
    REQUIRE(dispatch({"synth", "--spec", spec, "--seed", "7", "--out", data, "--vocab",
                      vocab}) == 0);
    const std::string first = slurp(data);
    REQUIRE(dispatch({"synth", "--spec", spec, "--seed", "7", "--out", data, "--vocab",
                      vocab}) == 0);
    CHECK(slurp(data) == first);
    CHECK(!first.empty());

    const auto rc = json::parse(slurp(data + ".runconfig.json"));
    CHECK(rc.at("command") == "synth");
    CHECK(rc.at("settings").contains("seed"));
}

TEST_CASE("config file layers under flags") {
    TempDir td("folkvae_cli_config");
    const auto spec = td / "specs.json";
    std::ofstream(spec) << kSpecJson;
    const auto cfg = td / "defaults.json";
    std::ofstream(cfg) << R"({"seed": 1234, "song-length": 40})";

    // seed comes from the config file level
    const auto d1 = td / "d1.jsonl";
    REQUIRE(dispatch({"--config", cfg, "synth", "--spec", spec, "--out", d1, "--vocab",
                      td / "v1.json"}) == 0);
    // explicit flag wins over the config file
    const auto d2 = td / "d2.jsonl";
    REQUIRE(dispatch({"--config", cfg, "synth", "--spec", spec, "--seed", "1234", "--out", d2,
                      "--vocab", td / "v2.json"}) == 0);
    CHECK(slurp(d1) == slurp(d2));

    const auto d3 = td / "d3.jsonl";
    REQUIRE(dispatch({"--config", cfg, "synth", "--spec", spec, "--seed", "9", "--out", d3,
                      "--vocab", td / "v3.json"}) == 0);
    CHECK(slurp(d3) != slurp(d1));
}

TEST_CASE("FOLK_SEED environment variable overrides all seeds") {
    TempDir td("folkvae_cli_env");
    const auto spec = td / "specs.json";
    std::ofstream(spec) << kSpecJson;

    setenv("FOLK_SEED", "4242", 1);
    const auto d1 = td / "d1.jsonl";
    REQUIRE(dispatch({"synth", "--spec", spec, "--seed", "7", "--out", d1, "--vocab",
                      td / "v1.json"}) == 0);
    unsetenv("FOLK_SEED");

    const auto d2 = td / "d2.jsonl";
    REQUIRE(dispatch({"synth", "--spec", spec, "--seed", "4242", "--out", d2, "--vocab",
                      td / "v2.json"}) == 0);
    CHECK(slurp(d1) == slurp(d2));
}

TEST_CASE("full smoke pipeline: synth, train, bank, generate, eval, export, plot") {
    TempDir td("folkvae_cli_smoke");
    const auto spec = td / "specs.json";
    std::ofstream(spec) << kSpecJson;

    const auto data = td / "data.jsonl";
    const auto vocab = td / "vocab.json";
    REQUIRE(dispatch({"synth", "--spec", spec, "--seed", "7", "--out", data, "--vocab",
                      vocab}) == 0);

    const auto ckpt_dir = td / "ckpt";
    REQUIRE(dispatch({"train", "--data", data, "--vocab", vocab, "--out", ckpt_dir,
                      "--ablation", "total", "--seed", "3", "--epochs", "1", "--batch", "20",
                      "--hidden", "16", "--style-dim", "4", "--content-dim", "8",
                      "--embed-dim", "8", "--pos-dim", "4"}) == 0);
    const auto ckpt = ckpt_dir + "/checkpoint_last.fvae";
    REQUIRE(fs::exists(ckpt));
    REQUIRE(fs::exists(ckpt_dir + "/metrics.jsonl"));
    REQUIRE(fs::exists(ckpt_dir + "/runconfig.json"));

    const auto bank = td / "bank.json";
    REQUIRE(dispatch({"bank", "--ckpt", ckpt, "--data", data, "--out", bank}) == 0);

    const auto gen_dir = td / "gen";
    REQUIRE(dispatch({"generate", "--ckpt", ckpt, "--bank", bank, "--region", "lo", "--n",
                      "2", "--temperature", "1.0", "--seed", "7", "--out", gen_dir}) == 0);
    CHECK(fs::exists(gen_dir + "/lo_0.mid"));
    CHECK(fs::exists(gen_dir + "/lo_1.json"));

    const auto report = td / "report.json";
    REQUIRE(dispatch({"eval", "--ckpt", ckpt, "--data", data, "--recognizer",
                      td / "recognizer.fvae", "--report", report, "--n", "12",
                      "--recognizer-epochs", "2", "--seed", "5"}) == 0);
    const auto rep = json::parse(slurp(report));
    CHECK(rep.contains("reconstruction_accuracy"));
    CHECK(rep.contains("style_recognition"));

    const auto latents = td / "latents.csv";
    REQUIRE(dispatch({"export-latents", "--ckpt", ckpt, "--data", data, "--out", latents}) ==
            0);
    const auto figs = td / "figs";
    REQUIRE(dispatch({"plot", "--latents", latents, "--out", figs, "--perplexity", "5",
                      "--max-points", "48"}) == 0);
    CHECK(fs::exists(figs + "/total_content.svg"));

    // same-seed generation re-run is byte-identical (idempotence)
    const auto gen2 = td / "gen2";
    REQUIRE(dispatch({"generate", "--ckpt", ckpt, "--bank", bank, "--region", "lo", "--n",
                      "2", "--temperature", "1.0", "--seed", "7", "--out", gen2}) == 0);
    CHECK(slurp(gen_dir + "/lo_0.mid") == slurp(gen2 + "/lo_0.mid"));
}
