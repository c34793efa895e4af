#include "folkvae/cli.hpp"
#include "folkvae/corpus.hpp"
#include "folkvae/dataset_io.hpp"
#include "folkvae/error.hpp"
#include "folkvae/evaluator.hpp"
#include "folkvae/generator.hpp"
#include "folkvae/kernels.hpp"
#include "folkvae/model.hpp"
#include "folkvae/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace folkvae::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Resolved settings are written next to every output artifact so any result
// can be traced back to the exact invocation.
void write_runconfig(const std::string& near_path, const std::string& command,
                     const json& settings, bool path_is_dir) {
    const std::string path = path_is_dir ? near_path + "/runconfig.json"
                                         : near_path + ".runconfig.json";
    json j;
    j["command"] = command;
    j["settings"] = settings;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

std::optional<uint64_t> env_seed_override() {
    const char* env = std::getenv("FOLK_SEED");
    if (!env || !*env) return std::nullopt;
    try {
        return std::stoull(env);
    } catch (const std::exception&) {
        throw config_error("FOLK_SEED is not an unsigned integer");
    }
}

// --config file.json acts as a defaults layer between built-ins and flags:
// its top-level keys override option defaults before argv is parsed.
void apply_config_file(CLI::App& app, const std::vector<std::string>& args) {
    std::string config_path;
    for (size_t i = 0; i + 1 < args.size(); ++i)
        if (args[i] == "--config") config_path = args[i + 1];
    if (config_path.empty()) return;
    std::ifstream in(config_path);
    if (!in) throw io_error("cannot open config file " + config_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw parse_error(config_path + ": " + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        for (CLI::App* sub : app.get_subcommands({})) {
            if (CLI::Option* opt = sub->get_option_no_throw("--" + it.key())) {
                const std::string v =
                    it.value().is_string() ? it.value().get<std::string>() : it.value().dump();
                opt->default_val(v);
            }
        }
    }
}

struct ModelFlags {
    int hidden = 128;
    int style_dim = 32;
    int content_dim = 96;
    int enc_layers = 2;
    int dec_layers = 2;
    int embed_dim = 64;
    int pos_dim = 16;
    bool one_hot = false;
    bool autoregressive = false;
    bool sum_reduction = false;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--hidden", hidden, "recurrent hidden size")->capture_default_str();
        cmd->add_option("--style-dim", style_dim, "per-stream style latent size")
            ->capture_default_str();
        cmd->add_option("--content-dim", content_dim, "per-stream content latent size")
            ->capture_default_str();
        cmd->add_option("--enc-layers", enc_layers, "residual encoder blocks")
            ->capture_default_str();
        cmd->add_option("--dec-layers", dec_layers, "decoder recurrent layers")
            ->capture_default_str();
        cmd->add_option("--embed-dim", embed_dim, "token embedding size per stream")
            ->capture_default_str();
        cmd->add_option("--pos-dim", pos_dim, "decoder step-index embedding size")
            ->capture_default_str();
        cmd->add_flag("--one-hot", one_hot, "one-hot token encoding instead of embeddings");
        cmd->add_flag("--autoregressive", autoregressive,
                      "teacher-forced autoregressive decoders");
        cmd->add_flag("--sum-reduction", sum_reduction,
                      "summed sequence losses instead of per-step means");
    }

    model::ModelConfig to_config(const corpus::Vocabulary& vocab, uint64_t init_seed) const {
        model::ModelConfig mc;
        mc.hidden = hidden;
        mc.style_dim = style_dim;
        mc.content_dim = content_dim;
        mc.encoder_layers = enc_layers;
        mc.decoder_layers = dec_layers;
        mc.embed_dim = embed_dim;
        mc.pos_dim = pos_dim;
        mc.one_hot_input = one_hot;
        mc.autoregressive = autoregressive;
        mc.sum_reduction = sum_reduction;
        mc.pitch_vocab = int(vocab.pitch_tokens.size());
        mc.interval_vocab = int(vocab.interval_tokens.size());
        mc.rhythm_vocab = int(vocab.rhythm_tokens.size());
        mc.n_regions = int(vocab.region_labels.size());
        mc.init_seed = init_seed;
        return mc;
    }
};

json settings_of(const CLI::App* cmd) {
    json j;
    for (const CLI::Option* opt : cmd->get_options()) {
        const std::string name = opt->get_name();
        if (name.rfind("--", 0) != 0 || name == "--help") continue;
        const auto results = opt->results();
        if (!results.empty())
            j[name.substr(2)] = results.size() == 1 ? json(results[0]) : json(results);
        else
            j[name.substr(2)] = opt->get_default_str();
    }
    return j;
}

int run(const std::vector<std::string>& args) {
    CLI::App app{"folkvae: disentangled recurrent VAE for regional folk melodies"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "print help for every subcommand");

    std::string kernels_choice = "auto";
    app.add_option("--kernels", kernels_choice, "kernel backend: auto|scalar|avx2")
        ->capture_default_str();
    std::string config_file;
    app.add_option("--config", config_file, "JSON file with default option values");

    // ---- ingest ----
    auto* c_ingest = app.add_subcommand("ingest", "parse a MIDI directory into a dataset");
    std::string in_midi_dir, in_out = "data.jsonl", in_vocab = "vocab.json";
    int in_grid = 16, in_threads = 0;
    bool in_keep_highest = false;
    c_ingest->add_option("--midi-dir", in_midi_dir, "directory; first level = region label")
        ->required();
    c_ingest->add_option("--out", in_out, "output dataset (jsonl)")->capture_default_str();
    c_ingest->add_option("--vocab", in_vocab, "output vocabulary (json)")
        ->capture_default_str();
    c_ingest->add_option("--grid", in_grid, "duration ticks per quarter note")
        ->capture_default_str();
    c_ingest->add_flag("--keep-highest", in_keep_highest,
                       "keep the highest pitch on polyphonic overlap instead of failing");
    c_ingest->add_option("--threads", in_threads, "parser threads (0 = hardware)")
        ->capture_default_str();

    // ---- synth ----
    auto* c_synth = app.add_subcommand("synth", "generate a labeled synthetic corpus");
    std::string sy_spec, sy_out = "data.jsonl", sy_vocab = "vocab.json";
    uint64_t sy_seed = 7;
    int sy_songs = 0, sy_len = 0;
    c_synth->add_option("--spec", sy_spec, "style spec file (json)")->required();
    c_synth->add_option("--seed", sy_seed, "corpus seed")->capture_default_str();
    c_synth->add_option("--out", sy_out, "output dataset (jsonl)")->capture_default_str();
    c_synth->add_option("--vocab", sy_vocab, "output vocabulary (json)")->capture_default_str();
    c_synth->add_option("--songs-per-style", sy_songs, "override the spec file's count");
    c_synth->add_option("--song-length", sy_len, "override the spec file's length");

    // ---- train ----
    auto* c_train = app.add_subcommand("train", "train the model");
    std::string tr_data, tr_vocab, tr_out = "ckpt", tr_ablation = "total", tr_resume;
    uint64_t tr_seed = 1;
    int tr_epochs = 30, tr_batch = 50, tr_threads = 0, tr_adv_steps = 1;
    double tr_vae_lr = 0.01, tr_cls_lr = 0.005, tr_beta_start = 0.0, tr_beta_end = 0.15;
    double tr_val_fraction = 0.1, tr_clip = 5.0;
    uint64_t tr_anneal_steps = 0;
    ModelFlags tr_model;
    c_train->add_option("--data", tr_data, "dataset (jsonl)")->required();
    c_train->add_option("--vocab", tr_vocab, "vocabulary (json)")->required();
    c_train->add_option("--out", tr_out, "output directory")->capture_default_str();
    c_train->add_option("--ablation", tr_ablation,
                        "objective: total|vae|vae+advpr|vae+advpr+advzc|vae+advpr+diszs")
        ->capture_default_str();
    c_train->add_option("--seed", tr_seed, "training seed")->capture_default_str();
    c_train->add_option("--epochs", tr_epochs, "training epochs")->capture_default_str();
    c_train->add_option("--batch", tr_batch, "mini-batch size")->capture_default_str();
    c_train->add_option("--vae-lr", tr_vae_lr, "adaptive-moment learning rate for the VAE")
        ->capture_default_str();
    c_train->add_option("--cls-lr", tr_cls_lr, "SGD learning rate for both classifiers")
        ->capture_default_str();
    c_train->add_option("--beta-start", tr_beta_start, "KL weight ramp start")
        ->capture_default_str();
    c_train->add_option("--beta-end", tr_beta_end, "KL weight ramp end")->capture_default_str();
    c_train->add_option("--val-fraction", tr_val_fraction, "held-out song fraction")
        ->capture_default_str();
    c_train->add_option("--grad-clip", tr_clip, "global gradient norm clip")
        ->capture_default_str();
    c_train->add_option("--adversary-steps", tr_adv_steps, "adversary updates per vae step")
        ->capture_default_str();
    c_train->add_option("--anneal-steps", tr_anneal_steps,
                        "KL ramp horizon in steps (0 = epochs x batches)")
        ->capture_default_str();
    c_train->add_option("--threads", tr_threads, "worker threads (0 = hardware)")
        ->capture_default_str();
    c_train->add_option("--resume", tr_resume, "checkpoint to continue from");
    tr_model.add_to(c_train);

    // ---- bank ----
    auto* c_bank = app.add_subcommand("bank", "build the per-region style bank");
    std::string bk_ckpt, bk_data, bk_out = "bank.json";
    c_bank->add_option("--ckpt", bk_ckpt, "trained checkpoint")->required();
    c_bank->add_option("--data", bk_data, "dataset (jsonl)")->required();
    c_bank->add_option("--out", bk_out, "output bank (json)")->capture_default_str();

    // ---- generate ----
    auto* c_gen = app.add_subcommand("generate", "generate melodies for a region label");
    std::string g_ckpt, g_bank, g_region, g_out = "generated";
    int g_n = 5;
    double g_temp = 1.0, g_jitter = 0.0;
    uint64_t g_seed = 7;
    c_gen->add_option("--ckpt", g_ckpt, "trained checkpoint")->required();
    c_gen->add_option("--bank", g_bank, "style bank (json)")->required();
    c_gen->add_option("--region", g_region, "region label to condition on")->required();
    c_gen->add_option("--n", g_n, "number of samples")->capture_default_str();
    c_gen->add_option("--temperature", g_temp, "softmax sampling temperature")
        ->capture_default_str();
    c_gen->add_option("--jitter", g_jitter, "gaussian jitter added to the style centroid")
        ->capture_default_str();
    c_gen->add_option("--seed", g_seed, "sampling seed")->capture_default_str();
    c_gen->add_option("--out", g_out, "output directory")->capture_default_str();

    // ---- eval ----
    auto* c_eval = app.add_subcommand("eval", "objective metrics on a dataset");
    std::string e_ckpt, e_data, e_recognizer, e_report = "report.json";
    int e_n = 500, e_rec_epochs = 8, e_threads = 0;
    uint64_t e_seed = 1;
    c_eval->add_option("--ckpt", e_ckpt, "trained checkpoint")->required();
    c_eval->add_option("--data", e_data, "dataset (jsonl)")->required();
    c_eval->add_option("--recognizer", e_recognizer,
                       "recognizer checkpoint; trained and saved here when missing")
        ->required();
    c_eval->add_option("--report", e_report, "output report (json)")->capture_default_str();
    c_eval->add_option("--n", e_n, "windows per recognition variant (0 = all)")
        ->capture_default_str();
    c_eval->add_option("--recognizer-epochs", e_rec_epochs, "recognizer training epochs")
        ->capture_default_str();
    c_eval->add_option("--seed", e_seed, "evaluation seed")->capture_default_str();
    c_eval->add_option("--threads", e_threads, "worker threads (0 = hardware)")
        ->capture_default_str();

    // ---- export-latents ----
    auto* c_export = app.add_subcommand("export-latents", "dump posterior means per window");
    std::string x_ckpt, x_data, x_out = "latents.csv";
    c_export->add_option("--ckpt", x_ckpt, "trained checkpoint")->required();
    c_export->add_option("--data", x_data, "dataset (jsonl)")->required();
    c_export->add_option("--out", x_out, "output table (csv)")->capture_default_str();

    // ---- plot ----
    auto* c_plot = app.add_subcommand("plot", "2-D latent projections as SVG scatter plots");
    std::string p_latents, p_out = "figs";
    double p_perplexity = 30.0;
    uint64_t p_seed = 1;
    int p_max_points = 1000;
    c_plot->add_option("--latents", p_latents, "latents table (csv)")->required();
    c_plot->add_option("--out", p_out, "output directory")->capture_default_str();
    c_plot->add_option("--perplexity", p_perplexity, "t-SNE perplexity")->capture_default_str();
    c_plot->add_option("--seed", p_seed, "t-SNE seed")->capture_default_str();
    c_plot->add_option("--max-points", p_max_points, "subsample cap per panel")
        ->capture_default_str();

    apply_config_file(app, args);

    // CLI11 wants argv in reverse order for its vector overload; build argv
    std::vector<const char*> argv;
    argv.push_back("folkvae");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error[usage]: " << e.what() << "\n";
        std::cerr << app.help() << "\n";
        return 2;
    }

    kernels::force_backend(kernels_choice);
    const auto seed_override = env_seed_override();
    if (seed_override) {
        sy_seed = tr_seed = g_seed = e_seed = p_seed = *seed_override;
    }

    if (c_ingest->parsed()) {
        auto result = corpus::ingest_directory(in_midi_dir, in_grid, in_keep_highest,
                                               in_threads);
        io::write_dataset(in_out, result.windows, result.vocab);
        io::write_vocab(in_vocab, result.vocab);
        write_runconfig(in_out, "ingest", settings_of(c_ingest), false);
        json summary;
        summary["songs"] = result.songs.size();
        summary["windows"] = result.windows.size();
        summary["warnings"] = result.warnings.size();
        summary["vocab"] = {{"pitch", result.vocab.pitch_tokens.size()},
                            {"interval", result.vocab.interval_tokens.size()},
                            {"rhythm", result.vocab.rhythm_tokens.size()},
                            {"regions", result.vocab.region_labels.size()}};
        std::cout << summary.dump() << "\n";
        return 0;
    }

    if (c_synth->parsed()) {
        io::SynthSpecFile spec = io::read_style_specs(sy_spec);
        if (sy_songs > 0) spec.songs_per_style = sy_songs;
        if (sy_len > 0) spec.song_length = sy_len;
        const auto songs = corpus::synthesize_corpus(spec.styles, spec.songs_per_style,
                                                     spec.song_length, sy_seed);
        const auto vocab = corpus::build_vocabulary(songs, spec.grid);
        std::vector<corpus::TernaryWindow> windows;
        for (const auto& song : songs) {
            auto ws = corpus::windows_for_song(song, vocab);
            windows.insert(windows.end(), ws.begin(), ws.end());
        }
        io::write_dataset(sy_out, windows, vocab);
        io::write_vocab(sy_vocab, vocab);
        write_runconfig(sy_out, "synth", settings_of(c_synth), false);
        json summary;
        summary["songs"] = songs.size();
        summary["windows"] = windows.size();
        std::cout << summary.dump() << "\n";
        return 0;
    }

    if (c_train->parsed()) {
        const auto vocab = io::read_vocab(tr_vocab);
        const auto windows = io::read_dataset(tr_data, vocab);

        train::TrainConfig tc;
        tc.epochs = tr_epochs;
        tc.batch_size = tr_batch;
        tc.vae_lr = tr_vae_lr;
        tc.classifier_lr = tr_cls_lr;
        tc.beta_start = tr_beta_start;
        tc.beta_end = tr_beta_end;
        tc.flags = losses::flags_from_name(tr_ablation);
        tc.seed = tr_seed;
        tc.val_fraction = tr_val_fraction;
        tc.grad_clip = tr_clip;
        tc.adversary_steps = tr_adv_steps;
        tc.threads = tr_threads;
        tc.anneal_steps = tr_anneal_steps;

        std::optional<model::LoadedCheckpoint> resumed;
        if (!tr_resume.empty()) {
            resumed = model::load_checkpoint(tr_resume);
            if (!resumed->trainer)
                throw config_error("--resume checkpoint has no trainer state");
        }
        model::MelodyVae m(resumed ? resumed->model.config()
                                   : tr_model.to_config(vocab, tr_seed));
        if (resumed)
            m.arena().values() = resumed->model.arena().values();
        else
            m.init_params();

        fs::create_directories(tr_out);
        write_runconfig(tr_out, "train", settings_of(c_train), true);
        train::Trainer trainer(m, tc);
        const auto result = trainer.train(windows, vocab, tr_out,
                                          resumed ? &*resumed->trainer : nullptr);
        json summary;
        summary["steps"] = result.steps;
        summary["best_val_accuracy"] = result.best_val_accuracy;
        summary["final_val_accuracy"] = result.final_val_accuracy;
        summary["last_checkpoint"] = result.last_checkpoint;
        summary["best_checkpoint"] = result.best_checkpoint;
        std::cout << summary.dump() << "\n";
        return 0;
    }

    if (c_bank->parsed()) {
        auto loaded = model::load_checkpoint(bk_ckpt);
        const auto windows = io::read_dataset(bk_data, loaded.vocab);
        const auto bank = gen::build_style_bank(loaded.model, windows, loaded.vocab);
        gen::save_style_bank(bk_out, bank);
        write_runconfig(bk_out, "bank", settings_of(c_bank), false);
        std::cout << json{{"regions", bank.regions.size()}}.dump() << "\n";
        return 0;
    }

    if (c_gen->parsed()) {
        auto loaded = model::load_checkpoint(g_ckpt);
        const auto bank = gen::load_style_bank(g_bank);
        gen::GenerateOptions opt;
        opt.region = g_region;
        opt.n_samples = g_n;
        opt.temperature = g_temp;
        opt.style_jitter = g_jitter;
        opt.seed = g_seed;
        const auto samples = gen::generate(loaded.model, bank, loaded.vocab, opt);
        fs::create_directories(g_out);
        for (size_t i = 0; i < samples.size(); ++i) {
            const std::string base = g_out + "/" + g_region + "_" + std::to_string(i);
            gen::render_midi(samples[i].window, loaded.vocab, base + ".mid");
            json side;
            side["region"] = g_region;
            side["seed"] = g_seed;
            side["temperature"] = g_temp;
            side["jitter"] = g_jitter;
            side["pitch_ids"] = samples[i].window.pitch_ids;
            side["interval_ids"] = samples[i].window.interval_ids;
            side["rhythm_ids"] = samples[i].window.rhythm_ids;
            side["z_s"] = samples[i].z_s;
            side["z_c"] = samples[i].z_c;
            std::ofstream sf(base + ".json", std::ios::trunc);
            if (!sf) throw io_error("cannot write " + base + ".json");
            sf << side.dump(2) << "\n";
        }
        write_runconfig(g_out, "generate", settings_of(c_gen), true);
        std::cout << json{{"samples", samples.size()}, {"dir", g_out}}.dump() << "\n";
        return 0;
    }

    if (c_eval->parsed()) {
        auto loaded = model::load_checkpoint(e_ckpt);
        const auto windows = io::read_dataset(e_data, loaded.vocab);
        std::optional<eval::StyleRecognizer> rec;
        if (fs::exists(e_recognizer)) {
            rec = eval::load_recognizer(e_recognizer);
        } else {
            eval::RecognizerConfig rc;
            rc.epochs = e_rec_epochs;
            rc.seed = e_seed;
            rc.threads = e_threads;
            rec = eval::train_style_recognizer(windows, loaded.vocab, rc);
            eval::save_recognizer(e_recognizer, *rec, loaded.vocab);
        }
        const auto report = eval::evaluate(loaded.model, *rec, loaded.vocab, windows, e_n,
                                           e_seed);
        std::ofstream rf(e_report, std::ios::trunc);
        if (!rf) throw io_error("cannot write " + e_report);
        rf << report.to_json() << "\n";
        write_runconfig(e_report, "eval", settings_of(c_eval), false);
        std::cout << report.to_json() << "\n";
        return 0;
    }

    if (c_export->parsed()) {
        auto loaded = model::load_checkpoint(x_ckpt);
        const auto windows = io::read_dataset(x_data, loaded.vocab);
        eval::export_latents(loaded.model, windows, loaded.vocab, x_out);
        write_runconfig(x_out, "export-latents", settings_of(c_export), false);
        std::cout << json{{"rows", windows.size()}, {"out", x_out}}.dump() << "\n";
        return 0;
    }

    if (c_plot->parsed()) {
        eval::plot_latents(p_latents, p_out, p_perplexity, p_seed, p_max_points);
        write_runconfig(p_out, "plot", settings_of(c_plot), true);
        std::cout << json{{"dir", p_out}}.dump() << "\n";
        return 0;
    }

    std::cerr << "error[usage]: no subcommand\n" << app.help() << "\n";
    return 2;
}

} // namespace

int dispatch(const std::vector<std::string>& args) {
    try {
        return run(args);
    } catch (const Error& e) {
        std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return 1;
    }
}

int dispatch(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return dispatch(args);
}

} // namespace folkvae::cli
