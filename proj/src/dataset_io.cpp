#include "folkvae/dataset_io.hpp"
#include "folkvae/error.hpp"

#include "json.hpp"

#include <fstream>

namespace folkvae::io {

using nlohmann::json;
using corpus::kIntervalNone;
using corpus::kIntervalPad;
using corpus::kRestPitch;

namespace {

json token_to_json(int token, bool interval_stream) {
    if (interval_stream) {
        if (token == kIntervalNone) return "NONE";
        if (token == kIntervalPad) return "PAD";
    } else if (token == kRestPitch) {
        return "REST";
    }
    return token;
}

int token_from_json(const json& j, bool interval_stream, const std::string& where) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (interval_stream && s == "NONE") return kIntervalNone;
        if (interval_stream && s == "PAD") return kIntervalPad;
        if (!interval_stream && s == "REST") return kRestPitch;
        throw parse_error(where + ": unknown token '" + s + "'");
    }
    if (!j.is_number_integer()) throw parse_error(where + ": token is not an integer");
    return j.get<int>();
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw parse_error(path + ": " + e.what());
    }
    return j;
}

} // namespace

json vocab_to_json(const corpus::Vocabulary& vocab) {
    json j;
    j["grid"] = vocab.grid;
    j["pitch"] = json::array();
    for (int t : vocab.pitch_tokens) j["pitch"].push_back(token_to_json(t, false));
    j["interval"] = json::array();
    for (int t : vocab.interval_tokens) j["interval"].push_back(token_to_json(t, true));
    j["rhythm"] = vocab.rhythm_tokens;
    j["regions"] = vocab.region_labels;
    return j;
}

corpus::Vocabulary vocab_from_json(const json& j, const std::string& where) {
    corpus::Vocabulary v;
    try {
        v.grid = j.at("grid").get<int>();
        for (const auto& t : j.at("pitch")) v.pitch_tokens.push_back(token_from_json(t, false, where));
        for (const auto& t : j.at("interval")) v.interval_tokens.push_back(token_from_json(t, true, where));
        v.rhythm_tokens = j.at("rhythm").get<std::vector<int>>();
        v.region_labels = j.at("regions").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw parse_error(where + ": " + e.what());
    }
    if (v.pitch_tokens.empty() || v.interval_tokens.size() < 2 || v.rhythm_tokens.empty())
        throw parse_error(where + ": vocabulary is missing mandatory tokens");
    return v;
}

void write_vocab(const std::string& path, const corpus::Vocabulary& vocab) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    out << vocab_to_json(vocab).dump(2) << "\n";
}

corpus::Vocabulary read_vocab(const std::string& path) {
    return vocab_from_json(load_json_file(path), path);
}

void write_dataset(const std::string& path,
                   const std::vector<corpus::TernaryWindow>& windows,
                   const corpus::Vocabulary& vocab) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    for (const auto& w : windows) {
        json j;
        j["song_id"] = w.source_song;
        j["region"] = vocab.region_labels.at(size_t(w.region));
        j["pitch_ids"] = w.pitch_ids;
        j["interval_ids"] = w.interval_ids;
        j["rhythm_ids"] = w.rhythm_ids;
        out << j.dump() << "\n";
    }
    if (!out) throw io_error("short write to " + path);
}

std::vector<corpus::TernaryWindow> read_dataset(const std::string& path,
                                                const corpus::Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    std::vector<corpus::TernaryWindow> out;
    std::string line;
    size_t lineno = 0;
    auto check_ids = [&](const std::array<int, corpus::kWindowLen>& ids, size_t limit,
                         const char* stream) {
        for (int id : ids)
            if (id < 0 || size_t(id) >= limit)
                throw parse_error(path + ":" + std::to_string(lineno) + ": " + stream +
                                  " id " + std::to_string(id) + " out of range");
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw parse_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        corpus::TernaryWindow w;
        try {
            w.source_song = j.at("song_id").get<std::string>();
            w.region = vocab.region_id(j.at("region").get<std::string>());
            const auto p = j.at("pitch_ids").get<std::vector<int>>();
            const auto i = j.at("interval_ids").get<std::vector<int>>();
            const auto r = j.at("rhythm_ids").get<std::vector<int>>();
            if (p.size() != corpus::kWindowLen || i.size() != corpus::kWindowLen ||
                r.size() != corpus::kWindowLen)
                throw parse_error(path + ":" + std::to_string(lineno) +
                                  ": id arrays must have length 32");
            std::copy(p.begin(), p.end(), w.pitch_ids.begin());
            std::copy(i.begin(), i.end(), w.interval_ids.begin());
            std::copy(r.begin(), r.end(), w.rhythm_ids.begin());
        } catch (const json::exception& e) {
            throw parse_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        check_ids(w.pitch_ids, vocab.pitch_tokens.size(), "pitch");
        check_ids(w.interval_ids, vocab.interval_tokens.size(), "interval");
        check_ids(w.rhythm_ids, vocab.rhythm_tokens.size(), "rhythm");
        out.push_back(std::move(w));
    }
    return out;
}

namespace {

std::vector<std::pair<int, double>> dist_from_json(const json& j, const std::string& where) {
    std::vector<std::pair<int, double>> out;
    if (!j.is_object()) throw parse_error(where + ": distribution must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        try {
            out.emplace_back(std::stoi(it.key()), it.value().get<double>());
        } catch (const std::exception&) {
            throw parse_error(where + ": bad distribution entry '" + it.key() + "'");
        }
    }
    // json objects iterate in key-string order; resort numerically for
    // deterministic sampling order
    std::sort(out.begin(), out.end());
    return out;
}

json dist_to_json(const std::vector<std::pair<int, double>>& d) {
    json j = json::object();
    for (const auto& [v, p] : d) j[std::to_string(v)] = p;
    return j;
}

} // namespace

SynthSpecFile read_style_specs(const std::string& path) {
    const json j = load_json_file(path);
    SynthSpecFile out;
    try {
        out.songs_per_style = j.value("songs_per_style", out.songs_per_style);
        out.song_length = j.value("song_length", out.song_length);
        out.grid = j.value("grid", out.grid);
        for (const auto& s : j.at("styles")) {
            corpus::SyntheticStyleSpec spec;
            spec.name = s.at("name").get<std::string>();
            spec.pitch_set = s.at("pitch_set").get<std::vector<int>>();
            spec.duration_distribution = dist_from_json(s.at("durations"), path);
            spec.interval_bias = dist_from_json(s.at("intervals"), path);
            spec.validate();
            out.styles.push_back(std::move(spec));
        }
    } catch (const json::exception& e) {
        throw parse_error(path + ": " + e.what());
    }
    if (out.styles.empty()) throw parse_error(path + ": no styles defined");
    return out;
}

void write_style_specs(const std::string& path, const SynthSpecFile& specs) {
    json j;
    j["songs_per_style"] = specs.songs_per_style;
    j["song_length"] = specs.song_length;
    j["grid"] = specs.grid;
    j["styles"] = json::array();
    for (const auto& s : specs.styles) {
        json sj;
        sj["name"] = s.name;
        sj["pitch_set"] = s.pitch_set;
        sj["durations"] = dist_to_json(s.duration_distribution);
        sj["intervals"] = dist_to_json(s.interval_bias);
        j["styles"].push_back(sj);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

} // namespace folkvae::io
