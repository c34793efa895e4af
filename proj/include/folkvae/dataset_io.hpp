#pragma once

#include "folkvae/corpus.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace folkvae::io {

// Shared by the vocab file writer and the checkpoint container.
nlohmann::json vocab_to_json(const corpus::Vocabulary& vocab);
corpus::Vocabulary vocab_from_json(const nlohmann::json& j, const std::string& where);

// Vocabulary file: one JSON object; sentinels are written as the strings
// "REST" / "NONE" / "PAD", every other token as a number.
void write_vocab(const std::string& path, const corpus::Vocabulary& vocab);
corpus::Vocabulary read_vocab(const std::string& path);

// Dataset file: one JSON object per line with fields song_id, region,
// pitch_ids, interval_ids, rhythm_ids (region as its label string).
void write_dataset(const std::string& path,
                   const std::vector<corpus::TernaryWindow>& windows,
                   const corpus::Vocabulary& vocab);
std::vector<corpus::TernaryWindow> read_dataset(const std::string& path,
                                                const corpus::Vocabulary& vocab);

struct SynthSpecFile {
    std::vector<corpus::SyntheticStyleSpec> styles;
    int songs_per_style = 100;
    int song_length = 64;
    int grid = 16;
};

SynthSpecFile read_style_specs(const std::string& path);
void write_style_specs(const std::string& path, const SynthSpecFile& specs);

} // namespace folkvae::io
