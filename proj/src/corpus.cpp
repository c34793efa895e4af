#include "folkvae/corpus.hpp"
#include "folkvae/error.hpp"
#include "folkvae/midi.hpp"
#include "folkvae/parallel.hpp"
#include "folkvae/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

namespace folkvae::corpus {

namespace {

int index_of(const std::vector<int>& tokens, int token, const char* stream) {
    for (size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] == token) return int(i);
    throw data_error(std::string(stream) + " token " + std::to_string(token) +
                     " not in vocabulary");
}

} // namespace

int Vocabulary::pitch_id(int token) const { return index_of(pitch_tokens, token, "pitch"); }
int Vocabulary::interval_id(int token) const { return index_of(interval_tokens, token, "interval"); }
int Vocabulary::rhythm_id(int token) const { return index_of(rhythm_tokens, token, "rhythm"); }

int Vocabulary::region_id(const std::string& name) const {
    for (size_t i = 0; i < region_labels.size(); ++i)
        if (region_labels[i] == name) return int(i);
    throw data_error("region '" + name + "' not in vocabulary");
}

int Vocabulary::nearest_interval_id(int delta) const {
    if (delta == kIntervalNone || delta == kIntervalPad) return interval_id(delta);
    int best = -1;
    long best_dist = -1;
    for (size_t i = 0; i < interval_tokens.size(); ++i) {
        const int tok = interval_tokens[i];
        if (tok == kIntervalNone || tok == kIntervalPad) continue;
        const long dist = std::labs(long(tok) - long(delta));
        if (best < 0 || dist < best_dist ||
            (dist == best_dist && tok < interval_tokens[best])) {
            best = int(i);
            best_dist = dist;
        }
    }
    if (best < 0) throw data_error("vocabulary has no numeric interval tokens");
    return best;
}

void SyntheticStyleSpec::validate() const {
    if (name.empty()) throw config_error("style spec without a name");
    if (pitch_set.empty()) throw config_error("style '" + name + "': empty pitch set");
    for (int p : pitch_set)
        if (p < 0 || p > 127)
            throw config_error("style '" + name + "': pitch " + std::to_string(p) +
                               " outside [0,127]");
    auto check_dist = [&](const std::vector<std::pair<int, double>>& d, const char* what) {
        if (d.empty()) throw config_error("style '" + name + "': empty " + what);
        double sum = 0.0;
        for (auto& [v, p] : d) {
            if (p < 0) throw config_error("style '" + name + "': negative probability");
            sum += p;
            if (what == std::string("duration distribution") && v <= 0)
                throw config_error("style '" + name + "': non-positive duration");
        }
        if (std::fabs(sum - 1.0) > 1e-9)
            throw config_error("style '" + name + "': " + what + " sums to " +
                               std::to_string(sum) + ", expected 1");
    };
    check_dist(duration_distribution, "duration distribution");
    check_dist(interval_bias, "interval bias");
}

// --- MIDI ingestion --------------------------------------------------------

std::vector<NoteEvent> parse_midi(const std::string& file, int grid,
                                  bool keep_highest_on_overlap,
                                  std::optional<int>* key_signature_tonic) {
    if (grid <= 0) throw config_error("quantization grid must be positive");
    midi::SmfData smf = midi::read_smf(file);

    if (key_signature_tonic) {
        *key_signature_tonic = std::nullopt;
        if (smf.key_sf) {
            const int sf = *smf.key_sf;
            const int major_tonic = ((sf * 7) % 12 + 12) % 12;
            *key_signature_tonic = smf.key_minor ? (major_tonic + 9) % 12 : major_tonic;
        }
    }

    // resolve polyphony before quantization
    std::vector<midi::RawNote> notes;
    notes.reserve(smf.notes.size());
    std::vector<std::pair<int64_t, int64_t>> collisions;
    for (const auto& n : smf.notes) {
        if (!notes.empty() && n.on_tick < notes.back().off_tick) {
            if (!keep_highest_on_overlap) {
                collisions.emplace_back(notes.back().on_tick, n.on_tick);
                continue;
            }
            if (n.pitch > notes.back().pitch) {
                notes.back().off_tick = std::max(notes.back().on_tick, n.on_tick);
                if (notes.back().off_tick == notes.back().on_tick) notes.pop_back();
                notes.push_back(n);
            }
            // lower-pitched newcomer is dropped
            continue;
        }
        notes.push_back(n);
    }
    if (!collisions.empty()) {
        std::ostringstream msg;
        msg << "polyphonic overlap in " << file << " at onset ticks";
        size_t shown = 0;
        for (auto& [a, b] : collisions) {
            msg << " (" << a << "," << b << ")";
            if (++shown == 8 && collisions.size() > 8) {
                msg << " and " << collisions.size() - 8 << " more";
                break;
            }
        }
        throw data_error(msg.str());
    }

    auto quantize = [&](int64_t tick) {
        return int64_t(std::llround(double(tick) * grid / smf.division));
    };

    std::vector<NoteEvent> events;
    int64_t cursor = 0;
    for (const auto& n : notes) {
        int64_t on = std::max(quantize(n.on_tick), cursor);
        int64_t off = std::max(quantize(n.off_tick), on + 1);
        if (on > cursor) events.push_back({kRestPitch, int(on - cursor)});
        events.push_back({n.pitch, int(off - on)});
        cursor = off;
    }
    const int64_t end = quantize(smf.end_tick);
    if (end > cursor) events.push_back({kRestPitch, int(end - cursor)});
    return events;
}

int detect_tonic(const std::vector<NoteEvent>& events) {
    static const double major[12] = {6.35, 2.23, 3.48, 2.33, 4.38, 4.09,
                                     2.52, 5.19, 2.39, 3.66, 2.29, 2.88};
    static const double minor[12] = {6.33, 2.68, 3.52, 5.38, 2.60, 3.53,
                                     2.54, 4.75, 3.98, 2.69, 3.34, 3.17};
    double hist[12] = {};
    double total = 0.0;
    for (const auto& e : events) {
        if (e.is_rest()) continue;
        hist[e.pitch % 12] += e.duration;
        total += e.duration;
    }
    if (total <= 0.0) return 0;

    auto pearson = [](const double* x, const double* y, int rot) {
        double mx = 0, my = 0;
        for (int i = 0; i < 12; ++i) { mx += x[i]; my += y[i]; }
        mx /= 12; my /= 12;
        double sxy = 0, sxx = 0, syy = 0;
        for (int i = 0; i < 12; ++i) {
            const double dx = x[i] - mx;
            const double dy = y[(i - rot + 24) % 12] - my;
            sxy += dx * dy; sxx += dx * dx; syy += dy * dy;
        }
        if (sxx <= 0 || syy <= 0) return 0.0;
        return sxy / std::sqrt(sxx * syy);
    };

    int best_tonic = 0;
    double best_r = -2.0;
    for (int tonic = 0; tonic < 12; ++tonic) {
        for (const double* prof : {major, minor}) {
            const double r = pearson(hist, prof, tonic);
            if (r > best_r + 1e-12) {
                best_r = r;
                best_tonic = tonic;
            }
        }
    }
    return best_tonic;
}

std::vector<NoteEvent> transpose_to_c(const std::vector<NoteEvent>& events,
                                      int detected_tonic,
                                      std::vector<std::string>* warnings) {
    if (detected_tonic < 0 || detected_tonic > 11)
        throw config_error("tonic pitch class out of range: " + std::to_string(detected_tonic));
    int shift = (12 - detected_tonic) % 12;
    if (shift > 5) shift -= 12;  // choose the representative in [-6, +5]

    std::vector<NoteEvent> out;
    out.reserve(events.size());
    for (const auto& e : events) {
        if (e.is_rest()) {
            out.push_back(e);
            continue;
        }
        int p = e.pitch + shift;
        const int before = p;
        while (p > 127) p -= 12;
        while (p < 0) p += 12;
        if (p != before && warnings)
            warnings->push_back("octave-folded pitch " + std::to_string(e.pitch) +
                                " -> " + std::to_string(p) + " during transposition");
        out.push_back({p, e.duration});
    }
    return out;
}

// --- Tokenization ----------------------------------------------------------

std::vector<int> derive_intervals(const std::vector<int>& pitches) {
    if (pitches.empty()) throw data_error("derive_intervals on empty stream");
    const size_t n = pitches.size();
    std::vector<int> out(n);
    for (size_t k = 0; k + 1 < n; ++k) {
        if (pitches[k] == kRestPitch || pitches[k + 1] == kRestPitch)
            out[k] = kIntervalNone;
        else
            out[k] = pitches[k + 1] - pitches[k];
    }
    out[n - 1] = kIntervalPad;
    return out;
}

TokenStreams tokenize(const std::vector<NoteEvent>& events) {
    TokenStreams s;
    s.pitch.reserve(events.size());
    s.rhythm.reserve(events.size());
    for (const auto& e : events) {
        if (e.duration <= 0) throw data_error("non-positive duration in event stream");
        s.pitch.push_back(e.pitch);
        s.rhythm.push_back(e.duration);
    }
    if (!events.empty()) s.interval = derive_intervals(s.pitch);
    return s;
}

Vocabulary build_vocabulary(const std::vector<Song>& songs, int grid) {
    if (songs.empty()) throw data_error("cannot build vocabulary from an empty corpus");
    std::set<int> pitches, intervals, rhythms;
    std::set<std::string> regions;
    for (const auto& song : songs) {
        regions.insert(song.region);
        const TokenStreams s = tokenize(song.events);
        pitches.insert(s.pitch.begin(), s.pitch.end());
        intervals.insert(s.interval.begin(), s.interval.end());
        rhythms.insert(s.rhythm.begin(), s.rhythm.end());
    }
    pitches.erase(kRestPitch);
    intervals.erase(kIntervalNone);
    intervals.erase(kIntervalPad);

    Vocabulary v;
    v.grid = grid;
    v.pitch_tokens.push_back(kRestPitch);
    v.pitch_tokens.insert(v.pitch_tokens.end(), pitches.begin(), pitches.end());
    v.interval_tokens.push_back(kIntervalNone);
    v.interval_tokens.push_back(kIntervalPad);
    v.interval_tokens.insert(v.interval_tokens.end(), intervals.begin(), intervals.end());
    v.rhythm_tokens.assign(rhythms.begin(), rhythms.end());
    v.region_labels.assign(regions.begin(), regions.end());
    return v;
}

std::vector<TernaryWindow> make_windows(const std::vector<int>& pitch_ids,
                                        const std::vector<int>& interval_ids,
                                        const std::vector<int>& rhythm_ids,
                                        int region, const std::string& song_id,
                                        int length, int hop) {
    if (length != kWindowLen)
        throw config_error("window length is fixed at " + std::to_string(kWindowLen));
    if (hop < 1) throw config_error("hop must be >= 1");
    const size_t n = pitch_ids.size();
    if (interval_ids.size() != n || rhythm_ids.size() != n)
        throw data_error("token streams of '" + song_id + "' have unequal lengths");

    std::vector<TernaryWindow> out;
    if (n < size_t(length)) return out;
    for (size_t start = 0; start + length <= n; start += hop) {
        TernaryWindow w;
        for (int k = 0; k < length; ++k) {
            w.pitch_ids[k] = pitch_ids[start + k];
            w.interval_ids[k] = interval_ids[start + k];
            w.rhythm_ids[k] = rhythm_ids[start + k];
        }
        w.region = region;
        w.source_song = song_id;
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<TernaryWindow> windows_for_song(const Song& song, const Vocabulary& vocab) {
    const TokenStreams s = tokenize(song.events);
    std::vector<int> p(s.pitch.size()), i(s.interval.size()), r(s.rhythm.size());
    for (size_t k = 0; k < s.pitch.size(); ++k) {
        p[k] = vocab.pitch_id(s.pitch[k]);
        i[k] = vocab.interval_id(s.interval[k]);
        r[k] = vocab.rhythm_id(s.rhythm[k]);
    }
    return make_windows(p, i, r, vocab.region_id(song.region), song.id);
}

TernaryWindow window_from_decoded(const std::vector<int>& pitch_ids,
                                  const std::vector<int>& rhythm_ids,
                                  const Vocabulary& vocab, int region,
                                  const std::string& source_song) {
    if (pitch_ids.size() != kWindowLen || rhythm_ids.size() != kWindowLen)
        throw data_error("window_from_decoded: streams must have length 32");
    std::vector<int> pitch_values(kWindowLen);
    for (size_t k = 0; k < kWindowLen; ++k) {
        const int id = pitch_ids[k];
        if (id < 0 || size_t(id) >= vocab.pitch_tokens.size())
            throw data_error("window_from_decoded: pitch id out of range");
        pitch_values[k] = vocab.pitch_tokens[size_t(id)];
    }
    const std::vector<int> deltas = derive_intervals(pitch_values);

    TernaryWindow w;
    for (size_t k = 0; k < kWindowLen; ++k) {
        const int rid = rhythm_ids[k];
        if (rid < 0 || size_t(rid) >= vocab.rhythm_tokens.size())
            throw data_error("window_from_decoded: rhythm id out of range");
        w.pitch_ids[k] = pitch_ids[k];
        w.rhythm_ids[k] = rid;
        w.interval_ids[k] = vocab.nearest_interval_id(deltas[k]);
    }
    w.region = region;
    w.source_song = source_song;
    return w;
}

// --- Synthetic corpora -----------------------------------------------------

namespace {

int sample_from(const std::vector<std::pair<int, double>>& dist, Rng& rng) {
    double u = rng.uniform();
    for (const auto& [value, prob] : dist) {
        if (u < prob) return value;
        u -= prob;
    }
    return dist.back().first;
}

int nearest_in_set(const std::vector<int>& sorted_set, int target) {
    int best = sorted_set.front();
    for (int p : sorted_set) {
        const int d = std::abs(p - target), bd = std::abs(best - target);
        if (d < bd || (d == bd && p < best)) best = p;
    }
    return best;
}

} // namespace

std::vector<Song> synthesize_corpus(const std::vector<SyntheticStyleSpec>& specs,
                                    int songs_per_style, int song_length,
                                    uint64_t seed) {
    if (specs.empty()) throw config_error("no style specs given");
    if (songs_per_style <= 0 || song_length <= 0)
        throw config_error("counts must be positive");
    for (const auto& s : specs) s.validate();

    std::vector<Song> songs;
    songs.reserve(size_t(specs.size()) * songs_per_style);
    for (size_t k = 0; k < specs.size(); ++k) {
        const auto& spec = specs[k];
        std::vector<int> sorted_pitches = spec.pitch_set;
        std::sort(sorted_pitches.begin(), sorted_pitches.end());
        for (int s = 0; s < songs_per_style; ++s) {
            Rng rng(Rng::mix(seed, k, uint64_t(s)));
            Song song;
            song.region = spec.name;
            song.id = spec.name + "/" + std::to_string(s);
            song.events.reserve(song_length);
            int pitch = sorted_pitches[rng.uniform_int(sorted_pitches.size())];
            for (int t = 0; t < song_length; ++t) {
                if (t > 0) {
                    const int delta = sample_from(spec.interval_bias, rng);
                    pitch = nearest_in_set(sorted_pitches, pitch + delta);
                }
                song.events.push_back({pitch, sample_from(spec.duration_distribution, rng)});
            }
            songs.push_back(std::move(song));
        }
    }
    return songs;
}

// --- Directory ingestion ----------------------------------------------------

IngestResult ingest_directory(const std::string& midi_dir, int grid,
                              bool keep_highest_on_overlap, int threads) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(midi_dir)) throw io_error("not a directory: " + midi_dir);

    struct FileEntry { std::string path, region, id; };
    std::vector<FileEntry> files;
    for (const auto& entry : fs::recursive_directory_iterator(midi_dir)) {
        if (!entry.is_regular_file()) continue;
        const auto ext = entry.path().extension().string();
        if (ext != ".mid" && ext != ".midi" && ext != ".MID") continue;
        const fs::path rel = fs::relative(entry.path(), midi_dir);
        if (rel.begin() == rel.end() || ++rel.begin() == rel.end())
            throw data_error("MIDI file not inside a region folder: " + rel.string());
        files.push_back({entry.path().string(), rel.begin()->string(), rel.string()});
    }
    std::sort(files.begin(), files.end(),
              [](const FileEntry& a, const FileEntry& b) { return a.id < b.id; });
    if (files.empty()) throw data_error("no MIDI files under " + midi_dir);

    std::vector<Song> songs(files.size());
    std::vector<std::vector<std::string>> warn(files.size());
    std::mutex err_mutex;
    std::vector<std::string> errors;

    parallel_chunks(int(files.size()), threads, [&](int begin, int end, int) {
        for (int i = begin; i < end; ++i) {
            try {
                std::optional<int> key_tonic;
                auto events = parse_midi(files[i].path, grid, keep_highest_on_overlap,
                                         &key_tonic);
                const int tonic = key_tonic ? *key_tonic : detect_tonic(events);
                songs[i].id = files[i].id;
                songs[i].region = files[i].region;
                songs[i].events = transpose_to_c(events, tonic, &warn[i]);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mutex);
                errors.push_back(e.what());
            }
        }
    });
    if (!errors.empty()) {
        std::sort(errors.begin(), errors.end());
        throw data_error(errors.front() +
                         (errors.size() > 1
                              ? " (and " + std::to_string(errors.size() - 1) + " more)"
                              : ""));
    }

    IngestResult out;
    out.vocab = build_vocabulary(songs, grid);
    for (size_t i = 0; i < songs.size(); ++i) {
        auto ws = windows_for_song(songs[i], out.vocab);
        out.windows.insert(out.windows.end(), ws.begin(), ws.end());
        out.warnings.insert(out.warnings.end(), warn[i].begin(), warn[i].end());
    }
    out.songs = std::move(songs);
    return out;
}

} // namespace folkvae::corpus
