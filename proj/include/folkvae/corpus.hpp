#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace folkvae::corpus {

// Pitch stream sentinel. Interval sentinels sit outside the reachable
// semitone range [-127, 127]: NONE marks a neighbor rest, PAD the final
// alignment slot.
constexpr int kRestPitch = -1;
constexpr int kIntervalNone = 1000;
constexpr int kIntervalPad = 1001;
constexpr int kWindowLen = 32;

// One melodic event. duration counts grid ticks (grid = ticks per quarter
// note, so the duration in quarters is duration/grid) and is always > 0.
struct NoteEvent {
    int pitch = kRestPitch;
    int duration = 0;

    bool is_rest() const { return pitch == kRestPitch; }
    bool operator==(const NoteEvent&) const = default;
};

// Bijective token<->id maps for the three streams plus the region labels.
// Construction sorts everything, so rebuilding from the same corpus (in any
// order) yields identical ids. Sentinels always occupy the leading ids.
struct Vocabulary {
    int grid = 16;
    std::vector<int> pitch_tokens;           // id -> pitch value, REST first
    std::vector<int> interval_tokens;        // NONE, PAD, then sorted deltas
    std::vector<int> rhythm_tokens;          // sorted durations (grid ticks)
    std::vector<std::string> region_labels;  // sorted names

    int pitch_id(int token) const;
    int interval_id(int token) const;
    int rhythm_id(int token) const;
    int region_id(const std::string& name) const;

    // nearest existing interval token by absolute distance (ties -> lower);
    // sentinels map to themselves
    int nearest_interval_id(int delta) const;

    bool operator==(const Vocabulary&) const = default;
};

// One training sample: aligned 32-step id triple plus provenance.
struct TernaryWindow {
    std::array<int, kWindowLen> pitch_ids{};
    std::array<int, kWindowLen> interval_ids{};
    std::array<int, kWindowLen> rhythm_ids{};
    int region = 0;
    std::string source_song;

    bool operator==(const TernaryWindow&) const = default;
};

struct SyntheticStyleSpec {
    std::string name;
    std::vector<int> pitch_set;                            // MIDI pitches
    std::vector<std::pair<int, double>> duration_distribution;  // ticks -> prob
    std::vector<std::pair<int, double>> interval_bias;          // delta -> prob

    void validate() const;  // throws folkvae::Error("config") when infeasible
};

struct Song {
    std::string id;
    std::string region;
    std::vector<NoteEvent> events;
};

// Token values (not ids) of one song's three aligned streams.
struct TokenStreams {
    std::vector<int> pitch;
    std::vector<int> interval;
    std::vector<int> rhythm;
};

// --- MIDI ingestion -------------------------------------------------------

// Parses one standard MIDI file into quantized monophonic events. grid is
// the number of duration ticks per quarter note. Gaps between notes (and
// leading/trailing silence) become REST events. Overlapping notes raise
// folkvae::Error("data") listing the colliding onsets unless
// keep_highest_on_overlap is set, in which case the lower-pitched note of
// each collision is dropped.
std::vector<NoteEvent> parse_midi(const std::string& file, int grid,
                                  bool keep_highest_on_overlap = false,
                                  std::optional<int>* key_signature_tonic = nullptr);

// Duration-weighted pitch-class profile correlation against the
// Krumhansl-Kessler major/minor templates; returns the best tonic pitch
// class. Empty or all-rest input returns 0 (C).
int detect_tonic(const std::vector<NoteEvent>& events);

// Shifts every pitch so detected_tonic maps to C, picking the shift in
// [-6, +5] semitones. Pitches pushed outside [0,127] are octave-folded back
// in and reported through `warnings` when given.
std::vector<NoteEvent> transpose_to_c(const std::vector<NoteEvent>& events,
                                      int detected_tonic,
                                      std::vector<std::string>* warnings = nullptr);

// --- Tokenization ---------------------------------------------------------

// Interval stream aligned with the pitch stream: position k holds
// p[k+1]-p[k]; NONE when either neighbor is a rest; PAD at the final slot.
std::vector<int> derive_intervals(const std::vector<int>& pitches);

TokenStreams tokenize(const std::vector<NoteEvent>& events);

Vocabulary build_vocabulary(const std::vector<Song>& songs, int grid);

// Sliding windows over one song's id streams. All three streams must share
// length; yields max(0, floor((n - length)/hop) + 1) windows. length must be
// kWindowLen because TernaryWindow is fixed-size.
std::vector<TernaryWindow> make_windows(const std::vector<int>& pitch_ids,
                                        const std::vector<int>& interval_ids,
                                        const std::vector<int>& rhythm_ids,
                                        int region, const std::string& song_id,
                                        int length = kWindowLen, int hop = 1);

// Convenience: tokenize + id-map + window one song against a vocabulary.
std::vector<TernaryWindow> windows_for_song(const Song& song, const Vocabulary& vocab);

// Builds a TernaryWindow from decoded pitch and rhythm id streams; the
// interval stream is re-derived from the pitch token values (not decoded
// independently), mapping each delta to the nearest interval token in the
// vocabulary.
TernaryWindow window_from_decoded(const std::vector<int>& pitch_ids,
                                  const std::vector<int>& rhythm_ids,
                                  const Vocabulary& vocab, int region,
                                  const std::string& source_song);

// --- Synthetic corpora ----------------------------------------------------

// Deterministic labeled corpus: song s of style k is drawn from stream
// Rng::mix(seed, k, s), so output is reproducible and independent of
// threading. Songs are rest-free.
std::vector<Song> synthesize_corpus(const std::vector<SyntheticStyleSpec>& specs,
                                    int songs_per_style, int song_length,
                                    uint64_t seed);

// --- Directory ingestion ---------------------------------------------------

struct IngestResult {
    Vocabulary vocab;
    std::vector<TernaryWindow> windows;
    std::vector<Song> songs;           // transposed, quantized
    std::vector<std::string> warnings;
};

// Walks midi_dir; the first-level directory name is the region label. Files
// are parsed in parallel, then reduced in path order.
IngestResult ingest_directory(const std::string& midi_dir, int grid,
                              bool keep_highest_on_overlap, int threads = 0);

} // namespace folkvae::corpus
