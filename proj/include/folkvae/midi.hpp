#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace folkvae::midi {

// One note of the selected melody track, in raw file ticks.
struct RawNote {
    int64_t on_tick = 0;
    int64_t off_tick = 0;
    int pitch = 0;
};

struct SmfData {
    int division = 0;                 // ticks per quarter note
    std::vector<RawNote> notes;       // selected melody track, onset order
    int64_t end_tick = 0;             // end-of-track tick of that track
    std::optional<int> key_sf;        // key signature: sharps(+)/flats(-)
    bool key_minor = false;
};

// Reads a standard MIDI file (format 0 or 1) and returns the note list of
// the track with the most note events. Malformed input throws
// folkvae::Error("parse", ...) naming the byte offset.
SmfData read_smf(const std::string& path);

// Monophonic writer: events are (pitch, duration-ticks) with pitch < 0
// meaning a rest. division of the emitted file equals `grid` so one duration
// tick is one MIDI tick. Trailing rests are preserved in the end-of-track
// delta. Output bytes are a pure function of the inputs.
void write_monophonic_smf(const std::string& path,
                          const std::vector<std::pair<int, int>>& events,
                          int grid);

std::vector<uint8_t> render_monophonic_smf(const std::vector<std::pair<int, int>>& events,
                                           int grid);

} // namespace folkvae::midi
