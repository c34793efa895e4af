#include "folkvae/midi.hpp"
#include "folkvae/error.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace folkvae::midi {
namespace {

struct Cursor {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw parse_error("malformed MIDI: " + what + " at byte " + std::to_string(pos));
    }

    uint8_t u8() {
        if (pos >= buf.size()) fail("unexpected end of file");
        return buf[pos++];
    }

    uint32_t u16() { uint32_t a = u8(); return (a << 8) | u8(); }
    uint32_t u32() { uint32_t a = u16(); return (a << 16) | u16(); }

    uint32_t varlen() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            uint8_t b = u8();
            v = (v << 7) | (b & 0x7f);
            if (!(b & 0x80)) return v;
        }
        fail("variable-length quantity longer than 4 bytes");
    }

    void skip(size_t n) {
        if (pos + n > buf.size()) fail("chunk runs past end of file");
        pos += n;
    }

    void expect_tag(const char* tag) {
        if (pos + 4 > buf.size()) fail("missing chunk header");
        if (std::memcmp(buf.data() + pos, tag, 4) != 0)
            fail(std::string("expected '") + tag + "' chunk");
        pos += 4;
    }
};

struct TrackResult {
    std::vector<RawNote> notes;
    int64_t end_tick = 0;
    std::optional<int> key_sf;
    bool key_minor = false;
};

TrackResult read_track(Cursor& c) {
    c.expect_tag("MTrk");
    const uint32_t len = c.u32();
    const size_t track_end = c.pos + len;
    if (track_end > c.buf.size()) c.fail("track length exceeds file size");

    TrackResult out;
    // open notes per pitch; monophonic sources should hold at most one
    std::vector<std::pair<int, int64_t>> open;
    int64_t tick = 0;
    uint8_t running = 0;

    while (c.pos < track_end) {
        tick += c.varlen();
        uint8_t status = c.buf[c.pos];
        if (status & 0x80) { c.pos++; } else {
            if (!(running & 0x80)) c.fail("data byte without running status");
            status = running;
        }

        if (status == 0xff) {                       // meta
            uint8_t type = c.u8();
            uint32_t mlen = c.varlen();
            size_t body = c.pos;
            if (type == 0x59 && mlen >= 2) {        // key signature
                out.key_sf = int(int8_t(c.buf[body]));
                out.key_minor = c.buf[body + 1] == 1;
            }
            c.skip(mlen);
            if (type == 0x2f) { out.end_tick = tick; break; }
            running = 0;
        } else if (status == 0xf0 || status == 0xf7) {
            c.skip(c.varlen());
            running = 0;
        } else {
            running = status;
            const uint8_t kind = status & 0xf0;
            const int n_data = (kind == 0xc0 || kind == 0xd0) ? 1 : 2;
            uint8_t d0 = c.u8();
            uint8_t d1 = n_data == 2 ? c.u8() : 0;
            if (kind == 0x90 && d1 > 0) {
                open.emplace_back(d0, tick);
            } else if (kind == 0x80 || (kind == 0x90 && d1 == 0)) {
                auto it = std::find_if(open.begin(), open.end(),
                                       [&](const auto& p) { return p.first == d0; });
                if (it != open.end()) {
                    out.notes.push_back({it->second, tick, d0});
                    open.erase(it);
                }
            }
        }
    }
    // close any dangling notes at end of track
    for (auto& [pitch, on] : open)
        out.notes.push_back({on, std::max(out.end_tick, on + 1), pitch});
    if (out.end_tick == 0 && !out.notes.empty()) {
        for (const auto& n : out.notes) out.end_tick = std::max(out.end_tick, n.off_tick);
    }
    std::stable_sort(out.notes.begin(), out.notes.end(),
                     [](const RawNote& a, const RawNote& b) { return a.on_tick < b.on_tick; });
    c.pos = track_end;
    return out;
}

} // namespace

SmfData read_smf(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open MIDI file: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
    Cursor c{buf};

    c.expect_tag("MThd");
    if (c.u32() != 6) c.fail("MThd length is not 6");
    const uint32_t format = c.u16();
    const uint32_t ntrks = c.u16();
    const uint32_t division = c.u16();
    if (format > 1) c.fail("unsupported SMF format " + std::to_string(format));
    if (division & 0x8000) c.fail("SMPTE time division not supported");
    if (division == 0) c.fail("zero time division");

    SmfData out;
    out.division = int(division);
    TrackResult best;
    for (uint32_t t = 0; t < ntrks; ++t) {
        TrackResult tr = read_track(c);
        if (tr.key_sf && !out.key_sf) {
            out.key_sf = tr.key_sf;
            out.key_minor = tr.key_minor;
        }
        if (t == 0 || tr.notes.size() > best.notes.size()) best = std::move(tr);
    }
    out.notes = std::move(best.notes);
    out.end_tick = best.end_tick;
    return out;
}

namespace {

void put_varlen(std::vector<uint8_t>& out, uint32_t v) {
    uint8_t stack[5];
    int n = 0;
    do {
        stack[n++] = v & 0x7f;
        v >>= 7;
    } while (v);
    while (n > 1) out.push_back(stack[--n] | 0x80);
    out.push_back(stack[0]);
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(v >> 24); out.push_back(v >> 16); out.push_back(v >> 8); out.push_back(v);
}

} // namespace

std::vector<uint8_t> render_monophonic_smf(const std::vector<std::pair<int, int>>& events,
                                           int grid) {
    if (grid <= 0 || grid > 0x7fff) throw config_error("grid out of range for MIDI division");
    std::vector<uint8_t> track;
    // tempo 120 bpm so players get a sane speed; parsing ignores it
    put_varlen(track, 0);
    const uint8_t tempo[] = {0xff, 0x51, 0x03, 0x07, 0xa1, 0x20};
    track.insert(track.end(), std::begin(tempo), std::end(tempo));

    uint32_t pending = 0;
    for (const auto& [pitch, dur] : events) {
        if (dur <= 0) throw data_error("non-positive duration in MIDI render");
        if (pitch < 0) {
            pending += uint32_t(dur);
            continue;
        }
        if (pitch > 127) throw data_error("pitch out of MIDI range");
        put_varlen(track, pending);
        track.push_back(0x90); track.push_back(uint8_t(pitch)); track.push_back(80);
        put_varlen(track, uint32_t(dur));
        track.push_back(0x80); track.push_back(uint8_t(pitch)); track.push_back(0);
        pending = 0;
    }
    put_varlen(track, pending);  // trailing rests live in the end-of-track delta
    track.push_back(0xff); track.push_back(0x2f); track.push_back(0x00);

    std::vector<uint8_t> out;
    out.insert(out.end(), {'M', 'T', 'h', 'd'});
    put_u32(out, 6);
    out.push_back(0); out.push_back(0);                 // format 0
    out.push_back(0); out.push_back(1);                 // one track
    out.push_back(uint8_t(grid >> 8)); out.push_back(uint8_t(grid & 0xff));
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    put_u32(out, uint32_t(track.size()));
    out.insert(out.end(), track.begin(), track.end());
    return out;
}

void write_monophonic_smf(const std::string& path,
                          const std::vector<std::pair<int, int>>& events,
                          int grid) {
    auto bytes = render_monophonic_smf(events, grid);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write MIDI file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw io_error("short write to " + path);
}

} // namespace folkvae::midi
