#pragma once

// Standard MIDI File (SMF) reading for single-melody clips.
//
// Only formats 0 and 1 with metrical (ticks-per-quarter) division are
// accepted. Channel messages are decoded with running status; meta events
// are decoded for tempo and time signature and otherwise skipped; SysEx is
// skipped. Note-on with velocity 0 closes a note exactly like note-off.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psae/error.hpp"

namespace psae::midi {

struct NoteEvent {
  std::uint64_t onset_tick = 0;
  std::uint64_t duration_tick = 1;
  int pitch = 0;
  int velocity = 64;

  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

struct TempoEvent {
  std::uint64_t tick = 0;
  std::uint32_t microseconds_per_quarter = 500000;

  friend bool operator==(const TempoEvent&, const TempoEvent&) = default;
};

struct TimeSignatureEvent {
  std::uint64_t tick = 0;
  int numerator = 4;
  int denominator = 4;

  friend bool operator==(const TimeSignatureEvent&, const TimeSignatureEvent&) = default;
};

struct Track {
  std::vector<NoteEvent> notes;  // ordered by onset, then pitch
  std::size_t event_count = 0;   // every decoded event, including meta/sysex
};

struct MidiFile {
  int format = 0;
  int ticks_per_quarter = 480;
  std::vector<Track> tracks;
  std::vector<TempoEvent> tempo_events;
  std::vector<TimeSignatureEvent> time_signatures;
};

namespace detail {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ >= bytes_.size(); }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint8_t peek(const char* what) {
    need(1, what);
    return bytes_[pos_];
  }
  std::uint32_t be(std::size_t width, const char* what) {
    need(width, what);
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v = (v << 8) | bytes_[pos_++];
    return v;
  }
  // Variable-length quantity: at most four bytes, 7 bits each.
  std::uint32_t vlq(const char* what) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint8_t b = u8(what);
      v = (v << 7) | (b & 0x7Fu);
      if ((b & 0x80u) == 0) return v;
    }
    throw Error(ErrorCode::TruncatedChunk, std::string("variable-length quantity longer than 4 bytes in ") + what);
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > remaining()) {
      throw Error(ErrorCode::TruncatedChunk, std::string("unexpected end of data in ") + what);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline bool tag_is(std::span<const std::uint8_t> tag, const char* name) {
  return std::equal(tag.begin(), tag.end(), name, name + 4);
}

inline Track parse_track(std::span<const std::uint8_t> body, MidiFile& file) {
  ByteReader in(body);
  Track track;
  std::uint64_t tick = 0;
  std::uint8_t running = 0;
  // Open note-ons keyed by (channel, pitch); FIFO so repeated note-ons close in order.
  std::map<std::pair<int, int>, std::deque<std::pair<std::uint64_t, int>>> open;

  auto close_note = [&](int channel, int pitch) {
    auto it = open.find({channel, pitch});
    if (it == open.end() || it->second.empty()) return;  // stray note-off
    auto [onset, velocity] = it->second.front();
    it->second.pop_front();
    if (tick > onset) {
      track.notes.push_back(NoteEvent{onset, tick - onset, pitch, velocity});
    }
  };

  while (!in.done()) {
    tick += in.vlq("delta time");
    std::uint8_t status = in.peek("event status");
    if (status & 0x80u) {
      in.u8("event status");
    } else {
      if (running == 0) throw Error(ErrorCode::TruncatedChunk, "data byte without running status");
      status = running;
    }
    ++track.event_count;

    if (status == 0xFF) {
      running = 0;
      std::uint8_t type = in.u8("meta type");
      std::uint32_t len = in.vlq("meta length");
      auto data = in.take(len, "meta data");
      if (type == 0x51 && len == 3) {
        std::uint32_t mpq = (std::uint32_t(data[0]) << 16) | (std::uint32_t(data[1]) << 8) | data[2];
        file.tempo_events.push_back(TempoEvent{tick, mpq});
      } else if (type == 0x58 && len >= 2) {
        file.time_signatures.push_back(TimeSignatureEvent{tick, data[0], 1 << std::min<int>(data[1], 16)});
      } else if (type == 0x2F) {
        break;
      }
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      running = 0;
      std::uint32_t len = in.vlq("sysex length");
      in.take(len, "sysex data");
      continue;
    }
    if (status >= 0xF0) {
      throw Error(ErrorCode::TruncatedChunk, "system message not allowed in a track");
    }

    running = status;
    const int kind = status & 0xF0;
    const int channel = status & 0x0F;
    const int data_len = (kind == 0xC0 || kind == 0xD0) ? 1 : 2;
    std::uint8_t d0 = in.u8("channel data");
    std::uint8_t d1 = data_len == 2 ? in.u8("channel data") : 0;
    if ((d0 | d1) & 0x80u) throw Error(ErrorCode::TruncatedChunk, "status byte inside channel message data");

    if (kind == 0x90 && d1 > 0) {
      open[{channel, d0}].emplace_back(tick, d1);
    } else if (kind == 0x80 || kind == 0x90) {
      close_note(channel, d0);
    }
  }

  for (const auto& [key, pending] : open) {
    if (!pending.empty()) {
      throw Error(ErrorCode::UnmatchedNoteOn,
                  "pitch " + std::to_string(key.second) + " on channel " + std::to_string(key.first) +
                      " starting at tick " + std::to_string(pending.front().first) + " never closed");
    }
  }
  std::sort(track.notes.begin(), track.notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return a.onset_tick != b.onset_tick ? a.onset_tick < b.onset_tick : a.pitch < b.pitch;
  });
  return track;
}

inline void put_be(std::vector<std::uint8_t>& out, std::uint32_t v, int width) {
  for (int i = width - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

inline void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::array<std::uint8_t, 5> buf{};
  int n = 0;
  buf[n++] = v & 0x7Fu;
  while (v >>= 7) buf[n++] = static_cast<std::uint8_t>(0x80u | (v & 0x7Fu));
  while (n > 0) out.push_back(buf[--n]);
}

}  // namespace detail

/// Parses an in-memory SMF. Never reads beyond a chunk's declared length.
inline MidiFile parse_smf(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  if (bytes.size() < 14 || !detail::tag_is(bytes.subspan(0, 4), "MThd")) {
    throw Error(ErrorCode::MalformedHeader, "missing MThd header chunk");
  }
  in.take(4, "header");
  std::uint32_t header_len = in.be(4, "header length");
  if (header_len < 6) throw Error(ErrorCode::MalformedHeader, "header length " + std::to_string(header_len) + " < 6");
  auto header = in.take(header_len, "header");
  const int format = (header[0] << 8) | header[1];
  const int ntracks = (header[2] << 8) | header[3];
  const int division = (header[4] << 8) | header[5];
  if (format == 2) throw Error(ErrorCode::UnsupportedFormat, "format 2 (independent sequences)");
  if (format != 0 && format != 1) throw Error(ErrorCode::MalformedHeader, "unknown format " + std::to_string(format));
  if (division & 0x8000) throw Error(ErrorCode::UnsupportedFormat, "SMPTE time division");
  if (division == 0) throw Error(ErrorCode::MalformedHeader, "ticks per quarter is zero");
  if (ntracks == 0) throw Error(ErrorCode::MalformedHeader, "header declares zero tracks");

  MidiFile file;
  file.format = format;
  file.ticks_per_quarter = division;

  while (!in.done() && static_cast<int>(file.tracks.size()) < ntracks) {
    auto tag = in.take(4, "chunk tag");
    std::uint32_t len = in.be(4, "chunk length");
    auto body = in.take(len, "chunk body");
    if (detail::tag_is(tag, "MTrk")) file.tracks.push_back(detail::parse_track(body, file));
  }
  if (static_cast<int>(file.tracks.size()) < ntracks) {
    throw Error(ErrorCode::TruncatedChunk, "expected " + std::to_string(ntracks) + " tracks, found " +
                                               std::to_string(file.tracks.size()));
  }
  const bool any_notes = std::any_of(file.tracks.begin(), file.tracks.end(), [](const Track& t) { return !t.notes.empty(); });
  if (!any_notes) throw Error(ErrorCode::NoNoteEvents, "no track contains note events");

  auto by_tick = [](const auto& a, const auto& b) { return a.tick < b.tick; };
  std::stable_sort(file.tempo_events.begin(), file.tempo_events.end(), by_tick);
  std::stable_sort(file.time_signatures.begin(), file.time_signatures.end(), by_tick);
  return file;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline MidiFile load_smf(const std::string& path) {
  auto bytes = read_file_bytes(path);
  return parse_smf(bytes);
}

/// Notes of the first track that has any, sorted by onset. Throws
/// PolyphonyDetected when two notes overlap; intervals are half-open, so a
/// note may start exactly where the previous one ends.
inline std::vector<NoteEvent> extract_monophonic_notes(const MidiFile& file,
                                                       std::vector<std::string>* warnings = nullptr) {
  const Track* chosen = nullptr;
  std::size_t ignored = 0;
  for (const auto& t : file.tracks) {
    if (t.notes.empty()) continue;
    if (chosen == nullptr) {
      chosen = &t;
    } else {
      ++ignored;
    }
  }
  if (chosen == nullptr) throw Error(ErrorCode::NoNoteEvents, "no track contains note events");
  if (ignored > 0 && warnings != nullptr) {
    warnings->push_back("ignored " + std::to_string(ignored) + " additional track(s) with notes");
  }

  std::vector<NoteEvent> notes = chosen->notes;
  std::stable_sort(notes.begin(), notes.end(),
                   [](const NoteEvent& a, const NoteEvent& b) { return a.onset_tick < b.onset_tick; });
  for (std::size_t i = 1; i < notes.size(); ++i) {
    const auto& prev = notes[i - 1];
    if (prev.onset_tick + prev.duration_tick > notes[i].onset_tick) {
      throw Error(ErrorCode::PolyphonyDetected,
                  "note at tick " + std::to_string(notes[i].onset_tick) + " overlaps note at tick " +
                      std::to_string(prev.onset_tick));
    }
  }
  return notes;
}

/// Serialises a MidiFile as SMF (notes on channel 0, tempo and time
/// signatures on the first track). Used to build fixtures and for round-trip
/// checks; the pipeline itself never writes MIDI.
inline std::vector<std::uint8_t> write_smf(const MidiFile& file) {
  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
  detail::put_be(out, 6, 4);
  detail::put_be(out, static_cast<std::uint32_t>(file.format), 2);
  detail::put_be(out, static_cast<std::uint32_t>(file.tracks.size()), 2);
  detail::put_be(out, static_cast<std::uint32_t>(file.ticks_per_quarter), 2);

  for (std::size_t ti = 0; ti < file.tracks.size(); ++ti) {
    struct Ev {
      std::uint64_t tick;
      int order;  // meta first, then note-offs, then note-ons
      std::vector<std::uint8_t> bytes;
    };
    std::vector<Ev> evs;
    if (ti == 0) {
      for (const auto& t : file.tempo_events) {
        auto m = t.microseconds_per_quarter;
        evs.push_back({t.tick, 0, {0xFF, 0x51, 0x03, std::uint8_t(m >> 16), std::uint8_t(m >> 8), std::uint8_t(m)}});
      }
      for (const auto& ts : file.time_signatures) {
        std::uint8_t pow2 = 0;
        while ((1 << pow2) < ts.denominator) ++pow2;
        evs.push_back({ts.tick, 0, {0xFF, 0x58, 0x04, std::uint8_t(ts.numerator), pow2, 24, 8}});
      }
    }
    for (const auto& n : file.tracks[ti].notes) {
      evs.push_back({n.onset_tick, 2, {0x90, std::uint8_t(n.pitch), std::uint8_t(n.velocity)}});
      evs.push_back({n.onset_tick + n.duration_tick, 1, {0x80, std::uint8_t(n.pitch), 0x40}});
    }
    std::stable_sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) {
      return a.tick != b.tick ? a.tick < b.tick : a.order < b.order;
    });

    std::vector<std::uint8_t> body;
    std::uint64_t last = 0;
    for (const auto& e : evs) {
      detail::put_vlq(body, static_cast<std::uint32_t>(e.tick - last));
      last = e.tick;
      body.insert(body.end(), e.bytes.begin(), e.bytes.end());
    }
    detail::put_vlq(body, 0);
    body.insert(body.end(), {0xFF, 0x2F, 0x00});

    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    detail::put_be(out, static_cast<std::uint32_t>(body.size()), 4);
    out.insert(out.end(), body.begin(), body.end());
  }
  return out;
}

/// Convenience: single-track format-0 file holding `notes`, 4/4, 120 BPM.
inline MidiFile make_single_track(std::vector<NoteEvent> notes, int ticks_per_quarter = 480,
                                  std::uint32_t microseconds_per_quarter = 500000) {
  MidiFile f;
  f.format = 0;
  f.ticks_per_quarter = ticks_per_quarter;
  f.tempo_events.push_back({0, microseconds_per_quarter});
  f.time_signatures.push_back({0, 4, 4});
  Track t;
  t.notes = std::move(notes);
  f.tracks.push_back(std::move(t));
  return f;
}

}  // namespace psae::midi
