#include <gtest/gtest.h>

#include <cstdint>
#include <random>
#include <vector>

#include "fixtures.hpp"
#include "psae/midi.hpp"

using namespace psae;
using psae::midi::NoteEvent;

namespace {

// Format 0, one track, 480 tpq; note-on 60/64 at 0, closed at tick 480.
std::vector<std::uint8_t> minimal_smf(bool close_with_velocity_zero) {
  std::vector<std::uint8_t> b{'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xE0};
  std::vector<std::uint8_t> track{0x00, 0x90, 60, 64};
  // delta 480 = 0x83 0x60
  if (close_with_velocity_zero) {
    track.insert(track.end(), {0x83, 0x60, 0x90, 60, 0});
  } else {
    track.insert(track.end(), {0x83, 0x60, 0x80, 60, 64});
  }
  track.insert(track.end(), {0x00, 0xFF, 0x2F, 0x00});
  b.insert(b.end(), {'M', 'T', 'r', 'k', 0, 0, 0, static_cast<std::uint8_t>(track.size())});
  b.insert(b.end(), track.begin(), track.end());
  return b;
}

ErrorCode code_of(const std::vector<std::uint8_t>& bytes) {
  try {
    midi::parse_smf(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a parse error";
  return ErrorCode::IoError;
}

}  // namespace

TEST(ParseSmf, MinimalSingleNote) {
  const auto f = midi::parse_smf(minimal_smf(false));
  EXPECT_EQ(f.format, 0);
  EXPECT_EQ(f.ticks_per_quarter, 480);
  ASSERT_EQ(f.tracks.size(), 1u);
  ASSERT_EQ(f.tracks[0].notes.size(), 1u);
  EXPECT_EQ(f.tracks[0].notes[0], (NoteEvent{0, 480, 60, 64}));
}

TEST(ParseSmf, VelocityZeroClosesNote) {
  const auto a = midi::parse_smf(minimal_smf(false));
  const auto b = midi::parse_smf(minimal_smf(true));
  EXPECT_EQ(a.tracks[0].notes, b.tracks[0].notes);
}

TEST(ParseSmf, RunningStatusAndLongDeltas) {
  std::vector<std::uint8_t> b{'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1, 0x00, 0x60};
  // Note-on, then running-status note-on vel 0 after delta 0x81 0x80 0x00 (16384 ticks).
  std::vector<std::uint8_t> track{0x00, 0x90, 62, 100, 0x81, 0x80, 0x00, 62, 0x00, 0x05, 64, 90, 0x10, 64, 0x00,
                                  0x00, 0xFF, 0x2F, 0x00};
  b.insert(b.end(), {'M', 'T', 'r', 'k', 0, 0, 0, static_cast<std::uint8_t>(track.size())});
  b.insert(b.end(), track.begin(), track.end());
  const auto f = midi::parse_smf(b);
  ASSERT_EQ(f.tracks[0].notes.size(), 2u);
  EXPECT_EQ(f.tracks[0].notes[0], (NoteEvent{0, 16384, 62, 100}));
  EXPECT_EQ(f.tracks[0].notes[1], (NoteEvent{16389, 16, 64, 90}));
}

TEST(ParseSmf, TempoAndMeterEvents) {
  auto file = midi::make_single_track(fixtures::legato({60, 62}, 480), 480, 600000);
  file.time_signatures = {{0, 3, 4}};
  const auto parsed = midi::parse_smf(midi::write_smf(file));
  ASSERT_EQ(parsed.tempo_events.size(), 1u);
  EXPECT_EQ(parsed.tempo_events[0].microseconds_per_quarter, 600000u);
  ASSERT_EQ(parsed.time_signatures.size(), 1u);
  EXPECT_EQ(parsed.time_signatures[0].numerator, 3);
  EXPECT_EQ(parsed.time_signatures[0].denominator, 4);
}

TEST(ParseSmf, Errors) {
  auto bad_magic = minimal_smf(false);
  bad_magic[0] = 'X';
  EXPECT_EQ(code_of(bad_magic), ErrorCode::MalformedHeader);

  auto short_header = minimal_smf(false);
  short_header[7] = 4;
  EXPECT_EQ(code_of(short_header), ErrorCode::MalformedHeader);

  auto format2 = minimal_smf(false);
  format2[9] = 2;
  EXPECT_EQ(code_of(format2), ErrorCode::UnsupportedFormat);

  auto truncated = minimal_smf(false);
  truncated.resize(truncated.size() - 3);
  EXPECT_EQ(code_of(truncated), ErrorCode::TruncatedChunk);

  // Drop the closing event: note-on never closed.
  std::vector<std::uint8_t> b{'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xE0};
  std::vector<std::uint8_t> track{0x00, 0x90, 60, 64, 0x00, 0xFF, 0x2F, 0x00};
  b.insert(b.end(), {'M', 'T', 'r', 'k', 0, 0, 0, static_cast<std::uint8_t>(track.size())});
  b.insert(b.end(), track.begin(), track.end());
  EXPECT_EQ(code_of(b), ErrorCode::UnmatchedNoteOn);
}

TEST(ParseSmf, FormatOneTakesFirstTrackWithNotes) {
  midi::MidiFile f;
  f.format = 1;
  f.ticks_per_quarter = 96;
  f.tempo_events = {{0, 500000}};
  f.tracks.push_back({});  // conductor track
  f.tracks.push_back(midi::Track{fixtures::legato({60, 62, 64}, 96), 0});
  f.tracks.push_back(midi::Track{fixtures::legato({40, 41}, 96), 0});
  const auto parsed = midi::parse_smf(midi::write_smf(f));
  ASSERT_EQ(parsed.tracks.size(), 3u);
  std::vector<std::string> warnings;
  const auto notes = midi::extract_monophonic_notes(parsed, &warnings);
  ASSERT_EQ(notes.size(), 3u);
  EXPECT_EQ(notes[0].pitch, 60);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(ExtractMonophonic, SequentialNotesInOrder) {
  const auto f = midi::make_single_track({{480, 480, 62, 70}, {0, 480, 60, 70}});
  const auto notes = midi::extract_monophonic_notes(f);
  ASSERT_EQ(notes.size(), 2u);
  EXPECT_EQ(notes[0].onset_tick, 0u);
  EXPECT_EQ(notes[1].onset_tick, 480u);
}

TEST(ExtractMonophonic, SimultaneousStartIsPolyphony) {
  const auto f = midi::make_single_track({{0, 480, 60, 70}, {0, 480, 64, 70}});
  try {
    midi::extract_monophonic_notes(f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PolyphonyDetected);
  }
}

TEST(ExtractMonophonic, TouchingNotesAreMonophonic) {
  const auto f = midi::make_single_track({{0, 480, 60, 70}, {480, 240, 64, 70}});
  EXPECT_NO_THROW(midi::extract_monophonic_notes(f));
}

TEST(ExtractMonophonic, PartialOverlapIsPolyphony) {
  const auto f = midi::make_single_track({{0, 481, 60, 70}, {480, 240, 64, 70}});
  EXPECT_THROW(midi::extract_monophonic_notes(f), Error);
}

// Property: write -> parse preserves notes; extracted notes never overlap.
TEST(ParseSmf, RoundTripPreservesNotes) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> tpq_pick(0, 3);
    const int tpq = std::array{96, 120, 480, 960}[tpq_pick(rng)];
    std::uniform_int_distribution<int> len(1, 40), pitch(0, 127), gap(0, 2), vel(1, 127);
    std::uniform_int_distribution<int> dur_units(1, 8);
    std::vector<NoteEvent> notes;
    std::uint64_t t = 0;
    // Vary gaps to exercise multi-byte deltas.
    for (int i = 0, n = len(rng); i < n; ++i) {
      t += static_cast<std::uint64_t>(gap(rng)) * tpq * 7;
      const std::uint64_t d = static_cast<std::uint64_t>(dur_units(rng)) * tpq / 4;
      notes.push_back({t, d, pitch(rng), vel(rng)});
      t += d;
    }
    const auto f = midi::make_single_track(notes, tpq);
    const auto parsed = midi::parse_smf(midi::write_smf(f));
    const auto got = midi::extract_monophonic_notes(parsed);
    ASSERT_EQ(got, notes) << "trial " << trial;
    for (std::size_t i = 1; i < got.size(); ++i) {
      EXPECT_LE(got[i - 1].onset_tick + got[i - 1].duration_tick, got[i].onset_tick);
    }
  }
}

// Mutated and truncated inputs must fail with a library error (or parse),
// never crash or read out of bounds.
TEST(ParseSmf, FuzzedInputsFailCleanly) {
  Rng rng(5);
  const auto base = midi::write_smf(midi::make_single_track(fixtures::legato({60, 62, 64, 65, 67}, 240)));
  for (std::size_t cut = 0; cut < base.size(); ++cut) {
    std::vector<std::uint8_t> prefix(base.begin(), base.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(midi::parse_smf(prefix), Error) << "prefix " << cut;
  }
  std::uniform_int_distribution<std::size_t> where(0, base.size() - 1);
  std::uniform_int_distribution<int> byte(0, 255), count(1, 6);
  for (int trial = 0; trial < 5000; ++trial) {
    auto m = base;
    for (int k = 0, n = count(rng); k < n; ++k) m[where(rng)] = static_cast<std::uint8_t>(byte(rng));
    try {
      midi::parse_smf(m);
    } catch (const Error&) {
    }
  }
}
