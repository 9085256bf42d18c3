#pragma once

// Grid quantisation of monophonic note lists into pitch sequences.
//
// A sequence holds one token per grid step: the MIDI pitch sounding at that
// step, or REST. Sustained notes repeat their pitch at every step they cover.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "psae/error.hpp"
#include "psae/midi.hpp"
#include "psae/random.hpp"

namespace psae {

using TokenId = std::uint8_t;

inline constexpr TokenId kRest = 128;
inline constexpr TokenId kMask = 129;
inline constexpr TokenId kPad = 130;
inline constexpr int kNumPitches = 128;
inline constexpr std::size_t kMaxSeqLen = 384;

inline constexpr bool is_pitch(TokenId t) { return t < kNumPitches; }

enum class GridUnit { Sixteenth, ThirtySecond };

inline constexpr int steps_per_quarter(GridUnit g) { return g == GridUnit::Sixteenth ? 4 : 8; }

inline const char* grid_name(GridUnit g) { return g == GridUnit::Sixteenth ? "16" : "32"; }

inline GridUnit parse_grid_name(const std::string& s) {
  if (s == "16") return GridUnit::Sixteenth;
  if (s == "32") return GridUnit::ThirtySecond;
  throw Error(ErrorCode::BadCorpusFile, "unknown grid unit '" + s + "'");
}

struct PitchSequence {
  std::vector<TokenId> tokens;
  GridUnit grid = GridUnit::Sixteenth;
  std::string source_id;

  friend bool operator==(const PitchSequence&, const PitchSequence&) = default;
};

/// Lowest and highest pitch present, or nullopt for an all-REST sequence.
inline std::optional<std::pair<int, int>> pitch_range(const std::vector<TokenId>& tokens) {
  int lo = kNumPitches, hi = -1;
  for (TokenId t : tokens) {
    if (!is_pitch(t)) continue;
    lo = std::min<int>(lo, t);
    hi = std::max<int>(hi, t);
  }
  if (hi < 0) return std::nullopt;
  return std::pair{lo, hi};
}

/// Onset/duration matching tolerance: 1/16 of a grid step.
inline double snap_tolerance(GridUnit g, int ticks_per_quarter) {
  return ticks_per_quarter / static_cast<double>(steps_per_quarter(g)) / 16.0;
}

inline GridUnit detect_grid_unit(const std::vector<midi::NoteEvent>& notes, int ticks_per_quarter) {
  if (notes.empty()) throw Error(ErrorCode::EmptySequence, "no notes to quantise");
  const double sixteenth = ticks_per_quarter / 4.0;
  const double thirty_second = ticks_per_quarter / 8.0;
  GridUnit grid = GridUnit::Sixteenth;
  for (const auto& n : notes) {
    const double d = static_cast<double>(n.duration_tick);
    if (d < thirty_second - snap_tolerance(GridUnit::ThirtySecond, ticks_per_quarter)) {
      throw Error(ErrorCode::NoteTooShort, "note at tick " + std::to_string(n.onset_tick) + " lasts " +
                                               std::to_string(n.duration_tick) + " ticks, below a 32nd note");
    }
    if (d < sixteenth - snap_tolerance(GridUnit::Sixteenth, ticks_per_quarter)) grid = GridUnit::ThirtySecond;
  }
  return grid;
}

/// Rewrites every group of three contiguous triplet notes (each a third of a
/// beat, or a third of a half-beat) as three straight eighths or three
/// straight sixteenths, chosen with equal probability. Later notes shift by
/// the change in the group's span.
inline std::vector<midi::NoteEvent> resolve_triplets(std::vector<midi::NoteEvent> notes, int ticks_per_quarter,
                                                     Rng& rng) {
  const double tol = ticks_per_quarter / 128.0;
  const double units[] = {ticks_per_quarter / 3.0, ticks_per_quarter / 6.0};
  auto near = [tol](double a, double b) { return std::abs(a - b) <= tol; };
  auto is_group = [&](std::size_t i, double u) {
    for (std::size_t k = i; k < i + 3; ++k) {
      if (!near(static_cast<double>(notes[k].duration_tick), u)) return false;
      if (k > i) {
        const double gap = static_cast<double>(notes[k].onset_tick) -
                           static_cast<double>(notes[k - 1].onset_tick + notes[k - 1].duration_tick);
        if (!near(gap, 0.0)) return false;
      }
    }
    return true;
  };

  std::bernoulli_distribution coin(0.5);
  std::size_t i = 0;
  while (i + 3 <= notes.size()) {
    const bool triplet = is_group(i, units[0]) || is_group(i, units[1]);
    if (!triplet) {
      ++i;
      continue;
    }
    const std::int64_t straight = coin(rng) ? ticks_per_quarter / 2 : ticks_per_quarter / 4;
    const std::int64_t start = static_cast<std::int64_t>(notes[i].onset_tick);
    const std::int64_t old_end = static_cast<std::int64_t>(notes[i + 2].onset_tick + notes[i + 2].duration_tick);
    for (std::size_t k = 0; k < 3; ++k) {
      notes[i + k].onset_tick = static_cast<std::uint64_t>(start + static_cast<std::int64_t>(k) * straight);
      notes[i + k].duration_tick = static_cast<std::uint64_t>(straight);
    }
    const std::int64_t delta = start + 3 * straight - old_end;
    for (std::size_t k = i + 3; k < notes.size(); ++k) {
      notes[k].onset_tick = static_cast<std::uint64_t>(static_cast<std::int64_t>(notes[k].onset_tick) + delta);
    }
    i += 3;
  }
  return notes;
}

/// Samples notes onto the grid. The sequence starts at tick 0 and ends with
/// the last note; onsets and ends snap to the nearest grid line and every
/// note keeps at least one step.
inline PitchSequence quantize_to_pitch_sequence(const std::vector<midi::NoteEvent>& notes, GridUnit grid,
                                                int ticks_per_quarter, std::string source_id = {}) {
  if (notes.empty()) throw Error(ErrorCode::EmptySequence, "no notes to quantise");
  const double step = ticks_per_quarter / static_cast<double>(steps_per_quarter(grid));

  struct Span {
    std::int64_t begin, end;
    int pitch;
  };
  std::vector<Span> spans;
  spans.reserve(notes.size());
  std::int64_t length = 0;
  for (const auto& n : notes) {
    if (n.pitch < 0 || n.pitch >= kNumPitches) throw Error(ErrorCode::UnknownToken, "pitch out of range");
    std::int64_t b = std::llround(static_cast<double>(n.onset_tick) / step);
    std::int64_t e = std::llround(static_cast<double>(n.onset_tick + n.duration_tick) / step);
    if (e <= b) e = b + 1;
    spans.push_back({b, e, n.pitch});
    length = std::max(length, e);
  }
  if (length > static_cast<std::int64_t>(kMaxSeqLen)) {
    throw Error(ErrorCode::SequenceTooLong,
                std::to_string(length) + " steps exceeds the limit of " + std::to_string(kMaxSeqLen));
  }

  PitchSequence seq;
  seq.grid = grid;
  seq.source_id = std::move(source_id);
  seq.tokens.assign(static_cast<std::size_t>(length), kRest);
  for (const auto& s : spans) {
    std::fill(seq.tokens.begin() + s.begin, seq.tokens.begin() + s.end, static_cast<TokenId>(s.pitch));
  }
  return seq;
}

}  // namespace psae
