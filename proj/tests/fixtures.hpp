#pragma once

// Synthetic melodies and MIDI files shared by the test suites.

#include <algorithm>
#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "psae/midi.hpp"
#include "psae/quantize.hpp"
#include "psae/random.hpp"

namespace psae::fixtures {

/// Back-to-back notes of equal length starting at tick 0.
inline std::vector<midi::NoteEvent> legato(const std::vector<int>& pitches, std::uint64_t duration,
                                           std::uint64_t start = 0) {
  std::vector<midi::NoteEvent> notes;
  std::uint64_t t = start;
  for (int p : pitches) {
    notes.push_back({t, duration, p, 80});
    t += duration;
  }
  return notes;
}

/// Eight bars of 4/4 in quarter or eighth notes at the given tpq.
inline std::vector<midi::NoteEvent> eight_bar_melody(Rng& rng, int tpq, bool eighths = false) {
  const std::uint64_t dur = eighths ? tpq / 2 : tpq;
  const int count = eighths ? 64 : 32;
  std::uniform_int_distribution<int> step(-3, 3);
  std::vector<int> pitches;
  int p = 64;
  for (int i = 0; i < count; ++i) {
    p = std::clamp(p + step(rng), 48, 84);
    pitches.push_back(p);
  }
  return legato(pitches, dur);
}

/// Second-order Markov melody over a two-octave C major range. Each state
/// (previous two pitches) has a small, fixed set of likely successors; the
/// table is derived from `table_seed`, the walk from `rng`.
class MarkovComposer {
 public:
  explicit MarkovComposer(std::uint64_t table_seed) {
    Rng table_rng(table_seed);
    std::uniform_int_distribution<int> pick(0, kScale.size() - 1);
    for (auto& row : successors_) {
      for (auto& s : row) s = pick(table_rng);
    }
  }

  std::vector<TokenId> compose(Rng& rng, std::size_t length) const {
    std::uniform_int_distribution<int> start(0, kScale.size() - 1);
    std::discrete_distribution<int> choice({0.7, 0.2, 0.1});
    int a = start(rng), b = start(rng);
    std::vector<TokenId> out{static_cast<TokenId>(kScale[a]), static_cast<TokenId>(kScale[b])};
    while (out.size() < length) {
      const int next = successors_[a * kScale.size() + b][choice(rng)];
      out.push_back(static_cast<TokenId>(kScale[next]));
      a = b;
      b = next;
    }
    return out;
  }

  static constexpr std::array<int, 15> kScale{60, 62, 64, 65, 67, 69, 71, 72, 74, 76, 77, 79, 81, 83, 84};

 private:
  std::array<std::array<int, 3>, kScale.size() * kScale.size()> successors_{};
};

inline std::vector<TokenId> uniform_random_tokens(Rng& rng, std::size_t length) {
  std::uniform_int_distribution<int> pitch(0, kNumPitches - 1);
  std::vector<TokenId> out(length);
  for (auto& t : out) t = static_cast<TokenId>(pitch(rng));
  return out;
}

inline PitchSequence as_sequence(std::vector<TokenId> tokens, std::string id = "seq") {
  PitchSequence s;
  s.tokens = std::move(tokens);
  s.source_id = std::move(id);
  return s;
}

/// Random pitch/REST sequence: pitches confined to [lo, hi], rests with probability `rest_p`.
inline PitchSequence random_pitch_sequence(Rng& rng, std::size_t length, int lo, int hi, double rest_p = 0.1,
                                           const std::string& id = "rand") {
  std::uniform_int_distribution<int> pitch(lo, hi);
  std::bernoulli_distribution rest(rest_p);
  PitchSequence s;
  s.source_id = id;
  for (std::size_t i = 0; i < length; ++i) s.tokens.push_back(rest(rng) ? kRest : static_cast<TokenId>(pitch(rng)));
  if (!pitch_range(s.tokens)) s.tokens[0] = static_cast<TokenId>(lo);
  return s;
}

/// Notes from a token sequence: each run of one pitch becomes a note of
/// run_length steps, RESTs become silence. Inverse of quantisation for
/// sequences without repeated same-pitch notes.
inline std::vector<midi::NoteEvent> notes_from_tokens(const std::vector<TokenId>& tokens, int tpq, int steps_per_q) {
  const std::uint64_t step = static_cast<std::uint64_t>(tpq / steps_per_q);
  std::vector<midi::NoteEvent> notes;
  for (std::size_t i = 0; i < tokens.size();) {
    std::size_t j = i;
    while (j < tokens.size() && tokens[j] == tokens[i]) ++j;
    if (is_pitch(tokens[i])) notes.push_back({i * step, (j - i) * step, tokens[i], 90});
    i = j;
  }
  return notes;
}

}  // namespace psae::fixtures
