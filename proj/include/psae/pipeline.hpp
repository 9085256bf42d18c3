#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psae/error.hpp"
#include "psae/midi.hpp"
#include "psae/quantize.hpp"
#include "psae/random.hpp"

namespace psae {

/// Parsed MIDI -> pitch sequence: meter check, melody extraction, triplet
/// resolution (seeded from (seed, source_id)), grid detection, quantisation.
/// Tempo events are ignored.
inline PitchSequence preprocess_midi(const midi::MidiFile& file, std::uint64_t seed, const std::string& source_id,
                                     std::vector<std::string>* warnings = nullptr) {
  for (const auto& ts : file.time_signatures) {
    if (ts.numerator != 4 || ts.denominator != 4) {
      throw Error(ErrorCode::UnsupportedMeter, std::to_string(ts.numerator) + "/" + std::to_string(ts.denominator) +
                                                   " at tick " + std::to_string(ts.tick) + "; only 4/4 is supported");
    }
  }
  auto notes = midi::extract_monophonic_notes(file, warnings);
  Rng rng(derive_seed(seed, source_id));
  notes = resolve_triplets(std::move(notes), file.ticks_per_quarter, rng);
  const GridUnit grid = detect_grid_unit(notes, file.ticks_per_quarter);
  return quantize_to_pitch_sequence(notes, grid, file.ticks_per_quarter, source_id);
}

inline PitchSequence preprocess_file(const std::string& path, std::uint64_t seed, const std::string& source_id,
                                     std::vector<std::string>* warnings = nullptr) {
  return preprocess_midi(midi::load_smf(path), seed, source_id, warnings);
}

}  // namespace psae
