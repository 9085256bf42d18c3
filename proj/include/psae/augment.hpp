#pragma once

// Corpus expansion by transposition and head truncation.

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "psae/error.hpp"
#include "psae/quantize.hpp"
#include "psae/random.hpp"

namespace psae {

struct AugmentPolicy {
  int transpositions_per_seq = 31;
  int truncated_per_seq = 16;
  int truncation_min = 1;
  int truncation_max = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (transpositions_per_seq < 1) throw Error(ErrorCode::InvalidPolicy, "transpositions_per_seq must be >= 1");
    if (truncated_per_seq < 0 || truncated_per_seq > transpositions_per_seq) {
      throw Error(ErrorCode::InvalidPolicy, "truncated_per_seq must lie in [0, transpositions_per_seq]");
    }
    if (truncation_min < 1 || truncation_min > truncation_max) {
      throw Error(ErrorCode::InvalidPolicy, "need 1 <= truncation_min <= truncation_max");
    }
  }
};

/// Every shift that keeps all pitches inside [0, 127], ascending.
/// Size is 128 - (highest - lowest).
inline std::vector<int> legal_shifts(const PitchSequence& seq) {
  auto range = pitch_range(seq.tokens);
  if (!range) throw Error(ErrorCode::NoPitchTokens, "sequence '" + seq.source_id + "' has no pitch tokens");
  std::vector<int> shifts(static_cast<std::size_t>(kNumPitches - (range->second - range->first)));
  std::iota(shifts.begin(), shifts.end(), -range->first);
  return shifts;
}

/// The closed-form count 128 - highest + lowest + 1. It includes one
/// placement more than `legal_shifts` can realise; reported for diagnostics.
inline int formula_shift_count(const PitchSequence& seq) {
  auto range = pitch_range(seq.tokens);
  if (!range) throw Error(ErrorCode::NoPitchTokens, "sequence '" + seq.source_id + "' has no pitch tokens");
  return kNumPitches - range->second + range->first + 1;
}

inline PitchSequence transpose(const PitchSequence& seq, int shift) {
  PitchSequence out = seq;
  for (TokenId& t : out.tokens) {
    if (!is_pitch(t)) continue;
    const int moved = t + shift;
    if (moved < 0 || moved >= kNumPitches) {
      throw Error(ErrorCode::IllegalShift, "shift " + std::to_string(shift) + " moves pitch " + std::to_string(t) +
                                               " outside [0,127] in '" + seq.source_id + "'");
    }
    t = static_cast<TokenId>(moved);
  }
  return out;
}

/// Drops the first k grid steps.
inline PitchSequence random_truncate(const PitchSequence& seq, int k) {
  if (k < 1) throw Error(ErrorCode::TruncationTooLarge, "truncation must remove at least one step");
  if (static_cast<std::size_t>(k) >= seq.tokens.size()) {
    throw Error(ErrorCode::TruncationTooLarge, "cannot remove " + std::to_string(k) + " of " +
                                                   std::to_string(seq.tokens.size()) + " steps from '" +
                                                   seq.source_id + "'");
  }
  PitchSequence out = seq;
  out.tokens.erase(out.tokens.begin(), out.tokens.begin() + k);
  return out;
}

struct AugmentedSequence {
  PitchSequence sequence;
  std::string parent_id;
  int shift = 0;
  int truncation = 0;  // 0 = untruncated
};

namespace detail {

inline std::vector<AugmentedSequence> expand_one(const PitchSequence& seq, const AugmentPolicy& policy) {
  Rng rng(derive_seed(policy.seed, seq.source_id));
  const std::vector<int> all = legal_shifts(seq);
  const auto wanted = static_cast<std::size_t>(policy.transpositions_per_seq);

  std::vector<int> shifts{0};
  std::vector<int> others;
  for (int s : all) {
    if (s != 0) others.push_back(s);
  }
  if (others.size() + 1 >= wanted) {
    // Partial Fisher-Yates: first wanted-1 entries are a uniform draw without replacement.
    for (std::size_t i = 0; i + 1 < wanted; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, others.size() - 1);
      std::swap(others[i], others[pick(rng)]);
      shifts.push_back(others[i]);
    }
  } else {
    shifts.insert(shifts.end(), others.begin(), others.end());
    std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
    while (shifts.size() < wanted) shifts.push_back(all[pick(rng)]);
  }

  std::vector<std::size_t> order(wanted);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < static_cast<std::size_t>(policy.truncated_per_seq); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, wanted - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  std::vector<int> truncation(wanted, 0);
  const int len = static_cast<int>(seq.tokens.size());
  int lo = policy.truncation_min, hi = policy.truncation_max;
  if (len <= policy.truncation_max) {
    lo = 1;
    hi = len - 1;
  }
  for (std::size_t i = 0; i < static_cast<std::size_t>(policy.truncated_per_seq); ++i) {
    if (hi < lo) {
      throw Error(ErrorCode::TruncationTooLarge, "sequence '" + seq.source_id + "' is too short to truncate");
    }
    std::uniform_int_distribution<int> pick(lo, hi);
    truncation[order[i]] = pick(rng);
  }

  std::vector<AugmentedSequence> out;
  out.reserve(wanted);
  for (std::size_t i = 0; i < wanted; ++i) {
    AugmentedSequence a;
    a.parent_id = seq.source_id;
    a.shift = shifts[i];
    a.truncation = truncation[i];
    a.sequence = transpose(seq, a.shift);
    if (a.truncation > 0) a.sequence = random_truncate(a.sequence, a.truncation);
    a.sequence.source_id = seq.source_id + "/t" + std::to_string(a.shift) + "/k" + std::to_string(a.truncation);
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace detail

/// Emits transpositions_per_seq variants per input: shift 0 plus shifts drawn
/// uniformly without replacement, truncated_per_seq of them also
/// head-truncated. Each input's draws are seeded from (policy.seed,
/// source_id), so output is independent of processing order.
inline std::vector<AugmentedSequence> expand_corpus(const std::vector<PitchSequence>& corpus,
                                                    const AugmentPolicy& policy) {
  policy.validate();
  std::vector<AugmentedSequence> out;
  out.reserve(corpus.size() * static_cast<std::size_t>(policy.transpositions_per_seq));
  for (const auto& seq : corpus) {
    try {
      auto variants = detail::expand_one(seq, policy);
      std::move(variants.begin(), variants.end(), std::back_inserter(out));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidPolicy) throw;
      // attach provenance
      throw Error(e.code(), std::string("while expanding '") + seq.source_id + "': " + e.what());
    }
  }
  return out;
}

}  // namespace psae
