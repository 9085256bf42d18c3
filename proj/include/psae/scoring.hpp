#pragma once

// Provenance scoring by successive masking, and AUC reporting.
//
// For each scoreable (pitch) position the model sees the sequence with that
// position masked and reports the probability of the true pitch. The clip's
// AI probability is the mean; the human probability is its complement.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "psae/error.hpp"
#include "psae/model.hpp"
#include "psae/pipeline.hpp"
#include "psae/quantize.hpp"

namespace psae {

struct NoteProbabilities {
  std::vector<double> p;
  std::vector<std::size_t> positions;
};

struct ScoringOptions {
  bool per_note = false;         // mask every step of a sustained note together
  std::size_t max_batch = 32;    // masked variants per forward pass
};

namespace detail {

// Groups of positions masked together: singletons, or runs of one pitch.
inline std::vector<std::vector<std::size_t>> mask_groups(const std::vector<TokenId>& tokens, bool per_note) {
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!is_pitch(tokens[i])) continue;
    if (per_note && !groups.empty() && groups.back().back() + 1 == i && tokens[i - 1] == tokens[i]) {
      groups.back().push_back(i);
    } else {
      groups.push_back({i});
    }
  }
  return groups;
}

template <typename T>
double class_probability(const T* logits, std::size_t classes, int target) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, static_cast<double>(logits[c]));
  double z = 0;
  for (std::size_t c = 0; c < classes; ++c) z += std::exp(static_cast<double>(logits[c]) - mx);
  return std::exp(static_cast<double>(logits[target]) - mx) / z;
}

}  // namespace detail

/// Probability of the true pitch at each scoreable position, with that
/// position (or its whole note, in per-note mode) replaced by MASK. Masked
/// variants are evaluated in batches; each variant is independent of its
/// batch-mates, so batching does not change the result.
template <typename T>
NoteProbabilities note_probabilities(const ModelParams<T>& model, const PitchSequence& seq,
                                     const ScoringOptions& options = {}) {
  if (!model.config.uses_pitch_vocabulary()) {
    throw Error(ErrorCode::InvalidConfig, "scoring pitch sequences needs output_classes = 128");
  }
  if (seq.tokens.size() > static_cast<std::size_t>(model.config.max_position)) {
    throw Error(ErrorCode::SequenceTooLong, "'" + seq.source_id + "' has " + std::to_string(seq.tokens.size()) +
                                                " steps, max_position is " +
                                                std::to_string(model.config.max_position));
  }
  const auto groups = detail::mask_groups(seq.tokens, options.per_note);
  if (groups.empty()) throw Error(ErrorCode::NoScoreablePositions, "'" + seq.source_id + "' has no pitch tokens");

  nn::NoGradGuard no_grad;
  const std::size_t len = seq.tokens.size();
  const std::size_t classes = static_cast<std::size_t>(model.config.output_classes);
  const std::size_t chunk = std::max<std::size_t>(1, options.max_batch);
  NoteProbabilities out;
  for (std::size_t start = 0; start < groups.size(); start += chunk) {
    const std::size_t stop = std::min(groups.size(), start + chunk);
    TokenBatch batch;
    batch.batch = stop - start;
    batch.length = len;
    batch.tokens.reserve(batch.batch * len);
    for (std::size_t g = start; g < stop; ++g) {
      const std::size_t row = batch.tokens.size();
      batch.tokens.insert(batch.tokens.end(), seq.tokens.begin(), seq.tokens.end());
      for (std::size_t pos : groups[g]) batch.tokens[row + pos] = kMask;
    }
    batch.pad.assign(batch.tokens.size(), 0);
    const auto logits = forward(model, batch);
    const auto& lv = logits.value().data;
    for (std::size_t g = start; g < stop; ++g) {
      for (std::size_t pos : groups[g]) {
        const T* row = lv.data() + ((g - start) * len + pos) * classes;
        out.p.push_back(detail::class_probability(row, classes, seq.tokens[pos]));
        out.positions.push_back(pos);
      }
    }
  }
  if (options.per_note) {
    // Report in position order regardless of grouping.
    std::vector<std::size_t> idx(out.p.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return out.positions[a] < out.positions[b]; });
    NoteProbabilities sorted;
    for (auto i : idx) {
      sorted.p.push_back(out.p[i]);
      sorted.positions.push_back(out.positions[i]);
    }
    return sorted;
  }
  return out;
}

/// Arithmetic mean of the per-position probabilities.
inline double ai_probability(const NoteProbabilities& np) {
  if (np.p.empty()) throw Error(ErrorCode::NoScoreablePositions, "no probabilities to average");
  return std::accumulate(np.p.begin(), np.p.end(), 0.0) / static_cast<double>(np.p.size());
}

struct ExcerptScore {
  std::string source_id;
  double ai_probability = 0;
  double human_probability = 1;
  std::size_t n = 0;
};

inline ExcerptScore make_excerpt_score(const std::string& source_id, const NoteProbabilities& np) {
  ExcerptScore s;
  s.source_id = source_id;
  s.ai_probability = ai_probability(np);
  s.human_probability = 1.0 - s.ai_probability;
  s.n = np.p.size();
  return s;
}

template <typename T>
ExcerptScore score_sequence(const ModelParams<T>& model, const PitchSequence& seq, const ScoringOptions& options = {}) {
  return make_excerpt_score(seq.source_id, note_probabilities(model, seq, options));
}

/// Mann-Whitney AUC via average ranks: the probability that a positive
/// outscores a negative, ties counting one half.
inline double compute_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(scores.size()) + " scores for " +
                                              std::to_string(positive.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum = 0;
  std::size_t npos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += avg_rank;
        ++npos;
      }
    }
    i = j;
  }
  const std::size_t nneg = scores.size() - npos;
  if (npos == 0 || nneg == 0) {
    throw Error(ErrorCode::SingleClassOnly, "AUC needs both classes (" + std::to_string(npos) + " positive, " +
                                                std::to_string(nneg) + " negative)");
  }
  const double np = static_cast<double>(npos), nn_ = static_cast<double>(nneg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn_);
}

// ---------------------------------------------------------------------------
// Manifest evaluation
// ---------------------------------------------------------------------------

inline constexpr const char* kGroupKeys[] = {"style", "algorithm", "published"};

struct ManifestRow {
  std::string path;
  bool human = false;
  std::map<std::string, std::string> keys;  // group key -> value; empty values omitted

  std::string key(const std::string& k) const {
    auto it = keys.find(k);
    return it == keys.end() ? std::string() : it->second;
  }
};

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

/// CSV with header `path,label,style,algorithm,published` (columns in any
/// order; path and label required). Labels: human | ai.
inline std::vector<ManifestRow> parse_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ManifestMalformed, "empty manifest");
  auto header = split(trim(line), ',');
  for (auto& h : header) h = trim(h);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto& h = header[i];
    const bool known = h == "path" || h == "label" || h == "style" || h == "algorithm" || h == "published";
    if (!known) throw Error(ErrorCode::ManifestMalformed, "unknown column '" + h + "'");
    if (!col.emplace(h, i).second) throw Error(ErrorCode::ManifestMalformed, "duplicate column '" + h + "'");
  }
  if (!col.count("path") || !col.count("label")) {
    throw Error(ErrorCode::ManifestMalformed, "header must contain path and label");
  }
  std::vector<ManifestRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::ManifestMalformed, "line " + std::to_string(lineno) + " has " +
                                                    std::to_string(cells.size()) + " cells, header has " +
                                                    std::to_string(header.size()));
    }
    ManifestRow r;
    r.path = trim(cells[col["path"]]);
    const std::string label = trim(cells[col["label"]]);
    if (label == "human") {
      r.human = true;
    } else if (label == "ai") {
      r.human = false;
    } else {
      throw Error(ErrorCode::ManifestMalformed, "line " + std::to_string(lineno) + ": label '" + label +
                                                    "' is not human|ai");
    }
    if (r.path.empty()) throw Error(ErrorCode::ManifestMalformed, "line " + std::to_string(lineno) + ": empty path");
    for (const char* k : kGroupKeys) {
      auto it = col.find(k);
      if (it == col.end()) continue;
      std::string v = trim(cells[it->second]);
      if (!v.empty()) r.keys[k] = v;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

struct ScoredRow {
  ManifestRow row;
  ExcerptScore score;
};

struct FailedRow {
  std::string path;
  std::string error;
};

struct GroupAuc {
  std::string key;
  std::string value;
  double auc = 0.5;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

struct EvalReport {
  double overall_auc = 0.5;
  std::vector<GroupAuc> groups;
  std::vector<std::string> skipped_groups;  // "key=value: reason"
  std::vector<ScoredRow> rows;
  std::vector<FailedRow> failures;
};

/// Members of group (key, value): rows carrying that value. When that set
/// lacks one class, rows of the missing class that carry no value for `key`
/// complete it (e.g. per-algorithm AI rows against all human rows).
inline std::vector<std::size_t> group_members(const std::vector<ScoredRow>& rows, const std::string& key,
                                              const std::string& value) {
  std::vector<std::size_t> members;
  bool has_pos = false, has_neg = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].row.key(key) != value) continue;
    members.push_back(i);
    (rows[i].row.human ? has_pos : has_neg) = true;
  }
  if (has_pos != has_neg) {
    const bool need_human = !has_pos;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].row.human == need_human && rows[i].row.key(key).empty()) members.push_back(i);
    }
    std::sort(members.begin(), members.end());
  }
  return members;
}

/// Scores every row (label human = positive, detection score = human
/// probability) and aggregates overall and per-group AUC. Rows that fail
/// preprocessing are recorded in `failures` and left out of every AUC.
template <typename T>
EvalReport evaluate_rows(const ModelParams<T>& model, const std::vector<ManifestRow>& manifest,
                         const std::filesystem::path& base_dir, std::uint64_t seed = 0,
                         const ScoringOptions& options = {}) {
  EvalReport report;
  for (const auto& row : manifest) {
    std::filesystem::path p(row.path);
    if (p.is_relative()) p = base_dir / p;
    try {
      const auto seq = preprocess_file(p.string(), seed, row.path);
      report.rows.push_back({row, score_sequence(model, seq, options)});
    } catch (const Error& e) {
      report.failures.push_back({row.path, e.what()});
    }
  }

  auto auc_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<double> s;
    std::vector<bool> l;
    for (auto i : idx) {
      s.push_back(report.rows[i].score.human_probability);
      l.push_back(report.rows[i].row.human);
    }
    return compute_auc(s, l);
  };
  std::vector<std::size_t> all(report.rows.size());
  std::iota(all.begin(), all.end(), 0);
  report.overall_auc = auc_of(all);

  for (const char* key : kGroupKeys) {
    std::vector<std::string> values;
    for (const auto& r : report.rows) {
      const auto v = r.row.key(key);
      if (!v.empty() && std::find(values.begin(), values.end(), v) == values.end()) values.push_back(v);
    }
    for (const auto& v : values) {
      const auto members = group_members(report.rows, key, v);
      GroupAuc g;
      g.key = key;
      g.value = v;
      for (auto i : members) (report.rows[i].row.human ? g.positives : g.negatives)++;
      if (g.positives == 0 || g.negatives == 0) {
        report.skipped_groups.push_back(std::string(key) + "=" + v + ": single class");
        continue;
      }
      g.auc = auc_of(members);
      report.groups.push_back(g);
    }
  }
  return report;
}

template <typename T>
EvalReport evaluate_manifest(const ModelParams<T>& model, const std::filesystem::path& manifest_path,
                             std::uint64_t seed = 0, const ScoringOptions& options = {}) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + manifest_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return evaluate_rows(model, parse_manifest(ss.str()), manifest_path.parent_path(), seed, options);
}

// ---------------------------------------------------------------------------
// Report formats
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

/// Machine-readable report: one record per line, tab-separated key=value
/// fields, first field names the record type.
inline std::string report_to_text(const EvalReport& r) {
  std::ostringstream o;
  o << "record=overall\tauc=" << format_double(r.overall_auc) << "\tscored=" << r.rows.size()
    << "\tfailed=" << r.failures.size() << "\n";
  for (const auto& g : r.groups) {
    o << "record=group\tkey=" << g.key << "\tvalue=" << g.value << "\tauc=" << format_double(g.auc)
      << "\tpositives=" << g.positives << "\tnegatives=" << g.negatives << "\n";
  }
  for (const auto& s : r.skipped_groups) o << "record=skipped_group\treason=" << s << "\n";
  for (const auto& row : r.rows) {
    o << "record=row\tpath=" << row.row.path << "\tlabel=" << (row.row.human ? "human" : "ai");
    for (const char* k : kGroupKeys) o << "\t" << k << "=" << row.row.key(k);
    o << "\tai_probability=" << format_double(row.score.ai_probability)
      << "\thuman_probability=" << format_double(row.score.human_probability) << "\tn=" << row.score.n << "\n";
  }
  for (const auto& f : r.failures) o << "record=failed\tpath=" << f.path << "\terror=" << f.error << "\n";
  return o.str();
}

inline EvalReport report_from_text(const std::string& text) {
  EvalReport r;
  std::istringstream in(text);
  std::string line;
  bool saw_overall = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::map<std::string, std::string> kv;
    for (const auto& field : split(line, '\t')) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::ManifestMalformed, "report field without '=': " + field);
      kv[field.substr(0, eq)] = field.substr(eq + 1);
    }
    const auto& type = kv["record"];
    if (type == "overall") {
      r.overall_auc = std::stod(kv["auc"]);
      saw_overall = true;
    } else if (type == "group") {
      r.groups.push_back({kv["key"], kv["value"], std::stod(kv["auc"]), std::stoul(kv["positives"]),
                          std::stoul(kv["negatives"])});
    } else if (type == "skipped_group") {
      r.skipped_groups.push_back(kv["reason"]);
    } else if (type == "row") {
      ScoredRow s;
      s.row.path = kv["path"];
      s.row.human = kv["label"] == "human";
      for (const char* k : kGroupKeys) {
        if (!kv[k].empty()) s.row.keys[k] = kv[k];
      }
      s.score.source_id = s.row.path;
      s.score.ai_probability = std::stod(kv["ai_probability"]);
      s.score.human_probability = std::stod(kv["human_probability"]);
      s.score.n = std::stoul(kv["n"]);
      r.rows.push_back(std::move(s));
    } else if (type == "failed") {
      r.failures.push_back({kv["path"], kv["error"]});
    } else {
      throw Error(ErrorCode::ManifestMalformed, "unknown report record '" + type + "'");
    }
  }
  if (!saw_overall) throw Error(ErrorCode::ManifestMalformed, "report has no overall record");
  return r;
}

/// Tables for the terminal: overall, then one table per group key present.
inline std::string report_to_table(const EvalReport& r) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(4);
  o << "overall AUC  " << r.overall_auc << "  (" << r.rows.size() << " scored, " << r.failures.size()
    << " failed)\n";
  const std::map<std::string, std::string> titles{{"style", "AUC by music style"},
                                                  {"algorithm", "AUC by generating algorithm"},
                                                  {"published", "AUC by publication status"}};
  for (const char* key : kGroupKeys) {
    bool header = false;
    for (const auto& g : r.groups) {
      if (g.key != key) continue;
      if (!header) {
        o << "\n" << titles.at(key) << "\n";
        header = true;
      }
      o << "  " << std::left << std::setw(16) << g.value << std::right << g.auc << "  (" << g.positives << " human / "
        << g.negatives << " ai)\n";
    }
  }
  for (const auto& s : r.skipped_groups) o << "skipped group " << s << "\n";
  for (const auto& f : r.failures) o << "failed " << f.path << ": " << f.error << "\n";
  return o.str();
}

}  // namespace psae
