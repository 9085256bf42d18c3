#pragma once

// The pipeline stages behind each CLI subcommand. Each returns a summary
// and writes its artifacts atomically; the CLI only parses arguments.

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "psae/augment.hpp"
#include "psae/checkpoint.hpp"
#include "psae/config.hpp"
#include "psae/corpus_io.hpp"
#include "psae/error.hpp"
#include "psae/model.hpp"
#include "psae/pipeline.hpp"
#include "psae/scoring.hpp"

namespace psae::commands {

namespace fs = std::filesystem;

struct PreprocessSummary {
  std::size_t inputs = 0;
  std::size_t written = 0;
  std::map<std::string, std::size_t> grid_histogram;
  std::vector<FailedRow> failures;
  std::vector<std::string> warnings;

  std::string to_text() const {
    std::ostringstream o;
    o << "inputs=" << inputs << "\twritten=" << written << "\tfailed=" << failures.size() << "\n";
    for (const auto& [g, n] : grid_histogram) o << "grid=" << g << "\tcount=" << n << "\n";
    for (const auto& w : warnings) o << "warning=" << w << "\n";
    for (const auto& f : failures) o << "failed=" << f.path << "\terror=" << f.error << "\n";
    return o.str();
  }
};

/// Every *.mid / *.midi file in `in_dir` -> `out_dir/<name>.tok` plus summary.txt.
inline PreprocessSummary preprocess(const fs::path& in_dir, const fs::path& out_dir, std::uint64_t seed) {
  const auto inputs = list_files(in_dir, {".mid", ".midi"});
  if (inputs.empty()) throw Error(ErrorCode::NoInputs, "no .mid files in " + in_dir.string());
  fs::create_directories(out_dir);
  PreprocessSummary summary;
  summary.inputs = inputs.size();
  for (const auto& path : inputs) {
    const std::string id = path.filename().string();
    try {
      std::vector<std::string> warnings;
      const auto seq = preprocess_file(path.string(), seed, id, &warnings);
      for (const auto& w : warnings) summary.warnings.push_back(id + ": " + w);
      write_file_atomic(out_dir / (path.stem().string() + ".tok"), format_corpus_line(seq) + "\n");
      ++summary.grid_histogram[grid_name(seq.grid)];
      ++summary.written;
    } catch (const Error& e) {
      summary.failures.push_back({id, e.what()});
    }
  }
  write_file_atomic(out_dir / "summary.txt", summary.to_text());
  return summary;
}

struct AugmentSummary {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
};

/// Expands every sequence under `in_dir`; writes augmented.tok and provenance.tsv.
inline AugmentSummary augment(const fs::path& in_dir, const fs::path& out_dir, const AugmentPolicy& policy) {
  const auto corpus = read_corpus_dir(in_dir);
  const auto expanded = expand_corpus(corpus, policy);
  fs::create_directories(out_dir);
  std::string tokens;
  for (const auto& a : expanded) {
    tokens += format_corpus_line(a.sequence);
    tokens += '\n';
  }
  write_file_atomic(out_dir / "augmented.tok", tokens);
  write_file_atomic(out_dir / "provenance.tsv", format_provenance(expanded));
  AugmentSummary s{corpus.size(), expanded.size()};
  write_file_atomic(out_dir / "summary.txt", "inputs=" + std::to_string(s.inputs) +
                                                 "\toutputs=" + std::to_string(s.outputs) + "\n");
  return s;
}

inline std::string format_metrics_line(const EpochMetrics& m) {
  return "epoch=" + std::to_string(m.epoch) + " raw_loss=" + format_double(m.raw_loss) +
         " flooded_loss=" + format_double(m.flooded_loss) + " masked_accuracy=" + format_double(m.masked_accuracy) +
         " steps=" + std::to_string(m.steps);
}

/// Trains on every sequence under `corpus_dir`; writes the checkpoint and
/// `<checkpoint>.metrics` (one key=value line per epoch).
inline Checkpoint train(const fs::path& corpus_dir, const RunConfig& cfg, const fs::path& checkpoint_path,
                        std::ostream* log = nullptr) {
  cfg.model.validate();
  cfg.train.validate();
  const auto corpus = read_corpus_dir(corpus_dir);
  std::string metrics;
  auto ckpt = psae::train(corpus, cfg.model, cfg.train, [&](const EpochMetrics& m) {
    const auto line = format_metrics_line(m);
    metrics += line + "\n";
    if (log) *log << line << std::endl;
  });
  if (checkpoint_path.has_parent_path()) fs::create_directories(checkpoint_path.parent_path());
  save_checkpoint(ckpt, checkpoint_path);
  auto metrics_path = checkpoint_path;
  metrics_path += ".metrics";
  write_file_atomic(metrics_path, metrics);
  return ckpt;
}

inline std::string format_score_line(const ExcerptScore& s) {
  return "source=" + s.source_id + " ai_probability=" + format_double(s.ai_probability) +
         " human_probability=" + format_double(s.human_probability) + " n=" + std::to_string(s.n);
}

inline ExcerptScore score(const fs::path& checkpoint_path, const fs::path& midi_path, bool per_note,
                          std::uint64_t seed = 0) {
  const auto ckpt = load_checkpoint(checkpoint_path);
  const auto seq = preprocess_file(midi_path.string(), seed, midi_path.filename().string());
  ScoringOptions opt;
  opt.per_note = per_note;
  return score_sequence(ckpt.params, seq, opt);
}

/// Scores a manifest; writes `out_dir/report.txt` (machine-readable) and
/// `out_dir/report_tables.txt`.
inline EvalReport eval(const fs::path& checkpoint_path, const fs::path& manifest_path, const fs::path& out_dir,
                       bool per_note = false, std::uint64_t seed = 0) {
  const auto ckpt = load_checkpoint(checkpoint_path);
  ScoringOptions opt;
  opt.per_note = per_note;
  auto report = evaluate_manifest(ckpt.params, manifest_path, seed, opt);
  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "report.txt", report_to_text(report));
  write_file_atomic(out_dir / "report_tables.txt", report_to_table(report));
  return report;
}

}  // namespace psae::commands
