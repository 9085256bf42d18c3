#pragma once

// Token corpus files: one sequence per line,
//   source_id <TAB> grid (16|32) <TAB> space-separated token ids
// Corpus directories hold any number of *.tok files, read in name order.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "psae/augment.hpp"
#include "psae/checkpoint.hpp"
#include "psae/error.hpp"
#include "psae/quantize.hpp"

namespace psae {

inline std::string format_corpus_line(const PitchSequence& seq) {
  std::string out = seq.source_id;
  out += '\t';
  out += grid_name(seq.grid);
  out += '\t';
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(seq.tokens[i]);
  }
  return out;
}

inline PitchSequence parse_corpus_line(const std::string& line) {
  const auto t1 = line.find('\t');
  const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
  if (t2 == std::string::npos) throw Error(ErrorCode::BadCorpusFile, "expected 3 tab-separated fields: " + line);
  PitchSequence seq;
  seq.source_id = line.substr(0, t1);
  seq.grid = parse_grid_name(line.substr(t1 + 1, t2 - t1 - 1));
  std::istringstream toks(line.substr(t2 + 1));
  int v;
  while (toks >> v) {
    if (v < 0 || v > kRest) {
      throw Error(ErrorCode::BadCorpusFile, "token " + std::to_string(v) + " in '" + seq.source_id + "'");
    }
    seq.tokens.push_back(static_cast<TokenId>(v));
  }
  if (!toks.eof()) throw Error(ErrorCode::BadCorpusFile, "non-numeric token in '" + seq.source_id + "'");
  if (seq.tokens.empty()) throw Error(ErrorCode::BadCorpusFile, "empty sequence '" + seq.source_id + "'");
  return seq;
}

inline std::string format_corpus(const std::vector<PitchSequence>& seqs) {
  std::string out;
  for (const auto& s : seqs) {
    out += format_corpus_line(s);
    out += '\n';
  }
  return out;
}

inline std::vector<PitchSequence> read_corpus_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<PitchSequence> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(parse_corpus_line(line));
  }
  return out;
}

inline std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir,
                                                     const std::vector<std::string>& extensions) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::NoInputs, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (std::find(extensions.begin(), extensions.end(), ext) != extensions.end()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<PitchSequence> read_corpus_dir(const std::filesystem::path& dir) {
  std::vector<PitchSequence> out;
  for (const auto& f : list_files(dir, {".tok"})) {
    auto part = read_corpus_file(f);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  if (out.empty()) throw Error(ErrorCode::NoInputs, "no sequences under " + dir.string());
  return out;
}

/// Provenance table for augmented corpora: source_id, parent, shift, truncation.
inline std::string format_provenance(const std::vector<AugmentedSequence>& aug) {
  std::string out = "source_id\tparent_id\tshift\ttruncation\n";
  for (const auto& a : aug) {
    out += a.sequence.source_id + '\t' + a.parent_id + '\t' + std::to_string(a.shift) + '\t' +
           std::to_string(a.truncation) + '\n';
  }
  return out;
}

}  // namespace psae
