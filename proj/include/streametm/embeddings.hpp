#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "streametm/common.hpp"
#include "streametm/corpus.hpp"

namespace streametm {

// Fixed pretrained word embeddings; column v is the embedding of word v.
struct EmbeddingMatrix {
  Mat rho;  // L x V
  int dim() const { return static_cast<int>(rho.rows()); }
  int vocab_size() const { return static_cast<int>(rho.cols()); }
};

inline double cosine_distance(const Vec& u, const Vec& v) {
  if (u.size() != v.size()) throw DimensionError("cosine_distance: length mismatch");
  double nu = u.norm();
  double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw ZeroVectorError("cosine_distance: zero-norm vector");
  double d = 1.0 - u.dot(v) / (nu * nv);
  // clamp float noise at the boundary of [0, 2]
  if (d < 0.0) d = 0.0;
  if (d > 2.0) d = 2.0;
  return d;
}

struct LoadedEmbeddings {
  EmbeddingMatrix embeddings;
  Vocabulary vocab;        // input vocab intersected with embedding tokens
  int dropped_words = 0;   // vocab words without an embedding
};

// Word-vector text format: `token v_1 ... v_L` per line, single spaces.
// Reads at most max_rows lines in file order, then restricts the given
// vocabulary to tokens with embeddings (original vocabulary order kept,
// ids reassigned).
inline LoadedEmbeddings load_embeddings(const std::filesystem::path& path,
                                        const Vocabulary& vocab, int max_rows = 15000) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());

  std::vector<std::pair<int, Vec>> found;  // (old vocab id, embedding)
  std::vector<bool> have(vocab.tokens.size(), false);
  int dim = -1;
  std::string line;
  std::size_t lineno = 0;
  int rows_read = 0;
  while (rows_read < max_rows && std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ++rows_read;

    std::size_t sp = line.find(' ');
    if (sp == std::string::npos || sp == 0)
      throw FormatError(lineno, "expected `token v_1 ... v_L`");
    std::string token = line.substr(0, sp);

    std::vector<double> values;
    std::size_t pos = sp + 1;
    while (pos <= line.size()) {
      std::size_t next = line.find(' ', pos);
      std::string field = line.substr(pos, next == std::string::npos ? std::string::npos
                                                                     : next - pos);
      if (field.empty()) throw FormatError(lineno, "empty field");
      const char* begin = field.c_str();
      char* end = nullptr;
      double v = std::strtod(begin, &end);
      if (end != begin + field.size() || !std::isfinite(v))
        throw FormatError(lineno, "unparsable real `" + field + "`");
      values.push_back(v);
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    if (values.empty()) throw FormatError(lineno, "no embedding values");
    if (dim < 0) {
      dim = static_cast<int>(values.size());
    } else if (static_cast<int>(values.size()) != dim) {
      throw FormatError(lineno, "expected " + std::to_string(dim) + " values, got " +
                                     std::to_string(values.size()));
    }

    auto vid = vocab.id_of(token);
    if (vid && !have[*vid]) {
      have[*vid] = true;
      found.emplace_back(*vid, Eigen::Map<const Vec>(values.data(), dim));
    }
  }
  if (found.empty()) throw EmptyVocabularyError("no vocabulary word has an embedding");

  std::sort(found.begin(), found.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  LoadedEmbeddings out;
  out.embeddings.rho.resize(dim, static_cast<int>(found.size()));
  for (int i = 0; i < static_cast<int>(found.size()); ++i) {
    out.vocab.tokens.push_back(vocab.tokens[found[i].first]);
    out.vocab.index.emplace(out.vocab.tokens.back(), i);
    out.embeddings.rho.col(i) = found[i].second;
  }
  out.dropped_words = vocab.size() - static_cast<int>(found.size());
  return out;
}

// Plain-text writer for synthetic embeddings (same format the loader reads).
inline void save_embeddings(const EmbeddingMatrix& emb, const Vocabulary& vocab,
                            const std::filesystem::path& path) {
  if (emb.vocab_size() != vocab.size())
    throw DimensionError("save_embeddings: vocabulary size mismatch");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  for (int v = 0; v < vocab.size(); ++v) {
    out << vocab.tokens[v];
    for (int l = 0; l < emb.dim(); ++l) out << ' ' << emb.rho(l, v);
    out << "\n";
  }
}

}  // namespace streametm
