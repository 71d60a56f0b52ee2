#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "streametm/common.hpp"

namespace streametm {

using TokenList = std::vector<std::string>;

struct Vocabulary {
  std::vector<std::string> tokens;          // id -> token, frequency-ranked
  std::unordered_map<std::string, int> index;  // token -> id

  int size() const { return static_cast<int>(tokens.size()); }

  std::optional<int> id_of(const std::string& token) const {
    auto it = index.find(token);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : tokens) h = fnv1a64(t + "\n", h);
    return h;
  }
};

struct BowDocument {
  std::string id;
  std::vector<std::pair<int, int>> counts;  // (token id, count), id-sorted
  std::string label;                        // ground truth, evaluation only

  int total() const {
    int n = 0;
    for (const auto& [_, c] : counts) n += c;
    return n;
  }
};

struct Batch {
  std::vector<BowDocument> docs;
  int step_index = 0;
};

namespace detail {

inline bool is_unicode_space(char32_t c) {
  if (c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' || c == U'\v') return true;
  if (c == 0x00A0 || c == 0x1680 || c == 0x2028 || c == 0x2029 || c == 0x202F ||
      c == 0x205F || c == 0x3000)
    return true;
  return c >= 0x2000 && c <= 0x200A;
}

inline bool is_unicode_punct(char32_t c) {
  if (c < 0x80) {
    return (c >= U'!' && c <= U'/') || (c >= U':' && c <= U'@') ||
           (c >= U'[' && c <= U'`') || (c >= U'{' && c <= U'~');
  }
  if (c == 0x00A1 || c == 0x00A7 || c == 0x00AB || c == 0x00B6 || c == 0x00B7 ||
      c == 0x00BB || c == 0x00BF)
    return true;
  return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||
         (c >= 0x3001 && c <= 0x3011);
}

// Decodes the next UTF-8 codepoint; malformed bytes are treated as Latin-1.
inline char32_t next_codepoint(const std::string& s, std::size_t& i) {
  unsigned char b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int extra = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    cp = b0 & 0x1F;
    extra = 1;
  } else if ((b0 & 0xF0) == 0xE0) {
    cp = b0 & 0x0F;
    extra = 2;
  } else if ((b0 & 0xF8) == 0xF0) {
    cp = b0 & 0x07;
    extra = 3;
  } else {
    ++i;
    return b0;
  }
  if (i + static_cast<std::size_t>(extra) >= s.size()) {
    ++i;
    return b0;
  }
  for (int k = 1; k <= extra; ++k) {
    unsigned char b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) {
      ++i;
      return b0;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  i += 1 + extra;
  return cp;
}

inline void append_utf8(std::string& out, char32_t c) {
  if (c < 0x80) {
    out.push_back(static_cast<char>(c));
  } else if (c < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (c >> 6)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else if (c < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (c >> 12)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (c >> 18)));
    out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  }
}

}  // namespace detail

// Lowercases, strips punctuation in place, splits on whitespace, and keeps
// purely alphabetic tokens of length >= 2 (in codepoints). ASCII digits make
// a token non-alphabetic; non-ASCII codepoints that are neither punctuation
// nor whitespace count as letters.
inline TokenList tokenize(const std::string& text) {
  TokenList out;
  std::string current;
  int current_len = 0;
  bool current_alpha = true;

  auto flush = [&]() {
    if (current_len >= 2 && current_alpha) out.push_back(current);
    current.clear();
    current_len = 0;
    current_alpha = true;
  };

  std::size_t i = 0;
  while (i < text.size()) {
    char32_t c = detail::next_codepoint(text, i);
    if (detail::is_unicode_space(c)) {
      flush();
      continue;
    }
    if (detail::is_unicode_punct(c)) continue;  // stripped, no boundary
    if (c >= U'A' && c <= U'Z') c += 32;
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) c += 32;  // Latin-1 uppercase
    bool alpha = (c >= U'a' && c <= U'z') || c >= 0x80;
    if (!alpha) current_alpha = false;
    detail::append_utf8(current, c);
    ++current_len;
  }
  flush();
  return out;
}

// Vocabulary under the corpus filtering rules: drop stopwords, tokens with
// corpus count < min_count, tokens present in more than max_df_ratio of the
// documents; keep the `cap` most frequent survivors. Order is descending
// corpus frequency, ties broken lexicographically.
inline Vocabulary build_vocabulary(const std::vector<TokenList>& raw_docs,
                                   const std::unordered_set<std::string>& stopwords,
                                   int min_count = 2, double max_df_ratio = 0.7,
                                   int cap = 15000) {
  if (raw_docs.empty()) throw InvalidConfigError("build_vocabulary: no documents");
  if (!(max_df_ratio > 0.0 && max_df_ratio <= 1.0))
    throw InvalidConfigError("build_vocabulary: max_df_ratio must be in (0,1]");
  if (min_count < 1) throw InvalidConfigError("build_vocabulary: min_count must be >= 1");

  std::unordered_map<std::string, long long> corpus_count;
  std::unordered_map<std::string, long long> doc_freq;
  std::unordered_set<std::string> seen;
  for (const auto& doc : raw_docs) {
    seen.clear();
    for (const auto& tok : doc) {
      ++corpus_count[tok];
      if (seen.insert(tok).second) ++doc_freq[tok];
    }
  }

  const double d = static_cast<double>(raw_docs.size());
  std::vector<std::pair<std::string, long long>> kept;
  kept.reserve(corpus_count.size());
  for (const auto& [tok, cnt] : corpus_count) {
    if (stopwords.count(tok)) continue;
    if (cnt < min_count) continue;
    if (static_cast<double>(doc_freq[tok]) / d > max_df_ratio) continue;
    kept.emplace_back(tok, cnt);
  }
  if (kept.empty()) throw EmptyVocabularyError("all tokens filtered out");

  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(kept.size()) > cap) kept.resize(cap);

  Vocabulary vocab;
  vocab.tokens.reserve(kept.size());
  for (int i = 0; i < static_cast<int>(kept.size()); ++i) {
    vocab.tokens.push_back(kept[i].first);
    vocab.index.emplace(kept[i].first, i);
  }
  return vocab;
}

// Counts in-vocabulary tokens; nullopt marks a dropped (fully OOV) document.
inline std::optional<BowDocument> vectorize(const std::string& id, const TokenList& tokens,
                                            const Vocabulary& vocab,
                                            const std::string& label = "") {
  std::map<int, int> acc;
  for (const auto& tok : tokens) {
    if (auto tid = vocab.id_of(tok)) ++acc[*tid];
  }
  if (acc.empty()) return std::nullopt;
  BowDocument doc;
  doc.id = id;
  doc.label = label;
  doc.counts.assign(acc.begin(), acc.end());
  return doc;
}

// ---------------------------------------------------------------------------
// File formats

struct RawDocument {
  std::string id;
  std::string text;
  std::string label;
};

inline std::vector<RawDocument> read_text_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RawDocument> docs;
  for (const auto& p : files) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    docs.push_back({p.stem().string(), ss.str(), ""});
  }
  return docs;
}

inline std::vector<RawDocument> read_jsonl_docs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<RawDocument> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("text"))
      throw FormatError(lineno, "expected JSON object with a \"text\" field");
    RawDocument d;
    d.id = j.value("id", "doc" + std::to_string(lineno));
    d.text = j.at("text").get<std::string>();
    d.label = j.value("label", "");
    docs.push_back(std::move(d));
  }
  return docs;
}

inline std::unordered_set<std::string> read_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::unordered_set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) words.insert(line);
  }
  return words;
}

inline void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  nlohmann::json j = vocab.tokens;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump() << "\n";
}

inline Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  if (!j.is_array()) throw FormatError(1, "vocabulary file must be a JSON array");
  Vocabulary vocab;
  for (const auto& t : j) vocab.tokens.push_back(t.get<std::string>());
  for (int i = 0; i < vocab.size(); ++i) vocab.index.emplace(vocab.tokens[i], i);
  return vocab;
}

inline void save_batch_jsonl(const Batch& batch, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& doc : batch.docs) {
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [tid, c] : doc.counts) counts[std::to_string(tid)] = c;
    nlohmann::json j{{"id", doc.id}, {"counts", counts}};
    if (!doc.label.empty()) j["label"] = doc.label;
    out << j.dump() << "\n";
  }
}

inline Batch load_batch_jsonl(const std::filesystem::path& path, int step_index,
                              int vocab_size) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  Batch batch;
  batch.step_index = step_index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("counts"))
      throw FormatError(lineno, "expected JSON object with a \"counts\" field");
    BowDocument doc;
    doc.id = j.value("id", "doc" + std::to_string(lineno));
    doc.label = j.value("label", "");
    std::map<int, int> acc;
    for (const auto& [key, val] : j.at("counts").items()) {
      int tid = std::stoi(key);
      int c = val.get<int>();
      if (tid < 0 || tid >= vocab_size) throw FormatError(lineno, "token id out of range");
      if (c < 1) throw FormatError(lineno, "counts must be positive");
      acc[tid] = c;
    }
    if (acc.empty()) throw FormatError(lineno, "empty document");
    doc.counts.assign(acc.begin(), acc.end());
    batch.docs.push_back(std::move(doc));
  }
  return batch;
}

}  // namespace streametm
