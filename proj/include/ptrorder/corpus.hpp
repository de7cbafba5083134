#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ptrorder/errors.hpp"
#include "ptrorder/order.hpp"
#include "ptrorder/random.hpp"
#include "ptrorder/tensor.hpp"

namespace ptrorder {

using TokenId = std::uint32_t;

// Lowercases ASCII letters, splits ASCII punctuation into standalone tokens
// and splits on whitespace. Bytes >= 0x80 (UTF-8 sequences) pass through.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  if (tokens.empty()) throw EmptyInputError("tokenize: sentence has no tokens");
  return tokens;
}

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;

  Vocab() : tokens_{"<pad>", "<unk>"} {}

  // Rebuild from an id-ordered token list whose first two entries are the
  // reserved tokens (as written by checkpoints).
  static Vocab from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") {
      throw FormatError("vocab: reserved entries <pad>, <unk> missing");
    }
    Vocab v;
    v.tokens_ = std::move(tokens);
    for (std::size_t i = 2; i < v.tokens_.size(); ++i) {
      if (!v.ids_.emplace(v.tokens_[i], static_cast<TokenId>(i)).second) {
        throw FormatError("vocab: duplicate token '" + v.tokens_[i] + "'");
      }
    }
    return v;
  }

  TokenId id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

  const std::string& token(TokenId id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  friend Vocab build_vocab_from_counts(const std::map<std::string, std::size_t>&, std::size_t);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct Sentence {
  std::vector<std::string> words;
  std::vector<TokenId> ids;
};

// Sentences in gold order.
struct Document {
  std::string id;
  std::vector<Sentence> sentences;

  std::size_t word_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.words.size();
    return n;
  }
};

inline std::map<std::string, std::size_t> count_tokens(const std::vector<Document>& docs) {
  std::map<std::string, std::size_t> counts;
  for (const auto& d : docs) {
    for (const auto& s : d.sentences) {
      for (const auto& w : s.words) ++counts[w];
    }
  }
  return counts;
}

inline Vocab build_vocab_from_counts(const std::map<std::string, std::size_t>& counts,
                                     std::size_t min_count) {
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, c] : counts) {
    if (c >= min_count) kept.emplace_back(tok, c);
  }
  // Descending frequency, ties lexicographic (map order is already lexicographic).
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (auto& [tok, c] : kept) {
    v.ids_.emplace(tok, static_cast<TokenId>(v.tokens_.size()));
    v.tokens_.push_back(tok);
  }
  return v;
}

inline Vocab build_vocab(const std::vector<Document>& docs, std::size_t min_count) {
  if (min_count < 1) throw ConfigError("build_vocab: min_count must be >= 1");
  const auto counts = count_tokens(docs);
  if (counts.empty()) throw EmptyInputError("build_vocab: empty corpus");
  return build_vocab_from_counts(counts, min_count);
}

// Fill Sentence::ids from Sentence::words.
inline void index_documents(std::vector<Document>& docs, const Vocab& vocab) {
  for (auto& d : docs) {
    for (auto& s : d.sentences) {
      s.ids.clear();
      for (const auto& w : s.words) s.ids.push_back(vocab.id(w));
    }
  }
}

// Per-split statistics: number of texts, average sentences per text and
// average words per text.
struct CorpusStats {
  std::size_t documents = 0;
  double avg_sentences = 0.0;
  double avg_words = 0.0;
  std::size_t skipped = 0;
};

inline CorpusStats compute_stats(const std::vector<Document>& docs, std::size_t skipped = 0) {
  CorpusStats st;
  st.documents = docs.size();
  st.skipped = skipped;
  if (docs.empty()) return st;
  std::size_t sentences = 0, words = 0;
  for (const auto& d : docs) {
    sentences += d.sentences.size();
    words += d.word_count();
  }
  st.avg_sentences = static_cast<double>(sentences) / static_cast<double>(docs.size());
  st.avg_words = static_cast<double>(words) / static_cast<double>(docs.size());
  return st;
}

struct IngestResult {
  std::vector<Document> documents;
  CorpusStats stats;
};

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

// Parse the corpus format: one sentence per line, documents separated by
// blank lines. Documents with fewer than two sentences are skipped and
// counted in stats.skipped. Invalid UTF-8 is a FormatError naming the line.
inline IngestResult parse_corpus(std::istream& in, const std::string& name) {
  IngestResult result;
  std::vector<Sentence> current;
  std::size_t doc_counter = 0;
  std::size_t skipped = 0;
  auto finish = [&] {
    if (current.empty()) return;
    if (current.size() < 2) {
      ++skipped;
    } else {
      Document d;
      d.id = name + "#" + std::to_string(doc_counter);
      d.sentences = std::move(current);
      result.documents.push_back(std::move(d));
    }
    ++doc_counter;
    current.clear();
  };
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!valid_utf8(line)) {
      throw FormatError(name + ":" + std::to_string(line_no) + ": invalid UTF-8");
    }
    const bool blank = std::all_of(line.begin(), line.end(),
                                   [](unsigned char c) { return c < 0x80 && std::isspace(c); });
    if (blank) {
      finish();
      continue;
    }
    Sentence s;
    s.words = tokenize(line);
    current.push_back(std::move(s));
  }
  finish();
  result.stats = compute_stats(result.documents, skipped);
  return result;
}

inline IngestResult ingest_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open corpus file " + path);
  return parse_corpus(in, path);
}

struct EmbeddingLoad {
  Tensor table;
  std::size_t found = 0;
  double coverage = 0.0;  // found / (vocab size - reserved)
};

// Random embedding table: every row uniform(-0.1, 0.1) in row order, padding
// row zero.
inline Tensor random_embeddings(std::size_t vocab_size, std::size_t dim, Rng& rng) {
  Tensor t({vocab_size, dim});
  for (double& v : t.data()) v = rng.uniform(-0.1, 0.1);
  for (double& v : t.row(Vocab::kPad)) v = 0.0;
  return t;
}

// Pretrained vectors in "token v1 ... vd" lines. Rows for tokens absent from
// the file keep their random initialization. The first occurrence of a token
// wins.
inline EmbeddingLoad load_pretrained_embeddings(std::istream& in, const std::string& name,
                                                const Vocab& vocab, std::size_t dim, Rng& rng) {
  EmbeddingLoad out;
  out.table = random_embeddings(vocab.size(), dim, rng);
  std::vector<bool> seen(vocab.size(), false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    std::vector<double> vec;
    std::string field;
    while (ls >> field) {
      try {
        std::size_t used = 0;
        vec.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw FormatError(name + ":" + std::to_string(line_no) + ": bad number '" + field + "'");
      }
    }
    if (vec.size() != dim) {
      throw FormatError(name + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                        " values, got " + std::to_string(vec.size()));
    }
    if (!vocab.contains(token)) continue;
    const TokenId id = vocab.id(token);
    if (seen[id]) continue;
    seen[id] = true;
    ++out.found;
    std::copy(vec.begin(), vec.end(), out.table.row(id).begin());
  }
  for (double& v : out.table.row(Vocab::kPad)) v = 0.0;
  const std::size_t real = vocab.size() > 2 ? vocab.size() - 2 : 0;
  out.coverage = real ? static_cast<double>(out.found) / static_cast<double>(real) : 0.0;
  return out;
}

inline EmbeddingLoad load_pretrained_embeddings(const std::string& path, const Vocab& vocab,
                                                std::size_t dim, Rng& rng) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open embedding file " + path);
  return load_pretrained_embeddings(in, path, vocab, dim, rng);
}

enum class NoiseMode { none, always_one, half };

inline const char* to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::none: return "none";
    case NoiseMode::always_one: return "one";
    case NoiseMode::half: return "half";
  }
  return "?";
}

inline NoiseMode parse_noise_mode(std::string_view s) {
  if (s == "none" || s == "0") return NoiseMode::none;
  if (s == "one" || s == "always_one" || s == "1") return NoiseMode::always_one;
  if (s == "half" || s == "0/1") return NoiseMode::half;
  throw ConfigError("unknown noise mode '" + std::string(s) + "'");
}

// Every sentence of a split, addressable for noise sampling.
struct NoisePool {
  const std::vector<Document>* docs = nullptr;
  std::vector<std::pair<std::size_t, std::size_t>> refs;  // (document, sentence)

  static NoisePool from_documents(const std::vector<Document>& docs) {
    NoisePool pool;
    pool.docs = &docs;
    for (std::size_t d = 0; d < docs.size(); ++d) {
      for (std::size_t s = 0; s < docs[d].sentences.size(); ++s) pool.refs.emplace_back(d, s);
    }
    return pool;
  }

  bool empty() const { return refs.empty(); }
};

struct InstanceOptions {
  NoiseMode noise = NoiseMode::none;
  bool fixed_length = true;
};

// One shuffled view of a document. target.positions index into `inputs` and
// list the document's own sentences in gold order; target.stopped is set in
// variable-length mode, where decoding ends with the stop action.
struct Instance {
  std::string doc_id;
  std::vector<Sentence> inputs;
  Order target;
  std::optional<std::size_t> noise_position;
  std::uint64_t permutation_seed = 0;

  std::size_t size() const { return inputs.size(); }
};

inline std::uint64_t epoch_seed(std::uint64_t run_seed, std::uint64_t epoch) {
  return mix_seed(run_seed, epoch);
}

// Build an instance from a document. The permutation (and any noise) is a
// pure function of (document id, seed).
inline Instance make_instance(const Document& doc, std::uint64_t seed, const InstanceOptions& opts,
                              const NoisePool* pool = nullptr) {
  if (opts.noise != NoiseMode::none && opts.fixed_length) {
    throw ConfigError("make_instance: noise injection requires variable-length mode");
  }
  if (opts.noise != NoiseMode::none && (pool == nullptr || pool->empty())) {
    throw ConfigError("make_instance: noise requested with an empty noise pool");
  }
  const std::size_t n = doc.sentences.size();
  Instance inst;
  inst.doc_id = doc.id;
  inst.permutation_seed = mix_seed(stable_hash(doc.id), seed);
  Rng rng(inst.permutation_seed);

  // perm[j] = gold index of the sentence shown at input position j.
  std::vector<std::size_t> perm = rng.permutation(n);

  bool inject = opts.noise == NoiseMode::always_one ||
                (opts.noise == NoiseMode::half && rng.bernoulli(0.5));
  const Sentence* noise = nullptr;
  if (inject) {
    constexpr int kMaxRetries = 1000;
    for (int attempt = 0; attempt < kMaxRetries && noise == nullptr; ++attempt) {
      const auto [d, s] = pool->refs[rng.index(pool->refs.size())];
      const Document& src = (*pool->docs)[d];
      if (src.id != doc.id) noise = &src.sentences[s];
    }
    if (noise == nullptr) {
      throw Error("make_instance: could not sample a noise sentence from another document");
    }
  }

  constexpr std::size_t kNoise = static_cast<std::size_t>(-1);
  if (noise != nullptr) {
    const std::size_t at = rng.index(n + 1);
    perm.insert(perm.begin() + static_cast<std::ptrdiff_t>(at), kNoise);
    inst.noise_position = at;
  }

  inst.inputs.reserve(perm.size());
  inst.target.positions.assign(n, 0);
  for (std::size_t j = 0; j < perm.size(); ++j) {
    if (perm[j] == kNoise) {
      inst.inputs.push_back(*noise);
    } else {
      inst.inputs.push_back(doc.sentences[perm[j]]);
      inst.target.positions[perm[j]] = j;
    }
  }
  inst.target.stopped = !opts.fixed_length;
  return inst;
}

}  // namespace ptrorder
