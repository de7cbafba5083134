#pragma once

#include <algorithm>
#include <array>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "ptrorder/errors.hpp"
#include "ptrorder/random.hpp"

namespace ptrorder {

// Generator for a toy ordering corpus. Sentence k of every document carries
// one cue token drawn from the k-th synonym set below, so the gold order is
// recoverable from the cues alone. Each document also has a topic; its
// sentences share topic words, which is what distinguishes a sentence
// borrowed from another document.
struct SyntheticOptions {
  std::size_t documents = 500;
  std::size_t sentences = 5;
  std::size_t topics = 20;
  std::size_t words_per_topic = 8;
  std::size_t filler_vocabulary = 200;
  std::size_t topic_tokens = 3;  // per sentence
  std::size_t filler_min = 3;
  std::size_t filler_max = 6;
  std::uint64_t seed = 7;
};

inline const std::array<std::array<const char*, 3>, 8>& ordinal_cues() {
  static const std::array<std::array<const char*, 3>, 8> cues{{
      {"first", "initially", "begin"},
      {"second", "next", "then"},
      {"third", "middle", "midway"},
      {"fourth", "later", "afterwards"},
      {"fifth", "subsequently", "thereafter"},
      {"sixth", "further", "onward"},
      {"seventh", "penultimately", "nearly"},
      {"eighth", "ultimately", "eventually"},
  }};
  return cues;
}

namespace detail {

inline std::vector<std::string> pseudo_words(std::size_t count, Rng& rng, std::set<std::string>& used) {
  static const std::array<const char*, 20> syllables{"ka", "lo", "mi", "ru", "te", "sa", "no", "vi", "de", "po",
                                                     "ba", "zu", "fe", "gi", "ho", "ja", "ne", "ri", "to", "wu"};
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w;
    const std::size_t len = 2 + rng.index(2);
    for (std::size_t k = 0; k < len; ++k) w += syllables[rng.index(syllables.size())];
    if (used.insert(w).second) out.push_back(w);
  }
  return out;
}

}  // namespace detail

// Documents as lists of sentence strings, in gold order.
inline std::vector<std::vector<std::string>> synthetic_documents(const SyntheticOptions& o) {
  if (o.sentences < 2 || o.sentences > ordinal_cues().size()) {
    throw ConfigError("synthetic: sentences per document must be in [2, " + std::to_string(ordinal_cues().size()) +
                      "]");
  }
  if (o.topics == 0 || o.words_per_topic == 0 || o.filler_vocabulary == 0 || o.filler_min > o.filler_max) {
    throw ConfigError("synthetic: invalid vocabulary sizes");
  }
  Rng rng(o.seed);
  std::set<std::string> used;
  for (const auto& set : ordinal_cues()) used.insert(set.begin(), set.end());
  std::vector<std::vector<std::string>> topic_words;
  for (std::size_t t = 0; t < o.topics; ++t) topic_words.push_back(detail::pseudo_words(o.words_per_topic, rng, used));
  const auto filler = detail::pseudo_words(o.filler_vocabulary, rng, used);

  std::vector<std::vector<std::string>> docs;
  for (std::size_t d = 0; d < o.documents; ++d) {
    const auto& topic = topic_words[rng.index(o.topics)];
    std::vector<std::string> doc;
    for (std::size_t k = 0; k < o.sentences; ++k) {
      std::vector<std::string> words;
      for (std::size_t t = 0; t < o.topic_tokens; ++t) words.push_back(topic[rng.index(topic.size())]);
      const std::size_t nf = o.filler_min + rng.index(o.filler_max - o.filler_min + 1);
      for (std::size_t f = 0; f < nf; ++f) words.push_back(filler[rng.index(filler.size())]);
      rng.shuffle(words);
      const auto& cues = ordinal_cues()[k];
      const std::size_t at = rng.index(std::min<std::size_t>(3, words.size() + 1));
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), cues[rng.index(cues.size())]);
      std::string s;
      for (const auto& w : words) s += w + ' ';
      s += '.';
      doc.push_back(std::move(s));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

// One sentence per line, documents separated by a blank line.
inline void write_corpus(std::ostream& out, const std::vector<std::vector<std::string>>& docs) {
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (d) out << '\n';
    for (const auto& s : docs[d]) out << s << '\n';
  }
}

}  // namespace ptrorder
