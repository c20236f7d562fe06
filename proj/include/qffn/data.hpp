#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qffn/encoder.hpp"
#include "qffn/error.hpp"

namespace qffn {

struct Example {
  std::string text;
  int label = 0;

  friend bool operator==(const Example&, const Example&) = default;
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t num_classes = 2;
  std::string split = "train";

  std::size_t size() const noexcept { return examples.size(); }
  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(e.label);
    return out;
  }
};

/// Reads "text<TAB>label" rows. Blank lines are skipped; anything else that
/// does not parse is rejected with its line number. When `num_classes` is not
/// given it is inferred as max label + 1.
inline Dataset load_tsv(const std::filesystem::path& path,
                        std::optional<std::size_t> num_classes = std::nullopt,
                        std::string split = "train") {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file '" + path.string() + "'");
  Dataset ds;
  ds.split = std::move(split);
  std::string line;
  std::size_t lineno = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw ParseError("missing TAB separator", lineno);
    const std::string_view label_text(line.data() + tab + 1, line.size() - tab - 1);
    int label = 0;
    const auto [ptr, ec] =
        std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (ec != std::errc{} || ptr != label_text.data() + label_text.size() || label_text.empty()) {
      throw ParseError("label '" + std::string(label_text) + "' is not an integer", lineno);
    }
    if (label < 0) throw ParseError("negative label " + std::to_string(label), lineno);
    if (num_classes && static_cast<std::size_t>(label) >= *num_classes) {
      throw ParseError("label " + std::to_string(label) + " out of range for " +
                           std::to_string(*num_classes) + " classes",
                       lineno);
    }
    max_label = std::max(max_label, label);
    ds.examples.push_back({line.substr(0, tab), label});
  }
  if (ds.examples.empty()) throw ParseError("dataset '" + path.string() + "' has no rows", lineno);
  ds.num_classes = num_classes ? *num_classes : static_cast<std::size_t>(std::max(max_label + 1, 2));
  return ds;
}

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;

/// Token ↔ id table. Ids are line numbers of the vocab file; the first four
/// entries are always [PAD], [UNK], [CLS], [SEP].
class Vocab {
public:
  Vocab() : Vocab(std::vector<std::string>{}) {}

  /// `tokens` excludes the special tokens, which are prepended.
  explicit Vocab(const std::vector<std::string>& tokens) {
    for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(s, 0);
    std::size_t i = 0;
    for (const auto& t : tokens) add(t, ++i);
  }

  static Vocab load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocab file '" + path.string() + "'");
    static const char* kSpecials[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
    std::vector<std::string> rest;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (lineno <= 4) {
        if (line != kSpecials[lineno - 1]) {
          throw ParseError("expected special token " + std::string(kSpecials[lineno - 1]) +
                               ", found '" + line + "'",
                           lineno);
        }
        continue;
      }
      if (line.empty()) throw ParseError("empty vocab entry", lineno);
      rest.push_back(line);
    }
    if (lineno < 4) throw ParseError("vocab file is missing special tokens", lineno);
    try {
      return Vocab(rest);
    } catch (const ParseError& e) {
      throw ParseError(std::string("duplicate vocab entry: ") + e.what(), e.line() + 4);
    }
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocab file '" + path.string() + "'");
    for (const auto& t : tokens_) out << t << '\n';
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }

  std::optional<int> find(std::string_view token) const {
    const auto it = ids_.find(std::string(token));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

private:
  void add(const std::string& token, std::size_t index) {
    if (!ids_.emplace(token, static_cast<int>(tokens_.size())).second) {
      throw ParseError("token '" + token + "' appears twice", index);
    }
    tokens_.push_back(token);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

inline bool is_ascii_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
         (c >= 123 && c <= 126);
}

/// Whitespace split with ASCII punctuation broken out as separate words.
/// No case folding.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      cur.push_back(ch);
    }
  }
  flush();
  return words;
}

/// Greedy longest-match-first wordpieces; continuation pieces carry a "##"
/// prefix. A word that cannot be fully covered becomes a single [UNK].
inline std::vector<int> wordpiece(const Vocab& vocab, const std::string& word,
                                  std::size_t max_chars = 100) {
  if (word.size() > max_chars) return {kUnkId};
  std::vector<int> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::optional<int> hit;
    while (end > start) {
      std::string sub = word.substr(start, end - start);
      if (start > 0) sub = "##" + sub;
      if ((hit = vocab.find(sub))) break;
      --end;
    }
    if (!hit) return {kUnkId};
    pieces.push_back(*hit);
    start = end;
  }
  return pieces;
}

struct Encoded {
  std::vector<int> ids;
  std::vector<int> mask;

  friend bool operator==(const Encoded&, const Encoded&) = default;
};

/// [CLS] pieces… [SEP], truncated so the result fits `max_len`, then padded
/// with [PAD]. The mask is 1 on real tokens.
inline Encoded tokenize(const Vocab& vocab, std::string_view text, std::size_t max_len = 128) {
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  std::vector<int> pieces;
  for (const auto& w : split_words(text)) {
    const auto p = wordpiece(vocab, w);
    pieces.insert(pieces.end(), p.begin(), p.end());
  }
  if (pieces.size() > max_len - 2) pieces.resize(max_len - 2);
  Encoded e;
  e.ids.reserve(max_len);
  e.ids.push_back(kClsId);
  e.ids.insert(e.ids.end(), pieces.begin(), pieces.end());
  e.ids.push_back(kSepId);
  e.mask.assign(e.ids.size(), 1);
  e.ids.resize(max_len, kPadId);
  e.mask.resize(max_len, 0);
  return e;
}

/// Whole-word vocabulary (sorted) over every text in the given datasets.
inline Vocab build_vocab(std::initializer_list<const Dataset*> sets) {
  std::set<std::string> words;
  for (const Dataset* ds : sets) {
    for (const auto& ex : ds->examples) {
      for (auto& w : split_words(ex.text)) words.insert(std::move(w));
    }
  }
  std::vector<std::string> tokens;
  for (const auto& w : words) {
    if (w != "[PAD]" && w != "[UNK]" && w != "[CLS]" && w != "[SEP]") tokens.push_back(w);
  }
  return Vocab(tokens);
}

/// Tokenizes a list of examples into a fixed-width batch.
inline TokenBatch make_batch(const Vocab& vocab, const Dataset& ds,
                             std::span<const std::size_t> indices, std::size_t max_len) {
  TokenBatch b;
  b.batch = indices.size();
  b.seq = max_len;
  b.ids.reserve(b.batch * max_len);
  b.mask.reserve(b.batch * max_len);
  for (std::size_t i : indices) {
    auto e = tokenize(vocab, ds.examples.at(i).text, max_len);
    b.ids.insert(b.ids.end(), e.ids.begin(), e.ids.end());
    b.mask.insert(b.mask.end(), e.mask.begin(), e.mask.end());
  }
  return b;
}

/// Label-stratified subsample of floor(fraction·N) examples. Per-class quotas
/// use largest remainders (ties to the lower class id); members of each class
/// are chosen by a seeded shuffle. Output keeps the parent order.
inline Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  const std::size_t n = ds.size();
  const auto total = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));

  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    by_class.at(static_cast<std::size_t>(ds.examples[i].label)).push_back(i);
  }
  std::vector<std::size_t> quota(ds.num_classes);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    const double exact = static_cast<double>(by_class[c].size()) * static_cast<double>(total) /
                         static_cast<double>(n);
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - static_cast<double>(quota[c]), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i) {
    const std::size_t c = remainders[i].second;
    if (quota[c] < by_class[c].size()) {
      ++quota[c];
      ++assigned;
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    auto members = by_class[c];
    std::shuffle(members.begin(), members.end(), rng);
    members.resize(quota[c]);
    chosen.insert(chosen.end(), members.begin(), members.end());
  }
  std::sort(chosen.begin(), chosen.end());

  Dataset out;
  out.num_classes = ds.num_classes;
  out.split = ds.split;
  for (std::size_t i : chosen) out.examples.push_back(ds.examples[i]);
  return out;
}

namespace detail {
inline constexpr const char* kNoiseSyllables[] = {"ba", "ko", "ri", "mu", "te", "lo", "sa", "ne"};
inline constexpr const char* kKeySyllables[] = {"qa", "xe", "vi", "jo", "fu", "wy", "ze",
                                                "gu", "pi", "dy", "hu", "ci", "yo", "ro"};
inline constexpr std::size_t kKeywordsPerClass = 3;
inline constexpr std::size_t kNoiseWords = 40;
}  // namespace detail

/// Keyword sets of the synthetic task, one disjoint set per class. Noise
/// words never share a first syllable with a keyword.
inline std::vector<std::vector<std::string>> synth_keywords(std::size_t num_classes) {
  std::vector<std::vector<std::string>> out(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t j = 0; j < detail::kKeywordsPerClass; ++j) {
      out[c].push_back(std::string(detail::kKeySyllables[c]) +
                       detail::kNoiseSyllables[(c + 3 * j) % 8] + "n");
    }
  }
  return out;
}

inline std::vector<std::string> synth_noise_words() {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < detail::kNoiseWords; ++i) {
    out.push_back(std::string(detail::kNoiseSyllables[i / 8 % 8]) +
                  detail::kNoiseSyllables[i % 8] + detail::kNoiseSyllables[(i * 3 + 1) % 8]);
  }
  return out;
}

/// Separable keyword-spotting corpus: each text is 4–10 noise words with one
/// or two keywords of its class inserted at random positions. Classes are
/// balanced (the remainder goes to the lowest ids) and the order is shuffled.
inline Dataset synth_generate(std::size_t num_examples, std::size_t num_classes,
                              std::uint64_t seed, std::string split = "train") {
  if (num_classes < 2 || num_classes > 14) {
    throw ConfigError("synth num_classes must be in [2, 14], got " + std::to_string(num_classes));
  }
  const auto keywords = synth_keywords(num_classes);
  const auto noise = synth_noise_words();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len_dist(4, 10);
  std::uniform_int_distribution<std::size_t> kw_count(1, 2);
  std::uniform_int_distribution<std::size_t> noise_pick(0, noise.size() - 1);
  std::uniform_int_distribution<std::size_t> kw_pick(0, detail::kKeywordsPerClass - 1);

  Dataset ds;
  ds.num_classes = num_classes;
  ds.split = std::move(split);
  for (std::size_t i = 0; i < num_examples; ++i) {
    const std::size_t label = i % num_classes;
    std::vector<std::string> words(len_dist(rng));
    for (auto& w : words) w = noise[noise_pick(rng)];
    const std::size_t k = kw_count(rng);
    for (std::size_t j = 0; j < k; ++j) {
      std::uniform_int_distribution<std::size_t> pos(0, words.size());
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos(rng)),
                   keywords[label][kw_pick(rng)]);
    }
    std::string text;
    for (const auto& w : words) {
      if (!text.empty()) text += ' ';
      text += w;
    }
    ds.examples.push_back({std::move(text), static_cast<int>(label)});
  }
  std::shuffle(ds.examples.begin(), ds.examples.end(), rng);
  return ds;
}

}  // namespace qffn
