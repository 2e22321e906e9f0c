#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "attnscope/error.hpp"

namespace attnscope {

using TokenId = std::size_t;

enum class Segment { A, B, SPECIAL };

inline std::string_view segment_name(Segment s) {
  switch (s) {
    case Segment::A: return "A";
    case Segment::B: return "B";
    case Segment::SPECIAL: return "SPECIAL";
  }
  return "?";
}

enum class SpecialRole { CLS, SEP, NULL_TOKEN };

inline std::string_view special_role_name(SpecialRole r) {
  switch (r) {
    case SpecialRole::CLS: return "CLS";
    case SpecialRole::SEP: return "SEP";
    case SpecialRole::NULL_TOKEN: return "NULL";
  }
  return "?";
}

inline std::optional<SpecialRole> parse_special_role(std::string_view s) {
  if (s == "CLS") return SpecialRole::CLS;
  if (s == "SEP") return SpecialRole::SEP;
  if (s == "NULL") return SpecialRole::NULL_TOKEN;
  return std::nullopt;
}

/// Word-level vocabulary. Immutable once constructed.
class Vocab {
 public:
  Vocab() = default;

  Vocab(std::vector<std::string> entries, TokenId unk_id,
        std::map<SpecialRole, TokenId> special = {}, bool lowercase = false)
      : entries_(std::move(entries)),
        unk_id_(unk_id),
        special_(std::move(special)),
        lowercase_(lowercase) {
    if (entries_.empty()) throw TokenizerError(ErrorCode::invalid_vocab, "vocab is empty");
    for (TokenId i = 0; i < entries_.size(); ++i) {
      auto [it, inserted] = id_of_.emplace(entries_[i], i);
      if (!inserted) {
        throw TokenizerError(ErrorCode::invalid_vocab,
                             "duplicate vocab entry '" + entries_[i] + "'");
      }
    }
    if (unk_id_ >= entries_.size()) {
      throw TokenizerError(ErrorCode::invalid_vocab, "unk_id out of range");
    }
    for (const auto& [role, id] : special_) {
      if (id >= entries_.size()) {
        throw TokenizerError(ErrorCode::invalid_vocab,
                             "special id for " + std::string(special_role_name(role)) +
                                 " out of range");
      }
    }
  }

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<std::string>& entries() const noexcept { return entries_; }
  TokenId unk_id() const noexcept { return unk_id_; }
  bool lowercase() const noexcept { return lowercase_; }
  const std::map<SpecialRole, TokenId>& special() const noexcept { return special_; }

  std::optional<TokenId> special_id(SpecialRole role) const {
    auto it = special_.find(role);
    if (it == special_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<TokenId> find(const std::string& word) const {
    auto it = id_of_.find(word);
    if (it == id_of_.end()) return std::nullopt;
    return it->second;
  }

  /// Lookup applying the lowercase policy, falling back to unk_id.
  TokenId id_of(std::string_view word) const {
    std::string key(word);
    if (lowercase_) {
      std::transform(key.begin(), key.end(), key.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    }
    return find(key).value_or(unk_id_);
  }

  const std::string& token(TokenId id) const {
    if (id >= entries_.size()) {
      throw TokenizerError(ErrorCode::invalid_id, "token id " + std::to_string(id) +
                                                      " out of range for vocab of size " +
                                                      std::to_string(entries_.size()));
    }
    return entries_[id];
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.entries_ == b.entries_ && a.unk_id_ == b.unk_id_ &&
           a.special_ == b.special_ && a.lowercase_ == b.lowercase_;
  }

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, TokenId> id_of_;
  TokenId unk_id_ = 0;
  std::map<SpecialRole, TokenId> special_;
  bool lowercase_ = false;
};

struct TokenSeq {
  std::vector<TokenId> ids;
  std::vector<std::string> display;
  std::vector<Segment> segment;
  std::optional<std::size_t> sentence_b_start;

  std::size_t size() const noexcept { return ids.size(); }

  void push_back(TokenId id, std::string text, Segment seg) {
    ids.push_back(id);
    display.push_back(std::move(text));
    segment.push_back(seg);
  }

  /// Throws if the structural invariants do not hold.
  void validate() const {
    if (ids.empty() || ids.size() != display.size() || ids.size() != segment.size()) {
      throw TokenizerError(ErrorCode::invalid_argument,
                           "token sequence must be non-empty with parallel fields");
    }
    if (sentence_b_start) {
      for (std::size_t i = 0; i < segment.size(); ++i) {
        if (segment[i] == Segment::B && i < *sentence_b_start) {
          throw TokenizerError(ErrorCode::invalid_argument,
                               "B token before sentence_b_start");
        }
      }
    }
  }

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

namespace detail {

inline bool is_split_punct(char c) {
  static constexpr std::string_view kPunct = ".,!?\"'();:";
  return kPunct.find(c) != std::string_view::npos;
}

/// Whitespace split, then punctuation characters detached as their own words.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_split_punct(c)) {
      flush();
      words.emplace_back(1, c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return words;
}

inline void append_words(TokenSeq& seq, std::string_view text, const Vocab& vocab,
                         Segment seg) {
  for (auto& w : split_words(text)) {
    const TokenId id = vocab.id_of(w);
    seq.push_back(id, std::move(w), seg);
  }
}

}  // namespace detail

inline TokenSeq encode(std::string_view text, const Vocab& vocab) {
  TokenSeq seq;
  detail::append_words(seq, text, vocab, Segment::A);
  if (seq.size() == 0) throw TokenizerError(ErrorCode::empty_input, "input text is empty");
  return seq;
}

/// [CLS] A-tokens [SEP] B-tokens [SEP]
inline TokenSeq encode_pair(std::string_view sentence_a, std::string_view sentence_b,
                            const Vocab& vocab) {
  const auto cls = vocab.special_id(SpecialRole::CLS);
  const auto sep = vocab.special_id(SpecialRole::SEP);
  if (!cls || !sep) {
    throw TokenizerError(ErrorCode::vocab_capability,
                         "sentence pairs need CLS and SEP specials in the vocab");
  }
  TokenSeq a;
  detail::append_words(a, sentence_a, vocab, Segment::A);
  TokenSeq b;
  detail::append_words(b, sentence_b, vocab, Segment::B);
  if (a.size() == 0 || b.size() == 0) {
    throw TokenizerError(ErrorCode::empty_input, "both sentences must be non-empty");
  }

  TokenSeq seq;
  seq.push_back(*cls, vocab.token(*cls), Segment::SPECIAL);
  for (std::size_t i = 0; i < a.size(); ++i) seq.push_back(a.ids[i], a.display[i], Segment::A);
  seq.push_back(*sep, vocab.token(*sep), Segment::SPECIAL);
  seq.sentence_b_start = seq.size();
  for (std::size_t i = 0; i < b.size(); ++i) seq.push_back(b.ids[i], b.display[i], Segment::B);
  seq.push_back(*sep, vocab.token(*sep), Segment::SPECIAL);
  return seq;
}

/// [CLS] tokens [SEP]: single-sentence input framing for encoder models.
inline TokenSeq encode_single_framed(std::string_view text, const Vocab& vocab) {
  const auto cls = vocab.special_id(SpecialRole::CLS);
  const auto sep = vocab.special_id(SpecialRole::SEP);
  if (!cls || !sep) {
    throw TokenizerError(ErrorCode::vocab_capability,
                         "encoder input framing needs CLS and SEP specials in the vocab");
  }
  TokenSeq body = encode(text, vocab);
  TokenSeq seq;
  seq.push_back(*cls, vocab.token(*cls), Segment::SPECIAL);
  for (std::size_t i = 0; i < body.size(); ++i)
    seq.push_back(body.ids[i], body.display[i], Segment::A);
  seq.push_back(*sep, vocab.token(*sep), Segment::SPECIAL);
  return seq;
}

/// Vocab strings joined by single spaces. Punctuation is not re-attached.
inline std::string decode(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += vocab.token(ids[i]);
  }
  return out;
}

/// Small built-in word vocabulary covering the demo sentences. Used when no
/// vocab file is supplied.
inline Vocab default_vocab(bool lowercase) {
  std::vector<std::string> entries = {"[UNK]", "[CLS]", "[SEP]", "[NULL]"};
  static constexpr std::string_view kWords[] = {
      "the", "a", "an", "quick", "brown", "fox", "jumps", "over", "lazy", "dog",
      "cat", "sat", "lay", "on", "mat", "rug", "doctor", "asked", "nurse", "question",
      "she", "he", "said", "her", "him", "if", "ever", "had", "heart", "attack",
      "i", "m", "not", "sure", "what", "you", "re", "talking", "about", "is",
      "was", "and", "of", "to", "in", "it", "that", "for", "with", "as",
      "at", "by", "from", "this", "be", "are", "were", "has", "have", "do",
      ".", ",", "!", "?", "\"", "'", "(", ")", ";", ":"};
  for (auto w : kWords) entries.emplace_back(w);
  if (!lowercase) {
    // Cased vocabularies also carry sentence-initial capitalized forms.
    static constexpr std::string_view kCased[] = {"The", "A", "She", "He", "I", "It", "This"};
    for (auto w : kCased) entries.emplace_back(w);
  }
  return Vocab(std::move(entries), 0,
               {{SpecialRole::CLS, 1}, {SpecialRole::SEP, 2}, {SpecialRole::NULL_TOKEN, 3}},
               lowercase);
}

}  // namespace attnscope
