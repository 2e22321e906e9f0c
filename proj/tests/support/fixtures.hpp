#pragma once

// Shared fixtures and brute-force oracles for the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "attnscope/attnscope.hpp"
#include "reference_forward.hpp"

namespace attnscope::testing {

inline Vocab tiny_vocab(std::size_t size = 11) {
  std::vector<std::string> entries = {"[UNK]", "[CLS]", "[SEP]"};
  for (std::size_t i = entries.size(); i < size; ++i) entries.push_back("w" + std::to_string(i));
  return Vocab(entries, 0, {{SpecialRole::CLS, 1}, {SpecialRole::SEP, 2}}, false);
}

/// 2 layers, 2 heads, d_model 8, d_head 4.
inline ModelConfig tiny_config(Architecture arch, std::size_t vocab_size = 11) {
  ModelConfig c;
  c.architecture = arch;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_head = 4;
  c.d_model = 8;
  c.d_ff = 16;
  c.vocab_size = vocab_size;
  c.max_positions = 32;
  c.n_segments = arch == Architecture::DECODER_ONLY ? 0 : 2;
  return c;
}

/// Random token sequence of length n. Encoder inputs get the
/// [CLS] A.. [SEP] B.. [SEP] layout (n >= 5).
inline TokenSeq random_input(std::mt19937_64& rng, const ModelConfig& c, std::size_t n) {
  std::uniform_int_distribution<std::size_t> word(3, c.vocab_size - 1);
  TokenSeq t;
  if (c.is_decoder()) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto id = word(rng);
      t.push_back(id, "w" + std::to_string(id), Segment::A);
    }
    return t;
  }
  if (n < 5) throw std::invalid_argument("encoder pair input needs n >= 5");
  const std::size_t body = n - 3;
  const std::size_t a_len = 1 + std::uniform_int_distribution<std::size_t>(0, body - 2)(rng);
  t.push_back(1, "[CLS]", Segment::SPECIAL);
  for (std::size_t i = 0; i < a_len; ++i) {
    const auto id = word(rng);
    t.push_back(id, "w" + std::to_string(id), Segment::A);
  }
  t.push_back(2, "[SEP]", Segment::SPECIAL);
  t.sentence_b_start = t.size();
  for (std::size_t i = a_len; i < body; ++i) {
    const auto id = word(rng);
    t.push_back(id, "w" + std::to_string(id), Segment::B);
  }
  t.push_back(2, "[SEP]", Segment::SPECIAL);
  return t;
}

inline double max_abs_diff(const Matrix& m, const Mat& ref) {
  double d = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) d = std::max(d, std::abs(m(i, j) - ref[i][j]));
  return d;
}

/// Largest elementwise deviation between the engine trace and the naive reference.
inline double trace_vs_reference(const AttentionTrace& trace, const ReferenceResult& ref) {
  double d = 0.0;
  for (std::size_t k = 0; k < trace.heads.size(); ++k) {
    d = std::max({d, max_abs_diff(trace.heads[k].query, ref.heads[k].q),
                  max_abs_diff(trace.heads[k].key, ref.heads[k].k),
                  max_abs_diff(trace.heads[k].attention, ref.heads[k].a)});
  }
  return d;
}

/// Random row-stochastic matrix; causal zeroes everything above the diagonal.
inline Matrix random_attention(std::mt19937_64& rng, std::size_t n, bool causal) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t limit = causal ? i + 1 : n;
    double s = 0.0;
    for (std::size_t j = 0; j < limit; ++j) s += a(i, j) = u(rng);
    for (std::size_t j = 0; j < limit; ++j) a(i, j) /= s;
  }
  return a;
}

/// Single-layer trace built from explicit attention matrices (one per head).
/// Queries and keys default to zeros of width d_head.
inline AttentionTrace synthetic_trace(Architecture arch, const std::vector<Matrix>& attention,
                                      std::size_t d_head = 4) {
  const std::size_t n = attention.front().rows();
  AttentionTrace t;
  t.config = tiny_config(arch);
  t.config.n_layers = 1;
  t.config.n_heads = attention.size();
  t.config.d_head = d_head;
  t.config.d_model = d_head * attention.size();
  for (std::size_t i = 0; i < n; ++i) t.tokens.push_back(3, "w" + std::to_string(i), Segment::A);
  for (const auto& a : attention) t.heads.push_back({Matrix(n, d_head), Matrix(n, d_head), a});
  return t;
}

inline Matrix uniform_attention(std::size_t n, bool causal) {
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t limit = causal ? i + 1 : n;
    for (std::size_t j = 0; j < limit; ++j) a(i, j) = 1.0 / static_cast<double>(limit);
  }
  return a;
}

/// Row 0 attends to itself; every other row puts all mass on token 0.
inline Matrix null_attention(std::size_t n) {
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) a(i, 0) = 1.0;
  return a;
}

/// Row 0 attends to itself; row i attends only to i - 1.
inline Matrix previous_token_attention(std::size_t n) {
  Matrix a(n, n);
  a(0, 0) = 1.0;
  for (std::size_t i = 1; i < n; ++i) a(i, i - 1) = 1.0;
  return a;
}

/// A[i][j] = c * exp(-rate * (i - j)) for 1 <= j <= i, remainder parked on token 0.
inline Matrix exp_decay_attention(std::size_t n, double rate, double c = 0.3) {
  Matrix a(n, n);
  a(0, 0) = 1.0;
  for (std::size_t i = 1; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 1; j <= i; ++j) s += a(i, j) = c * std::exp(-rate * static_cast<double>(i - j));
    a(i, 0) = 1.0 - s;
  }
  return a;
}

// ------------------------------------------------------- brute-force oracles

inline double bf_null_ratio(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 1; i < a.rows(); ++i) s += a(i, 0);
  return s / static_cast<double>(a.rows() - 1);
}

inline double bf_offset(const Matrix& a, int offset) {
  std::vector<double> vals;
  const int n = static_cast<int>(a.rows());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (j - i == offset) vals.push_back(a(i, j));
  double s = 0.0;
  for (double v : vals) s += v;
  return s / static_cast<double>(vals.size());
}

/// Means by distance via enumeration of all (i, j) pairs, grouped after the fact.
inline std::vector<std::pair<std::size_t, double>> bf_decay_means(const Matrix& a, bool exclude_first) {
  std::vector<std::tuple<std::size_t, double>> pairs;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (!(exclude_first && j == 0)) pairs.emplace_back(i - j, a(i, j));
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t d = 1; d < a.rows(); ++d) {
    double s = 0.0;
    std::size_t c = 0;
    for (const auto& [dist, v] : pairs)
      if (dist == d) s += v, ++c;
    if (c > 0) out.emplace_back(d, s / static_cast<double>(c));
  }
  return out;
}

/// Closed-form regression slope through sums of products.
inline double bf_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Pearson via raw moments.
inline double bf_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
  }
  const double den = std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
  return den == 0.0 ? 0.0 : (n * sxy - sx * sy) / den;
}

using EdgeKey = std::tuple<std::size_t, std::size_t, std::size_t>;  // head, from, to

/// Every (head, i, j) passing the sentence filter at weight > min_weight.
inline std::set<EdgeKey> bf_sentence_edges(const AttentionTrace& t, std::size_t layer,
                                           const std::vector<std::size_t>& heads,
                                           SentenceFilter f, double min_weight) {
  auto seg_ok = [&](std::size_t i, std::size_t j) {
    const Segment si = t.tokens.segment[i], sj = t.tokens.segment[j];
    switch (f) {
      case SentenceFilter::ALL: return true;
      case SentenceFilter::A_TO_A: return si == Segment::A && sj == Segment::A;
      case SentenceFilter::A_TO_B: return si == Segment::A && sj == Segment::B;
      case SentenceFilter::B_TO_A: return si == Segment::B && sj == Segment::A;
      case SentenceFilter::B_TO_B: return si == Segment::B && sj == Segment::B;
    }
    return false;
  };
  std::set<EdgeKey> out;
  for (std::size_t h : heads)
    for (std::size_t i = 0; i < t.seq_len(); ++i)
      for (std::size_t j = 0; j < t.seq_len(); ++j)
        if (t.at(layer, h).attention(i, j) > min_weight && seg_ok(i, j)) out.emplace(h, i, j);
  return out;
}

inline std::set<EdgeKey> edge_set(const HeadViewData& v) {
  std::set<EdgeKey> out;
  for (const auto& e : v.edges) out.emplace(e.head, e.from, e.to);
  return out;
}

struct TinyModel {
  ModelConfig config;
  Weights weights;
};

inline TinyModel tiny_model(Architecture arch, std::uint64_t seed) {
  TinyModel m{tiny_config(arch), {}};
  m.weights = init_random(m.config, seed);
  return m;
}

/// Decoder weights whose LM head always prefers `token`: the final norm
/// outputs a constant unit vector e_0, and only `token`'s embedding has a
/// positive first component.
inline TinyModel constant_logit_model(std::size_t token, std::uint64_t seed = 3) {
  TinyModel m = tiny_model(Architecture::DECODER_ONLY, seed);
  for (double& v : m.weights.final_ln_gamma.data()) v = 0.0;
  for (double& v : m.weights.final_ln_beta.data()) v = 0.0;
  m.weights.final_ln_beta(0, 0) = 1.0;
  for (std::size_t v = 0; v < m.config.vocab_size; ++v) m.weights.token_embedding(v, 0) = 0.0;
  m.weights.token_embedding(token, 0) = 1.0;
  return m;
}

}  // namespace attnscope::testing
