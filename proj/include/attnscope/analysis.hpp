#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "attnscope/error.hpp"
#include "attnscope/transformer.hpp"

namespace attnscope {

enum class HeadLabel { FIRST_TOKEN_NULL, PREV_TOKEN, SELF, DISPERSED, DECAY, OTHER };

inline std::string_view head_label_name(HeadLabel l) {
  switch (l) {
    case HeadLabel::FIRST_TOKEN_NULL: return "first_token_null";
    case HeadLabel::PREV_TOKEN: return "prev_token";
    case HeadLabel::SELF: return "self";
    case HeadLabel::DISPERSED: return "dispersed";
    case HeadLabel::DECAY: return "decay";
    case HeadLabel::OTHER: return "other";
  }
  return "?";
}

/// Calibration constants for classify_head. These are tuning choices, not
/// measured quantities.
struct ClassifierThresholds {
  double null_ratio = 0.8;
  double prev_token = 0.7;
  double self = 0.7;
  double decay_monotonicity = 0.9;
  double decay_rate = -0.05;
  double uniformity = 0.9;
};

struct DecayPoint {
  std::size_t distance = 0;
  double mean = 0.0;
};

struct DecayProfile {
  bool exclude_first = true;
  std::vector<DecayPoint> profile;  // ascending distance, distances with >= 1 pair
  double fitted_rate = 0.0;        // slope of ln m(d) against d
  double monotonicity = 0.0;       // fraction of adjacent pairs with m(d+1) <= m(d)
  bool degenerate = false;         // fewer than two positive means: no fit
};

struct HeadPatternReport {
  std::size_t layer = 0;
  std::size_t head = 0;
  double null_ratio = 0.0;
  std::map<int, double> offset_scores;
  double self_score = 0.0;
  double uniformity = 0.0;
  std::optional<DecayProfile> decay;
  HeadLabel label = HeadLabel::OTHER;
};

struct BiasCandidate {
  std::size_t token_index = 0;
  double attention = 0.0;
};

struct BiasProbeResult {
  std::size_t pronoun_index = 0;
  std::vector<BiasCandidate> candidates;
  std::size_t preferred = 0;
  double margin = 0.0;
};

struct NeuronAttribution {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t selected_token = 0;
  std::vector<double> correlation;  // per neuron, in [-1, 1]
  std::vector<std::size_t> ranked;  // by |correlation| descending, ties by index
};

/// Mean over query positions i >= 1 of A[i][0].
inline double null_attention_ratio(const AttentionTrace& trace, std::size_t layer,
                                   std::size_t head) {
  const Matrix& a = trace.at(layer, head).attention;
  const std::size_t n = trace.seq_len();
  if (n < 2) {
    throw AnalysisError(ErrorCode::insufficient_length,
                        "null attention ratio needs at least 2 tokens");
  }
  double sum = 0.0;
  for (std::size_t i = 1; i < n; ++i) sum += a(i, 0);
  return sum / static_cast<double>(n - 1);
}

/// Mean of A[i][i + offset] over every i where the target exists.
inline double offset_score(const AttentionTrace& trace, std::size_t layer, std::size_t head,
                           int offset) {
  const Matrix& a = trace.at(layer, head).attention;
  const auto n = static_cast<long>(trace.seq_len());
  if (std::abs(static_cast<long>(offset)) >= n) {
    throw AnalysisError(ErrorCode::out_of_range, "offset " + std::to_string(offset) +
                                                     " out of range for " + std::to_string(n) +
                                                     " tokens");
  }
  double sum = 0.0;
  long count = 0;
  for (long i = 0; i < n; ++i) {
    const long j = i + offset;
    if (j < 0 || j >= n) continue;
    sum += a(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    ++count;
  }
  return sum / static_cast<double>(count);
}

/// Least-squares slope of ys against xs. Requires xs.size() >= 2 and non-constant xs.
inline double least_squares_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

/// Pearson correlation; 0 when either series has zero variance.
inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto [xmin, xmax] = std::minmax_element(xs.begin(), xs.end());
  const auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
  if (xs.size() < 2 || *xmin == *xmax || *ymin == *ymax) return 0.0;
  const auto n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Slack for treating equal means (up to rounding) as non-increasing.
inline constexpr double kMonotonicityTolerance = 1e-12;

/// Mean attention m(d) as a function of backward distance d = i - j >= 1.
/// Target 0 is dropped when `exclude_first` (it acts as a null position).
inline DecayProfile distance_decay_profile(const AttentionTrace& trace, std::size_t layer,
                                           std::size_t head, bool exclude_first = true) {
  if (!trace.config.is_decoder()) {
    throw AnalysisError(ErrorCode::unsupported_operation,
                        "distance decay is only defined for decoder traces");
  }
  const std::size_t n = trace.seq_len();
  if (n < 4) {
    throw AnalysisError(ErrorCode::insufficient_length, "distance decay needs at least 4 tokens");
  }
  const Matrix& a = trace.at(layer, head).attention;
  const std::size_t first_target = exclude_first ? 1 : 0;

  DecayProfile out;
  out.exclude_first = exclude_first;
  for (std::size_t d = 1; d < n; ++d) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = d; i < n; ++i) {
      const std::size_t j = i - d;
      if (j < first_target) continue;
      sum += a(i, j);
      ++count;
    }
    if (count > 0) out.profile.push_back({d, sum / static_cast<double>(count)});
  }

  std::size_t pairs = 0, monotone = 0;
  for (std::size_t k = 0; k + 1 < out.profile.size(); ++k) {
    ++pairs;
    if (out.profile[k + 1].mean <= out.profile[k].mean + kMonotonicityTolerance) ++monotone;
  }
  out.monotonicity = pairs == 0 ? 0.0 : static_cast<double>(monotone) / static_cast<double>(pairs);

  std::vector<double> xs, ys;
  for (const auto& p : out.profile) {
    if (p.mean > 0.0) {
      xs.push_back(static_cast<double>(p.distance));
      ys.push_back(std::log(p.mean));
    }
  }
  if (xs.size() < 2) {
    out.degenerate = true;
    out.fitted_rate = 0.0;
  } else {
    out.fitted_rate = least_squares_slope(xs, ys);
  }
  return out;
}

/// Correlates each neuron's q*k product with distance from the selected token
/// over targets 1..selected_token.
inline NeuronAttribution neuron_decay_attribution(const AttentionTrace& trace, std::size_t layer,
                                                  std::size_t head, std::size_t selected_token) {
  if (!trace.config.is_decoder()) {
    throw AnalysisError(ErrorCode::unsupported_operation,
                        "neuron decay attribution is only defined for decoder traces");
  }
  const HeadCapture& cap = trace.at(layer, head);
  if (selected_token >= trace.seq_len()) {
    throw AnalysisError(ErrorCode::out_of_range, "selected token out of range");
  }
  if (selected_token < 3) {
    throw AnalysisError(ErrorCode::insufficient_length,
                        "attribution needs selected_token >= 3 (at least 3 targets)");
  }
  const std::size_t dh = trace.config.d_head;
  auto q = cap.query.row(selected_token);

  NeuronAttribution out;
  out.layer = layer;
  out.head = head;
  out.selected_token = selected_token;
  out.correlation.resize(dh);

  std::vector<double> distance;
  for (std::size_t j = 1; j <= selected_token; ++j)
    distance.push_back(static_cast<double>(selected_token - j));
  for (std::size_t n = 0; n < dh; ++n) {
    std::vector<double> product;
    for (std::size_t j = 1; j <= selected_token; ++j) product.push_back(q[n] * cap.key(j, n));
    out.correlation[n] = pearson(product, distance);
  }
  out.ranked.resize(dh);
  std::iota(out.ranked.begin(), out.ranked.end(), std::size_t{0});
  std::stable_sort(out.ranked.begin(), out.ranked.end(), [&](std::size_t x, std::size_t y) {
    return std::abs(out.correlation[x]) > std::abs(out.correlation[y]);
  });
  return out;
}

/// Reads the pronoun's attention over the candidate antecedents.
inline BiasProbeResult coreference_probe(const AttentionTrace& trace, std::size_t layer,
                                         std::size_t head, std::size_t pronoun_index,
                                         const std::vector<std::size_t>& candidate_indices) {
  const Matrix& a = trace.at(layer, head).attention;
  const std::size_t n = trace.seq_len();
  if (candidate_indices.empty()) {
    throw AnalysisError(ErrorCode::invalid_argument, "at least one candidate required");
  }
  if (pronoun_index >= n) throw AnalysisError(ErrorCode::out_of_range, "pronoun index out of range");
  BiasProbeResult out;
  out.pronoun_index = pronoun_index;
  for (std::size_t c : candidate_indices) {
    if (c >= n) throw AnalysisError(ErrorCode::out_of_range, "candidate index out of range");
    if (trace.config.is_decoder() && c > pronoun_index) {
      throw AnalysisError(ErrorCode::masked_candidate,
                          "candidate " + std::to_string(c) + " is masked for pronoun " +
                              std::to_string(pronoun_index));
    }
    out.candidates.push_back({c, a(pronoun_index, c)});
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < out.candidates.size(); ++k) {
    const auto& c = out.candidates[k];
    const auto& b = out.candidates[best];
    if (c.attention > b.attention ||
        (c.attention == b.attention && c.token_index < b.token_index)) {
      best = k;
    }
  }
  out.preferred = out.candidates[best].token_index;
  double runner_up = -1.0;
  for (std::size_t k = 0; k < out.candidates.size(); ++k) {
    if (k != best) runner_up = std::max(runner_up, out.candidates[k].attention);
  }
  out.margin = runner_up < 0.0 ? 0.0 : out.candidates[best].attention - runner_up;
  return out;
}

/// Mean normalized entropy of the attention rows that have at least two
/// attendable targets. 1 means perfectly uniform attention.
inline double attention_uniformity(const AttentionTrace& trace, std::size_t layer,
                                   std::size_t head) {
  const Matrix& a = trace.at(layer, head).attention;
  const std::size_t n = trace.seq_len();
  double sum = 0.0;
  std::size_t rows = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = trace.config.is_decoder() ? i + 1 : n;
    if (k < 2) continue;
    double h = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = a(i, j);
      if (p > 0.0) h -= p * std::log(p);
    }
    sum += std::clamp(h / std::log(static_cast<double>(k)), 0.0, 1.0);
    ++rows;
  }
  return rows == 0 ? 0.0 : sum / static_cast<double>(rows);
}

/// First matching rule wins: null, previous token, self, decay, dispersed.
inline HeadLabel classify_head(const HeadPatternReport& r,
                               const ClassifierThresholds& t = {}) {
  auto offset = [&](int o) {
    auto it = r.offset_scores.find(o);
    return it == r.offset_scores.end() ? 0.0 : it->second;
  };
  if (r.null_ratio > t.null_ratio) return HeadLabel::FIRST_TOKEN_NULL;
  if (offset(-1) > t.prev_token) return HeadLabel::PREV_TOKEN;
  if (offset(0) > t.self) return HeadLabel::SELF;
  if (r.decay && !r.decay->degenerate && r.decay->monotonicity > t.decay_monotonicity &&
      r.decay->fitted_rate < t.decay_rate) {
    return HeadLabel::DECAY;
  }
  if (r.uniformity > t.uniformity) return HeadLabel::DISPERSED;
  return HeadLabel::OTHER;
}

/// Relative offsets reported in offset_scores: -3..3, clipped to the sequence.
inline constexpr int kReportedOffsetSpan = 3;

inline HeadPatternReport analyze_head(const AttentionTrace& trace, std::size_t layer,
                                      std::size_t head, const ClassifierThresholds& t = {}) {
  trace.check_indices(layer, head);
  const auto n = static_cast<int>(trace.seq_len());
  HeadPatternReport r;
  r.layer = layer;
  r.head = head;
  r.null_ratio = n >= 2 ? null_attention_ratio(trace, layer, head) : 0.0;
  const int span = std::min(kReportedOffsetSpan, n - 1);
  for (int o = -span; o <= span; ++o) r.offset_scores[o] = offset_score(trace, layer, head, o);
  r.self_score = r.offset_scores.at(0);
  r.uniformity = attention_uniformity(trace, layer, head);
  if (trace.config.is_decoder() && n >= 4) r.decay = distance_decay_profile(trace, layer, head);
  r.label = classify_head(r, t);
  return r;
}

/// One report per (layer, head), layer-major.
inline std::vector<HeadPatternReport> analyze_all_heads(const AttentionTrace& trace,
                                                        const ClassifierThresholds& t = {}) {
  std::vector<HeadPatternReport> out;
  for (std::size_t l = 0; l < trace.config.n_layers; ++l)
    for (std::size_t h = 0; h < trace.config.n_heads; ++h) out.push_back(analyze_head(trace, l, h, t));
  return out;
}

}  // namespace attnscope
