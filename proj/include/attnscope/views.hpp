#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "attnscope/error.hpp"
#include "attnscope/tensor.hpp"
#include "attnscope/transformer.hpp"

namespace attnscope {

enum class Direction { FROM_SELECTED, TO_SELECTED, BOTH };
enum class SentenceFilter { ALL, A_TO_A, A_TO_B, B_TO_A, B_TO_B };

inline std::string_view direction_name(Direction d) {
  switch (d) {
    case Direction::FROM_SELECTED: return "from_selected";
    case Direction::TO_SELECTED: return "to_selected";
    case Direction::BOTH: return "both";
  }
  return "?";
}

inline std::optional<Direction> parse_direction(std::string_view s) {
  if (s == "from_selected" || s == "from") return Direction::FROM_SELECTED;
  if (s == "to_selected" || s == "to") return Direction::TO_SELECTED;
  if (s == "both") return Direction::BOTH;
  return std::nullopt;
}

inline std::string_view sentence_filter_name(SentenceFilter f) {
  switch (f) {
    case SentenceFilter::ALL: return "all";
    case SentenceFilter::A_TO_A: return "a_to_a";
    case SentenceFilter::A_TO_B: return "a_to_b";
    case SentenceFilter::B_TO_A: return "b_to_a";
    case SentenceFilter::B_TO_B: return "b_to_b";
  }
  return "?";
}

inline std::optional<SentenceFilter> parse_sentence_filter(std::string_view s) {
  if (s == "all") return SentenceFilter::ALL;
  if (s == "a_to_a") return SentenceFilter::A_TO_A;
  if (s == "a_to_b") return SentenceFilter::A_TO_B;
  if (s == "b_to_a") return SentenceFilter::B_TO_A;
  if (s == "b_to_b") return SentenceFilter::B_TO_B;
  return std::nullopt;
}

inline constexpr double kDefaultMinWeight = 0.001;
inline constexpr std::size_t kDefaultThumbnailResolution = 20;

struct FilterSpec {
  std::optional<std::size_t> selected_token;
  Direction direction = Direction::FROM_SELECTED;
  SentenceFilter sentence_filter = SentenceFilter::ALL;
  double min_weight = kDefaultMinWeight;
};

struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
  std::size_t head = 0;
  double weight = 0.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

struct HeadViewData {
  std::vector<std::string> tokens;
  std::vector<Segment> segments;
  std::optional<std::size_t> sentence_b_start;
  std::size_t layer = 0;
  std::vector<std::size_t> heads;
  FilterSpec filter;
  std::vector<Edge> edges;
  std::optional<std::vector<double>> target_shading;
};

struct Thumbnail {
  std::size_t layer = 0;
  std::size_t head = 0;
  Matrix values;  // resolution x resolution, max-pooled attention
  double max_weight = 0.0;
};

struct ModelViewData {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t seq_len = 0;
  std::size_t resolution = 0;  // effective: min(requested, seq_len)
  std::vector<Thumbnail> thumbnails;  // layer-major

  const Thumbnail& at(std::size_t layer, std::size_t head) const {
    return thumbnails.at(layer * n_heads + head);
  }
};

struct NeuronTarget {
  std::size_t index = 0;
  std::vector<double> key;
  std::vector<double> elementwise;
  double dot = 0.0;
  double scaled_dot = 0.0;
  double attention = 0.0;
};

struct NeuronViewData {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t selected_token = 0;
  std::vector<std::string> tokens;
  std::vector<double> query;
  std::vector<NeuronTarget> targets;
  double norm_scale = 0.0;
};

/// Whether the segment pair (from, to) passes `filter`. SPECIAL tokens never
/// pass an active sentence filter.
inline bool sentence_filter_accepts(SentenceFilter filter, Segment from, Segment to) {
  switch (filter) {
    case SentenceFilter::ALL: return true;
    case SentenceFilter::A_TO_A: return from == Segment::A && to == Segment::A;
    case SentenceFilter::A_TO_B: return from == Segment::A && to == Segment::B;
    case SentenceFilter::B_TO_A: return from == Segment::B && to == Segment::A;
    case SentenceFilter::B_TO_B: return from == Segment::B && to == Segment::B;
  }
  return false;
}

inline bool direction_accepts(const FilterSpec& filter, std::size_t from, std::size_t to) {
  if (!filter.selected_token) return true;
  const std::size_t s = *filter.selected_token;
  switch (filter.direction) {
    case Direction::FROM_SELECTED: return from == s;
    case Direction::TO_SELECTED: return to == s;
    case Direction::BOTH: return from == s || to == s;
  }
  return false;
}

inline void validate_filter(const AttentionTrace& trace, const FilterSpec& filter) {
  if (!(filter.min_weight >= 0.0 && filter.min_weight < 1.0)) {
    throw ViewError(ErrorCode::invalid_filter, "min_weight must lie in [0, 1)");
  }
  if (filter.selected_token && *filter.selected_token >= trace.seq_len()) {
    throw ViewError(ErrorCode::out_of_range,
                    "selected token " + std::to_string(*filter.selected_token) +
                        " out of range for " + std::to_string(trace.seq_len()) + " tokens");
  }
  if (filter.sentence_filter != SentenceFilter::ALL &&
      (trace.config.is_decoder() || !trace.tokens.sentence_b_start)) {
    throw ViewError(ErrorCode::filter_capability,
                    "sentence filters need an encoder trace over a sentence pair");
  }
}

/// Bipartite attention edges of one layer for the chosen heads, ordered by
/// (head, from, to).
inline HeadViewData build_head_view(const AttentionTrace& trace, std::size_t layer,
                                    std::vector<std::size_t> heads, const FilterSpec& filter) {
  if (heads.empty()) throw ViewError(ErrorCode::invalid_argument, "at least one head required");
  std::sort(heads.begin(), heads.end());
  heads.erase(std::unique(heads.begin(), heads.end()), heads.end());
  for (std::size_t h : heads) trace.check_indices(layer, h);
  validate_filter(trace, filter);

  HeadViewData view;
  view.tokens = trace.tokens.display;
  view.segments = trace.tokens.segment;
  view.sentence_b_start = trace.tokens.sentence_b_start;
  view.layer = layer;
  view.heads = heads;
  view.filter = filter;

  const std::size_t n = trace.seq_len();
  const auto& seg = trace.tokens.segment;
  for (std::size_t h : heads) {
    const Matrix& a = trace.at(layer, h).attention;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double w = a(i, j);
        if (!(w > filter.min_weight)) continue;
        if (!direction_accepts(filter, i, j)) continue;
        if (!sentence_filter_accepts(filter.sentence_filter, seg[i], seg[j])) continue;
        view.edges.push_back({i, j, h, w});
      }
    }
  }

  if (filter.selected_token && filter.direction == Direction::FROM_SELECTED) {
    // With several heads the shading takes the strongest head per target.
    std::vector<double> shading(n, 0.0);
    for (std::size_t h : heads) {
      auto row = trace.at(layer, h).attention.row(*filter.selected_token);
      for (std::size_t j = 0; j < n; ++j) shading[j] = std::max(shading[j], row[j]);
    }
    view.target_shading = std::move(shading);
  }
  return view;
}

/// Cell c of an r-way partition of n covers [floor(c n / r), ceil((c+1) n / r)).
inline std::pair<std::size_t, std::size_t> pool_range(std::size_t cell, std::size_t cells,
                                                      std::size_t n) {
  const std::size_t begin = cell * n / cells;
  const std::size_t end = ((cell + 1) * n + cells - 1) / cells;
  return {begin, end};
}

inline Matrix max_pool(const Matrix& a, std::size_t resolution) {
  const std::size_t n = a.rows();
  const std::size_t r = std::min(resolution, n);
  Matrix out(r, r);
  for (std::size_t ci = 0; ci < r; ++ci) {
    const auto [r0, r1] = pool_range(ci, r, n);
    for (std::size_t cj = 0; cj < r; ++cj) {
      const auto [c0, c1] = pool_range(cj, r, n);
      double m = 0.0;
      for (std::size_t i = r0; i < r1; ++i)
        for (std::size_t j = c0; j < c1; ++j) m = std::max(m, a(i, j));
      out(ci, cj) = m;
    }
  }
  return out;
}

inline ModelViewData build_model_view(const AttentionTrace& trace,
                                      std::size_t resolution = kDefaultThumbnailResolution) {
  if (resolution == 0) throw ViewError(ErrorCode::out_of_range, "resolution must be >= 1");
  ModelViewData view;
  view.n_layers = trace.config.n_layers;
  view.n_heads = trace.config.n_heads;
  view.seq_len = trace.seq_len();
  view.resolution = std::min(resolution, trace.seq_len());
  for (std::size_t l = 0; l < view.n_layers; ++l) {
    for (std::size_t h = 0; h < view.n_heads; ++h) {
      const Matrix& a = trace.at(l, h).attention;
      Thumbnail t;
      t.layer = l;
      t.head = h;
      t.values = max_pool(a, resolution);
      for (double v : a.data()) t.max_weight = std::max(t.max_weight, v);
      view.thumbnails.push_back(std::move(t));
    }
  }
  return view;
}

/// Decomposes the attention of `selected_token` into the query, each key,
/// their elementwise product, the dot product, its scaled form and the
/// resulting attention weight. Decoder traces only list unmasked targets.
inline NeuronViewData build_neuron_view(const AttentionTrace& trace, std::size_t layer,
                                        std::size_t head, std::size_t selected_token) {
  const HeadCapture& cap = trace.at(layer, head);
  if (selected_token >= trace.seq_len()) {
    throw ViewError(ErrorCode::out_of_range, "token " + std::to_string(selected_token) +
                                                 " out of range for " +
                                                 std::to_string(trace.seq_len()) + " tokens");
  }
  const double scale = std::sqrt(static_cast<double>(trace.config.d_head));
  NeuronViewData view;
  view.layer = layer;
  view.head = head;
  view.selected_token = selected_token;
  view.tokens = trace.tokens.display;
  auto q = cap.query.row(selected_token);
  view.query.assign(q.begin(), q.end());

  double norm = 0.0;
  for (double v : view.query) norm = std::max(norm, std::abs(v));
  const std::size_t last = trace.config.is_decoder() ? selected_token + 1 : trace.seq_len();
  for (std::size_t j = 0; j < last; ++j) {
    NeuronTarget t;
    t.index = j;
    auto k = cap.key.row(j);
    t.key.assign(k.begin(), k.end());
    t.elementwise.resize(q.size());
    for (std::size_t n = 0; n < q.size(); ++n) {
      t.elementwise[n] = q[n] * k[n];
      t.dot += t.elementwise[n];
      norm = std::max({norm, std::abs(k[n]), std::abs(t.elementwise[n])});
    }
    t.scaled_dot = t.dot / scale;
    t.attention = cap.attention(selected_token, j);
    view.targets.push_back(std::move(t));
  }
  view.norm_scale = norm;
  return view;
}

}  // namespace attnscope
