#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "attnscope/error.hpp"
#include "attnscope/tensor.hpp"
#include "attnscope/tokenizer.hpp"

namespace attnscope {

enum class Architecture { DECODER_ONLY, ENCODER_ONLY };

inline std::string_view architecture_name(Architecture a) {
  return a == Architecture::DECODER_ONLY ? "decoder_only" : "encoder_only";
}

inline std::optional<Architecture> parse_architecture(std::string_view s) {
  if (s == "decoder_only" || s == "decoder") return Architecture::DECODER_ONLY;
  if (s == "encoder_only" || s == "encoder") return Architecture::ENCODER_ONLY;
  return std::nullopt;
}

/// Layer-norm epsilon used by every normalization in the engine.
inline constexpr double kLayerNormEps = 1e-5;
/// Additive mask applied to future positions before the softmax.
inline constexpr double kMaskValue = -1e9;

struct ModelConfig {
  Architecture architecture = Architecture::DECODER_ONLY;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_model = 16;
  std::size_t d_head = 8;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 1;
  std::size_t max_positions = 64;
  std::size_t n_segments = 0;
  bool lowercase = false;

  bool is_decoder() const noexcept { return architecture == Architecture::DECODER_ONLY; }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ModelError(ErrorCode::config_invariant, msg); };
    if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_head == 0 || d_ff == 0 ||
        vocab_size == 0 || max_positions == 0) {
      fail("all model dimensions must be >= 1");
    }
    if (d_model != n_heads * d_head) {
      fail("d_model (" + std::to_string(d_model) + ") must equal n_heads x d_head (" +
           std::to_string(n_heads) + " x " + std::to_string(d_head) + ")");
    }
    if (is_decoder() && n_segments != 0) fail("decoder models have no segment embeddings");
    if (!is_decoder() && n_segments != 2) fail("encoder models need exactly 2 segments");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Matrix w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  Matrix ln1_gamma, ln1_beta;
  Matrix w_in, b_in, w_out, b_out;
  Matrix ln2_gamma, ln2_beta;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

/// All learned tensors. Biases and norm parameters are 1 x n matrices so every
/// tensor shares one representation.
struct Weights {
  Matrix token_embedding;
  Matrix position_embedding;
  Matrix segment_embedding;
  std::vector<LayerWeights> layers;
  Matrix final_ln_gamma, final_ln_beta;

  friend bool operator==(const Weights&, const Weights&) = default;
};

/// Calls f(name, tensor, expected_rows, expected_cols) for every tensor of a
/// model with `config`, in the canonical checkpoint order. `W` is Weights or
/// const Weights.
template <typename W, typename F>
void visit_tensors(W& w, const ModelConfig& config, F&& f) {
  const std::size_t dm = config.d_model;
  const std::size_t dff = config.d_ff;
  f(std::string("token_embedding"), w.token_embedding, config.vocab_size, dm);
  f(std::string("position_embedding"), w.position_embedding, config.max_positions, dm);
  if (!config.is_decoder()) {
    f(std::string("segment_embedding"), w.segment_embedding, config.n_segments, dm);
  }
  if (w.layers.size() != config.n_layers) {
    throw ModelError(ErrorCode::checkpoint_corrupt,
                     "weights have " + std::to_string(w.layers.size()) +
                         " layers, config expects " + std::to_string(config.n_layers));
  }
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    auto& l = w.layers[i];
    const std::string p = "layer." + std::to_string(i) + ".";
    f(p + "attn.w_q", l.w_q, dm, dm);
    f(p + "attn.b_q", l.b_q, 1, dm);
    f(p + "attn.w_k", l.w_k, dm, dm);
    f(p + "attn.b_k", l.b_k, 1, dm);
    f(p + "attn.w_v", l.w_v, dm, dm);
    f(p + "attn.b_v", l.b_v, 1, dm);
    f(p + "attn.w_o", l.w_o, dm, dm);
    f(p + "attn.b_o", l.b_o, 1, dm);
    f(p + "ln1.gamma", l.ln1_gamma, 1, dm);
    f(p + "ln1.beta", l.ln1_beta, 1, dm);
    f(p + "mlp.w_in", l.w_in, dm, dff);
    f(p + "mlp.b_in", l.b_in, 1, dff);
    f(p + "mlp.w_out", l.w_out, dff, dm);
    f(p + "mlp.b_out", l.b_out, 1, dm);
    f(p + "ln2.gamma", l.ln2_gamma, 1, dm);
    f(p + "ln2.beta", l.ln2_beta, 1, dm);
  }
  if (config.is_decoder()) {
    f(std::string("final_ln.gamma"), w.final_ln_gamma, 1, dm);
    f(std::string("final_ln.beta"), w.final_ln_beta, 1, dm);
  }
}

/// Throws checkpoint_corrupt if any tensor shape disagrees with `config`.
inline void validate_weights(const Weights& w, const ModelConfig& config) {
  visit_tensors(w, config,
                [](const std::string& name, const Matrix& m, std::size_t r, std::size_t c) {
                  if (m.rows() != r || m.cols() != c) {
                    throw ModelError(ErrorCode::checkpoint_corrupt,
                                     "tensor " + name + " has shape " + m.shape() +
                                         ", expected " + Matrix::shape_string(r, c));
                  }
                });
}

/// FNV-1a over the raw bytes of every tensor, in canonical order.
inline std::uint64_t weights_checksum(const Weights& w, const ModelConfig& config) {
  std::uint64_t h = 1469598103934665603ull;
  visit_tensors(w, config, [&](const std::string&, const Matrix& m, std::size_t, std::size_t) {
    for (double v : m.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffu;
        h *= 1099511628211ull;
      }
    }
  });
  return h;
}

/// Seeded uniform(-0.08, 0.08) initialization; norm gammas 1, betas 0.
/// Uses the raw mt19937_64 stream so the result is identical across standard
/// library implementations.
inline Weights init_random(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&rng] {
    const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return -0.08 + 0.16 * unit;
  };
  Weights w;
  w.layers.resize(config.n_layers);
  visit_tensors(w, config, [&](const std::string& name, Matrix& m, std::size_t r, std::size_t c) {
    const bool is_gamma = name.ends_with(".gamma");
    const bool is_beta = name.ends_with(".beta");
    m = Matrix(r, c, is_gamma ? 1.0 : 0.0);
    if (is_gamma || is_beta) return;
    for (double& v : m.data()) v = uniform();
  });
  return w;
}

/// Per (layer, head) capture: post-projection Q and K (seq x d_head) and the
/// post-softmax attention matrix (seq x seq, rows attend to columns).
struct HeadCapture {
  Matrix query;
  Matrix key;
  Matrix attention;

  friend bool operator==(const HeadCapture&, const HeadCapture&) = default;
};

struct AttentionTrace {
  TokenSeq tokens;
  ModelConfig config;
  std::vector<HeadCapture> heads;  // layer-major

  std::size_t seq_len() const noexcept { return tokens.size(); }

  const HeadCapture& at(std::size_t layer, std::size_t head) const {
    check_indices(layer, head);
    return heads[layer * config.n_heads + head];
  }
  HeadCapture& at(std::size_t layer, std::size_t head) {
    check_indices(layer, head);
    return heads[layer * config.n_heads + head];
  }

  void check_indices(std::size_t layer, std::size_t head) const {
    if (layer >= config.n_layers) {
      throw Error(ErrorCode::out_of_range, "layer " + std::to_string(layer) +
                                               " out of range (n_layers=" +
                                               std::to_string(config.n_layers) + ")");
    }
    if (head >= config.n_heads) {
      throw Error(ErrorCode::out_of_range, "head " + std::to_string(head) +
                                               " out of range (n_heads=" +
                                               std::to_string(config.n_heads) + ")");
    }
  }

  friend bool operator==(const AttentionTrace&, const AttentionTrace&) = default;
};

struct ForwardResult {
  AttentionTrace trace;
  Matrix hidden;                // final-layer hidden states, seq x d_model
  std::optional<Matrix> logits;  // decoder only, seq x vocab_size
};

namespace detail {

inline std::size_t segment_index(const TokenSeq& seq, std::size_t i) {
  switch (seq.segment[i]) {
    case Segment::A: return 0;
    case Segment::B: return 1;
    case Segment::SPECIAL:
      return seq.sentence_b_start && i >= *seq.sentence_b_start ? 1 : 0;
  }
  return 0;
}

inline Matrix embed(const Weights& w, const ModelConfig& config, const TokenSeq& input) {
  Matrix x(input.size(), config.d_model);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const TokenId id = input.ids[i];
    if (id >= config.vocab_size) {
      throw ModelError(ErrorCode::invalid_id, "token id " + std::to_string(id) +
                                                  " out of range for vocab_size " +
                                                  std::to_string(config.vocab_size));
    }
    auto row = x.row(i);
    auto tok = w.token_embedding.row(id);
    auto pos = w.position_embedding.row(i);
    for (std::size_t c = 0; c < config.d_model; ++c) row[c] = tok[c] + pos[c];
    if (!config.is_decoder()) {
      auto seg = w.segment_embedding.row(segment_index(input, i));
      for (std::size_t c = 0; c < config.d_model; ++c) row[c] += seg[c];
    }
  }
  return x;
}

inline Matrix project(const Matrix& x, const Matrix& weight, const Matrix& bias) {
  Matrix out = matmul(x, weight);
  add_row_bias(out, bias.row(0));
  return out;
}

/// Multi-head self-attention sublayer. Appends one HeadCapture per head.
inline Matrix self_attention(const Matrix& x, const LayerWeights& l, const ModelConfig& config,
                             std::vector<HeadCapture>& captures) {
  const std::size_t n = x.rows();
  const std::size_t dh = config.d_head;
  const double scale = std::sqrt(static_cast<double>(dh));
  const Matrix q_all = project(x, l.w_q, l.b_q);
  const Matrix k_all = project(x, l.w_k, l.b_k);
  const Matrix v_all = project(x, l.w_v, l.b_v);

  Matrix concat(n, config.d_model);
  for (std::size_t h = 0; h < config.n_heads; ++h) {
    HeadCapture cap;
    cap.query = q_all.column_slice(h * dh, dh);
    cap.key = k_all.column_slice(h * dh, dh);
    const Matrix v = v_all.column_slice(h * dh, dh);

    Matrix scores = matmul(cap.query, transpose(cap.key));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        scores(i, j) /= scale;
        if (config.is_decoder() && j > i) scores(i, j) += kMaskValue;
      }
    }
    cap.attention = softmax_rows(scores);
    if (config.is_decoder()) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) cap.attention(i, j) = 0.0;
    }

    const Matrix context = matmul(cap.attention, v);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < dh; ++c) concat(i, h * dh + c) = context(i, c);
    captures.push_back(std::move(cap));
  }
  return project(concat, l.w_o, l.b_o);
}

inline Matrix feed_forward(const Matrix& x, const LayerWeights& l) {
  Matrix hidden = project(x, l.w_in, l.b_in);
  for (double& v : hidden.data()) v = gelu(v);
  return project(hidden, l.w_out, l.b_out);
}

}  // namespace detail

/// Runs the model over `input`, capturing Q, K and attention for every
/// (layer, head). Decoders use pre-LN blocks plus a final norm and a tied LM
/// head; encoders use post-LN blocks.
inline ForwardResult forward(const Weights& weights, const ModelConfig& config,
                             const TokenSeq& input) {
  config.validate();
  validate_weights(weights, config);
  if (input.size() == 0) throw ModelError(ErrorCode::empty_input, "empty input sequence");
  if (input.size() > config.max_positions) {
    throw ModelError(ErrorCode::capacity_exceeded,
                     "input length " + std::to_string(input.size()) + " exceeds max_positions " +
                         std::to_string(config.max_positions));
  }
  input.validate();

  ForwardResult result;
  result.trace.tokens = input;
  result.trace.config = config;
  result.trace.heads.reserve(config.n_layers * config.n_heads);

  Matrix x = detail::embed(weights, config, input);
  for (const auto& l : weights.layers) {
    if (config.is_decoder()) {
      const Matrix normed = layer_norm_rows(x, l.ln1_gamma.row(0), l.ln1_beta.row(0), kLayerNormEps);
      add_in_place(x, detail::self_attention(normed, l, config, result.trace.heads));
      const Matrix normed2 = layer_norm_rows(x, l.ln2_gamma.row(0), l.ln2_beta.row(0), kLayerNormEps);
      add_in_place(x, detail::feed_forward(normed2, l));
    } else {
      Matrix attn = detail::self_attention(x, l, config, result.trace.heads);
      add_in_place(attn, x);
      x = layer_norm_rows(attn, l.ln1_gamma.row(0), l.ln1_beta.row(0), kLayerNormEps);
      Matrix ff = detail::feed_forward(x, l);
      add_in_place(ff, x);
      x = layer_norm_rows(ff, l.ln2_gamma.row(0), l.ln2_beta.row(0), kLayerNormEps);
    }
  }

  if (config.is_decoder()) {
    x = layer_norm_rows(x, weights.final_ln_gamma.row(0), weights.final_ln_beta.row(0),
                        kLayerNormEps);
    result.logits = matmul(x, transpose(weights.token_embedding));
  }
  result.hidden = std::move(x);
  return result;
}

/// Index of the largest value; ties go to the lowest index.
inline TokenId argmax_lowest(std::span<const double> values) {
  TokenId best = 0;
  for (TokenId i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

struct GenerationResult {
  TokenSeq tokens;                  // prompt followed by generated tokens
  std::vector<TokenId> generated;
  AttentionTrace trace;             // forward pass over the full output sequence
};

/// Greedy top-1 decoding. The returned trace covers the whole output so the
/// generated continuation can be inspected in the views.
inline GenerationResult greedy_generate(const Weights& weights, const ModelConfig& config,
                                        const TokenSeq& prompt, std::size_t max_new,
                                        const Vocab& vocab) {
  if (!config.is_decoder()) {
    throw ModelError(ErrorCode::unsupported_operation,
                     "generation requires a decoder_only model");
  }
  if (prompt.size() + max_new > config.max_positions) {
    throw ModelError(ErrorCode::capacity_exceeded,
                     "prompt length plus max_new exceeds max_positions " +
                         std::to_string(config.max_positions));
  }
  GenerationResult out;
  out.tokens = prompt;
  ForwardResult last = forward(weights, config, out.tokens);
  for (std::size_t step = 0; step < max_new; ++step) {
    const TokenId next = argmax_lowest(last.logits->row(out.tokens.size() - 1));
    out.generated.push_back(next);
    out.tokens.push_back(next, vocab.token(next), Segment::A);
    last = forward(weights, config, out.tokens);
  }
  out.trace = std::move(last.trace);
  return out;
}

}  // namespace attnscope
