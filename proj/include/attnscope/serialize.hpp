#pragma once

// JSON wire format shared by the HTTP API and the CLI. Field names here are
// part of the /api/v1 contract.

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "attnscope/analysis.hpp"
#include "attnscope/error.hpp"
#include "attnscope/tokenizer.hpp"
#include "attnscope/transformer.hpp"
#include "attnscope/views.hpp"

namespace attnscope {

using Json = nlohmann::ordered_json;

/// Canonical response body: two-space indented JSON plus trailing newline.
inline std::string to_body(const Json& j) { return j.dump(2) + "\n"; }

template <typename T>
Json optional_json(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

inline Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    rows.push_back(Json(std::vector<double>(r.begin(), r.end())));
  }
  return rows;
}

// ---------------------------------------------------------------- config

inline Json config_json(const ModelConfig& c) {
  return Json{{"architecture", architecture_name(c.architecture)},
              {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"d_model", c.d_model},
              {"d_head", c.d_head},
              {"d_ff", c.d_ff},
              {"vocab_size", c.vocab_size},
              {"max_positions", c.max_positions},
              {"n_segments", c.n_segments},
              {"lowercase", c.lowercase}};
}

namespace detail {

inline std::size_t count_field(const Json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::invalid_config, std::string("missing config field ") + key);
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw Error(ErrorCode::invalid_config,
                std::string("config field ") + key + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace detail

/// Parses a config object. d_model, d_ff, n_segments, vocab_size and lowercase
/// may be omitted; they default to n_heads*d_head, 4*d_model, the
/// architecture's segment count, `default_vocab_size` and false.
/// Does not check invariants; call ModelConfig::validate.
inline ModelConfig config_from_json(const Json& j, std::size_t default_vocab_size = 0) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, "config must be an object");
  ModelConfig c;
  if (!j.contains("architecture") || !j.at("architecture").is_string()) {
    throw Error(ErrorCode::invalid_config, "config.architecture must be a string");
  }
  auto arch = parse_architecture(j.at("architecture").get<std::string>());
  if (!arch) throw Error(ErrorCode::invalid_config, "unknown architecture");
  c.architecture = *arch;
  c.n_layers = detail::count_field(j, "n_layers");
  c.n_heads = detail::count_field(j, "n_heads");
  c.d_head = detail::count_field(j, "d_head");
  c.max_positions = detail::count_field(j, "max_positions");
  c.d_model = j.contains("d_model") ? detail::count_field(j, "d_model") : c.n_heads * c.d_head;
  c.d_ff = j.contains("d_ff") ? detail::count_field(j, "d_ff") : 4 * c.d_model;
  c.n_segments = j.contains("n_segments") ? detail::count_field(j, "n_segments")
                                          : (c.is_decoder() ? 0 : 2);
  c.vocab_size = j.contains("vocab_size") ? detail::count_field(j, "vocab_size") : default_vocab_size;
  if (j.contains("lowercase")) {
    if (!j.at("lowercase").is_boolean()) throw Error(ErrorCode::invalid_config, "lowercase must be boolean");
    c.lowercase = j.at("lowercase").get<bool>();
  }
  return c;
}

// ----------------------------------------------------------------- vocab

inline Json vocab_json(const Vocab& v) {
  Json specials = Json::object();
  for (const auto& [role, id] : v.special()) specials[std::string(special_role_name(role))] = id;
  return Json{{"entries", v.entries()},
              {"unk_id", v.unk_id()},
              {"specials", specials},
              {"lowercase", v.lowercase()}};
}

inline Vocab vocab_from_json(const Json& j) {
  try {
    std::map<SpecialRole, TokenId> specials;
    if (j.contains("specials")) {
      for (const auto& [name, id] : j.at("specials").items()) {
        auto role = parse_special_role(name);
        if (!role) throw TokenizerError(ErrorCode::invalid_vocab, "unknown special role " + name);
        specials[*role] = id.get<TokenId>();
      }
    }
    return Vocab(j.at("entries").get<std::vector<std::string>>(), j.at("unk_id").get<TokenId>(),
                 std::move(specials), j.value("lowercase", false));
  } catch (const nlohmann::json::exception& e) {
    throw TokenizerError(ErrorCode::invalid_vocab, std::string("malformed vocab: ") + e.what());
  }
}

// ---------------------------------------------------------------- tokens

inline Json segments_json(const std::vector<Segment>& segs) {
  Json out = Json::array();
  for (Segment s : segs) out.push_back(segment_name(s));
  return out;
}

inline Json token_seq_json(const TokenSeq& t) {
  return Json{{"ids", t.ids},
              {"tokens", t.display},
              {"segments", segments_json(t.segment)},
              {"sentence_b_start", optional_json(t.sentence_b_start)}};
}

// ----------------------------------------------------------------- views

inline Json filter_json(const FilterSpec& f) {
  return Json{{"selected_token", optional_json(f.selected_token)},
              {"direction", direction_name(f.direction)},
              {"sentence_filter", sentence_filter_name(f.sentence_filter)},
              {"min_weight", f.min_weight}};
}

inline Json head_view_json(const HeadViewData& v) {
  Json edges = Json::array();
  for (const auto& e : v.edges) {
    edges.push_back(Json{{"from", e.from}, {"to", e.to}, {"head", e.head}, {"weight", e.weight}});
  }
  return Json{{"view", "head"},
              {"layer", v.layer},
              {"heads", v.heads},
              {"tokens", v.tokens},
              {"segments", segments_json(v.segments)},
              {"sentence_b_start", optional_json(v.sentence_b_start)},
              {"filter", filter_json(v.filter)},
              {"edges", std::move(edges)},
              {"target_shading", optional_json(v.target_shading)}};
}

inline Json model_view_json(const ModelViewData& v) {
  Json cells = Json::array();
  for (const auto& t : v.thumbnails) {
    cells.push_back(Json{{"layer", t.layer},
                         {"head", t.head},
                         {"max_weight", t.max_weight},
                         {"values", matrix_json(t.values)}});
  }
  return Json{{"view", "model"},
              {"n_layers", v.n_layers},
              {"n_heads", v.n_heads},
              {"seq_len", v.seq_len},
              {"resolution", v.resolution},
              {"thumbnails", std::move(cells)}};
}

inline Json neuron_view_json(const NeuronViewData& v) {
  Json targets = Json::array();
  for (const auto& t : v.targets) {
    targets.push_back(Json{{"index", t.index},
                           {"key", t.key},
                           {"elementwise", t.elementwise},
                           {"dot", t.dot},
                           {"scaled_dot", t.scaled_dot},
                           {"attention", t.attention}});
  }
  return Json{{"view", "neuron"},
              {"layer", v.layer},
              {"head", v.head},
              {"selected_token", v.selected_token},
              {"tokens", v.tokens},
              {"query", v.query},
              {"targets", std::move(targets)},
              {"norm_scale", v.norm_scale}};
}

// -------------------------------------------------------------- analysis

inline Json decay_json(const DecayProfile& d) {
  Json profile = Json::array();
  for (const auto& p : d.profile) profile.push_back(Json{{"distance", p.distance}, {"mean", p.mean}});
  return Json{{"exclude_first", d.exclude_first},
              {"fitted_rate", d.fitted_rate},
              {"monotonicity", d.monotonicity},
              {"degenerate", d.degenerate},
              {"profile", std::move(profile)}};
}

inline Json pattern_report_json(const HeadPatternReport& r) {
  Json offsets = Json::object();
  for (const auto& [o, s] : r.offset_scores) offsets[std::to_string(o)] = s;
  return Json{{"layer", r.layer},
              {"head", r.head},
              {"label", head_label_name(r.label)},
              {"null_ratio", r.null_ratio},
              {"self_score", r.self_score},
              {"uniformity", r.uniformity},
              {"offset_scores", std::move(offsets)},
              {"decay", r.decay ? decay_json(*r.decay) : Json(nullptr)}};
}

inline Json pattern_sweep_json(const std::vector<HeadPatternReport>& reports) {
  Json arr = Json::array();
  for (const auto& r : reports) arr.push_back(pattern_report_json(r));
  return arr;
}

inline Json attribution_json(const NeuronAttribution& a) {
  return Json{{"layer", a.layer},
              {"head", a.head},
              {"selected_token", a.selected_token},
              {"correlation", a.correlation},
              {"ranked", a.ranked}};
}

inline Json probe_json(const BiasProbeResult& p) {
  Json cands = Json::array();
  for (const auto& c : p.candidates) {
    cands.push_back(Json{{"token_index", c.token_index}, {"attention", c.attention}});
  }
  return Json{{"pronoun_index", p.pronoun_index},
              {"candidates", std::move(cands)},
              {"preferred", p.preferred},
              {"margin", p.margin}};
}

// ---------------------------------------------------------------- errors

inline Json error_json(std::string_view code, const std::string& message) {
  return Json{{"error", Json{{"code", code}, {"message", message}}}};
}

}  // namespace attnscope
