#pragma once

// /api/v1 request handling, independent of the HTTP transport. The CLI reuses
// the render_* functions so its output files match API bodies byte for byte.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "attnscope/analysis.hpp"
#include "attnscope/checkpoint.hpp"
#include "attnscope/error.hpp"
#include "attnscope/serialize.hpp"
#include "attnscope/tokenizer.hpp"
#include "attnscope/transformer.hpp"
#include "attnscope/views.hpp"

namespace attnscope {

using Params = std::map<std::string, std::string>;

struct Response {
  int status = 200;
  std::string body;
};

struct LoadedModel {
  std::string id;
  std::string source;
  Weights weights;
  ModelConfig config;
  Vocab vocab;
};

inline constexpr std::size_t kDefaultTraceCapacity = 64;

/// Registered models plus an LRU-bounded set of traces. The only
/// synchronized state in the service.
class SessionStore {
 public:
  explicit SessionStore(std::size_t trace_capacity = kDefaultTraceCapacity)
      : capacity_(trace_capacity == 0 ? 1 : trace_capacity) {}

  /// Registers the model built by `make` unless `source_key` is already
  /// registered, in which case the existing entry is returned.
  template <typename Make>
  std::shared_ptr<const LoadedModel> add_model(const std::string& source_key, Make&& make) {
    {
      std::lock_guard lock(mutex_);
      if (auto it = by_source_.find(source_key); it != by_source_.end()) return models_.at(it->second);
    }
    // Loading happens outside the lock.
    LoadedModel model = make();
    std::lock_guard lock(mutex_);
    if (auto it = by_source_.find(source_key); it != by_source_.end()) return models_.at(it->second);
    model.id = "m" + std::to_string(++model_counter_);
    model.source = source_key;
    auto ptr = std::make_shared<const LoadedModel>(std::move(model));
    models_.emplace(ptr->id, ptr);
    by_source_.emplace(source_key, ptr->id);
    return ptr;
  }

  std::shared_ptr<const LoadedModel> model(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = models_.find(id);
    return it == models_.end() ? nullptr : it->second;
  }

  std::string add_trace(AttentionTrace trace) {
    auto ptr = std::make_shared<const AttentionTrace>(std::move(trace));
    std::lock_guard lock(mutex_);
    std::string id = "t" + std::to_string(++trace_counter_);
    lru_.push_front(id);
    traces_.emplace(id, TraceEntry{ptr, std::chrono::steady_clock::now(), lru_.begin()});
    while (traces_.size() > capacity_) {
      traces_.erase(lru_.back());
      lru_.pop_back();
    }
    return id;
  }

  /// Returns nullptr for unknown or evicted ids. A hit refreshes recency.
  std::shared_ptr<const AttentionTrace> trace(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto it = traces_.find(id);
    if (it == traces_.end()) return nullptr;
    lru_.splice(lru_.begin(), lru_, it->second.position);
    return it->second.trace;
  }

  std::size_t trace_count() const {
    std::lock_guard lock(mutex_);
    return traces_.size();
  }

  std::size_t capacity() const noexcept { return capacity_; }

 private:
  struct TraceEntry {
    std::shared_ptr<const AttentionTrace> trace;
    std::chrono::steady_clock::time_point created;
    std::list<std::string>::iterator position;
  };

  mutable std::mutex mutex_;
  std::size_t capacity_;
  std::uint64_t model_counter_ = 0;
  std::uint64_t trace_counter_ = 0;
  std::unordered_map<std::string, std::shared_ptr<const LoadedModel>> models_;
  std::unordered_map<std::string, std::string> by_source_;
  std::unordered_map<std::string, TraceEntry> traces_;
  std::list<std::string> lru_;  // most recent first
};

/// Raised inside handlers to produce a specific HTTP status.
class HttpError : public std::runtime_error {
 public:
  HttpError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }

 private:
  int status_;
  std::string code_;
};

// ------------------------------------------------------ parameter parsing

namespace detail {

inline HttpError bad_param(const std::string& key, const std::string& why) {
  return HttpError(400, "invalid_argument", "parameter '" + key + "' " + why);
}

inline std::size_t parse_index(std::string_view text, const std::string& key) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw bad_param(key, "must be a non-negative integer");
  }
  return v;
}

inline std::optional<std::size_t> index_param(const Params& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end() || it->second.empty()) return std::nullopt;
  return parse_index(it->second, key);
}

inline std::vector<std::size_t> index_list_param(const Params& p, const std::string& key) {
  std::vector<std::size_t> out;
  auto it = p.find(key);
  if (it == p.end()) return out;
  std::string_view s = it->second;
  while (!s.empty()) {
    const auto comma = s.find(',');
    out.push_back(parse_index(s.substr(0, comma), key));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

inline double double_param(const Params& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  if (it == p.end() || it->second.empty()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw bad_param(key, "must be a number");
  }
}

inline std::string string_param(const Params& p, const std::string& key, std::string fallback) {
  auto it = p.find(key);
  return it == p.end() || it->second.empty() ? fallback : it->second;
}

inline std::vector<std::size_t> all_heads(const ModelConfig& c) {
  std::vector<std::size_t> heads(c.n_heads);
  for (std::size_t h = 0; h < c.n_heads; ++h) heads[h] = h;
  return heads;
}

}  // namespace detail

/// Builds the FilterSpec of a head-view request.
inline FilterSpec filter_from_params(const Params& p) {
  FilterSpec f;
  f.selected_token = detail::index_param(p, "selected_token");
  const auto dir = parse_direction(detail::string_param(p, "direction", "from_selected"));
  if (!dir) throw detail::bad_param("direction", "must be from_selected, to_selected or both");
  f.direction = *dir;
  const auto sf = parse_sentence_filter(detail::string_param(p, "sentence_filter", "all"));
  if (!sf) throw detail::bad_param("sentence_filter", "must be all, a_to_a, a_to_b, b_to_a or b_to_b");
  f.sentence_filter = *sf;
  f.min_weight = detail::double_param(p, "min_weight", kDefaultMinWeight);
  return f;
}

/// View payload for kind "head", "model" or "neuron".
inline Json render_view(const AttentionTrace& trace, std::string_view kind, const Params& p) {
  if (kind == "head") {
    const std::size_t layer = detail::index_param(p, "layer").value_or(0);
    auto heads = detail::index_list_param(p, "heads");
    if (heads.empty()) heads = detail::all_heads(trace.config);
    return head_view_json(build_head_view(trace, layer, heads, filter_from_params(p)));
  }
  if (kind == "model") {
    const std::size_t resolution =
        detail::index_param(p, "resolution").value_or(kDefaultThumbnailResolution);
    return model_view_json(build_model_view(trace, resolution));
  }
  if (kind == "neuron") {
    const std::size_t layer = detail::index_param(p, "layer").value_or(0);
    const std::size_t head = detail::index_param(p, "head").value_or(0);
    const std::size_t token = detail::index_param(p, "token").value_or(trace.seq_len() - 1);
    return neuron_view_json(build_neuron_view(trace, layer, head, token));
  }
  throw HttpError(404, "not_found", "unknown view '" + std::string(kind) + "'");
}

/// Analysis payload. `kinds` is a comma list drawn from patterns, decay,
/// attribution and coreference; keys appear in that fixed order.
inline Json render_analysis(const AttentionTrace& trace, const Params& p) {
  const std::string kinds_text = detail::string_param(p, "kinds", "patterns");
  std::vector<std::string> kinds;
  for (std::size_t start = 0; start <= kinds_text.size();) {
    const auto comma = kinds_text.find(',', start);
    const auto end = comma == std::string::npos ? kinds_text.size() : comma;
    kinds.push_back(kinds_text.substr(start, end - start));
    start = end + 1;
  }
  auto wants = [&](std::string_view k) { return std::find(kinds.begin(), kinds.end(), k) != kinds.end(); };
  for (const auto& k : kinds) {
    if (k != "patterns" && k != "decay" && k != "attribution" && k != "coreference") {
      throw detail::bad_param("kinds", "contains unknown kind '" + k + "'");
    }
  }

  Json out = Json::object();
  if (wants("patterns")) out["patterns"] = pattern_sweep_json(analyze_all_heads(trace));
  if (wants("decay")) {
    const bool exclude_first = detail::string_param(p, "exclude_first", "true") != "false";
    Json arr = Json::array();
    for (std::size_t l = 0; l < trace.config.n_layers; ++l) {
      for (std::size_t h = 0; h < trace.config.n_heads; ++h) {
        Json d = decay_json(distance_decay_profile(trace, l, h, exclude_first));
        Json entry{{"layer", l}, {"head", h}};
        entry.update(d);
        arr.push_back(std::move(entry));
      }
    }
    out["decay"] = std::move(arr);
  }
  if (wants("attribution")) {
    const std::size_t layer = detail::index_param(p, "layer").value_or(0);
    const std::size_t head = detail::index_param(p, "head").value_or(0);
    const std::size_t token = detail::index_param(p, "token").value_or(trace.seq_len() - 1);
    out["attribution"] = attribution_json(neuron_decay_attribution(trace, layer, head, token));
  }
  if (wants("coreference")) {
    const std::size_t layer = detail::index_param(p, "layer").value_or(0);
    const std::size_t head = detail::index_param(p, "head").value_or(0);
    const auto pronoun = detail::index_param(p, "pronoun");
    if (!pronoun) throw detail::bad_param("pronoun", "is required for coreference");
    const auto candidates = detail::index_list_param(p, "candidates");
    out["coreference"] = probe_json(coreference_probe(trace, layer, head, *pronoun, candidates));
  }
  return out;
}

/// Tokenizes user text for `model`. Encoder inputs are framed with
/// [CLS]/[SEP]; a second sentence makes a pair (encoder only).
inline TokenSeq tokenize_for_model(const LoadedModel& model, std::string_view text,
                                   std::optional<std::string_view> sentence_b = std::nullopt) {
  if (sentence_b) {
    if (model.config.is_decoder()) {
      throw HttpError(400, "unsupported_operation", "sentence pairs require an encoder model");
    }
    return encode_pair(text, *sentence_b, model.vocab);
  }
  if (!model.config.is_decoder() && model.vocab.special_id(SpecialRole::CLS) &&
      model.vocab.special_id(SpecialRole::SEP)) {
    return encode_single_framed(text, model.vocab);
  }
  return encode(text, model.vocab);
}

/// Builds a model from a random-init request object {config, seed, vocab?}.
inline LoadedModel random_model_from_json(const Json& spec) {
  if (!spec.is_object() || !spec.contains("config")) {
    throw Error(ErrorCode::invalid_config, "random model needs a config object");
  }
  const Json& cfg = spec.at("config");
  const bool lowercase = cfg.is_object() && cfg.value("lowercase", false);
  LoadedModel m;
  m.vocab = spec.contains("vocab") ? vocab_from_json(spec.at("vocab")) : default_vocab(lowercase);
  m.config = config_from_json(cfg, m.vocab.size());
  if (m.config.vocab_size != m.vocab.size()) {
    throw Error(ErrorCode::invalid_config, "config.vocab_size does not match the vocab");
  }
  m.config.lowercase = m.vocab.lowercase();
  m.config.validate();
  std::uint64_t seed = 0;
  if (spec.contains("seed")) {
    if (!spec.at("seed").is_number_unsigned()) throw Error(ErrorCode::invalid_config, "seed must be a non-negative integer");
    seed = spec.at("seed").get<std::uint64_t>();
  }
  m.weights = init_random(m.config, seed);
  return m;
}

inline LoadedModel model_from_checkpoint(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  LoadedModel m;
  m.weights = std::move(ck.weights);
  m.config = ck.config;
  m.vocab = std::move(ck.vocab);
  return m;
}

class Api {
 public:
  explicit Api(std::size_t trace_capacity = kDefaultTraceCapacity) : store_(trace_capacity) {}

  SessionStore& store() noexcept { return store_; }

  /// Single entry point used by the HTTP layer and by tests.
  Response handle(std::string_view method, const std::string& path, const Params& params,
                  const std::string& body) {
    static const std::regex kView(R"(^/api/v1/traces/([^/]+)/views/([^/]+)$)");
    static const std::regex kAnalysis(R"(^/api/v1/traces/([^/]+)/analysis$)");
    return guarded([&]() -> Json {
      std::smatch m;
      if (method == "POST" && path == "/api/v1/models") return post_models(parse_body(body));
      if (method == "POST" && path == "/api/v1/traces") return post_traces(parse_body(body));
      if (method == "POST" && path == "/api/v1/generate") return post_generate(parse_body(body));
      if (method == "GET" && std::regex_match(path, m, kView)) {
        return render_view(*find_trace(m[1]), m[2].str(), params);
      }
      if (method == "GET" && std::regex_match(path, m, kAnalysis)) {
        return render_analysis(*find_trace(m[1]), params);
      }
      throw HttpError(404, "not_found", "no route for " + std::string(method) + " " + path);
    });
  }

  /// POST /api/v1/models {checkpoint_path} | {random: {config, seed, vocab?}}
  Json post_models(const Json& req) {
    std::shared_ptr<const LoadedModel> model;
    if (req.contains("checkpoint_path")) {
      if (!req.at("checkpoint_path").is_string()) {
        throw HttpError(400, "invalid_argument", "checkpoint_path must be a string");
      }
      const auto path = req.at("checkpoint_path").get<std::string>();
      try {
        model = store_.add_model("checkpoint:" + path, [&] { return model_from_checkpoint(path); });
      } catch (const CheckpointError& e) {
        throw HttpError(422, std::string(error_code_name(e.code())), e.what());
      }
    } else if (req.contains("random")) {
      const Json& spec = req.at("random");
      model = store_.add_model("random:" + spec.dump(), [&] { return random_model_from_json(spec); });
    } else {
      throw HttpError(400, "invalid_argument", "body needs checkpoint_path or random");
    }
    return Json{{"model_id", model->id}, {"config", config_json(model->config)}};
  }

  /// POST /api/v1/traces {model_id, text} | {model_id, sentence_a, sentence_b}
  Json post_traces(const Json& req) {
    auto model = find_model(req);
    TokenSeq tokens;
    if (req.contains("sentence_a") || req.contains("sentence_b")) {
      tokens = tokenize_for_model(*model, string_field(req, "sentence_a"),
                                  string_field(req, "sentence_b"));
    } else {
      tokens = tokenize_for_model(*model, string_field(req, "text"));
    }
    ForwardResult result = forward(model->weights, model->config, tokens);
    const std::string id = store_.add_trace(std::move(result.trace));
    Json out{{"trace_id", id}, {"model_id", model->id}};
    out.update(token_seq_json(tokens));
    return out;
  }

  /// POST /api/v1/generate {model_id, prompt, max_new}
  Json post_generate(const Json& req) {
    auto model = find_model(req);
    if (!model->config.is_decoder()) {
      throw HttpError(400, "unsupported_operation", "generation requires a decoder_only model");
    }
    const TokenSeq prompt = encode(string_field(req, "prompt"), model->vocab);
    std::size_t max_new = 0;
    if (req.contains("max_new")) {
      if (!req.at("max_new").is_number_unsigned()) {
        throw HttpError(400, "invalid_argument", "max_new must be a non-negative integer");
      }
      max_new = req.at("max_new").get<std::size_t>();
    }
    GenerationResult gen = greedy_generate(model->weights, model->config, prompt, max_new, model->vocab);
    return generation_json(gen, store_.add_trace(gen.trace), model->vocab);
  }

  static Json generation_json(const GenerationResult& gen, const std::string& trace_id,
                              const Vocab& vocab) {
    std::string text;
    for (std::size_t i = 0; i < gen.tokens.size(); ++i) {
      if (i > 0) text.push_back(' ');
      text += gen.tokens.display[i];
    }
    return Json{{"text", text},
                {"generated_ids", gen.generated},
                {"generated_text", decode(gen.generated, vocab)},
                {"trace_id", trace_id}};
  }

 private:
  template <typename F>
  Response guarded(F&& f) {
    try {
      return {200, to_body(f())};
    } catch (const HttpError& e) {
      return {e.status(), to_body(error_json(e.code(), e.what()))};
    } catch (const Error& e) {
      return {status_for(e.code()), to_body(error_json(error_code_name(e.code()), e.what()))};
    } catch (const std::exception&) {
      return {500, to_body(error_json("internal", "internal server error"))};
    }
  }

  static int status_for(ErrorCode code) {
    switch (code) {
      case ErrorCode::io_failure:
      case ErrorCode::version_mismatch:
      case ErrorCode::tensor_shape_mismatch:
      case ErrorCode::truncated_blob:
      case ErrorCode::unknown_tensor:
      case ErrorCode::missing_tensor:
      case ErrorCode::manifest_invalid:
      case ErrorCode::checkpoint_corrupt:
        return 422;
      default:
        return 400;
    }
  }

  static Json parse_body(const std::string& body) {
    try {
      Json j = Json::parse(body);
      if (!j.is_object()) throw HttpError(400, "invalid_json", "request body must be a JSON object");
      return j;
    } catch (const nlohmann::json::exception& e) {
      throw HttpError(400, "invalid_json", std::string("malformed JSON body: ") + e.what());
    }
  }

  static std::string string_field(const Json& req, const char* key) {
    if (!req.contains(key) || !req.at(key).is_string()) {
      throw HttpError(400, "invalid_argument", std::string("field '") + key + "' must be a string");
    }
    return req.at(key).get<std::string>();
  }

  std::shared_ptr<const LoadedModel> find_model(const Json& req) {
    auto model = store_.model(string_field(req, "model_id"));
    if (!model) throw HttpError(404, "not_found", "unknown model_id");
    return model;
  }

  std::shared_ptr<const AttentionTrace> find_trace(const std::string& id) {
    auto trace = store_.trace(id);
    if (!trace) throw HttpError(404, "not_found", "unknown or evicted trace_id " + id);
    return trace;
  }

  SessionStore store_;
};

}  // namespace attnscope
