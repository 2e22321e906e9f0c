// attnscope: headless driver for the attention introspection engine.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attnscope/attnscope.hpp"
#include "attnscope/http_server.hpp"

namespace {

using namespace attnscope;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

void write_output(const std::string& body, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << body;
    return;
  }
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::io_failure, "cannot write " + out);
  f << body;
}

Vocab read_vocab_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_failure, "cannot read vocab file " + path);
  try {
    return vocab_from_json(Json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw TokenizerError(ErrorCode::invalid_vocab, std::string("vocab file: ") + e.what());
  }
}

struct InitOptions {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t d_head = 8;
  std::size_t d_ff = 0;  // 0: 4 * d_model
  std::size_t max_positions = 64;
  std::uint64_t seed = 0;
  std::string arch = "decoder";
  std::string vocab_file;
  std::string out;
};

int run_init(const InitOptions& o) {
  ModelConfig c;
  c.architecture = *parse_architecture(o.arch);
  const Vocab vocab = o.vocab_file.empty() ? default_vocab(!c.is_decoder()) : read_vocab_file(o.vocab_file);
  c.n_layers = o.layers;
  c.n_heads = o.heads;
  c.d_head = o.d_head;
  c.d_model = o.heads * o.d_head;
  c.d_ff = o.d_ff == 0 ? 4 * c.d_model : o.d_ff;
  c.vocab_size = vocab.size();
  c.max_positions = o.max_positions;
  c.n_segments = c.is_decoder() ? 0 : 2;
  c.lowercase = vocab.lowercase();
  save_checkpoint(init_random(c, o.seed), c, vocab, o.out);
  return 0;
}

struct InputOptions {
  std::string model;
  std::string text;
  std::string sentence_b;
  std::string out;
};

AttentionTrace trace_input(const InputOptions& in, std::optional<LoadedModel>& holder) {
  holder = model_from_checkpoint(in.model);
  const TokenSeq tokens =
      in.sentence_b.empty()
          ? tokenize_for_model(*holder, in.text)
          : tokenize_for_model(*holder, in.text, std::string_view(in.sentence_b));
  return forward(holder->weights, holder->config, tokens).trace;
}

struct ViewOptions {
  std::string view;
  std::optional<std::size_t> layer, head, token, resolution;
  std::string heads, direction, sentence_filter;
  std::optional<double> min_weight;
};

int run_analyze(const InputOptions& in, const ViewOptions& v) {
  std::optional<LoadedModel> model;
  const AttentionTrace trace = trace_input(in, model);
  Params p;
  auto put = [&p](const char* key, const auto& opt) {
    if (opt) p[key] = std::to_string(*opt);
  };
  put("layer", v.layer);
  put("head", v.head);
  put("resolution", v.resolution);
  if (v.token) {
    p["token"] = std::to_string(*v.token);
    p["selected_token"] = std::to_string(*v.token);
  }
  if (v.min_weight) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", *v.min_weight);
    p["min_weight"] = buf;
  }
  if (!v.heads.empty()) p["heads"] = v.heads;
  if (!v.direction.empty()) p["direction"] = v.direction;
  if (!v.sentence_filter.empty()) p["sentence_filter"] = v.sentence_filter;
  write_output(to_body(render_view(trace, v.view, p)), in.out);
  return 0;
}

int run_report(const InputOptions& in) {
  std::optional<LoadedModel> model;
  const AttentionTrace trace = trace_input(in, model);
  write_output(to_body(render_analysis(trace, {{"kinds", "patterns"}})), in.out);
  return 0;
}

int run_generate(const std::string& model_path, const std::string& prompt, std::size_t max_new) {
  const LoadedModel m = model_from_checkpoint(model_path);
  const auto gen = greedy_generate(m.weights, m.config, encode(prompt, m.vocab), max_new, m.vocab);
  std::string text;
  for (std::size_t i = 0; i < gen.tokens.size(); ++i) {
    if (i > 0) text.push_back(' ');
    text += gen.tokens.display[i];
  }
  std::cout << text << "\n";
  return 0;
}

int run_serve(const std::vector<std::string>& models, const std::string& host, int port,
              const std::string& ui_dir) {
  Api api;
  for (const auto& path : models) {
    Json req{{"checkpoint_path", path}};
    Response r = api.handle("POST", "/api/v1/models", {}, req.dump());
    if (r.status != 200) {
      std::cerr << "failed to load " << path << ": " << r.body;
      return kExitRuntime;
    }
    std::cerr << "loaded " << path << ": " << Json::parse(r.body).at("model_id").get<std::string>()
              << "\n";
  }
  httplib::Server server;
  bind_routes(server, api, ui_dir.empty() ? std::nullopt : std::optional<std::string>(ui_dir));
  std::cerr << "listening on http://" << host << ":" << port << "\n";
  if (!server.listen(host, port)) {
    std::cerr << "cannot listen on " << host << ":" << port << "\n";
    return kExitRuntime;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attnscope: attention introspection for small transformer models"};
  app.require_subcommand(1);

  InitOptions init;
  auto* init_cmd = app.add_subcommand("init-random", "write a randomly initialized checkpoint");
  init_cmd->add_option("--layers", init.layers)->envname("ATTNSCOPE_LAYERS")->check(CLI::PositiveNumber);
  init_cmd->add_option("--heads", init.heads)->envname("ATTNSCOPE_HEADS")->check(CLI::PositiveNumber);
  init_cmd->add_option("--d-head", init.d_head)->envname("ATTNSCOPE_D_HEAD")->check(CLI::PositiveNumber);
  init_cmd->add_option("--d-ff", init.d_ff, "MLP width (default 4 * d_model)")->envname("ATTNSCOPE_D_FF");
  init_cmd->add_option("--vocab-file", init.vocab_file)->envname("ATTNSCOPE_VOCAB_FILE");
  init_cmd->add_option("--max-positions", init.max_positions)
      ->envname("ATTNSCOPE_MAX_POSITIONS")
      ->check(CLI::PositiveNumber);
  init_cmd->add_option("--seed", init.seed)->envname("ATTNSCOPE_SEED");
  init_cmd->add_option("--arch", init.arch)
      ->envname("ATTNSCOPE_ARCH")
      ->check(CLI::IsMember({"decoder", "encoder", "decoder_only", "encoder_only"}));
  init_cmd->add_option("--out", init.out, "checkpoint base path (.json/.bin appended)")->required();

  InputOptions analyze_in;
  ViewOptions view;
  auto* analyze_cmd = app.add_subcommand("analyze", "write one view of an input's attention");
  analyze_cmd->add_option("--model", analyze_in.model)->envname("ATTNSCOPE_MODEL")->required();
  analyze_cmd->add_option("--text", analyze_in.text, "input text (sentence A for pairs)")->required();
  analyze_cmd->add_option("--sentence-b", analyze_in.sentence_b);
  analyze_cmd->add_option("--view", view.view)->required()->check(CLI::IsMember({"head", "model", "neuron"}));
  analyze_cmd->add_option("--layer", view.layer);
  analyze_cmd->add_option("--head", view.head, "neuron view head");
  analyze_cmd->add_option("--heads", view.heads, "comma-separated head list (head view)");
  analyze_cmd->add_option("--token", view.token, "selected token index");
  analyze_cmd->add_option("--direction", view.direction)
      ->check(CLI::IsMember({"from_selected", "to_selected", "both"}));
  analyze_cmd->add_option("--sentence-filter", view.sentence_filter)
      ->check(CLI::IsMember({"all", "a_to_a", "a_to_b", "b_to_a", "b_to_b"}));
  analyze_cmd->add_option("--min-weight", view.min_weight);
  analyze_cmd->add_option("--resolution", view.resolution);
  analyze_cmd->add_option("--out", analyze_in.out, "output file (default stdout)");

  InputOptions report_in;
  auto* report_cmd = app.add_subcommand("report", "classify every (layer, head) attention pattern");
  report_cmd->add_option("--model", report_in.model)->envname("ATTNSCOPE_MODEL")->required();
  report_cmd->add_option("--text", report_in.text)->required();
  report_cmd->add_option("--sentence-b", report_in.sentence_b);
  report_cmd->add_option("--out", report_in.out, "output file (default stdout)");

  std::string gen_model, gen_prompt;
  std::size_t gen_max_new = 10;
  auto* gen_cmd = app.add_subcommand("generate", "greedy top-1 continuation");
  gen_cmd->add_option("--model", gen_model)->envname("ATTNSCOPE_MODEL")->required();
  gen_cmd->add_option("--prompt", gen_prompt)->required();
  gen_cmd->add_option("--max-new", gen_max_new)->envname("ATTNSCOPE_MAX_NEW");

  std::vector<std::string> serve_models;
  std::string serve_host = "127.0.0.1", serve_ui;
  int serve_port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP JSON API");
  serve_cmd->add_option("--model", serve_models, "checkpoint(s) to preload");
  serve_cmd->add_option("--host", serve_host)->envname("ATTNSCOPE_HOST");
  serve_cmd->add_option("--port", serve_port)->envname("ATTNSCOPE_PORT")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--ui-dir", serve_ui)->envname("ATTNSCOPE_UI_DIR");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*init_cmd) return run_init(init);
    if (*analyze_cmd) return run_analyze(analyze_in, view);
    if (*report_cmd) return run_report(report_in);
    if (*gen_cmd) return run_generate(gen_model, gen_prompt, gen_max_new);
    if (*serve_cmd) return run_serve(serve_models, serve_host, serve_port, serve_ui);
  } catch (const HttpError& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
    return e.status() == 404 ? kExitUsage : kExitRuntime;
  } catch (const Error& e) {
    std::cerr << "error: " << error_code_name(e.code()) << ": " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
