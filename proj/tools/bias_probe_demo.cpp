// Paired-prompt coreference probe: runs "The doctor asked the nurse a
// question. She/He" through a decoder checkpoint (or a seeded random model),
// prints the greedy continuation and, per head, where each pronoun's
// attention goes among {doctor, nurse}.
//
// usage: bias_probe_demo [checkpoint] [max_new]

#include <cstdio>
#include <cstdlib>
#include <string>

#include "attnscope/attnscope.hpp"

using namespace attnscope;

int main(int argc, char** argv) {
  LoadedModel model;
  if (argc > 1) {
    model = model_from_checkpoint(argv[1]);
  } else {
    model.vocab = default_vocab(false);
    model.config.n_layers = 2;
    model.config.n_heads = 2;
    model.config.d_head = 8;
    model.config.d_model = 16;
    model.config.d_ff = 64;
    model.config.vocab_size = model.vocab.size();
    model.weights = init_random(model.config, 7);
  }
  const std::size_t max_new = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 8;

  for (const char* pronoun : {"She", "He"}) {
    const std::string prompt = std::string("The doctor asked the nurse a question. ") + pronoun;
    const TokenSeq tokens = encode(prompt, model.vocab);
    const auto gen = greedy_generate(model.weights, model.config, tokens, max_new, model.vocab);
    std::printf("%s -> %s\n", prompt.c_str(), decode(gen.generated, model.vocab).c_str());

    const std::size_t pronoun_index = tokens.size() - 1;
    const std::size_t doctor = 1, nurse = 4;
    for (std::size_t l = 0; l < model.config.n_layers; ++l) {
      for (std::size_t h = 0; h < model.config.n_heads; ++h) {
        const auto probe = coreference_probe(gen.trace, l, h, pronoun_index, {doctor, nurse});
        std::printf("  layer %zu head %zu: doctor %.4f nurse %.4f -> %s (margin %.4f)\n", l, h,
                    probe.candidates[0].attention, probe.candidates[1].attention,
                    probe.preferred == doctor ? "doctor" : "nurse", probe.margin);
      }
    }
  }
  return 0;
}
