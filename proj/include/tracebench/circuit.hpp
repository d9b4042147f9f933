// Hand-wired model whose Yes/No decision flows through one known module,
// giving tracing and editing a verifiable ground truth.
//
// The wiring reserves a few embedding channels:
//   dim 0  keyword signal  (relation-keyword tokens carry a fixed value)
//   dim 1  carrier         (written only by the planted MLP at (r, enc_layer))
//   dim 2  constant one    (bias channel; present on every token)
//   dim 3  evidence (encoder) / answer (decoder)
//   dim 4  evidence broadcast (per-position attention summary)
// The planted MLP detects the keyword value at position r through a narrow
// ReLU band and emits the carrier; a planted cross-attention head at
// dec_layer reads the carrier into the decoder's answer channel, which the
// output head compares against the constant channel. Evidence tokens are
// summarized into every position by a marker-keyed attention head, so the
// edited layer's inputs separate true relations from unrelated ones even
// though the unedited decision ignores them (the model systematically
// over-answers Yes).
// All remaining weights are random but masked to the free channels (>= 5).
#pragma once

#include <cstdint>
#include <vector>

#include "tracebench/model.hpp"

namespace tb::model {

struct CircuitPlant {
  int relation_token_position = 0;  // r: where the keyword sits in prompts
  int enc_layer = 0;                // planted encoder MLP layer
  int dec_layer = 0;                // planted decoder cross-attention layer
  std::vector<int> keyword_tokens;   // relation-keyword token ids
  std::vector<int> evidence_tokens;  // token ids lexically marking a true relation
  int yes_token = 0;
  int no_token = 0;
  std::uint64_t seed = 1;  // non-planted weights
};

Seq2SeqModel build_circuit_model(const ModelConfig& cfg,
                                 const CircuitPlant& plant);

}  // namespace tb::model
