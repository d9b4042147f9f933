// Micro encoder-decoder transformer with activation capture, intervention
// hooks and exact gradients from any module output.
//
// Architecture: learned absolute position embeddings, pre-norm residual
// blocks with scale-only RMS normalization, un-gated ReLU MLPs, multi-head
// attention, untied output head. Classification reads the first decode step
// only; the decoder input is the single start token.
//
// "Module output" means the vector added back into the residual stream
// (post-projection, pre-residual-add) for mlp / self_attn / cross_attn, and
// the post-block residual value for transformer_block.
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "tracebench/autodiff.hpp"
#include "tracebench/numkernel.hpp"

namespace tb::model {

using tb::num::Matrix;
using tb::num::Vector;

enum class Component { encoder, decoder };
enum class ModuleType { transformer_block, mlp, self_attn, cross_attn };

const char* to_string(Component c);
const char* to_string(ModuleType t);
Component component_from_string(const std::string& s);
ModuleType module_type_from_string(const std::string& s);

struct ModuleAddress {
  Component component = Component::encoder;
  ModuleType module_type = ModuleType::mlp;
  int token = 0;
  int layer = 0;

  bool operator==(const ModuleAddress&) const = default;
};

struct ModelConfig {
  int vocab_size = 64;
  int d_model = 32;
  int d_ff = 64;
  int n_heads = 4;
  int enc_layers = 4;
  int dec_layers = 4;
  int max_seq_len = 48;
  double norm_eps = 1e-6;
  int start_token = 0;  // decoder input at step 0

  int d_head() const { return d_model / n_heads; }
  void validate() const;  // throws std::invalid_argument
};

struct AttnWeights {
  Matrix wq, wk, wv, wo;  // d_model x d_model, applied as x * W^T
};

struct EncoderLayer {
  AttnWeights attn;
  Matrix w_in;   // d_ff x d_model
  Matrix w_out;  // d_model x d_ff
  Vector norm_attn, norm_mlp;  // RMS norm scales, d_model
};

struct DecoderLayer {
  AttnWeights self_attn;
  AttnWeights cross_attn;
  Matrix w_in;
  Matrix w_out;
  Vector norm_self, norm_cross, norm_mlp;
};

struct Seq2SeqModel {
  ModelConfig config;
  Matrix tok_embed;  // vocab x d_model
  Matrix pos_embed;  // max_seq_len x d_model
  std::vector<EncoderLayer> enc;
  std::vector<DecoderLayer> dec;
  Vector enc_final_norm;
  Vector dec_final_norm;
  Matrix lm_head;  // vocab x d_model

  void validate_address(const ModuleAddress& a, int seq_len) const;
  void require_finite() const;
  double embedding_std() const;  // std over all token-embedding entries
};

// Uniform small random weights; used by tests and `build-model`.
Seq2SeqModel random_model(const ModelConfig& cfg, std::uint64_t seed,
                          double weight_scale = 0.25);

struct Intervention {
  ModuleAddress address;
  Vector replacement;  // length d_model
};

// Capture flags for forward().
enum CaptureFlags : unsigned {
  kCaptureNone = 0,
  kCaptureModules = 1u << 0,     // module outputs at every address
  kCaptureEditInputs = 1u << 1,  // last-linear-layer inputs (MLP hidden, cross-attn concat)
  kCaptureResume = 1u << 2,      // residual stream at each layer boundary
};

struct RunRecord {
  std::vector<int> enc_tokens;
  std::vector<int> dec_tokens;
  Vector logits;  // first-step logits over vocab

  unsigned captured = kCaptureNone;

  // kCaptureModules: [layer] -> (tokens x d_model); decoder side is 1 row.
  std::vector<Matrix> enc_block, enc_mlp, enc_attn;
  std::vector<Matrix> dec_block, dec_mlp, dec_self, dec_cross;

  // kCaptureEditInputs
  std::vector<Matrix> enc_mlp_hidden;    // [enc layer] -> tokens x d_ff
  std::vector<Matrix> dec_cross_concat;  // [dec layer] -> 1 x d_model

  // kCaptureResume
  std::vector<Matrix> enc_resume;  // residual entering each encoder layer
  Matrix enc_out_normed;           // encoder output after final norm
  std::vector<Matrix> dec_resume;  // residual entering each decoder layer

  // Captured module output vector at an address (requires kCaptureModules).
  Vector module_output(const ModuleAddress& a) const;
};

struct ForwardOptions {
  // Additive noise on the embeddings of tokens [noise_begin, noise_begin+rows).
  const Matrix* embedding_noise = nullptr;
  int noise_begin = 0;
  std::span<const Intervention> interventions;
  unsigned capture = kCaptureNone;
};

RunRecord forward(const Seq2SeqModel& m, std::span<const int> enc_tokens,
                  const ForwardOptions& opt = {});

// Recomputes logits from a cached run (kCaptureResume) with one intervention
// applied, starting at the intervention's layer. Bit-identical to a full
// forward() with the same inputs.
Vector forward_resume(const Seq2SeqModel& m, const RunRecord& cached,
                      const Intervention& iv);

struct Verbalizer {
  int yes_token = 0;
  int no_token = 0;
};

// Softmax probabilities of the Yes/No tokens at the first decode step.
std::pair<double, double> answer_prob(const RunRecord& run, const Verbalizer& v);

// Differentiable functional of the first-step logits. Terms are optional;
// an empty spec is the constant 0.
struct LossSpec {
  std::optional<int> nll_token;  // -log softmax(logits)[token]
  struct KlTerm {
    int yes_token = 0;
    int no_token = 0;
    double ref_p_yes = 0.5;  // reference Bernoulli parameter
  };
  std::optional<KlTerm> kl;  // KL(renormalized yes/no pair || reference)
};

// Graph forward used by gradient paths. If `inject` is given, the module
// output row at that address is replaced by a differentiable input
// initialized to `inject_value` (1 x d_model); the returned Var is that input.
struct GraphRun {
  ad::Var logits;    // 1 x vocab
  ad::Var injected;  // invalid when no injection requested
};
GraphRun graph_forward(ad::Graph& g, const Seq2SeqModel& m,
                       std::span<const int> enc_tokens,
                       const ForwardOptions& opt,
                       const ModuleAddress* inject = nullptr,
                       const Matrix* inject_value = nullptr);

// Builds the loss graph on top of first-step logits.
ad::Var loss_graph(ad::Graph& g, ad::Var logits, const LossSpec& loss,
                   int vocab_size);

// d(loss)/d(module output at address), exact reverse mode. The module output
// is taken at its value in the run defined by (enc_tokens, opt).
Vector grad_wrt_module_output(const Seq2SeqModel& m,
                              std::span<const int> enc_tokens,
                              const ForwardOptions& opt,
                              const ModuleAddress& address,
                              const LossSpec& loss);

}  // namespace tb::model
