#include "tracebench/circuit.hpp"

#include <stdexcept>

namespace tb::model {

namespace {

// Planted magnitudes. Chosen so that clean margins saturate the softmax and
// a corrupted keyword leaves the carrier dead with high probability.
constexpr double kSignal = 4.0;        // keyword value on dim 0
constexpr double kBandHalfWidth = 0.25;  // detector band around kSignal
constexpr double kSignalSpread = 0.02;   // per-keyword offset inside the band
constexpr double kCarrier = 12.0;      // carrier magnitude target
constexpr double kEvidence = 2.0;      // evidence value on dim 3
constexpr double kEvidenceGain = 3.0;  // hidden-unit gain on evidence
constexpr double kEvidenceKey = 8.0;   // marker-keyed attention sharpness
constexpr double kQueryGain = 2.5;
constexpr double kKeyGain = 2.5;
constexpr double kValueGain = 1.0;
constexpr double kAnswerGain = 0.6;    // cross-attn write into answer channel
constexpr double kHeadGain = 5.0;      // yes/no rows of the output head
constexpr double kFreeScale = 0.05;    // non-planted weight scale

constexpr int kReservedDims = 5;

void zero_reserved_rows(Matrix& m) {
  m.topRows(std::min<Eigen::Index>(kReservedDims, m.rows())).setZero();
}

void zero_reserved_cols(Matrix& m) {
  m.leftCols(std::min<Eigen::Index>(kReservedDims, m.cols())).setZero();
}

void mask_attn(AttnWeights& w) {
  zero_reserved_cols(w.wq);  // never read reserved channels
  zero_reserved_cols(w.wk);
  zero_reserved_cols(w.wv);
  zero_reserved_rows(w.wo);  // never write reserved channels
}

}  // namespace

Seq2SeqModel build_circuit_model(const ModelConfig& cfg,
                                 const CircuitPlant& plant) {
  cfg.validate();
  if (cfg.d_model < kReservedDims) {
    throw std::invalid_argument(
        "build_circuit_model: d_model too small to host the planted directions");
  }
  if (cfg.d_ff < 4) {
    throw std::invalid_argument("build_circuit_model: d_ff must be >= 4");
  }
  if (plant.enc_layer < 0 || plant.enc_layer >= cfg.enc_layers ||
      plant.dec_layer < 0 || plant.dec_layer >= cfg.dec_layers) {
    throw std::invalid_argument("build_circuit_model: planted layer out of range");
  }
  if (plant.relation_token_position < 0 ||
      plant.relation_token_position >= cfg.max_seq_len) {
    throw std::invalid_argument("build_circuit_model: position out of range");
  }
  auto check_tok = [&](int t) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw std::invalid_argument("build_circuit_model: token id out of vocab");
    }
  };
  for (int t : plant.keyword_tokens) check_tok(t);
  for (int t : plant.evidence_tokens) check_tok(t);
  check_tok(plant.yes_token);
  check_tok(plant.no_token);

  Seq2SeqModel m = random_model(cfg, plant.seed, kFreeScale);

  // Embeddings: random free channels, explicit reserved channels.
  m.tok_embed.leftCols(kReservedDims).setZero();
  m.tok_embed.col(2).setOnes();  // constant channel on every token
  // Keywords sit at slightly different points inside the detector band, so
  // the two hinge units are not collinear over clean text (their second
  // moment must be nonsingular for the regularized edit solve).
  for (std::size_t i = 0; i < plant.keyword_tokens.size(); ++i) {
    const double off = kSignalSpread * (static_cast<double>(i % 3) - 1.0);
    m.tok_embed(plant.keyword_tokens[i], 0) = kSignal + off;
  }
  for (int t : plant.evidence_tokens) m.tok_embed(t, 3) = kEvidence;
  m.pos_embed.leftCols(kReservedDims).setZero();

  for (auto& l : m.enc) {
    mask_attn(l.attn);
    zero_reserved_cols(l.w_in);
    zero_reserved_rows(l.w_out);
  }
  for (auto& l : m.dec) {
    mask_attn(l.self_attn);
    mask_attn(l.cross_attn);
    zero_reserved_cols(l.w_in);
    zero_reserved_rows(l.w_out);
  }
  m.lm_head.leftCols(kReservedDims).setZero();

  const int dh = cfg.d_head();

  // Marker-keyed head at the planted encoder layer (head 0): a constant
  // query and evidence-keyed scores concentrate attention on marker tokens,
  // so every position receives an O(1) evidence summary in the broadcast
  // channel when the sentence carries a marker and ~0 otherwise.
  {
    auto& a = m.enc[plant.enc_layer].attn;
    a.wq.topRows(dh).setZero();
    a.wk.topRows(dh).setZero();
    a.wq(0, 2) = 1.0;
    a.wk(0, 3) = kEvidenceKey;
    a.wv.row(0).setZero();
    a.wv(0, 3) = 1.0;  // read token-level evidence
    a.wo(4, 0) = 1.0;  // write the summary to the broadcast channel
  }

  // Planted MLP: hidden units 0 and 1 form a two-hinge band detector on the
  // keyword/constant ratio u = x0 - kSignal*x2 (both thresholds pair with the
  // constant channel so the shared RMS scaling cancels). The carrier
  //   2v*relu(u + h) - 3v*relu(u + h/2)
  // is 0 for u <= -h, peaks inside the band, passes v*h/2 at the clean point
  // u = 0, and turns negative for u > h/2, so off-ratio keywords suppress the
  // answer instead of carrying it. Both hinges are strictly active on clean
  // keywords, which keeps their corpus second moment nonsingular for the
  // regularized edit solve. Unit 3 reads the evidence summary; it is present
  // in the layer's input but unused by the carrier, which is exactly what
  // editing has to exploit. Unit 2 stays a free random unit.
  {
    auto& l = m.enc[plant.enc_layer];
    l.w_in.row(0).setZero();
    l.w_in.row(1).setZero();
    l.w_in.row(3).setZero();
    l.w_in(0, 0) = 1.0;
    l.w_in(0, 2) = -(kSignal - kBandHalfWidth);
    l.w_in(1, 0) = 1.0;
    l.w_in(1, 2) = -(kSignal - 0.5 * kBandHalfWidth);
    l.w_in(3, 4) = kEvidenceGain;
    l.w_out.leftCols(kReservedDims).setZero();  // planted hiddens feed only the carrier
    const double v = 2.0 * kCarrier / kBandHalfWidth;
    l.w_out(1, 0) = 2.0 * v;
    l.w_out(1, 1) = -3.0 * v;
  }

  // Planted cross-attention head: query from the decoder constant channel,
  // key/value from the encoder carrier, output into the answer channel.
  {
    auto& a = m.dec[plant.dec_layer].cross_attn;
    a.wq.topRows(dh).setZero();
    a.wk.topRows(dh).setZero();
    a.wq(0, 2) = kQueryGain;
    a.wk(0, 1) = kKeyGain;
    a.wv.row(0).setZero();
    // Value = carrier minus constant: raw channel noise has to beat the
    // constant baseline before it can masquerade as a detected keyword.
    a.wv(0, 1) = kValueGain;
    a.wv(0, 2) = -kValueGain;
    a.wo(3, 0) = kAnswerGain;
  }

  // Output head: Yes reads the answer channel, No reads the constant channel.
  m.lm_head(plant.yes_token, 3) = kHeadGain;
  m.lm_head(plant.no_token, 2) = kHeadGain;

  return m;
}

}  // namespace tb::model
