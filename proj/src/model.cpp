#include "tracebench/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tb::model {

namespace {

using tb::num::SeededRng;

Matrix rms_norm(const Matrix& x, const Vector& gain, double eps) {
  const int d = static_cast<int>(x.cols());
  Matrix y(x.rows(), d);
  for (int i = 0; i < x.rows(); ++i) {
    const double rms = std::sqrt(x.row(i).squaredNorm() / d + eps);
    y.row(i) = x.row(i).cwiseProduct(gain.transpose()) / rms;
  }
  return y;
}

Matrix softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).array() - m).exp();
    y.row(i) = e / e.sum();
  }
  return y;
}

struct AttnResult {
  Matrix out;     // nq x d_model, after the output projection
  Matrix concat;  // nq x d_model, per-head concatenation (input of wo)
};

AttnResult attention(const Matrix& q_in, const Matrix& kv_in,
                     const AttnWeights& w, int n_heads) {
  const int d = static_cast<int>(q_in.cols());
  const int dh = d / n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix q = q_in * w.wq.transpose();
  const Matrix k = kv_in * w.wk.transpose();
  const Matrix v = kv_in * w.wv.transpose();
  Matrix concat(q_in.rows(), d);
  for (int h = 0; h < n_heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    const auto vh = v.middleCols(h * dh, dh);
    const Matrix scores = (qh * kh.transpose()) * inv_sqrt_dh;
    const Matrix a = softmax_rows(scores);
    concat.middleCols(h * dh, dh) = a * vh;
  }
  return {concat * w.wo.transpose(), std::move(concat)};
}

void apply_interventions(Matrix& out, Component c, ModuleType t, int layer,
                         std::span<const Intervention> ivs) {
  for (const auto& iv : ivs) {
    if (iv.address.component == c && iv.address.module_type == t &&
        iv.address.layer == layer) {
      out.row(iv.address.token) = iv.replacement.transpose();
    }
  }
}

// One encoder layer, in place. rec may be null (resume path).
void enc_layer_fwd(const Seq2SeqModel& m, int l, Matrix& x,
                   std::span<const Intervention> ivs, RunRecord* rec) {
  const auto& lw = m.enc[l];
  const unsigned cap = rec ? rec->captured : 0u;
  if (cap & kCaptureResume) rec->enc_resume.push_back(x);

  const Matrix xn1 = rms_norm(x, lw.norm_attn, m.config.norm_eps);
  Matrix a = attention(xn1, xn1, lw.attn, m.config.n_heads).out;
  apply_interventions(a, Component::encoder, ModuleType::self_attn, l, ivs);
  if (cap & kCaptureModules) rec->enc_attn.push_back(a);
  x += a;

  const Matrix xn = rms_norm(x, lw.norm_mlp, m.config.norm_eps);
  const Matrix hidden = (xn * lw.w_in.transpose()).cwiseMax(0.0);
  if (cap & kCaptureEditInputs) rec->enc_mlp_hidden.push_back(hidden);
  Matrix mo = hidden * lw.w_out.transpose();
  apply_interventions(mo, Component::encoder, ModuleType::mlp, l, ivs);
  if (cap & kCaptureModules) rec->enc_mlp.push_back(mo);
  x += mo;

  apply_interventions(x, Component::encoder, ModuleType::transformer_block, l,
                      ivs);
  if (cap & kCaptureModules) rec->enc_block.push_back(x);
}

void dec_layer_fwd(const Seq2SeqModel& m, int l, Matrix& y,
                   const Matrix& enc_out,
                   std::span<const Intervention> ivs, RunRecord* rec) {
  const auto& lw = m.dec[l];
  const unsigned cap = rec ? rec->captured : 0u;
  if (cap & kCaptureResume) rec->dec_resume.push_back(y);

  const Matrix yn1 = rms_norm(y, lw.norm_self, m.config.norm_eps);
  Matrix sa = attention(yn1, yn1, lw.self_attn, m.config.n_heads).out;
  apply_interventions(sa, Component::decoder, ModuleType::self_attn, l, ivs);
  if (cap & kCaptureModules) rec->dec_self.push_back(sa);
  y += sa;

  AttnResult ca = attention(rms_norm(y, lw.norm_cross, m.config.norm_eps),
                            enc_out, lw.cross_attn, m.config.n_heads);
  if (cap & kCaptureEditInputs) rec->dec_cross_concat.push_back(ca.concat);
  apply_interventions(ca.out, Component::decoder, ModuleType::cross_attn, l,
                      ivs);
  if (cap & kCaptureModules) rec->dec_cross.push_back(ca.out);
  y += ca.out;

  const Matrix yn = rms_norm(y, lw.norm_mlp, m.config.norm_eps);
  Matrix mo = (yn * lw.w_in.transpose()).cwiseMax(0.0) * lw.w_out.transpose();
  apply_interventions(mo, Component::decoder, ModuleType::mlp, l, ivs);
  if (cap & kCaptureModules) rec->dec_mlp.push_back(mo);
  y += mo;

  apply_interventions(y, Component::decoder, ModuleType::transformer_block, l,
                      ivs);
  if (cap & kCaptureModules) rec->dec_block.push_back(y);
}

Matrix embed_inputs(const Seq2SeqModel& m, std::span<const int> tokens,
                    const ForwardOptions& opt) {
  const int n = static_cast<int>(tokens.size());
  Matrix x(n, m.config.d_model);
  for (int i = 0; i < n; ++i) {
    x.row(i) = m.tok_embed.row(tokens[i]) + m.pos_embed.row(i);
  }
  if (opt.embedding_noise) {
    const Matrix& noise = *opt.embedding_noise;
    if (opt.noise_begin < 0 ||
        opt.noise_begin + noise.rows() > n ||
        noise.cols() != m.config.d_model) {
      throw std::invalid_argument("forward: noise span out of range");
    }
    tb::num::require_finite(noise, "embedding noise");
    x.middleRows(opt.noise_begin, noise.rows()) += noise;
  }
  return x;
}

void validate_run_inputs(const Seq2SeqModel& m, std::span<const int> tokens,
                         const ForwardOptions& opt) {
  const int n = static_cast<int>(tokens.size());
  if (n < 1 || n > m.config.max_seq_len) {
    throw std::invalid_argument("forward: sequence length out of range");
  }
  for (int t : tokens) {
    if (t < 0 || t >= m.config.vocab_size) {
      throw std::invalid_argument("forward: token id out of vocab");
    }
  }
  for (const auto& iv : opt.interventions) {
    m.validate_address(iv.address, n);
    if (iv.replacement.size() != m.config.d_model) {
      throw std::invalid_argument("forward: replacement length != d_model");
    }
    tb::num::require_finite(iv.replacement, "intervention replacement");
  }
}

}  // namespace

const char* to_string(Component c) {
  return c == Component::encoder ? "encoder" : "decoder";
}

const char* to_string(ModuleType t) {
  switch (t) {
    case ModuleType::transformer_block: return "transformer_block";
    case ModuleType::mlp: return "mlp";
    case ModuleType::self_attn: return "self_attn";
    case ModuleType::cross_attn: return "cross_attn";
  }
  return "?";
}

Component component_from_string(const std::string& s) {
  if (s == "encoder") return Component::encoder;
  if (s == "decoder") return Component::decoder;
  throw std::invalid_argument("unknown component: " + s);
}

ModuleType module_type_from_string(const std::string& s) {
  if (s == "transformer_block") return ModuleType::transformer_block;
  if (s == "mlp") return ModuleType::mlp;
  if (s == "self_attn") return ModuleType::self_attn;
  if (s == "cross_attn") return ModuleType::cross_attn;
  throw std::invalid_argument("unknown module type: " + s);
}

void ModelConfig::validate() const {
  if (vocab_size < 1 || d_model < 1 || d_ff < 1 || n_heads < 1 ||
      enc_layers < 1 || dec_layers < 1 || max_seq_len < 1) {
    throw std::invalid_argument("ModelConfig: all dims must be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("ModelConfig: d_model not divisible by n_heads");
  }
  if (start_token < 0 || start_token >= vocab_size) {
    throw std::invalid_argument("ModelConfig: start_token out of vocab");
  }
}

void Seq2SeqModel::validate_address(const ModuleAddress& a, int seq_len) const {
  if (a.module_type == ModuleType::cross_attn &&
      a.component != Component::decoder) {
    throw std::invalid_argument("cross_attn address requires decoder");
  }
  const int n_layers =
      a.component == Component::encoder ? config.enc_layers : config.dec_layers;
  if (a.layer < 0 || a.layer >= n_layers) {
    throw std::invalid_argument("module address: layer out of range");
  }
  const int n_tokens = a.component == Component::encoder ? seq_len : 1;
  if (a.token < 0 || a.token >= n_tokens) {
    throw std::invalid_argument("module address: token out of range");
  }
}

void Seq2SeqModel::require_finite() const {
  tb::num::require_finite(tok_embed, "tok_embed");
  tb::num::require_finite(pos_embed, "pos_embed");
  tb::num::require_finite(lm_head, "lm_head");
  for (const auto& l : enc) {
    tb::num::require_finite(l.attn.wq, "enc wq");
    tb::num::require_finite(l.attn.wk, "enc wk");
    tb::num::require_finite(l.attn.wv, "enc wv");
    tb::num::require_finite(l.attn.wo, "enc wo");
    tb::num::require_finite(l.w_in, "enc w_in");
    tb::num::require_finite(l.w_out, "enc w_out");
  }
  for (const auto& l : dec) {
    tb::num::require_finite(l.self_attn.wq, "dec self wq");
    tb::num::require_finite(l.cross_attn.wq, "dec cross wq");
    tb::num::require_finite(l.w_in, "dec w_in");
    tb::num::require_finite(l.w_out, "dec w_out");
  }
}

double Seq2SeqModel::embedding_std() const {
  const double mean = tok_embed.mean();
  const double var =
      (tok_embed.array() - mean).square().sum() / tok_embed.size();
  return std::sqrt(var);
}

Seq2SeqModel random_model(const ModelConfig& cfg, std::uint64_t seed,
                          double weight_scale) {
  cfg.validate();
  SeededRng rng(seed);
  auto randm = [&rng](int r, int c, double scale) {
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
  };
  Seq2SeqModel m;
  m.config = cfg;
  const double ws = weight_scale / std::sqrt(static_cast<double>(cfg.d_model));
  m.tok_embed = randm(cfg.vocab_size, cfg.d_model, 0.5);
  m.pos_embed = randm(cfg.max_seq_len, cfg.d_model, 0.1);
  m.lm_head = randm(cfg.vocab_size, cfg.d_model, ws);
  m.enc.resize(cfg.enc_layers);
  for (auto& l : m.enc) {
    l.attn = {randm(cfg.d_model, cfg.d_model, ws),
              randm(cfg.d_model, cfg.d_model, ws),
              randm(cfg.d_model, cfg.d_model, ws),
              randm(cfg.d_model, cfg.d_model, ws)};
    l.w_in = randm(cfg.d_ff, cfg.d_model, ws);
    l.w_out = randm(cfg.d_model, cfg.d_ff, ws);
    l.norm_attn = Vector::Ones(cfg.d_model);
    l.norm_mlp = Vector::Ones(cfg.d_model);
  }
  m.dec.resize(cfg.dec_layers);
  for (auto& l : m.dec) {
    l.self_attn = {randm(cfg.d_model, cfg.d_model, ws),
                   randm(cfg.d_model, cfg.d_model, ws),
                   randm(cfg.d_model, cfg.d_model, ws),
                   randm(cfg.d_model, cfg.d_model, ws)};
    l.cross_attn = {randm(cfg.d_model, cfg.d_model, ws),
                    randm(cfg.d_model, cfg.d_model, ws),
                    randm(cfg.d_model, cfg.d_model, ws),
                    randm(cfg.d_model, cfg.d_model, ws)};
    l.w_in = randm(cfg.d_ff, cfg.d_model, ws);
    l.w_out = randm(cfg.d_model, cfg.d_ff, ws);
    l.norm_self = Vector::Ones(cfg.d_model);
    l.norm_cross = Vector::Ones(cfg.d_model);
    l.norm_mlp = Vector::Ones(cfg.d_model);
  }
  m.enc_final_norm = Vector::Ones(cfg.d_model);
  m.dec_final_norm = Vector::Ones(cfg.d_model);
  return m;
}

Vector RunRecord::module_output(const ModuleAddress& a) const {
  if (!(captured & kCaptureModules)) {
    throw std::logic_error("module_output: run captured without modules");
  }
  const std::vector<Matrix>* store = nullptr;
  if (a.component == Component::encoder) {
    switch (a.module_type) {
      case ModuleType::transformer_block: store = &enc_block; break;
      case ModuleType::mlp: store = &enc_mlp; break;
      case ModuleType::self_attn: store = &enc_attn; break;
      case ModuleType::cross_attn:
        throw std::invalid_argument("cross_attn is decoder-only");
    }
  } else {
    switch (a.module_type) {
      case ModuleType::transformer_block: store = &dec_block; break;
      case ModuleType::mlp: store = &dec_mlp; break;
      case ModuleType::self_attn: store = &dec_self; break;
      case ModuleType::cross_attn: store = &dec_cross; break;
    }
  }
  return (*store)[a.layer].row(a.token).transpose();
}

RunRecord forward(const Seq2SeqModel& m, std::span<const int> enc_tokens,
                  const ForwardOptions& opt) {
  validate_run_inputs(m, enc_tokens, opt);
  RunRecord rec;
  rec.enc_tokens.assign(enc_tokens.begin(), enc_tokens.end());
  rec.dec_tokens = {m.config.start_token};
  rec.captured = opt.capture;

  Matrix x = embed_inputs(m, enc_tokens, opt);
  for (int l = 0; l < m.config.enc_layers; ++l) {
    enc_layer_fwd(m, l, x, opt.interventions, &rec);
  }
  const Matrix enc_out = rms_norm(x, m.enc_final_norm, m.config.norm_eps);
  if (opt.capture & kCaptureResume) rec.enc_out_normed = enc_out;

  Matrix y = Matrix(1, m.config.d_model);
  y.row(0) = m.tok_embed.row(m.config.start_token) + m.pos_embed.row(0);
  for (int l = 0; l < m.config.dec_layers; ++l) {
    dec_layer_fwd(m, l, y, enc_out, opt.interventions, &rec);
  }
  const Matrix yf = rms_norm(y, m.dec_final_norm, m.config.norm_eps);
  rec.logits = (yf * m.lm_head.transpose()).row(0).transpose();
  return rec;
}

Vector forward_resume(const Seq2SeqModel& m, const RunRecord& cached,
                      const Intervention& iv) {
  if (!(cached.captured & kCaptureResume)) {
    throw std::logic_error("forward_resume: cached run lacks resume capture");
  }
  m.validate_address(iv.address, static_cast<int>(cached.enc_tokens.size()));
  std::span<const Intervention> ivs(&iv, 1);

  Matrix enc_out;
  if (iv.address.component == Component::encoder) {
    Matrix x = cached.enc_resume[iv.address.layer];
    for (int l = iv.address.layer; l < m.config.enc_layers; ++l) {
      enc_layer_fwd(m, l, x, ivs, nullptr);
    }
    enc_out = rms_norm(x, m.enc_final_norm, m.config.norm_eps);
  } else {
    enc_out = cached.enc_out_normed;
  }

  Matrix y;
  int dec_start = 0;
  if (iv.address.component == Component::decoder) {
    y = cached.dec_resume[iv.address.layer];
    dec_start = iv.address.layer;
  } else {
    // Encoder intervention: the decoder prefix depends on the encoder output,
    // so the whole decoder reruns.
    y = cached.dec_resume[0];
    dec_start = 0;
  }
  for (int l = dec_start; l < m.config.dec_layers; ++l) {
    dec_layer_fwd(m, l, y, enc_out, ivs, nullptr);
  }
  const Matrix yf = rms_norm(y, m.dec_final_norm, m.config.norm_eps);
  return (yf * m.lm_head.transpose()).row(0).transpose();
}

std::pair<double, double> answer_prob(const RunRecord& run,
                                      const Verbalizer& v) {
  if (v.yes_token < 0 || v.yes_token >= run.logits.size() || v.no_token < 0 ||
      v.no_token >= run.logits.size()) {
    throw std::invalid_argument("answer_prob: verbalizer token out of vocab");
  }
  const Vector p = tb::num::softmax(run.logits);
  return {p[v.yes_token], p[v.no_token]};
}

GraphRun graph_forward(ad::Graph& g, const Seq2SeqModel& m,
                       std::span<const int> enc_tokens,
                       const ForwardOptions& opt, const ModuleAddress* inject,
                       const Matrix* inject_value) {
  validate_run_inputs(m, enc_tokens, opt);
  if (inject) {
    m.validate_address(*inject, static_cast<int>(enc_tokens.size()));
  }
  const int d = m.config.d_model;
  const int nh = m.config.n_heads;
  const int dh = m.config.d_head();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  ad::Var injected{};
  auto maybe_inject = [&](ad::Var out, Component c, ModuleType t,
                          int layer) -> ad::Var {
    for (const auto& iv : opt.interventions) {
      if (iv.address.component == c && iv.address.module_type == t &&
          iv.address.layer == layer) {
        out = g.replace_row(out, iv.address.token,
                            g.constant(iv.replacement.transpose()));
      }
    }
    if (inject && inject->component == c && inject->module_type == t &&
        inject->layer == layer) {
      injected = g.input(*inject_value);
      out = g.replace_row(out, inject->token, injected);
    }
    return out;
  };

  auto attn = [&](ad::Var q_in, ad::Var kv_in, const AttnWeights& w)
      -> std::pair<ad::Var, ad::Var> {  // {out, concat}
    ad::Var q = g.matmul_nt(q_in, g.constant(w.wq));
    ad::Var k = g.matmul_nt(kv_in, g.constant(w.wk));
    ad::Var v = g.matmul_nt(kv_in, g.constant(w.wv));
    ad::Var concat{};
    for (int h = 0; h < nh; ++h) {
      ad::Var qh = g.slice_cols(q, h * dh, dh);
      ad::Var kh = g.slice_cols(k, h * dh, dh);
      ad::Var vh = g.slice_cols(v, h * dh, dh);
      ad::Var scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt_dh);
      ad::Var oh = g.matmul(g.softmax_rows(scores), vh);
      ad::Var padded = g.pad_cols(oh, h * dh, d);
      concat = concat.valid() ? g.add(concat, padded) : padded;
    }
    return {g.matmul_nt(concat, g.constant(w.wo)), concat};
  };

  ad::Var x = g.constant(embed_inputs(m, enc_tokens, opt));
  for (int l = 0; l < m.config.enc_layers; ++l) {
    const auto& lw = m.enc[l];
    ad::Var xn = g.rms_norm_rows(x, lw.norm_attn, m.config.norm_eps);
    ad::Var a = attn(xn, xn, lw.attn).first;
    a = maybe_inject(a, Component::encoder, ModuleType::self_attn, l);
    x = g.add(x, a);
    ad::Var xn2 = g.rms_norm_rows(x, lw.norm_mlp, m.config.norm_eps);
    ad::Var hidden = g.relu(g.matmul_nt(xn2, g.constant(lw.w_in)));
    ad::Var mo = g.matmul_nt(hidden, g.constant(lw.w_out));
    mo = maybe_inject(mo, Component::encoder, ModuleType::mlp, l);
    x = g.add(x, mo);
    x = maybe_inject(x, Component::encoder, ModuleType::transformer_block, l);
  }
  ad::Var enc_out = g.rms_norm_rows(x, m.enc_final_norm, m.config.norm_eps);

  Matrix y0(1, d);
  y0.row(0) = m.tok_embed.row(m.config.start_token) + m.pos_embed.row(0);
  ad::Var y = g.constant(y0);
  for (int l = 0; l < m.config.dec_layers; ++l) {
    const auto& lw = m.dec[l];
    ad::Var yn = g.rms_norm_rows(y, lw.norm_self, m.config.norm_eps);
    ad::Var sa = attn(yn, yn, lw.self_attn).first;
    sa = maybe_inject(sa, Component::decoder, ModuleType::self_attn, l);
    y = g.add(y, sa);
    ad::Var yc = g.rms_norm_rows(y, lw.norm_cross, m.config.norm_eps);
    ad::Var ca = attn(yc, enc_out, lw.cross_attn).first;
    ca = maybe_inject(ca, Component::decoder, ModuleType::cross_attn, l);
    y = g.add(y, ca);
    ad::Var ym = g.rms_norm_rows(y, lw.norm_mlp, m.config.norm_eps);
    ad::Var mo = g.matmul_nt(g.relu(g.matmul_nt(ym, g.constant(lw.w_in))),
                             g.constant(lw.w_out));
    mo = maybe_inject(mo, Component::decoder, ModuleType::mlp, l);
    y = g.add(y, mo);
    y = maybe_inject(y, Component::decoder, ModuleType::transformer_block, l);
  }
  ad::Var yf = g.rms_norm_rows(y, m.dec_final_norm, m.config.norm_eps);
  ad::Var logits = g.matmul_nt(yf, g.constant(m.lm_head));
  return {logits, injected};
}

ad::Var loss_graph(ad::Graph& g, ad::Var logits, const LossSpec& loss,
                   int vocab_size) {
  ad::Var total = g.constant(Matrix::Zero(1, 1));
  if (!loss.nll_token && !loss.kl) return total;
  ad::Var probs = g.softmax_rows(logits);
  if (loss.nll_token) {
    if (*loss.nll_token < 0 || *loss.nll_token >= vocab_size) {
      throw std::invalid_argument("loss: nll token out of vocab");
    }
    total = g.add(total, g.scale(g.log(g.pick(probs, 0, *loss.nll_token)), -1.0));
  }
  if (loss.kl) {
    const auto& kl = *loss.kl;
    if (kl.yes_token < 0 || kl.yes_token >= vocab_size || kl.no_token < 0 ||
        kl.no_token >= vocab_size) {
      throw std::invalid_argument("loss: kl token out of vocab");
    }
    if (!(kl.ref_p_yes > 0.0 && kl.ref_p_yes < 1.0)) {
      throw std::invalid_argument("loss: reference probability must be in (0,1)");
    }
    ad::Var py = g.pick(probs, 0, kl.yes_token);
    ad::Var pn = g.pick(probs, 0, kl.no_token);
    ad::Var q = g.div(py, g.add(py, pn));
    ad::Var qc = g.sub(g.constant(Matrix::Ones(1, 1)), q);
    ad::Var t1 = g.mul(q, g.log(g.scale(q, 1.0 / kl.ref_p_yes)));
    ad::Var t2 = g.mul(qc, g.log(g.scale(qc, 1.0 / (1.0 - kl.ref_p_yes))));
    total = g.add(total, g.add(t1, t2));
  }
  return total;
}

Vector grad_wrt_module_output(const Seq2SeqModel& m,
                              std::span<const int> enc_tokens,
                              const ForwardOptions& opt,
                              const ModuleAddress& address,
                              const LossSpec& loss) {
  if (!loss.nll_token && !loss.kl) {
    return Vector::Zero(m.config.d_model);  // loss constant in logits
  }
  // Value of the module output in this run context.
  ForwardOptions cap_opt = opt;
  cap_opt.capture = kCaptureModules;
  const RunRecord rec = forward(m, enc_tokens, cap_opt);
  const Matrix at_value = rec.module_output(address).transpose();

  ad::Graph g;
  GraphRun run = graph_forward(g, m, enc_tokens, opt, &address, &at_value);
  ad::Var l = loss_graph(g, run.logits, loss, m.config.vocab_size);
  g.backward(l);
  const Matrix& grad = g.grad(run.injected);
  if (grad.size() == 0) return Vector::Zero(m.config.d_model);
  return grad.row(0).transpose();
}

}  // namespace tb::model
