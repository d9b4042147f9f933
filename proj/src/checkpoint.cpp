#include "tracebench/checkpoint.hpp"

#include <stdexcept>

#include "tracebench/tensor_io.hpp"

namespace tb::model {

namespace {

using tb::io::NamedTensor;
using tb::num::Vector;

Matrix as_col(const Vector& v) {
  Matrix m(v.size(), 1);
  m.col(0) = v;
  return m;
}

Vector as_vec(const Matrix& m, const std::string& name) {
  if (m.cols() != 1) throw std::runtime_error("tensor " + name + ": expected column vector");
  return m.col(0);
}

void check_shape(const Matrix& m, long rows, long cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw std::runtime_error("tensor " + name + ": unexpected shape");
  }
}

}  // namespace

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
          {"d_ff", cfg.d_ff},             {"n_heads", cfg.n_heads},
          {"enc_layers", cfg.enc_layers}, {"dec_layers", cfg.dec_layers},
          {"max_seq_len", cfg.max_seq_len}, {"norm_eps", cfg.norm_eps},
          {"start_token", cfg.start_token}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.enc_layers = j.at("enc_layers").get<int>();
  cfg.dec_layers = j.at("dec_layers").get<int>();
  cfg.max_seq_len = j.at("max_seq_len").get<int>();
  cfg.norm_eps = j.at("norm_eps").get<double>();
  cfg.start_token = j.at("start_token").get<int>();
  cfg.validate();
  return cfg;
}

void save_checkpoint(const Seq2SeqModel& m, const std::string& path,
                     const nlohmann::json& extra_meta) {
  m.config.validate();
  m.require_finite();
  std::vector<NamedTensor> tensors;
  tensors.push_back({"tok_embed", m.tok_embed});
  tensors.push_back({"pos_embed", m.pos_embed});
  tensors.push_back({"lm_head", m.lm_head});
  tensors.push_back({"enc_final_norm", as_col(m.enc_final_norm)});
  tensors.push_back({"dec_final_norm", as_col(m.dec_final_norm)});
  for (int i = 0; i < m.config.enc_layers; ++i) {
    const auto& l = m.enc[i];
    const std::string p = "enc." + std::to_string(i) + ".";
    tensors.push_back({p + "attn.wq", l.attn.wq});
    tensors.push_back({p + "attn.wk", l.attn.wk});
    tensors.push_back({p + "attn.wv", l.attn.wv});
    tensors.push_back({p + "attn.wo", l.attn.wo});
    tensors.push_back({p + "w_in", l.w_in});
    tensors.push_back({p + "w_out", l.w_out});
    tensors.push_back({p + "norm_attn", as_col(l.norm_attn)});
    tensors.push_back({p + "norm_mlp", as_col(l.norm_mlp)});
  }
  for (int i = 0; i < m.config.dec_layers; ++i) {
    const auto& l = m.dec[i];
    const std::string p = "dec." + std::to_string(i) + ".";
    tensors.push_back({p + "self_attn.wq", l.self_attn.wq});
    tensors.push_back({p + "self_attn.wk", l.self_attn.wk});
    tensors.push_back({p + "self_attn.wv", l.self_attn.wv});
    tensors.push_back({p + "self_attn.wo", l.self_attn.wo});
    tensors.push_back({p + "cross_attn.wq", l.cross_attn.wq});
    tensors.push_back({p + "cross_attn.wk", l.cross_attn.wk});
    tensors.push_back({p + "cross_attn.wv", l.cross_attn.wv});
    tensors.push_back({p + "cross_attn.wo", l.cross_attn.wo});
    tensors.push_back({p + "w_in", l.w_in});
    tensors.push_back({p + "w_out", l.w_out});
    tensors.push_back({p + "norm_self", as_col(l.norm_self)});
    tensors.push_back({p + "norm_cross", as_col(l.norm_cross)});
    tensors.push_back({p + "norm_mlp", as_col(l.norm_mlp)});
  }
  nlohmann::json meta = extra_meta;
  meta["format"] = "tb-checkpoint";
  meta["format_version"] = 1;
  meta["config"] = config_to_json(m.config);
  tb::io::write_tensor_file(path, meta, tensors);
}

Seq2SeqModel load_checkpoint(const std::string& path) {
  const tb::io::TensorFile f = tb::io::read_tensor_file(path);
  if (f.meta.at("format").get<std::string>() != "tb-checkpoint") {
    throw std::runtime_error("not a checkpoint manifest: " + path);
  }
  Seq2SeqModel m;
  m.config = config_from_json(f.meta.at("config"));
  const int d = m.config.d_model;

  auto get = [&](const std::string& name, long rows, long cols) -> Matrix {
    const Matrix& t = f.find(name);
    check_shape(t, rows, cols, name);
    return t;
  };
  m.tok_embed = get("tok_embed", m.config.vocab_size, d);
  m.pos_embed = get("pos_embed", m.config.max_seq_len, d);
  m.lm_head = get("lm_head", m.config.vocab_size, d);
  m.enc_final_norm = as_vec(get("enc_final_norm", d, 1), "enc_final_norm");
  m.dec_final_norm = as_vec(get("dec_final_norm", d, 1), "dec_final_norm");
  m.enc.resize(m.config.enc_layers);
  for (int i = 0; i < m.config.enc_layers; ++i) {
    auto& l = m.enc[i];
    const std::string p = "enc." + std::to_string(i) + ".";
    l.attn.wq = get(p + "attn.wq", d, d);
    l.attn.wk = get(p + "attn.wk", d, d);
    l.attn.wv = get(p + "attn.wv", d, d);
    l.attn.wo = get(p + "attn.wo", d, d);
    l.w_in = get(p + "w_in", m.config.d_ff, d);
    l.w_out = get(p + "w_out", d, m.config.d_ff);
    l.norm_attn = as_vec(get(p + "norm_attn", d, 1), p + "norm_attn");
    l.norm_mlp = as_vec(get(p + "norm_mlp", d, 1), p + "norm_mlp");
  }
  m.dec.resize(m.config.dec_layers);
  for (int i = 0; i < m.config.dec_layers; ++i) {
    auto& l = m.dec[i];
    const std::string p = "dec." + std::to_string(i) + ".";
    l.self_attn.wq = get(p + "self_attn.wq", d, d);
    l.self_attn.wk = get(p + "self_attn.wk", d, d);
    l.self_attn.wv = get(p + "self_attn.wv", d, d);
    l.self_attn.wo = get(p + "self_attn.wo", d, d);
    l.cross_attn.wq = get(p + "cross_attn.wq", d, d);
    l.cross_attn.wk = get(p + "cross_attn.wk", d, d);
    l.cross_attn.wv = get(p + "cross_attn.wv", d, d);
    l.cross_attn.wo = get(p + "cross_attn.wo", d, d);
    l.w_in = get(p + "w_in", m.config.d_ff, d);
    l.w_out = get(p + "w_out", d, m.config.d_ff);
    l.norm_self = as_vec(get(p + "norm_self", d, 1), p + "norm_self");
    l.norm_cross = as_vec(get(p + "norm_cross", d, 1), p + "norm_cross");
    l.norm_mlp = as_vec(get(p + "norm_mlp", d, 1), p + "norm_mlp");
  }
  return m;
}

}  // namespace tb::model
