#include "tracebench/editing.hpp"

#include <cmath>
#include <stdexcept>

#include "tracebench/tensor_io.hpp"

namespace tb::editing {

using tb::model::ForwardOptions;
using tb::model::RunRecord;

bool editable(Component c, ModuleType t) {
  return (c == Component::encoder && t == ModuleType::mlp) ||
         (c == Component::decoder && t == ModuleType::cross_attn);
}

namespace {

void require_editable(const EditTarget& t) {
  if (!editable(t.component, t.module_type)) {
    throw std::invalid_argument(
        "editable targets are encoder.mlp and decoder.cross_attn only");
  }
}

void check_layer(const Seq2SeqModel& m, const EditTarget& t) {
  const int n = t.component == Component::encoder ? m.config.enc_layers
                                                  : m.config.dec_layers;
  if (t.layer < 0 || t.layer >= n) throw std::invalid_argument("edit layer out of range");
}

const Matrix& weight_at(const Seq2SeqModel& m, const EditTarget& t) {
  return t.component == Component::encoder ? m.enc[t.layer].w_out
                                           : m.dec[t.layer].cross_attn.wo;
}

Matrix& weight_at(Seq2SeqModel& m, const EditTarget& t) {
  return t.component == Component::encoder ? m.enc[t.layer].w_out
                                           : m.dec[t.layer].cross_attn.wo;
}

ModuleAddress sample_address(const EditTarget& t, const EditSample& s) {
  const int tok = t.component == Component::encoder ? s.located_pos : 0;
  return {t.component, t.module_type, tok, t.layer};
}

// Edited layer's input row at the located position.
Vector edit_input(const RunRecord& run, const EditTarget& t, int located_pos) {
  if (t.component == Component::encoder) {
    return run.enc_mlp_hidden.at(t.layer).row(located_pos);
  }
  return run.dec_cross_concat.at(t.layer).row(0);
}

tb::model::LossSpec sample_loss(const Seq2SeqModel& m, const EditSample& s,
                                const Verbalizer& verb) {
  tb::model::LossSpec spec;
  if (!s.sample.positive) {
    spec.nll_token = verb.no_token;
    return spec;
  }
  const RunRecord clean = forward(m, s.sample.tokens, {});
  const auto [py, pn] = answer_prob(clean, verb);
  spec.kl = {verb.yes_token, verb.no_token, py / (py + pn)};
  return spec;
}

double eval_sample(const Seq2SeqModel& m, const EditTarget& t,
                   const EditSample& s, const tb::model::LossSpec& spec,
                   const Vector& mv, Vector* grad_out) {
  const ModuleAddress addr = sample_address(t, s);
  ad::Graph g;
  Matrix inj(1, mv.size());
  inj.row(0) = mv;
  const ForwardOptions opt;
  const tb::model::GraphRun gr =
      graph_forward(g, m, s.sample.tokens, opt, &addr, &inj);
  const ad::Var loss = loss_graph(g, gr.logits, spec, m.config.vocab_size);
  const double lv = g.scalar(loss);
  if (grad_out) {
    g.backward(loss);
    *grad_out = g.grad(gr.injected).row(0);
  }
  return lv;
}

}  // namespace

const EditSample& EditSet::at(int i) const {
  const int nn = static_cast<int>(negatives.size());
  return i < nn ? negatives[i] : positives[i - nn];
}

void EditSet::validate() const {
  if (size() == 0) throw std::invalid_argument("empty edit set");
  for (const auto& s : negatives) {
    if (s.sample.positive) throw std::invalid_argument("positive sample listed as negative");
  }
  for (const auto& s : positives) {
    if (!s.sample.positive) throw std::invalid_argument("negative sample listed as positive");
  }
  for (int i = 0; i < size(); ++i) {
    const auto& s = at(i);
    if (s.located_pos < 0 ||
        s.located_pos >= static_cast<int>(s.sample.tokens.size())) {
      throw std::invalid_argument("edit sample has no resolvable located position");
    }
  }
}

std::uint64_t EditSet::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::uint64_t v) { h = tb::num::mix_seed(h, v); };
  for (int i = 0; i < size(); ++i) {
    const auto& s = at(i);
    mix(s.sample.positive ? 1 : 2);
    mix(static_cast<std::uint64_t>(s.located_pos));
    for (const int t : s.sample.tokens) mix(static_cast<std::uint64_t>(t));
  }
  return h;
}

Matrix estimate_c0(const Seq2SeqModel& m, const EditTarget& target,
                   const std::vector<std::vector<int>>& corpus, double lambda) {
  require_editable(target);
  check_layer(m, target);
  if (corpus.empty()) throw std::invalid_argument("empty background corpus");
  if (lambda < 0) throw std::invalid_argument("lambda must be >= 0");
  const int dim = target.component == Component::encoder ? m.config.d_ff
                                                         : m.config.d_model;
  Matrix c = Matrix::Zero(dim, dim);
  long count = 0;
  ForwardOptions opt;
  opt.capture = tb::model::kCaptureEditInputs;
  for (const auto& seq : corpus) {
    const RunRecord run = forward(m, seq, opt);
    if (target.component == Component::encoder) {
      const Matrix& h = run.enc_mlp_hidden.at(target.layer);
      c.noalias() += h.transpose() * h;
      count += h.rows();
    } else {
      const Vector k = run.dec_cross_concat.at(target.layer).row(0);
      c.noalias() += k * k.transpose();
      count += 1;
    }
  }
  c *= lambda / static_cast<double>(count);
  return c;
}

double edit_objective(const Seq2SeqModel& m, const EditTarget& target,
                      const EditSet& edit_set, const Verbalizer& verb,
                      const Matrix& m1) {
  require_editable(target);
  edit_set.validate();
  if (m1.cols() != edit_set.size() || m1.rows() != m.config.d_model) {
    throw std::invalid_argument("target matrix shape mismatch");
  }
  double total = 0.0;
  for (int i = 0; i < edit_set.size(); ++i) {
    const auto& s = edit_set.at(i);
    total += eval_sample(m, target, s, sample_loss(m, s, verb), m1.col(i), nullptr);
  }
  return total;
}

Matrix optimize_targets(const Seq2SeqModel& m, const EditTarget& target,
                        const EditSet& edit_set, const OptimizeOptions& opt,
                        const Verbalizer& verb) {
  require_editable(target);
  check_layer(m, target);
  edit_set.validate();
  if (opt.steps < 0 || opt.step_size <= 0) {
    throw std::invalid_argument("bad optimizer options");
  }
  Matrix m1(m.config.d_model, edit_set.size());
  ForwardOptions capture;
  capture.capture = tb::model::kCaptureModules;
  for (int i = 0; i < edit_set.size(); ++i) {
    const auto& s = edit_set.at(i);
    const RunRecord clean = forward(m, s.sample.tokens, capture);
    const Vector m0 = clean.module_output(sample_address(target, s));
    const tb::model::LossSpec spec = sample_loss(m, s, verb);
    Vector cur = m0, best = m0;
    double best_loss = eval_sample(m, target, s, spec, cur, nullptr);
    if (!std::isfinite(best_loss)) throw std::runtime_error("non-finite edit objective");
    for (int step = 0; step < opt.steps; ++step) {
      Vector grad;
      eval_sample(m, target, s, spec, cur, &grad);
      cur -= opt.step_size * grad;
      const double loss = eval_sample(m, target, s, spec, cur, nullptr);
      if (!std::isfinite(loss)) throw std::runtime_error("edit objective diverged");
      if (loss < best_loss) {
        best_loss = loss;
        best = cur;
      }
    }
    m1.col(i) = best;
  }
  return m1;
}

EditDelta solve_delta(const SolveInputs& in, const EditTarget& target) {
  const long out_dim = in.w0.rows();
  const long in_dim = in.w0.cols();
  const long n = in.k1.cols();
  if (in.k1.rows() != in_dim || in.m1.rows() != out_dim || in.m1.cols() != n ||
      in.c0.rows() != in_dim || in.c0.cols() != in_dim) {
    throw std::invalid_argument("solve inputs: dimension mismatch");
  }
  if (in.lambda < 0) throw std::invalid_argument("lambda must be >= 0");
  if ((in.c0 - in.c0.transpose()).cwiseAbs().maxCoeff() >
      1e-10 * (1.0 + in.c0.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("C0 is not symmetric");
  }
  const Matrix r = in.m1 - in.w0 * in.k1;
  const Matrix a = in.c0 + in.k1 * in.k1.transpose();
  const Matrix x = tb::num::solve_spd(a, in.k1 * r.transpose());
  EditDelta d;
  d.delta = x.transpose();
  d.target = target;
  d.lambda = in.lambda;
  tb::num::require_finite(d.delta, "edit delta");
  return d;
}

Seq2SeqModel apply_edit(const Seq2SeqModel& m, const std::vector<EditDelta>& deltas) {
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    require_editable(deltas[i].target);
    check_layer(m, deltas[i].target);
    for (std::size_t j = i + 1; j < deltas.size(); ++j) {
      if (deltas[i].target == deltas[j].target) {
        throw std::invalid_argument("overlapping edit deltas on one target");
      }
    }
  }
  Seq2SeqModel out = m;
  for (const auto& d : deltas) {
    Matrix& w = weight_at(out, d.target);
    if (d.delta.rows() != w.rows() || d.delta.cols() != w.cols()) {
      throw std::invalid_argument("edit delta shape mismatch");
    }
    w += d.delta;
  }
  return out;
}

Matrix collect_k1(const Seq2SeqModel& m, const EditTarget& target,
                  const EditSet& edit_set) {
  require_editable(target);
  check_layer(m, target);
  edit_set.validate();
  const int dim = target.component == Component::encoder ? m.config.d_ff
                                                         : m.config.d_model;
  Matrix k1(dim, edit_set.size());
  ForwardOptions opt;
  opt.capture = tb::model::kCaptureEditInputs;
  for (int i = 0; i < edit_set.size(); ++i) {
    const auto& s = edit_set.at(i);
    const RunRecord run = forward(m, s.sample.tokens, opt);
    k1.col(i) = edit_input(run, target, s.located_pos);
  }
  return k1;
}

std::vector<EditDelta> edit_multi_layer(const Seq2SeqModel& m,
                                        Component component,
                                        const std::vector<int>& layers,
                                        const EditSet& edit_set,
                                        const std::vector<std::vector<int>>& corpus,
                                        double lambda, const OptimizeOptions& opt,
                                        const Verbalizer& verb,
                                        const std::string& task) {
  if (layers.empty()) throw std::invalid_argument("no edit layers");
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (layers[i] <= layers[i - 1]) {
      throw std::invalid_argument("edit layers must be strictly ascending");
    }
  }
  const ModuleType type = component == Component::encoder ? ModuleType::mlp
                                                          : ModuleType::cross_attn;
  const EditTarget top{component, type, layers.back()};
  check_layer(m, top);
  check_layer(m, EditTarget{component, type, layers.front()});
  edit_set.validate();

  const Matrix m1 = optimize_targets(m, top, edit_set, opt, verb);
  const std::uint64_t set_hash = edit_set.hash();

  Seq2SeqModel cur = m;
  std::vector<EditDelta> out;
  ForwardOptions capture;
  capture.capture = tb::model::kCaptureModules | tb::model::kCaptureEditInputs;
  for (std::size_t idx = 0; idx < layers.size(); ++idx) {
    const int remaining = static_cast<int>(layers.size() - idx);
    const EditTarget tgt{component, type, layers[idx]};
    const int in_dim = component == Component::encoder ? m.config.d_ff
                                                       : m.config.d_model;
    Matrix k1(in_dim, edit_set.size());
    Matrix targets(m.config.d_model, edit_set.size());
    for (int i = 0; i < edit_set.size(); ++i) {
      const auto& s = edit_set.at(i);
      const RunRecord run = forward(cur, s.sample.tokens, capture);
      const Vector o_top = run.module_output(sample_address(top, s));
      const Vector o_here = run.module_output(sample_address(tgt, s));
      targets.col(i) = o_here + (m1.col(i) - o_top) / remaining;
      k1.col(i) = edit_input(run, tgt, s.located_pos);
    }
    SolveInputs si;
    si.w0 = weight_at(cur, tgt);
    si.k1 = std::move(k1);
    si.m1 = std::move(targets);
    si.c0 = estimate_c0(cur, tgt, corpus, lambda);
    si.lambda = lambda;
    EditDelta d = solve_delta(si, tgt);
    d.task = task;
    d.edit_set_hash = set_hash;
    weight_at(cur, tgt) += d.delta;
    out.push_back(std::move(d));
  }
  return out;
}

void write_deltas(const std::string& path, const std::vector<EditDelta>& deltas,
                  const nlohmann::json& extra_meta) {
  if (deltas.empty()) throw std::invalid_argument("no deltas to write");
  std::vector<tb::io::NamedTensor> tensors;
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    const auto& d = deltas[i];
    tensors.push_back({"delta." + std::to_string(i), d.delta});
    entries.push_back({{"component", to_string(d.target.component)},
                       {"module_type", to_string(d.target.module_type)},
                       {"layer", d.target.layer},
                       {"task", d.task},
                       {"lambda", d.lambda},
                       {"edit_set_hash", tb::io::hex64(d.edit_set_hash)}});
  }
  nlohmann::json meta = extra_meta;
  meta["format"] = "tb-delta";
  meta["format_version"] = 1;
  meta["entries"] = std::move(entries);
  tb::io::write_tensor_file(path, meta, tensors);
}

std::vector<EditDelta> read_deltas(const std::string& path) {
  const tb::io::TensorFile f = tb::io::read_tensor_file(path);
  if (f.meta.at("format").get<std::string>() != "tb-delta") {
    throw std::runtime_error("not a delta manifest: " + path);
  }
  std::vector<EditDelta> out;
  const auto& entries = f.meta.at("entries");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    EditDelta d;
    d.delta = f.find("delta." + std::to_string(i));
    d.target.component =
        tb::model::component_from_string(e.at("component").get<std::string>());
    d.target.module_type =
        tb::model::module_type_from_string(e.at("module_type").get<std::string>());
    d.target.layer = e.at("layer").get<int>();
    d.task = e.at("task").get<std::string>();
    d.lambda = e.at("lambda").get<double>();
    d.edit_set_hash = std::stoull(e.at("edit_set_hash").get<std::string>(), nullptr, 16);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace tb::editing
