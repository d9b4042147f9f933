#include <filesystem>

#include "doctest.h"
#include "fixtures.hpp"
#include "tracebench/editing.hpp"
#include "tracebench/tracing.hpp"

using namespace tb;
using tb::num::Matrix;
using tb::num::Vector;

namespace {

struct EditRig {
  tbtest::PlantedWorld p;
  editing::EditSet set;
  editing::EditTarget target;
  std::vector<std::vector<int>> corpus;

  model::ModuleAddress address(int i) const {
    const auto& s = set.at(i);
    const int tok = target.component == model::Component::encoder ? s.located_pos : 0;
    return {target.component, target.module_type, tok, target.layer};
  }
};

EditRig make_rig(int n_neg, int n_pos,
                 model::Component comp = model::Component::encoder) {
  EditRig r;
  r.p = tbtest::make_planted();
  r.target.component = comp;
  r.target.module_type = comp == model::Component::encoder
                             ? model::ModuleType::mlp
                             : model::ModuleType::cross_attn;
  r.target.layer = comp == model::Component::encoder ? r.p.plant.enc_layer
                                                     : r.p.plant.dec_layer;
  auto data = tasks::gen_dataset(r.p.world, r.p.vocab, r.p.kind, n_pos, n_neg, 77);
  for (const auto& s : data) {
    editing::EditSample es{s, s.position_of_column(r.p.keyword_col)};
    (s.positive ? r.set.positives : r.set.negatives).push_back(es);
  }
  r.corpus = tasks::gen_background_corpus(r.p.vocab, 200, 123);
  return r;
}

double p_no_with_injection(const model::Seq2SeqModel& m,
                           const model::ModuleAddress& addr, const Vector& value,
                           const tasks::PromptSample& s,
                           const model::Verbalizer& verb) {
  model::Intervention iv{addr, value};
  model::ForwardOptions opt;
  opt.interventions = std::span(&iv, 1);
  return model::answer_prob(model::forward(m, s.tokens, opt), verb).second;
}

}  // namespace

TEST_CASE("estimate_c0 matches a two-pass oracle") {
  auto r = make_rig(2, 2);
  const Matrix c0 = editing::estimate_c0(r.p.model, r.target, r.corpus, 2.5);

  // Oracle: accumulate outer products position by position, then scale.
  Matrix acc = Matrix::Zero(r.p.model.config.d_ff, r.p.model.config.d_ff);
  long count = 0;
  for (const auto& seq : r.corpus) {
    const auto run = model::forward(r.p.model, seq,
                                    {.capture = model::kCaptureEditInputs});
    const Matrix& h = run.enc_mlp_hidden.at(r.target.layer);
    for (int t = 0; t < h.rows(); ++t) {
      acc += h.row(t).transpose() * h.row(t);
      ++count;
    }
  }
  acc *= 2.5 / static_cast<double>(count);
  CHECK((c0 - acc).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((c0 - c0.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  CHECK((editing::estimate_c0(r.p.model, r.target, r.corpus, 0.0).array() == 0.0).all());
  CHECK_THROWS_AS(editing::estimate_c0(r.p.model, r.target, {}, 1.0),
                  std::invalid_argument);
}

TEST_CASE("decoder estimate_c0 on one sequence is a scaled outer product") {
  auto r = make_rig(1, 1, model::Component::decoder);
  const std::vector<std::vector<int>> one = {r.corpus[0]};
  const Matrix c0 = editing::estimate_c0(r.p.model, r.target, one, 3.0);
  const auto run = model::forward(r.p.model, one[0],
                                  {.capture = model::kCaptureEditInputs});
  const Vector k = run.dec_cross_concat.at(r.target.layer).row(0);
  CHECK((c0 - 3.0 * k * k.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(num::numerical_rank(num::svd(c0).s, 1e-9) <= 1);
}

TEST_CASE("optimize_targets fixed point and monotone improvement") {
  const auto verb_rig = make_rig(1, 2);
  const auto& r = verb_rig;
  const auto verb = r.p.vocab.verbalizer();

  // Positives only, zero steps: targets are the clean outputs, objective 0.
  editing::EditSet pos_only;
  pos_only.positives = r.set.positives;
  const Matrix m1 = editing::optimize_targets(r.p.model, r.target, pos_only,
                                              {0, 0.5}, verb);
  for (int i = 0; i < pos_only.size(); ++i) {
    const auto clean = model::forward(r.p.model, pos_only.at(i).sample.tokens,
                                      {.capture = model::kCaptureModules});
    const model::ModuleAddress addr{r.target.component, r.target.module_type,
                                    pos_only.at(i).located_pos, r.target.layer};
    CHECK((m1.col(i) - clean.module_output(addr)).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(editing::edit_objective(r.p.model, r.target, pos_only, verb, m1) ==
        doctest::Approx(0.0).epsilon(1e-10));

  // Single negative: descent raises P(No | injected target).
  editing::EditSet neg_only;
  neg_only.negatives = {r.set.negatives[0]};
  const Matrix m0 = editing::optimize_targets(r.p.model, r.target, neg_only,
                                              {0, 0.5}, verb);
  const Matrix opt = editing::optimize_targets(r.p.model, r.target, neg_only,
                                               {25, 0.5}, verb);
  const model::ModuleAddress addr{r.target.component, r.target.module_type,
                                  neg_only.at(0).located_pos, r.target.layer};
  const auto& s = neg_only.at(0).sample;
  CHECK(p_no_with_injection(r.p.model, addr, opt.col(0), s, verb) >
        p_no_with_injection(r.p.model, addr, m0.col(0), s, verb));

  // Best-iterate selection never ends worse than it started.
  CHECK(editing::edit_objective(r.p.model, r.target, neg_only, verb, opt) <=
        editing::edit_objective(r.p.model, r.target, neg_only, verb, m0));

  editing::EditTarget bad = r.target;
  bad.module_type = model::ModuleType::self_attn;
  CHECK_THROWS_AS(editing::optimize_targets(r.p.model, bad, neg_only, {}, verb),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      editing::optimize_targets(r.p.model, r.target, neg_only, {5, 0.0}, verb),
      std::invalid_argument);
  CHECK_THROWS_AS(editing::optimize_targets(r.p.model, r.target, {}, {}, verb),
                  std::invalid_argument);
}

TEST_CASE("edit objective gradient matches finite differences") {
  auto r = make_rig(1, 1);
  const auto verb = r.p.vocab.verbalizer();
  for (int which : {0, 1}) {  // one negative, one positive
    editing::EditSet one;
    if (which == 0) one.negatives = {r.set.negatives[0]};
    else one.positives = {r.set.positives[0]};
    const auto& es = one.at(0);
    const model::ModuleAddress addr{r.target.component, r.target.module_type,
                                    es.located_pos, r.target.layer};
    const auto clean = model::forward(r.p.model, es.sample.tokens,
                                      {.capture = model::kCaptureModules});
    Matrix m1(r.p.model.config.d_model, 1);
    m1.col(0) = clean.module_output(addr);
    // Evaluate away from the initialization so the positive KL term has a
    // nonzero gradient too.
    m1.col(0).array() += 0.3;

    model::LossSpec spec;
    if (which == 0) {
      spec.nll_token = verb.no_token;
    } else {
      const auto [py, pn] = model::answer_prob(
          model::forward(r.p.model, es.sample.tokens, {}), verb);
      spec.kl = {verb.yes_token, verb.no_token, py / (py + pn)};
    }
    model::ForwardOptions opt;
    model::Intervention iv{addr, m1.col(0)};
    opt.interventions = std::span(&iv, 1);
    const Vector grad = model::grad_wrt_module_output(
        r.p.model, es.sample.tokens, opt, addr, spec);

    const double h = 1e-5;
    for (int j : {0, 1, 3, 7, 20}) {
      Matrix up = m1, dn = m1;
      up(j, 0) += h;
      dn(j, 0) -= h;
      const double fd =
          (editing::edit_objective(r.p.model, r.target, one, verb, up) -
           editing::edit_objective(r.p.model, r.target, one, verb, dn)) /
          (2 * h);
      CHECK(std::abs(grad(j) - fd) <
            1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("solve_delta closed form") {
  // Scalar hand case: dW = (6 - 0*2) * 2 / (1 + 4) = 2.4.
  editing::SolveInputs s;
  s.w0 = Matrix::Zero(1, 1);
  s.k1 = Matrix::Constant(1, 1, 2.0);
  s.m1 = Matrix::Constant(1, 1, 6.0);
  s.c0 = Matrix::Constant(1, 1, 1.0);
  CHECK(editing::solve_delta(s).delta(0, 0) == doctest::Approx(2.4).epsilon(1e-12));

  num::SeededRng rng(21);
  auto randm = [&](int r, int c) {
    Matrix m(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
    }
    return m;
  };

  for (int trial = 0; trial < 20; ++trial) {
    editing::SolveInputs in;
    in.w0 = randm(6, 8);
    in.k1 = randm(8, 4);
    in.m1 = randm(6, 4);
    const Matrix g = randm(8, 8);
    in.c0 = g * g.transpose();

    // No-op when targets equal current outputs.
    editing::SolveInputs noop = in;
    noop.m1 = in.w0 * in.k1;
    CHECK(editing::solve_delta(noop).delta.cwiseAbs().maxCoeff() < 1e-12);

    const Matrix dw = editing::solve_delta(in).delta;
    // Dense oracle with an explicit inverse.
    const Matrix a = in.c0 + in.k1 * in.k1.transpose();
    const Matrix oracle = (in.m1 - in.w0 * in.k1) * in.k1.transpose() * a.inverse();
    CHECK((dw - oracle).norm() <= 1e-9 * std::max(1.0, oracle.norm()));
    // Normal equations characterize the regularized least-squares optimum.
    const Matrix resid = dw * a - (in.m1 - in.w0 * in.k1) * in.k1.transpose();
    CHECK(resid.cwiseAbs().maxCoeff() < 1e-8);
  }

  // Exact fit: C0 = 0 with square invertible K1.
  for (int trial = 0; trial < 10; ++trial) {
    editing::SolveInputs in;
    in.w0 = randm(8, 8);
    in.k1 = randm(8, 8) + 4.0 * Matrix::Identity(8, 8);
    in.m1 = randm(8, 8);
    in.c0 = Matrix::Zero(8, 8);
    const Matrix dw = editing::solve_delta(in).delta;
    CHECK(((in.w0 + dw) * in.k1 - in.m1).cwiseAbs().maxCoeff() < 1e-8);
  }

  editing::SolveInputs bad = s;
  bad.k1 = Matrix::Zero(2, 1);
  CHECK_THROWS_AS(editing::solve_delta(bad), std::invalid_argument);
  editing::SolveInputs asym;
  asym.w0 = randm(2, 2);
  asym.k1 = randm(2, 2);
  asym.m1 = randm(2, 2);
  asym.c0 = randm(2, 2);
  asym.c0(0, 1) = asym.c0(1, 0) + 1.0;
  CHECK_THROWS_AS(editing::solve_delta(asym), std::invalid_argument);
}

TEST_CASE("apply_edit no-op, involution, locality and rejection") {
  auto r = make_rig(1, 1);
  editing::EditDelta zero;
  zero.target = r.target;
  zero.delta = Matrix::Zero(r.p.model.enc[r.target.layer].w_out.rows(),
                            r.p.model.enc[r.target.layer].w_out.cols());
  const auto& tokens = r.set.at(0).sample.tokens;
  const auto edited0 = editing::apply_edit(r.p.model, {zero});
  CHECK((model::forward(edited0, tokens, {}).logits -
         model::forward(r.p.model, tokens, {}).logits)
            .cwiseAbs()
            .maxCoeff() == 0.0);

  editing::EditDelta d = zero;
  num::SeededRng rng(5);
  for (int i = 0; i < d.delta.rows(); ++i) {
    for (int j = 0; j < d.delta.cols(); ++j) d.delta(i, j) = 0.01 * rng.normal();
  }
  const auto edited = editing::apply_edit(r.p.model, {d});
  editing::EditDelta neg = d;
  neg.delta = -d.delta;
  const auto restored = editing::apply_edit(edited, {neg});
  // (w + d) - d only recovers w up to one rounding step per entry.
  CHECK((restored.enc[r.target.layer].w_out -
         r.p.model.enc[r.target.layer].w_out)
            .cwiseAbs()
            .maxCoeff() < 1e-15);

  // Layers below the edited one are untouched.
  const auto before = model::forward(r.p.model, tokens,
                                     {.capture = model::kCaptureModules});
  const auto after = model::forward(edited, tokens,
                                    {.capture = model::kCaptureModules});
  for (int l = 0; l < r.target.layer; ++l) {
    CHECK((before.enc_block.at(l) - after.enc_block.at(l)).cwiseAbs().maxCoeff() ==
          0.0);
  }
  CHECK((before.enc_block.at(r.target.layer) - after.enc_block.at(r.target.layer))
            .cwiseAbs()
            .maxCoeff() > 0.0);

  CHECK_THROWS_AS(editing::apply_edit(r.p.model, {d, d}), std::invalid_argument);
  editing::EditDelta wrong = d;
  wrong.delta = Matrix::Zero(2, 2);
  CHECK_THROWS_AS(editing::apply_edit(r.p.model, {wrong}), std::invalid_argument);
}

TEST_CASE("single-layer edit_multi_layer equals the plain pipeline") {
  auto r = make_rig(3, 3);
  const auto verb = r.p.vocab.verbalizer();
  const editing::OptimizeOptions opt{10, 0.5};
  const auto deltas = editing::edit_multi_layer(
      r.p.model, r.target.component, {r.target.layer}, r.set, r.corpus, 1.0,
      opt, verb, "causal-classification");
  REQUIRE(deltas.size() == 1);

  editing::SolveInputs in;
  in.w0 = r.p.model.enc[r.target.layer].w_out;
  in.k1 = editing::collect_k1(r.p.model, r.target, r.set);
  in.m1 = editing::optimize_targets(r.p.model, r.target, r.set, opt, verb);
  in.c0 = editing::estimate_c0(r.p.model, r.target, r.corpus, 1.0);
  const auto manual = editing::solve_delta(in, r.target);
  CHECK((deltas[0].delta - manual.delta).cwiseAbs().maxCoeff() == 0.0);
  CHECK(deltas[0].target == r.target);
  CHECK(deltas[0].task == "causal-classification");
  CHECK(deltas[0].edit_set_hash == r.set.hash());
}

TEST_CASE("multi-layer edit reduces the objective and stays finite") {
  auto r = make_rig(3, 3);
  const auto verb = r.p.vocab.verbalizer();
  const editing::OptimizeOptions opt{15, 0.5};
  const std::vector<int> layers = {1, 2, 3};
  const auto deltas = editing::edit_multi_layer(
      r.p.model, model::Component::encoder, layers, r.set, r.corpus, 1.0, opt, verb);
  REQUIRE(deltas.size() == 3);
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    CHECK(deltas[i].target.layer == layers[i]);
    CHECK(deltas[i].delta.allFinite());
  }

  // After the first partial edit the top layer's outputs sit closer to the
  // optimized targets than the unedited baseline's.
  const editing::EditTarget top{model::Component::encoder, model::ModuleType::mlp,
                                layers.back()};
  const Matrix m1 = editing::optimize_targets(r.p.model, top, r.set, opt, verb);
  const auto first = editing::apply_edit(r.p.model, {deltas[0]});
  auto top_outputs = [&](const model::Seq2SeqModel& m) {
    Matrix out(m.config.d_model, r.set.size());
    for (int i = 0; i < r.set.size(); ++i) {
      const auto run = model::forward(m, r.set.at(i).sample.tokens,
                                      {.capture = model::kCaptureModules});
      out.col(i) = run.module_output({top.component, top.module_type,
                                      r.set.at(i).located_pos, top.layer});
    }
    return out;
  };
  CHECK((top_outputs(first) - m1).norm() < (top_outputs(r.p.model) - m1).norm());

  CHECK_THROWS_AS(
      editing::edit_multi_layer(r.p.model, model::Component::encoder, {2, 1},
                                r.set, r.corpus, 1.0, opt, verb),
      std::invalid_argument);
  CHECK_THROWS_AS(
      editing::edit_multi_layer(r.p.model, model::Component::encoder, {},
                                r.set, r.corpus, 1.0, opt, verb),
      std::invalid_argument);
}

TEST_CASE("located edit flips held false positives and keeps positives") {
  auto r = make_rig(5, 5);
  const auto verb = r.p.vocab.verbalizer();
  auto edit_prompts = tasks::gen_dataset(r.p.world, r.p.vocab, r.p.kind, 5, 5, 77);
  tracing::NoiseConfig noise;
  noise.base_seed = 5;
  const auto loc = tracing::locate_for_edit(
      r.p.model, edit_prompts,
      {model::Component::encoder, model::ModuleType::mlp}, noise, verb);
  CHECK(loc.token_col == r.p.keyword_col);
  CHECK(loc.layer == r.p.plant.enc_layer);

  const auto deltas = editing::edit_multi_layer(
      r.p.model, model::Component::encoder, {loc.layer}, r.set, r.corpus, 1.0,
      {25, 0.5}, verb);
  const auto edited = editing::apply_edit(r.p.model, deltas);

  const auto held = tasks::gen_dataset(r.p.world, r.p.vocab, r.p.kind, 10, 10, 88);
  int pos_kept = 0, neg_flipped = 0;
  for (const auto& s : held) {
    const auto [py, pn] = model::answer_prob(model::forward(edited, s.tokens, {}), verb);
    if (s.positive && py > pn) ++pos_kept;
    if (!s.positive && pn > py) ++neg_flipped;
  }
  CHECK(pos_kept >= 9);
  CHECK(neg_flipped >= 8);
}

TEST_CASE("delta file round trip") {
  auto r = make_rig(2, 2);
  const auto verb = r.p.vocab.verbalizer();
  auto deltas = editing::edit_multi_layer(r.p.model, model::Component::encoder,
                                          {1, 2}, r.set, r.corpus, 0.5,
                                          {5, 0.5}, verb, "causal-classification");
  const auto dir = std::filesystem::temp_directory_path() / "tb_editing_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "deltas.json").string();
  editing::write_deltas(path, deltas, {{"tool_version", "test"}});
  const auto back = editing::read_deltas(path);
  REQUIRE(back.size() == deltas.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    CHECK((back[i].delta - deltas[i].delta).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back[i].target == deltas[i].target);
    CHECK(back[i].task == deltas[i].task);
    CHECK(back[i].lambda == deltas[i].lambda);
    CHECK(back[i].edit_set_hash == deltas[i].edit_set_hash);
  }
  std::filesystem::remove_all(dir);
}
