#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "tracebench/tracing.hpp"

using namespace tb;
using tb::num::Matrix;
using tracing::ModuleKey;

namespace {

const ModuleKey kEncMlp{model::Component::encoder, model::ModuleType::mlp};
const ModuleKey kDecCross{model::Component::decoder, model::ModuleType::cross_attn};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

tracing::EffectMap synthetic_map(const Matrix& values, const ModuleKey& key) {
  tracing::EffectMap m;
  m.task = "causal-classification";
  m.token_labels.resize(values.rows(), "tok");
  m.n_samples = 1;
  m.n_noise = 1;
  m.cells.push_back({key, values});
  return m;
}

}  // namespace

TEST_CASE("zero noise gives exactly zero effects") {
  auto p = tbtest::make_planted();
  const auto verb = p.vocab.verbalizer();
  auto data = tasks::gen_dataset(p.world, p.vocab, p.kind, 2, 2, 1);
  tracing::NoiseConfig noise;
  noise.sigma_mult = 0.0;
  noise.n_noise = 2;
  const int kw = data[0].position_of_column(p.keyword_col);
  const model::ModuleAddress a{model::Component::encoder, model::ModuleType::mlp,
                               kw, p.plant.enc_layer};
  CHECK(tracing::sample_effect(p.model, data[0], a, noise, verb) == 0.0);

  const auto maps = tracing::sweep(p.model, data, noise, verb, {});
  REQUIRE(maps.size() == 2);
  for (const auto& m : maps) {
    for (const auto& c : m.cells) {
      CHECK((c.values.array() == 0.0).all());
    }
  }
}

TEST_CASE("singleton sweep equals per-sample effects") {
  auto p = tbtest::make_planted();
  const auto verb = p.vocab.verbalizer();
  auto data = tasks::gen_dataset(p.world, p.vocab, p.kind, 1, 0, 1);
  tracing::NoiseConfig noise;
  noise.n_noise = 2;
  noise.base_seed = 3;
  tracing::SweepOptions opt;
  opt.keys = {kEncMlp, kDecCross};
  const auto maps = tracing::sweep(p.model, data, noise, verb, opt);
  REQUIRE(maps.size() == 1);
  const auto& s = data[0];
  const Matrix& enc = maps[0].values(kEncMlp);
  for (int col = 0; col < enc.rows(); ++col) {
    // A column's entry is the mean of sample_effect over its rendered tokens.
    std::vector<int> toks;
    for (int t = 0; t < static_cast<int>(s.tokens.size()); ++t) {
      if (s.template_cols[t] == col) toks.push_back(t);
    }
    for (int l = 0; l < enc.cols(); ++l) {
      double mean = 0.0;
      for (const int t : toks) {
        mean += tracing::sample_effect(
            p.model, s, {model::Component::encoder, model::ModuleType::mlp, t, l},
            noise, verb);
      }
      mean /= static_cast<double>(toks.size());
      CHECK(enc(col, l) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
  const Matrix& dec = maps[0].values(kDecCross);
  REQUIRE(dec.rows() == 1);
  for (int l = 0; l < dec.cols(); ++l) {
    const double e = tracing::sample_effect(
        p.model, s, {model::Component::decoder, model::ModuleType::cross_attn, 0, l},
        noise, verb);
    CHECK(dec(0, l) == doctest::Approx(e).epsilon(1e-12));
  }
}

TEST_CASE("duplicating every sample leaves the map unchanged") {
  auto p = tbtest::make_planted();
  const auto verb = p.vocab.verbalizer();
  auto data = tasks::gen_dataset(p.world, p.vocab, p.kind, 2, 2, 1);
  auto doubled = data;
  doubled.insert(doubled.end(), data.begin(), data.end());
  tracing::NoiseConfig noise;
  noise.n_noise = 2;
  tracing::SweepOptions opt;
  opt.keys = {kEncMlp};
  const auto a = tracing::sweep(p.model, data, noise, verb, opt);
  const auto b = tracing::sweep(p.model, doubled, noise, verb, opt);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].values(kEncMlp) == b[i].values(kEncMlp));
    CHECK(b[i].n_samples == 2 * a[i].n_samples);
  }
}

TEST_CASE("sweep is byte-identical across thread counts") {
  auto p = tbtest::make_planted();
  const auto verb = p.vocab.verbalizer();
  auto data = tasks::gen_dataset(p.world, p.vocab, p.kind, 3, 3, 1);
  tracing::NoiseConfig noise;
  noise.n_noise = 2;
  tracing::SweepOptions serial, parallel;
  serial.keys = parallel.keys = {kEncMlp, kDecCross};
  serial.threads = 1;
  parallel.threads = 4;
  const auto a = tracing::sweep(p.model, data, noise, verb, serial);
  const auto b = tracing::sweep(p.model, data, noise, verb, parallel);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    for (const auto& key : serial.keys) {
      CHECK(a[i].values(key) == b[i].values(key));
    }
  }
}

TEST_CASE("locate matches a brute-force argmax and honors tie rules") {
  num::SeededRng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix v(5, 4);
    for (int t = 0; t < 5; ++t) {
      for (int l = 0; l < 4; ++l) v(t, l) = rng.uniform();
    }
    const auto m = synthetic_map(v, kEncMlp);
    const auto loc = tracing::locate(m, kEncMlp);
    double best = -1e300;
    int bt = -1, bl = -1;
    for (int l = 0; l < 4; ++l) {
      for (int t = 0; t < 5; ++t) {
        if (v(t, l) > best) {
          best = v(t, l);
          bt = t;
          bl = l;
        }
      }
    }
    CHECK(loc.token_col == bt);
    CHECK(loc.layer == bl);
    CHECK(loc.effect == best);
  }

  const auto flat = synthetic_map(Matrix::Constant(3, 3, 0.5), kEncMlp);
  const auto loc = tracing::locate(flat, kEncMlp);
  CHECK(loc.token_col == 0);
  CHECK(loc.layer == 0);

  // Lower layer wins a tie even at a higher token index.
  Matrix v = Matrix::Zero(3, 3);
  v(2, 0) = 1.0;
  v(0, 1) = 1.0;
  const auto tied = tracing::locate(synthetic_map(v, kEncMlp), kEncMlp);
  CHECK(tied.token_col == 2);
  CHECK(tied.layer == 0);

  CHECK_THROWS_AS(tracing::locate(flat, kDecCross), std::invalid_argument);
}

TEST_CASE("locate_for_edit agrees with the negative-map locate") {
  auto p = tbtest::make_planted();
  const auto verb = p.vocab.verbalizer();
  auto data = tasks::gen_dataset(p.world, p.vocab, p.kind, 0, 4, 1);
  tracing::NoiseConfig noise;
  noise.n_noise = 2;
  noise.base_seed = 7;
  for (const auto& key : {kEncMlp, kDecCross}) {
    tracing::SweepOptions opt;
    opt.keys = {key};
    const auto maps = tracing::sweep(p.model, data, noise, verb, opt);
    REQUIRE(maps.size() == 1);
    REQUIRE_FALSE(maps[0].positive_polarity);
    const auto via_sweep = tracing::locate(maps[0], key);
    const auto direct = tracing::locate_for_edit(p.model, data, key, noise, verb);
    CHECK(direct.token_col == via_sweep.token_col);
    CHECK(direct.layer == via_sweep.layer);
    CHECK(direct.effect == doctest::Approx(via_sweep.effect).epsilon(1e-12));
  }
  // The planted circuit's negatives depend on the planted cell.
  const auto loc = tracing::locate_for_edit(p.model, data, kEncMlp, noise, verb);
  CHECK(loc.token_col == p.keyword_col);
  CHECK(loc.layer == p.plant.enc_layer);

  tracing::NoiseConfig silent;
  silent.sigma_mult = 0.0;
  const auto zero = tracing::locate_for_edit(p.model, data, kEncMlp, silent, verb);
  CHECK(zero.token_col == 0);
  CHECK(zero.layer == 0);
  CHECK(zero.effect == 0.0);

  CHECK_THROWS_AS(
      tracing::locate_for_edit(
          p.model, data, {model::Component::encoder, model::ModuleType::self_attn},
          noise, verb),
      std::invalid_argument);
}

TEST_CASE("rank_layers matches a comparison-sort oracle") {
  Matrix inc(1, 5);
  inc << 0.1, 0.2, 0.3, 0.4, 0.5;
  CHECK(tracing::rank_layers(synthetic_map(inc, kEncMlp), kEncMlp, 0) ==
        std::vector<int>{0, 1, 2, 3, 4});
  Matrix dec = inc.rowwise().reverse();
  CHECK(tracing::rank_layers(synthetic_map(dec, kEncMlp), kEncMlp, 0) ==
        std::vector<int>{4, 3, 2, 1, 0});

  num::SeededRng rng(11);
  Matrix v(2, 6);
  for (int t = 0; t < 2; ++t) {
    for (int l = 0; l < 6; ++l) v(t, l) = rng.uniform();
  }
  const auto ranked = tracing::rank_layers(synthetic_map(v, kEncMlp), kEncMlp, 1);
  std::vector<int> oracle(6);
  std::iota(oracle.begin(), oracle.end(), 0);
  std::sort(oracle.begin(), oracle.end(),
            [&](int a, int b) { return v(1, a) < v(1, b); });
  CHECK(ranked == oracle);
  CHECK_THROWS_AS(tracing::rank_layers(synthetic_map(v, kEncMlp), kEncMlp, 2),
                  std::invalid_argument);
}

TEST_CASE("csv export cardinality and identity grouping") {
  const auto dir = std::filesystem::temp_directory_path() / "tb_tracing_test";
  std::filesystem::create_directories(dir);
  Matrix v(2, 2);
  v << 1.0, 2.0, 3.0, 4.0;
  const auto m = synthetic_map(v, kEncMlp);

  const auto csv = (dir / "e.csv").string();
  tracing::ExportOptions opt;
  opt.header = {{"seed", "0"}};
  tracing::export_effects({m}, csv, opt);
  {
    std::ifstream in(csv);
    std::string line;
    int comments = 0, headers = 0, rows = 0;
    while (std::getline(in, line)) {
      if (line.rfind('#', 0) == 0) ++comments;
      else if (line.rfind("module_type,", 0) == 0) ++headers;
      else ++rows;
    }
    CHECK(comments == 1);
    CHECK(headers == 1);
    CHECK(rows == 4);
  }

  // One group per token reproduces the ungrouped values.
  tracing::ExportOptions grouped;
  grouped.group_splits = {1};
  tracing::export_effects({m}, (dir / "g.csv").string(), grouped);
  const std::string gtext = slurp(dir / "g.grouped.csv");
  CHECK(gtext.find(",1,2,") == std::string::npos);  // sanity: no stray rows
  for (const char* needle : {",0,positive,1,", ",1,positive,2,",
                             ",0,positive,3,", ",1,positive,4,"}) {
    CHECK(gtext.find(needle) != std::string::npos);
  }

  CHECK_THROWS_AS(tracing::export_effects({}, csv, {}), std::invalid_argument);
  tracing::ExportOptions bad;
  bad.format = "parquet";
  CHECK_THROWS_AS(tracing::export_effects({m}, csv, bad), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("effect map JSON round trip via export") {
  auto p = tbtest::make_planted();
  const auto verb = p.vocab.verbalizer();
  auto data = tasks::gen_dataset(p.world, p.vocab, p.kind, 1, 1, 1);
  tracing::NoiseConfig noise;
  noise.n_noise = 2;
  const auto maps = tracing::sweep(p.model, data, noise, verb, {});

  const auto dir = std::filesystem::temp_directory_path() / "tb_tracing_json";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "maps.json").string();
  tracing::ExportOptions opt;
  opt.format = "json";
  tracing::export_effects(maps, path, opt);
  const auto back = tracing::read_effects_json(path);
  REQUIRE(back.size() == maps.size());
  for (size_t i = 0; i < maps.size(); ++i) {
    CHECK(back[i].task == maps[i].task);
    CHECK(back[i].positive_polarity == maps[i].positive_polarity);
    CHECK(back[i].n_samples == maps[i].n_samples);
    CHECK(back[i].noise_fingerprint == maps[i].noise_fingerprint);
    REQUIRE(back[i].cells.size() == maps[i].cells.size());
    for (size_t c = 0; c < maps[i].cells.size(); ++c) {
      CHECK(back[i].cells[c].key == maps[i].cells[c].key);
      CHECK(back[i].cells[c].values == maps[i].cells[c].values);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep input validation") {
  auto p = tbtest::make_planted();
  const auto verb = p.vocab.verbalizer();
  tracing::NoiseConfig noise;
  CHECK_THROWS_AS(tracing::sweep(p.model, {}, noise, verb, {}),
                  std::invalid_argument);

  auto cls = tasks::gen_dataset(p.world, p.vocab, p.kind, 1, 0, 1);
  auto ext = tasks::gen_dataset(
      p.world, p.vocab, {p.kind.relation, tasks::TaskForm::extraction}, 1, 0, 1);
  auto mixed = cls;
  mixed.push_back(ext[0]);
  CHECK_THROWS_AS(tracing::sweep(p.model, mixed, noise, verb, {}),
                  std::invalid_argument);

  tracing::NoiseConfig bad;
  bad.n_noise = 0;
  CHECK_THROWS_AS(tracing::sweep(p.model, cls, bad, verb, {}),
                  std::invalid_argument);
}
