#include "tracebench/tracing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tracebench/tensor_io.hpp"

namespace tb::tracing {

using tb::model::ForwardOptions;
using tb::model::Intervention;
using tb::model::RunRecord;
using tb::num::SeededRng;
using tb::num::Vector;

void NoiseConfig::validate() const {
  if (sigma_mult < 0) throw std::invalid_argument("noise sigma multiplier must be >= 0");
  if (n_noise < 1) throw std::invalid_argument("n_noise must be >= 1");
}

std::uint64_t NoiseConfig::draw_seed(std::uint64_t sample_id, int draw) const {
  return tb::num::mix_seed(base_seed,
                           tb::num::mix_seed(sample_id, static_cast<std::uint64_t>(draw)));
}

std::vector<ModuleKey> all_module_keys() {
  using enum ModuleType;
  return {{Component::encoder, transformer_block},
          {Component::encoder, mlp},
          {Component::encoder, self_attn},
          {Component::decoder, transformer_block},
          {Component::decoder, mlp},
          {Component::decoder, self_attn},
          {Component::decoder, cross_attn}};
}

namespace {

std::string key_name(const ModuleKey& k) {
  return std::string(to_string(k.component)) + "." + to_string(k.module_type);
}

std::pair<double, double> probs_from_logits(const Vector& logits,
                                            const Verbalizer& v) {
  const Vector p = tb::num::softmax(logits);
  return {p(v.yes_token), p(v.no_token)};
}

// Both score flavors for one sample, on the template-column axis, averaged
// over noise draws. yes_score = P(Yes|restored) - P(Yes|corrupted);
// no_score = P(No|corrupted) - P(No|restored).
struct SampleEffects {
  std::vector<Matrix> yes_score;  // aligned with keys
  std::vector<Matrix> no_score;
};

SampleEffects compute_sample(const Seq2SeqModel& m,
                             const tasks::PromptSample& sample,
                             const std::vector<ModuleKey>& keys,
                             const NoiseConfig& noise, const Verbalizer& verb,
                             int n_cols) {
  const int n_tok = static_cast<int>(sample.tokens.size());
  for (const int c : sample.template_cols) {
    if (c < 0 || c >= n_cols) throw std::invalid_argument("template column out of range");
  }
  const ForwardOptions clean_opt{.capture = tb::model::kCaptureModules};
  const RunRecord clean = forward(m, sample.tokens, clean_opt);

  const double sigma = noise.sigma_mult * m.embedding_std();
  const int span = sample.noise_end - sample.noise_begin;
  if (span <= 0 || sample.noise_end > n_tok) {
    throw std::invalid_argument("bad noise span");
  }

  // Raw accumulators on the rendered-token axis.
  std::vector<Matrix> yes_raw(keys.size()), no_raw(keys.size());
  for (std::size_t k = 0; k < keys.size(); ++k) {
    const bool enc = keys[k].component == Component::encoder;
    const int rows = enc ? n_tok : 1;
    const int layers = enc ? m.config.enc_layers : m.config.dec_layers;
    yes_raw[k] = Matrix::Zero(rows, layers);
    no_raw[k] = Matrix::Zero(rows, layers);
  }

  for (int draw = 0; draw < noise.n_noise; ++draw) {
    SeededRng rng(noise.draw_seed(sample.id, draw));
    const Matrix eps = tb::num::gaussian_noise(span, m.config.d_model, sigma, rng);
    ForwardOptions copt;
    copt.embedding_noise = &eps;
    copt.noise_begin = sample.noise_begin;
    copt.capture = tb::model::kCaptureResume;
    const RunRecord corrupted = forward(m, sample.tokens, copt);
    const auto [pyc, pnc] = answer_prob(corrupted, verb);

    for (std::size_t k = 0; k < keys.size(); ++k) {
      const bool enc = keys[k].component == Component::encoder;
      const int rows = static_cast<int>(yes_raw[k].rows());
      const int layers = static_cast<int>(yes_raw[k].cols());
      for (int t = 0; t < rows; ++t) {
        for (int l = 0; l < layers; ++l) {
          Intervention iv;
          iv.address = {keys[k].component, keys[k].module_type, enc ? t : 0, l};
          iv.replacement = clean.module_output(iv.address);
          const Vector logits = forward_resume(m, corrupted, iv);
          const auto [pyr, pnr] = probs_from_logits(logits, verb);
          yes_raw[k](t, l) += pyr - pyc;
          no_raw[k](t, l) += pnc - pnr;
        }
      }
    }
  }

  // Collapse rendered tokens into template columns (mean within a column).
  SampleEffects out;
  out.yes_score.resize(keys.size());
  out.no_score.resize(keys.size());
  for (std::size_t k = 0; k < keys.size(); ++k) {
    const double inv_draws = 1.0 / noise.n_noise;
    if (keys[k].component == Component::decoder) {
      out.yes_score[k] = yes_raw[k] * inv_draws;
      out.no_score[k] = no_raw[k] * inv_draws;
      continue;
    }
    const int layers = static_cast<int>(yes_raw[k].cols());
    Matrix ys = Matrix::Zero(n_cols, layers);
    Matrix ns = Matrix::Zero(n_cols, layers);
    Vector count = Vector::Zero(n_cols);
    for (int t = 0; t < n_tok; ++t) {
      const int c = sample.template_cols[t];
      ys.row(c) += yes_raw[k].row(t);
      ns.row(c) += no_raw[k].row(t);
      count(c) += 1;
    }
    for (int c = 0; c < n_cols; ++c) {
      if (count(c) == 0) throw std::invalid_argument("template column has no tokens");
      ys.row(c) *= inv_draws / count(c);
      ns.row(c) *= inv_draws / count(c);
    }
    out.yes_score[k] = std::move(ys);
    out.no_score[k] = std::move(ns);
  }
  return out;
}

// Deterministic parallel map over samples; results land at their index.
std::vector<SampleEffects> compute_all(const Seq2SeqModel& m,
                                       const std::vector<tasks::PromptSample>& dataset,
                                       const std::vector<ModuleKey>& keys,
                                       const NoiseConfig& noise,
                                       const Verbalizer& verb, int n_cols,
                                       int threads) {
  std::vector<SampleEffects> per(dataset.size());
  const int n = static_cast<int>(dataset.size());
  threads = std::clamp(threads, 1, n);
  if (threads == 1) {
    for (int i = 0; i < n; ++i) {
      per[i] = compute_sample(m, dataset[i], keys, noise, verb, n_cols);
    }
    return per;
  }
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex err_mu;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += threads) {
          per[i] = compute_sample(m, dataset[i], keys, noise, verb, n_cols);
        }
      } catch (...) {
        std::scoped_lock lk(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
  return per;
}

std::uint64_t noise_fingerprint(const NoiseConfig& noise) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(noise.sigma_mult));
  std::memcpy(&bits, &noise.sigma_mult, sizeof(bits));
  return tb::num::mix_seed(noise.base_seed,
                           tb::num::mix_seed(bits, static_cast<std::uint64_t>(noise.n_noise)));
}

// Pairwise summation keeps the reduction order-independent and makes the
// mean of a duplicated dataset bit-identical to the original's.
Matrix pairwise_sum(const std::vector<const Matrix*>& v, std::size_t lo,
                    std::size_t hi) {
  if (hi - lo == 1) return *v[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

Matrix pairwise_mean(const std::vector<const Matrix*>& v) {
  return pairwise_sum(v, 0, v.size()) / static_cast<double>(v.size());
}

tasks::TaskKind common_kind(const std::vector<tasks::PromptSample>& dataset) {
  if (dataset.empty()) throw std::invalid_argument("empty dataset");
  const tasks::TaskKind kind = dataset.front().kind;
  for (const auto& s : dataset) {
    if (!(s.kind == kind)) throw std::invalid_argument("mixed task kinds in dataset");
  }
  return kind;
}

}  // namespace

const Matrix& EffectMap::values(const ModuleKey& key) const {
  for (const auto& c : cells) {
    if (c.key == key) return c.values;
  }
  throw std::invalid_argument("module type not present in effect map: " + key_name(key));
}

bool EffectMap::has(const ModuleKey& key) const {
  for (const auto& c : cells) {
    if (c.key == key) return true;
  }
  return false;
}

nlohmann::json EffectMap::to_json() const {
  nlohmann::json cells_j = nlohmann::json::array();
  for (const auto& c : cells) {
    std::vector<std::vector<double>> rows(c.values.rows());
    for (int i = 0; i < c.values.rows(); ++i) {
      rows[i].assign(c.values.row(i).begin(), c.values.row(i).end());
    }
    cells_j.push_back({{"component", to_string(c.key.component)},
                       {"module_type", to_string(c.key.module_type)},
                       {"values", rows}});
  }
  return {{"task", task},
          {"polarity", positive_polarity ? "positive" : "negative"},
          {"token_labels", token_labels},
          {"n_samples", n_samples},
          {"n_noise", n_noise},
          {"noise_fingerprint", tb::io::hex64(noise_fingerprint)},
          {"cells", cells_j}};
}

EffectMap EffectMap::from_json(const nlohmann::json& j) {
  EffectMap m;
  m.task = j.at("task").get<std::string>();
  m.positive_polarity = j.at("polarity").get<std::string>() == "positive";
  m.token_labels = j.at("token_labels").get<std::vector<std::string>>();
  m.n_samples = j.at("n_samples").get<int>();
  m.n_noise = j.at("n_noise").get<int>();
  m.noise_fingerprint =
      std::stoull(j.at("noise_fingerprint").get<std::string>(), nullptr, 16);
  for (const auto& c : j.at("cells")) {
    Cell cell;
    cell.key.component =
        tb::model::component_from_string(c.at("component").get<std::string>());
    cell.key.module_type =
        tb::model::module_type_from_string(c.at("module_type").get<std::string>());
    const auto rows = c.at("values").get<std::vector<std::vector<double>>>();
    if (rows.empty()) throw std::invalid_argument("empty effect cell");
    cell.values.resize(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows[0].size()) {
        throw std::invalid_argument("ragged effect cell");
      }
      for (std::size_t k = 0; k < rows[i].size(); ++k) cell.values(i, k) = rows[i][k];
    }
    tb::num::require_finite(cell.values, "effect cell");
    m.cells.push_back(std::move(cell));
  }
  return m;
}

double sample_effect(const Seq2SeqModel& m, const tasks::PromptSample& sample,
                     const ModuleAddress& address, const NoiseConfig& noise,
                     const Verbalizer& verb) {
  noise.validate();
  m.validate_address(address, static_cast<int>(sample.tokens.size()));
  const ForwardOptions clean_opt{.capture = tb::model::kCaptureModules};
  const RunRecord clean = forward(m, sample.tokens, clean_opt);
  const double sigma = noise.sigma_mult * m.embedding_std();
  const int span = sample.noise_end - sample.noise_begin;
  if (span <= 0 || sample.noise_end > static_cast<int>(sample.tokens.size())) {
    throw std::invalid_argument("bad noise span");
  }
  double acc = 0.0;
  for (int draw = 0; draw < noise.n_noise; ++draw) {
    SeededRng rng(noise.draw_seed(sample.id, draw));
    const Matrix eps = tb::num::gaussian_noise(span, m.config.d_model, sigma, rng);
    ForwardOptions copt;
    copt.embedding_noise = &eps;
    copt.noise_begin = sample.noise_begin;
    copt.capture = tb::model::kCaptureResume;
    const RunRecord corrupted = forward(m, sample.tokens, copt);
    const auto [pyc, pnc] = answer_prob(corrupted, verb);
    const Intervention iv{address, clean.module_output(address)};
    const Vector logits = forward_resume(m, corrupted, iv);
    const auto [pyr, pnr] = probs_from_logits(logits, verb);
    acc += sample.positive ? (pyr - pyc) : (pnc - pnr);
  }
  return acc / noise.n_noise;
}

std::vector<EffectMap> sweep(const Seq2SeqModel& m,
                             const std::vector<tasks::PromptSample>& dataset,
                             const NoiseConfig& noise, const Verbalizer& verb,
                             const SweepOptions& opt) {
  noise.validate();
  if (opt.keys.empty()) throw std::invalid_argument("no module types requested");
  const tasks::TaskKind kind = common_kind(dataset);
  const tasks::PromptTemplate tmpl = tasks::PromptTemplate::for_kind(kind);
  const int n_cols = static_cast<int>(tmpl.columns.size());

  const auto per =
      compute_all(m, dataset, opt.keys, noise, verb, n_cols, opt.threads);

  std::vector<EffectMap> out;
  for (const bool positive : {true, false}) {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(dataset.size()); ++i) {
      if (dataset[i].positive == positive) idx.push_back(i);
    }
    if (idx.empty()) continue;
    EffectMap map;
    map.task = to_string(kind);
    map.positive_polarity = positive;
    map.token_labels = tmpl.column_labels();
    map.n_samples = static_cast<int>(idx.size());
    map.n_noise = noise.n_noise;
    map.noise_fingerprint = noise_fingerprint(noise);
    for (std::size_t k = 0; k < opt.keys.size(); ++k) {
      std::vector<const Matrix*> parts;
      for (const int i : idx) {
        parts.push_back(positive ? &per[i].yes_score[k] : &per[i].no_score[k]);
      }
      Matrix acc = pairwise_mean(parts);
      tb::num::require_finite(acc, "effect map");
      map.cells.push_back({opt.keys[k], std::move(acc)});
    }
    out.push_back(std::move(map));
  }
  return out;
}

namespace {

Located argmax_cell(const Matrix& values, const ModuleKey& key) {
  Located best{key, 0, 0, values(0, 0)};
  for (int t = 0; t < values.rows(); ++t) {
    for (int l = 0; l < values.cols(); ++l) {
      const double e = values(t, l);
      const bool better =
          e > best.effect ||
          (e == best.effect &&
           (l < best.layer || (l == best.layer && t < best.token_col)));
      if (better) best = {key, t, l, e};
    }
  }
  return best;
}

}  // namespace

Located locate(const EffectMap& map, const ModuleKey& key) {
  const Matrix& values = map.values(key);
  if (values.size() == 0) throw std::invalid_argument("empty effect map cell");
  return argmax_cell(values, key);
}

Located locate_for_edit(const Seq2SeqModel& m,
                        const std::vector<tasks::PromptSample>& dataset,
                        const ModuleKey& key, const NoiseConfig& noise,
                        const Verbalizer& verb) {
  const bool allowed =
      (key.component == Component::encoder && key.module_type == ModuleType::mlp) ||
      (key.component == Component::decoder && key.module_type == ModuleType::cross_attn);
  if (!allowed) {
    throw std::invalid_argument(
        "edit locating is restricted to encoder.mlp and decoder.cross_attn");
  }
  noise.validate();
  const tasks::TaskKind kind = common_kind(dataset);
  const int n_cols =
      static_cast<int>(tasks::PromptTemplate::for_kind(kind).columns.size());
  const std::vector<ModuleKey> keys = {key};
  const auto per = compute_all(m, dataset, keys, noise, verb, n_cols, 1);
  std::vector<const Matrix*> parts;
  for (const auto& s : per) parts.push_back(&s.no_score[0]);
  return argmax_cell(pairwise_mean(parts), key);
}

std::vector<int> rank_layers(const EffectMap& map, const ModuleKey& key,
                             int token_col) {
  const Matrix& values = map.values(key);
  if (token_col < 0 || token_col >= values.rows()) {
    throw std::invalid_argument("token column out of range");
  }
  std::vector<int> layers(values.cols());
  std::iota(layers.begin(), layers.end(), 0);
  std::stable_sort(layers.begin(), layers.end(), [&](int a, int b) {
    return values(token_col, a) < values(token_col, b);
  });
  return layers;
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string header_comment(const nlohmann::json& header) {
  if (header.empty()) return "";
  std::string line = "#";
  for (auto it = header.begin(); it != header.end(); ++it) {
    line += " " + it.key() + "=" +
            (it->is_string() ? it->get<std::string>() : it->dump());
  }
  return line + "\n";
}

std::string token_text(const EffectMap& map, const ModuleKey& key, int t) {
  if (key.component == Component::decoder) return "</s>";
  return map.token_labels.at(t);
}

void write_plain_csv(const std::vector<EffectMap>& maps, const std::string& path,
                     const ExportOptions& opt) {
  std::ostringstream os;
  os << header_comment(opt.header);
  os << "module_type,token_index,token_text,layer,polarity,effect,n_samples,n_noise\n";
  for (const auto& map : maps) {
    const char* pol = map.positive_polarity ? "positive" : "negative";
    for (const auto& c : map.cells) {
      for (int t = 0; t < c.values.rows(); ++t) {
        for (int l = 0; l < c.values.cols(); ++l) {
          os << key_name(c.key) << ',' << t << ',' << token_text(map, c.key, t)
             << ',' << l << ',' << pol << ',' << fmt_double(c.values(t, l))
             << ',' << map.n_samples << ',' << map.n_noise << "\n";
        }
      }
    }
  }
  tb::io::atomic_write_text(path, os.str());
}

void write_grouped_csv(const std::vector<EffectMap>& maps, const std::string& path,
                       const ExportOptions& opt) {
  std::ostringstream os;
  os << header_comment(opt.header);
  os << "module_type,token_index,token_text,layer,polarity,effect,n_samples,"
        "n_noise,group_id,group_label\n";
  for (const auto& map : maps) {
    const int n_cols = static_cast<int>(map.token_labels.size());
    std::vector<int> bounds = {0};
    for (const int s : opt.group_splits) {
      if (s <= bounds.back() || s >= n_cols) {
        throw std::invalid_argument("group splits must be strictly increasing interior columns");
      }
      bounds.push_back(s);
    }
    bounds.push_back(n_cols);
    const char* pol = map.positive_polarity ? "positive" : "negative";
    for (const auto& c : map.cells) {
      if (c.key.component == Component::decoder) continue;
      for (int g = 0; g + 1 < static_cast<int>(bounds.size()); ++g) {
        const int lo = bounds[g], hi = bounds[g + 1];
        std::string label = map.token_labels[lo];
        for (int t = lo + 1; t < hi; ++t) label += " " + map.token_labels[t];
        for (int l = 0; l < c.values.cols(); ++l) {
          double mean = 0.0;
          for (int t = lo; t < hi; ++t) mean += c.values(t, l);
          mean /= (hi - lo);
          os << key_name(c.key) << ',' << lo << ',' << map.token_labels[lo]
             << ',' << l << ',' << pol << ',' << fmt_double(mean) << ','
             << map.n_samples << ',' << map.n_noise << ',' << g << ','
             << label << "\n";
        }
      }
    }
  }
  tb::io::atomic_write_text(path, os.str());
}

}  // namespace

void export_effects(const std::vector<EffectMap>& maps, const std::string& path,
                    const ExportOptions& opt) {
  if (maps.empty()) throw std::invalid_argument("nothing to export");
  if (opt.format == "json") {
    nlohmann::json j;
    j["header"] = opt.header;
    j["maps"] = nlohmann::json::array();
    for (const auto& m : maps) j["maps"].push_back(m.to_json());
    tb::io::atomic_write_text(path, j.dump(2) + "\n");
    return;
  }
  if (opt.format != "csv") throw std::invalid_argument("unknown export format: " + opt.format);
  write_plain_csv(maps, path, opt);
  if (!opt.group_splits.empty()) {
    const auto dot = path.rfind('.');
    const std::string gpath = dot == std::string::npos
                                  ? path + ".grouped"
                                  : path.substr(0, dot) + ".grouped" + path.substr(dot);
    write_grouped_csv(maps, gpath, opt);
  }
}

std::vector<EffectMap> read_effects_json(const std::string& path) {
  const nlohmann::json j = nlohmann::json::parse(tb::io::read_text(path));
  std::vector<EffectMap> out;
  for (const auto& m : j.at("maps")) out.push_back(EffectMap::from_json(m));
  return out;
}

}  // namespace tb::tracing
