// Command-line front end. Every subcommand reads a flat JSON config
// (--config) whose fields can each be overridden by a same-named flag, and
// writes artifacts that embed {tool_version, config_hash, base_seed} so any
// output is reproducible from its header. All randomness flows from the
// config's seed; there are no wall-clock defaults.
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tracebench/analogy.hpp"
#include "tracebench/analysis.hpp"
#include "tracebench/checkpoint.hpp"
#include "tracebench/circuit.hpp"
#include "tracebench/editing.hpp"
#include "tracebench/tensor_io.hpp"
#include "tracebench/tracing.hpp"

namespace {

constexpr const char* kToolVersion = "0.1.0";

using nlohmann::json;
using namespace tb;

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& field, const std::string& detail)
      : std::runtime_error("field '" + field + "': " + detail) {}
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class Config {
 public:
  void load_file(const std::string& path) {
    json j;
    try {
      j = json::parse(io::read_text(path));
    } catch (const std::exception& e) {
      throw ConfigError("config", std::string("unreadable: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config", "top level must be an object");
    for (auto& [k, v] : j.items()) cfg_[k] = v;
  }

  void override_field(const std::string& key, json value) {
    cfg_[key] = std::move(value);
  }

  bool has(const std::string& key) const { return cfg_.contains(key); }

  template <typename T>
  T require(const std::string& key) const {
    if (!cfg_.contains(key)) throw ConfigError(key, "missing");
    return read<T>(key);
  }

  template <typename T>
  T value(const std::string& key, T fallback) const {
    if (!cfg_.contains(key)) return fallback;
    return read<T>(key);
  }

  // Digest of the effective (config + overrides) document; key order is
  // canonicalized by the JSON object representation. Thread count and output
  // paths are execution details, not experiment parameters (results are
  // thread-count invariant), so they stay out of the digest.
  std::string hash() const {
    json j = cfg_;
    j.erase("threads");
    j.erase("out");
    j.erase("edited_model");
    return hex64(fnv1a(j.dump()));
  }

  json meta() const {
    json m = {{"tool_version", kToolVersion}, {"config_hash", hash()}};
    if (cfg_.contains("seed")) m["base_seed"] = require<std::uint64_t>("seed");
    return m;
  }

 private:
  template <typename T>
  T read(const std::string& key) const {
    try {
      return cfg_.at(key).get<T>();
    } catch (const std::exception&) {
      throw ConfigError(key, "wrong type: " + cfg_.at(key).dump());
    }
  }

  json cfg_ = json::object();
};

tracing::ModuleKey parse_module_key(const std::string& s) {
  const auto dot = s.find('.');
  if (dot == std::string::npos) {
    throw ConfigError("module", "expected <component>.<module_type>: " + s);
  }
  tracing::ModuleKey key;
  try {
    key.component = model::component_from_string(s.substr(0, dot));
    key.module_type = model::module_type_from_string(s.substr(dot + 1));
  } catch (const std::exception& e) {
    throw ConfigError("module", e.what());
  }
  return key;
}

std::string module_key_string(const tracing::ModuleKey& key) {
  return std::string(model::to_string(key.component)) + "." +
         model::to_string(key.module_type);
}

struct WorldFile {
  tasks::Vocabulary vocab = tasks::Vocabulary::standard();
  tasks::SyntheticWorld world;
};

WorldFile load_world(const Config& cfg) {
  const auto path = cfg.require<std::string>("world");
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const std::exception& e) {
    throw ConfigError("world", std::string("unreadable: ") + e.what());
  }
  WorldFile out;
  out.vocab = tasks::Vocabulary::from_json(j.at("vocab"));
  out.world = tasks::SyntheticWorld::from_json(j.at("world"), out.vocab);
  return out;
}

std::vector<tasks::PromptSample> load_dataset(const Config& cfg,
                                              const std::string& field = "dataset") {
  const auto path = cfg.require<std::string>(field);
  try {
    return tasks::dataset_from_jsonl(io::read_text(path));
  } catch (const std::exception& e) {
    throw ConfigError(field, std::string("unreadable: ") + e.what());
  }
}

model::Seq2SeqModel load_model(const Config& cfg) {
  const auto path = cfg.require<std::string>("model");
  try {
    return model::load_checkpoint(path);
  } catch (const std::exception& e) {
    throw ConfigError("model", std::string("unreadable: ") + e.what());
  }
}

tracing::NoiseConfig noise_from(const Config& cfg) {
  tracing::NoiseConfig noise;
  noise.sigma_mult = cfg.value<double>("sigma_mult", noise.sigma_mult);
  noise.n_noise = cfg.value<int>("n_noise", noise.n_noise);
  noise.base_seed = cfg.require<std::uint64_t>("seed");
  return noise;
}

void write_json_artifact(const std::string& path, const json& doc) {
  io::atomic_write_text(path, doc.dump(2) + "\n");
}

int cmd_gen_world(const Config& cfg) {
  const auto seed = cfg.require<std::uint64_t>("seed");
  const auto out = cfg.require<std::string>("out");
  const int n_events = cfg.value<int>("n_events", 16);
  const int ppr = cfg.value<int>("pairs_per_relation", 20);
  const auto vocab = tasks::Vocabulary::standard(n_events);
  const auto world = tasks::SyntheticWorld::generate(vocab, ppr, seed);
  write_json_artifact(out, {{"meta", cfg.meta()},
                            {"vocab", vocab.to_json()},
                            {"world", world.to_json(vocab)}});
  return 0;
}

int cmd_gen_tasks(const Config& cfg) {
  const auto seed = cfg.require<std::uint64_t>("seed");
  const auto out = cfg.require<std::string>("out");
  const auto wf = load_world(cfg);
  const auto kind = tasks::task_kind_from_string(cfg.require<std::string>("task"));
  const int n_pos = cfg.require<int>("n_pos");
  const int n_neg = cfg.require<int>("n_neg");
  const auto data = tasks::gen_dataset(wf.world, wf.vocab, kind, n_pos, n_neg, seed);
  const std::string header = json{{"meta", cfg.meta()}}.dump() + "\n";
  io::atomic_write_text(out, header + tasks::dataset_to_jsonl(data));
  return 0;
}

int cmd_build_model(const Config& cfg) {
  const auto seed = cfg.require<std::uint64_t>("seed");
  const auto out = cfg.require<std::string>("out");
  model::ModelConfig mc;
  mc.d_model = cfg.value<int>("d_model", mc.d_model);
  mc.d_ff = cfg.value<int>("d_ff", mc.d_ff);
  mc.n_heads = cfg.value<int>("n_heads", mc.n_heads);
  mc.enc_layers = cfg.value<int>("enc_layers", mc.enc_layers);
  mc.dec_layers = cfg.value<int>("dec_layers", mc.dec_layers);
  mc.max_seq_len = cfg.value<int>("max_seq_len", mc.max_seq_len);

  model::Seq2SeqModel m;
  if (cfg.value<bool>("planted", false)) {
    const auto wf = load_world(cfg);
    const auto kind = tasks::task_kind_from_string(cfg.require<std::string>("task"));
    const auto tmpl = tasks::PromptTemplate::for_kind(kind);
    mc.vocab_size = wf.vocab.size();
    mc.start_token = wf.vocab.start();
    model::CircuitPlant plant;
    // Columns ahead of the sentence slot render one token each, so the
    // keyword's template column is also its rendered position.
    plant.relation_token_position = tmpl.keyword_column();
    plant.enc_layer = cfg.value<int>("plant_enc_layer", 1);
    plant.dec_layer = cfg.value<int>("plant_dec_layer", 1);
    plant.keyword_tokens = wf.vocab.keyword_ids();
    plant.evidence_tokens = wf.vocab.marker_ids();
    plant.yes_token = wf.vocab.yes();
    plant.no_token = wf.vocab.no();
    plant.seed = seed;
    m = model::build_circuit_model(mc, plant);
  } else {
    if (cfg.has("world")) {
      const auto wf = load_world(cfg);
      mc.vocab_size = wf.vocab.size();
      mc.start_token = wf.vocab.start();
    } else {
      mc.vocab_size = cfg.value<int>("vocab_size", mc.vocab_size);
      mc.start_token = cfg.value<int>("start_token", mc.start_token);
    }
    m = model::random_model(mc, seed, cfg.value<double>("weight_scale", 0.25));
  }
  model::save_checkpoint(m, out, cfg.meta());
  return 0;
}

std::vector<tracing::ModuleKey> module_keys_from(const Config& cfg) {
  if (!cfg.has("modules")) return tracing::all_module_keys();
  std::vector<tracing::ModuleKey> keys;
  for (const auto& s : cfg.require<std::vector<std::string>>("modules")) {
    keys.push_back(parse_module_key(s));
  }
  return keys;
}

int cmd_trace(const Config& cfg) {
  const auto out = cfg.require<std::string>("out");
  const auto m = load_model(cfg);
  const auto wf = load_world(cfg);
  const auto data = load_dataset(cfg);
  tracing::SweepOptions sw;
  sw.keys = module_keys_from(cfg);
  sw.threads = cfg.value<int>("threads", 1);
  const auto maps = tracing::sweep(m, data, noise_from(cfg), wf.vocab.verbalizer(), sw);
  tracing::ExportOptions ex;
  ex.format = cfg.value<std::string>("format", "csv");
  ex.group_splits = cfg.value<std::vector<int>>("group_splits", {});
  ex.header = cfg.meta();
  tracing::export_effects(maps, out, ex);
  return 0;
}

const tracing::EffectMap& pick_map(const std::vector<tracing::EffectMap>& maps,
                                   const std::string& polarity) {
  if (polarity != "positive" && polarity != "negative") {
    throw ConfigError("polarity", "must be positive or negative");
  }
  for (const auto& m : maps) {
    if (m.positive_polarity == (polarity == "positive")) return m;
  }
  throw ConfigError("polarity", "no " + polarity + " map in the effects file");
}

json located_json(const tracing::Located& loc) {
  return {{"module", module_key_string(loc.key)},
          {"token_col", loc.token_col},
          {"layer", loc.layer},
          {"effect", loc.effect}};
}

int cmd_locate(const Config& cfg) {
  const auto out = cfg.require<std::string>("out");
  const auto key = parse_module_key(cfg.require<std::string>("module"));
  tracing::Located loc;
  if (cfg.value<bool>("for_edit", false)) {
    const auto m = load_model(cfg);
    const auto wf = load_world(cfg);
    const auto data = load_dataset(cfg);
    loc = tracing::locate_for_edit(m, data, key, noise_from(cfg),
                                   wf.vocab.verbalizer());
  } else {
    const auto maps =
        tracing::read_effects_json(cfg.require<std::string>("effects"));
    const auto& map = pick_map(maps, cfg.require<std::string>("polarity"));
    loc = tracing::locate(map, key);
  }
  write_json_artifact(out, {{"meta", cfg.meta()}, {"located", located_json(loc)}});
  return 0;
}

int cmd_edit(const Config& cfg) {
  const auto out = cfg.require<std::string>("out");
  const auto m = load_model(cfg);
  const auto wf = load_world(cfg);
  const auto data = load_dataset(cfg);
  const auto verb = wf.vocab.verbalizer();
  const auto component =
      model::component_from_string(cfg.value<std::string>("component", "encoder"));
  tracing::ModuleKey key;
  key.component = component;
  key.module_type = component == model::Component::encoder
                        ? model::ModuleType::mlp
                        : model::ModuleType::cross_attn;

  // The edit site always comes from locating on the edit split; an explicit
  // "layers" list overrides the layer choice but keeps the located token.
  const auto loc = tracing::locate_for_edit(m, data, key, noise_from(cfg), verb);
  std::vector<int> layers = cfg.value<std::vector<int>>("layers", {loc.layer});

  editing::EditSet set;
  for (const auto& s : data) {
    const int pos = component == model::Component::encoder
                        ? s.position_of_column(loc.token_col)
                        : 0;
    (s.positive ? set.positives : set.negatives).push_back({s, pos});
  }

  const auto corpus = tasks::gen_background_corpus(
      wf.vocab, cfg.value<int>("corpus_size", 500),
      num::mix_seed(cfg.require<std::uint64_t>("seed"), 0x636f7270ULL));
  editing::OptimizeOptions opt;
  opt.steps = cfg.value<int>("steps", opt.steps);
  opt.step_size = cfg.value<double>("step_size", opt.step_size);
  const double lambda = cfg.value<double>("lambda", 1.0);
  const std::string task = data.empty() ? "" : tasks::to_string(data.front().kind);

  const auto deltas = editing::edit_multi_layer(m, component, layers, set,
                                                corpus, lambda, opt, verb, task);
  json meta = cfg.meta();
  meta["located"] = located_json(loc);
  editing::write_deltas(out, deltas, meta);
  if (cfg.has("edited_model")) {
    model::save_checkpoint(editing::apply_edit(m, deltas),
                           cfg.require<std::string>("edited_model"), meta);
  }
  return 0;
}

int cmd_analogize(const Config& cfg) {
  const auto out = cfg.require<std::string>("out");
  json qj;
  try {
    qj = json::parse(io::read_text(cfg.require<std::string>("quad")));
  } catch (const std::exception& e) {
    throw ConfigError("quad", std::string("unreadable: ") + e.what());
  }
  const auto quad = analogy::AnalogyQuad::from_json(qj);
  const double alpha = cfg.value<double>("alpha", quad.alpha);
  const int layer_count = cfg.require<int>("layer_count");
  const auto loc = analogy::analogize_location(quad.a.layers, quad.b.layers,
                                               quad.c.layers, layer_count);
  json meta = cfg.meta();
  meta["task"] = quad.task_d;
  meta["layers"] = loc.layers;
  meta["clamped"] = loc.clamped;
  meta["alpha"] = alpha;

  const bool have_deltas = !quad.a.delta_path.empty() &&
                           !quad.b.delta_path.empty() && !quad.c.delta_path.empty();
  if (!have_deltas) {
    write_json_artifact(out, {{"meta", meta}});
    return 0;
  }
  const auto da = editing::read_deltas(quad.a.delta_path);
  const auto db = editing::read_deltas(quad.b.delta_path);
  const auto dc = editing::read_deltas(quad.c.delta_path);
  if (da.size() != db.size() || da.size() != dc.size()) {
    throw ConfigError("quad", "delta files hold different numbers of layers");
  }
  std::vector<editing::EditDelta> dd;
  for (std::size_t i = 0; i < da.size(); ++i) {
    auto d = analogy::analogize_delta(da[i], db[i], dc[i], alpha);
    d.task = quad.task_d;
    if (i < loc.layers.size()) d.target.layer = loc.layers[i];
    dd.push_back(std::move(d));
  }
  editing::write_deltas(out, dd, meta);
  return 0;
}

int cmd_segment(const Config& cfg) {
  const auto out = cfg.require<std::string>("out");
  const auto maps = tracing::read_effects_json(cfg.require<std::string>("effects"));
  const auto& map = pick_map(maps, cfg.require<std::string>("polarity"));
  const auto key = parse_module_key(cfg.require<std::string>("module"));
  analysis::SegmentationOptions opt;
  opt.tau = cfg.value<double>("tau", opt.tau);
  opt.initial_floor = cfg.value<int>("initial_floor", opt.initial_floor);
  const auto res = analysis::segment_prompt(map.values(key), opt);
  json doc = {{"meta", cfg.meta()},
              {"module", module_key_string(key)},
              {"segmentation", res.to_json()},
              {"token_labels", map.token_labels}};
  write_json_artifact(out, doc);
  return 0;
}

int cmd_similarity(const Config& cfg) {
  const auto out = cfg.require<std::string>("out");
  if (!cfg.has("pairs")) throw ConfigError("pairs", "missing");
  const auto pairs_j = cfg.require<json>("pairs");
  if (!pairs_j.is_array() || pairs_j.empty()) {
    throw ConfigError("pairs", "must be a non-empty array");
  }
  std::vector<analysis::SimilarityPair> pairs;
  for (const auto& p : pairs_j) {
    analysis::SimilarityPair sp;
    try {
      sp.name = p.at("name").get<std::string>();
      sp.analogous = p.at("analogous").get<bool>();
      const auto d1 = editing::read_deltas(p.at("d1").get<std::string>());
      const auto d2 = editing::read_deltas(p.at("d2").get<std::string>());
      sp.d1 = d1.at(p.value("index1", 0)).delta;
      sp.d2 = d2.at(p.value("index2", 0)).delta;
    } catch (const std::exception& e) {
      throw ConfigError("pairs", e.what());
    }
    pairs.push_back(std::move(sp));
  }
  const auto rep = analysis::compare_similarity_classes(pairs);
  write_json_artifact(out, {{"meta", cfg.meta()}, {"report", rep.to_json()}});
  return 0;
}

analysis::MetricReport eval_model(const model::Seq2SeqModel& m,
                                  const std::vector<tasks::PromptSample>& data,
                                  const model::Verbalizer& verb) {
  std::vector<bool> pred, gold;
  for (const auto& s : data) {
    const auto [py, pn] = model::answer_prob(model::forward(m, s.tokens, {}), verb);
    pred.push_back(py > pn);
    gold.push_back(s.gold_yes());
  }
  return analysis::prf1(pred, gold);
}

int cmd_eval(const Config& cfg) {
  const auto out = cfg.require<std::string>("out");
  const auto m = load_model(cfg);
  const auto wf = load_world(cfg);
  const auto data = load_dataset(cfg);
  const auto rep = eval_model(m, data, wf.vocab.verbalizer());
  write_json_artifact(out, {{"meta", cfg.meta()}, {"metrics", rep.to_json()}});
  return 0;
}

int cmd_report(const Config& cfg) {
  const auto out = cfg.require<std::string>("out");
  json doc = {{"meta", cfg.meta()}};
  if (cfg.has("effects")) {
    const auto maps =
        tracing::read_effects_json(cfg.require<std::string>("effects"));
    json located = json::array();
    for (const auto& map : maps) {
      for (const auto& cell : map.cells) {
        json row = located_json(tracing::locate(map, cell.key));
        row["polarity"] = map.positive_polarity ? "positive" : "negative";
        row["task"] = map.task;
        located.push_back(std::move(row));
      }
    }
    doc["located"] = located;
  }
  if (cfg.has("evals")) {
    json evals = json::array();
    for (const auto& path : cfg.require<std::vector<std::string>>("evals")) {
      try {
        evals.push_back(
            {{"path", path}, {"report", json::parse(io::read_text(path))}});
      } catch (const std::exception& e) {
        throw ConfigError("evals", std::string("unreadable: ") + e.what());
      }
    }
    doc["evals"] = evals;
  }
  write_json_artifact(out, doc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"causal tracing, module editing and analogy transfer workbench"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::string config_path;
  std::map<std::string, json> overrides;

  const std::vector<std::pair<const char*, const char*>> string_flags = {
      {"out", "output artifact path"},
      {"model", "model checkpoint path"},
      {"world", "world artifact path"},
      {"dataset", "dataset JSONL path"},
      {"task", "task kind, e.g. causal-classification"},
      {"module", "module key, e.g. encoder.mlp"},
      {"polarity", "positive or negative"},
      {"effects", "effects JSON path"},
      {"format", "csv or json"},
      {"component", "encoder or decoder"},
      {"quad", "analogy quad JSON path"},
      {"edited_model", "path for the post-edit checkpoint"},
  };
  const std::vector<std::pair<const char*, const char*>> int_flags = {
      {"n_events", "event lexicon size"},
      {"pairs_per_relation", "related pairs per relation kind"},
      {"n_pos", "positive sample count"},
      {"n_neg", "negative sample count"},
      {"d_model", "model width"},
      {"d_ff", "MLP hidden width"},
      {"n_heads", "attention heads"},
      {"enc_layers", "encoder layers"},
      {"dec_layers", "decoder layers"},
      {"max_seq_len", "maximum sequence length"},
      {"plant_enc_layer", "planted encoder layer"},
      {"plant_dec_layer", "planted decoder layer"},
      {"n_noise", "noise draws per sample"},
      {"threads", "worker thread cap"},
      {"steps", "target optimization steps"},
      {"corpus_size", "background corpus sequences"},
      {"layer_count", "layer count for analogized locations"},
      {"initial_floor", "segmentation starting-count floor"},
      {"vocab_size", "vocabulary size (plain models without a world)"},
  };
  const std::vector<std::pair<const char*, const char*>> double_flags = {
      {"sigma_mult", "noise std as a multiple of embedding std"},
      {"step_size", "target optimization step size"},
      {"lambda", "edit regularization strength"},
      {"alpha", "analogy strength"},
      {"tau", "numerical-rank threshold"},
      {"weight_scale", "random weight scale"},
  };

  std::vector<CLI::App*> subs;
  for (const char* name :
       {"build-model", "gen-world", "gen-tasks", "trace", "locate", "edit",
        "analogize", "segment", "similarity", "eval", "report"}) {
    subs.push_back(app.add_subcommand(name));
  }
  for (CLI::App* sub : subs) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t v) { overrides["seed"] = v; }, "base seed");
    sub->add_flag_function(
        "--planted", [&](std::int64_t) { overrides["planted"] = true; },
        "build the hand-wired circuit model");
    sub->add_flag_function(
        "--for_edit", [&](std::int64_t) { overrides["for_edit"] = true; },
        "locate the edit site instead of reading an effects file");
    for (const auto& [key, help] : string_flags) {
      sub->add_option_function<std::string>(
          std::string("--") + key,
          [&overrides, key = std::string(key)](const std::string& v) {
            overrides[key] = v;
          },
          help);
    }
    for (const auto& [key, help] : int_flags) {
      sub->add_option_function<int>(
          std::string("--") + key,
          [&overrides, key = std::string(key)](int v) { overrides[key] = v; },
          help);
    }
    for (const auto& [key, help] : double_flags) {
      sub->add_option_function<double>(
          std::string("--") + key,
          [&overrides, key = std::string(key)](double v) { overrides[key] = v; },
          help);
    }
    sub->add_option_function<std::vector<int>>(
        "--layers", [&](const std::vector<int>& v) { overrides["layers"] = v; },
            "edited layers, ascending")
        ->delimiter(',');
    sub->add_option_function<std::vector<int>>(
        "--group_splits",
        [&](const std::vector<int>& v) { overrides["group_splits"] = v; },
        "token-column group boundaries")
        ->delimiter(',');
    sub->add_option_function<std::vector<std::string>>(
        "--modules",
        [&](const std::vector<std::string>& v) { overrides["modules"] = v; },
        "swept module keys")
        ->delimiter(',');
    sub->add_option_function<std::vector<std::string>>(
        "--evals", [&](const std::vector<std::string>& v) { overrides["evals"] = v; },
        "evaluation report paths")
        ->delimiter(',');
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    Config cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (auto& [k, v] : overrides) cfg.override_field(k, v);

    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen-world") return cmd_gen_world(cfg);
    if (name == "gen-tasks") return cmd_gen_tasks(cfg);
    if (name == "build-model") return cmd_build_model(cfg);
    if (name == "trace") return cmd_trace(cfg);
    if (name == "locate") return cmd_locate(cfg);
    if (name == "edit") return cmd_edit(cfg);
    if (name == "analogize") return cmd_analogize(cfg);
    if (name == "segment") return cmd_segment(cfg);
    if (name == "similarity") return cmd_similarity(cfg);
    if (name == "eval") return cmd_eval(cfg);
    if (name == "report") return cmd_report(cfg);
    std::fprintf(stderr, "error: unknown subcommand %s\n", name.c_str());
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
