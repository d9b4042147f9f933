#include "tracebench/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tracebench/numkernel.hpp"

namespace tb::tasks {

using tb::num::SeededRng;

std::string to_string(Relation r) {
  switch (r) {
    case Relation::temporal: return "temporal";
    case Relation::causal: return "causal";
    case Relation::subevent: return "subevent";
  }
  throw std::logic_error("bad Relation");
}

std::string to_string(TaskKind k) {
  return to_string(k.relation) + std::string("-") +
         (k.form == TaskForm::classification ? "classification" : "extraction");
}

TaskKind task_kind_from_string(const std::string& s) {
  const auto dash = s.rfind('-');
  if (dash == std::string::npos) throw std::invalid_argument("bad task kind: " + s);
  const std::string rel = s.substr(0, dash);
  const std::string form = s.substr(dash + 1);
  TaskKind k;
  if (rel == "temporal") k.relation = Relation::temporal;
  else if (rel == "causal") k.relation = Relation::causal;
  else if (rel == "subevent") k.relation = Relation::subevent;
  else throw std::invalid_argument("bad task kind: " + s);
  if (form == "classification") k.form = TaskForm::classification;
  else if (form == "extraction") k.form = TaskForm::extraction;
  else throw std::invalid_argument("bad task kind: " + s);
  return k;
}

namespace {

// Keyword surface form differs from the Relation enum name for sub-event.
const char* kKeywords[3] = {"temporal", "causal", "sub-event"};
const char* kMarkers[3] = {"afterwards", "hence", "within"};
const char* kNeutral[2] = {"alongside", "meanwhile"};
const char* kFillers[6] = {"one", "day", "it", "was", "quiet", "there-after"};

}  // namespace

Vocabulary Vocabulary::standard(int n_events) {
  if (n_events < 4) throw std::invalid_argument("n_events must be >= 4");
  Vocabulary v;
  auto add = [&](const std::string& t) {
    v.tokens_.push_back(t);
    return static_cast<int>(v.tokens_.size()) - 1;
  };
  v.start_ = add("</s>");
  v.pad_ = add("<pad>");
  v.yes_ = add("Yes");
  v.no_ = add("No");
  // Template literals.
  for (const char* t : {"Answering", "the", "following", "yes/no", "question",
                        ".", "Is", "there", "a", "relation", "between", "and",
                        "in", "?"}) {
    add(t);
  }
  for (int r = 0; r < 3; ++r) v.keyword_ids_.push_back(add(kKeywords[r]));
  for (int r = 0; r < 3; ++r) v.marker_ids_.push_back(add(kMarkers[r]));
  for (const char* t : kNeutral) v.neutral_ids_.push_back(add(t));
  for (const char* t : kFillers) v.filler_ids_.push_back(add(t));
  for (int i = 0; i < n_events; ++i) v.event_ids_.push_back(add("ev" + std::to_string(i)));
  v.index();
  return v;
}

void Vocabulary::index() {
  by_text_.clear();
  for (int i = 0; i < size(); ++i) {
    if (!by_text_.emplace(tokens_[i], i).second) {
      throw std::invalid_argument("duplicate token: " + tokens_[i]);
    }
  }
}

int Vocabulary::id(const std::string& tok) const {
  const auto it = by_text_.find(tok);
  if (it == by_text_.end()) throw std::invalid_argument("out-of-vocabulary token: " + tok);
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::invalid_argument("token id out of range");
  return tokens_[id];
}

bool Vocabulary::contains(const std::string& tok) const {
  return by_text_.count(tok) != 0;
}

int Vocabulary::relation_keyword(Relation r) const {
  return keyword_ids_[static_cast<int>(r)];
}

int Vocabulary::relation_marker(Relation r) const {
  return marker_ids_[static_cast<int>(r)];
}

std::vector<int> Vocabulary::keyword_ids() const { return keyword_ids_; }
std::vector<int> Vocabulary::marker_ids() const { return marker_ids_; }

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  // '.' and '?' split off as their own tokens; everything else splits on
  // whitespace. Hyphens and slashes stay inside words ("sub-event", "yes/no").
  std::vector<int> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(id(cur));
      cur.clear();
    }
  };
  for (const char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (c == '.' || c == '?') {
      flush();
      out.push_back(id(std::string(1, c)));
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

nlohmann::json Vocabulary::to_json() const {
  return {{"tokens", tokens_},
          {"keywords", keyword_ids_},
          {"markers", marker_ids_},
          {"neutral", neutral_ids_},
          {"fillers", filler_ids_},
          {"events", event_ids_},
          {"start", start_},
          {"pad", pad_},
          {"yes", yes_},
          {"no", no_}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
  v.keyword_ids_ = j.at("keywords").get<std::vector<int>>();
  v.marker_ids_ = j.at("markers").get<std::vector<int>>();
  v.neutral_ids_ = j.at("neutral").get<std::vector<int>>();
  v.filler_ids_ = j.at("fillers").get<std::vector<int>>();
  v.event_ids_ = j.at("events").get<std::vector<int>>();
  v.start_ = j.at("start").get<int>();
  v.pad_ = j.at("pad").get<int>();
  v.yes_ = j.at("yes").get<int>();
  v.no_ = j.at("no").get<int>();
  v.index();
  return v;
}

PromptTemplate PromptTemplate::for_kind(TaskKind kind) {
  PromptTemplate t;
  t.kind = kind;
  auto lit = [&](const char* s) { t.columns.push_back({s, Slot::none}); };
  auto slot = [&](Slot s) { t.columns.push_back({"", s}); };
  for (const char* s : {"Answering", "the", "following", "yes/no", "question",
                        ".", "Is", "there", "a"}) {
    lit(s);
  }
  lit(kKeywords[static_cast<int>(kind.relation)]);
  lit("relation");
  if (kind.form == TaskForm::extraction) {
    lit("between");
    slot(Slot::event1);
    lit("and");
    slot(Slot::event2);
  }
  lit("in");
  slot(Slot::sentence);
  lit("?");
  return t;
}

int PromptTemplate::keyword_column() const {
  const std::string kw = kKeywords[static_cast<int>(kind.relation)];
  for (int i = 0; i < static_cast<int>(columns.size()); ++i) {
    if (columns[i].literal == kw) return i;
  }
  throw std::logic_error("template has no keyword column");
}

int PromptTemplate::is_column() const {
  for (int i = 0; i < static_cast<int>(columns.size()); ++i) {
    if (columns[i].literal == "Is") return i;
  }
  throw std::logic_error("template has no Is column");
}

std::vector<std::string> PromptTemplate::column_labels() const {
  std::vector<std::string> out;
  for (const auto& c : columns) {
    switch (c.slot) {
      case Slot::none: out.push_back(c.literal); break;
      case Slot::event1: out.push_back("<event1>"); break;
      case Slot::event2: out.push_back("<event2>"); break;
      case Slot::sentence: out.push_back("<sentence>"); break;
    }
  }
  return out;
}

int PromptSample::position_of_column(int col) const {
  for (int i = 0; i < static_cast<int>(template_cols.size()); ++i) {
    if (template_cols[i] == col) return i;
  }
  throw std::invalid_argument("no token rendered at template column " +
                              std::to_string(col));
}

PromptSample render_prompt(const PromptTemplate& tmpl, const Vocabulary& vocab,
                           const std::vector<int>& sentence_tokens,
                           const std::vector<int>& events) {
  const bool extraction = tmpl.kind.form == TaskForm::extraction;
  if (extraction && events.size() != 2) {
    throw std::invalid_argument("extraction template needs two events");
  }
  if (sentence_tokens.empty()) throw std::invalid_argument("empty sentence");
  PromptSample s;
  s.kind = tmpl.kind;
  for (int col = 0; col < static_cast<int>(tmpl.columns.size()); ++col) {
    const auto& c = tmpl.columns[col];
    switch (c.slot) {
      case PromptTemplate::Slot::none:
        s.tokens.push_back(vocab.id(c.literal));
        s.template_cols.push_back(col);
        break;
      case PromptTemplate::Slot::event1:
        s.event1_pos = static_cast<int>(s.tokens.size());
        s.tokens.push_back(events[0]);
        s.template_cols.push_back(col);
        break;
      case PromptTemplate::Slot::event2:
        s.event2_pos = static_cast<int>(s.tokens.size());
        s.tokens.push_back(events[1]);
        s.template_cols.push_back(col);
        break;
      case PromptTemplate::Slot::sentence:
        for (const int t : sentence_tokens) {
          s.tokens.push_back(t);
          s.template_cols.push_back(col);
        }
        break;
    }
  }
  return s;
}

SyntheticWorld SyntheticWorld::generate(const Vocabulary& vocab,
                                        int pairs_per_relation,
                                        std::uint64_t seed) {
  if (pairs_per_relation < 1) throw std::invalid_argument("pairs_per_relation must be >= 1");
  const auto& ev = vocab.event_ids();
  const int n = static_cast<int>(ev.size());
  const long ordered = static_cast<long>(n) * (n - 1);
  // Leave at least as many unrelated pairs as related ones so negative
  // sampling cannot starve.
  if (3L * pairs_per_relation * 2 > ordered) {
    throw std::invalid_argument("event lexicon too small for requested pair count");
  }
  SyntheticWorld w;
  w.events = ev;
  w.seed = seed;
  SeededRng rng(seed);
  for (int r = 0; r < 3; ++r) {
    int placed = 0;
    while (placed < pairs_per_relation) {
      const int i = static_cast<int>(rng.uniform() * n);
      int j = static_cast<int>(rng.uniform() * (n - 1));
      if (j >= i) ++j;
      const auto key = std::make_pair(ev[i], ev[j]);
      if (w.relations.count(key)) continue;
      w.relations.emplace(key, static_cast<Relation>(r));
      ++placed;
    }
  }
  return w;
}

std::optional<Relation> SyntheticWorld::lookup(int e1, int e2) const {
  const auto it = relations.find({e1, e2});
  if (it == relations.end()) return std::nullopt;
  return it->second;
}

nlohmann::json SyntheticWorld::to_json(const Vocabulary& vocab) const {
  nlohmann::json rels = nlohmann::json::array();
  for (const auto& [pair, rel] : relations) {
    rels.push_back({{"e1", vocab.token(pair.first)},
                    {"e2", vocab.token(pair.second)},
                    {"kind", to_string(rel)}});
  }
  std::vector<std::string> names;
  for (const int e : events) names.push_back(vocab.token(e));
  return {{"seed", seed}, {"events", names}, {"relations", rels},
          {"vocabulary", vocab.to_json()}};
}

SyntheticWorld SyntheticWorld::from_json(const nlohmann::json& j,
                                         const Vocabulary& vocab) {
  SyntheticWorld w;
  w.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& name : j.at("events")) w.events.push_back(vocab.id(name.get<std::string>()));
  for (const auto& r : j.at("relations")) {
    const int e1 = vocab.id(r.at("e1").get<std::string>());
    const int e2 = vocab.id(r.at("e2").get<std::string>());
    const TaskKind k = task_kind_from_string(r.at("kind").get<std::string>() + "-classification");
    w.relations.emplace(std::make_pair(e1, e2), k.relation);
  }
  return w;
}

namespace {

std::vector<int> make_sentence(const Vocabulary& vocab, TaskForm form, int e1,
                               int e2, int connective, SeededRng& rng) {
  // Classification sentences mention the events inline; extraction prompts
  // already mention them in the template slots, and each event must appear
  // exactly once in the rendered prompt.
  std::vector<int> s;
  if (form == TaskForm::classification) {
    s = {e1, connective, e2};
  } else {
    s = {connective};
  }
  const auto& fill = vocab.filler_ids();
  for (int k = 0; k < 2; ++k) {
    s.push_back(fill[static_cast<int>(rng.uniform() * fill.size())]);
  }
  return s;
}

}  // namespace

std::vector<PromptSample> gen_dataset(const SyntheticWorld& world,
                                      const Vocabulary& vocab, TaskKind kind,
                                      int n_pos, int n_neg, std::uint64_t seed) {
  if (n_pos < 0 || n_neg < 0) throw std::invalid_argument("negative sample count");
  const PromptTemplate tmpl = PromptTemplate::for_kind(kind);
  std::vector<std::pair<int, int>> pos_pool, neg_pool;
  for (const auto& [pair, rel] : world.relations) {
    if (rel == kind.relation) pos_pool.push_back(pair);
  }
  {
    std::set<std::pair<int, int>> related;
    for (const auto& [pair, rel] : world.relations) related.insert(pair);
    for (const int a : world.events) {
      for (const int b : world.events) {
        if (a != b && !related.count({a, b})) neg_pool.push_back({a, b});
      }
    }
  }
  if (static_cast<int>(pos_pool.size()) < n_pos) {
    throw std::invalid_argument("world has too few related pairs for n_pos");
  }
  if (static_cast<int>(neg_pool.size()) < n_neg) {
    throw std::invalid_argument("world has too few unrelated pairs for n_neg");
  }
  SeededRng rng(seed);
  auto shuffle = [&](std::vector<std::pair<int, int>>& v, SeededRng& r) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      const int j = static_cast<int>(r.uniform() * (i + 1));
      std::swap(v[i], v[j]);
    }
  };
  SeededRng pos_rng = rng.child(1), neg_rng = rng.child(2), fill_rng = rng.child(3);
  shuffle(pos_pool, pos_rng);
  shuffle(neg_pool, neg_rng);

  const int kw_col = tmpl.keyword_column();
  std::vector<PromptSample> out;
  auto emit = [&](std::pair<int, int> pair, bool positive) {
    const int connective = positive ? vocab.relation_marker(kind.relation)
                                    : vocab.neutral_connectives()[out.size() % 2];
    const std::vector<int> sentence = make_sentence(
        vocab, kind.form, pair.first, pair.second, connective, fill_rng);
    std::vector<int> events;
    if (kind.form == TaskForm::extraction) events = {pair.first, pair.second};
    PromptSample s = render_prompt(tmpl, vocab, sentence, events);
    s.positive = positive;
    s.id = out.size();
    const int kw_pos = s.position_of_column(kw_col);
    if (kind.form == TaskForm::classification) {
      s.noise_begin = kw_pos;
      s.noise_end = kw_pos + 1;
    } else {
      s.noise_begin = kw_pos;
      s.noise_end = std::max(s.event1_pos, s.event2_pos) + 1;
    }
    out.push_back(std::move(s));
  };
  for (int i = 0; i < n_pos; ++i) emit(pos_pool[i], true);
  for (int i = 0; i < n_neg; ++i) emit(neg_pool[i], false);
  return out;
}

std::vector<int> corpus_candidates(const Vocabulary& vocab) {
  std::vector<int> out;
  for (int i = 0; i < vocab.size(); ++i) {
    if (i == vocab.start() || i == vocab.pad()) continue;
    out.push_back(i);
  }
  return out;
}

std::vector<std::vector<int>> gen_background_corpus(const Vocabulary& vocab,
                                                    int n, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("negative corpus size");
  const std::vector<int> cand = corpus_candidates(vocab);
  SeededRng rng(seed);
  std::vector<std::vector<int>> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int len = 4 + static_cast<int>(rng.uniform() * 9);  // uniform [4, 12]
    std::vector<int> seq(len);
    for (int k = 0; k < len; ++k) {
      seq[k] = cand[static_cast<int>(rng.uniform() * cand.size())];
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::string dataset_to_jsonl(const std::vector<PromptSample>& samples) {
  std::ostringstream os;
  for (const auto& s : samples) {
    nlohmann::json j = {
        {"task", to_string(s.kind)},
        {"id", s.id},
        {"tokens", s.tokens},
        {"cols", s.template_cols},
        {"polarity", s.positive ? "positive" : "negative"},
        {"noise_span", {s.noise_begin, s.noise_end}},
        {"gold", s.gold_yes() ? "Yes" : "No"},
    };
    if (s.event1_pos >= 0) j["events"] = {s.event1_pos, s.event2_pos};
    os << j.dump() << "\n";
  }
  return os.str();
}

std::vector<PromptSample> dataset_from_jsonl(const std::string& text) {
  std::vector<PromptSample> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    if (j.contains("meta")) continue;  // artifact header line
    PromptSample s;
    s.kind = task_kind_from_string(j.at("task").get<std::string>());
    s.id = j.at("id").get<std::uint64_t>();
    s.tokens = j.at("tokens").get<std::vector<int>>();
    s.template_cols = j.at("cols").get<std::vector<int>>();
    s.positive = j.at("polarity").get<std::string>() == "positive";
    s.noise_begin = j.at("noise_span").at(0).get<int>();
    s.noise_end = j.at("noise_span").at(1).get<int>();
    const bool gold_yes = j.at("gold").get<std::string>() == "Yes";
    if (gold_yes != s.positive) throw std::invalid_argument("gold/polarity mismatch");
    if (j.contains("events")) {
      s.event1_pos = j.at("events").at(0).get<int>();
      s.event2_pos = j.at("events").at(1).get<int>();
    }
    if (s.tokens.size() != s.template_cols.size() || s.tokens.empty() ||
        s.noise_begin < 0 || s.noise_end > static_cast<int>(s.tokens.size()) ||
        s.noise_begin >= s.noise_end) {
      throw std::invalid_argument("malformed dataset record");
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tb::tasks
