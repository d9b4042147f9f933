#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "tracebench/tasks.hpp"

using namespace tb::tasks;

TEST_CASE("vocabulary id/token mapping is bijective") {
  const auto v = Vocabulary::standard();
  std::set<std::string> seen;
  for (int i = 0; i < v.size(); ++i) {
    CHECK(v.id(v.token(i)) == i);
    CHECK(seen.insert(v.token(i)).second);
  }
  CHECK(v.contains("causal"));
  CHECK_FALSE(v.contains("banana"));
  CHECK_THROWS_WITH_AS(v.id("banana"),
                       "out-of-vocabulary token: banana",
                       std::invalid_argument);
}

TEST_CASE("tokenizer splits sentence punctuation but not word-internal marks") {
  const auto v = Vocabulary::standard();
  const auto ids = v.tokenize("Is there a sub-event relation in it?");
  REQUIRE(ids.size() == 8);
  CHECK(v.token(ids[3]) == "sub-event");
  CHECK(v.token(ids[7]) == "?");
  CHECK(v.tokenize("yes/no").size() == 1);
  CHECK(v.tokenize("  question .  ") == v.tokenize("question."));
  CHECK_THROWS_AS(v.tokenize("Is there an apple?"), std::invalid_argument);
}

TEST_CASE("vocabulary JSON round trip") {
  const auto v = Vocabulary::standard();
  const auto w = Vocabulary::from_json(v.to_json());
  REQUIRE(w.size() == v.size());
  for (int i = 0; i < v.size(); ++i) CHECK(w.token(i) == v.token(i));
  CHECK(w.yes() == v.yes());
  CHECK(w.marker_ids() == v.marker_ids());
}

TEST_CASE("task kind strings round trip") {
  for (Relation r : {Relation::temporal, Relation::causal, Relation::subevent}) {
    for (TaskForm f : {TaskForm::classification, TaskForm::extraction}) {
      const TaskKind k{r, f};
      CHECK(task_kind_from_string(to_string(k)) == k);
    }
  }
  CHECK_THROWS_AS(task_kind_from_string("causal"), std::invalid_argument);
  CHECK_THROWS_AS(task_kind_from_string("spatial-extraction"), std::invalid_argument);
}

TEST_CASE("causal extraction prompt renders the full question") {
  const auto v = Vocabulary::standard();
  const auto tmpl = PromptTemplate::for_kind({Relation::causal, TaskForm::extraction});
  const auto s = render_prompt(tmpl, v, v.tokenize("hence one day"),
                               {v.id("ev3"), v.id("ev7")});
  CHECK(s.tokens ==
        v.tokenize("Answering the following yes/no question . Is there a "
                   "causal relation between ev3 and ev7 in hence one day ?"));
  CHECK(s.event1_pos == 12);
  CHECK(s.event2_pos == 14);
  CHECK(s.tokens[s.event1_pos] == v.id("ev3"));
  // Rendering is a pure function of its inputs.
  const auto s2 = render_prompt(tmpl, v, v.tokenize("hence one day"),
                                {v.id("ev3"), v.id("ev7")});
  CHECK(s2.tokens == s.tokens);
  CHECK(s2.template_cols == s.template_cols);
}

TEST_CASE("template slot structure per form") {
  using Slot = PromptTemplate::Slot;
  for (Relation r : {Relation::temporal, Relation::causal, Relation::subevent}) {
    const auto cls = PromptTemplate::for_kind({r, TaskForm::classification});
    const auto ext = PromptTemplate::for_kind({r, TaskForm::extraction});
    auto count = [](const PromptTemplate& t, Slot s) {
      return std::count_if(t.columns.begin(), t.columns.end(),
                           [&](const auto& c) { return c.slot == s; });
    };
    CHECK(count(cls, Slot::event1) == 0);
    CHECK(count(cls, Slot::event2) == 0);
    CHECK(count(ext, Slot::event1) == 1);
    CHECK(count(ext, Slot::event2) == 1);
    CHECK(count(cls, Slot::sentence) == 1);
    CHECK(cls.columns[cls.keyword_column()].literal ==
          ext.columns[ext.keyword_column()].literal);
  }
}

TEST_CASE("render_prompt input validation") {
  const auto v = Vocabulary::standard();
  const auto ext = PromptTemplate::for_kind({Relation::causal, TaskForm::extraction});
  CHECK_THROWS_AS(render_prompt(ext, v, v.tokenize("hence it"), {}),
                  std::invalid_argument);
  CHECK_THROWS_AS(render_prompt(ext, v, {}, {v.id("ev0"), v.id("ev1")}),
                  std::invalid_argument);
}

namespace {

// Recovers the (event1, event2) pair a generated sample talks about.
std::pair<int, int> sample_pair(const PromptSample& s, const Vocabulary& v,
                                const PromptTemplate& tmpl) {
  if (s.kind.form == TaskForm::extraction) {
    return {s.tokens[s.event1_pos], s.tokens[s.event2_pos]};
  }
  std::vector<int> sentence;
  int slot_col = -1;
  for (int c = 0; c < static_cast<int>(tmpl.columns.size()); ++c) {
    if (tmpl.columns[c].slot == PromptTemplate::Slot::sentence) slot_col = c;
  }
  for (size_t i = 0; i < s.tokens.size(); ++i) {
    if (s.template_cols[i] == slot_col) sentence.push_back(s.tokens[i]);
  }
  // Classification sentences are [event1, connective, event2, fillers...].
  return {sentence[0], sentence[2]};
}

}  // namespace

TEST_CASE("gen_dataset counts, oracle consistency and noise spans") {
  const auto v = Vocabulary::standard();
  const auto world = SyntheticWorld::generate(v, 20, 7);
  for (TaskForm form : {TaskForm::classification, TaskForm::extraction}) {
    const TaskKind kind{Relation::temporal, form};
    const auto tmpl = PromptTemplate::for_kind(kind);
    const auto data = gen_dataset(world, v, kind, 12, 9, 11);
    REQUIRE(data.size() == 21);
    int n_pos = 0;
    for (const auto& s : data) {
      n_pos += s.positive;
      CHECK(s.gold_yes() == s.positive);
      const auto [e1, e2] = sample_pair(s, v, tmpl);
      const auto rel = world.lookup(e1, e2);
      if (s.positive) {
        REQUIRE(rel.has_value());
        CHECK(*rel == kind.relation);
      } else {
        CHECK_FALSE(rel.has_value());
      }
      // Noise span covers the relation keyword; extraction extends through
      // the event mentions.
      const int kw = s.position_of_column(tmpl.keyword_column());
      CHECK(s.noise_begin == kw);
      CHECK(s.noise_end <= static_cast<int>(s.tokens.size()));
      if (form == TaskForm::classification) {
        CHECK(s.noise_end == kw + 1);
      } else {
        CHECK(s.noise_end == std::max(s.event1_pos, s.event2_pos) + 1);
        // Each event mention appears exactly once in the rendered prompt.
        CHECK(std::count(s.tokens.begin(), s.tokens.end(), s.tokens[s.event1_pos]) == 1);
        CHECK(std::count(s.tokens.begin(), s.tokens.end(), s.tokens[s.event2_pos]) == 1);
      }
    }
    CHECK(n_pos == 12);
  }
  CHECK(gen_dataset(world, v, {Relation::causal, TaskForm::classification}, 0, 0, 1)
            .empty());
  CHECK_THROWS_AS(
      gen_dataset(world, v, {Relation::causal, TaskForm::classification}, 21, 0, 1),
      std::invalid_argument);
}

TEST_CASE("gen_dataset is seed-deterministic") {
  const auto v = Vocabulary::standard();
  const auto world = SyntheticWorld::generate(v, 20, 7);
  const TaskKind kind{Relation::causal, TaskForm::classification};
  const auto a = gen_dataset(world, v, kind, 8, 8, 5);
  const auto b = gen_dataset(world, v, kind, 8, 8, 5);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].tokens == b[i].tokens);
    CHECK(a[i].id == b[i].id);
  }
  const auto c = gen_dataset(world, v, kind, 8, 8, 6);
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i) any_diff |= (a[i].tokens != c[i].tokens);
  CHECK(any_diff);
  int pos_a = 0, pos_c = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    pos_a += a[i].positive;
    pos_c += c[i].positive;
  }
  CHECK(pos_a == pos_c);
}

TEST_CASE("world generation and JSON round trip") {
  const auto v = Vocabulary::standard();
  const auto world = SyntheticWorld::generate(v, 15, 3);
  REQUIRE(world.relations.size() == 45);  // partial function: one kind per pair
  int per_kind[3] = {0, 0, 0};
  for (const auto& [pair, rel] : world.relations) {
    CHECK(pair.first != pair.second);
    ++per_kind[static_cast<int>(rel)];
  }
  for (int k : per_kind) CHECK(k == 15);

  const auto back = SyntheticWorld::from_json(world.to_json(v), v);
  CHECK(back.seed == world.seed);
  CHECK(back.events == world.events);
  CHECK(back.relations == world.relations);

  CHECK(SyntheticWorld::generate(v, 15, 3).relations == world.relations);
  CHECK_THROWS_AS(SyntheticWorld::generate(v, 100, 3), std::invalid_argument);
}

TEST_CASE("dataset JSONL round trip") {
  const auto v = Vocabulary::standard();
  const auto world = SyntheticWorld::generate(v, 20, 7);
  for (TaskForm form : {TaskForm::classification, TaskForm::extraction}) {
    const auto data = gen_dataset(world, v, {Relation::subevent, form}, 5, 5, 9);
    const auto back = dataset_from_jsonl(dataset_to_jsonl(data));
    REQUIRE(back.size() == data.size());
    for (size_t i = 0; i < data.size(); ++i) {
      CHECK(back[i].kind == data[i].kind);
      CHECK(back[i].tokens == data[i].tokens);
      CHECK(back[i].template_cols == data[i].template_cols);
      CHECK(back[i].positive == data[i].positive);
      CHECK(back[i].noise_begin == data[i].noise_begin);
      CHECK(back[i].noise_end == data[i].noise_end);
      CHECK(back[i].event1_pos == data[i].event1_pos);
      CHECK(back[i].event2_pos == data[i].event2_pos);
      CHECK(back[i].id == data[i].id);
    }
  }
  CHECK_THROWS_AS(dataset_from_jsonl("{\"task\":\"causal-classification\"}"),
                  std::exception);
}

TEST_CASE("background corpus determinism, closure and token balance") {
  const auto v = Vocabulary::standard();
  const auto one = gen_background_corpus(v, 1, 42);
  REQUIRE(one.size() == 1);
  CHECK(one == gen_background_corpus(v, 1, 42));

  const auto candidates = corpus_candidates(v);
  const std::set<int> allowed(candidates.begin(), candidates.end());
  CHECK(allowed.count(v.start()) == 0);
  CHECK(allowed.count(v.pad()) == 0);
  CHECK(static_cast<int>(allowed.size()) == v.size() - 2);

  const auto corpus = gen_background_corpus(v, 1000, 42);
  REQUIRE(corpus.size() == 1000);
  std::map<int, long> counts;
  long total = 0;
  for (const auto& seq : corpus) {
    CHECK(seq.size() >= 4);
    CHECK(seq.size() <= 12);
    for (const int t : seq) {
      CHECK(allowed.count(t) == 1);
      ++counts[t];
      ++total;
    }
  }
  // Uniform multinomial: every per-token count within 3 sigma of expectation.
  const double p = 1.0 / static_cast<double>(allowed.size());
  const double mean = total * p;
  const double sigma = std::sqrt(total * p * (1.0 - p));
  for (const int t : candidates) {
    CHECK(std::abs(counts[t] - mean) <= 3.0 * sigma);
  }
}
