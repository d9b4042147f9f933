// Synthetic event-relation tasks: vocabulary, prompt templates, verbalizers,
// polarity rules and a background corpus. A SyntheticWorld holds an event
// lexicon plus a relation table (ordered pair -> relation kind) that serves
// as the ground-truth oracle for generated samples. Sentences express a true
// relation lexically through a per-relation marker token, so model inputs
// carry recoverable evidence of the gold label.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tracebench/model.hpp"

namespace tb::tasks {

enum class Relation { temporal, causal, subevent };
enum class TaskForm { classification, extraction };

struct TaskKind {
  Relation relation = Relation::causal;
  TaskForm form = TaskForm::classification;
  bool operator==(const TaskKind&) const = default;
};

std::string to_string(Relation r);
std::string to_string(TaskKind k);                 // e.g. "causal-extraction"
TaskKind task_kind_from_string(const std::string&);

class Vocabulary {
 public:
  // The fixed vocabulary every artifact in a run shares: special tokens,
  // template literals, event words, relation markers, neutral connectives
  // and filler words.
  static Vocabulary standard(int n_events = 16);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& tok) const;        // throws on out-of-vocabulary
  const std::string& token(int id) const;
  bool contains(const std::string& tok) const;

  int start() const { return start_; }  // "</s>"
  int pad() const { return pad_; }
  int yes() const { return yes_; }
  int no() const { return no_; }
  int relation_keyword(Relation r) const;      // "temporal"/"causal"/"sub-event"
  int relation_marker(Relation r) const;       // evidence token of a true relation
  const std::vector<int>& event_ids() const { return event_ids_; }
  const std::vector<int>& neutral_connectives() const { return neutral_ids_; }
  const std::vector<int>& filler_ids() const { return filler_ids_; }
  std::vector<int> keyword_ids() const;
  std::vector<int> marker_ids() const;

  // Whitespace-plus-punctuation split; every piece must be in vocabulary.
  std::vector<int> tokenize(const std::string& text) const;

  model::Verbalizer verbalizer() const { return {yes_, no_}; }

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  Vocabulary() = default;
  void index();

  std::vector<std::string> tokens_;
  std::map<std::string, int> by_text_;
  int start_ = -1, pad_ = -1, yes_ = -1, no_ = -1;
  std::vector<int> keyword_ids_, marker_ids_;  // indexed by Relation
  std::vector<int> event_ids_, neutral_ids_, filler_ids_;
};

struct PromptTemplate {
  enum class Slot { none, event1, event2, sentence };
  struct Column {
    std::string literal;  // empty when slot != none
    Slot slot = Slot::none;
  };
  TaskKind kind;
  std::vector<Column> columns;

  static PromptTemplate for_kind(TaskKind kind);

  int keyword_column() const;   // column of the relation keyword literal
  int is_column() const;        // column of the "Is" literal
  std::vector<std::string> column_labels() const;
};

struct PromptSample {
  TaskKind kind;
  std::vector<int> tokens;
  std::vector<int> template_cols;  // per-token template column index
  bool positive = false;           // polarity; gold label Yes iff positive
  int noise_begin = 0;             // noise span [begin, end)
  int noise_end = 0;
  int event1_pos = -1;             // extraction only
  int event2_pos = -1;
  std::uint64_t id = 0;

  bool gold_yes() const { return positive; }
  // First rendered position mapped to the given template column.
  int position_of_column(int col) const;
};

// Substitutes placeholders; records event positions and per-token template
// columns. events = {event1 id, event2 id} for extraction templates.
PromptSample render_prompt(const PromptTemplate& tmpl, const Vocabulary& vocab,
                           const std::vector<int>& sentence_tokens,
                           const std::vector<int>& events = {});

struct SyntheticWorld {
  std::vector<int> events;  // token ids from the shared vocabulary
  std::map<std::pair<int, int>, Relation> relations;  // ordered pairs
  std::uint64_t seed = 0;

  static SyntheticWorld generate(const Vocabulary& vocab, int pairs_per_relation,
                                 std::uint64_t seed);

  std::optional<Relation> lookup(int e1, int e2) const;

  nlohmann::json to_json(const Vocabulary& vocab) const;
  static SyntheticWorld from_json(const nlohmann::json& j, const Vocabulary& vocab);
};

// Exactly n_pos positive and n_neg negative samples. Positives use only the
// kind's relation; negatives are unrelated pairs. Noise span: the relation
// keyword for classification, the keyword through the event mentions for
// extraction.
std::vector<PromptSample> gen_dataset(const SyntheticWorld& world,
                                      const Vocabulary& vocab, TaskKind kind,
                                      int n_pos, int n_neg, std::uint64_t seed);

// Seed-deterministic sequences of in-vocabulary tokens. Token distribution:
// uniform over every token except "<pad>" and "</s>"; lengths uniform in
// [4, 12].
std::vector<std::vector<int>> gen_background_corpus(const Vocabulary& vocab,
                                                    int n, std::uint64_t seed);

// Tokens eligible for corpus sampling (the "configured distribution").
std::vector<int> corpus_candidates(const Vocabulary& vocab);

// JSONL dataset records {task, tokens, cols, polarity, noise_span, gold, events, id}.
std::string dataset_to_jsonl(const std::vector<PromptSample>& samples);
std::vector<PromptSample> dataset_from_jsonl(const std::string& text);

}  // namespace tb::tasks
