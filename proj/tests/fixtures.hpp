// Shared planted-model setup used by circuit, tracing, editing and
// acceptance tests.
#pragma once

#include "tracebench/circuit.hpp"
#include "tracebench/model.hpp"
#include "tracebench/tasks.hpp"

namespace tbtest {

struct PlantedWorld {
  tb::tasks::Vocabulary vocab = tb::tasks::Vocabulary::standard(32);
  tb::tasks::SyntheticWorld world;
  tb::model::Seq2SeqModel model;
  tb::model::CircuitPlant plant;
  tb::tasks::TaskKind kind;
  int keyword_col = 0;  // template column of the relation keyword
};

inline PlantedWorld make_planted(std::uint64_t model_seed = 1,
                                 std::uint64_t world_seed = 2,
                                 tb::tasks::TaskKind kind = {
                                     tb::tasks::Relation::causal,
                                     tb::tasks::TaskForm::classification}) {
  PlantedWorld p;
  p.kind = kind;
  p.world = tb::tasks::SyntheticWorld::generate(p.vocab, 60, world_seed);
  const auto tmpl = tb::tasks::PromptTemplate::for_kind(kind);
  p.keyword_col = tmpl.keyword_column();

  tb::model::ModelConfig cfg;
  cfg.vocab_size = p.vocab.size();
  cfg.start_token = p.vocab.start();

  p.plant.relation_token_position = p.keyword_col;
  p.plant.enc_layer = 1;
  p.plant.dec_layer = 1;
  p.plant.keyword_tokens = p.vocab.keyword_ids();
  p.plant.evidence_tokens = p.vocab.marker_ids();
  p.plant.yes_token = p.vocab.yes();
  p.plant.no_token = p.vocab.no();
  p.plant.seed = model_seed;
  p.model = tb::model::build_circuit_model(cfg, p.plant);
  return p;
}

}  // namespace tbtest
