// Causal tracing: noise-corrupt a prompt's key span, restore one module
// output from the clean run, and measure the shift in the answer
// distribution. Positive samples score restoration of Yes over the corrupted
// baseline; negative samples score how much corruption raises No relative to
// the restored run.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tracebench/model.hpp"
#include "tracebench/tasks.hpp"

namespace tb::tracing {

using tb::model::Component;
using tb::model::ModuleAddress;
using tb::model::ModuleType;
using tb::model::Seq2SeqModel;
using tb::model::Verbalizer;
using tb::num::Matrix;

struct NoiseConfig {
  double sigma_mult = 3.0;  // noise std = sigma_mult * embedding std
  int n_noise = 5;          // draws per sample
  std::uint64_t base_seed = 0;

  void validate() const;
  // Per-(sample, draw) noise stream, independent of evaluation order.
  std::uint64_t draw_seed(std::uint64_t sample_id, int draw) const;
};

struct ModuleKey {
  Component component = Component::encoder;
  ModuleType module_type = ModuleType::mlp;
  bool operator==(const ModuleKey&) const = default;
};

// The seven swept module kinds.
std::vector<ModuleKey> all_module_keys();

// Average indirect effects on the template-column token axis. Encoder cells
// are (template columns x layers); decoder cells are (1 x layers) since the
// decoder runs a single step. Sentence-slot tokens collapse into the slot
// column by averaging within each sample.
struct EffectMap {
  std::string task;
  bool positive_polarity = true;
  std::vector<std::string> token_labels;  // encoder axis labels
  struct Cell {
    ModuleKey key;
    Matrix values;
  };
  std::vector<Cell> cells;
  int n_samples = 0;
  int n_noise = 0;
  std::uint64_t noise_fingerprint = 0;  // seed/config digest for provenance

  const Matrix& values(const ModuleKey& key) const;  // throws if absent
  bool has(const ModuleKey& key) const;

  nlohmann::json to_json() const;
  static EffectMap from_json(const nlohmann::json& j);
};

// Effect of restoring one module output (address in rendered-token space)
// for a single sample, averaged over noise draws. sigma_mult == 0 gives
// exactly 0.
double sample_effect(const Seq2SeqModel& m, const tasks::PromptSample& sample,
                     const ModuleAddress& address, const NoiseConfig& noise,
                     const Verbalizer& verb);

struct SweepOptions {
  std::vector<ModuleKey> keys = all_module_keys();
  int threads = 1;  // partitioned by sample; results independent of N
};

// One EffectMap per polarity present in the dataset, ordered positive first.
// All samples must share one task kind, and all positives (negatives) enter
// the positive (negative) map.
std::vector<EffectMap> sweep(const Seq2SeqModel& m,
                             const std::vector<tasks::PromptSample>& dataset,
                             const NoiseConfig& noise, const Verbalizer& verb,
                             const SweepOptions& opt = {});

struct Located {
  ModuleKey key;
  int token_col = 0;  // template column (0 for decoder cells)
  int layer = 0;
  double effect = 0.0;
};

// Argmax over (token, layer); ties prefer the lower layer, then the lower
// token column.
Located locate(const EffectMap& map, const ModuleKey& key);

// Locating variant used to pick the edit site: argmax over (token, layer) of
// the mean over all samples, regardless of polarity, of
// P(No | corrupted) - P(No | corrupted, restored). Restricted to encoder mlp
// and decoder cross_attn.
Located locate_for_edit(const Seq2SeqModel& m,
                        const std::vector<tasks::PromptSample>& dataset,
                        const ModuleKey& key, const NoiseConfig& noise,
                        const Verbalizer& verb);

// Layers of one token column ordered by ascending effect (stable).
std::vector<int> rank_layers(const EffectMap& map, const ModuleKey& key,
                             int token_col);

struct ExportOptions {
  std::string format = "csv";       // "csv" or "json"
  std::vector<int> group_splits;    // optional token-column grouping
  nlohmann::json header;            // tool version, config hash, seed
};

// Serializes effect maps; CSV columns are
// module_type,token_index,token_text,layer,polarity,effect,n_samples,n_noise
// (plus group_id,group_label when grouping is requested).
void export_effects(const std::vector<EffectMap>& maps, const std::string& path,
                    const ExportOptions& opt);

std::vector<EffectMap> read_effects_json(const std::string& path);

}  // namespace tb::tracing
