// Closed-form module editing. The edited weight is the last linear layer of
// the located module: encoder MLP W_out or decoder cross-attention W_O. The
// update solves a regularized least-squares problem
//   dW = (M1 - W0 K1) K1^T (C0 + K1 K1^T)^{-1}
// where K1 holds the module inputs at the located positions, M1 holds
// per-sample optimized target outputs, and C0 is the lambda-scaled second
// moment of the same inputs over a background corpus.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tracebench/model.hpp"
#include "tracebench/tasks.hpp"

namespace tb::editing {

using tb::model::Component;
using tb::model::ModuleAddress;
using tb::model::ModuleType;
using tb::model::Seq2SeqModel;
using tb::model::Verbalizer;
using tb::num::Matrix;
using tb::num::Vector;

struct EditTarget {
  Component component = Component::encoder;
  ModuleType module_type = ModuleType::mlp;  // mlp or cross_attn only
  int layer = 0;

  bool operator==(const EditTarget&) const = default;
};

// True for the two editable module kinds: encoder mlp, decoder cross_attn.
bool editable(Component c, ModuleType t);

struct EditSample {
  tasks::PromptSample sample;
  int located_pos = 0;  // rendered token index (encoder) / 0 (decoder)
};

// Negatives get target answer "No"; positives must keep their original
// Yes-probability. Union must be non-empty. Column order everywhere:
// negatives first, then positives.
struct EditSet {
  std::vector<EditSample> negatives;
  std::vector<EditSample> positives;

  int size() const { return static_cast<int>(negatives.size() + positives.size()); }
  const EditSample& at(int i) const;
  void validate() const;
  std::uint64_t hash() const;
};

struct OptimizeOptions {
  int steps = 25;
  double step_size = 0.05;
};

// lambda * mean over corpus positions of k k^T, k = edited layer's input
// (MLP hidden for encoder mlp, pre-projection concat for decoder cross_attn).
Matrix estimate_c0(const Seq2SeqModel& m, const EditTarget& target,
                   const std::vector<std::vector<int>>& corpus, double lambda);

// Per-sample target output columns (output-dim x edit_set.size()), descent
// from the clean module outputs on
//   sum_neg -log P(No | m) + sum_pos KL(edited Yes/No pair || clean pair).
// Keeps the best iterate, so the final loss never exceeds the initial one.
Matrix optimize_targets(const Seq2SeqModel& m, const EditTarget& target,
                        const EditSet& edit_set, const OptimizeOptions& opt,
                        const Verbalizer& verb);

// Loss value of the editing objective at given target columns; exposed for
// finite-difference checks and monotonicity tests.
double edit_objective(const Seq2SeqModel& m, const EditTarget& target,
                      const EditSet& edit_set, const Verbalizer& verb,
                      const Matrix& m1);

struct SolveInputs {
  Matrix w0;  // output-dim x input-dim
  Matrix k1;  // input-dim x n
  Matrix m1;  // output-dim x n
  Matrix c0;  // input-dim x input-dim, symmetric PSD
  double lambda = 1.0;
};

struct EditDelta {
  Matrix delta;
  EditTarget target;
  std::string task;
  double lambda = 1.0;
  std::uint64_t edit_set_hash = 0;
};

EditDelta solve_delta(const SolveInputs& in, const EditTarget& target = {});

// Copy-on-write application; deltas must address distinct targets.
Seq2SeqModel apply_edit(const Seq2SeqModel& m, const std::vector<EditDelta>& deltas);

// Inputs of the edited layer at the located positions, one column per
// edit-set sample.
Matrix collect_k1(const Seq2SeqModel& m, const EditTarget& target,
                  const EditSet& edit_set);

// Ascending multi-layer edit. Targets are optimized once at the highest
// layer; each lower layer absorbs 1/(remaining layers) of the residual
// between the target and the current top-layer output, with K1 and C0
// recomputed after every applied partial edit. A single-layer list is the
// plain pipeline.
std::vector<EditDelta> edit_multi_layer(const Seq2SeqModel& m,
                                        Component component,
                                        const std::vector<int>& layers,
                                        const EditSet& edit_set,
                                        const std::vector<std::vector<int>>& corpus,
                                        double lambda, const OptimizeOptions& opt,
                                        const Verbalizer& verb,
                                        const std::string& task = "");

// Delta files share the tensor container format; metadata records the
// targets, task, lambda and edit-set hash.
void write_deltas(const std::string& path, const std::vector<EditDelta>& deltas,
                  const nlohmann::json& extra_meta = nlohmann::json::object());
std::vector<EditDelta> read_deltas(const std::string& path);

}  // namespace tb::editing
