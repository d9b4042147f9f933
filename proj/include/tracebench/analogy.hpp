// Parallelogram transfer between tasks: given locating/editing results for
// tasks A, B and C, derive task D's layers as L_C - (L_A - L_B) and its edit
// delta as dW_C - alpha (dW_A - dW_B).
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tracebench/editing.hpp"

namespace tb::analogy {

using tb::editing::EditDelta;
using tb::num::Matrix;

struct AnalogizedLocation {
  std::vector<int> layers;
  bool clamped = false;  // any entry fell outside [0, layer_count) and was clamped
};

AnalogizedLocation analogize_location(const std::vector<int>& loc_a,
                                      const std::vector<int>& loc_b,
                                      const std::vector<int>& loc_c,
                                      int layer_count);

EditDelta analogize_delta(const EditDelta& da, const EditDelta& db,
                          const EditDelta& dc, double alpha = 1.0);

// Quad file: tasks A, B, C, D with per-task layer lists and delta file paths.
struct AnalogyQuad {
  struct Entry {
    std::string task;
    std::vector<int> layers;
    std::string delta_path;  // optional; empty when only locations transfer
  };
  Entry a, b, c;
  std::string task_d;
  double alpha = 1.0;

  nlohmann::json to_json() const;
  static AnalogyQuad from_json(const nlohmann::json& j);
};

}  // namespace tb::analogy
