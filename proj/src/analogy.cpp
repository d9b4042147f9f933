#include "tracebench/analogy.hpp"

#include <algorithm>
#include <stdexcept>

namespace tb::analogy {

AnalogizedLocation analogize_location(const std::vector<int>& loc_a,
                                      const std::vector<int>& loc_b,
                                      const std::vector<int>& loc_c,
                                      int layer_count) {
  if (loc_a.size() != loc_b.size() || loc_a.size() != loc_c.size()) {
    throw std::invalid_argument("location lists must have equal length");
  }
  if (layer_count < 1) throw std::invalid_argument("layer_count must be >= 1");
  auto check = [&](const std::vector<int>& v) {
    for (const int l : v) {
      if (l < 0 || l >= layer_count) throw std::invalid_argument("layer out of range");
    }
  };
  check(loc_a);
  check(loc_b);
  check(loc_c);
  AnalogizedLocation out;
  for (std::size_t i = 0; i < loc_a.size(); ++i) {
    const int raw = loc_c[i] - (loc_a[i] - loc_b[i]);
    const int clamped = std::clamp(raw, 0, layer_count - 1);
    if (clamped != raw) out.clamped = true;
    out.layers.push_back(clamped);
  }
  return out;
}

EditDelta analogize_delta(const EditDelta& da, const EditDelta& db,
                          const EditDelta& dc, double alpha) {
  auto same_shape = [&](const Matrix& x, const Matrix& y) {
    return x.rows() == y.rows() && x.cols() == y.cols();
  };
  if (!same_shape(da.delta, db.delta) || !same_shape(da.delta, dc.delta)) {
    throw std::invalid_argument("delta shapes must match");
  }
  EditDelta out = dc;
  out.delta = dc.delta - alpha * (da.delta - db.delta);
  out.task = "analog(" + dc.task + " - " + std::to_string(alpha) + "*(" +
             da.task + " - " + db.task + "))";
  tb::num::require_finite(out.delta, "analogized delta");
  return out;
}

nlohmann::json AnalogyQuad::to_json() const {
  auto entry = [](const Entry& e) {
    return nlohmann::json{
        {"task", e.task}, {"layers", e.layers}, {"delta", e.delta_path}};
  };
  return {{"A", entry(a)}, {"B", entry(b)}, {"C", entry(c)},
          {"D", task_d},   {"alpha", alpha}};
}

AnalogyQuad AnalogyQuad::from_json(const nlohmann::json& j) {
  auto entry = [](const nlohmann::json& e) {
    Entry out;
    out.task = e.at("task").get<std::string>();
    out.layers = e.at("layers").get<std::vector<int>>();
    if (e.contains("delta")) out.delta_path = e.at("delta").get<std::string>();
    return out;
  };
  AnalogyQuad q;
  q.a = entry(j.at("A"));
  q.b = entry(j.at("B"));
  q.c = entry(j.at("C"));
  q.task_d = j.at("D").get<std::string>();
  q.alpha = j.value("alpha", 1.0);
  return q;
}

}  // namespace tb::analogy
