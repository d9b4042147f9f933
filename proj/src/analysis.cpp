#include "tracebench/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace tb::analysis {

SegmentationResult segment_prompt(const Matrix& effect_matrix,
                                  const SegmentationOptions& opt) {
  if (effect_matrix.rows() < 2) {
    throw std::invalid_argument("segmentation needs at least 2 token rows");
  }
  tb::num::require_finite(effect_matrix, "effect matrix");
  SegmentationResult out;
  int tracked = 0;
  for (int end = 2; end <= effect_matrix.rows(); ++end) {
    const Matrix prefix = effect_matrix.topRows(end);
    const int raw = tb::num::numerical_rank(tb::num::svd(prefix).s, opt.tau);
    if (end == 2) {
      tracked = std::max(raw, opt.initial_floor);
    } else if (raw > tracked) {
      out.splits.push_back(end - 1);  // the row whose arrival raised the count
      tracked = raw;
    }
    out.counts.push_back(tracked);
  }
  return out;
}

nlohmann::json SegmentationResult::to_json() const {
  return {{"splits", splits}, {"counts", counts}};
}

double delta_similarity(const Matrix& d1, const Matrix& d2) {
  tb::num::require_finite(d1, "delta 1");
  tb::num::require_finite(d2, "delta 2");
  auto leading = [](const Matrix& d, const char* what) {
    const tb::num::SvdResult s = tb::num::svd(d);
    if (s.s.size() == 0 || s.s(0) <= 0) {
      throw std::invalid_argument(std::string(what) + " has no principal direction");
    }
    return tb::num::Vector(s.u.col(0));
  };
  if (d1.rows() != d2.rows()) {
    throw std::invalid_argument("deltas live in different output spaces");
  }
  return leading(d1, "delta 1").dot(leading(d2, "delta 2"));
}

MetricReport prf1(const std::vector<bool>& predictions,
                  const std::vector<bool>& golds) {
  if (predictions.size() != golds.size()) {
    throw std::invalid_argument("predictions/golds length mismatch");
  }
  MetricReport r;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] && golds[i]) ++r.tp;
    else if (predictions[i] && !golds[i]) ++r.fp;
    else if (!predictions[i] && golds[i]) ++r.fn;
    else ++r.tn;
  }
  r.precision = r.tp + r.fp > 0 ? 100.0 * r.tp / (r.tp + r.fp) : 0.0;
  r.recall = r.tp + r.fn > 0 ? 100.0 * r.tp / (r.tp + r.fn) : 0.0;
  r.f1 = f1_from_pr(r.precision, r.recall);
  return r;
}

double f1_from_pr(double precision_pct, double recall_pct) {
  const double s = precision_pct + recall_pct;
  return s > 0 ? 2.0 * precision_pct * recall_pct / s : 0.0;
}

std::string format_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

nlohmann::json MetricReport::to_json() const {
  return {{"tp", tp},
          {"fp", fp},
          {"fn", fn},
          {"tn", tn},
          {"precision", format_pct(precision)},
          {"recall", format_pct(recall)},
          {"f1", format_pct(f1)}};
}

SimilarityReport compare_similarity_classes(const std::vector<SimilarityPair>& pairs) {
  SimilarityReport rep;
  double min_an = std::numeric_limits<double>::infinity();
  double max_non = -std::numeric_limits<double>::infinity();
  double sum_an = 0, sum_non = 0;
  int n_an = 0, n_non = 0;
  for (const auto& p : pairs) {
    const double sim = delta_similarity(p.d1, p.d2);
    rep.rows.push_back({p.name, sim, p.analogous});
    if (p.analogous) {
      min_an = std::min(min_an, sim);
      sum_an += sim;
      ++n_an;
    } else {
      max_non = std::max(max_non, sim);
      sum_non += sim;
      ++n_non;
    }
  }
  if (n_an == 0 || n_non == 0) {
    throw std::invalid_argument("need at least one pair of each class");
  }
  rep.separated = min_an > max_non;
  rep.mean_gap = sum_an / n_an - sum_non / n_non;
  return rep;
}

nlohmann::json SimilarityReport::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"pair", r.name},
                      {"sim", r.sim},
                      {"class", r.analogous ? "analogous" : "non-analogous"}});
  }
  return {{"rows", rows_j}, {"separated", separated}, {"mean_gap", mean_gap}};
}

}  // namespace tb::analysis
