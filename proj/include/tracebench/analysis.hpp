// Offline analyses: SVD prompt segmentation, edit-delta similarity via
// leading singular vectors, and binary P/R/F1 reporting.
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tracebench/numkernel.hpp"

namespace tb::analysis {

using tb::num::Matrix;

struct SegmentationOptions {
  double tau = 1e-3;   // relative numerical-rank threshold
  int initial_floor = 0;  // alternative reading: clamp the starting count (e.g. 2)
};

struct SegmentationResult {
  std::vector<int> splits;  // rows where the tracked rank count increased
  std::vector<int> counts;  // tracked count per prefix, prefixes of 2..n rows

  nlohmann::json to_json() const;
};

// Grows row prefixes starting from 2 rows and records a split whenever the
// numerical rank of the prefix exceeds the count tracked so far (counts are
// monotone by construction).
SegmentationResult segment_prompt(const Matrix& effect_matrix,
                                  const SegmentationOptions& opt = {});

// Cosine between the leading left singular vectors of two matrices, under
// the fixed sign convention. Throws on an (effectively) zero matrix.
double delta_similarity(const Matrix& d1, const Matrix& d2);

struct MetricReport {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0;  // percent
  double recall = 0.0;     // percent
  double f1 = 0.0;         // percent

  nlohmann::json to_json() const;
};

// Binary classification metrics with "Yes" (true) the positive class.
MetricReport prf1(const std::vector<bool>& predictions,
                  const std::vector<bool>& golds);

// F1 (percent) from precision/recall given in percent; table arithmetic.
double f1_from_pr(double precision_pct, double recall_pct);

// 2-decimal percent rendering used in reports.
std::string format_pct(double v);

struct SimilarityPair {
  std::string name;
  Matrix d1, d2;
  bool analogous = false;
};

struct SimilarityReport {
  struct Row {
    std::string name;
    double sim = 0.0;
    bool analogous = false;
  };
  std::vector<Row> rows;
  bool separated = false;  // min analogous sim > max non-analogous sim
  double mean_gap = 0.0;   // mean analogous sim - mean non-analogous sim

  nlohmann::json to_json() const;
};

SimilarityReport compare_similarity_classes(const std::vector<SimilarityPair>& pairs);

}  // namespace tb::analysis
