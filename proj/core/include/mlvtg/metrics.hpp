#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mlvtg/heads.hpp"

namespace mlvtg {

struct Span {
  double st = 0;
  double ed = 0;
};

// One query's predictions and ground truth. Spans may be in seconds or
// normalized units as long as predictions and ground truth agree.
struct EvalRecord {
  std::string query_id;
  std::vector<ScoredSpan> predictions;  // ranked by confidence, ties by index
  std::vector<Span> gt_spans;
  std::vector<int> gt_saliency;      // 0-4 per clip
  std::vector<double> pred_saliency;  // same length as gt_saliency
};

double interval_iou(const Span& a, const Span& b);

// Fraction of records whose top-scored prediction reaches IoU >= tau with
// any ground-truth span. Records without predictions count as misses.
double recall_at_1(const std::vector<EvalRecord>& records, double tau);

// Greedy one-to-one matching of ranked predictions to ground-truth spans at
// IoU >= tau (each prediction takes the best still-unmatched span), then the
// area under the interpolated precision-recall curve.
double average_precision(const EvalRecord& record, double tau);

double mean_ap_at(const std::vector<EvalRecord>& records, double tau);

struct MapReport {
  std::vector<double> taus;
  std::vector<double> ap;  // parallel to taus
  double avg = 0;
};

MapReport mean_ap(const std::vector<EvalRecord>& records, const std::vector<double>& taus);

std::vector<double> default_tau_grid();  // 0.50, 0.55, ..., 0.95

// Mean over records of the top-1 prediction's best IoU against ground truth.
double mean_iou(const std::vector<EvalRecord>& records);

// Fraction of records where the clip with the highest predicted saliency has
// a ground-truth label >= very_good. Score ties resolve to the lowest index.
double hit_at_1(const std::vector<EvalRecord>& records, int very_good = 3);

// Average precision of the predicted-saliency ranking against binary
// relevance (label >= very_good), truncated at rank 5, averaged over records.
double top5_map(const std::vector<EvalRecord>& records, int very_good = 3);

// Same ranking AP without truncation. Records with no relevant clip score 0.
double hd_map(const std::vector<EvalRecord>& records, int very_good = 3);

}  // namespace mlvtg
