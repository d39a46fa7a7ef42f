#include "mlvtg/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "mlvtg/error.hpp"

namespace mlvtg {

namespace {

std::vector<std::size_t> rank_desc(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::vector<std::size_t> rank_predictions(const std::vector<ScoredSpan>& preds) {
  std::vector<double> conf(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) conf[i] = preds[i].confidence;
  return rank_desc(conf);
}

// Truncated ranking AP: sum of precision at each relevant rank <= cutoff,
// divided by min(R, cutoff).
double ranking_ap(const std::vector<double>& scores, const std::vector<int>& labels,
                  int very_good, std::size_t cutoff) {
  if (scores.size() != labels.size())
    throw DimensionError("saliency score/label length mismatch");
  std::size_t relevant = 0;
  for (int l : labels)
    if (l >= very_good) ++relevant;
  if (relevant == 0) return 0.0;
  std::vector<std::size_t> order = rank_desc(scores);
  std::size_t depth = std::min(cutoff, order.size());
  std::size_t hits = 0;
  double ap = 0;
  for (std::size_t k = 0; k < depth; ++k) {
    if (labels[order[k]] >= very_good) {
      ++hits;
      ap += double(hits) / double(k + 1);
    }
  }
  return ap / double(std::min<std::size_t>(relevant, cutoff));
}

}  // namespace

double interval_iou(const Span& a, const Span& b) {
  double inter = std::max(0.0, std::min(a.ed, b.ed) - std::max(a.st, b.st));
  double uni = (a.ed - a.st) + (b.ed - b.st) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double recall_at_1(const std::vector<EvalRecord>& records, double tau) {
  if (records.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& r : records) {
    if (r.predictions.empty()) continue;
    std::size_t top = rank_predictions(r.predictions)[0];
    Span p{r.predictions[top].st, r.predictions[top].ed};
    for (const auto& g : r.gt_spans) {
      if (interval_iou(p, g) >= tau) {
        ++hits;
        break;
      }
    }
  }
  return double(hits) / double(records.size());
}

double average_precision(const EvalRecord& record, double tau) {
  std::size_t n_gt = record.gt_spans.size();
  if (n_gt == 0) return 0.0;
  std::vector<std::size_t> order = rank_predictions(record.predictions);
  std::vector<char> used(n_gt, 0);
  std::vector<char> tp(order.size(), 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& p = record.predictions[order[k]];
    double best = 0;
    std::size_t best_j = n_gt;
    for (std::size_t j = 0; j < n_gt; ++j) {
      if (used[j]) continue;
      double v = interval_iou({p.st, p.ed}, record.gt_spans[j]);
      if (v > best) {
        best = v;
        best_j = j;
      }
    }
    if (best_j < n_gt && best >= tau) {
      used[best_j] = 1;
      tp[k] = 1;
    }
  }
  std::size_t n = order.size();
  std::vector<double> precision(n), recall(n);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (tp[k]) ++hits;
    precision[k] = double(hits) / double(k + 1);
    recall[k] = double(hits) / double(n_gt);
  }
  for (std::size_t k = n; k-- > 1;) {
    precision[k - 1] = std::max(precision[k - 1], precision[k]);
  }
  double ap = 0, prev = 0;
  for (std::size_t k = 0; k < n; ++k) {
    ap += (recall[k] - prev) * precision[k];
    prev = recall[k];
  }
  return ap;
}

double mean_ap_at(const std::vector<EvalRecord>& records, double tau) {
  if (records.empty()) return 0.0;
  double s = 0;
  for (const auto& r : records) s += average_precision(r, tau);
  return s / double(records.size());
}

MapReport mean_ap(const std::vector<EvalRecord>& records, const std::vector<double>& taus) {
  MapReport rep;
  rep.taus = taus;
  rep.ap.reserve(taus.size());
  double s = 0;
  for (double t : taus) {
    double v = mean_ap_at(records, t);
    rep.ap.push_back(v);
    s += v;
  }
  rep.avg = taus.empty() ? 0.0 : s / double(taus.size());
  return rep;
}

std::vector<double> default_tau_grid() {
  std::vector<double> g;
  for (int i = 0; i < 10; ++i) g.push_back(0.5 + 0.05 * i);
  return g;
}

double mean_iou(const std::vector<EvalRecord>& records) {
  if (records.empty()) return 0.0;
  double s = 0;
  for (const auto& r : records) {
    if (r.predictions.empty() || r.gt_spans.empty()) continue;
    std::size_t top = rank_predictions(r.predictions)[0];
    Span p{r.predictions[top].st, r.predictions[top].ed};
    double best = 0;
    for (const auto& g : r.gt_spans) best = std::max(best, interval_iou(p, g));
    s += best;
  }
  return s / double(records.size());
}

double hit_at_1(const std::vector<EvalRecord>& records, int very_good) {
  if (records.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& r : records) {
    if (r.pred_saliency.empty()) continue;
    if (r.pred_saliency.size() != r.gt_saliency.size())
      throw DimensionError("saliency score/label length mismatch");
    std::size_t top = rank_desc(r.pred_saliency)[0];
    if (r.gt_saliency[top] >= very_good) ++hits;
  }
  return double(hits) / double(records.size());
}

double top5_map(const std::vector<EvalRecord>& records, int very_good) {
  if (records.empty()) return 0.0;
  double s = 0;
  for (const auto& r : records) s += ranking_ap(r.pred_saliency, r.gt_saliency, very_good, 5);
  return s / double(records.size());
}

double hd_map(const std::vector<EvalRecord>& records, int very_good) {
  if (records.empty()) return 0.0;
  double s = 0;
  for (const auto& r : records) {
    s += ranking_ap(r.pred_saliency, r.gt_saliency, very_good, r.pred_saliency.size());
  }
  return s / double(records.size());
}

}  // namespace mlvtg
