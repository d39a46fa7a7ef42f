#include <doctest.h>

#include <cmath>
#include <vector>

#include "mlvtg/error.hpp"
#include "mlvtg/metrics.hpp"

using namespace mlvtg;

namespace {

EvalRecord saliency_record(std::vector<double> scores, std::vector<int> labels) {
  EvalRecord r;
  r.pred_saliency = std::move(scores);
  r.gt_saliency = std::move(labels);
  return r;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("interval IoU hand table") {
  CHECK(interval_iou({0, 10}, {5, 15}) == 1.0 / 3.0);
  CHECK(interval_iou({5, 15}, {0, 10}) == 1.0 / 3.0);
  CHECK(interval_iou({2, 7}, {2, 7}) == 1.0);
  CHECK(interval_iou({0, 1}, {2, 3}) == 0.0);
  CHECK(interval_iou({0, 1}, {1, 2}) == 0.0);
  CHECK(interval_iou({0, 10}, {2, 4}) == 0.2);
  CHECK(interval_iou({0, 4}, {2, 6}) == 1.0 / 3.0);
  CHECK(interval_iou({3, 3}, {3, 3}) == 0.0);  // zero-length degenerate
  CHECK(interval_iou({0.25, 0.75}, {0.5, 1.0}) == 0.25 / 0.75);
}

TEST_CASE("recall@1 counts only the top-confidence prediction") {
  EvalRecord hit;
  hit.predictions = {{0.0, 1.0, 0.9}};
  hit.gt_spans = {{0.0, 1.0}};
  EvalRecord miss;
  miss.predictions = {{0.0, 0.1, 0.9}};
  miss.gt_spans = {{0.5, 1.0}};
  CHECK(recall_at_1({hit, miss}, 0.7) == 0.5);

  // the best prediction wins regardless of its list position
  EvalRecord unordered;
  unordered.predictions = {{0.0, 0.1, 0.2}, {0.2, 0.8, 0.95}};
  unordered.gt_spans = {{0.2, 0.8}};
  CHECK(recall_at_1({unordered}, 0.99) == 1.0);

  // confidence ties resolve to the lower index
  EvalRecord tie;
  tie.predictions = {{0.0, 0.1, 0.5}, {0.2, 0.8, 0.5}};
  tie.gt_spans = {{0.2, 0.8}};
  CHECK(recall_at_1({tie}, 0.5) == 0.0);

  EvalRecord empty;
  empty.gt_spans = {{0.0, 1.0}};
  CHECK(recall_at_1({empty}, 0.5) == 0.0);
  CHECK(recall_at_1({}, 0.5) == 0.0);
}

TEST_CASE("recall@1 treats the threshold as inclusive") {
  EvalRecord r;
  r.predictions = {{0.0, 10.0, 1.0}};
  r.gt_spans = {{5.0, 15.0}};  // IoU exactly 1/3
  CHECK(recall_at_1({r}, 1.0 / 3.0) == 1.0);
  CHECK(recall_at_1({r}, 1.0 / 3.0 + 1e-9) == 0.0);
}

TEST_CASE("average precision reproduces the interpolated three-prediction trace") {
  EvalRecord r;
  r.predictions = {{0.0, 1.0, 0.9}, {4.0, 5.0, 0.8}, {2.0, 3.0, 0.7}};
  r.gt_spans = {{0.0, 1.0}, {2.0, 3.0}};
  // ranks: tp, fp, tp -> precision 1, 1/2, 2/3 -> interpolated 1, 2/3, 2/3
  // AP = 0.5*1 + 0.5*(2/3) = 5/6
  CHECK(std::abs(average_precision(r, 0.5) - 5.0 / 6.0) < 1e-12);
}

TEST_CASE("average precision matches each ground truth span at most once") {
  EvalRecord r;
  r.predictions = {{0.0, 1.0, 0.9}, {0.0, 1.0, 0.8}};
  r.gt_spans = {{0.0, 1.0}};
  CHECK(average_precision(r, 0.5) == 1.0);

  EvalRecord none;
  none.gt_spans = {{0.0, 1.0}};
  CHECK(average_precision(none, 0.5) == 0.0);
  EvalRecord no_gt;
  no_gt.predictions = {{0.0, 1.0, 0.9}};
  CHECK(average_precision(no_gt, 0.5) == 0.0);
}

TEST_CASE("average precision matches greedily by best IoU, not first fit") {
  EvalRecord r;
  r.predictions = {{0.0, 6.0, 0.9}, {0.0, 10.0, 0.8}};
  r.gt_spans = {{0.0, 10.0}, {0.0, 6.0}};
  // pred 1 takes gt 2 at IoU 1 (gt 1 only reaches 0.6), leaving gt 1 for pred 2
  CHECK(average_precision(r, 0.7) == 1.0);
}

TEST_CASE("mean AP averages records and the tau grid") {
  EvalRecord good;
  good.predictions = {{0.0, 1.0, 0.9}};
  good.gt_spans = {{0.0, 1.0}};
  EvalRecord bad;
  bad.predictions = {{0.0, 0.01, 0.9}};
  bad.gt_spans = {{0.5, 1.0}};
  CHECK(mean_ap_at({good, bad}, 0.5) == 0.5);
  CHECK(mean_ap_at({}, 0.5) == 0.0);

  MapReport rep = mean_ap({good, bad}, {0.5, 0.75});
  REQUIRE(rep.ap.size() == 2);
  CHECK(rep.ap[0] == 0.5);
  CHECK(rep.ap[1] == 0.5);
  CHECK(rep.avg == 0.5);

  auto grid = default_tau_grid();
  REQUIRE(grid.size() == 10);
  CHECK(grid.front() == 0.5);
  CHECK(std::abs(grid.back() - 0.95) < 1e-12);
}

TEST_CASE("mean IoU scores the top prediction against the closest span") {
  EvalRecord third;
  third.predictions = {{0.0, 10.0, 0.9}};
  third.gt_spans = {{5.0, 15.0}, {100.0, 110.0}};
  EvalRecord exact;
  exact.predictions = {{1.0, 2.0, 0.3}};
  exact.gt_spans = {{1.0, 2.0}};
  EvalRecord empty;
  empty.gt_spans = {{0.0, 1.0}};
  double want = (1.0 / 3.0 + 1.0 + 0.0) / 3.0;
  CHECK(std::abs(mean_iou({third, exact, empty}) - want) < 1e-15);
}

TEST_CASE("hit@1 checks the label under the saliency argmax") {
  EvalRecord hit = saliency_record({0.1, 0.9, 0.5}, {0, 3, 4});
  EvalRecord miss = saliency_record({0.9, 0.1, 0.5}, {2, 4, 4});
  CHECK(hit_at_1({hit}) == 1.0);
  CHECK(hit_at_1({miss}) == 0.0);
  CHECK(hit_at_1({hit, miss}) == 0.5);

  // ties resolve to the lowest index
  EvalRecord tie = saliency_record({0.9, 0.9}, {0, 4});
  CHECK(hit_at_1({tie}) == 0.0);

  // the cutoff label is adjustable
  EvalRecord mid = saliency_record({1.0, 0.0}, {3, 0});
  CHECK(hit_at_1({mid}, 3) == 1.0);
  CHECK(hit_at_1({mid}, 4) == 0.0);

  CHECK(hit_at_1({}) == 0.0);
  EvalRecord bad = saliency_record({0.1, 0.2}, {0, 0, 0});
  CHECK_THROWS_AS(hit_at_1({bad}), DimensionError);
}

TEST_CASE("truncated ranking AP over a hand-ranked saliency list") {
  // relevant clips land at ranks 2 and 4
  EvalRecord r = saliency_record({5, 4, 3, 2, 1, 0}, {0, 3, 0, 4, 0, 0});
  CHECK(top5_map({r}) == 0.5);  // (1/2 + 2/4) / 2

  EvalRecord perfect = saliency_record({9, 8, 1, 0}, {4, 3, 0, 0});
  CHECK(top5_map({perfect}) == 1.0);

  // more relevant clips than the cutoff still normalizes by the cutoff
  EvalRecord all_rel = saliency_record({6, 5, 4, 3, 2, 1}, {4, 4, 4, 4, 4, 4});
  CHECK(top5_map({all_rel}) == 1.0);

  // a relevant clip beyond rank 5 is invisible to the truncated metric
  EvalRecord deep = saliency_record({6, 5, 4, 3, 2, 1}, {0, 0, 0, 0, 0, 4});
  CHECK(top5_map({deep}) == 0.0);
  CHECK(std::abs(hd_map({deep}) - 1.0 / 6.0) < 1e-15);

  CHECK(top5_map({r, perfect}) == 0.75);
}

TEST_CASE("untruncated ranking AP agrees with the truncated one on short lists") {
  EvalRecord r = saliency_record({3, 2, 1}, {0, 4, 3});
  // hits at ranks 2,3: (1/2 + 2/3)/2
  double want = (0.5 + 2.0 / 3.0) / 2.0;
  CHECK(std::abs(hd_map({r}) - want) < 1e-15);
  CHECK(std::abs(top5_map({r}) - want) < 1e-15);
}

TEST_CASE("records without relevant clips score zero") {
  EvalRecord r = saliency_record({3, 2, 1}, {0, 1, 2});
  CHECK(top5_map({r}) == 0.0);
  CHECK(hd_map({r}) == 0.0);
  CHECK(top5_map({}) == 0.0);
  CHECK(hd_map({}) == 0.0);
}

TEST_CASE("saliency ranking rejects mismatched lengths") {
  EvalRecord bad = saliency_record({0.5}, {0, 1});
  CHECK_THROWS_AS(top5_map({bad}), DimensionError);
  CHECK_THROWS_AS(hd_map({bad}), DimensionError);
}

}  // TEST_SUITE
