#pragma once

// Segmentation scores on pixel label maps.

#include "priorseg/imaging.hpp"

#include <cstdint>
#include <map>
#include <utility>

namespace priorseg::metrics {

/// Joint label counts of two maps of equal shape.
struct ContingencyTable {
  std::map<std::pair<int, int>, std::int64_t> joint;  ///< (a label, b label) -> count
  std::map<int, std::int64_t> a_counts;
  std::map<int, std::int64_t> b_counts;
  std::int64_t total = 0;

  /// Pixels where b equals skip_b_label are left out (pass a value that never
  /// occurs, e.g. INT32_MIN, to count every pixel).
  static ContingencyTable build(const imaging::LabelMap& a, const imaging::LabelMap& b,
                                int skip_b_label);
};

struct VariationOfInformation {
  double merge = 0.0;  ///< H(gt | pred), nats
  double split = 0.0;  ///< H(pred | gt), nats
  double total() const { return merge + split; }
};

/// With ignore_background, pixels whose ground truth is 0 are excluded.
VariationOfInformation variation_of_information(const imaging::LabelMap& pred, const imaging::LabelMap& gt,
                                                bool ignore_background = false);

/// Label 0 is background in both maps and takes no part in the matching. Zero
/// when either map has no foreground instance.
double symmetric_best_dice(const imaging::LabelMap& pred, const imaging::LabelMap& gt);

/// Fraction of ground-truth instances (labels > 0) overlapped by some
/// predicted segment with IoU >= threshold.
double recovered_fraction(const imaging::LabelMap& pred, const imaging::LabelMap& gt,
                          double iou_threshold = 0.5);

/// Turns a partition labelling into an instance map: the largest segment
/// (ties: lowest id) becomes 0 and the rest 1..K-1 in id order.
imaging::LabelMap to_instance_map(const imaging::LabelMap& segmentation);

/// Ground truth projected onto superpixels by majority vote.
imaging::LabelMap project_to_superpixels(const imaging::LabelMap& superpixels, const imaging::LabelMap& gt);

/// Number of metric evaluations in this process so far. Training code must
/// never move it.
std::int64_t invocation_count();

}  // namespace priorseg::metrics
