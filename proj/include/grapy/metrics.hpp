#ifndef GRAPY_METRICS_HPP
#define GRAPY_METRICS_HPP

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "grapy/label_map.hpp"

namespace grapy {

class MetricsError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0)
      : k_(classes), counts_(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes)) {
    if (classes < 0) throw std::invalid_argument("negative class count");
  }

  int classes() const { return k_; }
  std::uint64_t operator()(int gt, int pred) const { return counts_[index(gt, pred)]; }
  std::uint64_t& operator()(int gt, int pred) { return counts_[index(gt, pred)]; }

  std::uint64_t total() const;
  std::uint64_t row_sum(int k) const;
  std::uint64_t col_sum(int k) const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t index(int gt, int pred) const {
    if (gt < 0 || gt >= k_ || pred < 0 || pred >= k_) {
      throw std::out_of_range("confusion matrix index (" + std::to_string(gt) + "," +
                              std::to_string(pred) + ") outside " + std::to_string(k_) + " classes");
    }
    return static_cast<std::size_t>(gt) * static_cast<std::size_t>(k_) + static_cast<std::size_t>(pred);
  }

  int k_;
  std::vector<std::uint64_t> counts_;
};

// cm[gt(i,j)][pred(i,j)] += 1 over all pixels.
void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt);

// Per-class IoU; classes absent from both prediction and ground truth get no value.
std::vector<std::optional<double>> class_iou(const ConfusionMatrix& cm);
// Per-class recall; classes without ground-truth pixels get no value.
std::vector<std::optional<double>> class_recall(const ConfusionMatrix& cm);

double miou(const ConfusionMatrix& cm);
// Mean per-class recall over classes with ground-truth pixels. With
// `include_background` false, class 0 is left out.
double mean_accuracy(const ConfusionMatrix& cm, bool include_background = true);
double pixel_accuracy(const ConfusionMatrix& cm);

struct MetricsReport {
  std::string title;
  std::vector<std::string> class_names;
  ConfusionMatrix cm;
  bool include_background = true;
};

// Human-readable table: one row per class plus summary rows.
std::string format_table(const MetricsReport& report);
// Machine-readable key=value lines, keys prefixed with `prefix`.
std::string format_key_values(const MetricsReport& report, const std::string& prefix);

}  // namespace grapy

#endif  // GRAPY_METRICS_HPP
