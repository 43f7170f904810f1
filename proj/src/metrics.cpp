#include "grapy/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace grapy {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(int k) const {
  std::uint64_t t = 0;
  for (int j = 0; j < k_; ++j) t += (*this)(k, j);
  return t;
}

std::uint64_t ConfusionMatrix::col_sum(int k) const {
  std::uint64_t t = 0;
  for (int i = 0; i < k_; ++i) t += (*this)(i, k);
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) {
    throw std::invalid_argument("cannot add confusion matrices over " + std::to_string(k_) +
                                " and " + std::to_string(other.k_) + " classes");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw ShapeError("prediction is " + std::to_string(pred.height()) + "x" +
                     std::to_string(pred.width()) + ", ground truth " +
                     std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
  }
  pred.check_range(cm.classes());
  gt.check_range(cm.classes());
  for (Index p = 0; p < gt.pixels(); ++p) ++cm(gt[p], pred[p]);
}

std::vector<std::optional<double>> class_iou(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out(static_cast<std::size_t>(cm.classes()));
  for (int k = 0; k < cm.classes(); ++k) {
    const auto tp = cm(k, k);
    const auto uni = cm.row_sum(k) + cm.col_sum(k) - tp;
    if (uni > 0) out[static_cast<std::size_t>(k)] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return out;
}

std::vector<std::optional<double>> class_recall(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out(static_cast<std::size_t>(cm.classes()));
  for (int k = 0; k < cm.classes(); ++k) {
    const auto support = cm.row_sum(k);
    if (support > 0) {
      out[static_cast<std::size_t>(k)] = static_cast<double>(cm(k, k)) / static_cast<double>(support);
    }
  }
  return out;
}

namespace {

double mean_of(const std::vector<std::optional<double>>& values, int skip, const char* what) {
  double sum = 0;
  int n = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (static_cast<int>(k) == skip || !values[k]) continue;
    sum += *values[k];
    ++n;
  }
  if (n == 0) throw MetricsError(std::string(what) + ": no class qualifies for the mean");
  return sum / n;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double miou(const ConfusionMatrix& cm) { return mean_of(class_iou(cm), -1, "miou"); }

double mean_accuracy(const ConfusionMatrix& cm, bool include_background) {
  return mean_of(class_recall(cm), include_background ? -1 : 0, "mean_accuracy");
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  const auto t = cm.total();
  if (t == 0) throw MetricsError("pixel_accuracy: empty confusion matrix");
  std::uint64_t diag = 0;
  for (int k = 0; k < cm.classes(); ++k) diag += cm(k, k);
  return static_cast<double>(diag) / static_cast<double>(t);
}

std::string format_table(const MetricsReport& r) {
  const auto iou = class_iou(r.cm);
  const auto rec = class_recall(r.cm);
  std::size_t width = 14;
  for (const auto& n : r.class_names) width = std::max(width, n.size() + 2);
  std::ostringstream os;
  auto cell = [&](const std::optional<double>& v) { return v ? fixed(*v) : std::string("       -"); };
  auto pad = [&](const std::string& s) { return s + std::string(width - std::min(width, s.size()), ' '); };
  if (!r.title.empty()) os << r.title << "\n";
  os << pad("class") << "IoU       recall    pixels\n";
  for (int k = 0; k < r.cm.classes(); ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const std::string name = kk < r.class_names.size() ? r.class_names[kk] : std::to_string(k);
    os << pad(name) << cell(iou[kk]) << "  " << cell(rec[kk]) << "  " << r.cm.row_sum(k) << "\n";
  }
  os << pad("mIoU") << fixed(miou(r.cm)) << "\n";
  os << pad("mean_acc") << fixed(mean_accuracy(r.cm, r.include_background)) << "\n";
  os << pad("pixel_acc") << fixed(pixel_accuracy(r.cm)) << "\n";
  return os.str();
}

std::string format_key_values(const MetricsReport& r, const std::string& prefix) {
  std::ostringstream os;
  os << prefix << "miou=" << fixed(miou(r.cm)) << "\n";
  os << prefix << "mean_accuracy=" << fixed(mean_accuracy(r.cm, r.include_background)) << "\n";
  os << prefix << "pixel_accuracy=" << fixed(pixel_accuracy(r.cm)) << "\n";
  const auto iou = class_iou(r.cm);
  for (int k = 0; k < r.cm.classes(); ++k) {
    const auto kk = static_cast<std::size_t>(k);
    if (!iou[kk]) continue;
    const std::string name = kk < r.class_names.size() ? r.class_names[kk] : std::to_string(k);
    os << prefix << "iou." << name << "=" << fixed(*iou[kk]) << "\n";
  }
  return os.str();
}

}  // namespace grapy
