#ifndef GRAPY_TESTS_ORACLES_HPP
#define GRAPY_TESTS_ORACLES_HPP

// Plain-loop reimplementations of the pyramid, no tape and no Eigen.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "grapy/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

// f[i][j][c] flattened as pixel-major rows: Mat with H*W rows and C columns.
inline Mat rows_of(const grapy::Tensor<double>& t) {
  const auto cols = t.shape().back();
  const auto n = t.size() / cols;
  Mat m(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(cols)));
  for (grapy::Index r = 0; r < n; ++r)
    for (grapy::Index c = 0; c < cols; ++c) m[r][c] = t[r * cols + c];
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b.empty() ? 0 : b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Mat transpose(const Mat& a) {
  Mat out(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  std::vector<double> e(x.size());
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (e[i] = std::exp(x[i] - m));
  for (double& v : e) v /= s;
  return e;
}

// Eq. 2 and 3: per-category mean then max, concatenated; empty category -> zeros.
inline Mat aggregate(const Mat& f, const std::vector<int>& assign, int k, bool ave, bool mx) {
  const std::size_t c = f[0].size();
  Mat out(static_cast<std::size_t>(k));
  for (int cat = 0; cat < k; ++cat) {
    std::vector<double> mean(c, 0.0), maxv(c, -std::numeric_limits<double>::infinity());
    int n = 0;
    for (std::size_t p = 0; p < f.size(); ++p) {
      if (assign[p] != cat) continue;
      ++n;
      for (std::size_t ch = 0; ch < c; ++ch) {
        mean[ch] += f[p][ch];
        maxv[ch] = std::max(maxv[ch], f[p][ch]);
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = n ? mean[ch] / n : 0.0;
      if (!n) maxv[ch] = 0.0;
    }
    if (ave) out[cat].insert(out[cat].end(), mean.begin(), mean.end());
    if (mx) out[cat].insert(out[cat].end(), maxv.begin(), maxv.end());
  }
  return out;
}

// Eq. 4 to 6, `iterations` times with the same projections.
inline Mat reason(Mat v, const Mat& q1, const Mat& q2, int iterations) {
  for (int t = 0; t < iterations; ++t) {
    const Mat s = matmul(matmul(v, q1), transpose(matmul(v, q2)));
    Mat a(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) a[i] = softmax(s[i]);
    const Mat att = matmul(a, v);
    for (std::size_t i = 0; i < v.size(); ++i)
      for (std::size_t j = 0; j < v[i].size(); ++j) v[i][j] += att[i][j];
  }
  return v;
}

// Eq. 7 with the node projection: f_l(p) = f(p) + sum_k [p in k] (v out_proj)(k).
inline Mat distribute(const Mat& f, const Mat& v, const Mat& out_proj, const std::vector<int>& assign) {
  const Mat w = matmul(v, out_proj);
  Mat out = f;
  for (std::size_t p = 0; p < f.size(); ++p)
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (assign[p] != static_cast<int>(k)) continue;
      for (std::size_t c = 0; c < f[p].size(); ++c) out[p][c] += w[k][c];
    }
  return out;
}

inline int argmax(const std::vector<double>& x) {
  int best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

struct PyramidResult {
  Mat f_hat;  // H*W rows, 4C columns
  Mat y_hat;
  std::vector<Mat> nodes;    // aggregated, per enabled level
  std::vector<Mat> refined;
};

// Full Eq. 2-9 with both poolings and shared projections. `fine_to_level[l-1][k3]`
// gives the category at level l of fine label k3.
inline PyramidResult pyramid(const Mat& f, const Mat& y, const std::vector<std::vector<int>>& fine_to_level,
                             const std::vector<int>& classes, const std::map<std::string, Mat>& p,
                             int iterations = 3) {
  std::vector<int> fine(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) fine[i] = argmax(y[i]);
  PyramidResult r;
  std::vector<Mat> feats{f};
  for (int l = 1; l <= 3; ++l) {
    std::vector<int> assign(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) assign[i] = fine_to_level[l - 1][fine[i]];
    const std::string pre = "gpm.level" + std::to_string(l) + ".";
    const Mat v = aggregate(feats.back(), assign, classes[l - 1], true, true);
    const Mat g = reason(v, p.at(pre + "q1"), p.at(pre + "q2"), iterations);
    feats.push_back(distribute(feats.back(), g, p.at(pre + "out_proj"), assign));
    r.nodes.push_back(v);
    r.refined.push_back(g);
  }
  r.f_hat.resize(f.size());
  for (std::size_t i = 0; i < f.size(); ++i)
    for (const auto& fl : feats) r.f_hat[i].insert(r.f_hat[i].end(), fl[i].begin(), fl[i].end());
  const Mat logits = matmul(r.f_hat, p.at("gpm.head"));
  for (const auto& row : logits) r.y_hat.push_back(softmax(row));
  return r;
}

inline double max_abs_diff(const Mat& a, const grapy::Tensor<double>& b) {
  const Mat bm = rows_of(b);
  double d = 0;
  if (a.size() != bm.size()) return std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != bm[i].size()) return std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < a[i].size(); ++j) d = std::max(d, std::abs(a[i][j] - bm[i][j]));
  }
  return d;
}

}  // namespace oracle

#endif  // GRAPY_TESTS_ORACLES_HPP
