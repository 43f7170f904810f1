#ifndef GRAPY_OPS_HPP
#define GRAPY_OPS_HPP

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "grapy/autodiff.hpp"
#include "grapy/label_map.hpp"
#include "grapy/tensor.hpp"

namespace grapy {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  auto fail = [&] {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                     " are not broadcastable");
  };
  if (a.size() != b.size()) fail();
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      fail();
    }
  }
  return out;
}

// Strides of `inner` when indexed by coordinates of `outer`; zero on broadcast axes.
inline std::vector<Index> embedded_strides(const Shape& inner, const Shape& outer) {
  std::vector<Index> strides(inner.size());
  Index acc = 1;
  for (std::size_t ax = inner.size(); ax-- > 0;) {
    strides[ax] = (inner[ax] == 1 && outer[ax] != 1) ? 0 : acc;
    acc *= inner[ax];
  }
  return strides;
}

template <typename Fn>
void for_each_offset(const Shape& outer, const std::vector<Index>& strides, Fn&& fn) {
  const Index n = shape_size(outer);
  const std::size_t rank = outer.size();
  std::vector<Index> idx(rank, 0);
  Index off = 0;
  for (Index lin = 0; lin < n; ++lin) {
    fn(lin, off);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      off += strides[ax];
      if (idx[ax] < outer[ax]) break;
      off -= strides[ax] * outer[ax];
      idx[ax] = 0;
    }
  }
}

template <typename Scalar>
Tensor<Scalar> broadcast_to(const Tensor<Scalar>& t, const Shape& out) {
  if (t.shape() == out) return t;
  Tensor<Scalar> r(out);
  for_each_offset(out, embedded_strides(t.shape(), out),
                  [&](Index lin, Index off) { r[lin] = t[off]; });
  return r;
}

// Sums `g` over the axes along which `target` was broadcast.
template <typename Scalar>
Tensor<Scalar> reduce_to(const Tensor<Scalar>& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor<Scalar> r(target);
  for_each_offset(g.shape(), embedded_strides(target, g.shape()),
                  [&](Index lin, Index off) { r[off] += g[lin]; });
  return r;
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(s));
  }
}

inline void check_labels(std::span<const int> labels, Index rows, Index classes, const char* op) {
  if (static_cast<Index>(labels.size()) != rows) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (int l : labels) {
    if (l < 0 || l >= classes) {
      throw std::out_of_range(std::string(op) + ": label " + std::to_string(l) + " outside [0," +
                              std::to_string(classes) + ")");
    }
  }
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  const Shape as = a.shape(), bs = b.shape();
  const Shape out = detail::broadcast_shape(as, bs, "add");
  Tensor<Scalar> v(out, detail::broadcast_to(a.value(), out).array() +
                            detail::broadcast_to(b.value(), out).array());
  return a.tape().record(
      std::move(v), {a, b},
      [a, b, as, bs](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
        t.accumulate(a, detail::reduce_to(g, as));
        t.accumulate(b, detail::reduce_to(g, bs));
      },
      "add");
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  const Shape as = a.shape(), bs = b.shape();
  const Shape out = detail::broadcast_shape(as, bs, "sub");
  Tensor<Scalar> v(out, detail::broadcast_to(a.value(), out).array() -
                            detail::broadcast_to(b.value(), out).array());
  return a.tape().record(
      std::move(v), {a, b},
      [a, b, as, bs](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
        t.accumulate(a, detail::reduce_to(g, as));
        Tensor<Scalar> gb = detail::reduce_to(g, bs);
        gb.array() = -gb.array();
        t.accumulate(b, gb);
      },
      "sub");
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  const Shape as = a.shape(), bs = b.shape();
  const Shape out = detail::broadcast_shape(as, bs, "mul");
  Tensor<Scalar> v(out, detail::broadcast_to(a.value(), out).array() *
                            detail::broadcast_to(b.value(), out).array());
  return a.tape().record(
      std::move(v), {a, b},
      [a, b, as, bs, out](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
        const Tensor<Scalar> ab = detail::broadcast_to(a.value(), out);
        const Tensor<Scalar> bb = detail::broadcast_to(b.value(), out);
        t.accumulate(a, detail::reduce_to(Tensor<Scalar>(out, g.array() * bb.array()), as));
        t.accumulate(b, detail::reduce_to(Tensor<Scalar>(out, g.array() * ab.array()), bs));
      },
      "mul");
}

template <typename Scalar>
Var<Scalar> div(Var<Scalar> a, Var<Scalar> b) {
  const Shape as = a.shape(), bs = b.shape();
  const Shape out = detail::broadcast_shape(as, bs, "div");
  Tensor<Scalar> v(out, detail::broadcast_to(a.value(), out).array() /
                            detail::broadcast_to(b.value(), out).array());
  return a.tape().record(
      std::move(v), {a, b},
      [a, b, as, bs, out](Tape<Scalar>& t, const Tensor<Scalar>& y, const Tensor<Scalar>& g) {
        const Tensor<Scalar> bb = detail::broadcast_to(b.value(), out);
        t.accumulate(a, detail::reduce_to(Tensor<Scalar>(out, g.array() / bb.array()), as));
        t.accumulate(
            b, detail::reduce_to(Tensor<Scalar>(out, -g.array() * y.array() / bb.array()), bs));
      },
      "div");
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator/(Var<Scalar> a, Var<Scalar> b) { return div(a, b); }

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  Tensor<Scalar> v(a.shape(), a.value().array() * s);
  return a.tape().record(
      std::move(v), {a},
      [a, s](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
        t.accumulate(a, Tensor<Scalar>(g.shape(), g.array() * s));
      },
      "scale");
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  Tensor<Scalar> v(a.shape(), a.value().array().max(Scalar(0)));
  return a.tape().record(
      std::move(v), {a},
      [a](Tape<Scalar>& t, const Tensor<Scalar>& y, const Tensor<Scalar>& g) {
        t.accumulate(a, Tensor<Scalar>(g.shape(), (y.array() > Scalar(0)).select(g.array(), 0)));
      },
      "relu");
}

template <typename Scalar>
Var<Scalar> log(Var<Scalar> a) {
  Tensor<Scalar> v(a.shape(), a.value().array().log());
  return a.tape().record(
      std::move(v), {a},
      [a](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
        t.accumulate(a, Tensor<Scalar>(g.shape(), g.array() / a.value().array()));
      },
      "log");
}

// ---- shape -----------------------------------------------------------------

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> a, Shape shape) {
  const Shape original = a.shape();
  return a.tape().record(
      a.value().reshaped(std::move(shape)), {a},
      [a, original](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
        t.accumulate(a, g.reshaped(original));
      },
      "reshape");
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  detail::require_rank(a.shape(), 2, "transpose");
  Tensor<Scalar> v({a.shape()[1], a.shape()[0]});
  v.matrix() = a.value().matrix().transpose();
  return a.tape().record(
      std::move(v), {a},
      [a](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
        Tensor<Scalar> ga(a.shape());
        ga.matrix() = g.matrix().transpose();
        t.accumulate(a, ga);
      },
      "transpose");
}

// Joins along `axis`; every other extent must agree.
template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const auto rank = static_cast<Index>(first.size());
  if (axis < 0 || axis >= rank) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  if (parts.size() == 1) return parts.front();
  Shape out = first;
  out[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    for (Index ax = 0; ax < rank; ++ax) {
      if (ax != axis && (static_cast<Index>(s.size()) != rank || s[ax] != first[ax])) {
        throw ShapeError("concat: incompatible shapes " + shape_string(first) + " and " +
                         shape_string(s) + " along axis " + std::to_string(axis));
      }
    }
    out[axis] += s[axis];
  }
  Index outer = 1, inner = 1;
  for (Index ax = 0; ax < axis; ++ax) outer *= first[ax];
  for (Index ax = axis + 1; ax < rank; ++ax) inner *= first[ax];
  const Index out_block = out[axis] * inner;

  Tensor<Scalar> v(out);
  Index offset = 0;
  for (const auto& p : parts) {
    const Index block = p.shape()[axis] * inner;
    for (Index o = 0; o < outer; ++o) {
      v.array().segment(o * out_block + offset, block) = p.value().array().segment(o * block, block);
    }
    offset += block;
  }
  return parts.front().tape().record(
      std::move(v), parts,
      [parts, axis, outer, inner, out_block](Tape<Scalar>& t, const Tensor<Scalar>&,
                                             const Tensor<Scalar>& g) {
        Index offset = 0;
        for (const auto& p : parts) {
          const Index block = p.shape()[axis] * inner;
          if (p.requires_grad()) {
            Tensor<Scalar> gp(p.shape());
            for (Index o = 0; o < outer; ++o) {
              gp.array().segment(o * block, block) = g.array().segment(o * out_block + offset, block);
            }
            t.accumulate(p, gp);
          }
          offset += block;
        }
      },
      "concat");
}

// ---- reductions ------------------------------------------------------------

// Sums over `axes`, keeping them as size-1 extents.
template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a, const std::vector<Index>& axes) {
  const Shape in = a.shape();
  Shape out = in;
  for (Index ax : axes) {
    if (ax < 0 || ax >= static_cast<Index>(in.size())) {
      throw ShapeError("sum: axis " + std::to_string(ax) + " out of range for " + shape_string(in));
    }
    out[static_cast<std::size_t>(ax)] = 1;
  }
  return a.tape().record(
      detail::reduce_to(a.value(), out), {a},
      [a, in](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
        t.accumulate(a, detail::broadcast_to(g, in));
      },
      "sum");
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> a, const std::vector<Index>& axes) {
  Index count = 1;
  for (Index ax : axes) count *= a.shape().at(static_cast<std::size_t>(ax));
  return scale(sum(a, axes), Scalar(1) / static_cast<Scalar>(count));
}

template <typename Scalar>
Var<Scalar> sum_all(Var<Scalar> a) {
  return a.tape().record(
      Tensor<Scalar>::scalar(a.value().array().sum()), {a},
      [a](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
        t.accumulate(a, Tensor<Scalar>::full(a.shape(), g.item()));
      },
      "sum_all");
}

template <typename Scalar>
Var<Scalar> mean_all(Var<Scalar> a) {
  return scale(sum_all(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

// ---- linear algebra --------------------------------------------------------

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  if (a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor<Scalar> v({a.shape()[0], b.shape()[1]});
  v.matrix().noalias() = a.value().matrix() * b.value().matrix();
  return a.tape().record(
      std::move(v), {a, b},
      [a, b](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
        if (a.requires_grad()) {
          Tensor<Scalar> ga(a.shape());
          ga.matrix().noalias() = g.matrix() * b.value().matrix().transpose();
          t.accumulate(a, ga);
        }
        if (b.requires_grad()) {
          Tensor<Scalar> gb(b.shape());
          gb.matrix().noalias() = a.value().matrix().transpose() * g.matrix();
          t.accumulate(b, gb);
        }
      },
      "matmul");
}

template <typename Scalar>
Tensor<Scalar> softmax_rows_value(const Tensor<Scalar>& x) {
  detail::require_rank(x.shape(), 2, "softmax_rows");
  Tensor<Scalar> y(x.shape());
  auto in = x.matrix();
  auto out = y.matrix();
  for (Index r = 0; r < in.rows(); ++r) {
    out.row(r) = (in.row(r).array() - in.row(r).maxCoeff()).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return y;
}

template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> a) {
  return a.tape().record(
      softmax_rows_value(a.value()), {a},
      [a](Tape<Scalar>& t, const Tensor<Scalar>& y, const Tensor<Scalar>& g) {
        Tensor<Scalar> ga(a.shape());
        auto ym = y.matrix();
        auto gm = g.matrix();
        auto out = ga.matrix();
        for (Index r = 0; r < ym.rows(); ++r) {
          const Scalar dot = ym.row(r).dot(gm.row(r));
          out.row(r) = (ym.row(r).array() * (gm.row(r).array() - dot)).matrix();
        }
        t.accumulate(a, ga);
      },
      "softmax_rows");
}

// ---- convolution -----------------------------------------------------------

namespace detail {

struct ConvGeometry {
  Index height, width, in_channels, kernel_h, kernel_w, out_channels, stride, pad, out_h, out_w;
  Index patch() const { return kernel_h * kernel_w * in_channels; }
};

template <typename Scalar>
RowMatrix<Scalar> im2col(const Tensor<Scalar>& input, const ConvGeometry& c) {
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(c.out_h * c.out_w, c.patch());
  for (Index oy = 0; oy < c.out_h; ++oy) {
    for (Index ox = 0; ox < c.out_w; ++ox) {
      Scalar* row = cols.row(oy * c.out_w + ox).data();
      for (Index ky = 0; ky < c.kernel_h; ++ky) {
        const Index iy = oy * c.stride - c.pad + ky;
        if (iy < 0 || iy >= c.height) continue;
        for (Index kx = 0; kx < c.kernel_w; ++kx) {
          const Index ix = ox * c.stride - c.pad + kx;
          if (ix < 0 || ix >= c.width) continue;
          const Scalar* src = input.data() + (iy * c.width + ix) * c.in_channels;
          std::copy(src, src + c.in_channels, row + (ky * c.kernel_w + kx) * c.in_channels);
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, const ConvGeometry& c, Tensor<Scalar>& grad_input) {
  for (Index oy = 0; oy < c.out_h; ++oy) {
    for (Index ox = 0; ox < c.out_w; ++ox) {
      const Scalar* row = cols.row(oy * c.out_w + ox).data();
      for (Index ky = 0; ky < c.kernel_h; ++ky) {
        const Index iy = oy * c.stride - c.pad + ky;
        if (iy < 0 || iy >= c.height) continue;
        for (Index kx = 0; kx < c.kernel_w; ++kx) {
          const Index ix = ox * c.stride - c.pad + kx;
          if (ix < 0 || ix >= c.width) continue;
          Scalar* dst = grad_input.data() + (iy * c.width + ix) * c.in_channels;
          const Scalar* src = row + (ky * c.kernel_w + kx) * c.in_channels;
          for (Index ch = 0; ch < c.in_channels; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation of an HxWxCin image with a kh x kw x Cin x Cout kernel, zero padded.
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> input, Var<Scalar> kernel, Index stride = 1, Index pad = 0) {
  detail::require_rank(input.shape(), 3, "conv2d input");
  detail::require_rank(kernel.shape(), 4, "conv2d kernel");
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  if (is[2] != ks[2]) {
    throw ShapeError("conv2d: input has " + std::to_string(is[2]) + " channels, kernel " +
                     shape_string(ks) + " expects " + std::to_string(ks[2]));
  }
  if (ks[0] % 2 == 0 || ks[1] % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, got " + shape_string(ks));
  }
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
  detail::ConvGeometry geo{is[0], is[1], is[2], ks[0], ks[1], ks[3], stride, pad, 0, 0};
  geo.out_h = (geo.height + 2 * pad - geo.kernel_h) / stride + 1;
  geo.out_w = (geo.width + 2 * pad - geo.kernel_w) / stride + 1;
  if (geo.height + 2 * pad < geo.kernel_h || geo.width + 2 * pad < geo.kernel_w) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }

  const RowMatrix<Scalar> cols = detail::im2col(input.value(), geo);
  ConstMatrixMap<Scalar> k(kernel.value().data(), geo.patch(), geo.out_channels);
  Tensor<Scalar> v({geo.out_h, geo.out_w, geo.out_channels});
  MatrixMap<Scalar>(v.data(), geo.out_h * geo.out_w, geo.out_channels).noalias() = cols * k;

  return input.tape().record(
      std::move(v), {input, kernel},
      [input, kernel, geo](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
        ConstMatrixMap<Scalar> gm(g.data(), geo.out_h * geo.out_w, geo.out_channels);
        ConstMatrixMap<Scalar> k(kernel.value().data(), geo.patch(), geo.out_channels);
        if (kernel.requires_grad()) {
          const RowMatrix<Scalar> cols = detail::im2col(input.value(), geo);
          Tensor<Scalar> gk(kernel.shape());
          MatrixMap<Scalar>(gk.data(), geo.patch(), geo.out_channels).noalias() =
              cols.transpose() * gm;
          t.accumulate(kernel, gk);
        }
        if (input.requires_grad()) {
          const RowMatrix<Scalar> gcols = gm * k.transpose();
          Tensor<Scalar> gi(input.shape());
          detail::col2im(gcols, geo, gi);
          t.accumulate(input, gi);
        }
      },
      "conv2d");
}

// ---- segment (category) operations -----------------------------------------

// Row k of the result is the mean of the rows of x labelled k; zero when k is unused.
template <typename Scalar>
Var<Scalar> segment_mean(Var<Scalar> x, std::span<const int> labels, Index classes) {
  detail::require_rank(x.shape(), 2, "segment_mean");
  const Index rows = x.shape()[0], width = x.shape()[1];
  detail::check_labels(labels, rows, classes, "segment_mean");
  std::vector<int> owned(labels.begin(), labels.end());
  std::vector<Index> counts(static_cast<std::size_t>(classes), 0);
  for (int l : owned) ++counts[static_cast<std::size_t>(l)];

  Tensor<Scalar> v({classes, width});
  auto xm = x.value().matrix();
  auto vm = v.matrix();
  for (Index r = 0; r < rows; ++r) vm.row(owned[static_cast<std::size_t>(r)]) += xm.row(r);
  for (Index k = 0; k < classes; ++k) {
    if (counts[static_cast<std::size_t>(k)] > 0) {
      vm.row(k) /= static_cast<Scalar>(counts[static_cast<std::size_t>(k)]);
    }
  }
  return x.tape().record(
      std::move(v), {x},
      [x, owned = std::move(owned), counts = std::move(counts)](
          Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
        Tensor<Scalar> gx(x.shape());
        auto gxm = gx.matrix();
        auto gm = g.matrix();
        for (Index r = 0; r < gxm.rows(); ++r) {
          const auto k = static_cast<std::size_t>(owned[static_cast<std::size_t>(r)]);
          gxm.row(r) = gm.row(static_cast<Index>(k)) / static_cast<Scalar>(counts[k]);
        }
        t.accumulate(x, gx);
      },
      "segment_mean");
}

// Row k of the result is the columnwise max over rows labelled k; zero when k is unused.
// The gradient of each entry goes to the first row attaining the max.
template <typename Scalar>
Var<Scalar> segment_max(Var<Scalar> x, std::span<const int> labels, Index classes) {
  detail::require_rank(x.shape(), 2, "segment_max");
  const Index rows = x.shape()[0], width = x.shape()[1];
  detail::check_labels(labels, rows, classes, "segment_max");

  Tensor<Scalar> v({classes, width});
  std::vector<Index> winner(static_cast<std::size_t>(classes * width), -1);
  const Tensor<Scalar>& xv = x.value();
  for (Index r = 0; r < rows; ++r) {
    const Index k = labels[static_cast<std::size_t>(r)];
    for (Index c = 0; c < width; ++c) {
      Index& w = winner[static_cast<std::size_t>(k * width + c)];
      if (w < 0 || xv(r, c) > v(k, c)) {
        w = r;
        v(k, c) = xv(r, c);
      }
    }
  }
  return x.tape().record(
      std::move(v), {x},
      [x, width, winner = std::move(winner)](Tape<Scalar>& t, const Tensor<Scalar>&,
                                             const Tensor<Scalar>& g) {
        Tensor<Scalar> gx(x.shape());
        for (std::size_t i = 0; i < winner.size(); ++i) {
          if (winner[i] >= 0) {
            gx(winner[i], static_cast<Index>(i) % width) += g[static_cast<Index>(i)];
          }
        }
        t.accumulate(x, gx);
      },
      "segment_max");
}

// Row r of the result is row labels[r] of w.
template <typename Scalar>
Var<Scalar> gather_rows(Var<Scalar> w, std::span<const int> labels) {
  detail::require_rank(w.shape(), 2, "gather_rows");
  const Index rows = static_cast<Index>(labels.size());
  detail::check_labels(labels, rows, w.shape()[0], "gather_rows");
  std::vector<int> owned(labels.begin(), labels.end());
  Tensor<Scalar> v({rows, w.shape()[1]});
  auto wm = w.value().matrix();
  auto vm = v.matrix();
  for (Index r = 0; r < rows; ++r) vm.row(r) = wm.row(owned[static_cast<std::size_t>(r)]);
  return w.tape().record(
      std::move(v), {w},
      [w, owned = std::move(owned)](Tape<Scalar>& t, const Tensor<Scalar>&,
                                    const Tensor<Scalar>& g) {
        Tensor<Scalar> gw(w.shape());
        auto gwm = gw.matrix();
        auto gm = g.matrix();
        for (Index r = 0; r < gm.rows(); ++r) gwm.row(owned[static_cast<std::size_t>(r)]) += gm.row(r);
        t.accumulate(w, gw);
      },
      "gather_rows");
}

// Mean negative log-probability of the labelled entries of a row-stochastic NxK matrix.
template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> probs, std::span<const int> labels) {
  detail::require_rank(probs.shape(), 2, "cross_entropy");
  const Index rows = probs.shape()[0];
  detail::check_labels(labels, rows, probs.shape()[1], "cross_entropy");
  std::vector<int> owned(labels.begin(), labels.end());
  const Tensor<Scalar>& p = probs.value();
  Scalar total = 0;
  for (Index r = 0; r < rows; ++r) total -= std::log(p(r, owned[static_cast<std::size_t>(r)]));
  return probs.tape().record(
      Tensor<Scalar>::scalar(total / static_cast<Scalar>(rows)), {probs},
      [probs, owned = std::move(owned)](Tape<Scalar>& t, const Tensor<Scalar>&,
                                        const Tensor<Scalar>& g) {
        const Tensor<Scalar>& p = probs.value();
        const Index rows = p.shape()[0];
        const Scalar coef = -g.item() / static_cast<Scalar>(rows);
        Tensor<Scalar> gp(p.shape());
        for (Index r = 0; r < rows; ++r) {
          const int k = owned[static_cast<std::size_t>(r)];
          gp(r, k) = coef / p(r, k);
        }
        t.accumulate(probs, gp);
      },
      "cross_entropy");
}

// cross_entropy(softmax_rows(logits), labels) computed through log-sum-exp.
template <typename Scalar>
Var<Scalar> softmax_cross_entropy(Var<Scalar> logits, std::span<const int> labels) {
  detail::require_rank(logits.shape(), 2, "softmax_cross_entropy");
  const Index rows = logits.shape()[0];
  detail::check_labels(labels, rows, logits.shape()[1], "softmax_cross_entropy");
  std::vector<int> owned(labels.begin(), labels.end());
  Tensor<Scalar> probs = softmax_rows_value(logits.value());
  auto z = logits.value().matrix();
  Scalar total = 0;
  for (Index r = 0; r < rows; ++r) {
    const Scalar m = z.row(r).maxCoeff();
    const Scalar lse = m + std::log((z.row(r).array() - m).exp().sum());
    total += lse - z(r, owned[static_cast<std::size_t>(r)]);
  }
  return logits.tape().record(
      Tensor<Scalar>::scalar(total / static_cast<Scalar>(rows)), {logits},
      [logits, owned = std::move(owned), probs = std::move(probs)](
          Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
        const Index rows = probs.shape()[0];
        Tensor<Scalar> gz = probs;
        for (Index r = 0; r < rows; ++r) gz(r, owned[static_cast<std::size_t>(r)]) -= Scalar(1);
        gz.array() *= g.item() / static_cast<Scalar>(rows);
        t.accumulate(logits, gz);
      },
      "softmax_cross_entropy");
}

// ---- composites ------------------------------------------------------------

// 1x1 convolution of HxWxC with a 1x1xCxK kernel, as a single matrix product.
template <typename Scalar>
Var<Scalar> pointwise_conv(Var<Scalar> x, Var<Scalar> kernel) {
  detail::require_rank(x.shape(), 3, "pointwise_conv input");
  detail::require_rank(kernel.shape(), 4, "pointwise_conv kernel");
  const Shape& ks = kernel.shape();
  if (ks[0] != 1 || ks[1] != 1 || ks[2] != x.shape()[2]) {
    throw ShapeError("pointwise_conv: kernel " + shape_string(ks) + " does not fit input " +
                     shape_string(x.shape()));
  }
  const Index h = x.shape()[0], w = x.shape()[1];
  Var<Scalar> out = matmul(reshape(x, {h * w, ks[2]}), reshape(kernel, {ks[2], ks[3]}));
  return reshape(out, {h, w, ks[3]});
}

// Softmax over the last axis of an HxWxK tensor.
template <typename Scalar>
Var<Scalar> softmax_channels(Var<Scalar> x) {
  detail::require_rank(x.shape(), 3, "softmax_channels");
  const Shape s = x.shape();
  return reshape(softmax_rows(reshape(x, {s[0] * s[1], s[2]})), s);
}

// ---- off-tape helpers ------------------------------------------------------

// Index of the largest channel at every pixel of an HxWxK tensor; ties go to the lowest index.
template <typename Scalar>
LabelMap argmax_channel(const Tensor<Scalar>& scores) {
  detail::require_rank(scores.shape(), 3, "argmax_channel");
  const Index h = scores.shape()[0], w = scores.shape()[1], k = scores.shape()[2];
  LabelMap out(h, w);
  for (Index p = 0; p < h * w; ++p) {
    const Scalar* row = scores.data() + p * k;
    out[p] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

}  // namespace grapy

#endif  // GRAPY_OPS_HPP
