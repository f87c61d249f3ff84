// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace refseg {
namespace {

using detail::new_buffer;
using detail::Node;

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_ndim(const char* op, const Tensor& x, std::size_t n) {
  if (x.ndim() != n) {
    throw ShapeError(std::string(op) + ": expected " + std::to_string(n) + "-D input, got " +
                     shape_str(x.shape()));
  }
}

template <typename Forward, typename Derivative>
Tensor unary(const char* name, const Tensor& x, Forward f, Derivative df) {
  auto out = new_buffer(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor::make_result(name, x.shape(), std::move(out), {x}, [df](Node& self) {
    auto& p = parent(self, 0);
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.data[i], self.data[i]);
  });
}

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, pad, out_h, out_w;
  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return out_h * out_w; }
};

void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const auto ncols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        double* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ncols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* x) {
  const auto ncols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const double* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ncols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct PoolBin {
  std::size_t begin, end;
};

PoolBin pool_bin(std::size_t i, std::size_t in, std::size_t out) {
  return {i * in / out, ((i + 1) * in + out - 1) / out};
}

// Source coordinate of output index i when resizing n_in -> n_out with corners aligned.
struct LerpTap {
  std::size_t lo, hi;
  double frac;
};

LerpTap resize_tap(std::size_t i, std::size_t n_in, std::size_t n_out) {
  if (n_out == 1 || n_in == 1) return {0, 0, 0.0};
  const double src = static_cast<double>(i * (n_in - 1)) / static_cast<double>(n_out - 1);
  auto lo = static_cast<std::size_t>(std::floor(src));
  lo = std::min(lo, n_in - 1);
  const auto hi = std::min(lo + 1, n_in - 1);
  return {lo, hi, src - static_cast<double>(lo)};
}

struct WarpGeometry {
  double cx, cy, ratio_xy, ratio_yx;
  explicit WarpGeometry(std::size_t h, std::size_t w)
      : cx(static_cast<double>(w - 1) / 2.0),
        cy(static_cast<double>(h - 1) / 2.0),
        ratio_xy(h > 1 ? cx / cy : 0.0),
        ratio_yx(w > 1 ? cy / cx : 0.0) {}
};

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: dimension mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  auto out = new_buffer(static_cast<std::size_t>(m * n));
  MatrixMap(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  return Tensor::make_result(
      "matmul", {a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, n](Node& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        ConstMatrixMap g(self.grad.data(), m, n);
        if (pa.requires_grad) {
          MatrixMap(pa.grad_buffer().data(), m, k).noalias() += g * ConstMatrixMap(pb.data.data(), k, n).transpose();
        }
        if (pb.requires_grad) {
          MatrixMap(pb.grad_buffer().data(), k, n).noalias() += ConstMatrixMap(pa.data.data(), m, k).transpose() * g;
        }
      });
}

Tensor transpose2d(const Tensor& x) {
  require_ndim("transpose2d", x, 2);
  const auto r = static_cast<Eigen::Index>(x.dim(0));
  const auto c = static_cast<Eigen::Index>(x.dim(1));
  auto out = new_buffer(x.numel());
  MatrixMap(out.data(), c, r) = x.matrix().transpose();
  return Tensor::make_result("transpose2d", {x.dim(1), x.dim(0)}, std::move(out), {x}, [r, c](Node& self) {
    auto& p = parent(self, 0);
    MatrixMap(p.grad_buffer().data(), r, c) += ConstMatrixMap(self.grad.data(), c, r).transpose();
  });
}

Tensor softmax_rows(const Tensor& x) {
  require_ndim("softmax_rows", x, 2);
  const auto rows = x.dim(0);
  const auto cols = x.dim(1);
  auto out = new_buffer(x.numel());
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * cols;
    double* dst = out.data() + r * cols;
    const double mx = *std::max_element(src, src + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      dst[c] = std::exp(src[c] - mx);
      total += dst[c];
    }
    for (std::size_t c = 0; c < cols; ++c) dst[c] /= total;
  }
  return Tensor::make_result("softmax_rows", x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - dot);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto out = new_buffer(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor::make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = parent(self, k);
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto out = new_buffer(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor::make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = parent(self, k);
      if (!p.requires_grad) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto out = new_buffer(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor::make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

Tensor affine(const Tensor& x, double scale, double shift) {
  return unary(
      "affine", x, [scale, shift](double v) { return scale * v + shift; },
      [scale](double, double) { return scale; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::make_result("sum", {1}, {total}, {x}, [](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const auto n = static_cast<double>(x.numel());
  return affine(sum(x), 1.0 / n, 0.0);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto out = new_buffer(x.numel());
  std::copy(x.data().begin(), x.data().end(), out.begin());
  return Tensor::make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: off-axis mismatch " + shape_str(first) + " vs " + shape_str(s));
    }
    shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<std::size_t> chunk;
  chunk.reserve(parts.size());
  for (const auto& p : parts) chunk.push_back(p.dim(axis) * inner);
  const std::size_t row = shape[axis] * inner;

  auto out = new_buffer(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto src = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.data() + o * chunk[k], chunk[k], out.data() + o * row + offset);
    }
    offset += chunk[k];
  }
  return Tensor::make_result("concat", std::move(shape), std::move(out), parts,
                             [chunk, outer, row](Node& self) {
                               std::size_t offset = 0;
                               for (std::size_t k = 0; k < chunk.size(); ++k) {
                                 auto& p = parent(self, k);
                                 if (p.requires_grad) {
                                   auto& g = p.grad_buffer();
                                   for (std::size_t o = 0; o < outer; ++o) {
                                     const double* src = self.grad.data() + o * row + offset;
                                     double* dst = g.data() + o * chunk[k];
                                     for (std::size_t i = 0; i < chunk[k]; ++i) dst[i] += src[i];
                                   }
                                 }
                                 offset += chunk[k];
                               }
                             });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.ndim() == 0 || begin >= end || end > x.dim(0)) {
    throw ShapeError("slice_rows: invalid range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") for " + shape_str(x.shape()));
  }
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  auto out = new_buffer(shape_numel(shape));
  std::copy_n(x.data().data() + begin * row, out.size(), out.begin());
  return Tensor::make_result("slice_rows", std::move(shape), std::move(out), {x}, [begin, row](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * row + i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
  require_ndim("gather_rows", table, 2);
  const auto vocab = table.dim(0);
  const auto width = table.dim(1);
  auto out = new_buffer(ids.size() * width);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] >= vocab) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[t]) + " outside table of " +
                              std::to_string(vocab) + " rows");
    }
    std::copy_n(table.data().data() + ids[t] * width, width, out.data() + t * width);
  }
  return Tensor::make_result("gather_rows", {ids.size(), width}, std::move(out), {table},
                             [ids, width](Node& self) {
                               auto& g = parent(self, 0).grad_buffer();
                               for (std::size_t t = 0; t < ids.size(); ++t) {
                                 for (std::size_t d = 0; d < width; ++d) {
                                   g[ids[t] * width + d] += self.grad[t * width + d];
                                 }
                               }
                             });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_ndim("add_row_bias", x, 2);
  if (bias.numel() != x.dim(1)) {
    throw ShapeError("add_row_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  }
  const auto rows = x.dim(0);
  const auto cols = x.dim(1);
  auto out = new_buffer(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + bias[c];
  }
  return Tensor::make_result("add_row_bias", x.shape(), std::move(out), {x, bias}, [rows, cols](Node& self) {
    auto& px = parent(self, 0);
    auto& pb = parent(self, 1);
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
      }
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  require_ndim("conv2d", x, 3);
  require_ndim("conv2d weight", weight, 4);
  const auto k = weight.dim(2);
  if (weight.dim(3) != k || weight.dim(1) != x.dim(0)) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const auto h = x.dim(1);
  const auto w = x.dim(2);
  if (h + 2 * pad < k || w + 2 * pad < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " + shape_str(x.shape()));
  }
  const auto out_channels = weight.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != out_channels) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " vs " + std::to_string(out_channels) + " filters");
  }
  const ConvGeometry geo{x.dim(0), h, w, k, stride, pad, (h + 2 * pad - k) / stride + 1,
                         (w + 2 * pad - k) / stride + 1};
  const bool pointwise = k == 1 && stride == 1 && pad == 0;
  const auto rows = static_cast<Eigen::Index>(geo.col_rows());
  const auto ncols = static_cast<Eigen::Index>(geo.col_cols());
  const auto kout = static_cast<Eigen::Index>(out_channels);

  // Kept alive for the weight gradient.
  std::shared_ptr<Buffer> cols;
  if (!pointwise) {
    cols = std::make_shared<Buffer>(geo.col_rows() * geo.col_cols());
    im2col(geo, x.data().data(), cols->data());
  }
  const double* col_ptr = pointwise ? x.data().data() : cols->data();

  auto out = new_buffer(out_channels * geo.col_cols());
  MatrixMap result(out.data(), kout, ncols);
  result.noalias() = ConstMatrixMap(weight.data().data(), kout, rows) * ConstMatrixMap(col_ptr, rows, ncols);
  if (has_bias) {
    for (Eigen::Index c = 0; c < kout; ++c) result.row(c).array() += bias[static_cast<std::size_t>(c)];
  }

  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_result(
      "conv2d", {out_channels, geo.out_h, geo.out_w}, std::move(out), std::move(inputs),
      [geo, pointwise, rows, ncols, kout, has_bias, cols](Node& self) {
        auto& px = parent(self, 0);
        auto& pw = parent(self, 1);
        ConstMatrixMap g(self.grad.data(), kout, ncols);
        if (pw.requires_grad) {
          const double* col_ptr = pointwise ? px.data.data() : cols->data();
          MatrixMap(pw.grad_buffer().data(), kout, rows).noalias() +=
              g * ConstMatrixMap(col_ptr, rows, ncols).transpose();
        }
        if (px.requires_grad) {
          const ConstMatrixMap wmat(pw.data.data(), kout, rows);
          if (pointwise) {
            MatrixMap(px.grad_buffer().data(), rows, ncols).noalias() += wmat.transpose() * g;
          } else {
            RowMatrix dcols = wmat.transpose() * g;
            col2im_add(geo, dcols.data(), px.grad_buffer().data());
          }
        }
        if (has_bias) {
          auto& pb = parent(self, 2);
          if (pb.requires_grad) {
            auto& gb = pb.grad_buffer();
            for (Eigen::Index c = 0; c < kout; ++c) gb[static_cast<std::size_t>(c)] += g.row(c).sum();
          }
        }
      });
}

Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_ndim("adaptive_avg_pool", x, 3);
  const auto channels = x.dim(0);
  const auto h = x.dim(1);
  const auto w = x.dim(2);
  if (out_h == 0 || out_w == 0) throw ShapeError("adaptive_avg_pool: zero output size");
  if (out_h > h || out_w > w) {
    throw ShapeError("adaptive_avg_pool: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " larger than input " + shape_str(x.shape()));
  }
  auto out = new_buffer(channels * out_h * out_w);
  auto in = x.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto by = pool_bin(i, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto bx = pool_bin(j, w, out_w);
        double total = 0.0;
        for (auto y = by.begin; y < by.end; ++y) {
          for (auto xx = bx.begin; xx < bx.end; ++xx) total += in[(c * h + y) * w + xx];
        }
        out[(c * out_h + i) * out_w + j] =
            total / static_cast<double>((by.end - by.begin) * (bx.end - bx.begin));
      }
    }
  }
  return Tensor::make_result(
      "adaptive_avg_pool", {channels, out_h, out_w}, std::move(out), {x},
      [channels, h, w, out_h, out_w](Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t i = 0; i < out_h; ++i) {
            const auto by = pool_bin(i, h, out_h);
            for (std::size_t j = 0; j < out_w; ++j) {
              const auto bx = pool_bin(j, w, out_w);
              const double share = self.grad[(c * out_h + i) * out_w + j] /
                                   static_cast<double>((by.end - by.begin) * (bx.end - bx.begin));
              for (auto y = by.begin; y < by.end; ++y) {
                for (auto xx = bx.begin; xx < bx.end; ++xx) g[(c * h + y) * w + xx] += share;
              }
            }
          }
        }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  require_ndim("global_avg_pool", x, 3);
  const auto channels = x.dim(0);
  const auto area = x.dim(1) * x.dim(2);
  auto out = new_buffer(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double total = 0.0;
    for (std::size_t p = 0; p < area; ++p) total += x[c * area + p];
    out[c] = total / static_cast<double>(area);
  }
  return Tensor::make_result("global_avg_pool", {channels}, std::move(out), {x}, [area](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / area] / static_cast<double>(area);
  });
}

Tensor grid_sample_bilinear(const Tensor& x, const Tensor& theta) {
  require_ndim("grid_sample_bilinear", x, 3);
  if (theta.numel() != 6) {
    throw ShapeError("grid_sample_bilinear: theta must be 2x3, got " + shape_str(theta.shape()));
  }
  const auto channels = x.dim(0);
  const auto h = x.dim(1);
  const auto w = x.dim(2);
  const WarpGeometry geo(h, w);

  // Pixel-space source coordinate for output (i, j); identity theta maps
  // every pixel onto itself exactly.
  auto source = [geo](std::span<const double> t, std::size_t i, std::size_t j) {
    const double rx = static_cast<double>(j) - geo.cx;
    const double ry = static_cast<double>(i) - geo.cy;
    const double sj = t[0] * rx + t[1] * (ry * geo.ratio_xy) + t[2] * geo.cx + geo.cx;
    const double si = t[3] * (rx * geo.ratio_yx) + t[4] * ry + t[5] * geo.cy + geo.cy;
    return std::pair{si, sj};
  };
  auto fetch = [h, w](const double* plane, std::ptrdiff_t i, std::ptrdiff_t j) {
    if (i < 0 || j < 0 || i >= static_cast<std::ptrdiff_t>(h) || j >= static_cast<std::ptrdiff_t>(w)) return 0.0;
    return plane[static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)];
  };

  auto out = new_buffer(x.numel());
  auto in = x.data();
  auto t = theta.data();
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const auto [si, sj] = source(t, i, j);
      const double fi = std::floor(si), fj = std::floor(sj);
      const double fy = si - fi, fx = sj - fj;
      const auto i0 = static_cast<std::ptrdiff_t>(fi), j0 = static_cast<std::ptrdiff_t>(fj);
      for (std::size_t c = 0; c < channels; ++c) {
        const double* plane = in.data() + c * h * w;
        out[(c * h + i) * w + j] = (1 - fy) * (1 - fx) * fetch(plane, i0, j0) +
                                   (1 - fy) * fx * fetch(plane, i0, j0 + 1) +
                                   fy * (1 - fx) * fetch(plane, i0 + 1, j0) + fy * fx * fetch(plane, i0 + 1, j0 + 1);
      }
    }
  }
  return Tensor::make_result(
      "grid_sample_bilinear", x.shape(), std::move(out), {x, theta},
      [channels, h, w, geo, source, fetch](Node& self) {
        auto& px = parent(self, 0);
        auto& pt = parent(self, 1);
        std::span<const double> t = pt.data;
        double* gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
        double dtheta[6] = {0, 0, 0, 0, 0, 0};
        auto scatter = [gx, h, w](std::size_t c, std::ptrdiff_t i, std::ptrdiff_t j, double v) {
          if (i < 0 || j < 0 || i >= static_cast<std::ptrdiff_t>(h) || j >= static_cast<std::ptrdiff_t>(w)) return;
          gx[(c * h + static_cast<std::size_t>(i)) * w + static_cast<std::size_t>(j)] += v;
        };
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const auto [si, sj] = source(t, i, j);
            const double fi = std::floor(si), fj = std::floor(sj);
            const double fy = si - fi, fx = sj - fj;
            const auto i0 = static_cast<std::ptrdiff_t>(fi), j0 = static_cast<std::ptrdiff_t>(fj);
            double d_sj = 0.0, d_si = 0.0;
            for (std::size_t c = 0; c < channels; ++c) {
              const double g = self.grad[(c * h + i) * w + j];
              if (g == 0.0) continue;
              const double* plane = px.data.data() + c * h * w;
              const double v00 = fetch(plane, i0, j0), v01 = fetch(plane, i0, j0 + 1);
              const double v10 = fetch(plane, i0 + 1, j0), v11 = fetch(plane, i0 + 1, j0 + 1);
              d_sj += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
              d_si += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
              if (gx) {
                scatter(c, i0, j0, g * (1 - fy) * (1 - fx));
                scatter(c, i0, j0 + 1, g * (1 - fy) * fx);
                scatter(c, i0 + 1, j0, g * fy * (1 - fx));
                scatter(c, i0 + 1, j0 + 1, g * fy * fx);
              }
            }
            const double rx = static_cast<double>(j) - geo.cx;
            const double ry = static_cast<double>(i) - geo.cy;
            dtheta[0] += d_sj * rx;
            dtheta[1] += d_sj * ry * geo.ratio_xy;
            dtheta[2] += d_sj * geo.cx;
            dtheta[3] += d_si * rx * geo.ratio_yx;
            dtheta[4] += d_si * ry;
            dtheta[5] += d_si * geo.cy;
          }
        }
        if (pt.requires_grad) {
          auto& gt = pt.grad_buffer();
          for (std::size_t k = 0; k < 6; ++k) gt[k] += dtheta[k];
        }
      });
}

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_ndim("bilinear_resize", x, 3);
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: zero output size");
  const auto channels = x.dim(0);
  const auto h = x.dim(1);
  const auto w = x.dim(2);
  if (h == out_h && w == out_w) return reshape(x, x.shape());
  std::vector<LerpTap> ty(out_h), tx(out_w);
  for (std::size_t i = 0; i < out_h; ++i) ty[i] = resize_tap(i, h, out_h);
  for (std::size_t j = 0; j < out_w; ++j) tx[j] = resize_tap(j, w, out_w);

  auto out = new_buffer(channels * out_h * out_w);
  auto in = x.data();
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = in.data() + c * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto& a = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto& b = tx[j];
        const double tl = plane[a.lo * w + b.lo], tr = plane[a.lo * w + b.hi];
        const double bl = plane[a.hi * w + b.lo], br = plane[a.hi * w + b.hi];
        const double top = tl + b.frac * (tr - tl);
        const double bottom = bl + b.frac * (br - bl);
        out[(c * out_h + i) * out_w + j] = top + a.frac * (bottom - top);
      }
    }
  }
  return Tensor::make_result(
      "bilinear_resize", {channels, out_h, out_w}, std::move(out), {x},
      [channels, h, w, out_h, out_w, ty, tx](Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (std::size_t c = 0; c < channels; ++c) {
          double* plane = g.data() + c * h * w;
          for (std::size_t i = 0; i < out_h; ++i) {
            const auto& a = ty[i];
            for (std::size_t j = 0; j < out_w; ++j) {
              const auto& b = tx[j];
              const double gv = self.grad[(c * out_h + i) * out_w + j];
              plane[a.lo * w + b.lo] += gv * (1 - a.frac) * (1 - b.frac);
              plane[a.lo * w + b.hi] += gv * (1 - a.frac) * b.frac;
              plane[a.hi * w + b.lo] += gv * a.frac * (1 - b.frac);
              plane[a.hi * w + b.hi] += gv * a.frac * b.frac;
            }
          }
        }
      });
}

Tensor l2_normalize_channels(const Tensor& x) {
  if (x.ndim() == 0) throw ShapeError("l2_normalize_channels: scalar input");
  constexpr double kEps = 1e-12;
  const auto channels = x.dim(0);
  const auto area = x.numel() / channels;
  std::vector<double> norms(area, 0.0);
  auto in = x.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t p = 0; p < area; ++p) norms[p] += in[c * area + p] * in[c * area + p];
  }
  for (auto& n : norms) n = std::sqrt(n + kEps);
  auto out = new_buffer(x.numel());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t p = 0; p < area; ++p) out[c * area + p] = in[c * area + p] / norms[p];
  }
  return Tensor::make_result(
      "l2_normalize_channels", x.shape(), std::move(out), {x}, [channels, area, norms](Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (std::size_t p = 0; p < area; ++p) {
          double dot = 0.0;
          for (std::size_t c = 0; c < channels; ++c) dot += self.grad[c * area + p] * self.data[c * area + p];
          for (std::size_t c = 0; c < channels; ++c) {
            const auto k = c * area + p;
            g[k] += (self.grad[k] - self.data[k] * dot) / norms[p];
          }
        }
      });
}

Tensor broadcast_spatial(const Tensor& v, std::size_t h, std::size_t w) {
  const auto channels = v.numel();
  const auto area = h * w;
  if (area == 0) throw ShapeError("broadcast_spatial: zero spatial size");
  auto out = new_buffer(channels * area);
  for (std::size_t c = 0; c < channels; ++c) std::fill_n(out.data() + c * area, area, v[c]);
  return Tensor::make_result("broadcast_spatial", {channels, h, w}, std::move(out), {v}, [area](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t c = 0; c < g.size(); ++c) {
      double total = 0.0;
      for (std::size_t p = 0; p < area; ++p) total += self.grad[c * area + p];
      g[c] += total;
    }
  });
}

Tensor standardize_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_ndim("standardize_channels", x, 3);
  const auto channels = x.dim(0);
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw ShapeError("standardize_channels: scale/shift size mismatch for " + shape_str(x.shape()));
  }
  const auto area = x.dim(1) * x.dim(2);
  const auto n = static_cast<double>(area);
  std::vector<double> inv_std(channels);
  std::vector<double> xhat(x.numel());
  auto out = new_buffer(x.numel());
  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = x.data().data() + c * area;
    double mu = 0.0;
    for (std::size_t p = 0; p < area; ++p) mu += src[p];
    mu /= n;
    double var = 0.0;
    for (std::size_t p = 0; p < area; ++p) var += (src[p] - mu) * (src[p] - mu);
    var /= n;
    inv_std[c] = 1.0 / std::sqrt(var + eps);
    for (std::size_t p = 0; p < area; ++p) {
      xhat[c * area + p] = (src[p] - mu) * inv_std[c];
      out[c * area + p] = gamma[c] * xhat[c * area + p] + beta[c];
    }
  }
  return Tensor::make_result(
      "standardize_channels", x.shape(), std::move(out), {x, gamma, beta},
      [channels, area, n, inv_std, xhat = std::move(xhat)](Node& self) {
        auto& px = parent(self, 0);
        auto& pg = parent(self, 1);
        auto& pb = parent(self, 2);
        for (std::size_t c = 0; c < channels; ++c) {
          const double* g = self.grad.data() + c * area;
          const double* xh = xhat.data() + c * area;
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t p = 0; p < area; ++p) {
            sum_g += g[p];
            sum_gx += g[p] * xh[p];
          }
          if (pb.requires_grad) pb.grad_buffer()[c] += sum_g;
          if (pg.requires_grad) pg.grad_buffer()[c] += sum_gx;
          if (px.requires_grad) {
            const double scale = pg.data[c] * inv_std[c] / n;
            double* dx = px.grad_buffer().data() + c * area;
            for (std::size_t p = 0; p < area; ++p) dx[p] += scale * (n * g[p] - sum_g - xh[p] * sum_gx);
          }
        }
      });
}

Tensor bce_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape("bce_loss", pred, target);
  const auto n = static_cast<double>(pred.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double t = target[i];
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("bce_loss: target outside [0, 1]");
    const double p = std::clamp(pred[i], kBceEpsilon, 1.0 - kBceEpsilon);
    total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return Tensor::make_result("bce_loss", {1}, {total / n}, {pred, target}, [n](Node& self) {
    auto& pp = parent(self, 0);
    auto& pt = parent(self, 1);
    const double g0 = self.grad[0] / n;
    if (pp.requires_grad) {
      auto& g = pp.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double p = pp.data[i];
        if (p <= kBceEpsilon || p >= 1.0 - kBceEpsilon) continue;
        const double t = pt.data[i];
        g[i] += g0 * (-t / p + (1.0 - t) / (1.0 - p));
      }
    }
    if (pt.requires_grad) {
      auto& g = pt.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double p = std::clamp(pp.data[i], kBceEpsilon, 1.0 - kBceEpsilon);
        g[i] += g0 * (std::log(1.0 - p) - std::log(p));
      }
    }
  });
}

}  // namespace refseg
