// SPDX-License-Identifier: Apache-2.0

#include "slu/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "slu/error.hpp"

namespace slu::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a) {
  throw ShapeError(std::string(op) + ": unsupported shape " + shape_string(a));
}

void same_tape(const char* op, Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands live on different tapes");
}

// Rows x last-dim view of any tensor with rank >= 1.
std::pair<std::size_t, std::size_t> as_rows(const Shape& s) {
  if (s.empty()) return {1, 1};
  std::size_t cols = s.back();
  return {cols == 0 ? 0 : shape_numel(s) / cols, cols};
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) shape_fail("matmul", av.shape(), bv.shape());
  const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
  Tensor out(Shape{n, m});
  MutMap(out.raw(), n, m).noalias() = ConstMap(av.raw(), n, k) * ConstMap(bv.raw(), k, m);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {ia, ib}, [ia, ib, n, k, m](Tape& t, const Tensor& g, const Tensor&) {
    ConstMap gm(g.raw(), n, m);
    if (Tensor* ga = t.grad_slot(ia)) {
      MutMap(ga->raw(), n, k).noalias() += gm * ConstMap(t.value(ib).raw(), k, m).transpose();
    }
    if (Tensor* gb = t.grad_slot(ib)) {
      MutMap(gb->raw(), k, m).noalias() += ConstMap(t.value(ia).raw(), n, k).transpose() * gm;
    }
  });
}

Var add(Var a, Var b) {
  same_tape("add", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t ia = a.id(), ib = b.id();
  if (av.shape() == bv.shape()) {
    Tensor out = av;
    out.add_(bv);
    return a.tape().record("add", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g, const Tensor&) {
      if (Tensor* ga = t.grad_slot(ia)) ga->add_(g);
      if (Tensor* gb = t.grad_slot(ib)) gb->add_(g);
    });
  }
  if (bv.rank() != 1 || av.rank() < 1 || av.shape().back() != bv.dim(0)) shape_fail("add", av.shape(), bv.shape());
  auto [rows, cols] = as_rows(av.shape());
  Tensor out = av;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  }
  return a.tape().record("add", std::move(out), {ia, ib}, [ia, ib, rows, cols](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_slot(ia)) ga->add_(g);
    if (Tensor* gb = t.grad_slot(ib)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += g[r * cols + c];
      }
    }
  });
}

Var sub(Var a, Var b) {
  same_tape("sub", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_fail("sub", av.shape(), bv.shape());
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_slot(ia)) ga->add_(g);
    if (Tensor* gb = t.grad_slot(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_tape("mul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_fail("mul", av.shape(), bv.shape());
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_slot(ia)) {
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_slot(ib)) {
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  const std::size_t ia = a.id();
  return a.tape().record("scale", std::move(out), {ia}, [ia, factor](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += factor * g[i];
    }
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (first.empty()) shape_fail("concat", first);
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    same_tape("concat", parts[0], p);
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      shape_fail("concat", first, s);
    }
    widths.push_back(s.back());
    ids.push_back(p.id());
    total += s.back();
  }
  Shape out_shape = first;
  out_shape.back() = total;
  const std::size_t rows = as_rows(first).first;
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.raw() + r * widths[k], widths[k], out.raw() + r * total + offset);
    }
    offset += widths[k];
  }
  return parts[0].tape().record("concat", std::move(out), ids, [ids, widths, rows, total](Tape& t, const Tensor& g, const Tensor&) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (Tensor* gk = t.grad_slot(ids[k])) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) (*gk)[r * widths[k] + c] += g[r * total + offset + c];
        }
      }
      offset += widths[k];
    }
  });
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (s.empty() || begin > end || end > s.back()) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of shape " +
                     shape_string(s));
  }
  auto [rows, cols] = as_rows(s);
  const std::size_t width = end - begin;
  Shape out_shape = s;
  out_shape.back() = width;
  Tensor out(out_shape);
  const Tensor& v = a.value();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.raw() + r * cols + begin, width, out.raw() + r * width);
  const std::size_t ia = a.id();
  return a.tape().record("slice", std::move(out), {ia}, [ia, rows, cols, begin, width](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < width; ++c) (*ga)[r * cols + begin + c] += g[r * width + c];
      }
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record("reshape", std::move(out), {ia}, [ia](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", Tensor::scalar(total), {ia}, [ia](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_slot(ia)) {
      for (double& v : ga->data()) v += g[0];
    }
  });
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = stable_sigmoid(v);
  const std::size_t ia = a.id();
  return a.tape().record("sigmoid", std::move(out), {ia}, [ia](Tape& t, const Tensor& g, const Tensor& y) {
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i] * (1.0 - y[i]);
    }
  });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  const std::size_t ia = a.id();
  return a.tape().record("tanh", std::move(out), {ia}, [ia](Tape& t, const Tensor& g, const Tensor& y) {
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (1.0 - y[i] * y[i]);
    }
  });
}

namespace {

// Softmax of one row restricted to mask (nullptr = all positions).
void softmax_row(const double* x, double* y, std::size_t n, const std::uint8_t* mask) {
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask || mask[i]) peak = std::max(peak, x[i]);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = (!mask || mask[i]) ? std::exp(x[i] - peak) : 0.0;
    total += y[i];
  }
  for (std::size_t i = 0; i < n; ++i) y[i] /= total;
}

// dx = y * (g - <g, y>) per row.
void softmax_backward(const Tensor& g, const Tensor& y, Tensor& gx, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* gr = g.raw() + r * cols;
    const double* yr = y.raw() + r * cols;
    double dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
    double* out = gx.raw() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += yr[c] * (gr[c] - dot);
  }
}

}  // namespace

Var softmax(Var a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) shape_fail("softmax", x.shape());
  auto [rows, cols] = as_rows(x.shape());
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) softmax_row(x.raw() + r * cols, out.raw() + r * cols, cols, nullptr);
  const std::size_t ia = a.id();
  return a.tape().record("softmax", std::move(out), {ia}, [ia, rows, cols](Tape& t, const Tensor& g, const Tensor& y) {
    if (Tensor* ga = t.grad_slot(ia)) softmax_backward(g, y, *ga, rows, cols);
  });
}

Var log_softmax(Var a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) shape_fail("log_softmax", x.shape());
  auto [rows, cols] = as_rows(x.shape());
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.raw() + r * cols;
    double peak = *std::max_element(xr, xr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(xr[c] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xr[c] - lse;
  }
  const std::size_t ia = a.id();
  return a.tape().record("log_softmax", std::move(out), {ia}, [ia, rows, cols](Tape& t, const Tensor& g, const Tensor& y) {
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += g[r * cols + c] - std::exp(y[r * cols + c]) * gsum;
      }
    }
  });
}

Var masked_softmax(Var a, std::span<const std::uint8_t> mask) {
  const Tensor& x = a.value();
  if (x.rank() == 0) shape_fail("masked_softmax", x.shape());
  auto [rows, cols] = as_rows(x.shape());
  if (mask.size() != x.size()) {
    throw ShapeError("masked_softmax: mask of " + std::to_string(mask.size()) + " entries for shape " +
                     shape_string(x.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* m = mask.data() + r * cols;
    if (std::none_of(m, m + cols, [](std::uint8_t v) { return v != 0; })) {
      throw ContractError("masked_softmax: row " + std::to_string(r) + " has no unmasked position");
    }
    softmax_row(x.raw() + r * cols, out.raw() + r * cols, cols, m);
  }
  const std::size_t ia = a.id();
  // Masked outputs are exactly 0, so the shared backward already gives them
  // a zero gradient.
  return a.tape().record("masked_softmax", std::move(out), {ia}, [ia, rows, cols](Tape& t, const Tensor& g, const Tensor& y) {
    if (Tensor* ga = t.grad_slot(ia)) softmax_backward(g, y, *ga, rows, cols);
  });
}

Var grad_reverse(Var a) {
  const std::size_t ia = a.id();
  return a.tape().record("grad_reverse", a.value(), {ia}, [ia](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_slot(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] -= g[i];
    }
  });
}

Var dropout(Var a, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::eval || rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(a.shape());
  for (double& m : mask.data()) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ia = a.id();
  return a.tape().record("dropout", std::move(out), {ia},
                         [ia, mask = std::move(mask)](Tape& t, const Tensor& g, const Tensor&) {
                           if (Tensor* ga = t.grad_slot(ia)) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * mask[i];
                           }
                         });
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) shape_fail("embedding", tv.shape());
  const std::size_t vocab = tv.dim(0), width = tv.dim(1);
  Tensor out(Shape{ids.size(), width});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(ids[r]) + " out of range for table " + shape_string(tv.shape()));
    }
    std::copy_n(tv.raw() + ids[r] * width, width, out.raw() + r * width);
  }
  const std::size_t it = table.id();
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return table.tape().record("embedding", std::move(out), {it},
                             [it, rows = std::move(rows), width](Tape& t, const Tensor& g, const Tensor&) {
                               if (Tensor* gt = t.grad_slot(it)) {
                                 for (std::size_t r = 0; r < rows.size(); ++r) {
                                   for (std::size_t c = 0; c < width; ++c) (*gt)[rows[r] * width + c] += g[r * width + c];
                                 }
                               }
                             });
}

Var time_step(Var a, std::size_t t) {
  const Tensor& v = a.value();
  if (v.rank() != 3 || t >= v.dim(1)) {
    throw ShapeError("time_step: step " + std::to_string(t) + " of shape " + shape_string(v.shape()));
  }
  const std::size_t batch = v.dim(0), steps = v.dim(1), width = v.dim(2);
  Tensor out(Shape{batch, width});
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(v.raw() + (b * steps + t) * width, width, out.raw() + b * width);
  const std::size_t ia = a.id();
  return a.tape().record("time_step", std::move(out), {ia}, [ia, batch, steps, width, t](Tape& tp, const Tensor& g, const Tensor&) {
    if (Tensor* ga = tp.grad_slot(ia)) {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < width; ++c) (*ga)[(b * steps + t) * width + c] += g[b * width + c];
      }
    }
  });
}

Var stack_steps(std::span<const Var> steps) {
  if (steps.empty()) throw ShapeError("stack_steps: no inputs");
  const Shape& first = steps[0].shape();
  if (first.size() != 2) shape_fail("stack_steps", first);
  const std::size_t batch = first[0], width = first[1], count = steps.size();
  std::vector<std::size_t> ids;
  Tensor out(Shape{batch, count, width});
  for (std::size_t t = 0; t < count; ++t) {
    same_tape("stack_steps", steps[0], steps[t]);
    if (steps[t].shape() != first) shape_fail("stack_steps", first, steps[t].shape());
    ids.push_back(steps[t].id());
    const Tensor& v = steps[t].value();
    for (std::size_t b = 0; b < batch; ++b) std::copy_n(v.raw() + b * width, width, out.raw() + (b * count + t) * width);
  }
  return steps[0].tape().record("stack_steps", std::move(out), ids, [ids, batch, width](Tape& tp, const Tensor& g, const Tensor&) {
    const std::size_t count = ids.size();
    for (std::size_t t = 0; t < count; ++t) {
      if (Tensor* gt = tp.grad_slot(ids[t])) {
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < width; ++c) (*gt)[b * width + c] += g[(b * count + t) * width + c];
        }
      }
    }
  });
}

Var select_rows(std::span<const std::uint8_t> keep, Var a, Var b) {
  same_tape("select_rows", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape() || av.rank() != 2) shape_fail("select_rows", av.shape(), bv.shape());
  if (keep.size() != av.dim(0)) {
    throw ShapeError("select_rows: " + std::to_string(keep.size()) + " flags for shape " + shape_string(av.shape()));
  }
  const std::size_t width = av.dim(1);
  Tensor out(av.shape());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const Tensor& src = keep[r] ? av : bv;
    std::copy_n(src.raw() + r * width, width, out.raw() + r * width);
  }
  std::vector<std::uint8_t> flags(keep.begin(), keep.end());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("select_rows", std::move(out), {ia, ib},
                         [ia, ib, flags = std::move(flags), width](Tape& t, const Tensor& g, const Tensor&) {
                           Tensor* ga = t.grad_slot(ia);
                           Tensor* gb = t.grad_slot(ib);
                           for (std::size_t r = 0; r < flags.size(); ++r) {
                             Tensor* dst = flags[r] ? ga : gb;
                             if (!dst) continue;
                             for (std::size_t c = 0; c < width; ++c) (*dst)[r * width + c] += g[r * width + c];
                           }
                         });
}

Var weighted_sum(Var alpha, Var h) {
  same_tape("weighted_sum", alpha, h);
  const Tensor& av = alpha.value();
  const Tensor& hv = h.value();
  if (av.rank() != 2 || hv.rank() != 3 || av.dim(0) != hv.dim(0) || av.dim(1) != hv.dim(1)) {
    shape_fail("weighted_sum", av.shape(), hv.shape());
  }
  const std::size_t batch = hv.dim(0), steps = hv.dim(1), width = hv.dim(2);
  Tensor out(Shape{batch, width});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const double w = av[b * steps + t];
      if (w == 0.0) continue;
      const double* row = hv.raw() + (b * steps + t) * width;
      for (std::size_t c = 0; c < width; ++c) out[b * width + c] += w * row[c];
    }
  }
  const std::size_t ia = alpha.id(), ih = h.id();
  return alpha.tape().record("weighted_sum", std::move(out), {ia, ih},
                             [ia, ih, batch, steps, width](Tape& t, const Tensor& g, const Tensor&) {
                               const Tensor& av = t.value(ia);
                               const Tensor& hv = t.value(ih);
                               Tensor* ga = t.grad_slot(ia);
                               Tensor* gh = t.grad_slot(ih);
                               for (std::size_t b = 0; b < batch; ++b) {
                                 const double* gr = g.raw() + b * width;
                                 for (std::size_t s = 0; s < steps; ++s) {
                                   const std::size_t row = (b * steps + s) * width;
                                   if (ga) {
                                     double dot = 0.0;
                                     for (std::size_t c = 0; c < width; ++c) dot += gr[c] * hv[row + c];
                                     (*ga)[b * steps + s] += dot;
                                   }
                                   if (gh) {
                                     const double w = av[b * steps + s];
                                     if (w == 0.0) continue;
                                     for (std::size_t c = 0; c < width; ++c) (*gh)[row + c] += w * gr[c];
                                   }
                                 }
                               }
                             });
}

Var weighted_nll(Var logp, std::span<const std::size_t> targets, std::span<const double> weights) {
  const Tensor& lv = logp.value();
  if (lv.rank() != 2) shape_fail("weighted_nll", lv.shape());
  const std::size_t rows = lv.dim(0), cols = lv.dim(1);
  if (targets.size() != rows || weights.size() != rows) {
    throw ShapeError("weighted_nll: " + std::to_string(targets.size()) + " targets and " +
                     std::to_string(weights.size()) + " weights for shape " + shape_string(lv.shape()));
  }
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (weights[r] == 0.0) continue;
    if (targets[r] >= cols) {
      throw DataError("weighted_nll: target " + std::to_string(targets[r]) + " out of range for " +
                      std::to_string(cols) + " classes (row " + std::to_string(r) + ")");
    }
    total -= weights[r] * lv[r * cols + targets[r]];
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  std::vector<double> wts(weights.begin(), weights.end());
  const std::size_t il = logp.id();
  return logp.tape().record("weighted_nll", Tensor::scalar(total), {il},
                            [il, cols, tgt = std::move(tgt), wts = std::move(wts)](Tape& t, const Tensor& g, const Tensor&) {
                              if (Tensor* gl = t.grad_slot(il)) {
                                for (std::size_t r = 0; r < tgt.size(); ++r) {
                                  if (wts[r] == 0.0) continue;
                                  (*gl)[r * cols + tgt[r]] -= wts[r] * g[0];
                                }
                              }
                            });
}

LstmState lstm_gates(Var preact, Var c_prev) {
  const Shape& ps = preact.shape();
  const Shape& cs = c_prev.shape();
  if (ps.size() != 2 || cs.size() != 2 || ps[0] != cs[0] || ps[1] != 4 * cs[1]) shape_fail("lstm_gates", ps, cs);
  const std::size_t hidden = cs[1];
  Var i = sigmoid(slice(preact, 0, hidden));
  Var f = sigmoid(slice(preact, hidden, 2 * hidden));
  Var g = tanh(slice(preact, 2 * hidden, 3 * hidden));
  Var o = sigmoid(slice(preact, 3 * hidden, 4 * hidden));
  Var c = add(mul(f, c_prev), mul(i, g));
  Var h = mul(o, tanh(c));
  return {h, c};
}

LstmState lstm_cell(Var x, Var h_prev, Var c_prev, const LstmWeights& w) {
  const Shape& xs = x.shape();
  const Shape& wx = w.input_weights.shape();
  const Shape& wh = w.recurrent_weights.shape();
  const Shape& hs = h_prev.shape();
  if (xs.size() != 2 || wx.size() != 2 || xs[1] != wx[0]) shape_fail("lstm_cell", xs, wx);
  if (hs.size() != 2 || wh.size() != 2 || hs[1] != wh[0] || wh[1] != wx[1] || wh[1] != 4 * hs[1]) {
    shape_fail("lstm_cell", hs, wh);
  }
  if (c_prev.shape() != hs) shape_fail("lstm_cell", hs, c_prev.shape());
  Var preact = add(add(matmul(x, w.input_weights), matmul(h_prev, w.recurrent_weights)), w.bias);
  return lstm_gates(preact, c_prev);
}

}  // namespace slu::ad
