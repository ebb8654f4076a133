#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "fmpestf/autodiff.hpp"
#include "fmpestf/errors.hpp"

namespace fmpestf::ops {
namespace {

// Dot product with four interleaved partial sums so the loop vectorizes.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("operation on an empty Var");
  return *a.tape();
}

Tape& common_tape(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (&tape_of(b) != &t) throw ContractError("operands recorded on different tapes");
  return t;
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_string(v.shape()));
  }
}

bool is_suffix(const Shape& shorter, const Shape& longer) {
  if (shorter.size() > longer.size()) return false;
  return std::equal(shorter.begin(), shorter.end(), longer.end() - shorter.size());
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return a;
  if (a.size() >= b.size() && is_suffix(b, a)) return a;
  if (b.size() > a.size() && is_suffix(a, b)) return b;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " +
                       shape_string(b));
}

// Axis split into (outer, length, inner) extents for row-major traversal.
struct AxisExtent {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisExtent axis_extent(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_string(shape));
  }
  AxisExtent e;
  for (std::size_t i = 0; i < axis; ++i) e.outer *= shape[i];
  e.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) e.inner *= shape[i];
  return e;
}

template <typename Forward, typename Derivative>
Var unary(const char* op, Var a, Forward f, Derivative df) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return tape.record(op, std::move(out), {a}, [a, df](Tape& t, const Tensor& g) {
    const Tensor& x = a.value();
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i]);
  });
}

}  // namespace

Var elementwise(ElementwiseKind kind, Var a, Var b) {
  switch (kind) {
    case ElementwiseKind::kAdd: return add(a, b);
    case ElementwiseKind::kSubtract: return sub(a, b);
    case ElementwiseKind::kHadamard: return mul(a, b);
    case ElementwiseKind::kSigmoid: return sigmoid(a);
    case ElementwiseKind::kTanh: return tanh(a);
    case ElementwiseKind::kRelu: return relu(a);
    case ElementwiseKind::kExp: return exp(a);
  }
  throw ContractError("unknown elementwise kind");
}

namespace {

enum class BinaryKind { kAdd, kSub, kMul };

Var binary(BinaryKind kind, Var a, Var b) {
  static constexpr const char* kNames[] = {"add", "sub", "mul"};
  const char* name = kNames[static_cast<int>(kind)];
  Tape& tape = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Shape shape = broadcast_shape(x.shape(), y.shape(), name);
  Tensor out(shape);
  const std::size_t nx = x.size();
  const std::size_t ny = y.size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = x[i % nx];
    const double v = y[i % ny];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = u + v; break;
      case BinaryKind::kSub: out[i] = u - v; break;
      case BinaryKind::kMul: out[i] = u * v; break;
    }
  }
  return tape.record(name, std::move(out), {a, b}, [a, b, kind](Tape& t, const Tensor& g) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    const std::size_t nx = x.size();
    const std::size_t ny = y.size();
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i % nx] += kind == BinaryKind::kMul ? g[i] * y[i % ny] : g[i];
      }
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        switch (kind) {
          case BinaryKind::kAdd: gb[i % ny] += g[i]; break;
          case BinaryKind::kSub: gb[i % ny] -= g[i]; break;
          case BinaryKind::kMul: gb[i % ny] += g[i] * x[i % nx]; break;
        }
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(BinaryKind::kAdd, a, b); }
Var sub(Var a, Var b) { return binary(BinaryKind::kSub, a, b); }
Var mul(Var a, Var b) { return binary(BinaryKind::kMul, a, b); }

Var sigmoid(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  Tensor saved = out;
  return tape.record("sigmoid", std::move(out), {a},
                     [a, s = std::move(saved)](Tape& t, const Tensor& g) {
                       Tensor& ga = t.grad(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s[i] * (1.0 - s[i]);
                     });
}

Var tanh(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
  Tensor saved = out;
  return tape.record("tanh", std::move(out), {a},
                     [a, s = std::move(saved)](Tape& t, const Tensor& g) {
                       Tensor& ga = t.grad(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - s[i] * s[i]);
                     });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double v) { return v > 0 ? v : 0.0; },
      [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var scale(Var a, double factor) {
  return unary(
      "scale", a, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Var add_scalar(Var a, double shift) {
  return unary(
      "add_scalar", a, [shift](double v) { return v + shift; }, [](double) { return 1.0; });
}

Var softmax(Var a, std::size_t axis) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const AxisExtent e = axis_extent(x.shape(), axis, "softmax");
  Tensor out(x.shape());
  for (std::size_t o = 0; o < e.outer; ++o) {
    for (std::size_t in = 0; in < e.inner; ++in) {
      const std::size_t base = o * e.length * e.inner + in;
      double peak = -INFINITY;
      for (std::size_t l = 0; l < e.length; ++l) peak = std::max(peak, x[base + l * e.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < e.length; ++l) {
        const double w = std::exp(x[base + l * e.inner] - peak);
        out[base + l * e.inner] = w;
        total += w;
      }
      for (std::size_t l = 0; l < e.length; ++l) out[base + l * e.inner] /= total;
    }
  }
  Tensor saved = out;
  return tape.record("softmax", std::move(out), {a},
                     [a, e, y = std::move(saved)](Tape& t, const Tensor& g) {
                       Tensor& ga = t.grad(a);
                       for (std::size_t o = 0; o < e.outer; ++o) {
                         for (std::size_t in = 0; in < e.inner; ++in) {
                           const std::size_t base = o * e.length * e.inner + in;
                           double dot = 0.0;
                           for (std::size_t l = 0; l < e.length; ++l) {
                             dot += g[base + l * e.inner] * y[base + l * e.inner];
                           }
                           for (std::size_t l = 0; l < e.length; ++l) {
                             const std::size_t idx = base + l * e.inner;
                             ga[idx] += y[idx] * (g[idx] - dot);
                           }
                         }
                       }
                     });
}

Var sum(Var a, std::size_t axis) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  const AxisExtent e = axis_extent(x.shape(), axis, "sum");
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(shape, 0.0);
  for (std::size_t o = 0; o < e.outer; ++o) {
    for (std::size_t l = 0; l < e.length; ++l) {
      const double* src = x.data() + (o * e.length + l) * e.inner;
      double* dst = out.data() + o * e.inner;
      for (std::size_t in = 0; in < e.inner; ++in) dst[in] += src[in];
    }
  }
  return tape.record("sum", std::move(out), {a}, [a, e](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t o = 0; o < e.outer; ++o) {
      for (std::size_t l = 0; l < e.length; ++l) {
        double* dst = ga.data() + (o * e.length + l) * e.inner;
        const double* src = g.data() + o * e.inner;
        for (std::size_t in = 0; in < e.inner; ++in) dst[in] += src[in];
      }
    }
  });
}

Var sum_all(Var a) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.values()) total += v;
  return tape.record("sum_all", Tensor::scalar(total), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

Var matmul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    throw DimensionError("matmul: shapes " + shape_string(x.shape()) + " and " +
                         shape_string(y.shape()) + " do not agree");
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double w = x[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += w * y[p * n + j];
    }
  }
  return tape.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * y[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double w = x[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += w * g[i * n + j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  Tape& tape = tape_of(a);
  require_rank(a, 2, "transpose");
  const Tensor& x = a.value();
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  }
  return tape.record("transpose", std::move(out), {a}, [a, r, c](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tape& tape = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  return tape.record("reshape", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  Tape& tape = tape_of(parts.front());
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_string(first));
  Shape shape = first;
  shape[axis] = 0;
  for (const Var& p : parts) {
    if (&tape_of(p) != &tape) throw ContractError("concat operands on different tapes");
    Shape probe = p.shape();
    if (probe.size() != first.size()) {
      throw DimensionError("concat: " + shape_string(probe) + " vs " + shape_string(first));
    }
    shape[axis] += probe[axis];
    probe[axis] = first[axis];
    if (probe != first) {
      throw DimensionError("concat: " + shape_string(p.shape()) + " vs " + shape_string(first));
    }
  }
  const AxisExtent e = axis_extent(shape, axis, "concat");
  Tensor out(shape);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t len = p.shape()[axis];
    const Tensor& x = p.value();
    for (std::size_t o = 0; o < e.outer; ++o) {
      std::copy_n(x.data() + o * len * e.inner, len * e.inner,
                  out.data() + (o * e.length + offset) * e.inner);
    }
    offset += len;
  }
  return tape.record("concat", std::move(out), parts, [parts, axis, e](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : parts) {
      const std::size_t len = p.shape()[axis];
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad(p);
        for (std::size_t o = 0; o < e.outer; ++o) {
          const double* src = g.data() + (o * e.length + offset) * e.inner;
          double* dst = gp.data() + o * len * e.inner;
          for (std::size_t i = 0; i < len * e.inner; ++i) dst[i] += src[i];
        }
      }
      offset += len;
    }
  });
}

Var linear(Var x, Var weight, Var bias, std::size_t axis) {
  Tape& tape = common_tape(x, weight);
  const Tensor& in = x.value();
  const Tensor& w = weight.value();
  if (w.rank() != 2) throw DimensionError("linear: weight must be 2-D, got " + shape_string(w.shape()));
  const AxisExtent e = axis_extent(in.shape(), axis, "linear");
  const std::size_t fan_in = w.dim(1);
  const std::size_t fan_out = w.dim(0);
  if (e.length != fan_in) {
    throw DimensionError("linear: axis " + std::to_string(axis) + " of " +
                         shape_string(in.shape()) + " does not match weight " +
                         shape_string(w.shape()));
  }
  const bool has_bias = bias.valid();
  if (has_bias && (bias.shape() != Shape{fan_out})) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " vs weight " +
                         shape_string(w.shape()));
  }
  Shape shape = in.shape();
  shape[axis] = fan_out;
  Tensor out(shape, 0.0);
  for (std::size_t o = 0; o < e.outer; ++o) {
    for (std::size_t j = 0; j < fan_out; ++j) {
      double* dst = out.data() + (o * fan_out + j) * e.inner;
      if (has_bias) std::fill_n(dst, e.inner, bias.value()[j]);
      for (std::size_t i = 0; i < fan_in; ++i) {
        const double wji = w[j * fan_in + i];
        const double* src = in.data() + (o * fan_in + i) * e.inner;
        for (std::size_t k = 0; k < e.inner; ++k) dst[k] += wji * src[k];
      }
    }
  }
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return tape.record(
      "linear", std::move(out), inputs,
      [x, weight, bias, has_bias, e, fan_in, fan_out](Tape& t, const Tensor& g) {
        const Tensor& in = x.value();
        const Tensor& w = weight.value();
        const bool gx_needed = t.requires_grad(x);
        const bool gw_needed = t.requires_grad(weight);
        Tensor* gx = gx_needed ? &t.grad(x) : nullptr;
        Tensor* gw = gw_needed ? &t.grad(weight) : nullptr;
        for (std::size_t o = 0; o < e.outer; ++o) {
          for (std::size_t j = 0; j < fan_out; ++j) {
            const double* gj = g.data() + (o * fan_out + j) * e.inner;
            for (std::size_t i = 0; i < fan_in; ++i) {
              const std::size_t src_off = (o * fan_in + i) * e.inner;
              if (gx) {
                const double wji = w[j * fan_in + i];
                double* dst = gx->data() + src_off;
                for (std::size_t k = 0; k < e.inner; ++k) dst[k] += wji * gj[k];
              }
              if (gw) {
                const double* src = in.data() + src_off;
                (*gw)[j * fan_in + i] += dot(gj, src, e.inner);
              }
            }
          }
        }
        if (has_bias && t.requires_grad(bias)) {
          Tensor& gb = t.grad(bias);
          for (std::size_t o = 0; o < e.outer; ++o) {
            for (std::size_t j = 0; j < fan_out; ++j) {
              const double* gj = g.data() + (o * fan_out + j) * e.inner;
              double acc = 0.0;
              for (std::size_t k = 0; k < e.inner; ++k) acc += gj[k];
              gb[j] += acc;
            }
          }
        }
      });
}

namespace {

// Taps of a length-`len` convolution that touch at least one real input.
struct ConvTaps {
  std::ptrdiff_t pad;
  std::size_t first, last;  // [first, last)
};

ConvTaps conv_taps(std::size_t kernel, std::size_t len) {
  const auto pad = static_cast<std::ptrdiff_t>((kernel - 1) / 2);
  const auto slen = static_cast<std::ptrdiff_t>(len);
  ConvTaps taps{pad, 0, 0};
  taps.first = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, pad - slen + 1));
  taps.last = static_cast<std::size_t>(std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(kernel), pad + slen));
  return taps;
}

// col[(i, q), (n, tau)] = x[i, n, tau + q - pad], zero outside [0, len).
std::vector<double> im2col(const Tensor& in, const ConvTaps& taps) {
  const std::size_t cin = in.dim(0), nodes = in.dim(1), len = in.dim(2);
  const std::size_t used = taps.last - taps.first;
  const std::size_t width = nodes * len;
  std::vector<double> col(cin * used * width, 0.0);
  const auto slen = static_cast<std::ptrdiff_t>(len);
  for (std::size_t i = 0; i < cin; ++i) {
    for (std::size_t q = taps.first; q < taps.last; ++q) {
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(q) - taps.pad;
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(slen, slen - shift);
      double* row = col.data() + (i * used + (q - taps.first)) * width;
      for (std::size_t n = 0; n < nodes; ++n) {
        const double* src = in.data() + (i * nodes + n) * len;
        for (std::ptrdiff_t tau = lo; tau < hi; ++tau) row[n * len + tau] = src[tau + shift];
      }
    }
  }
  return col;
}

}  // namespace

Var time_conv(Var x, Var weight, Var bias) {
  Tape& tape = common_tape(x, weight);
  require_rank(x, 3, "time_conv input");
  require_rank(weight, 3, "time_conv weight");
  const Tensor& in = x.value();
  const Tensor& w = weight.value();
  const std::size_t cin = in.dim(0), nodes = in.dim(1), len = in.dim(2);
  const std::size_t cout = w.dim(0), kernel = w.dim(2);
  if (w.dim(1) != cin) {
    throw DimensionError("time_conv: input " + shape_string(in.shape()) + " vs weight " +
                         shape_string(w.shape()));
  }
  if (kernel == 0) throw DimensionError("time_conv: empty kernel");
  if (bias.shape() != Shape{cout}) {
    throw DimensionError("time_conv: bias " + shape_string(bias.shape()) + " vs weight " +
                         shape_string(w.shape()));
  }
  const ConvTaps taps = conv_taps(kernel, len);
  const std::size_t used = taps.last - taps.first;
  const std::size_t width = nodes * len;
  auto col = std::make_shared<std::vector<double>>(im2col(in, taps));
  Tensor out({cout, nodes, len});
  for (std::size_t o = 0; o < cout; ++o) {
    double* dst = out.data() + o * width;
    std::fill_n(dst, width, bias.value()[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      for (std::size_t r = 0; r < used; ++r) {
        const double wv = w[(o * cin + i) * kernel + taps.first + r];
        const double* src = col->data() + (i * used + r) * width;
        for (std::size_t p = 0; p < width; ++p) dst[p] += wv * src[p];
      }
    }
  }
  return tape.record(
      "time_conv", std::move(out), {x, weight, bias},
      [x, weight, bias, cin, cout, nodes, len, kernel, taps, col](Tape& t, const Tensor& g) {
        const Tensor& w = weight.value();
        const std::size_t used = taps.last - taps.first;
        const std::size_t width = nodes * len;
        if (t.requires_grad(weight)) {
          Tensor& gw = t.grad(weight);
          for (std::size_t o = 0; o < cout; ++o) {
            const double* go = g.data() + o * width;
            for (std::size_t i = 0; i < cin; ++i) {
              for (std::size_t r = 0; r < used; ++r) {
                const double* src = col->data() + (i * used + r) * width;
                gw[(o * cin + i) * kernel + taps.first + r] += dot(go, src, width);
              }
            }
          }
        }
        if (t.requires_grad(x)) {
          std::vector<double> gcol(cin * used * width, 0.0);
          for (std::size_t o = 0; o < cout; ++o) {
            const double* go = g.data() + o * width;
            for (std::size_t i = 0; i < cin; ++i) {
              for (std::size_t r = 0; r < used; ++r) {
                const double wv = w[(o * cin + i) * kernel + taps.first + r];
                double* dst = gcol.data() + (i * used + r) * width;
                for (std::size_t p = 0; p < width; ++p) dst[p] += wv * go[p];
              }
            }
          }
          Tensor& gx = t.grad(x);
          const auto slen = static_cast<std::ptrdiff_t>(len);
          for (std::size_t i = 0; i < cin; ++i) {
            for (std::size_t q = taps.first; q < taps.last; ++q) {
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(q) - taps.pad;
              const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
              const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(slen, slen - shift);
              const double* row = gcol.data() + (i * used + (q - taps.first)) * width;
              for (std::size_t n = 0; n < nodes; ++n) {
                double* dst = gx.data() + (i * nodes + n) * len;
                for (std::ptrdiff_t tau = lo; tau < hi; ++tau) dst[tau + shift] += row[n * len + tau];
              }
            }
          }
        }
        if (t.requires_grad(bias)) {
          Tensor& gb = t.grad(bias);
          for (std::size_t o = 0; o < cout; ++o) {
            double acc = 0.0;
            for (std::size_t p = 0; p < width; ++p) acc += g[o * width + p];
            gb[o] += acc;
          }
        }
      });
}

namespace {

// Per-node attention weights [N, t, t] for q, k of shape [C, N, t].
Tensor attention_weights(const Tensor& q, const Tensor& k) {
  const std::size_t channels = q.dim(0), nodes = q.dim(1), len = q.dim(2);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(channels));
  Tensor probs({nodes, len, len}, 0.0);
  for (std::size_t n = 0; n < nodes; ++n) {
    double* p = probs.data() + n * len * len;
    for (std::size_t c = 0; c < channels; ++c) {
      const double* qr = q.data() + (c * nodes + n) * len;
      const double* kr = k.data() + (c * nodes + n) * len;
      for (std::size_t a = 0; a < len; ++a) {
        for (std::size_t b = 0; b < len; ++b) p[a * len + b] += qr[a] * kr[b];
      }
    }
    for (std::size_t a = 0; a < len; ++a) {
      double* row = p + a * len;
      double peak = -INFINITY;
      for (std::size_t b = 0; b < len; ++b) {
        row[b] *= inv_sqrt;
        peak = std::max(peak, row[b]);
      }
      double total = 0.0;
      for (std::size_t b = 0; b < len; ++b) {
        row[b] = std::exp(row[b] - peak);
        total += row[b];
      }
      for (std::size_t b = 0; b < len; ++b) row[b] /= total;
    }
  }
  return probs;
}

}  // namespace

Tensor time_attention_weights(const Tensor& q, const Tensor& k) {
  if (q.rank() != 3 || q.shape() != k.shape()) {
    throw DimensionError("attention: query " + shape_string(q.shape()) + " vs key " +
                         shape_string(k.shape()));
  }
  return attention_weights(q, k);
}

Var time_attention(Var q, Var k, Var v) {
  Tape& tape = common_tape(q, k);
  common_tape(q, v);
  if (q.shape().size() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  const Tensor& vv = v.value();
  const std::size_t channels = vv.dim(0), nodes = vv.dim(1), len = vv.dim(2);
  Tensor probs = attention_weights(q.value(), k.value());
  Tensor out(vv.shape(), 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t n = 0; n < nodes; ++n) {
      const double* p = probs.data() + n * len * len;
      const double* vr = vv.data() + (c * nodes + n) * len;
      double* dst = out.data() + (c * nodes + n) * len;
      for (std::size_t a = 0; a < len; ++a) {
        double acc = 0.0;
        for (std::size_t b = 0; b < len; ++b) acc += p[a * len + b] * vr[b];
        dst[a] = acc;
      }
    }
  }
  return tape.record(
      "time_attention", std::move(out), {q, k, v},
      [q, k, v, channels, nodes, len, probs = std::move(probs)](Tape& t, const Tensor& g) {
        const Tensor& qv = q.value();
        const Tensor& kv = k.value();
        const Tensor& vv = v.value();
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(channels));
        Tensor* gq = t.requires_grad(q) ? &t.grad(q) : nullptr;
        Tensor* gk = t.requires_grad(k) ? &t.grad(k) : nullptr;
        Tensor* gv = t.requires_grad(v) ? &t.grad(v) : nullptr;
        std::vector<double> dp(len * len);
        for (std::size_t n = 0; n < nodes; ++n) {
          const double* p = probs.data() + n * len * len;
          std::fill(dp.begin(), dp.end(), 0.0);
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t off = (c * nodes + n) * len;
            const double* gr = g.data() + off;
            const double* vr = vv.data() + off;
            for (std::size_t a = 0; a < len; ++a) {
              for (std::size_t b = 0; b < len; ++b) {
                dp[a * len + b] += gr[a] * vr[b];
                if (gv) (*gv)[off + b] += p[a * len + b] * gr[a];
              }
            }
          }
          // softmax backward, then the 1/sqrt(C) scaling
          for (std::size_t a = 0; a < len; ++a) {
            double dot = 0.0;
            for (std::size_t b = 0; b < len; ++b) dot += p[a * len + b] * dp[a * len + b];
            for (std::size_t b = 0; b < len; ++b) {
              dp[a * len + b] = p[a * len + b] * (dp[a * len + b] - dot) * inv_sqrt;
            }
          }
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t off = (c * nodes + n) * len;
            for (std::size_t a = 0; a < len; ++a) {
              for (std::size_t b = 0; b < len; ++b) {
                const double ds = dp[a * len + b];
                if (gq) (*gq)[off + a] += ds * kv[off + b];
                if (gk) (*gk)[off + b] += ds * qv[off + a];
              }
            }
          }
        }
      });
}

Var take_time(Var x, std::size_t offset, std::size_t stride) {
  Tape& tape = tape_of(x);
  const Tensor& in = x.value();
  if (in.rank() == 0 || stride == 0) throw DimensionError("take_time: bad input or stride");
  const std::size_t len = in.shape().back();
  if (offset >= len) throw DimensionError("take_time: offset beyond time axis");
  const std::size_t rows = in.size() / len;
  const std::size_t taken = (len - offset + stride - 1) / stride;
  Shape shape = in.shape();
  shape.back() = taken;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < taken; ++j) out[r * taken + j] = in[r * len + offset + j * stride];
  }
  return tape.record("take_time", std::move(out), {x},
                     [x, rows, len, taken, offset, stride](Tape& t, const Tensor& g) {
                       Tensor& gx = t.grad(x);
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < taken; ++j) {
                           gx[r * len + offset + j * stride] += g[r * taken + j];
                         }
                       }
                     });
}

Var interleave_time(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  if (a.shape() != b.shape() || a.shape().empty()) {
    throw DimensionError("interleave: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const std::size_t half = x.shape().back();
  const std::size_t rows = x.size() / half;
  Shape shape = x.shape();
  shape.back() = 2 * half;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < half; ++j) {
      out[r * 2 * half + 2 * j] = x[r * half + j];
      out[r * 2 * half + 2 * j + 1] = y[r * half + j];
    }
  }
  return tape.record("interleave_time", std::move(out), {a, b},
                     [a, b, rows, half](Tape& t, const Tensor& g) {
                       if (t.requires_grad(a)) {
                         Tensor& ga = t.grad(a);
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < half; ++j) ga[r * half + j] += g[r * 2 * half + 2 * j];
                         }
                       }
                       if (t.requires_grad(b)) {
                         Tensor& gb = t.grad(b);
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < half; ++j) {
                             gb[r * half + j] += g[r * 2 * half + 2 * j + 1];
                           }
                         }
                       }
                     });
}

Var node_propagate(Var adjacency, Var h) {
  Tape& tape = common_tape(adjacency, h);
  const Tensor& adj = adjacency.value();
  const Tensor& x = h.value();
  if (adj.rank() != 2 || x.rank() != 3 || adj.dim(0) != adj.dim(1) || adj.dim(1) != x.dim(1)) {
    throw DimensionError("node_propagate: adjacency " + shape_string(adj.shape()) + " vs signal " +
                         shape_string(x.shape()));
  }
  const std::size_t channels = x.dim(0), nodes = x.dim(1), len = x.dim(2);
  Tensor out(x.shape(), 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < nodes; ++i) {
      double* dst = out.data() + (c * nodes + i) * len;
      for (std::size_t j = 0; j < nodes; ++j) {
        const double a = adj[i * nodes + j];
        if (a == 0.0) continue;
        const double* src = x.data() + (c * nodes + j) * len;
        for (std::size_t tau = 0; tau < len; ++tau) dst[tau] += a * src[tau];
      }
    }
  }
  return tape.record(
      "node_propagate", std::move(out), {adjacency, h},
      [adjacency, h, channels, nodes, len](Tape& t, const Tensor& g) {
        const Tensor& adj = adjacency.value();
        const Tensor& x = h.value();
        Tensor* ga = t.requires_grad(adjacency) ? &t.grad(adjacency) : nullptr;
        Tensor* gh = t.requires_grad(h) ? &t.grad(h) : nullptr;
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t i = 0; i < nodes; ++i) {
            const double* gi = g.data() + (c * nodes + i) * len;
            for (std::size_t j = 0; j < nodes; ++j) {
              const std::size_t off = (c * nodes + j) * len;
              if (ga) {
                double acc = 0.0;
                for (std::size_t tau = 0; tau < len; ++tau) acc += gi[tau] * x[off + tau];
                (*ga)[i * nodes + j] += acc;
              }
              if (gh) {
                const double a = adj[i * nodes + j];
                if (a == 0.0) continue;
                double* dst = gh->data() + off;
                for (std::size_t tau = 0; tau < len; ++tau) dst[tau] += a * gi[tau];
              }
            }
          }
        }
      });
}

Var topk_rows(Var a, std::size_t k) {
  Tape& tape = tape_of(a);
  require_rank(a, 2, "topk_rows");
  const Tensor& x = a.value();
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<char> keep(x.size(), 0);
  std::vector<std::size_t> order(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * cols;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [row](std::size_t i, std::size_t j) { return row[i] > row[j]; });
    for (std::size_t i = 0; i < std::min(k, cols); ++i) keep[r * cols + order[i]] = 1;
  }
  Tensor out(x.shape(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (keep[i]) out[i] = x[i];
  }
  return tape.record("topk_rows", std::move(out), {a},
                     [a, keep = std::move(keep)](Tape& t, const Tensor& g) {
                       Tensor& ga = t.grad(a);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (keep[i]) ga[i] += g[i];
                       }
                     });
}

Var row_normalize(Var a) {
  Tape& tape = tape_of(a);
  require_rank(a, 2, "row_normalize");
  const Tensor& x = a.value();
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> sums(rows, 0.0);
  Tensor out = x;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) sums[r] += x[r * cols + c];
    if (sums[r] != 0.0) {
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= sums[r];
    }
  }
  Tensor saved = out;
  return tape.record("row_normalize", std::move(out), {a},
                     [a, rows, cols, sums = std::move(sums), y = std::move(saved)](Tape& t,
                                                                                  const Tensor& g) {
                       Tensor& ga = t.grad(a);
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (sums[r] == 0.0) {
                           for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r * cols + c];
                           continue;
                         }
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
                         for (std::size_t c = 0; c < cols; ++c) {
                           ga[r * cols + c] += (g[r * cols + c] - dot) / sums[r];
                         }
                       }
                     });
}

Var gather_rows(Var table, const std::vector<std::size_t>& indices) {
  Tape& tape = tape_of(table);
  require_rank(table, 2, "gather_rows");
  const Tensor& tab = table.value();
  const std::size_t rows = tab.dim(0), width = tab.dim(1);
  Tensor out({indices.size(), width});
  for (std::size_t l = 0; l < indices.size(); ++l) {
    if (indices[l] >= rows) {
      throw IndexError("lookup index " + std::to_string(indices[l]) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(tab.data() + indices[l] * width, width, out.data() + l * width);
  }
  return tape.record("gather_rows", std::move(out), {table},
                     [table, indices, width](Tape& t, const Tensor& g) {
                       Tensor& gt = t.grad(table);
                       for (std::size_t l = 0; l < indices.size(); ++l) {
                         for (std::size_t c = 0; c < width; ++c) {
                           gt[indices[l] * width + c] += g[l * width + c];
                         }
                       }
                     });
}

Var expand_nodes(Var x, std::size_t nodes) {
  Tape& tape = tape_of(x);
  require_rank(x, 2, "expand_nodes");
  const Tensor& in = x.value();
  const std::size_t len = in.dim(0), width = in.dim(1);
  Tensor out({width, nodes, len});
  for (std::size_t c = 0; c < width; ++c) {
    for (std::size_t n = 0; n < nodes; ++n) {
      for (std::size_t tau = 0; tau < len; ++tau) out[(c * nodes + n) * len + tau] = in[tau * width + c];
    }
  }
  return tape.record("expand_nodes", std::move(out), {x},
                     [x, nodes, len, width](Tape& t, const Tensor& g) {
                       Tensor& gx = t.grad(x);
                       for (std::size_t c = 0; c < width; ++c) {
                         for (std::size_t n = 0; n < nodes; ++n) {
                           for (std::size_t tau = 0; tau < len; ++tau) {
                             gx[tau * width + c] += g[(c * nodes + n) * len + tau];
                           }
                         }
                       }
                     });
}

Var flatten_nodes(Var x) {
  Tape& tape = tape_of(x);
  require_rank(x, 3, "flatten_nodes");
  const Tensor& in = x.value();
  const std::size_t channels = in.dim(0), nodes = in.dim(1), len = in.dim(2);
  const std::size_t width = channels * len;
  Tensor out({nodes, width});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t n = 0; n < nodes; ++n) {
      std::copy_n(in.data() + (c * nodes + n) * len, len, out.data() + n * width + c * len);
    }
  }
  return tape.record("flatten_nodes", std::move(out), {x},
                     [x, channels, nodes, len, width](Tape& t, const Tensor& g) {
                       Tensor& gx = t.grad(x);
                       for (std::size_t c = 0; c < channels; ++c) {
                         for (std::size_t n = 0; n < nodes; ++n) {
                           const double* src = g.data() + n * width + c * len;
                           double* dst = gx.data() + (c * nodes + n) * len;
                           for (std::size_t tau = 0; tau < len; ++tau) dst[tau] += src[tau];
                         }
                       }
                     });
}

Var masked_abs_error_sum(Var y_hat, const Tensor& target, double threshold, double divisor) {
  Tape& tape = tape_of(y_hat);
  const Tensor& pred = y_hat.value();
  if (pred.shape() != target.shape()) {
    throw DimensionError("loss: prediction " + shape_string(pred.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  if (!(divisor > 0.0)) throw ContractError("loss divisor must be positive");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (std::abs(target[i]) > threshold) total += std::abs(pred[i] - target[i]);
  }
  return tape.record("masked_abs_error_sum", Tensor::scalar(total / divisor), {y_hat},
                     [y_hat, target, threshold, divisor](Tape& t, const Tensor& g) {
                       const Tensor& pred = y_hat.value();
                       Tensor& gp = t.grad(y_hat);
                       for (std::size_t i = 0; i < pred.size(); ++i) {
                         if (std::abs(target[i]) <= threshold) continue;
                         const double diff = pred[i] - target[i];
                         const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
                         gp[i] += g[0] * sign / divisor;
                       }
                     });
}

}  // namespace fmpestf::ops
