#include "anovit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "anovit/kernels.hpp"

namespace anovit::ops {
namespace {

namespace k = anovit::kernels;

// Upper bound on scratch elements for im2col-style buffers.
constexpr std::size_t kScratchBudget = std::size_t{1} << 22;

template <typename T>
bool tracking(std::initializer_list<const Var<T>*> inputs) {
  if (!Tape<T>::active()) return false;
  for (const auto* v : inputs) {
    if (v && v->requires_grad()) return true;
  }
  return false;
}

template <typename T, typename Backward>
Var<T> emit(const char* op, NdArray<T> value, bool track, Backward&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->owned = std::move(value);
  node->op = op;
  if (track) {
    node->requires_grad = true;
    node->backward = [bw = std::forward<Backward>(backward)](Node<T>& self) { bw(self.grad); };
    Tape<T>::active()->record(node);
  }
  return Var<T>(std::move(node));
}

template <typename T>
NdArray<T>* grad_of(const Var<T>& v) {
  return v.requires_grad() ? &v.node().grad_buffer() : nullptr;
}

template <typename T>
void add_into(NdArray<T>& dst, const NdArray<T>& src) {
  k::axpy<T>(dst.size(), T{1}, src.ptr(), dst.ptr());
}

std::size_t product(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= s[i];
  return n;
}

struct ImageDims {
  std::size_t batch, height, width, channels;
};

ImageDims image_dims(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  throw DimensionError(std::string(op) + ": expected [H,W,C] or [B,H,W,C], got " + shape_str(s));
}

Shape image_shape(const Shape& like, std::size_t b, std::size_t h, std::size_t w, std::size_t c) {
  if (like.size() == 3) return {h, w, c};
  return {b, h, w, c};
}

}  // namespace

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.size() != 2 || xs.back() != ws[0]) {
    throw DimensionError("linear: x " + shape_str(xs) + " incompatible with W " + shape_str(ws));
  }
  const std::size_t din = ws[0];
  const std::size_t dout = ws[1];
  if (bias && bias->shape() != Shape{dout}) {
    throw DimensionError("linear: bias " + shape_str(bias->shape()) + " does not match W " + shape_str(ws));
  }
  const std::size_t rows = x.value().size() / din;
  Shape out_shape = xs;
  out_shape.back() = dout;
  NdArray<T> y(out_shape);
  if (bias) {
    const T* b = bias->value().ptr();
    for (std::size_t r = 0; r < rows; ++r) std::copy(b, b + dout, y.ptr() + r * dout);
  }
  k::gemm_nn<T>(rows, dout, din, x.value().ptr(), din, weight.value().ptr(), dout, y.ptr(), dout,
                bias.has_value());

  const bool track = tracking<T>({&x, &weight, bias ? &*bias : nullptr});
  return emit<T>("linear", std::move(y), track, [x, weight, bias, rows, din, dout](const NdArray<T>& g) {
    if (auto* gx = grad_of(x)) {
      k::gemm_nt<T>(rows, din, dout, g.ptr(), dout, weight.value().ptr(), dout, gx->ptr(), din, true);
    }
    if (auto* gw = grad_of(weight)) {
      k::gemm_tn<T>(din, dout, rows, x.value().ptr(), din, g.ptr(), dout, gw->ptr(), dout, true);
    }
    if (bias) {
      if (auto* gb = grad_of(*bias)) {
        for (std::size_t r = 0; r < rows; ++r) k::axpy<T>(dout, T{1}, g.ptr() + r * dout, gb->ptr());
      }
    }
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t rank = as.size();
  auto fail = [&] {
    return DimensionError("matmul: " + shape_str(as) + " x " + shape_str(bs) +
                          (transpose_b ? " (transposed)" : ""));
  };
  if (rank < 2 || bs.size() != rank) throw fail();
  for (std::size_t i = 0; i + 2 < rank; ++i) {
    if (as[i] != bs[i]) throw fail();
  }
  const std::size_t m = as[rank - 2];
  const std::size_t kk = as[rank - 1];
  const std::size_t n = transpose_b ? bs[rank - 2] : bs[rank - 1];
  const std::size_t kb = transpose_b ? bs[rank - 1] : bs[rank - 2];
  if (kk != kb) throw fail();
  const std::size_t batch = product(as, 0, rank - 2);

  Shape out_shape = as;
  out_shape[rank - 1] = n;
  NdArray<T> y(out_shape);
  for (std::size_t i = 0; i < batch; ++i) {
    const T* ap = a.value().ptr() + i * m * kk;
    const T* bp = b.value().ptr() + i * kk * n;
    T* yp = y.ptr() + i * m * n;
    if (transpose_b) k::gemm_nt<T>(m, n, kk, ap, kk, bp, kk, yp, n, false);
    else k::gemm_nn<T>(m, n, kk, ap, kk, bp, n, yp, n, false);
  }

  const bool track = tracking<T>({&a, &b});
  return emit<T>("matmul", std::move(y), track, [a, b, transpose_b, batch, m, n, kk](const NdArray<T>& g) {
    auto* ga = grad_of(a);
    auto* gb = grad_of(b);
    for (std::size_t i = 0; i < batch; ++i) {
      const T* gp = g.ptr() + i * m * n;
      const T* ap = a.value().ptr() + i * m * kk;
      const T* bp = b.value().ptr() + i * kk * n;
      if (transpose_b) {
        if (ga) k::gemm_nn<T>(m, kk, n, gp, n, bp, kk, ga->ptr() + i * m * kk, kk, true);
        if (gb) k::gemm_tn<T>(n, kk, m, gp, n, ap, kk, gb->ptr() + i * kk * n, kk, true);
      } else {
        if (ga) k::gemm_nt<T>(m, kk, n, gp, n, bp, n, ga->ptr() + i * m * kk, kk, true);
        if (gb) k::gemm_tn<T>(kk, n, m, ap, kk, gp, n, gb->ptr() + i * kk * n, n, true);
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  NdArray<T> y = a.value();
  add_into(y, b.value());
  const bool track = tracking<T>({&a, &b});
  return emit<T>("add", std::move(y), track, [a, b](const NdArray<T>& g) {
    if (auto* ga = grad_of(a)) add_into(*ga, g);
    if (auto* gb = grad_of(b)) add_into(*gb, g);
  });
}

template <typename T>
Var<T> add_trailing(const Var<T>& x, const Var<T>& y) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.rbegin(), ys.rend(), xs.rbegin())) {
    throw DimensionError("add_trailing: " + shape_str(ys) + " is not a suffix of " + shape_str(xs));
  }
  const std::size_t inner = y.value().size();
  const std::size_t outer = x.value().size() / inner;
  NdArray<T> out = x.value();
  for (std::size_t o = 0; o < outer; ++o) k::axpy<T>(inner, T{1}, y.value().ptr(), out.ptr() + o * inner);
  const bool track = tracking<T>({&x, &y});
  return emit<T>("add_trailing", std::move(out), track, [x, y, inner, outer](const NdArray<T>& g) {
    if (auto* gx = grad_of(x)) add_into(*gx, g);
    if (auto* gy = grad_of(y)) {
      for (std::size_t o = 0; o < outer; ++o) k::axpy<T>(inner, T{1}, g.ptr() + o * inner, gy->ptr());
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  NdArray<T> y = x.value();
  for (auto& v : y.data()) v *= factor;
  const bool track = tracking<T>({&x});
  return emit<T>("scale", std::move(y), track, [x, factor](const NdArray<T>& g) {
    if (auto* gx = grad_of(x)) k::axpy<T>(g.size(), factor, g.ptr(), gx->ptr());
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  const std::size_t outer = product(s, 0, axis);
  const std::size_t len = s[axis];
  const std::size_t inner = product(s, axis + 1, s.size());
  NdArray<T> y(s);
  const T* xp = x.value().ptr();
  T* yp = y.ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      T mx = xp[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xp[base + j * inner]);
      double sum = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(xp[base + j * inner] - mx);
        yp[base + j * inner] = e;
        sum += e;
      }
      const T inv = static_cast<T>(1.0 / sum);
      for (std::size_t j = 0; j < len; ++j) yp[base + j * inner] *= inv;
    }
  }
  const bool track = tracking<T>({&x});
  auto out = emit<T>("softmax", std::move(y), track, [](const NdArray<T>&) {});
  if (track) {
    out.node().backward = [x, outer, len, inner](Node<T>& node) {
      auto* gx = grad_of(x);
      if (!gx) return;
      const T* yv = node.value().ptr();
      const T* g = node.grad.ptr();
      T* gxp = gx->ptr();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = o * len * inner + i;
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j) dot += double(g[base + j * inner]) * yv[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            gxp[idx] += yv[idx] * (g[idx] - static_cast<T>(dot));
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  if (!(eps > T{0})) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: x " + shape_str(x.shape()) + " with gamma " +
                         shape_str(gamma.shape()) + " and beta " + shape_str(beta.shape()));
  }
  const std::size_t rows = x.value().size() / d;
  NdArray<T> y(x.shape());
  NdArray<T> xhat(x.shape());
  std::vector<T> rstd(rows);
  const T* xp = x.value().ptr();
  const T* gp = gamma.value().ptr();
  const T* bp = beta.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xp + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= double(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= double(d);
    const double inv = 1.0 / std::sqrt(var + double(eps));
    rstd[r] = static_cast<T>(inv);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = static_cast<T>((row[j] - mean) * inv);
      xhat[r * d + j] = h;
      y[r * d + j] = gp[j] * h + bp[j];
    }
  }
  const bool track = tracking<T>({&x, &gamma, &beta});
  return emit<T>("layer_norm", std::move(y), track,
                 [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](const NdArray<T>& g) {
    const T* gam = gamma.value().ptr();
    if (auto* gx = grad_of(x)) {
      std::vector<T> dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g.ptr() + r * d;
        const T* hr = xhat.ptr() + r * d;
        double m1 = 0.0;
        double m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dxhat[j] = gr[j] * gam[j];
          m1 += dxhat[j];
          m2 += double(dxhat[j]) * hr[j];
        }
        m1 /= double(d);
        m2 /= double(d);
        T* out = gx->ptr() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          out[j] += static_cast<T>(rstd[r] * (dxhat[j] - m1 - hr[j] * m2));
        }
      }
    }
    auto* gg = grad_of(gamma);
    auto* gb = grad_of(beta);
    if (gg || gb) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          const T gv = g[r * d + j];
          if (gg) (*gg)[j] += gv * xhat[r * d + j];
          if (gb) (*gb)[j] += gv;
        }
      }
    }
  });
}

thread_local ActivationFingerprint* ActivationFingerprint::active_ = nullptr;

ActivationFingerprint::ActivationFingerprint() : previous_(active_) { active_ = this; }
ActivationFingerprint::~ActivationFingerprint() { active_ = previous_; }

template <typename T>
Var<T> relu(const Var<T>& x) {
  NdArray<T> y = x.value();
  if (auto* fp = ActivationFingerprint::active()) {
    std::uint64_t word = 0;
    std::size_t bits = 0;
    for (T v : y.data()) {
      word = (word << 1) | (v > T{0} ? 1u : 0u);
      if (++bits == 64) {
        fp->fold(word);
        word = 0;
        bits = 0;
      }
    }
    fp->fold(word ^ (bits << 56));
  }
  // NaN passes through so a poisoned input still surfaces in the loss.
  for (auto& v : y.data()) v = (v > T{0} || v != v) ? v : T{0};
  const bool track = tracking<T>({&x});
  return emit<T>("relu", std::move(y), track, [x](const NdArray<T>& g) {
    if (auto* gx = grad_of(x)) {
      const T* xv = x.value().ptr();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] > T{0}) (*gx)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  NdArray<T> y(x.shape());
  const T* xv = x.value().ptr();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = xv[i];
    y[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  const bool track = tracking<T>({&x});
  return emit<T>("gelu", std::move(y), track, [x](const NdArray<T>& g) {
    if (auto* gx = grad_of(x)) {
      const T* xv = x.value().ptr();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = xv[i];
        const T t = std::tanh(kC * (v + kA * v * v * v));
        const T dt = kC * (T(1) + T(3) * kA * v * v);
        (*gx)[i] += g[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * dt);
      }
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  NdArray<T> y(x.shape());
  const T* xv = x.value().ptr();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = xv[i];
    if (v >= T{0}) {
      y[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
  const bool track = tracking<T>({&x});
  auto out = emit<T>("sigmoid", std::move(y), track, [](const NdArray<T>&) {});
  if (track) {
    out.node().backward = [x](Node<T>& node) {
      if (auto* gx = grad_of(x)) {
        const T* yv = node.value().ptr();
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
          (*gx)[i] += node.grad[i] * yv[i] * (T(1) - yv[i]);
        }
      }
    };
  }
  return out;
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw DimensionError("slice: [" + std::to_string(start) + ", +" + std::to_string(length) +
                         ") on axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  const std::size_t outer = product(s, 0, axis);
  const std::size_t inner = product(s, axis + 1, s.size());
  const std::size_t src_len = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  NdArray<T> y(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = x.value().ptr() + (o * src_len + start) * inner;
    std::copy(src, src + length * inner, y.ptr() + o * length * inner);
  }
  const bool track = tracking<T>({&x});
  return emit<T>("slice", std::move(y), track, [x, outer, inner, src_len, start, length](const NdArray<T>& g) {
    if (auto* gx = grad_of(x)) {
      for (std::size_t o = 0; o < outer; ++o) {
        k::axpy<T>(length * inner, T{1}, g.ptr() + o * length * inner,
                   gx->ptr() + (o * src_len + start) * inner);
      }
    }
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    lens.push_back(s[axis]);
    total += s[axis];
  }
  const std::size_t outer = product(first, 0, axis);
  const std::size_t inner = product(first, axis + 1, first.size());
  Shape out_shape = first;
  out_shape[axis] = total;
  NdArray<T> y(out_shape);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const std::size_t len = lens[pi];
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = parts[pi].value().ptr() + o * len * inner;
      std::copy(src, src + len * inner, y.ptr() + (o * total + offset) * inner);
    }
    offset += len;
  }
  bool track = false;
  if (Tape<T>::active()) {
    for (const auto& p : parts) track = track || p.requires_grad();
  }
  return emit<T>("concat", std::move(y), track, [parts, lens, outer, inner, total](const NdArray<T>& g) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const std::size_t len = lens[pi];
      if (auto* gp = grad_of(parts[pi])) {
        for (std::size_t o = 0; o < outer; ++o) {
          k::axpy<T>(len * inner, T{1}, g.ptr() + (o * total + off) * inner, gp->ptr() + o * len * inner);
        }
      }
      off += len;
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  NdArray<T> y = x.value().reshaped(std::move(shape));
  const bool track = tracking<T>({&x});
  return emit<T>("reshape", std::move(y), track, [x](const NdArray<T>& g) {
    if (auto* gx = grad_of(x)) k::axpy<T>(g.size(), T{1}, g.ptr(), gx->ptr());
  });
}

template <typename T>
Var<T> prepend_row(const Var<T>& row, const Var<T>& x) {
  const Shape& xs = x.shape();
  if (xs.size() < 2 || row.shape() != Shape{xs.back()}) {
    throw DimensionError("prepend_row: row " + shape_str(row.shape()) + " into " + shape_str(xs));
  }
  const std::size_t d = xs.back();
  const std::size_t n = xs[xs.size() - 2];
  const std::size_t batch = x.value().size() / (n * d);
  Shape out_shape = xs;
  out_shape[xs.size() - 2] = n + 1;
  NdArray<T> y(out_shape);
  for (std::size_t b = 0; b < batch; ++b) {
    T* dst = y.ptr() + b * (n + 1) * d;
    std::copy(row.value().ptr(), row.value().ptr() + d, dst);
    const T* src = x.value().ptr() + b * n * d;
    std::copy(src, src + n * d, dst + d);
  }
  const bool track = tracking<T>({&row, &x});
  return emit<T>("prepend_row", std::move(y), track, [row, x, batch, n, d](const NdArray<T>& g) {
    auto* gr = grad_of(row);
    auto* gx = grad_of(x);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* src = g.ptr() + b * (n + 1) * d;
      if (gr) k::axpy<T>(d, T{1}, src, gr->ptr());
      if (gx) k::axpy<T>(n * d, T{1}, src + d, gx->ptr() + b * n * d);
    }
  });
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (kernel == 0 || stride == 0) throw GeometryError("conv2d: kernel and stride must be positive");
  const long long span = static_cast<long long>(in) + 2LL * static_cast<long long>(padding) -
                         static_cast<long long>(kernel);
  if (span < 0) {
    throw GeometryError("conv2d: kernel " + std::to_string(kernel) + " exceeds padded input " +
                        std::to_string(in + 2 * padding));
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

std::size_t transposed_conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                       std::size_t padding) {
  if (stride == 0 || kernel < stride) {
    throw GeometryError("transposed_conv2d: kernel " + std::to_string(kernel) + " must be >= stride " +
                        std::to_string(stride));
  }
  if (padding >= kernel) {
    throw GeometryError("transposed_conv2d: padding " + std::to_string(padding) + " must be < kernel " +
                        std::to_string(kernel));
  }
  const long long out = (static_cast<long long>(in) - 1) * static_cast<long long>(stride) -
                        2LL * static_cast<long long>(padding) + static_cast<long long>(kernel);
  if (out < 1) {
    throw GeometryError("transposed_conv2d: non-positive output extent " + std::to_string(out));
  }
  return static_cast<std::size_t>(out);
}

namespace {

struct ConvGeometry {
  ImageDims in;
  std::size_t kernel, stride, padding, out_h, out_w, out_channels;
};

// Fills rows [r0, r1) of the im2col matrix; row = (b, oy, ox) over the output
// grid, columns = (ky, kx, ci).
template <typename T>
void im2col(const ConvGeometry& g, const T* x, std::size_t r0, std::size_t r1, T* cols) {
  const std::size_t ci = g.in.channels;
  const std::size_t kcols = g.kernel * g.kernel * ci;
  for (std::size_t r = r0; r < r1; ++r) {
    const std::size_t b = r / (g.out_h * g.out_w);
    const std::size_t oy = (r / g.out_w) % g.out_h;
    const std::size_t ox = r % g.out_w;
    T* dst = cols + (r - r0) * kcols;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      const long long iy = static_cast<long long>(oy * g.stride + ky) - static_cast<long long>(g.padding);
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const long long ix = static_cast<long long>(ox * g.stride + kx) - static_cast<long long>(g.padding);
        T* cell = dst + (ky * g.kernel + kx) * ci;
        if (iy < 0 || ix < 0 || iy >= static_cast<long long>(g.in.height) ||
            ix >= static_cast<long long>(g.in.width)) {
          std::fill(cell, cell + ci, T{0});
        } else {
          const T* src = x + ((b * g.in.height + iy) * g.in.width + ix) * ci;
          std::copy(src, src + ci, cell);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, std::size_t r0, std::size_t r1, T* dx) {
  const std::size_t ci = g.in.channels;
  const std::size_t kcols = g.kernel * g.kernel * ci;
  for (std::size_t r = r0; r < r1; ++r) {
    const std::size_t b = r / (g.out_h * g.out_w);
    const std::size_t oy = (r / g.out_w) % g.out_h;
    const std::size_t ox = r % g.out_w;
    const T* src = cols + (r - r0) * kcols;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      const long long iy = static_cast<long long>(oy * g.stride + ky) - static_cast<long long>(g.padding);
      if (iy < 0 || iy >= static_cast<long long>(g.in.height)) continue;
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const long long ix = static_cast<long long>(ox * g.stride + kx) - static_cast<long long>(g.padding);
        if (ix < 0 || ix >= static_cast<long long>(g.in.width)) continue;
        T* dst = dx + ((b * g.in.height + iy) * g.in.width + ix) * ci;
        const T* cell = src + (ky * g.kernel + kx) * ci;
        for (std::size_t c = 0; c < ci; ++c) dst[c] += cell[c];
      }
    }
  }
}

void check_kernel(const Shape& ws, std::size_t in_channels, const char* op) {
  if (ws.size() != 4 || ws[0] != ws[1] || ws[2] != in_channels) {
    throw DimensionError(std::string(op) + ": kernel " + shape_str(ws) + " incompatible with " +
                         std::to_string(in_channels) + " input channels (expected [K,K,Cin,Cout])");
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, std::size_t stride, std::size_t padding) {
  ConvGeometry g{};
  g.in = image_dims(x.shape(), "conv2d");
  check_kernel(weight.shape(), g.in.channels, "conv2d");
  g.kernel = weight.shape()[0];
  g.stride = stride;
  g.padding = padding;
  g.out_h = conv_out_extent(g.in.height, g.kernel, stride, padding);
  g.out_w = conv_out_extent(g.in.width, g.kernel, stride, padding);
  g.out_channels = weight.shape()[3];

  const std::size_t co = g.out_channels;
  const std::size_t kcols = g.kernel * g.kernel * g.in.channels;
  const std::size_t rows = g.in.batch * g.out_h * g.out_w;
  const bool pointwise = g.kernel == 1 && stride == 1 && padding == 0;
  const std::size_t chunk = std::max<std::size_t>(1, kScratchBudget / kcols);

  NdArray<T> y(image_shape(x.shape(), g.in.batch, g.out_h, g.out_w, co));
  const T* w = weight.value().ptr();
  if (pointwise) {
    k::gemm_nn<T>(rows, co, kcols, x.value().ptr(), kcols, w, co, y.ptr(), co, false);
  } else {
    std::vector<T> cols;
    for (std::size_t r0 = 0; r0 < rows; r0 += chunk) {
      const std::size_t r1 = std::min(rows, r0 + chunk);
      cols.resize((r1 - r0) * kcols);
      im2col(g, x.value().ptr(), r0, r1, cols.data());
      k::gemm_nn<T>(r1 - r0, co, kcols, cols.data(), kcols, w, co, y.ptr() + r0 * co, co, false);
    }
  }

  const bool track = tracking<T>({&x, &weight});
  return emit<T>("conv2d", std::move(y), track, [x, weight, g, rows, kcols, chunk, pointwise](const NdArray<T>& grad) {
    auto* gx = grad_of(x);
    auto* gw = grad_of(weight);
    const std::size_t co = g.out_channels;
    const T* w = weight.value().ptr();
    if (pointwise) {
      if (gw) k::gemm_tn<T>(kcols, co, rows, x.value().ptr(), kcols, grad.ptr(), co, gw->ptr(), co, true);
      if (gx) k::gemm_nt<T>(rows, kcols, co, grad.ptr(), co, w, co, gx->ptr(), kcols, true);
      return;
    }
    std::vector<T> cols;
    for (std::size_t r0 = 0; r0 < rows; r0 += chunk) {
      const std::size_t r1 = std::min(rows, r0 + chunk);
      cols.resize((r1 - r0) * kcols);
      const T* gp = grad.ptr() + r0 * co;
      if (gw) {
        im2col(g, x.value().ptr(), r0, r1, cols.data());
        k::gemm_tn<T>(kcols, co, r1 - r0, cols.data(), kcols, gp, co, gw->ptr(), co, true);
      }
      if (gx) {
        k::gemm_nt<T>(r1 - r0, kcols, co, gp, co, w, co, cols.data(), kcols, false);
        col2im_add(g, cols.data(), r0, r1, gx->ptr());
      }
    }
  });
}

namespace {

// [K, K, Cin, Cout] -> [Cin, K*K*Cout]
template <typename T>
std::vector<T> tap_major_weights(const NdArray<T>& w) {
  const std::size_t kk = w.dim(0) * w.dim(1);
  const std::size_t ci = w.dim(2);
  const std::size_t co = w.dim(3);
  std::vector<T> out(ci * kk * co);
  for (std::size_t t = 0; t < kk; ++t) {
    for (std::size_t c = 0; c < ci; ++c) {
      const T* src = w.ptr() + (t * ci + c) * co;
      std::copy(src, src + co, out.data() + c * kk * co + t * co);
    }
  }
  return out;
}

}  // namespace

template <typename T>
Var<T> transposed_conv2d(const Var<T>& x, const Var<T>& weight, std::size_t stride, std::size_t padding) {
  const ImageDims in = image_dims(x.shape(), "transposed_conv2d");
  check_kernel(weight.shape(), in.channels, "transposed_conv2d");
  const std::size_t kernel = weight.shape()[0];
  const std::size_t co = weight.shape()[3];
  const std::size_t out_h = transposed_conv_out_extent(in.height, kernel, stride, padding);
  const std::size_t out_w = transposed_conv_out_extent(in.width, kernel, stride, padding);
  const std::size_t ci = in.channels;
  const std::size_t taps = kernel * kernel;
  const std::size_t ncols = taps * co;
  const std::size_t rows = in.batch * in.height * in.width;
  const std::size_t chunk = std::max<std::size_t>(1, kScratchBudget / ncols);

  // Visits every (input pixel, tap) pair that lands inside the output.
  auto for_each_tap = [=](std::size_t r, auto&& fn) {
    const std::size_t b = r / (in.height * in.width);
    const std::size_t iy = (r / in.width) % in.height;
    const std::size_t ix = r % in.width;
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      const long long oy = static_cast<long long>(iy * stride + ky) - static_cast<long long>(padding);
      if (oy < 0 || oy >= static_cast<long long>(out_h)) continue;
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const long long ox = static_cast<long long>(ix * stride + kx) - static_cast<long long>(padding);
        if (ox < 0 || ox >= static_cast<long long>(out_w)) continue;
        fn(ky * kernel + kx, ((b * out_h + oy) * out_w + ox) * co);
      }
    }
  };

  NdArray<T> y(image_shape(x.shape(), in.batch, out_h, out_w, co));
  {
    const std::vector<T> wr = tap_major_weights(weight.value());
    std::vector<T> cols;
    for (std::size_t r0 = 0; r0 < rows; r0 += chunk) {
      const std::size_t r1 = std::min(rows, r0 + chunk);
      cols.resize((r1 - r0) * ncols);
      k::gemm_nn<T>(r1 - r0, ncols, ci, x.value().ptr() + r0 * ci, ci, wr.data(), ncols, cols.data(), ncols, false);
      for (std::size_t r = r0; r < r1; ++r) {
        const T* src = cols.data() + (r - r0) * ncols;
        for_each_tap(r, [&](std::size_t tap, std::size_t out_off) {
          T* dst = y.ptr() + out_off;
          const T* cell = src + tap * co;
          for (std::size_t c = 0; c < co; ++c) dst[c] += cell[c];
        });
      }
    }
  }

  const bool track = tracking<T>({&x, &weight});
  return emit<T>("transposed_conv2d", std::move(y), track,
                 [x, weight, for_each_tap, rows, chunk, ci, co, ncols, taps](const NdArray<T>& grad) {
    auto* gx = grad_of(x);
    auto* gw = grad_of(weight);
    const std::vector<T> wr = tap_major_weights(weight.value());
    std::vector<T> gwr(gw ? ci * ncols : 0, T{0});
    std::vector<T> dcols;
    for (std::size_t r0 = 0; r0 < rows; r0 += chunk) {
      const std::size_t r1 = std::min(rows, r0 + chunk);
      dcols.assign((r1 - r0) * ncols, T{0});
      for (std::size_t r = r0; r < r1; ++r) {
        T* dst = dcols.data() + (r - r0) * ncols;
        for_each_tap(r, [&](std::size_t tap, std::size_t out_off) {
          std::copy(grad.ptr() + out_off, grad.ptr() + out_off + co, dst + tap * co);
        });
      }
      if (gx) k::gemm_nt<T>(r1 - r0, ci, ncols, dcols.data(), ncols, wr.data(), ncols, gx->ptr() + r0 * ci, ci, true);
      if (gw) k::gemm_tn<T>(ci, ncols, r1 - r0, x.value().ptr() + r0 * ci, ci, dcols.data(), ncols, gwr.data(), ncols, true);
    }
    if (gw) {
      for (std::size_t t = 0; t < taps; ++t) {
        for (std::size_t c = 0; c < ci; ++c) {
          k::axpy<T>(co, T{1}, gwr.data() + c * ncols + t * co, gw->ptr() + (t * ci + c) * co);
        }
      }
    }
  });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t target_h, std::size_t target_w) {
  const ImageDims in = image_dims(x.shape(), "upsample_nearest");
  if (target_h < in.height || target_w < in.width) {
    throw GeometryError("upsample_nearest: target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                        " smaller than input " + std::to_string(in.height) + "x" + std::to_string(in.width));
  }
  const std::size_t c = in.channels;
  std::vector<std::size_t> src_y(target_h), src_x(target_w);
  for (std::size_t o = 0; o < target_h; ++o) src_y[o] = o * in.height / target_h;
  for (std::size_t o = 0; o < target_w; ++o) src_x[o] = o * in.width / target_w;

  NdArray<T> y(image_shape(x.shape(), in.batch, target_h, target_w, c));
  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::size_t oy = 0; oy < target_h; ++oy) {
      for (std::size_t ox = 0; ox < target_w; ++ox) {
        const T* src = x.value().ptr() + ((b * in.height + src_y[oy]) * in.width + src_x[ox]) * c;
        std::copy(src, src + c, y.ptr() + ((b * target_h + oy) * target_w + ox) * c);
      }
    }
  }
  const bool track = tracking<T>({&x});
  return emit<T>("upsample_nearest", std::move(y), track,
                 [x, in, target_h, target_w, src_y = std::move(src_y), src_x = std::move(src_x)](const NdArray<T>& g) {
    auto* gx = grad_of(x);
    if (!gx) return;
    const std::size_t c = in.channels;
    for (std::size_t b = 0; b < in.batch; ++b) {
      for (std::size_t oy = 0; oy < target_h; ++oy) {
        for (std::size_t ox = 0; ox < target_w; ++ox) {
          const T* src = g.ptr() + ((b * target_h + oy) * target_w + ox) * c;
          T* dst = gx->ptr() + ((b * in.height + src_y[oy]) * in.width + src_x[ox]) * c;
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  });
}

template <typename T>
Var<T> sum_squared_error(const Var<T>& x, const NdArray<T>& target, double factor) {
  require_same_shape(x.shape(), target.shape(), "sum_squared_error");
  const T* xv = x.value().ptr();
  const T* tv = target.ptr();
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = double(xv[i]) - double(tv[i]);
    acc += d * d;
  }
  NdArray<T> y = NdArray<T>::scalar(static_cast<T>(factor * acc));
  const bool track = tracking<T>({&x});
  return emit<T>("sum_squared_error", std::move(y), track, [x, target, factor](const NdArray<T>& g) {
    if (auto* gx = grad_of(x)) {
      const T s = static_cast<T>(2.0 * factor) * g[0];
      const T* xv = x.value().ptr();
      for (std::size_t i = 0; i < target.size(); ++i) (*gx)[i] += s * (xv[i] - target[i]);
    }
  });
}

template <typename T>
Var<T> sum_product(const Var<T>& x, const NdArray<T>& weights) {
  require_same_shape(x.shape(), weights.shape(), "sum_product");
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += double(x.value()[i]) * double(weights[i]);
  NdArray<T> y = NdArray<T>::scalar(static_cast<T>(acc));
  const bool track = tracking<T>({&x});
  return emit<T>("sum_product", std::move(y), track, [x, weights](const NdArray<T>& g) {
    if (auto* gx = grad_of(x)) k::axpy<T>(weights.size(), g[0], weights.ptr(), gx->ptr());
  });
}

#define ANOVIT_INSTANTIATE(T)                                                                        \
  template Var<T> linear(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&);              \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool);                                      \
  template Var<T> add(const Var<T>&, const Var<T>&);                                               \
  template Var<T> add_trailing(const Var<T>&, const Var<T>&);                                      \
  template Var<T> scale(const Var<T>&, T);                                                         \
  template Var<T> softmax(const Var<T>&, std::size_t);                                             \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                      \
  template Var<T> relu(const Var<T>&);                                                             \
  template Var<T> gelu(const Var<T>&);                                                             \
  template Var<T> sigmoid(const Var<T>&);                                                          \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);                     \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                                 \
  template Var<T> reshape(const Var<T>&, Shape);                                                   \
  template Var<T> prepend_row(const Var<T>&, const Var<T>&);                                       \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, std::size_t, std::size_t);                  \
  template Var<T> transposed_conv2d(const Var<T>&, const Var<T>&, std::size_t, std::size_t);       \
  template Var<T> upsample_nearest(const Var<T>&, std::size_t, std::size_t);                       \
  template Var<T> sum_squared_error(const Var<T>&, const NdArray<T>&, double);                     \
  template Var<T> sum_product(const Var<T>&, const NdArray<T>&);

ANOVIT_INSTANTIATE(float)
ANOVIT_INSTANTIATE(double)
#undef ANOVIT_INSTANTIATE

}  // namespace anovit::ops
