#include "gcml/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>
#include <thread>

namespace gcml {

namespace {

std::atomic<int> g_threads{1};

template <typename F>
void parallel_for(std::size_t n, F&& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, g_threads.load()));
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_to_string(a) + " vs " +
                      shape_to_string(b));
}

// C (M x P) += A (M x K) * B (K x P), all row-major. For every C element the
// products are added in ascending k.
template <typename T>
void gemm_acc(std::size_t M, std::size_t K, std::size_t P, const T* __restrict__ A,
              const T* __restrict__ B, T* __restrict__ C) {
  std::size_t m = 0;
  for (; m + 4 <= M; m += 4) {
    T* __restrict__ c0 = C + (m + 0) * P;
    T* __restrict__ c1 = C + (m + 1) * P;
    T* __restrict__ c2 = C + (m + 2) * P;
    T* __restrict__ c3 = C + (m + 3) * P;
    const T* a0 = A + (m + 0) * K;
    const T* a1 = A + (m + 1) * K;
    const T* a2 = A + (m + 2) * K;
    const T* a3 = A + (m + 3) * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T w0 = a0[k], w1 = a1[k], w2 = a2[k], w3 = a3[k];
      const T* __restrict__ b = B + k * P;
      for (std::size_t p = 0; p < P; ++p) {
        const T bv = b[p];
        c0[p] += w0 * bv;
        c1[p] += w1 * bv;
        c2[p] += w2 * bv;
        c3[p] += w3 * bv;
      }
    }
  }
  for (; m < M; ++m) {
    T* __restrict__ c = C + m * P;
    const T* a = A + m * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T w = a[k];
      const T* __restrict__ b = B + k * P;
      for (std::size_t p = 0; p < P; ++p) c[p] += w * b[p];
    }
  }
}

struct ConvGeom {
  std::size_t n, c, h, w, o, k, ho, wo;
  int stride, pad;
  std::size_t ckk() const { return c * k * k; }
  std::size_t plane() const { return ho * wo; }
  bool direct() const { return k == 1 && stride == 1 && pad == 0; }
};

// cols[(c*k+u)*k+v][i*wo+j] = in[c][i*s+u-p][j*s+v-p], zero outside.
template <typename T>
void im2col(const ConvGeom& g, const T* in, T* cols) {
  const auto k = static_cast<long>(g.k);
  for (std::size_t c = 0; c < g.c; ++c) {
    const T* plane = in + c * g.h * g.w;
    for (long u = 0; u < k; ++u) {
      for (long v = 0; v < k; ++v) {
        T* row = cols + ((c * g.k + u) * g.k + v) * g.plane();
        for (std::size_t i = 0; i < g.ho; ++i) {
          const long y = static_cast<long>(i) * g.stride + u - g.pad;
          T* dst = row + i * g.wo;
          if (y < 0 || y >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = plane + y * static_cast<long>(g.w);
          for (std::size_t j = 0; j < g.wo; ++j) {
            const long x = static_cast<long>(j) * g.stride + v - g.pad;
            dst[j] = (x < 0 || x >= static_cast<long>(g.w)) ? T(0) : src[x];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const ConvGeom& g, const T* cols, T* in) {
  const auto k = static_cast<long>(g.k);
  for (std::size_t c = 0; c < g.c; ++c) {
    T* plane = in + c * g.h * g.w;
    for (long u = 0; u < k; ++u) {
      for (long v = 0; v < k; ++v) {
        const T* row = cols + ((c * g.k + u) * g.k + v) * g.plane();
        for (std::size_t i = 0; i < g.ho; ++i) {
          const long y = static_cast<long>(i) * g.stride + u - g.pad;
          if (y < 0 || y >= static_cast<long>(g.h)) continue;
          T* dst = plane + y * static_cast<long>(g.w);
          const T* src = row + i * g.wo;
          for (std::size_t j = 0; j < g.wo; ++j) {
            const long x = static_cast<long>(j) * g.stride + v - g.pad;
            if (x >= 0 && x < static_cast<long>(g.w)) dst[x] += src[j];
          }
        }
      }
    }
  }
}

}  // namespace

void set_num_threads(int threads) { g_threads = std::max(1, threads); }
int num_threads() { return g_threads.load(); }

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& o) {
    for (auto& p : o.parents)
      if (p->requires_grad)
        for (std::size_t i = 0; i < o.grad.size(); ++i) p->grad[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& o) {
    auto& pa = *o.parents[0];
    auto& pb = *o.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] -= o.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& o) {
    auto& pa = *o.parents[0];
    auto& pb = *o.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i] * pb.value[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] += o.grad[i] * pa.value[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make_result<T>(a.shape(), std::move(out), {a}, [s](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] * s;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (auto v : a.data()) total += v;
  return make_result<T>(Shape{}, {total}, {a}, [](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (auto& g : p.grad) g += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  require(a.numel() > 0, "mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  return make_result<T>(x.shape(), std::move(out), {x}, [](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      if (p.value[i] > T(0)) p.grad[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    // Branch keeps exp() from overflowing for large |v|.
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T s = o.value[i];
      p.grad[i] += o.grad[i] * s * (T(1) - s);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<Tensor<T>>& bias, int stride, int pad) {
  require(input.ndim() == 4, "conv2d: input must be N x C x H x W, got " +
                                 shape_to_string(input.shape()));
  require(weight.ndim() == 4, "conv2d: weight must be O x C x k x k, got " +
                                  shape_to_string(weight.shape()));
  require(stride >= 1 && pad >= 0, "conv2d: stride must be >= 1 and pad >= 0");
  ConvGeom g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.o = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = pad;
  require(weight.dim(1) == g.c, "conv2d: weight expects " + std::to_string(weight.dim(1)) +
                                    " input channels, input has " + std::to_string(g.c));
  require(weight.dim(3) == g.k, "conv2d: kernel must be square");
  require(g.k % 2 == 1, "conv2d: kernel size must be odd");
  if (bias) {
    require(bias->ndim() == 1 && bias->dim(0) == g.o, "conv2d: bias must have length O");
  }
  const long span_h = static_cast<long>(g.h) + 2 * pad - static_cast<long>(g.k);
  const long span_w = static_cast<long>(g.w) + 2 * pad - static_cast<long>(g.k);
  require(span_h >= 0 && span_w >= 0 && span_h % stride == 0 && span_w % stride == 0,
          "conv2d: output size is not integral for input " + shape_to_string(input.shape()) +
              ", k=" + std::to_string(g.k) + ", stride=" + std::to_string(stride) +
              ", pad=" + std::to_string(pad));
  g.ho = static_cast<std::size_t>(span_h / stride + 1);
  g.wo = static_cast<std::size_t>(span_w / stride + 1);

  const std::size_t in_sz = g.c * g.h * g.w;
  const std::size_t out_sz = g.o * g.plane();
  std::vector<T> out(g.n * out_sz);
  const T* x = input.data().data();
  const T* wt = weight.data().data();
  const T* b = bias ? bias->data().data() : nullptr;

  parallel_for(g.n, [&](std::size_t n) {
    T* dst = out.data() + n * out_sz;
    for (std::size_t o = 0; o < g.o; ++o)
      std::fill(dst + o * g.plane(), dst + (o + 1) * g.plane(), b ? b[o] : T(0));
    if (g.direct()) {
      gemm_acc(g.o, g.c, g.plane(), wt, x + n * in_sz, dst);
    } else {
      std::vector<T> cols(g.ckk() * g.plane());
      im2col(g, x + n * in_sz, cols.data());
      gemm_acc(g.o, g.ckk(), g.plane(), wt, cols.data(), dst);
    }
  });

  std::vector<Tensor<T>> parents{input, weight};
  if (bias) parents.push_back(*bias);
  return make_result<T>(Shape{g.n, g.o, g.ho, g.wo}, std::move(out), std::move(parents),
                        [g, in_sz, out_sz](detail::Node<T>& node) {
    auto& pin = *node.parents[0];
    auto& pw = *node.parents[1];
    detail::Node<T>* pb = node.parents.size() > 2 ? node.parents[2].get() : nullptr;
    const T* dy = node.grad.data();

    if (pb && pb->requires_grad) {
      for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t o = 0; o < g.o; ++o) {
          T acc = 0;
          const T* row = dy + n * out_sz + o * g.plane();
          for (std::size_t p = 0; p < g.plane(); ++p) acc += row[p];
          pb->grad[o] += acc;
        }
    }

    const std::size_t ckk = g.ckk();
    std::vector<T> wt_t;  // ckk x O
    if (pin.requires_grad) {
      wt_t.resize(ckk * g.o);
      for (std::size_t o = 0; o < g.o; ++o)
        for (std::size_t q = 0; q < ckk; ++q) wt_t[q * g.o + o] = pw.value[o * ckk + q];
    }
    std::vector<T> dw_parts(pw.requires_grad ? g.n * g.o * ckk : 0, T(0));

    parallel_for(g.n, [&](std::size_t n) {
      const T* dyn = dy + n * out_sz;
      std::vector<T> cols;
      const T* colp = pin.value.data() + n * in_sz;
      if (!g.direct()) {
        cols.resize(ckk * g.plane());
        im2col(g, pin.value.data() + n * in_sz, cols.data());
        colp = cols.data();
      }
      if (pw.requires_grad) {
        std::vector<T> cols_t(g.plane() * ckk);
        for (std::size_t q = 0; q < ckk; ++q)
          for (std::size_t p = 0; p < g.plane(); ++p) cols_t[p * ckk + q] = colp[q * g.plane() + p];
        gemm_acc(g.o, g.plane(), ckk, dyn, cols_t.data(), dw_parts.data() + n * g.o * ckk);
      }
      if (pin.requires_grad) {
        std::vector<T> dcols(ckk * g.plane(), T(0));
        gemm_acc(ckk, g.o, g.plane(), wt_t.data(), dyn, dcols.data());
        T* dx = pin.grad.data() + n * in_sz;
        if (g.direct()) {
          for (std::size_t i = 0; i < in_sz; ++i) dx[i] += dcols[i];
        } else {
          col2im_acc(g, dcols.data(), dx);
        }
      }
    });

    if (pw.requires_grad) {
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* part = dw_parts.data() + n * g.o * ckk;
        for (std::size_t i = 0; i < g.o * ckk; ++i) pw.grad[i] += part[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, int window, int stride) {
  require(input.ndim() >= 3, "maxpool2d: need at least 3 axes, got " +
                                 shape_to_string(input.shape()));
  require(window == stride && window >= 1, "maxpool2d: window must equal stride");
  const std::size_t h = input.dim(input.ndim() - 2);
  const std::size_t w = input.dim(input.ndim() - 1);
  const auto s = static_cast<std::size_t>(stride);
  require(h % s == 0 && w % s == 0, "maxpool2d: spatial dims " + std::to_string(h) + "x" +
                                        std::to_string(w) + " not divisible by " +
                                        std::to_string(stride));
  const std::size_t outer = input.numel() / (h * w);
  const std::size_t ho = h / s, wo = w / s;
  Shape out_shape = input.shape();
  out_shape[out_shape.size() - 2] = ho;
  out_shape[out_shape.size() - 1] = wo;
  std::vector<T> out(outer * ho * wo);
  std::vector<std::size_t> arg(out.size());
  const T* x = input.data().data();
  for (std::size_t b = 0; b < outer; ++b) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = b * h * w + (i * s) * w + j * s;
        for (std::size_t u = 0; u < s; ++u)
          for (std::size_t v = 0; v < s; ++v) {
            const std::size_t idx = b * h * w + (i * s + u) * w + (j * s + v);
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (b * ho + i) * wo + j;
        out[o] = x[best];
        arg[o] = best;
      }
    }
  }
  return make_result<T>(std::move(out_shape), std::move(out), {input},
                        [arg = std::move(arg)](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < arg.size(); ++i) p.grad[arg[i]] += o.grad[i];
  });
}

template <typename T>
Tensor<T> global_avgpool(const Tensor<T>& input) {
  require(input.ndim() >= 2, "global_avgpool: need at least 2 axes");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t inner = input.numel() / (n * c);
  require(inner >= 1, "global_avgpool: empty spatial extent");
  std::vector<T> out(n * c);
  const T inv = T(1) / static_cast<T>(inner);
  for (std::size_t i = 0; i < n * c; ++i) {
    T acc = 0;
    const T* row = input.data().data() + i * inner;
    for (std::size_t p = 0; p < inner; ++p) acc += row[p];
    out[i] = acc * inv;
  }
  return make_result<T>(Shape{n, c}, std::move(out), {input}, [inner, inv](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T g = o.grad[i] * inv;
      T* row = p.grad.data() + i * inner;
      for (std::size_t q = 0; q < inner; ++q) row[q] += g;
    }
  });
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(input.ndim() == 2 && weight.ndim() == 2 && bias.ndim() == 1,
          "linear: expected N x Din input, Dout x Din weight, Dout bias");
  const std::size_t n = input.dim(0), din = input.dim(1), dout = weight.dim(0);
  require(weight.dim(1) == din, "linear: weight expects " + std::to_string(weight.dim(1)) +
                                    " inputs, got " + std::to_string(din));
  require(bias.dim(0) == dout, "linear: bias length mismatch");
  std::vector<T> out(n * dout);
  const T* x = input.data().data();
  const T* w = weight.data().data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < dout; ++o) {
      T acc = bias.data()[o];
      for (std::size_t i = 0; i < din; ++i) acc += w[o * din + i] * x[r * din + i];
      out[r * dout + o] = acc;
    }
  return make_result<T>(Shape{n, dout}, std::move(out), {input, weight, bias},
                        [n, din, dout](detail::Node<T>& o) {
    auto& px = *o.parents[0];
    auto& pw = *o.parents[1];
    auto& pb = *o.parents[2];
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < dout; ++k) {
        const T g = o.grad[r * dout + k];
        if (pb.requires_grad) pb.grad[k] += g;
        if (pw.requires_grad)
          for (std::size_t i = 0; i < din; ++i) pw.grad[k * din + i] += g * px.value[r * din + i];
        if (px.requires_grad)
          for (std::size_t i = 0; i < din; ++i) px.grad[r * din + i] += g * pw.value[k * din + i];
      }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormStats<T>& stats, T eps, T momentum, Mode mode) {
  require(input.ndim() >= 2, "batchnorm: need at least 2 axes");
  const std::size_t outer = input.dim(0), c = input.dim(1);
  const std::size_t inner = input.numel() / (outer * c);
  require(gamma.numel() == c && beta.numel() == c,
          "batchnorm: gamma/beta must have " + std::to_string(c) + " entries");
  const std::size_t count = outer * inner;
  const T* x = input.data().data();

  std::vector<T> mean_v(c), istd(c);
  if (mode == Mode::train) {
    require(count >= 1, "batchnorm: empty batch");
    const bool first = !stats.initialized;
    if (first) {
      stats.running_mean.assign(c, T(0));
      stats.running_var.assign(c, T(1));
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0;
      for (std::size_t b = 0; b < outer; ++b) {
        const T* row = x + (b * c + ch) * inner;
        for (std::size_t q = 0; q < inner; ++q) s += row[q];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t b = 0; b < outer; ++b) {
        const T* row = x + (b * c + ch) * inner;
        for (std::size_t q = 0; q < inner; ++q) {
          const double d = row[q] - m;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean_v[ch] = static_cast<T>(m);
      istd[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      if (first) {
        stats.running_mean[ch] = static_cast<T>(m);
        stats.running_var[ch] = static_cast<T>(unbiased);
      } else {
        stats.running_mean[ch] = (T(1) - momentum) * stats.running_mean[ch] + momentum * static_cast<T>(m);
        stats.running_var[ch] =
            (T(1) - momentum) * stats.running_var[ch] + momentum * static_cast<T>(unbiased);
      }
    }
    stats.initialized = true;
  } else {
    if (!stats.initialized) {
      throw std::logic_error("batchnorm: eval mode requested before running statistics exist");
    }
    require(stats.running_mean.size() == c, "batchnorm: running statistics have wrong length");
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean_v[ch] = stats.running_mean[ch];
      istd[ch] = T(1) / std::sqrt(stats.running_var[ch] + eps);
    }
  }

  std::vector<T> out(input.numel());
  std::vector<T> xhat(input.numel());
  for (std::size_t b = 0; b < outer; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * inner;
      const T gm = gamma.data()[ch], bt = beta.data()[ch];
      for (std::size_t q = 0; q < inner; ++q) {
        const T xh = (x[base + q] - mean_v[ch]) * istd[ch];
        xhat[base + q] = xh;
        out[base + q] = gm * xh + bt;
      }
    }

  return make_result<T>(input.shape(), std::move(out), {input, gamma, beta},
                        [outer, c, inner, count, mode, istd = std::move(istd),
                         xhat = std::move(xhat)](detail::Node<T>& o) {
    auto& px = *o.parents[0];
    auto& pg = *o.parents[1];
    auto& pbt = *o.parents[2];
    for (std::size_t ch = 0; ch < c; ++ch) {
      T sum_dy = 0, sum_dy_xh = 0;
      for (std::size_t b = 0; b < outer; ++b) {
        const std::size_t base = (b * c + ch) * inner;
        for (std::size_t q = 0; q < inner; ++q) {
          sum_dy += o.grad[base + q];
          sum_dy_xh += o.grad[base + q] * xhat[base + q];
        }
      }
      if (pg.requires_grad) pg.grad[ch] += sum_dy_xh;
      if (pbt.requires_grad) pbt.grad[ch] += sum_dy;
      if (!px.requires_grad) continue;
      const T gm = pg.value[ch];
      if (mode == Mode::train) {
        const T m = static_cast<T>(count);
        const T k = gm * istd[ch] / m;
        for (std::size_t b = 0; b < outer; ++b) {
          const std::size_t base = (b * c + ch) * inner;
          for (std::size_t q = 0; q < inner; ++q)
            px.grad[base + q] += k * (m * o.grad[base + q] - sum_dy - xhat[base + q] * sum_dy_xh);
        }
      } else {
        const T k = gm * istd[ch];
        for (std::size_t b = 0; b < outer; ++b) {
          const std::size_t base = (b * c + ch) * inner;
          for (std::size_t q = 0; q < inner; ++q) px.grad[base + q] += k * o.grad[base + q];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses and indexing

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require(logits.ndim() == 2, "cross_entropy: logits must be N x C");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  require(labels.size() == n, "cross_entropy: need one label per row");
  require(n > 0, "cross_entropy: empty batch");
  std::vector<T> prob(n * c);
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const int lab = labels[r];
    if (lab < 0 || static_cast<std::size_t>(lab) >= c) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(lab) + " outside [0, " +
                              std::to_string(c) + ")");
    }
    const T* z = logits.data().data() + r * c;
    const T mx = *std::max_element(z, z + c);
    T se = 0;
    for (std::size_t k = 0; k < c; ++k) se += std::exp(z[k] - mx);
    const T lse = mx + std::log(se);
    total += lse - z[lab];
    for (std::size_t k = 0; k < c; ++k) prob[r * c + k] = std::exp(z[k] - lse);
  }
  std::vector<int> labs(labels.begin(), labels.end());
  return make_result<T>(Shape{}, {total / static_cast<T>(n)}, {logits},
                        [n, c, prob = std::move(prob), labs = std::move(labs)](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    const T g = o.grad[0] / static_cast<T>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < c; ++k) {
        const T onehot = static_cast<int>(k) == labs[r] ? T(1) : T(0);
        p.grad[r * c + k] += g * (prob[r * c + k] - onehot);
      }
  });
}

template <typename T>
Tensor<T> gather(const Tensor<T>& input, std::span<const std::size_t> index, Shape out_shape) {
  require(shape_numel(out_shape) == index.size(), "gather: index count does not match shape");
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= input.numel()) throw std::out_of_range("gather: index out of range");
    out[i] = input.data()[index[i]];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result<T>(std::move(out_shape), std::move(out), {input},
                        [idx = std::move(idx)](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t i = 0; i < idx.size(); ++i) p.grad[idx[i]] += o.grad[i];
  });
}

template <typename T>
Tensor<T> select_rows(const Tensor<T>& input, std::span<const std::size_t> rows) {
  require(input.ndim() == 2, "select_rows: input must be N x D");
  const std::size_t d = input.dim(1);
  std::vector<std::size_t> idx;
  idx.reserve(rows.size() * d);
  for (auto r : rows) {
    if (r >= input.dim(0)) throw std::out_of_range("select_rows: row out of range");
    for (std::size_t k = 0; k < d; ++k) idx.push_back(r * d + k);
  }
  return gather(input, idx, Shape{rows.size(), d});
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& input) {
  require(input.ndim() == 2, "l2_normalize_rows: input must be N x D");
  const std::size_t n = input.dim(0), d = input.dim(1);
  std::vector<T> out(input.numel(), T(0));
  std::vector<T> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    T ss = 0;
    for (std::size_t k = 0; k < d; ++k) ss += input.data()[r * d + k] * input.data()[r * d + k];
    norms[r] = std::sqrt(ss);
    if (norms[r] > T(0))
      for (std::size_t k = 0; k < d; ++k) out[r * d + k] = input.data()[r * d + k] / norms[r];
  }
  return make_result<T>(input.shape(), std::move(out), {input},
                        [n, d, norms = std::move(norms)](detail::Node<T>& o) {
    auto& p = *o.parents[0];
    for (std::size_t r = 0; r < n; ++r) {
      if (norms[r] <= T(0)) continue;
      T dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += o.value[r * d + k] * o.grad[r * d + k];
      for (std::size_t k = 0; k < d; ++k)
        p.grad[r * d + k] += (o.grad[r * d + k] - o.value[r * d + k] * dot) / norms[r];
    }
  });
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
  require(x.ndim() >= 2 && s.ndim() == 2 && s.dim(0) == x.dim(0) && s.dim(1) == x.dim(1),
          "scale_channels: expected x N x C x ... and s N x C, got " + shape_to_string(x.shape()) +
              " and " + shape_to_string(s.shape()));
  const std::size_t nc = s.numel();
  const std::size_t inner = x.numel() / nc;
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < nc; ++i) {
    const T a = s.data()[i];
    for (std::size_t q = 0; q < inner; ++q) out[i * inner + q] = a * x.data()[i * inner + q];
  }
  return make_result<T>(x.shape(), std::move(out), {x, s}, [nc, inner](detail::Node<T>& o) {
    auto& px = *o.parents[0];
    auto& ps = *o.parents[1];
    for (std::size_t i = 0; i < nc; ++i) {
      const T a = ps.value[i];
      T acc = 0;
      for (std::size_t q = 0; q < inner; ++q) {
        const std::size_t j = i * inner + q;
        if (px.requires_grad) px.grad[j] += a * o.grad[j];
        acc += px.value[j] * o.grad[j];
      }
      if (ps.requires_grad) ps.grad[i] += acc;
    }
  });
}

#define GCML_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,                              \
                            const std::optional<Tensor<T>>&, int, int);                      \
  template Tensor<T> maxpool2d(const Tensor<T>&, int, int);                                  \
  template Tensor<T> global_avgpool(const Tensor<T>&);                                       \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> batchnorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                               BatchNormStats<T>&, T, T, Mode);                              \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                  \
  template Tensor<T> gather(const Tensor<T>&, std::span<const std::size_t>, Shape);          \
  template Tensor<T> select_rows(const Tensor<T>&, std::span<const std::size_t>);            \
  template Tensor<T> l2_normalize_rows(const Tensor<T>&);                                    \
  template Tensor<T> scale_channels(const Tensor<T>&, const Tensor<T>&);

GCML_INSTANTIATE_OPS(float)
GCML_INSTANTIATE_OPS(double)

}  // namespace gcml
