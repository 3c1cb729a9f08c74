#include "vidistill/ops.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <string>

#include "gemm.hpp"

namespace vidistill {

namespace detail {

void init_blas_once() {
  static std::once_flag flag;
  std::call_once(flag, [] { openblas_set_num_threads(1); });
}

}  // namespace detail

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

template <typename T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) shape_fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_rank(const char* op, const BasicTensor<T>& x, std::size_t rank, const char* name) {
  if (x.rank() != rank) {
    shape_fail(op, std::string(name) + " must be " + std::to_string(rank) + "-D, got " + shape_str(x.shape()));
  }
}

template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> data, std::vector<ImplPtr<T>> inputs,
                           std::function<void(TensorImpl<T>&)> backward) {
  for (const auto v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
  }
  auto out = BasicTensor<T>::from_data(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  const bool tracked = std::any_of(inputs.begin(), inputs.end(), [](const auto& p) { return p->requires_grad; });
  if (!tracked) return out;
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.set_requires_grad(true);
  out.impl()->node = std::move(node);
  return out;
}

int as_int(std::size_t v) { return static_cast<int>(v); }

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, pad, out_h, out_w;
};

// col has rows (c, ki, kj) and `ld` columns; this image fills out_h·out_w of them.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col, std::size_t ld) {
  const auto k = g.kernel;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * ld;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = img + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t ld, const ConvGeometry& g, T* img) {
  const auto k = g.kernel;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * ld;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = img + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          const T* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result<T>("add", a.shape(), std::move(out), {a.impl(), b.impl()},
                        [pa = a.impl(), pb = b.impl()](TensorImpl<T>& o) {
                          for (auto* p : {pa.get(), pb.get()}) {
                            if (!p->requires_grad) continue;
                            auto& g = p->ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a.impl(), b.impl()},
                        [pa = a.impl(), pb = b.impl()](TensorImpl<T>& o) {
                          if (pa->requires_grad) {
                            auto& g = pa->ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                          }
                          if (pb->requires_grad) {
                            auto& g = pb->ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a.impl(), b.impl()},
                        [pa = a.impl(), pb = b.impl()](TensorImpl<T>& o) {
                          if (pa->requires_grad) {
                            auto& g = pa->ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pb->data[i];
                          }
                          if (pb->requires_grad) {
                            auto& g = pb->ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pa->data[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return make_result<T>("scale", a.shape(), std::move(out), {a.impl()}, [pa = a.impl(), factor](TensorImpl<T>& o) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
  });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > T(0) ? v[i] : T(0);
  return make_result<T>("relu", x.shape(), std::move(out), {x.impl()}, [px = x.impl()](TensorImpl<T>& o) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (o.data[i] > T(0)) g[i] += o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-v[i]));
  return make_result<T>("sigmoid", x.shape(), std::move(out), {x.impl()}, [px = x.impl()](TensorImpl<T>& o) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.data[i] * (T(1) - o.data[i]);
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (const auto v : x.data()) acc += v;
  return make_result<T>("sum", {}, {static_cast<T>(acc)}, {x.impl()}, [px = x.impl()](TensorImpl<T>& o) {
    auto& g = px->ensure_grad();
    for (auto& gi : g) gi += o.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (const auto v : x.data()) acc += v;
  const auto n = static_cast<double>(x.numel());
  return make_result<T>("mean", {}, {static_cast<T>(acc / n)}, {x.impl()}, [px = x.impl(), n](TensorImpl<T>& o) {
    auto& g = px->ensure_grad();
    const T share = static_cast<T>(o.grad[0] / n);
    for (auto& gi : g) gi += share;
  });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank("matmul", a, 2, "lhs");
  require_rank("matmul", b, 2, "rhs");
  const auto m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) shape_fail("matmul", "inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  detail::init_blas_once();
  std::vector<T> out(m * n);
  detail::gemm(false, false, as_int(m), as_int(n), as_int(k), T(1), a.data().data(), as_int(k), b.data().data(),
               as_int(n), T(0), out.data(), as_int(n));
  return make_result<T>("matmul", {m, n}, std::move(out), {a.impl(), b.impl()},
                        [pa = a.impl(), pb = b.impl(), m, k, n](TensorImpl<T>& o) {
                          if (pa->requires_grad) {
                            detail::gemm(false, true, as_int(m), as_int(k), as_int(n), T(1), o.grad.data(), as_int(n),
                                         pb->data.data(), as_int(n), T(1), pa->ensure_grad().data(), as_int(k));
                          }
                          if (pb->requires_grad) {
                            detail::gemm(true, false, as_int(k), as_int(n), as_int(m), T(1), pa->data.data(), as_int(k),
                                         o.grad.data(), as_int(n), T(1), pb->ensure_grad().data(), as_int(n));
                          }
                        });
}

template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank("bmm", a, 3, "lhs");
  require_rank("bmm", b, 3, "rhs");
  const auto batch = a.size(0), m = a.size(1), k = a.size(2), n = b.size(2);
  if (b.size(0) != batch || b.size(1) != k) {
    shape_fail("bmm", "incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  detail::init_blas_once();
  std::vector<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    detail::gemm(false, false, as_int(m), as_int(n), as_int(k), T(1), a.data().data() + i * m * k, as_int(k),
                 b.data().data() + i * k * n, as_int(n), T(0), out.data() + i * m * n, as_int(n));
  }
  return make_result<T>(
      "bmm", {batch, m, n}, std::move(out), {a.impl(), b.impl()},
      [pa = a.impl(), pb = b.impl(), batch, m, k, n](TensorImpl<T>& o) {
        for (std::size_t i = 0; i < batch; ++i) {
          const T* g = o.grad.data() + i * m * n;
          if (pa->requires_grad) {
            detail::gemm(false, true, as_int(m), as_int(k), as_int(n), T(1), g, as_int(n), pb->data.data() + i * k * n,
                         as_int(n), T(1), pa->ensure_grad().data() + i * m * k, as_int(k));
          }
          if (pb->requires_grad) {
            detail::gemm(true, false, as_int(k), as_int(n), as_int(m), T(1), pa->data.data() + i * m * k, as_int(k), g,
                         as_int(n), T(1), pb->ensure_grad().data() + i * k * n, as_int(n));
          }
        }
      });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  require_rank("linear", x, 2, "input");
  require_rank("linear", weight, 2, "weight");
  require_rank("linear", bias, 1, "bias");
  const auto n = x.size(0), in = x.size(1), out_dim = weight.size(0);
  if (weight.size(1) != in || bias.size(0) != out_dim) {
    shape_fail("linear", "input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) + ", bias " +
                             shape_str(bias.shape()));
  }
  detail::init_blas_once();
  std::vector<T> out(n * out_dim);
  for (std::size_t r = 0; r < n; ++r) std::copy(bias.data().begin(), bias.data().end(), out.begin() + r * out_dim);
  detail::gemm(false, true, as_int(n), as_int(out_dim), as_int(in), T(1), x.data().data(), as_int(in),
               weight.data().data(), as_int(in), T(1), out.data(), as_int(out_dim));
  return make_result<T>("linear", {n, out_dim}, std::move(out), {x.impl(), weight.impl(), bias.impl()},
                        [px = x.impl(), pw = weight.impl(), pb = bias.impl(), n, in, out_dim](TensorImpl<T>& o) {
                          if (px->requires_grad) {
                            detail::gemm(false, false, as_int(n), as_int(in), as_int(out_dim), T(1), o.grad.data(),
                                         as_int(out_dim), pw->data.data(), as_int(in), T(1), px->ensure_grad().data(),
                                         as_int(in));
                          }
                          if (pw->requires_grad) {
                            detail::gemm(true, false, as_int(out_dim), as_int(in), as_int(n), T(1), o.grad.data(),
                                         as_int(out_dim), px->data.data(), as_int(in), T(1),
                                         pw->ensure_grad().data(), as_int(in));
                          }
                          if (pb->requires_grad) {
                            auto& gb = pb->ensure_grad();
                            for (std::size_t r = 0; r < n; ++r) {
                              for (std::size_t j = 0; j < out_dim; ++j) gb[j] += o.grad[r * out_dim + j];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      Conv2dOptions options) {
  require_rank("conv2d", x, 4, "input");
  require_rank("conv2d", weight, 4, "weight");
  require_rank("conv2d", bias, 1, "bias");
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const auto o_ch = weight.size(0), k = weight.size(2);
  if (weight.size(1) != c || weight.size(3) != k || bias.size(0) != o_ch) {
    shape_fail("conv2d", "input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) + ", bias " +
                             shape_str(bias.shape()));
  }
  if (options.stride == 0) shape_fail("conv2d", "stride must be positive");
  if (h + 2 * options.padding < k || w + 2 * options.padding < k) {
    shape_fail("conv2d", "kernel " + std::to_string(k) + " larger than padded input " + shape_str(x.shape()));
  }
  const ConvGeometry geo{c,
                         h,
                         w,
                         k,
                         options.stride,
                         options.padding,
                         (h + 2 * options.padding - k) / options.stride + 1,
                         (w + 2 * options.padding - k) / options.stride + 1};
  const auto plane = geo.out_h * geo.out_w;
  const auto rows = c * k * k;
  const auto cols = n * plane;
  auto col = std::make_shared<std::vector<T>>(rows * cols);
  for (std::size_t i = 0; i < n; ++i) im2col(x.data().data() + i * c * h * w, geo, col->data() + i * plane, cols);

  detail::init_blas_once();
  std::vector<T> prod(o_ch * cols);
  detail::gemm(false, false, as_int(o_ch), as_int(cols), as_int(rows), T(1), weight.data().data(), as_int(rows),
               col->data(), as_int(cols), T(0), prod.data(), as_int(cols));
  std::vector<T> out(n * o_ch * plane);
  const auto b = bias.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t oc = 0; oc < o_ch; ++oc) {
      const T* src = prod.data() + oc * cols + i * plane;
      T* dst = out.data() + (i * o_ch + oc) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b[oc];
    }
  }
  return make_result<T>(
      "conv2d", {n, o_ch, geo.out_h, geo.out_w}, std::move(out), {x.impl(), weight.impl(), bias.impl()},
      [px = x.impl(), pw = weight.impl(), pb = bias.impl(), col, geo, n, o_ch, plane, rows, cols](TensorImpl<T>& o) {
        std::vector<T> dprod(o_ch * cols);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t oc = 0; oc < o_ch; ++oc) {
            std::copy_n(o.grad.data() + (i * o_ch + oc) * plane, plane, dprod.data() + oc * cols + i * plane);
          }
        }
        if (pb->requires_grad) {
          auto& gb = pb->ensure_grad();
          for (std::size_t oc = 0; oc < o_ch; ++oc) {
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j) acc += dprod[oc * cols + j];
            gb[oc] += static_cast<T>(acc);
          }
        }
        if (pw->requires_grad) {
          detail::gemm(false, true, as_int(o_ch), as_int(rows), as_int(cols), T(1), dprod.data(), as_int(cols),
                       col->data(), as_int(cols), T(1), pw->ensure_grad().data(), as_int(rows));
        }
        if (px->requires_grad) {
          std::vector<T> dcol(rows * cols);
          detail::gemm(true, false, as_int(rows), as_int(cols), as_int(o_ch), T(1), pw->data.data(), as_int(rows),
                       dprod.data(), as_int(cols), T(0), dcol.data(), as_int(cols));
          auto& gx = px->ensure_grad();
          const auto img = geo.channels * geo.height * geo.width;
          for (std::size_t i = 0; i < n; ++i) col2im(dcol.data() + i * plane, cols, geo, gx.data() + i * img);
        }
      });
}

template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                                Conv2dOptions options) {
  require_rank("conv_transpose2d", x, 4, "input");
  require_rank("conv_transpose2d", weight, 4, "weight");
  require_rank("conv_transpose2d", bias, 1, "bias");
  const auto n = x.size(0), c_in = x.size(1), h = x.size(2), w = x.size(3);
  const auto c_out = weight.size(1), k = weight.size(2);
  if (weight.size(0) != c_in || weight.size(3) != k || bias.size(0) != c_out) {
    shape_fail("conv_transpose2d", "input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                                       ", bias " + shape_str(bias.shape()));
  }
  const auto s = options.stride, p = options.padding;
  if (s == 0) shape_fail("conv_transpose2d", "stride must be positive");
  if ((h - 1) * s + k <= 2 * p || (w - 1) * s + k <= 2 * p) {
    shape_fail("conv_transpose2d", "padding " + std::to_string(p) + " leaves an empty output");
  }
  const auto out_h = (h - 1) * s + k - 2 * p;
  const auto out_w = (w - 1) * s + k - 2 * p;
  // The output grid is the "image" side of an ordinary convolution whose result has shape h×w.
  const ConvGeometry geo{c_out, out_h, out_w, k, s, p, h, w};
  if ((out_h + 2 * p - k) / s + 1 != h || (out_w + 2 * p - k) / s + 1 != w) {
    shape_fail("conv_transpose2d", "geometry does not invert for input " + shape_str(x.shape()));
  }
  const auto plane = h * w;
  const auto rows = c_out * k * k;
  const auto cols = n * plane;

  // Gather x as (Cin × N·plane).
  auto xmat = std::make_shared<std::vector<T>>(c_in * cols);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      std::copy_n(x.data().data() + (i * c_in + ci) * plane, plane, xmat->data() + ci * cols + i * plane);
    }
  }
  detail::init_blas_once();
  std::vector<T> col(rows * cols);
  detail::gemm(true, false, as_int(rows), as_int(cols), as_int(c_in), T(1), weight.data().data(), as_int(rows),
               xmat->data(), as_int(cols), T(0), col.data(), as_int(cols));
  const auto out_plane = out_h * out_w;
  std::vector<T> out(n * c_out * out_plane, T(0));
  for (std::size_t i = 0; i < n; ++i) col2im(col.data() + i * plane, cols, geo, out.data() + i * c_out * out_plane);
  const auto b = bias.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t oc = 0; oc < c_out; ++oc) {
      T* dst = out.data() + (i * c_out + oc) * out_plane;
      for (std::size_t q = 0; q < out_plane; ++q) dst[q] += b[oc];
    }
  }
  return make_result<T>(
      "conv_transpose2d", {n, c_out, out_h, out_w}, std::move(out), {x.impl(), weight.impl(), bias.impl()},
      [px = x.impl(), pw = weight.impl(), pb = bias.impl(), xmat, geo, n, c_in, c_out, plane, out_plane, rows,
       cols](TensorImpl<T>& o) {
        if (pb->requires_grad) {
          auto& gb = pb->ensure_grad();
          for (std::size_t oc = 0; oc < c_out; ++oc) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              const T* g = o.grad.data() + (i * c_out + oc) * out_plane;
              for (std::size_t q = 0; q < out_plane; ++q) acc += g[q];
            }
            gb[oc] += static_cast<T>(acc);
          }
        }
        if (!px->requires_grad && !pw->requires_grad) return;
        std::vector<T> dcol(rows * cols);
        for (std::size_t i = 0; i < n; ++i) {
          im2col(o.grad.data() + i * c_out * out_plane, geo, dcol.data() + i * plane, cols);
        }
        if (pw->requires_grad) {
          detail::gemm(false, true, as_int(c_in), as_int(rows), as_int(cols), T(1), xmat->data(), as_int(cols),
                       dcol.data(), as_int(cols), T(1), pw->ensure_grad().data(), as_int(rows));
        }
        if (px->requires_grad) {
          std::vector<T> dx(c_in * cols);
          detail::gemm(false, false, as_int(c_in), as_int(cols), as_int(rows), T(1), pw->data.data(), as_int(rows),
                       dcol.data(), as_int(cols), T(0), dx.data(), as_int(cols));
          auto& gx = px->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t ci = 0; ci < c_in; ++ci) {
              const T* src = dx.data() + ci * cols + i * plane;
              T* dst = gx.data() + (i * c_in + ci) * plane;
              for (std::size_t q = 0; q < plane; ++q) dst[q] += src[q];
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require_rank("global_avg_pool", x, 4, "input");
  const auto n = x.size(0), c = x.size(1), plane = x.size(2) * x.size(3);
  std::vector<T> out(n * c);
  const auto v = x.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t q = 0; q < plane; ++q) acc += v[i * plane + q];
    out[i] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return make_result<T>("global_avg_pool", {n, c}, std::move(out), {x.impl()},
                        [px = x.impl(), plane](TensorImpl<T>& o) {
                          auto& g = px->ensure_grad();
                          const T inv = T(1) / static_cast<T>(plane);
                          for (std::size_t i = 0; i < o.grad.size(); ++i) {
                            const T share = o.grad[i] * inv;
                            for (std::size_t q = 0; q < plane; ++q) g[i * plane + q] += share;
                          }
                        });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    shape_fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {x.impl()}, [px = x.impl()](TensorImpl<T>& o) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

template <typename T>
BasicTensor<T> concat0(std::span<const BasicTensor<T>> parts) {
  if (parts.empty()) shape_fail("concat0", "no inputs");
  const auto& first = parts.front().shape();
  if (first.empty()) shape_fail("concat0", "scalar inputs cannot be concatenated");
  Shape tail(first.begin() + 1, first.end());
  std::size_t rows = 0;
  std::vector<ImplPtr<T>> inputs;
  for (const auto& p : parts) {
    if (p.rank() != first.size() || !std::equal(tail.begin(), tail.end(), p.shape().begin() + 1)) {
      shape_fail("concat0", "trailing dims differ: " + shape_str(first) + " vs " + shape_str(p.shape()));
    }
    rows += p.size(0);
    inputs.push_back(p.impl());
  }
  std::vector<T> out;
  out.reserve(rows * shape_numel(tail));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  auto captured = inputs;
  return make_result<T>("concat0", std::move(shape), std::move(out), std::move(inputs),
                        [captured = std::move(captured)](TensorImpl<T>& o) {
                          std::size_t offset = 0;
                          for (const auto& p : captured) {
                            const auto n = p->data.size();
                            if (p->requires_grad) {
                              auto& g = p->ensure_grad();
                              for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[offset + i];
                            }
                            offset += n;
                          }
                        });
}

template <typename T>
BasicTensor<T> repeat_rows(const BasicTensor<T>& x, std::size_t copies) {
  if (x.rank() != 1 && x.rank() != 2) shape_fail("repeat_rows", "input must be 1-D or 2-D, got " + shape_str(x.shape()));
  if (copies == 0) shape_fail("repeat_rows", "copies must be positive");
  const bool single = x.rank() == 1;
  const auto batch = single ? std::size_t{1} : x.size(0);
  const auto len = single ? x.size(0) : x.size(1);
  std::vector<T> out(batch * copies * len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < copies; ++r) {
      std::copy_n(x.data().data() + b * len, len, out.data() + (b * copies + r) * len);
    }
  }
  Shape shape = single ? Shape{copies, len} : Shape{batch, copies, len};
  return make_result<T>("repeat_rows", std::move(shape), std::move(out), {x.impl()},
                        [px = x.impl(), batch, copies, len](TensorImpl<T>& o) {
                          auto& g = px->ensure_grad();
                          for (std::size_t b = 0; b < batch; ++b) {
                            for (std::size_t r = 0; r < copies; ++r) {
                              for (std::size_t t = 0; t < len; ++t) g[b * len + t] += o.grad[(b * copies + r) * len + t];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x) {
  if (x.rank() == 0) shape_fail("softmax", "input must have at least one axis");
  const auto len = x.shape().back();
  const auto rows = x.numel() / len;
  std::vector<T> out(x.numel());
  const auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = v.data() + r * len;
    T* dst = out.data() + r * len;
    const T top = *std::max_element(in, in + len);
    double denom = 0.0;
    for (std::size_t j = 0; j < len; ++j) denom += std::exp(static_cast<double>(in[j] - top));
    for (std::size_t j = 0; j < len; ++j) dst[j] = static_cast<T>(std::exp(static_cast<double>(in[j] - top)) / denom);
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x.impl()}, [px = x.impl(), rows, len](TensorImpl<T>& o) {
    auto& g = px->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = o.data.data() + r * len;
      const T* dy = o.grad.data() + r * len;
      double dot = 0.0;
      for (std::size_t j = 0; j < len; ++j) dot += static_cast<double>(dy[j]) * y[j];
      for (std::size_t j = 0; j < len; ++j) g[r * len + j] += y[j] * (dy[j] - static_cast<T>(dot));
    }
  });
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets) {
  require_rank("cross_entropy", logits, 2, "logits");
  const auto n = logits.size(0), classes = logits.size(1);
  if (targets.size() != n) {
    shape_fail("cross_entropy", std::to_string(targets.size()) + " targets for logits " + shape_str(logits.shape()));
  }
  std::vector<T> probs(n * classes);
  std::vector<int> labels(targets.begin(), targets.end());
  double total = 0.0;
  const auto v = logits.data();
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes) {
      shape_fail("cross_entropy", "target " + std::to_string(labels[r]) + " outside [0, " + std::to_string(classes) + ")");
    }
    const T* row = v.data() + r * classes;
    const double top = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t j = 0; j < classes; ++j) denom += std::exp(row[j] - top);
    for (std::size_t j = 0; j < classes; ++j) probs[r * classes + j] = static_cast<T>(std::exp(row[j] - top) / denom);
    total += std::log(denom) + top - row[labels[r]];
  }
  return make_result<T>("cross_entropy", {}, {static_cast<T>(total / static_cast<double>(n))}, {logits.impl()},
                        [pl = logits.impl(), probs = std::move(probs), labels = std::move(labels), n,
                         classes](TensorImpl<T>& o) {
                          auto& g = pl->ensure_grad();
                          const T share = o.grad[0] / static_cast<T>(n);
                          for (std::size_t r = 0; r < n; ++r) {
                            for (std::size_t j = 0; j < classes; ++j) {
                              const T indicator = static_cast<int>(j) == labels[r] ? T(1) : T(0);
                              g[r * classes + j] += share * (probs[r * classes + j] - indicator);
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& weights, const BasicTensor<T>& x) {
  require_rank("weighted_sum", weights, 1, "weights");
  if (x.rank() == 0 || x.size(0) != weights.size(0)) {
    shape_fail("weighted_sum", "weights " + shape_str(weights.shape()) + " vs input " + shape_str(x.shape()));
  }
  const auto steps = x.size(0);
  const auto inner = x.numel() / steps;
  std::vector<double> acc(inner, 0.0);
  const auto w = weights.data();
  const auto v = x.data();
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < inner; ++i) acc[i] += static_cast<double>(w[t]) * v[t * inner + i];
  }
  std::vector<T> out(acc.begin(), acc.end());
  Shape shape(x.shape().begin() + 1, x.shape().end());
  return make_result<T>("weighted_sum", std::move(shape), std::move(out), {weights.impl(), x.impl()},
                        [pw = weights.impl(), px = x.impl(), steps, inner](TensorImpl<T>& o) {
                          if (pw->requires_grad) {
                            auto& g = pw->ensure_grad();
                            for (std::size_t t = 0; t < steps; ++t) {
                              double dot = 0.0;
                              for (std::size_t i = 0; i < inner; ++i) dot += static_cast<double>(o.grad[i]) * px->data[t * inner + i];
                              g[t] += static_cast<T>(dot);
                            }
                          }
                          if (px->requires_grad) {
                            auto& g = px->ensure_grad();
                            for (std::size_t t = 0; t < steps; ++t) {
                              for (std::size_t i = 0; i < inner; ++i) g[t * inner + i] += pw->data[t] * o.grad[i];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> straight_through(const BasicTensor<T>& soft, const BasicTensor<T>& hard) {
  require_same_shape("straight_through", soft, hard);
  std::vector<T> out(hard.data().begin(), hard.data().end());
  return make_result<T>("straight_through", soft.shape(), std::move(out), {soft.impl()},
                        [ps = soft.impl()](TensorImpl<T>& o) {
                          auto& g = ps->ensure_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                        });
}

#define VIDISTILL_INSTANTIATE_OPS(T)                                                                          \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                   \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                        \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                              \
  template BasicTensor<T> bmm(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);       \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,        \
                                 Conv2dOptions);                                                             \
  template BasicTensor<T> conv_transpose2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                           Conv2dOptions);                                                   \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                            \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                             \
  template BasicTensor<T> concat0(std::span<const BasicTensor<T>>);                                          \
  template BasicTensor<T> repeat_rows(const BasicTensor<T>&, std::size_t);                                   \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const int>);                        \
  template BasicTensor<T> weighted_sum(const BasicTensor<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> straight_through(const BasicTensor<T>&, const BasicTensor<T>&);

VIDISTILL_INSTANTIATE_OPS(float)
VIDISTILL_INSTANTIATE_OPS(double)

#undef VIDISTILL_INSTANTIATE_OPS

}  // namespace vidistill
