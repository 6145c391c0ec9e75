#include "icrl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <string>

#include <spdlog/spdlog.h>

#include "icrl/errors.hpp"

namespace icrl {

namespace {

thread_local KinkRecorder* g_kink_recorder = nullptr;

template <class T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                           std::initializer_list<BasicTensor<T>> inputs,
                           std::function<void(Node<T>&)> backward_fn) {
  BasicTensor<T> out(std::move(shape), std::move(value), false);
#ifndef NDEBUG
  bool finite_inputs = true;
  for (const auto& in : inputs) finite_inputs = finite_inputs && all_finite(in.data());
  if (finite_inputs && !all_finite(out.data())) {
    throw ContractError(std::string(op) + " produced a non-finite value from finite inputs");
  }
#endif
  Node<T>* node = out.node();
  node->op = op;
  if (!grad_enabled()) return out;
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (!needs_grad) return out;
  node->requires_grad = true;
  for (const auto& in : inputs) node->inputs.push_back(in.node_ptr());
  node->backward = std::move(backward_fn);
  return out;
}

void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined operand");
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

// Output positions [lo, hi) whose input coordinate out*stride + offset lies
// inside [0, extent).
std::pair<std::size_t, std::size_t> valid_range(long offset, std::size_t stride,
                                                std::size_t extent, std::size_t out_extent) {
  const long s = static_cast<long>(stride);
  long lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
  long hi = (static_cast<long>(extent) - 1 - offset);
  hi = hi < 0 ? 0 : hi / s + 1;
  hi = std::min<long>(hi, static_cast<long>(out_extent));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

std::uint64_t fnv_step(std::uint64_t h, std::uint64_t v) {
  h ^= v;
  return h * 0x100000001b3ULL;
}

}  // namespace

KinkRecorder::KinkRecorder() : previous_(g_kink_recorder) { g_kink_recorder = this; }
KinkRecorder::~KinkRecorder() { g_kink_recorder = previous_; }
KinkRecorder* KinkRecorder::current() noexcept { return g_kink_recorder; }

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.defined() && b.defined() && a.rank() == 2 && b.rank() == 2,
          "matmul: operands must be matrices");
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  require(b.dim(0) == q, "matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  std::vector<T> out(p * r, T(0));
  const T* av = a.data().data();
  const T* bv = b.data().data();
  for (std::size_t i = 0; i < p; ++i) {
    T* row = out.data() + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const T aik = av[i * q + k];
      const T* brow = bv + k * r;
      for (std::size_t j = 0; j < r; ++j) row[j] += aik * brow[j];
    }
  }
  return make_result<T>("matmul", {p, r}, std::move(out), {a, b}, [p, q, r](Node<T>& self) {
    Node<T>* na = self.inputs[0].get();
    Node<T>* nb = self.inputs[1].get();
    const T* g = self.grad.data();
    if (na->requires_grad) {
      T* ga = na->grad_buffer().data();
      const T* bv = nb->value.data();
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t k = 0; k < q; ++k) {
          T acc = 0;
          for (std::size_t j = 0; j < r; ++j) acc += g[i * r + j] * bv[k * r + j];
          ga[i * q + k] += acc;
        }
    }
    if (nb->requires_grad) {
      T* gb = nb->grad_buffer().data();
      const T* av = na->value.data();
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t k = 0; k < q; ++k) {
          const T aik = av[i * q + k];
          for (std::size_t j = 0; j < r; ++j) gb[k * r + j] += aik * g[i * r + j];
        }
    }
  });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require(a.defined() && a.rank() == 2, "transpose: operand must be a matrix");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a.data()[i * cols + j];
  return make_result<T>("transpose", {cols, rows}, std::move(out), {a},
                        [rows, cols](Node<T>& self) {
                          T* ga = self.inputs[0]->grad_buffer().data();
                          for (std::size_t i = 0; i < rows; ++i)
                            for (std::size_t j = 0; j < cols; ++j)
                              ga[i * cols + j] += self.grad[j * rows + i];
                        });
}

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t pad) {
  require(x.defined() && x.rank() == 3, "conv2d: input must be c x h x w");
  require(kernel.defined() && kernel.rank() == 4, "conv2d: kernel must be c_out x c_in x kh x kw");
  require(stride >= 1, "conv2d: stride must be positive");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  require(kernel.dim(1) == C, "conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                                  " input channels, input has " + std::to_string(C));
  require(KH <= H + 2 * pad && KW <= W + 2 * pad, "conv2d: kernel larger than padded input");
  require((H + 2 * pad - KH) % stride == 0 && (W + 2 * pad - KW) % stride == 0,
          "conv2d: output extent is not integral for input " + shape_str(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.numel() == O, "conv2d: bias must have c_out entries");
  const std::size_t OH = (H + 2 * pad - KH) / stride + 1;
  const std::size_t OW = (W + 2 * pad - KW) / stride + 1;

  std::vector<T> out(O * OH * OW, T(0));
  const T* xv = x.data().data();
  const T* kv = kernel.data().data();
  const long p = static_cast<long>(pad);
  for (std::size_t o = 0; o < O; ++o) {
    T* out_o = out.data() + o * OH * OW;
    if (has_bias) std::fill(out_o, out_o + OH * OW, bias.data()[o]);
    for (std::size_t c = 0; c < C; ++c) {
      const T* x_c = xv + c * H * W;
      for (std::size_t i = 0; i < KH; ++i) {
        const auto [oy0, oy1] = valid_range(static_cast<long>(i) - p, stride, H, OH);
        for (std::size_t j = 0; j < KW; ++j) {
          const T w = kv[((o * C + c) * KH + i) * KW + j];
          const long xoff = static_cast<long>(j) - p;
          const auto [ox0, ox1] = valid_range(xoff, stride, W, OW);
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            const T* x_row = x_c + (oy * stride + i - pad) * W;
            T* out_row = out_o + oy * OW;
            for (std::size_t ox = ox0; ox < ox1; ++ox)
              out_row[ox] += w * x_row[static_cast<long>(ox * stride) + xoff];
          }
        }
      }
    }
  }

  auto fn = [=](Node<T>& self) {
    Node<T>* nx = self.inputs[0].get();
    Node<T>* nk = self.inputs[1].get();
    Node<T>* nb = has_bias ? self.inputs[2].get() : nullptr;
    const T* g = self.grad.data();
    const T* xv = nx->value.data();
    const T* kv = nk->value.data();
    T* gx = nx->requires_grad ? nx->grad_buffer().data() : nullptr;
    T* gk = nk->requires_grad ? nk->grad_buffer().data() : nullptr;
    if (nb && nb->requires_grad) {
      T* gb = nb->grad_buffer().data();
      for (std::size_t o = 0; o < O; ++o) {
        T acc = 0;
        for (std::size_t s = 0; s < OH * OW; ++s) acc += g[o * OH * OW + s];
        gb[o] += acc;
      }
    }
    if (!gx && !gk) return;
    for (std::size_t o = 0; o < O; ++o) {
      const T* g_o = g + o * OH * OW;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < KH; ++i) {
          const auto [oy0, oy1] = valid_range(static_cast<long>(i) - p, stride, H, OH);
          for (std::size_t j = 0; j < KW; ++j) {
            const std::size_t widx = ((o * C + c) * KH + i) * KW + j;
            const T w = kv[widx];
            const long xoff = static_cast<long>(j) - p;
            const auto [ox0, ox1] = valid_range(xoff, stride, W, OW);
            T acc = 0;
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const std::size_t row = c * H * W + (oy * stride + i - pad) * W;
              const T* g_row = g_o + oy * OW;
              if (gx) {
                T* gx_row = gx + row;
                for (std::size_t ox = ox0; ox < ox1; ++ox)
                  gx_row[static_cast<long>(ox * stride) + xoff] += w * g_row[ox];
              }
              if (gk) {
                const T* x_row = xv + row;
                for (std::size_t ox = ox0; ox < ox1; ++ox)
                  acc += g_row[ox] * x_row[static_cast<long>(ox * stride) + xoff];
              }
            }
            if (gk) gk[widx] += acc;
          }
        }
      }
    }
  };
  if (has_bias) {
    return make_result<T>("conv2d", {O, OH, OW}, std::move(out), {x, kernel, bias}, fn);
  }
  return make_result<T>("conv2d", {O, OH, OW}, std::move(out), {x, kernel}, fn);
}

template <class T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& x, std::size_t window, std::size_t stride) {
  require(x.defined() && x.rank() == 3, "maxpool2d: input must be c x h x w");
  require(window >= 1 && stride >= 1, "maxpool2d: window and stride must be positive");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  require(window <= H && window <= W, "maxpool2d: window larger than input");
  const std::size_t OH = (H - window) / stride + 1;
  const std::size_t OW = (W - window) / stride + 1;
  std::vector<T> out(C * OH * OW);
  std::vector<std::size_t> argmax(out.size());
  const T* xv = x.data().data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t best = c * H * W + oy * stride * W + ox * stride;
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = c * H * W + (oy * stride + i) * W + ox * stride + j;
            if (xv[idx] > xv[best]) best = idx;  // strict: first maximum wins ties
          }
        const std::size_t o = (c * OH + oy) * OW + ox;
        out[o] = xv[best];
        argmax[o] = best;
      }
  if (KinkRecorder* rec = KinkRecorder::current()) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t idx : argmax) h = fnv_step(h, idx);
    rec->record(h);
  }
  return make_result<T>("maxpool2d", {C, OH, OW}, std::move(out), {x},
                        [argmax = std::move(argmax)](Node<T>& self) {
                          T* gx = self.inputs[0]->grad_buffer().data();
                          for (std::size_t o = 0; o < argmax.size(); ++o)
                            gx[argmax[o]] += self.grad[o];
                        });
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  require(x.defined(), "relu: undefined operand");
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  if (KinkRecorder* rec = KinkRecorder::current()) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < out.size(); ++i) h = fnv_step(h, x.data()[i] > T(0) ? i + 1 : 0);
    rec->record(h);
  }
  return make_result<T>("relu", x.shape(), std::move(out), {x}, [](Node<T>& self) {
    Node<T>* nx = self.inputs[0].get();
    T* gx = nx->grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (nx->value[i] > T(0)) gx[i] += self.grad[i];
  });
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  require(x.defined(), "sigmoid: undefined operand");
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return make_result<T>("sigmoid", x.shape(), std::move(out), {x}, [](Node<T>& self) {
    T* gx = self.inputs[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T s = self.value[i];
      gx[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <class T>
BasicTensor<T> hadamard(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "hadamard");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>("hadamard", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>* na = self.inputs[0].get();
    Node<T>* nb = self.inputs[1].get();
    if (na->requires_grad) {
      T* ga = na->grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * nb->value[i];
    }
    if (nb->requires_grad) {
      T* gb = nb->grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * na->value[i];
    }
  });
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node<T>* n = self.inputs[k].get();
      if (!n->requires_grad) continue;
      T* g = n->grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>* na = self.inputs[0].get();
    Node<T>* nb = self.inputs[1].get();
    if (na->requires_grad) {
      T* g = na->grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (nb->requires_grad) {
      T* g = nb->grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, double factor) {
  require(x.defined(), "scale: undefined operand");
  const T f = static_cast<T>(factor);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * f;
  return make_result<T>("scale", x.shape(), std::move(out), {x}, [f](Node<T>& self) {
    T* g = self.inputs[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * f;
  });
}

template <class T>
BasicTensor<T> scale_by(const BasicTensor<T>& x, const BasicTensor<T>& s) {
  require(x.defined() && s.defined() && s.numel() == 1,
          "scale_by: factor must be a one-element tensor");
  const T f = s.data()[0];
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * f;
  return make_result<T>("scale_by", x.shape(), std::move(out), {x, s}, [](Node<T>& self) {
    Node<T>* nx = self.inputs[0].get();
    Node<T>* ns = self.inputs[1].get();
    const T f = ns->value[0];
    if (nx->requires_grad) {
      T* g = nx->grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * f;
    }
    if (ns->requires_grad) {
      T acc = 0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * nx->value[i];
      ns->grad_buffer()[0] += acc;
    }
  });
}

template <class T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& x, std::size_t axis) {
  require(x.defined() && axis < x.rank(), "reduce_mean: axis out of range");
  const Shape& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  require(n > 0, "reduce_mean: empty axis");
  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out_shape.push_back(shape[i]);
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += x.data()[(o * n + k) * inner + i];
  const T inv = T(1) / static_cast<T>(n);
  for (T& v : out) v *= inv;
  return make_result<T>("reduce_mean", std::move(out_shape), std::move(out), {x},
                        [outer, inner, n, inv](Node<T>& self) {
                          T* g = self.inputs[0]->grad_buffer().data();
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t k = 0; k < n; ++k)
                              for (std::size_t i = 0; i < inner; ++i)
                                g[(o * n + k) * inner + i] += self.grad[o * inner + i] * inv;
                        });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  require(x.defined(), "sum: undefined operand");
  T total = std::accumulate(x.data().begin(), x.data().end(), T(0));
  return make_result<T>("sum", {}, {total}, {x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (T& v : g) v += self.grad[0];
  });
}

template <class T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& x, double eps) {
  require(x.defined() && x.rank() >= 1 && x.shape().back() >= 1,
          "l2_normalize: needs at least one element along the last axis");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> denom(rows);
  const T e = static_cast<T>(eps);
  for (std::size_t r = 0; r < rows; ++r) {
    T sq = 0;
    for (std::size_t i = 0; i < d; ++i) sq += x.data()[r * d + i] * x.data()[r * d + i];
    const T norm = std::sqrt(sq);
    if (!(norm > e)) {
      spdlog::debug("l2_normalize: row {} has norm {} <= eps {}; output is eps-guarded", r,
                   static_cast<double>(norm), eps);
    }
    denom[r] = norm > e ? norm : e;
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = x.data()[r * d + i] / denom[r];
  }
  return make_result<T>("l2_normalize", x.shape(), std::move(out), {x},
                        [d, rows, e, denom = std::move(denom)](Node<T>& self) {
                          T* g = self.inputs[0]->grad_buffer().data();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* y = self.value.data() + r * d;
                            const T* gy = self.grad.data() + r * d;
                            if (denom[r] > e) {
                              T dot = 0;
                              for (std::size_t i = 0; i < d; ++i) dot += y[i] * gy[i];
                              for (std::size_t i = 0; i < d; ++i)
                                g[r * d + i] += (gy[i] - y[i] * dot) / denom[r];
                            } else {
                              for (std::size_t i = 0; i < d; ++i) g[r * d + i] += gy[i] / e;
                            }
                          }
                        });
}

template <class T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits,
                                     std::span<const std::size_t> labels) {
  require(logits.defined() && logits.rank() == 2, "softmax_cross_entropy: logits must be B x N");
  const std::size_t B = logits.dim(0), N = logits.dim(1);
  require(B > 0 && N > 0, "softmax_cross_entropy: empty logits");
  require(labels.size() == B, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                  " labels for " + std::to_string(B) + " rows");
  std::vector<T> probs(B * N);
  std::vector<std::size_t> targets(labels.begin(), labels.end());
  T total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    require(labels[b] < N, "softmax_cross_entropy: label " + std::to_string(labels[b]) +
                               " out of range [0," + std::to_string(N) + ")");
    const T* row = logits.data().data() + b * N;
    const T mx = *std::max_element(row, row + N);
    T z = 0;
    for (std::size_t n = 0; n < N; ++n) {
      probs[b * N + n] = std::exp(row[n] - mx);
      z += probs[b * N + n];
    }
    for (std::size_t n = 0; n < N; ++n) probs[b * N + n] /= z;
    total += (mx + std::log(z)) - row[labels[b]];
  }
  const T loss = total / static_cast<T>(B);
  return make_result<T>("softmax_cross_entropy", {}, {loss}, {logits},
                        [B, N, probs = std::move(probs), targets = std::move(targets)](Node<T>& self) {
                          T* g = self.inputs[0]->grad_buffer().data();
                          const T scale = self.grad[0] / static_cast<T>(B);
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t n = 0; n < N; ++n) {
                              const T onehot = n == targets[b] ? T(1) : T(0);
                              g[b * N + n] += (probs[b * N + n] - onehot) * scale;
                            }
                        });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  require(x.defined() && shape_numel(shape) == x.numel(),
          "reshape: cannot view " + (x.defined() ? shape_str(x.shape()) : std::string("<undefined>")) +
              " as " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    T* g = self.inputs[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
BasicTensor<T> stack(std::span<const BasicTensor<T>> parts) {
  require(!parts.empty(), "stack: no tensors");
  const Shape& part_shape = parts.front().shape();
  const std::size_t n = shape_numel(part_shape);
  Shape shape{parts.size()};
  shape.insert(shape.end(), part_shape.begin(), part_shape.end());
  std::vector<T> out;
  out.reserve(parts.size() * n);
  bool needs_grad = false;
  for (const auto& p : parts) {
    require(p.defined() && p.shape() == part_shape, "stack: shape mismatch " +
                                                        shape_str(p.shape()) + " vs " +
                                                        shape_str(part_shape));
    out.insert(out.end(), p.data().begin(), p.data().end());
    needs_grad = needs_grad || p.requires_grad();
  }
  BasicTensor<T> result(std::move(shape), std::move(out), false);
  result.node()->op = "stack";
  if (!grad_enabled() || !needs_grad) return result;
  Node<T>* node = result.node();
  node->requires_grad = true;
  for (const auto& p : parts) node->inputs.push_back(p.node_ptr());
  node->backward = [n](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node<T>* in = self.inputs[k].get();
      if (!in->requires_grad) continue;
      T* g = in->grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[k * n + i];
    }
  };
  return result;
}

template <class T>
BasicTensor<T> select(const BasicTensor<T>& x, std::size_t index) {
  require(x.defined() && x.rank() >= 1 && index < x.dim(0), "select: index out of range");
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t n = shape_numel(shape);
  std::vector<T> out(x.data().begin() + index * n, x.data().begin() + (index + 1) * n);
  return make_result<T>("select", std::move(shape), std::move(out), {x},
                        [index, n](Node<T>& self) {
                          T* g = self.inputs[0]->grad_buffer().data() + index * n;
                          for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
                        });
}

template <class T>
BasicTensor<T> flip_horizontal(const BasicTensor<T>& x) {
  require(x.defined() && x.rank() == 3, "flip_horizontal: input must be c x h x w");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::vector<T> out(x.numel());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t i = 0; i < W; ++i)
        out[(c * H + y) * W + i] = x.data()[(c * H + y) * W + (W - 1 - i)];
  return BasicTensor<T>(x.shape(), std::move(out), false);
}

#define ICRL_INSTANTIATE_OPS(T)                                                             \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                 \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                 const BasicTensor<T>&, std::size_t, std::size_t);          \
  template BasicTensor<T> maxpool2d(const BasicTensor<T>&, std::size_t, std::size_t);       \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                      \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                   \
  template BasicTensor<T> hadamard(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                             \
  template BasicTensor<T> scale_by(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> reduce_mean(const BasicTensor<T>&, std::size_t);                  \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                       \
  template BasicTensor<T> l2_normalize(const BasicTensor<T>&, double);                      \
  template BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>&,                      \
                                                std::span<const std::size_t>);              \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                            \
  template BasicTensor<T> stack(std::span<const BasicTensor<T>>);                           \
  template BasicTensor<T> select(const BasicTensor<T>&, std::size_t);                       \
  template BasicTensor<T> flip_horizontal(const BasicTensor<T>&);

ICRL_INSTANTIATE_OPS(float)
ICRL_INSTANTIATE_OPS(double)

#undef ICRL_INSTANTIATE_OPS

}  // namespace icrl
