#include "terralabel/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "detail.hpp"

namespace terralabel::numerics {

using detail::make_result;
using detail::shape_mismatch;

namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t dim = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.dim = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

/// Shared skeleton for shape-preserving unary ops. `fwd` maps x -> y and
/// `deriv` maps (x, y) -> dy/dx.
template <typename T, typename Fwd, typename Deriv>
BasicTensor<T> unary(const char* op, const BasicTensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result<T>(op, x.shape(), std::move(out), {x.node()}, [deriv](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& gx = px.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * deriv(px.value[i], self.value[i]);
    }
  });
}

template <typename T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
}

}  // namespace

// --- elementwise -----------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>("add", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("div", a, b);
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  return make_result<T>("div", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] -= self.grad[i] * pa.value[i] / (pb.value[i] * pb.value[i]);
      }
    }
  });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s) {
  return unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& a, T s) {
  return unary<T>("mul_scalar", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
BasicTensor<T> rsub_scalar(T s, const BasicTensor<T>& a) {
  return unary<T>("rsub_scalar", a, [s](T x) { return s - x; }, [](T, T) { return T(-1); });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope) {
  return unary<T>(
      "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
BasicTensor<T> elu(const BasicTensor<T>& x, T alpha) {
  return unary<T>(
      "elu", x, [alpha](T v) { return v > T(0) ? v : alpha * std::expm1(v); },
      [alpha](T v, T y) { return v > T(0) ? T(1) : y + alpha; });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
  return unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& x, T lo, T hi) {
  return unary<T>(
      "clamp", x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> add_broadcast(const BasicTensor<T>& x, const BasicTensor<T>& b, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "add_broadcast");
  if (b.numel() != s.dim) shape_mismatch("add_broadcast", x.shape(), b.shape());
  std::vector<T> out(x.numel());
  const auto& xv = x.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t d = 0; d < s.dim; ++d) {
      const std::size_t base = (o * s.dim + d) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) out[base + i] = xv[base + i] + bv[d];
    }
  }
  return make_result<T>("add_broadcast", x.shape(), std::move(out), {x.node(), b.node()},
                        [s](Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (px.requires_grad) {
                            auto& g = px.grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          }
                          if (pb.requires_grad) {
                            auto& g = pb.grad_buffer();
                            for (std::size_t o = 0; o < s.outer; ++o) {
                              for (std::size_t d = 0; d < s.dim; ++d) {
                                const std::size_t base = (o * s.dim + d) * s.inner;
                                T acc = 0;
                                for (std::size_t i = 0; i < s.inner; ++i) acc += self.grad[base + i];
                                g[d] += acc;
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> scale_rows(const BasicTensor<T>& x, const BasicTensor<T>& w) {
  if (x.rank() != 2 || w.numel() != x.dim(0)) shape_mismatch("scale_rows", x.shape(), w.shape());
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x.data()[r * cols + c] * w.data()[r];
  }
  return make_result<T>("scale_rows", x.shape(), std::move(out), {x.node(), w.node()},
                        [rows, cols](Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& pw = *self.parents[1];
                          if (px.requires_grad) {
                            auto& g = px.grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < cols; ++c) {
                                g[r * cols + c] += self.grad[r * cols + c] * pw.value[r];
                              }
                            }
                          }
                          if (pw.requires_grad) {
                            auto& g = pw.grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r) {
                              T acc = 0;
                              for (std::size_t c = 0; c < cols; ++c) {
                                acc += self.grad[r * cols + c] * px.value[r * cols + c];
                              }
                              g[r] += acc;
                            }
                          }
                        });
}

// --- reductions / layout ---------------------------------------------------

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return make_result<T>("sum", {}, {acc}, {x.node()}, [](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "sum");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto& xv = x.node()->value;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t d = 0; d < s.dim; ++d) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        out[o * s.inner + i] += xv[(o * s.dim + d) * s.inner + i];
      }
    }
  }
  return make_result<T>("sum_axis", std::move(out_shape), std::move(out), {x.node()},
                        [s](Node<T>& self) {
                          auto& px = *self.parents[0];
                          if (!px.requires_grad) return;
                          auto& g = px.grad_buffer();
                          for (std::size_t o = 0; o < s.outer; ++o) {
                            for (std::size_t d = 0; d < s.dim; ++d) {
                              for (std::size_t i = 0; i < s.inner; ++i) {
                                g[(o * s.dim + d) * s.inner + i] += self.grad[o * s.inner + i];
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "mean");
  if (s.dim == 0) throw ShapeError("mean: empty axis");
  return mul_scalar(sum(x, axis), T(1) / static_cast<T>(s.dim));
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  std::vector<T> out(x.numel());
  const auto& xv = x.node()->value;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t d = 0; d < s.dim; ++d) mx = std::max(mx, xv[(o * s.dim + d) * s.inner + i]);
      T total = 0;
      for (std::size_t d = 0; d < s.dim; ++d) {
        const std::size_t k = (o * s.dim + d) * s.inner + i;
        out[k] = std::exp(xv[k] - mx);
        total += out[k];
      }
      for (std::size_t d = 0; d < s.dim; ++d) out[(o * s.dim + d) * s.inner + i] /= total;
    }
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x.node()}, [s](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        T dot = 0;
        for (std::size_t d = 0; d < s.dim; ++d) {
          const std::size_t k = (o * s.dim + d) * s.inner + i;
          dot += self.grad[k] * self.value[k];
        }
        for (std::size_t d = 0; d < s.dim; ++d) {
          const std::size_t k = (o * s.dim + d) * s.inner + i;
          g[k] += self.value[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "log_softmax");
  std::vector<T> out(x.numel());
  const auto& xv = x.node()->value;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t d = 0; d < s.dim; ++d) mx = std::max(mx, xv[(o * s.dim + d) * s.inner + i]);
      T total = 0;
      for (std::size_t d = 0; d < s.dim; ++d) total += std::exp(xv[(o * s.dim + d) * s.inner + i] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t d = 0; d < s.dim; ++d) {
        const std::size_t k = (o * s.dim + d) * s.inner + i;
        out[k] = xv[k] - lse;
      }
    }
  }
  return make_result<T>("log_softmax", x.shape(), std::move(out), {x.node()}, [s](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        T gsum = 0;
        for (std::size_t d = 0; d < s.dim; ++d) gsum += self.grad[(o * s.dim + d) * s.inner + i];
        for (std::size_t d = 0; d < s.dim; ++d) {
          const std::size_t k = (o * s.dim + d) * s.inner + i;
          g[k] += self.grad[k] - std::exp(self.value[k]) * gsum;
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> dims;
  for (const auto& p : parts) {
    Shape a = p.shape();
    Shape b = first;
    if (a.size() != b.size()) shape_mismatch("concat", first, p.shape());
    a[axis] = b[axis] = 0;
    if (a != b) shape_mismatch("concat", first, p.shape());
    dims.push_back(p.dim(axis));
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit s = split_axis(out_shape, axis, "concat");
  std::vector<T> out(shape_size(out_shape));
  std::vector<NodePtr<T>> parents;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].node()->value;
    const std::size_t block = dims[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.begin() + static_cast<std::ptrdiff_t>(o * s.dim * s.inner + offset));
    }
    offset += block;
    parents.push_back(parts[k].node());
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), std::move(parents),
                        [s, dims](Node<T>& self) {
                          std::size_t offset = 0;
                          for (std::size_t k = 0; k < self.parents.size(); ++k) {
                            const std::size_t block = dims[k] * s.inner;
                            auto& p = *self.parents[k];
                            if (p.requires_grad) {
                              auto& g = p.grad_buffer();
                              for (std::size_t o = 0; o < s.outer; ++o) {
                                for (std::size_t i = 0; i < block; ++i) {
                                  g[o * block + i] += self.grad[o * s.dim * s.inner + offset + i];
                                }
                              }
                            }
                            offset += block;
                          }
                        });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_size(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  return make_result<T>("reshape", std::move(shape), x.node()->value, {x.node()}, [](Node<T>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// --- linear algebra --------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  if (k > 0) {
    detail::gemm<T>(false, false, m, n, k, T(1), a.data().data(), k, b.data().data(), n, T(0),
                    out.data(), n);
  }
  return make_result<T>("matmul", {m, n}, std::move(out), {a.node(), b.node()},
                        [m, k, n](Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (k == 0) return;
                          if (pa.requires_grad) {
                            detail::gemm<T>(false, true, m, k, n, T(1), self.grad.data(), n,
                                            pb.value.data(), n, T(1), pa.grad_buffer().data(), k);
                          }
                          if (pb.requires_grad) {
                            detail::gemm<T>(true, false, k, n, m, T(1), pa.value.data(), k,
                                            self.grad.data(), n, T(1), pb.grad_buffer().data(), n);
                          }
                        });
}

// --- image ops -------------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, kh, kw, pad, oh, ow;
  std::size_t col_rows() const { return cin * kh * kw; }
  std::size_t col_cols() const { return oh * ow; }
};

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.col_cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ki) - static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill_n(dst, g.ow, T(0));
            continue;
          }
          const T* src = image + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kj) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T(0)
                                                                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* image) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.col_cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = image + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[static_cast<std::size_t>(ix)] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, std::size_t padding) {
  if (input.rank() != 4 || weight.rank() != 4 || input.dim(1) != weight.dim(1)) {
    shape_mismatch("conv2d", input.shape(), weight.shape());
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0),
                 weight.dim(2), weight.dim(3), padding, 0, 0};
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    shape_mismatch("conv2d", input.shape(), weight.shape());
  }
  g.oh = g.h + 2 * g.pad - g.kh + 1;
  g.ow = g.w + 2 * g.pad - g.kw + 1;

  const bool identity_cols = g.kh == 1 && g.kw == 1 && g.pad == 0;
  std::vector<T> out(g.batch * g.cout * g.oh * g.ow);
  std::vector<T> col(identity_cols ? 0 : g.col_rows() * g.col_cols());
  const T* x = input.data().data();
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* image = x + n * g.cin * g.h * g.w;
    const T* cols = image;
    if (!identity_cols) {
      im2col(image, g, col.data());
      cols = col.data();
    }
    detail::gemm<T>(false, false, g.cout, g.col_cols(), g.col_rows(), T(1), weight.data().data(),
                    g.col_rows(), cols, g.col_cols(), T(0), out.data() + n * g.cout * g.col_cols(),
                    g.col_cols());
  }
  return make_result<T>(
      "conv2d", {g.batch, g.cout, g.oh, g.ow}, std::move(out), {input.node(), weight.node()},
      [g, identity_cols](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        std::vector<T> col(identity_cols ? 0 : g.col_rows() * g.col_cols());
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* dy = self.grad.data() + n * g.cout * g.col_cols();
          const T* image = px.value.data() + n * g.cin * g.h * g.w;
          if (pw.requires_grad) {
            const T* cols = image;
            if (!identity_cols) {
              im2col(image, g, col.data());
              cols = col.data();
            }
            detail::gemm<T>(false, true, g.cout, g.col_rows(), g.col_cols(), T(1), dy, g.col_cols(),
                            cols, g.col_cols(), T(1), pw.grad_buffer().data(), g.col_rows());
          }
          if (px.requires_grad) {
            T* dx = px.grad_buffer().data() + n * g.cin * g.h * g.w;
            if (identity_cols) {
              detail::gemm<T>(true, false, g.col_rows(), g.col_cols(), g.cout, T(1),
                              pw.value.data(), g.col_rows(), dy, g.col_cols(), T(1), dx,
                              g.col_cols());
            } else {
              detail::gemm<T>(true, false, g.col_rows(), g.col_cols(), g.cout, T(1),
                              pw.value.data(), g.col_rows(), dy, g.col_cols(), T(0), col.data(),
                              g.col_cols());
              col2im_add(col.data(), g, dx);
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> max_pool2x2(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("max_pool2x2: expected NCHW, got " + shape_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<T> out(planes * oh * ow);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  const auto& xv = x.node()->value;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (p * h + 2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t k = (p * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (xv[k] > xv[best]) best = k;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = xv[best];
        (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return make_result<T>("max_pool2x2", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x.node()},
                        [argmax](Node<T>& self) {
                          auto& px = *self.parents[0];
                          if (!px.requires_grad) return;
                          auto& g = px.grad_buffer();
                          for (std::size_t o = 0; o < self.grad.size(); ++o) g[(*argmax)[o]] += self.grad[o];
                        });
}

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("upsample_nearest2x: expected NCHW, got " + shape_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = 2 * h, ow = 2 * w;
  std::vector<T> out(planes * oh * ow);
  const auto& xv = x.node()->value;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const T* src = xv.data() + (p * h + oy / 2) * w;
      T* dst = out.data() + (p * oh + oy) * ow;
      for (std::size_t ox = 0; ox < ow; ++ox) dst[ox] = src[ox / 2];
    }
  }
  return make_result<T>("upsample_nearest2x", {x.dim(0), x.dim(1), oh, ow}, std::move(out),
                        {x.node()}, [planes, h, w](Node<T>& self) {
                          auto& px = *self.parents[0];
                          if (!px.requires_grad) return;
                          auto& g = px.grad_buffer();
                          const std::size_t ow = 2 * w;
                          for (std::size_t p = 0; p < planes; ++p) {
                            for (std::size_t oy = 0; oy < 2 * h; ++oy) {
                              const T* src = self.grad.data() + (p * 2 * h + oy) * ow;
                              T* dst = g.data() + (p * h + oy / 2) * w;
                              for (std::size_t ox = 0; ox < ow; ++ox) dst[ox / 2] += src[ox];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> batch_norm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                            const BasicTensor<T>& beta, BatchNormState<T>& state, bool training) {
  if (x.rank() != 4) throw ShapeError("batch_norm2d: expected NCHW, got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.numel() != channels || beta.numel() != channels) {
    shape_mismatch("batch_norm2d", x.shape(), gamma.shape());
  }
  if (state.running_mean.size() != channels) {
    state = BatchNormState<T>(channels);
  }
  const std::size_t count = n * plane;
  const auto& xv = x.node()->value;
  auto inv_std = std::make_shared<std::vector<T>>(channels);
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> out(x.numel());
  for (std::size_t c = 0; c < channels; ++c) {
    T mu = 0, var = 0;
    if (training) {
      double acc = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      mu = static_cast<T>(acc / static_cast<double>(count));
      double acc2 = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(p[i]) - static_cast<double>(mu);
          acc2 += d * d;
        }
      }
      var = static_cast<T>(acc2 / static_cast<double>(count));
      const T unbiased = count > 1 ? var * static_cast<T>(count) / static_cast<T>(count - 1) : var;
      state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    const T istd = T(1) / std::sqrt(var + state.eps);
    (*inv_std)[c] = istd;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t base = (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (xv[base + i] - mu) * istd;
        (*xhat)[base + i] = xh;
        out[base + i] = gamma.data()[c] * xh + beta.data()[c];
      }
    }
  }
  return make_result<T>(
      "batch_norm2d", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [n, channels, plane, count, training, inv_std, xhat](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        for (std::size_t c = 0; c < channels; ++c) {
          T sum_dy = 0, sum_dy_xhat = 0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += self.grad[base + i];
              sum_dy_xhat += self.grad[base + i] * (*xhat)[base + i];
            }
          }
          if (pg.requires_grad) pg.grad_buffer()[c] += sum_dy_xhat;
          if (pb.requires_grad) pb.grad_buffer()[c] += sum_dy;
          if (!px.requires_grad) continue;
          auto& gx = px.grad_buffer();
          const T gam = pg.value[c];
          const T istd = (*inv_std)[c];
          const T m = static_cast<T>(count);
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (training) {
                gx[base + i] += gam * istd / m *
                                (m * self.grad[base + i] - sum_dy - (*xhat)[base + i] * sum_dy_xhat);
              } else {
                gx[base + i] += gam * istd * self.grad[base + i];
              }
            }
          }
        }
      });
}

// --- graph ops -------------------------------------------------------------

template <typename T>
BasicTensor<T> index_rows(const BasicTensor<T>& x, std::span<const std::uint32_t> index) {
  if (x.rank() != 2) throw ShapeError("index_rows: expected rank-2 input, got " + shape_string(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  auto idx = std::make_shared<std::vector<std::uint32_t>>(index.begin(), index.end());
  std::vector<T> out(idx->size() * cols);
  for (std::size_t e = 0; e < idx->size(); ++e) {
    if ((*idx)[e] >= rows) throw ShapeError("index_rows: index out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((*idx)[e] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(e * cols));
  }
  return make_result<T>("index_rows", {idx->size(), cols}, std::move(out), {x.node()},
                        [idx, cols](Node<T>& self) {
                          auto& px = *self.parents[0];
                          if (!px.requires_grad) return;
                          auto& g = px.grad_buffer();
                          for (std::size_t e = 0; e < idx->size(); ++e) {
                            for (std::size_t c = 0; c < cols; ++c) {
                              g[(*idx)[e] * cols + c] += self.grad[e * cols + c];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> scatter_add_rows(const BasicTensor<T>& x, std::span<const std::uint32_t> index,
                                std::size_t rows) {
  if (x.rank() != 2 || x.dim(0) != index.size()) {
    throw ShapeError("scatter_add_rows: input " + shape_string(x.shape()) + " vs " +
                     std::to_string(index.size()) + " indices");
  }
  const std::size_t cols = x.dim(1);
  auto idx = std::make_shared<std::vector<std::uint32_t>>(index.begin(), index.end());
  std::vector<T> out(rows * cols, T(0));
  for (std::size_t e = 0; e < idx->size(); ++e) {
    if ((*idx)[e] >= rows) throw ShapeError("scatter_add_rows: index out of range");
    for (std::size_t c = 0; c < cols; ++c) out[(*idx)[e] * cols + c] += x.data()[e * cols + c];
  }
  return make_result<T>("scatter_add_rows", {rows, cols}, std::move(out), {x.node()},
                        [idx, cols](Node<T>& self) {
                          auto& px = *self.parents[0];
                          if (!px.requires_grad) return;
                          auto& g = px.grad_buffer();
                          for (std::size_t e = 0; e < idx->size(); ++e) {
                            for (std::size_t c = 0; c < cols; ++c) {
                              g[e * cols + c] += self.grad[(*idx)[e] * cols + c];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> segment_softmax(const BasicTensor<T>& scores, std::span<const std::uint32_t> segment,
                               std::size_t segments) {
  if (scores.numel() != segment.size()) {
    throw ShapeError("segment_softmax: " + std::to_string(scores.numel()) + " scores vs " +
                     std::to_string(segment.size()) + " segment ids");
  }
  auto seg = std::make_shared<std::vector<std::uint32_t>>(segment.begin(), segment.end());
  const auto& sv = scores.node()->value;
  std::vector<T> mx(segments, -std::numeric_limits<T>::infinity());
  for (std::size_t e = 0; e < sv.size(); ++e) {
    if ((*seg)[e] >= segments) throw ShapeError("segment_softmax: segment id out of range");
    mx[(*seg)[e]] = std::max(mx[(*seg)[e]], sv[e]);
  }
  std::vector<T> total(segments, T(0));
  std::vector<T> out(sv.size());
  for (std::size_t e = 0; e < sv.size(); ++e) {
    out[e] = std::exp(sv[e] - mx[(*seg)[e]]);
    total[(*seg)[e]] += out[e];
  }
  for (std::size_t e = 0; e < sv.size(); ++e) out[e] /= total[(*seg)[e]];
  return make_result<T>("segment_softmax", scores.shape(), std::move(out), {scores.node()},
                        [seg, segments](Node<T>& self) {
                          auto& px = *self.parents[0];
                          if (!px.requires_grad) return;
                          std::vector<T> dot(segments, T(0));
                          for (std::size_t e = 0; e < seg->size(); ++e) {
                            dot[(*seg)[e]] += self.grad[e] * self.value[e];
                          }
                          auto& g = px.grad_buffer();
                          for (std::size_t e = 0; e < seg->size(); ++e) {
                            g[e] += self.value[e] * (self.grad[e] - dot[(*seg)[e]]);
                          }
                        });
}

#define TERRALABEL_INSTANTIATE_OPS(T)                                                                   \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> div(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                         \
  template BasicTensor<T> mul_scalar(const BasicTensor<T>&, T);                                         \
  template BasicTensor<T> rsub_scalar(T, const BasicTensor<T>&);                                        \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                                         \
  template BasicTensor<T> elu(const BasicTensor<T>&, T);                                                \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                               \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> log(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> clamp(const BasicTensor<T>&, T, T);                                           \
  template BasicTensor<T> add_broadcast(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t);     \
  template BasicTensor<T> scale_rows(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> sum(const BasicTensor<T>&, std::size_t);                                      \
  template BasicTensor<T> mean(const BasicTensor<T>&, std::size_t);                                     \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                                  \
  template BasicTensor<T> log_softmax(const BasicTensor<T>&, std::size_t);                              \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::size_t);                      \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                        \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t);            \
  template BasicTensor<T> max_pool2x2(const BasicTensor<T>&);                                           \
  template BasicTensor<T> upsample_nearest2x(const BasicTensor<T>&);                                    \
  template BasicTensor<T> batch_norm2d(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                       const BasicTensor<T>&, BatchNormState<T>&, bool);                \
  template BasicTensor<T> index_rows(const BasicTensor<T>&, std::span<const std::uint32_t>);            \
  template BasicTensor<T> scatter_add_rows(const BasicTensor<T>&, std::span<const std::uint32_t>,       \
                                           std::size_t);                                                \
  template BasicTensor<T> segment_softmax(const BasicTensor<T>&, std::span<const std::uint32_t>,        \
                                          std::size_t);

TERRALABEL_INSTANTIATE_OPS(float)
TERRALABEL_INSTANTIATE_OPS(double)

#undef TERRALABEL_INSTANTIATE_OPS

}  // namespace terralabel::numerics
