#include "mvrec/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace mvrec {

long long numel(const Shape& s) {
  long long n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)) {
  if (numel(shape) != (long long)v.size())
    throw std::invalid_argument("tensor: data length " + std::to_string(v.size()) +
                                " does not match shape " + shape_str(shape));
  data = std::make_shared<std::vector<double>>(std::move(v));
}

Tensor Tensor::zeros(Shape s) {
  long long n = numel(s);
  return Tensor(std::move(s), std::vector<double>((size_t)n, 0.0));
}

Tensor Tensor::full(Shape s, double v) {
  long long n = numel(s);
  return Tensor(std::move(s), std::vector<double>((size_t)n, v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

double Tensor::value() const {
  if (size() != 1) throw std::invalid_argument("value(): tensor is not scalar");
  return (*data)[0];
}

Tensor Graph::leaf(const Tensor& value) {
  Tensor t = value;
  t.graph = this;
  t.node = (int)nodes_.size();
  nodes_.push_back(Node{"leaf", t.shape, {}, nullptr});
  return t;
}

Tensor Graph::track(Tensor value, const char* op, std::vector<int> inputs, BackwardFn bw) {
  if (!all_finite(*value.data))
    throw std::runtime_error(std::string("non-finite values produced by op '") + op + "'");
  value.graph = this;
  value.node = (int)nodes_.size();
  nodes_.push_back(Node{op, value.shape, std::move(inputs), std::move(bw)});
  return value;
}

std::vector<std::vector<double>> Graph::backward(const Tensor& loss) const {
  if (loss.graph != this || loss.node < 0)
    throw std::invalid_argument("backward: loss is not a node of this graph");
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  std::vector<std::vector<double>> grads(nodes_.size());
  grads[loss.node] = {1.0};
  for (int i = loss.node; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (grads[i].empty() || !n.bw) continue;
    std::vector<std::vector<double>*> gin(n.inputs.size());
    for (size_t k = 0; k < n.inputs.size(); ++k) {
      int j = n.inputs[k];
      if (grads[j].empty()) grads[j].assign((size_t)numel(nodes_[j].shape), 0.0);
      gin[k] = &grads[j];
    }
    n.bw(grads[i], gin);
  }
  return grads;
}

namespace {

Graph* common_graph(std::initializer_list<const Tensor*> ts) {
  Graph* g = nullptr;
  for (const Tensor* t : ts) {
    if (!t->tracked()) continue;
    if (!g)
      g = t->graph;
    else if (g != t->graph)
      throw std::invalid_argument("op mixes tensors from different graphs");
  }
  return g;
}

// Builds the result: tracked if any input is, otherwise a plain value.
Tensor finish(Tensor out, const char* op, std::initializer_list<const Tensor*> ins,
              Graph::BackwardFn bw) {
  Graph* g = common_graph(ins);
  if (!g) {
    if (!all_finite(*out.data))
      throw std::runtime_error(std::string("non-finite values produced by op '") + op + "'");
    return out;
  }
  std::vector<int> ids;
  for (const Tensor* t : ins)
    if (t->tracked()) ids.push_back(t->node);
  return g->track(std::move(out), op, std::move(ids), std::move(bw));
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Dispatches gradient buffers to the tracked subset of (a, b) in order.
template <class FA, class FB>
Graph::BackwardFn binary_bw(const Tensor& a, const Tensor& b, FA fa, FB fb) {
  bool ta = a.tracked(), tb = b.tracked();
  return [ta, tb, fa, fb](const std::vector<double>& g,
                          const std::vector<std::vector<double>*>& gin) {
    size_t k = 0;
    if (ta) fa(g, *gin[k++]);
    if (tb) fb(g, *gin[k]);
  };
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, "add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor out = Tensor::zeros(a.shape);
  const double *pa = a.ptr(), *pb = b.ptr();
  double* po = out.ptr();
  long long n = a.size();
  for (long long i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  auto acc = [](const std::vector<double>& g, std::vector<double>& dst) {
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  };
  return finish(std::move(out), "add", {&a, &b}, binary_bw(a, b, acc, acc));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, "sub: shape mismatch");
  Tensor out = Tensor::zeros(a.shape);
  long long n = a.size();
  for (long long i = 0; i < n; ++i) out.at(i) = a.at(i) - b.at(i);
  return finish(std::move(out), "sub", {&a, &b},
                binary_bw(
                    a, b,
                    [](const std::vector<double>& g, std::vector<double>& dst) {
                      for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                    },
                    [](const std::vector<double>& g, std::vector<double>& dst) {
                      for (size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
                    }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, "mul: shape mismatch");
  Tensor out = Tensor::zeros(a.shape);
  long long n = a.size();
  for (long long i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
  auto da = a.data, db = b.data;
  return finish(std::move(out), "mul", {&a, &b},
                binary_bw(
                    a, b,
                    [db](const std::vector<double>& g, std::vector<double>& dst) {
                      for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (*db)[i];
                    },
                    [da](const std::vector<double>& g, std::vector<double>& dst) {
                      for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (*da)[i];
                    }));
}

Tensor neg(const Tensor& a) { return scale_const(a, -1.0); }

Tensor scale_const(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape);
  long long n = a.size();
  for (long long i = 0; i < n; ++i) out.at(i) = a.at(i) * c;
  return finish(std::move(out), "scale_const", {&a},
                [c](const std::vector<double>& g, const std::vector<std::vector<double>*>& gin) {
                  for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * c;
                });
}

Tensor add_const(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape);
  long long n = a.size();
  for (long long i = 0; i < n; ++i) out.at(i) = a.at(i) + c;
  return finish(std::move(out), "add_const", {&a},
                [](const std::vector<double>& g, const std::vector<std::vector<double>*>& gin) {
                  for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                });
}

namespace {

template <class F, class DF>
Tensor unary_op(const Tensor& a, const char* name, F f, DF df_from_xy) {
  Tensor out = Tensor::zeros(a.shape);
  long long n = a.size();
  for (long long i = 0; i < n; ++i) out.at(i) = f(a.at(i));
  auto da = a.data, dy = out.data;
  return finish(std::move(out), name, {&a},
                [da, dy, df_from_xy](const std::vector<double>& g,
                                     const std::vector<std::vector<double>*>& gin) {
                  for (size_t i = 0; i < g.size(); ++i)
                    (*gin[0])[i] += g[i] * df_from_xy((*da)[i], (*dy)[i]);
                });
}

}  // namespace

Tensor reciprocal(const Tensor& a) {
  return unary_op(
      a, "reciprocal", [](double x) { return 1.0 / x; },
      [](double, double y) { return -y * y; });
}

Tensor exp_t(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
  return unary_op(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt_eps(const Tensor& a, double eps) {
  return unary_op(
      a, "sqrt", [eps](double x) { return std::sqrt(x + eps); },
      [](double, double y) { return 0.5 / y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid",
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      a, "softplus",
      [](double x) { return x > 30 ? x : std::log1p(std::exp(x)); },
      [](double x, double) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary_op(
      a, "gelu",
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

Tensor mul_scalar_t(const Tensor& a, const Tensor& s) {
  require(s.size() == 1, "mul_scalar_t: s must be scalar");
  double sv = s.at(0);
  Tensor out = Tensor::zeros(a.shape);
  long long n = a.size();
  for (long long i = 0; i < n; ++i) out.at(i) = a.at(i) * sv;
  auto da = a.data;
  return finish(std::move(out), "mul_scalar_t", {&a, &s},
                binary_bw(
                    a, s,
                    [sv](const std::vector<double>& g, std::vector<double>& dst) {
                      for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * sv;
                    },
                    [da](const std::vector<double>& g, std::vector<double>& dst) {
                      double acc = 0;
                      for (size_t i = 0; i < g.size(); ++i) acc += g[i] * (*da)[i];
                      dst[0] += acc;
                    }));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.shape.size() == 2 && b.shape.size() == 2, "matmul: operands must be 2-D");
  require(a.shape[1] == b.shape[0], "matmul: inner dims disagree " + shape_str(a.shape) + " x " +
                                        shape_str(b.shape));
  int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out = Tensor::zeros({m, n});
  const double *pa = a.ptr(), *pb = b.ptr();
  double* po = out.ptr();
  for (int i = 0; i < m; ++i) {
    const double* ai = pa + (size_t)i * k;
    double* oi = po + (size_t)i * n;
    for (int l = 0; l < k; ++l) {
      double av = ai[l];
      const double* bl = pb + (size_t)l * n;
      for (int j = 0; j < n; ++j) oi[j] += av * bl[j];
    }
  }
  auto da = a.data, db = b.data;
  return finish(std::move(out), "matmul", {&a, &b},
                binary_bw(
                    a, b,
                    [db, m, k, n](const std::vector<double>& g, std::vector<double>& dst) {
                      // dA = g . B^T
                      for (int i = 0; i < m; ++i)
                        for (int j = 0; j < n; ++j) {
                          double gv = g[(size_t)i * n + j];
                          if (gv == 0) continue;
                          const double* bj = db->data() + j;
                          double* di = dst.data() + (size_t)i * k;
                          for (int l = 0; l < k; ++l) di[l] += gv * bj[(size_t)l * n];
                        }
                    },
                    [da, m, k, n](const std::vector<double>& g, std::vector<double>& dst) {
                      // dB = A^T . g
                      for (int i = 0; i < m; ++i) {
                        const double* ai = da->data() + (size_t)i * k;
                        const double* gi = g.data() + (size_t)i * n;
                        for (int l = 0; l < k; ++l) {
                          double av = ai[l];
                          if (av == 0) continue;
                          double* dl = dst.data() + (size_t)l * n;
                          for (int j = 0; j < n; ++j) dl[j] += av * gi[j];
                        }
                      }
                    }));
}

Tensor transpose(const Tensor& a) {
  require(a.shape.size() == 2, "transpose: operand must be 2-D");
  int m = a.shape[0], n = a.shape[1];
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at((size_t)j * m + i) = a.at((size_t)i * n + j);
  return finish(std::move(out), "transpose", {&a},
                [m, n](const std::vector<double>& g, const std::vector<std::vector<double>*>& gin) {
                  for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                      (*gin[0])[(size_t)i * n + j] += g[(size_t)j * m + i];
                });
}

Tensor sum(const Tensor& a) {
  double acc = 0;
  long long n = a.size();
  for (long long i = 0; i < n; ++i) acc += a.at(i);
  Tensor out = Tensor::scalar(acc);
  return finish(std::move(out), "sum", {&a},
                [n](const std::vector<double>& g, const std::vector<std::vector<double>*>& gin) {
                  for (long long i = 0; i < n; ++i) (*gin[0])[i] += g[0];
                });
}

Tensor mean(const Tensor& a) {
  require(a.size() > 0, "mean: empty tensor");
  return scale_const(sum(a), 1.0 / (double)a.size());
}

Tensor sum_rows(const Tensor& a) {
  require(a.shape.size() == 2, "sum_rows: operand must be 2-D");
  int r = a.shape[0], c = a.shape[1];
  Tensor out = Tensor::zeros({r});
  for (int i = 0; i < r; ++i) {
    double acc = 0;
    for (int j = 0; j < c; ++j) acc += a.at((size_t)i * c + j);
    out.at(i) = acc;
  }
  return finish(std::move(out), "sum_rows", {&a},
                [r, c](const std::vector<double>& g, const std::vector<std::vector<double>*>& gin) {
                  for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) (*gin[0])[(size_t)i * c + j] += g[i];
                });
}

Tensor softmax_rows(const Tensor& a) {
  require(a.shape.size() == 2, "softmax_rows: operand must be 2-D");
  int r = a.shape[0], c = a.shape[1];
  Tensor out = Tensor::zeros({r, c});
  for (int i = 0; i < r; ++i) {
    const double* xi = a.ptr() + (size_t)i * c;
    double* yi = out.ptr() + (size_t)i * c;
    double mx = xi[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
    double z = 0;
    for (int j = 0; j < c; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      z += yi[j];
    }
    for (int j = 0; j < c; ++j) yi[j] /= z;
  }
  auto dy = out.data;
  return finish(std::move(out), "softmax_rows", {&a},
                [dy, r, c](const std::vector<double>& g, const std::vector<std::vector<double>*>& gin) {
                  for (int i = 0; i < r; ++i) {
                    const double* yi = dy->data() + (size_t)i * c;
                    const double* gi = g.data() + (size_t)i * c;
                    double dot = 0;
                    for (int j = 0; j < c; ++j) dot += gi[j] * yi[j];
                    double* di = gin[0]->data() + (size_t)i * c;
                    for (int j = 0; j < c; ++j) di[j] += yi[j] * (gi[j] - dot);
                  }
                });
}

Tensor row_broadcast_add(const Tensor& a, const Tensor& b) {
  require(a.shape.size() == 2 && b.shape.size() == 1 && a.shape[1] == b.shape[0],
          "row_broadcast_add: want {r,c} + {c}");
  int r = a.shape[0], c = a.shape[1];
  Tensor out = Tensor::zeros({r, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at((size_t)i * c + j) = a.at((size_t)i * c + j) + b.at(j);
  return finish(std::move(out), "row_broadcast_add", {&a, &b},
                binary_bw(
                    a, b,
                    [](const std::vector<double>& g, std::vector<double>& dst) {
                      for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                    },
                    [r, c](const std::vector<double>& g, std::vector<double>& dst) {
                      for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j) dst[j] += g[(size_t)i * c + j];
                    }));
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  require(a.shape.size() == 2 && s.shape.size() == 1 && a.shape[0] == s.shape[0],
          "scale_rows: want {r,c} * {r}");
  int r = a.shape[0], c = a.shape[1];
  Tensor out = Tensor::zeros({r, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at((size_t)i * c + j) = a.at((size_t)i * c + j) * s.at(i);
  auto da = a.data, ds = s.data;
  return finish(std::move(out), "scale_rows", {&a, &s},
                binary_bw(
                    a, s,
                    [ds, r, c](const std::vector<double>& g, std::vector<double>& dst) {
                      for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j)
                          dst[(size_t)i * c + j] += g[(size_t)i * c + j] * (*ds)[i];
                    },
                    [da, r, c](const std::vector<double>& g, std::vector<double>& dst) {
                      for (int i = 0; i < r; ++i) {
                        double acc = 0;
                        for (int j = 0; j < c; ++j)
                          acc += g[(size_t)i * c + j] * (*da)[(size_t)i * c + j];
                        dst[i] += acc;
                      }
                    }));
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  require(a.shape.size() == 2, "slice_cols: operand must be 2-D");
  require(0 <= c0 && c0 < c1 && c1 <= a.shape[1], "slice_cols: bad range");
  int r = a.shape[0], c = a.shape[1], w = c1 - c0;
  Tensor out = Tensor::zeros({r, w});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < w; ++j) out.at((size_t)i * w + j) = a.at((size_t)i * c + c0 + j);
  return finish(std::move(out), "slice_cols", {&a},
                [r, c, w, c0](const std::vector<double>& g, const std::vector<std::vector<double>*>& gin) {
                  for (int i = 0; i < r; ++i)
                    for (int j = 0; j < w; ++j)
                      (*gin[0])[(size_t)i * c + c0 + j] += g[(size_t)i * w + j];
                });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: empty list");
  int r = parts[0].shape[0];
  int ctot = 0;
  for (const Tensor& p : parts) {
    require(p.shape.size() == 2 && p.shape[0] == r, "concat_cols: row mismatch");
    ctot += p.shape[1];
  }
  Tensor out = Tensor::zeros({r, ctot});
  std::vector<int> widths, offsets;
  int off = 0;
  for (const Tensor& p : parts) {
    int w = p.shape[1];
    widths.push_back(w);
    offsets.push_back(off);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j)
        out.at((size_t)i * ctot + off + j) = p.at((size_t)i * w + j);
    off += w;
  }
  Graph* g = nullptr;
  std::vector<int> ids;
  std::vector<int> tracked_idx;
  for (size_t k = 0; k < parts.size(); ++k) {
    if (!parts[k].tracked()) continue;
    if (g && parts[k].graph != g) throw std::invalid_argument("concat_cols: mixed graphs");
    g = parts[k].graph;
    ids.push_back(parts[k].node);
    tracked_idx.push_back((int)k);
  }
  if (!g) return out;
  return g->track(std::move(out), "concat_cols", std::move(ids),
                  [r, ctot, widths, offsets, tracked_idx](
                      const std::vector<double>& gr, const std::vector<std::vector<double>*>& gin) {
                    for (size_t k = 0; k < tracked_idx.size(); ++k) {
                      int p = tracked_idx[k], w = widths[p], o = offsets[p];
                      for (int i = 0; i < r; ++i)
                        for (int j = 0; j < w; ++j)
                          (*gin[k])[(size_t)i * w + j] += gr[(size_t)i * ctot + o + j];
                    }
                  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: empty list");
  int c = parts[0].shape[1];
  int rtot = 0;
  for (const Tensor& p : parts) {
    require(p.shape.size() == 2 && p.shape[1] == c, "concat_rows: col mismatch");
    rtot += p.shape[0];
  }
  Tensor out = Tensor::zeros({rtot, c});
  std::vector<long long> offsets;
  long long off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    std::memcpy(out.ptr() + off, p.ptr(), sizeof(double) * (size_t)p.size());
    off += p.size();
  }
  Graph* g = nullptr;
  std::vector<int> ids;
  std::vector<int> tracked_idx;
  for (size_t k = 0; k < parts.size(); ++k) {
    if (!parts[k].tracked()) continue;
    if (g && parts[k].graph != g) throw std::invalid_argument("concat_rows: mixed graphs");
    g = parts[k].graph;
    ids.push_back(parts[k].node);
    tracked_idx.push_back((int)k);
  }
  if (!g) return out;
  std::vector<long long> sizes;
  for (const Tensor& p : parts) sizes.push_back(p.size());
  return g->track(std::move(out), "concat_rows", std::move(ids),
                  [offsets, sizes, tracked_idx](const std::vector<double>& gr,
                                                const std::vector<std::vector<double>*>& gin) {
                    for (size_t k = 0; k < tracked_idx.size(); ++k) {
                      int p = tracked_idx[k];
                      for (long long i = 0; i < sizes[p]; ++i)
                        (*gin[k])[i] += gr[offsets[p] + i];
                    }
                  });
}

Tensor reshape(const Tensor& a, Shape s) {
  require(numel(s) == a.size(), "reshape: element count mismatch");
  Tensor out(std::move(s), *a.data);
  return finish(std::move(out), "reshape", {&a},
                [](const std::vector<double>& g, const std::vector<std::vector<double>*>& gin) {
                  for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                });
}

}  // namespace mvrec
