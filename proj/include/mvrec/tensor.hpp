#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mvrec {

using Shape = std::vector<int>;

long long numel(const Shape& s);
std::string shape_str(const Shape& s);

class Graph;

// Dense f64 tensor, row-major. Buffers are shared and treated as immutable
// once an op has consumed them. A tensor may refer to the graph node that
// produced it; node < 0 means plain value (constants, weights at rest).
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  Graph* graph = nullptr;
  int node = -1;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v);

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v);

  long long size() const { return data ? (long long)data->size() : 0; }
  double at(long long i) const { return (*data)[i]; }
  double& at(long long i) { return (*data)[i]; }
  const double* ptr() const { return data->data(); }
  double* ptr() { return data->data(); }
  double value() const;  // scalar convenience, requires size()==1
  bool tracked() const { return node >= 0; }
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction; backward() walks it in reverse.
class Graph {
 public:
  // Receives the output gradient and one accumulation buffer per tracked
  // input (same order as the node's input list); adds into them.
  using BackwardFn = std::function<void(const std::vector<double>& gout,
                                        const std::vector<std::vector<double>*>& gin)>;

  // Registers a value as a tracked input (weight or differentiable input).
  Tensor leaf(const Tensor& value);

  // Wraps a freshly computed value in a node. Checks the buffer for
  // NaN/Inf: a non-finite intermediate is an error state, not a value.
  Tensor track(Tensor value, const char* op, std::vector<int> inputs, BackwardFn bw);

  std::size_t num_nodes() const { return nodes_.size(); }
  const char* op_kind(int node) const { return nodes_[node].op; }
  const Shape& node_shape(int node) const { return nodes_[node].shape; }

  // Reverse accumulation from a scalar loss; returns one gradient buffer per
  // node id (empty for nodes the loss does not reach).
  std::vector<std::vector<double>> backward(const Tensor& loss) const;

 private:
  struct Node {
    const char* op;
    Shape shape;
    std::vector<int> inputs;
    BackwardFn bw;  // null for leaves
  };
  std::vector<Node> nodes_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale_const(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor reciprocal(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor sqrt_eps(const Tensor& a, double eps = 0.0);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor gelu(const Tensor& a);
// out = a * s, s scalar tensor {1}
Tensor mul_scalar_t(const Tensor& a, const Tensor& s);

// ---- linear algebra / reductions ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_rows(const Tensor& a);                        // {r,c} -> {r}
Tensor softmax_rows(const Tensor& a);                    // {r,c} rowwise
Tensor row_broadcast_add(const Tensor& a, const Tensor& b);  // {r,c} + {c}
Tensor scale_rows(const Tensor& a, const Tensor& s);     // {r,c} * {r}

// ---- shaping ----
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& a, Shape s);  // same element order

bool all_finite(const std::vector<double>& v);

}  // namespace mvrec
