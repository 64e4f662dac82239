#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "scfc/errors.hpp"
#include "scfc/matrix.hpp"
#include "scfc/rng.hpp"

namespace scfc::ad {

// Dense float64 tensor of rank <= 4. Row-major; trailing dims of the fixed
// array are 1 so numel() is always the product of all four.
struct Shape {
  std::array<std::size_t, 4> dim{1, 1, 1, 1};
  std::size_t rank = 0;

  static Shape scalar() { return Shape{{1, 1, 1, 1}, 0}; }
  static Shape vec(std::size_t n) { return Shape{{n, 1, 1, 1}, 1}; }
  static Shape mat(std::size_t r, std::size_t c) { return Shape{{r, c, 1, 1}, 2}; }
  static Shape nchw(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return Shape{{n, c, h, w}, 4};
  }

  std::size_t numel() const { return dim[0] * dim[1] * dim[2] * dim[3]; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  int node_id = -1;  // index on the recording tape; -1 while off-tape

  Tensor() : shape(Shape::scalar()), data(1, 0.0) {}
  explicit Tensor(Shape s) : shape(s), data(s.numel(), 0.0) {}

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor full(Shape s, double v) {
    Tensor t(s);
    for (double& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(double v) {
    Tensor t(Shape::scalar());
    t.data[0] = v;
    return t;
  }
  static Tensor from_vec(const std::vector<double>& v) {
    Tensor t(Shape::vec(v.size()));
    t.data = v;
    return t;
  }
  static Tensor from_mat(const Mat& m);
  Mat to_mat() const;  // rank must be 2

  double scalar_value() const;  // numel must be 1
};

using NodeId = int;
using GradMap = std::map<NodeId, Tensor>;

enum class Pad { Same, Valid };

// Append-only reverse-mode tape. Record a forward computation through the
// kernel methods, then call backward(loss) once; it returns gradients for
// every leaf recorded with requires_grad and clears the tape. A consumed
// tape rejects further use with std::logic_error. Values are stored per node,
// so independent samples should be recorded on separate tapes when memory
// matters.
class Tape {
 public:
  NodeId input(Tensor t, bool requires_grad);

  // elementwise, operands of identical shape
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);

  NodeId matmul(NodeId a, NodeId b);  // rank-2 x rank-2
  NodeId transpose(NodeId a);         // rank-2

  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId log(NodeId a);
  NodeId clamp(NodeId a, double lo, double hi);

  // x: (N,Ci,H,W), w: (Co,Ci,kh,kw), bias: (Co); stride 1
  NodeId conv2d(NodeId x, NodeId w, NodeId bias, Pad pad);
  // 2x2 window, stride 2; H and W must be even
  NodeId maxpool2d(NodeId x);
  // x: (N,Ci,H,W), w: (Ci,Co,2,2), bias: (Co); stride 2, output (N,Co,2H,2W)
  NodeId conv_transpose2d(NodeId x, NodeId w, NodeId bias);

  NodeId concat(NodeId a, NodeId b, std::size_t axis);
  // pads H and W of an NCHW tensor with zeros
  NodeId zero_pad2d(NodeId x, std::size_t top, std::size_t left, std::size_t bottom,
                    std::size_t right);
  NodeId crop2d(NodeId x, std::size_t top, std::size_t left, std::size_t h,
                std::size_t w);

  NodeId mean_pool_rows(NodeId a);    // (R,C) -> (1,C)
  NodeId l2_normalize_rows(NodeId a); // (R,C), row-wise x/max(||x||, eps)
  // inverted dropout; the mask is drawn from rng at record time. p = 0 is the
  // identity map and draws nothing.
  NodeId dropout(NodeId a, double p, Rng& rng);

  NodeId mean(NodeId a);          // -> scalar
  NodeId sum(NodeId a);           // -> scalar
  NodeId frobenius_sq(NodeId a);  // -> scalar, sum of squares
  NodeId reshape(NodeId a, Shape s);

  // Scatters an E-vector of edge values into a QxQ symmetric matrix with unit
  // diagonal: out[i,j] = out[j,i] = values[e] for edge e = (i,j), zero at
  // non-edges. Edge endpoints must be distinct and < q.
  NodeId edge_mask_matrix(NodeId values,
                          const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                          std::size_t q);

  const Tensor& value(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Fan-out accumulates by summation in
  // fixed node order. Returns the gradient for each requires_grad leaf keyed
  // by its NodeId, then clears the tape.
  GradMap backward(NodeId loss);

 private:
  enum class Op : std::uint8_t {
    Leaf, Add, Sub, Mul, Scale, Matmul, Transpose, Relu, Sigmoid, Tanh, Log,
    Clamp, Conv2d, MaxPool2d, ConvT2d, Concat, ZeroPad2d, Crop2d, MeanPoolRows,
    L2NormRows, Dropout, Mean, Sum, FrobeniusSq, Reshape, EdgeMask,
  };

  struct Node {
    Op op = Op::Leaf;
    std::array<NodeId, 3> parent{-1, -1, -1};
    Tensor value;
    bool requires_grad = false;
    double s0 = 0.0, s1 = 0.0;              // scale factor / clamp bounds / p
    Pad pad = Pad::Valid;
    std::size_t axis = 0;
    std::array<std::size_t, 4> geom{0, 0, 0, 0};
    std::vector<std::uint32_t> idx;         // argmax targets / edge endpoints
    std::vector<double> mask;               // dropout mask
  };

  NodeId push(Node n);
  const Node& node(NodeId id) const;
  void check_open(const char* op) const;
  void check_id(NodeId id, const char* op) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Max relative gradient error of scalar-valued f over every coordinate of
// every input, comparing backward() against central differences with step h:
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|). f must build the
// same computation on every call.
double grad_check(const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& f,
                  const std::vector<Tensor>& inputs, double h = 1e-6);

// Same check restricted to a seeded random subset of coordinates per input;
// keeps finite differencing tractable for losses with many parameters.
double grad_check_sampled(
    const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& f,
    const std::vector<Tensor>& inputs, double h, std::size_t coords_per_input,
    Rng& rng);

}  // namespace scfc::ad
