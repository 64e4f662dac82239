#include "scfc/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace scfc::ad {
namespace {

constexpr double kNormEps = 1e-24;

void check_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (!(a == b))
    fail(Errc::ShapeMismatch,
         std::string(op) + ": operand shapes " + a.str() + " and " + b.str() +
             " disagree");
}

}  // namespace

std::string Shape::str() const {
  std::string s = "(";
  for (std::size_t d = 0; d < std::max<std::size_t>(rank, 1); ++d) {
    if (d) s += ",";
    s += std::to_string(dim[d]);
  }
  return s + ")";
}

Tensor Tensor::from_mat(const Mat& m) {
  Tensor t(Shape::mat(m.rows(), m.cols()));
  t.data = m.storage();
  return t;
}

Mat Tensor::to_mat() const {
  if (shape.rank != 2)
    fail(Errc::ShapeMismatch, "to_mat on a tensor of shape " + shape.str());
  Mat m(shape.dim[0], shape.dim[1]);
  m.storage() = data;
  return m;
}

double Tensor::scalar_value() const {
  if (shape.numel() != 1)
    fail(Errc::ShapeMismatch, "scalar_value on a tensor of shape " + shape.str());
  return data[0];
}

void Tape::check_open(const char* op) const {
  if (consumed_)
    throw std::logic_error(std::string(op) + " on a consumed tape; tapes are single-use");
}

void Tape::check_id(NodeId id, const char* op) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw std::logic_error(std::string(op) + ": node id " + std::to_string(id) +
                           " is not on this tape");
}

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  const NodeId id = static_cast<NodeId>(nodes_.size() - 1);
  nodes_.back().value.node_id = id;
  return id;
}

const Tape::Node& Tape::node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }

const Tensor& Tape::value(NodeId id) const {
  check_open("value");
  check_id(id, "value");
  return nodes_[static_cast<std::size_t>(id)].value;
}

NodeId Tape::input(Tensor t, bool requires_grad) {
  check_open("input");
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = requires_grad;
  t.requires_grad = requires_grad;
  n.value = std::move(t);
  return push(std::move(n));
}

// ---- elementwise ----

NodeId Tape::add(NodeId a, NodeId b) {
  check_open("add");
  check_id(a, "add");
  check_id(b, "add");
  const Node& na = node(a);
  const Node& nb = node(b);
  check_same_shape("add", na.value.shape, nb.value.shape);
  Node n;
  n.op = Op::Add;
  n.parent = {a, b, -1};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = Tensor(na.value.shape);
  for (std::size_t i = 0; i < n.value.data.size(); ++i)
    n.value.data[i] = na.value.data[i] + nb.value.data[i];
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check_open("sub");
  check_id(a, "sub");
  check_id(b, "sub");
  const Node& na = node(a);
  const Node& nb = node(b);
  check_same_shape("sub", na.value.shape, nb.value.shape);
  Node n;
  n.op = Op::Sub;
  n.parent = {a, b, -1};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = Tensor(na.value.shape);
  for (std::size_t i = 0; i < n.value.data.size(); ++i)
    n.value.data[i] = na.value.data[i] - nb.value.data[i];
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  check_open("mul");
  check_id(a, "mul");
  check_id(b, "mul");
  const Node& na = node(a);
  const Node& nb = node(b);
  check_same_shape("mul", na.value.shape, nb.value.shape);
  Node n;
  n.op = Op::Mul;
  n.parent = {a, b, -1};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = Tensor(na.value.shape);
  for (std::size_t i = 0; i < n.value.data.size(); ++i)
    n.value.data[i] = na.value.data[i] * nb.value.data[i];
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double s) {
  check_open("scale");
  check_id(a, "scale");
  const Node& na = node(a);
  Node n;
  n.op = Op::Scale;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  n.s0 = s;
  n.value = Tensor(na.value.shape);
  for (std::size_t i = 0; i < n.value.data.size(); ++i)
    n.value.data[i] = s * na.value.data[i];
  return push(std::move(n));
}

// ---- linear algebra ----

NodeId Tape::matmul(NodeId a, NodeId b) {
  check_open("matmul");
  check_id(a, "matmul");
  check_id(b, "matmul");
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.value.shape.rank != 2 || nb.value.shape.rank != 2 ||
      na.value.shape.dim[1] != nb.value.shape.dim[0])
    fail(Errc::ShapeMismatch, "matmul: operand shapes " + na.value.shape.str() +
                                  " and " + nb.value.shape.str() + " disagree");
  const std::size_t r = na.value.shape.dim[0];
  const std::size_t k = na.value.shape.dim[1];
  const std::size_t c = nb.value.shape.dim[1];
  Node n;
  n.op = Op::Matmul;
  n.parent = {a, b, -1};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = Tensor(Shape::mat(r, c));
  const double* pa = na.value.data.data();
  const double* pb = nb.value.data.data();
  double* po = n.value.data.data();
  for (std::size_t i = 0; i < r; ++i) {
    double* orow = po + i * c;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * c;
      for (std::size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
    }
  }
  return push(std::move(n));
}

NodeId Tape::transpose(NodeId a) {
  check_open("transpose");
  check_id(a, "transpose");
  const Node& na = node(a);
  if (na.value.shape.rank != 2)
    fail(Errc::ShapeMismatch, "transpose: needs rank 2, got " + na.value.shape.str());
  const std::size_t r = na.value.shape.dim[0];
  const std::size_t c = na.value.shape.dim[1];
  Node n;
  n.op = Op::Transpose;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  n.value = Tensor(Shape::mat(c, r));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      n.value.data[j * r + i] = na.value.data[i * c + j];
  return push(std::move(n));
}

// ---- pointwise nonlinearities ----

NodeId Tape::relu(NodeId a) {
  check_open("relu");
  check_id(a, "relu");
  const Node& na = node(a);
  Node n;
  n.op = Op::Relu;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  n.value = Tensor(na.value.shape);
  for (std::size_t i = 0; i < n.value.data.size(); ++i)
    n.value.data[i] = na.value.data[i] > 0.0 ? na.value.data[i] : 0.0;
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId a) {
  check_open("sigmoid");
  check_id(a, "sigmoid");
  const Node& na = node(a);
  Node n;
  n.op = Op::Sigmoid;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  n.value = Tensor(na.value.shape);
  for (std::size_t i = 0; i < n.value.data.size(); ++i) {
    const double x = na.value.data[i];
    if (x >= 0.0) {
      n.value.data[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      n.value.data[i] = e / (1.0 + e);
    }
  }
  return push(std::move(n));
}

NodeId Tape::tanh(NodeId a) {
  check_open("tanh");
  check_id(a, "tanh");
  const Node& na = node(a);
  Node n;
  n.op = Op::Tanh;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  n.value = Tensor(na.value.shape);
  for (std::size_t i = 0; i < n.value.data.size(); ++i)
    n.value.data[i] = std::tanh(na.value.data[i]);
  return push(std::move(n));
}

NodeId Tape::log(NodeId a) {
  check_open("log");
  check_id(a, "log");
  const Node& na = node(a);
  Node n;
  n.op = Op::Log;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  n.value = Tensor(na.value.shape);
  for (std::size_t i = 0; i < n.value.data.size(); ++i)
    n.value.data[i] = std::log(na.value.data[i]);
  return push(std::move(n));
}

NodeId Tape::clamp(NodeId a, double lo, double hi) {
  check_open("clamp");
  check_id(a, "clamp");
  if (!(lo <= hi)) fail(Errc::ConfigInvalid, "clamp: lo exceeds hi");
  const Node& na = node(a);
  Node n;
  n.op = Op::Clamp;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  n.s0 = lo;
  n.s1 = hi;
  n.value = Tensor(na.value.shape);
  for (std::size_t i = 0; i < n.value.data.size(); ++i)
    n.value.data[i] = std::min(hi, std::max(lo, na.value.data[i]));
  return push(std::move(n));
}

// ---- convolution stack ----

NodeId Tape::conv2d(NodeId x, NodeId w, NodeId bias, Pad pad) {
  check_open("conv2d");
  check_id(x, "conv2d");
  check_id(w, "conv2d");
  check_id(bias, "conv2d");
  const Node& nx = node(x);
  const Node& nw = node(w);
  const Node& nb = node(bias);
  const Shape& xs = nx.value.shape;
  const Shape& ws = nw.value.shape;
  if (xs.rank != 4 || ws.rank != 4 || xs.dim[1] != ws.dim[1])
    fail(Errc::ShapeMismatch, "conv2d: input " + xs.str() + " vs kernel " + ws.str());
  const std::size_t N = xs.dim[0], Ci = xs.dim[1], H = xs.dim[2], W = xs.dim[3];
  const std::size_t Co = ws.dim[0], kh = ws.dim[2], kw = ws.dim[3];
  if (nb.value.shape.rank != 1 || nb.value.shape.dim[0] != Co)
    fail(Errc::ShapeMismatch, "conv2d: bias shape " + nb.value.shape.str() +
                                  " does not match " + std::to_string(Co) + " channels");
  std::size_t ph = 0, pw = 0, OH, OW;
  if (pad == Pad::Same) {
    if (kh % 2 == 0 || kw % 2 == 0)
      fail(Errc::ShapeMismatch, "conv2d: same padding needs odd kernel dims, got " +
                                    ws.str());
    ph = (kh - 1) / 2;
    pw = (kw - 1) / 2;
    OH = H;
    OW = W;
  } else {
    if (H < kh || W < kw)
      fail(Errc::ShapeMismatch, "conv2d: kernel " + ws.str() +
                                    " larger than input " + xs.str());
    OH = H - kh + 1;
    OW = W - kw + 1;
  }
  Node n;
  n.op = Op::Conv2d;
  n.parent = {x, w, bias};
  n.requires_grad = nx.requires_grad || nw.requires_grad || nb.requires_grad;
  n.pad = pad;
  n.value = Tensor(Shape::nchw(N, Co, OH, OW));
  const double* px = nx.value.data.data();
  const double* pw_ = nw.value.data.data();
  const double* pb = nb.value.data.data();
  double* po = n.value.data.data();
  for (std::size_t b = 0; b < N; ++b) {
    for (std::size_t co = 0; co < Co; ++co) {
      double* out_plane = po + (b * Co + co) * OH * OW;
      std::fill(out_plane, out_plane + OH * OW, pb[co]);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const double* x_plane = px + (b * Ci + ci) * H * W;
        const double* w_block = pw_ + (co * Ci + ci) * kh * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double wv = w_block[ky * kw + kx];
            const std::size_t oy_lo = ky < ph ? ph - ky : 0;
            const std::size_t oy_hi = std::min(OH, H + ph - ky);
            const std::size_t ox_lo = kx < pw ? pw - kx : 0;
            const std::size_t ox_hi = std::min(OW, W + pw - kx);
            if (oy_lo >= oy_hi || ox_lo >= ox_hi) continue;
            for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
              const double* xr = x_plane + (oy + ky - ph) * W + (ox_lo + kx - pw);
              double* outr = out_plane + oy * OW + ox_lo;
              const std::size_t len = ox_hi - ox_lo;
              for (std::size_t t = 0; t < len; ++t) outr[t] += wv * xr[t];
            }
          }
        }
      }
    }
  }
  return push(std::move(n));
}

NodeId Tape::maxpool2d(NodeId x) {
  check_open("maxpool2d");
  check_id(x, "maxpool2d");
  const Node& nx = node(x);
  const Shape& xs = nx.value.shape;
  if (xs.rank != 4 || xs.dim[2] % 2 != 0 || xs.dim[3] % 2 != 0)
    fail(Errc::ShapeMismatch,
         "maxpool2d: needs rank 4 with even H and W, got " + xs.str());
  const std::size_t N = xs.dim[0], C = xs.dim[1], H = xs.dim[2], W = xs.dim[3];
  const std::size_t OH = H / 2, OW = W / 2;
  Node n;
  n.op = Op::MaxPool2d;
  n.parent = {x, -1, -1};
  n.requires_grad = nx.requires_grad;
  n.value = Tensor(Shape::nchw(N, C, OH, OW));
  n.idx.resize(n.value.data.size());
  const double* px = nx.value.data.data();
  double* po = n.value.data.data();
  std::size_t o = 0;
  for (std::size_t b = 0; b < N; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t plane = (b * C + c) * H * W;
      for (std::size_t oy = 0; oy < OH; ++oy) {
        for (std::size_t ox = 0; ox < OW; ++ox, ++o) {
          // ties resolve to the earliest window position
          std::size_t best = plane + (2 * oy) * W + 2 * ox;
          double bv = px[best];
          const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
          for (std::size_t t = 0; t < 3; ++t) {
            if (px[cand[t]] > bv) {
              bv = px[cand[t]];
              best = cand[t];
            }
          }
          po[o] = bv;
          n.idx[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return push(std::move(n));
}

NodeId Tape::conv_transpose2d(NodeId x, NodeId w, NodeId bias) {
  check_open("conv_transpose2d");
  check_id(x, "conv_transpose2d");
  check_id(w, "conv_transpose2d");
  check_id(bias, "conv_transpose2d");
  const Node& nx = node(x);
  const Node& nw = node(w);
  const Node& nb = node(bias);
  const Shape& xs = nx.value.shape;
  const Shape& ws = nw.value.shape;
  if (xs.rank != 4 || ws.rank != 4 || ws.dim[2] != 2 || ws.dim[3] != 2 ||
      xs.dim[1] != ws.dim[0])
    fail(Errc::ShapeMismatch,
         "conv_transpose2d: input " + xs.str() + " vs kernel " + ws.str());
  const std::size_t N = xs.dim[0], Ci = xs.dim[1], H = xs.dim[2], W = xs.dim[3];
  const std::size_t Co = ws.dim[1];
  if (nb.value.shape.rank != 1 || nb.value.shape.dim[0] != Co)
    fail(Errc::ShapeMismatch, "conv_transpose2d: bias shape " + nb.value.shape.str() +
                                  " does not match " + std::to_string(Co) + " channels");
  const std::size_t OH = 2 * H, OW = 2 * W;
  Node n;
  n.op = Op::ConvT2d;
  n.parent = {x, w, bias};
  n.requires_grad = nx.requires_grad || nw.requires_grad || nb.requires_grad;
  n.value = Tensor(Shape::nchw(N, Co, OH, OW));
  const double* px = nx.value.data.data();
  const double* pw_ = nw.value.data.data();
  const double* pb = nb.value.data.data();
  double* po = n.value.data.data();
  for (std::size_t b = 0; b < N; ++b) {
    for (std::size_t co = 0; co < Co; ++co) {
      double* out_plane = po + (b * Co + co) * OH * OW;
      std::fill(out_plane, out_plane + OH * OW, pb[co]);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const double* x_plane = px + (b * Ci + ci) * H * W;
        const double* w_block = pw_ + (ci * Co + co) * 4;
        for (std::size_t ky = 0; ky < 2; ++ky) {
          for (std::size_t kx = 0; kx < 2; ++kx) {
            const double wv = w_block[ky * 2 + kx];
            for (std::size_t y = 0; y < H; ++y) {
              const double* xr = x_plane + y * W;
              double* outr = out_plane + (2 * y + ky) * OW + kx;
              for (std::size_t xcol = 0; xcol < W; ++xcol)
                outr[2 * xcol] += wv * xr[xcol];
            }
          }
        }
      }
    }
  }
  return push(std::move(n));
}

// ---- structure ops ----

NodeId Tape::concat(NodeId a, NodeId b, std::size_t axis) {
  check_open("concat");
  check_id(a, "concat");
  check_id(b, "concat");
  const Node& na = node(a);
  const Node& nb = node(b);
  const Shape& as = na.value.shape;
  const Shape& bs = nb.value.shape;
  if (as.rank != bs.rank || axis >= std::max<std::size_t>(as.rank, 1))
    fail(Errc::ShapeMismatch, "concat: shapes " + as.str() + " and " + bs.str() +
                                  " along axis " + std::to_string(axis));
  for (std::size_t d = 0; d < 4; ++d)
    if (d != axis && as.dim[d] != bs.dim[d])
      fail(Errc::ShapeMismatch, "concat: shapes " + as.str() + " and " + bs.str() +
                                    " along axis " + std::to_string(axis));
  Shape os = as;
  os.dim[axis] = as.dim[axis] + bs.dim[axis];
  Node n;
  n.op = Op::Concat;
  n.parent = {a, b, -1};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.axis = axis;
  n.value = Tensor(os);
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= as.dim[d];
  for (std::size_t d = axis + 1; d < 4; ++d) inner *= as.dim[d];
  const std::size_t a_block = as.dim[axis] * inner;
  const std::size_t b_block = bs.dim[axis] * inner;
  for (std::size_t ob = 0; ob < outer; ++ob) {
    std::copy(na.value.data.begin() + ob * a_block,
              na.value.data.begin() + (ob + 1) * a_block,
              n.value.data.begin() + ob * (a_block + b_block));
    std::copy(nb.value.data.begin() + ob * b_block,
              nb.value.data.begin() + (ob + 1) * b_block,
              n.value.data.begin() + ob * (a_block + b_block) + a_block);
  }
  return push(std::move(n));
}

NodeId Tape::zero_pad2d(NodeId x, std::size_t top, std::size_t left, std::size_t bottom,
                        std::size_t right) {
  check_open("zero_pad2d");
  check_id(x, "zero_pad2d");
  const Node& nx = node(x);
  const Shape& xs = nx.value.shape;
  if (xs.rank != 4)
    fail(Errc::ShapeMismatch, "zero_pad2d: needs rank 4, got " + xs.str());
  const std::size_t N = xs.dim[0], C = xs.dim[1], H = xs.dim[2], W = xs.dim[3];
  const std::size_t OH = H + top + bottom, OW = W + left + right;
  Node n;
  n.op = Op::ZeroPad2d;
  n.parent = {x, -1, -1};
  n.requires_grad = nx.requires_grad;
  n.geom = {top, left, bottom, right};
  n.value = Tensor(Shape::nchw(N, C, OH, OW));
  for (std::size_t p = 0; p < N * C; ++p) {
    const double* src = nx.value.data.data() + p * H * W;
    double* dst = n.value.data.data() + p * OH * OW;
    for (std::size_t y = 0; y < H; ++y)
      std::copy(src + y * W, src + (y + 1) * W, dst + (y + top) * OW + left);
  }
  return push(std::move(n));
}

NodeId Tape::crop2d(NodeId x, std::size_t top, std::size_t left, std::size_t h,
                    std::size_t w) {
  check_open("crop2d");
  check_id(x, "crop2d");
  const Node& nx = node(x);
  const Shape& xs = nx.value.shape;
  if (xs.rank != 4 || top + h > xs.dim[2] || left + w > xs.dim[3] || h == 0 || w == 0)
    fail(Errc::ShapeMismatch, "crop2d: window out of bounds for " + xs.str());
  const std::size_t N = xs.dim[0], C = xs.dim[1], H = xs.dim[2], W = xs.dim[3];
  Node n;
  n.op = Op::Crop2d;
  n.parent = {x, -1, -1};
  n.requires_grad = nx.requires_grad;
  n.geom = {top, left, h, w};
  n.value = Tensor(Shape::nchw(N, C, h, w));
  for (std::size_t p = 0; p < N * C; ++p) {
    const double* src = nx.value.data.data() + p * H * W;
    double* dst = n.value.data.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y)
      std::copy(src + (y + top) * W + left, src + (y + top) * W + left + w,
                dst + y * w);
  }
  return push(std::move(n));
}

NodeId Tape::mean_pool_rows(NodeId a) {
  check_open("mean_pool_rows");
  check_id(a, "mean_pool_rows");
  const Node& na = node(a);
  if (na.value.shape.rank != 2)
    fail(Errc::ShapeMismatch,
         "mean_pool_rows: needs rank 2, got " + na.value.shape.str());
  const std::size_t r = na.value.shape.dim[0], c = na.value.shape.dim[1];
  Node n;
  n.op = Op::MeanPoolRows;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  n.value = Tensor(Shape::mat(1, c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) n.value.data[j] += na.value.data[i * c + j];
  const double inv = 1.0 / static_cast<double>(r);
  for (double& v : n.value.data) v *= inv;
  return push(std::move(n));
}

NodeId Tape::l2_normalize_rows(NodeId a) {
  check_open("l2_normalize_rows");
  check_id(a, "l2_normalize_rows");
  const Node& na = node(a);
  if (na.value.shape.rank != 2)
    fail(Errc::ShapeMismatch,
         "l2_normalize_rows: needs rank 2, got " + na.value.shape.str());
  const std::size_t r = na.value.shape.dim[0], c = na.value.shape.dim[1];
  Node n;
  n.op = Op::L2NormRows;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  n.value = Tensor(na.value.shape);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = na.value.data.data() + i * c;
    double n2 = 0.0;
    for (std::size_t j = 0; j < c; ++j) n2 += row[j] * row[j];
    const double inv = 1.0 / std::sqrt(std::max(n2, kNormEps));
    double* out = n.value.data.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) out[j] = row[j] * inv;
  }
  return push(std::move(n));
}

NodeId Tape::dropout(NodeId a, double p, Rng& rng) {
  check_open("dropout");
  check_id(a, "dropout");
  if (!(p >= 0.0 && p < 1.0))
    fail(Errc::ConfigInvalid, "dropout: p must lie in [0, 1)");
  const Node& na = node(a);
  Node n;
  n.op = Op::Dropout;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  n.s0 = p;
  n.value = Tensor(na.value.shape);
  if (p == 0.0) {
    n.value.data = na.value.data;  // identity, no draws
  } else {
    const double keep_scale = 1.0 / (1.0 - p);
    n.mask.resize(na.value.data.size());
    for (std::size_t i = 0; i < n.mask.size(); ++i) {
      n.mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
      n.value.data[i] = na.value.data[i] * n.mask[i];
    }
  }
  return push(std::move(n));
}

// ---- reductions ----

NodeId Tape::mean(NodeId a) {
  check_open("mean");
  check_id(a, "mean");
  const Node& na = node(a);
  Node n;
  n.op = Op::Mean;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  double acc = 0.0;
  for (double v : na.value.data) acc += v;
  n.value = Tensor::scalar(acc / static_cast<double>(na.value.data.size()));
  return push(std::move(n));
}

NodeId Tape::sum(NodeId a) {
  check_open("sum");
  check_id(a, "sum");
  const Node& na = node(a);
  Node n;
  n.op = Op::Sum;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  double acc = 0.0;
  for (double v : na.value.data) acc += v;
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

NodeId Tape::frobenius_sq(NodeId a) {
  check_open("frobenius_sq");
  check_id(a, "frobenius_sq");
  const Node& na = node(a);
  Node n;
  n.op = Op::FrobeniusSq;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  double acc = 0.0;
  for (double v : na.value.data) acc += v * v;
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

NodeId Tape::reshape(NodeId a, Shape s) {
  check_open("reshape");
  check_id(a, "reshape");
  const Node& na = node(a);
  if (na.value.shape.numel() != s.numel())
    fail(Errc::ShapeMismatch, "reshape: " + na.value.shape.str() + " to " + s.str() +
                                  " changes the element count");
  Node n;
  n.op = Op::Reshape;
  n.parent = {a, -1, -1};
  n.requires_grad = na.requires_grad;
  n.value = Tensor(s);
  n.value.data = na.value.data;
  return push(std::move(n));
}

NodeId Tape::edge_mask_matrix(
    NodeId values, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
    std::size_t q) {
  check_open("edge_mask_matrix");
  check_id(values, "edge_mask_matrix");
  const Node& nv = node(values);
  if (nv.value.shape.rank != 1 || nv.value.shape.dim[0] != edges.size())
    fail(Errc::ShapeMismatch, "edge_mask_matrix: " + std::to_string(edges.size()) +
                                  " edges vs values of shape " + nv.value.shape.str());
  Node n;
  n.op = Op::EdgeMask;
  n.parent = {values, -1, -1};
  n.requires_grad = nv.requires_grad;
  n.value = Tensor(Shape::mat(q, q));
  n.idx.reserve(2 * edges.size());
  for (std::size_t i = 0; i < q; ++i) n.value.data[i * q + i] = 1.0;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [i, j] = edges[e];
    if (i >= q || j >= q || i == j)
      fail(Errc::ShapeMismatch, "edge_mask_matrix: bad edge (" + std::to_string(i) +
                                    "," + std::to_string(j) + ") for q = " +
                                    std::to_string(q));
    n.value.data[i * q + j] = nv.value.data[e];
    n.value.data[j * q + i] = nv.value.data[e];
    n.idx.push_back(static_cast<std::uint32_t>(i));
    n.idx.push_back(static_cast<std::uint32_t>(j));
  }
  return push(std::move(n));
}

// ---- reverse sweep ----

GradMap Tape::backward(NodeId loss) {
  check_open("backward");
  check_id(loss, "backward");
  const Node& ln = node(loss);
  if (ln.value.shape.numel() != 1)
    fail(Errc::NonScalarLoss,
         "backward needs a scalar loss, got shape " + ln.value.shape.str());
  if (!std::isfinite(ln.value.data[0]))
    fail(Errc::NonFiniteResult, "loss is not finite");

  const std::size_t count = nodes_.size();
  std::vector<Tensor> grads(count);
  std::vector<char> has_grad(count, 0);
  auto grad_buffer = [&](NodeId id) -> Tensor& {
    auto& g = grads[static_cast<std::size_t>(id)];
    if (!has_grad[static_cast<std::size_t>(id)]) {
      g = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape);
      has_grad[static_cast<std::size_t>(id)] = 1;
    }
    return g;
  };
  auto wants = [&](NodeId id) {
    return id >= 0 && nodes_[static_cast<std::size_t>(id)].requires_grad;
  };

  grad_buffer(loss).data[0] = 1.0;

  for (std::size_t pos = count; pos-- > 0;) {
    const Node& n = nodes_[pos];
    if (!has_grad[pos] || !n.requires_grad || n.op == Op::Leaf) continue;
    const Tensor& gy = grads[pos];
    const NodeId pa = n.parent[0], pb = n.parent[1], pc = n.parent[2];
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          for (std::size_t i = 0; i < gy.data.size(); ++i) g.data[i] += gy.data[i];
        }
        if (wants(pb)) {
          auto& g = grad_buffer(pb);
          for (std::size_t i = 0; i < gy.data.size(); ++i) g.data[i] += gy.data[i];
        }
        break;
      }
      case Op::Sub: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          for (std::size_t i = 0; i < gy.data.size(); ++i) g.data[i] += gy.data[i];
        }
        if (wants(pb)) {
          auto& g = grad_buffer(pb);
          for (std::size_t i = 0; i < gy.data.size(); ++i) g.data[i] -= gy.data[i];
        }
        break;
      }
      case Op::Mul: {
        const Tensor& va = nodes_[static_cast<std::size_t>(pa)].value;
        const Tensor& vb = nodes_[static_cast<std::size_t>(pb)].value;
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          for (std::size_t i = 0; i < gy.data.size(); ++i)
            g.data[i] += gy.data[i] * vb.data[i];
        }
        if (wants(pb)) {
          auto& g = grad_buffer(pb);
          for (std::size_t i = 0; i < gy.data.size(); ++i)
            g.data[i] += gy.data[i] * va.data[i];
        }
        break;
      }
      case Op::Scale: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          for (std::size_t i = 0; i < gy.data.size(); ++i)
            g.data[i] += n.s0 * gy.data[i];
        }
        break;
      }
      case Op::Matmul: {
        const Tensor& va = nodes_[static_cast<std::size_t>(pa)].value;
        const Tensor& vb = nodes_[static_cast<std::size_t>(pb)].value;
        const std::size_t r = va.shape.dim[0], k = va.shape.dim[1],
                          c = vb.shape.dim[1];
        if (wants(pa)) {  // dA = dY * B^T
          auto& g = grad_buffer(pa);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              const double gv = gy.data[i * c + j];
              if (gv == 0.0) continue;
              double* grow = g.data.data() + i * k;
              for (std::size_t kk = 0; kk < k; ++kk)
                grow[kk] += gv * vb.data[kk * c + j];
            }
        }
        if (wants(pb)) {  // dB = A^T * dY
          auto& g = grad_buffer(pb);
          for (std::size_t kk = 0; kk < k; ++kk)
            for (std::size_t i = 0; i < r; ++i) {
              const double av = va.data[i * k + kk];
              if (av == 0.0) continue;
              const double* gyrow = gy.data.data() + i * c;
              double* grow = g.data.data() + kk * c;
              for (std::size_t j = 0; j < c; ++j) grow[j] += av * gyrow[j];
            }
        }
        break;
      }
      case Op::Transpose: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          const std::size_t r = n.value.shape.dim[0], c = n.value.shape.dim[1];
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              g.data[j * r + i] += gy.data[i * c + j];
        }
        break;
      }
      case Op::Relu: {
        if (wants(pa)) {
          const Tensor& vx = nodes_[static_cast<std::size_t>(pa)].value;
          auto& g = grad_buffer(pa);
          for (std::size_t i = 0; i < gy.data.size(); ++i)
            if (vx.data[i] > 0.0) g.data[i] += gy.data[i];
        }
        break;
      }
      case Op::Sigmoid: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          for (std::size_t i = 0; i < gy.data.size(); ++i) {
            const double y = n.value.data[i];
            g.data[i] += gy.data[i] * y * (1.0 - y);
          }
        }
        break;
      }
      case Op::Tanh: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          for (std::size_t i = 0; i < gy.data.size(); ++i) {
            const double y = n.value.data[i];
            g.data[i] += gy.data[i] * (1.0 - y * y);
          }
        }
        break;
      }
      case Op::Log: {
        if (wants(pa)) {
          const Tensor& vx = nodes_[static_cast<std::size_t>(pa)].value;
          auto& g = grad_buffer(pa);
          for (std::size_t i = 0; i < gy.data.size(); ++i)
            g.data[i] += gy.data[i] / vx.data[i];
        }
        break;
      }
      case Op::Clamp: {
        if (wants(pa)) {
          const Tensor& vx = nodes_[static_cast<std::size_t>(pa)].value;
          auto& g = grad_buffer(pa);
          for (std::size_t i = 0; i < gy.data.size(); ++i)
            if (vx.data[i] > n.s0 && vx.data[i] < n.s1) g.data[i] += gy.data[i];
        }
        break;
      }
      case Op::Conv2d: {
        const Tensor& vx = nodes_[static_cast<std::size_t>(pa)].value;
        const Tensor& vw = nodes_[static_cast<std::size_t>(pb)].value;
        const std::size_t N = vx.shape.dim[0], Ci = vx.shape.dim[1],
                          H = vx.shape.dim[2], W = vx.shape.dim[3];
        const std::size_t Co = vw.shape.dim[0], kh = vw.shape.dim[2],
                          kw = vw.shape.dim[3];
        const std::size_t OH = n.value.shape.dim[2], OW = n.value.shape.dim[3];
        const std::size_t ph = n.pad == Pad::Same ? (kh - 1) / 2 : 0;
        const std::size_t pw = n.pad == Pad::Same ? (kw - 1) / 2 : 0;
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          for (std::size_t b = 0; b < N; ++b) {
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              double* gx_plane = g.data.data() + (b * Ci + ci) * H * W;
              for (std::size_t co = 0; co < Co; ++co) {
                const double* gy_plane = gy.data.data() + (b * Co + co) * OH * OW;
                const double* w_block = vw.data.data() + (co * Ci + ci) * kh * kw;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    const double wv = w_block[ky * kw + kx];
                    const std::size_t iy_lo = ky > ph ? ky - ph : 0;
                    const std::size_t iy_hi = std::min(H, OH + ky - ph);
                    const std::size_t ix_lo = kx > pw ? kx - pw : 0;
                    const std::size_t ix_hi = std::min(W, OW + kx - pw);
                    if (iy_lo >= iy_hi || ix_lo >= ix_hi) continue;
                    for (std::size_t iy = iy_lo; iy < iy_hi; ++iy) {
                      const double* gyr =
                          gy_plane + (iy - ky + ph) * OW + (ix_lo - kx + pw);
                      double* gxr = gx_plane + iy * W + ix_lo;
                      const std::size_t len = ix_hi - ix_lo;
                      for (std::size_t t = 0; t < len; ++t) gxr[t] += wv * gyr[t];
                    }
                  }
                }
              }
            }
          }
        }
        if (wants(pb)) {
          auto& g = grad_buffer(pb);
          for (std::size_t co = 0; co < Co; ++co) {
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              double* gw_block = g.data.data() + (co * Ci + ci) * kh * kw;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::size_t oy_lo = ky < ph ? ph - ky : 0;
                  const std::size_t oy_hi = std::min(OH, H + ph - ky);
                  const std::size_t ox_lo = kx < pw ? pw - kx : 0;
                  const std::size_t ox_hi = std::min(OW, W + pw - kx);
                  if (oy_lo >= oy_hi || ox_lo >= ox_hi) continue;
                  double acc = 0.0;
                  for (std::size_t b = 0; b < N; ++b) {
                    const double* gy_plane = gy.data.data() + (b * Co + co) * OH * OW;
                    const double* x_plane = vx.data.data() + (b * Ci + ci) * H * W;
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                      const double* gyr = gy_plane + oy * OW + ox_lo;
                      const double* xr =
                          x_plane + (oy + ky - ph) * W + (ox_lo + kx - pw);
                      const std::size_t len = ox_hi - ox_lo;
                      for (std::size_t t = 0; t < len; ++t) acc += gyr[t] * xr[t];
                    }
                  }
                  gw_block[ky * kw + kx] += acc;
                }
              }
            }
          }
        }
        if (wants(pc)) {
          auto& g = grad_buffer(pc);
          for (std::size_t b = 0; b < N; ++b)
            for (std::size_t co = 0; co < Co; ++co) {
              const double* gy_plane = gy.data.data() + (b * Co + co) * OH * OW;
              double acc = 0.0;
              for (std::size_t t = 0; t < OH * OW; ++t) acc += gy_plane[t];
              g.data[co] += acc;
            }
        }
        break;
      }
      case Op::MaxPool2d: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          for (std::size_t o = 0; o < gy.data.size(); ++o)
            g.data[n.idx[o]] += gy.data[o];
        }
        break;
      }
      case Op::ConvT2d: {
        const Tensor& vx = nodes_[static_cast<std::size_t>(pa)].value;
        const Tensor& vw = nodes_[static_cast<std::size_t>(pb)].value;
        const std::size_t N = vx.shape.dim[0], Ci = vx.shape.dim[1],
                          H = vx.shape.dim[2], W = vx.shape.dim[3];
        const std::size_t Co = vw.shape.dim[1];
        const std::size_t OW = n.value.shape.dim[3];
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          for (std::size_t b = 0; b < N; ++b) {
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              double* gx_plane = g.data.data() + (b * Ci + ci) * H * W;
              for (std::size_t co = 0; co < Co; ++co) {
                const double* gy_plane =
                    gy.data.data() + (b * Co + co) * 4 * H * W;
                const double* w_block = vw.data.data() + (ci * Co + co) * 4;
                for (std::size_t ky = 0; ky < 2; ++ky) {
                  for (std::size_t kx = 0; kx < 2; ++kx) {
                    const double wv = w_block[ky * 2 + kx];
                    for (std::size_t y = 0; y < H; ++y) {
                      const double* gyr = gy_plane + (2 * y + ky) * OW + kx;
                      double* gxr = gx_plane + y * W;
                      for (std::size_t xcol = 0; xcol < W; ++xcol)
                        gxr[xcol] += wv * gyr[2 * xcol];
                    }
                  }
                }
              }
            }
          }
        }
        if (wants(pb)) {
          auto& g = grad_buffer(pb);
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            for (std::size_t co = 0; co < Co; ++co) {
              double* gw_block = g.data.data() + (ci * Co + co) * 4;
              for (std::size_t ky = 0; ky < 2; ++ky) {
                for (std::size_t kx = 0; kx < 2; ++kx) {
                  double acc = 0.0;
                  for (std::size_t b = 0; b < N; ++b) {
                    const double* x_plane = vx.data.data() + (b * Ci + ci) * H * W;
                    const double* gy_plane =
                        gy.data.data() + (b * Co + co) * 4 * H * W;
                    for (std::size_t y = 0; y < H; ++y) {
                      const double* xr = x_plane + y * W;
                      const double* gyr = gy_plane + (2 * y + ky) * OW + kx;
                      for (std::size_t xcol = 0; xcol < W; ++xcol)
                        acc += xr[xcol] * gyr[2 * xcol];
                    }
                  }
                  gw_block[ky * 2 + kx] += acc;
                }
              }
            }
          }
        }
        if (wants(pc)) {
          auto& g = grad_buffer(pc);
          const std::size_t plane = n.value.shape.dim[2] * n.value.shape.dim[3];
          for (std::size_t b = 0; b < N; ++b)
            for (std::size_t co = 0; co < Co; ++co) {
              const double* gy_plane = gy.data.data() + (b * Co + co) * plane;
              double acc = 0.0;
              for (std::size_t t = 0; t < plane; ++t) acc += gy_plane[t];
              g.data[co] += acc;
            }
        }
        break;
      }
      case Op::Concat: {
        const Shape& as = nodes_[static_cast<std::size_t>(pa)].value.shape;
        const Shape& bs = nodes_[static_cast<std::size_t>(pb)].value.shape;
        std::size_t outer = 1, inner = 1;
        for (std::size_t d = 0; d < n.axis; ++d) outer *= as.dim[d];
        for (std::size_t d = n.axis + 1; d < 4; ++d) inner *= as.dim[d];
        const std::size_t a_block = as.dim[n.axis] * inner;
        const std::size_t b_block = bs.dim[n.axis] * inner;
        for (std::size_t ob = 0; ob < outer; ++ob) {
          const double* src = gy.data.data() + ob * (a_block + b_block);
          if (wants(pa)) {
            auto& g = grad_buffer(pa);
            double* dst = g.data.data() + ob * a_block;
            for (std::size_t t = 0; t < a_block; ++t) dst[t] += src[t];
          }
          if (wants(pb)) {
            auto& g = grad_buffer(pb);
            double* dst = g.data.data() + ob * b_block;
            for (std::size_t t = 0; t < b_block; ++t) dst[t] += src[a_block + t];
          }
        }
        break;
      }
      case Op::ZeroPad2d: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          const Shape& xs = nodes_[static_cast<std::size_t>(pa)].value.shape;
          const std::size_t H = xs.dim[2], W = xs.dim[3];
          const std::size_t OH = n.value.shape.dim[2], OW = n.value.shape.dim[3];
          const std::size_t top = n.geom[0], left = n.geom[1];
          for (std::size_t p = 0; p < xs.dim[0] * xs.dim[1]; ++p) {
            const double* src = gy.data.data() + p * OH * OW;
            double* dst = g.data.data() + p * H * W;
            for (std::size_t y = 0; y < H; ++y)
              for (std::size_t x = 0; x < W; ++x)
                dst[y * W + x] += src[(y + top) * OW + (x + left)];
          }
        }
        break;
      }
      case Op::Crop2d: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          const Shape& xs = nodes_[static_cast<std::size_t>(pa)].value.shape;
          const std::size_t H = xs.dim[2], W = xs.dim[3];
          const std::size_t h = n.geom[2], w = n.geom[3];
          const std::size_t top = n.geom[0], left = n.geom[1];
          for (std::size_t p = 0; p < xs.dim[0] * xs.dim[1]; ++p) {
            const double* src = gy.data.data() + p * h * w;
            double* dst = g.data.data() + p * H * W;
            for (std::size_t y = 0; y < h; ++y)
              for (std::size_t x = 0; x < w; ++x)
                dst[(y + top) * W + (x + left)] += src[y * w + x];
          }
        }
        break;
      }
      case Op::MeanPoolRows: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          const Shape& xs = nodes_[static_cast<std::size_t>(pa)].value.shape;
          const std::size_t r = xs.dim[0], c = xs.dim[1];
          const double inv = 1.0 / static_cast<double>(r);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              g.data[i * c + j] += gy.data[j] * inv;
        }
        break;
      }
      case Op::L2NormRows: {
        if (wants(pa)) {
          const Tensor& vx = nodes_[static_cast<std::size_t>(pa)].value;
          auto& g = grad_buffer(pa);
          const std::size_t r = vx.shape.dim[0], c = vx.shape.dim[1];
          for (std::size_t i = 0; i < r; ++i) {
            const double* xrow = vx.data.data() + i * c;
            const double* yrow = n.value.data.data() + i * c;
            const double* gyrow = gy.data.data() + i * c;
            double n2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) n2 += xrow[j] * xrow[j];
            const double inv = 1.0 / std::sqrt(std::max(n2, kNormEps));
            double* grow = g.data.data() + i * c;
            if (n2 > kNormEps) {
              double dot = 0.0;
              for (std::size_t j = 0; j < c; ++j) dot += yrow[j] * gyrow[j];
              for (std::size_t j = 0; j < c; ++j)
                grow[j] += (gyrow[j] - yrow[j] * dot) * inv;
            } else {
              for (std::size_t j = 0; j < c; ++j) grow[j] += gyrow[j] * inv;
            }
          }
        }
        break;
      }
      case Op::Dropout: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          if (n.mask.empty()) {
            for (std::size_t i = 0; i < gy.data.size(); ++i) g.data[i] += gy.data[i];
          } else {
            for (std::size_t i = 0; i < gy.data.size(); ++i)
              g.data[i] += gy.data[i] * n.mask[i];
          }
        }
        break;
      }
      case Op::Mean: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          const double gv = gy.data[0] / static_cast<double>(g.data.size());
          for (double& v : g.data) v += gv;
        }
        break;
      }
      case Op::Sum: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          const double gv = gy.data[0];
          for (double& v : g.data) v += gv;
        }
        break;
      }
      case Op::FrobeniusSq: {
        if (wants(pa)) {
          const Tensor& vx = nodes_[static_cast<std::size_t>(pa)].value;
          auto& g = grad_buffer(pa);
          const double gv = 2.0 * gy.data[0];
          for (std::size_t i = 0; i < g.data.size(); ++i)
            g.data[i] += gv * vx.data[i];
        }
        break;
      }
      case Op::Reshape: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          for (std::size_t i = 0; i < gy.data.size(); ++i) g.data[i] += gy.data[i];
        }
        break;
      }
      case Op::EdgeMask: {
        if (wants(pa)) {
          auto& g = grad_buffer(pa);
          const std::size_t q = n.value.shape.dim[0];
          for (std::size_t e = 0; e < g.data.size(); ++e) {
            const std::size_t i = n.idx[2 * e], j = n.idx[2 * e + 1];
            g.data[e] += gy.data[i * q + j] + gy.data[j * q + i];
          }
        }
        break;
      }
    }
  }

  GradMap out;
  for (std::size_t pos = 0; pos < count; ++pos) {
    const Node& n = nodes_[pos];
    if (n.op == Op::Leaf && n.requires_grad) {
      if (has_grad[pos]) {
        out.emplace(static_cast<NodeId>(pos), std::move(grads[pos]));
      } else {
        out.emplace(static_cast<NodeId>(pos), Tensor(n.value.shape));
      }
    }
  }
  nodes_.clear();
  consumed_ = true;
  return out;
}

namespace {

double grad_check_impl(
    const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& f,
    const std::vector<Tensor>& inputs, double h, std::size_t coords_per_input,
    Rng* rng) {
  // analytic pass
  Tape tape;
  std::vector<NodeId> ids;
  ids.reserve(inputs.size());
  for (const auto& t : inputs) ids.push_back(tape.input(t, true));
  const NodeId loss = f(tape, ids);
  if (tape.value(loss).shape.numel() != 1)
    fail(Errc::NonScalarLoss, "grad_check: f did not produce a scalar");
  GradMap grads = tape.backward(loss);

  auto eval = [&](const std::vector<Tensor>& pts) {
    Tape t2;
    std::vector<NodeId> id2;
    id2.reserve(pts.size());
    for (const auto& t : pts) id2.push_back(t2.input(t, false));
    const double v = t2.value(f(t2, id2)).scalar_value();
    if (!std::isfinite(v))
      fail(Errc::NonFiniteResult, "grad_check: non-finite loss during probing");
    return v;
  };

  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  std::vector<std::size_t> coords;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& analytic = grads.at(ids[k]);
    const std::size_t size = probe[k].data.size();
    coords.clear();
    if (size <= coords_per_input) {
      for (std::size_t i = 0; i < size; ++i) coords.push_back(i);
    } else {
      for (std::size_t i = 0; i < size; ++i) coords.push_back(i);
      rng->shuffle(coords);
      coords.resize(coords_per_input);
    }
    for (std::size_t i : coords) {
      const double saved = probe[k].data[i];
      probe[k].data[i] = saved + h;
      const double up = eval(probe);
      probe[k].data[i] = saved - h;
      const double down = eval(probe);
      probe[k].data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.data[i];
      const double rel =
          std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

double grad_check(const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& f,
                  const std::vector<Tensor>& inputs, double h) {
  return grad_check_impl(f, inputs, h, std::numeric_limits<std::size_t>::max(),
                         nullptr);
}

double grad_check_sampled(
    const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& f,
    const std::vector<Tensor>& inputs, double h, std::size_t coords_per_input,
    Rng& rng) {
  return grad_check_impl(f, inputs, h, coords_per_input, &rng);
}

}  // namespace scfc::ad
