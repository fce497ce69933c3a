#include "atal/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace atal {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_rank2(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected rank-2 tensor, got " +
                             t.shape_string());
}

double phi_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }
double phi_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

// Walks the lines of a rank-1/2 tensor along `axis`: calls fn(base, stride, n)
// once per line, where elements sit at base + k*stride for k in [0, n).
template <typename F>
void for_each_line(const Tensor& t, int axis, F&& fn) {
  if (t.rank() == 1) {
    require(axis == 0, "softmax: axis out of range for rank-1 tensor");
    fn(0, 1, t.dim(0));
    return;
  }
  require(t.rank() == 2 && (axis == 0 || axis == 1),
          "softmax: axis out of range for " + t.shape_string());
  const int r = t.dim(0), c = t.dim(1);
  if (axis == 1) {
    for (int i = 0; i < r; ++i) fn(static_cast<size_t>(i) * c, 1, c);
  } else {
    for (int j = 0; j < c; ++j) fn(static_cast<size_t>(j), c, r);
  }
}

void softmax_kernel(const Tensor& in, int axis, Tensor& out) {
  out = Tensor(in.shape());
  const double* x = in.data();
  double* y = out.data();
  for_each_line(in, axis, [&](size_t base, size_t stride, int n) {
    double m = kNegInf;
    for (int k = 0; k < n; ++k) {
      const double v = x[base + static_cast<size_t>(k) * stride];
      // -inf is the exclusion sentinel used by attention masking; anything
      // else non-finite is malformed input.
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
        throw std::invalid_argument("softmax: non-finite input value");
      }
      m = std::max(m, v);
    }
    if (m == kNegInf) {
      throw std::invalid_argument("softmax: all positions excluded on a line");
    }
    double sum = 0.0;
    for (int k = 0; k < n; ++k) {
      const size_t idx = base + static_cast<size_t>(k) * stride;
      const double e = std::exp(x[idx] - m);
      y[idx] = e;
      sum += e;
    }
    for (int k = 0; k < n; ++k) y[base + static_cast<size_t>(k) * stride] /= sum;
  });
}

void matmul_kernel(const Tensor& a, const Tensor& b, Tensor& out) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  require(a.dim(1) == b.dim(0), "matmul: shape mismatch " + a.shape_string() +
                                    " vs " + b.shape_string());
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  out = Tensor({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = out.data();
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      const double av = pa[static_cast<size_t>(i) * k + l];
      if (av == 0.0) continue;
      const double* brow = pb + static_cast<size_t>(l) * n;
      double* crow = pc + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Row-wise normalization (statistics along the last axis), population variance.
// saved := [mu_0..mu_{r-1}, inv_0..inv_{r-1}].
void layer_norm_kernel(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double epsilon, Tensor& out, std::vector<double>& saved) {
  require_rank2(x, "layer_norm");
  const int r = x.dim(0), c = x.dim(1);
  require(gain.rank() == 1 && gain.dim(0) == c,
          "layer_norm: gain shape " + gain.shape_string() + " does not match width " +
              std::to_string(c));
  require(bias.rank() == 1 && bias.dim(0) == c,
          "layer_norm: bias shape " + bias.shape_string() + " does not match width " +
              std::to_string(c));
  out = Tensor({r, c});
  saved.assign(static_cast<size_t>(2 * r), 0.0);
  for (int i = 0; i < r; ++i) {
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += x.at(i, j);
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = x.at(i, j) - mu;
      var += d * d;
    }
    var /= c;
    const double inv = 1.0 / std::sqrt(var + epsilon);
    saved[static_cast<size_t>(i)] = mu;
    saved[static_cast<size_t>(r + i)] = inv;
    for (int j = 0; j < c; ++j) {
      out.at(i, j) = gain.at(j) * ((x.at(i, j) - mu) * inv) + bias.at(j);
    }
  }
}

// Column-wise statistics over the rows flagged valid (all rows when the mask
// is empty); every row is normalized with those statistics.
// saved := [mu_0..mu_{c-1}, inv_0..inv_{c-1}].
void batch_norm_kernel(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       NormMode mode, double epsilon,
                       const std::vector<uint8_t>& row_mask,
                       const double* stats_mean, const double* stats_var,
                       Tensor& out, std::vector<double>& saved) {
  require_rank2(x, "batch_norm");
  const int r = x.dim(0), c = x.dim(1);
  require(gain.rank() == 1 && gain.dim(0) == c, "batch_norm: gain width mismatch");
  require(bias.rank() == 1 && bias.dim(0) == c, "batch_norm: bias width mismatch");
  require(row_mask.empty() || static_cast<int>(row_mask.size()) == r,
          "batch_norm: row mask length does not match row count");

  saved.assign(static_cast<size_t>(2 * c), 0.0);
  if (mode == NormMode::kTrain) {
    int n = 0;
    if (row_mask.empty()) {
      n = r;
    } else {
      for (uint8_t v : row_mask) n += v ? 1 : 0;
    }
    require(n >= 2, "batch_norm: train mode needs at least 2 valid rows, got " +
                        std::to_string(n));
    for (int j = 0; j < c; ++j) {
      double mu = 0.0;
      for (int i = 0; i < r; ++i) {
        if (!row_mask.empty() && !row_mask[static_cast<size_t>(i)]) continue;
        mu += x.at(i, j);
      }
      mu /= n;
      double var = 0.0;
      for (int i = 0; i < r; ++i) {
        if (!row_mask.empty() && !row_mask[static_cast<size_t>(i)]) continue;
        const double d = x.at(i, j) - mu;
        var += d * d;
      }
      var /= n;
      saved[static_cast<size_t>(j)] = mu;
      saved[static_cast<size_t>(c + j)] = 1.0 / std::sqrt(var + epsilon);
    }
  } else {
    for (int j = 0; j < c; ++j) {
      saved[static_cast<size_t>(j)] = stats_mean[j];
      saved[static_cast<size_t>(c + j)] = 1.0 / std::sqrt(stats_var[j] + epsilon);
    }
  }

  out = Tensor({r, c});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      const double xh = (x.at(i, j) - saved[static_cast<size_t>(j)]) *
                        saved[static_cast<size_t>(c + j)];
      out.at(i, j) = gain.at(j) * xh + bias.at(j);
    }
  }
}

double activation_scalar(double x, Activation kind) {
  switch (kind) {
    case Activation::kRelu:
      return x > 0.0 ? x : 0.0;
    case Activation::kGelu:
      return x * phi_cdf(x);
    case Activation::kIdentity:
      return x;
  }
  return x;
}

double activation_grad(double x, Activation kind) {
  switch (kind) {
    case Activation::kRelu:
      return x > 0.0 ? 1.0 : 0.0;
    case Activation::kGelu:
      return phi_cdf(x) + x * phi_pdf(x);
    case Activation::kIdentity:
      return 1.0;
  }
  return 1.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// recording
// ---------------------------------------------------------------------------

Tape::Id Tape::push(Node node, Tensor value, bool requires_grad) {
  nodes_.push_back(std::move(node));
  values_.push_back(std::move(value));
  grads_.emplace_back();
  requires_grad_.push_back(requires_grad ? 1 : 0);
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = OpKind::kLeaf;
  return push(std::move(n), std::move(value), requires_grad);
}

void Tape::set_leaf(Id id, const Tensor& value) {
  require(node(id).op == OpKind::kLeaf, "set_leaf: node is not a leaf");
  check_same_shape(values_[static_cast<size_t>(id)], value, "set_leaf");
  values_[static_cast<size_t>(id)] = value;
}

#define ATAL_RECORD(kind, ...)                                            \
  Node n;                                                                 \
  n.op = kind;                                                            \
  n.inputs = {__VA_ARGS__};                                               \
  bool rg = false;                                                        \
  for (Id i : n.inputs) rg = rg || requires_grad(i);

Tape::Id Tape::matmul(Id a, Id b) {
  ATAL_RECORD(OpKind::kMatmul, a, b)
  Tensor out;
  matmul_kernel(value(a), value(b), out);
  flops_ += 2LL * value(a).dim(0) * value(a).dim(1) * value(b).dim(1);
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::transpose(Id a) {
  require_rank2(value(a), "transpose");
  ATAL_RECORD(OpKind::kTranspose, a)
  const Tensor& x = value(a);
  Tensor out({x.dim(1), x.dim(0)});
  for (int i = 0; i < x.dim(0); ++i)
    for (int j = 0; j < x.dim(1); ++j) out.at(j, i) = x.at(i, j);
  flops_ += x.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::add(Id a, Id b) {
  check_same_shape(value(a), value(b), "add");
  ATAL_RECORD(OpKind::kAdd, a, b)
  Tensor out = value(a);
  const double* pb = value(b).data();
  for (int64_t i = 0; i < out.size(); ++i) out.data()[i] += pb[i];
  flops_ += out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::sub(Id a, Id b) {
  check_same_shape(value(a), value(b), "sub");
  ATAL_RECORD(OpKind::kSub, a, b)
  Tensor out = value(a);
  const double* pb = value(b).data();
  for (int64_t i = 0; i < out.size(); ++i) out.data()[i] -= pb[i];
  flops_ += out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::mul(Id a, Id b) {
  check_same_shape(value(a), value(b), "mul");
  ATAL_RECORD(OpKind::kMul, a, b)
  Tensor out = value(a);
  const double* pb = value(b).data();
  for (int64_t i = 0; i < out.size(); ++i) out.data()[i] *= pb[i];
  flops_ += out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::add_row_vec(Id x, Id b) {
  const Tensor& xa = value(x);
  const Tensor& bv = value(b);
  require_rank2(xa, "add_row_vec");
  require(bv.rank() == 1 && bv.dim(0) == xa.dim(1),
          "add_row_vec: vector shape " + bv.shape_string() + " vs " + xa.shape_string());
  ATAL_RECORD(OpKind::kAddRowVec, x, b)
  Tensor out = xa;
  for (int i = 0; i < xa.dim(0); ++i)
    for (int j = 0; j < xa.dim(1); ++j) out.at(i, j) += bv.at(j);
  flops_ += xa.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::mul_row_vec(Id x, Id g) {
  const Tensor& xa = value(x);
  const Tensor& gv = value(g);
  require_rank2(xa, "mul_row_vec");
  require(gv.rank() == 1 && gv.dim(0) == xa.dim(1),
          "mul_row_vec: vector shape " + gv.shape_string() + " vs " + xa.shape_string());
  ATAL_RECORD(OpKind::kMulRowVec, x, g)
  Tensor out = xa;
  for (int i = 0; i < xa.dim(0); ++i)
    for (int j = 0; j < xa.dim(1); ++j) out.at(i, j) *= gv.at(j);
  flops_ += xa.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::mul_col_vec(Id x, Id m) {
  const Tensor& xa = value(x);
  const Tensor& mv = value(m);
  require_rank2(xa, "mul_col_vec");
  require(mv.rank() == 1 && mv.dim(0) == xa.dim(0),
          "mul_col_vec: vector shape " + mv.shape_string() + " vs " + xa.shape_string());
  ATAL_RECORD(OpKind::kMulColVec, x, m)
  Tensor out = xa;
  for (int i = 0; i < xa.dim(0); ++i)
    for (int j = 0; j < xa.dim(1); ++j) out.at(i, j) *= mv.at(i);
  flops_ += xa.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::scale(Id a, double s) {
  ATAL_RECORD(OpKind::kScale, a)
  n.attr0 = s;
  Tensor out = value(a);
  for (int64_t i = 0; i < out.size(); ++i) out.data()[i] *= s;
  flops_ += out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::add_const(Id a, double c) {
  ATAL_RECORD(OpKind::kAddConst, a)
  n.attr0 = c;
  Tensor out = value(a);
  for (int64_t i = 0; i < out.size(); ++i) out.data()[i] += c;
  flops_ += out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::pow_const(Id a, double p) {
  ATAL_RECORD(OpKind::kPowConst, a)
  n.attr0 = p;
  Tensor out = value(a);
  for (int64_t i = 0; i < out.size(); ++i) {
    require(out.data()[i] >= 0.0, "pow_const: negative base");
    out.data()[i] = std::pow(out.data()[i], p);
  }
  flops_ += 2 * out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::log(Id a) {
  ATAL_RECORD(OpKind::kLog, a)
  Tensor out = value(a);
  for (int64_t i = 0; i < out.size(); ++i) {
    require(out.data()[i] > 0.0, "log: non-positive input");
    out.data()[i] = std::log(out.data()[i]);
  }
  flops_ += 2 * out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::clamp(Id a, double lo, double hi) {
  require(lo < hi, "clamp: lo must be below hi");
  ATAL_RECORD(OpKind::kClamp, a)
  n.attr0 = lo;
  n.attr1 = hi;
  Tensor out = value(a);
  for (int64_t i = 0; i < out.size(); ++i)
    out.data()[i] = std::min(hi, std::max(lo, out.data()[i]));
  flops_ += out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::activation(Id a, Activation kind) {
  OpKind op = kind == Activation::kRelu   ? OpKind::kRelu
              : kind == Activation::kGelu ? OpKind::kGelu
                                          : OpKind::kIdentity;
  ATAL_RECORD(op, a)
  Tensor out = value(a);
  for (int64_t i = 0; i < out.size(); ++i)
    out.data()[i] = activation_scalar(out.data()[i], kind);
  flops_ += 2 * out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::softmax(Id a, int axis) {
  ATAL_RECORD(OpKind::kSoftmax, a)
  n.iattr0 = axis;
  Tensor out;
  softmax_kernel(value(a), axis, out);
  flops_ += 5 * out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::layer_norm(Id x, Id gain, Id bias, double epsilon) {
  ATAL_RECORD(OpKind::kLayerNorm, x, gain, bias)
  n.attr0 = epsilon;
  Tensor out;
  layer_norm_kernel(value(x), value(gain), value(bias), epsilon, out, n.saved);
  flops_ += 8 * out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::batch_norm(Id x, Id gain, Id bias, BatchNormState& state,
                          NormMode mode, double epsilon, double momentum,
                          const std::vector<uint8_t>& row_mask, bool update_stats) {
  require(value(x).rank() == 2 && state.running_mean.size() == value(x).dim(1),
          "batch_norm: state width does not match input width");
  if (mode == NormMode::kInfer) {
    require(state.initialized,
            "batch_norm: inference requested before any training update "
            "initialized the running statistics");
  }
  ATAL_RECORD(OpKind::kBatchNorm, x, gain, bias)
  n.attr0 = epsilon;
  n.iattr0 = static_cast<int>(mode);
  n.rows = row_mask;
  Tensor out;
  batch_norm_kernel(value(x), value(gain), value(bias), mode, epsilon, row_mask,
                    state.running_mean.data(), state.running_var.data(), out,
                    n.saved);
  flops_ += 8 * out.size();

  if (mode == NormMode::kTrain && update_stats) {
    // EMA update from the batch statistics this node just computed. The saved
    // slot stores 1/sqrt(var+eps), so recover the population variance.
    const int c = out.dim(1);
    for (int j = 0; j < c; ++j) {
      const double mu = n.saved[static_cast<size_t>(j)];
      const double inv = n.saved[static_cast<size_t>(c + j)];
      const double var = 1.0 / (inv * inv) - epsilon;
      state.running_mean.at(j) =
          (1.0 - momentum) * state.running_mean.at(j) + momentum * mu;
      state.running_var.at(j) =
          (1.0 - momentum) * state.running_var.at(j) + momentum * var;
    }
    state.initialized = true;
  }
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::slice_cols(Id x, int c0, int c1) {
  const Tensor& xa = value(x);
  require_rank2(xa, "slice_cols");
  require(0 <= c0 && c0 < c1 && c1 <= xa.dim(1), "slice_cols: range out of bounds");
  ATAL_RECORD(OpKind::kSliceCols, x)
  n.iattr0 = c0;
  n.iattr1 = c1;
  Tensor out({xa.dim(0), c1 - c0});
  for (int i = 0; i < xa.dim(0); ++i)
    for (int j = c0; j < c1; ++j) out.at(i, j - c0) = xa.at(i, j);
  flops_ += out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::concat_cols(const std::vector<Id>& xs) {
  require(!xs.empty(), "concat_cols: no inputs");
  Node n;
  n.op = OpKind::kConcatCols;
  n.inputs = xs;
  bool rg = false;
  int r = value(xs[0]).dim(0), c = 0;
  for (Id i : xs) {
    require_rank2(value(i), "concat_cols");
    require(value(i).dim(0) == r, "concat_cols: row count mismatch");
    c += value(i).dim(1);
    rg = rg || requires_grad(i);
  }
  Tensor out({r, c});
  int off = 0;
  for (Id i : xs) {
    const Tensor& t = value(i);
    for (int a = 0; a < r; ++a)
      for (int b = 0; b < t.dim(1); ++b) out.at(a, off + b) = t.at(a, b);
    off += t.dim(1);
  }
  flops_ += out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::concat_rows(const std::vector<Id>& xs) {
  require(!xs.empty(), "concat_rows: no inputs");
  Node n;
  n.op = OpKind::kConcatRows;
  n.inputs = xs;
  bool rg = false;
  int c = value(xs[0]).dim(1), r = 0;
  for (Id i : xs) {
    require_rank2(value(i), "concat_rows");
    require(value(i).dim(1) == c, "concat_rows: column count mismatch");
    r += value(i).dim(0);
    rg = rg || requires_grad(i);
  }
  Tensor out({r, c});
  int off = 0;
  for (Id i : xs) {
    const Tensor& t = value(i);
    for (int a = 0; a < t.dim(0); ++a)
      for (int b = 0; b < c; ++b) out.at(off + a, b) = t.at(a, b);
    off += t.dim(0);
  }
  flops_ += out.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::row_sum(Id x) {
  const Tensor& xa = value(x);
  require_rank2(xa, "row_sum");
  ATAL_RECORD(OpKind::kRowSum, x)
  Tensor out({xa.dim(0)});
  for (int i = 0; i < xa.dim(0); ++i) {
    double s = 0.0;
    for (int j = 0; j < xa.dim(1); ++j) s += xa.at(i, j);
    out.at(i) = s;
  }
  flops_ += xa.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::col_sum(Id x) {
  const Tensor& xa = value(x);
  require_rank2(xa, "col_sum");
  ATAL_RECORD(OpKind::kColSum, x)
  Tensor out({xa.dim(1)});
  for (int j = 0; j < xa.dim(1); ++j) {
    double s = 0.0;
    for (int i = 0; i < xa.dim(0); ++i) s += xa.at(i, j);
    out.at(j) = s;
  }
  flops_ += xa.size();
  return push(std::move(n), std::move(out), rg);
}

Tape::Id Tape::sum_all(Id x) {
  ATAL_RECORD(OpKind::kSumAll, x)
  const Tensor& xa = value(x);
  double s = 0.0;
  for (int64_t i = 0; i < xa.size(); ++i) s += xa.data()[i];
  flops_ += xa.size();
  return push(std::move(n), Tensor::scalar(s), rg);
}

Tape::Id Tape::dropout(Id x, double rate, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  ATAL_RECORD(OpKind::kDropout, x)
  const Tensor& xa = value(x);
  const double keep = 1.0 - rate;
  n.saved.resize(static_cast<size_t>(xa.size()));
  Tensor out = xa;
  for (int64_t i = 0; i < xa.size(); ++i) {
    const double m = rng.next_double() < keep ? 1.0 / keep : 0.0;
    n.saved[static_cast<size_t>(i)] = m;
    out.data()[i] *= m;
  }
  flops_ += xa.size();
  return push(std::move(n), std::move(out), rg);
}

#undef ATAL_RECORD

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

void Tape::compute(Id id, Tensor& out) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  auto in = [&](int k) -> const Tensor& { return value(n.inputs[static_cast<size_t>(k)]); };
  switch (n.op) {
    case OpKind::kLeaf:
      return;
    case OpKind::kMatmul:
      matmul_kernel(in(0), in(1), out);
      return;
    case OpKind::kTranspose: {
      const Tensor& x = in(0);
      out = Tensor({x.dim(1), x.dim(0)});
      for (int i = 0; i < x.dim(0); ++i)
        for (int j = 0; j < x.dim(1); ++j) out.at(j, i) = x.at(i, j);
      return;
    }
    case OpKind::kAdd: {
      out = in(0);
      const double* pb = in(1).data();
      for (int64_t i = 0; i < out.size(); ++i) out.data()[i] += pb[i];
      return;
    }
    case OpKind::kSub: {
      out = in(0);
      const double* pb = in(1).data();
      for (int64_t i = 0; i < out.size(); ++i) out.data()[i] -= pb[i];
      return;
    }
    case OpKind::kMul: {
      out = in(0);
      const double* pb = in(1).data();
      for (int64_t i = 0; i < out.size(); ++i) out.data()[i] *= pb[i];
      return;
    }
    case OpKind::kAddRowVec: {
      out = in(0);
      const Tensor& b = in(1);
      for (int i = 0; i < out.dim(0); ++i)
        for (int j = 0; j < out.dim(1); ++j) out.at(i, j) += b.at(j);
      return;
    }
    case OpKind::kMulRowVec: {
      out = in(0);
      const Tensor& g = in(1);
      for (int i = 0; i < out.dim(0); ++i)
        for (int j = 0; j < out.dim(1); ++j) out.at(i, j) *= g.at(j);
      return;
    }
    case OpKind::kMulColVec: {
      out = in(0);
      const Tensor& m = in(1);
      for (int i = 0; i < out.dim(0); ++i)
        for (int j = 0; j < out.dim(1); ++j) out.at(i, j) *= m.at(i);
      return;
    }
    case OpKind::kScale: {
      out = in(0);
      for (int64_t i = 0; i < out.size(); ++i) out.data()[i] *= n.attr0;
      return;
    }
    case OpKind::kAddConst: {
      out = in(0);
      for (int64_t i = 0; i < out.size(); ++i) out.data()[i] += n.attr0;
      return;
    }
    case OpKind::kPowConst: {
      out = in(0);
      for (int64_t i = 0; i < out.size(); ++i)
        out.data()[i] = std::pow(out.data()[i], n.attr0);
      return;
    }
    case OpKind::kLog: {
      out = in(0);
      for (int64_t i = 0; i < out.size(); ++i) out.data()[i] = std::log(out.data()[i]);
      return;
    }
    case OpKind::kClamp: {
      out = in(0);
      for (int64_t i = 0; i < out.size(); ++i)
        out.data()[i] = std::min(n.attr1, std::max(n.attr0, out.data()[i]));
      return;
    }
    case OpKind::kRelu:
    case OpKind::kGelu:
    case OpKind::kIdentity: {
      const Activation kind = n.op == OpKind::kRelu   ? Activation::kRelu
                              : n.op == OpKind::kGelu ? Activation::kGelu
                                                      : Activation::kIdentity;
      out = in(0);
      for (int64_t i = 0; i < out.size(); ++i)
        out.data()[i] = activation_scalar(out.data()[i], kind);
      return;
    }
    case OpKind::kSoftmax:
      softmax_kernel(in(0), n.iattr0, out);
      return;
    case OpKind::kLayerNorm: {
      std::vector<double> saved;
      layer_norm_kernel(in(0), in(1), in(2), n.attr0, out, saved);
      const_cast<Node&>(n).saved = std::move(saved);
      return;
    }
    case OpKind::kBatchNorm: {
      const NormMode mode = static_cast<NormMode>(n.iattr0);
      std::vector<double> saved;
      if (mode == NormMode::kInfer) {
        // Replay from the statistics snapshot taken at record time so later
        // state mutations cannot change the recorded computation.
        const int c = in(0).dim(1);
        std::vector<double> mean(n.saved.begin(), n.saved.begin() + c);
        std::vector<double> var(static_cast<size_t>(c));
        for (int j = 0; j < c; ++j) {
          const double inv = n.saved[static_cast<size_t>(c + j)];
          var[static_cast<size_t>(j)] = 1.0 / (inv * inv) - n.attr0;
        }
        batch_norm_kernel(in(0), in(1), in(2), mode, n.attr0, n.rows, mean.data(),
                          var.data(), out, saved);
      } else {
        batch_norm_kernel(in(0), in(1), in(2), mode, n.attr0, n.rows, nullptr,
                          nullptr, out, saved);
      }
      const_cast<Node&>(n).saved = std::move(saved);
      return;
    }
    case OpKind::kSliceCols: {
      const Tensor& x = in(0);
      out = Tensor({x.dim(0), n.iattr1 - n.iattr0});
      for (int i = 0; i < x.dim(0); ++i)
        for (int j = n.iattr0; j < n.iattr1; ++j) out.at(i, j - n.iattr0) = x.at(i, j);
      return;
    }
    case OpKind::kConcatCols: {
      int r = in(0).dim(0), c = 0;
      for (size_t k = 0; k < n.inputs.size(); ++k) c += in(static_cast<int>(k)).dim(1);
      out = Tensor({r, c});
      int off = 0;
      for (size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& t = in(static_cast<int>(k));
        for (int a = 0; a < r; ++a)
          for (int b = 0; b < t.dim(1); ++b) out.at(a, off + b) = t.at(a, b);
        off += t.dim(1);
      }
      return;
    }
    case OpKind::kConcatRows: {
      int c = in(0).dim(1), r = 0;
      for (size_t k = 0; k < n.inputs.size(); ++k) r += in(static_cast<int>(k)).dim(0);
      out = Tensor({r, c});
      int off = 0;
      for (size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& t = in(static_cast<int>(k));
        for (int a = 0; a < t.dim(0); ++a)
          for (int b = 0; b < c; ++b) out.at(off + a, b) = t.at(a, b);
        off += t.dim(0);
      }
      return;
    }
    case OpKind::kRowSum: {
      const Tensor& x = in(0);
      out = Tensor({x.dim(0)});
      for (int i = 0; i < x.dim(0); ++i) {
        double s = 0.0;
        for (int j = 0; j < x.dim(1); ++j) s += x.at(i, j);
        out.at(i) = s;
      }
      return;
    }
    case OpKind::kColSum: {
      const Tensor& x = in(0);
      out = Tensor({x.dim(1)});
      for (int j = 0; j < x.dim(1); ++j) {
        double s = 0.0;
        for (int i = 0; i < x.dim(0); ++i) s += x.at(i, j);
        out.at(j) = s;
      }
      return;
    }
    case OpKind::kSumAll: {
      const Tensor& x = in(0);
      double s = 0.0;
      for (int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
      out = Tensor::scalar(s);
      return;
    }
    case OpKind::kDropout: {
      const Tensor& x = in(0);
      out = x;
      for (int64_t i = 0; i < x.size(); ++i)
        out.data()[i] *= n.saved[static_cast<size_t>(i)];
      return;
    }
  }
}

void Tape::replay() {
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == OpKind::kLeaf) continue;
    Tensor out;
    compute(static_cast<Id>(i), out);
    values_[i] = std::move(out);
  }
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

Tensor& Tape::grad_slot(Id id) { return grads_[static_cast<size_t>(id)]; }

const Tensor& Tape::grad(Id id) const {
  const Tensor& g = grads_.at(static_cast<size_t>(id));
  if (g.empty() && value(id).size() > 0) {
    throw std::logic_error("grad: no gradient recorded for this tensor");
  }
  return g;
}

void Tape::backward(Id output) {
  if (value(output).size() != 1) {
    throw std::invalid_argument("backward: seed must be scalar, got shape " +
                                value(output).shape_string());
  }
  // Zero-initialize a slot for every tensor that wants a gradient; parameters
  // not reachable from the seed keep their zeros.
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (requires_grad_[i]) {
      grads_[i] = Tensor(values_[i].shape());
    } else {
      grads_[i] = Tensor();
    }
  }
  if (!requires_grad_[static_cast<size_t>(output)]) return;
  grads_[static_cast<size_t>(output)].data()[0] = 1.0;

  for (size_t ni = nodes_.size(); ni-- > 0;) {
    const Node& n = nodes_[ni];
    if (n.op == OpKind::kLeaf || !requires_grad_[ni]) continue;
    const Tensor& gout = grads_[ni];
    if (gout.empty()) continue;
    auto want = [&](int k) { return requires_grad(n.inputs[static_cast<size_t>(k)]); };
    auto gin = [&](int k) -> Tensor& { return grad_slot(n.inputs[static_cast<size_t>(k)]); };
    auto vin = [&](int k) -> const Tensor& { return value(n.inputs[static_cast<size_t>(k)]); };
    const Tensor& vout = values_[ni];

    switch (n.op) {
      case OpKind::kLeaf:
        break;
      case OpKind::kMatmul: {
        const Tensor& a = vin(0);
        const Tensor& b = vin(1);
        const int m = a.dim(0), k = a.dim(1), c = b.dim(1);
        if (want(0)) {
          Tensor& ga = gin(0);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j) {
              const double g = gout.at(i, j);
              if (g == 0.0) continue;
              for (int l = 0; l < k; ++l) ga.at(i, l) += g * b.at(l, j);
            }
        }
        if (want(1)) {
          Tensor& gb = gin(1);
          for (int i = 0; i < m; ++i)
            for (int l = 0; l < k; ++l) {
              const double av = a.at(i, l);
              if (av == 0.0) continue;
              for (int j = 0; j < c; ++j) gb.at(l, j) += av * gout.at(i, j);
            }
        }
        break;
      }
      case OpKind::kTranspose: {
        if (want(0)) {
          Tensor& ga = gin(0);
          for (int i = 0; i < gout.dim(0); ++i)
            for (int j = 0; j < gout.dim(1); ++j) ga.at(j, i) += gout.at(i, j);
        }
        break;
      }
      case OpKind::kAdd: {
        for (int k = 0; k < 2; ++k)
          if (want(k)) {
            Tensor& g = gin(k);
            for (int64_t i = 0; i < gout.size(); ++i) g.data()[i] += gout.data()[i];
          }
        break;
      }
      case OpKind::kSub: {
        if (want(0)) {
          Tensor& g = gin(0);
          for (int64_t i = 0; i < gout.size(); ++i) g.data()[i] += gout.data()[i];
        }
        if (want(1)) {
          Tensor& g = gin(1);
          for (int64_t i = 0; i < gout.size(); ++i) g.data()[i] -= gout.data()[i];
        }
        break;
      }
      case OpKind::kMul: {
        if (want(0)) {
          Tensor& g = gin(0);
          const double* pb = vin(1).data();
          for (int64_t i = 0; i < gout.size(); ++i) g.data()[i] += gout.data()[i] * pb[i];
        }
        if (want(1)) {
          Tensor& g = gin(1);
          const double* pa = vin(0).data();
          for (int64_t i = 0; i < gout.size(); ++i) g.data()[i] += gout.data()[i] * pa[i];
        }
        break;
      }
      case OpKind::kAddRowVec: {
        if (want(0)) {
          Tensor& g = gin(0);
          for (int64_t i = 0; i < gout.size(); ++i) g.data()[i] += gout.data()[i];
        }
        if (want(1)) {
          Tensor& g = gin(1);
          for (int i = 0; i < gout.dim(0); ++i)
            for (int j = 0; j < gout.dim(1); ++j) g.at(j) += gout.at(i, j);
        }
        break;
      }
      case OpKind::kMulRowVec: {
        const Tensor& x = vin(0);
        const Tensor& gv = vin(1);
        if (want(0)) {
          Tensor& g = gin(0);
          for (int i = 0; i < gout.dim(0); ++i)
            for (int j = 0; j < gout.dim(1); ++j) g.at(i, j) += gout.at(i, j) * gv.at(j);
        }
        if (want(1)) {
          Tensor& g = gin(1);
          for (int i = 0; i < gout.dim(0); ++i)
            for (int j = 0; j < gout.dim(1); ++j) g.at(j) += gout.at(i, j) * x.at(i, j);
        }
        break;
      }
      case OpKind::kMulColVec: {
        const Tensor& x = vin(0);
        const Tensor& mv = vin(1);
        if (want(0)) {
          Tensor& g = gin(0);
          for (int i = 0; i < gout.dim(0); ++i)
            for (int j = 0; j < gout.dim(1); ++j) g.at(i, j) += gout.at(i, j) * mv.at(i);
        }
        if (want(1)) {
          Tensor& g = gin(1);
          for (int i = 0; i < gout.dim(0); ++i)
            for (int j = 0; j < gout.dim(1); ++j) g.at(i) += gout.at(i, j) * x.at(i, j);
        }
        break;
      }
      case OpKind::kScale: {
        if (want(0)) {
          Tensor& g = gin(0);
          for (int64_t i = 0; i < gout.size(); ++i) g.data()[i] += gout.data()[i] * n.attr0;
        }
        break;
      }
      case OpKind::kAddConst: {
        if (want(0)) {
          Tensor& g = gin(0);
          for (int64_t i = 0; i < gout.size(); ++i) g.data()[i] += gout.data()[i];
        }
        break;
      }
      case OpKind::kPowConst: {
        if (want(0)) {
          Tensor& g = gin(0);
          const double* x = vin(0).data();
          const double p = n.attr0;
          for (int64_t i = 0; i < gout.size(); ++i) {
            const double d = p == 0.0 ? 0.0 : p * std::pow(x[i], p - 1.0);
            g.data()[i] += gout.data()[i] * d;
          }
        }
        break;
      }
      case OpKind::kLog: {
        if (want(0)) {
          Tensor& g = gin(0);
          const double* x = vin(0).data();
          for (int64_t i = 0; i < gout.size(); ++i) g.data()[i] += gout.data()[i] / x[i];
        }
        break;
      }
      case OpKind::kClamp: {
        if (want(0)) {
          Tensor& g = gin(0);
          const double* x = vin(0).data();
          for (int64_t i = 0; i < gout.size(); ++i) {
            if (x[i] >= n.attr0 && x[i] <= n.attr1) g.data()[i] += gout.data()[i];
          }
        }
        break;
      }
      case OpKind::kRelu:
      case OpKind::kGelu:
      case OpKind::kIdentity: {
        if (want(0)) {
          const Activation kind = n.op == OpKind::kRelu   ? Activation::kRelu
                                  : n.op == OpKind::kGelu ? Activation::kGelu
                                                          : Activation::kIdentity;
          Tensor& g = gin(0);
          const double* x = vin(0).data();
          for (int64_t i = 0; i < gout.size(); ++i)
            g.data()[i] += gout.data()[i] * activation_grad(x[i], kind);
        }
        break;
      }
      case OpKind::kSoftmax: {
        if (want(0)) {
          Tensor& g = gin(0);
          const Tensor& y = vout;
          const double* py = y.data();
          const double* pg = gout.data();
          double* px = g.data();
          for_each_line(y, n.iattr0, [&](size_t base, size_t stride, int cnt) {
            double dot = 0.0;
            for (int k = 0; k < cnt; ++k) {
              const size_t idx = base + static_cast<size_t>(k) * stride;
              dot += pg[idx] * py[idx];
            }
            for (int k = 0; k < cnt; ++k) {
              const size_t idx = base + static_cast<size_t>(k) * stride;
              px[idx] += py[idx] * (pg[idx] - dot);
            }
          });
        }
        break;
      }
      case OpKind::kLayerNorm: {
        const Tensor& x = vin(0);
        const Tensor& gv = vin(1);
        const int r = x.dim(0), c = x.dim(1);
        for (int i = 0; i < r; ++i) {
          const double mu = n.saved[static_cast<size_t>(i)];
          const double inv = n.saved[static_cast<size_t>(r + i)];
          double s1 = 0.0, s2 = 0.0;
          for (int j = 0; j < c; ++j) {
            const double xh = (x.at(i, j) - mu) * inv;
            const double dyh = gout.at(i, j) * gv.at(j);
            s1 += dyh;
            s2 += dyh * xh;
          }
          s1 /= c;
          s2 /= c;
          for (int j = 0; j < c; ++j) {
            const double xh = (x.at(i, j) - mu) * inv;
            const double dyh = gout.at(i, j) * gv.at(j);
            if (want(0)) gin(0).at(i, j) += inv * (dyh - s1 - xh * s2);
            if (want(1)) gin(1).at(j) += gout.at(i, j) * xh;
            if (want(2)) gin(2).at(j) += gout.at(i, j);
          }
        }
        break;
      }
      case OpKind::kBatchNorm: {
        const Tensor& x = vin(0);
        const Tensor& gv = vin(1);
        const int r = x.dim(0), c = x.dim(1);
        const NormMode mode = static_cast<NormMode>(n.iattr0);
        auto valid = [&](int i) {
          return n.rows.empty() || n.rows[static_cast<size_t>(i)] != 0;
        };
        int cnt = 0;
        for (int i = 0; i < r; ++i) cnt += valid(i) ? 1 : 0;
        for (int j = 0; j < c; ++j) {
          const double mu = n.saved[static_cast<size_t>(j)];
          const double inv = n.saved[static_cast<size_t>(c + j)];
          double s1 = 0.0, s2 = 0.0;
          for (int i = 0; i < r; ++i) {
            const double xh = (x.at(i, j) - mu) * inv;
            const double dyh = gout.at(i, j) * gv.at(j);
            s1 += dyh;
            s2 += dyh * xh;
            if (want(1)) gin(1).at(j) += gout.at(i, j) * xh;
            if (want(2)) gin(2).at(j) += gout.at(i, j);
          }
          if (want(0)) {
            for (int i = 0; i < r; ++i) {
              const double xh = (x.at(i, j) - mu) * inv;
              const double dyh = gout.at(i, j) * gv.at(j);
              if (mode == NormMode::kInfer) {
                // Running statistics are constants: straight pass-through.
                gin(0).at(i, j) += dyh * inv;
              } else if (valid(i)) {
                gin(0).at(i, j) += inv * (dyh - s1 / cnt - xh * s2 / cnt);
              } else {
                gin(0).at(i, j) += dyh * inv;
              }
            }
          }
        }
        break;
      }
      case OpKind::kSliceCols: {
        if (want(0)) {
          Tensor& g = gin(0);
          for (int i = 0; i < gout.dim(0); ++i)
            for (int j = 0; j < gout.dim(1); ++j) g.at(i, j + n.iattr0) += gout.at(i, j);
        }
        break;
      }
      case OpKind::kConcatCols: {
        int off = 0;
        for (size_t k = 0; k < n.inputs.size(); ++k) {
          const Tensor& t = vin(static_cast<int>(k));
          if (want(static_cast<int>(k))) {
            Tensor& g = gin(static_cast<int>(k));
            for (int a = 0; a < t.dim(0); ++a)
              for (int b = 0; b < t.dim(1); ++b) g.at(a, b) += gout.at(a, off + b);
          }
          off += t.dim(1);
        }
        break;
      }
      case OpKind::kConcatRows: {
        int off = 0;
        for (size_t k = 0; k < n.inputs.size(); ++k) {
          const Tensor& t = vin(static_cast<int>(k));
          if (want(static_cast<int>(k))) {
            Tensor& g = gin(static_cast<int>(k));
            for (int a = 0; a < t.dim(0); ++a)
              for (int b = 0; b < t.dim(1); ++b) g.at(a, b) += gout.at(off + a, b);
          }
          off += t.dim(0);
        }
        break;
      }
      case OpKind::kRowSum: {
        if (want(0)) {
          Tensor& g = gin(0);
          for (int i = 0; i < g.dim(0); ++i)
            for (int j = 0; j < g.dim(1); ++j) g.at(i, j) += gout.at(i);
        }
        break;
      }
      case OpKind::kColSum: {
        if (want(0)) {
          Tensor& g = gin(0);
          for (int i = 0; i < g.dim(0); ++i)
            for (int j = 0; j < g.dim(1); ++j) g.at(i, j) += gout.at(j);
        }
        break;
      }
      case OpKind::kSumAll: {
        if (want(0)) {
          Tensor& g = gin(0);
          const double gs = gout.data()[0];
          for (int64_t i = 0; i < g.size(); ++i) g.data()[i] += gs;
        }
        break;
      }
      case OpKind::kDropout: {
        if (want(0)) {
          Tensor& g = gin(0);
          for (int64_t i = 0; i < gout.size(); ++i)
            g.data()[i] += gout.data()[i] * n.saved[static_cast<size_t>(i)];
        }
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// tape-free reference entry points
// ---------------------------------------------------------------------------

namespace nn {

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out;
  matmul_kernel(a, b, out);
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  Tensor out;
  softmax_kernel(x, axis, out);
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon) {
  Tensor out;
  std::vector<double> saved;
  layer_norm_kernel(x, gain, bias, epsilon, out, saved);
  return out;
}

Tensor batch_norm_1d(const Tensor& x, const Tensor& gain, const Tensor& bias,
                     BatchNormState& state, NormMode mode, double epsilon,
                     double momentum, const std::vector<uint8_t>& row_mask,
                     bool update_stats) {
  if (x.rank() != 2 || state.running_mean.size() != x.dim(1)) {
    throw std::invalid_argument("batch_norm: state width does not match input width");
  }
  if (mode == NormMode::kInfer && !state.initialized) {
    throw std::invalid_argument(
        "batch_norm: inference requested before any training update "
        "initialized the running statistics");
  }
  Tensor out;
  std::vector<double> saved;
  batch_norm_kernel(x, gain, bias, mode, epsilon, row_mask,
                    state.running_mean.data(), state.running_var.data(), out,
                    saved);
  if (mode == NormMode::kTrain && update_stats) {
    const int c = x.dim(1);
    for (int j = 0; j < c; ++j) {
      const double mu = saved[static_cast<size_t>(j)];
      const double inv = saved[static_cast<size_t>(c + j)];
      const double var = 1.0 / (inv * inv) - epsilon;
      state.running_mean.at(j) = (1.0 - momentum) * state.running_mean.at(j) + momentum * mu;
      state.running_var.at(j) = (1.0 - momentum) * state.running_var.at(j) + momentum * var;
    }
    state.initialized = true;
  }
  return out;
}

Tensor activation(const Tensor& x, Activation kind) {
  Tensor out = x;
  for (int64_t i = 0; i < out.size(); ++i)
    out.data()[i] = activation_scalar(out.data()[i], kind);
  return out;
}

double gelu_scalar(double x) { return activation_scalar(x, Activation::kGelu); }

}  // namespace nn

}  // namespace atal
