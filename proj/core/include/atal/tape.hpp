#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atal/rng.hpp"
#include "atal/tensor.hpp"

namespace atal {

enum class OpKind : uint8_t {
  kLeaf,
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kAddRowVec,   // [r x c] + [c], broadcast down rows
  kMulRowVec,   // [r x c] * [c]
  kMulColVec,   // [r x c] * [r], broadcast across columns
  kScale,
  kAddConst,
  kPowConst,
  kLog,
  kClamp,
  kRelu,
  kGelu,
  kIdentity,
  kSoftmax,
  kLayerNorm,
  kBatchNorm,
  kSliceCols,
  kConcatCols,
  kConcatRows,
  kRowSum,
  kColSum,
  kSumAll,
  kDropout,
};

enum class NormMode : uint8_t { kTrain, kInfer };

enum class Activation : uint8_t { kRelu, kGelu, kIdentity };

/// Running statistics for 1-D batch normalization. Updated in train mode,
/// consumed in inference mode; inference before the first update is an error.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  bool initialized = false;

  explicit BatchNormState(int features = 0)
      : running_mean(Tensor::zeros({features})),
        running_var(Tensor::full({features}, 1.0)) {}
};

/// Reverse-mode tape. Each recorded node owns its output tensor; entry 0..n-1
/// are topologically ordered (inputs always precede outputs). Values are
/// computed eagerly at record time; backward() fills gradient slots for every
/// tensor on a path to the seed, and replay() recomputes all non-leaf values
/// from the current leaf contents without side effects.
class Tape {
 public:
  using Id = int32_t;

  struct Node {
    OpKind op = OpKind::kLeaf;
    std::vector<Id> inputs;
    double attr0 = 0.0;
    double attr1 = 0.0;
    int iattr0 = 0;
    int iattr1 = 0;
    std::vector<double> saved;   // op-specific snapshot (norm stats, dropout mask)
    std::vector<uint8_t> rows;   // row-validity mask for batch norm
  };

  // -- leaves ---------------------------------------------------------------
  Id leaf(Tensor value, bool requires_grad);
  Id constant(Tensor value) { return leaf(std::move(value), false); }
  void set_leaf(Id id, const Tensor& value);

  // -- primitive operations ---------------------------------------------------
  Id matmul(Id a, Id b);
  Id transpose(Id a);
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id add_row_vec(Id x, Id b);
  Id mul_row_vec(Id x, Id g);
  Id mul_col_vec(Id x, Id m);
  Id scale(Id a, double s);
  Id add_const(Id a, double c);
  Id pow_const(Id a, double p);
  Id log(Id a);
  Id clamp(Id a, double lo, double hi);
  Id activation(Id a, Activation kind);
  Id relu(Id a) { return activation(a, Activation::kRelu); }
  Id gelu(Id a) { return activation(a, Activation::kGelu); }
  Id softmax(Id a, int axis);
  Id layer_norm(Id x, Id gain, Id bias, double epsilon);
  /// Batch normalization over rows (statistics per column). In train mode the
  /// statistics come from the rows flagged valid in `row_mask` (all rows when
  /// empty) and `state` is updated by exponential moving average when
  /// `update_stats` is set; in inference mode `state` must be initialized.
  Id batch_norm(Id x, Id gain, Id bias, BatchNormState& state, NormMode mode,
                double epsilon, double momentum,
                const std::vector<uint8_t>& row_mask = {},
                bool update_stats = true);
  Id slice_cols(Id x, int c0, int c1);
  Id concat_cols(const std::vector<Id>& xs);
  Id concat_rows(const std::vector<Id>& xs);
  Id row_sum(Id x);
  Id col_sum(Id x);
  Id sum_all(Id x);
  Id dropout(Id x, double rate, Rng& rng);

  // -- execution --------------------------------------------------------------
  /// Seeds d(output)/d(output) = 1 and accumulates gradients for every tensor
  /// that requires them. `output` must be a scalar (single element).
  void backward(Id output);

  /// Recomputes every non-leaf value in record order from the current leaf
  /// contents. Bitwise-deterministic and free of side effects (batch-norm
  /// running statistics are only touched at record time).
  void replay();

  const Tensor& value(Id id) const { return values_.at(static_cast<size_t>(id)); }
  const Tensor& grad(Id id) const;
  bool requires_grad(Id id) const { return requires_grad_.at(static_cast<size_t>(id)) != 0; }

  size_t node_count() const { return nodes_.size(); }
  const Node& node(Id id) const { return nodes_.at(static_cast<size_t>(id)); }
  /// Cumulative floating-point-operation estimate for all recorded forwards.
  int64_t flops() const { return flops_; }

 private:
  Id push(Node node, Tensor value, bool requires_grad);
  void compute(Id id, Tensor& out) const;
  Tensor& grad_slot(Id id);

  std::vector<Node> nodes_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;          // empty until backward touches them
  std::vector<uint8_t> requires_grad_;
  int64_t flops_ = 0;
};

// Plain (tape-free) reference entry points for the primitive kernels. The
// tape ops and these functions share one implementation.
namespace nn {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon);
Tensor batch_norm_1d(const Tensor& x, const Tensor& gain, const Tensor& bias,
                     BatchNormState& state, NormMode mode, double epsilon,
                     double momentum, const std::vector<uint8_t>& row_mask = {},
                     bool update_stats = true);
Tensor activation(const Tensor& x, Activation kind);
double gelu_scalar(double x);

}  // namespace nn

}  // namespace atal
