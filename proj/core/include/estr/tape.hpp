#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "estr/tensor.hpp"

namespace estr {

// Reverse-mode automatic differentiation on an explicit tape.
//
// A Tape is an append-only arena of nodes. Each op records its inputs, its
// forward value, and whatever it needs for the backward pass. backward()
// replays the tape once in reverse and returns gradients for the leaf inputs
// that asked for them.
//
// Gradients are propagated with per-node row activity sets: a backward buffer
// knows which rows are non-zero, and every op only processes those rows. That
// is what makes the cost of a backward pass through attention proportional to
// the number of rows that still carry gradient (see row_detach) instead of
// the full sequence length.
class Tape {
 public:
  using Id = int;
  static constexpr Id kNoNode = -1;

  enum class Op : std::uint8_t {
    kInput,
    kMatmul,       // C = A * B   (or A * B^T when transpose_b)
    kAdd,          // elementwise; B may be a 1xN row broadcast over A's rows
    kMul,          // elementwise, same shape
    kScale,        // elementwise multiply by a compile-time constant
    kSoftmaxRows,  // row-wise softmax
    kLog,          // elementwise natural log, input must be > 0
    kLayerNormRows,  // row-wise (x - mean) / sqrt(var + eps), no affine
    kRelu,
    kGatherRows,  // pick rows by index (repeats allowed); backward scatter-adds
    kRowSelect,   // pick rows by strictly increasing index set
    kSum,         // full reduction to a 1x1 scalar
    kRowDetach,   // identity forward; backward passes only rows in the mask
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- graph construction -------------------------------------------------
  Id input(Tensor value, bool requires_grad);
  Id constant(Tensor value) { return input(std::move(value), false); }

  Id matmul(Id a, Id b, bool transpose_b = false);
  Id add(Id a, Id b);
  Id mul(Id a, Id b);
  Id scale(Id a, float c);
  Id softmax_rows(Id a);
  Id log(Id a);
  Id layer_norm_rows(Id a, float eps = 1e-5f);
  Id relu(Id a);
  Id gather_rows(Id table, std::vector<int> indices);
  Id row_select(Id a, std::vector<int> rows);
  Id sum(Id a);
  Id row_detach(Id a, RowMask active);

  // --- access ---------------------------------------------------------------
  const Tensor& value(Id id) const { return node_at(id).value; }
  bool requires_grad(Id id) const { return node_at(id).requires_grad; }
  int node_count() const { return static_cast<int>(nodes_.size()); }

  // --- backward -------------------------------------------------------------
  // Seeds the (scalar) root with gradient 1 and sweeps the tape in reverse.
  // Returns gradients keyed by tape id for every *leaf input* that was
  // created with requires_grad; leaves reachable only through detached paths
  // get no entry. Throws if the root is not 1x1 or a non-finite gradient
  // appears.
  std::unordered_map<Id, Tensor> backward(Id root);

  // --- instrumentation -------------------------------------------------------
  // Work counters in "element visits" (roughly multiply-accumulate counts).
  // They make cost claims testable without wall clocks.
  std::uint64_t forward_work() const { return forward_work_; }
  std::uint64_t backward_work() const { return backward_work_; }
  // Tape nodes touched by the last backward sweep (each exactly once).
  int backward_nodes_visited() const { return backward_nodes_visited_; }

 private:
  struct Node {
    Op op = Op::kInput;
    Id a = kNoNode;
    Id b = kNoNode;
    Tensor value;
    bool requires_grad = false;
    bool transpose_b = false;            // matmul
    bool broadcast_b = false;            // add with 1xN second operand
    float scalar = 0.0f;                 // scale constant / layer-norm eps
    std::vector<int> indices;            // gather/select
    RowMask mask;                        // row_detach
    std::vector<float> saved;            // layer-norm inv-std per row
  };

  // Backward accumulation buffer with row activity tracking.
  struct GradBuf {
    Tensor g;
    std::vector<int> active_rows;  // insertion order, deduped via marks
    std::vector<char> mark;
    bool allocated = false;

    void ensure(int rows, int cols);
    void touch(int r);
    bool any() const { return allocated && !active_rows.empty(); }
  };

  const Node& node_at(Id id) const;
  Id push(Node n);
  static void require_finite_root(const Tensor& t);

  void backward_into(const Node& n, Id id, std::vector<GradBuf>& grads);

  std::vector<Node> nodes_;
  std::uint64_t forward_work_ = 0;
  std::uint64_t backward_work_ = 0;
  int backward_nodes_visited_ = 0;
};

// Builds a scalar node from a leaf input on the given tape.
using ScalarFn = std::function<Tape::Id(Tape&, Tape::Id)>;

// Central-difference gradient check. Evaluates fn analytically (one backward)
// and numerically (two forwards per coordinate of `point`) and returns the
// maximum relative error  |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
// Throws ContractError on eps <= 0 and NumericError if any evaluation is
// non-finite.
double grad_check(const ScalarFn& fn, const Tensor& point, double eps);

}  // namespace estr
