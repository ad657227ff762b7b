#include "estr/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace estr {

namespace {

std::string op_name(Tape::Op op) {
  switch (op) {
    case Tape::Op::kInput: return "input";
    case Tape::Op::kMatmul: return "matmul";
    case Tape::Op::kAdd: return "add";
    case Tape::Op::kMul: return "mul";
    case Tape::Op::kScale: return "scale";
    case Tape::Op::kSoftmaxRows: return "softmax_rows";
    case Tape::Op::kLog: return "log";
    case Tape::Op::kLayerNormRows: return "layer_norm_rows";
    case Tape::Op::kRelu: return "relu";
    case Tape::Op::kGatherRows: return "gather_rows";
    case Tape::Op::kRowSelect: return "row_select";
    case Tape::Op::kSum: return "sum";
    case Tape::Op::kRowDetach: return "row_detach";
  }
  return "?";
}

[[noreturn]] void shape_fail(Tape::Op op, const Tensor& a, const Tensor& b) {
  throw ShapeError("tape op '" + op_name(op) + "': incompatible shapes " +
                   a.shape_str() + " and " + b.shape_str());
}

#ifndef NDEBUG
void debug_check_finite(Tape::Op op, const Tensor& t) {
  for (float v : t.data) {
    if (!std::isfinite(v))
      throw NumericError("tape op '" + op_name(op) + "': non-finite forward value");
  }
}
#else
void debug_check_finite(Tape::Op, const Tensor&) {}
#endif

}  // namespace

RowMask::RowMask(std::vector<int> r) : rows(std::move(r)) {
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
}

RowMask RowMask::all(int n) {
  RowMask m;
  m.rows.resize(n);
  for (int i = 0; i < n; ++i) m.rows[i] = i;
  return m;
}

bool RowMask::contains(int r) const {
  return std::binary_search(rows.begin(), rows.end(), r);
}

void RowMask::validate(int n_rows) const {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n_rows)
      throw ContractError("RowMask: row " + std::to_string(rows[i]) +
                          " out of range [0," + std::to_string(n_rows) + ")");
    if (i > 0 && rows[i] <= rows[i - 1])
      throw ContractError("RowMask: rows must be sorted and unique");
  }
}

const Tape::Node& Tape::node_at(Id id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    throw ContractError("tape: node id " + std::to_string(id) + " out of range");
  return nodes_[id];
}

Tape::Id Tape::push(Node n) {
  debug_check_finite(n.op, n.value);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size()) - 1;
}

Tape::Id Tape::input(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::kInput;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Tape::Id Tape::matmul(Id a, Id b, bool transpose_b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  const int inner = transpose_b ? B.cols : B.rows;
  const int out_cols = transpose_b ? B.rows : B.cols;
  if (A.cols != inner) shape_fail(Op::kMatmul, A, B);

  Node n;
  n.op = Op::kMatmul;
  n.a = a;
  n.b = b;
  n.transpose_b = transpose_b;
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  // Both layouts accumulate in double with identical (k ascending) order, so
  // matmul(A, Bt) and matmul(A, B, transpose_b) round bit-identically.
  n.value = Tensor(A.rows, out_cols);
  for (int i = 0; i < A.rows; ++i) {
    const float* arow = A.row(i);
    float* crow = n.value.row(i);
    for (int j = 0; j < out_cols; ++j) {
      double acc = 0.0;
      if (transpose_b) {
        const float* brow = B.row(j);
        for (int k = 0; k < A.cols; ++k) acc += static_cast<double>(arow[k]) * brow[k];
      } else {
        const float* bp = B.data.data() + j;
        for (int k = 0; k < A.cols; ++k)
          acc += static_cast<double>(arow[k]) * bp[static_cast<std::size_t>(k) * B.cols];
      }
      crow[j] = static_cast<float>(acc);
    }
  }
  forward_work_ += static_cast<std::uint64_t>(A.rows) * A.cols * out_cols;
  return push(std::move(n));
}

Tape::Id Tape::add(Id a, Id b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  const bool same = A.rows == B.rows && A.cols == B.cols;
  const bool broadcast = !same && B.rows == 1 && B.cols == A.cols;
  if (!same && !broadcast) shape_fail(Op::kAdd, A, B);

  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.broadcast_b = broadcast;
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  n.value = A;
  for (int i = 0; i < A.rows; ++i) {
    const float* brow = broadcast ? B.row(0) : B.row(i);
    float* vrow = n.value.row(i);
    for (int j = 0; j < A.cols; ++j) vrow[j] += brow[j];
  }
  forward_work_ += A.size();
  return push(std::move(n));
}

Tape::Id Tape::mul(Id a, Id b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) shape_fail(Op::kMul, A, B);

  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  n.value = A;
  for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= B.data[i];
  forward_work_ += A.size();
  return push(std::move(n));
}

Tape::Id Tape::scale(Id a, float c) {
  const Tensor& A = value(a);
  Node n;
  n.op = Op::kScale;
  n.a = a;
  n.scalar = c;
  n.requires_grad = nodes_[a].requires_grad;
  n.value = A;
  for (auto& v : n.value.data) v *= c;
  forward_work_ += A.size();
  return push(std::move(n));
}

Tape::Id Tape::softmax_rows(Id a) {
  const Tensor& A = value(a);
  if (A.cols < 1) throw ShapeError("tape op 'softmax_rows': empty rows " + A.shape_str());
  Node n;
  n.op = Op::kSoftmaxRows;
  n.a = a;
  n.requires_grad = nodes_[a].requires_grad;
  n.value = Tensor(A.rows, A.cols);
  for (int i = 0; i < A.rows; ++i) {
    const float* x = A.row(i);
    float* y = n.value.row(i);
    float mx = x[0];
    for (int j = 1; j < A.cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < A.cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    const float inv = static_cast<float>(1.0 / z);
    for (int j = 0; j < A.cols; ++j) y[j] *= inv;
  }
  forward_work_ += 3 * A.size();
  return push(std::move(n));
}

Tape::Id Tape::log(Id a) {
  const Tensor& A = value(a);
  Node n;
  n.op = Op::kLog;
  n.a = a;
  n.requires_grad = nodes_[a].requires_grad;
  n.value = Tensor(A.rows, A.cols);
  for (std::size_t i = 0; i < A.data.size(); ++i) {
    if (!(A.data[i] > 0.0f))
      throw NumericError("tape op 'log': non-positive input " + std::to_string(A.data[i]));
    n.value.data[i] = std::log(A.data[i]);
  }
  forward_work_ += A.size();
  return push(std::move(n));
}

Tape::Id Tape::layer_norm_rows(Id a, float eps) {
  const Tensor& A = value(a);
  if (A.cols < 2)
    throw ShapeError("tape op 'layer_norm_rows': needs >= 2 columns, got " + A.shape_str());
  Node n;
  n.op = Op::kLayerNormRows;
  n.a = a;
  n.scalar = eps;
  n.requires_grad = nodes_[a].requires_grad;
  n.value = Tensor(A.rows, A.cols);
  n.saved.resize(A.rows);
  for (int i = 0; i < A.rows; ++i) {
    const float* x = A.row(i);
    double mean = 0.0;
    for (int j = 0; j < A.cols; ++j) mean += x[j];
    mean /= A.cols;
    double var = 0.0;
    for (int j = 0; j < A.cols; ++j) {
      const double d = x[j] - mean;
      var += d * d;
    }
    var /= A.cols;
    const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
    n.saved[i] = inv;
    float* y = n.value.row(i);
    for (int j = 0; j < A.cols; ++j)
      y[j] = (x[j] - static_cast<float>(mean)) * inv;
  }
  forward_work_ += 3 * A.size();
  return push(std::move(n));
}

Tape::Id Tape::relu(Id a) {
  const Tensor& A = value(a);
  Node n;
  n.op = Op::kRelu;
  n.a = a;
  n.requires_grad = nodes_[a].requires_grad;
  n.value = A;
  for (auto& v : n.value.data) v = v > 0.0f ? v : 0.0f;
  forward_work_ += A.size();
  return push(std::move(n));
}

Tape::Id Tape::gather_rows(Id table, std::vector<int> indices) {
  const Tensor& T = value(table);
  for (int idx : indices)
    if (idx < 0 || idx >= T.rows)
      throw ContractError("tape op 'gather_rows': index " + std::to_string(idx) +
                          " out of range [0," + std::to_string(T.rows) + ")");
  Node n;
  n.op = Op::kGatherRows;
  n.a = table;
  n.requires_grad = nodes_[table].requires_grad;
  n.value = Tensor(static_cast<int>(indices.size()), T.cols);
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(T.row(indices[i]), T.cols, n.value.row(static_cast<int>(i)));
  n.indices = std::move(indices);
  forward_work_ += n.value.size();
  return push(std::move(n));
}

Tape::Id Tape::row_select(Id a, std::vector<int> rows) {
  const Tensor& A = value(a);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= A.rows)
      throw ContractError("tape op 'row_select': row " + std::to_string(rows[i]) +
                          " out of range [0," + std::to_string(A.rows) + ")");
    if (i > 0 && rows[i] <= rows[i - 1])
      throw ContractError("tape op 'row_select': rows must be strictly increasing");
  }
  Node n;
  n.op = Op::kRowSelect;
  n.a = a;
  n.requires_grad = nodes_[a].requires_grad;
  n.value = Tensor(static_cast<int>(rows.size()), A.cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(A.row(rows[i]), A.cols, n.value.row(static_cast<int>(i)));
  n.indices = std::move(rows);
  forward_work_ += n.value.size();
  return push(std::move(n));
}

Tape::Id Tape::sum(Id a) {
  const Tensor& A = value(a);
  Node n;
  n.op = Op::kSum;
  n.a = a;
  n.requires_grad = nodes_[a].requires_grad;
  double acc = 0.0;
  for (float v : A.data) acc += v;
  n.value = Tensor::scalar(static_cast<float>(acc));
  forward_work_ += A.size();
  return push(std::move(n));
}

Tape::Id Tape::row_detach(Id a, RowMask active) {
  const Tensor& A = value(a);
  active.validate(A.rows);
  Node n;
  n.op = Op::kRowDetach;
  n.a = a;
  n.requires_grad = nodes_[a].requires_grad;
  n.value = A;  // bit-identical forward
  n.mask = std::move(active);
  return push(std::move(n));
}

void Tape::GradBuf::ensure(int rows, int cols) {
  if (!allocated) {
    g = Tensor(rows, cols);
    mark.assign(rows, 0);
    allocated = true;
  }
}

void Tape::GradBuf::touch(int r) {
  if (!mark[r]) {
    mark[r] = 1;
    active_rows.push_back(r);
  }
}

std::unordered_map<Tape::Id, Tensor> Tape::backward(Id root) {
  const Node& root_node = node_at(root);
  if (root_node.value.rows != 1 || root_node.value.cols != 1)
    throw ContractError("tape: backward root must be a 1x1 scalar, got " +
                        root_node.value.shape_str());
  if (!std::isfinite(root_node.value.data[0]))
    throw NumericError("tape: backward root value is non-finite");

  std::vector<GradBuf> grads(nodes_.size());
  grads[root].ensure(1, 1);
  grads[root].g.data[0] = 1.0f;
  grads[root].touch(0);

  backward_nodes_visited_ = 0;
  // Reverse sweep: ids above the root cannot feed into it (the tape is
  // append-only), so the sweep starts at the root. Each node is visited
  // exactly once.
  for (Id id = root; id >= 0; --id) {
    ++backward_nodes_visited_;
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.op == Op::kInput) continue;
    if (!grads[id].any()) continue;
    backward_into(n, id, grads);
  }

  std::unordered_map<Id, Tensor> out;
  for (Id id = 0; id <= root; ++id) {
    const Node& n = nodes_[id];
    if (n.op != Op::kInput || !n.requires_grad || !grads[id].any()) continue;
    for (float v : grads[id].g.data)
      if (!std::isfinite(v))
        throw NumericError("tape: non-finite gradient at input node " + std::to_string(id));
    out.emplace(id, std::move(grads[id].g));
  }
  return out;
}

void Tape::backward_into(const Node& n, Id id, std::vector<GradBuf>& grads) {
  GradBuf& gout = grads[id];
  const Tensor& G = gout.g;

  auto want = [&](Id x) { return x != kNoNode && nodes_[x].requires_grad; };
  auto buf = [&](Id x) -> GradBuf& {
    GradBuf& b = grads[x];
    b.ensure(nodes_[x].value.rows, nodes_[x].value.cols);
    return b;
  };

  switch (n.op) {
    case Tape::Op::kMatmul: {
      const Tensor& A = nodes_[n.a].value;
      const Tensor& B = nodes_[n.b].value;
      const int m = A.cols;
      const int p = G.cols;
      if (!n.transpose_b) {
        // C = A * B ;  dA = G * B^T ;  dB = A^T * G
        if (want(n.a)) {
          GradBuf& da = buf(n.a);
          for (int i : gout.active_rows) {
            const float* grow = G.row(i);
            float* drow = da.g.row(i);
            for (int k = 0; k < m; ++k) {
              const float* brow = B.row(k);
              double acc = 0.0;
              for (int j = 0; j < p; ++j) acc += static_cast<double>(grow[j]) * brow[j];
              drow[k] += static_cast<float>(acc);
            }
            da.touch(i);
          }
          backward_work_ += static_cast<std::uint64_t>(gout.active_rows.size()) * m * p;
        }
        if (want(n.b)) {
          GradBuf& db = buf(n.b);
          for (int i : gout.active_rows) {
            const float* arow = A.row(i);
            const float* grow = G.row(i);
            for (int k = 0; k < m; ++k) {
              const double av = arow[k];
              if (av == 0.0) continue;
              float* drow = db.g.row(k);
              for (int j = 0; j < p; ++j) drow[j] += static_cast<float>(av * grow[j]);
            }
          }
          for (int k = 0; k < m; ++k) db.touch(k);
          backward_work_ += static_cast<std::uint64_t>(gout.active_rows.size()) * m * p;
        }
      } else {
        // C = A * B^T ;  dA = G * B ;  dB = G^T * A
        const int pb = B.rows;  // == G.cols
        if (want(n.a)) {
          GradBuf& da = buf(n.a);
          for (int i : gout.active_rows) {
            const float* grow = G.row(i);
            float* drow = da.g.row(i);
            for (int j = 0; j < pb; ++j) {
              const double gv = grow[j];
              if (gv == 0.0) continue;
              const float* brow = B.row(j);
              for (int k = 0; k < m; ++k) drow[k] += static_cast<float>(gv * brow[k]);
            }
            da.touch(i);
          }
          backward_work_ += static_cast<std::uint64_t>(gout.active_rows.size()) * m * pb;
        }
        if (want(n.b)) {
          GradBuf& db = buf(n.b);
          for (int i : gout.active_rows) {
            const float* grow = G.row(i);
            const float* arow = A.row(i);
            for (int j = 0; j < pb; ++j) {
              const double gv = grow[j];
              if (gv == 0.0) continue;
              float* drow = db.g.row(j);
              for (int k = 0; k < m; ++k) drow[k] += static_cast<float>(gv * arow[k]);
            }
          }
          for (int j = 0; j < pb; ++j) db.touch(j);
          backward_work_ += static_cast<std::uint64_t>(gout.active_rows.size()) * m * pb;
        }
      }
      break;
    }
    case Tape::Op::kAdd: {
      if (want(n.a)) {
        GradBuf& da = buf(n.a);
        for (int i : gout.active_rows) {
          const float* grow = G.row(i);
          float* drow = da.g.row(i);
          for (int j = 0; j < G.cols; ++j) drow[j] += grow[j];
          da.touch(i);
        }
        backward_work_ += gout.active_rows.size() * static_cast<std::uint64_t>(G.cols);
      }
      if (want(n.b)) {
        GradBuf& db = buf(n.b);
        if (n.broadcast_b) {
          float* drow = db.g.row(0);
          for (int i : gout.active_rows) {
            const float* grow = G.row(i);
            for (int j = 0; j < G.cols; ++j) drow[j] += grow[j];
          }
          db.touch(0);
        } else {
          for (int i : gout.active_rows) {
            const float* grow = G.row(i);
            float* drow = db.g.row(i);
            for (int j = 0; j < G.cols; ++j) drow[j] += grow[j];
            db.touch(i);
          }
        }
        backward_work_ += gout.active_rows.size() * static_cast<std::uint64_t>(G.cols);
      }
      break;
    }
    case Tape::Op::kMul: {
      const Tensor& A = nodes_[n.a].value;
      const Tensor& B = nodes_[n.b].value;
      if (want(n.a)) {
        GradBuf& da = buf(n.a);
        for (int i : gout.active_rows) {
          const float* grow = G.row(i);
          const float* brow = B.row(i);
          float* drow = da.g.row(i);
          for (int j = 0; j < G.cols; ++j) drow[j] += grow[j] * brow[j];
          da.touch(i);
        }
        backward_work_ += gout.active_rows.size() * static_cast<std::uint64_t>(G.cols);
      }
      if (want(n.b)) {
        GradBuf& db = buf(n.b);
        for (int i : gout.active_rows) {
          const float* grow = G.row(i);
          const float* arow = A.row(i);
          float* drow = db.g.row(i);
          for (int j = 0; j < G.cols; ++j) drow[j] += grow[j] * arow[j];
          db.touch(i);
        }
        backward_work_ += gout.active_rows.size() * static_cast<std::uint64_t>(G.cols);
      }
      break;
    }
    case Tape::Op::kScale: {
      if (want(n.a)) {
        GradBuf& da = buf(n.a);
        for (int i : gout.active_rows) {
          const float* grow = G.row(i);
          float* drow = da.g.row(i);
          for (int j = 0; j < G.cols; ++j) drow[j] += n.scalar * grow[j];
          da.touch(i);
        }
        backward_work_ += gout.active_rows.size() * static_cast<std::uint64_t>(G.cols);
      }
      break;
    }
    case Tape::Op::kSoftmaxRows: {
      if (want(n.a)) {
        GradBuf& da = buf(n.a);
        const Tensor& Y = n.value;
        for (int i : gout.active_rows) {
          const float* grow = G.row(i);
          const float* yrow = Y.row(i);
          float* drow = da.g.row(i);
          double dot = 0.0;
          for (int j = 0; j < G.cols; ++j) dot += static_cast<double>(grow[j]) * yrow[j];
          for (int j = 0; j < G.cols; ++j)
            drow[j] += yrow[j] * static_cast<float>(grow[j] - dot);
          da.touch(i);
        }
        backward_work_ += 2 * gout.active_rows.size() * static_cast<std::uint64_t>(G.cols);
      }
      break;
    }
    case Tape::Op::kLog: {
      if (want(n.a)) {
        GradBuf& da = buf(n.a);
        const Tensor& X = nodes_[n.a].value;
        for (int i : gout.active_rows) {
          const float* grow = G.row(i);
          const float* xrow = X.row(i);
          float* drow = da.g.row(i);
          for (int j = 0; j < G.cols; ++j) drow[j] += grow[j] / xrow[j];
          da.touch(i);
        }
        backward_work_ += gout.active_rows.size() * static_cast<std::uint64_t>(G.cols);
      }
      break;
    }
    case Tape::Op::kLayerNormRows: {
      if (want(n.a)) {
        GradBuf& da = buf(n.a);
        const Tensor& Y = n.value;
        const int c = G.cols;
        for (int i : gout.active_rows) {
          const float* grow = G.row(i);
          const float* yrow = Y.row(i);
          float* drow = da.g.row(i);
          const float inv = n.saved[i];
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < c; ++j) {
            m1 += grow[j];
            m2 += static_cast<double>(grow[j]) * yrow[j];
          }
          m1 /= c;
          m2 /= c;
          for (int j = 0; j < c; ++j)
            drow[j] += inv * static_cast<float>(grow[j] - m1 - yrow[j] * m2);
          da.touch(i);
        }
        backward_work_ += 2 * gout.active_rows.size() * static_cast<std::uint64_t>(c);
      }
      break;
    }
    case Tape::Op::kRelu: {
      if (want(n.a)) {
        GradBuf& da = buf(n.a);
        const Tensor& X = nodes_[n.a].value;
        for (int i : gout.active_rows) {
          const float* grow = G.row(i);
          const float* xrow = X.row(i);
          float* drow = da.g.row(i);
          for (int j = 0; j < G.cols; ++j)
            if (xrow[j] > 0.0f) drow[j] += grow[j];
          da.touch(i);
        }
        backward_work_ += gout.active_rows.size() * static_cast<std::uint64_t>(G.cols);
      }
      break;
    }
    case Tape::Op::kGatherRows:
    case Tape::Op::kRowSelect: {
      if (want(n.a)) {
        GradBuf& da = buf(n.a);
        for (int i : gout.active_rows) {
          const int dst = n.indices[i];
          const float* grow = G.row(i);
          float* drow = da.g.row(dst);
          for (int j = 0; j < G.cols; ++j) drow[j] += grow[j];
          da.touch(dst);
        }
        backward_work_ += gout.active_rows.size() * static_cast<std::uint64_t>(G.cols);
      }
      break;
    }
    case Tape::Op::kSum: {
      if (want(n.a)) {
        GradBuf& da = buf(n.a);
        const float gv = G.data[0];
        for (int i = 0; i < da.g.rows; ++i) {
          float* drow = da.g.row(i);
          for (int j = 0; j < da.g.cols; ++j) drow[j] += gv;
          da.touch(i);
        }
        backward_work_ += da.g.size();
      }
      break;
    }
    case Tape::Op::kRowDetach: {
      if (want(n.a)) {
        GradBuf& da = buf(n.a);
        std::uint64_t passed = 0;
        for (int i : gout.active_rows) {
          if (!n.mask.contains(i)) continue;
          const float* grow = G.row(i);
          float* drow = da.g.row(i);
          for (int j = 0; j < G.cols; ++j) drow[j] += grow[j];
          da.touch(i);
          ++passed;
        }
        backward_work_ += passed * static_cast<std::uint64_t>(G.cols);
      }
      break;
    }
    case Tape::Op::kInput:
      break;
  }
}

double grad_check(const ScalarFn& fn, const Tensor& point, double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: epsilon must be > 0");

  Tensor analytic(point.rows, point.cols);
  {
    Tape tape;
    const Tape::Id leaf = tape.input(point, /*requires_grad=*/true);
    const Tape::Id root = fn(tape, leaf);
    if (!std::isfinite(tape.value(root).data[0]))
      throw NumericError("grad_check: non-finite function value at the base point");
    auto grads = tape.backward(root);
    if (auto it = grads.find(leaf); it != grads.end()) analytic = std::move(it->second);
  }

  auto eval = [&fn](const Tensor& x) {
    Tape tape;
    const Tape::Id leaf = tape.input(x, /*requires_grad=*/false);
    const Tape::Id root = fn(tape, leaf);
    const Tensor& v = tape.value(root);
    if (v.rows != 1 || v.cols != 1)
      throw ContractError("grad_check: function must produce a 1x1 scalar");
    const double y = v.data[0];
    if (!std::isfinite(y)) throw NumericError("grad_check: non-finite function value");
    return y;
  };

  double max_rel = 0.0;
  Tensor probe = point;
  for (std::size_t k = 0; k < probe.data.size(); ++k) {
    const float saved = probe.data[k];
    probe.data[k] = static_cast<float>(saved + eps);
    const double fp = eval(probe);
    probe.data[k] = static_cast<float>(saved - eps);
    const double fm = eval(probe);
    probe.data[k] = saved;

    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic.data[k];
    const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace estr
