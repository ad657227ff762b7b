#include "estr/denoiser.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "estr/error.hpp"
#include "estr/rng.hpp"

namespace estr {
namespace {

std::vector<int> iota(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Tensor uniform_tensor(Rng& rng, int rows, int cols, float scale) {
  Tensor t(rows, cols);
  for (auto& v : t.data) v = rng.next_symmetric(scale);
  return t;
}

constexpr float kLogGuard = 1e-30f;  // keeps log finite at exact zeros

}  // namespace

void DenoiserConfig::validate() const {
  if (vocab < 2) throw ContractError("denoiser config: vocab must be >= 2");
  if (length < 1 || d_model < 1 || layers < 1 || heads < 1 || hidden < 1)
    throw ContractError("denoiser config: all counts must be >= 1");
  if (d_model % heads != 0)
    throw ContractError("denoiser config: d_model (" + std::to_string(d_model) +
                        ") not divisible by heads (" + std::to_string(heads) +
                        ")");
}

Tape::Id Denoiser::Bound::find(const std::string& name) const {
  for (const auto& [key, id] : ids)
    if (key == name) return id;
  throw ContractError("no bound parameter named '" + name + "'");
}

Denoiser Denoiser::init(const DenoiserConfig& config, std::uint64_t seed) {
  config.validate();
  Denoiser d;
  d.config_ = config;
  Rng rng(seed, "init");
  const int dm = config.d_model;
  const int dh = config.head_dim();
  const float wq_scale = std::sqrt(1.0f / static_cast<float>(dm));
  const float wo_scale = std::sqrt(1.0f / static_cast<float>(dh));
  const float w2_scale = std::sqrt(1.0f / static_cast<float>(config.hidden));

  // Embedding rows stay small so initial logits against the (unit-ish scale)
  // final layer norm stay well inside +/-5.
  d.e_ = uniform_tensor(rng, config.vocab + 1, dm, 0.1f);
  if (config.positions) d.p_ = uniform_tensor(rng, config.length, dm, 0.1f);
  if (config.time_conditioning == TimeConditioning::kScalar)
    d.time_w_ = uniform_tensor(rng, 1, dm, 0.1f);
  d.layers_.resize(config.layers);
  for (auto& layer : d.layers_) {
    for (int h = 0; h < config.heads; ++h) {
      layer.wq.push_back(uniform_tensor(rng, dm, dh, wq_scale));
      layer.wk.push_back(uniform_tensor(rng, dm, dh, wq_scale));
      layer.wv.push_back(uniform_tensor(rng, dm, dh, wq_scale));
      layer.wo.push_back(uniform_tensor(rng, dh, dm, wo_scale));
    }
    layer.w1 = uniform_tensor(rng, dm, config.hidden, wq_scale);
    layer.b1 = Tensor(1, config.hidden);
    layer.w2 = uniform_tensor(rng, config.hidden, dm, w2_scale);
    layer.b2 = Tensor(1, dm);
  }
  if (!config.tie_output)
    d.w_out_ = uniform_tensor(rng, dm, config.vocab, wq_scale);
  return d;
}

std::vector<std::pair<std::string, Tensor*>> Denoiser::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("embed", &e_);
  if (config_.positions) out.emplace_back("pos", &p_);
  if (config_.time_conditioning == TimeConditioning::kScalar)
    out.emplace_back("time", &time_w_);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    for (int h = 0; h < config_.heads; ++h) {
      const std::string head = prefix + "head" + std::to_string(h) + ".";
      out.emplace_back(head + "wq", &layers_[l].wq[h]);
      out.emplace_back(head + "wk", &layers_[l].wk[h]);
      out.emplace_back(head + "wv", &layers_[l].wv[h]);
      out.emplace_back(head + "wo", &layers_[l].wo[h]);
    }
    out.emplace_back(prefix + "w1", &layers_[l].w1);
    out.emplace_back(prefix + "b1", &layers_[l].b1);
    out.emplace_back(prefix + "w2", &layers_[l].w2);
    out.emplace_back(prefix + "b2", &layers_[l].b2);
  }
  if (!config_.tie_output) out.emplace_back("out", &w_out_);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Denoiser::parameters()
    const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, tensor] : const_cast<Denoiser*>(this)->parameters())
    out.emplace_back(name, tensor);
  return out;
}

std::vector<float> Denoiser::soft_embedding(
    const std::vector<double>& pi) const {
  if (static_cast<int>(pi.size()) != config_.vocab)
    throw ShapeError("soft_embedding: distribution has " +
                     std::to_string(pi.size()) + " entries for vocab " +
                     std::to_string(config_.vocab));
  double total = 0.0;
  for (double p : pi) {
    if (!(p >= 0.0)) throw ContractError("soft_embedding: negative mass");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw ContractError("soft_embedding: distribution sums to " +
                        std::to_string(total));
  std::vector<float> out(config_.d_model);
  for (int c = 0; c < config_.d_model; ++c) {
    double acc = 0.0;
    for (int v = 0; v < config_.vocab; ++v) acc += pi[v] * e_.at(v, c);
    out[c] = static_cast<float>(acc);
  }
  return out;
}

std::vector<float> Denoiser::write_delta(const std::vector<double>& pi) const {
  std::vector<float> out = soft_embedding(pi);
  for (int c = 0; c < config_.d_model; ++c)
    out[c] = static_cast<float>(static_cast<double>(out[c]) -
                                e_.at(config_.vocab, c));
  return out;
}

Tensor Denoiser::state_embeddings(const MaskedSequence& x) const {
  const int len = x.length();
  if (len > config_.length)
    throw ContractError("state_embeddings: sequence length " +
                        std::to_string(len) + " exceeds model length " +
                        std::to_string(config_.length));
  Tensor out(len, config_.d_model);
  for (int i = 0; i < len; ++i) {
    const int tok = x.tokens[i];
    if (tok < 0 || tok > config_.vocab)
      throw ContractError("state_embeddings: token out of range");
    for (int c = 0; c < config_.d_model; ++c) out.at(i, c) = e_.at(tok, c);
  }
  return out;
}

Denoiser::Bound Denoiser::bind(Tape& tape, bool requires_grad) const {
  Bound bound;
  for (const auto& [name, tensor] : parameters())
    bound.ids.emplace_back(name, tape.input(*tensor, requires_grad));
  return bound;
}

Denoiser::Graph Denoiser::forward_tokens(Tape& tape, const Bound& bound,
                                         const MaskedSequence& x,
                                         int t) const {
  x.validate(Vocabulary{config_.vocab});
  if (x.length() > config_.length)
    throw ContractError("forward_tokens: sequence longer than model length");
  const Tape::Id x0 = tape.gather_rows(bound.find("embed"), x.tokens);
  return body(tape, bound, x0, x.length(), t, nullptr);
}

Denoiser::Graph Denoiser::forward_embeddings(Tape& tape, const Bound& bound,
                                             Tape::Id x0, int t,
                                             const RowMask* active) const {
  const Tensor& v = tape.value(x0);
  if (v.cols != config_.d_model || v.rows > config_.length)
    throw ShapeError("forward_embeddings: leaf is " + v.shape_str() +
                     ", model wants <=" + std::to_string(config_.length) +
                     " x " + std::to_string(config_.d_model));
  return body(tape, bound, x0, v.rows, t, active);
}

Denoiser::Graph Denoiser::forward_injected(Tape& tape, const Bound& bound,
                                           const MaskedSequence& x,
                                           const InjectionPlan& plan, int t,
                                           const RowMask* active) const {
  Tensor x0 = state_embeddings(x);
  for (const auto& [pos, row] : plan) {
    if (pos < 0 || pos >= x.length())
      throw ContractError("injection position out of range");
    if (!x.is_masked(pos))
      throw ContractError("injection at unmasked position " +
                          std::to_string(pos));
    if (static_cast<int>(row.size()) != config_.d_model)
      throw ShapeError("injected row width mismatch");
    for (int c = 0; c < config_.d_model; ++c) x0.at(pos, c) = row[c];
  }
  return body(tape, bound, tape.input(std::move(x0), /*requires_grad=*/true),
              x.length(), t, active);
}

Denoiser::Graph Denoiser::body(Tape& tape, const Bound& bound, Tape::Id x0,
                               int len, int t, const RowMask* active) const {
  if (t < 0) throw ContractError("forward: negative step index");
  if (active) active->validate(len);
  Tape::Id x = x0;
  if (config_.positions) {
    Tape::Id pos = bound.find("pos");
    if (len < config_.length) pos = tape.row_select(pos, iota(len));
    x = tape.add(x, pos);
  }
  if (config_.time_conditioning == TimeConditioning::kScalar)
    x = tape.add(x, tape.scale(bound.find("time"), static_cast<float>(t)));

  const float inv_sqrt_dh =
      1.0f / std::sqrt(static_cast<float>(config_.head_dim()));
  for (int l = 0; l < config_.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    const Tape::Id a_in = tape.layer_norm_rows(x);
    Tape::Id attn = Tape::kNoNode;
    for (int h = 0; h < config_.heads; ++h) {
      const std::string head = prefix + "head" + std::to_string(h) + ".";
      const Tape::Id q = tape.matmul(a_in, bound.find(head + "wq"));
      const Tape::Id k = tape.matmul(a_in, bound.find(head + "wk"));
      const Tape::Id v = tape.matmul(a_in, bound.find(head + "wv"));
      const Tape::Id scores =
          tape.softmax_rows(tape.scale(tape.matmul(q, k, true), inv_sqrt_dh));
      const Tape::Id mixed = tape.matmul(scores, v);
      const Tape::Id projected = tape.matmul(mixed, bound.find(head + "wo"));
      attn = (attn == Tape::kNoNode) ? projected : tape.add(attn, projected);
    }
    if (active) attn = tape.row_detach(attn, *active);
    x = tape.add(x, attn);

    const Tape::Id m_in = tape.layer_norm_rows(x);
    const Tape::Id inner = tape.relu(
        tape.add(tape.matmul(m_in, bound.find(prefix + "w1")),
                 bound.find(prefix + "b1")));
    const Tape::Id mlp = tape.add(tape.matmul(inner, bound.find(prefix + "w2")),
                                  bound.find(prefix + "b2"));
    x = tape.add(x, mlp);
  }

  const Tape::Id final_norm = tape.layer_norm_rows(x);
  Tape::Id logits;
  if (config_.tie_output) {
    const Tape::Id data_rows =
        tape.row_select(bound.find("embed"), iota(config_.vocab));
    logits = tape.matmul(final_norm, data_rows, /*transpose_b=*/true);
  } else {
    logits = tape.matmul(final_norm, bound.find("out"));
  }
  Graph g;
  g.embeddings = x0;
  g.logits = logits;
  g.probs = tape.softmax_rows(logits);
  return g;
}

std::vector<std::vector<double>> Denoiser::predict(const MaskedSequence& x,
                                                   int t) const {
  Tape tape;
  const Bound bound = bind(tape, /*requires_grad=*/false);
  const Graph g = forward_tokens(tape, bound, x, t);
  const Tensor& probs = tape.value(g.probs);
  std::vector<std::vector<double>> out(probs.rows,
                                       std::vector<double>(probs.cols));
  for (int r = 0; r < probs.rows; ++r)
    for (int c = 0; c < probs.cols; ++c) out[r][c] = probs.at(r, c);
  return out;
}

Tape::Id entropy_readout(Tape& tape, Tape::Id probs,
                         const std::vector<int>& rows) {
  const Tensor& p = tape.value(probs);
  if (rows.empty()) return tape.constant(Tensor(1, 1));
  for (int r : rows)
    if (r < 0 || r >= p.rows)
      throw ContractError("entropy_readout: row index out of range");
  const Tape::Id guarded =
      tape.add(probs, tape.constant(Tensor::full(p.rows, p.cols, kLogGuard)));
  const Tape::Id plogp = tape.mul(probs, tape.log(guarded));
  return tape.scale(tape.sum(tape.row_select(plogp, rows)), -1.0f);
}

double entropy(const std::vector<double>& pi) {
  double h = 0.0;
  for (double p : pi)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

}  // namespace estr
