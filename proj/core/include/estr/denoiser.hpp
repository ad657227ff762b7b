#pragma once
// Tiny bidirectional transformer that maps a (possibly soft-embedded)
// sequence to per-position distributions over data tokens.  The forward
// graph is built on a Tape so callers can differentiate entropy readouts
// with respect to injected input embeddings; an optional active-row mask
// detaches the attention output of all other rows, which leaves the forward
// values bit-identical but restricts the backward pass to the active query
// rows.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "estr/diffusion.hpp"
#include "estr/tape.hpp"
#include "estr/tensor.hpp"

namespace estr {

enum class TimeConditioning {
  kNone,    // model ignores the step index (mask count carries it implicitly)
  kScalar,  // adds t * (learned 1 x d row) to every position
};

struct DenoiserConfig {
  int vocab = 8;   // data tokens 0..vocab-1; mask id = vocab
  int length = 8;  // maximum sequence length L
  int d_model = 16;
  int layers = 1;
  int heads = 2;
  int hidden = 32;
  bool positions = true;  // learned absolute positional rows
  TimeConditioning time_conditioning = TimeConditioning::kNone;
  bool tie_output = true;  // logits read against the embedding table

  int head_dim() const { return d_model / heads; }
  void validate() const;
};

// Positions (currently masked) whose embedding rows are replaced after the
// embedding layer, e.g. with a soft write.
using InjectionPlan = std::map<int, std::vector<float>>;

class Denoiser {
 public:
  // Tape ids for every parameter tensor, bound once per tape so several
  // forward graphs (a training batch) can share them.
  struct Bound {
    std::vector<std::pair<std::string, Tape::Id>> ids;
    Tape::Id find(const std::string& name) const;
  };

  struct Graph {
    Tape::Id embeddings;  // input-embedding leaf (before positions/time)
    Tape::Id logits;      // len x vocab
    Tape::Id probs;       // len x vocab, rows sum to 1
  };

  static Denoiser init(const DenoiserConfig& config, std::uint64_t seed);

  const DenoiserConfig& config() const { return config_; }

  // Parameter tensors in declaration order; the same order is used for
  // checkpoints and optimizer state.
  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;

  // Expected embedding of a normalized distribution over data tokens; the
  // coefficients are constants (no gradient flows through pi).
  std::vector<float> soft_embedding(const std::vector<double>& pi) const;
  // soft_embedding(pi) minus the mask embedding row.
  std::vector<float> write_delta(const std::vector<double>& pi) const;

  // Token-embedding rows for a state (masked positions get the mask row;
  // no positional or time terms -- those are added inside the forward).
  Tensor state_embeddings(const MaskedSequence& x) const;

  Bound bind(Tape& tape, bool requires_grad) const;

  // Forward from token ids; gradients reach the parameters when bound with
  // requires_grad (training path).
  Graph forward_tokens(Tape& tape, const Bound& bound, const MaskedSequence& x,
                       int t) const;

  // Forward from an injected embedding leaf (len x d_model).  When `active`
  // is non-null, every attention block's output is row-detached outside the
  // active rows; forward values are bit-identical either way.
  Graph forward_embeddings(Tape& tape, const Bound& bound, Tape::Id x0, int t,
                           const RowMask* active = nullptr) const;

  // Forward from a state with some masked rows replaced per the plan.
  // Injecting at an unmasked position is a contract error.
  Graph forward_injected(Tape& tape, const Bound& bound,
                         const MaskedSequence& x, const InjectionPlan& plan,
                         int t, const RowMask* active = nullptr) const;

  // Convenience no-gradient forward: per-position distributions over data
  // tokens (all rows, in double precision).
  std::vector<std::vector<double>> predict(const MaskedSequence& x,
                                           int t) const;

 private:
  struct Layer {
    std::vector<Tensor> wq, wk, wv, wo;  // per head
    Tensor w1, b1, w2, b2;
  };

  DenoiserConfig config_;
  Tensor e_;       // (vocab+1) x d_model, last row = mask embedding
  Tensor p_;       // length x d_model (allocated only when positions enabled)
  Tensor time_w_;  // 1 x d_model (allocated only for scalar conditioning)
  std::vector<Layer> layers_;
  Tensor w_out_;  // d_model x vocab (allocated only when untied)

  Denoiser() = default;
  Graph body(Tape& tape, const Bound& bound, Tape::Id x0, int len, int t,
             const RowMask* active) const;
};

// Sum of per-row entropies (nats) of the given probability rows, on tape;
// differentiable through the probabilities.  Empty row set yields 0.
Tape::Id entropy_readout(Tape& tape, Tape::Id probs,
                         const std::vector<int>& rows);

// Host-side entropy in nats of one normalized distribution.
double entropy(const std::vector<double>& pi);

}  // namespace estr
