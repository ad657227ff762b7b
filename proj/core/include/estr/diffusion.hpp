#pragma once

#include <vector>

#include "estr/rng.hpp"
#include "estr/tape.hpp"

namespace estr {

// Token vocabulary of data tokens 0..size-1 plus one reserved absorbing mask
// token whose id is `size`. The mask id never appears in model output
// distributions; it exists only in corrupted sequences.
struct Vocabulary {
  int size = 0;
  int mask_id() const { return size; }
  bool is_data(int tok) const { return tok >= 0 && tok < size; }
  void validate() const {
    if (size < 2) throw ContractError("Vocabulary: need at least 2 data tokens");
  }
};

// Keep-probability schedule alpha_0 = 1 >= alpha_1 >= ... >= alpha_T = 0.
// alpha(t) is the probability that a position is still uncorrupted at step t.
struct NoiseSchedule {
  enum class Kind { kLinear, kCosine, kCustom };

  Kind kind = Kind::kLinear;
  int steps = 0;  // T
  std::vector<double> table;  // only for kCustom, size T+1

  static NoiseSchedule linear(int T);
  static NoiseSchedule cosine(int T);
  static NoiseSchedule custom(std::vector<double> alphas);

  double alpha(int t) const;
  // Loss weight w_t = (alpha_{t-1} - alpha_t) / (1 - alpha_t); the
  // proportionality constant in front of the masked cross-entropy sum is
  // fixed to one. Valid for t >= 1.
  double keep_weight(int t) const;
  // Endpoints exactly 1 and 0, monotone non-increasing in between.
  void validate() const;
};

// Partially masked token sequence. tokens[i] == mask_id exactly for the
// positions listed (sorted) in masked.
struct MaskedSequence {
  std::vector<int> tokens;
  std::vector<int> masked;

  static MaskedSequence from_tokens(std::vector<int> tokens, int mask_id);
  int length() const { return static_cast<int>(tokens.size()); }
  bool is_masked(int i) const;
  void validate(const Vocabulary& vocab) const;
};

// Corrupts x0 at step t: each position independently keeps its token with
// probability alpha_t, otherwise becomes the mask token. t = 0 is identity,
// t = T masks everything. Positions listed in `keep_visible` (a conditioning
// prompt) are exempt from corruption; the process applies to the rest.
MaskedSequence forward_mask(const std::vector<int>& x0, int t,
                            const NoiseSchedule& schedule, const Vocabulary& vocab,
                            Rng& rng,
                            const std::vector<int>* keep_visible = nullptr);

// Exact one-step posterior q(x_{t-1}^i | x_t^i, x0^i) as a categorical over
// the vocabulary plus mask (index vocab.size). Unmasked positions are locked
// in (point mass at the current token). Masked positions split mass between
// staying masked and reverting to x0^i.
std::vector<double> true_posterior(int xt_token, int x0_token, int t,
                                   const NoiseSchedule& schedule,
                                   const Vocabulary& vocab);

// Model-side reverse kernel: the same two-case form with the denoiser's
// predicted distribution (over data tokens) standing in for certainty about
// x0^i. Returns a categorical over vocab+mask; throws NumericError if the
// result fails to normalize within 1e-6.
std::vector<double> reverse_kernel(const std::vector<double>& denoised, int xt_token,
                                   int t, const NoiseSchedule& schedule,
                                   const Vocabulary& vocab);

// Training loss for one corrupted example on the tape:
//   w_t * sum over masked i of CE(onehot(x0_i), probs_i)
// where probs is an L x V node of per-position distributions over data
// tokens. Returns a constant zero node when nothing is masked.
Tape::Id elbo_loss(Tape& tape, Tape::Id probs, const std::vector<int>& x0,
                   const MaskedSequence& xt, int t, const NoiseSchedule& schedule,
                   const Vocabulary& vocab);

}  // namespace estr
