#include "estr/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace estr {

namespace {
constexpr double kPi = 3.14159265358979323846;

void check_step_range(int t, int T, const char* where, int lo) {
  if (t < lo || t > T)
    throw ContractError(std::string(where) + ": step " + std::to_string(t) +
                        " outside [" + std::to_string(lo) + "," + std::to_string(T) + "]");
}
}  // namespace

NoiseSchedule NoiseSchedule::linear(int T) {
  if (T < 1) throw ContractError("NoiseSchedule: steps must be >= 1");
  NoiseSchedule s;
  s.kind = Kind::kLinear;
  s.steps = T;
  return s;
}

NoiseSchedule NoiseSchedule::cosine(int T) {
  if (T < 1) throw ContractError("NoiseSchedule: steps must be >= 1");
  NoiseSchedule s;
  s.kind = Kind::kCosine;
  s.steps = T;
  return s;
}

NoiseSchedule NoiseSchedule::custom(std::vector<double> alphas) {
  if (alphas.size() < 2) throw ContractError("NoiseSchedule: custom table too short");
  NoiseSchedule s;
  s.kind = Kind::kCustom;
  s.steps = static_cast<int>(alphas.size()) - 1;
  s.table = std::move(alphas);
  return s;
}

double NoiseSchedule::alpha(int t) const {
  check_step_range(t, steps, "NoiseSchedule::alpha", 0);
  switch (kind) {
    case Kind::kLinear:
      return 1.0 - static_cast<double>(t) / steps;
    case Kind::kCosine:
      return t == steps ? 0.0 : std::cos(kPi * t / (2.0 * steps));
    case Kind::kCustom:
      return table[t];
  }
  return 0.0;
}

double NoiseSchedule::keep_weight(int t) const {
  check_step_range(t, steps, "NoiseSchedule::keep_weight", 1);
  const double at = alpha(t);
  return (alpha(t - 1) - at) / (1.0 - at);
}

void NoiseSchedule::validate() const {
  if (alpha(0) != 1.0) throw NumericError("NoiseSchedule: alpha(0) must be exactly 1");
  if (alpha(steps) != 0.0) throw NumericError("NoiseSchedule: alpha(T) must be exactly 0");
  for (int t = 1; t <= steps; ++t)
    if (alpha(t) > alpha(t - 1))
      throw NumericError("NoiseSchedule: alpha must be non-increasing (violated at t=" +
                         std::to_string(t) + ")");
}

MaskedSequence MaskedSequence::from_tokens(std::vector<int> tokens, int mask_id) {
  MaskedSequence s;
  s.tokens = std::move(tokens);
  for (int i = 0; i < s.length(); ++i)
    if (s.tokens[i] == mask_id) s.masked.push_back(i);
  return s;
}

bool MaskedSequence::is_masked(int i) const {
  return std::binary_search(masked.begin(), masked.end(), i);
}

void MaskedSequence::validate(const Vocabulary& vocab) const {
  std::size_t k = 0;
  for (int i = 0; i < length(); ++i) {
    const bool listed = k < masked.size() && masked[k] == i;
    if (listed) {
      if (k > 0 && masked[k - 1] >= masked[k])
        throw ContractError("MaskedSequence: masked indices not sorted/unique");
      ++k;
    }
    if (tokens[i] == vocab.mask_id()) {
      if (!listed)
        throw ContractError("MaskedSequence: mask token at " + std::to_string(i) +
                            " missing from masked set");
    } else {
      if (listed)
        throw ContractError("MaskedSequence: masked set lists unmasked position " +
                            std::to_string(i));
      if (!vocab.is_data(tokens[i]))
        throw ContractError("MaskedSequence: token out of vocabulary at " +
                            std::to_string(i));
    }
  }
  if (k != masked.size())
    throw ContractError("MaskedSequence: masked set has out-of-range entries");
}

MaskedSequence forward_mask(const std::vector<int>& x0, int t,
                            const NoiseSchedule& schedule, const Vocabulary& vocab,
                            Rng& rng, const std::vector<int>* keep_visible) {
  check_step_range(t, schedule.steps, "forward_mask", 0);
  for (int tok : x0)
    if (!vocab.is_data(tok))
      throw ContractError("forward_mask: x0 contains non-data token " + std::to_string(tok));
  std::vector<char> exempt(x0.size(), 0);
  if (keep_visible) {
    for (int i : *keep_visible) {
      if (i < 0 || i >= static_cast<int>(x0.size()))
        throw ContractError("forward_mask: keep_visible position out of range");
      exempt[i] = 1;
    }
  }

  const double keep = schedule.alpha(t);
  MaskedSequence out;
  out.tokens.resize(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (exempt[i] || rng.next_double() < keep) {
      out.tokens[i] = x0[i];
    } else {
      out.tokens[i] = vocab.mask_id();
      out.masked.push_back(static_cast<int>(i));
    }
  }
  return out;
}

namespace {

// Shared two-case scaffold of the one-step reverse distributions. Both the
// exact posterior and the model kernel use the same expressions so that the
// one-hot case agrees bit for bit.
struct ReverseWeights {
  double stay_masked;  // (1 - alpha_{t-1}) / (1 - alpha_t)
  double reveal;       // (alpha_{t-1} - alpha_t) / (1 - alpha_t)
};

ReverseWeights reverse_weights(int t, const NoiseSchedule& schedule, const char* where) {
  check_step_range(t, schedule.steps, where, 1);
  const double at = schedule.alpha(t);
  const double atm1 = schedule.alpha(t - 1);
  if (at >= 1.0)
    throw ContractError(std::string(where) +
                        ": alpha_t = 1 leaves no mask mass to redistribute");
  return {(1.0 - atm1) / (1.0 - at), (atm1 - at) / (1.0 - at)};
}

}  // namespace

std::vector<double> true_posterior(int xt_token, int x0_token, int t,
                                   const NoiseSchedule& schedule,
                                   const Vocabulary& vocab) {
  if (!vocab.is_data(x0_token))
    throw ContractError("true_posterior: x0 token out of vocabulary");
  std::vector<double> p(static_cast<std::size_t>(vocab.size) + 1, 0.0);
  if (xt_token != vocab.mask_id()) {
    // Locked in: unmasked positions never change.
    if (!vocab.is_data(xt_token))
      throw ContractError("true_posterior: x_t token out of vocabulary");
    p[xt_token] = 1.0;
    return p;
  }
  const ReverseWeights w = reverse_weights(t, schedule, "true_posterior");
  p[vocab.mask_id()] = w.stay_masked;
  p[x0_token] = w.reveal;
  return p;
}

std::vector<double> reverse_kernel(const std::vector<double>& denoised, int xt_token,
                                   int t, const NoiseSchedule& schedule,
                                   const Vocabulary& vocab) {
  if (static_cast<int>(denoised.size()) != vocab.size)
    throw ShapeError("reverse_kernel: denoised distribution has " +
                     std::to_string(denoised.size()) + " entries, vocabulary has " +
                     std::to_string(vocab.size));
  std::vector<double> p(static_cast<std::size_t>(vocab.size) + 1, 0.0);
  if (xt_token != vocab.mask_id()) {
    if (!vocab.is_data(xt_token))
      throw ContractError("reverse_kernel: x_t token out of vocabulary");
    p[xt_token] = 1.0;
    return p;
  }
  const ReverseWeights w = reverse_weights(t, schedule, "reverse_kernel");
  p[vocab.mask_id()] = w.stay_masked;
  for (int v = 0; v < vocab.size; ++v) p[v] = w.reveal * denoised[v];

  double total = 0.0;
  for (double x : p) total += x;
  if (std::abs(total - 1.0) > 1e-6)
    throw NumericError("reverse_kernel: distribution sums to " + std::to_string(total));
  return p;
}

Tape::Id elbo_loss(Tape& tape, Tape::Id probs, const std::vector<int>& x0,
                   const MaskedSequence& xt, int t, const NoiseSchedule& schedule,
                   const Vocabulary& vocab) {
  const Tensor& P = tape.value(probs);
  if (P.rows != xt.length() || P.cols != vocab.size)
    throw ShapeError("elbo_loss: probs " + P.shape_str() + " does not match sequence length " +
                     std::to_string(xt.length()) + " and vocabulary " +
                     std::to_string(vocab.size));
  if (x0.size() != xt.tokens.size())
    throw ContractError("elbo_loss: x0 and x_t lengths differ");
  if (xt.masked.empty()) return tape.constant(Tensor::scalar(0.0f));

  Tensor pick(P.rows, P.cols);
  for (int i : xt.masked) {
    if (!vocab.is_data(x0[i]))
      throw ContractError("elbo_loss: x0 token out of vocabulary at masked position " +
                          std::to_string(i));
    pick.at(i, x0[i]) = 1.0f;
  }
  // Tiny offset keeps the log op in domain if a probability underflows to 0.
  auto guarded = tape.add(probs, tape.constant(Tensor::full(P.rows, P.cols, 1e-30f)));
  auto picked = tape.mul(tape.log(guarded), tape.constant(pick));
  const float w = static_cast<float>(schedule.keep_weight(t));
  return tape.scale(tape.sum(picked), -w);
}

}  // namespace estr
