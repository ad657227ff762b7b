#include "estr/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "estr/error.hpp"
#include "estr/tape.hpp"

namespace estr {
namespace {

// argmax over data tokens, ties toward the lower token id.
int argmax_token(const std::vector<double>& dist) {
  int best = 0;
  for (int v = 1; v < static_cast<int>(dist.size()); ++v)
    if (dist[v] > dist[best]) best = v;
  return best;
}

int write_token(const std::vector<double>& dist, WriteRule rule, Rng& rng) {
  if (rule == WriteRule::kArgmax) return argmax_token(dist);
  return rng.next_categorical(dist);
}

void check_plan(const DecodePlan& plan, const Denoiser& model,
                const NoiseSchedule& schedule) {
  const DenoiserConfig& cfg = model.config();
  if (plan.start.length() < 1 || plan.start.length() > cfg.length)
    throw ContractError("decode: start length " +
                        std::to_string(plan.start.length()) +
                        " not in [1, " + std::to_string(cfg.length) + "]");
  plan.start.validate(Vocabulary{cfg.vocab});
  if (plan.t_start < 1 || plan.t_start > schedule.steps)
    throw ContractError("decode: t_start " + std::to_string(plan.t_start) +
                        " not in [1, " + std::to_string(schedule.steps) + "]");
  if (static_cast<int>(plan.budgets.size()) != schedule.steps)
    throw ContractError("decode: budget list has " +
                        std::to_string(plan.budgets.size()) +
                        " entries for " + std::to_string(schedule.steps) +
                        " steps");
  // Steps run from t_start downward until the cumulative budget equals the
  // masked count; that prefix must land on the count exactly.
  const long long need = static_cast<long long>(plan.start.masked.size());
  long long cum = 0;
  for (int t = plan.t_start; t >= 1 && cum < need; --t) {
    if (plan.budgets[t - 1] < 1)
      throw ContractError("decode: step " + std::to_string(t) +
                          " has budget < 1");
    cum += plan.budgets[t - 1];
  }
  if (cum != need)
    throw ContractError("decode: budgets from step " +
                        std::to_string(plan.t_start) +
                        " downward reach " + std::to_string(cum) + " but " +
                        std::to_string(need) + " positions are masked");
}

double row_entropy(const std::vector<double>& dist) { return entropy(dist); }

}  // namespace

LocalScores local_scores(const std::vector<std::vector<double>>& dists) {
  LocalScores out;
  out.confidence.reserve(dists.size());
  out.margin.reserve(dists.size());
  out.negentropy.reserve(dists.size());
  for (const auto& dist : dists) {
    if (dist.empty()) throw ContractError("local_scores: empty distribution");
    double top = -1.0, second = -1.0;
    for (double p : dist) {
      if (p > top) {
        second = top;
        top = p;
      } else if (p > second) {
        second = p;
      }
    }
    if (second < 0.0) second = 0.0;  // single-symbol vocabulary
    out.confidence.push_back(top);
    out.margin.push_back(top - second);
    out.negentropy.push_back(-row_entropy(dist));
  }
  return out;
}

double pick_score(const LocalScores& s, LocalScore kind, int index) {
  switch (kind) {
    case LocalScore::kConfidence: return s.confidence[index];
    case LocalScore::kMargin: return s.margin[index];
    case LocalScore::kNegentropy: return s.negentropy[index];
  }
  throw ContractError("unknown local score");
}

void SteerConfig::validate() const {
  if (!(rho > 0.0) || rho > 1.0)
    throw ContractError("steer config: rho must be in (0, 1]");
  if (h_max < 0.0) throw ContractError("steer config: h_max must be >= 0");
  if (lambda_max < 0.0)
    throw ContractError("steer config: lambda_max must be >= 0");
}

std::vector<int> constant_budgets(int steps, int per_step) {
  if (steps < 1 || per_step < 1)
    throw ContractError("constant_budgets: steps and per_step must be >= 1");
  return std::vector<int>(steps, per_step);
}

DecodePlan full_decode_plan(int length, int vocab,
                            const NoiseSchedule& schedule,
                            std::vector<int> budgets, WriteRule write) {
  if (length < 1) throw ContractError("full_decode_plan: length must be >= 1");
  if (vocab < 2) throw ContractError("full_decode_plan: vocab must be >= 2");
  DecodePlan plan;
  plan.start.tokens.assign(length, vocab);  // vocab id = the mask token
  plan.start.masked.resize(length);
  for (int i = 0; i < length; ++i) plan.start.masked[i] = i;
  plan.t_start = schedule.steps;
  plan.budgets = std::move(budgets);
  plan.write = write;
  return plan;
}

DecodePlan prompt_decode_plan(const std::vector<int>& tokens,
                              const std::vector<int>& visible, int vocab,
                              const NoiseSchedule& schedule,
                              std::vector<int> budgets, WriteRule write) {
  const int length = static_cast<int>(tokens.size());
  std::vector<char> keep(length, 0);
  for (int p : visible) {
    if (p < 0 || p >= length)
      throw ContractError("prompt plan: visible position " +
                          std::to_string(p) + " out of range");
    keep[p] = 1;
  }
  DecodePlan plan;
  plan.start.tokens = tokens;
  for (int i = 0; i < length; ++i) {
    if (keep[i]) {
      if (tokens[i] < 0 || tokens[i] >= vocab)
        throw ContractError("prompt plan: visible position " +
                            std::to_string(i) + " holds a non-data token");
    } else {
      plan.start.tokens[i] = vocab;  // mask id
      plan.start.masked.push_back(i);
    }
  }
  if (plan.start.masked.empty())
    throw ContractError("prompt plan: nothing left to decode");

  if (static_cast<int>(budgets.size()) != schedule.steps)
    throw ContractError("prompt plan: budget list has " +
                        std::to_string(budgets.size()) + " entries for " +
                        std::to_string(schedule.steps) + " steps");
  long long need = static_cast<long long>(plan.start.masked.size());
  long long cum = 0;
  int t_start = 0;
  for (int t = 1; t <= schedule.steps && cum < need; ++t) {
    cum += budgets[t - 1];
    t_start = t;
  }
  if (cum != need)
    throw ContractError("prompt plan: no step prefix spends exactly " +
                        std::to_string(need) + " reveals");
  plan.t_start = t_start;
  plan.budgets = std::move(budgets);
  plan.write = write;
  return plan;
}

std::vector<int> prefilter(const std::vector<int>& masked,
                           const std::vector<std::vector<double>>& dists,
                           double rho, LocalScore score) {
  if (!(rho > 0.0) || rho > 1.0)
    throw ContractError("prefilter: rho must be in (0, 1]");
  if (masked.empty()) return {};
  const int r = static_cast<int>(
      std::ceil(rho * static_cast<double>(masked.size())));

  std::vector<std::vector<double>> rows;
  rows.reserve(masked.size());
  for (int i : masked) rows.push_back(dists[i]);
  const LocalScores scores = local_scores(rows);

  std::vector<int> order(masked.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = pick_score(scores, score, a);
    const double sb = pick_score(scores, score, b);
    if (sa != sb) return sa > sb;
    return masked[a] < masked[b];
  });
  std::vector<int> out;
  out.reserve(r);
  for (int k = 0; k < r; ++k) out.push_back(masked[order[k]]);
  std::sort(out.begin(), out.end());
  return out;
}

double gate(double tis, double entropy_nats, int vocab) {
  if (entropy_nats < 0.0) throw ContractError("gate: negative entropy");
  const double c =
      std::clamp(1.0 - entropy_nats / std::log(static_cast<double>(vocab)),
                 0.0, 1.0);
  return c * tis;
}

double anti_collapse_penalty(double entropy_nats, int t, int steps,
                             double h_max, double lambda_max,
                             FloorSchedule floor) {
  if (t < 1 || t > steps)
    throw ContractError("anti_collapse_penalty: t out of range");
  const double frac = static_cast<double>(t) / static_cast<double>(steps);
  const double h_t =
      floor == FloorSchedule::kAnnealed ? h_max * frac : h_max * (1.0 - frac);
  const double lambda_t = lambda_max * frac;
  const double deficit = std::max(h_t - entropy_nats, 0.0);
  return lambda_t * deficit * deficit;
}

InfluenceResult tis_all(const Denoiser& model,
                        const std::vector<std::vector<double>>& dists,
                        const MaskedSequence& state, int t,
                        const std::vector<int>& candidates,
                        bool active_queries, long long& nfe_forward,
                        long long& nfe_backward) {
  if (candidates.empty())
    throw ContractError("tis_all: empty candidate set");
  for (int i : candidates)
    if (!state.is_masked(i))
      throw ContractError("tis_all: candidate " + std::to_string(i) +
                          " is not masked");
  if (static_cast<int>(dists.size()) != state.length())
    throw ContractError("tis_all: one distribution per position required");

  const int d = model.config().d_model;

  // Surrogate pass at the next step. Every candidate's relaxed input is the
  // current state (an unrevealed candidate still shows the mask embedding),
  // so a single forward + backward serves the whole candidate set.
  Tape tape;
  const auto bound = model.bind(tape, /*requires_grad=*/false);
  const Tape::Id x0 =
      tape.input(model.state_embeddings(state), /*requires_grad=*/true);
  RowMask active(candidates);
  const auto graph = model.forward_embeddings(
      tape, bound, x0, t - 1, active_queries ? &active : nullptr);
  const Tape::Id readout = entropy_readout(tape, graph.probs, state.masked);
  ++nfe_forward;
  auto grads = tape.backward(readout);
  ++nfe_backward;

  const auto it = grads.find(x0);
  const Tensor* g_all = it == grads.end() ? nullptr : &it->second;

  InfluenceResult out;
  out.candidates = candidates;
  for (int i : candidates) {
    std::vector<float> g(d, 0.0f);
    if (g_all)
      for (int k = 0; k < d; ++k)
        g[k] = g_all->data[static_cast<std::size_t>(i) * d + k];
    std::vector<float> delta = model.write_delta(dists[i]);

    double dot = 0.0, gn = 0.0, dn = 0.0;
    for (int k = 0; k < d; ++k) {
      dot += static_cast<double>(g[k]) * static_cast<double>(delta[k]);
      gn += static_cast<double>(g[k]) * static_cast<double>(g[k]);
      dn += static_cast<double>(delta[k]) * static_cast<double>(delta[k]);
    }
    out.tis.push_back(-dot);
    out.g_norm.push_back(std::sqrt(gn));
    out.delta_norm.push_back(std::sqrt(dn));
    out.g.push_back(std::move(g));
    out.delta.push_back(std::move(delta));
  }
  return out;
}

DecodeResult greedy_decode(const Denoiser& model,
                           const NoiseSchedule& schedule,
                           const DecodePlan& plan, LocalScore score,
                           Rng& rng) {
  check_plan(plan, model, schedule);
  MaskedSequence x = plan.start;
  DecodeResult result;
  result.trace.sampler = score == LocalScore::kConfidence ? "confidence"
                         : score == LocalScore::kMargin   ? "margin"
                                                          : "entropy";

  for (int t = plan.t_start; t >= 1 && !x.masked.empty(); --t) {
    const auto dists = model.predict(x, t);
    ++result.nfe_forward;

    std::vector<std::vector<double>> rows;
    rows.reserve(x.masked.size());
    for (int i : x.masked) rows.push_back(dists[i]);
    const LocalScores scores = local_scores(rows);

    StepRecord step;
    step.t = t;
    for (std::size_t k = 0; k < x.masked.size(); ++k) {
      CandidateScore c;
      c.position = x.masked[k];
      c.entropy = -scores.negentropy[k];
      c.gate = 0.0;
      c.score = pick_score(scores, score, static_cast<int>(k));
      step.candidates.push_back(c);
    }

    std::vector<int> order(x.masked.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const double sa = pick_score(scores, score, a);
      const double sb = pick_score(scores, score, b);
      if (sa != sb) return sa > sb;
      return x.masked[a] < x.masked[b];
    });

    const int want = plan.budgets[t - 1];
    const int take = std::min<int>(want, static_cast<int>(x.masked.size()));
    step.budget_shortfall = want - take;
    std::vector<int> reveal;
    for (int k = 0; k < take; ++k) reveal.push_back(x.masked[order[k]]);

    for (int i : reveal) {
      const int token = write_token(dists[i], plan.write, rng);
      step.selected.push_back(i);
      step.written.emplace_back(i, token);
      x.tokens[i] = token;
    }
    x.masked.erase(std::remove_if(x.masked.begin(), x.masked.end(),
                                  [&](int i) {
                                    return std::find(reveal.begin(),
                                                     reveal.end(),
                                                     i) != reveal.end();
                                  }),
                   x.masked.end());

    step.nfe_forward = result.nfe_forward;
    step.nfe_backward = result.nfe_backward;
    result.trace.steps.push_back(std::move(step));
  }

  result.tokens = x.tokens;
  return result;
}

DecodeResult steered_decode(const Denoiser& model,
                            const NoiseSchedule& schedule,
                            const DecodePlan& plan, const SteerConfig& config,
                            Rng& rng) {
  check_plan(plan, model, schedule);
  config.validate();
  const int vocab = model.config().vocab;
  const double ln_v = std::log(static_cast<double>(vocab));

  MaskedSequence x = plan.start;
  DecodeResult result;
  result.trace.sampler = "steered";

  for (int t = plan.t_start; t >= 1 && !x.masked.empty(); --t) {
    const auto dists = model.predict(x, t);
    ++result.nfe_forward;

    const std::vector<int> cands =
        prefilter(x.masked, dists, config.rho, config.prefilter);
    const InfluenceResult inf =
        tis_all(model, dists, x, t, cands, config.active_queries,
                result.nfe_forward, result.nfe_backward);

    double g_max = 0.0, d_max = 0.0;
    for (std::size_t k = 0; k < cands.size(); ++k) {
      g_max = std::max(g_max, inf.g_norm[k]);
      d_max = std::max(d_max, inf.delta_norm[k]);
    }

    StepRecord step;
    step.t = t;
    step.g_norm_max = g_max;
    step.delta_norm_max = d_max;
    for (std::size_t k = 0; k < cands.size(); ++k) {
      CandidateScore c;
      c.position = cands[k];
      c.entropy = entropy(dists[cands[k]]);
      c.gate = config.gating
                   ? std::clamp(1.0 - c.entropy / ln_v, 0.0, 1.0)
                   : 1.0;
      c.tis = inf.tis[k];
      c.penalty = anti_collapse_penalty(c.entropy, t, schedule.steps,
                                        config.h_max, config.lambda_max,
                                        config.floor);
      c.score = c.gate * c.tis - c.penalty;

      // Cauchy-Schwarz bound on the gated influence, checked live; the tiny
      // slack absorbs float-accumulation rounding on exactly-parallel pairs.
      if (std::abs(c.gate * c.tis) > g_max * d_max * (1.0 + 1e-9) + 1e-12)
        throw NumericError(
            "gated influence exceeded its norm bound at step " +
            std::to_string(t) + ", position " + std::to_string(c.position));
      step.candidates.push_back(c);
    }

    std::vector<int> order(cands.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (step.candidates[a].score != step.candidates[b].score)
        return step.candidates[a].score > step.candidates[b].score;
      return cands[a] < cands[b];
    });

    const int want = plan.budgets[t - 1];
    const int take = std::min<int>(want, static_cast<int>(cands.size()));
    step.budget_shortfall = want - take;

    std::vector<int> reveal;
    for (int k = 0; k < take; ++k) reveal.push_back(cands[order[k]]);
    for (int i : reveal) {
      const int token = write_token(dists[i], plan.write, rng);
      step.selected.push_back(i);
      step.written.emplace_back(i, token);
      x.tokens[i] = token;
    }
    x.masked.erase(std::remove_if(x.masked.begin(), x.masked.end(),
                                  [&](int i) {
                                    return std::find(reveal.begin(),
                                                     reveal.end(),
                                                     i) != reveal.end();
                                  }),
                   x.masked.end());

    step.nfe_forward = result.nfe_forward;
    step.nfe_backward = result.nfe_backward;
    result.trace.steps.push_back(std::move(step));
  }

  result.tokens = x.tokens;
  return result;
}

}  // namespace estr
