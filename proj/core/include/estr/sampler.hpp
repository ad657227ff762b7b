#pragma once
// Reverse-process decoding policies.
//
// greedy_decode reveals the most certain masked positions by a local score
// (confidence / margin / negative entropy): one forward per step.
//
// steered_decode ranks a prefiltered candidate set by how much revealing
// each candidate would reduce the next step's total masked entropy. The
// estimate is first order: one surrogate forward at the next step (whose
// input is the current state, since an unrevealed candidate still shows the
// mask embedding), one backward of the masked-entropy readout, and a dot
// product of each candidate's input-embedding gradient with its expected
// write delta. One forward + one backward serves every candidate, so a full
// decode costs 2T forwards and T backwards against the baseline's T.
//
// A confidence gate c = clip(1 - H/ln|V|, 0, 1) damps the score of
// candidates the model is still unsure about, and a time-annealed entropy
// floor penalizes revealing near-certain positions too early.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "estr/denoiser.hpp"
#include "estr/diffusion.hpp"
#include "estr/rng.hpp"

namespace estr {

enum class WriteRule { kArgmax, kSample };
enum class LocalScore { kConfidence, kMargin, kNegentropy };
// Entropy-floor shape over reverse time t = T..1: annealed = h_max * t/T
// (high early, vanishing at completion); reversed = h_max * (1 - t/T), the
// alternative reading, kept behind this switch and not used by default.
enum class FloorSchedule { kAnnealed, kReversed };

// Certainty scores per distribution; higher = more certain.
struct LocalScores {
  std::vector<double> confidence;  // top probability
  std::vector<double> margin;      // top minus second probability
  std::vector<double> negentropy;  // -H in nats
};
LocalScores local_scores(const std::vector<std::vector<double>>& dists);
double pick_score(const LocalScores& s, LocalScore kind, int index);

// Knobs of the entropy-steered sampler.
struct SteerConfig {
  double rho = 0.25;        // candidate fraction of |M_t|, in (0, 1]
  bool gating = true;       // confidence gate on the influence score
  double h_max = 0.5;       // entropy floor peak (nats, >= 0)
  double lambda_max = 1.0;  // floor weight peak (>= 0)
  FloorSchedule floor = FloorSchedule::kAnnealed;
  bool active_queries = true;  // surrogate backward only through candidates
  LocalScore prefilter = LocalScore::kConfidence;

  void validate() const;
};

// How a decode starts and spends its reveal budget. Steps t_start..1 run in
// order; step t may reveal budgets[t-1] positions. The budgets over the
// executed steps must sum to the number of initially masked positions.
struct DecodePlan {
  MaskedSequence start;
  int t_start = 0;
  std::vector<int> budgets;  // size = schedule steps, indexed by t-1
  WriteRule write = WriteRule::kArgmax;
};

std::vector<int> constant_budgets(int steps, int per_step);

// Fully masked start: t_start = T.
DecodePlan full_decode_plan(int length, int vocab,
                            const NoiseSchedule& schedule,
                            std::vector<int> budgets,
                            WriteRule write = WriteRule::kArgmax);

// Start from `tokens` with only `visible` positions revealed; t_start is the
// step at which the cumulative budget exactly matches the masked count.
DecodePlan prompt_decode_plan(const std::vector<int>& tokens,
                              const std::vector<int>& visible, int vocab,
                              const NoiseSchedule& schedule,
                              std::vector<int> budgets,
                              WriteRule write = WriteRule::kArgmax);

// One scored candidate at one step; score = gate * tis - penalty exactly.
struct CandidateScore {
  int position = 0;
  double entropy = 0.0;  // H_i (nats) under the current forward
  double gate = 1.0;     // c in [0,1]; 1 when gating is off
  double tis = 0.0;      // -<g_i, delta_i>: first-order entropy reduction
  double penalty = 0.0;  // lambda_t * max(h_t - H_i, 0)^2
  double score = 0.0;
};

struct StepRecord {
  int t = 0;
  std::vector<CandidateScore> candidates;
  std::vector<int> selected;                 // positions, selection order
  std::vector<std::pair<int, int>> written;  // (position, token)
  long long nfe_forward = 0;   // cumulative after this step
  long long nfe_backward = 0;  // cumulative after this step
  int budget_shortfall = 0;    // reveals requested beyond the candidate set
  double g_norm_max = 0.0;     // step max ||g_i||  (steered decodes)
  double delta_norm_max = 0.0;  // step max ||delta_i||
};

struct DecodeTrace {
  std::string sampler;
  std::vector<StepRecord> steps;
};

struct DecodeResult {
  std::vector<int> tokens;
  DecodeTrace trace;
  long long nfe_forward = 0;
  long long nfe_backward = 0;
};

// r = ceil(rho * |masked|) most certain masked positions by the chosen local
// score; ties broken toward the lower index. Empty masked set -> empty.
std::vector<int> prefilter(const std::vector<int>& masked,
                           const std::vector<std::vector<double>>& dists,
                           double rho, LocalScore score);

// Confidence gate applied to an influence score.
double gate(double tis, double entropy, int vocab);

// Time-annealed floor penalty: h_t = h_max * t/T (or the reversed form),
// lambda_t = lambda_max * t/T; returns lambda_t * max(h_t - H, 0)^2.
double anti_collapse_penalty(double entropy, int t, int steps, double h_max,
                             double lambda_max,
                             FloorSchedule floor = FloorSchedule::kAnnealed);

// First-order influence of each candidate's reveal on next-step masked
// entropy, all candidates served by one surrogate forward + one backward.
struct InfluenceResult {
  std::vector<int> candidates;
  std::vector<double> tis;
  std::vector<double> g_norm;
  std::vector<double> delta_norm;
  std::vector<std::vector<float>> g;      // input-embedding gradient rows
  std::vector<std::vector<float>> delta;  // expected write minus mask row
};
InfluenceResult tis_all(const Denoiser& model,
                        const std::vector<std::vector<double>>& dists,
                        const MaskedSequence& state, int t,
                        const std::vector<int>& candidates,
                        bool active_queries, long long& nfe_forward,
                        long long& nfe_backward);

DecodeResult greedy_decode(const Denoiser& model, const NoiseSchedule& schedule,
                           const DecodePlan& plan, LocalScore score, Rng& rng);

DecodeResult steered_decode(const Denoiser& model,
                            const NoiseSchedule& schedule,
                            const DecodePlan& plan, const SteerConfig& config,
                            Rng& rng);

}  // namespace estr
