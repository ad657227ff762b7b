#pragma once
// Independent verification of the entropy-steering machinery.
//
// The steered sampler trusts a first-order estimate: revealing candidate i
// moves its input row from the mask embedding by delta_i, and the resulting
// change of next-step masked entropy is approximated by -<g_i, delta_i>
// from one shared backward. Everything here re-measures that claim the
// expensive way: exact entropy differences from pairs of dense forwards, a
// finite-difference curvature bound along each write direction, the
// enumerated hard-write objective, gradient fidelity of the restricted
// backward, and trace-shape audits of the sampler's work counters.
//
// The oracle's own forwards are instrumentation and are never added to the
// sampler's counters.

#include <cstdint>
#include <string>
#include <vector>

#include "estr/denoiser.hpp"
#include "estr/diffusion.hpp"
#include "estr/rng.hpp"
#include "estr/sampler.hpp"
#include "estr/tensor.hpp"

namespace estr {

// Total masked entropy as a differentiable function of an L x d
// input-embedding matrix with a fixed readout row set. Implemented by the
// real denoiser below and by closed-form stub surfaces in tests.
class EntropySurface {
 public:
  virtual ~EntropySurface() = default;
  virtual int rows() const = 0;
  virtual int cols() const = 0;
  virtual double value(const Tensor& x) const = 0;
  // d value / d x; when `active` is non-null the backward is restricted to
  // those query rows (the sampler's economy mode).
  virtual Tensor gradient(const Tensor& x,
                          const std::vector<int>* active) const = 0;
};

// Dense forwards of a denoiser at a fixed step, entropy summed over a fixed
// readout row set (the masked rows of the probed state).
class DenoiserSurface final : public EntropySurface {
 public:
  DenoiserSurface(const Denoiser& model, std::vector<int> readout, int t);
  int rows() const override;
  int cols() const override;
  double value(const Tensor& x) const override;
  Tensor gradient(const Tensor& x,
                  const std::vector<int>* active) const override;

 private:
  const Denoiser* model_;
  std::vector<int> readout_;
  int t_;
};

// -<gradient row i, delta>: the surface-level influence score.
double surface_tis(const EntropySurface& surface, const Tensor& x0, int i,
                   const std::vector<float>& delta,
                   const std::vector<int>* active = nullptr);

// Exact entropy drop from applying the full write delta at row i:
// value(x0) - value(x0 with row i shifted by delta).
double exact_delta_h(const EntropySurface& surface, const Tensor& x0, int i,
                     const std::vector<float>& delta);

// Max |second central difference| / h^2 of alpha -> value(x0 + alpha*delta
// at row i) over a uniform grid on [0,1]. Returns the raw grid maximum; any
// safety factor is applied where probe reports are assembled.
double curvature_estimate(const EntropySurface& surface, const Tensor& x0,
                          int i, const std::vector<float>& delta,
                          int grid_points = 11);

struct ProbeRecord {
  int probe_id = 0;
  int state_id = 0;
  int t = 0;         // step at which the decode was paused
  int position = 0;  // candidate i
  double delta_exact = 0.0;
  double tis = 0.0;
  double m_raw = 0.0;    // grid maximum
  double m_bound = 0.0;  // safety-inflated bound used by the checks
  double err = 0.0;      // |delta_exact - tis|, set by theorem_check
  bool bound_ok = false;
  bool curvature_flagged = false;  // grid refinement moved m_raw > 20%
};

struct TheoremSummary {
  int total = 0;
  int passed = 0;
  double pass_rate = 0.0;
  double max_err = 0.0;
};
// Sets err and bound_ok on each record: |delta_exact - tis| <= m_bound/2 + tol.
TheoremSummary theorem_check(std::vector<ProbeRecord>& probes, double tol);

struct OrderingSummary {
  int pairs = 0;       // same-state candidate pairs examined
  int qualified = 0;   // pairs whose influence margin exceeds the curvature
  int violations = 0;  // qualified pairs where the exact order disagrees
};
// For same-state pairs with tis_i - tis_j > max(m_bound_i, m_bound_j), the
// exact entropy drops must satisfy delta_exact_i > delta_exact_j.
OrderingSummary ordering_check(const std::vector<ProbeRecord>& probes);

// Expected next-step masked entropy over enumerated hard writes at i:
// sum_v pi_i(v) * H(readout = masked \ {i} after writing v). Enumeration
// only; vocabularies above 32 tokens are refused.
double discrete_expectation(const Denoiser& model,
                            const std::vector<std::vector<double>>& dists,
                            const MaskedSequence& state, int t, int i);

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct AqaFidelity {
  std::vector<int> candidates;
  std::vector<double> cosine;  // similarity of restricted vs dense gradient
  std::vector<char> defined;   // 0 when either gradient has zero norm
  std::vector<double> tis_sparse, tis_dense;
  bool top1_agree = false;  // same argmax-influence candidate
};
// Runs the influence pass twice (restricted and dense backward) and
// compares gradients per candidate.
AqaFidelity aqa_fidelity(const Denoiser& model,
                         const std::vector<std::vector<double>>& dists,
                         const MaskedSequence& state, int t,
                         const std::vector<int>& candidates);

struct NfeAudit {
  bool ok = true;
  std::string message;
};
// Recomputes the expected counters from the trace shape (greedy: one
// forward per step; steered: two forwards + one backward per step) and
// checks every step's cumulative counters and the step count itself.
NfeAudit nfe_audit(const DecodeTrace& trace, int expected_steps);

// A paused decode state for probing, with the current forward attached.
struct ProbeState {
  int state_id = 0;
  int t = 0;
  MaskedSequence state;
  std::vector<std::vector<double>> dists;
};

// Runs sample-write greedy decodes from the plan and pauses each run at a
// uniformly drawn executed step, so probes come from the state distribution
// decoding actually visits. States with nothing masked are skipped.
std::vector<ProbeState> collect_probe_states(const Denoiser& model,
                                             const NoiseSchedule& schedule,
                                             const DecodePlan& plan,
                                             int count, Rng& rng);

struct ProbeOptions {
  int grid = 11;
  int refined_grid = 21;
  double safety = 1.5;
  double flag_threshold = 0.2;
  int candidates_per_state = 2;
};

// Assembles theorem probes for one paused state: dense influence scores
// (one backward for all chosen candidates), exact entropy drops, and
// curvature bounds. Candidate positions are drawn uniformly from the masked
// set without replacement.
std::vector<ProbeRecord> probe_state(const Denoiser& model,
                                     const ProbeState& ps,
                                     const ProbeOptions& opt, Rng& rng);

}  // namespace estr
