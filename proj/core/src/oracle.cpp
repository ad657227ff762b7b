#include "estr/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "estr/error.hpp"
#include "estr/tape.hpp"

namespace estr {
namespace {

// Host-side double version of the tape's masked-entropy readout:
// sum over rows of -sum_v p * ln(p + 1e-30).
double readout_entropy(const Tensor& probs, const std::vector<int>& rows) {
  double total = 0.0;
  for (int r : rows) {
    if (r < 0 || r >= probs.rows)
      throw ContractError("entropy readout row out of range");
    for (int v = 0; v < probs.cols; ++v) {
      const double p =
          probs.data[static_cast<std::size_t>(r) * probs.cols + v];
      total -= p * std::log(p + 1e-30);
    }
  }
  return total;
}

Tensor shifted(const Tensor& x0, int i, const std::vector<float>& delta,
               float alpha) {
  if (i < 0 || i >= x0.rows)
    throw ContractError("oracle: probe row out of range");
  if (static_cast<int>(delta.size()) != x0.cols)
    throw ShapeError("oracle: delta width does not match the embedding");
  Tensor x = x0;
  for (int k = 0; k < x0.cols; ++k)
    x.data[static_cast<std::size_t>(i) * x0.cols + k] += alpha * delta[k];
  return x;
}

int argmax_index(const std::vector<double>& v) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(v.size()); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

}  // namespace

DenoiserSurface::DenoiserSurface(const Denoiser& model,
                                 std::vector<int> readout, int t)
    : model_(&model), readout_(std::move(readout)), t_(t) {
  if (readout_.empty())
    throw ContractError("surface: empty readout row set");
  if (!std::is_sorted(readout_.begin(), readout_.end()))
    throw ContractError("surface: readout rows must be sorted");
}

int DenoiserSurface::rows() const { return model_->config().length; }
int DenoiserSurface::cols() const { return model_->config().d_model; }

double DenoiserSurface::value(const Tensor& x) const {
  Tape tape;
  const auto bound = model_->bind(tape, /*requires_grad=*/false);
  const Tape::Id x0 = tape.input(x, /*requires_grad=*/false);
  const auto graph = model_->forward_embeddings(tape, bound, x0, t_);
  return readout_entropy(tape.value(graph.probs), readout_);
}

Tensor DenoiserSurface::gradient(const Tensor& x,
                                 const std::vector<int>* active) const {
  Tape tape;
  const auto bound = model_->bind(tape, /*requires_grad=*/false);
  const Tape::Id x0 = tape.input(x, /*requires_grad=*/true);
  RowMask mask = active ? RowMask(*active) : RowMask{};
  const auto graph =
      model_->forward_embeddings(tape, bound, x0, t_, active ? &mask : nullptr);
  const Tape::Id readout = entropy_readout(tape, graph.probs, readout_);
  auto grads = tape.backward(readout);
  const auto it = grads.find(x0);
  if (it == grads.end()) return Tensor(x.rows, x.cols);
  return it->second;
}

double surface_tis(const EntropySurface& surface, const Tensor& x0, int i,
                   const std::vector<float>& delta,
                   const std::vector<int>* active) {
  if (i < 0 || i >= x0.rows)
    throw ContractError("surface_tis: row out of range");
  const Tensor g = surface.gradient(x0, active);
  double dot = 0.0;
  for (int k = 0; k < x0.cols; ++k)
    dot += static_cast<double>(
               g.data[static_cast<std::size_t>(i) * x0.cols + k]) *
           static_cast<double>(delta[k]);
  return -dot;
}

double exact_delta_h(const EntropySurface& surface, const Tensor& x0, int i,
                     const std::vector<float>& delta) {
  return surface.value(x0) - surface.value(shifted(x0, i, delta, 1.0f));
}

double curvature_estimate(const EntropySurface& surface, const Tensor& x0,
                          int i, const std::vector<float>& delta,
                          int grid_points) {
  if (grid_points < 3)
    throw ContractError("curvature_estimate: need at least 3 grid points");
  const double h = 1.0 / static_cast<double>(grid_points - 1);
  std::vector<double> f(grid_points);
  for (int k = 0; k < grid_points; ++k)
    f[k] = surface.value(
        shifted(x0, i, delta, static_cast<float>(k * h)));

  double m_hat = 0.0;
  for (int k = 1; k + 1 < grid_points; ++k) {
    const double second = (f[k + 1] - 2.0 * f[k] + f[k - 1]) / (h * h);
    if (!std::isfinite(second))
      throw NumericError("curvature_estimate: non-finite difference");
    m_hat = std::max(m_hat, std::abs(second));
  }
  return m_hat;
}

TheoremSummary theorem_check(std::vector<ProbeRecord>& probes, double tol) {
  TheoremSummary summary;
  summary.total = static_cast<int>(probes.size());
  for (ProbeRecord& p : probes) {
    p.err = std::abs(p.delta_exact - p.tis);
    p.bound_ok = p.err <= p.m_bound / 2.0 + tol;
    summary.passed += p.bound_ok;
    summary.max_err = std::max(summary.max_err, p.err);
  }
  summary.pass_rate =
      summary.total == 0
          ? 1.0
          : static_cast<double>(summary.passed) / summary.total;
  return summary;
}

OrderingSummary ordering_check(const std::vector<ProbeRecord>& probes) {
  std::map<int, std::vector<const ProbeRecord*>> by_state;
  for (const ProbeRecord& p : probes) by_state[p.state_id].push_back(&p);

  OrderingSummary summary;
  for (const auto& [state_id, group] : by_state) {
    (void)state_id;
    for (std::size_t a = 0; a < group.size(); ++a) {
      for (std::size_t b = a + 1; b < group.size(); ++b) {
        const ProbeRecord* hi = group[a];
        const ProbeRecord* lo = group[b];
        if (hi->position == lo->position) continue;  // i = j is vacuous
        ++summary.pairs;
        if (hi->tis < lo->tis) std::swap(hi, lo);
        const double margin = hi->tis - lo->tis;
        if (margin > std::max(hi->m_bound, lo->m_bound)) {
          ++summary.qualified;
          if (!(hi->delta_exact > lo->delta_exact)) ++summary.violations;
        }
      }
    }
  }
  return summary;
}

double discrete_expectation(const Denoiser& model,
                            const std::vector<std::vector<double>>& dists,
                            const MaskedSequence& state, int t, int i) {
  const int vocab = model.config().vocab;
  if (vocab > 32)
    throw ContractError(
        "discrete_expectation: vocabulary too large to enumerate");
  if (!state.is_masked(i))
    throw ContractError("discrete_expectation: position not masked");

  std::vector<int> readout;
  for (int p : state.masked)
    if (p != i) readout.push_back(p);

  double acc = 0.0;
  for (int v = 0; v < vocab; ++v) {
    MaskedSequence y = state;
    y.tokens[i] = v;
    y.masked = readout;
    const auto dd = model.predict(y, t - 1);
    double h = 0.0;
    for (int p : readout) h += entropy(dd[p]);
    acc += dists[i][v] * h;
  }
  return acc;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw ContractError("spearman: need two equal-length series");
  const int n = static_cast<int>(a.size());

  auto ranks = [n](const std::vector<double>& v) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int x, int y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    int k = 0;
    while (k < n) {
      int j = k;
      while (j + 1 < n && v[order[j + 1]] == v[order[k]]) ++j;
      const double avg = 0.5 * (k + j) + 1.0;  // average rank for ties
      for (int m = k; m <= j; ++m) r[order[m]] = avg;
      k = j + 1;
    }
    return r;
  };

  const std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = 0.0, mb = 0.0;
  for (int k = 0; k < n; ++k) {
    ma += ra[k];
    mb += rb[k];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (int k = 0; k < n; ++k) {
    cov += (ra[k] - ma) * (rb[k] - mb);
    va += (ra[k] - ma) * (ra[k] - ma);
    vb += (rb[k] - mb) * (rb[k] - mb);
  }
  if (va == 0.0 || vb == 0.0)
    throw ContractError("spearman: a series is constant");
  return cov / std::sqrt(va * vb);
}

AqaFidelity aqa_fidelity(const Denoiser& model,
                         const std::vector<std::vector<double>>& dists,
                         const MaskedSequence& state, int t,
                         const std::vector<int>& candidates) {
  long long f = 0, b = 0;  // oracle instrumentation; discarded
  const InfluenceResult sparse =
      tis_all(model, dists, state, t, candidates, /*active_queries=*/true, f,
              b);
  const InfluenceResult dense =
      tis_all(model, dists, state, t, candidates, /*active_queries=*/false, f,
              b);

  AqaFidelity out;
  out.candidates = candidates;
  out.tis_sparse = sparse.tis;
  out.tis_dense = dense.tis;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    double dot = 0.0, ns = 0.0, nd = 0.0;
    for (std::size_t j = 0; j < sparse.g[k].size(); ++j) {
      dot += static_cast<double>(sparse.g[k][j]) *
             static_cast<double>(dense.g[k][j]);
      ns += static_cast<double>(sparse.g[k][j]) *
            static_cast<double>(sparse.g[k][j]);
      nd += static_cast<double>(dense.g[k][j]) *
            static_cast<double>(dense.g[k][j]);
    }
    if (ns == 0.0 || nd == 0.0) {
      out.cosine.push_back(0.0);
      out.defined.push_back(0);
    } else {
      out.cosine.push_back(dot / (std::sqrt(ns) * std::sqrt(nd)));
      out.defined.push_back(1);
    }
  }
  out.top1_agree =
      argmax_index(sparse.tis) == argmax_index(dense.tis);
  return out;
}

NfeAudit nfe_audit(const DecodeTrace& trace, int expected_steps) {
  NfeAudit audit;
  if (static_cast<int>(trace.steps.size()) != expected_steps) {
    audit.ok = false;
    audit.message = "trace has " + std::to_string(trace.steps.size()) +
                    " steps, expected " + std::to_string(expected_steps);
    return audit;
  }
  const bool steered = trace.sampler == "steered";
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    const auto& step = trace.steps[s];
    const long long want_f =
        steered ? 2 * static_cast<long long>(s + 1) : static_cast<long long>(s + 1);
    const long long want_b = steered ? static_cast<long long>(s + 1) : 0;
    if (step.nfe_forward != want_f || step.nfe_backward != want_b) {
      audit.ok = false;
      audit.message = "step " + std::to_string(s) + " (t=" +
                      std::to_string(step.t) + "): counters (" +
                      std::to_string(step.nfe_forward) + " fwd, " +
                      std::to_string(step.nfe_backward) + " bwd) != (" +
                      std::to_string(want_f) + ", " + std::to_string(want_b) +
                      ")";
      return audit;
    }
  }
  audit.message = "counters match the " +
                  std::string(steered ? "steered" : "greedy") + " shape";
  return audit;
}

std::vector<ProbeState> collect_probe_states(const Denoiser& model,
                                             const NoiseSchedule& schedule,
                                             const DecodePlan& plan,
                                             int count, Rng& rng) {
  if (count < 1)
    throw ContractError("collect_probe_states: count must be >= 1");
  if (plan.t_start < 1 || plan.t_start > schedule.steps)
    throw ContractError("collect_probe_states: start step outside schedule");
  if (static_cast<int>(plan.budgets.size()) != schedule.steps)
    throw ContractError("collect_probe_states: budgets do not fit schedule");

  // Last executed step: walk the budget prefix the same way the decoders do.
  const long long need = static_cast<long long>(plan.start.masked.size());
  long long cum = 0;
  int t_end = plan.t_start;
  for (int t = plan.t_start; t >= 1 && cum < need; --t) {
    cum += plan.budgets[t - 1];
    t_end = t;
  }
  if (cum != need)
    throw ContractError("collect_probe_states: budget prefix mismatch");

  std::vector<ProbeState> out;
  out.reserve(count);
  for (int n = 0; n < count; ++n) {
    const int pause = rng.next_int(t_end, plan.t_start);

    // Sample-write greedy decode down to (but not including) the pause step.
    MaskedSequence x = plan.start;
    for (int t = plan.t_start; t > pause && !x.masked.empty(); --t) {
      const auto dists = model.predict(x, t);
      std::vector<std::vector<double>> rows;
      rows.reserve(x.masked.size());
      for (int i : x.masked) rows.push_back(dists[i]);
      const LocalScores scores = local_scores(rows);

      std::vector<int> order(x.masked.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores.confidence[a] != scores.confidence[b])
          return scores.confidence[a] > scores.confidence[b];
        return x.masked[a] < x.masked[b];
      });
      const int take = std::min<int>(plan.budgets[t - 1],
                                     static_cast<int>(x.masked.size()));
      std::vector<int> reveal;
      for (int k = 0; k < take; ++k) reveal.push_back(x.masked[order[k]]);
      for (int i : reveal) {
        x.tokens[i] = rng.next_categorical(dists[i]);
      }
      x.masked.erase(std::remove_if(x.masked.begin(), x.masked.end(),
                                    [&](int i) {
                                      return std::find(reveal.begin(),
                                                       reveal.end(), i) !=
                                             reveal.end();
                                    }),
                     x.masked.end());
    }
    if (x.masked.empty()) continue;  // nothing left to probe

    ProbeState ps;
    ps.state_id = n;
    ps.t = pause;
    ps.dists = model.predict(x, pause);
    ps.state = std::move(x);
    out.push_back(std::move(ps));
  }
  if (out.empty())
    throw ContractError("collect_probe_states: every pause was terminal");
  return out;
}

std::vector<ProbeRecord> probe_state(const Denoiser& model,
                                     const ProbeState& ps,
                                     const ProbeOptions& opt, Rng& rng) {
  if (ps.state.masked.empty())
    throw ContractError("probe_state: nothing masked");
  const int want = std::min<int>(opt.candidates_per_state,
                                 static_cast<int>(ps.state.masked.size()));

  // Uniform candidates without replacement.
  std::vector<int> pool = ps.state.masked;
  for (int k = 0; k < want; ++k) {
    const int j = k + rng.next_int(0, static_cast<int>(pool.size()) - 1 - k);
    std::swap(pool[k], pool[j]);
  }
  std::vector<int> chosen(pool.begin(), pool.begin() + want);
  std::sort(chosen.begin(), chosen.end());

  long long f = 0, b = 0;  // oracle instrumentation; discarded
  const InfluenceResult inf = tis_all(model, ps.dists, ps.state, ps.t, chosen,
                                      /*active_queries=*/false, f, b);

  const DenoiserSurface surface(model, ps.state.masked, ps.t - 1);
  const Tensor x0 = model.state_embeddings(ps.state);

  std::vector<ProbeRecord> records;
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    ProbeRecord rec;
    rec.state_id = ps.state_id;
    rec.t = ps.t;
    rec.position = chosen[k];
    rec.tis = inf.tis[k];
    rec.delta_exact = exact_delta_h(surface, x0, chosen[k], inf.delta[k]);
    rec.m_raw =
        curvature_estimate(surface, x0, chosen[k], inf.delta[k], opt.grid);
    const double refined = curvature_estimate(surface, x0, chosen[k],
                                              inf.delta[k], opt.refined_grid);
    rec.curvature_flagged =
        std::abs(refined - rec.m_raw) >
        opt.flag_threshold * std::max(rec.m_raw, 1e-12);
    rec.m_bound = opt.safety * rec.m_raw;
    records.push_back(rec);
  }
  return records;
}

}  // namespace estr
