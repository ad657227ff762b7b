// Verification machinery, checked against closed-form surfaces: exact
// entropy differences, curvature grids, error-bound and ordering checks,
// the enumerated hard-write expectation, rank correlation, restricted-
// backward fidelity, counter audits, and probe-state collection.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "estr/denoiser.hpp"
#include "estr/diffusion.hpp"
#include "estr/error.hpp"
#include "estr/oracle.hpp"
#include "estr/rng.hpp"
#include "estr/sampler.hpp"
#include "stub_surface.hpp"
#include "test_util.hpp"

using namespace estr;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.vocab = 6;
  c.length = 8;
  c.d_model = 16;
  c.layers = 2;
  c.heads = 2;
  c.hidden = 16;
  return c;
}

MaskedSequence all_masked(int length, int vocab) {
  MaskedSequence x;
  x.tokens.assign(length, vocab);
  x.masked.resize(length);
  for (int i = 0; i < length; ++i) x.masked[i] = i;
  return x;
}

// Dyadic-rational tensor: every entry is a small multiple of 1/8, so float
// adds and double products along the probe path are exact and the affine
// agreement below can be asserted to zero.
Tensor dyadic_tensor(Rng& rng, int rows, int cols) {
  Tensor t(rows, cols);
  for (auto& v : t.data) v = 0.125f * static_cast<float>(rng.next_int(-8, 8));
  return t;
}

std::vector<float> dyadic_delta(Rng& rng, int cols) {
  std::vector<float> d(cols);
  for (auto& v : d) v = 0.125f * static_cast<float>(rng.next_int(-4, 4));
  return d;
}

}  // namespace

TEST_CASE("affine surface: influence score equals the exact difference") {
  Rng rng(301);
  const int rows = 4, cols = 5;
  const auto surface = testing::affine_surface(dyadic_tensor(rng, rows, cols),
                                               /*offset=*/0.25);
  const Tensor x0 = dyadic_tensor(rng, rows, cols);

  for (int i = 0; i < rows; ++i) {
    const auto delta = dyadic_delta(rng, cols);
    const double tis = surface_tis(surface, x0, i, delta);
    const double exact = exact_delta_h(surface, x0, i, delta);
    CHECK(tis == exact);  // dyadic inputs: both sides are exact
    CHECK(curvature_estimate(surface, x0, i, delta) < 1e-4);
  }
}

TEST_CASE("affine surface: restricted gradient is a row filter") {
  Rng rng(302);
  const Tensor A = dyadic_tensor(rng, 4, 3);
  const auto surface = testing::affine_surface(A);
  const Tensor x0 = dyadic_tensor(rng, 4, 3);
  const std::vector<int> active = {1, 3};

  const Tensor g = surface.gradient(x0, &active);
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 3; ++k) {
      const float got = g.data[static_cast<std::size_t>(r) * 3 + k];
      const bool is_active = r == 1 || r == 3;
      CHECK(got == (is_active ? A.data[static_cast<std::size_t>(r) * 3 + k]
                              : 0.0f));
    }
  // The influence score only reads the probed row, so restriction to a set
  // containing it changes nothing.
  const auto delta = dyadic_delta(rng, 3);
  CHECK(surface_tis(surface, x0, 1, delta, &active) ==
        surface_tis(surface, x0, 1, delta));
}

TEST_CASE("quadratic surface: curvature 2 and the bound is tight") {
  Rng rng(303);
  const int rows = 3, cols = 4;
  const Tensor b = dyadic_tensor(rng, rows, cols);
  const auto surface = testing::quadratic_surface(b);
  const Tensor x0 = dyadic_tensor(rng, rows, cols);

  std::vector<float> delta(cols, 0.0f);
  delta[0] = 1.0f;  // unit norm: slice second derivative is exactly 2

  const double m11 = curvature_estimate(surface, x0, 1, delta, 11);
  const double m21 = curvature_estimate(surface, x0, 1, delta, 21);
  CHECK(m11 == doctest::Approx(2.0).epsilon(1e-3));
  CHECK(m21 == doctest::Approx(2.0).epsilon(1e-3));

  // A parabola is the equality case: |exact - first_order| = m/2 * 1^2.
  const double err = std::abs(exact_delta_h(surface, x0, 1, delta) -
                              surface_tis(surface, x0, 1, delta));
  CHECK(err == doctest::Approx(m11 / 2.0).epsilon(1e-4));

  ProbeRecord rec;
  rec.delta_exact = exact_delta_h(surface, x0, 1, delta);
  rec.tis = surface_tis(surface, x0, 1, delta);
  rec.m_bound = m11;  // no safety margin: sits exactly on the bound
  std::vector<ProbeRecord> probes = {rec};
  const auto summary = theorem_check(probes, 1e-6);
  CHECK(summary.passed == 1);
}

TEST_CASE("curvature grid: aliased ripple is caught by refinement") {
  // f depends on row 1 only, through the coordinate delta will move:
  // f = a * x + 0.1 * sin(2 pi N x) with N = 5. The default 11-point grid
  // lands exactly on the ripple's zeros (alpha = k/10), so it reports the
  // surface as flat; the 21-point grid (alpha = k/20) does not.
  const int rows = 2, cols = 1;
  const double beta = 0.1, freq = 5.0;
  auto f = [beta, freq](const Tensor& x) {
    const double s = x.data[1];
    return 0.5 * s + beta * std::sin(2.0 * M_PI * freq * s);
  };
  auto df = [beta, freq, rows, cols](const Tensor& x) {
    Tensor g(rows, cols);
    g.data[1] = static_cast<float>(
        0.5 + beta * 2.0 * M_PI * freq *
                  std::cos(2.0 * M_PI * freq * x.data[1]));
    return g;
  };
  const testing::FunctionSurface surface(rows, cols, f, df);

  Tensor x0(rows, cols);  // zeros: probe path is alpha in [0, 1]
  const std::vector<float> delta = {1.0f};

  const double m11 = curvature_estimate(surface, x0, 1, delta, 11);
  const double m21 = curvature_estimate(surface, x0, 1, delta, 21);
  CHECK(m11 < 0.05);                 // aliased: looks affine
  CHECK(m21 > 10.0);                 // refinement exposes the ripple
  CHECK(std::abs(m21 - m11) > 0.2 * std::max(m11, 1e-12));  // flag fires

  // The aliased bound also fails the error check: the first-order score
  // sees the full ripple slope at alpha = 0 while the exact difference
  // crosses a whole number of periods.
  ProbeRecord rec;
  rec.tis = surface_tis(surface, x0, 1, delta);
  rec.delta_exact = exact_delta_h(surface, x0, 1, delta);
  rec.m_bound = 1.5 * m11;
  std::vector<ProbeRecord> probes = {rec};
  const auto summary = theorem_check(probes, 1e-9);
  CHECK(summary.passed == 0);
  CHECK(probes[0].err > 1.0);
}

TEST_CASE("curvature grid: validation and failure injection") {
  const testing::FunctionSurface nan_surface(
      2, 2,
      [](const Tensor& x) {
        return x.data[2] > 0.4f ? std::nan("") : 0.0;
      },
      [](const Tensor&) { return Tensor(2, 2); });
  Tensor x0(2, 2);
  const std::vector<float> delta = {1.0f, 0.0f};

  CHECK_THROWS_AS(curvature_estimate(nan_surface, x0, 1, delta, 2),
                  ContractError);
  CHECK_THROWS_AS(curvature_estimate(nan_surface, x0, 1, delta, 11),
                  NumericError);
  CHECK_THROWS_AS(curvature_estimate(nan_surface, x0, 7, delta, 11),
                  ContractError);  // row out of range
}

TEST_CASE("theorem_check: errors, bounds, and summary fields") {
  std::vector<ProbeRecord> probes(3);
  probes[0].delta_exact = 1.0;
  probes[0].tis = 0.9;
  probes[0].m_bound = 0.3;  // err 0.1 <= 0.15: pass
  probes[1].delta_exact = 1.0;
  probes[1].tis = 0.9;
  probes[1].m_bound = 0.1;  // err 0.1 > 0.05: fail
  probes[2].delta_exact = -2.0;
  probes[2].tis = -2.0;
  probes[2].m_bound = 0.0;  // err 0 <= tol: pass

  const auto summary = theorem_check(probes, 1e-9);
  CHECK(summary.total == 3);
  CHECK(summary.passed == 2);
  CHECK(summary.pass_rate == doctest::Approx(2.0 / 3.0));
  CHECK(summary.max_err == doctest::Approx(0.1));
  CHECK(probes[0].bound_ok);
  CHECK_FALSE(probes[1].bound_ok);
  CHECK(probes[2].bound_ok);
  CHECK(probes[1].err == doctest::Approx(0.1));
}

TEST_CASE("ordering_check: qualified pairs and violations") {
  auto probe = [](int state, int pos, double tis, double bound, double exact) {
    ProbeRecord p;
    p.state_id = state;
    p.position = pos;
    p.tis = tis;
    p.m_bound = bound;
    p.delta_exact = exact;
    return p;
  };

  SUBCASE("consistent pair qualifies cleanly") {
    std::vector<ProbeRecord> probes = {probe(0, 1, 2.0, 0.1, 1.5),
                                       probe(0, 2, 1.0, 0.2, 1.0)};
    const auto s = ordering_check(probes);
    CHECK(s.pairs == 1);
    CHECK(s.qualified == 1);
    CHECK(s.violations == 0);
  }
  SUBCASE("margin below curvature does not qualify") {
    std::vector<ProbeRecord> probes = {probe(0, 1, 2.0, 0.5, 1.5),
                                       probe(0, 2, 1.6, 3.0, 9.0)};
    const auto s = ordering_check(probes);
    CHECK(s.pairs == 1);
    CHECK(s.qualified == 0);
    CHECK(s.violations == 0);
  }
  SUBCASE("qualified pair with inverted exact order is a violation") {
    std::vector<ProbeRecord> probes = {probe(0, 1, 2.0, 0.1, 0.5),
                                       probe(0, 2, 1.0, 0.2, 1.0)};
    const auto s = ordering_check(probes);
    CHECK(s.qualified == 1);
    CHECK(s.violations == 1);
  }
  SUBCASE("pairs never cross states") {
    std::vector<ProbeRecord> probes = {probe(0, 1, 2.0, 0.0, 1.0),
                                       probe(1, 2, 1.0, 0.0, 2.0)};
    const auto s = ordering_check(probes);
    CHECK(s.pairs == 0);
  }
}

TEST_CASE("denoiser surface agrees with the sampler's influence pass") {
  const Denoiser model = Denoiser::init(tiny_config(), 401);
  MaskedSequence x = all_masked(8, 6);
  x.tokens[2] = 3;
  x.tokens[5] = 1;
  x.masked = {0, 1, 3, 4, 6, 7};
  const int t = 5;
  const auto dists = model.predict(x, t);
  const std::vector<int> candidates = {1, 4, 7};

  long long f = 0, b = 0;
  const auto inf =
      tis_all(model, dists, x, t, candidates, /*active_queries=*/false, f, b);

  const DenoiserSurface surface(model, x.masked, t - 1);
  const Tensor x0 = model.state_embeddings(x);

  // Same tape construction, so the dense gradient rows are bitwise equal
  // and the influence scores match as doubles.
  const Tensor g = surface.gradient(x0, nullptr);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const int i = candidates[k];
    for (int j = 0; j < x0.cols; ++j)
      CHECK(g.data[static_cast<std::size_t>(i) * x0.cols + j] ==
            inf.g[k][j]);
    CHECK(surface_tis(surface, x0, i, inf.delta[k]) == inf.tis[k]);
  }

  // value() at the surface's step equals the host-side entropy of the
  // model's own forward over the same readout rows.
  const auto next = model.predict(x, t - 1);
  double want = 0.0;
  for (int i : x.masked) want += entropy(next[i]);
  CHECK(surface.value(x0) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("discrete hard-write expectation") {
  const Denoiser model = Denoiser::init(tiny_config(), 402);
  const MaskedSequence x = all_masked(6, 6);
  const int t = 4, i = 2;
  auto dists = model.predict(x, t);

  SUBCASE("one-hot distribution reduces to a single hard write") {
    for (auto& v : dists[i]) v = 0.0;
    dists[i][3] = 1.0;

    MaskedSequence y = x;
    y.tokens[i] = 3;
    y.masked.erase(std::find(y.masked.begin(), y.masked.end(), i));
    const auto after = model.predict(y, t - 1);
    double want = 0.0;
    for (int p : y.masked) want += entropy(after[p]);

    CHECK(discrete_expectation(model, dists, x, t, i) ==
          doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("expectation is linear in the write distribution") {
    auto one_hot = dists;
    for (auto& v : one_hot[i]) v = 0.0;

    double mix = 0.0;
    std::vector<double> weights = {0.125, 0.0, 0.5, 0.25, 0.125, 0.0};
    for (int v = 0; v < 6; ++v) {
      if (weights[v] == 0.0) continue;
      one_hot[i].assign(6, 0.0);
      one_hot[i][v] = 1.0;
      mix += weights[v] * discrete_expectation(model, one_hot, x, t, i);
    }
    dists[i] = weights;
    CHECK(discrete_expectation(model, dists, x, t, i) ==
          doctest::Approx(mix).epsilon(1e-9));
  }
  SUBCASE("refuses unmasked positions and oversized vocabularies") {
    MaskedSequence y = x;
    y.tokens[0] = 1;
    y.masked.erase(y.masked.begin());
    CHECK_THROWS_AS(discrete_expectation(model, dists, y, t, 0),
                    ContractError);

    DenoiserConfig big = tiny_config();
    big.vocab = 33;
    const Denoiser wide = Denoiser::init(big, 1);
    const MaskedSequence z = all_masked(4, 33);
    const auto zd = wide.predict(z, 2);
    CHECK_THROWS_AS(discrete_expectation(wide, zd, z, 2, 0), ContractError);
  }
}

TEST_CASE("spearman rank correlation") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  // Classic no-tie example: one adjacent swap among three.
  CHECK(spearman({1, 2, 3}, {1, 3, 2}) == doctest::Approx(0.5));
  // Ties get average ranks; identical tie structure is still perfect.
  CHECK(spearman({1, 2, 2, 3}, {5, 7, 7, 9}) == doctest::Approx(1.0));
  // Monotone transforms do not change the value.
  CHECK(spearman({0.1, 0.4, 0.2, 0.9}, {1, 16, 4, 81}) ==
        spearman({0.1, 0.4, 0.2, 0.9}, {0.1, 0.4, 0.2, 0.9}));
  CHECK_THROWS_AS(spearman({1, 2}, {1}), ContractError);
  CHECK_THROWS_AS(spearman({1.0}, {1.0}), ContractError);
  CHECK_THROWS_AS(spearman({2, 2, 2}, {1, 2, 3}), ContractError);
}

TEST_CASE("restricted-backward fidelity on fully masked states is exact") {
  const Denoiser model = Denoiser::init(tiny_config(), 403);
  const MaskedSequence x = all_masked(8, 6);
  const int t = 6;
  const auto dists = model.predict(x, t);
  const std::vector<int> candidates = {0, 1, 2, 3, 4, 5, 6, 7};

  const auto fid = aqa_fidelity(model, dists, x, t, candidates);
  REQUIRE(fid.cosine.size() == candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    CHECK(fid.defined[k] == 1);
    CHECK(fid.cosine[k] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fid.tis_sparse[k] == fid.tis_dense[k]);
  }
  CHECK(fid.top1_agree);
}

TEST_CASE("restricted-backward fidelity: single layer is exact with context") {
  DenoiserConfig cfg = tiny_config();
  cfg.layers = 1;
  const Denoiser model = Denoiser::init(cfg, 404);
  MaskedSequence x = all_masked(8, 6);
  x.tokens[0] = 2;
  x.tokens[3] = 5;
  x.masked = {1, 2, 4, 5, 6, 7};
  const int t = 5;
  const auto dists = model.predict(x, t);

  // One attention layer: every readout row's query is a candidate, and
  // cross-row influence reaches the inputs only through (undetached) keys
  // and values, so the restricted gradients are bitwise dense.
  const auto fid = aqa_fidelity(model, dists, x, t, x.masked);
  for (std::size_t k = 0; k < x.masked.size(); ++k) {
    CHECK(fid.tis_sparse[k] == fid.tis_dense[k]);
    CHECK(fid.cosine[k] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("restricted-backward fidelity reports structure on partial states") {
  const Denoiser model = Denoiser::init(tiny_config(), 405);
  MaskedSequence x = all_masked(8, 6);
  x.tokens[0] = 2;
  x.tokens[3] = 5;
  x.masked = {1, 2, 4, 5, 6, 7};
  const int t = 5;
  const auto dists = model.predict(x, t);
  const std::vector<int> candidates = {2, 5, 7};

  const auto fid = aqa_fidelity(model, dists, x, t, candidates);
  REQUIRE(fid.cosine.size() == 3);
  REQUIRE(fid.tis_sparse.size() == 3);
  REQUIRE(fid.tis_dense.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(fid.defined[k] == 1);
    CHECK(std::isfinite(fid.cosine[k]));
    CHECK(fid.cosine[k] <= 1.0 + 1e-9);
    CHECK(fid.cosine[k] >= -1.0 - 1e-9);
    CHECK(std::isfinite(fid.tis_sparse[k]));
    CHECK(std::isfinite(fid.tis_dense[k]));
  }
}

TEST_CASE("counter audits recompute the per-sampler work shape") {
  const Denoiser model = Denoiser::init(tiny_config(), 406);
  const auto schedule = NoiseSchedule::linear(8);
  const DecodePlan plan =
      full_decode_plan(8, 6, schedule, constant_budgets(8, 1));

  SUBCASE("greedy and steered traces pass") {
    Rng rng(1);
    const auto greedy =
        greedy_decode(model, schedule, plan, LocalScore::kConfidence, rng);
    CHECK(nfe_audit(greedy.trace, 8).ok);

    Rng rng2(2);
    const auto steered = steered_decode(model, schedule, plan, SteerConfig{}, rng2);
    CHECK(nfe_audit(steered.trace, 8).ok);
  }
  SUBCASE("tampered counters and wrong step counts fail") {
    Rng rng(3);
    auto result =
        greedy_decode(model, schedule, plan, LocalScore::kConfidence, rng);
    CHECK_FALSE(nfe_audit(result.trace, 7).ok);

    result.trace.steps[3].nfe_forward += 1;
    const auto audit = nfe_audit(result.trace, 8);
    CHECK_FALSE(audit.ok);
    CHECK(audit.message.find("step 3") != std::string::npos);
  }
  SUBCASE("a steered trace relabeled greedy fails the audit") {
    Rng rng(4);
    auto result = steered_decode(model, schedule, plan, SteerConfig{}, rng);
    result.trace.sampler = "confidence";
    CHECK_FALSE(nfe_audit(result.trace, 8).ok);
  }
}

TEST_CASE("probe-state collection pauses real decodes") {
  const Denoiser model = Denoiser::init(tiny_config(), 407);
  const auto schedule = NoiseSchedule::linear(8);
  const DecodePlan plan =
      full_decode_plan(8, 6, schedule, constant_budgets(8, 1));

  Rng rng(11);
  const auto states = collect_probe_states(model, schedule, plan, 12, rng);
  REQUIRE_FALSE(states.empty());
  std::set<int> ids;
  for (const auto& ps : states) {
    CHECK(ps.t >= 1);
    CHECK(ps.t <= 8);
    CHECK_FALSE(ps.state.masked.empty());
    // Unit budgets from a fully masked start: pausing before step t leaves
    // exactly t positions masked.
    CHECK(static_cast<int>(ps.state.masked.size()) == ps.t);
    CHECK(static_cast<int>(ps.dists.size()) == 8);
    for (int i : ps.state.masked) CHECK(ps.state.tokens[i] == 6);
    ids.insert(ps.state_id);
  }
  CHECK(ids.size() == states.size());

  SUBCASE("same seed reproduces the same states") {
    Rng rng_a(12), rng_b(12);
    const auto a = collect_probe_states(model, schedule, plan, 6, rng_a);
    const auto b = collect_probe_states(model, schedule, plan, 6, rng_b);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].t == b[k].t);
      CHECK(a[k].state.tokens == b[k].state.tokens);
      CHECK(a[k].state.masked == b[k].state.masked);
    }
  }
  SUBCASE("rejects bad arguments") {
    Rng r(1);
    CHECK_THROWS_AS(collect_probe_states(model, schedule, plan, 0, r),
                    ContractError);
    DecodePlan bad = plan;
    bad.t_start = 9;
    CHECK_THROWS_AS(collect_probe_states(model, schedule, bad, 3, r),
                    ContractError);
  }
}

TEST_CASE("probe assembly: bounds, safety margin, and determinism") {
  const Denoiser model = Denoiser::init(tiny_config(), 408);
  const auto schedule = NoiseSchedule::linear(8);
  const DecodePlan plan =
      full_decode_plan(8, 6, schedule, constant_budgets(8, 1));

  Rng rng(21);
  const auto states = collect_probe_states(model, schedule, plan, 8, rng);
  const ProbeOptions opt;

  std::vector<ProbeRecord> probes;
  for (const auto& ps : states) {
    Rng prng(static_cast<std::uint64_t>(ps.state_id), "probe");
    const auto recs = probe_state(model, ps, opt, prng);
    CHECK(recs.size() ==
          std::min<std::size_t>(opt.candidates_per_state,
                                ps.state.masked.size()));
    for (const auto& r : recs) {
      CHECK(r.state_id == ps.state_id);
      CHECK(r.t == ps.t);
      CHECK(ps.state.is_masked(r.position));
      CHECK(std::isfinite(r.tis));
      CHECK(std::isfinite(r.delta_exact));
      CHECK(r.m_raw >= 0.0);
      CHECK(r.m_bound == doctest::Approx(1.5 * r.m_raw).epsilon(1e-12));
      probes.push_back(r);
    }
  }

  // A small random-weight model is smooth at these scales: the default grid
  // must capture its curvature and the half-curvature bound must hold.
  auto summary = theorem_check(probes, 1e-9);
  CHECK(summary.total >= 8);
  CHECK(summary.pass_rate >= 0.9);

  const auto ordering = ordering_check(probes);
  CHECK(ordering.violations == 0);

  SUBCASE("same probe rng gives identical records") {
    Rng a(77), b(77);
    const auto ra = probe_state(model, states[0], opt, a);
    const auto rb = probe_state(model, states[0], opt, b);
    REQUIRE(ra.size() == rb.size());
    for (std::size_t k = 0; k < ra.size(); ++k) {
      CHECK(ra[k].position == rb[k].position);
      CHECK(ra[k].tis == rb[k].tis);
      CHECK(ra[k].delta_exact == rb[k].delta_exact);
      CHECK(ra[k].m_raw == rb[k].m_raw);
    }
  }
}
