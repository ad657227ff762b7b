// Trace files: schema, determinism, exact float round-trips, and parse
// failures with line context.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdio>
#include <sstream>
#include <string>

#include "estr/denoiser.hpp"
#include "estr/error.hpp"
#include "estr/oracle.hpp"
#include "estr/sampler.hpp"
#include "estr/trace.hpp"

using namespace estr;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

DecodeTrace synthetic_trace() {
  DecodeTrace trace;
  trace.sampler = "steered";
  for (int s = 0; s < 2; ++s) {
    StepRecord step;
    step.t = 2 - s;
    CandidateScore c;
    c.position = 3 + s;
    c.entropy = 0.1 + 0.2;  // deliberately not exactly representable
    c.gate = 1.0 / 3.0;
    c.tis = -0.037;
    c.penalty = 0.25;
    c.score = c.gate * c.tis - c.penalty;
    step.candidates.push_back(c);
    step.selected = {3 + s};
    step.written = {{3 + s, s}};
    step.nfe_forward = 2 * (s + 1);
    step.nfe_backward = s + 1;
    step.budget_shortfall = 1;  // diagnostics: not part of the file schema
    step.g_norm_max = 9.0;
    trace.steps.push_back(step);
  }
  return trace;
}

}  // namespace

TEST_CASE("every line carries exactly the documented fields") {
  const std::string text = trace_to_jsonl(synthetic_trace());
  std::istringstream in(text);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    const auto j = nlohmann::json::parse(line);
    REQUIRE(j.is_object());
    CHECK(j.size() == 6);
    for (const char* key :
         {"t", "candidates", "selected", "written", "nfe_forward",
          "nfe_backward"})
      CHECK(j.contains(key));
    for (const auto& c : j.at("candidates")) {
      CHECK(c.size() == 6);
      for (const char* key : {"i", "H", "c", "tis", "penalty", "score"})
        CHECK(c.contains(key));
    }
    for (const auto& w : j.at("written")) {
      CHECK(w.is_array());
      CHECK(w.size() == 2);
    }
  }
  CHECK(lines == 2);
}

TEST_CASE("round trip preserves all serialized fields exactly") {
  const DecodeTrace trace = synthetic_trace();
  TempFile tmp("estr_trace_roundtrip.jsonl");
  write_trace(trace, tmp.path);
  const DecodeTrace back = read_trace(tmp.path, "steered");

  CHECK(back.sampler == "steered");
  REQUIRE(back.steps.size() == trace.steps.size());
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    const auto& a = trace.steps[s];
    const auto& b = back.steps[s];
    CHECK(a.t == b.t);
    CHECK(a.selected == b.selected);
    CHECK(a.written == b.written);
    CHECK(a.nfe_forward == b.nfe_forward);
    CHECK(a.nfe_backward == b.nfe_backward);
    REQUIRE(a.candidates.size() == b.candidates.size());
    for (std::size_t k = 0; k < a.candidates.size(); ++k) {
      CHECK(a.candidates[k].position == b.candidates[k].position);
      // doubles survive bit-exactly (shortest round-trip serialization)
      CHECK(a.candidates[k].entropy == b.candidates[k].entropy);
      CHECK(a.candidates[k].gate == b.candidates[k].gate);
      CHECK(a.candidates[k].tis == b.candidates[k].tis);
      CHECK(a.candidates[k].penalty == b.candidates[k].penalty);
      CHECK(a.candidates[k].score == b.candidates[k].score);
    }
    // diagnostics are not serialized and come back as defaults
    CHECK(b.budget_shortfall == 0);
    CHECK(b.g_norm_max == 0.0);
  }
}

TEST_CASE("a real steered decode serializes deterministically and audits") {
  DenoiserConfig cfg;
  cfg.vocab = 6;
  cfg.length = 8;
  cfg.d_model = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.hidden = 16;
  const Denoiser model = Denoiser::init(cfg, 71);
  const auto schedule = NoiseSchedule::linear(8);
  const DecodePlan plan =
      full_decode_plan(8, 6, schedule, constant_budgets(8, 1));

  Rng rng_a(5), rng_b(5);
  const auto a = steered_decode(model, schedule, plan, SteerConfig{}, rng_a);
  const auto b = steered_decode(model, schedule, plan, SteerConfig{}, rng_b);
  CHECK(trace_to_jsonl(a.trace) == trace_to_jsonl(b.trace));

  TempFile tmp("estr_trace_decode.jsonl");
  write_trace(a.trace, tmp.path);
  DecodeTrace back = read_trace(tmp.path, a.trace.sampler);
  CHECK(nfe_audit(back, 8).ok);
  CHECK(trace_to_jsonl(back) == trace_to_jsonl(a.trace));
}

TEST_CASE("parse failures name the line") {
  CHECK_THROWS_WITH_AS(parse_trace("not json\n"),
                       doctest::Contains("trace line 1"), ParseError);

  const std::string good = trace_to_jsonl(synthetic_trace());
  CHECK_THROWS_WITH_AS(parse_trace(good + "{\"t\": 1}\n"),
                       doctest::Contains("trace line 3"), ParseError);
  CHECK_THROWS_WITH_AS(parse_trace(good + "{\"t\": 1}\n"),
                       doctest::Contains("missing field"), ParseError);

  // wrong shape inside 'written'
  CHECK_THROWS_AS(
      parse_trace("{\"t\":1,\"candidates\":[],\"selected\":[],"
                  "\"written\":[[1,2,3]],\"nfe_forward\":1,"
                  "\"nfe_backward\":0}\n"),
      ParseError);

  // blank lines are fine
  const auto t = parse_trace("\n" + good + "\n", "steered");
  CHECK(t.steps.size() == 2);

  CHECK_THROWS_AS(read_trace("/tmp/estr_no_such_trace.jsonl"), IoError);
}
