// Synthetic task generators: layout determinism, constraint structure,
// self-consistency scoring, and dataset round-trips.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "estr/rng.hpp"
#include "estr/tasks.hpp"

using namespace estr;

namespace {

TaskSpec copy_spec() {
  TaskSpec s;
  s.kind = TaskKind::kCopy;
  s.length = 8;
  s.vocab = 16;
  s.seed = 11;
  return s;
}

TaskSpec pivot_spec() {
  TaskSpec s;
  s.kind = TaskKind::kPivotBinding;
  s.length = 16;
  s.vocab = 16;
  s.dependents = 8;
  s.seed = 7;
  return s;
}

TaskSpec chain_spec() {
  TaskSpec s;
  s.kind = TaskKind::kModularChain;
  s.length = 10;
  s.vocab = 12;
  s.seed = 3;
  return s;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/" + name) {}
  ~TempFile() {
    std::remove(path.c_str());
    std::remove((path + ".manifest.json").c_str());
  }
};

}  // namespace

TEST_CASE("spec validation rejects malformed tasks") {
  TaskSpec odd = copy_spec();
  odd.length = 7;
  CHECK_THROWS_AS(odd.validate(), ContractError);

  TaskSpec crowded = pivot_spec();
  crowded.dependents = crowded.length;  // no room for the pivot itself
  CHECK_THROWS_AS(crowded.validate(), ContractError);

  TaskSpec tiny = chain_spec();
  tiny.vocab = 1;
  CHECK_THROWS_AS(tiny.validate(), ContractError);

  CHECK_NOTHROW(copy_spec().validate());
  CHECK_NOTHROW(pivot_spec().validate());
  CHECK_NOTHROW(chain_spec().validate());
}

TEST_CASE("copy sequences mirror their first half") {
  Dataset data = generate(copy_spec(), 64);
  REQUIRE(data.examples.size() == 64);
  for (const auto& ex : data.examples) {
    REQUIRE(static_cast<int>(ex.tokens.size()) == 8);
    for (int i = 0; i < 4; ++i) {
      CHECK(ex.tokens[4 + i] == ex.tokens[i]);
      CHECK(ex.tokens[i] >= 0);
      CHECK(ex.tokens[i] < 16);
    }
    CHECK(ex.pivot_index == -1);
  }
}

TEST_CASE("pivot layout partitions the sequence and is seed-determined") {
  const TaskSpec spec = pivot_spec();
  const PivotLayout a = pivot_layout(spec);
  const PivotLayout b = pivot_layout(spec);

  CHECK(a.pivot_index == b.pivot_index);
  CHECK(a.dependent_positions == b.dependent_positions);
  CHECK(a.noise == b.noise);
  CHECK(a.tables == b.tables);

  // Pivot, dependents, and noise tile 0..L-1 exactly once.
  std::set<int> seen;
  seen.insert(a.pivot_index);
  seen.insert(a.dependent_positions.begin(), a.dependent_positions.end());
  seen.insert(a.noise.begin(), a.noise.end());
  CHECK(static_cast<int>(seen.size()) == spec.length);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == spec.length - 1);
  CHECK(static_cast<int>(a.dependent_positions.size()) == spec.dependents);
  CHECK(static_cast<int>(a.noise.size()) ==
        spec.length - 1 - spec.dependents);

  TaskSpec other = spec;
  other.seed = 8;
  const PivotLayout c = pivot_layout(other);
  CHECK((c.pivot_index != a.pivot_index || c.tables != a.tables));
}

TEST_CASE("dependent tables are vocabulary permutations") {
  // A permutation table means: a visible pivot pins every dependent exactly
  // (conditional entropy 0), while a hidden uniform pivot leaves each
  // dependent uniform over the vocabulary (entropy ln|V|).
  const TaskSpec spec = pivot_spec();
  const PivotLayout layout = pivot_layout(spec);
  REQUIRE(static_cast<int>(layout.tables.size()) == spec.dependents);
  for (const auto& table : layout.tables) {
    std::vector<int> sorted = table;
    std::sort(sorted.begin(), sorted.end());
    for (int v = 0; v < spec.vocab; ++v) CHECK(sorted[v] == v);
  }
  // Not all tables should be the identity map (vanishingly unlikely).
  bool any_shuffled = false;
  for (const auto& table : layout.tables)
    for (int v = 0; v < spec.vocab; ++v) any_shuffled |= table[v] != v;
  CHECK(any_shuffled);
}

TEST_CASE("pivot examples are recomputable from the pivot value") {
  const TaskSpec spec = pivot_spec();
  const PivotLayout layout = pivot_layout(spec);
  Dataset data = generate(spec, 128);
  for (const auto& ex : data.examples) {
    CHECK(ex.pivot_index == layout.pivot_index);
    const int pivot = ex.tokens[layout.pivot_index];
    for (int j = 0; j < spec.dependents; ++j)
      CHECK(ex.tokens[layout.dependent_positions[j]] ==
            layout.derived(j, pivot));
  }
}

TEST_CASE("modular chain steps by a fixed increment") {
  const TaskSpec spec = chain_spec();
  const int c = chain_increment(spec);
  CHECK(c >= 1);
  CHECK(c < spec.vocab);
  Dataset data = generate(spec, 32);
  for (const auto& ex : data.examples)
    for (int i = 1; i < spec.length; ++i)
      CHECK(ex.tokens[i] == (ex.tokens[i - 1] + c) % spec.vocab);
}

TEST_CASE("same seed reproduces the dataset, different seed does not") {
  Dataset a = generate(pivot_spec(), 16);
  Dataset b = generate(pivot_spec(), 16);
  REQUIRE(a.examples.size() == b.examples.size());
  for (std::size_t i = 0; i < a.examples.size(); ++i)
    CHECK(a.examples[i].tokens == b.examples[i].tokens);

  TaskSpec other = pivot_spec();
  other.seed = 1234;
  Dataset c = generate(other, 16);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.examples.size(); ++i)
    any_diff |= a.examples[i].tokens != c.examples[i].tokens;
  CHECK(any_diff);
}

TEST_CASE("ground truth scores perfectly on every task") {
  for (const TaskSpec& spec : {copy_spec(), pivot_spec(), chain_spec()}) {
    Dataset data = generate(spec, 32);
    std::vector<std::vector<int>> seqs;
    for (const auto& ex : data.examples) seqs.push_back(ex.tokens);
    const EvalResult r = evaluate(seqs, spec);
    CHECK(r.exact_match == doctest::Approx(1.0));
    CHECK(r.constraint_satisfaction == doctest::Approx(1.0));
  }
}

TEST_CASE("uniform random sequences satisfy ~1/|V| of constraints") {
  const TaskSpec spec = pivot_spec();
  Rng rng(99, "noise");
  std::vector<std::vector<int>> seqs;
  for (int e = 0; e < 2000; ++e) {
    std::vector<int> seq(spec.length);
    for (int& t : seq) t = rng.next_int(0, spec.vocab - 1);
    seqs.push_back(std::move(seq));
  }
  const EvalResult r = evaluate(seqs, spec);
  // Each of the 8 dependents matches an independent uniform draw w.p. 1/16;
  // 16000 Bernoulli trials put the sample mean within ~0.006 of 1/16 at 3
  // standard deviations.
  CHECK(r.constraint_satisfaction == doctest::Approx(1.0 / 16).epsilon(0.12));
  CHECK(r.exact_match < 0.01);
}

TEST_CASE("evaluate rejects incomplete or ill-sized sequences") {
  const TaskSpec spec = copy_spec();
  std::vector<std::vector<int>> wrong_len = {{0, 1, 2}};
  CHECK_THROWS_AS(evaluate(wrong_len, spec), ContractError);

  std::vector<std::vector<int>> masked = {
      {0, 1, 2, 3, 0, 1, 2, spec.vocab}};  // vocab id = the mask token
  CHECK_THROWS_AS(evaluate(masked, spec), ContractError);

  std::vector<std::vector<int>> none;
  CHECK_THROWS_AS(evaluate(none, spec), ContractError);
}

TEST_CASE("prompt positions expose the right context per task") {
  CHECK(prompt_positions(copy_spec()) == std::vector<int>{0, 1, 2, 3});
  CHECK(prompt_positions(chain_spec()) == std::vector<int>{0});

  const TaskSpec spec = pivot_spec();
  const PivotLayout layout = pivot_layout(spec);
  const std::vector<int> prompt = prompt_positions(spec);
  CHECK(prompt == layout.noise);
  for (int p : prompt) {
    CHECK(p != layout.pivot_index);
    CHECK(std::find(layout.dependent_positions.begin(),
                    layout.dependent_positions.end(),
                    p) == layout.dependent_positions.end());
  }
}

TEST_CASE("datasets round-trip through JSONL with a manifest") {
  const TaskSpec spec = pivot_spec();
  Dataset data = generate(spec, 25);
  TempFile file("estr_tasks_roundtrip.jsonl");
  save_dataset(data, file.path);

  Dataset loaded = load_dataset(file.path);
  CHECK(loaded.spec.kind == spec.kind);
  CHECK(loaded.spec.length == spec.length);
  CHECK(loaded.spec.vocab == spec.vocab);
  CHECK(loaded.spec.dependents == spec.dependents);
  CHECK(loaded.spec.seed == spec.seed);
  REQUIRE(loaded.examples.size() == data.examples.size());
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    CHECK(loaded.examples[i].tokens == data.examples[i].tokens);
    CHECK(loaded.examples[i].pivot_index == data.examples[i].pivot_index);
  }

  CHECK_THROWS_AS(load_dataset("/tmp/estr_no_such_dataset.jsonl"), IoError);
}
