#pragma once
// Synthetic dataset generators with controllable long-range structure, plus
// exact rule-based evaluators.
//
// copy           second half mirrors the first half.
// pivot_binding  one pivot position determines k dependent positions through
//                per-dependent lookup tables; remaining positions are
//                independent noise.  Revealing the pivot collapses the
//                uncertainty of every dependent at once, which makes
//                decoding order observable in the outcome.
// modular_chain  x_{i+1} = (x_i + c) mod V from a random start.
//
// Evaluation is self-consistency against the task rule (no reference
// sequence needed): exact_match requires every constrained position to be
// consistent, constraint_satisfaction scores partial credit.

#include <cstdint>
#include <string>
#include <vector>

#include "estr/error.hpp"

namespace estr {

enum class TaskKind { kCopy, kPivotBinding, kModularChain };

std::string task_name(TaskKind kind);
TaskKind task_from_name(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::kCopy;
  int length = 8;
  int vocab = 8;
  int dependents = 0;  // pivot_binding only
  std::uint64_t seed = 0;

  void validate() const;
};

struct TaskExample {
  std::vector<int> tokens;
  int pivot_index = -1;  // -1 for tasks without a pivot
};

struct Dataset {
  TaskSpec spec;
  std::vector<TaskExample> examples;
};

// Task-level layout derived deterministically from the spec seed: where the
// pivot sits, which positions depend on it, and the lookup rule linking them.
//
// Each dependent carries its own random permutation of the vocabulary. That
// keeps every dependent marginally uniform (entropy ln|V| with no pivot in
// sight, zero once the pivot is visible) while making dependent-to-dependent
// inference a composition of two arbitrary tables — so the pivot is the one
// position from which everything else is cheaply computable, which is
// exactly the structure decode-order experiments need. A shared affine rule
// would instead link all dependents by a constant offset and dissolve the
// pivot's special role.
struct PivotLayout {
  int pivot_index = 0;
  std::vector<int> dependent_positions;
  std::vector<std::vector<int>> tables;  // per dependent: pivot value -> token
  std::vector<int> noise;                // unconstrained positions

  int derived(int dependent, int pivot_value) const {
    return tables[dependent][pivot_value];
  }
};
PivotLayout pivot_layout(const TaskSpec& spec);

// Chain increment for modular_chain, fixed per task seed.
int chain_increment(const TaskSpec& spec);

Dataset generate(const TaskSpec& spec, int n);

struct EvalResult {
  double exact_match = 0.0;
  double constraint_satisfaction = 0.0;
};
EvalResult evaluate(const std::vector<std::vector<int>>& sequences,
                    const TaskSpec& spec);

// Positions given as conditioning during decoding (observed, never masked):
// copy -> first half, pivot_binding -> the noise positions, modular_chain ->
// the first position.
std::vector<int> prompt_positions(const TaskSpec& spec);

// JSON-lines persistence; a sibling manifest (path + ".manifest.json")
// records the spec so datasets reload losslessly.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace estr
