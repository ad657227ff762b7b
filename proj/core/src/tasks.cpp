#include "estr/tasks.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "estr/rng.hpp"

namespace estr {
namespace {

using nlohmann::json;

void check_complete(const std::vector<int>& seq, const TaskSpec& spec) {
  if (static_cast<int>(seq.size()) != spec.length)
    throw ContractError("evaluate: sequence length " +
                        std::to_string(seq.size()) + " != task length " +
                        std::to_string(spec.length));
  for (int tok : seq)
    if (tok < 0 || tok >= spec.vocab)
      throw ContractError(
          "evaluate: sequence contains a non-data token (masked or out of "
          "range)");
}

}  // namespace

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kCopy: return "copy";
    case TaskKind::kPivotBinding: return "pivot_binding";
    case TaskKind::kModularChain: return "modular_chain";
  }
  throw ContractError("unknown task kind");
}

TaskKind task_from_name(const std::string& name) {
  if (name == "copy") return TaskKind::kCopy;
  if (name == "pivot_binding") return TaskKind::kPivotBinding;
  if (name == "modular_chain") return TaskKind::kModularChain;
  throw ContractError("unknown task name '" + name + "'");
}

void TaskSpec::validate() const {
  if (length < 2) throw ContractError("task: length must be >= 2");
  if (vocab < 2) throw ContractError("task: vocab must be >= 2");
  switch (kind) {
    case TaskKind::kCopy:
      if (length % 2 != 0)
        throw ContractError("copy task: length must be even");
      break;
    case TaskKind::kPivotBinding:
      if (dependents < 1)
        throw ContractError("pivot task: needs at least one dependent");
      if (dependents >= length)
        throw ContractError("pivot task: dependents (" +
                            std::to_string(dependents) +
                            ") must be < length (" + std::to_string(length) +
                            ")");
      break;
    case TaskKind::kModularChain:
      break;
  }
}

PivotLayout pivot_layout(const TaskSpec& spec) {
  spec.validate();
  if (spec.kind != TaskKind::kPivotBinding)
    throw ContractError("pivot_layout: not a pivot_binding spec");
  Rng rng(spec.seed, "layout");
  PivotLayout layout;
  std::vector<int> order(spec.length);
  for (int i = 0; i < spec.length; ++i) order[i] = i;
  // Fisher-Yates with the task stream so the layout is a pure function of
  // the spec.
  for (int i = spec.length - 1; i > 0; --i)
    std::swap(order[i], order[rng.next_int(0, i)]);
  layout.pivot_index = order[0];
  layout.dependent_positions.assign(order.begin() + 1,
                                    order.begin() + 1 + spec.dependents);
  layout.noise.assign(order.begin() + 1 + spec.dependents, order.end());
  std::sort(layout.dependent_positions.begin(),
            layout.dependent_positions.end());
  std::sort(layout.noise.begin(), layout.noise.end());
  // One random permutation of the vocabulary per dependent: uniform pivots
  // stay uniform at every dependent, and the pivot alone determines them all.
  layout.tables.resize(spec.dependents);
  for (int j = 0; j < spec.dependents; ++j) {
    auto& table = layout.tables[j];
    table.resize(spec.vocab);
    for (int v = 0; v < spec.vocab; ++v) table[v] = v;
    for (int v = spec.vocab - 1; v > 0; --v)
      std::swap(table[v], table[rng.next_int(0, v)]);
  }
  return layout;
}

int chain_increment(const TaskSpec& spec) {
  spec.validate();
  if (spec.kind != TaskKind::kModularChain)
    throw ContractError("chain_increment: not a modular_chain spec");
  Rng rng(spec.seed, "layout");
  return rng.next_int(1, spec.vocab - 1);
}

Dataset generate(const TaskSpec& spec, int n) {
  spec.validate();
  if (n < 1) throw ContractError("generate: n must be >= 1");
  Dataset out;
  out.spec = spec;
  out.examples.reserve(n);
  Rng rng(spec.seed, "examples");

  switch (spec.kind) {
    case TaskKind::kCopy: {
      const int half = spec.length / 2;
      for (int e = 0; e < n; ++e) {
        TaskExample ex;
        ex.tokens.resize(spec.length);
        for (int i = 0; i < half; ++i) {
          ex.tokens[i] = rng.next_int(0, spec.vocab - 1);
          ex.tokens[half + i] = ex.tokens[i];
        }
        out.examples.push_back(std::move(ex));
      }
      break;
    }
    case TaskKind::kPivotBinding: {
      const PivotLayout layout = pivot_layout(spec);
      for (int e = 0; e < n; ++e) {
        TaskExample ex;
        ex.tokens.assign(spec.length, 0);
        ex.pivot_index = layout.pivot_index;
        const int pivot = rng.next_int(0, spec.vocab - 1);
        ex.tokens[layout.pivot_index] = pivot;
        for (int j = 0; j < spec.dependents; ++j)
          ex.tokens[layout.dependent_positions[j]] = layout.derived(j, pivot);
        for (int i : layout.noise)
          ex.tokens[i] = rng.next_int(0, spec.vocab - 1);
        out.examples.push_back(std::move(ex));
      }
      break;
    }
    case TaskKind::kModularChain: {
      const int c = chain_increment(spec);
      for (int e = 0; e < n; ++e) {
        TaskExample ex;
        ex.tokens.resize(spec.length);
        ex.tokens[0] = rng.next_int(0, spec.vocab - 1);
        for (int i = 1; i < spec.length; ++i)
          ex.tokens[i] = (ex.tokens[i - 1] + c) % spec.vocab;
        out.examples.push_back(std::move(ex));
      }
      break;
    }
  }
  return out;
}

EvalResult evaluate(const std::vector<std::vector<int>>& sequences,
                    const TaskSpec& spec) {
  spec.validate();
  if (sequences.empty()) throw ContractError("evaluate: no sequences");
  double exact = 0.0, satisfied = 0.0;
  long long constraints = 0;

  switch (spec.kind) {
    case TaskKind::kCopy: {
      const int half = spec.length / 2;
      for (const auto& seq : sequences) {
        check_complete(seq, spec);
        int good = 0;
        for (int i = 0; i < half; ++i) good += seq[half + i] == seq[i];
        exact += good == half;
        satisfied += good;
        constraints += half;
      }
      break;
    }
    case TaskKind::kPivotBinding: {
      const PivotLayout layout = pivot_layout(spec);
      for (const auto& seq : sequences) {
        check_complete(seq, spec);
        const int pivot = seq[layout.pivot_index];
        int good = 0;
        for (int j = 0; j < spec.dependents; ++j)
          good += seq[layout.dependent_positions[j]] ==
                  layout.derived(j, pivot);
        exact += good == spec.dependents;
        satisfied += good;
        constraints += spec.dependents;
      }
      break;
    }
    case TaskKind::kModularChain: {
      const int c = chain_increment(spec);
      for (const auto& seq : sequences) {
        check_complete(seq, spec);
        int good = 0;
        for (int i = 1; i < spec.length; ++i)
          good += seq[i] == (seq[i - 1] + c) % spec.vocab;
        exact += good == spec.length - 1;
        satisfied += good;
        constraints += spec.length - 1;
      }
      break;
    }
  }
  EvalResult r;
  r.exact_match = exact / static_cast<double>(sequences.size());
  r.constraint_satisfaction =
      satisfied / static_cast<double>(constraints);
  return r;
}

std::vector<int> prompt_positions(const TaskSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case TaskKind::kCopy: {
      std::vector<int> out(spec.length / 2);
      for (int i = 0; i < spec.length / 2; ++i) out[i] = i;
      return out;
    }
    case TaskKind::kPivotBinding:
      return pivot_layout(spec).noise;
    case TaskKind::kModularChain:
      return {0};
  }
  throw ContractError("unknown task kind");
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& ex : dataset.examples) {
    json line;
    line["tokens"] = ex.tokens;
    line["task"] = task_name(dataset.spec.kind);
    if (ex.pivot_index >= 0)
      line["pivot_index"] = ex.pivot_index;
    else
      line["pivot_index"] = nullptr;
    out << line.dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path);

  json manifest;
  manifest["task"] = task_name(dataset.spec.kind);
  manifest["length"] = dataset.spec.length;
  manifest["vocab"] = dataset.spec.vocab;
  manifest["dependents"] = dataset.spec.dependents;
  manifest["seed"] = dataset.spec.seed;
  manifest["count"] = dataset.examples.size();
  std::ofstream mout(path + ".manifest.json", std::ios::trunc);
  if (!mout) throw IoError("cannot write manifest for " + path);
  mout << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& path) {
  std::ifstream min(path + ".manifest.json");
  if (!min) throw IoError("missing manifest for " + path);
  json manifest = json::parse(min, nullptr, /*allow_exceptions=*/false);
  if (manifest.is_discarded())
    throw IoError("malformed manifest for " + path);

  Dataset out;
  out.spec.kind = task_from_name(manifest.at("task").get<std::string>());
  out.spec.length = manifest.at("length").get<int>();
  out.spec.vocab = manifest.at("vocab").get<int>();
  out.spec.dependents = manifest.at("dependents").get<int>();
  out.spec.seed = manifest.at("seed").get<std::uint64_t>();
  out.spec.validate();

  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw IoError("malformed dataset line in " + path);
    TaskExample ex;
    ex.tokens = j.at("tokens").get<std::vector<int>>();
    ex.pivot_index =
        j.at("pivot_index").is_null() ? -1 : j.at("pivot_index").get<int>();
    out.examples.push_back(std::move(ex));
  }
  if (static_cast<std::size_t>(manifest.at("count").get<int>()) !=
      out.examples.size())
    throw IoError("dataset line count disagrees with manifest for " + path);
  return out;
}

}  // namespace estr
