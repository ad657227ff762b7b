#include "commands.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "estr/bench.hpp"
#include "estr/checkpoint.hpp"
#include "estr/error.hpp"
#include "estr/oracle.hpp"
#include "estr/rng.hpp"
#include "estr/sampler.hpp"
#include "estr/tasks.hpp"
#include "estr/trace.hpp"
#include "estr/train.hpp"

namespace estr::cli {
namespace {

namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

double ms_since(clock_type::time_point start) {
  return std::chrono::duration<double, std::milli>(clock_type::now() - start)
      .count();
}

// splitmix64 finalizer: derives independent per-unit seeds from a base.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Named sub-stream of the run seed (train, mask, decode, probe, ...).
std::uint64_t sub_seed(std::uint64_t seed, std::string_view stream) {
  return Rng(seed, stream).next_u64();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << content;
  if (!f) throw IoError("failed writing: " + path);
}

// Creates the output directory and drops the complete effective config into
// it, so the run is reconstructible from its artifacts alone.
std::string prepare_out(const ExperimentConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec)
    throw IoError("cannot create output dir '" + cfg.out_dir +
                  "': " + ec.message());
  write_file(cfg.out_dir + "/config.effective.ini", cfg.render());
  return cfg.out_dir;
}

// Wall-clock notes live outside the deterministic CSV outputs.
void append_log(const ExperimentConfig& cfg, const std::string& line) {
  std::ofstream f(cfg.out_dir + "/run.log", std::ios::app);
  if (f) f << line << "\n";
}

NoiseSchedule make_schedule(const ExperimentConfig& cfg) {
  return cfg.schedule_kind == NoiseSchedule::Kind::kLinear
             ? NoiseSchedule::linear(cfg.steps)
             : NoiseSchedule::cosine(cfg.steps);
}

std::string checkpoint_path(const ExperimentConfig& cfg) {
  return cfg.checkpoint.empty() ? cfg.out_dir + "/checkpoint.bin"
                                : cfg.checkpoint;
}

Denoiser load_model(const ExperimentConfig& cfg) {
  const Denoiser model = load_checkpoint(checkpoint_path(cfg));
  if (model.config().vocab != cfg.task.vocab ||
      model.config().length != cfg.task.length)
    throw ContractError(
        "checkpoint/config mismatch: checkpoint is vocab " +
        std::to_string(model.config().vocab) + ", length " +
        std::to_string(model.config().length) + "; the task needs vocab " +
        std::to_string(cfg.task.vocab) + ", length " +
        std::to_string(cfg.task.length));
  return model;
}

// The task stream is one deterministic sequence of examples: training takes
// the first train_examples, evaluation the next eval_examples, so the two
// sets are disjoint and both commands agree on them without a shared file.
std::vector<TaskExample> eval_examples(const ExperimentConfig& cfg) {
  const Dataset all =
      generate(cfg.task, cfg.train_examples + cfg.eval_examples);
  return {all.examples.begin() + cfg.train_examples, all.examples.end()};
}

DecodePlan plan_for(const ExperimentConfig& cfg, const NoiseSchedule& schedule,
                    const TaskExample& example) {
  const std::vector<int> prompt = prompt_positions(cfg.task);
  auto budgets = constant_budgets(cfg.steps, cfg.budget);
  if (prompt.empty())
    return full_decode_plan(cfg.task.length, cfg.task.vocab, schedule,
                            std::move(budgets), cfg.write);
  return prompt_decode_plan(example.tokens, prompt, cfg.task.vocab, schedule,
                            std::move(budgets), cfg.write);
}

int executed_steps(const ExperimentConfig& cfg) {
  const int masked = cfg.task.length -
                     static_cast<int>(prompt_positions(cfg.task).size());
  return masked / cfg.budget;  // plan construction enforces exactness
}

// Index-deterministic fan-out: results depend only on the index, never on
// the worker count or interleaving.
void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string bool_cell(bool v) { return v ? "1" : "0"; }

}  // namespace

int run_train(const ExperimentConfig& cfg) {
  prepare_out(cfg);
  const NoiseSchedule schedule = make_schedule(cfg);

  const Dataset data = generate(cfg.task, cfg.train_examples);
  std::vector<std::vector<int>> tokens;
  tokens.reserve(data.examples.size());
  for (const auto& ex : data.examples) tokens.push_back(ex.tokens);

  Denoiser model = Denoiser::init(cfg.model, sub_seed(cfg.seed, "init"));
  TrainConfig tc = cfg.train;
  tc.seed = sub_seed(cfg.seed, "train");
  if (cfg.prompt_conditioning) tc.keep_visible = prompt_positions(cfg.task);

  const auto started = clock_type::now();
  const TrainResult result = train(model, tokens, schedule, tc);
  const double train_ms = ms_since(started);

  save_checkpoint(model, cfg.out_dir + "/checkpoint.bin");

  std::string loss_csv = "epoch,loss\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    loss_csv += std::to_string(e) + "," + format_double(result.epoch_loss[e]) +
                "\n";
  write_file(cfg.out_dir + "/loss.csv", loss_csv);

  std::vector<std::vector<int>> heldout;
  for (const auto& ex : eval_examples(cfg)) heldout.push_back(ex.tokens);
  const double ce = masked_cross_entropy(model, heldout, schedule,
                                         sub_seed(cfg.seed, "mask"),
                                         tc.keep_visible);
  write_file(cfg.out_dir + "/metrics.csv",
             "metric,value\nfinal_train_loss," +
                 format_double(result.epoch_loss.empty()
                                   ? std::nan("")
                                   : result.epoch_loss.back()) +
                 "\nheldout_masked_ce," + format_double(ce) + "\n");

  append_log(cfg, "train: " + format_double(train_ms) + " ms");
  std::cout << "trained " << cfg.train.epochs << " epochs on "
            << cfg.train_examples << " examples; heldout masked CE "
            << format_double(ce) << "\n"
            << "checkpoint: " << cfg.out_dir << "/checkpoint.bin\n";
  return 0;
}

int run_compare(const ExperimentConfig& cfg) {
  prepare_out(cfg);
  const NoiseSchedule schedule = make_schedule(cfg);
  const Denoiser model = load_model(cfg);
  const std::vector<TaskExample> eval = eval_examples(cfg);
  const int steps_used = executed_steps(cfg);

  struct Cell {
    DecodeResult result;
    double ms = 0.0;
  };
  const int n_samplers = static_cast<int>(cfg.samplers.size());
  const int per_sampler = cfg.eval_seeds * static_cast<int>(eval.size());
  std::vector<Cell> cells(static_cast<std::size_t>(n_samplers) * per_sampler);

  const std::uint64_t base = sub_seed(cfg.seed, "decode");
  parallel_for(static_cast<int>(cells.size()), cfg.workers, [&](int flat) {
    const int si = flat / per_sampler;
    const int rest = flat % per_sampler;
    const int sd = rest / static_cast<int>(eval.size());
    const int ei = rest % static_cast<int>(eval.size());

    const DecodePlan plan = plan_for(cfg, schedule, eval[ei]);
    Rng rng(mix64(base ^ mix64(static_cast<std::uint64_t>(flat))));
    const auto started = clock_type::now();
    DecodeResult result;
    if (cfg.samplers[si] == SamplerKind::kSteered) {
      result = steered_decode(model, schedule, plan, cfg.steer, rng);
    } else {
      LocalScore score = LocalScore::kConfidence;
      if (cfg.samplers[si] == SamplerKind::kMargin)
        score = LocalScore::kMargin;
      if (cfg.samplers[si] == SamplerKind::kEntropy)
        score = LocalScore::kNegentropy;
      result = greedy_decode(model, schedule, plan, score, rng);
    }
    cells[flat].ms = ms_since(started);
    cells[flat].result = std::move(result);
    (void)sd;
  });

  // Work-counter audit on every trace; a failure is a verification failure.
  for (std::size_t flat = 0; flat < cells.size(); ++flat) {
    const auto audit = nfe_audit(cells[flat].result.trace, steps_used);
    if (!audit.ok) {
      std::cerr << "nfe audit failed on decode " << flat << ": "
                << audit.message << "\n";
      return 2;
    }
  }

  if (cfg.save_traces) {
    fs::create_directories(cfg.out_dir + "/traces");
    for (int si = 0; si < n_samplers; ++si)
      for (int sd = 0; sd < cfg.eval_seeds; ++sd)
        for (std::size_t ei = 0; ei < eval.size(); ++ei) {
          const std::size_t flat =
              static_cast<std::size_t>(si) * per_sampler +
              static_cast<std::size_t>(sd) * eval.size() + ei;
          write_trace(cells[flat].result.trace,
                      cfg.out_dir + "/traces/" +
                          sampler_name(cfg.samplers[si]) + "_s" +
                          std::to_string(sd) + "_e" + std::to_string(ei) +
                          ".jsonl");
        }
  }

  std::string results_csv =
      "sampler,seed,exact_match,constraint_satisfaction,nfe_forward,nfe_"
      "backward\n";
  std::string timing_csv = "sampler,seed,mean_ms_per_decode\n";
  for (int si = 0; si < n_samplers; ++si) {
    for (int sd = 0; sd < cfg.eval_seeds; ++sd) {
      std::vector<std::vector<int>> decoded;
      decoded.reserve(eval.size());
      double ms_total = 0.0;
      long long fwd = -1, bwd = -1;
      for (std::size_t ei = 0; ei < eval.size(); ++ei) {
        const std::size_t flat =
            static_cast<std::size_t>(si) * per_sampler +
            static_cast<std::size_t>(sd) * eval.size() + ei;
        decoded.push_back(cells[flat].result.tokens);
        ms_total += cells[flat].ms;
        if (fwd < 0) {
          fwd = cells[flat].result.nfe_forward;
          bwd = cells[flat].result.nfe_backward;
        }
      }
      const EvalResult ev = evaluate(decoded, cfg.task);
      const std::string name = sampler_name(cfg.samplers[si]);
      results_csv += name + "," + std::to_string(sd) + "," +
                     format_double(ev.exact_match) + "," +
                     format_double(ev.constraint_satisfaction) + "," +
                     std::to_string(fwd) + "," + std::to_string(bwd) + "\n";
      timing_csv += name + "," + std::to_string(sd) + "," +
                    format_double(ms_total / static_cast<double>(eval.size())) +
                    "\n";
      std::cout << name << " seed " << sd << ": exact_match "
                << format_double(ev.exact_match) << ", constraint "
                << format_double(ev.constraint_satisfaction) << ", nfe "
                << fwd << "f/" << bwd << "b\n";
    }
  }
  write_file(cfg.out_dir + "/results.csv", results_csv);
  write_file(cfg.out_dir + "/timing.csv", timing_csv);
  append_log(cfg, "compare: " + std::to_string(cells.size()) + " decodes");
  return 0;
}

int run_verify(const ExperimentConfig& cfg) {
  prepare_out(cfg);
  const NoiseSchedule schedule = make_schedule(cfg);
  const Denoiser model = load_model(cfg);
  const std::vector<TaskExample> eval = eval_examples(cfg);

  const ProbeOptions opt;
  const std::uint64_t probe_base = sub_seed(cfg.seed, "probe");

  // Pause one decode per state so probes sample the visited distribution.
  // Late pauses can leave fewer candidates than requested per state, so
  // keep adding states until the probe budget is met.
  auto make_state = [&](int k) {
    const TaskExample& ex = eval[k % eval.size()];
    Rng rng(mix64(probe_base ^ mix64(static_cast<std::uint64_t>(k))));
    auto got =
        collect_probe_states(model, schedule, plan_for(cfg, schedule, ex),
                             /*count=*/1, rng);
    got.front().state_id = k;
    return std::move(got.front());
  };

  std::vector<ProbeState> states;
  std::vector<std::vector<ProbeRecord>> per_state;
  std::vector<AqaFidelity> fidelity;
  auto probe_one = [&](int k) {
    Rng rng(mix64(probe_base + 0x517CC1B727220A95ull +
                  static_cast<std::uint64_t>(k)));
    per_state[k] = probe_state(model, states[k], opt, rng);
    std::vector<int> positions;
    for (const auto& r : per_state[k]) positions.push_back(r.position);
    fidelity[k] = aqa_fidelity(model, states[k].dists, states[k].state,
                               states[k].t, positions);
  };

  int produced = 0;
  while (produced < cfg.probes) {
    const int first = static_cast<int>(states.size());
    const int want = std::max(
        1, (cfg.probes - produced + opt.candidates_per_state - 1) /
               opt.candidates_per_state);
    for (int k = first; k < first + want; ++k) states.push_back(make_state(k));
    per_state.resize(states.size());
    fidelity.resize(states.size());
    parallel_for(want, cfg.workers, [&](int j) { probe_one(first + j); });
    for (int k = first; k < first + want; ++k)
      produced += static_cast<int>(per_state[k].size());
  }

  std::vector<ProbeRecord> records;
  std::vector<double> cosines;
  int top1_total = 0, top1_agree = 0;
  for (std::size_t k = 0; k < states.size(); ++k) {
    for (std::size_t c = 0; c < per_state[k].size(); ++c) {
      if (static_cast<int>(records.size()) == cfg.probes) break;
      records.push_back(per_state[k][c]);
      records.back().probe_id = static_cast<int>(records.size()) - 1;
      cosines.push_back(fidelity[k].defined[c] ? fidelity[k].cosine[c]
                                               : std::nan(""));
    }
    if (per_state[k].size() >= 2) {
      ++top1_total;
      top1_agree += fidelity[k].top1_agree;
    }
  }

  const TheoremSummary theorem = theorem_check(records, cfg.tolerance);
  const OrderingSummary ordering = ordering_check(records);
  const double top1_rate =
      top1_total == 0 ? 1.0
                      : static_cast<double>(top1_agree) / top1_total;
  int flagged = 0;
  for (const auto& r : records) flagged += r.curvature_flagged;

  // Work-counter audit on fresh decodes of the first eval example.
  const DecodePlan plan = plan_for(cfg, schedule, eval.front());
  Rng g_rng(mix64(probe_base ^ 0xA5A5A5A5ull));
  Rng s_rng(mix64(probe_base ^ 0x5A5A5A5Aull));
  const auto greedy =
      greedy_decode(model, schedule, plan, LocalScore::kConfidence, g_rng);
  const auto steered = steered_decode(model, schedule, plan, cfg.steer, s_rng);
  const auto audit_g = nfe_audit(greedy.trace, executed_steps(cfg));
  const auto audit_s = nfe_audit(steered.trace, executed_steps(cfg));

  // Per-probe report: JSONL and the CSV summary.
  std::string jsonl, csv =
      "probe_id,t,i,delta_exact,tis,m_hat,err,bound_ok,aqa_cosine\n";
  for (std::size_t k = 0; k < records.size(); ++k) {
    const ProbeRecord& r = records[k];
    nlohmann::json j{{"probe_id", r.probe_id},
                     {"state_id", r.state_id},
                     {"t", r.t},
                     {"i", r.position},
                     {"delta_exact", r.delta_exact},
                     {"tis", r.tis},
                     {"m_raw", r.m_raw},
                     {"m_hat", r.m_bound},
                     {"err", r.err},
                     {"bound_ok", r.bound_ok},
                     {"curvature_flagged", r.curvature_flagged}};
    j["aqa_cosine"] = std::isfinite(cosines[k])
                          ? nlohmann::json(cosines[k])
                          : nlohmann::json();
    jsonl += j.dump() + "\n";
    csv += std::to_string(r.probe_id) + "," + std::to_string(r.t) + "," +
           std::to_string(r.position) + "," + format_double(r.delta_exact) +
           "," + format_double(r.tis) + "," + format_double(r.m_bound) + "," +
           format_double(r.err) + "," + bool_cell(r.bound_ok) + "," +
           format_double(cosines[k]) + "\n";
  }
  write_file(cfg.out_dir + "/probes.jsonl", jsonl);
  write_file(cfg.out_dir + "/oracle.csv", csv);

  const bool pass = theorem.pass_rate >= cfg.min_theorem_pass &&
                    ordering.violations == 0 && audit_g.ok && audit_s.ok &&
                    top1_rate >= cfg.min_top1_agree;

  std::cout << "theorem bound: " << theorem.passed << "/" << theorem.total
            << " (pass rate " << format_double(theorem.pass_rate)
            << ", max err " << format_double(theorem.max_err)
            << ", tol " << format_double(cfg.tolerance) << ")\n"
            << "ordering: " << ordering.qualified << " qualified pairs of "
            << ordering.pairs << ", " << ordering.violations
            << " violations\n"
            << "curvature flags: " << flagged << "/" << records.size()
            << " probes\n"
            << "restricted-backward top-1 agreement: "
            << format_double(top1_rate) << " over " << top1_total
            << " states\n"
            << "work counters: greedy "
            << (audit_g.ok ? "ok" : audit_g.message) << ", steered "
            << (audit_s.ok ? "ok" : audit_s.message) << "\n"
            << (pass ? "VERIFY PASS" : "VERIFY FAIL") << "\n";
  append_log(cfg, "verify: " + std::to_string(records.size()) + " probes");
  return pass ? 0 : 2;
}

int run_bench(const ExperimentConfig& cfg) {
  prepare_out(cfg);

  DenoiserConfig bc;
  bc.vocab = 8;  // scaling target is sequence length, not vocabulary
  bc.length = cfg.bench_length;
  bc.d_model = cfg.bench_d_model;
  bc.layers = cfg.bench_layers;
  bc.heads = 2;
  bc.hidden = cfg.bench_hidden;
  const Denoiser model = Denoiser::init(bc, sub_seed(cfg.seed, "bench"));

  MaskedSequence state;
  state.tokens.assign(bc.length, bc.vocab);
  state.masked.resize(bc.length);
  for (int i = 0; i < bc.length; ++i) state.masked[i] = i;

  std::vector<int> sweep;
  for (int a = 1; a < bc.length; a *= 2) sweep.push_back(a);
  sweep.push_back(bc.length);  // dense reference

  std::string csv = "active,median_ms,node_visits\n";
  std::cout << "backward scaling at L = " << bc.length << ", d = "
            << bc.d_model << "\n";
  for (int a : sweep) {
    std::vector<int> candidates(a);
    for (int i = 0; i < a; ++i) candidates[i] = i;
    const bool restricted = a < bc.length;  // |A| = L row is the dense pass

    int reps = cfg.bench_repetitions;
    std::vector<double> times;
    std::uint64_t work = 0;
    for (int attempt = 0; attempt < 4; ++attempt) {
      times.clear();
      for (int r = 0; r < 3; ++r)  // warmup, discarded
        time_entropy_backward(model, state, 1, candidates, restricted);
      for (int r = 0; r < reps; ++r) {
        const auto probe =
            time_entropy_backward(model, state, 1, candidates, restricted);
        times.push_back(probe.seconds);
        work = probe.work;
      }
      if (median(times) >= 1e-6) break;  // timer resolution sufficient
      reps *= 2;
    }
    const double med_ms = median(times) * 1e3;
    csv += std::to_string(a) + "," + format_double(med_ms) + "," +
           std::to_string(work) + "\n";
    std::cout << "  |A| = " << a << ": " << format_double(med_ms)
              << " ms, " << work << " element visits"
              << (restricted ? "" : " (dense)") << "\n";
  }
  write_file(cfg.out_dir + "/scaling.csv", csv);
  append_log(cfg, "bench: sweep of " + std::to_string(sweep.size()) +
                      " active-set sizes");
  return 0;
}

}  // namespace estr::cli
