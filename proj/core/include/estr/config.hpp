#pragma once
// Experiment configuration: a sectioned key=value text format and the typed,
// fully-defaulted view the command-line harness runs from. Every run is
// determined by (config file, seed); the resolved view can render itself
// back to text so output directories carry the complete effective config.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "estr/denoiser.hpp"
#include "estr/diffusion.hpp"
#include "estr/sampler.hpp"
#include "estr/tasks.hpp"
#include "estr/train.hpp"

namespace estr {

// Sectioned key=value text:
//   [section]
//   key = value     # trailing comments allowed; '#' or ';' start a comment
// Keys outside a section, malformed lines, and duplicate keys are parse
// errors that name the offending line.
class ConfigFile {
 public:
  static ConfigFile parse_text(const std::string& text,
                               const std::string& origin = "<config>");
  static ConfigFile parse_file(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;

  // Required lookups throw a parse error naming the missing field; the
  // defaulted forms fall back silently (the resolved experiment renders the
  // complete effective state itself).
  std::string get_string(const std::string& section,
                         const std::string& key) const;
  long long get_int(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key) const;
  bool get_bool(const std::string& section, const std::string& key) const;
  std::uint64_t get_u64(const std::string& section,
                        const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  long long get_int(const std::string& section, const std::string& key,
                    long long fallback) const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const;

  // Command-line overrides land here before resolution.
  void set(const std::string& section, const std::string& key,
           const std::string& value);

  const std::string& origin() const { return origin_; }

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  const Entry* find(const std::string& section, const std::string& key) const;
  const Entry& require(const std::string& section,
                       const std::string& key) const;

  std::string origin_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
};

// Formats a double the way the JSON serializer would (shortest text that
// parses back to the same value) so CSV and config output stay stable.
std::string format_double(double v);

enum class SamplerKind { kConfidence, kMargin, kEntropy, kSteered };
std::string sampler_name(SamplerKind kind);
SamplerKind sampler_from_name(const std::string& name);

// The resolved experiment: defaults applied, enums decoded, invariants
// checked. Section/key names match render() output.
struct ExperimentConfig {
  // [model]
  DenoiserConfig model;
  // [schedule]
  NoiseSchedule::Kind schedule_kind = NoiseSchedule::Kind::kLinear;
  int steps = 16;
  int budget = 1;  // tokens revealed per step; budget * steps must equal L
  // [task]
  TaskSpec task;
  // [train]
  TrainConfig train;
  int train_examples = 512;
  bool prompt_conditioning = true;  // never corrupt the task's prompt region
  // [eval]
  int eval_examples = 128;
  int eval_seeds = 1;
  std::vector<SamplerKind> samplers = {SamplerKind::kConfidence,
                                       SamplerKind::kSteered};
  WriteRule write = WriteRule::kArgmax;
  bool save_traces = true;
  // [steer]
  SteerConfig steer;
  // [verify]
  int probes = 200;
  double tolerance = 1e-3;
  double min_theorem_pass = 0.99;
  double min_top1_agree = 0.8;
  // [bench]
  int bench_length = 256;
  int bench_d_model = 32;
  int bench_hidden = 32;
  int bench_layers = 1;
  int bench_repetitions = 30;
  // [io]
  std::string checkpoint;  // consumed by compare/verify; written by train
  std::string out_dir = "out";
  // [run]
  std::uint64_t seed = 0;
  int workers = 1;

  static ExperimentConfig resolve(const ConfigFile& file);
  void validate() const;
  std::string render() const;  // full effective config, parseable
};

}  // namespace estr
