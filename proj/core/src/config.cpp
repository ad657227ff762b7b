#include "estr/config.hpp"

#include <json.hpp>

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "estr/error.hpp"

namespace estr {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Strips a trailing comment: '#' or ';' at the start or after whitespace.
std::string strip_comment(const std::string& s) {
  for (std::size_t k = 0; k < s.size(); ++k) {
    if ((s[k] == '#' || s[k] == ';') &&
        (k == 0 || std::isspace(static_cast<unsigned char>(s[k - 1]))))
      return s.substr(0, k);
  }
  return s;
}

}  // namespace

ConfigFile ConfigFile::parse_text(const std::string& text,
                                  const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    return ParseError(origin + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw fail("malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw fail("empty section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw fail("expected 'key = value', got '" + line + "'");
    if (section.empty()) throw fail("key before any [section] header");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw fail("empty key");
    const std::string value = trim(line.substr(eq + 1));
    auto [it, inserted] =
        cfg.sections_[section].emplace(key, Entry{value, line_no});
    if (!inserted)
      throw fail("duplicate key [" + section + "]." + key +
                 " (first set on line " + std::to_string(it->second.line) +
                 ")");
  }
  return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_text(buf.str(), path);
}

const ConfigFile::Entry* ConfigFile::find(const std::string& section,
                                          const std::string& key) const {
  const auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  const auto k = s->second.find(key);
  if (k == s->second.end()) return nullptr;
  return &k->second;
}

const ConfigFile::Entry& ConfigFile::require(const std::string& section,
                                             const std::string& key) const {
  const Entry* e = find(section, key);
  if (!e)
    throw ParseError(origin_ + ": missing required field [" + section + "]." +
                     key);
  return *e;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

void ConfigFile::set(const std::string& section, const std::string& key,
                     const std::string& value) {
  sections_[section][key] = Entry{value, 0};
}

namespace {

[[noreturn]] void bad_value(const ConfigFile& cfg, const std::string& section,
                            const std::string& key, int line,
                            const std::string& want,
                            const std::string& got) {
  throw ParseError(cfg.origin() + ":" + std::to_string(line) + ": [" +
                   section + "]." + key + ": expected " + want + ", got '" +
                   got + "'");
}

}  // namespace

std::string ConfigFile::get_string(const std::string& section,
                                   const std::string& key) const {
  return require(section, key).value;
}

long long ConfigFile::get_int(const std::string& section,
                              const std::string& key) const {
  const Entry& e = require(section, key);
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(e.value.c_str(), &end, 10);
  if (errno != 0 || end == e.value.c_str() || *end != '\0')
    bad_value(*this, section, key, e.line, "an integer", e.value);
  return v;
}

std::uint64_t ConfigFile::get_u64(const std::string& section,
                                  const std::string& key) const {
  const Entry& e = require(section, key);
  if (!e.value.empty() && e.value.front() == '-')
    bad_value(*this, section, key, e.line, "an unsigned integer", e.value);
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(e.value.c_str(), &end, 10);
  if (errno != 0 || end == e.value.c_str() || *end != '\0')
    bad_value(*this, section, key, e.line, "an unsigned integer", e.value);
  return v;
}

double ConfigFile::get_double(const std::string& section,
                              const std::string& key) const {
  const Entry& e = require(section, key);
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(e.value.c_str(), &end);
  if (errno != 0 || end == e.value.c_str() || *end != '\0' ||
      !std::isfinite(v))
    bad_value(*this, section, key, e.line, "a finite number", e.value);
  return v;
}

bool ConfigFile::get_bool(const std::string& section,
                          const std::string& key) const {
  const Entry& e = require(section, key);
  if (e.value == "on" || e.value == "true" || e.value == "yes" ||
      e.value == "1")
    return true;
  if (e.value == "off" || e.value == "false" || e.value == "no" ||
      e.value == "0")
    return false;
  bad_value(*this, section, key, e.line, "on/off", e.value);
}

std::string ConfigFile::get_string(const std::string& section,
                                   const std::string& key,
                                   const std::string& fallback) const {
  return has(section, key) ? get_string(section, key) : fallback;
}
long long ConfigFile::get_int(const std::string& section,
                              const std::string& key,
                              long long fallback) const {
  return has(section, key) ? get_int(section, key) : fallback;
}
double ConfigFile::get_double(const std::string& section,
                              const std::string& key, double fallback) const {
  return has(section, key) ? get_double(section, key) : fallback;
}
bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
  return has(section, key) ? get_bool(section, key) : fallback;
}
std::uint64_t ConfigFile::get_u64(const std::string& section,
                                  const std::string& key,
                                  std::uint64_t fallback) const {
  return has(section, key) ? get_u64(section, key) : fallback;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return nlohmann::json(v).dump();  // shortest round-trip text
}

std::string sampler_name(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::kConfidence: return "confidence";
    case SamplerKind::kMargin: return "margin";
    case SamplerKind::kEntropy: return "entropy";
    case SamplerKind::kSteered: return "steered";
  }
  throw ContractError("unknown sampler kind");
}

SamplerKind sampler_from_name(const std::string& name) {
  if (name == "confidence") return SamplerKind::kConfidence;
  if (name == "margin") return SamplerKind::kMargin;
  if (name == "entropy") return SamplerKind::kEntropy;
  if (name == "steered") return SamplerKind::kSteered;
  throw ParseError("unknown sampler '" + name +
                   "' (confidence, margin, entropy, steered)");
}

namespace {

template <typename T>
T enum_value(const ConfigFile& file, const std::string& section,
             const std::string& key, const std::string& fallback,
             const std::vector<std::pair<std::string, T>>& table) {
  const std::string got = file.get_string(section, key, fallback);
  for (const auto& [name, value] : table)
    if (got == name) return value;
  std::string names;
  for (const auto& [name, value] : table) {
    (void)value;
    if (!names.empty()) names += ", ";
    names += name;
  }
  throw ParseError(file.origin() + ": [" + section + "]." + key + ": '" +
                   got + "' is not one of " + names);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::resolve(const ConfigFile& file) {
  ExperimentConfig cfg;

  cfg.model.vocab = static_cast<int>(file.get_int("model", "vocab", cfg.model.vocab));
  cfg.model.length = static_cast<int>(file.get_int("model", "length", cfg.model.length));
  cfg.model.d_model = static_cast<int>(file.get_int("model", "d_model", cfg.model.d_model));
  cfg.model.layers = static_cast<int>(file.get_int("model", "layers", cfg.model.layers));
  cfg.model.heads = static_cast<int>(file.get_int("model", "heads", cfg.model.heads));
  cfg.model.hidden = static_cast<int>(file.get_int("model", "hidden", cfg.model.hidden));
  cfg.model.positions = file.get_bool("model", "positions", cfg.model.positions);
  cfg.model.time_conditioning = enum_value<TimeConditioning>(
      file, "model", "time_conditioning", "none",
      {{"none", TimeConditioning::kNone}, {"scalar", TimeConditioning::kScalar}});
  cfg.model.tie_output = file.get_bool("model", "tie_output", cfg.model.tie_output);

  cfg.schedule_kind = enum_value<NoiseSchedule::Kind>(
      file, "schedule", "kind", "linear",
      {{"linear", NoiseSchedule::Kind::kLinear},
       {"cosine", NoiseSchedule::Kind::kCosine}});
  cfg.steps = static_cast<int>(file.get_int("schedule", "steps", cfg.steps));
  cfg.budget = static_cast<int>(file.get_int("schedule", "budget", cfg.budget));

  cfg.task.kind = task_from_name(file.get_string("task", "kind", "copy"));
  cfg.task.length = static_cast<int>(file.get_int("task", "length", cfg.model.length));
  cfg.task.vocab = static_cast<int>(file.get_int("task", "vocab", cfg.model.vocab));
  cfg.task.dependents = static_cast<int>(file.get_int("task", "dependents", cfg.task.dependents));
  cfg.task.seed = file.get_u64("task", "seed", cfg.task.seed);

  cfg.train.epochs = static_cast<int>(file.get_int("train", "epochs", cfg.train.epochs));
  cfg.train.batch_size = static_cast<int>(file.get_int("train", "batch_size", cfg.train.batch_size));
  cfg.train.learning_rate = file.get_double("train", "learning_rate", cfg.train.learning_rate);
  cfg.train.beta1 = file.get_double("train", "beta1", cfg.train.beta1);
  cfg.train.beta2 = file.get_double("train", "beta2", cfg.train.beta2);
  cfg.train.adam_eps = file.get_double("train", "adam_eps", cfg.train.adam_eps);
  cfg.train_examples = static_cast<int>(file.get_int("train", "examples", cfg.train_examples));
  cfg.prompt_conditioning = file.get_bool("train", "prompt_conditioning", cfg.prompt_conditioning);

  cfg.eval_examples = static_cast<int>(file.get_int("eval", "examples", cfg.eval_examples));
  cfg.eval_seeds = static_cast<int>(file.get_int("eval", "seeds", cfg.eval_seeds));
  if (file.has("eval", "samplers")) {
    cfg.samplers.clear();
    for (const std::string& name :
         split_list(file.get_string("eval", "samplers")))
      cfg.samplers.push_back(sampler_from_name(name));
    if (cfg.samplers.empty())
      throw ParseError(file.origin() + ": [eval].samplers is empty");
  }
  cfg.write = enum_value<WriteRule>(
      file, "eval", "write", "argmax",
      {{"argmax", WriteRule::kArgmax}, {"sample", WriteRule::kSample}});
  cfg.save_traces = file.get_bool("eval", "save_traces", cfg.save_traces);

  cfg.steer.rho = file.get_double("steer", "rho", cfg.steer.rho);
  cfg.steer.gating = file.get_bool("steer", "gating", cfg.steer.gating);
  cfg.steer.h_max = file.get_double("steer", "h_max", cfg.steer.h_max);
  cfg.steer.lambda_max = file.get_double("steer", "lambda_max", cfg.steer.lambda_max);
  cfg.steer.floor = enum_value<FloorSchedule>(
      file, "steer", "floor", "annealed",
      {{"annealed", FloorSchedule::kAnnealed},
       {"reversed", FloorSchedule::kReversed}});
  cfg.steer.active_queries = file.get_bool("steer", "active_queries", cfg.steer.active_queries);
  cfg.steer.prefilter = enum_value<LocalScore>(
      file, "steer", "prefilter", "confidence",
      {{"confidence", LocalScore::kConfidence},
       {"margin", LocalScore::kMargin},
       {"negentropy", LocalScore::kNegentropy}});

  cfg.probes = static_cast<int>(file.get_int("verify", "probes", cfg.probes));
  cfg.tolerance = file.get_double("verify", "tolerance", cfg.tolerance);
  cfg.min_theorem_pass = file.get_double("verify", "min_theorem_pass", cfg.min_theorem_pass);
  cfg.min_top1_agree = file.get_double("verify", "min_top1_agree", cfg.min_top1_agree);

  cfg.bench_length = static_cast<int>(file.get_int("bench", "length", cfg.bench_length));
  cfg.bench_d_model = static_cast<int>(file.get_int("bench", "d_model", cfg.bench_d_model));
  cfg.bench_hidden = static_cast<int>(file.get_int("bench", "hidden", cfg.bench_hidden));
  cfg.bench_layers = static_cast<int>(file.get_int("bench", "layers", cfg.bench_layers));
  cfg.bench_repetitions = static_cast<int>(file.get_int("bench", "repetitions", cfg.bench_repetitions));

  cfg.checkpoint = file.get_string("io", "checkpoint", cfg.checkpoint);
  cfg.out_dir = file.get_string("io", "out", cfg.out_dir);

  cfg.seed = file.get_u64("run", "seed", cfg.seed);
  cfg.workers = static_cast<int>(file.get_int("run", "workers", cfg.workers));

  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  model.validate();
  task.validate();
  steer.validate();
  if (steps < 1) throw ContractError("config: schedule steps must be >= 1");
  if (budget < 1) throw ContractError("config: per-step budget must be >= 1");
  if (task.length != model.length)
    throw ContractError("config: task length " + std::to_string(task.length) +
                        " != model length " + std::to_string(model.length));
  if (task.vocab != model.vocab)
    throw ContractError("config: task vocab " + std::to_string(task.vocab) +
                        " != model vocab " + std::to_string(model.vocab));
  if (train_examples < 1 || eval_examples < 1)
    throw ContractError("config: example counts must be >= 1");
  if (eval_seeds < 1) throw ContractError("config: eval seeds must be >= 1");
  if (train.epochs < 0 || train.batch_size < 1)
    throw ContractError("config: bad training budget");
  if (probes < 1) throw ContractError("config: probes must be >= 1");
  if (tolerance < 0) throw ContractError("config: tolerance must be >= 0");
  if (bench_length < 8 || bench_d_model < 1 || bench_hidden < 1 ||
      bench_layers < 1)
    throw ContractError("config: bad bench dimensions");
  if (bench_repetitions < 1)
    throw ContractError("config: bench repetitions must be >= 1");
  if (workers < 1) throw ContractError("config: workers must be >= 1");
  if (out_dir.empty()) throw ContractError("config: output dir must be set");
}

std::string ExperimentConfig::render() const {
  std::ostringstream out;
  const auto b = [](bool v) { return v ? "on" : "off"; };
  out << "[model]\n"
      << "vocab = " << model.vocab << "\n"
      << "length = " << model.length << "\n"
      << "d_model = " << model.d_model << "\n"
      << "layers = " << model.layers << "\n"
      << "heads = " << model.heads << "\n"
      << "hidden = " << model.hidden << "\n"
      << "positions = " << b(model.positions) << "\n"
      << "time_conditioning = "
      << (model.time_conditioning == TimeConditioning::kNone ? "none"
                                                             : "scalar")
      << "\n"
      << "tie_output = " << b(model.tie_output) << "\n\n";
  out << "[schedule]\n"
      << "kind = "
      << (schedule_kind == NoiseSchedule::Kind::kLinear ? "linear" : "cosine")
      << "\n"
      << "steps = " << steps << "\n"
      << "budget = " << budget << "\n\n";
  out << "[task]\n"
      << "kind = " << task_name(task.kind) << "\n"
      << "length = " << task.length << "\n"
      << "vocab = " << task.vocab << "\n"
      << "dependents = " << task.dependents << "\n"
      << "seed = " << task.seed << "\n\n";
  out << "[train]\n"
      << "epochs = " << train.epochs << "\n"
      << "batch_size = " << train.batch_size << "\n"
      << "learning_rate = " << format_double(train.learning_rate) << "\n"
      << "beta1 = " << format_double(train.beta1) << "\n"
      << "beta2 = " << format_double(train.beta2) << "\n"
      << "adam_eps = " << format_double(train.adam_eps) << "\n"
      << "examples = " << train_examples << "\n"
      << "prompt_conditioning = " << b(prompt_conditioning) << "\n\n";
  out << "[eval]\n"
      << "examples = " << eval_examples << "\n"
      << "seeds = " << eval_seeds << "\n"
      << "samplers = ";
  for (std::size_t k = 0; k < samplers.size(); ++k) {
    if (k) out << ", ";
    out << sampler_name(samplers[k]);
  }
  out << "\n"
      << "write = " << (write == WriteRule::kArgmax ? "argmax" : "sample")
      << "\n"
      << "save_traces = " << b(save_traces) << "\n\n";
  out << "[steer]\n"
      << "rho = " << format_double(steer.rho) << "\n"
      << "gating = " << b(steer.gating) << "\n"
      << "h_max = " << format_double(steer.h_max) << "\n"
      << "lambda_max = " << format_double(steer.lambda_max) << "\n"
      << "floor = "
      << (steer.floor == FloorSchedule::kAnnealed ? "annealed" : "reversed")
      << "\n"
      << "active_queries = " << b(steer.active_queries) << "\n"
      << "prefilter = ";
  switch (steer.prefilter) {
    case LocalScore::kConfidence: out << "confidence"; break;
    case LocalScore::kMargin: out << "margin"; break;
    case LocalScore::kNegentropy: out << "negentropy"; break;
  }
  out << "\n\n";
  out << "[verify]\n"
      << "probes = " << probes << "\n"
      << "tolerance = " << format_double(tolerance) << "\n"
      << "min_theorem_pass = " << format_double(min_theorem_pass) << "\n"
      << "min_top1_agree = " << format_double(min_top1_agree) << "\n\n";
  out << "[bench]\n"
      << "length = " << bench_length << "\n"
      << "d_model = " << bench_d_model << "\n"
      << "hidden = " << bench_hidden << "\n"
      << "layers = " << bench_layers << "\n"
      << "repetitions = " << bench_repetitions << "\n\n";
  out << "[io]\n"
      << "checkpoint = " << checkpoint << "\n"
      << "out = " << out_dir << "\n\n";
  out << "[run]\n"
      << "seed = " << seed << "\n"
      << "workers = " << workers << "\n";
  return out.str();
}

}  // namespace estr
