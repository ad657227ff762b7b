#include "estr/trace.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <utility>

#include "estr/error.hpp"

namespace estr {
namespace {

using nlohmann::json;

json step_json(const StepRecord& step) {
  json cands = json::array();
  for (const CandidateScore& c : step.candidates) {
    cands.push_back({{"i", c.position},
                     {"H", c.entropy},
                     {"c", c.gate},
                     {"tis", c.tis},
                     {"penalty", c.penalty},
                     {"score", c.score}});
  }
  json writes = json::array();
  for (const auto& [i, token] : step.written)
    writes.push_back(json::array({i, token}));
  return json{{"t", step.t},
              {"candidates", std::move(cands)},
              {"selected", step.selected},
              {"written", std::move(writes)},
              {"nfe_forward", step.nfe_forward},
              {"nfe_backward", step.nfe_backward}};
}

StepRecord step_from_json(const json& j, int line) {
  auto ctx = [line](const std::string& what) {
    return ParseError("trace line " + std::to_string(line) + ": " + what);
  };
  StepRecord step;
  try {
    step.t = j.at("t").get<int>();
    for (const json& c : j.at("candidates")) {
      CandidateScore cs;
      cs.position = c.at("i").get<int>();
      cs.entropy = c.at("H").get<double>();
      cs.gate = c.at("c").get<double>();
      cs.tis = c.at("tis").get<double>();
      cs.penalty = c.at("penalty").get<double>();
      cs.score = c.at("score").get<double>();
      step.candidates.push_back(cs);
    }
    step.selected = j.at("selected").get<std::vector<int>>();
    for (const json& w : j.at("written")) {
      if (!w.is_array() || w.size() != 2)
        throw ctx("'written' entries must be [position, token] pairs");
      step.written.emplace_back(w[0].get<int>(), w[1].get<int>());
    }
    step.nfe_forward = j.at("nfe_forward").get<long long>();
    step.nfe_backward = j.at("nfe_backward").get<long long>();
  } catch (const json::out_of_range& e) {
    throw ctx(std::string("missing field: ") + e.what());
  } catch (const json::type_error& e) {
    throw ctx(std::string("wrong field type: ") + e.what());
  }
  return step;
}

}  // namespace

std::string step_to_json(const StepRecord& step) {
  return step_json(step).dump();
}

std::string trace_to_jsonl(const DecodeTrace& trace) {
  std::string out;
  for (const StepRecord& step : trace.steps) {
    out += step_to_json(step);
    out += '\n';
  }
  return out;
}

void write_trace(const DecodeTrace& trace, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open trace file for writing: " + path);
  f << trace_to_jsonl(trace);
  if (!f) throw IoError("failed writing trace file: " + path);
}

DecodeTrace parse_trace(const std::string& text, std::string sampler) {
  DecodeTrace trace;
  trace.sampler = std::move(sampler);
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("trace line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    trace.steps.push_back(step_from_json(j, line_no));
  }
  return trace;
}

DecodeTrace read_trace(const std::string& path, std::string sampler) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open trace file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_trace(buf.str(), std::move(sampler));
}

}  // namespace estr
