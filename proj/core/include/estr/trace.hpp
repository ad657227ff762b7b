#pragma once
// Decode-trace files: JSON lines, one record per step, with fields
//   {t, candidates: [{i, H, c, tis, penalty, score}], selected: [i...],
//    written: [[i, token]...], nfe_forward, nfe_backward}.
// Serialization is deterministic (sorted keys, shortest round-trip floats),
// so identical decodes produce byte-identical files. The in-memory trace
// also carries per-step diagnostics (budget shortfall, gradient norms) that
// are not part of the file schema and reset to defaults on read.

#include <string>

#include "estr/sampler.hpp"

namespace estr {

// One line, no trailing newline.
std::string step_to_json(const StepRecord& step);

// All steps, one line each, each line newline-terminated.
std::string trace_to_jsonl(const DecodeTrace& trace);

void write_trace(const DecodeTrace& trace, const std::string& path);

// `sampler` labels the returned trace; the file itself stores only steps.
DecodeTrace parse_trace(const std::string& text, std::string sampler = "");
DecodeTrace read_trace(const std::string& path, std::string sampler = "");

}  // namespace estr
