#pragma once
// The four harness commands. Each takes a fully resolved experiment config,
// writes its outputs (plus the effective config and a timing log) into the
// configured output directory, and returns the process exit code:
//   0 success, 2 verification failure. Usage and I/O failures are thrown
// (ParseError/ContractError and IoError) and mapped to 1 and 3 by main().

#include "estr/config.hpp"

namespace estr::cli {

int run_train(const ExperimentConfig& cfg);
int run_compare(const ExperimentConfig& cfg);
int run_verify(const ExperimentConfig& cfg);
int run_bench(const ExperimentConfig& cfg);

}  // namespace estr::cli
