// entsteer — a desk-scale laboratory for masked-diffusion decoding.
//
// Subcommands: train, compare, verify, bench. Every run is determined by
// (config file, seed); outputs land in the configured directory together
// with the resolved effective config. Exit codes: 0 success, 1 usage,
// 2 verification failure, 3 I/O failure.

#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "commands.hpp"
#include "estr/error.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::string seed, out, workers, probes, rho, aqa;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "experiment config file");
  cmd->add_option("--seed", o.seed, "override [run].seed");
  cmd->add_option("--out", o.out, "override [io].out");
  cmd->add_option("--workers", o.workers, "override [run].workers");
  cmd->add_option("--rho", o.rho, "override [steer].rho");
  cmd->add_option("--aqa", o.aqa, "override [steer].active_queries (on/off)")
      ->check(CLI::IsMember({"on", "off"}));
}

estr::ExperimentConfig resolve(const Overrides& o) {
  estr::ConfigFile file = o.config_path.empty()
                              ? estr::ConfigFile::parse_text("")
                              : estr::ConfigFile::parse_file(o.config_path);
  if (!o.seed.empty()) file.set("run", "seed", o.seed);
  if (!o.out.empty()) file.set("io", "out", o.out);
  if (!o.workers.empty()) file.set("run", "workers", o.workers);
  if (!o.probes.empty()) file.set("verify", "probes", o.probes);
  if (!o.rho.empty()) file.set("steer", "rho", o.rho);
  if (!o.aqa.empty()) file.set("steer", "active_queries", o.aqa);
  return estr::ExperimentConfig::resolve(file);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale laboratory for masked-diffusion decoding"};
  app.require_subcommand(1);

  Overrides o;
  CLI::App* train = app.add_subcommand(
      "train", "train a denoiser on the configured task");
  CLI::App* compare = app.add_subcommand(
      "compare", "decode the eval set with each configured sampler");
  CLI::App* verify = app.add_subcommand(
      "verify", "run the influence-score verification suites");
  CLI::App* bench = app.add_subcommand(
      "bench", "time the restricted backward over an active-set sweep");
  for (CLI::App* cmd : {train, compare, verify, bench}) add_common(cmd, o);
  verify->add_option("--probes", o.probes, "override [verify].probes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const estr::ExperimentConfig cfg = resolve(o);
    if (train->parsed()) return estr::cli::run_train(cfg);
    if (compare->parsed()) return estr::cli::run_compare(cfg);
    if (verify->parsed()) return estr::cli::run_verify(cfg);
    return estr::cli::run_bench(cfg);
  } catch (const estr::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const estr::ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const estr::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const estr::Error& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return 2;
  }
}
