// scatloc command line front end.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 I/O error,
// 4 solver or benchmark arm failure, 1 anything else.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "scatloc/cli.hpp"
#include "scatloc/version.hpp"

namespace {

unsigned default_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n ? n : 1;
}

std::uint64_t pick_seed(bool seed_given, std::uint64_t seed_flag, const std::string& config_text,
                        const std::string& config_path) {
  if (seed_given) return seed_flag;
  const scatloc::ConfigMap cfg = scatloc::ConfigMap::parse(config_text, config_path);
  return scatloc::protocol_seed(cfg, 1);
}

int status_code(const scatloc::RunManifest& m) {
  return m.status == "ok" ? 0 : 4;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"scattering-aware single molecule simulation and reconstruction"};
  app.set_version_flag("--version", std::string("scatloc ") + scatloc::version_string);
  app.require_subcommand(1);

  std::string config_path, frames_path, out_dir, out_file, truth_dir, recon_dir;
  std::string positions_csv, manifest_path, dtype_name = "f64";
  std::uint64_t seed = 1;
  unsigned threads = default_threads();
  bool frozen_positions = false, frozen_amplitudes = false;

  CLI::App* sim = app.add_subcommand("simulate", "synthesize a dataset from a protocol config");
  sim->add_option("--config", config_path, "protocol config file")->required();
  sim->add_option("--out", out_dir, "output directory")->required();
  CLI::Option* sim_seed = sim->add_option("--seed", seed, "override experiment.seed");
  sim->add_option("--threads", threads, "worker threads");
  sim->add_option("--counts-dtype", dtype_name, "frame sample type: f64 or u32")
      ->check(CLI::IsMember({"f64", "u32"}));

  CLI::App* rec = app.add_subcommand("reconstruct", "joint reconstruction from a frame stack");
  rec->add_option("--config", config_path, "protocol config file")->required();
  rec->add_option("--frames", frames_path, "input frame stack")->required();
  rec->add_option("--out", out_dir, "output directory")->required();
  CLI::Option* rec_seed = rec->add_option("--seed", seed, "override experiment.seed");
  rec->add_option("--threads", threads, "worker threads");
  rec->add_option("--positions", positions_csv,
                  "fluorophore CSV used instead of the built-in localizer");
  rec->add_flag("--frozen-positions", frozen_positions, "do not update molecule positions");
  rec->add_flag("--frozen-amplitudes", frozen_amplitudes, "do not update molecule amplitudes");

  CLI::App* eval = app.add_subcommand("evaluate", "compare a reconstruction against truth");
  eval->add_option("--truth", truth_dir, "directory with truth_potential.vol and truth CSV")
      ->required();
  eval->add_option("--recon", recon_dir, "directory with volume.vol and fluorophores.csv")
      ->required();
  eval->add_option("--out", out_file, "metrics JSON path")->required();
  eval->add_option("--config", config_path, "optional protocol config for metric parameters");

  CLI::App* bench = app.add_subcommand("bench", "simulate, reconstruct, and score in one run");
  bench->add_option("--config", config_path, "protocol config file")->required();
  bench->add_option("--out", out_dir, "output directory")->required();
  CLI::Option* bench_seed = bench->add_option("--seed", seed, "override experiment.seed");
  bench->add_option("--threads", threads, "worker threads");

  CLI::App* rerun = app.add_subcommand("rerun", "re-execute a recorded run from its manifest");
  rerun->add_option("--manifest", manifest_path, "manifest.json from a previous run")->required();
  rerun->add_option("--out", out_dir, "output directory")->required();
  CLI::Option* rerun_threads = rerun->add_option("--threads", threads, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) {
      const std::string text = scatloc::detail::read_text_file(config_path);
      const std::uint64_t s = pick_seed(sim_seed->count() > 0, seed, text, config_path);
      const scatloc::FrameDtype dtype =
          dtype_name == "u32" ? scatloc::FrameDtype::u32 : scatloc::FrameDtype::f64;
      return status_code(
          scatloc::cmd_simulate(text, config_path, out_dir, s, threads, dtype));
    }
    if (rec->parsed()) {
      const std::string text = scatloc::detail::read_text_file(config_path);
      const std::uint64_t s = pick_seed(rec_seed->count() > 0, seed, text, config_path);
      scatloc::ReconstructOptions options;
      options.positions_csv = positions_csv;
      options.frozen_positions = frozen_positions;
      options.frozen_amplitudes = frozen_amplitudes;
      return status_code(scatloc::cmd_reconstruct(text, config_path, frames_path, out_dir, s,
                                                  threads, options));
    }
    if (eval->parsed()) {
      std::string text;
      if (!config_path.empty()) text = scatloc::detail::read_text_file(config_path);
      return status_code(scatloc::cmd_evaluate(truth_dir, recon_dir, out_file, text,
                                               config_path.empty() ? "<none>" : config_path));
    }
    if (bench->parsed()) {
      const std::string text = scatloc::detail::read_text_file(config_path);
      const std::uint64_t s = pick_seed(bench_seed->count() > 0, seed, text, config_path);
      return status_code(scatloc::cmd_bench(text, config_path, out_dir, s, threads));
    }
    if (rerun->parsed()) {
      const unsigned t = rerun_threads->count() > 0 ? threads : 0;
      return status_code(scatloc::run_from_manifest(manifest_path, out_dir, t));
    }
  } catch (const scatloc::config_error& e) {
    scatloc::log_line("error", "cli", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    scatloc::log_line("error", "cli", e.what());
    return 2;
  } catch (const scatloc::placement_error& e) {
    scatloc::log_line("error", "cli", e.what());
    return 2;
  } catch (const scatloc::io_error& e) {
    scatloc::log_line("error", "cli", e.what());
    return 3;
  } catch (const scatloc::solver_error& e) {
    scatloc::log_line("error", "cli", e.what());
    return 4;
  } catch (const std::exception& e) {
    scatloc::log_line("error", "cli", e.what());
    return 1;
  }
  return 1;
}
