#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "scatloc/cli.hpp"

using namespace scatloc;
namespace fs = std::filesystem;

namespace {

// self-cleaning scratch tree per test case
struct TempTree {
  fs::path root;
  explicit TempTree(const std::string& tag) {
    root = fs::temp_directory_path() / ("scatloc_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TempTree() {
    std::error_code ec;
    fs::remove_all(root, ec);
  }
  std::string dir(const std::string& name) const { return (root / name).string(); }
  std::string file(const std::string& rel) const { return (root / rel).string(); }
};

const std::string tiny_config = R"([grid]
nx = 10
ny = 10
nz = 6
spacing_um = 0.1

[phantom]
frames = 4
mean_amplitude = 400
delta_ri = 0.03

[background]
level = 4

[preprocess]
estimate_background = false

[model]
solver_tol = 1e-7

[optimizer]
outer_iterations = 1
objective_tolerance = 0
newton_steps = 1
position_steps = 1
fista_steps = 2
)";

std::map<std::string, std::string> output_hashes(const RunManifest& m) {
  std::map<std::string, std::string> out;
  for (const ManifestEntry& e : m.outputs) out[fs::path(e.path).filename().string()] = e.sha256;
  return out;
}

nlohmann::json parse_json_file(const std::string& path) {
  return nlohmann::json::parse(scatloc::detail::read_text_file(path));
}

} // namespace

TEST_CASE("config schema rejects unknown keys and bad values", "[cli]") {
  const ConfigMap ok = ConfigMap::parse(tiny_config, "tiny.cfg");
  (void)load_protocol(ok);
  (void)protocol_seed(ok, 1);
  CHECK_NOTHROW(ok.reject_unknown());

  const ConfigMap typo =
      ConfigMap::parse(tiny_config + "\n[optimizer]\nouter_iters = 3\n", "tiny.cfg");
  (void)load_protocol(typo);
  (void)protocol_seed(typo, 1);
  CHECK_THROWS_WITH(typo.reject_unknown(), Catch::Matchers::ContainsSubstring("unknown key"));

  CHECK_THROWS_AS(ConfigMap::parse("[a]\nx = 1\nx = 2\n", "dup.cfg"), config_error);

  const ConfigMap bad_num = ConfigMap::parse("[model]\nsolver_tol = fast\n", "bad.cfg");
  CHECK_THROWS_AS(load_protocol(bad_num), config_error);

  const ConfigMap bad_scheme = ConfigMap::parse("[model]\nsolver_scheme = cg\n", "bad.cfg");
  CHECK_THROWS_AS(load_protocol(bad_scheme), config_error);

  const ConfigMap zero_frames = ConfigMap::parse("[phantom]\nframes = 0\n", "bad.cfg");
  CHECK_THROWS_AS(load_protocol(zero_frames), std::invalid_argument);
}

TEST_CASE("simulate writes a hashed deterministic bundle", "[cli]") {
  TempTree scratch("sim");
  const RunManifest m1 = cmd_simulate(tiny_config, "tiny.cfg", scratch.dir("a"), 7, 1);
  CHECK(m1.command == "simulate");
  CHECK(m1.status == "ok");
  REQUIRE(m1.outputs.size() == 4);
  for (const ManifestEntry& e : m1.outputs) {
    CHECK(e.sha256.size() == 64);
    CHECK(fs::exists(fs::path(scratch.dir("a")) / e.path));
  }

  const auto truth = read_volume(scratch.file("a/truth_potential.vol"));
  CHECK(truth.grid.nx() == 10);
  CHECK(truth.grid.nz() == 6);
  const FrameStack stack = read_frame_stack(scratch.file("a/frames.stack"));
  REQUIRE(stack.frames.size() == 4);
  CHECK(stack.config.camera_counts[0] == 10);
  for (const Frame& frame : stack.frames) {
    CHECK(frame.background.size() == frame.values.size());
    for (double v : frame.values) {
      CHECK(v >= 0.0);
      CHECK(v == std::floor(v)); // Poisson counts
    }
  }
  CHECK(read_fluorophores_csv(scratch.file("a/truth_fluorophores.csv")).size() == 4);

  const RunManifest m2 = cmd_simulate(tiny_config, "tiny.cfg", scratch.dir("b"), 7, 1);
  CHECK(output_hashes(m1) == output_hashes(m2));

  const RunManifest m3 = cmd_simulate(tiny_config, "tiny.cfg", scratch.dir("c"), 8, 1);
  CHECK(output_hashes(m1)["frames.stack"] != output_hashes(m3)["frames.stack"]);

  const RunManifest loaded = read_manifest(scratch.file("a/manifest.json"));
  CHECK(loaded.command == "simulate");
  CHECK(loaded.seed == 7);
  CHECK(loaded.config_text == tiny_config);
}

TEST_CASE("reconstruct reruns from its manifest with identical hashes", "[cli]") {
  TempTree scratch("rec");
  cmd_simulate(tiny_config, "tiny.cfg", scratch.dir("sim"), 7, 1);

  const RunManifest r1 = cmd_reconstruct(tiny_config, "tiny.cfg", scratch.file("sim/frames.stack"),
                                         scratch.dir("rec_a"), 7, 1);
  CHECK(r1.command == "reconstruct");
  CHECK(r1.status == "ok");
  for (const char* name : {"volume.vol", "fluorophores.csv", "history.csv", "reconstruction.json"})
    CHECK(fs::exists(fs::path(scratch.dir("rec_a")) / name));

  const std::string history = detail::read_text_file(scratch.file("rec_a/history.csv"));
  CHECK(history.rfind("outer,block,objective,data_term,tv_term\n", 0) == 0);
  CHECK(std::count(history.begin(), history.end(), '\n') >= 3);

  const nlohmann::json report = parse_json_file(scratch.file("rec_a/reconstruction.json"));
  CHECK(report.at("kept_frames").size() >= 1);
  CHECK(report.contains("converged"));
  // the KL data term is unbounded below, so only finiteness is meaningful here
  CHECK(std::isfinite(report.at("final_objective").get<double>()));

  const auto volume = read_volume(scratch.file("rec_a/volume.vol"));
  CHECK(volume.grid.nx() == 10);
  for (double v : volume.values) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }

  const RunManifest r2 =
      run_from_manifest(scratch.file("rec_a/manifest.json"), scratch.dir("rec_b"));
  CHECK(output_hashes(r1) == output_hashes(r2));
}

TEST_CASE("frozen positions pass truth through untouched", "[cli]") {
  TempTree scratch("frozen");
  cmd_simulate(tiny_config, "tiny.cfg", scratch.dir("sim"), 11, 1);
  const FluorophoreSet truth = read_fluorophores_csv(scratch.file("sim/truth_fluorophores.csv"));

  ReconstructOptions options;
  options.positions_csv = scratch.file("sim/truth_fluorophores.csv");
  options.frozen_positions = true;
  options.frozen_amplitudes = true;
  const RunManifest m =
      cmd_reconstruct(tiny_config, "tiny.cfg", scratch.file("sim/frames.stack"),
                      scratch.dir("rec"), 11, 1, options);
  CHECK(m.args.count("positions") == 1);
  CHECK(m.args.count("frozen-positions") == 1);

  const FluorophoreSet out = read_fluorophores_csv(scratch.file("rec/fluorophores.csv"));
  REQUIRE(out.size() == truth.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].position == truth[i].position);
    CHECK(out[i].amplitude == truth[i].amplitude);
  }
}

TEST_CASE("evaluate reports metrics and enforces the grid contract", "[cli]") {
  TempTree scratch("eval");
  cmd_simulate(tiny_config, "tiny.cfg", scratch.dir("sim"), 7, 1);

  // truth evaluated against itself is a perfect reconstruction
  fs::create_directories(scratch.dir("self"));
  fs::copy_file(scratch.file("sim/truth_potential.vol"), scratch.file("self/volume.vol"));
  fs::copy_file(scratch.file("sim/truth_fluorophores.csv"), scratch.file("self/fluorophores.csv"));
  const RunManifest m =
      cmd_evaluate(scratch.dir("sim"), scratch.dir("self"), scratch.file("self_eval.json"),
                   tiny_config, "tiny.cfg");
  CHECK(m.command == "evaluate");
  const nlohmann::json j = parse_json_file(scratch.file("self_eval.json"));
  CHECK(j.at("ssim").get<double>() == Catch::Approx(1.0).margin(1e-12));
  CHECK(j.at("matched").get<std::size_t>() == 4);
  CHECK(j.at("rmse_3d_um").get<double>() == 0.0);
  CHECK(fs::exists(scratch.file("self_eval.json.manifest.json")));

  // wrong grid in the reconstruction directory
  fs::create_directories(scratch.dir("wrong"));
  write_volume(scratch.file("wrong/volume.vol"),
               ScatteringVolume(make_grid({4, 4, 4}, {0.1, 0.1, 0.1})));
  fs::copy_file(scratch.file("sim/truth_fluorophores.csv"),
                scratch.file("wrong/fluorophores.csv"));
  CHECK_THROWS_AS(cmd_evaluate(scratch.dir("sim"), scratch.dir("wrong"),
                               scratch.file("bad_eval.json")),
                  std::invalid_argument);
}

TEST_CASE("missing or conflicting inputs fail cleanly", "[cli]") {
  TempTree scratch("fail");
  cmd_simulate(tiny_config, "tiny.cfg", scratch.dir("sim"), 7, 1);

  CHECK_THROWS_AS(cmd_reconstruct(tiny_config, "tiny.cfg", scratch.file("sim/nope.stack"),
                                  scratch.dir("rec"), 7, 1),
                  io_error);

  // positions file with the wrong row count
  FluorophoreSet two;
  two.molecules.push_back({{0.1, 0.1, 0.3}, 100.0});
  two.molecules.push_back({{0.2, 0.2, 0.3}, 100.0});
  write_fluorophores_csv(scratch.file("two.csv"), two);
  ReconstructOptions options;
  options.positions_csv = scratch.file("two.csv");
  CHECK_THROWS_AS(cmd_reconstruct(tiny_config, "tiny.cfg", scratch.file("sim/frames.stack"),
                                  scratch.dir("rec"), 7, 1, options),
                  config_error);

  // config sensor block that contradicts the frames file
  const std::string conflicted = tiny_config + "\n[sensor]\npixel_pitch_um = 0.2\n";
  CHECK_THROWS_AS(cmd_reconstruct(conflicted, "tiny.cfg", scratch.file("sim/frames.stack"),
                                  scratch.dir("rec"), 7, 1),
                  config_error);

  // manifest with a command nobody implements
  RunManifest bogus;
  bogus.command = "transmogrify";
  bogus.config_text = tiny_config;
  write_manifest(scratch.file("bogus.json"), bogus);
  CHECK_THROWS_AS(run_from_manifest(scratch.file("bogus.json"), scratch.dir("rec")), io_error);
}

TEST_CASE("bench runs a single arm end to end", "[cli]") {
  TempTree scratch("bench");
  const std::string config = tiny_config + "\n[experiment]\narms = init-only\n";
  const RunManifest m = cmd_bench(config, "tiny.cfg", scratch.dir("out"), 7, 1);
  CHECK(m.command == "bench");
  CHECK(m.status == "ok");

  const nlohmann::json j = parse_json_file(scratch.file("out/report.json"));
  REQUIRE(j.at("arms").size() == 1);
  const nlohmann::json& arm = j.at("arms")[0];
  CHECK(arm.at("name") == "init-only");
  CHECK(arm.at("completed").get<bool>());
  CHECK(arm.contains("ssim"));

  CHECK(fs::exists(scratch.file("out/truth_xy.png")));
  CHECK(fs::exists(scratch.file("out/init-only_xz.png")));
  CHECK(fs::file_size(scratch.file("out/truth_xy.png")) > 0);
  CHECK(m.outputs.size() == 1 + 6); // report + two volumes, three views each
}
