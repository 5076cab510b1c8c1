// SPDX-License-Identifier: Apache-2.0
//
// ngso-bf command-line runner: scenario dataset generation, MambaBF
// training, beamformer evaluation sweeps, beam-pattern grids and the
// gradient self-check. Every output file embeds the originating config and
// seed; rerunning a command with identical flags reproduces it byte for
// byte.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ngsobf/autodiff.hpp"
#include "ngsobf/beamform.hpp"
#include "ngsobf/gradcheck.hpp"
#include "ngsobf/io.hpp"
#include "ngsobf/mamba.hpp"
#include "ngsobf/parallel.hpp"
#include "ngsobf/scenario.hpp"
#include "ngsobf/signals.hpp"
#include "ngsobf/training.hpp"

namespace fs = std::filesystem;
using namespace ngsobf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitBadConfig = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

struct CommonArgs {
  std::string config_path;
  std::string train_config_path;
  std::string checkpoint_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string csi = "";
  int snapshots = 200;
  std::string method = "all";
  double grid_step = 1.0;
  bool dump_snapshots = false;
};

int env_threads() {
  const char* env = std::getenv("NGSO_BF_THREADS");
  if (env == nullptr) return resolve_threads(0);
  try {
    return resolve_threads(std::stoi(env));
  } catch (const std::exception&) {
    throw std::invalid_argument("NGSO_BF_THREADS must be an integer");
  }
}

ScenarioConfig load_scenario_or_default(const std::string& path) {
  if (path.empty()) return ScenarioConfig{};
  return load_scenario_config(path);
}

TrainConfig load_train_or_default(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  return load_train_config(path);
}

std::set<BeamformerMethod> parse_methods(const std::string& method,
                                         bool have_checkpoint) {
  if (method == "mrc") return {BeamformerMethod::kMrc};
  if (method == "zf") return {BeamformerMethod::kZf};
  if (method == "smi") return {BeamformerMethod::kSmi};
  if (method == "mvdr") return {BeamformerMethod::kMvdr};
  if (method == "mamba") {
    if (!have_checkpoint)
      throw std::invalid_argument("--method mamba requires --checkpoint");
    return {BeamformerMethod::kMambaBf};
  }
  if (method == "all") {
    std::set<BeamformerMethod> m{BeamformerMethod::kMrc, BeamformerMethod::kZf,
                                 BeamformerMethod::kSmi,
                                 BeamformerMethod::kMvdr};
    if (have_checkpoint) m.insert(BeamformerMethod::kMambaBf);
    return m;
  }
  throw std::invalid_argument(
      "--method must be one of mrc|zf|smi|mvdr|mamba|all");
}

void ensure_out_dir(const std::string& out) {
  if (out.empty()) throw std::invalid_argument("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out);
}

/// '#'-prefixed reproducibility header embedded at the top of CSV outputs.
std::string repro_header(const ScenarioConfig& config, std::uint64_t seed,
                         const nlohmann::json& extra = {}) {
  std::string h = "# config: " + to_json(config).dump() + "\n";
  if (!extra.empty()) h += "# run: " + extra.dump() + "\n";
  h += "# seed: " + std::to_string(seed) + "\n";
  return h;
}

nlohmann::json doa_json(const Doa& doa) {
  return {{"az_deg", doa.azimuth_deg}, {"el_deg", doa.elevation_deg}};
}

// -- gen-data -----------------------------------------------------------------

int run_gen_data(const CommonArgs& args) {
  const ScenarioConfig config = load_scenario_or_default(args.config_path);
  TrainConfig tc = load_train_or_default(args.train_config_path);
  if (!args.csi.empty()) tc.csi_mode = csi_mode_from_string(args.csi);
  const std::uint64_t seed = args.seed.value_or(tc.seed);
  ensure_out_dir(args.out_dir);

  nlohmann::json manifest{{"config", to_json(config)},
                          {"train_config", to_json(tc)},
                          {"seed", seed},
                          {"csi_mode", to_string(tc.csi_mode)},
                          {"snapshots", args.snapshots}};
  const auto describe_split = [&](const char* name, std::uint64_t stream,
                                  int count) {
    const std::uint64_t master = derive_seed(seed, stream);
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < count; ++i) {
      const std::uint64_t sample_seed = derive_seed(master, i);
      const Scenario s = sample_scenario(config, sample_seed);
      nlohmann::json row{{"id", i},
                         {"seed", sample_seed},
                         {"desired_doa", doa_json(s.desired_link.doa)}};
      nlohmann::json doas = nlohmann::json::array();
      for (const auto& link : s.interferer_links)
        doas.push_back(doa_json(link.doa));
      row["interferer_doas"] = doas;
      if (args.dump_snapshots) {
        const std::string file =
            std::string(name) + "_" + std::to_string(i) + ".snap";
        write_snapshots(fs::path(args.out_dir) / file,
                        synthesize_snapshots(s, args.snapshots, sample_seed));
        row["file"] = file;
      }
      rows.push_back(std::move(row));
    }
    manifest[name] = std::move(rows);
  };
  describe_split("train", seed_stream::kTrainSplit, tc.n_train);
  describe_split("test", seed_stream::kTestSplit, tc.n_test);

  write_text_file(fs::path(args.out_dir) / "manifest.json",
                  manifest.dump(2) + "\n");
  std::cout << "wrote " << (fs::path(args.out_dir) / "manifest.json").string()
            << "\n";
  return kExitOk;
}

// -- train --------------------------------------------------------------------

int run_train(const CommonArgs& args) {
  const ScenarioConfig config = load_scenario_or_default(args.config_path);
  TrainConfig tc = load_train_or_default(args.train_config_path);
  if (!args.csi.empty()) tc.csi_mode = csi_mode_from_string(args.csi);
  if (args.seed) tc.seed = *args.seed;
  ensure_out_dir(args.out_dir);
  const int threads = env_threads();

  ModelConfig mc;
  mc.array_elements = config.array_mx * config.array_my;
  mc.snapshots = tc.snapshots;
  // Latent width defaults to the reference value but must stay below 2M for
  // small arrays.
  mc.latent_channels = std::min(mc.latent_channels, 2 * mc.array_elements - 1);

  const auto train_set =
      build_dataset(config, tc.n_train,
                    derive_seed(tc.seed, seed_stream::kTrainSplit),
                    tc.csi_mode, tc.snapshots);
  const auto test_set =
      build_dataset(config, tc.n_test,
                    derive_seed(tc.seed, seed_stream::kTestSplit), tc.csi_mode,
                    tc.snapshots);

  ModelParams params = init_model_params(mc, tc.seed);
  const TrainResult result = train(params, train_set, test_set, tc, threads);

  nlohmann::json checkpoint = checkpoint_to_json(params);
  checkpoint["provenance"] = {{"config", to_json(config)},
                              {"train_config", to_json(tc)},
                              {"seed", tc.seed}};
  write_text_file(fs::path(args.out_dir) / "checkpoint.json",
                  checkpoint.dump() + "\n");
  write_text_file(
      fs::path(args.out_dir) / "history.csv",
      history_csv(result, repro_header(config, tc.seed, to_json(tc))));
  std::cout << "wrote checkpoint.json and history.csv under " << args.out_dir
            << "\n";
  if (result.diverged) {
    std::cerr << "training diverged; checkpoint holds the last good epoch\n";
    return kExitNumerical;
  }
  return kExitOk;
}

// -- eval ---------------------------------------------------------------------

int run_eval_mode(const ScenarioConfig& config, const TrainConfig& tc,
                  CsiMode mode, const CommonArgs& args,
                  const ModelParams* params, int threads) {
  const auto test_set =
      build_dataset(config, tc.n_test,
                    derive_seed(tc.seed, seed_stream::kTestSplit), mode,
                    args.snapshots);
  const std::set<BeamformerMethod> methods =
      parse_methods(args.method, params != nullptr);
  const EvalReport report = evaluate(test_set, methods, params, mode, threads);
  nlohmann::json run{{"command", "eval"},
                     {"csi_mode", to_string(mode)},
                     {"snapshots", args.snapshots}};
  const std::string name = "eval_" + to_string(mode) + ".csv";
  write_text_file(
      fs::path(args.out_dir) / name,
      eval_csv(report, methods, repro_header(config, tc.seed, run)));

  nlohmann::json summary{{"config", to_json(config)},
                         {"seed", tc.seed},
                         {"csi_mode", to_string(mode)},
                         {"samples", static_cast<int>(report.rows.size())},
                         {"mean_sinr_in_db", report.mean_in_db}};
  for (const auto& [m, db] : report.mean_out_db)
    summary["mean_sinr_out_db"][to_string(m)] = db;
  write_text_file(
      fs::path(args.out_dir) / ("eval_" + to_string(mode) + "_summary.json"),
      summary.dump(2) + "\n");
  std::cout << "wrote " << name << " under " << args.out_dir << "\n";
  return kExitOk;
}

int run_eval(const CommonArgs& args) {
  const ScenarioConfig config = load_scenario_or_default(args.config_path);
  TrainConfig tc = load_train_or_default(args.train_config_path);
  if (args.seed) tc.seed = *args.seed;
  ensure_out_dir(args.out_dir);
  const int threads = env_threads();

  std::optional<ModelParams> params;
  if (!args.checkpoint_path.empty())
    params = load_checkpoint(args.checkpoint_path);
  if (params &&
      (params->config.array_elements != config.array_mx * config.array_my ||
       params->config.snapshots != args.snapshots))
    throw std::invalid_argument(
        "checkpoint geometry does not match the scenario config / snapshots");

  const ModelParams* p = params ? &*params : nullptr;
  if (!args.csi.empty())
    return run_eval_mode(config, tc, csi_mode_from_string(args.csi), args, p,
                         threads);
  // Default: both CSI conditions, one scatter file each.
  const int a = run_eval_mode(config, tc, CsiMode::kPerfect, args, p, threads);
  const int b =
      run_eval_mode(config, tc, CsiMode::kImperfect, args, p, threads);
  return a != kExitOk ? a : b;
}

// -- beam-pattern ---------------------------------------------------------------

int run_beam_pattern(const CommonArgs& args) {
  const ScenarioConfig config = load_scenario_or_default(args.config_path);
  const std::uint64_t seed = args.seed.value_or(config.seed);
  const CsiMode mode =
      args.csi.empty() ? CsiMode::kPerfect : csi_mode_from_string(args.csi);
  ensure_out_dir(args.out_dir);

  std::optional<ModelParams> params;
  if (!args.checkpoint_path.empty())
    params = load_checkpoint(args.checkpoint_path);
  const std::set<BeamformerMethod> methods =
      parse_methods(args.method, params.has_value());

  // The chosen sample is test sample 0 of this seed, matching row 0 of an
  // eval run with the same seed.
  const std::uint64_t sample_seed =
      derive_seed(derive_seed(seed, seed_stream::kTestSplit), 0);
  const Scenario scenario = sample_scenario(config, sample_seed);
  const SnapshotMatrix snapshots =
      synthesize_snapshots(scenario, args.snapshots, sample_seed);
  const Eigen::VectorXcd h_used =
      mode == CsiMode::kImperfect
          ? perturb_csi(scenario.desired, config.csi_error_variance,
                        sample_seed)
          : scenario.desired.coefficients;
  const Eigen::MatrixXcd h_int = scenario.interference_matrix();

  if (params &&
      (params->config.array_elements != scenario.geometry.element_count() ||
       params->config.snapshots != args.snapshots))
    throw std::invalid_argument(
        "checkpoint geometry does not match the scenario config / snapshots");

  for (BeamformerMethod m : methods) {
    BeamWeights w;
    switch (m) {
      case BeamformerMethod::kMrc:
        w = mrc(h_used);
        break;
      case BeamformerMethod::kZf:
        w = zf(h_used, h_int);
        break;
      case BeamformerMethod::kSmi:
        w = smi(snapshots, h_used);
        break;
      case BeamformerMethod::kMvdr: {
        const Eigen::MatrixXcd r_true =
            scenario.desired.coefficients *
                scenario.desired.coefficients.adjoint() +
            h_int * h_int.adjoint() +
            scenario.noise_power_w *
                Eigen::MatrixXcd::Identity(h_used.size(), h_used.size());
        w = mvdr(r_true, h_used);
        break;
      }
      case BeamformerMethod::kMambaBf:
        w = forward(snapshots, *params, RunMode::kInfer);
        break;
      case BeamformerMethod::kInitial:
        w = {scenario.desired_steering(), BeamformerMethod::kInitial};
        break;
    }

    const BeamPatternGrid grid =
        beam_pattern_grid(scenario.geometry, w, -90.0, 90.0, -90.0, 90.0,
                          args.grid_step, scenario.ut_efficiency);
    nlohmann::json run{{"command", "beam-pattern"},
                       {"method", to_string(m)},
                       {"csi_mode", to_string(mode)},
                       {"grid_step_deg", args.grid_step}};
    const std::string base = "pattern_" + to_string(m);
    write_text_file(fs::path(args.out_dir) / (base + ".csv"),
                    beam_pattern_csv(grid, repro_header(config, seed, run)));

    // Sidecar: ASINR plus gain markers at the exact desired/interferer DOAs
    // (nulls are far narrower than any practical grid step).
    const auto marker = [&](const Doa& doa) {
      const double g =
          beam_gain(scenario.geometry, w, doa, scenario.ut_efficiency);
      nlohmann::json j = doa_json(doa);
      j["gain_db"] = to_db_floored(g);
      return j;
    };
    nlohmann::json sidecar{
        {"config", to_json(config)},
        {"seed", seed},
        {"sample_seed", sample_seed},
        {"csi_mode", to_string(mode)},
        {"method", to_string(m)},
        {"asinr_db", 10.0 * std::log10(std::max(
                                asinr(w, scenario, args.snapshots), 1e-300))},
        {"desired_marker", marker(scenario.desired_link.doa)},
        {"grid_step_deg", args.grid_step}};
    nlohmann::json interferer_markers = nlohmann::json::array();
    for (const auto& link : scenario.interferer_links)
      interferer_markers.push_back(marker(link.doa));
    sidecar["interferer_markers"] = interferer_markers;
    write_text_file(fs::path(args.out_dir) / (base + ".json"),
                    sidecar.dump(2) + "\n");
    std::cout << "wrote " << base << ".csv/.json under " << args.out_dir
              << "\n";
  }
  return kExitOk;
}

// -- gradcheck ------------------------------------------------------------------

int run_gradcheck() {
  const double worst = run_gradient_self_check(std::cout);
  if (!(worst < 1e-4)) {
    std::cerr << "gradcheck FAILED (threshold 1e-4)\n";
    return kExitNumerical;
  }
  return kExitOk;
}

void add_common_flags(CLI::App* cmd, CommonArgs& args, bool train_config,
                      bool checkpoint, bool snapshots, bool csi,
                      bool method = false, bool grid = false) {
  cmd->add_option("--config", args.config_path,
                  "Scenario config JSON (defaults when omitted)");
  if (train_config)
    cmd->add_option("--train-config", args.train_config_path,
                    "Training config JSON (defaults when omitted)");
  if (checkpoint)
    cmd->add_option("--checkpoint", args.checkpoint_path,
                    "Model checkpoint JSON");
  cmd->add_option("--out", args.out_dir, "Output directory");
  cmd->add_option("--seed", args.seed, "Master seed override");
  if (csi)
    cmd->add_option("--csi", args.csi, "CSI condition: perfect|imperfect");
  if (snapshots)
    cmd->add_option("--snapshots", args.snapshots, "Snapshots per sample (L)");
  if (method)
    cmd->add_option("--method", args.method,
                    "Beamformer: mrc|zf|smi|mvdr|mamba|all");
  if (grid)
    cmd->add_option("--grid-step", args.grid_step,
                    "Beam-pattern grid step in degrees");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "ngso-bf: user-terminal receive beamforming for NGSO co-frequency "
      "interference mitigation"};
  app.require_subcommand(1);

  CommonArgs args;
  CLI::App* gen = app.add_subcommand(
      "gen-data",
      "Write a dataset manifest (seeds, DOAs) and optional snapshot dumps");
  add_common_flags(gen, args, true, false, true, true);
  gen->add_flag("--dump-snapshots", args.dump_snapshots,
                "Also write per-sample binary snapshot files");

  CLI::App* train_cmd = app.add_subcommand(
      "train", "Train MambaBF; writes checkpoint.json and history.csv");
  add_common_flags(train_cmd, args, true, false, false, true);

  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "SINR_in vs SINR_out sweep; one scatter CSV per CSI condition");
  add_common_flags(eval_cmd, args, true, true, true, true, true);

  CLI::App* pattern = app.add_subcommand(
      "beam-pattern",
      "Per-method beam-pattern grid CSV + sidecar JSON for one sample");
  add_common_flags(pattern, args, false, true, true, true, true, true);

  app.add_subcommand("gradcheck",
                     "Check tape gradients against central differences");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitBadConfig;
  }

  try {
    if (gen->parsed()) return run_gen_data(args);
    if (train_cmd->parsed()) return run_train(args);
    if (eval_cmd->parsed()) return run_eval(args);
    if (pattern->parsed()) return run_beam_pattern(args);
    return run_gradcheck();
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitBadConfig;
  } catch (const std::runtime_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  }
}
