// Command-line front end for the robust subspace recovery toolkit.
//
// Subcommands: gen, run, noise-sweep, phase, compare, diagnose.
// Exit codes: 0 success, 2 config error, 3 regime violation outside a sweep,
// 4 estimator failure.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "rsr/rsr.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string out_dir = ".";
  std::string format = "csv";
  bool no_timestamp = false;
  int threads = 1;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "JSON experiment spec")->required();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--format", args.format, "csv|json")
      ->check(CLI::IsMember({"csv", "json"}));
  cmd->add_flag("--no-timestamp", args.no_timestamp,
                "suppress timestamp header and wall-clock columns");
  cmd->add_option("--threads", args.threads, "worker threads for grid cells")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seed", args.seed, "override the spec seed")
      ->each([&args](const std::string&) { args.seed_given = true; });
}

int run_kind(const CommonArgs& args, const std::string& kind) {
  rsr::ExperimentSpec spec = rsr::spec_from_file(args.config);
  spec.kind = kind;
  if (args.seed_given) spec.seed = args.seed;
  rsr::RunOptions opts;
  opts.out_dir = args.out_dir;
  opts.format = args.format;
  opts.no_timestamp = args.no_timestamp;
  opts.threads = args.threads;
  return rsr::execute(spec, opts);
}

int run_gen(const CommonArgs& args) {
  rsr::ExperimentSpec spec = rsr::spec_from_file(args.config);
  if (args.seed_given) spec.seed = args.seed;
  const std::uint64_t inst_seed = rsr::harness_detail::derive_seed(spec.seed, 0, 0);
  rsr::HaystackParams params = rsr::harness_detail::make_params(spec.model, inst_seed);
  auto [data, truth] = rsr::gen_haystack(params);
  const double eps = spec.sweep.epsilon.empty() ? 0.0 : spec.sweep.epsilon.front();
  if (eps > 0.0) {
    rsr::CounterRng rng(inst_seed, 0x6e6f6973);
    auto noisy = rsr::apply_cone_noise(data, truth, eps, rng);
    data = std::move(noisy.first);
    truth = std::move(noisy.second);
  }
  std::filesystem::create_directories(args.out_dir);
  const std::string base = args.out_dir + "/dataset.rsrd";
  rsr::write_dataset_file(base, data, truth.noise_epsilon);
  rsr::write_truth_file(base + ".truth.json", truth);
  if (args.format == "csv") {
    std::ofstream os(args.out_dir + "/dataset.csv");
    rsr::export_dataset_csv(os, data);
  }
  std::cout << "wrote " << base << " (" << data.ambient_dim() << "x" << data.count() << ")\n";
  return 0;
}

int run_diagnose(const CommonArgs& args) {
  rsr::ExperimentSpec spec = rsr::spec_from_file(args.config);
  spec.kind = "diagnose";
  if (args.seed_given) spec.seed = args.seed;
  nlohmann::json report = rsr::diagnose(spec);
  std::filesystem::create_directories(args.out_dir);
  std::ofstream os(args.out_dir + "/report.json");
  os << report.dump(2) << '\n';
  std::cout << report.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rsr: robust subspace recovery experiments (TME / STE)"};
  app.require_subcommand(1);

  CommonArgs args;
  CLI::App* gen = app.add_subcommand("gen", "generate and write a dataset file");
  CLI::App* run = app.add_subcommand("run", "convergence-rate experiment");
  CLI::App* noise = app.add_subcommand("noise-sweep", "noise-level sweep");
  CLI::App* phase = app.add_subcommand("phase", "recovery phase diagram");
  CLI::App* compare = app.add_subcommand("compare", "TME versus TME+STE");
  CLI::App* diag = app.add_subcommand("diagnose", "diagnostics report for one instance");
  for (CLI::App* cmd : {gen, run, noise, phase, compare, diag}) add_common(cmd, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return run_gen(args);
    if (run->parsed()) return run_kind(args, "convergence");
    if (noise->parsed()) return run_kind(args, "noise_sweep");
    if (phase->parsed()) return run_kind(args, "phase_diagram");
    if (compare->parsed()) return run_kind(args, "tme_vs_ste");
    if (diag->parsed()) return run_diagnose(args);
  } catch (const rsr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const rsr::RegimeViolation& e) {
    std::cerr << "regime violation: " << e.what() << '\n';
    return 3;
  } catch (const rsr::InlierTMEFailed& e) {
    std::cerr << "estimator failure: " << e.what() << '\n';
    return 4;
  } catch (const rsr::EstimatorFailure& e) {
    std::cerr << "estimator failure: " << e.what() << '\n';
    return 4;
  } catch (const rsr::DegenerateUpdate& e) {
    std::cerr << "estimator failure: " << e.what() << '\n';
    return 4;
  } catch (const rsr::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
