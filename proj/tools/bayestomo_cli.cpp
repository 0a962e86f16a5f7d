// bayestomo: reconstruct | resolution-map | sweep | validate

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bayestomo/bayestomo.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config, "experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", args.out, "output directory (default: config output_dir)");
  sub->add_option("--seed", args.seed, "override the config seed");
}

int run(const CommonArgs& args,
        const std::function<void(const bayestomo::ExperimentConfig&, const std::filesystem::path&)>& cmd) {
  try {
    auto cfg = bayestomo::load_config(args.config);
    if (args.seed) cfg.seed = *args.seed;
    const std::filesystem::path out = args.out.empty() ? cfg.output_dir : args.out;
    cmd(cfg, out);
    return 0;
  } catch (const bayestomo::DegeneracyError& e) {
    std::cerr << "error: " << e.what() << '\n';
    const auto& d = e.direction();
    if (d.size() > 0) {
      Eigen::Index k = 0;
      d.cwiseAbs().maxCoeff(&k);
      std::cerr << "offending direction: " << d.size() << "-vector, largest component at node " << k << '\n';
    }
    return bayestomo::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return bayestomo::exit_code_for(e);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian limited-data tomography: MAP estimate, MAP covariance and spatial resolution"};
  app.set_version_flag("--version", std::string(bayestomo::kVersion));
  app.require_subcommand(1);

  CommonArgs rec, res, swp, val;
  add_common(app.add_subcommand("reconstruct", "MAP estimate and posterior variance"), rec);
  add_common(app.add_subcommand("resolution-map", "per-node resolution from the MAP covariance"), res);
  add_common(app.add_subcommand("sweep", "probe-node resolution over beam count"), swp);
  add_common(app.add_subcommand("validate", "Monte Carlo check of the closed-form covariances"), val);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  using bayestomo::ExperimentConfig;
  using Path = std::filesystem::path;
  if (app.got_subcommand("reconstruct")) {
    return run(rec, [](const ExperimentConfig& c, const Path& o) { bayestomo::cmd_reconstruct(c, o); });
  }
  if (app.got_subcommand("resolution-map")) {
    return run(res, [](const ExperimentConfig& c, const Path& o) { bayestomo::cmd_resolution_map(c, o); });
  }
  if (app.got_subcommand("sweep")) {
    return run(swp, [](const ExperimentConfig& c, const Path& o) {
      const auto r = bayestomo::cmd_sweep(c, o);
      for (const auto& s : r.summary) {
        std::cout << "d_corr " << s.d_corr << "  beams " << s.count << "  delta " << s.delta_mean
                  << "  [" << s.delta_min << ", " << s.delta_max << "]  prior " << s.delta_prior << '\n';
      }
    });
  }
  return run(val, [](const ExperimentConfig& c, const Path& o) {
    const auto r = bayestomo::cmd_validate(c, o);
    std::cout << "Gamma_b   rel. error " << r.gamma_b_error << '\n'
              << "Gamma_MAP rel. error " << r.gamma_map_error << (r.underpowered ? "  (underpowered)" : "")
              << '\n';
  });
}
