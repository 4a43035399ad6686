// Command-line front end: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "hemafuse/pipeline.hpp"
#include "hemafuse/version.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumerical = 4 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string arch;
  std::string out;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& about, Options& o,
                      bool needs_arch) {
  auto* sub = app.add_subcommand(name, about);
  sub->add_option("--config", o.config, "pipeline config file")->required();
  sub->add_option("--seed", o.seed, "override the config seed");
  if (needs_arch)
    sub->add_option("--arch", o.arch, "architecture")
        ->required()
        ->transform(CLI::IsMember({"a", "b", "c"}, CLI::ignore_case));
  return sub;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace hemafuse;
  CLI::App app{"Hybrid CNN+GRU deep-ensemble classifiers with sum-rule score fusion"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;
  auto* synth = add_command(app, "synth", "generate the synthetic two-class dataset", o, false);
  auto* prepare = add_command(app, "prepare", "scan the dataset and write the split manifest", o, false);
  auto* augment = add_command(app, "augment", "expand the training split", o, false);
  auto* tune = add_command(app, "tune", "Bayesian optimization of one architecture's hyperparameters", o, true);
  auto* train = add_command(app, "train", "train the deep ensemble of one architecture", o, true);
  auto* evaluate = add_command(app, "evaluate", "fuse the three ensembles and write metrics", o, false);
  auto* plot = add_command(app, "plot-data", "write ROC points and training curves as CSV", o, false);
  plot->add_option("--out", o.out, "output directory (default: <workdir>/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const auto cfg = load_pipeline_config(o.config, o.seed);
    auto& log = std::cout;
    const auto arch = o.arch.empty() ? ArchId::A : arch_from_string(o.arch);
    if (synth->parsed()) cmd_synth(cfg, log);
    else if (prepare->parsed()) cmd_prepare(cfg, log);
    else if (augment->parsed()) cmd_augment(cfg, log);
    else if (tune->parsed()) cmd_tune(cfg, arch, log);
    else if (train->parsed()) cmd_train(cfg, arch, log);
    else if (evaluate->parsed()) cmd_evaluate(cfg, log);
    else if (plot->parsed()) cmd_plot_data(cfg, o.out.empty() ? cfg.workdir / "plots" : std::filesystem::path(o.out), log);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
