#include <iostream>

#include <CLI11.hpp>

#include "d2r/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Dual-regularized adversarial training for a guide/target model pair"};
  app.require_subcommand(1);

  std::string config, checkpoint, guide, generator = "pgd", out_csv, metrics, out_dir = ".", fault;

  auto* train = app.add_subcommand("train", "Train the guide/target pair and write metrics and checkpoints");
  train->add_option("config", config, "Run configuration (INI)")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  evaluate->add_option("config", config, "Run configuration (INI)")->required();
  evaluate->add_option("checkpoint", checkpoint, "Model checkpoint")->required();

  auto* attack = app.add_subcommand("attack", "Export adversarial versions of the test split as CSV");
  attack->add_option("config", config, "Run configuration (INI)")->required();
  attack->add_option("checkpoint", checkpoint, "Model under attack")->required();
  attack->add_option("--generator", generator, "fgsm, pgd, trades or cag")->capture_default_str();
  attack->add_option("--guide", guide, "Guide checkpoint, required for cag");
  attack->add_option("-o,--out", out_csv, "Output CSV")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Check every gradient rule against finite differences");
  gradcheck->add_option("--fault", fault, "Corrupt the gradient rule of one operation")->group("");

  auto* plots = app.add_subcommand("export-plots", "Turn a metrics file into plot-ready CSV tables");
  plots->add_option("metrics", metrics, "Metrics CSV")->required();
  plots->add_option("-o,--out-dir", out_dir, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : d2r::cli::kConfig;
  }

  if (*train) return d2r::cli::run_train(config, std::cout, std::cerr);
  if (*evaluate) return d2r::cli::run_evaluate(config, checkpoint, std::cout, std::cerr);
  if (*attack) return d2r::cli::run_attack(config, checkpoint, generator, out_csv, guide, std::cout, std::cerr);
  if (*gradcheck) return d2r::cli::run_gradcheck(std::cout, std::cerr, fault);
  return d2r::cli::run_export_plots(metrics, out_dir, std::cout, std::cerr);
}
