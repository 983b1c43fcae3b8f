#include <iostream>

#include <CLI11.hpp>

#include "linresp/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Linear response experiments for hyperbolic and near-hyperbolic maps"};
  app.require_subcommand(1);
  std::string config_path;
  std::string output;
  for (const auto& [name, runner] : linresp::subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("config", config_path, "JSON experiment config")->required();
    sub->add_option("-o,--output", output, "output directory (overrides config and LINRESP_OUTPUT_DIR)");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string name = app.get_subcommands().front()->get_name();

  try {
    linresp::ExperimentConfig cfg = linresp::load_config(config_path);
    if (!output.empty()) {
      cfg.output_directory = output;
      unsetenv(linresp::kOutputDirEnv);
    }
    const linresp::RunResult r = linresp::run_experiment(name, cfg);
    if (r.status != 0) {
      std::cerr << "linresp " << name << ": failed, see " << (r.directory / "error.json").string() << "\n";
      return r.status;
    }
    std::cout << r.directory.string() << "\n";
    for (const auto& f : r.files) std::cout << "  " << f << "\n";
    std::cout << "  manifest.json\n";
    return 0;
  } catch (const linresp::Error& e) {
    std::cerr << "linresp " << name << ": " << linresp::to_string(e.kind()) << ": " << e.what() << "\n";
    return linresp::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "linresp " << name << ": " << e.what() << "\n";
    return 1;
  }
}
