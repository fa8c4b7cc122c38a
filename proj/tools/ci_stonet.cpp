// Batch experiment runner: generate / train / estimate / diagnose /
// bootstrap / benchmark over a key-value config file.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "cistonet/pipeline.hpp"
#include "cistonet/util.hpp"

using namespace cistonet;

namespace {

void print_error(const char* kind, const std::string& what) {
  nlohmann::json j{{"error", {{"kind", kind}, {"message", what}}}};
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CI-StoNet: causal-effect estimation with imputed confounders"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed_override;

  app.add_option("--config", config_path, "experiment config file")->required();
  app.add_option("--seed", seed_override, "override [run] master_seed");
  app.add_option("--out", out_dir, "output directory (default .)");

  const char* subs[] = {"generate", "train", "estimate", "diagnose", "bootstrap",
                        "benchmark"};
  for (const char* s : subs) app.add_subcommand(s);

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    ExperimentConfig cfg = load_config_file(config_path);
    if (seed_override) cfg.master_seed = *seed_override;
    const std::uint64_t master = cfg.master_seed;

    if (cmd == "generate") {
      run_generate(cfg, out_dir, master);
    } else if (cmd == "train") {
      run_train(cfg, out_dir, master);
    } else if (cmd == "estimate") {
      run_estimate(cfg, out_dir, master);
    } else if (cmd == "diagnose") {
      run_diagnose(cfg, out_dir, master);
    } else if (cmd == "bootstrap") {
      run_bootstrap(cfg, out_dir, master);
    } else if (cmd == "benchmark") {
      run_benchmark(cfg, out_dir, env_thread_cap());
    }
  } catch (const ConfigError& e) {
    print_error("config", e.what());
    return 2;
  } catch (const IoError& e) {
    print_error("io", e.what());
    return 2;
  } catch (const DimensionError& e) {
    print_error("dimension", e.what());
    return 2;
  } catch (const NumericError& e) {
    print_error("numeric", e.what());
    return 3;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
