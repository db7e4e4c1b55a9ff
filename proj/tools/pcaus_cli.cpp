// Command-line driver for the staged experiment pipeline.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "pcaus/experiment/config.hpp"
#include "pcaus/experiment/pipeline.hpp"

namespace {

using nlohmann::json;
namespace ex = pcaus::experiment;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::optional<double> gamma;
  std::string backbone;
  bool print_effective = false;
  bool quiet = false;
};

ex::ExperimentConfig resolve(const Options& o) {
  json j = json::object();
  if (!o.config.empty()) {
    try {
      j = pcaus::data::read_json(o.config);
    } catch (const std::exception& e) {
      throw ex::ConfigError(e.what());
    }
    if (!j.is_object()) throw ex::ConfigError("config file must hold a JSON object");
  }
  if (o.seed) j["seed"] = *o.seed;
  if (!o.output.empty()) j["output_dir"] = o.output;
  if (o.gamma) j["multiscale"]["gammas"] = json::array({*o.gamma});
  if (!o.backbone.empty()) {
    j["backbone"]["variant"] = o.backbone;
    j["backbone"].erase("feature_dim");
  }
  return ex::parse_config(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Staged self-supervised and multi-scale prostate cancer detection experiments"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "JSON experiment configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Experiment seed");
    sub->add_option("--output", opt.output, "Run directory");
    sub->add_option("--gamma", opt.gamma, "Multi-objective weight of the core loss")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--backbone", opt.backbone, "Backbone variant")
        ->check(CLI::IsMember({"resnet18_slim", "resnet18", "vit", "cct", "pvt"}));
    sub->add_flag("--print-effective-config", opt.print_effective, "Print the resolved configuration and exit");
    sub->add_flag("--quiet", opt.quiet, "Suppress progress messages");
  };

  struct Command {
    const char* name;
    const char* help;
    void (*run)(ex::Run&);
  };
  const Command commands[] = {
      {"synth", "Generate or register the dataset", [](ex::Run& r) { r.data_stage(); }},
      {"split", "Build the patient-level fold plan", [](ex::Run& r) { r.split_stage(); }},
      {"pretrain", "Self-supervised encoder pretraining", [](ex::Run& r) { r.pretrain_stage(); }},
      {"features", "Encode every core with the pretrained encoder", [](ex::Run& r) { r.features_stage(); }},
      {"finetune", "ROI-scale classifier training", [](ex::Run& r) {
         r.features_stage();
         r.finetune_stage();
       }},
      {"multiscale", "Core-scale multi-objective training", [](ex::Run& r) {
         r.features_stage();
         r.multiscale_stage();
       }},
      {"evaluate", "Per-fold metrics from stored predictions", [](ex::Run& r) { r.evaluate_stage(); }},
      {"report", "Aggregate metrics into tables", [](ex::Run& r) { r.report_stage(); }},
      {"run-all", "Run every stage in order", [](ex::Run& r) { r.run_all(); }},
  };
  const Command* chosen = nullptr;
  for (const Command& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    sub->callback([&chosen, &c] { chosen = &c; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  ex::ExperimentConfig cfg;
  try {
    cfg = resolve(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  if (opt.print_effective) {
    json eff = ex::effective_config(cfg);
    eff["config_hash"] = ex::config_hash(cfg);
    std::cout << eff.dump(2) << '\n';
    return 0;
  }

  try {
    ex::Run run(cfg, opt.quiet ? nullptr : &std::clog);
    if (std::string(chosen->name) == "run-all") {
      run.run_all();
    } else {
      run.run_guarded([&] { chosen->run(run); });
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
