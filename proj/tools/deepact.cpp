#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "deepact/pipeline.hpp"

using namespace deepact;

namespace {

enum Exit { kOk = 0, kValidation = 1, kRuntime = 2 };

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
  bool verbose = false;
  bool allow_stale = false;
  std::optional<std::size_t> agents;
  std::string data, profiles, generated, truth, checkpoint;
};

PipelineConfig resolve_config(const Args& a) {
  PipelineConfig c = a.config.empty() ? PipelineConfig{} : load_pipeline_config(a.config);
  if (a.seed) c.seed = *a.seed;
  if (!a.out.empty()) c.artifacts = a.out;
  if (a.agents) c.synth.agents = *a.agents;
  c.validate();
  return c;
}

StageOptions stage_options(const Args& a) {
  StageOptions o;
  o.allow_stale = a.allow_stale;
  o.verbosity = a.quiet ? Verbosity::Quiet : a.verbose ? Verbosity::Verbose : Verbosity::Normal;
  o.data = a.data;
  o.profiles = a.profiles;
  o.generated = a.generated;
  o.truth = a.truth;
  o.checkpoint = a.checkpoint;
  return o;
}

void print_manifest(const RunManifest& m, const StageOptions& o) {
  if (o.verbosity == Verbosity::Quiet) return;
  std::cout << m.stage << " " << m.config_hash << " " << m.outputs.size() << " outputs " << std::fixed
            << std::setprecision(2) << m.wall_seconds << " s\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Activity chain synthesis, balancing, location assignment and evaluation"};
  app.require_subcommand(1);
  Args a;
  app.add_option("--config", a.config, "YAML pipeline config")->check(CLI::ExistingFile);
  app.add_option("--seed", a.seed, "Global seed (overrides the config)");
  app.add_option("--out", a.out, "Artifact root directory (overrides paths.artifacts)");
  auto* quiet = app.add_flag("--quiet,-q", a.quiet, "Only print errors");
  app.add_flag("--verbose,-v", a.verbose, "Per-epoch and per-stage detail")->excludes(quiet);
  app.add_flag("--allow-stale", a.allow_stale,
               "Fall back to upstream artifacts produced under a different config hash (with a warning)");
  app.add_option("--agents", a.agents, "Number of synthetic agents (overrides synth.agents)");
  app.fallthrough();

  std::map<std::string, CLI::App*> subs;
  const std::map<std::string, std::string> help{
      {"synth", "Synthesize a survey, schema, zones and reference trajectories"},
      {"ingest", "Load the survey CSV and split it into train/val/test"},
      {"balance", "Rake the training set and resample it"},
      {"train", "Train the transformer"},
      {"finetune", "Fine-tune the trained model on a regional sample"},
      {"generate", "Generate activity chains for a profile file"},
      {"assign", "Assign zones to generated chains and build OD matrices"},
      {"evaluate", "Compare generated chains against the truth set"},
  };
  for (const auto& s : stage_names()) subs[s] = app.add_subcommand(s, help.at(s));
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage in order");

  subs["ingest"]->add_option("--data", a.data, "Survey CSV (default: synth output)")->check(CLI::ExistingFile);
  subs["train"]
      ->add_option("--data", a.data, "Train directly on a survey CSV or sample JSONL, split by the config ratios")
      ->check(CLI::ExistingFile);
  subs["generate"]
      ->add_option("--profiles", a.profiles, "Profile CSV or sample JSONL (default: ingest test split)")
      ->check(CLI::ExistingFile);
  subs["generate"]
      ->add_option("--checkpoint", a.checkpoint, "Model checkpoint (default: train output)")
      ->check(CLI::ExistingFile);
  subs["evaluate"]
      ->add_option("--generated", a.generated, "Generated chains, CSV or JSONL (default: generate output)")
      ->check(CLI::ExistingFile);
  subs["evaluate"]
      ->add_option("--truth", a.truth, "Truth chains, CSV or JSONL (default: ingest test split)")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    const auto config = resolve_config(a);
    const auto options = stage_options(a);
    if (pipeline->parsed()) {
      for (const auto& m : run_pipeline(config, options)) print_manifest(m, options);
    } else {
      for (const auto& [name, sub] : subs) {
        if (sub->parsed()) print_manifest(run_stage(name, config, options), options);
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
