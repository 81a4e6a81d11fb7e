#include "deepact/pipeline.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "deepact/metrics.hpp"
#include "deepact/model/checkpoint.hpp"
#include "deepact/model/train.hpp"

namespace deepact {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config file

namespace {

// Reads one YAML mapping, remembering which keys were consumed so unknown
// ones can be reported.
class Section {
 public:
  Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsMap()) throw ConfigError(where() + "must be a mapping");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!node_ || !node_[key]) return;
    try {
      out = node_[key].as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError("config key " + path_ + key + " has the wrong type");
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(node_ ? node_[key] : YAML::Node(), path_ + key + ".");
  }

  void finish() const {
    if (!node_) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError("unknown config key " + path_ + key);
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config root " : "config key " + path_.substr(0, path_.size() - 1) + " "; }
  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

fs::path resolve(const std::string& p, const fs::path& base) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

PipelineConfig pipeline_config_from_yaml_text(const std::string& text, const fs::path& base) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  PipelineConfig c;
  Section top(root, "");
  top.get("seed", c.seed);
  {
    auto s = top.child("paths");
    std::string artifacts = c.artifacts.string(), data, schema, zones;
    s.get("artifacts", artifacts);
    s.get("data", data);
    s.get("schema", schema);
    s.get("zones", zones);
    s.finish();
    c.artifacts = resolve(artifacts, base);
    c.data = resolve(data, base);
    c.schema = resolve(schema, base);
    c.zones = resolve(zones, base);
  }
  {
    auto s = top.child("synth");
    s.get("agents", c.synth.agents);
    s.get("grammar", c.synth.grammar);
    s.get("city_seed", c.synth.city_seed);
    s.finish();
    if (c.synth.grammar != "reference" && c.synth.grammar != "shifted") {
      c.synth.grammar = resolve(c.synth.grammar, base).string();
    }
  }
  {
    auto s = top.child("ingest");
    std::vector<double> split(c.split.begin(), c.split.end());
    s.get("split", split);
    s.finish();
    check(split.size() == 3, "config key ingest.split needs three ratios");
    std::copy(split.begin(), split.end(), c.split.begin());
  }
  {
    auto s = top.child("balance");
    s.get("enabled", c.balance_enabled);
    s.get("step_size", c.balance.step_size);
    s.get("threshold", c.balance.threshold);
    s.get("max_outer_iterations", c.balance.max_outer_iterations);
    s.get("max_sweeps", c.balance.max_sweeps);
    s.get("tol", c.balance.rake_tol);
    s.get("resample_size", c.balance.resample_size);
    s.finish();
  }
  {
    auto s = top.child("model");
    s.get("d_model", c.model.d_model);
    s.get("encoder_layers", c.model.encoder_layers);
    s.get("decoder_layers", c.model.decoder_layers);
    s.get("heads", c.model.heads);
    s.get("ff_width", c.model.ff_width);
    s.get("dropout", c.model.dropout);
    s.get("attr_dim", c.model.attr_dim);
    s.get("max_len", c.model.max_len);
    s.get("init_seed", c.model.init_seed);
    s.finish();
  }
  {
    auto s = top.child("train");
    s.get("learning_rate", c.train.learning_rate);
    s.get("decay", c.train.decay);
    s.get("batch_size", c.train.batch_size);
    s.get("epochs", c.train.epochs);
    s.get("patience", c.train.patience);
    s.get("workers", c.train.workers);
    s.get("chunks", c.train.chunks);
    s.get("clip_norm", c.train.clip_norm);
    s.finish();
  }
  {
    auto s = top.child("loss");
    s.get("w1", c.loss.w[0]);
    s.get("w2", c.loss.w[1]);
    s.get("w3", c.loss.w[2]);
    s.get("w4", c.loss.w[3]);
    s.get("w5", c.loss.w[4]);
    s.finish();
  }
  {
    auto s = top.child("soft_label");
    s.get("w_m", c.soft.main_weight);
    s.get("w_s", c.soft.side_weight);
    s.get("n_s", c.soft.side_steps);
    s.get("epsilon", c.soft.epsilon);
    s.finish();
  }
  {
    auto s = top.child("finetune");
    s.get("enabled", c.finetune.enabled);
    s.get("grammar", c.finetune.grammar);
    s.get("samples", c.finetune.samples);
    s.get("adapter", c.finetune.adapter);
    s.get("freeze_epochs", c.finetune.freeze_epochs);
    s.get("epochs", c.finetune.epochs);
    s.finish();
    if (c.finetune.grammar != "reference" && c.finetune.grammar != "shifted") {
      c.finetune.grammar = resolve(c.finetune.grammar, base).string();
    }
  }
  {
    auto s = top.child("sampling");
    s.get("temperature", c.sampling.temperature);
    s.get("max_len", c.sampling.max_len);
    s.finish();
  }
  {
    auto s = top.child("ala");
    std::string scale = "distance";
    s.get("threshold", c.ala.threshold);
    s.get("margin", c.ala.margin);
    s.get("gain", c.ala.gain);
    s.get("max_iterations", c.ala.max_iterations);
    s.get("k", c.ala.k);
    s.get("alpha", c.ala.alpha);
    s.get("beta", c.ala.beta);
    s.get("angle_scale", scale);
    s.get("distance_bins", c.ala.distance_bins);
    s.get("angle_bins", c.ala.angle_bins);
    s.get("workers", c.ala.workers);
    s.finish();
    check(scale == "distance" || scale == "diameter", "config key ala.angle_scale must be distance or diameter");
    c.ala.angle_scale = scale == "distance" ? AngleScale::Distance : AngleScale::Diameter;
  }
  top.finish();
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return pipeline_config_from_yaml_text(ss.str(), path.parent_path());
}

DatasetSchema PipelineConfig::load_schema_or_default() const {
  return schema.empty() ? default_schema() : load_schema(schema);
}

void PipelineConfig::validate() const {
  auto wrap = [](const char* section, auto&& f) {
    try {
      f();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config section ") + section + ": " + e.what());
    }
  };
  check(synth.agents >= 1, "config key synth.agents must be >= 1");
  wrap("ingest", [&] {
    if (std::abs(split[0] + split[1] + split[2] - 1.0) > 1e-9 || split[0] <= 0.0 || split[1] <= 0.0 || split[2] < 0.0)
      throw std::invalid_argument("split ratios must be positive and sum to 1");
  });
  wrap("balance", [&] { balance.validate(); });
  wrap("model", [&] {
    ModelConfig m = model;
    m.attribute_cardinalities = {2};
    m.personal_count = 1;
    m.validate();
  });
  wrap("train", [&] { train.validate(); });
  wrap("loss", [&] { loss.validate(); });
  wrap("soft_label", [&] { soft.validate(); });
  wrap("ala", [&] { ala.validate(); });
  check(sampling.temperature >= 0.0, "config key sampling.temperature must be >= 0");
  check(finetune.samples >= 10, "config key finetune.samples must be >= 10");
  check(finetune.epochs >= 1, "config key finetune.epochs must be >= 1");
}

json to_json(const PipelineConfig& c) {
  json m = to_json(c.model);
  m.erase("attribute_cardinalities");
  m.erase("attribute_dummies");
  m.erase("personal_count");
  return {
      {"seed", c.seed},
      {"paths", {{"data", c.data.string()}, {"schema", c.schema.string()}, {"zones", c.zones.string()}}},
      {"synth", {{"agents", c.synth.agents}, {"grammar", c.synth.grammar}, {"city_seed", c.synth.city_seed}}},
      {"ingest", {{"split", c.split}}},
      {"balance",
       {{"enabled", c.balance_enabled},
        {"step_size", c.balance.step_size},
        {"threshold", c.balance.threshold},
        {"max_outer_iterations", c.balance.max_outer_iterations},
        {"max_sweeps", c.balance.max_sweeps},
        {"tol", c.balance.rake_tol},
        {"resample_size", c.balance.resample_size}}},
      {"model", m},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"decay", c.train.decay},
        {"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"patience", c.train.patience},
        {"chunks", c.train.chunks},
        {"clip_norm", c.train.clip_norm}}},
      {"loss", c.loss.w},
      {"soft_label",
       {{"w_m", c.soft.main_weight}, {"w_s", c.soft.side_weight}, {"n_s", c.soft.side_steps}, {"epsilon", c.soft.epsilon}}},
      {"finetune",
       {{"enabled", c.finetune.enabled},
        {"grammar", c.finetune.grammar},
        {"samples", c.finetune.samples},
        {"adapter", c.finetune.adapter},
        {"freeze_epochs", c.finetune.freeze_epochs},
        {"epochs", c.finetune.epochs}}},
      {"sampling", {{"temperature", c.sampling.temperature}, {"max_len", c.sampling.max_len}}},
      {"ala",
       {{"threshold", c.ala.threshold},
        {"margin", c.ala.margin},
        {"gain", c.ala.gain},
        {"max_iterations", c.ala.max_iterations},
        {"k", c.ala.k},
        {"alpha", c.ala.alpha},
        {"beta", c.ala.beta},
        {"angle_scale", c.ala.angle_scale == AngleScale::Distance ? "distance" : "diameter"},
        {"distance_bins", c.ala.distance_bins},
        {"angle_bins", c.ala.angle_bins}}},
  };
}

std::string config_hash(const PipelineConfig& c) { return sha256_hex(to_json(c).dump()).substr(0, 12); }

std::string file_sha256(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw MissingArtifact(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return sha256_hex(ss.str());
}

fs::path stage_dir(const PipelineConfig& config, const std::string& stage) {
  return config.artifacts / stage / config_hash(config);
}

// ---------------------------------------------------------------------------
// Stages

namespace {

struct StageContext {
  const PipelineConfig& config;
  const StageOptions& options;
  std::string stage;
  fs::path dir;
  RunManifest manifest;

  void log(const std::string& msg, Verbosity level = Verbosity::Normal) const {
    if (options.verbosity == Verbosity::Quiet) return;
    if (level == Verbosity::Verbose && options.verbosity != Verbosity::Verbose) return;
    std::cerr << "[" << stage << "] " << msg << '\n';
  }

  std::string display(const fs::path& p) const {
    const auto rel = p.lexically_relative(config.artifacts);
    return !rel.empty() && *rel.begin() != ".." ? rel.generic_string() : p.generic_string();
  }

  fs::path use_input(const fs::path& p) {
    if (!fs::exists(p)) throw MissingArtifact(p);
    manifest.inputs[display(p)] = file_sha256(p);
    return p;
  }

  // Artifact produced by an earlier stage under the same config hash.
  fs::path upstream(const std::string& from, const std::string& file) {
    const fs::path p = stage_dir(config, from) / file;
    if (fs::exists(p)) return use_input(p);
    if (options.allow_stale && fs::exists(config.artifacts / from)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(config.artifacts / from)) {
        if (fs::exists(e.path() / file)) found.push_back(e.path() / file);
      }
      std::sort(found.begin(), found.end());
      if (!found.empty()) {
        std::cerr << "warning: " << display(p) << " is missing; using stale " << display(found.front()) << '\n';
        return use_input(found.front());
      }
    }
    throw MissingArtifact(p);
  }

  fs::path out(const std::string& file) const { return dir / file; }
};

SyntheticGrammar grammar_for(const std::string& name, const DatasetSchema& schema) {
  if (name == "reference") return default_grammar(schema, GrammarVariant::Reference);
  if (name == "shifted") return default_grammar(schema, GrammarVariant::Shifted);
  return load_grammar(name, schema);
}

ModelConfig model_config(const PipelineConfig& c, const DatasetSchema& schema) {
  ModelConfig m = c.model;
  m.attribute_cardinalities = schema.cardinalities();
  m.attribute_dummies.clear();
  for (const auto* a : schema.ordered()) m.attribute_dummies.push_back(a->dummy);
  m.personal_count = static_cast<int>(schema.personal_count());
  m.max_len = schema.max_len;
  m.validate();
  return m;
}

std::vector<EncodedSample> load_any_samples(const fs::path& p, const DatasetSchema& schema) {
  return p.extension() == ".csv" ? load_csv(p, schema) : load_samples(p);
}

std::vector<ActivityChain> chains_of(const std::vector<EncodedSample>& s) {
  std::vector<ActivityChain> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(x.chain);
  return out;
}

void save_epoch_log(const std::vector<EpochLog>& log, const fs::path& path) {
  std::ofstream f(path);
  for (const auto& l : log) {
    f << json{{"epoch", l.epoch},       {"lr", l.lr},
              {"train_loss", l.train_loss}, {"train_terms", l.train_terms},
              {"val_loss", l.val_loss},   {"improved", l.improved},
              {"stopped", l.stopped}}
             .dump()
      << '\n';
  }
}

SyntheticCity load_city(StageContext& ctx) {
  const auto zones = load_zones_csv(ctx.upstream("synth", "zones.csv"));
  SyntheticCity city{build_zone_map(zones), {}, {}};
  for (const auto& z : city.map.zones) {
    city.home_weight.push_back(z.has(LandUse::Home) ? 1.0 : 0.0);
    city.attraction.push_back(1.0);
  }
  return city;
}

void stage_synth(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto schema = c.load_schema_or_default();
  const auto grammar = grammar_for(c.synth.grammar, schema);
  const auto samples = synth_population(grammar, schema, c.synth.agents, c.seed);
  save_csv(samples, schema, ctx.out("survey.csv"));
  save_schema(schema, ctx.out("schema.yaml"));

  SyntheticCity city;
  if (c.zones.empty()) {
    city = synthetic_city(c.synth.city_seed);
  } else {
    city.map = build_zone_map(load_zones_csv(ctx.use_input(c.zones)));
    for (const auto& z : city.map.zones) {
      city.home_weight.push_back(z.has(LandUse::Home) ? 1.0 : 0.0);
      city.attraction.push_back(1.0);
    }
  }
  save_zones_csv(city.map.zones, ctx.out("zones.csv"));
  auto agents = place_agents(chains_of(samples), city, c.seed);
  for (std::size_t i = 0; i < agents.size(); ++i) agents[i].id = samples[i].household_id;
  save_trajectories_jsonl(gravity_reference(agents, city, c.seed), ctx.out("reference_trajectories.jsonl"));
  ctx.log("synthesized " + std::to_string(samples.size()) + " agents on " + std::to_string(city.map.zones.size()) +
          " zones");
}

void stage_ingest(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto schema = c.load_schema_or_default();
  fs::path data = !ctx.options.data.empty() ? ctx.use_input(ctx.options.data)
                  : !c.data.empty()         ? ctx.use_input(c.data)
                                            : ctx.upstream("synth", "survey.csv");
  const auto samples = load_csv(data, schema);
  const auto s = split(samples, c.split, c.seed);
  save_samples(s.train, ctx.out("train.jsonl"));
  save_samples(s.val, ctx.out("val.jsonl"));
  save_samples(s.test, ctx.out("test.jsonl"));
  ctx.log("split " + std::to_string(samples.size()) + " samples into " + std::to_string(s.train.size()) + "/" +
          std::to_string(s.val.size()) + "/" + std::to_string(s.test.size()));
}

void stage_balance(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto train = load_samples(ctx.upstream("ingest", "train.jsonl"));
  if (!c.balance_enabled) {
    save_samples(train, ctx.out("balanced_train.jsonl"));
    ctx.log("balancing disabled; training set copied");
    return;
  }
  const auto features = features_of(chains_of(train));
  const auto result = balance(features, c.balance);
  const std::size_t n = c.balance.resample_size ? c.balance.resample_size : train.size();
  const std::span<const EncodedSample> view(train);
  save_samples(resample(view, result.weights, n, c.seed), ctx.out("balanced_train.jsonl"));
  std::vector<std::string> ids;
  for (const auto& s : train) ids.push_back(s.household_id);
  save_weights_csv(result.weights, ids, ctx.out("weights.csv"));
  save_balance_log(result.log, ctx.out("balance_log.jsonl"));
  ctx.log("balanced in " + std::to_string(result.log.size()) + " outer iterations");
}

TrainConfig train_config(const PipelineConfig& c) {
  TrainConfig t = c.train;
  t.seed = c.seed;
  return t;
}

void stage_train(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto schema = c.load_schema_or_default();
  std::vector<EncodedSample> train_s, val_s;
  if (!ctx.options.data.empty()) {
    const auto s = split(load_any_samples(ctx.use_input(ctx.options.data), schema), c.split, c.seed);
    train_s = s.train;
    val_s = s.val;
  } else {
    train_s = load_samples(ctx.upstream("balance", "balanced_train.jsonl"));
    val_s = load_samples(ctx.upstream("ingest", "val.jsonl"));
  }
  const auto mc = model_config(c, schema);
  std::vector<ModelInput> tr, va;
  for (const auto& s : train_s) tr.push_back(make_input(s, mc));
  for (const auto& s : val_s) va.push_back(make_input(s, mc));
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& l) {
    ctx.log("epoch " + std::to_string(l.epoch) + " train " + std::to_string(l.train_loss) + " val " +
                std::to_string(l.val_loss),
            Verbosity::Verbose);
  };
  const auto result = train(init_params<float>(mc), tr, va, train_config(c), c.loss, c.soft, hooks);
  save_params(result.params, ctx.out("checkpoint.json"));
  save_epoch_log(result.log, ctx.out("train_log.jsonl"));
  ctx.log("trained " + std::to_string(result.log.size()) + " epochs, best " + std::to_string(result.best_epoch));
}

void stage_finetune(StageContext& ctx) {
  const auto& c = ctx.config;
  if (!c.finetune.enabled) {
    std::ofstream(ctx.out("skipped.txt")) << "fine-tuning disabled\n";
    ctx.log("disabled");
    return;
  }
  const auto schema = c.load_schema_or_default();
  const auto pretrained = load_params_as<float>(ctx.upstream("train", "checkpoint.json"));
  const auto regional = synth_population(grammar_for(c.finetune.grammar, schema), schema,
                                         c.finetune.samples + c.finetune.samples / 5, splitmix64(c.seed ^ 0xf1e7));
  const auto s = split(regional, {5.0 / 6.0, 1.0 / 6.0, 0.0}, c.seed);
  FineTunePlan plan;
  plan.add_adapter = c.finetune.adapter;
  plan.freeze_epochs = c.finetune.freeze_epochs;
  TrainConfig tc = train_config(c);
  tc.epochs = c.finetune.epochs;
  const auto result = fine_tune(pretrained, schema, s.train, s.val, plan, tc, c.loss, c.soft);
  save_params(result.params, ctx.out("checkpoint.json"));
  save_epoch_log(result.log, ctx.out("finetune_log.jsonl"));
  save_samples(regional, ctx.out("regional_samples.jsonl"));
  ctx.log("fine-tuned " + std::to_string(result.log.size()) + " epochs on " + std::to_string(s.train.size()) +
          " samples");
}

void stage_generate(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto schema = c.load_schema_or_default();
  const auto params = load_params_as<float>(!ctx.options.checkpoint.empty() ? ctx.use_input(ctx.options.checkpoint)
                                                                             : ctx.upstream("train", "checkpoint.json"));
  const auto profiles = !ctx.options.profiles.empty() ? load_any_samples(ctx.use_input(ctx.options.profiles), schema)
                                                      : load_samples(ctx.upstream("ingest", "test.jsonl"));
  SamplingConfig sc = c.sampling;
  sc.seed = c.seed;
  const auto chains = generate_population(params, profiles, sc, c.train.workers);
  auto out = profiles;
  std::size_t valid = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].chain = chains[i];
    valid += is_valid(chains[i]) ? 1 : 0;
  }
  save_samples(out, ctx.out("generated.jsonl"));
  ctx.log("generated " + std::to_string(out.size()) + " chains, " + std::to_string(valid) + " valid");
}

std::map<std::string, Trajectory> by_agent(std::vector<Trajectory> ts) {
  std::map<std::string, Trajectory> m;
  for (auto& t : ts) m.emplace(t.agent_id, std::move(t));
  return m;
}

ZoneId home_zone(const Trajectory& t) {
  for (std::size_t i = 0; i < t.chain.size(); ++i) {
    if (t.chain[i].kind == ActivityType::Home) return t.zones[i];
  }
  return t.zones.front();
}

void stage_assign(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto city = load_city(ctx);
  const auto reference = load_trajectories_jsonl(ctx.upstream("synth", "reference_trajectories.jsonl"));
  const auto generated = load_samples(ctx.upstream("generate", "generated.jsonl"));
  const auto ref_by_agent = by_agent(reference);

  const auto homes = city.map.with_use(LandUse::Home);
  std::vector<Agent> agents;
  std::vector<Trajectory> ref_subset;
  for (const auto& g : generated) {
    Agent a{g.household_id, g.chain, 0};
    const auto it = ref_by_agent.find(g.household_id);
    if (it != ref_by_agent.end()) {
      a.home = home_zone(it->second);
      ref_subset.push_back(it->second);
    } else {
      const auto h = std::stoull(sha256_hex(g.household_id).substr(0, 15), nullptr, 16);
      a.home = city.map.zones[homes[splitmix64(h ^ c.seed) % homes.size()]].id;
    }
    agents.push_back(std::move(a));
  }
  AlaConfig ac = c.ala;
  ac.seed = c.seed;
  const auto samplers = fit_distributions(reference, city.map, ac);
  for (const auto& f : samplers.fallbacks) ctx.log("sampler fallback to global histogram: " + f);
  Eigen::VectorXd target = activity_counts(ref_subset.empty() ? reference : ref_subset, city.map);
  const double assignable = [&] {
    double n = 0.0;
    for (const auto& a : agents)
      for (const auto& act : a.chain) n += act.kind != ActivityType::Home ? 1.0 : 0.0;
    return n;
  }();
  if (target.sum() > 0.0) target *= assignable / target.sum();
  const auto refined = refine(agents, target, samplers, city.map, ac);
  const auto trajectories = assign_population(agents, refined.samplers, city.map, ac);
  save_trajectories_jsonl(trajectories, ctx.out("trajectories.jsonl"));
  save_od_csv(build_od(trajectories, city.map, OdAggregation::Zone), city.map, OdAggregation::Zone, ctx.out("od_zone.csv"));
  save_od_csv(build_od(trajectories, city.map, OdAggregation::SubRegion), city.map, OdAggregation::SubRegion,
              ctx.out("od_subregion.csv"));
  if (!ref_subset.empty()) {
    save_od_csv(build_od(ref_subset, city.map, OdAggregation::SubRegion), city.map, OdAggregation::SubRegion,
                ctx.out("od_subregion_reference.csv"));
  }
  std::ofstream trace(ctx.out("refine_trace.jsonl"));
  for (std::size_t i = 0; i < refined.trace.size(); ++i) {
    trace << json{{"iteration", i + 1}, {"max_relative_error", refined.trace[i]}, {"best", refined.best_trace[i]}}.dump()
          << '\n';
  }
  ctx.log("refine " + std::string(refined.converged ? "converged" : "stopped") + " after " +
          std::to_string(refined.iterations) + " iterations, error " + std::to_string(refined.best_error));
}

Eigen::MatrixXd read_od_csv(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw MissingArtifact(p);
  std::string line;
  std::getline(f, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw std::runtime_error("OD matrix is not square: " + p.string());
    for (std::size_t j = 0; j < rows.size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

void stage_evaluate(StageContext& ctx) {
  const auto& c = ctx.config;
  const auto schema = c.load_schema_or_default();
  const bool overridden = !ctx.options.generated.empty() || !ctx.options.truth.empty();
  const auto gen = load_any_samples(!ctx.options.generated.empty() ? ctx.use_input(ctx.options.generated)
                                                                   : ctx.upstream("generate", "generated.jsonl"),
                                    schema);
  const auto truth = load_any_samples(
      !ctx.options.truth.empty() ? ctx.use_input(ctx.options.truth) : ctx.upstream("ingest", "test.jsonl"), schema);
  std::optional<OdPair> od;
  if (!overridden) {
    od = OdPair{read_od_csv(ctx.upstream("assign", "od_subregion.csv")),
                read_od_csv(ctx.upstream("assign", "od_subregion_reference.csv"))};
  }
  const auto gc = chains_of(gen), tc = chains_of(truth);
  const auto r = report(gc, tc, od, schema.max_len);
  save_report(r, ctx.out("report.json"));
  const auto hg = chain_histograms(gc, schema.max_len), ht = chain_histograms(tc, schema.max_len);
  const auto g = hg.all(), t = ht.all();
  for (std::size_t i = 0; i < g.size(); ++i) {
    save_histogram_csv(*g[i], ctx.out("hist_generated_" + g[i]->label + ".csv"));
    save_histogram_csv(*t[i], ctx.out("hist_truth_" + t[i]->label + ".csv"));
  }
  ctx.log(csv_header(r) + "\n" + csv_row(r));
}

void write_manifest(const StageContext& ctx) {
  json outputs = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(ctx.dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) outputs[f.filename().string()] = file_sha256(f);
  const json m{{"config_hash", ctx.manifest.config_hash},
               {"stage", ctx.manifest.stage},
               {"seed", ctx.manifest.seed},
               {"inputs", ctx.manifest.inputs},
               {"outputs", outputs}};
  std::ofstream(ctx.dir / "manifest.json") << m.dump(2) << '\n';
}

}  // namespace

RunManifest run_stage(const std::string& stage, const PipelineConfig& config, const StageOptions& options) {
  static const std::map<std::string, void (*)(StageContext&)> table{
      {"synth", stage_synth},     {"ingest", stage_ingest},     {"balance", stage_balance},
      {"train", stage_train},     {"finetune", stage_finetune}, {"generate", stage_generate},
      {"assign", stage_assign},   {"evaluate", stage_evaluate}};
  const auto it = table.find(stage);
  if (it == table.end()) throw ConfigError("unknown stage " + stage);
  const auto t0 = std::chrono::steady_clock::now();
  StageContext ctx{config, options, stage, stage_dir(config, stage), {}};
  ctx.manifest.config_hash = config_hash(config);
  ctx.manifest.stage = stage;
  ctx.manifest.seed = config.seed;
  fs::remove_all(ctx.dir);
  fs::create_directories(ctx.dir);
  it->second(ctx);
  write_manifest(ctx);
  for (const auto& e : fs::directory_iterator(ctx.dir)) {
    if (e.is_regular_file()) ctx.manifest.outputs[e.path().filename().string()] = file_sha256(e.path());
  }
  ctx.manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ctx.log("done in " + std::to_string(ctx.manifest.wall_seconds) + " s -> " + ctx.dir.string(), Verbosity::Verbose);
  return ctx.manifest;
}

std::vector<RunManifest> run_pipeline(const PipelineConfig& config, const StageOptions& options) {
  std::vector<RunManifest> out;
  for (const auto& s : stage_names()) out.push_back(run_stage(s, config, options));
  return out;
}

}  // namespace deepact
