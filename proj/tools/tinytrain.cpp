// tinytrain: gendata | metatrain | analyze | select | run
//
// Exit codes: 0 ok, 2 config error, 3 artifact mismatch, 4 numeric failure.

#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "tinytrain/adapt.hpp"
#include "tinytrain/checkpoint.hpp"
#include "tinytrain/config.hpp"
#include "tinytrain/errors.hpp"
#include "tinytrain/report.hpp"
#include "tinytrain/rng.hpp"
#include "tinytrain/sweep.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tinytrain;

namespace {

enum Exit { kOk = 0, kConfig = 2, kArtifact = 3, kNumeric = 4 };

// Raised for checkpoint/dataset/config disagreements that are not file-format errors.
struct ArtifactMismatch : Error {
  using Error::Error;
};

struct Overrides {
  std::string config;
  std::optional<std::string> seed, jobs, budget_mem, budget_mac, ratio, iters, trials, plan_source;
  std::vector<std::string> sets;  // key=value
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "key = value config file");
  cmd->add_option("--seed", o.seed, "root seed for every random stream");
  cmd->add_option("--jobs", o.jobs, "worker threads for trial-level parallelism");
  cmd->add_option("--budget-mem", o.budget_mem, "bytes or 'unbounded'");
  cmd->add_option("--budget-mac", o.budget_mac, "MACs, a fraction like 30% or 0.3x, or 'unbounded'");
  cmd->add_option("--ratio", o.ratio, "channel ratio in (0, 1]");
  cmd->add_option("--iters", o.iters, "fine-tuning iterations");
  cmd->add_option("--trials", o.trials, "meta-test episodes");
  cmd->add_option("--plan-source", o.plan_source, "tinytrain|full|last-layer|random-channels|l2norm-channels|none|imported");
  cmd->add_option("--set", o.sets, "override any config key: key=value (repeatable)");
}

RunConfig resolve(const Overrides& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  auto apply = [&](const char* key, const std::optional<std::string>& v) {
    if (v) cfg.set(key, *v);
  };
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(0, "--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  // Named flags win over --set and the file.
  apply("seed", o.seed);
  apply("jobs", o.jobs);
  apply("budget_mem", o.budget_mem);
  apply("budget_mac", o.budget_mac);
  apply("ratio", o.ratio);
  apply("iters", o.iters);
  apply("trials", o.trials);
  apply("plan_source", o.plan_source);
  cfg.validate();
  return cfg;
}

json provenance(const RunConfig& cfg) { return {{"config_hash", cfg.hash_hex()}, {"seed", cfg.seed}}; }

json config_json(const RunConfig& cfg) {
  json j = json::object();
  std::istringstream in(cfg.resolved_text(false));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

fs::path out_path(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return fs::path(cfg.out_dir) / name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("short write to '" + path.string() + "'");
}

std::string csv_header(const RunConfig& cfg) {
  return "# config_hash=" + cfg.hash_hex() + " seed=" + std::to_string(cfg.seed) + "\n";
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

ModelSpec configured_spec(const RunConfig& cfg) {
  return build_backbone(cfg.backbone(), WidthMultiplier(cfg.width), {3, cfg.image_size, cfg.image_size}, cfg.micro());
}

Model load_model(const RunConfig& cfg) {
  Model m = load_checkpoint(cfg.checkpoint);
  if (!m.spec.same_structure(configured_spec(cfg)))
    throw ArtifactMismatch("checkpoint '" + cfg.checkpoint + "' does not match the configured backbone");
  return m;
}

Dataset load_target(const RunConfig& cfg, const Model& m) {
  Dataset ds = read_dataset(cfg.target_data);
  if (ds.dims() != m.spec.input_shape())
    throw ArtifactMismatch("dataset '" + cfg.target_data + "' has sample shape " + shape_str(ds.dims()) +
                           ", model expects " + shape_str(m.spec.input_shape()));
  return ds;
}

AdaptOptions adapt_options(const RunConfig& cfg) {
  AdaptOptions o = cfg.adapt_options();
  if (o.source == PlanSource::imported) {
    std::ifstream f(cfg.plan_file);
    if (!f) throw ConfigError(cfg.lines.count("plan_file") ? cfg.lines.at("plan_file") : 0,
                              "plan_file: cannot open '" + cfg.plan_file + "'");
    json j;
    try {
      j = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError(0, "plan_file: " + std::string(e.what()));
    }
    o.imported = plan_from_json(j.contains("plan") ? j.at("plan") : j);
  }
  return o;
}

EpisodeData trial_episode(const RunConfig& cfg, const Dataset& ds, std::size_t t) {
  auto rng = make_stream(cfg.seed, "sampler", t);
  return materialize(ds, sample_episode(ds, cfg.sampler(), rng));
}

std::uint64_t trial_seed(const RunConfig& cfg, std::size_t t) { return derive_seed(cfg.seed, "episode", t); }

// ---- subcommands ----

int cmd_gendata(const RunConfig& cfg) {
  const auto domains = generate_toy_domains(cfg.toy_options(), cfg.seed);
  for (auto [path, ds, domain] : {std::tuple{cfg.source_data, &domains.source, "source"},
                                  std::tuple{cfg.target_data, &domains.target, "target"}}) {
    write_dataset(path, *ds);
    const auto st = pixel_stats(*ds);
    json side = provenance(cfg);
    side["domain"] = domain;
    side["samples"] = ds->size();
    side["classes"] = ds->class_count();
    side["dims"] = ds->dims();
    side["pixel_mean"] = st.mean;
    side["pixel_variance"] = st.variance;
    write_text(path + ".json", side.dump(2) + "\n");
    std::cout << domain << ": " << ds->size() << " samples, " << ds->class_count() << " classes -> " << path << "\n";
  }
  return kOk;
}

int cmd_metatrain(const RunConfig& cfg) {
  const Dataset source = read_dataset(cfg.source_data);
  const auto spec = configured_spec(cfg);
  if (source.dims() != spec.input_shape()) throw ArtifactMismatch("source dataset shape does not match the backbone");
  auto rng = make_stream(cfg.seed, "init");
  const Model init{spec, ParamStore::initialize(spec, cfg.scalar_type(), rng)};
  const auto r = meta_train(init, source, cfg.meta_options(), cfg.seed);

  Model trained{spec, r.params};
  trained.params.set_version(r.steps);
  json run = provenance(cfg);
  run["steps"] = r.steps;
  run["diverged"] = r.diverged;
  save_checkpoint(cfg.checkpoint, trained, run);

  std::string csv = csv_header(cfg) + "step,lr,loss\n";
  const auto schedule = cfg.meta_options().schedule;
  for (std::size_t i = 0; i < r.loss_curve.size(); ++i)
    csv += std::to_string(i) + "," + num(schedule.lr_at(i)) + "," + num(r.loss_curve[i]) + "\n";
  write_text(out_path(cfg, "loss_curve.csv"), csv);

  if (r.diverged) {
    std::cerr << "error: meta-training diverged after " << r.steps << " steps; kept the last finite weights in "
              << cfg.checkpoint << "\n";
    return kNumeric;
  }
  std::cout << "meta-trained " << r.steps << " episodes -> " << cfg.checkpoint << "\n";
  return kOk;
}

int cmd_analyze(const RunConfig& cfg) {
  const Model model = load_model(cfg);
  const Dataset target = load_target(cfg, model);
  std::vector<SweepEpisode> episodes;
  for (std::size_t t = 0; t < cfg.sweep_episodes; ++t) episodes.push_back({trial_episode(cfg, target, t), trial_seed(cfg, t)});
  const auto table = single_layer_sweep(model, episodes, cfg.ratios(), adapt_options(cfg), cfg.include_bias);
  write_text(out_path(cfg, "sweep.csv"), csv_header(cfg) + sweep_csv(table));
  json j = provenance(cfg);
  j["config"] = config_json(cfg);
  j["sweep"] = to_json(table);
  write_text(out_path(cfg, "sweep.json"), j.dump(2) + "\n");
  std::cout << table.rows.size() << " sweep rows -> " << out_path(cfg, "sweep.csv").string() << "\n";
  return kOk;
}

std::string pct(double a, double b) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(1);
  s << 100.0 * a / b << "%";
  return s.str();
}

int cmd_select(const RunConfig& cfg) {
  const Model model = load_model(cfg);
  const Dataset target = load_target(cfg, model);
  AdaptOptions o = adapt_options(cfg);
  o.iterations = 0;
  const auto ep = trial_episode(cfg, target, 0);
  const auto r = adapt_episode(model, ep, o, trial_seed(cfg, 0));

  json plan = provenance(cfg);
  plan["plan"] = to_json(r.plan);
  plan["plan"]["budget_infeasible"] = r.plan_flagged;
  write_text(out_path(cfg, "plan.json"), plan.dump(2) + "\n");
  json cost = provenance(cfg);
  cost["cost"] = to_json(r.cost);
  write_text(out_path(cfg, "cost.json"), cost.dump(2) + "\n");

  const auto& c = r.cost;
  std::cout << "plan: " << r.plan.entries.size() << " layers (" << plan_source_name(o.source) << ", ratio "
            << o.channel_ratio << ")\n";
  std::cout << "memory: " << c.total_mem() << " bytes";
  if (o.budget.mem_bytes) std::cout << " of " << *o.budget.mem_bytes << " (" << pct(c.total_mem(), *o.budget.mem_bytes) << ")";
  std::cout << "\nbackward MACs: " << c.backward_macs;
  if (o.budget.mac.kind != MacLimit::Kind::unbounded) {
    const double limit = o.budget.mac.kind == MacLimit::Kind::absolute
                             ? o.budget.mac.value
                             : std::floor(o.budget.mac.value * static_cast<double>(c.reference_macs));
    std::cout << " of " << static_cast<std::uint64_t>(limit) << " (" << pct(c.backward_macs, limit) << ")";
  }
  std::cout << "\n";
  if (r.plan_flagged) std::cerr << "warning: no layer fits the budget; the plan is empty\n";
  return kOk;
}

struct Stats {
  double mean = 0.0, sd = 0.0, ci95 = 0.0;
};

Stats stats(const std::vector<double>& xs) {
  Stats s;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) s.mean += x;
  s.mean /= n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / (n - 1.0));
    s.ci95 = 1.96 * s.sd / std::sqrt(n);
  }
  return s;
}

int cmd_run(const RunConfig& cfg) {
  const Model model = load_model(cfg);
  const Dataset target = load_target(cfg, model);
  const AdaptOptions o = adapt_options(cfg);

  // Trials are claimed by index; results land in their slot, so output order never
  // depends on which worker finished first.
  std::vector<std::optional<AdaptResult>> results(cfg.trials);
  std::vector<std::size_t> ways(cfg.trials), supports(cfg.trials);
  std::vector<std::exception_ptr> errors(cfg.trials);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t; (t = next.fetch_add(1)) < cfg.trials;) {
      try {
        const auto ep = trial_episode(cfg, target, t);
        ways[t] = ep.way;
        supports[t] = ep.support_labels.size();
        auto r = adapt_episode(model, ep, o, trial_seed(cfg, t));
        r.params = ParamStore{};  // not needed past this point
        results[t] = std::move(r);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::min(cfg.jobs, cfg.trials);
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  json trials = json::array();
  json timings = json::array();
  std::vector<double> acc;
  std::string csv = csv_header(cfg) + "trial,way,support,query,accuracy,layers,backward_macs,total_mem,budget_infeasible\n";
  double frac_sum = 0.0;
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    const auto& r = *results[t];
    acc.push_back(r.accuracy);
    trials.push_back({{"trial", t},
                      {"way", ways[t]},
                      {"support", supports[t]},
                      {"query", r.query_count},
                      {"accuracy", r.accuracy},
                      {"plan", to_json(r.plan)},
                      {"cost", {{"model_mem", r.cost.model_mem},
                                {"optimiser_mem", r.cost.optimiser_mem},
                                {"activation_mem", r.cost.activation_mem},
                                {"total_mem", r.cost.total_mem()},
                                {"backward_macs", r.cost.backward_macs}}},
                      {"budget_infeasible", r.plan_flagged}});
    csv += std::to_string(t) + "," + std::to_string(ways[t]) + "," + std::to_string(supports[t]) + "," +
           std::to_string(r.query_count) + "," + num(r.accuracy) + "," + std::to_string(r.plan.entries.size()) + "," +
           std::to_string(r.cost.backward_macs) + "," + std::to_string(r.cost.total_mem()) + "," +
           (r.plan_flagged ? "1" : "0") + "\n";
    const double frac = r.total_seconds > 0.0 ? r.selection_seconds / r.total_seconds : 0.0;
    frac_sum += frac;
    timings.push_back({{"trial", t},
                       {"selection_seconds", r.selection_seconds},
                       {"total_seconds", r.total_seconds},
                       {"selection_fraction", frac}});
  }
  const Stats s = stats(acc);
  json report = provenance(cfg);
  report["config"] = config_json(cfg);
  report["trials"] = std::move(trials);
  report["aggregate"] = {{"trials", cfg.trials},
                         {"plan_source", cfg.plan_source},
                         {"mean_accuracy", s.mean},
                         {"std", s.sd},
                         {"ci95", s.ci95}};
  write_text(out_path(cfg, "report.json"), report.dump(2) + "\n");
  write_text(out_path(cfg, "trials.csv"), csv);
  write_text(out_path(cfg, "aggregate.csv"), csv_header(cfg) + "plan_source,trials,mean_accuracy,std,ci95_low,ci95_high\n" +
                                                 cfg.plan_source + "," + std::to_string(cfg.trials) + "," + num(s.mean) +
                                                 "," + num(s.sd) + "," + num(s.mean - s.ci95) + "," +
                                                 num(s.mean + s.ci95) + "\n");
  // Wall-clock numbers are kept out of report.json so equal configs give equal reports.
  json tj = provenance(cfg);
  tj["trials"] = std::move(timings);
  tj["mean_selection_fraction"] = frac_sum / static_cast<double>(cfg.trials);
  write_text(out_path(cfg, "timings.json"), tj.dump(2) + "\n");

  std::cout << cfg.plan_source << ": mean accuracy " << s.mean << " +/- " << s.ci95 << " over " << cfg.trials
            << " trials\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budget-aware sparse fine-tuning of few-shot backbones"};
  app.require_subcommand(1);
  Overrides ov;
  struct Cmd {
    const char* name;
    const char* help;
    int (*fn)(const RunConfig&);
  };
  const Cmd cmds[] = {
      {"gendata", "write procedural source/target datasets", cmd_gendata},
      {"metatrain", "episodic ProtoNet meta-training on the source dataset", cmd_metatrain},
      {"analyze", "single-layer sweep: accuracy gain per layer and channel ratio", cmd_analyze},
      {"select", "Fisher scoring and budgeted layer/channel selection on one episode", cmd_select},
      {"run", "meta-test: adapt and evaluate over sampled target episodes", cmd_run},
  };
  std::vector<std::pair<CLI::App*, const Cmd*>> subs;
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, ov);
    subs.emplace_back(sub, &c);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const RunConfig cfg = resolve(ov);
    for (auto [sub, c] : subs)
      if (sub->parsed()) return c->fn(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kArtifact;
  } catch (const DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kArtifact;
  } catch (const ArtifactMismatch& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return kArtifact;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const SamplingError& e) {
    std::cerr << "sampling error: " << e.what() << "\n";
    return kArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
