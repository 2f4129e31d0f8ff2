#include "csijepa/cli.hpp"

#include "csijepa/checkpoint.hpp"
#include "csijepa/datagen.hpp"
#include "csijepa/eval.hpp"
#include "csijepa/probe.hpp"
#include "csijepa/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>

namespace csijepa {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool strict_serial = false;
};

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Records one run next to its outputs; `finish` writes manifest.json.
class RunManifest {
 public:
  RunManifest(std::string subcommand, const KeyValueConfig& kv) : subcommand_(std::move(subcommand)), kv_(kv) {
    started_ = utc_now();
  }

  void input(const fs::path& p) { inputs_.push_back(p.string()); }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }

  void finish(const fs::path& dir) const {
    json config = json::object();
    for (const auto& [k, v] : kv_.entries()) config[k] = v;
    const json j = {{"subcommand", subcommand_}, {"tool_version", kToolVersion},
                    {"seed", kv_.contains("seed") ? json(kv_.get_int("seed", 0)) : json(nullptr)},
                    {"config", config},          {"inputs", inputs_},
                    {"outputs", outputs_},       {"started", started_},
                    {"finished", utc_now()}};
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
    out << j.dump(2) << '\n';
  }

 private:
  std::string subcommand_;
  const KeyValueConfig& kv_;
  std::string started_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config, "key=value configuration file");
  sub->add_option("--set", o.overrides, "override one config entry (key=value), repeatable");
  sub->add_option("--seed", o.seed, "root seed");
  sub->add_option("--threads", o.threads, "worker threads (fallback: CSIJEPA_THREADS)")->check(CLI::PositiveNumber);
  sub->add_flag("--strict-serial", o.strict_serial, "force one thread for reproducible runs");
}

KeyValueConfig resolve_config(const CommonOptions& o, const std::string& subcommand, bool seed_required) {
  if (seed_required && !o.seed) throw UsageError(subcommand + " requires --seed N");
  KeyValueConfig kv = o.config.empty() ? KeyValueConfig{} : KeyValueConfig::from_file(o.config);
  kv.apply_overrides(o.overrides);
  if (o.seed) kv.set("seed", std::to_string(*o.seed));

  int threads = 1;
  if (o.threads) {
    threads = *o.threads;
  } else if (const char* env = std::getenv("CSIJEPA_THREADS"); env && *env) {
    try {
      threads = std::stoi(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("CSIJEPA_THREADS is not an integer: ") + env);
    }
    if (threads < 1) throw UsageError("CSIJEPA_THREADS must be positive");
  } else {
    threads = static_cast<int>(kv.get_int("threads", 1));
  }
  if (o.strict_serial) threads = 1;
  kv.set("threads", std::to_string(threads));
  return kv;
}

/// Corpus geometry fills in whatever the configuration leaves unset.
void default_geometry(KeyValueConfig& kv, const CorpusHeader& h) {
  if (!kv.contains("channels")) kv.set("channels", std::to_string(h.channels));
  if (!kv.contains("subcarriers")) kv.set("subcarriers", std::to_string(h.subcarriers));
  if (!kv.contains("time_steps")) kv.set("time_steps", std::to_string(h.time_steps));
}

LabeledSet load_labeled(const fs::path& path, RunManifest& manifest, int& num_classes) {
  Corpus c = read_corpus(path);
  if (!c.labeled()) throw Error(path.string() + " has no labels");
  num_classes = std::max(num_classes, static_cast<int>(c.header.num_classes));
  manifest.input(path);
  return {std::move(c.windows), std::move(c.labels)};
}

ProbeTask load_task(const fs::path& dir, RunManifest& manifest) {
  ProbeTask task;
  task.name = dir.filename().string();
  if (fs::exists(dir / "spec.json")) {
    std::ifstream in(dir / "spec.json");
    task.name = json::parse(in).value("task", task.name);
  }
  task.train = load_labeled(dir / "train.bin", manifest, task.num_classes);
  task.val = load_labeled(dir / "val.bin", manifest, task.num_classes);
  task.test = load_labeled(dir / "test.bin", manifest, task.num_classes);
  return task;
}

std::vector<HeadKind> parse_heads(const std::string& list) {
  std::vector<HeadKind> heads;
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t comma = std::min(list.find(',', start), list.size());
    if (comma > start) heads.push_back(parse_head_kind(list.substr(start, comma - start)));
    start = comma + 1;
  }
  if (heads.empty()) throw UsageError("--heads needs at least one of linear,mlp");
  return heads;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonOptions& o, const fs::path& out_dir, std::ostream& out) {
  KeyValueConfig kv = resolve_config(o, "gen-data", true);
  RunManifest manifest("gen-data", kv);
  const SynthSpec spec = synth_spec_from(kv);
  const ProbeTask task = generate(spec);
  fs::create_directories(out_dir);
  for (const auto& [name, set] : {std::pair<const char*, const LabeledSet*>{"train.bin", &task.train},
                                  {"val.bin", &task.val},
                                  {"test.bin", &task.test}}) {
    write_corpus(out_dir / name, set->windows, set->labels, spec.num_classes);
    manifest.output(out_dir / name);
  }
  write_corpus(out_dir / "unlabeled.bin", task.train.windows);
  write_spec_json(out_dir / "spec.json", spec);
  manifest.output(out_dir / "unlabeled.bin");
  manifest.output(out_dir / "spec.json");
  manifest.finish(out_dir);
  out << "wrote " << task.train.windows.size() << '/' << task.val.windows.size() << '/' << task.test.windows.size()
      << " train/val/test windows (" << task.name << ") to " << out_dir.string() << '\n';
  return 0;
}

int cmd_pretrain(const CommonOptions& o, const fs::path& data, const fs::path& out_dir, const std::string& resume,
                 std::ostream& out) {
  KeyValueConfig kv = resolve_config(o, "pretrain", true);
  RunManifest manifest("pretrain", kv);
  const fs::path corpus_path = fs::is_directory(data) ? data / "unlabeled.bin" : data;
  const Corpus corpus = read_corpus(corpus_path);
  manifest.input(corpus_path);
  default_geometry(kv, corpus.header);
  const ModelConfig model = model_config_from(kv);
  const PretrainConfig cfg = pretrain_config_from(kv);

  ModelState<float> initial = init_model<float>(model, cfg.seed);
  if (!resume.empty()) {
    initial = load_checkpoint(resume, model);
    manifest.input(resume);
  }
  const PretrainResult result = pretrain(corpus.windows, cfg, std::move(initial), out_dir);
  save_checkpoint(result.state, out_dir / "model");
  manifest.output(out_dir / "loss_log.csv");
  manifest.output(out_dir / "model.bin");
  manifest.finish(out_dir);
  if (!result.log.empty()) {
    out << "epoch " << result.state.epoch << " step " << result.state.step << " loss " << result.log.back().loss
        << " target_std " << result.log.back().target_std << '\n';
  }
  return 0;
}

int cmd_probe(const CommonOptions& o, const fs::path& checkpoint, const fs::path& data, const fs::path& out_dir,
              const std::string& heads, std::ostream& out) {
  KeyValueConfig kv = resolve_config(o, "probe", true);
  RunManifest manifest("probe", kv);
  const ModelState<float> state = load_checkpoint(checkpoint, checkpoint_config(checkpoint));
  manifest.input(checkpoint.string() + ".bin");
  const ProbeTask task = load_task(data, manifest);

  std::vector<std::int64_t> budgets;
  for (long long b : kv.get_int_list("budgets", {})) budgets.push_back(b);
  if (budgets.empty()) budgets = default_budgets(task.train.windows.size());
  const auto head_kinds = parse_heads(heads);
  const ProbeOptions opts = probe_options_from(kv);
  const auto records =
      probe_sweep(state, task, budgets, head_kinds, opts, static_cast<int>(kv.get_int("threads", 1)));

  fs::create_directories(out_dir);
  for (const auto& r : records) {
    const fs::path p = out_dir / ("probe_" + r.task + "_" + r.head + "_b" + std::to_string(r.budget) + "_s" +
                                  std::to_string(r.seed) + ".json");
    write_probe_record(p, r);
    manifest.output(p);
    out << r.task << ' ' << r.head << " budget " << r.budget << " accuracy " << r.accuracy << " f1 " << r.f1 << '\n';
  }
  manifest.finish(out_dir);
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::vector<std::string>& inputs, const fs::path& out_dir,
             const std::string& candidate, const std::string& reference, double tolerance, std::ostream& out) {
  KeyValueConfig kv = resolve_config(o, "eval", false);
  RunManifest manifest("eval", kv);
  std::vector<ProbeRecord> records;
  for (const auto& dir : inputs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.starts_with("probe_") && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      records.push_back(read_probe_record(f));
      manifest.input(f);
    }
  }
  if (records.empty()) throw Error("eval: no probe_*.json records found");

  const auto curves = curves_from_records(records);
  const auto matches = match_table(curves, candidate, reference, tolerance);
  fs::create_directories(out_dir);
  write_curves_csv(out_dir / "curves.csv", curves);
  write_matches_csv(out_dir / "matches.csv", matches);
  manifest.output(out_dir / "curves.csv");
  manifest.output(out_dir / "matches.csv");
  manifest.finish(out_dir);

  for (const auto& j : curves) {
    if (j.method != candidate) continue;
    for (const auto& t : curves) {
      if (t.method != reference || t.task != j.task) continue;
      const GainSummary g = gain_summary(j, t);
      const BestSaving best = best_saving(j, t, tolerance);
      out << j.task << ' ' << candidate << " vs " << reference << ": mean gain " << g.mean_accuracy << " pp, max "
          << g.max_accuracy << " pp; ";
      if (best.positive) {
        out << "best saving " << 100.0 * *best.report->saving() << "% (" << *best.report->budget_j << " -> "
            << best.report->budget_t << ")\n";
      } else {
        out << "no positive matched-budget saving\n";
      }
    }
  }
  return 0;
}

int cmd_ablate(const CommonOptions& o, const std::vector<std::string>& data_dirs, const fs::path& out_dir,
               const std::vector<std::string>& strategy_tags, std::ostream& out) {
  KeyValueConfig kv = resolve_config(o, "ablate", true);
  RunManifest manifest("ablate", kv);
  std::vector<ProbeTask> tasks;
  std::vector<CsiWindow> corpus;
  for (const auto& d : data_dirs) {
    const fs::path unlabeled = fs::path(d) / "unlabeled.bin";
    Corpus c = read_corpus(unlabeled);
    manifest.input(unlabeled);
    default_geometry(kv, c.header);
    corpus.insert(corpus.end(), std::make_move_iterator(c.windows.begin()), std::make_move_iterator(c.windows.end()));
    tasks.push_back(load_task(d, manifest));
  }
  std::vector<MaskStrategy> strategies;
  for (const auto& t : strategy_tags) strategies.push_back(parse_mask_strategy(t));

  const auto rows = ablation_matrix(strategies, tasks, corpus, model_config_from(kv), pretrain_config_from(kv),
                                    kv.get_int("ablation_budget", 100), probe_options_from(kv));
  fs::create_directories(out_dir);
  write_ablation_csv(out_dir / "ablation.csv", rows);
  manifest.output(out_dir / "ablation.csv");
  manifest.finish(out_dir);
  for (const auto& r : rows) out << r.strategy << ' ' << r.task << " accuracy " << r.accuracy << " f1 " << r.f1 << '\n';
  return 0;
}

int cmd_inspect_mask(const CommonOptions& o, const fs::path& data, std::size_t index, const std::string& strategy,
                     std::ostream& out) {
  KeyValueConfig kv = resolve_config(o, "inspect-mask", false);
  const Corpus corpus = read_corpus(data);
  if (index >= corpus.size()) {
    throw Error("window " + std::to_string(index) + " out of range (corpus has " + std::to_string(corpus.size()) + ")");
  }
  default_geometry(kv, corpus.header);
  if (!kv.contains("strategy")) kv.set("strategy", strategy);
  const ModelConfig model = model_config_from(kv);
  PretrainConfig cfg = pretrain_config_from(kv);
  cfg.mask.strategy = parse_mask_strategy(strategy);

  const CsiWindow& window = corpus.windows[index];
  CounterRng rng = CounterRng(cfg.seed).split(index);
  const MaskSpec mask = sample_mask(window, model.patch, cfg.mask, rng);
  out << to_debug_string(mask) << '\n';

  const auto scores = patch_scores(variation_map(window, cfg.mask.lambda), model.patch);
  const Eigen::MatrixXd r = score_blocks(scores, mask.dims);
  std::vector<std::pair<double, std::pair<int, int>>> ranked;
  for (Eigen::Index a = 0; a < r.rows(); ++a) {
    for (Eigen::Index b = 0; b < r.cols(); ++b) ranked.push_back({r(a, b), {static_cast<int>(a), static_cast<int>(b)}});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t i = 0; i < std::min<std::size_t>(5, ranked.size()); ++i) {
    out << "R(" << ranked[i].second.first << ',' << ranked[i].second.second << ") = " << ranked[i].first << '\n';
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CSI-JEPA pretraining and label-budget evaluation", "csijepa"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  CommonOptions common;

  std::string out_dir, data, checkpoint, resume, heads = "linear,mlp", candidate = "mlp", reference = "raw-centroid",
                                                 strategy = "channel-aware";
  std::vector<std::string> inputs, data_dirs,
      strategies = {"channel-aware", "time", "subcarrier", "rect"};
  double tolerance = kMatchTolerance;
  std::size_t window_index = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a seeded synthetic corpus");
  gen->add_option("--out", out_dir, "output directory")->required();
  add_common(gen, common);

  auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
  pre->add_option("--data", data, "unlabeled corpus file or gen-data directory")->required();
  pre->add_option("--out", out_dir, "output directory")->required();
  pre->add_option("--resume", resume, "checkpoint stem to resume from");
  add_common(pre, common);

  auto* probe = app.add_subcommand("probe", "frozen-encoder probes over label budgets");
  probe->add_option("--checkpoint", checkpoint, "checkpoint stem")->required();
  probe->add_option("--data", data, "directory with train.bin, val.bin, test.bin")->required();
  probe->add_option("--out", out_dir, "output directory")->required();
  probe->add_option("--heads", heads, "comma-separated head kinds");
  add_common(probe, common);

  auto* ev = app.add_subcommand("eval", "aggregate probe records into curves and matched budgets");
  ev->add_option("--inputs", inputs, "directories holding probe_*.json")->required();
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_option("--candidate", candidate, "method whose savings are reported");
  ev->add_option("--reference", reference, "method defining the target performance");
  ev->add_option("--tolerance", tolerance, "match tolerance in percentage points");
  add_common(ev, common);

  auto* abl = app.add_subcommand("ablate", "masking-strategy ablation");
  abl->add_option("--data", data_dirs, "gen-data output directories")->required();
  abl->add_option("--out", out_dir, "output directory")->required();
  abl->add_option("--strategies", strategies, "strategy tags")->delimiter(',');
  add_common(abl, common);

  auto* insp = app.add_subcommand("inspect-mask", "print one sampled mask and the top block scores");
  insp->add_option("--data", data, "corpus file")->required();
  insp->add_option("--window", window_index, "window index");
  insp->add_option("--strategy", strategy, "channel-aware|time|subcarrier|rect");
  add_common(insp, common);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "csijepa: usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common, out_dir, out);
    if (pre->parsed()) return cmd_pretrain(common, data, out_dir, resume, out);
    if (probe->parsed()) return cmd_probe(common, checkpoint, data, out_dir, heads, out);
    if (ev->parsed()) return cmd_eval(common, inputs, out_dir, candidate, reference, tolerance, out);
    if (abl->parsed()) return cmd_ablate(common, data_dirs, out_dir, strategies, out);
    if (insp->parsed()) return cmd_inspect_mask(common, data, window_index, strategy, out);
  } catch (const UsageError& e) {
    err << "csijepa: usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "csijepa: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace csijepa
