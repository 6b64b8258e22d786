#include "metacd/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "metacd/harness.hpp"
#include "metacd/ingest.hpp"
#include "metacd/serialize.hpp"

namespace metacd {

namespace {

namespace fs = std::filesystem;

constexpr const char* kOutRootEnv = "METACD_OUT_ROOT";

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

struct CliContext {
  RunConfig cfg;
  fs::path out;
  fs::path data;
  fs::path checkpoint;
  std::string unit_stem;
  bool no_ppm = false;
  bool no_perclass = false;
  bool no_meta = false;
  bool resume = false;
  int seeds = 1;
  std::string argv_line;
  std::vector<std::pair<std::string, uint64_t>> input_hashes;
};

void write_resolved_config(const CliContext& ctx) {
  write_text_file(ctx.out / "resolved_config.json", ctx.cfg.to_json().dump(2) + "\n");
}

void write_run_manifest(const CliContext& ctx, const std::string& command) {
  nlohmann::json manifest;
  manifest["command"] = command;
  manifest["argv"] = ctx.argv_line;
  manifest["seed"] = ctx.cfg.meta.rng_seed;
  manifest["data_seed"] = ctx.cfg.data.world.rng_seed;
  manifest["config_hash"] = std::to_string(
      std::hash<std::string>{}(ctx.cfg.to_json().dump()));
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& [name, hash] : ctx.input_hashes) inputs[name] = std::to_string(hash);
  manifest["inputs"] = inputs;
  write_text_file(ctx.out / "run_manifest.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// data directories

struct UnitEntry {
  std::string stem;
  std::string role;
  TaskUnit unit;
};

struct DataDir {
  std::vector<UnitEntry> entries;

  std::vector<TaskUnit> by_role(const std::string& role) const {
    std::vector<TaskUnit> out;
    for (const auto& e : entries)
      if (e.role == role) out.push_back(e.unit);
    return out;
  }
  const TaskUnit* by_stem(const std::string& stem) const {
    for (const auto& e : entries)
      if (e.stem == stem) return &e.unit;
    return nullptr;
  }
};

DataDir load_data_dir(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path))
    throw ConfigError("data directory " + dir.string() + " has no manifest.json");
  const nlohmann::json manifest = nlohmann::json::parse(read_text_file(manifest_path));
  DataDir data;
  for (const auto& uj : manifest.at("units")) {
    UnitEntry entry;
    entry.stem = uj.at("stem").get<std::string>();
    entry.role = uj.at("role").get<std::string>();
    entry.unit = load_unit(dir, entry.stem);
    data.entries.push_back(std::move(entry));
  }
  return data;
}

std::vector<TaskUnit> require_role(const DataDir& data, const std::string& role) {
  auto units = data.by_role(role);
  if (units.empty())
    throw ConfigError("data directory has no units with role '" + role + "'");
  return units;
}

const TaskUnit& pick_unit(const DataDir& data, const CliContext& ctx,
                          const std::string& fallback_role) {
  if (!ctx.unit_stem.empty()) {
    const TaskUnit* unit = data.by_stem(ctx.unit_stem);
    if (!unit) throw ConfigError("no unit with stem " + ctx.unit_stem);
    return *unit;
  }
  for (const auto& e : data.entries)
    if (e.role == fallback_role) return e.unit;
  throw ConfigError("data directory has no unit with role '" + fallback_role +
                    "' (use --unit to pick one)");
}

// ---------------------------------------------------------------------------
// checkpoints

void save_checkpoint(const fs::path& dir, const ParamSet& params,
                     const CliContext& ctx, int iteration) {
  fs::create_directories(dir);
  save_param_set(dir / "params.bin", params);
  nlohmann::json state;
  state["iteration"] = iteration;
  state["config"] = ctx.cfg.to_json();
  write_text_file(dir / "state.json", state.dump(2) + "\n");
}

ParamSet load_checkpoint_params(const fs::path& dir) {
  const fs::path path = dir / "params.bin";
  if (!fs::exists(path))
    throw ConfigError("missing checkpoint parameter file: " + path.string());
  return load_param_set(path);
}

void append_loss_csv(const fs::path& path, const std::vector<MetaStepLog>& history,
                     bool truncate) {
  std::ofstream out(path, truncate ? std::ios::trunc : std::ios::app);
  if (!out) throw RuntimeError("cannot open " + path.string());
  if (truncate) out << "iteration,support_loss,query_loss,ppm_loss\n";
  for (const auto& row : history)
    out << row.iteration << ',' << fmt(row.support_loss) << ','
        << fmt(row.query_loss) << ',' << fmt(row.ppm_loss) << '\n';
}

void write_metrics_csv(const fs::path& path,
                       const std::vector<std::tuple<std::string, std::string,
                                                    std::string, std::string, double>>& rows) {
  std::ofstream out(path);
  out << "run_id,arm,task_id,metric,value\n";
  for (const auto& [run, arm, task, metric, value] : rows)
    out << run << ',' << arm << ',' << task << ',' << metric << ',' << fmt(value) << '\n';
}

void write_longtail_csv(const fs::path& path, const std::vector<BucketRow>& rows) {
  std::ofstream out(path);
  out << "bucket,count,acc,auc\n";
  for (const auto& r : rows) {
    out << r.lo << '-' << r.hi << ',' << r.prediction_count << ',' << fmt(r.acc) << ',';
    if (r.auc_value) out << fmt(*r.auc_value);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// commands

int cmd_gen_data(CliContext& ctx) {
  SyntheticFamily family(ctx.cfg.data.world);
  fs::create_directories(ctx.out);

  nlohmann::json units = nlohmann::json::array();
  int id = 0;
  auto emit = [&](TaskUnit unit, const std::string& role) {
    split_support_query(unit, ctx.cfg.data.support_fraction,
                        derive_seed(ctx.cfg.data.world.rng_seed, 500 + id));
    char stem[32];
    std::snprintf(stem, sizeof(stem), "unit_%03d", id);
    save_unit(ctx.out, stem, unit);
    units.push_back({{"stem", stem}, {"role", role}, {"unit_id", unit.unit_id}});
    ++id;
  };

  for (int i = 0; i < ctx.cfg.data.pool_units; ++i) emit(family.fresh_unit(id), "pool");
  for (int i = 0; i < ctx.cfg.data.sequence_units; ++i) {
    // the drift chain starts from a fresh mastery draw
    TaskUnit unit = i == 0 ? family.fresh_unit(id) : family.next_drift_unit(id);
    emit(std::move(unit), "sequence");
  }
  for (int i = 0; i < ctx.cfg.data.test_units; ++i)
    emit(family.fresh_unit(id, ctx.cfg.data.test_records_target > 0
                                   ? ctx.cfg.data.test_records_target
                                   : -1),
         "test");

  nlohmann::json manifest;
  manifest["units"] = units;
  manifest["config"] = ctx.cfg.to_json();
  write_text_file(ctx.out / "manifest.json", manifest.dump(2) + "\n");
  write_resolved_config(ctx);
  write_run_manifest(ctx, "gen-data");
  std::cout << "wrote " << id << " units to " << ctx.out.string() << "\n";
  return 0;
}

int cmd_ingest(CliContext& ctx) {
  if (ctx.data.empty()) throw ConfigError("ingest: --data is required");
  const auto results = ingest_path(ctx.data);
  fs::create_directories(ctx.out);

  nlohmann::json units = nlohmann::json::array();
  std::ofstream stats(ctx.out / "ingest_stats.csv");
  stats << "unit,null_records,missing_field,duplicates,students_dropped,"
           "records_of_dropped_students,kept\n";
  for (size_t i = 0; i < results.size(); ++i) {
    TaskUnit unit = results[i].unit;
    unit.unit_id = static_cast<int>(i);
    split_support_query(unit, ctx.cfg.data.support_fraction,
                        derive_seed(ctx.cfg.data.world.rng_seed, 500 + i));
    char stem[32];
    std::snprintf(stem, sizeof(stem), "unit_%03zu", i);
    save_unit(ctx.out, stem, unit);
    units.push_back({{"stem", stem}, {"role", "ingested"}, {"unit_id", unit.unit_id}});
    const IngestStats& s = results[i].stats;
    stats << stem << ',' << s.null_records << ',' << s.missing_field << ','
          << s.duplicates << ',' << s.students_dropped << ','
          << s.records_of_dropped_students << ',' << s.kept << '\n';
  }
  nlohmann::json manifest;
  manifest["units"] = units;
  manifest["config"] = ctx.cfg.to_json();
  write_text_file(ctx.out / "manifest.json", manifest.dump(2) + "\n");
  write_resolved_config(ctx);
  write_run_manifest(ctx, "ingest");
  std::cout << "ingested " << results.size() << " unit(s) into " << ctx.out.string() << "\n";
  return 0;
}

int cmd_meta_train(CliContext& ctx) {
  if (ctx.data.empty()) throw ConfigError("meta-train: --data is required");
  ctx.input_hashes.emplace_back("data_manifest", file_hash(ctx.data / "manifest.json"));
  const DataDir data = load_data_dir(ctx.data);
  std::vector<TaskUnit> pool = data.by_role("pool");
  if (pool.empty()) pool = require_role(data, "ingested");

  fs::create_directories(ctx.out);
  const fs::path ckpt = ctx.out / "checkpoint";

  int start_iteration = 0;
  ParamSet init;
  if (ctx.resume && fs::exists(ckpt / "state.json")) {
    const nlohmann::json state =
        nlohmann::json::parse(read_text_file(ckpt / "state.json"));
    start_iteration = state.at("iteration").get<int>();
    init = load_checkpoint_params(ckpt);
    std::cout << "resuming from iteration " << start_iteration << "\n";
  } else {
    init = xavier_init_for(pool[0], ctx.cfg, derive_seed(ctx.cfg.meta.rng_seed, 0x1A17));
  }
  if (start_iteration >= ctx.cfg.meta.meta_epochs && ctx.resume) {
    std::cout << "checkpoint already trained for " << start_iteration << " iterations\n";
    return 0;
  }

  KbArchitecture arch;
  arch.input_dim = pool[0].num_skills;
  arch.hidden = ctx.cfg.arch.hidden;
  arch.dropout = ctx.cfg.arch.dropout;
  const MetaResult result = meta_train(pool, std::move(init), ctx.cfg.meta,
                                       make_kb_loss(arch), nullptr, ctx.cfg.ppm.weight,
                                       start_iteration);

  save_checkpoint(ckpt, result.theta_star, ctx, ctx.cfg.meta.meta_epochs);
  if (ctx.cfg.ppm.enabled && !ctx.no_ppm) {
    const ImportanceMap importance = pool_importance(result.theta_star, pool, ctx.cfg);
    save_importance(ckpt / "importance.bin", importance);
  }
  append_loss_csv(ctx.out / "loss.csv", result.history, start_iteration == 0);
  write_resolved_config(ctx);
  write_run_manifest(ctx, "meta-train");
  const double final_loss =
      result.history.empty() ? 0.0 : result.history.back().query_loss;
  std::cout << "meta-trained " << ctx.cfg.meta.meta_epochs << " iterations, final query loss "
            << fmt(final_loss) << ", checkpoint at " << ckpt.string() << "\n";
  return 0;
}

// fine-tune + per-class stage; shared by fine-tune and evaluate-like flows
PipelineModel build_pipeline(const CliContext& ctx, const TaskUnit& unit,
                             const ParamSet& theta_star,
                             const ImportanceMap* importance) {
  return fit_test_unit(theta_star, unit, ctx.cfg, importance,
                       derive_seed(ctx.cfg.meta.rng_seed, 0xF17E),
                       !ctx.no_perclass);
}

int cmd_fine_tune(CliContext& ctx) {
  if (ctx.data.empty()) throw ConfigError("fine-tune: --data is required");
  const DataDir data = load_data_dir(ctx.data);
  const TaskUnit& unit = pick_unit(data, ctx, "test");

  ParamSet theta_star;
  ImportanceMap importance;
  bool have_importance = false;
  if (ctx.no_meta) {
    theta_star = xavier_init_for(unit, ctx.cfg, derive_seed(ctx.cfg.meta.rng_seed, 0xAB));
  } else {
    if (ctx.checkpoint.empty()) throw ConfigError("fine-tune: --checkpoint is required (or --no-meta)");
    theta_star = load_checkpoint_params(ctx.checkpoint);
    ctx.input_hashes.emplace_back("checkpoint", file_hash(ctx.checkpoint / "params.bin"));
    const fs::path imp_path = ctx.checkpoint / "importance.bin";
    if (!ctx.no_ppm && ctx.cfg.ppm.enabled && fs::exists(imp_path)) {
      importance = load_importance(imp_path);
      have_importance = true;
    }
  }

  const PipelineModel model =
      build_pipeline(ctx, unit, theta_star, have_importance ? &importance : nullptr);

  fs::create_directories(ctx.out);
  save_param_set(ctx.out / "params.bin", model.kb);
  if (model.has_heads) {
    save_heads(ctx.out / "heads.bin", model.heads);
    write_text_file(ctx.out / "mask.json", mask_to_json(model.mask).dump(2) + "\n");
  }

  const PredictionSet preds =
      model.has_heads ? predict_heads(model, unit, unit.query_indices)
                      : predict_kb(model.kb, unit, unit.query_indices);
  std::vector<std::tuple<std::string, std::string, std::string, std::string, double>> rows;
  const std::string task = std::to_string(unit.unit_id);
  rows.emplace_back("finetune", model.has_heads ? "perclass" : "kb", task, "acc",
                    accuracy(preds));
  rows.emplace_back("finetune", model.has_heads ? "perclass" : "kb", task, "rmse",
                    rmse(preds));
  if (const auto a = auc(preds))
    rows.emplace_back("finetune", model.has_heads ? "perclass" : "kb", task, "auc", *a);
  write_metrics_csv(ctx.out / "metrics.csv", rows);
  write_resolved_config(ctx);
  write_run_manifest(ctx, "fine-tune");
  std::cout << "fine-tuned on unit " << unit.unit_id << ", query ACC "
            << fmt(accuracy(preds)) << "\n";
  return 0;
}

int cmd_evaluate(CliContext& ctx) {
  if (ctx.data.empty()) throw ConfigError("evaluate: --data is required");
  if (ctx.checkpoint.empty()) throw ConfigError("evaluate: --checkpoint is required");
  const DataDir data = load_data_dir(ctx.data);
  const TaskUnit& unit = pick_unit(data, ctx, "test");

  const fs::path params_path = ctx.checkpoint / "params.bin";
  if (!fs::exists(params_path))
    throw ConfigError("missing checkpoint parameter file: " + params_path.string());
  const ParamSet params = load_param_set(params_path);
  ctx.input_hashes.emplace_back("checkpoint", file_hash(params_path));

  fs::create_directories(ctx.out);
  std::vector<std::tuple<std::string, std::string, std::string, std::string, double>> rows;
  const std::string task = std::to_string(unit.unit_id);

  const PredictionSet kb_preds = predict_kb(params, unit, unit.query_indices);
  rows.emplace_back("evaluate", "kb", task, "acc", accuracy(kb_preds));
  rows.emplace_back("evaluate", "kb", task, "rmse", rmse(kb_preds));
  if (const auto a = auc(kb_preds)) rows.emplace_back("evaluate", "kb", task, "auc", *a);

  PredictionSet best = kb_preds;
  if (!ctx.no_perclass && fs::exists(ctx.checkpoint / "heads.bin")) {
    PipelineModel model;
    model.kb = params;
    model.heads = load_heads(ctx.checkpoint / "heads.bin");
    model.mask = mask_from_json(
        nlohmann::json::parse(read_text_file(ctx.checkpoint / "mask.json")));
    model.has_heads = true;
    const PredictionSet head_preds = predict_heads(model, unit, unit.query_indices);
    rows.emplace_back("evaluate", "perclass", task, "acc", accuracy(head_preds));
    rows.emplace_back("evaluate", "perclass", task, "rmse", rmse(head_preds));
    if (const auto a = auc(head_preds))
      rows.emplace_back("evaluate", "perclass", task, "auc", *a);
    best = head_preds;
  }
  write_metrics_csv(ctx.out / "metrics.csv", rows);

  const auto buckets = longtail_buckets(best, unit, ctx.cfg.eval.bucket_edges);
  if (!buckets.empty()) write_longtail_csv(ctx.out / "longtail.csv", buckets);

  write_resolved_config(ctx);
  write_run_manifest(ctx, "evaluate");
  std::cout << "evaluated unit " << unit.unit_id << ", ACC " << fmt(accuracy(best)) << "\n";
  return 0;
}

int cmd_continual(CliContext& ctx) {
  if (ctx.data.empty()) throw ConfigError("continual: --data is required");
  ctx.input_hashes.emplace_back("data_manifest", file_hash(ctx.data / "manifest.json"));
  const DataDir data = load_data_dir(ctx.data);
  const auto pool = require_role(data, "pool");
  const auto sequence = require_role(data, "sequence");

  const bool ppm_enabled = ctx.cfg.ppm.enabled && !ctx.no_ppm;
  ParamSet xavier;
  const ParamSet* init_override = nullptr;
  if (ctx.no_meta) {
    xavier = xavier_init_for(sequence[0], ctx.cfg, derive_seed(ctx.cfg.meta.rng_seed, 0xAB));
    init_override = &xavier;
  }
  const ContinualOutcome outcome = run_continual(pool, sequence, ctx.cfg, ppm_enabled,
                                                 ctx.cfg.meta.rng_seed, init_override);

  fs::create_directories(ctx.out);
  std::ofstream matrix(ctx.out / "matrix.csv");
  matrix << "trained_through";
  for (size_t t = 0; t < sequence.size(); ++t) matrix << ",task_" << t;
  matrix << '\n';
  for (size_t r = 0; r < outcome.matrix.rows.size(); ++r) {
    matrix << "task_" << r;
    for (size_t t = 0; t < sequence.size(); ++t) {
      matrix << ',';
      if (t < outcome.matrix.rows[r].size()) matrix << fmt(outcome.matrix.rows[r][t]);
    }
    matrix << '\n';
  }
  matrix << "bwt," << fmt(outcome.bwt_value) << '\n';

  write_resolved_config(ctx);
  write_run_manifest(ctx, "continual");
  std::cout << "continual (" << (ppm_enabled ? "ppm" : "no-ppm") << ") BWT "
            << fmt(outcome.bwt_value) << ", matrix at "
            << (ctx.out / "matrix.csv").string() << "\n";
  return 0;
}

int cmd_ablate(CliContext& ctx) {
  if (ctx.data.empty()) throw ConfigError("ablate: --data is required");
  ctx.input_hashes.emplace_back("data_manifest", file_hash(ctx.data / "manifest.json"));
  const DataDir data = load_data_dir(ctx.data);
  const auto pool = require_role(data, "pool");
  const TaskUnit& test_unit = pick_unit(data, ctx, "test");
  const auto sequence = require_role(data, "sequence");
  const TaskUnit& successor = sequence.front();

  std::map<std::string, std::vector<double>> acc_by_arm;
  std::vector<std::string> arm_order;
  std::vector<std::tuple<std::string, std::string, std::string, std::string, double>> rows;
  for (int s = 0; s < ctx.seeds; ++s) {
    const auto table = run_ablation(pool, test_unit, successor, ctx.cfg,
                                    derive_seed(ctx.cfg.meta.rng_seed, s));
    for (const auto& row : table) {
      if (!acc_by_arm.count(row.arm)) arm_order.push_back(row.arm);
      acc_by_arm[row.arm].push_back(row.acc);
      rows.emplace_back("seed" + std::to_string(s), row.arm,
                        std::to_string(test_unit.unit_id), "acc", row.acc);
    }
  }

  fs::create_directories(ctx.out);
  std::ofstream table(ctx.out / "ablation.csv");
  table << "arm,mean_acc,seeds\n";
  for (const auto& arm : arm_order) {
    const auto& values = acc_by_arm[arm];
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= values.size();
    table << arm << ',' << fmt(mean) << ',' << values.size() << '\n';
    std::cout << arm << ": mean ACC " << fmt(mean) << " over " << values.size()
              << " seed(s)\n";
  }
  write_metrics_csv(ctx.out / "metrics.csv", rows);
  write_resolved_config(ctx);
  write_run_manifest(ctx, "ablate");
  return 0;
}

int cmd_grid(CliContext& ctx) {
  if (ctx.data.empty()) throw ConfigError("grid: --data is required");
  if (ctx.checkpoint.empty()) throw ConfigError("grid: --checkpoint is required");
  const DataDir data = load_data_dir(ctx.data);
  const TaskUnit& unit = pick_unit(data, ctx, "test");
  const ParamSet theta_star = load_checkpoint_params(ctx.checkpoint);
  ctx.input_hashes.emplace_back("checkpoint", file_hash(ctx.checkpoint / "params.bin"));

  ImportanceMap importance;
  bool have_importance = false;
  const fs::path imp_path = ctx.checkpoint / "importance.bin";
  if (!ctx.no_ppm && ctx.cfg.ppm.enabled && fs::exists(imp_path)) {
    importance = load_importance(imp_path);
    have_importance = true;
  }

  const auto rows = run_grid(theta_star, unit, ctx.cfg,
                             have_importance ? &importance : nullptr,
                             ctx.cfg.meta.rng_seed);

  fs::create_directories(ctx.out);
  std::ofstream out(ctx.out / "grid.csv");
  out << "eta,lambda,mu,val_acc\n";
  for (const auto& r : rows)
    out << fmt(r.eta) << ',' << fmt(r.lambda) << ',' << r.mu << ',' << fmt(r.val_acc) << '\n';

  const GridRow& best = rows.front();
  nlohmann::json best_json = {{"eta", best.eta},
                              {"lambda", best.lambda},
                              {"mu", best.mu},
                              {"val_acc", best.val_acc}};
  write_text_file(ctx.out / "best_config.json", best_json.dump(2) + "\n");
  write_resolved_config(ctx);
  write_run_manifest(ctx, "grid");
  std::cout << rows.size() << " grid cells; best eta=" << best.eta
            << " lambda=" << best.lambda << " mu=" << best.mu << " val ACC "
            << fmt(best.val_acc) << "\n";
  return 0;
}

int cmd_report(CliContext& ctx) {
  const fs::path dir = ctx.data.empty() ? ctx.out : ctx.data;
  if (!fs::exists(dir)) throw ConfigError("report: directory " + dir.string() + " not found");
  std::ostringstream md;
  md << "# metacd run report\n\n";

  auto echo_csv = [&](const fs::path& path, const std::string& title, int max_rows) {
    if (!fs::exists(path)) return;
    md << "## " << title << "\n\n```\n";
    std::ifstream in(path);
    std::string line;
    int n = 0;
    while (std::getline(in, line) && n++ < max_rows) md << line << '\n';
    if (n >= max_rows) md << "...\n";
    md << "```\n\n";
  };

  echo_csv(dir / "ablation.csv", "Ablation", 10);
  echo_csv(dir / "matrix.csv", "Continual matrix", 16);
  echo_csv(dir / "metrics.csv", "Metrics", 40);
  echo_csv(dir / "longtail.csv", "Long-tail buckets", 12);
  echo_csv(dir / "grid.csv", "Grid search (best first)", 12);
  if (fs::exists(dir / "loss.csv")) {
    std::ifstream in(dir / "loss.csv");
    std::string line, last;
    int n = 0;
    while (std::getline(in, line)) {
      ++n;
      last = line;
    }
    md << "## Training\n\n" << (n - 1) << " logged iterations, last: `" << last << "`\n";
  }

  const std::string text = md.str();
  std::cout << text;
  write_text_file(dir / "report.md", text);
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{
      "metacd: meta-learned cognitive diagnosis with parameter protection and "
      "per-class heads.\n"
      "Output directory resolution: --out, else $METACD_OUT_ROOT/<command>, "
      "else ./metacd-out/<command>."};
  app.require_subcommand(1);

  CliContext ctx;
  for (int i = 0; i < argc; ++i) {
    if (i) ctx.argv_line += ' ';
    ctx.argv_line += argv[i];
  }

  std::string config_path;
  std::string out_str, data_str, checkpoint_str;
  int64_t seed_override = -1;

  app.add_option("--config", config_path, "JSON run configuration (unknown keys rejected)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed_override,
                 "Override both the data and training seeds");
  app.add_option("--out", out_str, "Output directory");
  app.add_flag("--resume", ctx.resume, "Resume meta-training from an existing checkpoint");
  app.add_flag("--no-ppm", ctx.no_ppm, "Disable the parameter protection penalty");
  app.add_flag("--no-perclass", ctx.no_perclass, "Skip the per-class diagnosis heads");
  app.add_flag("--no-meta", ctx.no_meta, "Skip meta-training (Xavier initialization)");

  auto* gen = app.add_subcommand("gen-data", "Generate synthetic task units");
  auto* ing = app.add_subcommand("ingest", "Ingest JSON response logs into task units");
  auto* mt = app.add_subcommand("meta-train", "Meta-train the knowledge base on a pool");
  auto* ft = app.add_subcommand("fine-tune", "Fine-tune a checkpoint on a test unit");
  auto* ev = app.add_subcommand("evaluate", "Evaluate a fine-tuned model on a unit");
  auto* co = app.add_subcommand("continual", "Task-incremental run with BWT");
  auto* ab = app.add_subcommand("ablate", "Four-arm ablation study");
  auto* gr = app.add_subcommand("grid", "Grid-search head hyperparameters");
  auto* re = app.add_subcommand("report", "Summarize an output directory");

  for (CLI::App* sub : {gen, ing, mt, ft, ev, co, ab, gr, re}) {
    sub->fallthrough();  // global flags may appear after the subcommand
    sub->add_option("--data", data_str, "Data directory (or raw JSON for ingest)");
  }
  for (CLI::App* sub : {ft, ev, gr})
    sub->add_option("--checkpoint", checkpoint_str, "Checkpoint directory");
  for (CLI::App* sub : {ft, ev, gr, ab})
    sub->add_option("--unit", ctx.unit_stem, "Unit stem inside the data directory");
  ab->add_option("--seeds", ctx.seeds, "Number of paired seeds")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    ctx.cfg = config_path.empty() ? RunConfig{} : RunConfig::load_file(config_path);
    if (seed_override >= 0) {
      ctx.cfg.meta.rng_seed = static_cast<uint64_t>(seed_override);
      ctx.cfg.data.world.rng_seed = static_cast<uint64_t>(seed_override);
    }
    if (ctx.no_ppm) ctx.cfg.ppm.enabled = false;
    ctx.cfg.validate();
    if (!config_path.empty())
      ctx.input_hashes.emplace_back("config", file_hash(config_path));

    const std::string command = app.get_subcommands().front()->get_name();
    if (!out_str.empty()) {
      ctx.out = out_str;
    } else if (const char* root = std::getenv(kOutRootEnv)) {
      ctx.out = fs::path(root) / command;
    } else {
      ctx.out = fs::path("metacd-out") / command;
    }
    ctx.data = data_str;
    ctx.checkpoint = checkpoint_str;

    if (command == "gen-data") return cmd_gen_data(ctx);
    if (command == "ingest") return cmd_ingest(ctx);
    if (command == "meta-train") return cmd_meta_train(ctx);
    if (command == "fine-tune") return cmd_fine_tune(ctx);
    if (command == "evaluate") return cmd_evaluate(ctx);
    if (command == "continual") return cmd_continual(ctx);
    if (command == "ablate") return cmd_ablate(ctx);
    if (command == "grid") return cmd_grid(ctx);
    if (command == "report") return cmd_report(ctx);
    throw ConfigError("unknown command " + command);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace metacd
