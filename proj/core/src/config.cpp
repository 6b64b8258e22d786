#include "metacd/config.hpp"

#include <set>

#include "metacd/serialize.hpp"

namespace metacd {

namespace {

// Tracks which keys of one JSON object were consumed; leftover keys are
// reported as typos with their full path.
class StrictView {
 public:
  StrictView(nlohmann::json j, std::string path)
      : j_(std::move(j)), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError("config: " + path_ + " must be an object");
  }

  template <typename T>
  T get(const char* key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: bad value for " + path_ + "." + key + ": " + e.what());
    }
  }

  nlohmann::json child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return nlohmann::json::object();
    return j_.at(key);
  }

  void done() {
    for (const auto& [key, value] : j_.items()) {
      (void)value;
      if (!seen_.count(key))
        throw ConfigError("config: unknown key " + path_ + "." + key);
    }
  }

 private:
  nlohmann::json j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig cfg;
  StrictView root(j, "$");

  {
    StrictView data(root.child("data"), "$.data");
    auto& w = cfg.data.world;
    w.num_students = data.get("num_students", w.num_students);
    w.num_questions = data.get("num_questions", w.num_questions);
    w.num_skills = data.get("num_skills", w.num_skills);
    w.slip = data.get("slip", w.slip);
    w.guess = data.get("guess", w.guess);
    w.zipf_exponent = data.get("zipf_exponent", w.zipf_exponent);
    w.records_target = data.get("records_target", w.records_target);
    w.drift = data.get("drift", w.drift);
    w.rng_seed = data.get("rng_seed", w.rng_seed);
    w.max_skills_per_question = data.get("max_skills_per_question", w.max_skills_per_question);
    w.mastery_prob = data.get("mastery_prob", w.mastery_prob);
    w.mastery_profile_spread = data.get("mastery_profile_spread", w.mastery_profile_spread);
    cfg.data.pool_units = data.get("pool_units", cfg.data.pool_units);
    cfg.data.sequence_units = data.get("sequence_units", cfg.data.sequence_units);
    cfg.data.test_units = data.get("test_units", cfg.data.test_units);
    cfg.data.test_records_target = data.get("test_records_target", cfg.data.test_records_target);
    cfg.data.support_fraction = data.get("support_fraction", cfg.data.support_fraction);
    data.done();
  }
  {
    StrictView arch(root.child("arch"), "$.arch");
    cfg.arch.hidden = arch.get("hidden", cfg.arch.hidden);
    cfg.arch.dropout = arch.get("dropout", cfg.arch.dropout);
    arch.done();
  }
  {
    StrictView meta(root.child("meta"), "$.meta");
    cfg.meta.alpha = meta.get("alpha", cfg.meta.alpha);
    cfg.meta.beta = meta.get("beta", cfg.meta.beta);
    cfg.meta.batch_size = meta.get("batch_size", cfg.meta.batch_size);
    cfg.meta.inner_minibatches = meta.get("inner_minibatches", cfg.meta.inner_minibatches);
    cfg.meta.samples = meta.get("samples", cfg.meta.samples);
    cfg.meta.meta_epochs = meta.get("meta_epochs", cfg.meta.meta_epochs);
    cfg.meta.fine_tune_steps = meta.get("fine_tune_steps", cfg.meta.fine_tune_steps);
    cfg.meta.adam_lr = meta.get("adam_lr", cfg.meta.adam_lr);
    cfg.meta.rng_seed = meta.get("rng_seed", cfg.meta.rng_seed);
    cfg.meta.per_task_copies = meta.get("per_task_copies", cfg.meta.per_task_copies);
    meta.done();
  }
  {
    StrictView ppm(root.child("ppm"), "$.ppm");
    cfg.ppm.enabled = ppm.get("enabled", cfg.ppm.enabled);
    cfg.ppm.weight = ppm.get("weight", cfg.ppm.weight);
    cfg.ppm.sample_cap = ppm.get("sample_cap", cfg.ppm.sample_cap);
    cfg.ppm.multi_anchor = ppm.get("multi_anchor", cfg.ppm.multi_anchor);
    ppm.done();
  }
  {
    StrictView heads(root.child("heads"), "$.heads");
    cfg.heads.loss.eta = heads.get("eta", cfg.heads.loss.eta);
    cfg.heads.loss.lambda = heads.get("lambda", cfg.heads.loss.lambda);
    cfg.heads.loss.mu = heads.get("mu", cfg.heads.loss.mu);
    cfg.heads.steps = heads.get("steps", cfg.heads.steps);
    cfg.heads.adam_lr = heads.get("adam_lr", cfg.heads.adam_lr);
    cfg.heads.bins = heads.get("bins", cfg.heads.bins);
    cfg.heads.keep_threshold = heads.get("keep_threshold", cfg.heads.keep_threshold);
    cfg.heads.kappa0 = heads.get("kappa0", cfg.heads.kappa0);
    cfg.heads.kappa1 = heads.get("kappa1", cfg.heads.kappa1);
    heads.done();
  }
  {
    StrictView eval(root.child("eval"), "$.eval");
    cfg.eval.metric = eval.get<std::string>("metric", cfg.eval.metric);
    cfg.eval.bucket_edges = eval.get("bucket_edges", cfg.eval.bucket_edges);
    eval.done();
  }
  {
    StrictView grid(root.child("grid"), "$.grid");
    cfg.grid.eta_values = grid.get("eta_values", cfg.grid.eta_values);
    cfg.grid.lambda_values = grid.get("lambda_values", cfg.grid.lambda_values);
    cfg.grid.mu_values = grid.get("mu_values", cfg.grid.mu_values);
    cfg.grid.steps = grid.get("steps", cfg.grid.steps);
    cfg.grid.jobs = grid.get("jobs", cfg.grid.jobs);
    grid.done();
  }
  root.done();

  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load_file(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + " at byte " +
                      std::to_string(e.byte) + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
  return {
      {"data",
       {{"num_students", data.world.num_students},
        {"num_questions", data.world.num_questions},
        {"num_skills", data.world.num_skills},
        {"slip", data.world.slip},
        {"guess", data.world.guess},
        {"zipf_exponent", data.world.zipf_exponent},
        {"records_target", data.world.records_target},
        {"drift", data.world.drift},
        {"rng_seed", data.world.rng_seed},
        {"max_skills_per_question", data.world.max_skills_per_question},
        {"mastery_prob", data.world.mastery_prob},
        {"mastery_profile_spread", data.world.mastery_profile_spread},
        {"pool_units", data.pool_units},
        {"sequence_units", data.sequence_units},
        {"test_units", data.test_units},
        {"test_records_target", data.test_records_target},
        {"support_fraction", data.support_fraction}}},
      {"arch", {{"hidden", arch.hidden}, {"dropout", arch.dropout}}},
      {"meta",
       {{"alpha", meta.alpha},
        {"beta", meta.beta},
        {"batch_size", meta.batch_size},
        {"inner_minibatches", meta.inner_minibatches},
        {"samples", meta.samples},
        {"meta_epochs", meta.meta_epochs},
        {"fine_tune_steps", meta.fine_tune_steps},
        {"adam_lr", meta.adam_lr},
        {"rng_seed", meta.rng_seed},
        {"per_task_copies", meta.per_task_copies}}},
      {"ppm",
       {{"enabled", ppm.enabled},
        {"weight", ppm.weight},
        {"sample_cap", ppm.sample_cap},
        {"multi_anchor", ppm.multi_anchor}}},
      {"heads",
       {{"eta", heads.loss.eta},
        {"lambda", heads.loss.lambda},
        {"mu", heads.loss.mu},
        {"steps", heads.steps},
        {"adam_lr", heads.adam_lr},
        {"bins", heads.bins},
        {"keep_threshold", heads.keep_threshold},
        {"kappa0", heads.kappa0},
        {"kappa1", heads.kappa1}}},
      {"eval", {{"metric", eval.metric}, {"bucket_edges", eval.bucket_edges}}},
      {"grid",
       {{"eta_values", grid.eta_values},
        {"lambda_values", grid.lambda_values},
        {"mu_values", grid.mu_values},
        {"steps", grid.steps},
        {"jobs", grid.jobs}}}};
}

void RunConfig::validate() const {
  data.world.validate();
  const KbArchitecture probe{data.world.num_skills, arch.hidden, arch.dropout};
  probe.validate();
  meta.validate();
  heads.loss.validate();
  if (data.pool_units < 0 || data.sequence_units < 0 || data.test_units < 0)
    throw ConfigError("config: unit counts must be >= 0");
  if (data.support_fraction <= 0.0 || data.support_fraction >= 1.0)
    throw ConfigError("config: support_fraction must be in (0, 1)");
  if (ppm.weight < 0.0) throw ConfigError("config: ppm.weight must be >= 0");
  if (ppm.sample_cap < 1) throw ConfigError("config: ppm.sample_cap must be >= 1");
  if (heads.steps < 0) throw ConfigError("config: heads.steps must be >= 0");
  if (heads.adam_lr <= 0.0) throw ConfigError("config: heads.adam_lr must be > 0");
  if (heads.bins < 2) throw ConfigError("config: heads.bins must be >= 2");
  if (heads.keep_threshold <= 0.0 || heads.keep_threshold > 1.0)
    throw ConfigError("config: heads.keep_threshold must be in (0, 1]");
  if (eval.metric != "auc" && eval.metric != "acc")
    throw ConfigError("config: eval.metric must be auc or acc");
  if (grid.jobs < 1) throw ConfigError("config: grid.jobs must be >= 1");
  if (grid.steps < 1) throw ConfigError("config: grid.steps must be >= 1");
  for (int m : grid.mu_values)
    if (m != 2 && m != 3 && m != 4)
      throw ConfigError("config: grid.mu_values entries must be 2, 3 or 4");
}

}  // namespace metacd
