#include "dpprompt/pipelines.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpprompt/accountant.hpp"
#include "dpprompt/audit.hpp"
#include "dpprompt/errors.hpp"
#include "dpprompt/gnmax.hpp"
#include "dpprompt/hash.hpp"
#include "dpprompt/jsonl.hpp"
#include "dpprompt/ledger.hpp"
#include "dpprompt/log.hpp"
#include "dpprompt/mia.hpp"
#include "dpprompt/softprompt.hpp"
#include "dpprompt/transfer.hpp"

namespace dpprompt::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kKnownKeys[] = {
    "run.seed",
    "task.labels", "task.instruction",
    "data.private", "data.public", "data.test", "data.labeled", "data.ledger", "data.prompt",
    "backend.kind", "backend.seed", "backend.teacher_accuracy", "backend.leakage_gap", "backend.consensus",
    "backend.mislabel_penalty", "backend.top_token_only", "backend.other_rate",
    "backend.endpoint", "backend.model", "backend.token_env", "backend.mode", "backend.timeout_ms",
    "backend.max_attempts", "backend.base_delay_ms", "backend.max_delay_ms", "backend.parallelism",
    "backend.top_logprobs",
    "attack.n_trials", "attack.n_nonmembers", "attack.workers",
    "transfer.n_teachers", "transfer.shots", "transfer.threshold", "transfer.sigma1", "transfer.sigma2",
    "transfer.budget_epsilon", "transfer.delta", "transfer.max_public_queries", "transfer.calibrate",
    "transfer.accounting", "transfer.evaluate_ensemble",
    "student.candidate_pool_size", "student.validation_fraction", "student.repetitions",
    "dpsgd.learning_rate", "dpsgd.noise_scale", "dpsgd.target_epsilon", "dpsgd.batch_size",
    "dpsgd.max_grad_norm", "dpsgd.iterations", "dpsgd.delta", "dpsgd.n_train", "dpsgd.n_test",
    "dpsgd.model_seed", "dpsgd.vocab", "dpsgd.embed", "dpsgd.prompt_len", "dpsgd.hidden", "dpsgd.classes",
    "dpsgd.normalize_by_expected_batch",
    "account.mode", "account.delta",
};

std::size_t get_size(const Config& cfg, std::string_view key, std::size_t fallback) {
  const auto v = cfg.get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ConfigError("configuration key '" + std::string(key) + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

Task load_task(const Config& cfg) {
  auto labels = cfg.get_list("task.labels");
  if (labels.empty()) throw ConfigError("task.labels must list the class tokens");
  try {
    return Task(std::move(labels));
  } catch (const DomainError& e) {
    throw ConfigError(std::string("task.labels: ") + e.what());
  }
}

fs::path require_input(const Config& cfg, std::string_view key) {
  auto p = cfg.path(key);
  if (!p) throw ConfigError(std::string(key) + " is required for this pipeline");
  if (!fs::is_regular_file(*p)) throw ConfigError("input file for " + std::string(key) + " not found: " + p->string());
  return *p;
}

std::optional<fs::path> optional_input(const Config& cfg, std::string_view key) {
  auto p = cfg.path(key);
  if (p && !fs::is_regular_file(*p)) {
    throw ConfigError("input file for " + std::string(key) + " not found: " + p->string());
  }
  return p;
}

void add_truth(std::unordered_map<std::string, int>& truth, const LabeledDataset& data) {
  for (const auto& r : data.records) truth.emplace(r.text, r.label.index);
}

void add_truth(std::unordered_map<std::string, int>& truth, const Task& task,
               const std::vector<PublicRecord>& records) {
  for (const auto& r : records) {
    if (!r.label) continue;
    if (auto cls = task.find(*r.label)) truth.emplace(r.text, cls->index);
  }
}

// Ground truth for the mock: every labeled input file except ensemble output.
std::unordered_map<std::string, int> truth_table(const Config& cfg, const Task& task) {
  std::unordered_map<std::string, int> truth;
  if (cfg.get_string("backend.kind", "mock") != "mock") return truth;
  if (auto p = optional_input(cfg, "data.private")) add_truth(truth, read_labeled_jsonl(*p, task));
  if (auto p = optional_input(cfg, "data.public")) add_truth(truth, task, read_public_jsonl(*p));
  if (auto p = optional_input(cfg, "data.test")) add_truth(truth, read_labeled_jsonl(*p, task));
  return truth;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json number_or_string(double v) {
  if (std::isfinite(v)) return v;
  return fmt(v);
}

void write_json(const fs::path& path, const json& doc) { write_text_file(path, doc.dump(2) + "\n"); }

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

json prompt_to_json(const PromptSpec& spec) {
  json demos = json::array();
  for (const auto& d : spec.demonstrations) demos.push_back({{"text", d.text}, {"label", d.label.token}});
  return {{"template_id", spec.template_id}, {"instruction", spec.instruction}, {"demonstrations", demos}};
}

PromptSpec read_prompt(const fs::path& path, const Task& task) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open prompt file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    const json doc = json::parse(buf.str());
    const json& p = doc.contains("prompt") ? doc.at("prompt") : doc;
    PromptSpec spec;
    spec.instruction = p.value("instruction", std::string());
    spec.template_id = p.value("template_id", std::string(kDefaultTemplate));
    for (const auto& d : p.at("demonstrations")) {
      const auto label = task.find(d.at("label").get<std::string>());
      if (!label) throw ParseError(path.string() + ": demonstration label is not a task class", 1);
      spec.demonstrations.push_back(Demonstration{d.at("text").get<std::string>(), *label});
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": invalid prompt file (" + e.what() + ")", 1);
  }
}

GNMaxConfig gnmax_from(const Config& cfg, std::uint64_t seed) {
  GNMaxConfig g;
  g.threshold = cfg.get_double("transfer.threshold", g.threshold);
  g.sigma1 = cfg.get_double("transfer.sigma1", g.sigma1);
  g.sigma2 = cfg.get_double("transfer.sigma2", g.sigma2);
  g.seed = seed;
  return g;
}

TransferConfig transfer_config(const Config& cfg, std::uint64_t seed) {
  TransferConfig tc;
  tc.n_teachers = get_size(cfg, "transfer.n_teachers", tc.n_teachers);
  tc.shots = get_size(cfg, "transfer.shots", tc.shots);
  tc.gnmax = gnmax_from(cfg, seed);
  tc.budget_epsilon = cfg.get_double("transfer.budget_epsilon", tc.budget_epsilon);
  tc.delta = cfg.get_double("transfer.delta", tc.delta);
  tc.max_public_queries = get_size(cfg, "transfer.max_public_queries", tc.max_public_queries);
  tc.calibrate = cfg.get_bool("transfer.calibrate", tc.calibrate);
  tc.candidate_pool_size = get_size(cfg, "student.candidate_pool_size", tc.candidate_pool_size);
  tc.validation_fraction = cfg.get_double("student.validation_fraction", tc.validation_fraction);
  tc.seed = seed;
  try {
    tc.accounting = accounting_mode_from_string(cfg.get_string("transfer.accounting", "data-dependent"));
  } catch (const Error& e) {
    throw ConfigError(std::string("transfer.accounting: ") + e.what());
  }
  tc.instruction = cfg.get_string("task.instruction", "");
  try {
    tc.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return tc;
}

// --- attack -------------------------------------------------------------------

json run_attack_pipeline(const Config& cfg, std::uint64_t seed, const fs::path& out) {
  const Task task = load_task(cfg);
  const fs::path private_path = require_input(cfg, "data.private");
  mia::AttackConfig ac;
  ac.n_trials = get_size(cfg, "attack.n_trials", ac.n_trials);
  ac.n_nonmembers = get_size(cfg, "attack.n_nonmembers", ac.n_nonmembers);
  ac.workers = std::max<std::size_t>(1, get_size(cfg, "attack.workers", ac.workers));
  ac.seed = seed;
  ac.instruction = cfg.get_string("task.instruction", "");
  if (ac.n_trials == 0 || ac.n_nonmembers == 0) throw ConfigError("attack needs at least one trial and non-member");

  const auto truth = truth_table(cfg, task);
  make_backend(cfg, task, truth);  // surface backend configuration errors before any work
  const LabeledDataset data = read_labeled_jsonl(private_path, task);
  const auto result = mia::run_attack([&](std::size_t) { return make_backend(cfg, task, truth); }, data, ac);

  fs::create_directories(out);
  std::string curve = "fpr,tpr\n";
  for (const auto& p : result.mean_curve.points) curve += fmt(p.fpr) + "," + fmt(p.tpr) + "\n";
  write_text_file(out / "attack_curve.csv", curve);
  std::string trials = "trial,auc\n";
  for (std::size_t t = 0; t < result.trial_aucs.size(); ++t) {
    trials += std::to_string(t) + "," + fmt(result.trial_aucs[t]) + "\n";
  }
  write_text_file(out / "attack_trials.csv", trials);
  const json summary = {{"schema_version", kSchemaVersion},
                        {"mean_auc", result.mean_auc},
                        {"std_auc", result.std_auc},
                        {"n_trials", ac.n_trials},
                        {"n_nonmembers", ac.n_nonmembers},
                        {"mean_curve_auc", result.mean_curve.auc}};
  write_json(out / "attack_summary.json", summary);
  return {{"mean_auc", result.mean_auc}, {"std_auc", result.std_auc}, {"n_trials", ac.n_trials}};
}

// --- transfer -----------------------------------------------------------------

json run_transfer_pipeline(const Config& cfg, std::uint64_t seed, const fs::path& out) {
  const Task task = load_task(cfg);
  const fs::path private_path = require_input(cfg, "data.private");
  const fs::path public_path = require_input(cfg, "data.public");
  const auto test_path = optional_input(cfg, "data.test");
  const TransferConfig tc = transfer_config(cfg, seed);
  const bool evaluate_ensemble = cfg.get_bool("transfer.evaluate_ensemble", true);

  const auto truth = truth_table(cfg, task);
  const auto backend = make_backend(cfg, task, truth);
  const PrivateDataset private_data(read_labeled_jsonl(private_path, task));
  std::vector<std::string> texts;
  for (auto& r : read_public_jsonl(public_path)) texts.push_back(std::move(r.text));
  std::optional<LabeledDataset> test;
  if (test_path) test = read_labeled_jsonl(*test_path, task);

  TransferResult result;
  std::optional<double> ensemble_acc;
  {
    audit::PhaseScope phase("transfer");
    const TeacherFlock flock(
        partition_disjoint(private_data.access(), tc.n_teachers, tc.shots, seed, tc.instruction));
    result = transfer::run_knowledge_transfer(*backend, flock, texts, tc);
    if (test && evaluate_ensemble) {
      std::vector<std::optional<ProbVector>> cf;
      if (tc.calibrate && backend->supports_logprobs()) cf = transfer::content_free_table(*backend, flock);
      ensemble_acc = transfer::ensemble_accuracy(*backend, flock, *test, cf);
    }
  }
  const double independent_eps =
      replay(result.ledger, AccountingMode::kDataIndependent).report.epsilon;

  fs::create_directories(out);
  result.ledger.write(out / "ledger.jsonl");
  write_labeled_jsonl(out / "labeled.jsonl", result.labeled);
  std::string consensus = "query_id,plurality,max_count,consensus,answered,label_index,cumulative_epsilon\n";
  for (const auto& e : result.ledger.entries()) {
    const auto& h = e.histogram;
    const auto top = gnmax::plurality(h);
    const double frac = static_cast<double>(h.counts[top]) / static_cast<double>(h.n_teachers);
    consensus += std::to_string(e.query_id) + "," + std::to_string(top) + "," + std::to_string(h.counts[top]) +
                 "," + fmt(frac) + "," + (e.answered_label ? "1" : "0") + "," +
                 (e.answered_label ? std::to_string(*e.answered_label) : std::string()) + "," +
                 fmt(e.cumulative_epsilon) + "\n";
  }
  write_text_file(out / "consensus.csv", consensus);

  json summary = {{"schema_version", kSchemaVersion},
                  {"status", std::string(to_string(result.status))},
                  {"queries", result.state.query_count},
                  {"answered", result.state.answered_count},
                  {"labeled", result.labeled.size()},
                  {"epsilon", number_or_string(result.report.epsilon)},
                  {"epsilon_data_independent", number_or_string(independent_eps)},
                  {"delta", result.report.delta},
                  {"accounting", std::string(to_string(tc.accounting))},
                  {"calibration_skipped", result.calibration_skipped}};
  summary["best_order"] = result.report.best_order ? json(*result.report.best_order) : json(nullptr);
  summary["ensemble_accuracy"] = ensemble_acc ? json(*ensemble_acc) : json(nullptr);
  write_json(out / "transfer_summary.json", summary);
  summary.erase("schema_version");
  return summary;
}

// --- student ------------------------------------------------------------------

json run_student_pipeline(const Config& cfg, std::uint64_t seed, const fs::path& out) {
  const Task task = load_task(cfg);
  const fs::path labeled_path = require_input(cfg, "data.labeled");
  const auto test_path = optional_input(cfg, "data.test");
  TransferConfig tc = transfer_config(cfg, seed);
  const std::size_t repetitions = get_size(cfg, "student.repetitions", 1);
  if (repetitions == 0) throw ConfigError("student.repetitions must be at least 1");

  const auto truth = truth_table(cfg, task);
  const auto backend = make_backend(cfg, task, truth);
  const LabeledDataset labeled = read_labeled_jsonl(labeled_path, task);
  std::optional<LabeledDataset> test;
  if (test_path) test = read_labeled_jsonl(*test_path, task);

  std::vector<double> val_acc;
  std::vector<double> test_acc;
  std::optional<transfer::StudentSelection> released;
  {
    audit::PhaseScope phase("student");
    for (std::size_t r = 0; r < repetitions; ++r) {
      tc.seed = seed + r;
      auto sel = transfer::select_student(labeled.records, *backend, tc);
      val_acc.push_back(sel.validation_accuracy);
      if (test) test_acc.push_back(transfer::evaluate_prompt(*backend, sel.prompt, *test));
      if (!released) released = std::move(sel);
    }
  }

  fs::create_directories(out);
  json prompt_doc = {{"schema_version", kSchemaVersion},
                     {"prompt", prompt_to_json(released->prompt)},
                     {"validation_accuracy", released->validation_accuracy},
                     {"candidate_index", released->candidate_index},
                     {"candidate_accuracies", released->candidate_accuracies}};
  write_json(out / "student_prompt.json", prompt_doc);
  json summary = {{"schema_version", kSchemaVersion},
                  {"repetitions", repetitions},
                  {"validation_accuracy", val_acc},
                  {"validation_accuracy_mean", mean_of(val_acc)},
                  {"validation_accuracy_std", sample_std(val_acc)}};
  if (test) {
    summary["test_accuracy"] = test_acc;
    summary["test_accuracy_mean"] = mean_of(test_acc);
    summary["test_accuracy_std"] = sample_std(test_acc);
  }
  write_json(out / "student_summary.json", summary);
  summary.erase("schema_version");
  return summary;
}

// --- evaluate -----------------------------------------------------------------

json run_evaluate_pipeline(const Config& cfg, std::uint64_t, const fs::path& out) {
  const Task task = load_task(cfg);
  const fs::path test_path = require_input(cfg, "data.test");
  const auto prompt_path = optional_input(cfg, "data.prompt");
  const auto truth = truth_table(cfg, task);
  const auto backend = make_backend(cfg, task, truth);
  PromptSpec spec;
  spec.instruction = cfg.get_string("task.instruction", "");
  if (prompt_path) spec = read_prompt(*prompt_path, task);
  const LabeledDataset test = read_labeled_jsonl(test_path, task);
  const double acc = transfer::evaluate_prompt(*backend, spec, test);

  fs::create_directories(out);
  const json doc = {{"schema_version", kSchemaVersion},
                    {"accuracy", acc},
                    {"n_test", test.records.size()},
                    {"shots", spec.demonstrations.size()},
                    {"prompt_digest", hex64(prompt_digest(spec))}};
  write_json(out / "evaluation.json", doc);
  return {{"accuracy", acc}, {"n_test", test.records.size()}};
}

// --- dpsgd --------------------------------------------------------------------

json run_dpsgd_pipeline(const Config& cfg, std::uint64_t seed, const fs::path& out) {
  ToyShape shape;
  shape.vocab = get_size(cfg, "dpsgd.vocab", shape.vocab);
  shape.embed = get_size(cfg, "dpsgd.embed", shape.embed);
  shape.prompt_len = get_size(cfg, "dpsgd.prompt_len", shape.prompt_len);
  shape.hidden = get_size(cfg, "dpsgd.hidden", shape.hidden);
  shape.classes = get_size(cfg, "dpsgd.classes", shape.classes);
  shape.validate();
  const std::size_t n_train = get_size(cfg, "dpsgd.n_train", 8192);
  const std::size_t n_test = get_size(cfg, "dpsgd.n_test", 2048);
  if (n_train == 0 || n_test == 0) throw ConfigError("dpsgd.n_train and dpsgd.n_test must be positive");
  const std::uint64_t model_seed = cfg.get_u64("dpsgd.model_seed", seed);

  DpsgdConfig dc;
  dc.learning_rate = cfg.get_double("dpsgd.learning_rate", 50.0);
  const double batch = cfg.get_double("dpsgd.batch_size", 1024.0);
  if (!(batch > 0.0)) throw ConfigError("dpsgd.batch_size must be positive");
  dc.sampling_rate = std::min(1.0, batch / static_cast<double>(n_train));
  dc.max_grad_norm = cfg.get_double("dpsgd.max_grad_norm", 0.1);
  dc.iterations = cfg.get_int("dpsgd.iterations", 1000);
  dc.delta = cfg.get_double("dpsgd.delta", 1.0 / static_cast<double>(n_train));
  dc.seed = seed;
  dc.prompt_len = shape.prompt_len;
  dc.normalize_by_expected_batch = cfg.get_bool("dpsgd.normalize_by_expected_batch", false);
  dc.noise_scale = cfg.get_double("dpsgd.noise_scale", 1.0);
  if (cfg.has("dpsgd.target_epsilon")) {
    if (cfg.has("dpsgd.noise_scale")) throw ConfigError("set dpsgd.noise_scale or dpsgd.target_epsilon, not both");
    const double target = cfg.get_double("dpsgd.target_epsilon", 0.0);
    if (!(target > 0.0)) throw ConfigError("dpsgd.target_epsilon must be positive");
    dc.validate();
    dc.noise_scale = accountant::dpsgd_sigma_for_epsilon(dc.sampling_rate, dc.iterations, dc.delta, target,
                                                         dc.grid);
  }
  dc.validate();

  const ToyTask toy = make_toy_task(shape, model_seed, n_train, n_test);
  const std::string digest_before = toy.model.digest();
  const TrainResult res = train(toy.model, toy.train, dc);
  if (toy.model.digest() != digest_before) throw Error("frozen model weights changed during training");
  const double train_acc = accuracy(toy.model, res.prompt, toy.train);
  const double test_acc = accuracy(toy.model, res.prompt, toy.test);

  fs::create_directories(out);
  json values = json::array();
  for (Eigen::Index i = 0; i < res.prompt.values().rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < res.prompt.values().cols(); ++j) row.push_back(res.prompt.values()(i, j));
    values.push_back(row);
  }
  const json config_echo = {{"learning_rate", dc.learning_rate},
                            {"noise_scale", dc.noise_scale},
                            {"sampling_rate", dc.sampling_rate},
                            {"max_grad_norm", number_or_string(dc.max_grad_norm)},
                            {"iterations", dc.iterations},
                            {"delta", dc.delta},
                            {"seed", dc.seed},
                            {"model_seed", model_seed},
                            {"normalize_by_expected_batch", dc.normalize_by_expected_batch}};
  const json checkpoint = {{"schema_version", kSchemaVersion},
                           {"shape", {res.prompt.length(), res.prompt.embed()}},
                           {"values", values},
                           {"model_digest", digest_before},
                           {"config", config_echo}};
  write_json(out / "softprompt_checkpoint.json", checkpoint);
  std::string log_csv = "step,loss,eps_so_far\n";
  for (const auto& row : res.log) {
    log_csv += std::to_string(row.step) + "," + fmt(row.loss) + "," + fmt(row.eps_so_far) + "\n";
  }
  write_text_file(out / "dpsgd_log.csv", log_csv);
  json summary = {{"schema_version", kSchemaVersion},
                  {"train_accuracy", train_acc},
                  {"test_accuracy", test_acc},
                  {"epsilon", number_or_string(res.report.epsilon)},
                  {"delta", res.report.delta},
                  {"noise_scale", dc.noise_scale},
                  {"sampling_rate", dc.sampling_rate},
                  {"iterations", dc.iterations},
                  {"empty_batches", res.empty_batches},
                  {"model_digest", digest_before}};
  write_json(out / "dpsgd_summary.json", summary);
  summary.erase("schema_version");
  return summary;
}

// --- account ------------------------------------------------------------------

json run_account_pipeline(const Config& cfg, std::uint64_t, const fs::path& out) {
  const fs::path ledger_path = require_input(cfg, "data.ledger");
  std::optional<AccountingMode> mode;
  if (auto m = cfg.find("account.mode")) {
    try {
      mode = accounting_mode_from_string(*m);
    } catch (const Error& e) {
      throw ConfigError(std::string("account.mode: ") + e.what());
    }
  }
  std::optional<double> delta;
  if (cfg.has("account.delta")) {
    delta = cfg.get_double("account.delta", 0.0);
    if (!(*delta > 0.0 && *delta < 1.0)) throw ConfigError("account.delta must lie in (0, 1)");
  }

  const TransferLedger ledger = TransferLedger::read(ledger_path);
  const ReplayResult rr = replay(ledger, mode, delta);

  fs::create_directories(out);
  const auto& orders = rr.state.grid.orders();
  std::string csv = "order,rdp,epsilon\n";
  json rdp = json::array();
  for (std::size_t i = 0; i < orders.size(); ++i) {
    const double a = orders[i];
    const double eps = rr.state.eps_at_order[i] + std::log(1.0 / rr.report.delta) / (a - 1.0);
    csv += fmt(a) + "," + fmt(rr.state.eps_at_order[i]) + "," + fmt(eps) + "\n";
    rdp.push_back(number_or_string(rr.state.eps_at_order[i]));
  }
  write_text_file(out / "per_order.csv", csv);
  json report = {{"schema_version", kSchemaVersion},
                 {"epsilon", number_or_string(rr.report.epsilon)},
                 {"delta", rr.report.delta},
                 {"accounting", std::string(to_string(rr.state.mode))},
                 {"queries", rr.state.query_count},
                 {"answered", rr.state.answered_count},
                 {"orders", orders},
                 {"rdp", rdp}};
  report["best_order"] = rr.report.best_order ? json(*rr.report.best_order) : json(nullptr);
  write_json(out / "privacy_report.json", report);
  return {{"epsilon", number_or_string(rr.report.epsilon)}, {"delta", rr.report.delta},
          {"queries", rr.state.query_count}};
}

void write_error(const std::exception& e, int code) {
  json err = {{"kind", "error"}, {"message", e.what()}, {"exit_code", code}};
  if (const auto* de = dynamic_cast<const Error*>(&e)) err["kind"] = de->kind();
  if (const auto* pe = dynamic_cast<const ParseError*>(&e)) err["line"] = pe->line();
  std::cerr << json{{"error", err}}.dump() << std::endl;
}

}  // namespace

std::span<const std::string_view> known_keys() { return kKnownKeys; }

std::unique_ptr<Backend> make_backend(const Config& cfg, const Task& task,
                                      const std::unordered_map<std::string, int>& truth) {
  const std::string kind = cfg.get_string("backend.kind", "mock");
  if (kind == "mock") {
    MockParams p;
    p.seed = cfg.get_u64("backend.seed", cfg.get_u64("run.seed", 0));
    p.teacher_accuracy = cfg.get_double("backend.teacher_accuracy", p.teacher_accuracy);
    p.leakage_gap = cfg.get_double("backend.leakage_gap", p.leakage_gap);
    p.consensus = cfg.get_double("backend.consensus", p.consensus);
    p.mislabel_penalty = cfg.get_double("backend.mislabel_penalty", p.mislabel_penalty);
    p.top_token_only = cfg.get_bool("backend.top_token_only", p.top_token_only);
    p.other_rate = cfg.get_double("backend.other_rate", p.other_rate);
    try {
      return std::make_unique<MockBackend>(task, p, truth);
    } catch (const DomainError& e) {
      throw ConfigError(std::string("backend: ") + e.what());
    }
  }
  if (kind == "http") {
    HttpParams p;
    p.endpoint = cfg.get_string("backend.endpoint", "");
    p.model = cfg.get_string("backend.model", "");
    p.token_env = cfg.get_string("backend.token_env", "");
    const std::string mode = cfg.get_string("backend.mode", "logprobs");
    if (mode == "logprobs") {
      p.mode = HttpMode::kLogprobs;
    } else if (mode == "top-token") {
      p.mode = HttpMode::kTopToken;
    } else {
      throw ConfigError("backend.mode must be logprobs or top-token");
    }
    p.timeout = std::chrono::milliseconds(cfg.get_int("backend.timeout_ms", p.timeout.count()));
    p.retry.max_attempts = static_cast<int>(cfg.get_int("backend.max_attempts", p.retry.max_attempts));
    p.retry.base_delay = std::chrono::milliseconds(cfg.get_int("backend.base_delay_ms", p.retry.base_delay.count()));
    p.retry.max_delay = std::chrono::milliseconds(cfg.get_int("backend.max_delay_ms", p.retry.max_delay.count()));
    p.parallelism = get_size(cfg, "backend.parallelism", p.parallelism);
    p.top_logprobs = static_cast<int>(cfg.get_int("backend.top_logprobs", p.top_logprobs));
    if (p.endpoint.empty() || p.model.empty() || p.token_env.empty()) {
      throw ConfigError("http backend needs backend.endpoint, backend.model and backend.token_env");
    }
    if (p.retry.max_attempts < 1 || p.parallelism == 0 || p.timeout.count() <= 0) {
      throw ConfigError("http backend retry, parallelism and timeout settings must be positive");
    }
    return std::make_unique<HttpBackend>(task, p);
  }
  throw ConfigError("backend.kind must be mock or http");
}

void run_pipeline(std::string_view pipeline, const Config& cfg, const fs::path& out_dir) {
  const auto started = std::chrono::steady_clock::now();
  cfg.check_known(known_keys());
  const std::uint64_t seed = cfg.get_u64("run.seed", 0);

  json metrics;
  if (pipeline == "attack") {
    metrics = run_attack_pipeline(cfg, seed, out_dir);
  } else if (pipeline == "transfer") {
    metrics = run_transfer_pipeline(cfg, seed, out_dir);
  } else if (pipeline == "student") {
    metrics = run_student_pipeline(cfg, seed, out_dir);
  } else if (pipeline == "evaluate") {
    metrics = run_evaluate_pipeline(cfg, seed, out_dir);
  } else if (pipeline == "dpsgd") {
    metrics = run_dpsgd_pipeline(cfg, seed, out_dir);
  } else if (pipeline == "account") {
    metrics = run_account_pipeline(cfg, seed, out_dir);
  } else {
    throw ConfigError("unknown pipeline '" + std::string(pipeline) + "'");
  }

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  const json report = {{"schema_version", kSchemaVersion},
                       {"pipeline", std::string(pipeline)},
                       {"metrics", metrics},
                       {"config_digest", sha256_hex(cfg.canonical())},
                       {"version", kToolkitVersion},
                       {"wall_clock_seconds", seconds}};
  write_json(out_dir / "run_report.json", report);
  log::info("wrote " + (out_dir / "run_report.json").string());
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const ConfigError*>(&error) != nullptr) return 1;
  if (dynamic_cast<const TransportError*>(&error) != nullptr) return 3;
  return 2;
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Differentially private prompt learning toolkit"};
  app.fallthrough();
  app.require_subcommand(1, 1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string verbosity = "warn";
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Configuration file (INI-style or JSON)");
  app.add_option("--seed", seed, "Seed for every randomized step");
  app.add_option("--out-dir", out_dir, "Directory for artifacts")->capture_default_str();
  app.add_option("--verbosity", verbosity, "quiet, warn, info or debug")->capture_default_str();
  app.add_option("--set", overrides, "Override a configuration key: section.key=value");
  const std::array<std::pair<const char*, const char*>, 6> commands = {{
      {"attack", "Membership inference against one-shot prompts"},
      {"transfer", "Label public inputs with a private teacher ensemble"},
      {"student", "Select a student prompt from labeled public data"},
      {"evaluate", "Test accuracy of a prompt"},
      {"dpsgd", "Train a soft prompt with DP-SGD on the toy model"},
      {"account", "Recompute the privacy cost of a transfer ledger"},
  }};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    write_error(ConfigError(e.what()), 1);
    return 1;
  }

  try {
    if (verbosity == "quiet") {
      log::set_level(log::Level::kQuiet);
    } else if (verbosity == "warn") {
      log::set_level(log::Level::kWarn);
    } else if (verbosity == "info") {
      log::set_level(log::Level::kInfo);
    } else if (verbosity == "debug") {
      log::set_level(log::Level::kDebug);
    } else {
      throw ConfigError("--verbosity must be quiet, warn, info or debug");
    }
    Config cfg;
    if (!config_path.empty()) {
      cfg = Config::load(config_path);
    } else {
      cfg.set_base_dir(fs::current_path());
    }
    for (const auto& o : overrides) cfg.apply_override(o);
    if (seed) cfg.set("run.seed", std::to_string(*seed));
    run_pipeline(app.get_subcommands().front()->get_name(), cfg, out_dir);
    return 0;
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    write_error(e, code);
    return code;
  }
}

}  // namespace dpprompt::cli
