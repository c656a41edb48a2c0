#include "dpprompt/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "dpprompt/errors.hpp"
#include "dpprompt/hash.hpp"
#include "dpprompt/log.hpp"
#include "dpprompt/rng.hpp"

namespace dpprompt {

void TransferConfig::validate() const {
  if (n_teachers == 0) throw ConfigError("n_teachers must be positive");
  if (shots == 0) throw ConfigError("shots must be positive");
  gnmax.validate();
  if (std::isnan(budget_epsilon) || budget_epsilon < 0.0) throw ConfigError("budget_epsilon must be non-negative");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (max_public_queries < 1) throw ConfigError("max_public_queries must be at least 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in (0, 1)");
  }
  if (candidate_pool_size == 0) throw ConfigError("candidate_pool_size must be positive");
}

std::string_view to_string(TransferStatus status) {
  switch (status) {
    case TransferStatus::kPoolExhausted:
      return "pool_exhausted";
    case TransferStatus::kQueryLimit:
      return "query_limit";
    case TransferStatus::kBudgetExhausted:
      return "budget_exhausted";
  }
  return "unknown";
}

namespace transfer {
namespace {

constexpr double kCalibrationFloor = 1e-6;
constexpr int kQueryAttempts = 3;

std::optional<std::size_t> vote(const Backend& backend, const PromptSpec& spec, std::string_view text,
                                const std::optional<ProbVector>* content_free) {
  ProbVector probs = backend.classify(spec, text);
  if (content_free != nullptr && content_free->has_value() && !probs.is_other()) {
    probs = calibrate(probs, **content_free);
  }
  return probs.argmax();
}

VoteHistogram collect_once(const Backend& backend, const std::vector<PromptSpec>& specs, std::string_view text,
                           std::span<const std::optional<ProbVector>> content_free) {
  const std::size_t n = specs.size();
  std::vector<std::optional<std::size_t>> votes(n);
  auto cf = [&](std::size_t t) -> const std::optional<ProbVector>* {
    return content_free.empty() ? nullptr : &content_free[t];
  };
  const std::size_t width = std::max<std::size_t>(1, backend.max_parallelism());
  if (width == 1) {
    for (std::size_t t = 0; t < n; ++t) votes[t] = vote(backend, specs[t], text, cf(t));
  } else {
    for (std::size_t base = 0; base < n; base += width) {
      const std::size_t end = std::min(n, base + width);
      std::vector<std::future<std::optional<std::size_t>>> pending;
      for (std::size_t t = base; t < end; ++t) {
        pending.push_back(std::async(std::launch::async, [&, t] { return vote(backend, specs[t], text, cf(t)); }));
      }
      // get() every future before rethrowing so no task outlives this frame.
      std::exception_ptr failure;
      for (std::size_t t = base; t < end; ++t) {
        try {
          votes[t] = pending[t - base].get();
        } catch (...) {
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) std::rethrow_exception(failure);
    }
  }

  VoteHistogram hist;
  hist.counts.assign(backend.task().size(), 0);
  hist.n_teachers = static_cast<std::int64_t>(n);
  for (const auto& v : votes) {
    if (v) {
      ++hist.counts[*v];
    } else {
      ++hist.other;
    }
  }
  return hist;
}

}  // namespace

ProbVector calibrate(const ProbVector& probs, const ProbVector& content_free) {
  if (probs.size() != content_free.size()) throw DomainError("calibration vectors differ in size");
  if (content_free.is_other()) return probs;
  std::vector<double> out(probs.size());
  bool floored = false;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    double ref = content_free[i];
    if (!(ref > 0.0)) {
      ref = kCalibrationFloor;
      floored = true;
    }
    out[i] = probs[i] / ref;
  }
  if (floored) log::warn("content-free probability of zero floored at 1e-6 during calibration");
  return ProbVector::from_weights(std::move(out), probs.source());
}

std::vector<std::optional<ProbVector>> content_free_table(const Backend& backend, const TeacherFlock& teachers) {
  const auto& specs = teachers.specs();
  std::vector<std::optional<ProbVector>> table(specs.size());
  if (!backend.supports_logprobs()) return table;
  for (std::size_t t = 0; t < specs.size(); ++t) table[t] = backend.content_free_probs(specs[t]);
  return table;
}

VoteHistogram collect_votes(const Backend& backend, const TeacherFlock& teachers, std::string_view public_text,
                            std::span<const std::optional<ProbVector>> content_free) {
  const auto& specs = teachers.specs();
  if (!content_free.empty() && content_free.size() != specs.size()) {
    throw DomainError("content-free table does not match the teacher count");
  }
  for (int attempt = 1;; ++attempt) {
    try {
      return collect_once(backend, specs, public_text, content_free);
    } catch (const TransportError& e) {
      if (attempt >= kQueryAttempts) throw;
      log::warn(std::string("teacher query failed, retrying the whole query: ") + e.what());
    }
  }
}

TransferResult run_knowledge_transfer(const Backend& backend, const TeacherFlock& teachers,
                                      std::span<const std::string> public_texts, const TransferConfig& cfg) {
  cfg.validate();
  if (public_texts.empty()) throw DomainError("public input pool is empty");
  if (teachers.size() == 0) throw DomainError("teacher flock is empty");

  const Task& task = backend.task();
  LedgerHeader header;
  for (const auto& l : task.labels()) header.labels.push_back(l.token);
  header.n_teachers = static_cast<std::int64_t>(teachers.size());
  header.gnmax = cfg.gnmax;
  header.mode = cfg.accounting;
  header.delta = cfg.delta;
  header.grid = cfg.grid;

  TransferResult result;
  result.ledger = TransferLedger(header);
  result.state = AccountantState::empty(cfg.grid, cfg.accounting);
  result.report = accountant::to_eps_delta(result.state, cfg.delta);

  std::vector<std::optional<ProbVector>> content_free;
  if (cfg.calibrate) {
    if (backend.supports_logprobs()) {
      content_free = content_free_table(backend, teachers);
    } else {
      result.calibration_skipped = true;
      log::warn("backend returns top tokens only; contextual calibration skipped");
    }
  }

  Rng rng(cfg.gnmax.seed, 0x676e6d6178ULL);
  auto within_budget = [&](const CostVector& cost) {
    const auto projected = accountant::compose(result.state, cost);
    return accountant::to_eps_delta(projected, cfg.delta).epsilon <= cfg.budget_epsilon;
  };

  const std::size_t limit = std::min(public_texts.size(), cfg.max_public_queries);
  result.status = public_texts.size() > cfg.max_public_queries ? TransferStatus::kQueryLimit
                                                              : TransferStatus::kPoolExhausted;
  for (std::size_t i = 0; i < limit; ++i) {
    // Every query pays at least the threshold check; stop before asking the
    // teachers when even that would overrun.
    if (!(cfg.budget_epsilon > 0.0) ||
        !within_budget(accountant::gnmax_step_cost_independent(cfg.gnmax, false, cfg.grid))) {
      result.status = TransferStatus::kBudgetExhausted;
      break;
    }
    const std::string& text = public_texts[i];
    const VoteHistogram hist = collect_votes(backend, teachers, text, content_free);
    if (!within_budget(accountant::gnmax_step_cost(hist, cfg.gnmax, true, cfg.grid, cfg.accounting))) {
      result.status = TransferStatus::kBudgetExhausted;
      break;
    }

    const AggregationOutcome outcome = gnmax::aggregate(hist, cfg.gnmax, rng);
    const bool answered = outcome.is_answered();
    const CostVector cost = accountant::gnmax_step_cost(hist, cfg.gnmax, answered, cfg.grid, cfg.accounting);
    result.state = accountant::compose(std::move(result.state), cost, answered);
    result.report = accountant::to_eps_delta(result.state, cfg.delta);

    LedgerEntry entry;
    entry.query_id = static_cast<std::int64_t>(i);
    entry.public_text_digest = hex64(fnv1a64(text));
    entry.histogram = hist;
    if (answered) entry.answered_label = outcome.label();
    entry.cost = cost;
    entry.cumulative_epsilon = result.report.epsilon;
    result.ledger.append(std::move(entry));

    if (answered) result.labeled.push_back(LabeledPublicExample{text, task[outcome.label()]});
  }
  return result;
}

StudentSelection select_student(std::span<const LabeledPublicExample> labeled, const Backend& backend,
                                const TransferConfig& cfg) {
  const std::size_t pool = cfg.candidate_pool_size;
  const std::size_t shots = cfg.shots;
  if (pool == 0 || shots == 0) throw ConfigError("candidate pool and shots must be positive");
  const std::size_t needed = pool * shots + 1;
  if (labeled.size() < needed) {
    throw InsufficientDataError("student selection over " + std::to_string(pool) + " candidates", needed,
                                labeled.size());
  }

  std::vector<std::size_t> order(labeled.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(cfg.seed, 0x73747564656e74ULL);
  rng.shuffle(order);

  const std::size_t remaining = labeled.size() - pool * shots;
  const std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(remaining))));
  LabeledDataset validation;
  validation.task = backend.task();
  for (std::size_t k = 0; k < n_val; ++k) validation.records.push_back(labeled[order[pool * shots + k]]);

  StudentSelection best;
  best.validation_accuracy = -1.0;
  for (std::size_t c = 0; c < pool; ++c) {
    PromptSpec spec;
    spec.instruction = cfg.instruction;
    for (std::size_t s = 0; s < shots; ++s) spec.demonstrations.push_back(labeled[order[c * shots + s]]);
    const double acc = evaluate_prompt(backend, spec, validation);
    best.candidate_accuracies.push_back(acc);
    if (acc > best.validation_accuracy) {
      best.validation_accuracy = acc;
      best.candidate_index = c;
      best.prompt = std::move(spec);
    }
  }
  return best;
}

double evaluate_prompt(const Backend& backend, const PromptSpec& spec, const LabeledDataset& test) {
  if (test.records.empty()) throw DomainError("evaluation set is empty");
  std::size_t correct = 0;
  for (const auto& r : test.records) {
    const auto pred = backend.classify(spec, r.text).argmax();
    if (pred && static_cast<int>(*pred) == r.label.index) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.records.size());
}

double ensemble_accuracy(const Backend& backend, const TeacherFlock& teachers, const LabeledDataset& test,
                         std::span<const std::optional<ProbVector>> content_free) {
  if (test.records.empty()) throw DomainError("evaluation set is empty");
  std::size_t correct = 0;
  for (const auto& r : test.records) {
    const auto hist = collect_votes(backend, teachers, r.text, content_free);
    if (static_cast<int>(gnmax::plurality(hist)) == r.label.index) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.records.size());
}

}  // namespace transfer
}  // namespace dpprompt
