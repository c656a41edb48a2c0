#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpprompt/accountant.hpp"
#include "dpprompt/audit.hpp"
#include "dpprompt/backends.hpp"
#include "dpprompt/core.hpp"
#include "dpprompt/gnmax.hpp"
#include "dpprompt/ledger.hpp"

namespace dpprompt {

// A public input with the label the ensemble released for it. Never carries
// the "other" bin.
using LabeledPublicExample = Demonstration;

struct TransferConfig {
  std::size_t n_teachers = 200;
  std::size_t shots = 1;
  GNMaxConfig gnmax;
  double budget_epsilon = 1.0;
  double delta = 1e-6;
  std::size_t max_public_queries = 500;
  bool calibrate = false;
  std::size_t candidate_pool_size = 20;
  double validation_fraction = 0.5;
  std::uint64_t seed = 0;
  AccountingMode accounting = AccountingMode::kDataDependent;
  OrderGrid grid = OrderGrid::default_grid();
  std::string instruction;

  void validate() const;
};

enum class TransferStatus {
  kPoolExhausted,    // every public input was queried
  kQueryLimit,       // max_public_queries reached
  kBudgetExhausted,  // the next query could have exceeded budget_epsilon
};

std::string_view to_string(TransferStatus status);

struct TransferResult {
  std::vector<LabeledPublicExample> labeled;
  TransferLedger ledger;
  AccountantState state;
  PrivacyReport report;
  TransferStatus status = TransferStatus::kPoolExhausted;
  // Content-free calibration was requested but the backend cannot provide it.
  bool calibration_skipped = false;
};

namespace transfer {

// Diagonal contextual calibration: divide by the content-free probabilities
// and renormalize. Zero content-free entries are floored at 1e-6.
ProbVector calibrate(const ProbVector& probs, const ProbVector& content_free);

// One vote per teacher: the argmax of its (optionally calibrated) class
// probabilities, or the "other" bin. A transport failure aborts the whole
// query and it is retried from scratch, never released partially.
VoteHistogram collect_votes(const Backend& backend, const TeacherFlock& teachers, std::string_view public_text,
                            std::span<const std::optional<ProbVector>> content_free = {});

// Per-teacher content-free vectors; empty optional entries when the backend
// cannot provide them.
std::vector<std::optional<ProbVector>> content_free_table(const Backend& backend, const TeacherFlock& teachers);

// Queries public inputs in order, aggregating each with Confident-GNMax and
// charging the accountant, until the pool, the query limit, or the budget runs
// out. A query is only issued when its worst-case (answered) cost keeps the
// total within budget_epsilon.
TransferResult run_knowledge_transfer(const Backend& backend, const TeacherFlock& teachers,
                                      std::span<const std::string> public_texts, const TransferConfig& cfg);

struct StudentSelection {
  PromptSpec prompt;
  double validation_accuracy = 0.0;
  std::size_t candidate_index = 0;
  std::vector<double> candidate_accuracies;
};

// Splits the labeled public data (seeded) into candidate_pool_size candidate
// prompts of `shots` examples and a validation set drawn from the rest, then
// keeps the candidate with the best validation accuracy (ties to the lowest
// index). Touches only public data and the backend.
StudentSelection select_student(std::span<const LabeledPublicExample> labeled, const Backend& backend,
                                const TransferConfig& cfg);

// Fraction of test records whose argmax prediction equals the label.
double evaluate_prompt(const Backend& backend, const PromptSpec& spec, const LabeledDataset& test);

// Noiseless plurality vote of the flock on each test record (diagnostic only).
double ensemble_accuracy(const Backend& backend, const TeacherFlock& teachers, const LabeledDataset& test,
                         std::span<const std::optional<ProbVector>> content_free = {});

}  // namespace transfer
}  // namespace dpprompt
