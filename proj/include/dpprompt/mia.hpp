#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dpprompt/backends.hpp"
#include "dpprompt/core.hpp"

namespace dpprompt::mia {

struct Trial {
  std::vector<double> member_scores;
  std::vector<double> nonmember_scores;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) first, (1,1) last, monotone
  double auc = 0.0;
};

// Model probability at each candidate's own label. "Other" responses score 0.
std::vector<double> score_candidates(const Backend& backend, const PromptSpec& spec,
                                     std::span<const Demonstration> candidates);

// Threshold sweep over the distinct scores in descending order. Tied member
// and non-member scores move both rates at once, so the trapezoid gives them
// half credit.
RocCurve roc_and_auc(const Trial& trial);

// Fraction of (member, non-member) pairs where the member scores higher,
// ties counting one half. Quadratic; used as a cross-check.
double pairwise_auc(const Trial& trial);

// TPR of `curve` at `fpr`, linear along sloped segments and taking the top of
// vertical segments.
double tpr_at(const RocCurve& curve, double fpr);

// FPR grid {0, 0.02, ..., 1}.
std::vector<double> default_fpr_grid();

struct AttackConfig {
  std::size_t n_trials = 100;
  std::size_t n_nonmembers = 50;
  std::uint64_t seed = 0;
  std::string instruction;
  std::size_t workers = 1;
};

struct AttackResult {
  std::vector<double> trial_aucs;
  std::vector<RocCurve> trial_curves;
  RocCurve mean_curve;  // vertical average on default_fpr_grid(); auc = trapezoid of that curve
  double mean_auc = 0.0;
  double std_auc = 0.0;
};

// Each trial builds a one-shot prompt from a sampled member, draws
// n_nonmembers other records without replacement, and scores all of them.
AttackResult run_attack(const BackendFactory& backend_factory, const LabeledDataset& data,
                        const AttackConfig& cfg);

}  // namespace dpprompt::mia
