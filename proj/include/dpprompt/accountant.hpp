#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dpprompt/gnmax.hpp"

namespace dpprompt {

// Ascending Rényi orders, all > 1.
class OrderGrid {
 public:
  OrderGrid() = default;
  explicit OrderGrid(std::vector<double> orders);

  // {1.25, 1.5, 1.75, 2, 2.5, 3, 4, 5, 6, 8, 16, 32, 64, 128, 256, 512}
  static OrderGrid default_grid();
  // The integer orders of this grid (needed by the subsampled Gaussian bound).
  OrderGrid integer_subgrid() const;

  std::size_t size() const noexcept { return orders_.size(); }
  double operator[](std::size_t i) const { return orders_.at(i); }
  const std::vector<double>& orders() const noexcept { return orders_; }

  friend bool operator==(const OrderGrid&, const OrderGrid&) = default;

 private:
  std::vector<double> orders_;
};

// Per-order RDP cost of one mechanism invocation, aligned with an OrderGrid.
using CostVector = std::vector<double>;

enum class AccountingMode { kDataIndependent, kDataDependent };

std::string_view to_string(AccountingMode mode);
AccountingMode accounting_mode_from_string(std::string_view text);

struct AccountantState {
  OrderGrid grid;
  std::vector<double> eps_at_order;  // accumulated RDP per order
  AccountingMode mode = AccountingMode::kDataDependent;
  std::int64_t query_count = 0;
  std::int64_t answered_count = 0;

  static AccountantState empty(OrderGrid grid, AccountingMode mode = AccountingMode::kDataDependent);
};

struct PrivacyReport {
  double epsilon = 0.0;
  double delta = 0.0;
  std::optional<double> best_order;  // empty when no cost has accrued
};

namespace accountant {

// Teachers see disjoint private records, so one record changes one vote: the
// maximum count moves by at most 1 and the histogram by sqrt(2) in L2.
inline constexpr double kThresholdSensitivity = 1.0;
inline constexpr double kArgmaxSensitivitySquared = 2.0;

// alpha * sensitivity^2 / (2 sigma^2); 0 for sigma = +inf.
double gaussian_rdp(double sigma, double sensitivity, double alpha);

// Threshold check (sensitivity 1) on every query when enabled, plus the noisy
// argmax (L2 sensitivity sqrt 2) when answered. sigma1 = 0 with an enabled
// threshold costs +inf.
CostVector gnmax_step_cost_independent(const GNMaxConfig& cfg, bool answered, const OrderGrid& grid);

// Union bound on Pr[noisy argmax != plurality]:
// min(1, sum_{j != j*} erfc((n_j* - n_j) / (2 sigma2)) / 2). Ties give 1.
double q_bound(const VoteHistogram& hist, double sigma2);
// Same bound in log space, accurate far below double underflow of q itself.
double log_q_bound(const VoteHistogram& hist, double sigma2);

// Data-dependent RDP of GNMax at one order given log q (smooth bound from
// two auxiliary orders mu2 = sigma sqrt(log 1/q), mu1 = mu2 + 1). Falls back to
// the data-independent alpha / sigma^2 wherever its conditions fail, and never
// exceeds it.
double gnmax_argmax_rdp_data_dependent(double log_q, double sigma2, double alpha);

// Threshold cost as in gnmax_step_cost_independent; argmax cost (if answered)
// is the per-order minimum of the data-dependent and independent bounds.
CostVector gnmax_step_cost_data_dependent(const VoteHistogram& hist, const GNMaxConfig& cfg, bool answered,
                                          const OrderGrid& grid);

CostVector gnmax_step_cost(const VoteHistogram& hist, const GNMaxConfig& cfg, bool answered,
                           const OrderGrid& grid, AccountingMode mode);

// RDP of the Poisson-subsampled Gaussian mechanism (sensitivity 1, noise
// multiplier sigma) at integer order alpha >= 2:
// log(sum_k C(alpha,k) (1-q)^(alpha-k) q^k exp((k^2-k)/(2 sigma^2))) / (alpha-1).
double subsampled_gaussian_rdp(double q, double sigma, int alpha);

// Pointwise addition; counters advance by one query (and one answer if set).
AccountantState compose(AccountantState state, const CostVector& cost, bool answered = false);

// epsilon = min over orders of eps(alpha) + log(1/delta) / (alpha - 1).
PrivacyReport to_eps_delta(const AccountantState& state, double delta);

// `steps` compositions of the subsampled Gaussian on the integer orders of
// `grid`, converted at `delta`.
PrivacyReport dpsgd_budget(double q, double sigma, std::int64_t steps, double delta,
                           const OrderGrid& grid = OrderGrid::default_grid());

// Smallest noise multiplier (to relative precision 1e-6) whose dpsgd_budget
// is at most target_epsilon.
double dpsgd_sigma_for_epsilon(double q, std::int64_t steps, double delta, double target_epsilon,
                               const OrderGrid& grid = OrderGrid::default_grid());

}  // namespace accountant
}  // namespace dpprompt
