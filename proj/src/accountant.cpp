#include "dpprompt/accountant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dpprompt/errors.hpp"
#include "dpprompt/log.hpp"

namespace dpprompt {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// log(1 - exp(x)) for x < 0.
double log1mexp(double x) {
  if (x > -0.6931471805599453) return std::log(-std::expm1(x));
  return std::log1p(-std::exp(x));
}

double logaddexp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::fabs(a - b)));
}

// log erfc(x) for x >= 0, without underflow for large x.
double log_erfc(double x) {
  if (x < 25.0) return std::log(std::erfc(x));
  // Asymptotic expansion; relative error of the series below 1e-12 here.
  const double inv2x2 = 1.0 / (2.0 * x * x);
  const double series = 1.0 - inv2x2 + 3.0 * inv2x2 * inv2x2 - 15.0 * inv2x2 * inv2x2 * inv2x2;
  return -x * x - std::log(x) - 0.5 * std::log(M_PI) + std::log(series);
}

double gaussian_rdp_sq(double sigma, double sensitivity_sq, double alpha) {
  if (sigma == kInf) return 0.0;
  return alpha * sensitivity_sq / (2.0 * sigma * sigma);
}

double threshold_cost(const GNMaxConfig& cfg, double alpha) {
  if (!cfg.threshold_enabled()) return 0.0;
  if (cfg.sigma1 == 0.0) return kInf;
  return gaussian_rdp_sq(cfg.sigma1, accountant::kThresholdSensitivity * accountant::kThresholdSensitivity,
                         alpha);
}

}  // namespace

OrderGrid::OrderGrid(std::vector<double> orders) : orders_(std::move(orders)) {
  for (std::size_t i = 0; i < orders_.size(); ++i) {
    if (!(orders_[i] > 1.0) || !std::isfinite(orders_[i])) throw DomainError("Renyi orders must be finite and > 1");
    if (i > 0 && !(orders_[i] > orders_[i - 1])) throw DomainError("Renyi orders must be strictly ascending");
  }
}

OrderGrid OrderGrid::default_grid() {
  return OrderGrid({1.25, 1.5, 1.75, 2, 2.5, 3, 4, 5, 6, 8, 16, 32, 64, 128, 256, 512});
}

OrderGrid OrderGrid::integer_subgrid() const {
  std::vector<double> ints;
  for (double a : orders_) {
    if (a == std::floor(a)) ints.push_back(a);
  }
  return OrderGrid(std::move(ints));
}

std::string_view to_string(AccountingMode mode) {
  return mode == AccountingMode::kDataDependent ? "data-dependent" : "data-independent";
}

AccountingMode accounting_mode_from_string(std::string_view text) {
  if (text == "data-dependent") return AccountingMode::kDataDependent;
  if (text == "data-independent") return AccountingMode::kDataIndependent;
  throw ConfigError("unknown accounting mode '" + std::string(text) + "'");
}

AccountantState AccountantState::empty(OrderGrid grid, AccountingMode mode) {
  AccountantState s;
  s.eps_at_order.assign(grid.size(), 0.0);
  s.grid = std::move(grid);
  s.mode = mode;
  return s;
}

namespace accountant {

double gaussian_rdp(double sigma, double sensitivity, double alpha) {
  if (!(sigma > 0.0)) throw DomainError("Gaussian noise scale must be positive");
  if (!(sensitivity > 0.0)) throw DomainError("sensitivity must be positive");
  if (!(alpha > 1.0)) throw DomainError("Renyi order must exceed 1");
  return gaussian_rdp_sq(sigma, sensitivity * sensitivity, alpha);
}

CostVector gnmax_step_cost_independent(const GNMaxConfig& cfg, bool answered, const OrderGrid& grid) {
  CostVector cost(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double alpha = grid[i];
    cost[i] = threshold_cost(cfg, alpha);
    if (answered) cost[i] += gaussian_rdp_sq(cfg.sigma2, kArgmaxSensitivitySquared, alpha);
  }
  return cost;
}

double log_q_bound(const VoteHistogram& hist, double sigma2) {
  if (!(sigma2 > 0.0)) throw DomainError("sigma2 must be positive");
  const std::size_t top = gnmax::plurality(hist);
  const auto top_count = hist.counts[top];
  double log_sum = -kInf;
  for (std::size_t j = 0; j < hist.n_classes(); ++j) {
    if (j == top) continue;
    if (hist.counts[j] == top_count) return 0.0;  // tie: no consensus to exploit
    const double gap = static_cast<double>(top_count - hist.counts[j]);
    // Pr[N(0, 2 sigma^2) >= gap] = erfc(gap / (2 sigma)) / 2
    log_sum = logaddexp(log_sum, log_erfc(gap / (2.0 * sigma2)) - M_LN2);
  }
  return std::min(0.0, log_sum);
}

double q_bound(const VoteHistogram& hist, double sigma2) { return std::exp(log_q_bound(hist, sigma2)); }

double gnmax_argmax_rdp_data_dependent(double log_q, double sigma2, double alpha) {
  const double variance = sigma2 * sigma2;
  const double independent = gaussian_rdp_sq(sigma2, kArgmaxSensitivitySquared, alpha);
  if (log_q == -kInf) return 0.0;
  if (!(log_q < 0.0)) return independent;

  const double mu2 = sigma2 * std::sqrt(-log_q);
  const double mu1 = mu2 + 1.0;
  if (!(mu1 > alpha) || !(mu2 > 1.0)) return independent;

  const double eps1 = mu1 / variance;
  const double eps2 = mu2 / variance;
  // q must lie in the range where the bound is increasing in q, and q e^eps2 < 1.
  const double log_q_max = (mu2 - 1.0) * eps2 - mu2 * (std::log1p(1.0 / (mu1 - 1.0)) + std::log1p(1.0 / (mu2 - 1.0)));
  if (!(log_q <= log_q_max) || !(-log_q > eps2)) return independent;

  const double log1q = log1mexp(log_q);
  const double log_a = (alpha - 1.0) * (log1q - log1mexp((log_q + eps2) * (1.0 - 1.0 / mu2)));
  const double log_b = (alpha - 1.0) * (eps1 - log_q / (mu1 - 1.0));
  const double log_s = logaddexp(log1q + log_a, log_q + log_b);
  return std::min(independent, std::max(0.0, log_s / (alpha - 1.0)));
}

CostVector gnmax_step_cost_data_dependent(const VoteHistogram& hist, const GNMaxConfig& cfg, bool answered,
                                          const OrderGrid& grid) {
  CostVector cost(grid.size());
  const double log_q = answered ? log_q_bound(hist, cfg.sigma2) : 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double alpha = grid[i];
    cost[i] = threshold_cost(cfg, alpha);
    if (answered) cost[i] += gnmax_argmax_rdp_data_dependent(log_q, cfg.sigma2, alpha);
  }
  return cost;
}

CostVector gnmax_step_cost(const VoteHistogram& hist, const GNMaxConfig& cfg, bool answered,
                           const OrderGrid& grid, AccountingMode mode) {
  return mode == AccountingMode::kDataDependent ? gnmax_step_cost_data_dependent(hist, cfg, answered, grid)
                                                : gnmax_step_cost_independent(cfg, answered, grid);
}

double subsampled_gaussian_rdp(double q, double sigma, int alpha) {
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("sampling rate must lie in (0, 1]");
  if (!(sigma > 0.0)) throw DomainError("noise multiplier must be positive");
  if (alpha < 2) throw DomainError("subsampled Gaussian bound needs an integer order >= 2");
  if (q == 0.0 || sigma == kInf) return 0.0;

  const double log_q = std::log(q);
  const double log_1mq = q < 1.0 ? std::log1p(-q) : -kInf;
  const double lg_alpha = std::lgamma(alpha + 1.0);
  const double two_var = 2.0 * sigma * sigma;

  double log_sum = -kInf;
  for (int k = 0; k <= alpha; ++k) {
    double term = lg_alpha - std::lgamma(k + 1.0) - std::lgamma(alpha - k + 1.0);
    if (alpha - k > 0) term += (alpha - k) * log_1mq;
    if (k > 0) term += k * log_q;
    term += (static_cast<double>(k) * k - k) / two_var;
    log_sum = logaddexp(log_sum, term);
  }
  const double rdp = log_sum / (alpha - 1.0);
  if (!std::isfinite(rdp)) {
    log::warn("subsampled Gaussian RDP overflowed at order " + std::to_string(alpha) + "; treating as +inf");
    return kInf;
  }
  return std::max(0.0, rdp);
}

AccountantState compose(AccountantState state, const CostVector& cost, bool answered) {
  if (cost.size() != state.grid.size()) throw DomainError("cost vector does not match the order grid");
  for (std::size_t i = 0; i < cost.size(); ++i) {
    if (std::isnan(cost[i]) || cost[i] < 0.0) throw DomainError("RDP costs must be non-negative");
    state.eps_at_order[i] += cost[i];
  }
  ++state.query_count;
  if (answered) ++state.answered_count;
  return state;
}

PrivacyReport to_eps_delta(const AccountantState& state, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("delta must lie in (0, 1)");
  PrivacyReport report;
  report.delta = delta;
  const bool no_cost = std::all_of(state.eps_at_order.begin(), state.eps_at_order.end(),
                                   [](double e) { return e == 0.0; });
  if (no_cost) return report;

  const double log_inv_delta = -std::log(delta);
  report.epsilon = kInf;
  for (std::size_t i = 0; i < state.grid.size(); ++i) {
    const double alpha = state.grid[i];
    const double eps = state.eps_at_order[i] + log_inv_delta / (alpha - 1.0);
    if (eps < report.epsilon) {
      report.epsilon = eps;
      report.best_order = alpha;
    }
  }
  return report;
}

PrivacyReport dpsgd_budget(double q, double sigma, std::int64_t steps, double delta, const OrderGrid& grid) {
  if (steps < 0) throw DomainError("iteration count must be non-negative");
  const OrderGrid ints = grid.integer_subgrid();
  if (ints.size() == 0) throw DomainError("order grid has no integer orders");
  AccountantState state = AccountantState::empty(ints, AccountingMode::kDataIndependent);
  if (steps > 0) {
    for (std::size_t i = 0; i < ints.size(); ++i) {
      const double per_step =
          sigma == 0.0 ? kInf : subsampled_gaussian_rdp(q, sigma, static_cast<int>(ints[i]));
      state.eps_at_order[i] = per_step * static_cast<double>(steps);
    }
    state.query_count = steps;
  }
  return to_eps_delta(state, delta);
}

double dpsgd_sigma_for_epsilon(double q, std::int64_t steps, double delta, double target_epsilon,
                               const OrderGrid& grid) {
  if (!(target_epsilon > 0.0)) throw DomainError("target epsilon must be positive");
  auto eps_at = [&](double sigma) { return dpsgd_budget(q, sigma, steps, delta, grid).epsilon; };
  double lo = 0.05, hi = 1.0;
  while (eps_at(hi) > target_epsilon) {
    hi *= 2.0;
    if (hi > 1e6) throw DomainError("no noise multiplier reaches the target epsilon");
  }
  while (lo > 1e-4 && eps_at(lo) <= target_epsilon) lo /= 2.0;
  for (int iter = 0; iter < 200 && (hi - lo) > 1e-6 * hi; ++iter) {
    const double mid = 0.5 * (lo + hi);
    (eps_at(mid) > target_epsilon ? lo : hi) = mid;
  }
  return hi;
}

}  // namespace accountant
}  // namespace dpprompt
