#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cfloat>
#include <cmath>
#include <limits>

#include "dpprompt/accountant.hpp"
#include "dpprompt/errors.hpp"
#include "dpprompt/rng.hpp"

using namespace dpprompt;
using namespace dpprompt::accountant;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

VoteHistogram hist(std::vector<std::int64_t> counts) {
  VoteHistogram h;
  h.counts = std::move(counts);
  for (auto c : h.counts) h.n_teachers += c;
  return h;
}

std::size_t index_of(const OrderGrid& g, double alpha) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] == alpha) return i;
  }
  throw std::out_of_range("order not in grid");
}

// E_{z ~ N(0, sigma^2)} [(1 - q + q exp((2z - 1) / (2 sigma^2)))^alpha], the
// Renyi moment of the Poisson-subsampled Gaussian, by adaptive quadrature.
double renyi_moment_quadrature(double q, double sigma, int alpha) {
  auto f = [&](double z) {
    const double log_density = -z * z / (2 * sigma * sigma) - std::log(sigma * std::sqrt(2 * M_PI));
    const double w = (2 * z - 1) / (2 * sigma * sigma);
    const double log_mix = w > 0 ? w + std::log(q + (1 - q) * std::exp(-w)) : std::log(1 - q + q * std::exp(w));
    return std::exp(log_density + alpha * log_mix);
  };
  double total = 0.0;
  for (double a = -40.0 * sigma; a < 40.0 * sigma + alpha; a += 1.0) {
    total += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, a + 1.0, 15, 1e-13);
  }
  return total;
}

// The data-dependent GNMax bound written directly in linear space.
long double data_dependent_linear(long double q, long double sigma, long double lambda) {
  const long double var = sigma * sigma;
  const long double independent = lambda / var;
  const long double mu2 = sigma * std::sqrt(-std::log(q));
  const long double mu1 = mu2 + 1;
  if (!(mu1 > lambda) || !(mu2 > 1)) return independent;
  const long double e1 = mu1 / var, e2 = mu2 / var;
  const long double qmax = std::exp((mu2 - 1) * e2) / std::pow((mu1 / (mu1 - 1)) * (mu2 / (mu2 - 1)), mu2);
  if (!(q <= qmax) || !(-std::log(q) > e2)) return independent;
  const long double a = (1 - q) / (1 - std::pow(q * std::exp(e2), (mu2 - 1) / mu2));
  const long double b = std::exp(e1) / std::pow(q, 1 / (mu1 - 1));
  const long double v = std::log((1 - q) * std::pow(a, lambda - 1) + q * std::pow(b, lambda - 1)) / (lambda - 1);
  return std::min(independent, v);
}

}  // namespace

TEST(Gaussian, ClosedForms) {
  EXPECT_DOUBLE_EQ(gaussian_rdp(1.0, 1.0, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(gaussian_rdp(20.0, std::sqrt(2.0), 2.0), 0.005);
  EXPECT_DOUBLE_EQ(gaussian_rdp(6.0, 1.5, 3.0) / 4.0, gaussian_rdp(12.0, 1.5, 3.0));
  EXPECT_EQ(gaussian_rdp(kInf, 1.0, 2.0), 0.0);
  EXPECT_THROW(gaussian_rdp(0.0, 1.0, 2.0), DomainError);
  EXPECT_THROW(gaussian_rdp(-1.0, 1.0, 2.0), DomainError);
  EXPECT_THROW(gaussian_rdp(1.0, 1.0, 1.0), DomainError);
}

TEST(Grid, DefaultAndValidation) {
  const auto g = OrderGrid::default_grid();
  EXPECT_EQ(g.orders(), (std::vector<double>{1.25, 1.5, 1.75, 2, 2.5, 3, 4, 5, 6, 8, 16, 32, 64, 128, 256, 512}));
  EXPECT_EQ(g.integer_subgrid().orders(), (std::vector<double>{2, 3, 4, 5, 6, 8, 16, 32, 64, 128, 256, 512}));
  EXPECT_THROW(OrderGrid({2.0, 2.0}), DomainError);
  EXPECT_THROW(OrderGrid({1.0, 2.0}), DomainError);
  EXPECT_THROW(OrderGrid({3.0, 2.0}), DomainError);
}

TEST(StepCost, IndependentExamples) {
  const auto g = OrderGrid::default_grid();
  const auto i2 = index_of(g, 2.0);
  GNMaxConfig cfg;  // sigma1 = 1, sigma2 = 20
  EXPECT_DOUBLE_EQ(gnmax_step_cost_independent(cfg, false, g)[i2], 1.0);
  EXPECT_DOUBLE_EQ(gnmax_step_cost_independent(cfg, true, g)[i2], 1.005);
  GNMaxConfig off{-kInf, kInf, 20.0, 0};
  EXPECT_DOUBLE_EQ(gnmax_step_cost_independent(off, true, g)[i2], 0.005);
  GNMaxConfig zero{180.0, 0.0, 20.0, 0};
  EXPECT_EQ(gnmax_step_cost_independent(zero, false, g)[i2], kInf);
}

TEST(QBound, OracleValues) {
  EXPECT_NEAR(q_bound(hist({200, 0}), 20.0) / 7.68729897214017425e-13, 1.0, 1e-12);
  EXPECT_EQ(q_bound(hist({100, 100}), 7.0), 1.0);
  EXPECT_NEAR(q_bound(hist({150, 50, 0}), 20.0) / 2.03532872350764368e-4, 1.0, 1e-12);
  // Far below double underflow the log form keeps working.
  // erfc(50) underflows; compare against its asymptotic tail series instead.
  const double x = 50.0;
  const double log_erfc = -x * x - std::log(x * std::sqrt(M_PI)) + std::log1p(-1 / (2 * x * x) + 3 / (4 * x * x * x * x));
  EXPECT_NEAR(log_q_bound(hist({2000, 0}), 20.0), std::log(0.5) + log_erfc, 1e-6);
  EXPECT_TRUE(std::isfinite(log_q_bound(hist({20000, 0}), 10.0)));
}

TEST(DataDependent, RegressionConstantAndBelowIndependent) {
  const double v = gnmax_argmax_rdp_data_dependent(log_q_bound(hist({200, 0}), 20.0), 20.0, 2.0);
  EXPECT_LT(v, 0.005);
  EXPECT_NEAR(v / 1.0697555910868435e-12, 1.0, 1e-6);
}

TEST(DataDependent, MatchesLinearSpaceOracle) {
  for (double sigma : {10.0, 20.0, 40.0}) {
    for (double q : {1e-3, 1e-5, 1e-8, 1e-12}) {
      for (double a : {1.5, 2.0, 4.0, 8.0, 16.0, 32.0}) {
        const double ours = gnmax_argmax_rdp_data_dependent(std::log(q), sigma, a);
        const double oracle = static_cast<double>(data_dependent_linear(q, sigma, a));
        EXPECT_NEAR(ours, oracle, 1e-7 * oracle + 1e-15) << "sigma=" << sigma << " q=" << q << " a=" << a;
      }
    }
  }
}

TEST(DataDependent, FallbackAndMonotoneInQ) {
  const auto g = OrderGrid::default_grid();
  for (double a : g.orders()) {
    EXPECT_DOUBLE_EQ(gnmax_argmax_rdp_data_dependent(0.0, 20.0, a), a / 400.0);
    EXPECT_LE(gnmax_argmax_rdp_data_dependent(std::log(1e-12), 20.0, a),
              gnmax_argmax_rdp_data_dependent(std::log(1e-6), 20.0, a));
  }
}

TEST(DataDependent, NeverAboveIndependentOnRandomHistograms) {
  const auto g = OrderGrid::default_grid();
  Rng rng(12);
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t c = 2 + rng.uniform_index(4);
    std::vector<std::int64_t> counts(c, 0);
    for (int t = 0; t < 200; ++t) {
      // Skewed votes so both high and low consensus appear.
      const std::size_t j = rng.uniform() < 0.7 * rng.uniform() + 0.2 ? 0 : rng.uniform_index(c);
      ++counts[j];
    }
    GNMaxConfig cfg{180.0, 1.0 + 100.0 * rng.uniform(), 5.0 + 40.0 * rng.uniform(), 0};
    const auto h = hist(counts);
    for (bool answered : {false, true}) {
      const auto dd = gnmax_step_cost_data_dependent(h, cfg, answered, g);
      const auto di = gnmax_step_cost_independent(cfg, answered, g);
      for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LE(dd[i], di[i]);
    }
  }
}

TEST(Subsampled, FullSamplingIsGaussian) {
  for (int a = 2; a <= 64; ++a) {
    for (double sigma : {0.7, 1.0, 3.0}) {
      const double expected = a / (2 * sigma * sigma);
      EXPECT_NEAR(subsampled_gaussian_rdp(1.0, sigma, a), expected, 4 * DBL_EPSILON * expected);
    }
  }
}

TEST(Subsampled, VanishesAsQGoesToZero) {
  EXPECT_EQ(subsampled_gaussian_rdp(0.0, 1.0, 8), 0.0);
  EXPECT_LT(subsampled_gaussian_rdp(1e-9, 1.0, 8), 1e-15);
}

TEST(Subsampled, UpperBoundsQuadratureOracle) {
  for (int a : {2, 3, 4, 8, 16, 32}) {
    const double oracle = std::log(renyi_moment_quadrature(0.01, 1.0, a)) / (a - 1);
    const double ours = subsampled_gaussian_rdp(0.01, 1.0, a);
    EXPECT_GE(ours, oracle * (1 - 1e-9)) << "alpha=" << a;
    EXPECT_LE(ours, oracle * 1.01) << "alpha=" << a;
  }
}

TEST(Subsampled, MonotoneProperties) {
  for (double sigma : {0.6, 1.0, 2.0, 5.0}) {
    for (int a : {2, 3, 5, 8, 16}) {
      double prev = 0.0;
      for (double q : {0.001, 0.01, 0.05, 0.2, 0.5, 1.0}) {
        const double v = subsampled_gaussian_rdp(q, sigma, a);
        EXPECT_GE(v, prev);
        prev = v;
        EXPECT_LE(v, subsampled_gaussian_rdp(q, sigma, a + 1) * (1 + 1e-12));
        EXPECT_GE(v, subsampled_gaussian_rdp(q, sigma * 1.1, a) * (1 - 1e-12));
      }
    }
  }
}

TEST(Subsampled, OverflowReportsInfinity) {
  // Large but representable: log-space keeps it finite and below alpha / (2 sigma^2).
  const double big = subsampled_gaussian_rdp(0.5, 0.01, 512);
  EXPECT_TRUE(std::isfinite(big));
  EXPECT_LE(big, 512 / (2 * 0.01 * 0.01) * (1 + 1e-12));
  EXPECT_EQ(subsampled_gaussian_rdp(0.5, 1e-160, 512), kInf);
}

TEST(Compose, IdentityLinearityAndMismatch) {
  const auto g = OrderGrid::default_grid();
  GNMaxConfig cfg;
  const auto v = gnmax_step_cost_independent(cfg, true, g);
  auto s = compose(AccountantState::empty(g), v, true);
  EXPECT_EQ(s.eps_at_order, v);
  EXPECT_EQ(s.query_count, 1);
  EXPECT_EQ(s.answered_count, 1);
  auto many = AccountantState::empty(g);
  for (int i = 0; i < 500; ++i) many = compose(std::move(many), v, true);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(many.eps_at_order[i], 500 * v[i], 1e-9 * 500 * v[i]);
  const auto w = gnmax_step_cost_independent(cfg, false, g);
  const auto ab = compose(compose(AccountantState::empty(g), v), w);
  const auto ba = compose(compose(AccountantState::empty(g), w), v);
  EXPECT_EQ(ab.eps_at_order, ba.eps_at_order);
  EXPECT_THROW(compose(AccountantState::empty(g), CostVector{1.0}), DomainError);
}

TEST(Conversion, SingleGaussianGridMinimum) {
  const auto g = OrderGrid::default_grid();
  auto s = AccountantState::empty(g);
  CostVector c;
  for (double a : g.orders()) c.push_back(gaussian_rdp(1.0, 1.0, a));
  s = compose(std::move(s), c);
  const auto r = to_eps_delta(s, 1e-6);
  double oracle = kInf;
  for (double a : g.orders()) oracle = std::min(oracle, a / 2 + std::log(1e6) / (a - 1));
  EXPECT_DOUBLE_EQ(r.epsilon, oracle);
  EXPECT_NEAR(r.epsilon, 5.7631, 1e-4);
  EXPECT_EQ(r.best_order, 6.0);
  EXPECT_GT(to_eps_delta(s, 1e-8).epsilon, r.epsilon);
}

TEST(Conversion, EmptyStateIsZero) {
  const auto r = to_eps_delta(AccountantState::empty(OrderGrid::default_grid()), 1e-6);
  EXPECT_EQ(r.epsilon, 0.0);
  EXPECT_FALSE(r.best_order.has_value());
}

TEST(Conversion, RefiningGridNeverIncreasesEpsilon) {
  const OrderGrid coarse({2, 4, 8, 32});
  const OrderGrid fine({2, 3, 4, 6, 8, 16, 32, 64});
  auto sc = AccountantState::empty(coarse);
  auto sf = AccountantState::empty(fine);
  CostVector cc, cf;
  for (double a : coarse.orders()) cc.push_back(50 * subsampled_gaussian_rdp(0.05, 1.1, static_cast<int>(a)));
  for (double a : fine.orders()) cf.push_back(50 * subsampled_gaussian_rdp(0.05, 1.1, static_cast<int>(a)));
  sc = compose(std::move(sc), cc);
  sf = compose(std::move(sf), cf);
  EXPECT_LE(to_eps_delta(sf, 1e-5).epsilon, to_eps_delta(sc, 1e-5).epsilon);
}

TEST(Dpsgd, BudgetProperties) {
  EXPECT_EQ(dpsgd_budget(0.1, 1.0, 0, 1e-5).epsilon, 0.0);
  double prev = 0.0;
  for (std::int64_t t : {1, 10, 100, 1000}) {
    const double e = dpsgd_budget(0.01, 1.0, t, 1e-5).epsilon;
    EXPECT_GE(e, prev);
    prev = e;
  }
  prev = kInf;
  for (double s : {0.6, 0.8, 1.0, 2.0, 4.0}) {
    const double e = dpsgd_budget(0.01, s, 500, 1e-5).epsilon;
    EXPECT_LE(e, prev);
    prev = e;
  }
  EXPECT_EQ(dpsgd_budget(0.01, 0.0, 10, 1e-5).epsilon, kInf);
}

TEST(Dpsgd, SigmaSearchHitsTarget) {
  const double n = 67349.0;
  const double q = 1024.0 / n;
  const std::int64_t steps = 1000;
  const double sigma = dpsgd_sigma_for_epsilon(q, steps, 1.0 / n, 8.0);
  const double eps = dpsgd_budget(q, sigma, steps, 1.0 / n).epsilon;
  EXPECT_LE(eps, 8.0);
  EXPECT_NEAR(eps, 8.0, 0.01);
  EXPECT_GT(dpsgd_budget(q, sigma * 0.99, steps, 1.0 / n).epsilon, 8.0);
}
