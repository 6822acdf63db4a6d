#include <gtest/gtest.h>

#include <cmath>

#include "ldlva/losses.hpp"
#include "support.hpp"

using namespace ldlva;
using namespace ldlva::losses;
using numerics::Rng;
using numerics::Vector;
using testing_support::make_problem;

namespace {

void expect_blocks_below(testing_support::Problem& p, double tol, bool cls_only_loss, const std::string& where) {
  for (const auto& b : testing_support::check_all_blocks(p, 1e-5, cls_only_loss)) {
    if (b.name == "lambda" && !p.options.uf_on) continue;
    EXPECT_LT(b.rel_error, tol) << where << " block " << b.name;
  }
}

}  // namespace

TEST(CrossEntropy, ReducesToKnownValues) {
  EXPECT_NEAR(cross_entropy(Vector{0, 1, 0}, Vector{0.2, 0.5, 0.3}), -std::log(0.5), 1e-15);
  EXPECT_NEAR(cross_entropy(Vector(4, 0.25), Vector(4, 0.25)), std::log(4.0), 1e-15);
  EXPECT_NEAR(cross_entropy(Vector{0.6, 0.4}, Vector{0.5, 0.5}), std::log(2.0), 1e-15);
  // The guard caps -log at -log(eps).
  EXPECT_NEAR(cross_entropy(Vector{1, 0}, Vector{0, 1}), -std::log(1e-12), 1e-9);
  EXPECT_THROW(cross_entropy(Vector{1, 0}, Vector{1}), DimensionError);
}

TEST(CrossEntropy, GibbsInequality) {
  Rng rng(1);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t m = 2 + rng.uniform_index(8);
    const auto d = testing_support::random_distribution(rng, m, 0.05);
    const auto f = testing_support::random_distribution(rng, m, 0.05);
    EXPECT_GE(cross_entropy(d, f), cross_entropy(d, d) - 1e-6);
    EXPECT_GE(cross_entropy(d, f), 0.0);
  }
}

TEST(LambdaGrad, ClosedFormExample) {
  const Vector f{0.7, 0.3}, l{1, 0}, dt{0.5, 0.5};
  const double g = lambda_grad_closed_form(l, dt, f);
  // Independent oracle: central difference of CE(d(lambda), f) at lambda = 0.5.
  auto ce_at = [&](double lam) { return cross_entropy(ldl::construct_target(l, dt, lam), f); };
  const double h = 1e-6;
  EXPECT_NEAR(g, (ce_at(0.5 + h) - ce_at(0.5 - h)) / (2 * h), 1e-9);
  // Here the gradient reduces to 0.5 * ln(0.7 / 0.3).
  EXPECT_NEAR(g, 0.5 * std::log(7.0 / 3.0), 1e-15);
  EXPECT_EQ(lambda_grad_closed_form(l, l, f), 0.0);
}

TEST(LambdaGrad, MatchesFiniteDifferencesOnRandomTriples) {
  Rng rng(2);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t m = 2 + rng.uniform_index(6);
    Vector l(m, 0.0);
    l[rng.uniform_index(m)] = 1.0;
    const auto dt = testing_support::random_distribution(rng, m);
    const auto f = testing_support::random_distribution(rng, m, 0.01);
    const double lam = rng.uniform(0.05, 0.95);
    auto ce_at = [&](std::span<const double> x) { return cross_entropy(ldl::construct_target(l, dt, x[0]), f); };
    const auto num = numerics::finite_diff_gradient(ce_at, Vector{lam}, 1e-6);
    const double g = lambda_grad_closed_form(l, dt, f);
    EXPECT_LE(std::abs(g - num[0]), 1e-6 * std::max(std::abs(g), 1e-2)) << "trial " << t;
  }
}

TEST(LambdaGrad, SignFollowsAgreement) {
  // The model agrees with the label: positive gradient, a descent step lowers lambda.
  const Vector l{1, 0, 0};
  const Vector dt{0.2, 0.5, 0.3};
  const Vector agrees{0.8, 0.1, 0.1};
  const double g1 = lambda_grad_closed_form(l, dt, agrees);
  EXPECT_GT(g1, 0.0);
  EXPECT_LT(cross_entropy(l, agrees), cross_entropy(dt, agrees));
  EXPECT_LT(0.5 - 0.1 * g1, 0.5);
  // The model agrees with the neighborhood: negative gradient, lambda rises.
  const Vector disagrees{0.05, 0.8, 0.15};
  const double g2 = lambda_grad_closed_form(l, dt, disagrees);
  EXPECT_LT(g2, 0.0);
  EXPECT_GT(0.5 - 0.1 * g2, 0.5);
}

TEST(Discriminative, KnownValues) {
  Centers c = Centers::zeros(3, 4);
  const std::vector<Vector> feats{{1, 0, 0, 0}, {0, 2, 0, 0}};
  const std::vector<std::size_t> labels{0, 2};
  // All centers equal: repulsion is m(m-1).
  const auto [pull, repel] = discriminative_terms(feats, labels, Vector{0.0, 0.5}, c);
  EXPECT_DOUBLE_EQ(repel, 6.0);
  EXPECT_DOUBLE_EQ(pull, 0.5 * 1.0 + 0.5 * 0.5 * 4.0);
  // lambda = 1 removes an instance from the pull.
  EXPECT_DOUBLE_EQ(discriminative_terms(feats, labels, Vector{1.0, 1.0}, c).first, 0.0);
  // Features on their centers leave only the repulsion.
  c.mu(0, 0) = 1.0;
  c.mu(2, 1) = 2.0;
  const auto at = discriminative_terms(feats, labels, Vector{0.3, 0.0}, c);
  EXPECT_EQ(at.first, 0.0);
  const double e01 = std::exp(-1.0 / 2.0), e02 = std::exp(-5.0 / 2.0), e12 = std::exp(-4.0 / 2.0);
  EXPECT_NEAR(at.second, 2 * (e01 + e02 + e12), 1e-15);
  EXPECT_NEAR(discriminative_loss(feats, labels, Vector{0.3, 0.0}, c), at.second, 1e-15);
  EXPECT_THROW(discriminative_loss(feats, std::vector<std::size_t>{0, 3}, Vector{0, 0}, c), DimensionError);
}

TEST(Discriminative, RepulsionBounded) {
  Rng rng(3);
  for (int t = 0; t < 300; ++t) {
    const std::size_t m = 1 + rng.uniform_index(6);
    Centers c = Centers::zeros(m, 3);
    for (auto& x : c.mu.data()) x = rng.normal();
    const double r = discriminative_terms({}, {}, {}, c).second;
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, static_cast<double>(m * (m - 1)));
    if (m > 1) EXPECT_GT(r, 0.0);
  }
}

TEST(Discriminative, MovingTowardCenterLowersLoss) {
  Rng rng(4);
  for (int t = 0; t < 500; ++t) {
    Centers c = Centers::zeros(3, 4);
    for (auto& x : c.mu.data()) x = rng.normal();
    std::vector<Vector> feats{Vector(4)};
    for (auto& x : feats[0]) x = rng.normal() * 2;
    const std::vector<std::size_t> y{rng.uniform_index(3)};
    const Vector lam{rng.uniform(0.0, 0.99)};
    const double before = discriminative_loss(feats, y, lam, c);
    for (std::size_t q = 0; q < 4; ++q) feats[0][q] += 0.1 * (c.mu(y[0], q) - feats[0][q]);
    EXPECT_LT(discriminative_loss(feats, y, lam, c), before);
  }
}

TEST(Total, Combination) {
  EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, 0.1), 1.2);
  EXPECT_EQ(total_loss(0.73, 5.0, 0.0), 0.73);
  EXPECT_EQ(LossOptions{}.gamma, 0.1);
  auto p = make_problem(5);
  const auto pass = p.forward();
  EXPECT_EQ(pass.loss.total, pass.loss.cls + pass.loss.gamma * pass.loss.discriminative);
  p.options.dl_on = false;
  const auto off = p.forward();
  EXPECT_EQ(off.loss.total, off.loss.cls);
}

TEST(Backward, AllBlocksMatchFiniteDifferencesFullMode) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    auto p = make_problem(seed);
    p.options.lambda_grad = LambdaGradMode::kFull;
    expect_blocks_below(p, 1e-4, false, "seed " + std::to_string(seed));
  }
}

TEST(Backward, DefaultLambdaBlockIsClosedForm) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto p = make_problem(seed);
    const auto pass = p.forward();
    const auto g = p.backward(pass);
    ASSERT_EQ(g.lambda_ids.size(), p.batch.size());
    for (const auto& st : pass.instances) {
      EXPECT_EQ(g.lambda[st.id], lambda_grad_closed_form(st.logical, st.distribution.aggregated,
                                                          pass.probs[st.live_row]));
    }
    // And it is the derivative of the classification loss alone.
    const auto checks = testing_support::check_all_blocks(p, 1e-5, true);
    EXPECT_LT(checks.back().rel_error, 1e-6) << "seed " << seed;
  }
}

TEST(Backward, CoupledNeighborsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto p = make_problem(seed);
    p.options.lambda_grad = LambdaGradMode::kFull;
    p.options.neighbor_grad = NeighborGradMode::kCoupled;
    expect_blocks_below(p, 1e-4, false, "coupled seed " + std::to_string(seed));
  }
}

TEST(Backward, AblatedSettingsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (int mask = 0; mask < 8; ++mask) {
      auto p = make_problem(seed);
      p.options.lambda_grad = LambdaGradMode::kFull;
      p.options.as_on = mask & 1;
      p.options.uf_on = mask & 2;
      p.options.dl_on = mask & 4;
      expect_blocks_below(p, 1e-4, false, "seed " + std::to_string(seed) + " mask " + std::to_string(mask));
    }
    auto p = make_problem(seed);
    p.options.ld_on = false;
    expect_blocks_below(p, 1e-4, false, "no-ld seed " + std::to_string(seed));
  }
}

TEST(Backward, NoCalibrationGradientWithoutScores) {
  auto p = make_problem(6);
  p.options.as_on = false;
  const auto g = p.backward(p.forward());
  for (const auto& t : model::tensors(g.model)) {
    if (t.component != model::Component::kCalibration) continue;
    for (double x : t.data) EXPECT_EQ(x, 0.0);
  }
  p.options.ld_on = false;
  const auto g2 = p.backward(p.forward());
  EXPECT_TRUE(g2.lambda_ids.empty());
}

TEST(Backward, RejectsMismatchedPass) {
  auto p = make_problem(7);
  const auto pass = p.forward();
  p.batch.pop_back();
  EXPECT_THROW(p.backward(pass), InternalStateError);
  EXPECT_THROW(p.backward(ForwardPass{}), InternalStateError);
  auto q = make_problem(8);
  q.cache = {};
  EXPECT_THROW(q.forward(), InternalStateError);
}
