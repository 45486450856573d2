#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "spba/error.hpp"
#include "spba/mgda.hpp"

using namespace spba;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

GradientSet gradients(std::initializer_list<std::initializer_list<double>> gs) {
  GradientSet g;
  int i = 0;
  for (const auto& v : gs) {
    VectorXd x(static_cast<long>(v.size()));
    long j = 0;
    for (double d : v) x(j++) = d;
    g.gradients.push_back(x);
    g.task_ids.push_back("task" + std::to_string(i++));
  }
  return g;
}

GradientSet random_gradients(std::mt19937_64& rng, std::size_t t, long p) {
  std::normal_distribution<double> normal;
  GradientSet g;
  for (std::size_t i = 0; i < t; ++i) {
    VectorXd x(p);
    for (long j = 0; j < p; ++j) x(j) = normal(rng);
    g.gradients.push_back(x);
    g.task_ids.push_back("task" + std::to_string(i));
  }
  return g;
}

// Independent lattice oracle for T = 3: min over l1 + l2 + l3 = 1 on a grid.
std::vector<double> lattice3(const MatrixXd& m, int steps) {
  double best = INFINITY;
  std::vector<double> arg;
  for (int i = 0; i <= steps; ++i) {
    for (int j = 0; i + j <= steps; ++j) {
      const double a = static_cast<double>(i) / steps, b = static_cast<double>(j) / steps;
      const double c = 1.0 - a - b;
      const double v = a * a * m(0, 0) + b * b * m(1, 1) + c * c * m(2, 2) +
                       2.0 * (a * b * m(0, 1) + a * c * m(0, 2) + b * c * m(1, 2));
      if (v < best) {
        best = v;
        arg = {a, b, c};
      }
    }
  }
  return arg;
}

double quad(const MatrixXd& m, const std::vector<double>& l) {
  const VectorXd x = Eigen::Map<const VectorXd>(l.data(), static_cast<long>(l.size()));
  return x.dot(m * x);
}

void expect_simplex(const std::vector<double>& l) {
  double sum = 0.0;
  for (double v : l) {
    EXPECT_GE(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

}  // namespace

TEST(Gram, Examples) {
  EXPECT_TRUE(gram_matrix(gradients({{1, 0}, {0, 1}})).isApprox(MatrixXd::Identity(2, 2)));
  MatrixXd m(2, 2);
  m << 4, 0, 0, 1;
  EXPECT_TRUE(gram_matrix(gradients({{2, 0}, {0, 1}})).isApprox(m));
  const auto same = gram_matrix(gradients({{1, 2}, {1, 2}}));
  EXPECT_TRUE((same.array() == 5.0).all());
  Eigen::FullPivLU<MatrixXd> lu(same);
  EXPECT_EQ(lu.rank(), 1);
}

TEST(GradientSetValidate, Errors) {
  GradientSet empty;
  EXPECT_THROW(empty.validate(), Error);
  EXPECT_THROW(gradients({{1, 0}, {1}}).validate(), Error);
  auto dup = gradients({{1}, {2}});
  dup.task_ids[1] = dup.task_ids[0];
  EXPECT_THROW(dup.validate(), Error);
}

TEST(TwoTask, ClosedFormExamples) {
  Eigen::Matrix2d m;
  m << 1, 0, 0, 1;
  EXPECT_DOUBLE_EQ(solve_two_task(m), 0.5);
  m << 4, 0, 0, 1;
  EXPECT_NEAR(solve_two_task(m), 0.2, 1e-15);
  // g2 = 2 g1 with g1 = (1, 1): the shorter gradient wins.
  m << 2, 4, 4, 8;
  EXPECT_DOUBLE_EQ(solve_two_task(m), 1.0);
  m << 3, 3, 3, 3;
  EXPECT_DOUBLE_EQ(solve_two_task(m), 0.5);
}

TEST(TwoTask, WorkedCaseNormAndPoint) {
  const auto g = gradients({{2, 0}, {0, 1}});
  const auto w = solve_min_norm(gram_matrix(g));
  EXPECT_NEAR(w.lambda[0], 0.2, 1e-9);
  const VectorXd d = combined_direction(g, w, Normalization::none);
  EXPECT_NEAR(d(0), 0.4, 1e-9);
  EXPECT_NEAR(d(1), 0.8, 1e-9);
  EXPECT_NEAR(d.squaredNorm(), 0.8, 1e-9);
}

TEST(TwoTask, ScaleCovariance) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = random_gradients(rng, 2, 10);
    const double l = solve_two_task(gram_matrix(g));
    for (double c : {1e-3, 0.5, 7.0, 1e3}) {
      auto s = g;
      for (auto& x : s.gradients) x *= c;
      EXPECT_NEAR(solve_two_task(gram_matrix(s)), l, 1e-9);
    }
  }
}

TEST(TwoTask, InteriorStationarity) {
  std::mt19937_64 rng(4);
  int interior = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = random_gradients(rng, 2, 6);
    const double l = solve_two_task(gram_matrix(g));
    if (l <= 0.0 || l >= 1.0) continue;
    ++interior;
    const VectorXd d = l * g.gradients[0] + (1 - l) * g.gradients[1];
    EXPECT_LE(std::abs(d.dot(g.gradients[0] - g.gradients[1])), 1e-8);
  }
  EXPECT_GT(interior, 10);
}

TEST(MinNorm, SingleTask) {
  MatrixXd m(1, 1);
  m << 3.0;
  const auto w = solve_min_norm(m);
  EXPECT_EQ(w.lambda, std::vector<double>{1.0});
  EXPECT_TRUE(w.converged);
}

TEST(MinNorm, OrthonormalThree) {
  const auto w = solve_min_norm(MatrixXd::Identity(3, 3));
  for (double l : w.lambda) EXPECT_NEAR(l, 1.0 / 3.0, 1e-9);
  EXPECT_NEAR(simplex_objective(MatrixXd::Identity(3, 3), w.lambda), 1.0 / 3.0, 1e-12);
}

TEST(MinNorm, MatchesTwoTaskClosedForm) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = random_gradients(rng, 2, 100);
    const MatrixXd m = gram_matrix(g);
    const auto w = solve_min_norm(m);
    EXPECT_NEAR(w.lambda[0], solve_two_task(m), 1e-6);
    expect_simplex(w.lambda);
  }
}

TEST(MinNorm, MatchesLatticeOracle) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = random_gradients(rng, 3, 2 + trial % 5);
    const MatrixXd m = gram_matrix(g);
    const auto w = solve_min_norm(m);
    const auto oracle = lattice3(m, 1000);
    EXPECT_LE(quad(m, w.lambda), quad(m, oracle) + 1e-6);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(w.lambda[i], oracle[i], 2e-3);
  }
}

TEST(MinNorm, MonotoneObjective) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = random_gradients(rng, 2 + trial % 6, 4);
    std::vector<double> trace;
    solve_min_norm(gram_matrix(g), 1e-9, 500, &trace);
    ASSERT_FALSE(trace.empty());
    for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] + 1e-12);
  }
}

// Property: simplex feasibility and the variational inequality.
TEST(MinNorm, PropertyOptimality) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t t = 1 + trial % 7;
    const auto g = random_gradients(rng, t, 1 + trial % 12);
    const auto w = solve_min_norm(gram_matrix(g));
    expect_simplex(w.lambda);
    const VectorXd d = combined_direction(g, w, Normalization::none);
    const double dd = d.squaredNorm();
    for (const auto& gi : g.gradients) EXPECT_GE(gi.dot(d), dd - 1e-5 * std::max(1.0, dd));
  }
}

TEST(MinNorm, RejectsBadGram) {
  MatrixXd asym(2, 2);
  asym << 1, 0.5, 0, 1;
  EXPECT_THROW(solve_min_norm(asym), Error);
  MatrixXd nan = MatrixXd::Identity(2, 2);
  nan(0, 0) = NAN;
  EXPECT_THROW(solve_min_norm(nan), Error);
  EXPECT_THROW(solve_min_norm(MatrixXd::Identity(2, 3)), Error);
}

TEST(BruteForce, Examples) {
  auto l = brute_force_min_norm(MatrixXd::Identity(2, 2), 1e-3);
  EXPECT_GE(l[0], 0.499);
  EXPECT_LE(l[0], 0.501);
  MatrixXd m(2, 2);
  m << 4, 0, 0, 1;
  l = brute_force_min_norm(m, 1e-3);
  EXPECT_GE(l[0], 0.199);
  EXPECT_LE(l[0], 0.201);
  // Step >= 1: vertices only, the shortest gradient wins.
  MatrixXd v(3, 3);
  v << 5, 0, 0, 0, 2, 0, 0, 0, 3;
  EXPECT_EQ(brute_force_min_norm(v, 1.0), (std::vector<double>{0, 1, 0}));
  EXPECT_THROW(brute_force_min_norm(MatrixXd::Identity(5, 5), 0.1), Error);
  EXPECT_THROW(brute_force_min_norm(MatrixXd::Identity(2, 2), 0.0), Error);
}

TEST(BruteForce, AgreesWithIndependentLattice) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const MatrixXd m = gram_matrix(random_gradients(rng, 3, 5));
    const auto a = brute_force_min_norm(m, 0.01);
    const auto b = lattice3(m, 100);
    EXPECT_NEAR(quad(m, a), quad(m, b), 1e-12);
  }
}

TEST(Combine, Examples) {
  const auto g = gradients({{1, 0}, {0, 1}});
  SimplexWeights half;
  half.lambda = {0.5, 0.5};
  const VectorXd d = combined_direction(g, half, Normalization::none);
  EXPECT_DOUBLE_EQ(d(0), 0.5);
  EXPECT_DOUBLE_EQ(d(1), 0.5);

  const auto h = gradients({{3, 4}, {1, 1}, {0, 2}});
  SimplexWeights vertex;
  vertex.lambda = {1, 0, 0};
  EXPECT_EQ(combined_direction(h, vertex, Normalization::none), h.gradients[0]);
  const VectorXd unit = combined_direction(h, vertex, Normalization::l2);
  EXPECT_NEAR(unit(0), 0.6, 1e-15);
  EXPECT_NEAR(unit(1), 0.8, 1e-15);
}

TEST(Balance, L2NormalizesBeforeSolving) {
  // Under l2 the scale of a task no longer matters.
  const auto g = gradients({{100, 0}, {0, 1}});
  const auto b = balance_gradients(g);
  EXPECT_NEAR(b.weights.lambda[0], 0.5, 1e-9);
  EXPECT_NEAR(b.direction(0), 0.5, 1e-9);
  EXPECT_NEAR(b.direction(1), 0.5, 1e-9);
  MgdaOptions raw;
  raw.normalization = Normalization::none;
  const auto r = balance_gradients(g, raw);
  EXPECT_NEAR(r.weights.lambda[0], 1.0 / 10001.0, 1e-9);
}

TEST(Balance, ZeroGradientExcluded) {
  const auto g = gradients({{0, 0}, {1, 0}, {0, 1}});
  const auto b = balance_gradients(g);
  EXPECT_FALSE(b.included[0]);
  EXPECT_EQ(b.weights.lambda[0], 0.0);
  EXPECT_NEAR(b.weights.lambda[1], 0.5, 1e-9);
  EXPECT_NEAR(b.weights.lambda[2], 0.5, 1e-9);
  expect_simplex(b.weights.lambda);
  EXPECT_THROW(balance_gradients(gradients({{0, 0}, {0, 0}})), Error);
}

TEST(Balance, IdenticalGradientsGiveUniformWeights) {
  const auto b = balance_gradients(gradients({{1, 2}, {1, 2}, {1, 2}}));
  for (double l : b.weights.lambda) EXPECT_NEAR(l, 1.0 / 3.0, 1e-9);
}

TEST(Normalization, Names) {
  EXPECT_EQ(normalization_from_string("l2"), Normalization::l2);
  EXPECT_EQ(normalization_from_string("none"), Normalization::none);
  EXPECT_STREQ(to_string(Normalization::l2), "l2");
  EXPECT_THROW(normalization_from_string("loss"), Error);
}
