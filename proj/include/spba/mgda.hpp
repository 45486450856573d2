#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace spba {

/// Per-task gradients over the flattened parameter vector. Task 0 is the clean
/// task; tasks 1..K are the trigger tasks.
struct GradientSet {
  std::vector<Eigen::VectorXd> gradients;
  std::vector<std::string> task_ids;

  std::size_t tasks() const { return gradients.size(); }
  /// Throws unless T >= 1, dimensions agree and task ids are distinct.
  void validate() const;
};

/// Convex weights over tasks.
struct SimplexWeights {
  std::vector<double> lambda;
  bool converged = false;
  int iterations = 0;
  double final_gap = 0.0;
};

enum class Normalization { none, l2 };

const char* to_string(Normalization n);
Normalization normalization_from_string(const std::string& s);

/// M_ij = g_i . g_j
Eigen::MatrixXd gram_matrix(const GradientSet& g);

/// Exact minimizer over [0, 1] of |l g1 + (1 - l) g2|^2 given the 2x2 Gram.
/// Returns 0.5 when the two points coincide (denominator below 1e-12).
double solve_two_task(const Eigen::Matrix2d& m);

/// Frank-Wolfe on min_l l^T M l over the simplex, starting from the uniform
/// point, with exact line search towards the best vertex. Away steps (moving
/// weight off the worst vertex in the support) are taken when they promise a
/// larger decrease, which gives linear convergence on faces. Stops once
/// l^T M l - min_r (M l)_r <= tol * max(1, l^T M l) or after max_iter steps.
/// If the step budget runs out first, Wolfe's exact min-norm-point algorithm
/// finishes the job; `converged` reports whether the gap test finally holds.
/// If `objective_trace` is given, l^T M l is appended for every iterate.
SimplexWeights solve_min_norm(const Eigen::MatrixXd& m, double tol = 1e-6, int max_iter = 250,
                              std::vector<double>* objective_trace = nullptr);

/// Exhaustive search over the simplex lattice with spacing `grid_step`.
/// Test oracle only; refuses T > 4.
std::vector<double> brute_force_min_norm(const Eigen::MatrixXd& m, double grid_step);

/// l^T M l
double simplex_objective(const Eigen::MatrixXd& m, const std::vector<double>& lambda);

/// sum_i l_i g_i, with each g_i scaled to unit norm first under l2.
/// Under l2, zero-norm gradients must carry zero weight and at least one
/// gradient must be nonzero.
Eigen::VectorXd combined_direction(const GradientSet& g, const SimplexWeights& w,
                                   Normalization normalization);

struct MgdaOptions {
  Normalization normalization = Normalization::l2;
  double tol = 1e-6;
  int max_iter = 250;
  double zero_norm = 1e-12;
};

struct BalancedDirection {
  Eigen::VectorXd direction;
  SimplexWeights weights;      // one entry per task, zero for excluded tasks
  std::vector<bool> included;  // false for zero-norm gradients
};

/// Full balancing step: normalize, drop zero-norm tasks, solve, combine.
/// Throws a runtime error when every gradient is zero-norm.
BalancedDirection balance_gradients(const GradientSet& g, const MgdaOptions& options = {});

}  // namespace spba
