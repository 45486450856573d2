#include "spba/mgda.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

#include "spba/error.hpp"

namespace spba {

const char* to_string(Normalization n) { return n == Normalization::l2 ? "l2" : "none"; }

Normalization normalization_from_string(const std::string& s) {
  if (s == "l2") return Normalization::l2;
  if (s == "none") return Normalization::none;
  config_error("unknown normalization '" + s + "'");
}

void GradientSet::validate() const {
  if (gradients.empty()) runtime_error("gradient set is empty");
  if (task_ids.size() != gradients.size()) runtime_error("gradient set: task id count mismatch");
  const auto p = gradients.front().size();
  for (const auto& g : gradients) {
    if (g.size() != p) runtime_error("gradient set: dimension mismatch");
  }
  std::set<std::string> ids(task_ids.begin(), task_ids.end());
  if (ids.size() != task_ids.size()) runtime_error("gradient set: duplicate task ids");
}

Eigen::MatrixXd gram_matrix(const GradientSet& g) {
  g.validate();
  const auto t = static_cast<Eigen::Index>(g.tasks());
  Eigen::MatrixXd m(t, t);
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index j = i; j < t; ++j) {
      m(i, j) = m(j, i) = g.gradients[i].dot(g.gradients[j]);
    }
  }
  return m;
}

double solve_two_task(const Eigen::Matrix2d& m) {
  const double denom = m(0, 0) - 2.0 * m(0, 1) + m(1, 1);
  if (denom < 1e-12) return 0.5;
  return std::clamp((m(1, 1) - m(0, 1)) / denom, 0.0, 1.0);
}

double simplex_objective(const Eigen::MatrixXd& m, const std::vector<double>& lambda) {
  const Eigen::Map<const Eigen::VectorXd> l(lambda.data(), static_cast<Eigen::Index>(lambda.size()));
  return l.dot(m * l);
}

namespace {

void check_gram(const Eigen::MatrixXd& m) {
  if (m.rows() == 0 || m.rows() != m.cols()) runtime_error("Gram matrix must be square and nonempty");
  if (!m.allFinite()) runtime_error("Gram matrix has NaN/Inf entries");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    runtime_error("Gram matrix is not symmetric");
  }
}

bool gap_ok(const Eigen::MatrixXd& m, const Eigen::VectorXd& lambda, double tol, double* gap) {
  const Eigen::VectorXd ml = m * lambda;
  const double obj = lambda.dot(ml);
  *gap = obj - ml.minCoeff();
  return *gap <= tol * std::max(1.0, obj);
}

// Wolfe's min-norm-point algorithm on the Gram matrix: Frank-Wolfe vertex
// selection plus an exact affine correction on the active set ("corral").
// Finite, and used when the iterative loop runs out of steps.
Eigen::VectorXd wolfe_min_norm(const Eigen::MatrixXd& m, double tol, int* steps) {
  const Eigen::Index t = m.rows();
  Eigen::Index start = 0;
  m.diagonal().minCoeff(&start);
  std::vector<Eigen::Index> corral{start};
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(t);
  lambda(start) = 1.0;

  const int max_major = 50 * static_cast<int>(t) + 50;
  for (int major = 0; major < max_major; ++major) {
    ++*steps;
    const Eigen::VectorXd ml = m * lambda;
    const double obj = lambda.dot(ml);
    Eigen::Index r = 0;
    const double best = ml.minCoeff(&r);
    if (obj - best <= tol * std::max(1.0, obj)) break;
    if (std::find(corral.begin(), corral.end(), r) != corral.end()) break;  // rounding stall
    corral.push_back(r);

    for (;;) {
      // Affine minimizer over the corral: [M_SS 1; 1^T 0] [mu; nu] = [0; 1].
      const auto s = static_cast<Eigen::Index>(corral.size());
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(s + 1, s + 1);
      for (Eigen::Index i = 0; i < s; ++i) {
        for (Eigen::Index j = 0; j < s; ++j) kkt(i, j) = m(corral[i], corral[j]);
        kkt(i, s) = kkt(s, i) = 1.0;
      }
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(s + 1);
      rhs(s) = 1.0;
      const Eigen::VectorXd mu = kkt.completeOrthogonalDecomposition().solve(rhs).head(s);

      if (mu.minCoeff() > 0.0) {
        lambda.setZero();
        for (Eigen::Index i = 0; i < s; ++i) lambda(corral[i]) = mu(i);
        break;
      }
      // Walk from lambda towards mu until the first weight hits zero, drop it.
      double theta = 1.0;
      for (Eigen::Index i = 0; i < s; ++i) {
        const double cur = lambda(corral[i]);
        if (mu(i) <= 0.0 && cur - mu(i) > 0.0) theta = std::min(theta, cur / (cur - mu(i)));
      }
      std::vector<Eigen::Index> kept;
      for (Eigen::Index i = 0; i < s; ++i) {
        const Eigen::Index k = corral[i];
        lambda(k) += theta * (mu(i) - lambda(k));
        if (lambda(k) > 1e-15) {
          kept.push_back(k);
        } else {
          lambda(k) = 0.0;
        }
      }
      if (kept.empty() || kept.size() == corral.size()) break;
      corral = std::move(kept);
      lambda /= lambda.sum();
    }
  }
  return lambda;
}

}  // namespace

SimplexWeights solve_min_norm(const Eigen::MatrixXd& m, double tol, int max_iter,
                              std::vector<double>* objective_trace) {
  check_gram(m);
  if (!(tol > 0.0)) runtime_error("solve_min_norm: tol must be > 0");
  const Eigen::Index t = m.rows();

  Eigen::VectorXd lambda = Eigen::VectorXd::Constant(t, 1.0 / static_cast<double>(t));
  SimplexWeights out;
  for (int iter = 0;; ++iter) {
    const Eigen::VectorXd ml = m * lambda;
    const double obj = lambda.dot(ml);
    if (objective_trace) objective_trace->push_back(obj);
    Eigen::Index r = 0;
    const double best = ml.minCoeff(&r);
    out.final_gap = obj - best;
    out.iterations = iter;
    if (out.final_gap <= tol * std::max(1.0, obj)) {
      out.converged = true;
      break;
    }
    if (iter >= max_iter) break;

    // Away step: shift weight off the worst support vertex a. Taken when it
    // promises more decrease than the toward step; this is what removes the
    // zig-zagging of plain Frank-Wolfe when the optimum lies on a face.
    Eigen::Index a = -1;
    for (Eigen::Index i = 0; i < t; ++i) {
      if (lambda(i) > 0.0 && (a < 0 || ml(i) > ml(a))) a = i;
    }
    const double away_gap = ml(a) - obj;
    if (away_gap > out.final_gap && lambda(a) < 1.0) {
      // f(l + g (l - e_a)) = obj - 2 g away_gap + g^2 curv
      const double curv = obj - 2.0 * ml(a) + m(a, a);
      const double g_max = lambda(a) / (1.0 - lambda(a));
      const double g = curv > 0.0 ? std::min(away_gap / curv, g_max) : g_max;
      lambda *= 1.0 + g;
      lambda(a) -= g;
      if (g == g_max) lambda(a) = 0.0;
      continue;
    }

    // Toward step: exact line search on the segment [lambda, e_r].
    Eigen::Matrix2d seg;
    seg << obj, best, best, m(r, r);
    const double keep = solve_two_task(seg);
    lambda *= keep;
    lambda(r) += 1.0 - keep;
  }

  // Clean up rounding so the simplex invariants hold exactly enough.
  lambda = lambda.cwiseMax(0.0);
  lambda /= lambda.sum();

  if (!out.converged) {
    int steps = 0;
    Eigen::VectorXd exact = wolfe_min_norm(m, tol, &steps);
    exact = exact.cwiseMax(0.0) / exact.cwiseMax(0.0).sum();
    double gap = 0.0;
    const bool ok = gap_ok(m, exact, tol, &gap);
    if (ok || exact.dot(m * exact) < lambda.dot(m * lambda)) {
      lambda = exact;
      out.final_gap = gap;
      out.converged = ok;
      out.iterations += steps;
      if (objective_trace) objective_trace->push_back(lambda.dot(m * lambda));
    }
  }
  out.lambda.assign(lambda.data(), lambda.data() + t);
  return out;
}

std::vector<double> brute_force_min_norm(const Eigen::MatrixXd& m, double grid_step) {
  check_gram(m);
  const auto t = static_cast<std::size_t>(m.rows());
  if (t > 4) runtime_error("brute_force_min_norm: T = " + std::to_string(t) + " exceeds 4");
  if (!(grid_step > 0.0)) runtime_error("brute_force_min_norm: grid_step must be > 0");

  const long steps = std::max(1L, static_cast<long>(std::floor(1.0 / grid_step + 1e-9)));
  std::vector<long> counts(t, 0);
  std::vector<double> point(t), best_point(t);
  double best = std::numeric_limits<double>::infinity();

  // Enumerate compositions of `steps` into t nonnegative parts.
  std::function<void(std::size_t, long)> rec = [&](std::size_t i, long left) {
    if (i + 1 == t) {
      counts[i] = left;
      for (std::size_t j = 0; j < t; ++j) point[j] = static_cast<double>(counts[j]) / steps;
      const double v = simplex_objective(m, point);
      if (v < best) {
        best = v;
        best_point = point;
      }
      return;
    }
    for (long c = 0; c <= left; ++c) {
      counts[i] = c;
      rec(i + 1, left - c);
    }
  };
  rec(0, steps);
  return best_point;
}

Eigen::VectorXd combined_direction(const GradientSet& g, const SimplexWeights& w,
                                   Normalization normalization) {
  g.validate();
  if (w.lambda.size() != g.tasks()) runtime_error("combined_direction: weight count mismatch");
  Eigen::VectorXd d = Eigen::VectorXd::Zero(g.gradients.front().size());
  bool any = false;
  for (std::size_t i = 0; i < g.tasks(); ++i) {
    const auto& gi = g.gradients[i];
    if (normalization == Normalization::l2) {
      const double n = gi.norm();
      if (n < 1e-12) {
        if (w.lambda[i] != 0.0) runtime_error("combined_direction: weight on a zero-norm gradient");
        continue;
      }
      any = true;
      d += (w.lambda[i] / n) * gi;
    } else {
      any = true;
      d += w.lambda[i] * gi;
    }
  }
  if (!any) runtime_error("combined_direction: all gradients are zero (Pareto-stationary batch)");
  return d;
}

BalancedDirection balance_gradients(const GradientSet& g, const MgdaOptions& options) {
  g.validate();
  const std::size_t t = g.tasks();
  BalancedDirection out;
  out.included.assign(t, false);

  GradientSet active;
  std::vector<std::size_t> active_index;
  for (std::size_t i = 0; i < t; ++i) {
    const double n = g.gradients[i].norm();
    if (n < options.zero_norm) continue;
    out.included[i] = true;
    active_index.push_back(i);
    active.gradients.push_back(options.normalization == Normalization::l2
                                   ? Eigen::VectorXd(g.gradients[i] / n)
                                   : g.gradients[i]);
    active.task_ids.push_back(g.task_ids[i]);
  }
  if (active_index.empty()) {
    runtime_error("balance_gradients: all gradients are zero (Pareto-stationary batch)");
  }

  const SimplexWeights sub = solve_min_norm(gram_matrix(active), options.tol, options.max_iter);
  out.weights = sub;
  out.weights.lambda.assign(t, 0.0);
  for (std::size_t j = 0; j < active_index.size(); ++j) {
    out.weights.lambda[active_index[j]] = sub.lambda[j];
  }
  out.direction = combined_direction(g, out.weights, options.normalization);
  return out;
}

}  // namespace spba
