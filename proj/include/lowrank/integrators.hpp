// Rank-adaptive implicit time steppers: step-truncation Euler, the
// basis-update (BUG) step, the merge step with and without the residual-gated
// cheap prediction, the dense implicit Euler reference, and the evolution
// driver.
#pragma once

#include <chrono>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lowrank/galerkin.hpp"
#include "lowrank/gmres.hpp"
#include "lowrank/low_rank_matrix.hpp"
#include "lowrank/operator.hpp"
#include "lowrank/truncation.hpp"
#include "lowrank/types.hpp"

namespace lowrank
{
  enum class Method
  {
    step_truncation,
    bug,
    merge,
    merge_adapt,
    implicit_euler
  };

  enum class GalerkinStrategy
  {
    gmres,
    fixed_point_with_gmres_fallback
  };

  struct StepControls
  {
    double dt = 0;
    Tolerance eps1 = Tolerance::exact();   // prediction truncation threshold
    Tolerance eps2 = Tolerance::exact();   // solution truncation threshold
    SolveControls solver{};
    GalerkinStrategy galerkin_strategy = GalerkinStrategy::gmres;
    Index rank_cap = -1;                    // applied only at the final truncation
    bool residual_check_relative = false;   // scale the accept threshold by |X^n|
    bool fallback_warm_start = false;       // seed the fallback core solve from the cheap core
  };

  struct StepReport
  {
    Index rank_out = 0;
    Index pred_rows = 0;                    // merged row-space dimension s1
    Index pred_cols = 0;                    // merged column-space dimension s2
    std::optional<double> residual_norm;    // cheap-prediction residual (merge_adapt)
    std::optional<bool> fallback_used;      // defined only for merge_adapt
    int solver_iterations = 0;              // inner iterations across all implicit solves
    int prediction_solves = 0;              // K/L factor solves performed
    double wall_seconds = 0;                // filled by evolve
  };

  struct RunTrace
  {
    std::vector<double> times;              // n+1 grid points
    std::vector<Index> ranks;               // per-time solution ranks (may be empty for IE)
    std::vector<StepReport> reports;        // one per step
    LowRankMatrix final;
    std::optional<Matrix> final_dense;      // implicit Euler only
  };

  //! explicit step-truncation Euler: truncated sum of X^n and dt * T_eps1(F(X^n, t))
  inline std::pair<LowRankMatrix, StepReport> step_truncation_euler(const MatrixOperator& op,
                                                                    const LowRankMatrix& xn,
                                                                    double t,
                                                                    const StepControls& ctl)
  {
    LowRankMatrix pred = apply_truncated(op, xn, t, ctl.eps1);
    StepReport rep;
    rep.pred_rows = xn.rank() + pred.rank();
    rep.pred_cols = rep.pred_rows;
    std::vector<LowRankMatrix> terms;
    terms.reserve(2);
    terms.push_back(xn);
    terms.push_back(scale(std::move(pred), ctl.dt));
    LowRankMatrix out = low_rank_sum(terms, ctl.eps2, op.nrows, op.ncols, ctl.rank_cap);
    rep.rank_out = out.rank();
    return {std::move(out), std::move(rep)};
  }

  struct BugPrediction
  {
    Matrix k;   // m1 x r
    Matrix l;   // m2 x r
    int iterations = 0;
    int solves = 0;
  };

  //! implicit basis-update prediction: solves the K and L factor equations with
  //! the operator evaluated at the step endpoint t + dt
  inline BugPrediction bug_prediction(const MatrixOperator& op, const LowRankMatrix& xn, double t,
                                      const StepControls& ctl)
  {
    BugPrediction out;
    const Index r = xn.rank();
    out.k.resize(op.nrows, r);
    out.l.resize(op.ncols, r);
    if (r == 0)
      return out;
    const double t1 = t + ctl.dt;

    std::vector<const SparseMatrix*> big_k, big_l;
    std::vector<Matrix> small_k, small_l;
    big_k.reserve(op.terms.size());
    big_l.reserve(op.terms.size());
    for (const auto& term : op.terms)
    {
      big_k.push_back(&term.A);
      small_k.push_back((term.B * xn.right).transpose() * xn.right);   // V^T B^T V
      big_l.push_back(&term.B);
      small_l.push_back((term.A * xn.left).transpose() * xn.left);     // U^T A^T U
    }

    Matrix rhs_k = xn.left * xn.core;
    Matrix rhs_l = xn.right * xn.core.transpose();
    if (op.has_source())
    {
      const LowRankMatrix g = op.source(t1);
      if (g.rank() > 0)
      {
        rhs_k.noalias() += ctl.dt * (g.left * (g.core * (g.right.transpose() * xn.right)));
        rhs_l.noalias() += ctl.dt * (g.right * (g.core.transpose() * (g.left.transpose() * xn.left)));
      }
    }

    MatrixSolveResult rk = implicit_factor_solve(big_k, small_k, rhs_k, ctl.dt, ctl.solver);
    if (!rk.converged)
      throw SolveFailure("bug_prediction: K-step solve failed, residual " + std::to_string(rk.residual),
                         rk.residual, rk.iterations);
    MatrixSolveResult rl = implicit_factor_solve(big_l, small_l, rhs_l, ctl.dt, ctl.solver);
    if (!rl.converged)
      throw SolveFailure("bug_prediction: L-step solve failed, residual " + std::to_string(rl.residual),
                         rl.residual, rl.iterations);
    out.k = std::move(rk.x);
    out.l = std::move(rl.x);
    out.iterations = rk.iterations + rl.iterations;
    out.solves = 2;
    return out;
  }

  //! strategy dispatch for the Galerkin core solve
  inline GalerkinResult solve_galerkin(const ProjectedOperator& pop, const Matrix& rhs, double dt,
                                       const StepControls& ctl, const Matrix* x0 = nullptr)
  {
    if (ctl.galerkin_strategy == GalerkinStrategy::fixed_point_with_gmres_fallback)
    {
      GalerkinResult fp = galerkin_solve_fixed_point(pop, rhs, dt, ctl.solver, x0);
      if (fp.converged)
        return fp;
      GalerkinResult gm = galerkin_solve_gmres(pop, rhs, dt, ctl.solver, x0);
      gm.iterations += fp.iterations;
      return gm;
    }
    return galerkin_solve_gmres(pop, rhs, dt, ctl.solver, x0);
  }

  //! Galerkin step on prescribed orthonormal bases: projects the state, solves
  //! the implicit core equation at t + dt, truncates at eps2
  inline std::pair<LowRankMatrix, StepReport> galerkin_step_on_bases(const MatrixOperator& op,
                                                                     const LowRankMatrix& xn,
                                                                     double t,
                                                                     const StepControls& ctl,
                                                                     const Matrix& row_basis,
                                                                     const Matrix& col_basis,
                                                                     const Matrix* warm = nullptr)
  {
    ProjectedOperator pop = precompute_projected(op, row_basis, col_basis);
    Matrix rhs;
    if (xn.rank() > 0)
      rhs = (row_basis.transpose() * xn.left) * xn.core * (xn.right.transpose() * col_basis);
    else
      rhs = Matrix::Zero(pop.rows(), pop.cols());
    if (op.has_source())
      rhs += ctl.dt * pop.project_source(t + ctl.dt);

    GalerkinResult res = solve_galerkin(pop, rhs, ctl.dt, ctl, warm);
    if (!res.converged)
      throw SolveFailure("galerkin core solve failed, residual " + std::to_string(res.residual),
                         res.residual, res.iterations);

    StepReport rep;
    rep.pred_rows = row_basis.cols();
    rep.pred_cols = col_basis.cols();
    rep.solver_iterations = res.iterations;
    LowRankMatrix out =
        truncate_svd(LowRankMatrix::from_factors(row_basis, std::move(res.sigma), col_basis),
                     ctl.eps2, ctl.rank_cap);
    rep.rank_out = out.rank();
    return {std::move(out), std::move(rep)};
  }

  //! rank-adaptive BUG step: bases from the K/L prediction, Galerkin core
  //! solve, truncation
  inline std::pair<LowRankMatrix, StepReport> bug_step(const MatrixOperator& op,
                                                       const LowRankMatrix& xn, double t,
                                                       const StepControls& ctl)
  {
    BugPrediction pred = bug_prediction(op, xn, t, ctl);
    const Matrix row_basis = orthonormal_union({&xn.left, &pred.k});
    const Matrix col_basis = orthonormal_union({&xn.right, &pred.l});
    auto [x, rep] = galerkin_step_on_bases(op, xn, t, ctl, row_basis, col_basis);
    rep.solver_iterations += pred.iterations;
    rep.prediction_solves = pred.solves;
    return {std::move(x), std::move(rep)};
  }

  namespace detail
  {
    inline std::pair<LowRankMatrix, StepReport> merge_on_prediction(const MatrixOperator& op,
                                                                    const LowRankMatrix& xn,
                                                                    double t,
                                                                    const StepControls& ctl,
                                                                    const LowRankMatrix& pred,
                                                                    const BugPrediction* bug,
                                                                    const Matrix* warm = nullptr)
    {
      std::vector<const Matrix*> rows{&xn.left, &pred.left};
      std::vector<const Matrix*> cols{&xn.right, &pred.right};
      if (bug)
      {
        rows.push_back(&bug->k);
        cols.push_back(&bug->l);
      }
      const Matrix row_basis = orthonormal_union(rows);
      const Matrix col_basis = orthonormal_union(cols);
      auto [x, rep] = galerkin_step_on_bases(op, xn, t, ctl, row_basis, col_basis, warm);
      if (bug)
      {
        rep.solver_iterations += bug->iterations;
        rep.prediction_solves = bug->solves;
      }
      return {std::move(x), std::move(rep)};
    }
  }

  //! merge step: bases joined from the current factors, the truncated explicit
  //! prediction T_eps1(F(X^n, t)), and the K/L prediction
  inline std::pair<LowRankMatrix, StepReport> merge_step(const MatrixOperator& op,
                                                         const LowRankMatrix& xn, double t,
                                                         const StepControls& ctl)
  {
    const LowRankMatrix pred = apply_truncated(op, xn, t, ctl.eps1);
    const BugPrediction bug = bug_prediction(op, xn, t, ctl);
    return detail::merge_on_prediction(op, xn, t, ctl, pred, &bug);
  }

  //! cheap merge prediction only (no K/L spaces, no residual check)
  inline std::pair<LowRankMatrix, StepReport> merge_cheap_step(const MatrixOperator& op,
                                                               const LowRankMatrix& xn, double t,
                                                               const StepControls& ctl)
  {
    const LowRankMatrix pred = apply_truncated(op, xn, t, ctl.eps1);
    return detail::merge_on_prediction(op, xn, t, ctl, pred, nullptr);
  }

  //! Frobenius norm of the implicit-Euler defect X1 - X0 - dt F(X1, t + dt),
  //! accumulated in factored form and read off the canonical core
  inline double implicit_defect_norm(const MatrixOperator& op, const LowRankMatrix& x0,
                                     const LowRankMatrix& x1, double t, double dt)
  {
    std::vector<LowRankMatrix> terms;
    terms.reserve(op.terms.size() + 3);
    terms.push_back(x1);
    terms.push_back(scale(x0, -1.0));
    for (auto& term : apply(op, x1, t + dt))
      terms.push_back(scale(std::move(term), -dt));
    return frobenius_norm(low_rank_sum(terms, Tolerance::exact(), op.nrows, op.ncols));
  }

  //! merge step with the residual-gated cheap prediction: the K/L solves run
  //! only when the cheap-path defect fails the eps2 acceptance check
  inline std::pair<LowRankMatrix, StepReport> merge_adapt_step(const MatrixOperator& op,
                                                               const LowRankMatrix& xn, double t,
                                                               const StepControls& ctl)
  {
    const LowRankMatrix pred = apply_truncated(op, xn, t, ctl.eps1);
    auto [cheap, cheap_rep] = detail::merge_on_prediction(op, xn, t, ctl, pred, nullptr);
    const double resid = implicit_defect_norm(op, xn, cheap, t, ctl.dt);
    const double threshold =
        ctl.residual_check_relative ? ctl.eps2.value * frobenius_norm(xn) : ctl.eps2.value;

    if (resid < threshold)
    {
      cheap_rep.residual_norm = resid;
      cheap_rep.fallback_used = false;
      return {std::move(cheap), std::move(cheap_rep)};
    }

    const BugPrediction bug = bug_prediction(op, xn, t, ctl);
    auto [x, rep] = [&]
    {
      if (!ctl.fallback_warm_start)
        return detail::merge_on_prediction(op, xn, t, ctl, pred, &bug);
      std::vector<const Matrix*> rows{&xn.left, &pred.left, &bug.k};
      std::vector<const Matrix*> cols{&xn.right, &pred.right, &bug.l};
      const Matrix row_basis = orthonormal_union(rows);
      const Matrix col_basis = orthonormal_union(cols);
      const Matrix seed = (row_basis.transpose() * cheap.left) * cheap.core *
                          (cheap.right.transpose() * col_basis);
      auto stepped = galerkin_step_on_bases(op, xn, t, ctl, row_basis, col_basis, &seed);
      stepped.second.solver_iterations += bug.iterations;
      stepped.second.prediction_solves = bug.solves;
      return stepped;
    }();
    rep.residual_norm = resid;
    rep.fallback_used = true;
    rep.solver_iterations += cheap_rep.solver_iterations;
    return {std::move(x), std::move(rep)};
  }

  //! one dense implicit Euler step, solved matrix-free on the Kronecker-form
  //! map; guarded against states too large for dense storage
  inline Matrix implicit_euler_dense(const MatrixOperator& op, const Matrix& xn, double t,
                                     double dt, const SolveControls& ctl, int* iterations = nullptr)
  {
    if (op.nrows * op.ncols > 1000000)
      throw std::invalid_argument("implicit_euler_dense: state exceeds the dense size guard");
    if (xn.rows() != op.nrows || xn.cols() != op.ncols)
      throw std::invalid_argument("implicit_euler_dense: state shape mismatch");
    const Index m1 = op.nrows, m2 = op.ncols;

    LinearMap map;
    map.dim = m1 * m2;
    map.apply = [&](const Vector& xin, Vector& yout)
    {
      const Eigen::Map<const Matrix> x(xin.data(), m1, m2);
      yout = xin;
      Eigen::Map<Matrix> y(yout.data(), m1, m2);
      for (const auto& term : op.terms)
        y.noalias() -= dt * (term.A * x * term.B.transpose());
    };

    Matrix rhs = xn;
    if (op.has_source())
      rhs += dt * dense(op.source(t + dt));
    const Eigen::Map<const Vector> rhsv(rhs.data(), m1 * m2);
    const Eigen::Map<const Vector> x0v(xn.data(), m1 * m2);
    GmresResult res = gmres(map, rhsv, x0v, ctl);
    if (iterations)
      *iterations = res.iterations;
    if (!res.converged)
      throw SolveFailure("implicit_euler_dense: solve failed, residual " + std::to_string(res.residual),
                         res.residual, res.iterations);
    return Eigen::Map<const Matrix>(res.x.data(), m1, m2);
  }

  namespace detail
  {
    inline Index dense_eps_rank(const Matrix& x, double eps)
    {
      Eigen::BDCSVD<Matrix> svd(x);
      return truncation_rank(svd.singularValues(), eps);
    }
  }

  //! march n_steps uniform steps of the chosen method from t0 to t_end;
  //! ctl.dt is overwritten with the uniform step size
  inline RunTrace evolve(Method method, const MatrixOperator& op, const LowRankMatrix& x0,
                         double t0, double t_end, int n_steps, StepControls ctl)
  {
    if (n_steps <= 0)
      throw std::invalid_argument("evolve: n_steps must be positive");
    ctl.dt = (t_end - t0) / n_steps;
    using clock = std::chrono::steady_clock;

    RunTrace trace;
    trace.times.reserve(n_steps + 1);
    trace.times.push_back(t0);

    if (method == Method::implicit_euler)
    {
      const bool track_ranks = std::max(op.nrows, op.ncols) <= 256;
      Matrix x = dense(x0);
      if (track_ranks)
        trace.ranks.push_back(detail::dense_eps_rank(x, ctl.eps2.value));
      for (int k = 0; k < n_steps; ++k)
      {
        const double t = t0 + k * ctl.dt;
        StepReport rep;
        int iters = 0;
        const auto tic = clock::now();
        Matrix xnext = implicit_euler_dense(op, x, t, ctl.dt, ctl.solver, &iters);
        rep.wall_seconds = std::chrono::duration<double>(clock::now() - tic).count();
        x = std::move(xnext);
        rep.solver_iterations = iters;
        if (track_ranks)
        {
          const Index rank = detail::dense_eps_rank(x, ctl.eps2.value);
          trace.ranks.push_back(rank);
          rep.rank_out = rank;
        }
        trace.reports.push_back(std::move(rep));
        trace.times.push_back(t0 + (k + 1) * ctl.dt);
      }
      trace.final = low_rank_from_dense(x, ctl.eps2);
      trace.final_dense = std::move(x);
      return trace;
    }

    LowRankMatrix x = x0;
    trace.ranks.push_back(x.rank());
    for (int k = 0; k < n_steps; ++k)
    {
      const double t = t0 + k * ctl.dt;
      try
      {
        const auto tic = clock::now();
        std::pair<LowRankMatrix, StepReport> stepped = [&]
        {
          switch (method)
          {
            case Method::step_truncation: return step_truncation_euler(op, x, t, ctl);
            case Method::bug:             return bug_step(op, x, t, ctl);
            case Method::merge:           return merge_step(op, x, t, ctl);
            case Method::merge_adapt:     return merge_adapt_step(op, x, t, ctl);
            default: throw std::invalid_argument("evolve: unknown method");
          }
        }();
        stepped.second.wall_seconds = std::chrono::duration<double>(clock::now() - tic).count();
        x = std::move(stepped.first);
        trace.ranks.push_back(x.rank());
        trace.reports.push_back(std::move(stepped.second));
        trace.times.push_back(t0 + (k + 1) * ctl.dt);
      }
      catch (const SolveFailure& e)
      {
        throw SolveFailure("evolve: step " + std::to_string(k + 1) + " of " +
                               std::to_string(n_steps) + ": " + e.what(),
                           e.residual, e.iterations);
      }
    }
    trace.final = std::move(x);
    return trace;
  }
}
