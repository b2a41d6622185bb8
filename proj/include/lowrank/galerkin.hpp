// Implicit small solves of the rank-adaptive steppers: the K/L factor
// equations and the Galerkin core equation, by GMRES or by a fixed-point
// sweep around the dominant diffusion pair.
#pragma once

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>
#include <vector>

#include "lowrank/gmres.hpp"
#include "lowrank/operator.hpp"
#include "lowrank/types.hpp"

namespace lowrank
{
  struct MatrixSolveResult
  {
    Matrix x;
    int iterations = 0;
    double residual = 0;
    bool converged = false;
  };

  //! Solve W - dt * sum_j big_j W small_j = rhs for the m x r unknown W by
  //! GMRES on the vectorized system. Serves both basis-update equations: the
  //! K-step uses big_j = A_j, small_j = V^T B_j^T V; the L-step uses
  //! big_j = B_j, small_j = U^T A_j^T U.
  inline MatrixSolveResult implicit_factor_solve(const std::vector<const SparseMatrix*>& big,
                                                 const std::vector<Matrix>& small,
                                                 const Matrix& rhs, double dt,
                                                 const SolveControls& ctl)
  {
    if (big.size() != small.size())
      throw std::invalid_argument("implicit_factor_solve: term count mismatch");
    const Index m = rhs.rows(), r = rhs.cols();
    MatrixSolveResult out;
    if (r == 0 || m == 0)
    {
      out.x = rhs;
      out.converged = true;
      return out;
    }
    for (std::size_t j = 0; j < big.size(); ++j)
      if (big[j]->rows() != m || big[j]->cols() != m || small[j].rows() != r || small[j].cols() != r)
        throw std::invalid_argument("implicit_factor_solve: term shape mismatch");

    LinearMap map;
    map.dim = m * r;
    map.apply = [&](const Vector& xin, Vector& yout)
    {
      const Eigen::Map<const Matrix> w(xin.data(), m, r);
      yout = xin;
      Eigen::Map<Matrix> y(yout.data(), m, r);
      for (std::size_t j = 0; j < big.size(); ++j)
        y.noalias() -= dt * ((*big[j]) * w * small[j]);
    };

    const Eigen::Map<const Vector> rhsv(rhs.data(), m * r);
    GmresResult res = gmres(map, rhsv, rhsv, ctl);
    out.x = Eigen::Map<const Matrix>(res.x.data(), m, r);
    out.iterations = res.iterations;
    out.residual = res.residual;
    out.converged = res.converged;
    return out;
  }

  struct GalerkinResult
  {
    Matrix sigma;
    int iterations = 0;
    double residual = 0;
    bool converged = false;
    bool used_fixed_point = false;
  };

  //! Galerkin core equation S - dt * sum_j Ahat_j S Chat_j = rhs by GMRES on
  //! the vectorized s1*s2 system. Any source contribution belongs to rhs.
  //! x0, when given, seeds the iteration (defaults to rhs).
  inline GalerkinResult galerkin_solve_gmres(const ProjectedOperator& pop, const Matrix& rhs,
                                             double dt, const SolveControls& ctl,
                                             const Matrix* x0 = nullptr)
  {
    const Index s1 = pop.rows(), s2 = pop.cols();
    if (rhs.rows() != s1 || rhs.cols() != s2)
      throw std::invalid_argument("galerkin_solve_gmres: rhs shape mismatch");
    GalerkinResult out;
    if (s1 == 0 || s2 == 0)
    {
      out.sigma = rhs;
      out.converged = true;
      return out;
    }

    LinearMap map;
    map.dim = s1 * s2;
    map.apply = [&](const Vector& xin, Vector& yout)
    {
      const Eigen::Map<const Matrix> s(xin.data(), s1, s2);
      yout = xin;
      Eigen::Map<Matrix> y(yout.data(), s1, s2);
      for (const auto& [ahat, chat] : pop.terms)
        y.noalias() -= dt * (ahat * s * chat);
    };

    const Eigen::Map<const Vector> rhsv(rhs.data(), s1 * s2);
    Vector start = rhsv;
    if (x0)
    {
      if (x0->rows() != s1 || x0->cols() != s2)
        throw std::invalid_argument("galerkin_solve_gmres: x0 shape mismatch");
      start = Eigen::Map<const Vector>(x0->data(), s1 * s2);
    }
    GmresResult res = gmres(map, rhsv, start, ctl);
    out.sigma = Eigen::Map<const Matrix>(res.x.data(), s1, s2);
    out.iterations = res.iterations;
    out.residual = res.residual;
    out.converged = res.converged;
    return out;
  }

  //! Fixed-point solve of the same core equation. The designated stiff pair
  //! (row-term p, column-term q) is kept implicit with its companion factor
  //! approximated by a scaled identity (c_p = mean diag Chat_p,
  //! d_q = mean diag Ahat_q); companion deviations and all remaining terms are
  //! lagged. Each sweep is solved exactly in the eigenbases of the symmetric
  //! designated factors, so the implicit part reduces to elementwise division.
  //! Reports non-convergence (for the GMRES fallback) if the designated pair
  //! is absent or not symmetric, or if the sweep stagnates or diverges.
  inline GalerkinResult galerkin_solve_fixed_point(const ProjectedOperator& pop, const Matrix& rhs,
                                                   double dt, const SolveControls& ctl,
                                                   const Matrix* x0 = nullptr)
  {
    GalerkinResult out;
    out.used_fixed_point = true;
    out.sigma = rhs;
    const Index s1 = pop.rows(), s2 = pop.cols();
    if (rhs.rows() != s1 || rhs.cols() != s2)
      throw std::invalid_argument("galerkin_solve_fixed_point: rhs shape mismatch");
    if (s1 == 0 || s2 == 0)
    {
      out.converged = true;
      return out;
    }
    if (!pop.stiff_row_term || !pop.stiff_col_term ||
        *pop.stiff_row_term == *pop.stiff_col_term ||
        *pop.stiff_row_term >= pop.terms.size() || *pop.stiff_col_term >= pop.terms.size())
      return out;   // not applicable

    const std::size_t p = *pop.stiff_row_term, q = *pop.stiff_col_term;
    const Matrix& ap = pop.terms[p].first;
    const Matrix& cp = pop.terms[p].second;
    const Matrix& aq = pop.terms[q].first;
    const Matrix& cq = pop.terms[q].second;
    const double sym_p = (ap - ap.transpose()).norm();
    const double sym_q = (cq - cq.transpose()).norm();
    if (sym_p > 1e-10 * std::max(1.0, ap.norm()) || sym_q > 1e-10 * std::max(1.0, cq.norm()))
      return out;   // fixed point needs symmetric designated factors

    const double c_p = cp.diagonal().mean();
    const double d_q = aq.diagonal().mean();

    Eigen::SelfAdjointEigenSolver<Matrix> ep(ap), eq(cq);
    if (ep.info() != Eigen::Success || eq.info() != Eigen::Success)
      return out;
    const Matrix& e = ep.eigenvectors();    // s1 x s1
    const Matrix& f = eq.eigenvectors();    // s2 x s2

    // denominators 1 - dt c_p lambda_i - dt d_q gamma_j of the implicit part
    Matrix den(s1, s2);
    for (Index i = 0; i < s1; ++i)
      for (Index j = 0; j < s2; ++j)
        den(i, j) = 1.0 - dt * c_p * ep.eigenvalues()[i] - dt * d_q * eq.eigenvalues()[j];
    if (den.cwiseAbs().minCoeff() < 1e-12)
      return out;

    // transform every term into the eigenbases once
    std::vector<std::pair<Matrix, Matrix>> tt;
    tt.reserve(pop.terms.size());
    for (std::size_t j = 0; j < pop.terms.size(); ++j)
    {
      if (j == p)
      {
        // deviation of the companion from its scalar approximation
        tt.emplace_back(Matrix(ep.eigenvalues().asDiagonal()),
                        f.transpose() * (cp - c_p * Matrix::Identity(s2, s2)) * f);
      }
      else if (j == q)
      {
        tt.emplace_back(e.transpose() * (aq - d_q * Matrix::Identity(s1, s1)) * e,
                        Matrix(eq.eigenvalues().asDiagonal()));
      }
      else
      {
        tt.emplace_back(e.transpose() * pop.terms[j].first * e,
                        f.transpose() * pop.terms[j].second * f);
      }
    }

    const Matrix rhst = e.transpose() * rhs * f;
    const double rhsnorm = rhs.norm();
    const double target = 0.5 * std::max(ctl.rel_tol * rhsnorm, ctl.abs_tol);

    auto lagged = [&](const Matrix& s)
    {
      Matrix y = Matrix::Zero(s1, s2);
      for (const auto& [l, r] : tt)
        y.noalias() += l * s * r;
      return y;
    };

    Matrix sig = (x0 && x0->rows() == s1 && x0->cols() == s2)
                     ? Matrix(e.transpose() * (*x0) * f)
                     : Matrix(rhst.cwiseQuotient(den));
    Matrix nprev = lagged(sig);
    const int max_sweeps = std::min(50, ctl.max_iters);
    double prev_update = std::numeric_limits<double>::infinity();
    int growth_streak = 0;
    for (int it = 1; it <= max_sweeps; ++it)
    {
      Matrix signext = (rhst + dt * nprev).cwiseQuotient(den);
      const double update = (signext - sig).norm();
      sig.swap(signext);
      ++out.iterations;

      Matrix ncur = lagged(sig);
      const double res_est = dt * (ncur - nprev).norm();
      nprev.swap(ncur);
      if (res_est <= target || update <= 1e-12 * std::max(sig.norm(), 1e-300))
        break;
      if (update > prev_update)
      {
        if (++growth_streak >= 3)
          return out;   // diverging sweep
      }
      else
        growth_streak = 0;
      prev_update = update;
    }

    out.sigma = e * sig * f.transpose();
    Matrix resid = out.sigma - dt * pop.apply_homogeneous(out.sigma) - rhs;
    out.residual = resid.norm();
    out.converged = out.residual <= std::max(ctl.rel_tol * rhsnorm, ctl.abs_tol);
    return out;
  }
}
