// Restarted GMRES with Givens rotations on a matrix-free linear map.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "lowrank/types.hpp"

namespace lowrank
{
  //! matrix-free square linear map y = A x
  struct LinearMap
  {
    Index dim = 0;
    std::function<void(const Vector&, Vector&)> apply;
  };

  struct SolveControls
  {
    double rel_tol = 1e-10;
    double abs_tol = 1e-14;
    int max_iters = 2000;
    int restart = 50;
  };

  struct GmresResult
  {
    Vector x;                       // solution, or best iterate on failure
    int iterations = 0;
    double residual = 0;            // true residual norm of x, recomputed
    bool converged = false;
    std::vector<double> history;    // per-iteration residual estimates
  };

  //! Restarted GMRES (modified Gram-Schmidt Arnoldi, Givens rotations).
  //! Stops when the true residual satisfies |r| <= max(rel_tol |rhs|, abs_tol);
  //! convergence signalled by the rotation estimates is confirmed by an
  //! explicit residual recomputation before the method returns.
  inline GmresResult gmres(const LinearMap& map, const Vector& rhs, const Vector& x0,
                           const SolveControls& ctl)
  {
    if (rhs.size() != map.dim || x0.size() != map.dim)
      throw std::invalid_argument("gmres: dimension mismatch");

    GmresResult out;
    const Index n = map.dim;
    if (n == 0)
    {
      out.converged = true;
      return out;
    }
    const double target = std::max(ctl.rel_tol * rhs.norm(), ctl.abs_tol);
    const int restart = std::max<int>(1, std::min<Index>(ctl.restart, n));

    Vector x = x0;
    Vector r(n), w(n);
    map.apply(x, r);
    r = rhs - r;
    double beta = r.norm();
    out.x = x;
    out.residual = beta;
    if (beta <= target)
    {
      out.converged = true;
      return out;
    }

    Matrix v(n, restart + 1);
    Matrix h = Matrix::Zero(restart + 1, restart);
    Vector cs(restart), sn(restart), g(restart + 1);

    while (out.iterations < ctl.max_iters)
    {
      v.col(0) = r / beta;
      g.setZero();
      g[0] = beta;
      int k = 0;
      bool breakdown = false;
      for (; k < restart && out.iterations < ctl.max_iters; ++k)
      {
        map.apply(v.col(k), w);
        for (int j = 0; j <= k; ++j)
        {
          h(j, k) = v.col(j).dot(w);
          w -= h(j, k) * v.col(j);
        }
        h(k + 1, k) = w.norm();
        if (h(k + 1, k) > 0)
          v.col(k + 1) = w / h(k + 1, k);
        else
          breakdown = true;   // happy breakdown: solution lies in the current subspace

        for (int j = 0; j < k; ++j)
        {
          const double t = cs[j] * h(j, k) + sn[j] * h(j + 1, k);
          h(j + 1, k) = -sn[j] * h(j, k) + cs[j] * h(j + 1, k);
          h(j, k) = t;
        }
        const double denom = std::hypot(h(k, k), h(k + 1, k));
        cs[k] = denom > 0 ? h(k, k) / denom : 1.0;
        sn[k] = denom > 0 ? h(k + 1, k) / denom : 0.0;
        h(k, k) = denom;
        h(k + 1, k) = 0;
        g[k + 1] = -sn[k] * g[k];
        g[k] = cs[k] * g[k];

        ++out.iterations;
        out.history.push_back(std::abs(g[k + 1]));
        if (std::abs(g[k + 1]) <= target || breakdown)
        {
          ++k;
          break;
        }
      }

      // solve the small triangular system and update the iterate
      Vector y = g.head(k);
      for (int i = k - 1; i >= 0; --i)
      {
        for (int j = i + 1; j < k; ++j)
          y[i] -= h(i, j) * y[j];
        y[i] = (h(i, i) != 0) ? y[i] / h(i, i) : 0.0;
      }
      x += v.leftCols(k) * y;

      map.apply(x, r);
      r = rhs - r;
      beta = r.norm();
      if (beta < out.residual)
      {
        out.x = x;
        out.residual = beta;
      }
      if (beta <= target)
      {
        out.converged = true;
        return out;
      }
      if (breakdown)
        break;   // subspace exhausted without reaching the target
      h.setZero();
    }
    return out;
  }
}
