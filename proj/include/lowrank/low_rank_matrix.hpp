// Factored representation X = left * core * right^T with orthonormal side factors.
#pragma once

#include <stdexcept>

#include "lowrank/types.hpp"

namespace lowrank
{
  //! Low-rank matrix in factored form.
  //!
  //! left (nrows x r) and right (ncols x k) always carry orthonormal columns;
  //! the canonical flag additionally means core is square diagonal with strictly
  //! positive nonincreasing entries (an SVD). Rank 0 is the empty factorization.
  struct LowRankMatrix
  {
    Index nrows = 0;
    Index ncols = 0;
    Matrix left;    // nrows x r
    Matrix core;    // r x k
    Matrix right;   // ncols x k
    bool canonical = false;

    Index rank() const { return std::min(core.rows(), core.cols()); }

    static LowRankMatrix zero(Index nrows, Index ncols)
    {
      LowRankMatrix x;
      x.nrows = nrows;
      x.ncols = ncols;
      x.left.resize(nrows, 0);
      x.core.resize(0, 0);
      x.right.resize(ncols, 0);
      x.canonical = true;
      return x;
    }

    static LowRankMatrix from_factors(Matrix left, Matrix core, Matrix right)
    {
      if (left.cols() != core.rows() || right.cols() != core.cols())
        throw std::invalid_argument("LowRankMatrix: factor shapes do not chain");
      LowRankMatrix x;
      x.nrows = left.rows();
      x.ncols = right.rows();
      x.left = std::move(left);
      x.core = std::move(core);
      x.right = std::move(right);
      x.canonical = false;
      return x;
    }

    static LowRankMatrix from_canonical(Matrix left, const Vector& sigma, Matrix right)
    {
      if (left.cols() != sigma.size() || right.cols() != sigma.size())
        throw std::invalid_argument("LowRankMatrix: factor shapes do not chain");
      LowRankMatrix x;
      x.nrows = left.rows();
      x.ncols = right.rows();
      x.left = std::move(left);
      x.core = Matrix(sigma.asDiagonal());
      x.right = std::move(right);
      x.canonical = true;
      return x;
    }

    //! rank-1 matrix u v^T brought to canonical form (rank 0 if either vector vanishes)
    static LowRankMatrix rank_one(const Vector& u, const Vector& v)
    {
      const double nu = u.norm(), nv = v.norm();
      if (nu == 0 || nv == 0)
        return zero(u.size(), v.size());
      LowRankMatrix x;
      x.nrows = u.size();
      x.ncols = v.size();
      x.left = u / nu;
      x.core = Matrix::Constant(1, 1, nu * nv);
      x.right = v / nv;
      x.canonical = true;
      return x;
    }
  };

  inline Matrix dense(const LowRankMatrix& x)
  {
    if (x.rank() == 0)
      return Matrix::Zero(x.nrows, x.ncols);
    return x.left * x.core * x.right.transpose();
  }

  //! scale by a scalar; canonical form survives only positive scaling
  inline LowRankMatrix scale(LowRankMatrix x, double s)
  {
    x.core *= s;
    if (s <= 0)
      x.canonical = false;
    return x;
  }

  //! Frobenius norm, valid under the orthonormal-factor invariant
  inline double frobenius_norm(const LowRankMatrix& x)
  {
    return x.core.norm();
  }

  //! <X, Y> = trace(X^T Y) evaluated in factored form, never densified
  inline double frobenius_inner(const LowRankMatrix& x, const LowRankMatrix& y)
  {
    if (x.nrows != y.nrows || x.ncols != y.ncols)
      throw std::invalid_argument("frobenius_inner: shape mismatch");
    if (x.rank() == 0 || y.rank() == 0)
      return 0.0;
    // trace((R_y^T R_x) C_x^T (L_x^T L_y) C_y), all small
    const Matrix ryx = y.right.transpose() * x.right;
    const Matrix lxy = x.left.transpose() * y.left;
    return ((ryx * x.core.transpose()) * (lxy * y.core)).trace();
  }
}
