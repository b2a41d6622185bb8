// Dense Sylvester solver P X + X Q = C, Bartels-Stewart style via complex
// Schur forms, with reusable factorization.
#pragma once

#include <Eigen/Eigenvalues>
#include <complex>
#include <stdexcept>

#include "lowrank/types.hpp"

namespace lowrank
{
  //! factorization of the pair (P, Q) for repeated Sylvester solves
  class SylvesterSolver
  {
    public:
      using ComplexMatrix = Eigen::MatrixXcd;

      SylvesterSolver(const Matrix& p, const Matrix& q)
      {
        if (p.rows() != p.cols() || q.rows() != q.cols())
          throw std::invalid_argument("SylvesterSolver: square blocks required");
        Eigen::ComplexSchur<ComplexMatrix> sp(p.cast<std::complex<double>>(), true);
        Eigen::ComplexSchur<ComplexMatrix> sq(q.cast<std::complex<double>>(), true);
        if (sp.info() != Eigen::Success || sq.info() != Eigen::Success)
          throw SolveFailure("SylvesterSolver: Schur decomposition failed", 0, 0);
        tp_ = sp.matrixT();
        up_ = sp.matrixU();
        tq_ = sq.matrixT();
        uq_ = sq.matrixU();

        // singular pencil when some lambda_i(P) + lambda_k(Q) collides with zero
        double scale = 1.0;
        for (Index i = 0; i < tp_.rows(); ++i)
          scale = std::max(scale, std::abs(tp_(i, i)));
        for (Index k = 0; k < tq_.rows(); ++k)
          scale = std::max(scale, std::abs(tq_(k, k)));
        for (Index i = 0; i < tp_.rows(); ++i)
          for (Index k = 0; k < tq_.rows(); ++k)
            if (std::abs(tp_(i, i) + tq_(k, k)) <= 1e-12 * scale)
              throw SolveFailure("SylvesterSolver: eigenvalue collision, singular pencil", 0, 0);
      }

      Matrix solve(const Matrix& c) const
      {
        if (c.rows() != tp_.rows() || c.cols() != tq_.rows())
          throw std::invalid_argument("SylvesterSolver: right-hand side shape mismatch");
        const Index p = tp_.rows(), q = tq_.rows();
        ComplexMatrix ct = up_.adjoint() * c.cast<std::complex<double>>() * uq_;
        ComplexMatrix y(p, q);
        for (Index k = 0; k < q; ++k)
        {
          Eigen::VectorXcd rhs = ct.col(k);
          for (Index j = 0; j < k; ++j)
            rhs -= tq_(j, k) * y.col(j);
          // back-substitute (T_P + T_Q(k,k) I) y_k = rhs
          const std::complex<double> shift = tq_(k, k);
          for (Index i = p - 1; i >= 0; --i)
          {
            std::complex<double> s = rhs[i];
            for (Index j = i + 1; j < p; ++j)
              s -= tp_(i, j) * y(j, k);
            y(i, k) = s / (tp_(i, i) + shift);
          }
        }
        return (up_ * y * uq_.adjoint()).real();
      }

    private:
      ComplexMatrix tp_, tq_, up_, uq_;
  };

  //! one-shot solve of P X + X Q = C with post-hoc residual verification
  inline Matrix sylvester_dense(const Matrix& p, const Matrix& q, const Matrix& c)
  {
    SylvesterSolver solver(p, q);
    Matrix x = solver.solve(c);
    const double rnorm = (p * x + x * q - c).norm();
    if (rnorm > 1e-10 * std::max(c.norm(), 1e-300))
      throw SolveFailure("sylvester_dense: residual above tolerance", rnorm, 0);
    return x;
  }
}
