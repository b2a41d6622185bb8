// Matrix differential operator F(X, t) = sum_j A_j X B_j^T + G(t) kept in
// factored form, with factored and basis-projected application.
#pragma once

#include <Eigen/QR>
#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lowrank/low_rank_matrix.hpp"
#include "lowrank/sparse.hpp"
#include "lowrank/truncation.hpp"
#include "lowrank/types.hpp"

namespace lowrank
{
  struct OperatorTerm
  {
    SparseMatrix A;   // acts on rows (left),  nrows x nrows
    SparseMatrix B;   // acts on columns (right), ncols x ncols; term is A X B^T
  };

  using SourceFn = std::function<LowRankMatrix(double)>;

  struct MatrixOperator
  {
    Index nrows = 0;
    Index ncols = 0;
    std::vector<OperatorTerm> terms;
    SourceFn source;   // empty function means G == 0

    // term indices whose A (resp. B) is the stiff flux factor, when present;
    // consumed by the fixed-point Galerkin solver
    std::optional<std::size_t> stiff_row_term;
    std::optional<std::size_t> stiff_col_term;

    Index separation_rank() const { return static_cast<Index>(terms.size()); }
    bool has_source() const { return static_cast<bool>(source); }
  };

  inline MatrixOperator make_operator(std::vector<OperatorTerm> terms, Index nrows, Index ncols,
                                      SourceFn source = nullptr)
  {
    for (const auto& t : terms)
      if (t.A.rows() != nrows || t.A.cols() != nrows || t.B.rows() != ncols || t.B.cols() != ncols)
        throw std::invalid_argument("make_operator: term dimensions do not match state shape");
    MatrixOperator op;
    op.nrows = nrows;
    op.ncols = ncols;
    op.terms = std::move(terms);
    op.source = std::move(source);
    return op;
  }

  //! dense action F(X, t); for references and small dense states only
  inline Matrix apply_dense(const MatrixOperator& op, const Matrix& x, double t)
  {
    Matrix y = Matrix::Zero(op.nrows, op.ncols);
    for (const auto& term : op.terms)
      y.noalias() += term.A * x * term.B.transpose();
    if (op.has_source())
      y += dense(op.source(t));
    return y;
  }

  namespace detail
  {
    //! thin Householder QR; Q keeps exactly a.cols() orthonormal columns
    inline std::pair<Matrix, Matrix> thin_qr(const Matrix& a)
    {
      const Index r = a.cols();
      Eigen::HouseholderQR<Matrix> qr(a);
      Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), r);
      Matrix rr = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
      return {std::move(q), std::move(rr)};
    }
  }

  //! F(X, t) as a list of factored terms (one per operator term, plus the
  //! source), each re-orthonormalized to honor the factor invariant
  inline std::vector<LowRankMatrix> apply(const MatrixOperator& op, const LowRankMatrix& x, double t)
  {
    if (x.nrows != op.nrows || x.ncols != op.ncols)
      throw std::invalid_argument("apply: state shape mismatch");
    std::vector<LowRankMatrix> out;
    out.reserve(op.terms.size() + 1);
    for (const auto& term : op.terms)
    {
      if (x.rank() == 0)
      {
        out.push_back(LowRankMatrix::zero(op.nrows, op.ncols));
        continue;
      }
      const Matrix au = term.A * x.left;
      const Matrix bv = term.B * x.right;
      auto [qa, ra] = detail::thin_qr(au);
      auto [qb, rb] = detail::thin_qr(bv);
      out.push_back(LowRankMatrix::from_factors(std::move(qa), ra * x.core * rb.transpose(),
                                                std::move(qb)));
    }
    if (op.has_source())
      out.push_back(op.source(t));
    return out;
  }

  //! canonical truncation of F(X, t) at threshold eps
  inline LowRankMatrix apply_truncated(const MatrixOperator& op, const LowRankMatrix& x, double t,
                                       Tolerance eps)
  {
    return low_rank_sum(apply(op, x, t), eps, op.nrows, op.ncols);
  }

  //! operator compressed onto fixed orthonormal bases (row_basis, col_basis):
  //! caches the small projected factors of every term
  struct ProjectedOperator
  {
    Matrix row_basis;   // m1 x s1
    Matrix col_basis;   // m2 x s2
    std::vector<std::pair<Matrix, Matrix>> terms;   // (U~^T A_j U~, V~^T B_j^T V~)
    SourceFn source;
    std::optional<std::size_t> stiff_row_term;
    std::optional<std::size_t> stiff_col_term;

    Index rows() const { return row_basis.cols(); }
    Index cols() const { return col_basis.cols(); }

    //! sum_j (U~^T A_j U~) S (V~^T B_j^T V~), the linear part of the projected operator
    Matrix apply_homogeneous(const Matrix& s) const
    {
      Matrix y = Matrix::Zero(s.rows(), s.cols());
      for (const auto& [ahat, chat] : terms)
        y.noalias() += ahat * s * chat;
      return y;
    }

    //! U~^T G(t) V~ via the factored source, zero when no source is attached
    Matrix project_source(double t) const
    {
      if (!source)
        return Matrix::Zero(rows(), cols());
      const LowRankMatrix g = source(t);
      if (g.rank() == 0)
        return Matrix::Zero(rows(), cols());
      return (row_basis.transpose() * g.left) * g.core * (g.right.transpose() * col_basis);
    }
  };

  inline ProjectedOperator precompute_projected(const MatrixOperator& op, const Matrix& row_basis,
                                                const Matrix& col_basis)
  {
    if (row_basis.rows() != op.nrows || col_basis.rows() != op.ncols)
      throw std::invalid_argument("precompute_projected: basis shape mismatch");
    ProjectedOperator pop;
    pop.row_basis = row_basis;
    pop.col_basis = col_basis;
    pop.terms.reserve(op.terms.size());
    for (const auto& term : op.terms)
    {
      const Matrix au = term.A * row_basis;           // m1 x s1
      const Matrix bv = term.B * col_basis;           // m2 x s2
      pop.terms.emplace_back(row_basis.transpose() * au, bv.transpose() * col_basis);
    }
    pop.source = op.source;
    pop.stiff_row_term = op.stiff_row_term;
    pop.stiff_col_term = op.stiff_col_term;
    return pop;
  }

  //! one-shot projection U~^T F(U~ S V~^T, t) V~ without building the m1 x m2 state
  inline Matrix projected_apply(const MatrixOperator& op, const Matrix& row_basis,
                                const Matrix& col_basis, const Matrix& s, double t)
  {
    ProjectedOperator pop = precompute_projected(op, row_basis, col_basis);
    return pop.apply_homogeneous(s) + pop.project_source(t);
  }
}
