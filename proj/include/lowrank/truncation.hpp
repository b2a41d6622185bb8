// Truncated SVD with the tail-energy rule, the truncated sum of factored
// matrices, and the orthonormal basis union.
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "lowrank/low_rank_matrix.hpp"
#include "lowrank/types.hpp"

namespace lowrank
{
  //! nonnegative Frobenius truncation threshold; 0 keeps everything above the
  //! numerical floor (relative 1e-14, absolute 1e-30 for the zero matrix)
  struct Tolerance
  {
    double value = 0;

    Tolerance() = default;
    Tolerance(double v) : value(v)
    {
      if (!(v >= 0))
        throw std::invalid_argument("Tolerance: negative or NaN threshold");
    }

    static Tolerance exact() { return Tolerance(0); }
  };

  namespace detail
  {
    constexpr double kSigmaFloorRel = 1e-14;
    constexpr double kSigmaFloorAbs = 1e-30;
    constexpr double kQrDropRel = 1e-12;

    //! Smallest retained rank with tail energy (sum_{j>s} sigma_j^2)^(1/2) <= eps,
    //! after discarding values below the numerical floor. scale_hint widens the
    //! floor reference for quantities formed by cancellation-prone sums, so that
    //! exact cancellation collapses to rank 0 instead of keeping noise rank.
    inline Index truncation_rank(const Vector& sigma, double eps, double scale_hint = 0)
    {
      Index n = sigma.size();
      const double top = std::max((n > 0) ? sigma[0] : 0.0, scale_hint);
      const double floor = (top > 0) ? kSigmaFloorRel * top : kSigmaFloorAbs;
      while (n > 0 && sigma[n - 1] <= floor)
        --n;
      double tail2 = 0;
      Index keep = n;
      for (Index j = n - 1; j >= 0; --j)
      {
        tail2 += sigma[j] * sigma[j];
        if (std::sqrt(tail2) <= eps)
          keep = j;
        else
          break;
      }
      return keep;
    }
  }

  //! Truncate a factored matrix (orthonormal side factors assumed) to the
  //! smallest rank whose discarded tail has Frobenius norm <= eps.value.
  //! max_rank, if nonnegative, additionally caps the retained rank.
  inline LowRankMatrix truncate_svd(const LowRankMatrix& x, Tolerance eps, Index max_rank = -1)
  {
    if (x.rank() == 0)
      return LowRankMatrix::zero(x.nrows, x.ncols);

    Eigen::BDCSVD<Matrix> svd(x.core, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sigma = svd.singularValues();
    Index keep = detail::truncation_rank(sigma, eps.value);
    if (max_rank >= 0)
      keep = std::min(keep, max_rank);
    if (keep == 0)
      return LowRankMatrix::zero(x.nrows, x.ncols);

    LowRankMatrix out;
    out.nrows = x.nrows;
    out.ncols = x.ncols;
    out.left.noalias() = x.left * svd.matrixU().leftCols(keep);
    out.core = Matrix(sigma.head(keep).asDiagonal());
    out.right.noalias() = x.right * svd.matrixV().leftCols(keep);
    out.canonical = true;
    return out;
  }

  //! canonical factorization of a dense matrix, truncated by the same tail rule
  inline LowRankMatrix low_rank_from_dense(const Matrix& a, Tolerance eps = Tolerance::exact(),
                                           Index max_rank = -1)
  {
    if (a.rows() == 0 || a.cols() == 0)
      return LowRankMatrix::zero(a.rows(), a.cols());
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sigma = svd.singularValues();
    Index keep = detail::truncation_rank(sigma, eps.value);
    if (max_rank >= 0)
      keep = std::min(keep, max_rank);
    if (keep == 0)
      return LowRankMatrix::zero(a.rows(), a.cols());
    return LowRankMatrix::from_canonical(svd.matrixU().leftCols(keep), sigma.head(keep),
                                         svd.matrixV().leftCols(keep));
  }

  namespace detail
  {
    struct PivotedQ
    {
      Matrix q;   // m x kept, orthonormal
      Matrix t;   // kept x n, with input = q * t
    };

    //! column-pivoted QR, rows of R dropped once |R_ii| <= kQrDropRel * |R_11|
    inline PivotedQ pivoted_qr(const Matrix& a)
    {
      PivotedQ out;
      if (a.cols() == 0)
      {
        out.q.resize(a.rows(), 0);
        out.t.resize(0, a.cols());
        return out;
      }
      Eigen::ColPivHouseholderQR<Matrix> qr(a);
      const Index qmax = std::min(a.rows(), a.cols());
      const Matrix r = qr.matrixQR().topRows(qmax).triangularView<Eigen::Upper>();
      const double lead = std::abs(r(0, 0));
      Index kept = 0;
      while (kept < qmax && std::abs(r(kept, kept)) > kQrDropRel * lead && lead > 0)
        ++kept;
      out.q.noalias() = qr.householderQ() * Matrix::Identity(a.rows(), kept);
      // input * P = Q R  =>  input = Q (R P^T)
      out.t.noalias() = r.topRows(kept) * qr.colsPermutation().transpose();
      return out;
    }
  }

  //! Truncated sum of factored matrices: concatenate factors, orthogonalize the
  //! stacked side factors by column-pivoted QR, take the SVD of the rotated core
  //! and truncate it by the tail rule. The singular values of the rotated core
  //! are those of the sum itself, so the threshold acts on the final values.
  //! Terms may be non-canonical. An empty list needs explicit output dimensions.
  inline LowRankMatrix low_rank_sum(const std::vector<LowRankMatrix>& terms, Tolerance eps,
                                    Index nrows = -1, Index ncols = -1, Index max_rank = -1)
  {
    Index m1 = nrows, m2 = ncols;
    Index rtot = 0, ktot = 0;
    for (const auto& t : terms)
    {
      if (m1 < 0)
      {
        m1 = t.nrows;
        m2 = t.ncols;
      }
      if (t.nrows != m1 || t.ncols != m2)
        throw std::invalid_argument("low_rank_sum: dimension mismatch among terms");
      rtot += t.left.cols();
      ktot += t.right.cols();
    }
    if (m1 < 0)
      throw std::invalid_argument("low_rank_sum: empty list without explicit dimensions");
    if (rtot == 0 || ktot == 0)
      return LowRankMatrix::zero(m1, m2);

    Matrix ustack(m1, rtot), vstack(m2, ktot);
    Matrix coreblk = Matrix::Zero(rtot, ktot);
    Index ro = 0, ko = 0;
    for (const auto& t : terms)
    {
      const Index r = t.left.cols(), k = t.right.cols();
      if (r == 0 || k == 0)
        continue;
      ustack.middleCols(ro, r) = t.left;
      vstack.middleCols(ko, k) = t.right;
      coreblk.block(ro, ko, r, k) = t.core;
      ro += r;
      ko += k;
    }
    ustack.conservativeResize(m1, ro);
    vstack.conservativeResize(m2, ko);

    const auto qu = detail::pivoted_qr(ustack);
    const auto qv = detail::pivoted_qr(vstack);
    if (qu.q.cols() == 0 || qv.q.cols() == 0)
      return LowRankMatrix::zero(m1, m2);

    const Matrix small = qu.t * coreblk.topLeftCorner(ro, ko) * qv.t.transpose();
    Eigen::BDCSVD<Matrix> svd(small, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sigma = svd.singularValues();
    // floor anchored to the pre-cancellation scale of the stacked cores
    Index keep = detail::truncation_rank(sigma, eps.value,
                                         coreblk.topLeftCorner(ro, ko).norm());
    if (max_rank >= 0)
      keep = std::min(keep, max_rank);
    if (keep == 0)
      return LowRankMatrix::zero(m1, m2);

    LowRankMatrix out;
    out.nrows = m1;
    out.ncols = m2;
    out.left.noalias() = qu.q * svd.matrixU().leftCols(keep);
    out.core = Matrix(sigma.head(keep).asDiagonal());
    out.right.noalias() = qv.q * svd.matrixV().leftCols(keep);
    out.canonical = true;
    return out;
  }

  //! Orthonormal basis for the union of the column spaces of the given blocks,
  //! via column-pivoted QR with the relative diagonal drop rule. Block order is
  //! preserved in the concatenation (pivoting still reorders internally).
  inline Matrix orthonormal_union(const std::vector<const Matrix*>& blocks)
  {
    Index m = -1, cols = 0;
    for (const Matrix* b : blocks)
    {
      if (m < 0)
        m = b->rows();
      if (b->rows() != m)
        throw std::invalid_argument("orthonormal_union: row-count mismatch");
      cols += b->cols();
    }
    if (m < 0)
      throw std::invalid_argument("orthonormal_union: no blocks");
    Matrix stack(m, cols);
    Index off = 0;
    for (const Matrix* b : blocks)
    {
      stack.middleCols(off, b->cols()) = *b;
      off += b->cols();
    }
    return detail::pivoted_qr(stack).q;
  }
}
