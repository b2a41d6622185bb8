// Compressed row-storage sparse matrix and small builders.
#pragma once

#include <Eigen/SparseCore>
#include <vector>

#include "lowrank/types.hpp"

namespace lowrank
{
  // row-major Eigen sparse storage is exactly CSR: row offsets, column indices, values
  using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
  using Triplet = Eigen::Triplet<double>;

  inline SparseMatrix sparse_from_triplets(Index rows, Index cols, const std::vector<Triplet>& entries)
  {
    SparseMatrix a(rows, cols);
    a.setFromTriplets(entries.begin(), entries.end());
    a.makeCompressed();
    return a;
  }

  inline SparseMatrix sparse_identity(Index n)
  {
    SparseMatrix a(n, n);
    a.setIdentity();
    return a;
  }

  inline SparseMatrix sparse_diagonal(const Vector& d)
  {
    std::vector<Triplet> entries;
    entries.reserve(d.size());
    for (Index i = 0; i < d.size(); ++i)
      entries.emplace_back(i, i, d[i]);
    return sparse_from_triplets(d.size(), d.size(), entries);
  }

  inline SparseMatrix sparse_scaled(const SparseMatrix& a, double s)
  {
    SparseMatrix out = a;
    out *= s;
    return out;
  }
}
