// Desk-scale self-test: one quick deterministic invariant check per module,
// printing PASS/FAIL lines. Returns false if any check fails.
#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "lowrank/galerkin.hpp"
#include "lowrank/gmres.hpp"
#include "lowrank/integrators.hpp"
#include "lowrank/operator.hpp"
#include "lowrank/pde.hpp"
#include "lowrank/reference.hpp"
#include "lowrank/study.hpp"
#include "lowrank/sylvester.hpp"
#include "lowrank/truncation.hpp"

namespace lowrank
{
  namespace selftest_detail
  {
    inline Matrix gaussian(Index rows, Index cols, std::mt19937& rng)
    {
      std::normal_distribution<double> dist(0.0, 1.0);
      Matrix a(rows, cols);
      for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i)
          a(i, j) = dist(rng);
      return a;
    }

    inline Matrix orthonormal(Index rows, Index cols, std::mt19937& rng)
    {
      return detail::thin_qr(gaussian(rows, cols, rng)).first;
    }

    inline LowRankMatrix random_low_rank(Index m1, Index m2, Index r, std::mt19937& rng)
    {
      Vector sigma(r);
      for (Index i = 0; i < r; ++i)
        sigma[i] = std::pow(2.0, -double(i));
      return LowRankMatrix::from_canonical(orthonormal(m1, r, rng), sigma,
                                           orthonormal(m2, r, rng));
    }

    inline SparseMatrix dense_to_sparse(const Matrix& a)
    {
      std::vector<Triplet> e;
      for (Index j = 0; j < a.cols(); ++j)
        for (Index i = 0; i < a.rows(); ++i)
          if (a(i, j) != 0.0)
            e.emplace_back(i, j, a(i, j));
      return sparse_from_triplets(a.rows(), a.cols(), e);
    }
  }

  inline bool run_selftest(std::ostream& os)
  {
    using namespace selftest_detail;
    bool all_ok = true;
    const auto check = [&](const std::string& name, const std::function<double()>& worst,
                           double bound) {
      double w = 0.0;
      std::string error;
      try
      {
        w = worst();
      }
      catch (const std::exception& e)
      {
        error = e.what();
      }
      const bool ok = error.empty() && w <= bound;
      os << "[selftest] " << name << ": " << (ok ? "PASS" : "FAIL");
      if (!error.empty())
        os << " (exception: " << error << ")";
      else
        os << " (measure " << w << ", bound " << bound << ")";
      os << "\n";
      all_ok = all_ok && ok;
    };

    // truncated low-rank addition agrees with dense addition within the threshold
    check("low_rank_sum vs dense oracle", [] {
      std::mt19937 rng(101);
      double worst = 0.0;
      for (int inst = 0; inst < 8; ++inst)
      {
        std::vector<LowRankMatrix> terms;
        Matrix dense_sum = Matrix::Zero(26, 19);
        for (Index r : {Index(2), Index(3), Index(1)})
        {
          terms.push_back(random_low_rank(26, 19, r, rng));
          dense_sum += dense(terms.back());
        }
        const double eps = 1e-3;
        const LowRankMatrix s = low_rank_sum(terms, Tolerance(eps));
        worst = std::max(worst, (dense(s) - dense_sum).norm() / eps);
      }
      return worst;
    }, 1.0 + 1e-9);

    // SVD truncation obeys the tail-energy bound at every threshold
    check("truncation tail bound", [] {
      std::mt19937 rng(102);
      const LowRankMatrix x = random_low_rank(20, 15, 8, rng);
      double worst = 0.0;
      for (double eps : {1e-4, 1e-2, 0.5 * 1e-1})
      {
        const LowRankMatrix t = truncate_svd(x, Tolerance(eps));
        worst = std::max(worst, ((dense(x) - dense(t)).norm() - eps) / std::max(eps, 1e-30));
      }
      return worst;
    }, 1e-9);

    // projected operator action equals basis-sandwiched dense action
    check("projected operator oracle", [] {
      std::mt19937 rng(103);
      const Index m = 24, r = 5;
      std::vector<OperatorTerm> terms;
      for (int j = 0; j < 3; ++j)
        terms.push_back({dense_to_sparse(gaussian(m, m, rng)), dense_to_sparse(gaussian(m, m, rng))});
      const MatrixOperator op = make_operator(terms, m, m);
      const Matrix u = orthonormal(m, r, rng), v = orthonormal(m, r, rng);
      const ProjectedOperator pop = precompute_projected(op, u, v);
      const Matrix s = gaussian(r, r, rng);
      const Matrix via_dense = u.transpose() * apply_dense(op, u * s * v.transpose(), 0.0) * v;
      const Matrix via_proj = pop.apply_homogeneous(s);
      return (via_dense - via_proj).norm() / via_dense.norm();
    }, 1e-10);

    // GMRES meets its tolerance and reports the true residual
    check("gmres residual contract", [] {
      std::mt19937 rng(104);
      const Index n = 40;
      const Matrix a = Matrix::Identity(n, n) + 0.3 / std::sqrt(double(n)) * gaussian(n, n, rng);
      const Vector b = gaussian(n, 1, rng).col(0);
      LinearMap map{n, [&](const Vector& x, Vector& y) { y = a * x; }};
      const GmresResult res = gmres(map, b, Vector::Zero(n), SolveControls{});
      if (!res.converged)
        return 1.0;
      const double true_res = (a * res.x - b).norm();
      return std::max(true_res / (1e-10 * b.norm() + 1e-14),
                      std::abs(true_res - res.residual) / b.norm() * 1e6);
    }, 2.0);

    // Sylvester solve satisfies the equation by substitution
    check("sylvester substitution", [] {
      std::mt19937 rng(105);
      const Matrix p = gaussian(8, 8, rng) + 3.0 * Matrix::Identity(8, 8);
      const Matrix q = gaussian(6, 6, rng) + 3.0 * Matrix::Identity(6, 6);
      const Matrix c = gaussian(8, 6, rng);
      const Matrix x = sylvester_dense(p, q, c);
      return (p * x + x * q - c).norm() / c.norm();
    }, 1e-9);

    // fixed-point and GMRES core solvers agree on a diffusion projection
    check("galerkin cross-solver agreement", [] {
      std::mt19937 rng(106);
      const ProblemSpec spec = catalog("anisotropic_diffusion", 40);
      const MatrixOperator op = discretize(spec);
      const Matrix u = orthonormal(40, 5, rng), v = orthonormal(40, 5, rng);
      const ProjectedOperator pop = precompute_projected(op, u, v);
      const Matrix rhs = gaussian(5, 5, rng);
      const GalerkinResult g1 = galerkin_solve_gmres(pop, rhs, 0.002, SolveControls{});
      const GalerkinResult g2 = galerkin_solve_fixed_point(pop, rhs, 0.002, SolveControls{});
      if (!g1.converged || !g2.converged || !g2.used_fixed_point)
        return 1.0;
      return (g1.sigma - g2.sigma).norm() / rhs.norm() / 1e-8;
    }, 1.0);

    // implicit steppers reproduce the exact eigenvector solution
    check("stepper eigenvector identity", [] {
      std::mt19937 rng(107);
      const Index m = 16;
      const SparseMatrix lap = stencil_flux(m, 2.0 / (m + 1), [](double) { return 1.0; });
      const Matrix lap_dense(lap);
      Eigen::SelfAdjointEigenSolver<Matrix> es(lap_dense);
      const Vector u = es.eigenvectors().col(m - 1);
      const double lambda = es.eigenvalues()[m - 1];
      const MatrixOperator op = make_operator({{lap, sparse_identity(m)}}, m, m);
      const Vector v = gaussian(m, 1, rng).col(0);
      const LowRankMatrix x0 = LowRankMatrix::rank_one(u, v);
      const double dt = 0.05;
      const Matrix exact = dense(x0) / (1.0 - dt * lambda);
      StepControls ctl;
      ctl.dt = dt;
      double worst = 0.0;
      worst = std::max(worst, (dense(bug_step(op, x0, 0.0, ctl).first) - exact).norm());
      worst = std::max(worst, (dense(merge_step(op, x0, 0.0, ctl).first) - exact).norm());
      worst = std::max(worst, (dense(merge_adapt_step(op, x0, 0.0, ctl).first) - exact).norm());
      return worst / exact.norm();
    }, 1e-9);

    // Merge-adapt fallback accounting: two factor solves per fallback step
    check("merge_adapt solve accounting", [] {
      const ProblemSpec spec = catalog("anisotropic_diffusion", 30);
      const MatrixOperator op = discretize(spec);
      StepControls ctl;
      ctl.eps2 = Tolerance(1e-6);
      const RunTrace trace = evolve(Method::merge_adapt, op, initial_low_rank(spec), 0.0, 0.1,
                                    10, ctl);
      Index fallbacks = 0, solves = 0;
      for (const StepReport& rep : trace.reports)
      {
        if (!rep.fallback_used)
          return 1.0;
        fallbacks += *rep.fallback_used ? 1 : 0;
        solves += rep.prediction_solves;
      }
      return double(std::abs(solves - 2 * fallbacks));
    }, 0.0);

    // centered stencil is exact on the parabola vanishing at the boundary
    check("stencil parabola exactness", [] {
      const Index m = 31;
      const double h = 2.0 / (m + 1);
      const Vector x = grid_nodes(m);
      const Vector f = (1.0 - x.array().square()).matrix();
      const Vector df = stencil_d0(m, h) * f;
      return (df + 2.0 * x).norm();
    }, 1e-12);

    // advection-only operator is exactly antisymmetric in the Frobenius pairing
    check("rotation antisymmetry", [] {
      std::mt19937 rng(108);
      const MatrixOperator op = discretize(catalog("solid_body_rotation", 20));
      double worst = 0.0;
      for (int inst = 0; inst < 20; ++inst)
      {
        const Matrix x = gaussian(20, 20, rng);
        const double inner = (apply_dense(op, x, 0.0).transpose() * x).trace();
        worst = std::max(worst, std::abs(inner) / x.squaredNorm());
      }
      return worst;
    }, 1e-10);

    // dense reference reproduces the scalar exponential decay
    check("reference exponential decay", [] {
      const Index m = 10;
      const MatrixOperator op = make_operator({{sparse_scaled(sparse_identity(m), -1.0),
                                                sparse_identity(m)}},
                                              m, m);
      std::mt19937 rng(109);
      const Matrix x0 = gaussian(m, m, rng);
      const std::vector<Matrix> out = reference_solution(op, x0, 0.0, {1.0});
      return (out[0] - std::exp(-1.0) * x0).norm() / x0.norm();
    }, 1e-8);

    // study results are bitwise deterministic across reruns
    check("study determinism", [] {
      RunConfig cfg;
      cfg.problem = "solid_body_rotation";
      cfg.m = 24;
      cfg.n_T = {4, 8};
      cfg.methods = {Method::merge};
      const StudyResult r1 = run_study(cfg);
      const StudyResult r2 = run_study(cfg);
      double worst = 0.0;
      for (std::size_t i = 0; i < r1.cells.size(); ++i)
      {
        if (r1.cells[i].error != r2.cells[i].error)
          worst = 1.0;
        if (r1.cells[i].rate.has_value() != r2.cells[i].rate.has_value())
          worst = 1.0;
        if (r1.cells[i].rate && *r1.cells[i].rate != *r2.cells[i].rate)
          worst = 1.0;
      }
      return worst + double(r1.cells.size() != 2);
    }, 0.0);

    os << "[selftest] " << (all_ok ? "all checks passed" : "FAILURES detected") << "\n";
    return all_ok;
  }
}
