// High-accuracy dense reference solver (classical RK4 with a power-iteration
// stability bound and Richardson-verified temporal accuracy) plus a small
// binary on-disk cache for reference snapshots.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lowrank/operator.hpp"
#include "lowrank/pde.hpp"
#include "lowrank/types.hpp"

namespace lowrank
{
  namespace detail
  {
    constexpr double kReferenceTol = 1e-9;
    constexpr double kRk4StabilityInterval = 2.785;
    constexpr double kStabilitySafety = 0.5;
    constexpr Index kReferenceSizeGuard = 160000;

    //! spectral radius estimate of the homogeneous part by power iteration
    inline double spectral_radius_estimate(const MatrixOperator& op)
    {
      std::mt19937 rng(20240531u);
      std::normal_distribution<double> gauss(0.0, 1.0);
      Matrix v(op.nrows, op.ncols);
      for (Index j = 0; j < v.cols(); ++j)
        for (Index i = 0; i < v.rows(); ++i)
          v(i, j) = gauss(rng);
      v /= v.norm();
      double rho = 0.0;
      for (int it = 0; it < 60; ++it)
      {
        Matrix w = Matrix::Zero(op.nrows, op.ncols);
        for (const auto& term : op.terms)
          w += term.A * (v * term.B.transpose());
        const double nw = w.norm();
        if (nw == 0.0)
          return 0.0;
        const double prev = rho;
        rho = nw;
        v = w / nw;
        if (it > 4 && std::abs(rho - prev) <= 1e-3 * rho)
          break;
      }
      return rho;
    }

    inline Matrix dense_rhs(const MatrixOperator& op, const Matrix& x, double t)
    {
      Matrix f = Matrix::Zero(op.nrows, op.ncols);
      for (const auto& term : op.terms)
        f += term.A * (x * term.B.transpose());
      if (op.source)
        f += dense(op.source(t));
      return f;
    }

    //! march one output interval with n equal RK4 steps, in place
    inline void rk4_march(const MatrixOperator& op, Matrix& x, double t0, double t1, Index n,
                          double blowup_norm)
    {
      const double dt = (t1 - t0) / n;
      for (Index k = 0; k < n; ++k)
      {
        const double t = t0 + k * dt;
        const Matrix k1 = dense_rhs(op, x, t);
        const Matrix k2 = dense_rhs(op, x + (0.5 * dt) * k1, t + 0.5 * dt);
        const Matrix k3 = dense_rhs(op, x + (0.5 * dt) * k2, t + 0.5 * dt);
        const Matrix k4 = dense_rhs(op, x + dt * k3, t + dt);
        x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!(x.norm() <= blowup_norm))
          throw SolveFailure("reference_solution: instability detected (norm growth beyond 1e10)",
                             x.norm(), static_cast<int>(k));
      }
    }
  }

  //! Dense RK4 snapshots of dX/dt = sum_j A_j X B_j^T + G(t) at the requested
  //! output times (strictly increasing, all >= t0). The substep count per
  //! interval satisfies the explicit stability bound with safety factor 0.5
  //! and is doubled until the whole trajectory is Richardson-consistent to
  //! 1e-9 relative.
  inline std::vector<Matrix> reference_solution(const MatrixOperator& op, const Matrix& x0,
                                                double t0, const std::vector<double>& outputs,
                                                Index min_substeps_per_output = 1)
  {
    if (op.nrows * op.ncols > detail::kReferenceSizeGuard)
      throw std::invalid_argument("reference_solution: problem exceeds the dense size guard");
    if (x0.rows() != op.nrows || x0.cols() != op.ncols)
      throw std::invalid_argument("reference_solution: initial state shape mismatch");
    if (outputs.empty())
      return {};
    double prev = t0;
    for (double t : outputs)
    {
      if (!(t >= prev))
        throw std::invalid_argument("reference_solution: output times must be nondecreasing and >= t0");
      prev = t;
    }

    const double rho = detail::spectral_radius_estimate(op);
    const double dt_stab = (rho > 0.0)
                               ? detail::kStabilitySafety * detail::kRk4StabilityInterval / rho
                               : std::numeric_limits<double>::infinity();
    const double blowup_norm = 1e10 * std::max(x0.norm(), 1e-300);

    std::vector<Index> base(outputs.size());
    {
      double tp = t0;
      for (std::size_t i = 0; i < outputs.size(); ++i)
      {
        const double len = outputs[i] - tp;
        Index n = std::max<Index>(min_substeps_per_output, 1);
        if (len > 0.0 && std::isfinite(dt_stab))
          n = std::max<Index>(n, static_cast<Index>(std::ceil(len / dt_stab)));
        base[i] = n;
        tp = outputs[i];
      }
    }

    const auto march_all = [&](Index mult) {
      std::vector<Matrix> snaps;
      snaps.reserve(outputs.size());
      Matrix x = x0;
      double tp = t0;
      for (std::size_t i = 0; i < outputs.size(); ++i)
      {
        if (outputs[i] > tp)
          detail::rk4_march(op, x, tp, outputs[i], base[i] * mult, blowup_norm);
        snaps.push_back(x);
        tp = outputs[i];
      }
      return snaps;
    };

    std::vector<Matrix> coarse = march_all(1);
    for (Index mult = 2; mult <= (Index(1) << 22); mult *= 2)
    {
      std::vector<Matrix> fine = march_all(mult);
      double worst = 0.0;
      for (std::size_t i = 0; i < outputs.size(); ++i)
      {
        const double scale = std::max(fine[i].norm(), 1e-300);
        worst = std::max(worst, (fine[i] - coarse[i]).norm() / scale);
      }
      if (worst <= detail::kReferenceTol)
        return fine;
      coarse = std::move(fine);
    }
    throw SolveFailure("reference_solution: Richardson doubling failed to reach tolerance",
                       detail::kReferenceTol, 22);
  }

  //! catalog-problem convenience wrapper starting from the separable initial datum at t = 0
  inline std::vector<Matrix> reference_solution(const ProblemSpec& spec,
                                                Index min_substeps_per_output,
                                                const std::vector<double>& outputs)
  {
    const MatrixOperator op = discretize(spec);
    return reference_solution(op, dense(initial_low_rank(spec)), 0.0, outputs,
                              min_substeps_per_output);
  }

  // Cache file layout: magic "LRREF1" (6 bytes), uint32 m1, uint32 m2 (little
  // endian), float64 time, then m1*m2 float64 values in column-major order.
  namespace detail
  {
    constexpr char kCacheMagic[6] = {'L', 'R', 'R', 'E', 'F', '1'};
  }

  inline void write_reference_file(const std::filesystem::path& path, double time, const Matrix& x)
  {
    namespace fs = std::filesystem;
    if (path.has_parent_path())
      fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(std::random_device{}());
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out)
        throw std::runtime_error("write_reference_file: cannot open " + tmp.string());
      const std::uint32_t m1 = static_cast<std::uint32_t>(x.rows());
      const std::uint32_t m2 = static_cast<std::uint32_t>(x.cols());
      out.write(detail::kCacheMagic, sizeof(detail::kCacheMagic));
      out.write(reinterpret_cast<const char*>(&m1), sizeof(m1));
      out.write(reinterpret_cast<const char*>(&m2), sizeof(m2));
      out.write(reinterpret_cast<const char*>(&time), sizeof(time));
      out.write(reinterpret_cast<const char*>(x.data()),
                static_cast<std::streamsize>(sizeof(double) * x.size()));
      if (!out)
        throw std::runtime_error("write_reference_file: short write to " + tmp.string());
    }
    fs::rename(tmp, path);
  }

  struct ReferenceFile
  {
    double time = 0.0;
    Matrix data;
  };

  inline ReferenceFile read_reference_file(const std::filesystem::path& path)
  {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw std::runtime_error("read_reference_file: cannot open " + path.string());
    char magic[6];
    std::uint32_t m1 = 0, m2 = 0;
    ReferenceFile rf;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&m1), sizeof(m1));
    in.read(reinterpret_cast<char*>(&m2), sizeof(m2));
    in.read(reinterpret_cast<char*>(&rf.time), sizeof(rf.time));
    if (!in || !std::equal(magic, magic + 6, detail::kCacheMagic))
      throw std::runtime_error("read_reference_file: bad header in " + path.string());
    rf.data.resize(m1, m2);
    in.read(reinterpret_cast<char*>(rf.data.data()),
            static_cast<std::streamsize>(sizeof(double) * rf.data.size()));
    if (!in)
      throw std::runtime_error("read_reference_file: truncated data in " + path.string());
    return rf;
  }

  inline std::filesystem::path reference_cache_path(const std::filesystem::path& dir,
                                                    const std::string& problem, Index m1, Index m2,
                                                    double time, double tol = detail::kReferenceTol)
  {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "_m%lldx%lld_t%.17g_tol%.3g.lrref",
                  static_cast<long long>(m1), static_cast<long long>(m2), time, tol);
    return dir / (problem + buf);
  }

  //! Load or compute reference snapshots for a catalog problem, sharing one
  //! RK4 march across all requested output times. Any cache miss or header
  //! mismatch recomputes the whole trajectory and rewrites every snapshot.
  inline std::vector<Matrix> cached_references(const std::filesystem::path& cache_dir,
                                               const ProblemSpec& spec,
                                               const std::vector<double>& outputs,
                                               Index min_substeps_per_output = 1)
  {
    namespace fs = std::filesystem;
    std::vector<Matrix> snaps(outputs.size());
    const bool use_cache = !cache_dir.empty();
    bool all_hit = use_cache;
    for (std::size_t i = 0; i < outputs.size() && all_hit; ++i)
    {
      const fs::path p = reference_cache_path(cache_dir, spec.name, spec.m1, spec.m2, outputs[i]);
      std::error_code ec;
      if (!fs::exists(p, ec))
      {
        all_hit = false;
        break;
      }
      const ReferenceFile rf = read_reference_file(p);
      if (rf.data.rows() != spec.m1 || rf.data.cols() != spec.m2 ||
          std::abs(rf.time - outputs[i]) > 1e-12 * std::max(1.0, std::abs(outputs[i])))
        throw std::runtime_error("cached_references: header mismatch in " + p.string());
      snaps[i] = rf.data;
    }
    if (all_hit && !outputs.empty())
      return snaps;

    snaps = reference_solution(spec, min_substeps_per_output, outputs);
    if (use_cache)
      for (std::size_t i = 0; i < outputs.size(); ++i)
        write_reference_file(reference_cache_path(cache_dir, spec.name, spec.m1, spec.m2,
                                                  outputs[i]),
                             outputs[i], snaps[i]);
    return snaps;
  }
}
