// Convergence-study driver: runs selected integrators on a catalog problem
// over a ladder of step counts, measures relative errors against a cached
// dense reference (or a finer-step low-rank self-reference past the dense
// guard), and serializes results as CSV and formatted text.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lowrank/integrators.hpp"
#include "lowrank/pde.hpp"
#include "lowrank/reference.hpp"
#include "lowrank/types.hpp"

namespace lowrank
{
  enum class Eps1Policy
  {
    zero,  // exact prediction truncation
    dt     // threshold proportional to the step size
  };

  struct Eps2Policy
  {
    bool dt_squared = true;
    double fixed_value = 0;

    static Eps2Policy dt2() { return {}; }
    static Eps2Policy fixed(double v) { return {false, v}; }
    double value(double dt) const { return dt_squared ? dt * dt : fixed_value; }
  };

  inline std::string method_label(Method m)
  {
    switch (m)
    {
      case Method::step_truncation: return "ST";
      case Method::bug: return "BUG";
      case Method::merge: return "M";
      case Method::merge_adapt: return "MA";
      case Method::implicit_euler: return "IE";
    }
    return "?";
  }

  inline std::optional<Method> parse_method(const std::string& s)
  {
    if (s == "ST")
      return Method::step_truncation;
    if (s == "BUG")
      return Method::bug;
    if (s == "M")
      return Method::merge;
    if (s == "MA")
      return Method::merge_adapt;
    if (s == "IE")
      return Method::implicit_euler;
    return std::nullopt;
  }

  struct RunConfig
  {
    std::string problem;
    Index m = 99;
    std::vector<Index> n_T;
    std::vector<Method> methods;
    Eps1Policy eps1_policy = Eps1Policy::zero;
    Eps2Policy eps2_policy = Eps2Policy::dt2();
    GalerkinStrategy galerkin_strategy = GalerkinStrategy::gmres;
    std::filesystem::path output_dir;
    std::filesystem::path reference_cache_dir;
    unsigned seed = 0;  // reserved for randomized harnesses; solvers are deterministic
  };

  struct StudyCell
  {
    Method method = Method::merge;
    Index n_T = 0;
    double error = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> rate;
    Index fallback_count = 0;
    double cpu_seconds = 0;
    double cfl_adv = 0;
    double cfl_diff = 0;
    bool failed = false;
    std::string note;
  };

  struct RankHistoryRow
  {
    Index step = 0;
    double time = 0;
    Index rank = 0;
    int fallback_flag = 0;
  };

  struct StudyResult
  {
    RunConfig config;
    std::string reference_kind;  // dense_rk4 or self_reference_merge
    std::vector<StudyCell> cells;
    std::map<std::string, std::vector<RankHistoryRow>> rank_histories;
  };

  namespace detail
  {
    constexpr Index kSelfReferenceMaxM = 799;
    constexpr Index kDenseReferenceMaxM = 399;

    //! sup of |f| sampled on the closed grid including boundary nodes
    inline double sup_abs_on_grid(const ScalarFn& f, Index m, double h)
    {
      if (!f)
        return 0.0;
      double s = 0.0;
      for (Index i = 0; i <= m + 1; ++i)
        s = std::max(s, std::abs(f(-1.0 + i * h)));
      return s;
    }

    inline std::vector<RankHistoryRow> history_rows(const RunTrace& trace)
    {
      std::vector<RankHistoryRow> rows;
      if (trace.ranks.size() != trace.times.size())
        return rows;  // rank tracking disabled for this run
      rows.reserve(trace.ranks.size());
      for (std::size_t k = 0; k < trace.ranks.size(); ++k)
      {
        RankHistoryRow row;
        row.step = static_cast<Index>(k);
        row.time = trace.times[k];
        row.rank = trace.ranks[k];
        row.fallback_flag =
            (k > 0 && trace.reports[k - 1].fallback_used.value_or(false)) ? 1 : 0;
        rows.push_back(row);
      }
      return rows;
    }
  }

  //! Run the configured study. The error of every cell is the relative
  //! Frobenius distance to the reference at t_end; observed rates are log2
  //! ratios of successive errors within a method.
  inline StudyResult run_study(const RunConfig& cfg)
  {
    StudyResult result;
    result.config = cfg;
    if (cfg.methods.empty())
      return result;
    if (cfg.n_T.empty())
      throw std::invalid_argument("run_study: empty step-count list");
    for (Index n : cfg.n_T)
      if (n <= 0)
        throw std::invalid_argument("run_study: step counts must be positive");

    const ProblemSpec spec = catalog(cfg.problem, cfg.m);
    const MatrixOperator op = discretize(spec);
    const LowRankMatrix x0 = initial_low_rank(spec);
    const double h = spec.h1();
    const double sup_r = std::max(detail::sup_abs_on_grid(spec.r1, spec.m1, spec.h1()),
                                  detail::sup_abs_on_grid(spec.r2, spec.m2, spec.h2()));
    const double mu_eff =
        std::max(detail::sup_abs_on_grid(spec.a1, spec.m1, spec.h1()) *
                     detail::sup_abs_on_grid(spec.b1, spec.m2, spec.h2()),
                 detail::sup_abs_on_grid(spec.a4, spec.m1, spec.h1()) *
                     detail::sup_abs_on_grid(spec.b4, spec.m2, spec.h2()));

    const bool wants_ie = std::count(cfg.methods.begin(), cfg.methods.end(),
                                     Method::implicit_euler) > 0;
    if (wants_ie && spec.m1 * spec.m2 > 1000000)
      throw std::invalid_argument("run_study: implicit Euler requested beyond the dense size guard");

    const Index n_max = *std::max_element(cfg.n_T.begin(), cfg.n_T.end());

    // Reference state at t_end: dense RK4 through the cache up to m = 399,
    // then a Merge self-reference at twice the finest step count up to m = 799.
    Matrix ref;
    if (std::max(spec.m1, spec.m2) <= detail::kDenseReferenceMaxM)
    {
      result.reference_kind = "dense_rk4";
      ref = cached_references(cfg.reference_cache_dir, spec, {spec.t_end}).front();
    }
    else if (std::max(spec.m1, spec.m2) <= detail::kSelfReferenceMaxM)
    {
      result.reference_kind = "self_reference_merge";
      const Index n_ref = 2 * n_max;
      const double dt_ref = spec.t_end / n_ref;
      const double eps2_ref = cfg.eps2_policy.value(dt_ref);
      const auto path = reference_cache_path(cfg.reference_cache_dir, spec.name + "_selfref",
                                             spec.m1, spec.m2, spec.t_end, eps2_ref);
      std::error_code ec;
      if (!cfg.reference_cache_dir.empty() && std::filesystem::exists(path, ec))
      {
        ref = read_reference_file(path).data;
      }
      else
      {
        StepControls rctl;
        rctl.eps1 = Tolerance(cfg.eps1_policy == Eps1Policy::dt ? dt_ref : 0.0);
        rctl.eps2 = Tolerance(eps2_ref);
        rctl.galerkin_strategy = cfg.galerkin_strategy;
        const RunTrace rt = evolve(Method::merge, op, x0, 0.0, spec.t_end,
                                   static_cast<int>(n_ref), rctl);
        ref = dense(rt.final);
        if (!cfg.reference_cache_dir.empty())
          write_reference_file(path, spec.t_end, ref);
      }
    }
    else
    {
      throw std::invalid_argument("run_study: grid too large for any supported reference");
    }
    const double ref_norm = std::max(ref.norm(), 1e-300);

    for (Method method : cfg.methods)
    {
      std::optional<StudyCell> prev;
      for (Index n : cfg.n_T)
      {
        const double dt = spec.t_end / n;
        StudyCell cell;
        cell.method = method;
        cell.n_T = n;
        cell.cfl_adv = sup_r * dt / h;
        cell.cfl_diff = mu_eff * dt / (h * h);

        StepControls ctl;
        ctl.eps1 = Tolerance(cfg.eps1_policy == Eps1Policy::dt ? dt : 0.0);
        ctl.eps2 = Tolerance(cfg.eps2_policy.value(dt));
        ctl.galerkin_strategy = cfg.galerkin_strategy;
        try
        {
          const RunTrace trace = evolve(method, op, x0, 0.0, spec.t_end,
                                        static_cast<int>(n), ctl);
          const Matrix xt = trace.final_dense ? *trace.final_dense : dense(trace.final);
          cell.error = (xt - ref).norm() / ref_norm;
          for (const StepReport& rep : trace.reports)
          {
            cell.cpu_seconds += rep.wall_seconds;
            if (rep.fallback_used.value_or(false))
              ++cell.fallback_count;
          }
          if (n == n_max)
            result.rank_histories[method_label(method)] = detail::history_rows(trace);
        }
        catch (const SolveFailure& e)
        {
          cell.failed = true;
          cell.note = e.what();
        }
        if (prev && prev->n_T < n && !cell.failed && !prev->failed && prev->error > 0 &&
            cell.error > 0)
          cell.rate = std::log(prev->error / cell.error) / std::log(double(n) / prev->n_T);
        result.cells.push_back(cell);
        prev = cell;
      }
      if (!result.rank_histories.count(method_label(method)))
        result.rank_histories[method_label(method)] = {};
    }
    return result;
  }

  namespace detail
  {
    inline std::string g17(double v)
    {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return buf;
    }
  }

  //! Write errors.csv plus one ranks_<METHOD>.csv per method into dir, and a
  //! metadata.txt naming the problem and the reference procedure used.
  inline void emit_csv(const StudyResult& result, const std::filesystem::path& dir)
  {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    {
      std::ofstream out(dir / "errors.csv", std::ios::trunc);
      if (!out)
        throw std::runtime_error("emit_csv: cannot write " + (dir / "errors.csv").string());
      out << "method,n_T,error,rate,F,cpu_seconds,cfl_adv,cfl_diff\n";
      for (const StudyCell& c : result.cells)
      {
        out << method_label(c.method) << ',' << c.n_T << ',' << detail::g17(c.error) << ',';
        if (c.rate)
          out << detail::g17(*c.rate);
        out << ',' << c.fallback_count << ',' << detail::g17(c.cpu_seconds) << ','
            << detail::g17(c.cfl_adv) << ',' << detail::g17(c.cfl_diff) << '\n';
      }
    }

    for (const auto& [label, rows] : result.rank_histories)
    {
      std::ofstream out(dir / ("ranks_" + label + ".csv"), std::ios::trunc);
      if (!out)
        throw std::runtime_error("emit_csv: cannot write rank history for " + label);
      out << "step,time,rank,fallback_flag\n";
      for (const RankHistoryRow& r : rows)
        out << r.step << ',' << detail::g17(r.time) << ',' << r.rank << ',' << r.fallback_flag
            << '\n';
    }

    {
      std::ofstream out(dir / "metadata.txt", std::ios::trunc);
      out << "problem=" << result.config.problem << "\n"
          << "m=" << result.config.m << "\n"
          << "reference=" << result.reference_kind << "\n";
    }
  }

  //! compact fixed-width text rendering of the study (errors with bracketed rates)
  inline std::string format_table(const StudyResult& result)
  {
    std::ostringstream os;
    os << "problem=" << result.config.problem << " m=" << result.config.m
       << " reference=" << result.reference_kind << "\n";
    char line[160];
    std::snprintf(line, sizeof(line), "%-6s %6s %-18s %6s %10s %9s %9s\n", "method", "n_T",
                  "error [rate]", "F", "cpu_s", "cfl_adv", "cfl_diff");
    os << line;
    for (const StudyCell& c : result.cells)
    {
      char err[40];
      if (c.failed)
        std::snprintf(err, sizeof(err), "failed");
      else if (c.rate)
        std::snprintf(err, sizeof(err), "%.2e [%.2f]", c.error, *c.rate);
      else
        std::snprintf(err, sizeof(err), "%.2e [----]", c.error);
      std::snprintf(line, sizeof(line), "%-6s %6lld %-18s %6lld %10.3f %9.3g %9.3g\n",
                    method_label(c.method).c_str(), static_cast<long long>(c.n_T), err,
                    static_cast<long long>(c.fallback_count), c.cpu_seconds, c.cfl_adv,
                    c.cfl_diff);
      os << line;
      if (c.failed)
        os << "    note: " << c.note << "\n";
    }
    return os.str();
  }
}
