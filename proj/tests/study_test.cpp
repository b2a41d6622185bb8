#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "lowrank/study.hpp"
#include "test_helpers.hpp"

namespace
{
  constexpr double kPi = std::numbers::pi;

  class TempDir
  {
  public:
    TempDir()
        : path_(std::filesystem::temp_directory_path() /
                ("lowrank_study_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter_++)))
    {
      std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::filesystem::path& path() const { return path_; }

  private:
    static inline int counter_ = 0;
    std::filesystem::path path_;
  };

  std::vector<std::string> read_lines(const std::filesystem::path& file)
  {
    std::ifstream in(file);
    EXPECT_TRUE(in.good()) << file;
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
      lines.push_back(line);
    return lines;
  }

  std::string drop_cpu_column(const std::string& csv_line)
  {
    std::vector<std::string> fields;
    std::stringstream ss(csv_line);
    std::string f;
    while (std::getline(ss, f, ','))
      fields.push_back(f);
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i)
    {
      if (i == 5)
        continue;  // cpu_seconds carries wall-clock noise
      out += fields[i];
      out += '|';
    }
    return out;
  }
}  // namespace

TEST(Labels, MethodLabelParseRoundTrip)
{
  using lowrank::Method;
  const std::vector<std::pair<Method, std::string>> table = {
      {Method::step_truncation, "ST"},
      {Method::bug, "BUG"},
      {Method::merge, "M"},
      {Method::merge_adapt, "MA"},
      {Method::implicit_euler, "IE"},
  };
  for (const auto& [method, label] : table)
  {
    EXPECT_EQ(lowrank::method_label(method), label);
    const auto parsed = lowrank::parse_method(label);
    ASSERT_TRUE(parsed.has_value()) << label;
    EXPECT_EQ(*parsed, method);
  }
  EXPECT_FALSE(lowrank::parse_method("XY").has_value());
  EXPECT_FALSE(lowrank::parse_method("m").has_value());
}

TEST(Policies, ToleranceLaddersFollowTheStepSize)
{
  const lowrank::Eps2Policy dt2 = lowrank::Eps2Policy::dt2();
  EXPECT_DOUBLE_EQ(dt2.value(0.1), 0.01);
  EXPECT_DOUBLE_EQ(dt2.value(0.5), 0.25);
  const lowrank::Eps2Policy fixed = lowrank::Eps2Policy::fixed(3e-7);
  EXPECT_DOUBLE_EQ(fixed.value(0.1), 3e-7);
  EXPECT_DOUBLE_EQ(fixed.value(10.0), 3e-7);
}

TEST(Study, EmptyMethodListGivesEmptyResult)
{
  lowrank::RunConfig cfg;
  cfg.problem = "solid_body_rotation";
  cfg.m = 20;
  cfg.n_T = {10};

  const lowrank::StudyResult result = lowrank::run_study(cfg);
  EXPECT_TRUE(result.cells.empty());
  EXPECT_TRUE(result.rank_histories.empty());
  EXPECT_TRUE(result.reference_kind.empty());
}

TEST(Study, InvalidConfigurationsRejected)
{
  lowrank::RunConfig cfg;
  cfg.problem = "solid_body_rotation";
  cfg.m = 20;
  cfg.methods = {lowrank::Method::merge};

  cfg.n_T = {};
  EXPECT_THROW(lowrank::run_study(cfg), std::invalid_argument);
  cfg.n_T = {0};
  EXPECT_THROW(lowrank::run_study(cfg), std::invalid_argument);

  cfg.n_T = {10};
  cfg.problem = "bogus";
  EXPECT_THROW(lowrank::run_study(cfg), std::invalid_argument);
}

TEST(Study, RatesFallbacksAndErrorsMatchIndependentRecomputation)
{
  lowrank::RunConfig cfg;
  cfg.problem = "solid_body_rotation";
  cfg.m = 20;
  cfg.n_T = {20, 40};
  cfg.methods = {lowrank::Method::merge, lowrank::Method::merge_adapt};

  const lowrank::StudyResult result = lowrank::run_study(cfg);
  ASSERT_EQ(result.cells.size(), 4u);
  EXPECT_EQ(result.reference_kind, "dense_rk4");

  const lowrank::ProblemSpec spec = lowrank::catalog(cfg.problem, cfg.m);
  const lowrank::MatrixOperator op = lowrank::discretize(spec);
  const lowrank::LowRankMatrix x0 = lowrank::initial_low_rank(spec);
  const lowrank::Matrix ref =
      lowrank::cached_references("", spec, {spec.t_end}).front();

  for (std::size_t idx = 0; idx < result.cells.size(); ++idx)
  {
    const lowrank::StudyCell& cell = result.cells[idx];
    ASSERT_FALSE(cell.failed) << cell.note;

    const double dt = spec.t_end / cell.n_T;
    lowrank::StepControls ctl;
    ctl.eps1 = lowrank::Tolerance(0.0);
    ctl.eps2 = lowrank::Tolerance(dt * dt);
    const lowrank::RunTrace trace =
        lowrank::evolve(cell.method, op, x0, 0.0, spec.t_end,
                        static_cast<int>(cell.n_T), ctl);

    const double err = (lowrank::dense(trace.final) - ref).norm() / ref.norm();
    EXPECT_NEAR(cell.error, err, 1e-14 * std::max(1.0, err));

    int fallbacks = 0, prediction_solves = 0;
    for (const lowrank::StepReport& rep : trace.reports)
    {
      fallbacks += rep.fallback_used.value_or(false) ? 1 : 0;
      prediction_solves += rep.prediction_solves;
    }
    EXPECT_EQ(cell.fallback_count, fallbacks);
    if (cell.method == lowrank::Method::merge_adapt)
      EXPECT_EQ(prediction_solves, 2 * fallbacks);
    else
      EXPECT_EQ(cell.fallback_count, 0);

    EXPECT_DOUBLE_EQ(cell.cfl_adv, dt / spec.h1());  // sup |x| on [-1,1] is 1
    EXPECT_DOUBLE_EQ(cell.cfl_diff, 0.0);
  }

  // bracketed rate equals the hand formula on consecutive rows of a method
  for (std::size_t idx : {0u, 2u})
  {
    EXPECT_FALSE(result.cells[idx].rate.has_value());
    const lowrank::StudyCell& coarse = result.cells[idx];
    const lowrank::StudyCell& fine = result.cells[idx + 1];
    ASSERT_TRUE(fine.rate.has_value());
    EXPECT_NEAR(*fine.rate, std::log2(coarse.error / fine.error), 1e-12);
  }

  // rank histories recorded at the finest ladder rung for every method
  ASSERT_TRUE(result.rank_histories.count("M"));
  ASSERT_TRUE(result.rank_histories.count("MA"));
  EXPECT_EQ(result.rank_histories.at("M").size(), 41u);
  EXPECT_EQ(result.rank_histories.at("M").front().time, 0.0);
  EXPECT_NEAR(result.rank_histories.at("M").back().time, spec.t_end, 1e-12);
}

TEST(Study, DiffusiveCflUsesSquaredSpacing)
{
  lowrank::RunConfig cfg;
  cfg.problem = "anisotropic_diffusion";
  cfg.m = 20;
  cfg.n_T = {10};
  cfg.methods = {lowrank::Method::merge};

  const lowrank::StudyResult result = lowrank::run_study(cfg);
  ASSERT_EQ(result.cells.size(), 1u);
  const lowrank::ProblemSpec spec = lowrank::catalog(cfg.problem, cfg.m);
  const double dt = spec.t_end / 10;
  EXPECT_DOUBLE_EQ(result.cells[0].cfl_adv, 0.0);
  EXPECT_DOUBLE_EQ(result.cells[0].cfl_diff, dt / (spec.h1() * spec.h1()));
}

TEST(Study, SelfReferenceBeyondDenseGuard)
{
  TempDir cache;
  lowrank::RunConfig cfg;
  cfg.problem = "solid_body_rotation";
  cfg.m = 499;
  cfg.n_T = {4};
  cfg.methods = {lowrank::Method::merge};
  cfg.reference_cache_dir = cache.path();

  const lowrank::StudyResult first = lowrank::run_study(cfg);
  EXPECT_EQ(first.reference_kind, "self_reference_merge");
  ASSERT_EQ(first.cells.size(), 1u);
  ASSERT_FALSE(first.cells[0].failed) << first.cells[0].note;
  EXPECT_TRUE(std::isfinite(first.cells[0].error));
  EXPECT_GT(first.cells[0].error, 0.0);

  // the self-reference is cached under a derived problem key and reused
  const double dt_ref = lowrank::catalog(cfg.problem, cfg.m).t_end / 8;
  const auto path = lowrank::reference_cache_path(
      cache.path(), cfg.problem + "_selfref", cfg.m, cfg.m,
      lowrank::catalog(cfg.problem, cfg.m).t_end, dt_ref * dt_ref);
  EXPECT_TRUE(std::filesystem::exists(path));

  const lowrank::StudyResult second = lowrank::run_study(cfg);
  EXPECT_EQ(second.cells[0].error, first.cells[0].error);

  cfg.m = 801;
  EXPECT_THROW(lowrank::run_study(cfg), std::invalid_argument);
}

TEST(Csv, SchemaRowCountsAndMetadata)
{
  TempDir out;
  lowrank::RunConfig cfg;
  cfg.problem = "solid_body_rotation";
  cfg.m = 20;
  cfg.n_T = {10, 20};
  cfg.methods = {lowrank::Method::merge, lowrank::Method::merge_adapt};

  const lowrank::StudyResult result = lowrank::run_study(cfg);
  lowrank::emit_csv(result, out.path());

  const auto errors = read_lines(out.path() / "errors.csv");
  ASSERT_EQ(errors.size(), 1u + cfg.methods.size() * cfg.n_T.size());
  EXPECT_EQ(errors[0], "method,n_T,error,rate,F,cpu_seconds,cfl_adv,cfl_diff");
  EXPECT_EQ(errors[1].substr(0, 5), "M,10,");

  for (const char* name : {"ranks_M.csv", "ranks_MA.csv"})
  {
    const auto rows = read_lines(out.path() / name);
    ASSERT_GE(rows.size(), 1u) << name;
    EXPECT_EQ(rows[0], "step,time,rank,fallback_flag");
    EXPECT_EQ(rows.size(), 22u) << name;  // header + n_max + 1 snapshots
    EXPECT_EQ(rows[1].substr(0, 4), "0,0,");
  }

  const auto meta = read_lines(out.path() / "metadata.txt");
  ASSERT_EQ(meta.size(), 3u);
  EXPECT_EQ(meta[0], "problem=solid_body_rotation");
  EXPECT_EQ(meta[1], "m=20");
  EXPECT_EQ(meta[2], "reference=dense_rk4");

  const std::string table = lowrank::format_table(result);
  EXPECT_NE(table.find("problem=solid_body_rotation"), std::string::npos);
  EXPECT_NE(table.find("MA"), std::string::npos);
}

TEST(Csv, EmptyResultAndHandBuiltCellsSerializeExactly)
{
  TempDir out;
  lowrank::StudyResult empty;
  lowrank::emit_csv(empty, out.path());
  const auto header_only = read_lines(out.path() / "errors.csv");
  ASSERT_EQ(header_only.size(), 1u);
  EXPECT_EQ(header_only[0], "method,n_T,error,rate,F,cpu_seconds,cfl_adv,cfl_diff");

  // a rank history with no rows (dense method beyond the tracking cutoff)
  // still yields a header-only file, and floats print with 17 digits
  lowrank::StudyResult hand;
  lowrank::StudyCell cell;
  cell.method = lowrank::Method::implicit_euler;
  cell.n_T = 40;
  cell.error = 1.0 / 3.0;
  hand.cells.push_back(cell);
  hand.rank_histories["IE"] = {};
  lowrank::emit_csv(hand, out.path());

  const auto errors = read_lines(out.path() / "errors.csv");
  ASSERT_EQ(errors.size(), 2u);
  EXPECT_EQ(errors[1], "IE,40,0.33333333333333331,,0,0,0,0");
  const auto ranks = read_lines(out.path() / "ranks_IE.csv");
  ASSERT_EQ(ranks.size(), 1u);
  EXPECT_EQ(ranks[0], "step,time,rank,fallback_flag");
}

TEST(Csv, RerunIsByteIdenticalModuloCpuSeconds)
{
  TempDir cache, out1, out2;
  lowrank::RunConfig cfg;
  cfg.problem = "solid_body_rotation";
  cfg.m = 20;
  cfg.n_T = {10, 20};
  cfg.methods = {lowrank::Method::merge, lowrank::Method::merge_adapt};
  cfg.reference_cache_dir = cache.path();

  lowrank::emit_csv(lowrank::run_study(cfg), out1.path());
  lowrank::emit_csv(lowrank::run_study(cfg), out2.path());

  const auto lines1 = read_lines(out1.path() / "errors.csv");
  const auto lines2 = read_lines(out2.path() / "errors.csv");
  ASSERT_EQ(lines1.size(), lines2.size());
  for (std::size_t i = 0; i < lines1.size(); ++i)
    EXPECT_EQ(drop_cpu_column(lines1[i]), drop_cpu_column(lines2[i])) << "line " << i;

  for (const char* name : {"ranks_M.csv", "ranks_MA.csv"})
  {
    const auto r1 = read_lines(out1.path() / name);
    const auto r2 = read_lines(out2.path() / name);
    EXPECT_EQ(r1, r2) << name;
  }
}
