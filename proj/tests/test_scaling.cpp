#include <accnet/scaling.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>

using namespace accnet;

namespace {

std::filesystem::path temp_dir(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("accnet_scaling_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Tag balance check: every <tag> is closed in order, attributes quoted.
bool well_formed_xml(const std::string& s)
{
    std::vector<std::string> stack;
    std::size_t i = 0;
    while ((i = s.find('<', i)) != std::string::npos) {
        const std::size_t j = s.find('>', i);
        if (j == std::string::npos)
            return false;
        std::string tag = s.substr(i + 1, j - i - 1);
        i = j + 1;
        if (tag.empty())
            return false;
        if (tag[0] == '?' || tag[0] == '!')
            continue;
        if (std::count(tag.begin(), tag.end(), '"') % 2 != 0)
            return false;
        if (tag[0] == '/') {
            if (stack.empty() || stack.back() != tag.substr(1))
                return false;
            stack.pop_back();
        } else if (tag.back() != '/') {
            stack.push_back(tag.substr(0, tag.find_first_of(" \n")));
        }
    }
    return stack.empty();
}

SweepConfig mock_config()
{
    SweepConfig cfg;
    cfg.mock = MockTrainer{0.5, 2.0, {}};
    cfg.n_grid = {50, 100, 200, 400, 800, 1600};
    cfg.jobs = 2;
    return cfg;
}

TaskSpec tiny_task()
{
    TaskSpec t;
    t.d_in = 2;
    t.d_mid = 1;
    t.d_out = 1;
    t.n_total = 160;
    t.n_test = 40;
    t.seed = 3;
    return t;
}

} // namespace

TEST(RateE, ThreeCases)
{
    EXPECT_NEAR(rate_E(0.5, 100.0), std::log(100.0) / 10.0, 1e-15);
    EXPECT_NEAR(rate_E(0.9, 10000.0), 0.01, 1e-15);
    EXPECT_NEAR(rate_E(0.25, 10000.0), 0.1, 1e-15);
    EXPECT_THROW(rate_E(0.3, 1.0), ConfigError);
}

TEST(RateE, NearHalfContinuity)
{
    const double n = 1e4;
    const double ratio = rate_E(0.5, n) / rate_E(0.499, n);
    EXPECT_GE(ratio, 1.0);
    EXPECT_LE(ratio, std::log(n));
}

TEST(PredictedRate, ReferenceConfigurations)
{
    const auto a = predicted_rate(8, 15, 1, 3);
    EXPECT_NEAR(a.r_star, 1.0 / 3.0, 1e-15);
    EXPECT_EQ(a.regime, Regime::HHard);
    const auto b = predicted_rate(9, 15, 9, 3);
    EXPECT_EQ(b.r_star, 0.5);
    EXPECT_EQ(b.regime, Regime::BothEasy);
    const auto c = predicted_rate(1, 15, 9, 3);
    EXPECT_NEAR(c.r_star, 1.0 / 15.0, 1e-15);
    EXPECT_EQ(c.regime, Regime::GHard);
}

TEST(PredictedRate, TiesAndMonotone)
{
    // nu_g/d_in = nu_h/d_mid = 1/4 -> g_hard before h_hard
    EXPECT_EQ(predicted_rate(1, 4, 1, 4).regime, Regime::GHard);
    EXPECT_EQ(predicted_rate(3, 6, 1, 2).regime, Regime::BothEasy);
    double prev = 0.0;
    for (double g = 0.5; g < 12.0; g += 0.5) {
        const double r = predicted_rate(g, 6, 1.5, 2).r_star;
        EXPECT_GE(r, prev);
        prev = r;
    }
}

TEST(RegularizedRates, HandValues)
{
    const std::vector<double> nu4{4.0}, nu1{1.0};
    const std::vector<Eigen::Index> d5{5};
    const auto a = thm4_rates(nu4, d5);
    EXPECT_EQ(a.reg1, 0.5);
    EXPECT_EQ(a.reg2_consistent, 0.5);
    const auto b = thm4_rates(nu1, d5);
    EXPECT_EQ(b.reg1, 0.125);
    EXPECT_EQ(b.reg2_consistent, 0.125);
    EXPECT_EQ(b.reg2_as_written, 0.5);

    const std::vector<double> easy{10.0, 20.0};
    const std::vector<Eigen::Index> dims{2, 3};
    const auto c = thm4_rates(easy, dims);
    EXPECT_EQ(c.reg2_consistent, c.reg1);
    // as printed: 1/2 - (10/5 - 1/2) - (20/6 - 1/2)
    EXPECT_NEAR(c.reg2_as_written, 0.5 - 1.5 - (20.0 / 6.0 - 0.5), 1e-15);
    EXPECT_THROW(thm4_rates(easy, d5), ConfigError);
}

TEST(CompositionRate, MinRatio)
{
    const std::vector<double> nus{4.0, 1.0};
    const std::vector<Eigen::Index> dims{6, 2};
    EXPECT_EQ(composition_rate(nus, dims), 0.5);
}

TEST(KernelBaseline, MatchesDenseSolveOracle)
{
    TaskSpec t = tiny_task();
    t.n_total = 60;
    t.n_test = 40;
    const DataSet ds = generate(t);
    const double ridge = 1e-2;
    // oracle: LU solve of (K + ridge I) a = Y
    const Matrix xs = ds.x.topRows(20);
    Matrix k = gram(xs, 0.5, 1.0);
    k.diagonal().array() += ridge;
    const Matrix alpha = k.partialPivLu().solve(ds.y.topRows(20));
    Matrix cross(40, 20);
    for (Eigen::Index i = 0; i < 40; ++i)
        for (Eigen::Index j = 0; j < 20; ++j)
            cross(i, j) = std::exp(-(ds.x.row(20 + i) - xs.row(j)).norm());
    // use the first 20 rows as training set: build a view with n_train = 20
    DataSet view = ds;
    view.n_train = 20;
    const double expect = (cross * alpha - ds.y.bottomRows(40)).cwiseAbs().mean();
    EXPECT_NEAR(kernel_baseline(view, 20, ridge), expect, 1e-8);
}

TEST(KernelBaseline, InterpolatesWithTinyRidge)
{
    TaskSpec t = tiny_task();
    t.n_total = 20;
    t.n_test = 10;
    DataSet ds = generate(t);
    // evaluate on the training rows themselves
    DataSet self = ds;
    self.x.bottomRows(10) = ds.x.topRows(10);
    self.y.bottomRows(10) = ds.y.topRows(10);
    EXPECT_LT(kernel_baseline(self, 10, 0.0), 1e-6);
}

TEST(KernelBaseline, SinglePointConstantTarget)
{
    DataSet ds;
    ds.x = Matrix::Zero(4, 1);
    ds.x(1, 0) = 0.1;
    ds.x(2, 0) = 0.2;
    ds.x(3, 0) = 0.3;
    ds.y = Matrix::Constant(4, 1, 2.0);
    ds.n_train = 1;
    // prediction 2 k(x, 0), error ~ spread of 2(1 - e^{-x})
    const double err = kernel_baseline(ds, 1, 0.0);
    const double expect = 2.0 * ((1 - std::exp(-0.1)) + (1 - std::exp(-0.2)) + (1 - std::exp(-0.3))) / 3.0;
    EXPECT_NEAR(err, expect, 1e-10);
}

TEST(Sweep, MockRecoversPlantedExponent)
{
    const ScalingReport rep = run_sweep(mock_config());
    ASSERT_TRUE(rep.fitted_slope.has_value());
    EXPECT_NEAR(*rep.fitted_slope, -0.5, 1e-10);
    EXPECT_NEAR(*rep.bound_slope, -0.5, 1e-10);
    EXPECT_NEAR(rep.predicted_slope, -0.5, 1e-15);
    EXPECT_EQ(rep.rows.size(), 6u);
    EXPECT_EQ(rep.rows[0].completed, 3);
    EXPECT_EQ(rep.rows[0].std_error, 0.0);
}

TEST(Sweep, MockOtherExponentWithAllPoints)
{
    SweepConfig cfg = mock_config();
    cfg.mock->exponent = 0.3;
    cfg.fit_skip_smallest = false;
    EXPECT_NEAR(*run_sweep(cfg).fitted_slope, -0.3, 1e-10);
}

TEST(Sweep, SingleGridPointRefusesFit)
{
    SweepConfig cfg = mock_config();
    cfg.n_grid = {100};
    const ScalingReport rep = run_sweep(cfg);
    EXPECT_FALSE(rep.fitted_slope.has_value());
    const auto j = to_json(rep);
    EXPECT_TRUE(j["fitted_slope"].is_null());
}

TEST(Sweep, PlantedFailureIsReportedNotFatal)
{
    SweepConfig cfg = mock_config();
    cfg.mock->fail_n = {200};
    const ScalingReport rep = run_sweep(cfg);
    EXPECT_EQ(rep.failed_cells, 3);
    EXPECT_EQ(rep.rows[2].completed, 0);
    ASSERT_TRUE(rep.fitted_slope.has_value());
    EXPECT_NEAR(*rep.fitted_slope, -0.5, 1e-10);
}

TEST(Sweep, ValidationErrors)
{
    SweepConfig cfg = mock_config();
    cfg.n_grid = {100, 50};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = mock_config();
    cfg.n_grid = {5000};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = mock_config();
    cfg.repeats = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = mock_config();
    cfg.arch.widths = {8};
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Sweep, RealTrainingDeterministicAcrossWorkerCounts)
{
    SweepConfig cfg;
    cfg.task = tiny_task();
    cfg.n_grid = {20, 40, 80};
    cfg.repeats = 2;
    cfg.arch = {{2}, {8, 8}};
    cfg.train = TrainConfig::three_phase(4);
    cfg.bound.n_samples = 2;
    const DataSet ds = generate(cfg.task);
    cfg.jobs = 1;
    const auto a = to_json(run_sweep(cfg, ds)).dump();
    cfg.jobs = 3;
    const auto b = to_json(run_sweep(cfg, ds)).dump();
    EXPECT_EQ(a, b);
}

TEST(Sweep, AllModelKindsRun)
{
    SweepConfig cfg;
    cfg.task = tiny_task();
    cfg.n_grid = {20, 40, 80};
    cfg.repeats = 1;
    cfg.arch = {{3}, {6, 6}};
    cfg.train = TrainConfig::three_phase(3);
    const DataSet ds = generate(cfg.task);
    for (ModelKind kind : {ModelKind::AccNet, ModelKind::Fcnn, ModelKind::Shallow, ModelKind::Kernel}) {
        cfg.model = kind;
        const ScalingReport rep = run_sweep(cfg, ds);
        EXPECT_EQ(rep.failed_cells, 0) << to_string(kind) << ": " << rep.cells[0].error;
        EXPECT_TRUE(rep.fitted_slope.has_value()) << to_string(kind);
        for (const auto& row : rep.rows)
            EXPECT_GT(row.mean_error, 0.0);
    }
}

TEST(Sweep, FcnnKeepsIdentityOutputMaps)
{
    RngStream rng(1);
    const ArchTemplate arch{{4}, {5, 5}};
    const AccNet net = init_model(ModelKind::Fcnn, arch, 2, 1, rng);
    EXPECT_EQ(net.dims(), (std::vector<Eigen::Index>{2, 5, 1}));
    EXPECT_EQ((net.block(0).w_out - Matrix::Identity(5, 5)).norm(), 0.0);
    const AccNet shallow = init_model(ModelKind::Shallow, arch, 2, 1, rng);
    EXPECT_EQ(shallow.depth(), 1u);
    EXPECT_EQ(shallow.widths()[0], 10);
}

TEST(Sweep, CellCacheResumes)
{
    SweepConfig cfg = mock_config();
    const auto dir = temp_dir("cache");
    cfg.cell_cache = dir;
    const auto first = to_json(run_sweep(cfg)).dump();
    EXPECT_TRUE(std::filesystem::exists(dir / "cell_n50_r0.json"));
    // change the planted scale: cached cells win
    cfg.mock->scale = 99.0;
    EXPECT_EQ(to_json(run_sweep(cfg)).dump(), first);
}

TEST(Report, FilesAndSvgStructure)
{
    const ScalingReport rep = run_sweep(mock_config());
    const auto dir = temp_dir("report");
    emit_report(rep, dir);
    for (const char* f : {"report.csv", "report.json", "predictions.json", "heatmap.csv", "plot.svg"})
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    const std::string csv = slurp(dir / "report.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "N,mean_err,std_err,train_err,gap,bound,r_theta,completed");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);

    const std::string svg = slurp(dir / "plot.svg");
    EXPECT_TRUE(well_formed_xml(svg));
    std::smatch m;
    ASSERT_TRUE(std::regex_search(svg, m, std::regex("data-fitted-slope=\"([^\"]+)\"")));
    EXPECT_EQ(std::stod(m[1].str()), *rep.fitted_slope);

    const auto pred = nlohmann::json::parse(slurp(dir / "predictions.json"));
    EXPECT_EQ(pred["prediction"]["regime"], "both_easy");
}

TEST(Report, SingleRowCsv)
{
    SweepConfig cfg = mock_config();
    cfg.n_grid = {100};
    const auto dir = temp_dir("single");
    emit_report(run_sweep(cfg), dir);
    const std::string csv = slurp(dir / "report.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
    EXPECT_TRUE(well_formed_xml(slurp(dir / "plot.svg")));
}

TEST(Report, HeatmapGrid)
{
    const std::vector<double> g{1.0, 4.0}, h{0.5, 2.0};
    const auto cells = predicted_heatmap(g, h, 6, 2);
    ASSERT_EQ(cells.size(), 4u);
    EXPECT_NEAR(cells[0].predicted_slope, -1.0 / 6.0, 1e-15);
    EXPECT_NEAR(cells[3].predicted_slope, -0.5, 1e-15);
    std::ostringstream os;
    write_heatmap_csv(os, cells);
    const std::string text = os.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
}
