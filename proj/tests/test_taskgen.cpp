#include <accnet/taskgen.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace accnet;

namespace {

// 2^{1-nu}/Gamma(nu) z^nu K_nu(z), z = sqrt(2 nu) r / l, straight from the Bessel form
double matern_bessel(double r, double nu, double l)
{
    if (r == 0.0)
        return 1.0;
    const double z = std::sqrt(2.0 * nu) * r / l;
    return std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(z, nu) * std::cyl_bessel_k(nu, z);
}

std::filesystem::path temp_dir(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("accnet_taskgen_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TaskSpec small_spec()
{
    TaskSpec s;
    s.d_in = 3;
    s.d_mid = 2;
    s.d_out = 2;
    s.n_total = 120;
    s.n_test = 20;
    s.seed = 5;
    return s;
}

} // namespace

TEST(Matern, LaplacianLimit)
{
    for (int i = 0; i < 100; ++i) {
        const double r = 0.05 * i;
        EXPECT_NEAR(matern(r, 0.5, 1.3), std::exp(-r / 1.3), 1e-12);
    }
}

TEST(Matern, ClosedFormsMatchBesselRoute)
{
    for (double nu : {1.5, 2.5})
        for (double r : {0.01, 0.3, 1.0, 2.5, 6.0})
            EXPECT_NEAR(matern(r, nu, 0.8), matern_bessel(r, nu, 0.8), 1e-12) << nu << " " << r;
}

TEST(Matern, GeneralNuMatchesBesselRoute)
{
    for (double nu : {0.7, 1.0, 3.0, 4.0, 7.5})
        for (double r : {0.05, 0.5, 1.0, 2.0})
            EXPECT_NEAR(matern(r, nu, 1.0), matern_bessel(r, nu, 1.0), 1e-10) << nu << " " << r;
}

TEST(Matern, ContinuousAcrossClosedFormSwitch)
{
    for (double r : {0.1, 0.9, 2.0})
        EXPECT_NEAR(matern(r, 1.5 + 1e-9, 1.0), matern(r, 1.5, 1.0), 1e-7);
}

TEST(Matern, ApproachesRbf)
{
    for (int i = 0; i <= 100; ++i) {
        const double r = 0.02 * i;
        EXPECT_NEAR(matern(r, 50.0, 1.0), std::exp(-r * r / 2.0), 2e-2) << r;
    }
}

TEST(Matern, TinyDistanceLargeNu)
{
    const double v = matern(1e-300, 120.0, 1.0);
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Matern, MonotoneAndBounded)
{
    for (double nu : {0.5, 1.0, 2.5, 4.0}) {
        double prev = 1.0;
        for (double r = 0.0; r < 5.0; r += 0.1) {
            const double v = matern(r, nu, 1.0);
            EXPECT_LE(v, prev + 1e-15);
            EXPECT_GE(v, 0.0);
            prev = v;
        }
    }
    EXPECT_THROW(matern(-1.0, 1.0), ConfigError);
    EXPECT_THROW(matern(1.0, 0.0), ConfigError);
}

TEST(Gram, SymmetricUnitDiagonalPsd)
{
    RngStream rng(1);
    Matrix pts(30, 3);
    for (Eigen::Index i = 0; i < pts.size(); ++i)
        pts.data()[i] = rng.normal();
    const Matrix k = gram(pts, 1.5, 1.0);
    EXPECT_EQ((k - k.transpose()).norm(), 0.0);
    EXPECT_EQ((k.diagonal() - Vector::Ones(30)).norm(), 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> es(k);
    EXPECT_GT(es.eigenvalues().minCoeff(), -1e-10);
}

TEST(GpSample, CovarianceMatchesKernel)
{
    Matrix pts(4, 1);
    pts << 0.0, 0.3, 1.0, 2.0;
    const Matrix k = gram(pts, 2.5, 1.0);
    RngStream rng(2);
    const GpSample s = gp_sample(k, 40000, rng);
    const Matrix cov = s.values * s.values.transpose() / 40000.0;
    EXPECT_LT((cov - k).cwiseAbs().maxCoeff(), 3e-2);
}

TEST(GpSample, DuplicatePointsNeedJitter)
{
    Matrix pts(3, 1);
    pts << 0.5, 0.5, 1.0;
    RngStream rng(3);
    const GpSample s = gp_sample(gram(pts, 0.5), 2, rng);
    EXPECT_GT(s.jitter, 0.0);
    EXPECT_TRUE(s.values.allFinite());
}

TEST(TaskSpec, ValidationNamesField)
{
    TaskSpec s;
    s.d_mid = 0;
    try {
        s.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("task.d_mid"), std::string::npos);
    }
    s = {};
    s.n_test = s.n_total;
    EXPECT_THROW(s.validate(), ConfigError);
}

TEST(TaskSpec, JsonRoundTripAndUnknownKeys)
{
    TaskSpec s = small_spec();
    s.nu_g = 2.5;
    nlohmann::ordered_json j = s;
    const TaskSpec back = task_spec_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(back.nu_g, 2.5);
    EXPECT_EQ(back.n_total, 120);
    EXPECT_EQ(back.seed, 5u);
    EXPECT_THROW(task_spec_from_json(nlohmann::json{{"d_inn", 3}}), ConfigError);
    EXPECT_THROW(task_spec_from_json(nlohmann::json{{"d_in", "three"}}), ConfigError);
}

TEST(Generate, ShapesSplitAndInputBall)
{
    const DataSet ds = generate(small_spec());
    EXPECT_EQ(ds.x.rows(), 120);
    EXPECT_EQ(ds.x.cols(), 3);
    EXPECT_EQ(ds.y.cols(), 2);
    EXPECT_EQ(ds.n_train, 100);
    EXPECT_EQ(ds.test_x_cols().cols(), 20);
    for (Eigen::Index i = 0; i < ds.x.rows(); ++i)
        EXPECT_LE(ds.x.row(i).norm(), 1.0);
    EXPECT_TRUE(ds.y.allFinite());
}

TEST(Generate, DeterministicAndSeedSensitive)
{
    const DataSet a = generate(small_spec()), b = generate(small_spec());
    EXPECT_EQ((a.x - b.x).norm(), 0.0);
    EXPECT_EQ((a.y - b.y).norm(), 0.0);
    TaskSpec other = small_spec();
    other.seed = 6;
    EXPECT_GT((generate(other).x - a.x).norm(), 0.0);
}

TEST(Generate, TargetsVaryWithUnitScale)
{
    TaskSpec s = small_spec();
    s.n_total = 400;
    s.n_test = 100;
    const DataSet ds = generate(s);
    // GP marginals are standard normal
    const double var = ds.y.squaredNorm() / static_cast<double>(ds.y.size());
    EXPECT_GT(var, 0.2);
    EXPECT_LT(var, 3.0);
}

TEST(Persistence, RoundTripIsExactAndByteStable)
{
    const DataSet ds = generate(small_spec());
    const auto d1 = temp_dir("rt1"), d2 = temp_dir("rt2");
    save_dataset(ds, d1);
    save_dataset(generate(small_spec()), d2);
    for (const char* f : {"manifest.json", "x.csv", "y.csv"})
        EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
    const DataSet back = load_dataset(d1);
    EXPECT_EQ((back.x - ds.x).norm(), 0.0);
    EXPECT_EQ((back.y - ds.y).norm(), 0.0);
    EXPECT_EQ(back.n_train, ds.n_train);
    EXPECT_EQ(back.spec.nu_h, ds.spec.nu_h);
}

TEST(Csv, RaggedAndNonNumericNameLine)
{
    const auto d = temp_dir("csv");
    {
        std::ofstream(d / "ragged.csv") << "a,b\n1,2\n3\n";
        std::ofstream(d / "text.csv") << "a,b\n1,2\n3,abc\n";
        std::ofstream(d / "header.csv") << "x0,y0\n";
        std::ofstream(d / "ok.csv") << "x0,x1,y0\n0.5,1,2\n1,2,3\n3,4,5\n";
    }
    try {
        load_csv(d / "ragged.csv", {1, 1, 0});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    }
    try {
        load_csv(d / "text.csv", {1, 1, 0});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    }
    EXPECT_THROW(load_csv(d / "header.csv", {1, 1, 0}), ConfigError);
    EXPECT_THROW(load_csv(d / "ok.csv", {1, 1, 0}), ConfigError);
    const DataSet ds = load_csv(d / "ok.csv", {2, 1, 1});
    EXPECT_EQ(ds.n_train, 2);
    EXPECT_EQ(ds.x(0, 0), 0.5);
    EXPECT_EQ(ds.y(2, 0), 5.0);

    save_csv(ds, d / "again.csv");
    const DataSet again = load_csv(d / "again.csv", {2, 1, 1});
    EXPECT_EQ((again.x - ds.x).norm(), 0.0);
}
