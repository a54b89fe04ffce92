#pragma once

#include <accnet/complexity.hpp>
#include <accnet/error.hpp>
#include <accnet/model.hpp>
#include <accnet/numerics.hpp>
#include <accnet/rng.hpp>
#include <accnet/taskgen.hpp>
#include <accnet/train.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace accnet {

// ---------------------------------------------------------------------------
// Rate predictors

/// N^{-1/2} for r > 1/2, N^{-1/2} log N for r = 1/2 (within 1e-12), N^{-r} below.
inline double rate_E(double r, double n)
{
    if (!(n >= 2.0) || !(r > 0.0))
        throw ConfigError("rate_E: need n >= 2 and r > 0");
    if (std::abs(r - 0.5) <= 1e-12)
        return std::log(n) / std::sqrt(n);
    if (r > 0.5)
        return 1.0 / std::sqrt(n);
    return std::pow(n, -r);
}

/// min_l nu_l / d_{l-1} over the layers of a composition.
inline double composition_rate(std::span<const double> nus, std::span<const Eigen::Index> input_dims)
{
    if (nus.empty() || nus.size() != input_dims.size())
        throw ConfigError("composition_rate: nus and dims must be nonempty and of equal length");
    double r = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < nus.size(); ++l) {
        if (!(nus[l] > 0.0) || input_dims[l] < 1)
            throw ConfigError("composition_rate: need nu > 0 and dims >= 1");
        r = std::min(r, nus[l] / static_cast<double>(input_dims[l]));
    }
    return r;
}

struct Thm4Rates {
    double reg1;
    double reg2_as_written;
    double reg2_consistent;
};

/// Rates at the regularized global minima with r~_l = nu_l / (d*_l + 3):
/// reg1 = min{1/2, r~_l}; reg2 as printed = 1/2 - sum max{0, r~_l - 1/2};
/// sign-consistent variant = 1/2 - sum max{0, 1/2 - r~_l}.
inline Thm4Rates thm4_rates(std::span<const double> nus, std::span<const Eigen::Index> dims_star)
{
    if (nus.empty() || nus.size() != dims_star.size())
        throw ConfigError("thm4_rates: nus and dims must be nonempty and of equal length");
    Thm4Rates out{0.5, 0.5, 0.5};
    for (std::size_t l = 0; l < nus.size(); ++l) {
        const double r = nus[l] / (static_cast<double>(dims_star[l]) + 3.0);
        out.reg1 = std::min(out.reg1, r);
        out.reg2_as_written -= std::max(0.0, r - 0.5);
        out.reg2_consistent -= std::max(0.0, 0.5 - r);
    }
    return out;
}

enum class Regime { BothEasy, GHard, HHard };

inline const char* to_string(Regime r)
{
    switch (r) {
    case Regime::BothEasy: return "both_easy";
    case Regime::GHard: return "g_hard";
    case Regime::HHard: return "h_hard";
    }
    return "?";
}

struct RatePrediction {
    double r_star;
    Regime regime;
    std::vector<double> per_layer_ratios; ///< nu_g / d_in, nu_h / d_mid
    double thm4_rate_reg1;
    double thm4_rate_reg2_as_written;
    double thm4_rate_reg2_consistent;
};

/// r* = min{1/2, nu_g / d_in, nu_h / d_mid}; ties resolve to both_easy, then g_hard.
inline RatePrediction predicted_rate(double nu_g, Eigen::Index d_in, double nu_h, Eigen::Index d_mid)
{
    if (!(nu_g > 0.0) || !(nu_h > 0.0) || d_in < 1 || d_mid < 1)
        throw ConfigError("predicted_rate: need positive smoothness and dimensions");
    const double rg = nu_g / static_cast<double>(d_in);
    const double rh = nu_h / static_cast<double>(d_mid);
    RatePrediction p;
    p.per_layer_ratios = {rg, rh};
    p.r_star = std::min({0.5, rg, rh});
    p.regime = p.r_star == 0.5 ? Regime::BothEasy : (rg == p.r_star ? Regime::GHard : Regime::HHard);
    const double nus[] = {nu_g, nu_h};
    const Eigen::Index dims[] = {d_in, d_mid};
    const auto t4 = thm4_rates(nus, dims);
    p.thm4_rate_reg1 = t4.reg1;
    p.thm4_rate_reg2_as_written = t4.reg2_as_written;
    p.thm4_rate_reg2_consistent = t4.reg2_consistent;
    return p;
}

// ---------------------------------------------------------------------------
// Kernel baseline

/// Laplacian-kernel ridge regression fit on the first `n` training rows,
/// returning the mean L1 error on the test split. Solves (K + ridge I) a = Y.
inline double kernel_baseline(const DataSet& data, Eigen::Index n, double ridge, double length_scale = 1.0)
{
    if (n < 1 || n > data.n_train)
        throw ConfigError("kernel_baseline: n must lie in [1, train size]");
    if (!(ridge >= 0.0))
        throw ConfigError("kernel_baseline: ridge must be >= 0");
    const Matrix xs = data.x.topRows(n);
    const Matrix ys = data.y.topRows(n);
    Matrix k = gram(xs, 0.5, length_scale);
    k.diagonal().array() += ridge;
    const CholeskyFactor chol = cholesky_jitter(k, 0.0);
    const Matrix alpha = chol.lower.transpose().triangularView<Eigen::Upper>().solve(
        chol.lower.triangularView<Eigen::Lower>().solve(ys));

    const Matrix xt = data.x.bottomRows(data.n_test());
    Matrix cross(xt.rows(), n);
    for (Eigen::Index i = 0; i < xt.rows(); ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            cross(i, j) = matern((xt.row(i) - xs.row(j)).norm(), 0.5, length_scale);
    const Matrix pred = cross * alpha;
    return (pred - data.y.bottomRows(data.n_test())).cwiseAbs().mean();
}

// ---------------------------------------------------------------------------
// Sweeps

enum class ModelKind { AccNet, Fcnn, Shallow, Kernel };

inline const char* to_string(ModelKind m)
{
    switch (m) {
    case ModelKind::AccNet: return "accnet";
    case ModelKind::Fcnn: return "fcnn";
    case ModelKind::Shallow: return "shallow";
    case ModelKind::Kernel: return "kernel";
    }
    return "?";
}

inline ModelKind model_kind_from_string(const std::string& s)
{
    if (s == "accnet") return ModelKind::AccNet;
    if (s == "fcnn") return ModelKind::Fcnn;
    if (s == "shallow") return ModelKind::Shallow;
    if (s == "kernel") return ModelKind::Kernel;
    throw ConfigError("unknown model '" + s + "' (expected accnet, fcnn, shallow or kernel)");
}

/// Interior interface dimensions d_1..d_{L-1} and hidden widths w_1..w_L.
/// For the fcnn model the interface dimensions are ignored: every hidden
/// layer has the block width. The shallow model uses a single block whose
/// width is the total neuron count sum(widths).
struct ArchTemplate {
    std::vector<Eigen::Index> hidden_dims{16, 16, 16};
    std::vector<Eigen::Index> widths{128, 128, 128, 128};

    void validate() const
    {
        if (widths.empty() || hidden_dims.size() + 1 != widths.size())
            throw ConfigError("arch: need L widths and L-1 hidden_dims");
        for (auto w : widths)
            if (w < 1)
                throw ConfigError("arch.widths must be >= 1");
        for (auto d : hidden_dims)
            if (d < 1)
                throw ConfigError("arch.hidden_dims must be >= 1");
    }
};

/// Untrained network of the given kind for d_in -> d_out.
inline AccNet init_model(ModelKind kind, const ArchTemplate& arch, Eigen::Index d_in, Eigen::Index d_out,
                         RngStream& rng)
{
    arch.validate();
    std::vector<Eigen::Index> dims{d_in}, widths;
    switch (kind) {
    case ModelKind::AccNet:
        dims.insert(dims.end(), arch.hidden_dims.begin(), arch.hidden_dims.end());
        widths = arch.widths;
        break;
    case ModelKind::Fcnn:
        // W of every block but the last is the identity, so block widths are
        // also the interface dimensions.
        for (std::size_t l = 0; l + 1 < arch.widths.size(); ++l)
            dims.push_back(arch.widths[l]);
        widths = arch.widths;
        break;
    case ModelKind::Shallow:
        widths = {std::accumulate(arch.widths.begin(), arch.widths.end(), Eigen::Index{0})};
        break;
    case ModelKind::Kernel: throw ConfigError("init_model: the kernel model has no network");
    }
    dims.push_back(d_out);
    AccNet net = init_accnet(dims, widths, rng);
    if (kind == ModelKind::Fcnn) {
        std::vector<ShallowBlock> blocks = net.blocks();
        for (std::size_t l = 0; l + 1 < blocks.size(); ++l)
            blocks[l].w_out = Matrix::Identity(blocks[l].width(), blocks[l].width());
        net = AccNet(std::move(blocks));
    }
    return net;
}

/// Output maps held fixed during training: all but the last for fcnn.
inline std::vector<bool> frozen_w_out(ModelKind kind, std::size_t depth)
{
    if (kind != ModelKind::Fcnn)
        return {};
    std::vector<bool> mask(depth, true);
    mask.back() = false;
    return mask;
}

struct MockTrainer {
    double exponent = 0.5; ///< planted decay rate
    double scale = 1.0;    ///< test error = scale * N^{-exponent}
    std::vector<Eigen::Index> fail_n; ///< cells at these N raise a planted training failure
};

struct SweepConfig {
    TaskSpec task;
    std::vector<Eigen::Index> n_grid{50, 100, 200, 400, 800, 1600};
    ModelKind model = ModelKind::AccNet;
    ArchTemplate arch;
    TrainConfig train = TrainConfig::three_phase();
    int repeats = 3;
    std::uint64_t seed = 0;
    double kernel_ridge = 1e-3;
    bool fit_skip_smallest = true;
    BoundConfig bound;   ///< n_samples is overwritten per cell
    double rank_tol = 1e-8;
    std::optional<MockTrainer> mock;
    int jobs = 0;        ///< worker count, 0 = hardware concurrency
    std::optional<std::filesystem::path> cell_cache; ///< completed cells are stored here and reused

    void validate() const
    {
        task.validate();
        arch.validate();
        train.validate();
        bound.validate();
        if (repeats < 1)
            throw ConfigError("sweep.repeats must be >= 1");
        if (n_grid.empty())
            throw ConfigError("sweep.n_grid must not be empty");
        for (std::size_t i = 0; i < n_grid.size(); ++i) {
            if (n_grid[i] < 2)
                throw ConfigError("sweep.n_grid values must be >= 2");
            if (i > 0 && n_grid[i] <= n_grid[i - 1])
                throw ConfigError("sweep.n_grid must be strictly increasing");
        }
        if (n_grid.back() > task.n_train())
            throw ConfigError("sweep.n_grid exceeds the training split (" + std::to_string(task.n_train()) + ")");
        if (!(kernel_ridge >= 0.0))
            throw ConfigError("sweep.kernel_ridge must be >= 0");
    }
};

struct CellResult {
    Eigen::Index n = 0;
    int repeat = 0;
    bool ok = false;
    std::string error;
    double test_error = 0.0;
    double train_error = 0.0;
    double gap = 0.0;              ///< test_error - train_error
    double bound = 0.0;            ///< generalization bound (NaN for the kernel model)
    double r_theta = 0.0;
    std::vector<double> block_f1;  ///< per-block F1 bounds of the trained model
    std::vector<Eigen::Index> interior_ranks; ///< rank_estimate of interior FCNN matrices
};

struct ScalingRow {
    Eigen::Index n;
    double mean_error;
    double std_error;
    double mean_train_error;
    double mean_gap;
    double mean_bound;
    double mean_r_theta;
    std::vector<double> mean_block_f1;
    int completed;
};

struct ScalingReport {
    ModelKind model = ModelKind::AccNet;
    TaskSpec task;
    std::vector<ScalingRow> rows;
    std::vector<CellResult> cells;
    std::optional<double> fitted_slope;
    std::optional<double> fitted_intercept; ///< natural-log intercept
    std::optional<double> bound_slope;
    double predicted_slope = 0.0;
    RatePrediction prediction{};
    bool fit_skip_smallest = true;
    int failed_cells = 0;
};

namespace detail {

inline nlohmann::ordered_json cell_to_json(const CellResult& c)
{
    return {{"n", c.n},
            {"repeat", c.repeat},
            {"ok", c.ok},
            {"error", c.error},
            {"test_error", c.test_error},
            {"train_error", c.train_error},
            {"gap", c.gap},
            {"bound", c.bound},
            {"r_theta", c.r_theta},
            {"block_f1", c.block_f1},
            {"interior_ranks", c.interior_ranks}};
}

inline CellResult cell_from_json(const nlohmann::json& j)
{
    CellResult c;
    c.n = j.at("n").get<Eigen::Index>();
    c.repeat = j.at("repeat").get<int>();
    c.ok = j.at("ok").get<bool>();
    c.error = j.at("error").get<std::string>();
    auto num = [&j](const char* key) {
        const auto& v = j.at(key);
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    };
    c.test_error = num("test_error");
    c.train_error = num("train_error");
    c.gap = num("gap");
    c.bound = num("bound");
    c.r_theta = num("r_theta");
    c.block_f1 = j.at("block_f1").get<std::vector<double>>();
    c.interior_ranks = j.at("interior_ranks").get<std::vector<Eigen::Index>>();
    return c;
}

inline std::filesystem::path cell_path(const std::filesystem::path& dir, Eigen::Index n, int repeat)
{
    return dir / ("cell_n" + std::to_string(n) + "_r" + std::to_string(repeat) + ".json");
}

inline std::vector<Eigen::Index> take(const std::vector<Eigen::Index>& perm, Eigen::Index n)
{
    return {perm.begin(), perm.begin() + n};
}

inline Matrix gather_cols(const Matrix& rows, const std::vector<Eigen::Index>& idx)
{
    Matrix out(rows.cols(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j)
        out.col(static_cast<Eigen::Index>(j)) = rows.row(idx[j]).transpose();
    return out;
}

inline CellResult run_cell(const SweepConfig& cfg, const DataSet& data, const std::vector<Eigen::Index>& perm,
                           Eigen::Index n, int repeat)
{
    CellResult cell;
    cell.n = n;
    cell.repeat = repeat;
    try {
        if (cfg.mock) {
            if (std::find(cfg.mock->fail_n.begin(), cfg.mock->fail_n.end(), n) != cfg.mock->fail_n.end())
                throw TrainingAborted(0, std::numeric_limits<double>::quiet_NaN());
            cell.test_error = cfg.mock->scale * std::pow(static_cast<double>(n), -cfg.mock->exponent);
            cell.train_error = 0.5 * cell.test_error;
            cell.gap = cell.test_error - cell.train_error;
            cell.bound = 1e3 * cell.test_error;
            cell.ok = true;
            return cell;
        }
        const auto idx = take(perm, n);
        if (cfg.model == ModelKind::Kernel) {
            DataSet sub;
            sub.x.resize(n + data.n_test(), data.x.cols());
            sub.y.resize(n + data.n_test(), data.y.cols());
            for (Eigen::Index j = 0; j < n; ++j) {
                sub.x.row(j) = data.x.row(idx[static_cast<std::size_t>(j)]);
                sub.y.row(j) = data.y.row(idx[static_cast<std::size_t>(j)]);
            }
            sub.x.bottomRows(data.n_test()) = data.x.bottomRows(data.n_test());
            sub.y.bottomRows(data.n_test()) = data.y.bottomRows(data.n_test());
            sub.n_train = n;
            cell.test_error = kernel_baseline(sub, n, cfg.kernel_ridge, cfg.task.length_scale);
            cell.train_error = std::numeric_limits<double>::quiet_NaN();
            cell.gap = std::numeric_limits<double>::quiet_NaN();
            cell.bound = std::numeric_limits<double>::quiet_NaN();
            cell.r_theta = std::numeric_limits<double>::quiet_NaN();
            cell.ok = true;
            return cell;
        }

        RngStream rng(cfg.seed, hash_key(static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(repeat)));
        const Matrix x_train = gather_cols(data.x, idx);
        const Matrix y_train = gather_cols(data.y, idx);
        const Matrix x_test = data.test_x_cols();
        const Matrix y_test = data.test_y_cols();
        const AccNet init = init_model(cfg.model, cfg.arch, data.x.cols(), data.y.cols(), rng);

        TrainConfig tc = cfg.train;
        tc.seed = rng.next_u64();
        tc.frozen_w_out = frozen_w_out(cfg.model, init.depth());
        const TrainResult trained = train(init, x_train, y_train, x_test, y_test, tc);

        cell.train_error = batch_loss(Loss::L1, trained.net.forward(x_train), y_train);
        cell.test_error = batch_loss(Loss::L1, trained.net.forward(x_test), y_test);
        cell.gap = cell.test_error - cell.train_error;

        // Bounds are evaluated on the SVD-split form, which for an AccNet
        // reproduces the trained blocks up to the rank of each interior matrix.
        const Fcnn fc = accnet_to_fcnn(trained.net);
        const AccNet split = cfg.model == ModelKind::Fcnn ? fcnn_to_accnet(fc, cfg.rank_tol) : trained.net;
        for (std::size_t k = 1; k + 1 < fc.weights().size(); ++k)
            cell.interior_ranks.push_back(rank_estimate(fc.weights()[k]));

        BoundConfig bc = cfg.bound;
        bc.n_samples = static_cast<std::size_t>(n);
        const ComplexityReport rep = complexity_report(split, bc);
        cell.bound = rep.thm2_bound;
        cell.r_theta = rep.r_theta;
        for (const auto& b : rep.per_block)
            cell.block_f1.push_back(b.f1_bound);
        cell.ok = true;
    } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
    }
    return cell;
}

inline std::optional<LineFit> loglog_fit(const std::vector<ScalingRow>& rows, bool skip_smallest,
                                         double ScalingRow::*field)
{
    std::vector<double> xs, ys;
    const std::size_t start = skip_smallest && rows.size() >= 3 ? 1 : 0;
    for (std::size_t i = start; i < rows.size(); ++i) {
        const double v = rows[i].*field;
        if (rows[i].completed == 0 || !(v > 0.0) || !std::isfinite(v))
            continue;
        xs.push_back(std::log(static_cast<double>(rows[i].n)));
        ys.push_back(std::log(v));
    }
    if (xs.size() < 2)
        return std::nullopt;
    return fit_line(xs, ys);
}

} // namespace detail

/// Assemble per-N statistics, slopes and predictions from cell results.
inline ScalingReport assemble_report(const SweepConfig& cfg, std::vector<CellResult> cells)
{
    ScalingReport rep;
    rep.model = cfg.model;
    rep.task = cfg.task;
    rep.fit_skip_smallest = cfg.fit_skip_smallest;
    std::sort(cells.begin(), cells.end(),
              [](const CellResult& a, const CellResult& b) { return std::tie(a.n, a.repeat) < std::tie(b.n, b.repeat); });
    for (Eigen::Index n : cfg.n_grid) {
        ScalingRow row{n, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, {}, 0};
        std::vector<double> errs;
        for (const auto& c : cells) {
            if (c.n != n || !c.ok)
                continue;
            errs.push_back(c.test_error);
            row.mean_train_error += c.train_error;
            row.mean_gap += c.gap;
            row.mean_bound += c.bound;
            row.mean_r_theta += c.r_theta;
            if (row.mean_block_f1.size() < c.block_f1.size())
                row.mean_block_f1.resize(c.block_f1.size(), 0.0);
            for (std::size_t l = 0; l < c.block_f1.size(); ++l)
                row.mean_block_f1[l] += c.block_f1[l];
        }
        row.completed = static_cast<int>(errs.size());
        if (!errs.empty()) {
            const double k = static_cast<double>(errs.size());
            row.mean_error = std::accumulate(errs.begin(), errs.end(), 0.0) / k;
            double ss = 0.0;
            for (double e : errs)
                ss += (e - row.mean_error) * (e - row.mean_error);
            row.std_error = errs.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
            row.mean_train_error /= k;
            row.mean_gap /= k;
            row.mean_bound /= k;
            row.mean_r_theta /= k;
            for (auto& f : row.mean_block_f1)
                f /= k;
        }
        rep.rows.push_back(std::move(row));
    }
    for (const auto& c : cells)
        if (!c.ok)
            ++rep.failed_cells;
    rep.cells = std::move(cells);

    if (auto fit = detail::loglog_fit(rep.rows, cfg.fit_skip_smallest, &ScalingRow::mean_error)) {
        rep.fitted_slope = fit->slope;
        rep.fitted_intercept = fit->intercept;
    }
    if (cfg.model != ModelKind::Kernel)
        if (auto fit = detail::loglog_fit(rep.rows, cfg.fit_skip_smallest, &ScalingRow::mean_bound))
            rep.bound_slope = fit->slope;
    rep.prediction = predicted_rate(cfg.task.nu_g, cfg.task.d_in, cfg.task.nu_h, cfg.task.d_mid);
    rep.predicted_slope = -rep.prediction.r_star;
    return rep;
}

/// For every N in the grid and every repeat, train the configured model on
/// the first N rows of a per-repeat permutation of the training split and
/// measure it on the test split. Cells run on a worker pool; results are
/// merged by (N, repeat), so the report does not depend on scheduling.
inline ScalingReport run_sweep(const SweepConfig& cfg, const DataSet& data)
{
    cfg.validate();
    if (!cfg.mock && (data.x.cols() != cfg.task.d_in || data.y.cols() != cfg.task.d_out ||
                      data.n_train < cfg.n_grid.back()))
        throw ConfigError("run_sweep: dataset does not match the sweep task");

    std::vector<std::vector<Eigen::Index>> perms(static_cast<std::size_t>(cfg.repeats));
    for (int r = 0; r < cfg.repeats; ++r) {
        auto& p = perms[static_cast<std::size_t>(r)];
        p.resize(static_cast<std::size_t>(data.n_train));
        std::iota(p.begin(), p.end(), Eigen::Index{0});
        RngStream prng(cfg.seed, hash_key(0x7065726dULL, static_cast<std::uint64_t>(r)));
        prng.shuffle(std::span<Eigen::Index>(p));
    }

    struct Job {
        Eigen::Index n;
        int repeat;
    };
    std::vector<Job> jobs;
    for (Eigen::Index n : cfg.n_grid)
        for (int r = 0; r < cfg.repeats; ++r)
            jobs.push_back({n, r});

    std::vector<std::optional<CellResult>> results(jobs.size());
    if (cfg.cell_cache) {
        std::filesystem::create_directories(*cfg.cell_cache);
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            const auto path = detail::cell_path(*cfg.cell_cache, jobs[i].n, jobs[i].repeat);
            std::ifstream in(path);
            if (!in)
                continue;
            try {
                CellResult c = detail::cell_from_json(nlohmann::json::parse(in));
                if (c.ok)
                    results[i] = std::move(c);
            } catch (const std::exception&) {
                // unreadable cache entry: recompute
            }
        }
    }

    std::atomic<std::size_t> next{0};
    std::mutex cache_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            if (results[i])
                continue;
            CellResult c = detail::run_cell(cfg, data, perms[static_cast<std::size_t>(jobs[i].repeat)], jobs[i].n,
                                            jobs[i].repeat);
            if (cfg.cell_cache && c.ok) {
                std::lock_guard lock(cache_mutex);
                std::ofstream out(detail::cell_path(*cfg.cell_cache, c.n, c.repeat));
                out << detail::cell_to_json(c).dump(2) << '\n';
            }
            results[i] = std::move(c);
        }
    };
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t n_workers =
        std::min<std::size_t>(jobs.size(), cfg.jobs > 0 ? static_cast<std::size_t>(cfg.jobs) : hw);
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n_workers; ++w)
            pool.emplace_back(worker);
    }

    std::vector<CellResult> cells;
    for (auto& r : results)
        cells.push_back(std::move(*r));
    return assemble_report(cfg, std::move(cells));
}

/// Generates the task data (skipped in mock mode) and runs the sweep.
inline ScalingReport run_sweep(const SweepConfig& cfg)
{
    cfg.validate();
    if (cfg.mock) {
        DataSet empty;
        empty.n_train = cfg.task.n_train();
        return run_sweep(cfg, empty);
    }
    return run_sweep(cfg, generate(cfg.task));
}

// ---------------------------------------------------------------------------
// Report output

namespace detail {

inline nlohmann::ordered_json optional_json(const std::optional<double>& v)
{
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline std::string fmt(double v)
{
    if (!std::isfinite(v))
        return "nan";
    return format_f64(v);
}

inline std::string fmt_short(double v, int precision = 4)
{
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

} // namespace detail

inline nlohmann::ordered_json to_json(const RatePrediction& p)
{
    return {{"r_star", p.r_star},
            {"regime", to_string(p.regime)},
            {"per_layer_ratios", p.per_layer_ratios},
            {"thm4_rate_reg1", p.thm4_rate_reg1},
            {"thm4_rate_reg2_as_written", p.thm4_rate_reg2_as_written},
            {"thm4_rate_reg2_consistent", p.thm4_rate_reg2_consistent}};
}

inline nlohmann::ordered_json to_json(const ScalingReport& rep)
{
    nlohmann::ordered_json j;
    j["model"] = to_string(rep.model);
    j["task"] = rep.task;
    j["fit_skip_smallest"] = rep.fit_skip_smallest;
    // A log-log slope is the same in any log base; intercepts are given in both.
    j["fitted_slope"] = detail::optional_json(rep.fitted_slope);
    j["fitted_intercept_ln"] = detail::optional_json(rep.fitted_intercept);
    j["fitted_intercept_log10"] =
        detail::optional_json(rep.fitted_intercept ? std::optional<double>(*rep.fitted_intercept / std::log(10.0))
                                                   : std::nullopt);
    j["bound_slope"] = detail::optional_json(rep.bound_slope);
    j["predicted_slope"] = rep.predicted_slope;
    j["prediction"] = to_json(rep.prediction);
    j["failed_cells"] = rep.failed_cells;
    j["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : rep.cells)
        j["cells"].push_back(detail::cell_to_json(c));
    return j;
}

inline void write_report_csv(std::ostream& out, const ScalingReport& rep)
{
    std::size_t n_blocks = 0;
    for (const auto& r : rep.rows)
        n_blocks = std::max(n_blocks, r.mean_block_f1.size());
    out << "N,mean_err,std_err,train_err,gap,bound,r_theta,completed";
    for (std::size_t l = 0; l < n_blocks; ++l)
        out << ",f1_block" << l;
    out << '\n';
    for (const auto& r : rep.rows) {
        out << r.n << ',' << detail::fmt(r.mean_error) << ',' << detail::fmt(r.std_error) << ','
            << detail::fmt(r.mean_train_error) << ',' << detail::fmt(r.mean_gap) << ',' << detail::fmt(r.mean_bound)
            << ',' << detail::fmt(r.mean_r_theta) << ',' << r.completed;
        for (std::size_t l = 0; l < n_blocks; ++l)
            out << ',' << (l < r.mean_block_f1.size() ? detail::fmt(r.mean_block_f1[l]) : "nan");
        out << '\n';
    }
}

struct HeatmapCell {
    double nu_g;
    double nu_h;
    std::optional<double> empirical_slope;
    double predicted_slope;
};

/// Theoretical slope map -min{1/2, nu_g/d_in, nu_h/d_mid} over a grid.
inline std::vector<HeatmapCell> predicted_heatmap(std::span<const double> nu_g_grid, std::span<const double> nu_h_grid,
                                                  Eigen::Index d_in, Eigen::Index d_mid)
{
    std::vector<HeatmapCell> cells;
    for (double g : nu_g_grid)
        for (double h : nu_h_grid)
            cells.push_back({g, h, std::nullopt, -predicted_rate(g, d_in, h, d_mid).r_star});
    return cells;
}

inline void write_heatmap_csv(std::ostream& out, std::span<const HeatmapCell> cells)
{
    out << "nu_g,nu_h,empirical_slope,predicted_slope,difference\n";
    for (const auto& c : cells) {
        out << detail::fmt(c.nu_g) << ',' << detail::fmt(c.nu_h) << ','
            << (c.empirical_slope ? detail::fmt(*c.empirical_slope) : "nan") << ',' << detail::fmt(c.predicted_slope)
            << ',' << (c.empirical_slope ? detail::fmt(*c.empirical_slope - c.predicted_slope) : "nan") << '\n';
    }
}

/// Log-log plot of mean test error and bound against N with the fitted and
/// predicted slope lines.
inline std::string render_svg(const ScalingReport& rep)
{
    constexpr double width = 640, height = 420, left = 70, right = 20, top = 40, bottom = 50;
    std::vector<double> lx, ly;
    for (const auto& r : rep.rows) {
        if (r.completed == 0)
            continue;
        lx.push_back(std::log10(static_cast<double>(r.n)));
        if (r.mean_error > 0.0)
            ly.push_back(std::log10(r.mean_error));
        if (r.mean_bound > 0.0 && std::isfinite(r.mean_bound))
            ly.push_back(std::log10(r.mean_bound));
    }
    if (lx.empty()) {
        lx = {0.0, 1.0};
        ly = {0.0, 1.0};
    }
    double x0 = *std::min_element(lx.begin(), lx.end()), x1 = *std::max_element(lx.begin(), lx.end());
    double y0 = *std::min_element(ly.begin(), ly.end()), y1 = *std::max_element(ly.begin(), ly.end());
    if (x1 - x0 < 1e-9) { x0 -= 0.5; x1 += 0.5; }
    if (y1 - y0 < 1e-9) { y0 -= 0.5; y1 += 0.5; }
    const double pad_y = 0.05 * (y1 - y0);
    y0 -= pad_y;
    y1 += pad_y;
    auto px = [&](double v) { return left + (v - x0) / (x1 - x0) * (width - left - right); };
    auto py = [&](double v) { return height - bottom - (v - y0) / (y1 - y0) * (height - top - bottom); };

    std::ostringstream s;
    s.precision(6);
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n"
      << "  <rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
      << "  <line x1=\"" << left << "\" y1=\"" << height - bottom << "\" x2=\"" << width - right << "\" y2=\""
      << height - bottom << "\" stroke=\"black\"/>\n"
      << "  <line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << height - bottom
      << "\" stroke=\"black\"/>\n"
      << "  <text x=\"" << width / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">log10 N</text>\n"
      << "  <text x=\"15\" y=\"" << height / 2 << "\" transform=\"rotate(-90 15 " << height / 2
      << ")\" text-anchor=\"middle\">log10 value</text>\n"
      << "  <text x=\"" << left << "\" y=\"20\">" << to_string(rep.model) << " scaling</text>\n";

    auto series = [&](double ScalingRow::*field, const char* colour, const char* id) {
        s << "  <g id=\"" << id << "\" fill=\"" << colour << "\">\n";
        for (const auto& r : rep.rows) {
            const double v = r.*field;
            if (r.completed == 0 || !(v > 0.0) || !std::isfinite(v))
                continue;
            s << "    <circle cx=\"" << px(std::log10(static_cast<double>(r.n))) << "\" cy=\""
              << py(std::log10(v)) << "\" r=\"4\"/>\n";
        }
        s << "  </g>\n";
    };
    series(&ScalingRow::mean_error, "steelblue", "test-error");
    series(&ScalingRow::mean_bound, "firebrick", "bound");

    if (rep.fitted_slope && rep.fitted_intercept) {
        // fitted in natural logs; the slope carries over to log10 axes unchanged
        const double b10 = *rep.fitted_intercept / std::log(10.0);
        s << "  <line id=\"fitted\" x1=\"" << px(x0) << "\" y1=\"" << py(b10 + *rep.fitted_slope * x0) << "\" x2=\""
          << px(x1) << "\" y2=\"" << py(b10 + *rep.fitted_slope * x1) << "\" stroke=\"steelblue\"/>\n";
        const double mid = 0.5 * (x0 + x1);
        const double anchor = b10 + *rep.fitted_slope * mid;
        s << "  <line id=\"predicted\" x1=\"" << px(x0) << "\" y1=\""
          << py(anchor + rep.predicted_slope * (x0 - mid)) << "\" x2=\"" << px(x1) << "\" y2=\""
          << py(anchor + rep.predicted_slope * (x1 - mid)) << "\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n";
    }
    s << "  <text id=\"slope-annotation\" x=\"" << width - right - 250 << "\" y=\"20\" data-fitted-slope=\""
      << (rep.fitted_slope ? detail::fmt(*rep.fitted_slope) : "null") << "\">fitted slope "
      << (rep.fitted_slope ? detail::fmt_short(*rep.fitted_slope) : "n/a") << ", predicted "
      << detail::fmt_short(rep.predicted_slope) << "</text>\n";
    s << "</svg>\n";
    return s.str();
}

/// Writes report.csv, report.json, predictions.json, heatmap.csv and plot.svg.
inline void emit_report(const ScalingReport& rep, const std::filesystem::path& dir)
{
    if (rep.rows.empty())
        throw ConfigError("emit_report: report has no rows");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    auto open = [&dir](const char* name) {
        std::ofstream out(dir / name);
        if (!out)
            throw ConfigError("emit_report: cannot write " + (dir / name).string());
        return out;
    };
    {
        auto out = open("report.csv");
        write_report_csv(out, rep);
    }
    {
        auto out = open("report.json");
        out << to_json(rep).dump(2) << '\n';
    }
    {
        nlohmann::ordered_json p;
        p["prediction"] = to_json(rep.prediction);
        p["predicted_slope"] = rep.predicted_slope;
        p["fitted_slope"] = detail::optional_json(rep.fitted_slope);
        p["bound_slope"] = detail::optional_json(rep.bound_slope);
        auto out = open("predictions.json");
        out << p.dump(2) << '\n';
    }
    {
        const HeatmapCell cell{rep.task.nu_g, rep.task.nu_h, rep.fitted_slope, rep.predicted_slope};
        auto out = open("heatmap.csv");
        write_heatmap_csv(out, std::span<const HeatmapCell>(&cell, 1));
    }
    {
        auto out = open("plot.svg");
        out << render_svg(rep);
    }
}

} // namespace accnet
