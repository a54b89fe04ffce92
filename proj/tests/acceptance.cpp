// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any hard criterion fails.
#include <accnet/complexity.hpp>
#include <accnet/entropy.hpp>
#include <accnet/scaling.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <sys/wait.h>

using namespace accnet;
namespace fs = std::filesystem;

namespace {

int hard_failures = 0;

void report(int id, bool pass, const std::string& detail, bool soft = false)
{
    std::cout << (pass ? "PASS" : (soft ? "FAIL(soft)" : "FAIL")) << " criterion " << id << ": " << detail
              << std::endl;
    if (!pass && !soft)
        ++hard_failures;
}

double since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v)
{
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

Matrix normal_matrix(Eigen::Index r, Eigen::Index c, RngStream& rng)
{
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i)
            m(i, j) = rng.normal();
    return m;
}

Eigen::Index pick(RngStream& rng, Eigen::Index lo, Eigen::Index hi)
{
    return lo + static_cast<Eigen::Index>(rng.uniform() * static_cast<double>(hi - lo + 1)) % (hi - lo + 1);
}

// pre-activation sign pattern of every block on every sample
std::vector<bool> pattern(const AccNet& net, const Matrix& x)
{
    std::vector<bool> p;
    Matrix z = x;
    for (const auto& b : net.blocks()) {
        Matrix pre = b.v_in * z;
        pre.colwise() += b.bias;
        for (Eigen::Index i = 0; i < pre.size(); ++i)
            p.push_back(pre.data()[i] > 0.0);
        z = b.forward(z);
    }
    return p;
}

void criterion_gradients()
{
    const auto t0 = std::chrono::steady_clock::now();
    RngStream rng(101);
    double worst = 0.0;
    std::size_t checked = 0, skipped = 0;
    const double h = 1e-6;
    for (int net_i = 0; net_i < 20; ++net_i) {
        const auto depth = static_cast<std::size_t>(pick(rng, 1, 3));
        std::vector<Eigen::Index> dims{pick(rng, 1, 4)}, widths;
        for (std::size_t l = 0; l < depth; ++l) {
            dims.push_back(pick(rng, 1, 4));
            widths.push_back(pick(rng, 1, 8));
        }
        const AccNet net = init_accnet(dims, widths, rng);
        const Matrix x = normal_matrix(dims.front(), 4, rng), u = normal_matrix(dims.back(), 4, rng);
        const auto base = pattern(net, x);
        const GradientSet g = backward(net, x, u);
        auto value = [&](const AccNet& n) { return n.forward(x).cwiseProduct(u).sum(); };
        for (std::size_t l = 0; l < depth; ++l) {
            auto check = [&](auto member, const Matrix& grad) {
                for (Eigen::Index i = 0; i < grad.size(); ++i) {
                    std::vector<ShallowBlock> hi = net.blocks(), lo = net.blocks();
                    (hi[l].*member).data()[i] += h;
                    (lo[l].*member).data()[i] -= h;
                    const AccNet nh(hi), nl(lo);
                    // a kink crossed inside the stencil makes the difference meaningless
                    if (pattern(nh, x) != base || pattern(nl, x) != base) {
                        ++skipped;
                        continue;
                    }
                    const double fd = (value(nh) - value(nl)) / (2 * h);
                    const double a = grad.data()[i];
                    worst = std::max(worst, std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)}));
                    ++checked;
                }
            };
            check(&ShallowBlock::w_out, g[l].dw);
            check(&ShallowBlock::v_in, g[l].dv);
            check(&ShallowBlock::bias, Matrix(g[l].db));
        }
    }
    const double t = since(t0);
    report(1, worst < 1e-5 && t < 10.0 && checked > 0,
           "max rel err " + fmt(worst) + " over " + std::to_string(checked) + " params (" + std::to_string(skipped) +
               " kink-adjacent skipped), " + fmt(t) + " s");
}

void criterion_conversion()
{
    const auto t0 = std::chrono::steady_clock::now();
    RngStream rng(202);
    double fn_err = 0.0, norm_err = 0.0;
    for (int k = 0; k < 50; ++k) {
        const auto hidden = pick(rng, 1, 3);
        std::vector<Eigen::Index> sizes{pick(rng, 1, 5)};
        for (Eigen::Index l = 0; l < hidden; ++l)
            sizes.push_back(pick(rng, 1, 8));
        sizes.push_back(pick(rng, 1, 4));
        std::vector<Matrix> w;
        std::vector<Vector> b;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            w.push_back(normal_matrix(sizes[l + 1], sizes[l], rng) / std::sqrt(static_cast<double>(sizes[l])));
            if (l + 2 < sizes.size())
                b.push_back(normal_matrix(sizes[l + 1], 1, rng).col(0) * 0.1);
        }
        const Fcnn fc(w, b);
        const AccNet acc = fcnn_to_accnet(fc, 0.0);
        const Matrix x = normal_matrix(sizes.front(), 100, rng);
        fn_err = std::max(fn_err, (fc.forward(x) - acc.forward(x)).cwiseAbs().maxCoeff());
        for (std::size_t l = 1; l + 1 < w.size(); ++l) {
            const double nuc = svd(w[l]).s.sum();
            norm_err = std::max({norm_err, std::abs(acc.block(l - 1).w_out.squaredNorm() - nuc),
                                 std::abs(acc.block(l).v_in.squaredNorm() - nuc)});
        }
    }
    const double t = since(t0);
    report(2, fn_err < 1e-8 && norm_err < 1e-9 && t < 5.0,
           "function err " + fmt(fn_err) + ", norm err " + fmt(norm_err) + ", " + fmt(t) + " s");
}

void criterion_identity()
{
    RngStream rng(303);
    bool ok = true;
    std::string detail;
    for (Eigen::Index d : {1, 2, 5}) {
        const ShallowBlock id = identity_block(d);
        const Matrix x = normal_matrix(d, 1000, rng);
        const bool exact = (id.forward(x) - x).cwiseAbs().maxCoeff() == 0.0;
        const double f1 = f1_upper_bound(id);
        ok = ok && exact && f1 == 2.0 * static_cast<double>(d);
        detail += "d=" + std::to_string(d) + " f1=" + fmt(f1) + (exact ? " exact; " : " NOT exact; ");
    }
    report(3, ok, detail);
}

void criterion_param_norm()
{
    RngStream rng(404);
    int violations = 0;
    for (int k = 0; k < 1000; ++k) {
        const auto din = pick(rng, 1, 6), w = pick(rng, 1, 12), dout = pick(rng, 1, 6);
        const double scale = std::exp(rng.uniform(-3.0, 3.0));
        const ShallowBlock b(normal_matrix(dout, w, rng) * scale, normal_matrix(w, din, rng) / scale,
                             normal_matrix(w, 1, rng).col(0) * rng.uniform());
        if (f1_upper_bound(b) > 0.5 * b.squared_param_norm())
            ++violations;
    }
    report(4, violations == 0, std::to_string(violations) + " violations in 1000 blocks");
}

void criterion_matern()
{
    double laplace = 0.0, rbf = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double r = 0.05 * i;
        laplace = std::max(laplace, std::abs(matern(r, 0.5, 1.0) - std::exp(-r)));
    }
    for (int i = 0; i <= 200; ++i) {
        const double r = 0.01 * i;
        rbf = std::max(rbf, std::abs(matern(r, 50.0, 1.0) - std::exp(-r * r / 2.0)));
    }
    report(5, laplace <= 1e-12 && rbf <= 2e-2, "nu=0.5 err " + fmt(laplace) + ", nu=50 vs RBF err " + fmt(rbf));
}

void criterion_entropy()
{
    const auto t0 = std::chrono::steady_clock::now();
    const EllipsoidSpec spec({1.0, 0.25});
    const double a = 1.0, b = 0.5;
    RngStream rng(606);
    Matrix pts(2, 20000);
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
        const double t = rng.uniform(0.0, 2.0 * M_PI);
        // first 4000 on the boundary, the rest uniform inside
        const double rad = j < 4000 ? 1.0 : std::sqrt(rng.uniform());
        pts(0, j) = a * rad * std::cos(t);
        pts(1, j) = b * rad * std::sin(t);
    }
    bool ok = true;
    std::string detail;
    for (double eps : {0.1, 0.2, 0.5}) {
        const double cover = std::log(static_cast<double>(greedy_cover(pts, eps)));
        const double packing = std::log(static_cast<double>(greedy_cover(pts, 2.0 * eps)));
        const double formula = ellipsoid_entropy(spec, eps);
        ok = ok && std::isfinite(cover) && formula > packing;
        detail += "eps=" + fmt(eps) + " formula " + fmt(formula) + " vs packing " + fmt(packing) + " (cover " +
                  fmt(cover) + "); ";
    }
    const double t = since(t0);
    report(6, ok && t < 60.0, detail + fmt(t) + " s");
}

void criterion_hand_values()
{
    const EntropyFn one = [](double) { return 1.0; };
    const double d = dudley_bound(one, 1.0, 100, 1), c = convex_hull_entropy(one, 1.0, 2);
    report(7, d == 0.8 && c == 162.0, "dudley " + fmt(d) + ", convex hull " + fmt(c));
}

void criterion_rates()
{
    const double a = predicted_rate(8.0, 15, 1.0, 3).r_star, b = predicted_rate(9.0, 15, 9.0, 3).r_star;
    report(8, std::abs(a - 1.0 / 3.0) < 1e-15 && b == 0.5, "r_star " + fmt(a) + " and " + fmt(b));
}

// criterion-9 configuration; decay mode and epochs are the desk-scale choices
SweepConfig desk_config(ModelKind kind)
{
    SweepConfig cfg;
    cfg.model = kind;
    cfg.train = TrainConfig::three_phase(1200);
    cfg.train.decay_mode = DecayMode::Coupled;
    cfg.repeats = 3;
    cfg.seed = 9;
    return cfg;
}

std::string slope_text(const std::optional<double>& s) { return s ? fmt(*s) : std::string("null"); }

void criteria_scaling()
{
    const auto t0 = std::chrono::steady_clock::now();
    const SweepConfig cfg = desk_config(ModelKind::AccNet);
    const DataSet data = generate(cfg.task);
    const ScalingReport acc = run_sweep(cfg, data);
    const double t_acc = since(t0);
    emit_report(acc, "acceptance_sweep");

    bool decreasing = acc.failed_cells == 0, bound_ok = true;
    std::string errs;
    for (std::size_t i = 0; i < acc.rows.size(); ++i) {
        const auto& r = acc.rows[i];
        errs += fmt(r.mean_error) + " ";
        if (i > 0 && !(r.mean_error < acc.rows[i - 1].mean_error))
            decreasing = false;
    }
    for (const auto& c : acc.cells)
        if (c.ok && !(c.bound >= c.gap))
            bound_ok = false;
    const double r_star = acc.prediction.r_star;
    const bool slope_ok = acc.fitted_slope && *acc.fitted_slope >= -r_star - 0.2 && *acc.fitted_slope <= -r_star + 0.2;
    const bool bound_slope_ok = acc.bound_slope && *acc.bound_slope < 0.0;
    report(9, decreasing && slope_ok && bound_ok && bound_slope_ok,
           "(a) errors " + errs + (decreasing ? "decrease" : "do NOT decrease") + "; (b) slope " +
               slope_text(acc.fitted_slope) + " target [" + fmt(-r_star - 0.2) + ", " + fmt(-r_star + 0.2) +
               "]; (c) bound >= gap " + (bound_ok ? "every cell" : "VIOLATED") + "; (d) bound slope " +
               slope_text(acc.bound_slope) + "; " + fmt(t_acc) + " s");

    const ScalingReport shallow = run_sweep(desk_config(ModelKind::Shallow), data);
    const ScalingReport kernel = run_sweep(desk_config(ModelKind::Kernel), data);
    emit_report(shallow, "acceptance_sweep_shallow");
    emit_report(kernel, "acceptance_sweep_kernel");
    const bool order = acc.fitted_slope && shallow.fitted_slope && kernel.fitted_slope &&
                       *acc.fitted_slope <= *shallow.fitted_slope + 0.05 &&
                       *acc.fitted_slope <= *kernel.fitted_slope + 0.05;
    report(10, order,
           "accnet " + slope_text(acc.fitted_slope) + ", shallow " + slope_text(shallow.fitted_slope) + ", kernel " +
               slope_text(kernel.fitted_slope),
           true);

    const Eigen::Index limit = cfg.task.d_mid + 1;
    bool rank_ok = true;
    std::string ranks;
    for (const auto& c : acc.cells) {
        if (c.n != cfg.n_grid.back())
            continue;
        if (!c.ok || c.interior_ranks.empty()) {
            rank_ok = false;
            continue;
        }
        const Eigen::Index bottleneck = *std::min_element(c.interior_ranks.begin(), c.interior_ranks.end());
        rank_ok = rank_ok && bottleneck <= limit;
        ranks += "[";
        for (auto k : c.interior_ranks)
            ranks += std::to_string(k) + " ";
        ranks.back() = ']';
        ranks += " ";
    }
    report(11, rank_ok, "interior ranks at N=" + std::to_string(cfg.n_grid.back()) + ": " + ranks + "limit " +
                            std::to_string(limit));
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(ACCNET_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void criterion_determinism()
{
    const fs::path dir = fs::absolute("acceptance_determinism");
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "task.json") << R"({"schema_version": 1, "task": {"n_total": 400, "n_test": 100, "seed": 12}})";
    std::ofstream(dir / "sweep.json") << R"({"schema_version": 1,
      "task": {"n_total": 400, "n_test": 100, "seed": 12},
      "arch": {"hidden_dims": [2, 2], "widths": [16, 16, 16]},
      "train": {"epochs_per_phase": 10},
      "sweep": {"n_grid": [50, 100, 200], "repeats": 2, "seed": 3}})";
    int codes = 0;
    for (const char* run : {"1", "2"}) {
        codes += run_cli("gen -c " + (dir / "task.json").string() + " -o " + (dir / ("gen" + std::string(run))).string());
        codes += run_cli("sweep -c " + (dir / "sweep.json").string() + " --jobs 2 -o " +
                         (dir / ("sweep" + std::string(run))).string());
    }
    std::size_t compared = 0, differing = 0;
    for (const std::string& kind : {"gen", "sweep"}) {
        for (const auto& e : fs::recursive_directory_iterator(dir / (kind + "1"))) {
            const auto ext = e.path().extension();
            if (!e.is_regular_file() || (ext != ".csv" && ext != ".json"))
                continue;
            const fs::path other = dir / (kind + "2") / fs::relative(e.path(), dir / (kind + "1"));
            ++compared;
            if (slurp(e.path()) != slurp(other))
                ++differing;
        }
    }
    report(12, codes == 0 && compared > 0 && differing == 0,
           std::to_string(compared) + " CSV/JSON artifacts compared, " + std::to_string(differing) +
               " differ, exit codes " + (codes == 0 ? "all 0" : "nonzero"));
}

} // namespace

int main(int argc, char** argv)
{
    // --quick skips the desk-scale sweeps (criteria 9-11)
    const bool quick = argc > 1 && std::string(argv[1]) == "--quick";
    criterion_gradients();
    criterion_conversion();
    criterion_identity();
    criterion_param_norm();
    criterion_matern();
    criterion_entropy();
    criterion_hand_values();
    criterion_rates();
    if (!quick)
        criteria_scaling();
    criterion_determinism();
    std::cout << (hard_failures == 0 ? "ALL HARD CRITERIA PASS" : std::to_string(hard_failures) + " HARD FAILURE(S)")
              << std::endl;
    return hard_failures == 0 ? 0 : 1;
}
