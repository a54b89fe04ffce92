#pragma once

#include <accnet/error.hpp>
#include <accnet/model.hpp>
#include <accnet/numerics.hpp>
#include <accnet/rng.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <vector>

namespace accnet {

/// C = sum_i ||W_{.i}|| * sqrt(||V_{i.}||^2 + b_i^2), an upper bound on the
/// F1-norm of the block.
inline double f1_upper_bound(const ShallowBlock& block)
{
    double c = 0.0;
    for (Eigen::Index i = 0; i < block.width(); ++i)
        c += block.w_out.col(i).norm() * std::sqrt(block.v_in.row(i).squaredNorm() + block.bias[i] * block.bias[i]);
    return c;
}

/// ||W||_op * ||V||_op
inline double lip_upper_bound(const ShallowBlock& block) { return op_norm(block.w_out) * op_norm(block.v_in); }

enum class LipMode { Upper, Empirical };

struct LipProbeConfig {
    int n_probes = 4096;
    double radius = 1.0; ///< probe centres are drawn uniformly from B(0, radius)
    double step = 1e-4;  ///< distance between the two points of a probe
    std::uint64_t seed = 0;
};

namespace detail {

/// Columns uniformly distributed in the ball B(0, radius) of R^d.
inline Matrix uniform_ball(Eigen::Index d, Eigen::Index n, double radius, RngStream& rng)
{
    Matrix x(d, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double norm2 = 0.0;
        do {
            for (Eigen::Index i = 0; i < d; ++i)
                x(i, j) = rng.normal();
            norm2 = x.col(j).squaredNorm();
        } while (norm2 == 0.0);
        const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
        x.col(j) *= r / std::sqrt(norm2);
    }
    return x;
}

// max_j ||f(x_j) - f(y_j)|| / ||x_j - y_j|| for y_j = x_j + step * u_j.
template <typename F>
double max_difference_ratio(const F& f, const Matrix& centres, double step, RngStream& rng)
{
    const Eigen::Index d = centres.rows();
    const Eigen::Index n = centres.cols();
    Matrix dirs = uniform_ball(d, n, 1.0, rng);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double nn = dirs.col(j).norm();
        dirs.col(j) /= nn;
    }
    const Matrix other = centres + step * dirs;
    const Matrix fx = f(centres);
    const Matrix fy = f(other);
    double best = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double dx = (other.col(j) - centres.col(j)).norm();
        if (dx > 0.0)
            best = std::max(best, (fy.col(j) - fx.col(j)).norm() / dx);
    }
    return best;
}

} // namespace detail

/// Finite-difference lower estimate of the Lipschitz constant of a block or
/// net over B(0, radius).
template <typename Model>
double lip_empirical(const Model& model, int n_probes, RngStream rng, double radius = 1.0, double step = 1e-4)
{
    if (n_probes < 1)
        throw ConfigError("lip_empirical: n_probes must be >= 1");
    const Matrix centres = detail::uniform_ball(model.d_in(), n_probes, radius, rng);
    return detail::max_difference_ratio([&model](const Matrix& x) { return Matrix(model.forward(x)); }, centres, step,
                                        rng);
}

/// Per-block Lipschitz estimates. In empirical mode block l is probed around
/// the images f_{l-1:1}(x) of points x drawn from B(0, radius).
inline std::vector<double> block_lipschitz(const AccNet& net, LipMode mode, const LipProbeConfig& probes = {})
{
    std::vector<double> rho;
    if (mode == LipMode::Upper) {
        for (const auto& b : net.blocks())
            rho.push_back(lip_upper_bound(b));
        return rho;
    }
    if (probes.n_probes < 1)
        throw ConfigError("lip_empirical: n_probes must be >= 1");
    RngStream rng(probes.seed, hash_key(0x6c6970ULL));
    Matrix centres = detail::uniform_ball(net.d_in(), probes.n_probes, probes.radius, rng);
    for (const auto& b : net.blocks()) {
        rho.push_back(detail::max_difference_ratio([&b](const Matrix& x) { return b.forward(x); }, centres,
                                                   probes.step, rng));
        centres = b.forward(centres);
    }
    return rho;
}

namespace detail {

// sum_l (R_l / rho_l) sqrt(d_l + d_{l-1}); nullopt if some rho_l == 0 while R_l != 0.
inline std::optional<double> ratio_sum(const std::vector<double>& f1, const std::vector<double>& rho,
                                       const std::vector<Eigen::Index>& dims)
{
    double s = 0.0;
    for (std::size_t l = 0; l < f1.size(); ++l) {
        const double width_term = std::sqrt(static_cast<double>(dims[l] + dims[l + 1]));
        if (rho[l] == 0.0) {
            if (f1[l] != 0.0)
                return std::nullopt;
            continue;
        }
        s += f1[l] / rho[l] * width_term;
    }
    return s;
}

inline bool all_zero(const std::vector<double>& v)
{
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

inline std::vector<double> block_f1(const AccNet& net)
{
    std::vector<double> f1;
    for (const auto& b : net.blocks())
        f1.push_back(f1_upper_bound(b));
    return f1;
}

} // namespace detail

/// R(theta) = prod_l rho_l * sum_l (R_l / rho_l) sqrt(d_l + d_{l-1}) for given
/// per-block F1 bounds R_l and Lipschitz values rho_l.
inline double r_theta_from(const std::vector<double>& f1, const std::vector<double>& rho,
                           const std::vector<Eigen::Index>& dims)
{
    const bool any_zero_rho = std::any_of(rho.begin(), rho.end(), [](double r) { return r == 0.0; });
    if (any_zero_rho) {
        if (detail::all_zero(f1))
            return 0.0;
        throw NumericError("r_theta: a block has zero Lipschitz constant but nonzero F1 bound");
    }
    double product = 1.0;
    for (double r : rho)
        product *= r;
    return product * *detail::ratio_sum(f1, rho, dims);
}

inline double r_theta(const AccNet& net, LipMode mode = LipMode::Upper, const LipProbeConfig& probes = {})
{
    return r_theta_from(detail::block_f1(net), block_lipschitz(net, mode, probes), net.dims());
}

/// R(theta) with rho_l = ||W_l||_op ||V_l||_op, evaluated in the expanded form
/// sum_l R_l sqrt(d_l + d_{l-1}) prod_{k != l} rho_k.
inline double r_tilde(const AccNet& net)
{
    const auto f1 = detail::block_f1(net);
    const auto rho = block_lipschitz(net, LipMode::Upper);
    const auto dims = net.dims();
    if (detail::all_zero(f1))
        return 0.0;
    if (std::any_of(rho.begin(), rho.end(), [](double r) { return r == 0.0; }))
        throw NumericError("r_tilde: a block has zero Lipschitz constant but nonzero F1 bound");
    double total = 0.0;
    for (std::size_t l = 0; l < f1.size(); ++l) {
        double term = f1[l] * std::sqrt(static_cast<double>(dims[l] + dims[l + 1]));
        for (std::size_t k = 0; k < rho.size(); ++k)
            if (k != l)
                term *= rho[k];
        total += term;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Generalization bound

/// s_0 = sum_{k>=1} sqrt(k) 2^{-k}
inline double chaining_s0()
{
    double s = 0.0;
    for (int k = 1; k <= 200; ++k)
        s += std::sqrt(static_cast<double>(k)) * std::ldexp(1.0, -k);
    return s;
}

struct BoundConfig {
    double input_radius_b = 1.0;
    double loss_lipschitz_rho = 1.0;
    double loss_bound_c0 = 1.0;
    double delta = 0.05;
    std::size_t n_samples = 2;
    LipMode lip = LipMode::Upper;
    LipProbeConfig probes{};
    /// When set, the Rademacher term is bare_constant * rho_{L:1} * b * S * log N / sqrt N
    /// instead of the explicit chaining expression.
    std::optional<double> bare_constant;

    void validate() const
    {
        if (!(input_radius_b > 0.0))
            throw ConfigError("bound.input_radius_b must be > 0");
        if (!(loss_lipschitz_rho > 0.0))
            throw ConfigError("bound.loss_lipschitz_rho must be > 0");
        if (!(loss_bound_c0 > 0.0))
            throw ConfigError("bound.loss_bound_c0 must be > 0");
        if (!(delta > 0.0 && delta < 1.0))
            throw ConfigError("bound.delta must lie in (0, 1)");
        if (n_samples < 2)
            throw ConfigError("bound.n_samples must be >= 2");
    }
};

/// c_0 sqrt(2 log(2/delta) / N)
inline double confidence_term(const BoundConfig& cfg)
{
    return cfg.loss_bound_c0 * std::sqrt(2.0 * std::log(2.0 / cfg.delta) / static_cast<double>(cfg.n_samples));
}

struct ChainingTerm {
    double rademacher = 0.0; ///< bound on the Rademacher complexity of the network class
    int depth = 0;           ///< number of dyadic scales M (0 when the class is trivial)
};

/// Explicit chaining evaluation for ratio sum S and Lipschitz product P:
/// M = max(1, ceil(-log2(72 s0 sqrt(e) S / sqrt N))),
/// rademacher = 144 M s0 sqrt(e) P b S / sqrt N.
inline ChainingTerm chaining_rademacher(double ratio_sum, double lip_product, double radius, std::size_t n)
{
    if (ratio_sum == 0.0 || lip_product == 0.0)
        return {};
    const double s0 = chaining_s0();
    const double root_n = std::sqrt(static_cast<double>(n));
    const double scale = 72.0 / root_n * s0 * std::sqrt(std::numbers::e) * ratio_sum;
    const int depth = std::max(1, static_cast<int>(std::ceil(-std::log2(scale))));
    const double rad = 144.0 / root_n * depth * s0 * std::sqrt(std::numbers::e) * lip_product * radius * ratio_sum;
    return {rad, depth};
}

struct BlockComplexity {
    double f1_bound = 0.0;
    double lip_bound = 0.0;
    Eigen::Index d_in = 0;
    Eigen::Index d_out = 0;
};

struct ComplexityReport {
    std::vector<BlockComplexity> per_block;
    double r_theta = 0.0;
    double r_tilde = 0.0;
    double ratio_sum = 0.0;   ///< sum_l (R_l / rho_l) sqrt(d_l + d_{l-1})
    double lip_product = 0.0; ///< prod_l rho_l
    double rademacher = 0.0;
    int chaining_depth = 0;
    double confidence = 0.0;
    double thm2_bound = 0.0;
};

/// Generalization-gap bound for the class of AccNets whose blocks have F1
/// norm <= R_l and Lipschitz constant <= rho_l:
/// rho * 2 * rademacher + c0 sqrt(2 log(2/delta) / N).
inline ComplexityReport complexity_report(const AccNet& net, const BoundConfig& cfg)
{
    cfg.validate();
    ComplexityReport rep;
    const auto f1 = detail::block_f1(net);
    const auto rho = block_lipschitz(net, cfg.lip, cfg.probes);
    const auto dims = net.dims();
    for (std::size_t l = 0; l < f1.size(); ++l)
        rep.per_block.push_back({f1[l], rho[l], dims[l], dims[l + 1]});

    const auto sum = detail::ratio_sum(f1, rho, dims);
    if (!sum)
        throw NumericError("thm2_bound: a block has zero Lipschitz constant but nonzero F1 bound");
    rep.ratio_sum = *sum;
    rep.lip_product = 1.0;
    for (double r : rho)
        rep.lip_product *= r;
    rep.r_theta = r_theta_from(f1, rho, dims);
    rep.r_tilde = cfg.lip == LipMode::Upper ? rep.r_theta : r_tilde(net);

    if (cfg.bare_constant) {
        const double n = static_cast<double>(cfg.n_samples);
        rep.rademacher = *cfg.bare_constant * rep.lip_product * cfg.input_radius_b * rep.ratio_sum * std::log(n) /
                         std::sqrt(n);
    } else {
        const auto chain = chaining_rademacher(rep.ratio_sum, rep.lip_product, cfg.input_radius_b, cfg.n_samples);
        rep.rademacher = chain.rademacher;
        rep.chaining_depth = chain.depth;
    }
    rep.confidence = confidence_term(cfg);
    rep.thm2_bound = cfg.loss_lipschitz_rho * 2.0 * rep.rademacher + rep.confidence;
    return rep;
}

inline double thm2_bound(const AccNet& net, const BoundConfig& cfg) { return complexity_report(net, cfg).thm2_bound; }

/// Shallow-network bound for a single block, written directly in terms of
/// R sqrt(d_in + d_out) (the Lipschitz constant only enters the number of
/// chaining scales).
inline double thm1_bound(const ShallowBlock& block, const BoundConfig& cfg)
{
    cfg.validate();
    const double r = f1_upper_bound(block);
    const double rho = cfg.lip == LipMode::Upper ? lip_upper_bound(block)
                                                 : lip_empirical(block, cfg.probes.n_probes,
                                                                 RngStream(cfg.probes.seed, hash_key(0x6c6970ULL)),
                                                                 cfg.probes.radius, cfg.probes.step);
    const double width_term = std::sqrt(static_cast<double>(block.d_in() + block.d_out()));
    double rad = 0.0;
    if (r > 0.0) {
        if (rho == 0.0)
            throw NumericError("thm1_bound: zero Lipschitz constant with nonzero F1 bound");
        const double n = static_cast<double>(cfg.n_samples);
        if (cfg.bare_constant) {
            rad = *cfg.bare_constant * cfg.input_radius_b * r * width_term * std::log(n) / std::sqrt(n);
        } else {
            const double k = chaining_s0() * std::sqrt(std::numbers::e) / std::sqrt(n);
            const int depth = std::max(1, static_cast<int>(std::ceil(-std::log2(72.0 * k * r / rho * width_term))));
            rad = 144.0 * k * depth * cfg.input_radius_b * r * width_term;
        }
    }
    return cfg.loss_lipschitz_rho * 2.0 * rad + confidence_term(cfg);
}

// ---------------------------------------------------------------------------
// Rank estimation

/// Number of singular values >= rel_tol * s_max. Without rel_tol the split is
/// placed at the largest ratio s_i / s_{i+1} among the numerically nonzero
/// values if it exceeds 10, otherwise rel_tol = 1e-2 is used. Values below
/// s_max * max(rows, cols) * machine epsilon count as zero.
inline Eigen::Index rank_estimate(const Matrix& m, std::optional<double> rel_tol = std::nullopt)
{
    const Vector s = svd(m).s;
    if (s.size() == 0 || s[0] == 0.0)
        return 0;
    const double floor =
        s[0] * static_cast<double>(std::max(m.rows(), m.cols())) * std::numeric_limits<double>::epsilon();
    Eigen::Index nonzero = 0;
    while (nonzero < s.size() && s[nonzero] > floor)
        ++nonzero;
    if (!rel_tol) {
        double best_ratio = 0.0;
        Eigen::Index split = 0;
        for (Eigen::Index i = 0; i + 1 < nonzero; ++i) {
            const double ratio = s[i] / s[i + 1];
            if (ratio > best_ratio) {
                best_ratio = ratio;
                split = i + 1;
            }
        }
        if (best_ratio > 10.0)
            return split;
        rel_tol = 1e-2;
    }
    Eigen::Index count = 0;
    for (Eigen::Index i = 0; i < nonzero; ++i)
        if (s[i] >= *rel_tol * s[0])
            ++count;
    return count;
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::ordered_json to_json(const ComplexityReport& rep)
{
    nlohmann::ordered_json j;
    j["per_block"] = nlohmann::ordered_json::array();
    for (const auto& b : rep.per_block)
        j["per_block"].push_back(
            {{"f1_bound", b.f1_bound}, {"lip_bound", b.lip_bound}, {"d_in", b.d_in}, {"d_out", b.d_out}});
    j["r_theta"] = rep.r_theta;
    j["r_tilde"] = rep.r_tilde;
    j["ratio_sum"] = rep.ratio_sum;
    j["lip_product"] = rep.lip_product;
    j["rademacher"] = rep.rademacher;
    j["chaining_depth"] = rep.chaining_depth;
    j["confidence_term"] = rep.confidence;
    j["thm2_bound"] = rep.thm2_bound;
    return j;
}

inline void print_table(std::ostream& out, const ComplexityReport& rep)
{
    out << std::setw(6) << "block" << std::setw(8) << "d_in" << std::setw(8) << "d_out" << std::setw(16) << "F1 bound"
        << std::setw(16) << "Lip bound" << '\n';
    for (std::size_t l = 0; l < rep.per_block.size(); ++l) {
        const auto& b = rep.per_block[l];
        out << std::setw(6) << l << std::setw(8) << b.d_in << std::setw(8) << b.d_out << std::setw(16)
            << std::setprecision(6) << b.f1_bound << std::setw(16) << b.lip_bound << '\n';
    }
    out << "R(theta)      " << rep.r_theta << '\n'
        << "R~(theta)     " << rep.r_tilde << '\n'
        << "chaining M    " << rep.chaining_depth << '\n'
        << "bound         " << rep.thm2_bound << '\n';
}

} // namespace accnet
