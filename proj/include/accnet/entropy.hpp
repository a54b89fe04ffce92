#pragma once

#include <accnet/error.hpp>
#include <accnet/numerics.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace accnet {

/// eps -> upper bound on log N(F, eps). Must be nonnegative and nonincreasing.
using EntropyFn = std::function<double(double)>;

/// Checks nonnegativity and monotonicity of `fn` on a grid of radii.
inline bool is_valid_entropy_fn(const EntropyFn& fn, std::span<const double> eps_grid)
{
    std::vector<double> grid(eps_grid.begin(), eps_grid.end());
    std::sort(grid.begin(), grid.end());
    double prev = std::numeric_limits<double>::infinity();
    for (double e : grid) {
        const double v = fn(e);
        if (!(v >= 0.0) || v > prev)
            return false;
        prev = v;
    }
    return true;
}

/// Ellipsoid {x : x^T K^{-1} x <= 1} given the eigenvalues of K.
class EllipsoidSpec {
public:
    explicit EllipsoidSpec(std::vector<double> eigenvalues) : lambda_(std::move(eigenvalues))
    {
        if (lambda_.empty())
            throw ConfigError("EllipsoidSpec: at least one eigenvalue is required");
        for (std::size_t i = 0; i < lambda_.size(); ++i) {
            if (!(lambda_[i] > 0.0) || !std::isfinite(lambda_[i]))
                throw ConfigError("EllipsoidSpec: eigenvalues must be positive and finite");
            if (i > 0 && lambda_[i] > lambda_[i - 1])
                throw ConfigError("EllipsoidSpec: eigenvalues must be sorted nonincreasing");
        }
    }

    const std::vector<double>& eigenvalues() const { return lambda_; }
    std::size_t dim() const { return lambda_.size(); }

private:
    std::vector<double> lambda_;
};

/// M_eps = sum over radii sqrt(lambda_i) >= eps of log(sqrt(lambda_i) / eps).
inline double ellipsoid_entropy(const EllipsoidSpec& spec, double eps)
{
    if (!(eps > 0.0))
        throw ConfigError("ellipsoid_entropy: eps must be > 0");
    double m = 0.0;
    for (double lambda : spec.eigenvalues()) {
        const double radius = std::sqrt(lambda);
        if (radius >= eps)
            m += std::log(radius / eps);
    }
    return m;
}

/// Finite-sample stand-in for the asymptotic applicability condition
/// log(sqrt(lambda_1)/eps) = o(M_eps^2 / (k_eps log d)): reports whether
/// log(sqrt(lambda_1)/eps) <= M_eps^2 / (k_eps log d).
inline bool ellipsoid_condition_holds(const EllipsoidSpec& spec, double eps)
{
    const double m = ellipsoid_entropy(spec, eps);
    std::size_t k = 0;
    for (double lambda : spec.eigenvalues())
        if (std::sqrt(lambda) >= eps)
            ++k;
    if (k == 0)
        return true;
    const double log_d = std::log(static_cast<double>(spec.dim()));
    if (log_d == 0.0)
        return true;
    return std::log(std::sqrt(spec.eigenvalues().front()) / eps) <= m * m / (static_cast<double>(k) * log_d);
}

/// Tr K / (2 eps^2), the unit-ball bound under ||w||_K.
inline double ball_entropy_bound(double trace_k, double eps)
{
    if (!(trace_k >= 0.0))
        throw ConfigError("ball_entropy_bound: trace must be >= 0");
    if (!(eps > 0.0))
        throw ConfigError("ball_entropy_bound: eps must be > 0");
    return trace_k / (2.0 * eps * eps);
}

struct LayerEntropy {
    double entropy; ///< log N(F_l, eps_l)
    double eps;     ///< eps_l
};

struct ComposedEntropy {
    double total_eps;
    double total_entropy;
};

/// Covering of F_L o ... o F_1 at radius sum_l rho_{L:l+1} eps_l with log size
/// sum_l entropy_l, where rho_{L:l+1} is the product of the Lipschitz
/// constants of the layers after l (1 for the last layer).
inline ComposedEntropy composition_entropy(std::span<const LayerEntropy> per_layer, std::span<const double> lips)
{
    if (per_layer.size() != lips.size())
        throw ConfigError("composition_entropy: per_layer and lips differ in length");
    ComposedEntropy out{0.0, 0.0};
    double after = 1.0;
    for (std::size_t l = per_layer.size(); l-- > 0;) {
        out.total_eps += after * per_layer[l].eps;
        out.total_entropy += per_layer[l].entropy;
        after *= lips[l];
    }
    return out;
}

/// Log-covering bound of Conv(F) at radius 2 B 2^{-K}:
/// (sqrt(18) sum_{k=1..K} 2^{K-k} sqrt(base(B 2^{-k})))^2.
/// The underlying statement bounds the square root of the entropy; the value
/// returned here is its square.
inline double convex_hull_entropy(const EntropyFn& base, double bound_b, int k_levels)
{
    if (k_levels < 1)
        throw ConfigError("convex_hull_entropy: K must be >= 1");
    if (!(bound_b > 0.0))
        throw ConfigError("convex_hull_entropy: B must be > 0");
    double sum = 0.0;
    for (int k = 1; k <= k_levels; ++k)
        sum += std::ldexp(1.0, k_levels - k) * std::sqrt(base(bound_b * std::ldexp(1.0, -k)));
    const double root = std::sqrt(18.0) * sum;
    return root * root;
}

/// c 2^{-M} + (6c / sqrt N) sum_{k=1..M} 2^{-k} sqrt(base(c 2^{-k}))
inline double dudley_bound(const EntropyFn& base, double c, std::size_t n, int m_levels)
{
    if (!(c > 0.0))
        throw ConfigError("dudley_bound: c must be > 0");
    if (n < 1)
        throw ConfigError("dudley_bound: n must be >= 1");
    if (m_levels < 1)
        throw ConfigError("dudley_bound: M must be >= 1");
    double sum = 0.0;
    for (int k = 1; k <= m_levels; ++k)
        sum += std::ldexp(1.0, -k) * std::sqrt(base(c * std::ldexp(1.0, -k)));
    return c * std::ldexp(1.0, -m_levels) + 6.0 * c / std::sqrt(static_cast<double>(n)) * sum;
}

struct DudleyOptimum {
    int m_levels;
    double value;
};

/// Minimum of dudley_bound over M in [1, max_levels]; the smallest M wins ties.
inline DudleyOptimum dudley_argmin(const EntropyFn& base, double c, std::size_t n, int max_levels = 60)
{
    DudleyOptimum best{1, dudley_bound(base, c, n, 1)};
    for (int m = 2; m <= max_levels; ++m) {
        const double v = dudley_bound(base, c, n, m);
        if (v < best.value)
            best = {m, v};
    }
    return best;
}

/// Size of a greedy eps-net of the columns of `points`: scan in column order,
/// a point that is farther than eps from every centre so far becomes a centre.
/// The centres are pairwise more than eps apart, so the count is at least the
/// eps-covering number of the cloud and at most its eps/2-covering number.
inline std::size_t greedy_cover(const Matrix& points, double eps)
{
    if (!(eps > 0.0))
        throw ConfigError("greedy_cover: eps must be > 0");
    const double eps2 = eps * eps;
    std::vector<Eigen::Index> centres;
    for (Eigen::Index j = 0; j < points.cols(); ++j) {
        bool covered = false;
        for (auto c : centres) {
            if ((points.col(j) - points.col(c)).squaredNorm() <= eps2) {
                covered = true;
                break;
            }
        }
        if (!covered)
            centres.push_back(j);
    }
    return centres.size();
}

/// c0 (R / eps)^{d / nu}
inline double sobolev_entropy_bound(double radius, double eps, double d, double nu, double c0)
{
    if (!(radius > 0.0 && eps > 0.0 && d > 0.0 && nu > 0.0 && c0 > 0.0))
        throw ConfigError("sobolev_entropy_bound: all arguments must be positive");
    return c0 * std::pow(radius / eps, d / nu);
}

} // namespace accnet
