#pragma once

#include <accnet/error.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <string>

namespace accnet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline std::string shape_string(const Matrix& m)
{
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// Throws ConfigError if any entry of `m` is NaN or infinite.
template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const std::string& what)
{
    if (!m.allFinite())
        throw ConfigError(what + ": non-finite entry");
}

struct SvdResult {
    Matrix u;  ///< rows x k, orthonormal columns
    Vector s;  ///< k singular values, nonincreasing
    Matrix vt; ///< k x cols, orthonormal rows
};

/// Thin SVD, k = min(rows, cols).
inline SvdResult svd(const Matrix& m)
{
    require_finite(m, "svd");
    if (m.size() == 0)
        return {Matrix(m.rows(), 0), Vector(0), Matrix(0, m.cols())};
    Eigen::BDCSVD<Matrix> dec(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (dec.info() != Eigen::Success)
        throw NumericError("svd did not converge for matrix of shape " + shape_string(m));
    return {dec.matrixU(), dec.singularValues(), dec.matrixV().transpose()};
}

struct CholeskyFactor {
    Matrix lower;        ///< L with L * L^T = k + jitter * I
    double jitter = 0.0; ///< diagonal shift that was needed
};

/// Cholesky factor of `k + jitter * I`.
///
/// The first attempt uses `jitter0`. On failure the jitter is multiplied by 10
/// (starting from 1e-12 * mean diagonal when `jitter0` is zero) until the
/// factorization succeeds or the jitter exceeds 1e-2 * mean diagonal.
inline CholeskyFactor cholesky_jitter(const Matrix& k, double jitter0 = 0.0)
{
    if (k.rows() != k.cols())
        throw ConfigError("cholesky_jitter: matrix must be square, got " + shape_string(k));
    require_finite(k, "cholesky_jitter");
    if (jitter0 < 0.0)
        throw ConfigError("cholesky_jitter: jitter0 must be nonnegative");
    const Eigen::Index n = k.rows();
    if (n == 0)
        return {Matrix(0, 0), jitter0};

    const double mean_diag = k.diagonal().mean();
    const double scale = mean_diag > 0.0 ? mean_diag : 1.0;
    const double cap = 1e-2 * scale;

    double jitter = jitter0;
    for (;;) {
        Matrix shifted = k;
        shifted.diagonal().array() += jitter;
        Eigen::LLT<Matrix> llt(shifted);
        if (llt.info() == Eigen::Success) {
            Matrix lower = llt.matrixL();
            if (lower.allFinite())
                return {std::move(lower), jitter};
        }
        jitter = jitter > 0.0 ? jitter * 10.0 : 1e-12 * scale;
        if (jitter > cap)
            break;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(k, Eigen::EigenvaluesOnly);
    std::ostringstream msg;
    msg << "cholesky_jitter: jitter cap " << cap << " exceeded for " << shape_string(k)
        << " matrix; smallest eigenvalue estimate " << eig.eigenvalues().minCoeff();
    throw NumericError(msg.str());
}

namespace detail {

struct PowerResult {
    double sigma;
    Vector v; ///< unit right singular vector estimate
};

// Power iteration on m^T m from a given start vector. The stopping rule scales
// the per-step change by the observed contraction rate so that the returned
// value, not just the last increment, is within `tol`.
inline std::optional<PowerResult> power_iterate(const Matrix& m, Vector v, double tol, int max_iter)
{
    v.normalize();
    double sigma = (m * v).norm();
    double prev_change = -1.0;
    for (int it = 0; it < max_iter; ++it) {
        Vector next = m.transpose() * (m * v);
        const double nn = next.norm();
        if (nn == 0.0)
            return PowerResult{0.0, v};
        v = next / nn;
        const double updated = (m * v).norm();
        const double change = std::abs(updated - sigma);
        sigma = updated;
        double rate = prev_change > 0.0 ? change / prev_change : 0.0;
        rate = std::clamp(rate, 0.0, 0.999);
        if (change <= tol * sigma * (1.0 - rate) && it > 0)
            return PowerResult{sigma, v};
        prev_change = change;
    }
    return std::nullopt;
}

} // namespace detail

/// Largest singular value by power iteration on m^T m.
///
/// Starts from the normalized all-ones vector. If that start lies in the null
/// space, index 0 is perturbed by 1e-6. The result is checked by deflation: a
/// second run on m - sigma u v^T must not find anything larger. Falls back to
/// a full SVD when an iteration does not converge in 10000 steps.
inline double op_norm(const Matrix& m, double tol = 1e-8)
{
    require_finite(m, "op_norm");
    if (m.size() == 0 || m.squaredNorm() == 0.0)
        return 0.0;
    constexpr int max_iter = 10000;

    Vector start = Vector::Ones(m.cols());
    if ((m * start).norm() <= 1e-14 * m.norm() * std::sqrt(static_cast<double>(m.cols()))) {
        start[0] += 1e-6;
        if ((m * start).norm() == 0.0)
            return svd(m).s[0];
    }

    Matrix residual = m;
    double best = 0.0;
    const auto rank_cap = std::min(m.rows(), m.cols());
    for (Eigen::Index round = 0; round < rank_cap; ++round) {
        auto top = detail::power_iterate(residual, start, tol, max_iter);
        if (!top)
            return svd(m).s[0];
        if (top->sigma <= best * (1.0 + tol))
            return best;
        best = top->sigma;
        const double remaining = residual.squaredNorm() - best * best;
        if (remaining <= best * best)
            return best;
        const Vector u = residual * top->v / best;
        residual -= best * u * top->v.transpose();
        start = Vector::Ones(m.cols());
        start[0] += 1e-6;
    }
    return best;
}

struct LineFit {
    double slope;
    double intercept;
};

/// Ordinary least squares y = slope * x + intercept.
inline LineFit fit_line(std::span<const double> xs, std::span<const double> ys)
{
    if (xs.size() != ys.size())
        throw ConfigError("fit_line: xs and ys differ in length");
    if (xs.size() < 2)
        throw ConfigError("fit_line: need at least two points");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx == 0.0)
        throw ConfigError("fit_line: all xs are identical");
    const double slope = sxy / sxx;
    return {slope, my - slope * mx};
}

} // namespace accnet
