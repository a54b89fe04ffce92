#pragma once

#include <accnet/error.hpp>
#include <accnet/numerics.hpp>
#include <accnet/rng.hpp>

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace accnet {

inline Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

/// One shallow ReLU network x -> w_out * relu(v_in * x + bias).
struct ShallowBlock {
    Matrix w_out; ///< d_out x width
    Matrix v_in;  ///< width x d_in
    Vector bias;  ///< width

    ShallowBlock() = default;
    ShallowBlock(Matrix w, Matrix v, Vector b) : w_out(std::move(w)), v_in(std::move(v)), bias(std::move(b))
    {
        validate();
    }

    Eigen::Index d_in() const { return v_in.cols(); }
    Eigen::Index d_out() const { return w_out.rows(); }
    Eigen::Index width() const { return v_in.rows(); }

    void validate() const
    {
        if (w_out.cols() != v_in.rows() || bias.size() != v_in.rows())
            throw ConfigError("ShallowBlock: inner dimensions disagree (w_out " + shape_string(w_out) +
                              ", v_in " + shape_string(v_in) + ", bias " + std::to_string(bias.size()) + ")");
        require_finite(w_out, "ShallowBlock.w_out");
        require_finite(v_in, "ShallowBlock.v_in");
        require_finite(bias, "ShallowBlock.bias");
    }

    /// Columns of `x` are samples.
    Matrix forward(const Matrix& x) const
    {
        Matrix pre = v_in * x;
        pre.colwise() += bias;
        return w_out * relu(pre);
    }

    Vector forward(const Vector& x) const { return forward(Matrix(x)).col(0); }

    double squared_param_norm() const { return w_out.squaredNorm() + v_in.squaredNorm() + bias.squaredNorm(); }
};

/// Composition of shallow blocks with a consistent dimension chain d_0..d_L.
class AccNet {
public:
    AccNet() = default;

    explicit AccNet(std::vector<ShallowBlock> blocks) : blocks_(std::move(blocks))
    {
        if (blocks_.empty())
            throw ConfigError("AccNet: at least one block is required");
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            blocks_[i].validate();
            if (i > 0 && blocks_[i].d_in() != blocks_[i - 1].d_out())
                throw ConfigError("AccNet: block " + std::to_string(i) + " expects input dimension " +
                                  std::to_string(blocks_[i].d_in()) + " but block " + std::to_string(i - 1) +
                                  " outputs " + std::to_string(blocks_[i - 1].d_out()));
        }
    }

    std::size_t depth() const { return blocks_.size(); }
    const std::vector<ShallowBlock>& blocks() const { return blocks_; }
    const ShallowBlock& block(std::size_t i) const { return blocks_.at(i); }
    Eigen::Index d_in() const { return blocks_.front().d_in(); }
    Eigen::Index d_out() const { return blocks_.back().d_out(); }

    /// d_0, d_1, ..., d_L
    std::vector<Eigen::Index> dims() const
    {
        std::vector<Eigen::Index> d{d_in()};
        for (const auto& b : blocks_)
            d.push_back(b.d_out());
        return d;
    }

    std::vector<Eigen::Index> widths() const
    {
        std::vector<Eigen::Index> w;
        for (const auto& b : blocks_)
            w.push_back(b.width());
        return w;
    }

    /// Columns of `x` are samples.
    Matrix forward(const Matrix& x) const
    {
        if (x.rows() != d_in())
            throw ConfigError("AccNet::forward: block 0 expects input dimension " + std::to_string(d_in()) +
                              ", got " + std::to_string(x.rows()));
        Matrix z = x;
        for (const auto& b : blocks_)
            z = b.forward(z);
        return z;
    }

    Vector forward(const Vector& x) const { return forward(Matrix(x)).col(0); }

    double squared_param_norm() const
    {
        double s = 0.0;
        for (const auto& b : blocks_)
            s += b.squared_param_norm();
        return s;
    }

    double param_norm() const { return std::sqrt(squared_param_norm()); }

private:
    std::vector<ShallowBlock> blocks_;
};

/// Plain fully connected ReLU network:
/// h_1 = relu(M_1 x + b_1), h_k = relu(M_k h_{k-1} + b_k), out = M_{L+1} h_L.
class Fcnn {
public:
    Fcnn(std::vector<Matrix> weights, std::vector<Vector> biases)
        : weights_(std::move(weights)), biases_(std::move(biases))
    {
        if (weights_.size() < 2)
            throw ConfigError("Fcnn: need at least two weight matrices");
        if (biases_.size() + 1 != weights_.size())
            throw ConfigError("Fcnn: expected one bias per hidden layer");
        for (std::size_t k = 0; k < weights_.size(); ++k) {
            require_finite(weights_[k], "Fcnn.weights[" + std::to_string(k) + "]");
            if (k > 0 && weights_[k].cols() != weights_[k - 1].rows())
                throw ConfigError("Fcnn: weight " + std::to_string(k) + " has " + std::to_string(weights_[k].cols()) +
                                  " columns, previous layer outputs " + std::to_string(weights_[k - 1].rows()));
            if (k < biases_.size() && biases_[k].size() != weights_[k].rows())
                throw ConfigError("Fcnn: bias " + std::to_string(k) + " has wrong length");
        }
    }

    const std::vector<Matrix>& weights() const { return weights_; }
    const std::vector<Vector>& biases() const { return biases_; }

    Matrix forward(const Matrix& x) const
    {
        if (x.rows() != weights_.front().cols())
            throw ConfigError("Fcnn::forward: input dimension mismatch");
        Matrix h = x;
        for (std::size_t k = 0; k + 1 < weights_.size(); ++k) {
            Matrix pre = weights_[k] * h;
            pre.colwise() += biases_[k];
            h = relu(pre);
        }
        return weights_.back() * h;
    }

    Vector forward(const Vector& x) const { return forward(Matrix(x)).col(0); }

private:
    std::vector<Matrix> weights_;
    std::vector<Vector> biases_;
};

/// Block with 2d neurons e_i relu(e_i^T x) - e_i relu(-e_i^T x), the exact identity on R^d.
inline ShallowBlock identity_block(Eigen::Index d)
{
    if (d < 1)
        throw ConfigError("identity_block: d must be >= 1");
    Matrix w(d, 2 * d);
    w << Matrix::Identity(d, d), -Matrix::Identity(d, d);
    Matrix v(2 * d, d);
    v << Matrix::Identity(d, d), -Matrix::Identity(d, d);
    return ShallowBlock(std::move(w), std::move(v), Vector::Zero(2 * d));
}

/// M_1 = V_1, M_l = V_l W_{l-1}, M_{L+1} = W_L; biases carry over unchanged.
inline Fcnn accnet_to_fcnn(const AccNet& net)
{
    const auto& blocks = net.blocks();
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    weights.push_back(blocks.front().v_in);
    for (std::size_t l = 1; l < blocks.size(); ++l)
        weights.push_back(blocks[l].v_in * blocks[l - 1].w_out);
    weights.push_back(blocks.back().w_out);
    for (const auto& b : blocks)
        biases.push_back(b.bias);
    return Fcnn(std::move(weights), std::move(biases));
}

/// Split every interior weight matrix M = U S V^T into V_l = U sqrt(S) and
/// W_{l-1} = sqrt(S) V^T, keeping singular values >= rank_tol * s_max (at
/// least one). The squared Frobenius norm of both factors equals the
/// retained nuclear norm.
inline AccNet fcnn_to_accnet(const Fcnn& net, double rank_tol = 1e-8)
{
    const auto& weights = net.weights();
    const auto& biases = net.biases();
    const std::size_t depth = biases.size();

    std::vector<Matrix> v_in(depth), w_out(depth);
    v_in[0] = weights[0];
    w_out[depth - 1] = weights[depth];
    for (std::size_t l = 1; l < depth; ++l) {
        const SvdResult dec = svd(weights[l]);
        Eigen::Index keep = 0;
        const double s_max = dec.s.size() > 0 ? dec.s[0] : 0.0;
        while (keep < dec.s.size() && dec.s[keep] >= rank_tol * s_max && dec.s[keep] > 0.0)
            ++keep;
        keep = std::max<Eigen::Index>(keep, 1);
        const Vector root = dec.s.head(keep).cwiseSqrt();
        v_in[l] = dec.u.leftCols(keep) * root.asDiagonal();
        w_out[l - 1] = root.asDiagonal() * dec.vt.topRows(keep);
    }

    std::vector<ShallowBlock> blocks;
    for (std::size_t l = 0; l < depth; ++l)
        blocks.emplace_back(std::move(w_out[l]), std::move(v_in[l]), biases[l]);
    return AccNet(std::move(blocks));
}

/// Random AccNet through dims d_0..d_L with the given hidden widths.
/// Entries are uniform in +-1/sqrt(fan_in); biases use the fan-in of v_in.
inline AccNet init_accnet(std::span<const Eigen::Index> dims, std::span<const Eigen::Index> widths, RngStream& rng)
{
    if (dims.size() < 2 || widths.size() + 1 != dims.size())
        throw ConfigError("init_accnet: need L+1 dims and L widths");
    auto fill = [&rng](Eigen::Index rows, Eigen::Index cols, double fan_in) {
        const double a = 1.0 / std::sqrt(fan_in);
        Matrix m(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i)
                m(i, j) = rng.uniform(-a, a);
        return m;
    };
    std::vector<ShallowBlock> blocks;
    for (std::size_t l = 0; l < widths.size(); ++l) {
        if (dims[l] < 1 || dims[l + 1] < 1 || widths[l] < 1)
            throw ConfigError("init_accnet: dimensions and widths must be >= 1");
        const auto din = static_cast<double>(dims[l]);
        Matrix v = fill(widths[l], dims[l], din);
        Vector b = fill(widths[l], 1, din).col(0);
        Matrix w = fill(dims[l + 1], widths[l], static_cast<double>(widths[l]));
        blocks.emplace_back(std::move(w), std::move(v), std::move(b));
    }
    return AccNet(std::move(blocks));
}

} // namespace accnet
