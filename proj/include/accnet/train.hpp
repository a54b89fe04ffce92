#pragma once

#include <accnet/error.hpp>
#include <accnet/model.hpp>
#include <accnet/rng.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace accnet {

enum class Loss { L1, MSE, Hinge };

inline const char* to_string(Loss loss)
{
    switch (loss) {
    case Loss::L1: return "l1";
    case Loss::MSE: return "mse";
    case Loss::Hinge: return "hinge";
    }
    return "?";
}

inline Loss loss_from_string(const std::string& name)
{
    if (name == "l1")
        return Loss::L1;
    if (name == "mse")
        return Loss::MSE;
    if (name == "hinge")
        return Loss::Hinge;
    throw ConfigError("unknown loss '" + name + "' (expected l1, mse or hinge)");
}

/// Decoupled: param -= lr * (adam_update + wd * param).
/// Coupled: wd * param is added to the gradient before the moment updates.
enum class DecayMode { Decoupled, Coupled };

inline const char* to_string(DecayMode m) { return m == DecayMode::Decoupled ? "decoupled" : "coupled"; }

inline DecayMode decay_mode_from_string(const std::string& name)
{
    if (name == "decoupled")
        return DecayMode::Decoupled;
    if (name == "coupled")
        return DecayMode::Coupled;
    throw ConfigError("unknown weight decay mode '" + name + "' (expected decoupled or coupled)");
}

struct Phase {
    int epochs = 1;
    double lr = 1e-3;
    double weight_decay = 0.0;
};

struct TrainConfig {
    std::vector<Phase> phases;
    int batch_count = 5;
    Loss loss = Loss::L1;
    std::uint64_t seed = 0;
    DecayMode decay_mode = DecayMode::Decoupled;
    std::vector<bool> frozen_w_out; ///< per block; empty means every W is trained

    /// Three phases of `epochs_per_phase` epochs each: lr 1.5e-3 / 4e-4 / 1e-4,
    /// weight decay 0 / 0.002 / 0.005, five batches, L1 loss.
    static TrainConfig three_phase(int epochs_per_phase = 1200, std::uint64_t seed = 0)
    {
        return {{{epochs_per_phase, 1.5e-3, 0.0}, {epochs_per_phase, 0.4e-3, 0.002}, {epochs_per_phase, 0.1e-3, 0.005}},
                5,
                Loss::L1,
                seed,
                DecayMode::Decoupled,
                {}};
    }

    int total_epochs() const
    {
        int n = 0;
        for (const auto& p : phases)
            n += p.epochs;
        return n;
    }

    void validate() const
    {
        if (phases.empty())
            throw ConfigError("train: at least one phase is required");
        for (std::size_t i = 0; i < phases.size(); ++i) {
            const auto& p = phases[i];
            const std::string where = "train.phases[" + std::to_string(i) + "]";
            if (p.epochs < 1)
                throw ConfigError(where + ".epochs must be >= 1");
            if (!(p.lr > 0.0))
                throw ConfigError(where + ".lr must be > 0");
            if (!(p.weight_decay >= 0.0))
                throw ConfigError(where + ".weight_decay must be >= 0");
        }
        if (batch_count < 1)
            throw ConfigError("train.batch_count must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Losses. Per-sample losses average over coordinates; batch losses average
// over samples (columns).

inline double loss_l1(const Vector& pred, const Vector& target)
{
    if (pred.size() != target.size())
        throw ConfigError("loss_l1: length mismatch");
    return (pred - target).cwiseAbs().mean();
}

inline double loss_mse(const Vector& pred, const Vector& target)
{
    if (pred.size() != target.size())
        throw ConfigError("loss_mse: length mismatch");
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

/// max{0, 1 - (score[true] - max_{i != true} score[i])}
inline double loss_hinge(const Vector& scores, Eigen::Index true_class)
{
    if (scores.size() < 2)
        throw ConfigError("loss_hinge: need at least two classes");
    if (true_class < 0 || true_class >= scores.size())
        throw ConfigError("loss_hinge: true_class " + std::to_string(true_class) + " out of range");
    double runner_up = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < scores.size(); ++i)
        if (i != true_class)
            runner_up = std::max(runner_up, scores[i]);
    return std::max(0.0, 1.0 - (scores[true_class] - runner_up));
}

namespace detail {

inline Eigen::Index argmax(const Eigen::Ref<const Vector>& v)
{
    Eigen::Index k = 0;
    v.maxCoeff(&k);
    return k;
}

inline Eigen::Index runner_up_index(const Eigen::Ref<const Vector>& scores, Eigen::Index true_class)
{
    Eigen::Index best = true_class == 0 ? 1 : 0;
    for (Eigen::Index i = 0; i < scores.size(); ++i)
        if (i != true_class && scores[i] > scores[best])
            best = i;
    return best;
}

} // namespace detail

/// Mean loss over the columns of `pred`. For Hinge the true class of each
/// column is the argmax of the target column.
inline double batch_loss(Loss loss, const Matrix& pred, const Matrix& target)
{
    const auto n = pred.cols();
    if (n == 0)
        return std::numeric_limits<double>::quiet_NaN();
    double total = 0.0;
    switch (loss) {
    case Loss::L1: total = (pred - target).cwiseAbs().sum() / static_cast<double>(pred.rows()); break;
    case Loss::MSE: total = (pred - target).squaredNorm() / static_cast<double>(pred.rows()); break;
    case Loss::Hinge:
        for (Eigen::Index j = 0; j < n; ++j)
            total += loss_hinge(pred.col(j), detail::argmax(target.col(j)));
        break;
    }
    return total / static_cast<double>(n);
}

/// d batch_loss / d pred, subgradient 0 at kinks.
inline Matrix batch_loss_gradient(Loss loss, const Matrix& pred, const Matrix& target)
{
    const double n = static_cast<double>(pred.cols());
    const double d = static_cast<double>(pred.rows());
    Matrix g = Matrix::Zero(pred.rows(), pred.cols());
    switch (loss) {
    case Loss::L1:
        g = (pred - target).unaryExpr([](double r) { return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0); }) / (d * n);
        break;
    case Loss::MSE: g = 2.0 * (pred - target) / (d * n); break;
    case Loss::Hinge:
        for (Eigen::Index j = 0; j < pred.cols(); ++j) {
            const auto t = detail::argmax(target.col(j));
            const auto r = detail::runner_up_index(pred.col(j), t);
            if (1.0 - (pred(t, j) - pred(r, j)) > 0.0) {
                g(t, j) = -1.0 / n;
                g(r, j) = 1.0 / n;
            }
        }
        break;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Reverse mode

struct BlockGrad {
    Matrix dw; ///< same shape as w_out
    Matrix dv; ///< same shape as v_in
    Vector db; ///< same shape as bias
};

using GradientSet = std::vector<BlockGrad>;

inline GradientSet zero_gradients(const AccNet& net)
{
    GradientSet g;
    for (const auto& b : net.blocks())
        g.push_back({Matrix::Zero(b.w_out.rows(), b.w_out.cols()), Matrix::Zero(b.v_in.rows(), b.v_in.cols()),
                     Vector::Zero(b.bias.size())});
    return g;
}

/// Gradient of sum_j <upstream_j, net(x_j)> with respect to every parameter.
/// Columns of `x` and `upstream` are samples.
inline GradientSet backward(const AccNet& net, const Matrix& x, const Matrix& upstream)
{
    if (x.rows() != net.d_in() || upstream.rows() != net.d_out() || x.cols() != upstream.cols())
        throw ConfigError("backward: shape mismatch");
    const auto& blocks = net.blocks();
    const std::size_t depth = blocks.size();

    std::vector<Matrix> inputs(depth), pre(depth), hidden(depth);
    Matrix z = x;
    for (std::size_t l = 0; l < depth; ++l) {
        inputs[l] = z;
        pre[l] = blocks[l].v_in * z;
        pre[l].colwise() += blocks[l].bias;
        hidden[l] = relu(pre[l]);
        z = blocks[l].w_out * hidden[l];
    }

    GradientSet grads(depth);
    Matrix g = upstream;
    for (std::size_t l = depth; l-- > 0;) {
        const auto& b = blocks[l];
        grads[l].dw = g * hidden[l].transpose();
        Matrix g_pre = (b.w_out.transpose() * g).cwiseProduct((pre[l].array() > 0.0).cast<double>().matrix());
        grads[l].dv = g_pre * inputs[l].transpose();
        grads[l].db = g_pre.rowwise().sum();
        if (l > 0)
            g = b.v_in.transpose() * g_pre;
    }
    return grads;
}

inline GradientSet backward(const AccNet& net, const Vector& x, const Vector& upstream)
{
    return backward(net, Matrix(x), Matrix(upstream));
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay

struct AdamState {
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    GradientSet m;
    GradientSet v;
    long step = 0;

    static AdamState zeros_like(const AccNet& net) { return {zero_gradients(net), zero_gradients(net), 0}; }
};

namespace detail {

template <typename P>
void adam_update(P& param, const P& raw_grad, P& m, P& v, double lr, double wd, DecayMode mode, double c1,
                 double c2)
{
    constexpr double b1 = AdamState::beta1, b2 = AdamState::beta2, eps = AdamState::eps;
    const P grad = mode == DecayMode::Coupled ? P(raw_grad + wd * param) : raw_grad;
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    const P update = ((m.array() / c1) / ((v.array() / c2).sqrt() + eps)).matrix();
    if (mode == DecayMode::Decoupled)
        param -= lr * (update + wd * param);
    else
        param -= lr * update;
}

} // namespace detail

/// param <- param - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * param)
/// in decoupled mode. Blocks flagged in `frozen_w_out` keep their W.
inline void adam_step(std::vector<ShallowBlock>& params, const GradientSet& grads, AdamState& state, double lr,
                      double weight_decay, DecayMode mode = DecayMode::Decoupled,
                      const std::vector<bool>& frozen_w_out = {})
{
    if (grads.size() != params.size() || state.m.size() != params.size())
        throw ConfigError("adam_step: gradient/state shape mismatch");
    ++state.step;
    const double c1 = 1.0 - std::pow(AdamState::beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(AdamState::beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < params.size(); ++l) {
        if (l >= frozen_w_out.size() || !frozen_w_out[l])
            detail::adam_update(params[l].w_out, grads[l].dw, state.m[l].dw, state.v[l].dw, lr, weight_decay, mode, c1,
                                c2);
        detail::adam_update(params[l].v_in, grads[l].dv, state.m[l].dv, state.v[l].dv, lr, weight_decay, mode, c1, c2);
        detail::adam_update(params[l].bias, grads[l].db, state.m[l].db, state.v[l].db, lr, weight_decay, mode, c1, c2);
    }
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
    int epoch;
    int phase;
    double train_loss;
    double test_loss;
    double param_norm;
};

using TrainHistory = std::vector<EpochRecord>;

struct TrainResult {
    AccNet net;
    TrainHistory history;
};

class TrainingAborted : public NumericError {
public:
    TrainingAborted(int epoch, double last_finite_loss)
        : NumericError("training aborted: non-finite loss at epoch " + std::to_string(epoch) +
                       " (last finite loss " + std::to_string(last_finite_loss) + ")"),
          epoch(epoch), last_finite_loss(last_finite_loss)
    {
    }

    int epoch;
    double last_finite_loss;
};

/// Runs the phases in order. Samples are columns; each epoch the training set
/// is reshuffled and split into `batch_count` parts, the remainder going to
/// the last part. Parameters (biases included) are updated by adam_step.
inline TrainResult train(const AccNet& init, const Matrix& x_train, const Matrix& y_train, const Matrix& x_test,
                         const Matrix& y_test, const TrainConfig& cfg)
{
    cfg.validate();
    if (x_train.rows() != init.d_in() || y_train.rows() != init.d_out() || x_train.cols() != y_train.cols())
        throw ConfigError("train: data dimensions do not match the network");
    if (x_train.cols() == 0)
        throw ConfigError("train: empty training set");
    if (x_test.cols() != y_test.cols() || (x_test.cols() > 0 && (x_test.rows() != init.d_in() || y_test.rows() != init.d_out())))
        throw ConfigError("train: test data dimensions do not match the network");

    const Eigen::Index n = x_train.cols();
    const Eigen::Index batches = std::min<Eigen::Index>(cfg.batch_count, n);
    const Eigen::Index batch_size = n / batches;

    std::vector<ShallowBlock> params = init.blocks();
    AdamState state = AdamState::zeros_like(init);
    RngStream rng(cfg.seed, hash_key(0x7261696eULL));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    TrainHistory history;
    history.reserve(static_cast<std::size_t>(cfg.total_epochs()));
    double last_finite = std::numeric_limits<double>::quiet_NaN();
    int epoch = 0;
    Matrix xb, yb;
    for (std::size_t ph = 0; ph < cfg.phases.size(); ++ph) {
        const Phase& phase = cfg.phases[ph];
        for (int e = 0; e < phase.epochs; ++e, ++epoch) {
            rng.shuffle(std::span<Eigen::Index>(order));
            for (Eigen::Index b = 0; b < batches; ++b) {
                const Eigen::Index lo = b * batch_size;
                const Eigen::Index hi = b + 1 == batches ? n : lo + batch_size;
                xb.resize(x_train.rows(), hi - lo);
                yb.resize(y_train.rows(), hi - lo);
                for (Eigen::Index j = lo; j < hi; ++j) {
                    xb.col(j - lo) = x_train.col(order[static_cast<std::size_t>(j)]);
                    yb.col(j - lo) = y_train.col(order[static_cast<std::size_t>(j)]);
                }
                const AccNet current(params);
                const Matrix pred = current.forward(xb);
                const Matrix upstream = batch_loss_gradient(cfg.loss, pred, yb);
                if (!upstream.allFinite() || !pred.allFinite())
                    throw TrainingAborted(epoch, last_finite);
                adam_step(params, backward(current, xb, upstream), state, phase.lr, phase.weight_decay,
                          cfg.decay_mode, cfg.frozen_w_out);
            }
            const AccNet current(params);
            const double train_loss = batch_loss(cfg.loss, current.forward(x_train), y_train);
            if (!std::isfinite(train_loss))
                throw TrainingAborted(epoch, last_finite);
            last_finite = train_loss;
            const double test_loss = x_test.cols() > 0 ? batch_loss(cfg.loss, current.forward(x_test), y_test)
                                                       : std::numeric_limits<double>::quiet_NaN();
            history.push_back({epoch, static_cast<int>(ph), train_loss, test_loss, current.param_norm()});
        }
    }
    return {AccNet(std::move(params)), std::move(history)};
}

/// CSV with header epoch,phase,train_loss,test_loss,param_norm.
inline void write_history_csv(std::ostream& out, const TrainHistory& history)
{
    const auto old_precision = out.precision(17);
    out << "epoch,phase,train_loss,test_loss,param_norm\n";
    for (const auto& r : history)
        out << r.epoch << ',' << r.phase << ',' << r.train_loss << ',' << r.test_loss << ',' << r.param_norm << '\n';
    out.precision(old_precision);
}

} // namespace accnet
