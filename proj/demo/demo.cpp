// Small end-to-end run: generate a compositional task, train a depth-2
// AccNet for a few hundred epochs, then look at its norms, bound and rank.
#include <accnet/complexity.hpp>
#include <accnet/entropy.hpp>
#include <accnet/scaling.hpp>
#include <accnet/taskgen.hpp>
#include <accnet/train.hpp>

#include <iostream>

int main()
{
    using namespace accnet;

    TaskSpec spec;
    spec.d_in = 4;
    spec.d_mid = 1;
    spec.d_out = 2;
    spec.n_total = 600;
    spec.n_test = 200;
    spec.seed = 7;
    const DataSet data = generate(spec);
    std::cout << "generated " << data.rows() << " samples, jitter " << data.jitter_g << " / " << data.jitter_h << "\n";

    RngStream rng(spec.seed, 1);
    const std::vector<Eigen::Index> dims{4, 4, 2}, widths{64, 64};
    const AccNet init = init_accnet(dims, widths, rng);

    TrainConfig cfg = TrainConfig::three_phase(100, 11);
    const TrainResult res =
        train(init, data.train_x_cols(), data.train_y_cols(), data.test_x_cols(), data.test_y_cols(), cfg);
    const auto& last = res.history.back();
    std::cout << "after " << cfg.total_epochs() << " epochs: train L1 " << last.train_loss << ", test L1 "
              << last.test_loss << "\n\n";

    BoundConfig bc;
    bc.n_samples = static_cast<std::size_t>(data.n_train);
    print_table(std::cout, complexity_report(res.net, bc));

    // interior matrix of the equivalent fully-connected net
    const Fcnn fc = accnet_to_fcnn(res.net);
    std::cout << "\ninterior rank estimate " << rank_estimate(fc.weights()[1]) << " (interface dim " << dims[1]
              << ")\n";

    const auto pred = predicted_rate(spec.nu_g, spec.d_in, spec.nu_h, spec.d_mid);
    std::cout << "predicted rate r* = " << pred.r_star << " (" << to_string(pred.regime) << ")\n";

    const EllipsoidSpec ell({1.0, 0.25});
    std::cout << "ellipsoid entropy at eps=0.1: " << ellipsoid_entropy(ell, 0.1) << "\n";
}
