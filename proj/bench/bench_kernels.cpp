// Timing comparison of the OpenMP kernels against the serial reference
// implementations. Also cross-checks that both paths agree, so a silent
// divergence shows up here as well as in the tests.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include <omp.h>

#include "fedsel/dataset.hpp"
#include "fedsel/detect.hpp"
#include "fedsel/engine.hpp"
#include "fedsel/rng.hpp"
#include "fedsel/strategies.hpp"
#include "reference.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_best_of(int repeats, const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto start = Clock::now();
        fn();
        best = std::min(best, std::chrono::duration<double>(Clock::now() - start).count());
    }
    return best;
}

double max_abs_diff(const fedsel::ModelParams& a, const fedsel::ModelParams& b) {
    double m = 0.0;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        for (std::size_t i = 0; i < a.layers[l].size(); ++i) {
            m = std::max(m, std::abs(a.layers[l][i] - b.layers[l][i]));
        }
    }
    return m;
}

std::vector<fedsel::ClientUpdate> random_updates(int n_clients, std::size_t coords,
                                                 std::uint64_t seed) {
    fedsel::Rng rng(seed);
    std::vector<fedsel::ClientUpdate> updates;
    updates.reserve(static_cast<std::size_t>(n_clients));
    for (int c = 0; c < n_clients; ++c) {
        fedsel::ClientUpdate u;
        u.client_id = c;
        u.num_examples = 100 + rng.uniform_int(0, 100);
        u.params.layers.resize(2);
        u.params.layers[0].resize(coords / 2);
        u.params.layers[1].resize(coords - coords / 2);
        for (auto& layer : u.params.layers) {
            for (double& v : layer) v = rng.normal(0.0, 1.0);
        }
        updates.push_back(std::move(u));
    }
    return updates;
}

void row(const char* name, double serial_s, double parallel_s, double diff) {
    std::printf("%-28s %12.4f %12.4f %9.2fx %12.3g\n", name, serial_s * 1e3, parallel_s * 1e3,
                serial_s / parallel_s, diff);
}

}  // namespace

int main() {
    std::printf("threads available: %d\n\n", omp_get_max_threads());
    std::printf("%-28s %12s %12s %10s %12s\n", "kernel", "serial (ms)", "openmp (ms)", "speedup",
                "max |diff|");

    // Aggregation kernels on large flattened updates.
    {
        const auto updates = random_updates(16, 200000, 42);
        const fedsel::ModelParams global = updates.front().params;

        fedsel::ModelParams out_par, out_ser;
        const fedsel::StrategyConfig median{fedsel::StrategyName::fed_median, {}};
        const double t_par = time_best_of(3, [&] { out_par = aggregate(median, updates, global); });
        const double t_ser = time_best_of(3, [&] { out_ser = fedsel::ref::coordinate_median(updates); });
        row("fed_median", t_ser, t_par, max_abs_diff(out_par, out_ser));

        fedsel::StrategyConfig trimmed{fedsel::StrategyName::fed_trimmed_avg, {}};
        trimmed.params["beta"] = fedsel::ParamValue::real(0.25);
        const double t_par2 = time_best_of(3, [&] { out_par = aggregate(trimmed, updates, global); });
        const double t_ser2 =
            time_best_of(3, [&] { out_ser = fedsel::ref::trimmed_mean(updates, 0.25); });
        row("fed_trimmed_avg(0.25)", t_ser2, t_par2, max_abs_diff(out_par, out_ser));

        fedsel::StrategyConfig krum{fedsel::StrategyName::krum, {}};
        krum.params["num_malicious_clients"] = fedsel::ParamValue::integer(2);
        krum.params["num_clients_to_keep"] = fedsel::ParamValue::integer(4);
        const double t_par3 = time_best_of(3, [&] { out_par = aggregate(krum, updates, global); });
        const double t_ser3 = time_best_of(3, [&] { out_ser = fedsel::ref::krum(updates, 2, 4); });
        row("krum(f=2,m=4)", t_ser3, t_par3, max_abs_diff(out_par, out_ser));
    }

    // Covariance assembly from client moments vs pooled two-pass reference.
    {
        const fedsel::Dataset ds = fedsel::generate_synthetic(4000, 48, 2, 7, 1.0);
        const auto parts = fedsel::partition_iid(ds, 8, 7);

        std::vector<double> cov_par, cov_ser;
        const double t_par = time_best_of(3, [&] {
            std::vector<fedsel::MomentStats> stats(parts.size());
#pragma omp parallel for schedule(dynamic)
            for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(parts.size()); ++i) {
                stats[static_cast<std::size_t>(i)] =
                    fedsel::compute_moments(parts[static_cast<std::size_t>(i)].data);
            }
            fedsel::MomentStats merged = stats.front();
            for (std::size_t i = 1; i < parts.size(); ++i) {
                merged = fedsel::merge_moments(std::move(merged), stats[i]);
            }
            cov_par = fedsel::standardized_covariance(merged);
        });
        const double t_ser =
            time_best_of(3, [&] { cov_ser = fedsel::ref::pooled_standardized_covariance(parts); });
        double diff = 0.0;
        for (std::size_t i = 0; i < cov_par.size(); ++i) {
            diff = std::max(diff, std::abs(cov_par[i] - cov_ser[i]));
        }
        row("covariance assembly", t_ser, t_par, diff);
    }

    // Full federation round loop: parallel clients vs jobs=1.
    {
        const fedsel::Dataset ds = fedsel::generate_synthetic(2000, 20, 2, 11, 1.0);
        const auto parts = fedsel::partition_iid(ds, 8, 11);
        fedsel::RunConfig rc;
        rc.strategy = {fedsel::StrategyName::fed_avg, {}};
        rc.rounds = 5;
        rc.architecture = {20, 32, 2};
        rc.seed = 11;

        fedsel::RunResult res_par, res_ser;
        rc.jobs = omp_get_max_threads();
        const double t_par = time_best_of(2, [&] { res_par = run_federation(rc, parts); });
        rc.jobs = 1;
        const double t_ser = time_best_of(2, [&] { res_ser = run_federation(rc, parts); });
        double diff = 0.0;
        for (std::size_t r = 0; r < res_par.weighted_accuracy.size(); ++r) {
            diff = std::max(diff,
                            std::abs(res_par.weighted_accuracy[r] - res_ser.weighted_accuracy[r]));
        }
        row("federation round loop", t_ser, t_par, diff);
    }

    return 0;
}
