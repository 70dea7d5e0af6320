#pragma once

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "riempat/covariance.hpp"
#include "riempat/evaluation.hpp"
#include "riempat/patterns.hpp"

namespace riempat::simulation {

using manifold::Matrix;
using manifold::SymmetricMatrix;
using manifold::Vector;

enum class CovMode { direct, time_series };

/// Knobs of the generative model: targets are a log-linear readout of the
/// latent source powers with additive noise sigma, and pattern noise alpha
/// perturbs the mixing matrix per observation.
struct SimulationParams {
    int n_channels = 5;
    int n_sources = 1;  ///< encoding sources; the remaining dimensions are noise
    int n_obs = 1000;
    Vector weights = Vector::Ones(1);
    double bias = 0.0;
    double target_noise_sigma = 0.0;
    double pattern_noise_alpha = 0.0;
    std::uint64_t seed = 0;
    CovMode mode = CovMode::direct;
    int n_samples = 200;          ///< T, time-series mode only
    double mixing_scale = 1.0;    ///< stddev of the mixing log entries
    bool center_windows = false;  ///< remove channel means before covariances (time-series mode)

    void validate() const {
        if (n_channels < 1) throw contract_error("SimulationParams: n_channels must be >= 1");
        if (n_sources < 1 || n_sources > n_channels) {
            throw contract_error("SimulationParams: need 1 <= n_sources <= n_channels");
        }
        if (n_obs < 1) throw contract_error("SimulationParams: n_obs must be >= 1");
        if (weights.size() != n_sources) throw contract_error("SimulationParams: weights length must equal n_sources");
        if (!(target_noise_sigma >= 0.0) || !(pattern_noise_alpha >= 0.0)) {
            throw contract_error("SimulationParams: noise levels must be >= 0");
        }
        if (!(mixing_scale >= 0.0)) throw contract_error("SimulationParams: mixing_scale must be >= 0");
        if (mode == CovMode::time_series && n_samples < 1) {
            throw contract_error("SimulationParams: n_samples must be >= 1 in time-series mode");
        }
    }
};

/// Random invertible mixing A = exp(B) with B entries i.i.d. N(0, stddev^2).
inline Matrix gen_mixing(int p, std::mt19937_64& rng, double stddev = 1.0) {
    if (p < 1) throw contract_error("gen_mixing: dimension must be >= 1");
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix b(p, p);
    for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) b(i, j) = stddev * normal(rng);
    }
    return b.exp();
}

/// Draw a dataset from the generative model. Covariances in direct mode are
/// A_i E_i A_i^T with per-observation mixing A_i = A + N_i; a 1e-10 ridge is
/// added whenever pattern noise pushes a matrix out of the SPD cone (the count
/// is reported through the optional out-parameter).
inline CovarianceDataset gen_dataset(const SimulationParams& params, long* ridge_count = nullptr) {
    params.validate();
    const int p = params.n_channels;
    const int q = params.n_sources;
    std::mt19937_64 rng(params.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    const Matrix mixing = gen_mixing(p, rng, params.mixing_scale);

    std::vector<SymmetricMatrix> covs;
    covs.reserve(static_cast<std::size_t>(params.n_obs));
    Vector targets(params.n_obs);
    for (int i = 0; i < params.n_obs; ++i) {
        Vector log_powers(p);
        for (int j = 0; j < p; ++j) log_powers[j] = normal(rng);

        Matrix mixing_i = mixing;
        if (params.pattern_noise_alpha > 0.0) {
            for (int r = 0; r < p; ++r) {
                for (int c = 0; c < p; ++c) mixing_i(r, c) += params.pattern_noise_alpha * normal(rng);
            }
        }

        Matrix cov;
        if (params.mode == CovMode::direct) {
            cov = mixing_i * log_powers.array().exp().matrix().asDiagonal() * mixing_i.transpose();
        } else {
            Matrix latent(p, params.n_samples);
            for (int j = 0; j < p; ++j) {
                const double scale = std::exp(0.5 * log_powers[j]);
                for (int t = 0; t < params.n_samples; ++t) latent(j, t) = scale * normal(rng);
            }
            Matrix window = mixing_i * latent;
            if (params.center_windows) window.colwise() -= window.rowwise().mean().eval();
            cov = (window * window.transpose()) / static_cast<double>(params.n_samples);
        }
        cov = manifold::detail::symmetrized(cov);

        Eigen::SelfAdjointEigenSolver<Matrix> check(cov, Eigen::EigenvaluesOnly);
        const double smallest = check.eigenvalues().minCoeff();
        if (smallest <= 1e-10) {
            cov.diagonal().array() += 1e-10 - std::min(smallest, 0.0) + 1e-10;
            if (ridge_count) ++(*ridge_count);
        }
        covs.emplace_back(std::move(cov));

        double y = params.bias;
        for (int j = 0; j < q; ++j) y += params.weights[j] * log_powers[j];
        if (params.target_noise_sigma > 0.0) y += params.target_noise_sigma * normal(rng);
        targets[i] = y;
    }

    GroundTruth truth;
    truth.mixing = mixing;
    truth.weights = params.weights;
    truth.bias = params.bias;
    truth.n_sources = q;
    return CovarianceDataset(p, 1, std::move(covs), std::move(targets), TargetKind::continuous, std::nullopt,
                             truth);
}

enum class SweepAxis { target_noise, pattern_noise };

inline const char* sweep_axis_name(SweepAxis axis) {
    return axis == SweepAxis::target_noise ? "target_noise" : "pattern_noise";
}

/// One (grid point, method, fold, seed) result row.
struct SweepCell {
    std::string method;
    SweepAxis axis = SweepAxis::target_noise;
    double value = 0.0;
    std::uint64_t seed = 0;
    int fold = 0;
    double normalized_mae = std::numeric_limits<double>::quiet_NaN();
    double pattern_distance = std::numeric_limits<double>::quiet_NaN();
    std::string status = "ok";
};

struct SweepConfig {
    SimulationParams base;
    SweepAxis axis = SweepAxis::target_noise;
    std::vector<double> grid = {0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0};
    std::vector<std::string> methods = {"riemann", "spoc", "diag", "dummy"};
    int n_folds = 10;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    int components = -1;  ///< -1: all channels
    int threads = 1;
};

inline std::vector<double> default_grid_for(SweepAxis axis) {
    return axis == SweepAxis::target_noise ? std::vector<double>{0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0}
                                           : std::vector<double>{0.0, 0.125, 0.25, 0.5, 1.0, 2.0};
}

namespace detail {

using patterns::detail::mix_seed;

inline double top_pattern_distance(const pipelines::FittedPipeline& pipe, const CovarianceDataset& train,
                                   const Vector& true_pattern) {
    if (pipe.method == pipelines::Method::riemann) {
        const Matrix features = pipelines::pipeline_features(pipe, train);
        const patterns::PatternSet set = patterns::extract_patterns(pipe, features);
        return patterns::pattern_distance(true_pattern, set.bands.front().patterns.col(0));
    }
    if (pipe.method == pipelines::Method::spoc || pipe.method == pipelines::Method::csp) {
        const patterns::PatternSet set = patterns::component_patterns(pipe, train);
        return patterns::pattern_distance(true_pattern, set.bands.front().patterns.col(0));
    }
    return std::numeric_limits<double>::quiet_NaN();
}

inline void run_sweep_point(const SweepConfig& config, std::uint64_t seed, std::size_t grid_index,
                            std::vector<SweepCell>& out) {
    SimulationParams params = config.base;
    const double value = config.grid[grid_index];
    if (config.axis == SweepAxis::target_noise) {
        params.target_noise_sigma = value;
    } else {
        params.pattern_noise_alpha = value;
    }
    const std::uint64_t axis_tag = config.axis == SweepAxis::target_noise ? 1 : 2;
    params.seed = mix_seed(mix_seed(seed, axis_tag), static_cast<std::uint64_t>(grid_index));

    const CovarianceDataset ds = gen_dataset(params);
    const evaluation::SplitPlan plan =
        evaluation::make_kfold(ds.n_obs(), config.n_folds, mix_seed(params.seed, 0xf01d));
    const Vector true_pattern = ds.truth()->mixing.col(0);

    for (const std::string& method : config.methods) {
        for (int fold = 0; fold < plan.n_folds; ++fold) {
            SweepCell cell;
            cell.method = method;
            cell.axis = config.axis;
            cell.value = value;
            cell.seed = seed;
            cell.fold = fold;
            try {
                const std::vector<int> train_idx = plan.train_indices(fold);
                const std::vector<int> test_idx = plan.test_indices(fold);
                const CovarianceDataset train = ds.subset(train_idx);
                const CovarianceDataset test = ds.subset(test_idx);
                const double train_mean = train.targets().mean();
                if (method == "dummy") {
                    const Vector constant = Vector::Constant(test.n_obs(), train_mean);
                    cell.normalized_mae = evaluation::normalized_mae(test.targets(), constant, train_mean);
                } else {
                    evaluation::MethodSpec spec;
                    spec.method = pipelines::method_from_name(method);
                    spec.components = config.components;
                    spec.head_kind = linmodel::HeadKind::ridge;
                    const pipelines::FittedPipeline pipe =
                        pipelines::fit_pipeline(train, spec.method, spec.components, spec.head_kind, spec.options);
                    const pipelines::Predictions pred = pipelines::pipeline_predict(pipe, test);
                    cell.normalized_mae = evaluation::normalized_mae(test.targets(), pred.values, train_mean);
                    cell.pattern_distance = top_pattern_distance(pipe, train, true_pattern);
                }
            } catch (const error& e) {
                cell.status = std::string("error: ") + e.what();
            }
            out.push_back(std::move(cell));
        }
    }
}

}  // namespace detail

/// Run the full (seed x grid x method x fold) table. Grid points are
/// independent; `threads > 1` distributes them without changing the result.
inline std::vector<SweepCell> run_sweep(const SweepConfig& config) {
    if (config.grid.empty()) throw contract_error("run_sweep: empty grid");
    if (config.seeds.empty()) throw contract_error("run_sweep: need at least one seed");
    if (config.n_folds < 2) throw contract_error("run_sweep: need at least 2 folds");
    for (const std::string& m : config.methods) {
        if (m != "dummy") pipelines::method_from_name(m);  // validates
    }

    struct Task {
        std::uint64_t seed;
        std::size_t grid_index;
    };
    std::vector<Task> tasks;
    for (std::uint64_t seed : config.seeds) {
        for (std::size_t gi = 0; gi < config.grid.size(); ++gi) tasks.push_back({seed, gi});
    }

    std::vector<std::vector<SweepCell>> partial(tasks.size());
    const int threads = std::max(1, config.threads);
    if (threads == 1) {
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            detail::run_sweep_point(config, tasks[t].seed, tasks[t].grid_index, partial[t]);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t t = next.fetch_add(1);
                    if (t >= tasks.size()) return;
                    detail::run_sweep_point(config, tasks[t].seed, tasks[t].grid_index, partial[t]);
                }
            });
        }
        for (auto& worker : pool) worker.join();
    }

    std::vector<SweepCell> out;
    for (auto& chunk : partial) {
        for (auto& cell : chunk) out.push_back(std::move(cell));
    }
    return out;
}

}  // namespace riempat::simulation
