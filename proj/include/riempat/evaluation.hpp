#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "riempat/pipelines.hpp"

namespace riempat::evaluation {

using manifold::Vector;

enum class SplitScheme { kfold, leave_one_group_out };

/// Assignment of every observation to exactly one fold; folds partition 0..N-1.
struct SplitPlan {
    SplitScheme scheme = SplitScheme::kfold;
    int n = 0;
    int n_folds = 0;
    std::vector<int> fold_of;
    std::uint64_t seed = 0;

    std::vector<int> test_indices(int fold) const {
        std::vector<int> out;
        for (int i = 0; i < n; ++i) {
            if (fold_of[static_cast<std::size_t>(i)] == fold) out.push_back(i);
        }
        return out;
    }

    std::vector<int> train_indices(int fold) const {
        std::vector<int> out;
        for (int i = 0; i < n; ++i) {
            if (fold_of[static_cast<std::size_t>(i)] != fold) out.push_back(i);
        }
        return out;
    }
};

/// Seeded shuffle then chunking as evenly as possible (the first n % k folds
/// get one extra observation).
inline SplitPlan make_kfold(int n, int k, std::uint64_t seed) {
    if (k < 1 || k > n) throw contract_error("make_kfold: require 1 <= k <= n");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    SplitPlan plan;
    plan.scheme = SplitScheme::kfold;
    plan.n = n;
    plan.n_folds = k;
    plan.seed = seed;
    plan.fold_of.assign(static_cast<std::size_t>(n), -1);
    const int base = n / k;
    const int extra = n % k;
    int pos = 0;
    for (int f = 0; f < k; ++f) {
        const int size = base + (f < extra ? 1 : 0);
        for (int j = 0; j < size; ++j) plan.fold_of[static_cast<std::size_t>(order[static_cast<std::size_t>(pos++)])] = f;
    }
    return plan;
}

/// One fold per distinct group label, in first-appearance order.
inline SplitPlan make_leave_one_group_out(const std::vector<std::string>& groups) {
    if (groups.empty()) throw contract_error("make_leave_one_group_out: missing group labels");
    SplitPlan plan;
    plan.scheme = SplitScheme::leave_one_group_out;
    plan.n = static_cast<int>(groups.size());
    plan.fold_of.resize(groups.size());
    std::map<std::string, int> fold_id;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        auto [it, inserted] = fold_id.try_emplace(groups[i], static_cast<int>(fold_id.size()));
        plan.fold_of[i] = it->second;
    }
    plan.n_folds = static_cast<int>(fold_id.size());
    return plan;
}

inline double mae(const Vector& y, const Vector& y_hat) {
    if (y.size() != y_hat.size()) throw shape_error("mae: size mismatch");
    if (y.size() == 0) throw contract_error("mae: empty input");
    return (y - y_hat).cwiseAbs().mean();
}

/// MAE divided by the MAE of the dummy predictor that always outputs the
/// training-target mean.
inline double normalized_mae(const Vector& y, const Vector& y_hat, double y_train_mean) {
    const double raw = mae(y, y_hat);
    const double dummy = (y.array() - y_train_mean).abs().mean();
    if (!(dummy > 0.0)) throw degenerate_error("normalized_mae: dummy MAE is zero (constant targets)");
    return raw / dummy;
}

inline double r_squared(const Vector& y, const Vector& y_hat) {
    if (y.size() != y_hat.size()) throw shape_error("r_squared: size mismatch");
    if (y.size() == 0) throw contract_error("r_squared: empty input");
    const double mean = y.mean();
    const double total = (y.array() - mean).square().sum();
    if (!(total > 0.0)) throw degenerate_error("r_squared: constant targets");
    const double residual = (y - y_hat).squaredNorm();
    return 1.0 - residual / total;
}

/// Mean of the per-class recalls over the classes present in `labels`.
inline double balanced_accuracy(const Vector& labels, const Vector& predicted) {
    if (labels.size() != predicted.size()) throw shape_error("balanced_accuracy: size mismatch");
    if (labels.size() == 0) throw contract_error("balanced_accuracy: empty input");
    std::map<double, std::pair<int, int>> per_class;  // class -> (correct, total)
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        auto& [correct, total] = per_class[labels[i]];
        ++total;
        if (predicted[i] == labels[i]) ++correct;
    }
    if (per_class.size() < 2) throw contract_error("balanced_accuracy: a class is absent from the labels");
    double sum = 0.0;
    for (const auto& [cls, counts] : per_class) {
        sum += static_cast<double>(counts.first) / static_cast<double>(counts.second);
    }
    return sum / static_cast<double>(per_class.size());
}

/// Everything needed to fit one pipeline inside the harness.
struct MethodSpec {
    pipelines::Method method = pipelines::Method::riemann;
    int components = -1;  ///< -1 means "all channels"
    linmodel::HeadKind head_kind = linmodel::HeadKind::ridge;
    pipelines::FitOptions options;
};

struct FoldMetrics {
    int fold = 0;
    int n_test = 0;
    double mae = std::numeric_limits<double>::quiet_NaN();
    double normalized_mae = std::numeric_limits<double>::quiet_NaN();
    double r_squared = std::numeric_limits<double>::quiet_NaN();
    double balanced_accuracy = std::numeric_limits<double>::quiet_NaN();
    std::vector<int> test_indices;
    Vector predictions;  ///< per test observation, aligned with test_indices
};

/// Fit on the fold's training indices only and score the held-out indices.
/// A single-fold invocation is an ordinary train/test split.
inline FoldMetrics cross_validate_fold(const CovarianceDataset& ds, const MethodSpec& spec,
                                       const SplitPlan& plan, int fold) {
    const std::vector<int> train_idx = plan.train_indices(fold);
    const std::vector<int> test_idx = plan.test_indices(fold);
    const CovarianceDataset train = ds.subset(train_idx);
    const CovarianceDataset test = ds.subset(test_idx);

    const pipelines::FittedPipeline pipe =
        pipelines::fit_pipeline(train, spec.method, spec.components, spec.head_kind, spec.options);
    const pipelines::Predictions pred = pipelines::pipeline_predict(pipe, test);

    FoldMetrics metrics;
    metrics.fold = fold;
    metrics.n_test = test.n_obs();
    metrics.test_indices = test_idx;
    metrics.predictions = (spec.head_kind == linmodel::HeadKind::logistic) ? *pred.labels : pred.values;
    if (spec.head_kind == linmodel::HeadKind::logistic) {
        std::map<double, int> classes;
        for (Eigen::Index i = 0; i < test.targets().size(); ++i) ++classes[test.targets()[i]];
        if (classes.size() >= 2) metrics.balanced_accuracy = balanced_accuracy(test.targets(), *pred.labels);
    } else {
        metrics.mae = mae(test.targets(), pred.values);
        const double train_mean = train.targets().mean();
        const double dummy = (test.targets().array() - train_mean).abs().mean();
        if (dummy > 0.0) metrics.normalized_mae = metrics.mae / dummy;
        const double total = (test.targets().array() - test.targets().mean()).square().sum();
        if (total > 0.0) metrics.r_squared = r_squared(test.targets(), pred.values);
    }
    return metrics;
}

/// Run every fold of the plan; fit failures are rethrown tagged with the fold.
inline std::vector<FoldMetrics> cross_validate(const CovarianceDataset& ds, const MethodSpec& spec,
                                               const SplitPlan& plan) {
    if (plan.n != ds.n_obs()) throw shape_error("cross_validate: plan size does not match dataset");
    std::vector<FoldMetrics> out;
    out.reserve(static_cast<std::size_t>(plan.n_folds));
    for (int f = 0; f < plan.n_folds; ++f) {
        try {
            out.push_back(cross_validate_fold(ds, spec, plan, f));
        } catch (const contract_error& e) {
            throw contract_error("fold " + std::to_string(f) + ": " + e.what());
        } catch (const convergence_error& e) {
            throw convergence_error("fold " + std::to_string(f) + ": " + e.what(), e.final_residual());
        } catch (const numerical_error& e) {
            throw numerical_error("fold " + std::to_string(f) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace riempat::evaluation
