#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "riempat/errors.hpp"

namespace riempat::linmodel {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Candidate values for the L2 penalty; strictly increasing and positive.
class RegularizationGrid {
public:
    explicit RegularizationGrid(std::vector<double> values) : values_(std::move(values)) {
        if (values_.size() < 1) throw contract_error("RegularizationGrid: empty grid");
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (!(values_[i] > 0.0) || !std::isfinite(values_[i])) {
                throw contract_error("RegularizationGrid: values must be positive and finite");
            }
            if (i > 0 && !(values_[i] > values_[i - 1])) {
                throw contract_error("RegularizationGrid: values must be strictly increasing");
            }
        }
    }

    static RegularizationGrid log_spaced(double low = 1e-5, double high = 1e3, int count = 25) {
        if (count < 2 || !(low > 0.0) || !(high > low)) {
            throw contract_error("RegularizationGrid::log_spaced: need count >= 2 and 0 < low < high");
        }
        std::vector<double> values(static_cast<std::size_t>(count));
        const double lo = std::log10(low);
        const double hi = std::log10(high);
        for (int i = 0; i < count; ++i) {
            values[static_cast<std::size_t>(i)] = std::pow(10.0, lo + (hi - lo) * i / (count - 1));
        }
        values.front() = low;
        values.back() = high;
        return RegularizationGrid(std::move(values));
    }

    std::span<const double> values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_.at(i); }

private:
    std::vector<double> values_;
};

/// The 25-point grid log-spaced over [1e-5, 1e3].
inline const RegularizationGrid& default_grid() {
    static const RegularizationGrid grid = RegularizationGrid::log_spaced();
    return grid;
}

inline constexpr double standardizer_floor = 1e-12;

/// Per-column z-scoring statistics (population convention, divisor N).
/// Standard deviations are floored at 1e-12 so constant columns map to zero.
struct Standardizer {
    Vector means;
    Vector stds;

    int dim() const noexcept { return static_cast<int>(means.size()); }
};

inline Standardizer fit_standardizer(const Matrix& features) {
    if (features.rows() < 2) throw insufficient_data_error("fit_standardizer: need at least 2 observations");
    if (!features.allFinite()) throw contract_error("fit_standardizer: non-finite features");
    const double n = static_cast<double>(features.rows());
    Standardizer s;
    s.means = features.colwise().mean();
    s.stds.resize(features.cols());
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
        const double var = (features.col(j).array() - s.means[j]).square().sum() / n;
        s.stds[j] = std::max(std::sqrt(var), standardizer_floor);
    }
    return s;
}

inline Matrix apply_standardizer(const Standardizer& s, const Matrix& features) {
    if (features.cols() != s.means.size()) throw shape_error("apply_standardizer: dimension mismatch");
    Matrix out = features.rowwise() - s.means.transpose();
    out.array().rowwise() /= s.stds.transpose().array();
    return out;
}

enum class HeadKind { ridge, logistic };

/// Fitted linear model: y_hat = w^T v + bias. For logistic heads the decision
/// value feeds the logistic link.
struct LinearHead {
    Vector weights;
    double bias = 0.0;
    HeadKind kind = HeadKind::ridge;
    double chosen_alpha = 0.0;
};

namespace detail {

struct CenteredSvd {
    Vector feature_means;
    double target_mean = 0.0;
    Vector singular_values;
    Matrix v;     // right singular vectors, D x r
    Vector uty;   // U^T (y - mean)
    double yc_sq = 0.0;
    Eigen::Index n = 0;
};

inline CenteredSvd centered_svd(const Matrix& features, const Vector& targets) {
    if (targets.size() != features.rows()) throw shape_error("ridge fit: targets/features size mismatch");
    if (features.rows() < 2) throw insufficient_data_error("ridge fit: need at least 2 observations");
    if (!features.allFinite() || !targets.allFinite()) throw contract_error("ridge fit: non-finite inputs");

    CenteredSvd out;
    out.n = features.rows();
    out.feature_means = features.colwise().mean();
    const Matrix centered = features.rowwise() - out.feature_means.transpose();
    out.target_mean = targets.mean();
    const Vector yc = targets.array() - out.target_mean;

    Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.singular_values = svd.singularValues();
    out.v = svd.matrixV();
    out.uty = svd.matrixU().transpose() * yc;
    out.yc_sq = yc.squaredNorm();
    return out;
}

inline LinearHead ridge_head_at(const CenteredSvd& svd, double alpha) {
    Vector scaled(svd.singular_values.size());
    for (Eigen::Index i = 0; i < scaled.size(); ++i) {
        const double s = svd.singular_values[i];
        scaled[i] = (s > 0.0) ? s / (s * s + alpha) * svd.uty[i] : 0.0;
    }
    LinearHead head;
    head.kind = HeadKind::ridge;
    head.chosen_alpha = alpha;
    head.weights = svd.v * scaled;
    head.bias = svd.target_mean - head.weights.dot(svd.feature_means);
    return head;
}

}  // namespace detail

struct RidgeGcvResult {
    LinearHead head;
    Vector gcv_scores;  ///< per grid value; +inf where the GCV denominator vanished
};

/// Ridge regression with generalized cross-validation over the grid.
/// The bias is unpenalized (features and targets are centered internally);
/// GCV(alpha) = (||y - y_hat||^2 / N) / (1 - tr(H_alpha)/N)^2 with the hat trace
/// computed from the singular values of the centered feature matrix.
/// Ties are broken toward the larger penalty.
inline RidgeGcvResult fit_ridge_gcv_path(const Matrix& features, const Vector& targets,
                                         const RegularizationGrid& grid = default_grid()) {
    const auto svd = detail::centered_svd(features, targets);
    const double n = static_cast<double>(svd.n);

    Vector scores(static_cast<Eigen::Index>(grid.size()));
    std::size_t best = 0;
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        const double alpha = grid[gi];
        double tr_h = 0.0;
        double explained = 0.0;
        for (Eigen::Index i = 0; i < svd.singular_values.size(); ++i) {
            const double s2 = svd.singular_values[i] * svd.singular_values[i];
            const double f = s2 / (s2 + alpha);
            tr_h += f;
            explained += (2.0 * f - f * f) * svd.uty[i] * svd.uty[i];
        }
        const double residual = std::max(svd.yc_sq - explained, 0.0);
        const double denom = 1.0 - tr_h / n;
        const double score = (denom <= 1e-12) ? std::numeric_limits<double>::infinity()
                                              : (residual / n) / (denom * denom);
        scores[static_cast<Eigen::Index>(gi)] = score;
        if (gi == 0 || score <= scores[static_cast<Eigen::Index>(best)]) best = gi;
    }
    return {detail::ridge_head_at(svd, grid[best]), std::move(scores)};
}

inline LinearHead fit_ridge_gcv(const Matrix& features, const Vector& targets,
                                const RegularizationGrid& grid = default_grid()) {
    return fit_ridge_gcv_path(features, targets, grid).head;
}

/// Ridge solution at a fixed penalty (no model selection).
inline LinearHead fit_ridge_at(const Matrix& features, const Vector& targets, double alpha) {
    if (!(alpha > 0.0)) throw contract_error("fit_ridge_at: alpha must be positive");
    return detail::ridge_head_at(detail::centered_svd(features, targets), alpha);
}

struct LogisticOptions {
    double gradient_tolerance = 1e-8;
    int max_iterations = 100;
};

namespace detail {

inline double softplus(double m) {
    return (m > 0.0) ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
}

inline double sigmoid(double m) {
    return (m >= 0.0) ? 1.0 / (1.0 + std::exp(-m)) : std::exp(m) / (1.0 + std::exp(m));
}

inline void check_binary_labels(const Vector& labels) {
    bool has0 = false;
    bool has1 = false;
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        if (labels[i] == 0.0) {
            has0 = true;
        } else if (labels[i] == 1.0) {
            has1 = true;
        } else {
            throw contract_error("logistic fit: labels must be 0 or 1");
        }
    }
    if (!has0 || !has1) throw contract_error("logistic fit: both classes must be present");
}

}  // namespace detail

/// Penalized negative log-likelihood: sum softplus(m_i) - y_i m_i + (alpha/2) ||w||^2,
/// with m_i = w^T v_i + bias. The bias is not penalized.
inline double logistic_loss(const Matrix& features, const Vector& labels, const Vector& weights,
                            double bias, double alpha) {
    const Vector m = (features * weights).array() + bias;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < m.size(); ++i) loss += detail::softplus(m[i]) - labels[i] * m[i];
    return loss + 0.5 * alpha * weights.squaredNorm();
}

/// Gradient of the penalized loss; length D+1, the last entry is the bias partial.
inline Vector logistic_gradient(const Matrix& features, const Vector& labels, const Vector& weights,
                                double bias, double alpha) {
    const Vector m = (features * weights).array() + bias;
    Vector p(m.size());
    for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = detail::sigmoid(m[i]);
    const Vector r = p - labels;
    Vector grad(weights.size() + 1);
    grad.head(weights.size()) = features.transpose() * r + alpha * weights;
    grad[weights.size()] = r.sum();
    return grad;
}

/// Damped Newton minimization of the penalized logistic loss at a fixed penalty.
inline LinearHead fit_logistic_at(const Matrix& features, const Vector& labels, double alpha,
                                  const LogisticOptions& options = {}) {
    if (labels.size() != features.rows()) throw shape_error("fit_logistic_at: labels/features size mismatch");
    if (!(alpha > 0.0)) throw contract_error("fit_logistic_at: alpha must be positive");
    detail::check_binary_labels(labels);

    const Eigen::Index d = features.cols();
    Vector weights = Vector::Zero(d);
    double bias = 0.0;
    double loss = logistic_loss(features, labels, weights, bias, alpha);

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        const Vector grad = logistic_gradient(features, labels, weights, bias, alpha);
        if (grad.norm() <= options.gradient_tolerance) break;

        const Vector m = (features * weights).array() + bias;
        Vector diag(m.size());
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            const double p = detail::sigmoid(m[i]);
            diag[i] = p * (1.0 - p);
        }
        Matrix hess(d + 1, d + 1);
        const Matrix weighted = features.array().colwise() * diag.array();
        hess.topLeftCorner(d, d) = features.transpose() * weighted;
        hess.topLeftCorner(d, d).diagonal().array() += alpha;
        hess.topRightCorner(d, 1) = weighted.colwise().sum().transpose();
        hess.bottomLeftCorner(1, d) = weighted.colwise().sum();
        hess(d, d) = diag.sum();

        const Vector step = hess.ldlt().solve(grad);
        if (!step.allFinite()) throw numerical_error("fit_logistic_at: Newton step is not finite");

        // Tiny relative slack keeps the final Newton steps acceptable once loss
        // differences fall below double resolution.
        const double slack = 1e-12 * std::max(1.0, std::abs(loss));
        double eta = 1.0;
        for (;;) {
            const Vector w_try = weights - eta * step.head(d);
            const double b_try = bias - eta * step[d];
            const double loss_try = logistic_loss(features, labels, w_try, b_try, alpha);
            if (loss_try <= loss + slack) {
                weights = w_try;
                bias = b_try;
                loss = loss_try;
                break;
            }
            eta *= 0.5;
            if (eta < 1e-14) break;  // no descent direction left; outer check decides
        }
    }

    const double final_norm = logistic_gradient(features, labels, weights, bias, alpha).norm();
    if (final_norm > options.gradient_tolerance) {
        std::ostringstream msg;
        msg << "fit_logistic_at: Newton did not reach gradient tolerance, |g| = " << final_norm;
        throw convergence_error(msg.str(), final_norm);
    }

    LinearHead head;
    head.weights = weights;
    head.bias = bias;
    head.kind = HeadKind::logistic;
    head.chosen_alpha = alpha;
    return head;
}

namespace detail {

/// Stratified fold assignment that is invariant under relabeling the classes:
/// indices are shuffled once with the seed, then dealt round-robin within each class.
inline std::vector<int> stratified_folds(const Vector& labels, int n_folds, std::uint64_t seed) {
    const int n = static_cast<int>(labels.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<int> fold_of(static_cast<std::size_t>(n), -1);
    int counter0 = 0;
    int counter1 = 0;
    for (int idx : order) {
        int& counter = (labels[idx] == 0.0) ? counter0 : counter1;
        fold_of[static_cast<std::size_t>(idx)] = counter % n_folds;
        ++counter;
    }
    return fold_of;
}

inline double balanced_accuracy_01(const Vector& truth, const Vector& predicted) {
    double correct0 = 0.0, total0 = 0.0, correct1 = 0.0, total1 = 0.0;
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
        if (truth[i] == 0.0) {
            total0 += 1.0;
            if (predicted[i] == 0.0) correct0 += 1.0;
        } else {
            total1 += 1.0;
            if (predicted[i] == 1.0) correct1 += 1.0;
        }
    }
    return 0.5 * (correct0 / total0 + correct1 / total1);
}

}  // namespace detail

/// L2-penalized logistic regression with the penalty chosen by stratified
/// inner cross-validation on balanced accuracy; ties go to the larger penalty.
/// Refit on all data at the chosen value.
inline LinearHead fit_logistic_l2(const Matrix& features, const Vector& labels,
                                  const RegularizationGrid& grid = default_grid(),
                                  std::uint64_t seed = 0, int cv_folds = 5,
                                  const LogisticOptions& options = {}) {
    if (labels.size() != features.rows()) throw shape_error("fit_logistic_l2: labels/features size mismatch");
    detail::check_binary_labels(labels);

    const int n0 = static_cast<int>((labels.array() == 0.0).count());
    const int n1 = static_cast<int>(labels.size()) - n0;
    const int folds = std::min(cv_folds, std::min(n0, n1));
    if (folds < 2) throw contract_error("fit_logistic_l2: need at least 2 observations per class for inner CV");

    const std::vector<int> fold_of = detail::stratified_folds(labels, folds, seed);

    double best_score = -1.0;
    std::size_t best = 0;
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        const double alpha = grid[gi];
        double score_sum = 0.0;
        for (int f = 0; f < folds; ++f) {
            std::vector<int> train_idx, val_idx;
            for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
                (fold_of[static_cast<std::size_t>(i)] == f ? val_idx : train_idx).push_back(i);
            }
            Matrix train_x(train_idx.size(), features.cols());
            Vector train_y(train_idx.size());
            for (std::size_t r = 0; r < train_idx.size(); ++r) {
                train_x.row(static_cast<Eigen::Index>(r)) = features.row(train_idx[r]);
                train_y[static_cast<Eigen::Index>(r)] = labels[train_idx[r]];
            }
            const LinearHead head = fit_logistic_at(train_x, train_y, alpha, options);
            Vector val_truth(val_idx.size());
            Vector val_pred(val_idx.size());
            for (std::size_t r = 0; r < val_idx.size(); ++r) {
                const double m = head.weights.dot(features.row(val_idx[r])) + head.bias;
                val_pred[static_cast<Eigen::Index>(r)] = detail::sigmoid(m) > 0.5 ? 1.0 : 0.0;
                val_truth[static_cast<Eigen::Index>(r)] = labels[val_idx[r]];
            }
            score_sum += detail::balanced_accuracy_01(val_truth, val_pred);
        }
        const double score = score_sum / folds;
        if (score >= best_score) {
            best_score = score;
            best = gi;
        }
    }
    return fit_logistic_at(features, labels, grid[best], options);
}

/// Decision values w^T v + bias.
inline Vector decision_function(const LinearHead& head, const Matrix& features) {
    if (features.cols() != head.weights.size()) throw shape_error("decision_function: dimension mismatch");
    return (features * head.weights).array() + head.bias;
}

/// Ridge heads return real scores, logistic heads probabilities.
inline Vector predict(const LinearHead& head, const Matrix& features) {
    Vector m = decision_function(head, features);
    if (head.kind == HeadKind::logistic) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m[i] = detail::sigmoid(m[i]);
    }
    return m;
}

/// Hard 0/1 labels at probability threshold 0.5 (logistic heads only).
inline Eigen::VectorXi predict_labels(const LinearHead& head, const Matrix& features) {
    if (head.kind != HeadKind::logistic) throw contract_error("predict_labels: head is not logistic");
    const Vector p = predict(head, features);
    Eigen::VectorXi labels(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) labels[i] = p[i] > 0.5 ? 1 : 0;
    return labels;
}

}  // namespace riempat::linmodel
