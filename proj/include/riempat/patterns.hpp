#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

#include "riempat/pipelines.hpp"

namespace riempat::patterns {

using manifold::Matrix;
using manifold::SpdMatrix;
using manifold::SymmetricMatrix;
using manifold::Vector;

/// Tangent-space pattern associated to a weight vector, d = C_v b / (b^T C_v b).
struct TangentPattern {
    Vector d_c;
    double sigma_yhat_sq = 0.0;
};

inline TangentPattern haufe_tangent_pattern(const Vector& weights, const Matrix& feature_cov) {
    if (feature_cov.rows() != feature_cov.cols() || feature_cov.rows() != weights.size()) {
        throw shape_error("haufe_tangent_pattern: dimension mismatch");
    }
    if (!manifold::detail::is_symmetric(feature_cov)) {
        throw contract_error("haufe_tangent_pattern: feature covariance is not symmetric");
    }
    const Vector cb = feature_cov * weights;
    const double sigma_sq = weights.dot(cb);
    if (!(sigma_sq > 0.0)) {
        std::ostringstream msg;
        msg << "haufe_tangent_pattern: predicted variance " << sigma_sq << " is not positive";
        throw degenerate_error(msg.str());
    }
    return {cb / sigma_sq, sigma_sq};
}

/// Patterns of one band: unit-norm sign-fixed channel-space columns together
/// with their eigenvalues, already sorted by relevance.
struct BandPatterns {
    Matrix patterns;          ///< P x K
    Vector eigenvalues;       ///< K, matching the columns
    std::vector<int> order;   ///< sorted position -> original eigensolver index
};

struct PatternSet {
    std::vector<BandPatterns> bands;
    std::optional<int> q_hat;  ///< shuffle-estimated number of significant sources
    bool sign_fixed = true;
};

/// Relevance criterion used to rank tangent-space sources: max(lambda, 1/lambda).
inline double eigenvalue_relevance(double lambda) { return std::max(lambda, 1.0 / lambda); }

namespace detail {

inline void normalize_and_fix_sign(Matrix& patterns) {
    for (Eigen::Index j = 0; j < patterns.cols(); ++j) {
        const double norm = patterns.col(j).norm();
        if (!(norm > 0.0)) throw numerical_error("pattern column has zero norm");
        patterns.col(j) /= norm;
        Eigen::Index argmax = 0;
        patterns.col(j).cwiseAbs().maxCoeff(&argmax);
        if (patterns(argmax, j) < 0.0) patterns.col(j) = -patterns.col(j);
    }
}

}  // namespace detail

/// Transform the fitted tangent-space weights of a RIEMANN pipeline into
/// channel-space patterns: fold the z-scoring out of the weights, form the
/// tangent pattern from the raw feature covariance, map it back to the
/// covariance cone at the reference mean, solve the generalized eigenproblem
/// against the reference, and back-project through the PCA reducer. Columns
/// are sorted by max(lambda, 1/lambda) descending.
///
/// `training_features` must be the raw (pre-z-scoring) tangent features of the
/// training set, as produced by pipeline_features on the fitted pipeline.
inline PatternSet extract_patterns(const pipelines::FittedPipeline& pipe, const Matrix& training_features) {
    if (pipe.method != pipelines::Method::riemann) {
        throw contract_error("extract_patterns: pipeline is not RIEMANN; use component_patterns");
    }
    if (training_features.cols() != pipe.feature_dim) {
        throw contract_error("extract_patterns: training features do not match the fitted pipeline");
    }
    if (training_features.rows() < 2) {
        throw insufficient_data_error("extract_patterns: need at least 2 training observations");
    }

    PatternSet out;
    const double n = static_cast<double>(training_features.rows());
    for (int b = 0; b < pipe.n_bands; ++b) {
        const int offset = pipe.block_offsets[static_cast<std::size_t>(b)];
        const int width = pipe.block_width(b);
        const auto block = training_features.middleCols(offset, width);

        // Undo the standardizer: z_j = (v_j - m_j) / s_j, so the weight acting on
        // the raw embedding is w_j / s_j.
        Vector raw_weights = pipe.head.weights.segment(offset, width);
        raw_weights.array() /= pipe.standardizer.stds.segment(offset, width).array();

        const Matrix feature_cov = (block.transpose() * block) / n;
        const TangentPattern tangent = haufe_tangent_pattern(raw_weights, feature_cov);

        const pipelines::BandModel& band = pipe.bands[static_cast<std::size_t>(b)];
        manifold::TangentVector d;
        d.dim = band.reference_mean->dim();
        d.values = tangent.d_c;
        d.reference_id = static_cast<std::uint64_t>(b);
        const SpdMatrix pattern_cov = manifold::tangent_unproject(d, *band.reference_mean);

        const manifold::SymEig ge =
            manifold::gen_eig(SymmetricMatrix(pattern_cov.values()), *band.reference_mean);

        Matrix channel_patterns =
            band.reducer ? Matrix(band.reducer->filters() * ge.eigenvectors) : ge.eigenvectors;
        detail::normalize_and_fix_sign(channel_patterns);

        std::vector<int> order(static_cast<std::size_t>(ge.eigenvalues.size()));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int c) {
            return eigenvalue_relevance(ge.eigenvalues[a]) > eigenvalue_relevance(ge.eigenvalues[c]);
        });

        BandPatterns result;
        result.order = order;
        result.patterns.resize(channel_patterns.rows(), channel_patterns.cols());
        result.eigenvalues.resize(ge.eigenvalues.size());
        for (std::size_t j = 0; j < order.size(); ++j) {
            result.patterns.col(static_cast<Eigen::Index>(j)) = channel_patterns.col(order[j]);
            result.eigenvalues[static_cast<Eigen::Index>(j)] = ge.eigenvalues[order[j]];
        }
        out.bands.push_back(std::move(result));
    }
    return out;
}

/// Eigenvalues implied by latent weights b: exp(b_j / ||b||^2) for the first q
/// sources and 1 for the remaining dimensions.
inline Vector predict_eigenvalues(const Vector& weights, int q, int p_total) {
    if (q != weights.size()) throw contract_error("predict_eigenvalues: q must equal the weight count");
    if (q < 1 || q > p_total) throw contract_error("predict_eigenvalues: q out of range");
    const double norm_sq = weights.squaredNorm();
    if (!(norm_sq > 0.0)) throw contract_error("predict_eigenvalues: zero weights");
    Vector out = Vector::Ones(p_total);
    for (int j = 0; j < q; ++j) out[j] = std::exp(weights[j] / norm_sq);
    return out;
}

/// Haufe-style patterns of supervised spatial filters:
/// A = C W (W^T C W)^{-1} with C the arithmetic covariance mean of the training
/// set. Column order and eigenvalues carry over from the filter solve.
inline PatternSet component_patterns(const pipelines::FittedPipeline& pipe, const CovarianceDataset& training) {
    if (pipe.method != pipelines::Method::spoc && pipe.method != pipelines::Method::csp) {
        throw contract_error("component_patterns: pipeline has no spatial filters");
    }
    if (training.n_channels() != pipe.n_channels || training.n_bands() != pipe.n_bands) {
        throw shape_error("component_patterns: dataset dimensions do not match the fitted pipeline");
    }
    if (training.n_obs() < 1) throw contract_error("component_patterns: empty training set");

    PatternSet out;
    for (int b = 0; b < pipe.n_bands; ++b) {
        const pipelines::BandModel& band = pipe.bands[static_cast<std::size_t>(b)];
        const Matrix mean = pipelines::detail::band_mean(training, b);
        const Matrix& filters = *band.filters;
        const Matrix gram = filters.transpose() * mean * filters;
        Eigen::FullPivLU<Matrix> lu(gram);
        if (!lu.isInvertible()) throw rank_error("component_patterns: filtered covariance is singular");

        BandPatterns result;
        result.patterns = mean * filters * lu.inverse();
        detail::normalize_and_fix_sign(result.patterns);
        result.eigenvalues = band.filter_eigenvalues;
        result.order.resize(static_cast<std::size_t>(filters.cols()));
        std::iota(result.order.begin(), result.order.end(), 0);
        out.bands.push_back(std::move(result));
    }
    return out;
}

/// 1 - |cos angle| between two patterns; zero iff collinear, invariant to sign
/// and nonzero scaling of either argument.
inline double pattern_distance(const Vector& a, const Vector& a_hat) {
    if (a.size() != a_hat.size()) throw shape_error("pattern_distance: size mismatch");
    if (a.size() == 0) throw contract_error("pattern_distance: empty vectors");
    const double na = a.norm();
    const double nb = a_hat.norm();
    if (!(na > 0.0) || !(nb > 0.0)) throw contract_error("pattern_distance: zero vector");
    const double cosine = std::abs(a.dot(a_hat)) / (na * nb);
    return std::clamp(1.0 - cosine, 0.0, 1.0);
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

/// Nearest-rank (higher) percentile of the values.
inline double percentile_threshold(std::vector<double> values, double percentile) {
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    const auto rank = static_cast<std::ptrdiff_t>(std::ceil(percentile / 100.0 * n));
    const auto idx = std::clamp<std::ptrdiff_t>(rank - 1, 0, static_cast<std::ptrdiff_t>(values.size()) - 1);
    return values[static_cast<std::size_t>(idx)];
}

inline std::vector<double> relevance_values(const PatternSet& set) {
    std::vector<double> out;
    for (const auto& band : set.bands) {
        for (Eigen::Index j = 0; j < band.eigenvalues.size(); ++j) {
            out.push_back(eigenvalue_relevance(band.eigenvalues[j]));
        }
    }
    return out;
}

}  // namespace detail

/// Permutation test for the number of significantly coupled sources.
///
/// Targets are permuted with a seeded RNG and the pipeline is refitted per
/// shuffle at the training hyperparameter (the chosen penalty), recording the
/// maximum of max(lambda, 1/lambda) across sources; q_hat counts the original
/// sources whose criterion exceeds the given percentile of those null maxima.
///
/// `ds` must be the dataset the pipeline was fitted on. For this tangent-space
/// method every covariance-side parameter (PCA, reference means, standardizer)
/// is independent of the targets, so the shuffle refit reuses them and only
/// refits the linear head, which equals a full refit of the pipeline.
inline int estimate_num_sources(const pipelines::FittedPipeline& pipe, const CovarianceDataset& ds,
                                int n_shuffles, double percentile = 95.0, std::uint64_t seed = 0) {
    if (pipe.method != pipelines::Method::riemann) {
        throw contract_error("estimate_num_sources: only tangent-space (RIEMANN) pipelines are supported");
    }
    if (n_shuffles < 1) throw contract_error("estimate_num_sources: n_shuffles must be >= 1");
    if (!(percentile > 0.0) || percentile > 100.0) {
        throw contract_error("estimate_num_sources: percentile must be in (0, 100]");
    }

    const Matrix features = pipelines::pipeline_features(pipe, ds);
    const Matrix z = linmodel::apply_standardizer(pipe.standardizer, features);
    const std::vector<double> original = detail::relevance_values(extract_patterns(pipe, features));

    std::vector<double> null_maxima;
    null_maxima.reserve(static_cast<std::size_t>(n_shuffles));
    std::vector<int> perm(static_cast<std::size_t>(ds.n_obs()));
    for (int s = 0; s < n_shuffles; ++s) {
        std::iota(perm.begin(), perm.end(), 0);
        std::mt19937_64 rng(detail::mix_seed(seed, static_cast<std::uint64_t>(s)));
        std::shuffle(perm.begin(), perm.end(), rng);
        Vector shuffled(ds.n_obs());
        for (int i = 0; i < ds.n_obs(); ++i) shuffled[i] = ds.targets()[perm[static_cast<std::size_t>(i)]];

        pipelines::FittedPipeline refit = pipe;
        try {
            if (pipe.head_kind == linmodel::HeadKind::ridge) {
                refit.head = linmodel::fit_ridge_at(z, shuffled, pipe.head.chosen_alpha);
            } else {
                Vector labels(ds.n_obs());
                for (int i = 0; i < ds.n_obs(); ++i) {
                    labels[i] = (shuffled[i] == (*pipe.class_values)[1]) ? 1.0 : 0.0;
                }
                refit.head = linmodel::fit_logistic_at(z, labels, pipe.head.chosen_alpha);
            }
            const std::vector<double> relevances = detail::relevance_values(extract_patterns(refit, features));
            null_maxima.push_back(*std::max_element(relevances.begin(), relevances.end()));
        } catch (const error& e) {
            throw numerical_error("estimate_num_sources: shuffle " + std::to_string(s) + " failed: " + e.what());
        }
    }

    const double threshold = detail::percentile_threshold(std::move(null_maxima), percentile);
    int q_hat = 0;
    for (double r : original) {
        if (r > threshold) ++q_hat;
    }
    return q_hat;
}

}  // namespace riempat::patterns
