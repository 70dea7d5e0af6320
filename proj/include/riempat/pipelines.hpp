#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "riempat/covariance.hpp"
#include "riempat/dataset.hpp"
#include "riempat/linmodel.hpp"

namespace riempat::pipelines {

using manifold::Matrix;
using manifold::SpdMatrix;
using manifold::SymmetricMatrix;
using manifold::Vector;

enum class Method { riemann, spoc, csp, diag };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::riemann: return "riemann";
        case Method::spoc: return "spoc";
        case Method::csp: return "csp";
        case Method::diag: return "diag";
    }
    return "unknown";
}

inline Method method_from_name(std::string_view name) {
    if (name == "riemann") return Method::riemann;
    if (name == "spoc") return Method::spoc;
    if (name == "csp") return Method::csp;
    if (name == "diag") return Method::diag;
    throw contract_error("unknown method '" + std::string(name) + "'");
}

/// Variances are floored here before taking logarithms so that rank-deficient
/// test covariances cannot crash prediction.
inline constexpr double variance_floor = 1e-20;

/// Per-band fitted state. RIEMANN uses reducer (absent when k = P) and the
/// geometric reference mean; SPOC/CSP use supervised spatial filters.
struct BandModel {
    std::optional<covariance::SpatialReducer> reducer;
    std::optional<SpdMatrix> reference_mean;
    std::optional<Matrix> filters;
    Vector filter_eigenvalues;
};

struct FitOptions {
    linmodel::RegularizationGrid grid = linmodel::default_grid();
    std::uint64_t seed = 0;
    std::optional<double> fixed_alpha;  ///< bypass model selection when set
    linmodel::LogisticOptions logistic;
};

/// A frozen end-to-end model. All parameters are estimated at fit time from
/// training data only; transform paths never refit anything.
struct FittedPipeline {
    Method method = Method::riemann;
    linmodel::HeadKind head_kind = linmodel::HeadKind::ridge;
    int n_channels = 0;
    int n_bands = 0;
    int components = 0;
    std::vector<BandModel> bands;
    std::vector<int> block_offsets;  ///< start of each band's feature block
    int feature_dim = 0;
    linmodel::Standardizer standardizer;
    linmodel::LinearHead head;
    std::optional<std::array<double, 2>> class_values;  ///< binary label coding, ascending
    long variance_floor_hits = 0;                       ///< log-variance floor count at fit time

    int block_width(int band) const {
        const int end = (band + 1 < n_bands) ? block_offsets[static_cast<std::size_t>(band) + 1] : feature_dim;
        return end - block_offsets[static_cast<std::size_t>(band)];
    }
};

struct Predictions {
    Vector values;                 ///< ridge scores or logistic probabilities
    std::optional<Vector> labels;  ///< logistic only, in the dataset's class coding
};

namespace detail {

inline Matrix log_variance_block(const CovarianceDataset& ds, int band, const Matrix* filters,
                                 long* floor_hits) {
    const int n = ds.n_obs();
    const int width = filters ? static_cast<int>(filters->cols()) : ds.n_channels();
    Matrix block(n, width);
    for (int i = 0; i < n; ++i) {
        const Matrix& c = ds.covariance(i, band).values();
        for (int j = 0; j < width; ++j) {
            double v = filters ? filters->col(j).dot(c * filters->col(j)) : c(j, j);
            if (v < variance_floor) {
                v = variance_floor;
                if (floor_hits) ++(*floor_hits);
            }
            block(i, j) = std::log(v);
        }
    }
    return block;
}

inline Matrix riemann_block(const CovarianceDataset& ds, int band,
                            const std::optional<covariance::SpatialReducer>& reducer,
                            const manifold::TangentProjector& projector) {
    const int n = ds.n_obs();
    const int k = projector.reference().dim();
    Matrix block(n, k * (k + 1) / 2);
    for (int i = 0; i < n; ++i) {
        const SymmetricMatrix& raw = ds.covariance(i, band);
        const SpdMatrix reduced =
            reducer ? SpdMatrix(covariance::apply_reducer(raw, *reducer).values()) : SpdMatrix(raw.values());
        block.row(i) = projector.project(reduced, static_cast<std::uint64_t>(band)).values;
    }
    return block;
}

inline void check_head_targets(const CovarianceDataset& ds, linmodel::HeadKind kind) {
    if (kind == linmodel::HeadKind::logistic && ds.target_kind() != TargetKind::binary) {
        throw contract_error("logistic head requires a binary dataset");
    }
}

inline Vector to_01(const CovarianceDataset& ds, const std::array<double, 2>& classes) {
    Vector out(ds.n_obs());
    for (int i = 0; i < ds.n_obs(); ++i) out[i] = (ds.targets()[i] == classes[1]) ? 1.0 : 0.0;
    return out;
}

inline void fit_head(FittedPipeline& pipe, const CovarianceDataset& ds, const Matrix& z,
                     const FitOptions& options) {
    if (pipe.head_kind == linmodel::HeadKind::ridge) {
        pipe.head = options.fixed_alpha ? linmodel::fit_ridge_at(z, ds.targets(), *options.fixed_alpha)
                                        : linmodel::fit_ridge_gcv(z, ds.targets(), options.grid);
    } else {
        pipe.class_values = ds.class_values();
        const Vector labels = to_01(ds, *pipe.class_values);
        pipe.head = options.fixed_alpha
                        ? linmodel::fit_logistic_at(z, labels, *options.fixed_alpha, options.logistic)
                        : linmodel::fit_logistic_l2(z, labels, options.grid, options.seed, 5, options.logistic);
    }
}

inline Matrix band_mean(const CovarianceDataset& ds, int band) {
    Matrix mean = Matrix::Zero(ds.n_channels(), ds.n_channels());
    for (int i = 0; i < ds.n_obs(); ++i) mean += ds.covariance(i, band).values();
    return mean / static_cast<double>(ds.n_obs());
}

}  // namespace detail

/// Raw (pre-z-scoring) features of a dataset under an already fitted pipeline.
/// For RIEMANN these are the tangent-space embeddings at the stored reference
/// means; for SPOC/CSP/DIAG the log-variance features.
inline Matrix pipeline_features(const FittedPipeline& pipe, const CovarianceDataset& ds,
                                long* floor_hits = nullptr) {
    if (ds.n_channels() != pipe.n_channels || ds.n_bands() != pipe.n_bands) {
        throw shape_error("pipeline_features: dataset dimensions do not match the fitted pipeline");
    }
    Matrix features(ds.n_obs(), pipe.feature_dim);
    for (int b = 0; b < pipe.n_bands; ++b) {
        const BandModel& band = pipe.bands[static_cast<std::size_t>(b)];
        Matrix block;
        if (pipe.method == Method::riemann) {
            manifold::TangentProjector projector(*band.reference_mean);
            block = detail::riemann_block(ds, b, band.reducer, projector);
        } else if (pipe.method == Method::diag) {
            block = detail::log_variance_block(ds, b, nullptr, floor_hits);
        } else {
            block = detail::log_variance_block(ds, b, &*band.filters, floor_hits);
        }
        features.middleCols(pipe.block_offsets[static_cast<std::size_t>(b)], block.cols()) = block;
    }
    return features;
}

/// Tangent-space pipeline: per band, PCA-reduce to k components (skipped when
/// k = P), take the geometric mean of the training covariances, embed at that
/// mean, concatenate the band blocks, z-score, and fit the linear head.
inline FittedPipeline fit_riemann(const CovarianceDataset& ds, int k, linmodel::HeadKind head_kind,
                                  const FitOptions& options = {}) {
    const int p = ds.n_channels();
    if (k < 1 || k > p) {
        std::ostringstream msg;
        msg << "fit_riemann: components k = " << k << " out of range [1, " << p << "]";
        throw contract_error(msg.str());
    }
    detail::check_head_targets(ds, head_kind);

    FittedPipeline pipe;
    pipe.method = Method::riemann;
    pipe.head_kind = head_kind;
    pipe.n_channels = p;
    pipe.n_bands = ds.n_bands();
    pipe.components = k;

    const int width = k * (k + 1) / 2;
    Matrix features(ds.n_obs(), width * ds.n_bands());
    for (int b = 0; b < ds.n_bands(); ++b) {
        std::optional<covariance::SpatialReducer> reducer;
        std::vector<SpdMatrix> covs;
        covs.reserve(static_cast<std::size_t>(ds.n_obs()));
        if (k < p) {
            std::vector<SymmetricMatrix> band_covs;
            band_covs.reserve(static_cast<std::size_t>(ds.n_obs()));
            for (int i = 0; i < ds.n_obs(); ++i) band_covs.push_back(ds.covariance(i, b));
            reducer = covariance::pca_reducer(band_covs, k);
            for (const auto& c : band_covs) {
                covs.emplace_back(covariance::apply_reducer(c, *reducer).values());
            }
        } else {
            covs = ds.band_spd(b);
        }
        SpdMatrix reference = manifold::geometric_mean(covs);
        manifold::TangentProjector projector(std::move(reference));
        for (int i = 0; i < ds.n_obs(); ++i) {
            features.block(i, b * width, 1, width) =
                projector.project(covs[static_cast<std::size_t>(i)], static_cast<std::uint64_t>(b))
                    .values.transpose();
        }
        pipe.bands.push_back(BandModel{std::move(reducer), projector.reference(), std::nullopt, Vector()});
        pipe.block_offsets.push_back(b * width);
    }
    pipe.feature_dim = static_cast<int>(features.cols());
    pipe.standardizer = linmodel::fit_standardizer(features);
    detail::fit_head(pipe, ds, linmodel::apply_standardizer(pipe.standardizer, features), options);
    return pipe;
}

/// Supervised source-power comodulation filters: per band, solve the
/// generalized eigenproblem of the target-weighted covariance mean against the
/// arithmetic mean and keep the k filters with the largest |eigenvalue|;
/// features are the log variances of the filtered signals.
inline FittedPipeline fit_spoc(const CovarianceDataset& ds, int k, linmodel::HeadKind head_kind,
                               const FitOptions& options = {}) {
    const int p = ds.n_channels();
    if (k < 1 || k > p) throw contract_error("fit_spoc: components out of range");
    if (ds.target_kind() != TargetKind::continuous) throw contract_error("fit_spoc: continuous targets required");
    detail::check_head_targets(ds, head_kind);
    const int n = ds.n_obs();
    if (n < 2) throw insufficient_data_error("fit_spoc: need at least 2 observations");

    const double y_mean = ds.targets().mean();
    const double y_std = std::sqrt((ds.targets().array() - y_mean).square().sum() / n);
    if (!(y_std > 0.0)) throw degenerate_error("fit_spoc: target has zero variance");
    const Vector z = (ds.targets().array() - y_mean) / y_std;

    FittedPipeline pipe;
    pipe.method = Method::spoc;
    pipe.head_kind = head_kind;
    pipe.n_channels = p;
    pipe.n_bands = ds.n_bands();
    pipe.components = k;

    Matrix features(n, k * ds.n_bands());
    for (int b = 0; b < ds.n_bands(); ++b) {
        Matrix cz = Matrix::Zero(p, p);
        for (int i = 0; i < n; ++i) cz += z[i] * ds.covariance(i, b).values();
        cz /= static_cast<double>(n);
        const SymmetricMatrix weighted{manifold::detail::symmetrized(cz)};
        const SpdMatrix arith{detail::band_mean(ds, b)};
        const manifold::SymEig ge = manifold::gen_eig(weighted, arith);

        std::vector<int> order(static_cast<std::size_t>(p));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int c) {
            return std::abs(ge.eigenvalues[a]) > std::abs(ge.eigenvalues[c]);
        });

        Matrix filters(p, k);
        Vector eigenvalues(k);
        for (int j = 0; j < k; ++j) {
            filters.col(j) = ge.eigenvectors.col(order[static_cast<std::size_t>(j)]);
            eigenvalues[j] = ge.eigenvalues[order[static_cast<std::size_t>(j)]];
        }
        features.middleCols(b * k, k) = detail::log_variance_block(ds, b, &filters, &pipe.variance_floor_hits);
        pipe.bands.push_back(BandModel{std::nullopt, std::nullopt, std::move(filters), std::move(eigenvalues)});
        pipe.block_offsets.push_back(b * k);
    }
    pipe.feature_dim = static_cast<int>(features.cols());
    pipe.standardizer = linmodel::fit_standardizer(features);
    detail::fit_head(pipe, ds, linmodel::apply_standardizer(pipe.standardizer, features), options);
    return pipe;
}

/// Common spatial patterns: per band, solve the class-mean eigenproblem against
/// the sum of class means and pick k/2 eigenvectors from each spectral end,
/// interleaved (largest, smallest, second-largest, ...).
inline FittedPipeline fit_csp(const CovarianceDataset& ds, int k, linmodel::HeadKind head_kind,
                              const FitOptions& options = {}) {
    const int p = ds.n_channels();
    if (ds.target_kind() != TargetKind::binary) throw contract_error("fit_csp: binary labels required");
    if (k < 2 || k > p || k % 2 != 0) throw contract_error("fit_csp: components must be even and within [2, P]");
    detail::check_head_targets(ds, head_kind);
    const int n = ds.n_obs();

    const std::array<double, 2> classes = ds.class_values();

    FittedPipeline pipe;
    pipe.method = Method::csp;
    pipe.head_kind = head_kind;
    pipe.n_channels = p;
    pipe.n_bands = ds.n_bands();
    pipe.components = k;
    pipe.class_values = classes;

    Matrix features(n, k * ds.n_bands());
    for (int b = 0; b < ds.n_bands(); ++b) {
        Matrix c_plus = Matrix::Zero(p, p);
        Matrix c_minus = Matrix::Zero(p, p);
        int n_plus = 0;
        int n_minus = 0;
        for (int i = 0; i < n; ++i) {
            if (ds.targets()[i] == classes[1]) {
                c_plus += ds.covariance(i, b).values();
                ++n_plus;
            } else {
                c_minus += ds.covariance(i, b).values();
                ++n_minus;
            }
        }
        c_plus /= static_cast<double>(n_plus);
        c_minus /= static_cast<double>(n_minus);

        const manifold::SymEig ge = manifold::gen_eig(SymmetricMatrix(c_plus), SpdMatrix(c_plus + c_minus));

        Matrix filters(p, k);
        Vector eigenvalues(k);
        int hi = 0;
        int lo = p - 1;
        for (int j = 0; j < k; ++j) {
            const int src = (j % 2 == 0) ? hi++ : lo--;
            filters.col(j) = ge.eigenvectors.col(src);
            eigenvalues[j] = ge.eigenvalues[src];
        }
        features.middleCols(b * k, k) = detail::log_variance_block(ds, b, &filters, &pipe.variance_floor_hits);
        pipe.bands.push_back(BandModel{std::nullopt, std::nullopt, std::move(filters), std::move(eigenvalues)});
        pipe.block_offsets.push_back(b * k);
    }
    pipe.feature_dim = static_cast<int>(features.cols());
    pipe.standardizer = linmodel::fit_standardizer(features);
    detail::fit_head(pipe, ds, linmodel::apply_standardizer(pipe.standardizer, features), options);
    return pipe;
}

/// Log band power in channel space: the covariance diagonals, no spatial de-mixing.
inline FittedPipeline fit_diag(const CovarianceDataset& ds, linmodel::HeadKind head_kind,
                               const FitOptions& options = {}) {
    detail::check_head_targets(ds, head_kind);
    const int p = ds.n_channels();

    FittedPipeline pipe;
    pipe.method = Method::diag;
    pipe.head_kind = head_kind;
    pipe.n_channels = p;
    pipe.n_bands = ds.n_bands();
    pipe.components = p;

    Matrix features(ds.n_obs(), p * ds.n_bands());
    for (int b = 0; b < ds.n_bands(); ++b) {
        features.middleCols(b * p, p) = detail::log_variance_block(ds, b, nullptr, &pipe.variance_floor_hits);
        pipe.bands.push_back(BandModel{std::nullopt, std::nullopt, std::nullopt, Vector()});
        pipe.block_offsets.push_back(b * p);
    }
    pipe.feature_dim = static_cast<int>(features.cols());
    pipe.standardizer = linmodel::fit_standardizer(features);
    detail::fit_head(pipe, ds, linmodel::apply_standardizer(pipe.standardizer, features), options);
    return pipe;
}

/// Dispatch by method tag. `components` is ignored for DIAG; -1 means "all channels".
inline FittedPipeline fit_pipeline(const CovarianceDataset& ds, Method method, int components,
                                   linmodel::HeadKind head_kind, const FitOptions& options = {}) {
    const int k = components < 0 ? ds.n_channels() : components;
    switch (method) {
        case Method::riemann: return fit_riemann(ds, k, head_kind, options);
        case Method::spoc: return fit_spoc(ds, k, head_kind, options);
        case Method::csp: return fit_csp(ds, k, head_kind, options);
        case Method::diag: return fit_diag(ds, head_kind, options);
    }
    throw contract_error("fit_pipeline: unknown method");
}

/// Apply the frozen pipeline to a dataset. Nothing is refitted.
inline Predictions pipeline_predict(const FittedPipeline& pipe, const CovarianceDataset& ds) {
    const Matrix features = pipeline_features(pipe, ds);
    const Matrix z = linmodel::apply_standardizer(pipe.standardizer, features);
    Predictions out;
    out.values = linmodel::predict(pipe.head, z);
    if (pipe.head_kind == linmodel::HeadKind::logistic) {
        const Eigen::VectorXi hard = linmodel::predict_labels(pipe.head, z);
        Vector labels(hard.size());
        for (Eigen::Index i = 0; i < hard.size(); ++i) {
            labels[i] = (*pipe.class_values)[hard[i] == 1 ? 1 : 0];
        }
        out.labels = std::move(labels);
    }
    return out;
}

}  // namespace riempat::pipelines
