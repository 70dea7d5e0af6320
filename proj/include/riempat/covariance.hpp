#pragma once

#include <algorithm>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "riempat/manifold.hpp"

namespace riempat::covariance {

using manifold::Matrix;
using manifold::SpdMatrix;
using manifold::SymmetricMatrix;
using manifold::Vector;

/// P channels by T samples; signals are assumed zero-mean by the caller.
using MultichannelWindow = Matrix;

/// Sample covariance (1/T) X X^T of a zero-mean window. No mean removal here.
inline SymmetricMatrix sample_covariance(const MultichannelWindow& x) {
    if (x.cols() < 1 || x.rows() < 1) throw contract_error("sample_covariance: empty window");
    if (!x.allFinite()) throw contract_error("sample_covariance: non-finite samples");
    const double t = static_cast<double>(x.cols());
    return SymmetricMatrix(manifold::detail::symmetrized((x * x.transpose()) / t));
}

/// OAS shrinkage coefficient, clipped to [0, 1].
inline double oas_rho(const SymmetricMatrix& c, int n_samples) {
    if (n_samples < 1) throw contract_error("oas_rho: n_samples must be >= 1");
    const double p = static_cast<double>(c.dim());
    const double tr = c.values().trace();
    const double tr_sq = c.values().squaredNorm();  // tr(C^2) for symmetric C
    const double num = (1.0 - 2.0 / p) * tr_sq + tr * tr;
    const double den = (n_samples + 1.0 - 2.0 / p) * (tr_sq - tr * tr / p);
    if (den <= 0.0) return 1.0;  // C proportional to identity: target equals input
    return std::clamp(num / den, 0.0, 1.0);
}

/// Convex shrinkage (1-rho) C + rho mu I toward the scaled identity, mu = tr(C)/P.
inline SpdMatrix oas_shrinkage(const SymmetricMatrix& c, int n_samples) {
    if (n_samples < 1) throw contract_error("oas_shrinkage: n_samples must be >= 1");
    const double tr = c.values().trace();
    if (!(tr > 0.0)) {
        std::ostringstream msg;
        msg << "oas_shrinkage: degenerate input, tr(C) = " << tr;
        throw degenerate_error(msg.str());
    }
    const double mu = tr / c.dim();
    const double rho = oas_rho(c, n_samples);
    Matrix out = (1.0 - rho) * c.values();
    out.diagonal().array() += rho * mu;
    return SpdMatrix(std::move(out));
}

/// Orthonormal spatial projection from P channels to K components.
class SpatialReducer {
public:
    explicit SpatialReducer(Matrix filters) : filters_(std::move(filters)) {
        if (filters_.rows() < 1 || filters_.cols() < 1 || filters_.cols() > filters_.rows()) {
            std::ostringstream msg;
            msg << "SpatialReducer: invalid filter shape " << filters_.rows() << "x" << filters_.cols();
            throw shape_error(msg.str());
        }
        const Matrix gram = filters_.transpose() * filters_;
        const Matrix eye = Matrix::Identity(filters_.cols(), filters_.cols());
        if ((gram - eye).cwiseAbs().maxCoeff() > 1e-10) {
            throw contract_error("SpatialReducer: filter columns are not orthonormal");
        }
    }

    const Matrix& filters() const noexcept { return filters_; }
    int input_dim() const noexcept { return static_cast<int>(filters_.rows()); }
    int output_dim() const noexcept { return static_cast<int>(filters_.cols()); }

private:
    Matrix filters_;
};

/// First K principal components of the arithmetic mean of the given matrices.
/// Eigenvalue ties at the cut are broken by first occurrence in the descending
/// eigensolver order, so patterns are subspace-stable (not vector-stable) under ties.
template <typename SymLike>
SpatialReducer pca_reducer(std::span<const SymLike> cs, int k) {
    if (cs.empty()) throw contract_error("pca_reducer: empty input");
    const int p = cs.front().dim();
    if (k < 1 || k > p) {
        std::ostringstream msg;
        msg << "pca_reducer: k = " << k << " out of range [1, " << p << "]";
        throw shape_error(msg.str());
    }
    Matrix mean = Matrix::Zero(p, p);
    for (const auto& c : cs) {
        if (c.dim() != p) throw shape_error("pca_reducer: dimension mismatch across inputs");
        mean += c.values();
    }
    mean /= static_cast<double>(cs.size());
    auto [values, vectors] = manifold::detail::eig_descending(mean);
    return SpatialReducer(vectors.leftCols(k));
}

template <typename SymLike>
SpatialReducer pca_reducer(const std::vector<SymLike>& cs, int k) {
    return pca_reducer(std::span<const SymLike>(cs.data(), cs.size()), k);
}

/// W^T C W, mapping a P-dim covariance into the K-dim reduced space.
inline SymmetricMatrix apply_reducer(const SymmetricMatrix& c, const SpatialReducer& r) {
    if (c.dim() != r.input_dim()) throw shape_error("apply_reducer: dimension mismatch");
    return SymmetricMatrix(manifold::detail::symmetrized(r.filters().transpose() * c.values() * r.filters()));
}

}  // namespace riempat::covariance
