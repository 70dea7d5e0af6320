#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "riempat/errors.hpp"

namespace riempat::manifold {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative tolerance for accepting a matrix as symmetric: max|M - M^T| <= tol * max|M|.
inline constexpr double symmetry_tolerance = 1e-10;

namespace detail {

inline double asymmetry(const Matrix& m) {
    return (m - m.transpose()).cwiseAbs().maxCoeff();
}

inline bool is_symmetric(const Matrix& m, double tol = symmetry_tolerance) {
    if (m.rows() != m.cols()) return false;
    return asymmetry(m) <= tol * m.cwiseAbs().maxCoeff();
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted descending.
inline std::pair<Vector, Matrix> eig_descending(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
    if (solver.info() != Eigen::Success) {
        std::ostringstream msg;
        msg << "symmetric eigensolver did not converge (dim=" << sym.rows()
            << ", |M|_F=" << sym.norm() << ", max|M|=" << sym.cwiseAbs().maxCoeff() << ")";
        throw numerical_error(msg.str());
    }
    const Eigen::Index n = sym.rows();
    Vector values(n);
    Matrix vectors(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        values[j] = solver.eigenvalues()[n - 1 - j];
        vectors.col(j) = solver.eigenvectors().col(n - 1 - j);
    }
    return {std::move(values), std::move(vectors)};
}

/// V f(lambda) V^T for symmetric input.
template <typename Fn>
Matrix spectral_map(const Matrix& sym, Fn&& fn) {
    auto [values, vectors] = eig_descending(sym);
    Vector mapped(values.size());
    for (Eigen::Index j = 0; j < values.size(); ++j) mapped[j] = fn(values[j]);
    return symmetrized(vectors * mapped.asDiagonal() * vectors.transpose());
}

inline double positive_or_throw(double lambda, const char* what) {
    if (!(lambda > 0.0)) {
        std::ostringstream msg;
        msg << what << ": eigenvalue " << lambda << " is not positive";
        throw not_positive_definite_error(msg.str());
    }
    return lambda;
}

inline Matrix spd_power_raw(const Matrix& sym, double exponent, const char* what) {
    return spectral_map(sym, [&](double lambda) { return std::pow(positive_or_throw(lambda, what), exponent); });
}

inline Matrix spd_log_raw(const Matrix& sym, const char* what) {
    return spectral_map(sym, [&](double lambda) { return std::log(positive_or_throw(lambda, what)); });
}

inline Matrix sym_exp_raw(const Matrix& sym) {
    return spectral_map(sym, [](double lambda) { return std::exp(lambda); });
}

}  // namespace detail

/// Real symmetric matrix (not necessarily definite). Construction validates symmetry
/// and stores the exactly symmetrized values.
class SymmetricMatrix {
public:
    explicit SymmetricMatrix(Matrix values) {
        if (values.rows() != values.cols() || values.rows() == 0) {
            std::ostringstream msg;
            msg << "SymmetricMatrix: expected square, got " << values.rows() << "x" << values.cols();
            throw shape_error(msg.str());
        }
        if (!detail::is_symmetric(values)) {
            std::ostringstream msg;
            msg << "SymmetricMatrix: not symmetric, max|M - M^T| = " << detail::asymmetry(values);
            throw contract_error(msg.str());
        }
        values_ = detail::symmetrized(values);
    }

    int dim() const noexcept { return static_cast<int>(values_.rows()); }
    const Matrix& values() const noexcept { return values_; }

private:
    Matrix values_;
};

/// Symmetric positive definite matrix. Definiteness is validated eagerly at
/// construction (smallest eigenvalue must be strictly positive); rank-deficient
/// inputs are rejected rather than clamped.
class SpdMatrix : public SymmetricMatrix {
public:
    explicit SpdMatrix(Matrix values) : SymmetricMatrix(std::move(values)) {
        Eigen::SelfAdjointEigenSolver<Matrix> solver(this->values(), Eigen::EigenvaluesOnly);
        if (solver.info() != Eigen::Success) {
            throw numerical_error("SpdMatrix: eigensolver did not converge during validation");
        }
        const double smallest = solver.eigenvalues().minCoeff();
        if (!(smallest > 0.0)) {
            std::ostringstream msg;
            msg << "SpdMatrix: not positive definite, smallest eigenvalue = " << smallest;
            throw not_positive_definite_error(msg.str());
        }
    }
};

/// Half-vectorized element of the tangent space at some SPD base point.
struct TangentVector {
    int dim = 0;                                ///< dimension P of the base point
    Vector values;                              ///< length P(P+1)/2
    std::uint64_t reference_id = 0;             ///< caller-assigned id of the base point
};

struct SymEig {
    Vector eigenvalues;   ///< sorted descending
    Matrix eigenvectors;  ///< columns paired with eigenvalues
};

/// Symmetric eigendecomposition, eigenvalues descending, eigenvectors orthonormal.
inline SymEig sym_eig(const SymmetricMatrix& m) {
    auto [values, vectors] = detail::eig_descending(m.values());
    return {std::move(values), std::move(vectors)};
}

/// C^exponent through the spectral decomposition.
inline SpdMatrix spd_power(const SpdMatrix& c, double exponent) {
    return SpdMatrix(detail::spd_power_raw(c.values(), exponent, "spd_power"));
}

/// Matrix logarithm of an SPD matrix.
inline SymmetricMatrix spd_log(const SpdMatrix& c) {
    return SymmetricMatrix(detail::spd_log_raw(c.values(), "spd_log"));
}

/// Matrix exponential of a symmetric matrix; always positive definite.
inline SpdMatrix spd_exp(const SymmetricMatrix& m) {
    return SpdMatrix(detail::sym_exp_raw(m.values()));
}

/// Half-vectorization: row-major upper triangle, off-diagonal entries weighted
/// by sqrt(2) so that the Euclidean norm equals the Frobenius norm.
inline Vector upper(const SymmetricMatrix& m) {
    const int p = m.dim();
    Vector v(p * (p + 1) / 2);
    const double sqrt2 = std::sqrt(2.0);
    int idx = 0;
    for (int i = 0; i < p; ++i) {
        v[idx++] = m.values()(i, i);
        for (int j = i + 1; j < p; ++j) v[idx++] = sqrt2 * m.values()(i, j);
    }
    return v;
}

/// Inverse of upper(): divide the off-diagonal slots by sqrt(2) and mirror.
inline SymmetricMatrix upper_inv(const Vector& v) {
    const auto len = v.size();
    const int p = static_cast<int>(std::lround((std::sqrt(8.0 * static_cast<double>(len) + 1.0) - 1.0) / 2.0));
    if (len <= 0 || static_cast<Eigen::Index>(p) * (p + 1) / 2 != len) {
        std::ostringstream msg;
        msg << "upper_inv: length " << len << " is not a triangular number";
        throw shape_error(msg.str());
    }
    Matrix m(p, p);
    const double sqrt2 = std::sqrt(2.0);
    int idx = 0;
    for (int i = 0; i < p; ++i) {
        m(i, i) = v[idx++];
        for (int j = i + 1; j < p; ++j) {
            const double x = v[idx++] / sqrt2;
            m(i, j) = x;
            m(j, i) = x;
        }
    }
    return SymmetricMatrix(std::move(m));
}

/// Precomputes ref^{1/2} and ref^{-1/2} so that many matrices can be embedded
/// at (or mapped back from) the same base point cheaply.
class TangentProjector {
public:
    explicit TangentProjector(SpdMatrix ref)
        : ref_(std::move(ref)),
          sqrt_(detail::spd_power_raw(ref_.values(), 0.5, "TangentProjector")),
          inv_sqrt_(detail::spd_power_raw(ref_.values(), -0.5, "TangentProjector")) {}

    const SpdMatrix& reference() const noexcept { return ref_; }

    TangentVector project(const SpdMatrix& c, std::uint64_t reference_id = 0) const {
        if (c.dim() != ref_.dim()) throw shape_error("TangentProjector::project: dimension mismatch");
        const Matrix whitened = detail::symmetrized(inv_sqrt_ * c.values() * inv_sqrt_);
        TangentVector v;
        v.dim = c.dim();
        v.reference_id = reference_id;
        v.values = upper(SymmetricMatrix(detail::spd_log_raw(whitened, "tangent_project")));
        return v;
    }

    SpdMatrix unproject(const TangentVector& v) const {
        if (v.values.size() != static_cast<Eigen::Index>(ref_.dim()) * (ref_.dim() + 1) / 2) {
            throw shape_error("TangentProjector::unproject: tangent vector length does not match base point");
        }
        const Matrix inner = detail::sym_exp_raw(upper_inv(v.values).values());
        return SpdMatrix(detail::symmetrized(sqrt_ * inner * sqrt_));
    }

private:
    SpdMatrix ref_;
    Matrix sqrt_;
    Matrix inv_sqrt_;
};

/// Tangent-space embedding at ref: upper(log(ref^{-1/2} c ref^{-1/2})).
inline TangentVector tangent_project(const SpdMatrix& c, const SpdMatrix& ref, std::uint64_t reference_id = 0) {
    return TangentProjector(ref).project(c, reference_id);
}

/// Inverse embedding: ref^{1/2} exp(upper^{-1}(v)) ref^{1/2}.
inline SpdMatrix tangent_unproject(const TangentVector& v, const SpdMatrix& ref) {
    return TangentProjector(ref).unproject(v);
}

/// Affine-invariant distance ||log(a^{-1/2} b a^{-1/2})||_F.
inline double geodesic_distance(const SpdMatrix& a, const SpdMatrix& b) {
    if (a.dim() != b.dim()) throw shape_error("geodesic_distance: dimension mismatch");
    const Matrix inv_sqrt = detail::spd_power_raw(a.values(), -0.5, "geodesic_distance");
    const Matrix whitened = detail::symmetrized(inv_sqrt * b.values() * inv_sqrt);
    auto [values, vectors] = detail::eig_descending(whitened);
    double sum = 0.0;
    for (Eigen::Index j = 0; j < values.size(); ++j) {
        const double lg = std::log(detail::positive_or_throw(values[j], "geodesic_distance"));
        sum += lg * lg;
    }
    return std::sqrt(sum);
}

/// Geometric (Karcher) mean via the fixed-point iteration
/// m <- m^{1/2} exp(mean_i log(m^{-1/2} C_i m^{-1/2})) m^{1/2},
/// initialized at the arithmetic mean, with step halving whenever the gradient
/// norm would increase.
inline SpdMatrix geometric_mean(std::span<const SpdMatrix> cs, double tol = 1e-7, int max_iter = 50) {
    if (cs.empty()) throw contract_error("geometric_mean: empty input");
    const int p = cs.front().dim();
    for (const auto& c : cs) {
        if (c.dim() != p) throw shape_error("geometric_mean: dimension mismatch across inputs");
    }
    if (cs.size() == 1) return cs.front();

    Matrix current = Matrix::Zero(p, p);
    for (const auto& c : cs) current += c.values();
    current /= static_cast<double>(cs.size());

    auto karcher_gradient = [&](const Matrix& m) {
        const Matrix inv_sqrt = detail::spd_power_raw(m, -0.5, "geometric_mean");
        Matrix s = Matrix::Zero(p, p);
        for (const auto& c : cs) {
            const Matrix whitened = detail::symmetrized(inv_sqrt * c.values() * inv_sqrt);
            s += detail::spd_log_raw(whitened, "geometric_mean");
        }
        s /= static_cast<double>(cs.size());
        return s;
    };

    Matrix grad = karcher_gradient(current);
    double grad_norm = grad.norm();
    for (int iter = 0; iter < max_iter && grad_norm > tol; ++iter) {
        const Matrix sqrt_m = detail::spd_power_raw(current, 0.5, "geometric_mean");
        double step = 1.0;
        for (;;) {
            const Matrix candidate = detail::symmetrized(sqrt_m * detail::sym_exp_raw(step * grad) * sqrt_m);
            const Matrix candidate_grad = karcher_gradient(candidate);
            const double candidate_norm = candidate_grad.norm();
            if (candidate_norm < grad_norm || step <= 1.0 / 1024.0) {
                current = candidate;
                grad = candidate_grad;
                grad_norm = candidate_norm;
                break;
            }
            step *= 0.5;
        }
    }
    if (grad_norm > tol) {
        std::ostringstream msg;
        msg << "geometric_mean: gradient norm " << grad_norm << " above tolerance " << tol
            << " after " << max_iter << " iterations";
        throw convergence_error(msg.str(), grad_norm);
    }
    return SpdMatrix(current);
}

inline SpdMatrix geometric_mean(const std::vector<SpdMatrix>& cs, double tol = 1e-7, int max_iter = 50) {
    return geometric_mean(std::span<const SpdMatrix>(cs.data(), cs.size()), tol, max_iter);
}

/// Generalized symmetric eigendecomposition A v = lambda B v with V^T B V = I,
/// solved by whitening with b^{-1/2}; eigenvalues sorted descending.
inline SymEig gen_eig(const SymmetricMatrix& a, const SpdMatrix& b) {
    if (a.dim() != b.dim()) throw shape_error("gen_eig: dimension mismatch");
    const Matrix b_inv_sqrt = detail::spd_power_raw(b.values(), -0.5, "gen_eig");
    const Matrix whitened = detail::symmetrized(b_inv_sqrt * a.values() * b_inv_sqrt);
    auto [values, vectors] = detail::eig_descending(whitened);
    return {std::move(values), b_inv_sqrt * vectors};
}

}  // namespace riempat::manifold
