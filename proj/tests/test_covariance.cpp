#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "riempat/covariance.hpp"

using namespace riempat;
using namespace riempat::covariance;
using Catch::Matchers::WithinAbs;

namespace {

/// Independent scalar evaluation of the OAS shrinkage coefficient, written
/// against plain running sums so it shares no code with the implementation.
double oas_rho_oracle(const Matrix& c, int n, int p) {
    double tr = 0.0;
    double tr_sq = 0.0;
    for (int i = 0; i < p; ++i) {
        tr += c(i, i);
        for (int j = 0; j < p; ++j) tr_sq += c(i, j) * c(j, i);
    }
    const double num = (1.0 - 2.0 / p) * tr_sq + tr * tr;
    const double den = (n + 1.0 - 2.0 / p) * (tr_sq - tr * tr / p);
    if (den <= 0.0) return 1.0;
    const double rho = num / den;
    return rho > 1.0 ? 1.0 : (rho < 0.0 ? 0.0 : rho);
}

Matrix random_psd(int p, int rank, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix g(p, rank);
    for (int i = 0; i < p; ++i) {
        for (int j = 0; j < rank; ++j) g(i, j) = normal(rng);
    }
    return g * g.transpose();
}

}  // namespace

TEST_CASE("sample_covariance", "[covariance]") {
    SECTION("known 2x2 window") {
        Matrix x(2, 2);
        x << 1.0, -1.0, 2.0, -2.0;
        const SymmetricMatrix c = sample_covariance(x);
        REQUIRE_THAT(c.values()(0, 0), WithinAbs(1.0, 1e-15));
        REQUIRE_THAT(c.values()(0, 1), WithinAbs(2.0, 1e-15));
        REQUIRE_THAT(c.values()(1, 1), WithinAbs(4.0, 1e-15));
    }
    SECTION("identity columns give I/P") {
        const int p = 4;
        const SymmetricMatrix c = sample_covariance(Matrix::Identity(p, p));
        REQUIRE((c.values() - Matrix::Identity(p, p) / p).cwiseAbs().maxCoeff() < 1e-15);
    }
    SECTION("single channel") {
        Matrix x(1, 2);
        x << 3.0, 4.0;
        REQUIRE_THAT(sample_covariance(x).values()(0, 0), WithinAbs(12.5, 1e-15));
    }
    SECTION("empty window is rejected") {
        REQUIRE_THROWS_AS(sample_covariance(Matrix(2, 0)), contract_error);
    }
    SECTION("non-finite samples are rejected") {
        Matrix x(1, 2);
        x << 1.0, std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_AS(sample_covariance(x), contract_error);
    }
    SECTION("congruence: cov(W X) = W cov(X) W^T") {
        std::mt19937_64 rng(5);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (int rep = 0; rep < 20; ++rep) {
            Matrix x(3, 16), w(3, 3);
            for (int i = 0; i < 3; ++i) {
                for (int t = 0; t < 16; ++t) x(i, t) = normal(rng);
                for (int j = 0; j < 3; ++j) w(i, j) = normal(rng);
            }
            const Matrix lhs = sample_covariance(w * x).values();
            const Matrix rhs = w * sample_covariance(x).values() * w.transpose();
            REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("oas_shrinkage", "[covariance][oas]") {
    SECTION("identity input stays the identity") {
        for (int n : {1, 2, 50}) {
            for (int p : {2, 5}) {
                const SpdMatrix out = oas_shrinkage(SymmetricMatrix(Matrix::Identity(p, p)), n);
                REQUIRE((out.values() - Matrix::Identity(p, p)).cwiseAbs().maxCoeff() < 1e-14);
            }
        }
    }
    SECTION("rank-1 input becomes strictly positive definite; rho matches the scalar oracle") {
        Matrix c = Matrix::Zero(2, 2);
        c(0, 0) = 1.0;
        const double rho = oas_rho_oracle(c, 2, 2);
        // The scalar oracle evaluates to full shrinkage here: num = tr^2 = 1,
        // den = 2 * (1 - 1/2) = 1, so rho = 1 and the output is mu * I = 0.5 I.
        REQUIRE_THAT(rho, WithinAbs(1.0, 0.0));
        const SpdMatrix out = oas_shrinkage(SymmetricMatrix(c), 2);
        REQUIRE((out.values() - 0.5 * Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-15);
    }
    SECTION("rho matches the scalar oracle on a structured input") {
        Matrix c = Matrix::Zero(3, 3);
        c.diagonal() << 3.0, 2.0, 1.0;
        c(0, 1) = c(1, 0) = 0.5;
        for (int n : {2, 5, 10, 100}) {
            REQUIRE_THAT(oas_rho(SymmetricMatrix(c), n), WithinAbs(oas_rho_oracle(c, n, 3), 1e-14));
        }
    }
    SECTION("rho is nonincreasing in the sample count") {
        Matrix c = Matrix::Zero(3, 3);
        c.diagonal() << 3.0, 2.0, 1.0;
        double prev = 2.0;
        for (int n = 2; n <= 1000; ++n) {
            const double rho = oas_rho_oracle(c, n, 3);
            REQUIRE(rho <= prev + 1e-15);
            REQUIRE_THAT(oas_rho(SymmetricMatrix(c), n), WithinAbs(rho, 1e-14));
            prev = rho;
        }
    }
    SECTION("output is positive definite for random PSD inputs with positive trace") {
        std::mt19937_64 rng(7);
        for (int rep = 0; rep < 50; ++rep) {
            const Matrix c = random_psd(4, 2, rng);  // rank-deficient on purpose
            const SpdMatrix out = oas_shrinkage(SymmetricMatrix(c), 3);
            REQUIRE(out.dim() == 4);  // SpdMatrix construction already validated definiteness
        }
    }
    SECTION("errors") {
        REQUIRE_THROWS_AS(oas_shrinkage(SymmetricMatrix(Matrix::Zero(2, 2)), 5), degenerate_error);
        REQUIRE_THROWS_AS(oas_shrinkage(SymmetricMatrix(Matrix::Identity(2, 2)), 0), contract_error);
    }
}

TEST_CASE("pca_reducer and apply_reducer", "[covariance][pca]") {
    Matrix mean = Matrix::Zero(3, 3);
    mean.diagonal() << 3.0, 2.0, 1.0;

    SECTION("top-2 components of a diagonal mean span the first two axes") {
        std::vector<SymmetricMatrix> cs{SymmetricMatrix(mean)};
        const SpatialReducer r = pca_reducer(cs, 2);
        REQUIRE(r.input_dim() == 3);
        REQUIRE(r.output_dim() == 2);
        // Span check: projecting e1 and e2 must be norm-preserving, e3 must vanish.
        Vector e1 = Vector::Zero(3), e3 = Vector::Zero(3);
        e1[0] = 1.0;
        e3[2] = 1.0;
        REQUIRE_THAT((r.filters().transpose() * e1).norm(), WithinAbs(1.0, 1e-12));
        REQUIRE_THAT((r.filters().transpose() * e3).norm(), WithinAbs(0.0, 1e-12));
    }
    SECTION("k = P gives a square orthonormal, invertible reduction") {
        std::vector<SymmetricMatrix> cs{SymmetricMatrix(mean)};
        const SpatialReducer r = pca_reducer(cs, 3);
        const Matrix w = r.filters();
        REQUIRE((w * w.transpose() - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
        const SymmetricMatrix reduced = apply_reducer(SymmetricMatrix(mean), r);
        const Matrix back = w * reduced.values() * w.transpose();
        REQUIRE((back - mean).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("eigenvalue tie at the cut resolves deterministically") {
        Matrix tied = Matrix::Zero(3, 3);
        tied.diagonal() << 2.0, 1.0, 1.0;
        std::vector<SymmetricMatrix> cs{SymmetricMatrix(tied)};
        const SpatialReducer a = pca_reducer(cs, 2);
        const SpatialReducer b = pca_reducer(cs, 2);
        REQUIRE((a.filters() - b.filters()).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("k out of range") {
        std::vector<SymmetricMatrix> cs{SymmetricMatrix(mean)};
        REQUIRE_THROWS_AS(pca_reducer(cs, 0), shape_error);
        REQUIRE_THROWS_AS(pca_reducer(cs, 4), shape_error);
    }
    SECTION("identity reducer leaves matrices unchanged") {
        const SpatialReducer r{Matrix::Identity(3, 3)};
        REQUIRE((apply_reducer(SymmetricMatrix(mean), r).values() - mean).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("axis-aligned reduction of a diagonal matrix") {
        Matrix w = Matrix::Zero(3, 2);
        w(0, 0) = 1.0;
        w(1, 1) = 1.0;
        const SymmetricMatrix out = apply_reducer(SymmetricMatrix(mean), SpatialReducer(w));
        REQUIRE_THAT(out.values()(0, 0), WithinAbs(3.0, 1e-15));
        REQUIRE_THAT(out.values()(1, 1), WithinAbs(2.0, 1e-15));
        REQUIRE_THAT(out.values()(0, 1), WithinAbs(0.0, 1e-15));
    }
    SECTION("non-orthonormal filters are rejected") {
        Matrix w = Matrix::Zero(3, 2);
        w(0, 0) = 2.0;
        w(1, 1) = 1.0;
        REQUIRE_THROWS_AS(SpatialReducer(w), contract_error);
    }
    SECTION("reduction preserves positive semidefiniteness on random inputs") {
        std::mt19937_64 rng(11);
        for (int rep = 0; rep < 20; ++rep) {
            const Matrix c = random_psd(4, 4, rng);
            std::vector<SymmetricMatrix> cs{SymmetricMatrix(c)};
            const SpatialReducer r = pca_reducer(cs, 2);
            const SymmetricMatrix out = apply_reducer(SymmetricMatrix(c), r);
            Eigen::SelfAdjointEigenSolver<Matrix> eig(out.values(), Eigen::EigenvaluesOnly);
            REQUIRE(eig.eigenvalues().minCoeff() > -1e-10);
        }
    }
    SECTION("reduced mean eigenvalues equal the top-k eigenvalues of the original mean") {
        std::mt19937_64 rng(13);
        for (int rep = 0; rep < 10; ++rep) {
            std::vector<SymmetricMatrix> cs;
            Matrix sum = Matrix::Zero(5, 5);
            for (int i = 0; i < 6; ++i) {
                cs.emplace_back(random_psd(5, 5, rng));
                sum += cs.back().values();
            }
            sum /= 6.0;
            const SpatialReducer r = pca_reducer(cs, 3);
            const SymmetricMatrix reduced_mean = apply_reducer(SymmetricMatrix(sum), r);
            Eigen::SelfAdjointEigenSolver<Matrix> full(sum, Eigen::EigenvaluesOnly);
            Eigen::SelfAdjointEigenSolver<Matrix> part(reduced_mean.values(), Eigen::EigenvaluesOnly);
            for (int j = 0; j < 3; ++j) {
                REQUIRE_THAT(part.eigenvalues()[2 - j], WithinAbs(full.eigenvalues()[4 - j], 1e-9));
            }
        }
    }
}
