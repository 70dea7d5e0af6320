#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "riempat/linmodel.hpp"

using namespace riempat;
using namespace riempat::linmodel;
using Catch::Matchers::WithinAbs;

namespace {

/// Brute-force GCV score: builds the dense hat matrix of the centered problem.
double gcv_brute_force(const Matrix& features, const Vector& targets, double alpha) {
    const double n = static_cast<double>(features.rows());
    const Vector mu = features.colwise().mean();
    const Matrix vc = features.rowwise() - mu.transpose();
    const Vector yc = targets.array() - targets.mean();
    const Matrix gram = vc.transpose() * vc + alpha * Matrix::Identity(features.cols(), features.cols());
    const Matrix hat = vc * gram.ldlt().solve(vc.transpose());
    const Vector residual = yc - hat * yc;
    const double denom = 1.0 - hat.trace() / n;
    return (residual.squaredNorm() / n) / (denom * denom);
}

/// Brute-force ridge with unpenalized intercept, used by the leave-one-out oracle.
std::pair<Vector, double> ridge_brute_force(const Matrix& features, const Vector& targets, double alpha) {
    const Vector mu = features.colwise().mean();
    const Matrix vc = features.rowwise() - mu.transpose();
    const double ybar = targets.mean();
    const Vector yc = targets.array() - ybar;
    const Matrix gram = vc.transpose() * vc + alpha * Matrix::Identity(features.cols(), features.cols());
    const Vector w = gram.ldlt().solve(vc.transpose() * yc);
    return {w, ybar - w.dot(mu)};
}

/// Explicit leave-one-out mean squared error at a given penalty.
double loo_error(const Matrix& features, const Vector& targets, double alpha) {
    const int n = static_cast<int>(features.rows());
    double sum = 0.0;
    for (int leave = 0; leave < n; ++leave) {
        Matrix train_x(n - 1, features.cols());
        Vector train_y(n - 1);
        int row = 0;
        for (int i = 0; i < n; ++i) {
            if (i == leave) continue;
            train_x.row(row) = features.row(i);
            train_y[row] = targets[i];
            ++row;
        }
        const auto [w, b] = ridge_brute_force(train_x, train_y, alpha);
        const double pred = w.dot(features.row(leave)) + b;
        sum += (targets[leave] - pred) * (targets[leave] - pred);
    }
    return sum / n;
}

Matrix random_matrix(int n, int d, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(n, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) m(i, j) = normal(rng);
    }
    return m;
}

}  // namespace

TEST_CASE("RegularizationGrid", "[linmodel][grid]") {
    SECTION("default grid has 25 log-spaced values over [1e-5, 1e3]") {
        const RegularizationGrid& grid = default_grid();
        REQUIRE(grid.size() == 25);
        REQUIRE_THAT(grid[0], WithinAbs(1e-5, 0.0));
        REQUIRE_THAT(grid[24], WithinAbs(1e3, 0.0));
        for (std::size_t i = 1; i < grid.size(); ++i) {
            REQUIRE(grid[i] > grid[i - 1]);
            // log-spacing: constant ratio
            REQUIRE_THAT(std::log10(grid[i] / grid[i - 1]), WithinAbs(8.0 / 24.0, 1e-9));
        }
    }
    SECTION("degenerate grids are rejected") {
        REQUIRE_THROWS_AS(RegularizationGrid(std::vector<double>{}), contract_error);
        REQUIRE_THROWS_AS(RegularizationGrid({1.0, 1.0}), contract_error);
        REQUIRE_THROWS_AS(RegularizationGrid({-1.0, 1.0}), contract_error);
        REQUIRE_THROWS_AS(RegularizationGrid::log_spaced(1e-5, 1e-6), contract_error);
    }
}

TEST_CASE("Standardizer", "[linmodel][standardizer]") {
    SECTION("column (1, 3) maps to (-1, 1)") {
        Matrix x(2, 1);
        x << 1.0, 3.0;
        const Standardizer s = fit_standardizer(x);
        const Matrix z = apply_standardizer(s, x);
        REQUIRE_THAT(z(0, 0), WithinAbs(-1.0, 1e-15));
        REQUIRE_THAT(z(1, 0), WithinAbs(1.0, 1e-15));
    }
    SECTION("constant columns map to zero") {
        Matrix x(3, 2);
        x << 5.0, 1.0, 5.0, 2.0, 5.0, 3.0;
        const Matrix z = apply_standardizer(fit_standardizer(x), x);
        REQUIRE(z.col(0).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("training data is reproduced with mean 0 and std 1") {
        std::mt19937_64 rng(3);
        const Matrix x = random_matrix(40, 5, rng);
        const Matrix z = apply_standardizer(fit_standardizer(x), x);
        for (int j = 0; j < 5; ++j) {
            REQUIRE_THAT(z.col(j).mean(), WithinAbs(0.0, 1e-12));
            REQUIRE_THAT(std::sqrt(z.col(j).squaredNorm() / 40.0), WithinAbs(1.0, 1e-12));
        }
    }
    SECTION("errors") {
        REQUIRE_THROWS_AS(fit_standardizer(Matrix::Zero(1, 2)), insufficient_data_error);
        Matrix x(3, 1);
        x << 1.0, 2.0, 3.0;
        const Standardizer s = fit_standardizer(x);
        REQUIRE_THROWS_AS(apply_standardizer(s, Matrix::Zero(2, 2)), shape_error);
    }
}

TEST_CASE("fit_ridge_gcv recovers a noiseless linear rule", "[linmodel][ridge]") {
    std::mt19937_64 rng(5);
    Matrix x = random_matrix(100, 1, rng);
    Vector y = 2.0 * x.col(0).array() + 1.0;
    const LinearHead head = fit_ridge_gcv(x, y);
    REQUIRE_THAT(head.weights[0], WithinAbs(2.0, 1e-3));
    REQUIRE_THAT(head.bias, WithinAbs(1.0, 1e-3));
    REQUIRE_THAT(head.chosen_alpha, WithinAbs(1e-5, 0.0));  // smallest penalty wins on noiseless data
}

TEST_CASE("GCV scores match the dense hat-matrix oracle", "[linmodel][ridge][oracle]") {
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 5; ++rep) {
        const int n_obs = 20 + 7 * rep;  // up to 48, within the N <= 50 oracle regime
        const Matrix x = random_matrix(n_obs, 4, rng);
        Vector y = random_matrix(n_obs, 1, rng).col(0);
        const RidgeGcvResult result = fit_ridge_gcv_path(x, y);
        const auto& grid = default_grid();
        for (std::size_t gi = 0; gi < grid.size(); ++gi) {
            const double oracle = gcv_brute_force(x, y, grid[gi]);
            const double got = result.gcv_scores[static_cast<Eigen::Index>(gi)];
            REQUIRE_THAT(got, WithinAbs(oracle, 1e-8 * std::max(1.0, std::abs(oracle))));
        }
    }
}

TEST_CASE("GCV on pure-noise targets prefers strong regularization", "[linmodel][ridge][oracle]") {
    std::mt19937_64 rng(11);
    const Matrix x = random_matrix(40, 10, rng);
    const Vector y = random_matrix(40, 1, rng).col(0);  // independent of x

    const RidgeGcvResult result = fit_ridge_gcv_path(x, y);
    const auto& grid = default_grid();

    // Leave-one-out oracle: the explicitly computed LOO error also has its
    // minimum in the upper half of the grid on this data.
    std::size_t loo_best = 0;
    double loo_best_err = std::numeric_limits<double>::infinity();
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        const double err = loo_error(x, y, grid[gi]);
        if (err < loo_best_err) {
            loo_best_err = err;
            loo_best = gi;
        }
    }
    REQUIRE(loo_best >= 12);
    REQUIRE(result.head.chosen_alpha >= grid[12]);

    const LinearHead at_min = fit_ridge_at(x, y, grid[0]);
    REQUIRE(result.head.weights.norm() <= at_min.weights.norm());
}

TEST_CASE("ridge solution satisfies the centered normal equations", "[linmodel][ridge]") {
    std::mt19937_64 rng(13);
    const Matrix x = random_matrix(30, 6, rng);
    Vector y = x * Vector::Ones(6) + 0.1 * random_matrix(30, 1, rng).col(0);
    for (double alpha : {1e-4, 1.0, 100.0}) {
        const LinearHead head = fit_ridge_at(x, y, alpha);
        const Vector mu = x.colwise().mean();
        const Matrix vc = x.rowwise() - mu.transpose();
        const Vector yc = y.array() - y.mean();
        const Vector lhs = (vc.transpose() * vc + alpha * Matrix::Identity(6, 6)) * head.weights;
        const Vector rhs = vc.transpose() * yc;
        REQUIRE((lhs - rhs).norm() / rhs.norm() < 1e-8);
        REQUIRE_THAT(head.bias, WithinAbs(y.mean() - head.weights.dot(mu), 1e-12));
    }
}

TEST_CASE("GCV selection is invariant to observation order", "[linmodel][ridge]") {
    std::mt19937_64 rng(17);
    const Matrix x = random_matrix(25, 3, rng);
    const Vector y = random_matrix(25, 1, rng).col(0);
    const LinearHead head = fit_ridge_gcv(x, y);

    std::vector<int> perm(25);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix xp(25, 3);
    Vector yp(25);
    for (int i = 0; i < 25; ++i) {
        xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
        yp[i] = y[perm[static_cast<std::size_t>(i)]];
    }
    const LinearHead permuted = fit_ridge_gcv(xp, yp);
    REQUIRE(permuted.chosen_alpha == head.chosen_alpha);
    REQUIRE((permuted.weights - head.weights).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("fit_logistic_l2 on separable data", "[linmodel][logistic]") {
    Matrix x(10, 1);
    Vector y(10);
    for (int i = 0; i < 10; ++i) {
        x(i, 0) = (i < 5) ? -2.0 + 0.1 * i : 2.0 + 0.1 * i;
        y[i] = (i < 5) ? 0.0 : 1.0;
    }
    const LinearHead head = fit_logistic_l2(x, y);
    const Eigen::VectorXi labels = predict_labels(head, x);
    for (int i = 0; i < 10; ++i) REQUIRE(labels[i] == static_cast<int>(y[i]));

    SECTION("larger penalties shrink the weights") {
        double prev = std::numeric_limits<double>::infinity();
        for (double alpha : {0.01, 0.1, 1.0, 10.0, 100.0}) {
            const LinearHead at = fit_logistic_at(x, y, alpha);
            REQUIRE(at.weights.norm() < prev);
            prev = at.weights.norm();
        }
    }
}

TEST_CASE("logistic symmetries", "[linmodel][logistic]") {
    std::mt19937_64 rng(19);
    Matrix x = random_matrix(30, 3, rng);
    Vector y(30);
    for (int i = 0; i < 30; ++i) y[i] = (x(i, 0) + 0.3 * x(i, 1) + 0.2 * x(i, 2) > 0.0) ? 1.0 : 0.0;
    if ((y.array() == 0.0).count() < 5 || (y.array() == 1.0).count() < 5) FAIL("bad fixture");

    const LinearHead base = fit_logistic_l2(x, y);

    SECTION("flipping the labels negates the weights") {
        const Vector flipped = 1.0 - y.array();
        const LinearHead head = fit_logistic_l2(x, flipped);
        REQUIRE((head.weights + base.weights).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE_THAT(head.bias, WithinAbs(-base.bias, 1e-12));
        REQUIRE(head.chosen_alpha == base.chosen_alpha);
    }
    SECTION("negating the features negates the weights") {
        const LinearHead head = fit_logistic_l2(-x, y);
        REQUIRE((head.weights + base.weights).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE_THAT(head.bias, WithinAbs(base.bias, 1e-12));
    }
}

TEST_CASE("logistic gradient is correct and vanishes at the optimum", "[linmodel][logistic][oracle]") {
    std::mt19937_64 rng(23);
    const Matrix x = random_matrix(40, 4, rng);
    Vector y(40);
    for (int i = 0; i < 40; ++i) y[i] = (x(i, 0) - 0.5 * x(i, 2) + 0.2 > 0.0) ? 1.0 : 0.0;

    const double alpha = 0.5;
    const LinearHead head = fit_logistic_at(x, y, alpha);
    REQUIRE(logistic_gradient(x, y, head.weights, head.bias, alpha).norm() <= 1e-6);
    REQUIRE(logistic_loss(x, y, head.weights, head.bias, alpha) <=
            logistic_loss(x, y, Vector::Zero(4), 0.0, alpha));

    SECTION("finite differences at a non-stationary point") {
        Vector w(4);
        w << 0.3, -0.2, 0.1, 0.4;
        const double b = -0.1;
        const Vector grad = logistic_gradient(x, y, w, b, alpha);
        const double h = 1e-6;
        for (int j = 0; j <= 4; ++j) {
            Vector wp = w, wm = w;
            double bp = b, bm = b;
            if (j < 4) {
                wp[j] += h;
                wm[j] -= h;
            } else {
                bp += h;
                bm -= h;
            }
            const double fd = (logistic_loss(x, y, wp, bp, alpha) - logistic_loss(x, y, wm, bm, alpha)) / (2.0 * h);
            REQUIRE_THAT(grad[j], WithinAbs(fd, 1e-5 * std::max(1.0, std::abs(fd))));
        }
    }
}

TEST_CASE("logistic error paths", "[linmodel][logistic]") {
    Matrix x(4, 1);
    x << -1.0, -0.5, 0.5, 1.0;
    SECTION("single-class input") {
        REQUIRE_THROWS_AS(fit_logistic_l2(x, Vector::Zero(4)), contract_error);
    }
    SECTION("labels outside {0, 1}") {
        Vector bad(4);
        bad << 0.0, 1.0, 2.0, 1.0;
        REQUIRE_THROWS_AS(fit_logistic_l2(x, bad), contract_error);
    }
    SECTION("iteration budget of zero cannot converge") {
        Vector y(4);
        y << 0.0, 0.0, 1.0, 1.0;
        LogisticOptions options;
        options.max_iterations = 0;
        REQUIRE_THROWS_AS(fit_logistic_at(x, y, 1.0, options), convergence_error);
    }
    SECTION("too few per-class observations for the inner CV") {
        Matrix x2(3, 1);
        x2 << -1.0, 0.0, 1.0;
        Vector y2(3);
        y2 << 0.0, 0.0, 1.0;
        REQUIRE_THROWS_AS(fit_logistic_l2(x2, y2), contract_error);
    }
}

TEST_CASE("predict heads", "[linmodel][predict]") {
    SECTION("zero weights give constant outputs") {
        LinearHead ridge;
        ridge.weights = Vector::Zero(2);
        ridge.bias = 3.5;
        const Vector scores = predict(ridge, Matrix::Ones(3, 2));
        for (int i = 0; i < 3; ++i) REQUIRE_THAT(scores[i], WithinAbs(3.5, 0.0));

        LinearHead logistic = ridge;
        logistic.kind = HeadKind::logistic;
        logistic.bias = 0.0;
        const Vector probs = predict(logistic, Matrix::Ones(3, 2));
        for (int i = 0; i < 3; ++i) REQUIRE_THAT(probs[i], WithinAbs(0.5, 0.0));
    }
    SECTION("known fixture scores 2") {
        LinearHead head;
        head.weights = Vector(2);
        head.weights << 1.0, -1.0;
        head.bias = 0.0;
        Matrix v(1, 2);
        v << 3.0, 1.0;
        REQUIRE_THAT(predict(head, v)[0], WithinAbs(2.0, 0.0));
    }
    SECTION("decision value zero maps to probability one half") {
        LinearHead head;
        head.weights = Vector(1);
        head.weights << 2.0;
        head.bias = -2.0;
        head.kind = HeadKind::logistic;
        Matrix v(1, 1);
        v << 1.0;
        REQUIRE_THAT(predict(head, v)[0], WithinAbs(0.5, 0.0));
    }
    SECTION("errors") {
        LinearHead head;
        head.weights = Vector::Zero(2);
        REQUIRE_THROWS_AS(predict(head, Matrix::Zero(1, 3)), shape_error);
        REQUIRE_THROWS_AS(predict_labels(head, Matrix::Zero(1, 2)), contract_error);
    }
}
