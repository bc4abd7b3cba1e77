#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hypothetica/error.hpp"

namespace hypothetica {

inline double expit(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

/// Pivots below this fraction of the largest pivot mark a design as singular.
inline constexpr double kRankTolerance = 1e-10;

struct FittedLinearModel {
    Eigen::VectorXd coefficients;  // intercept first
    double residual_variance = 0.0;
    double rss = 0.0;
    long df = 0;
    std::vector<std::string> design_column_names;
    // U with U U' = (X'X)^{-1}; used for posterior draws of the coefficients.
    Eigen::MatrixXd covariance_factor;
};

struct FittedLogisticModel {
    Eigen::VectorXd coefficients;  // intercept first
    bool converged = false;
    bool separation = false;
    int iterations = 0;
    double log_likelihood = 0.0;
    std::string diagnostic;
};

/// Least squares via column-pivoted Householder QR. `design` carries its own
/// intercept column (conventionally the first).
inline FittedLinearModel ols_fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                 std::vector<std::string> column_names = {}) {
    const auto n = design.rows();
    const auto p = design.cols();
    if (response.size() != n) throw DimensionError("ols_fit: response length does not match design rows");
    if (p == 0) throw DimensionError("ols_fit: design has no columns");
    if (n <= p)
        throw SingularDesignError("ols_fit: need more rows (" + std::to_string(n) + ") than columns (" +
                                  std::to_string(p) + ")");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(kRankTolerance);
    if (qr.rank() < p)
        throw SingularDesignError("ols_fit: design is rank deficient (rank " + std::to_string(qr.rank()) + " < " +
                                  std::to_string(p) + ")");
    FittedLinearModel m;
    m.coefficients = qr.solve(response);
    const Eigen::VectorXd resid = response - design * m.coefficients;
    m.rss = resid.squaredNorm();
    m.df = static_cast<long>(n - p);
    m.residual_variance = m.rss / static_cast<double>(m.df);
    const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd r_inv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
    m.covariance_factor = qr.colsPermutation() * r_inv;
    m.design_column_names = std::move(column_names);
    return m;
}

/// Intercept plus the dot product of the remaining coefficients with `covariates`.
inline double ols_predict(const FittedLinearModel& model, std::span<const double> covariates) {
    const auto q = static_cast<std::size_t>(model.coefficients.size()) - 1;
    if (covariates.size() != q)
        throw DimensionError("ols_predict: expected " + std::to_string(q) + " covariates, got " +
                             std::to_string(covariates.size()));
    double v = model.coefficients[0];
    for (std::size_t j = 0; j < q; ++j) v += model.coefficients[static_cast<Eigen::Index>(j) + 1] * covariates[j];
    return v;
}

inline double logistic_log_likelihood(const Eigen::VectorXd& eta, const Eigen::VectorXd& y) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll -= y[i] > 0.5 ? softplus(-eta[i]) : softplus(eta[i]);
    return ll;
}

/// Bernoulli-logit maximum likelihood by iteratively reweighted least squares
/// with step halving. Converges when the largest coefficient step is below
/// 1e-8 or the log-likelihood moves by less than 1e-10, within 100
/// iterations. Separation is reported through `converged = false`.
inline FittedLogisticModel logistic_fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& response) {
    const auto n = design.rows();
    const auto p = design.cols();
    if (response.size() != n) throw DimensionError("logistic_fit: response length does not match design rows");
    if (p == 0) throw DimensionError("logistic_fit: design has no columns");
    Eigen::Index ones = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (response[i] != 0.0 && response[i] != 1.0) throw DimensionError("logistic_fit: response must be 0/1");
        ones += response[i] == 1.0;
    }
    if (ones == 0 || ones == n)
        throw DegenerateResponseError("logistic_fit: response has a single class (" + std::to_string(ones) + " of " +
                                      std::to_string(n) + " events)");

    constexpr int kMaxIterations = 100;
    constexpr double kCoefTolerance = 1e-8;
    constexpr double kLogLikTolerance = 1e-10;

    FittedLogisticModel m;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd eta = design * beta;
    double ll = logistic_log_likelihood(eta, response);
    for (int it = 1; it <= kMaxIterations; ++it) {
        m.iterations = it;
        Eigen::VectorXd prob(n), w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            prob[i] = expit(eta[i]);
            w[i] = prob[i] * (1.0 - prob[i]);
        }
        const Eigen::VectorXd score = design.transpose() * (response - prob);
        const Eigen::MatrixXd info = design.transpose() * w.asDiagonal() * design;
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(info);
        qr.setThreshold(1e-12);
        if (qr.rank() < p) {
            m.diagnostic = "information matrix became singular at iteration " + std::to_string(it) +
                           " (fitted probabilities collapsing to 0 or 1)";
            m.separation = true;
            break;
        }
        const Eigen::VectorXd delta = qr.solve(score);
        double step = 1.0;
        Eigen::VectorXd next = beta + delta;
        Eigen::VectorXd next_eta = design * next;
        double next_ll = logistic_log_likelihood(next_eta, response);
        for (int halving = 0; halving < 30 && next_ll < ll; ++halving) {
            step *= 0.5;
            next = beta + step * delta;
            next_eta = design * next;
            next_ll = logistic_log_likelihood(next_eta, response);
        }
        const double change = (step * delta).cwiseAbs().maxCoeff();
        const double ll_change = std::fabs(next_ll - ll);
        beta = next;
        eta = next_eta;
        ll = next_ll;
        if (change < kCoefTolerance || ll_change < kLogLikTolerance) {
            m.converged = true;
            break;
        }
    }
    m.coefficients = beta;
    m.log_likelihood = ll;
    if (!m.converged && m.diagnostic.empty())
        m.diagnostic = "no convergence within " + std::to_string(kMaxIterations) + " iterations";

    constexpr double kProbEps = 10 * std::numeric_limits<double>::epsilon();
    for (Eigen::Index i = 0; i < n; ++i) {
        const double pr = expit(eta[i]);
        if (pr < kProbEps || pr > 1.0 - kProbEps) {
            m.converged = false;
            m.separation = true;
            m.diagnostic = "fitted probabilities numerically 0 or 1: the response is (quasi-)completely separated";
            break;
        }
    }
    return m;
}

inline double logistic_predict(const FittedLogisticModel& model, std::span<const double> covariates) {
    const auto q = static_cast<std::size_t>(model.coefficients.size()) - 1;
    if (covariates.size() != q)
        throw DimensionError("logistic_predict: expected " + std::to_string(q) + " covariates, got " +
                             std::to_string(covariates.size()));
    double eta = model.coefficients[0];
    for (std::size_t j = 0; j < q; ++j) eta += model.coefficients[static_cast<Eigen::Index>(j) + 1] * covariates[j];
    return expit(eta);
}

}  // namespace hypothetica
