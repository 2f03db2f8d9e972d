#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include <Eigen/Dense>

#include "eloss/error.hpp"

namespace eloss {

/// Nodes and weights for E[f(Z)], Z ~ N(0,1): sum_i weights[i] * f(nodes[i]).
struct GaussHermiteRule {
    std::vector<double> nodes;
    std::vector<double> weights;

    template <class F>
    double expectation(F&& f) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) acc += weights[i] * f(nodes[i]);
        return acc;
    }
};

namespace detail {

// Golub-Welsch: nodes are the eigenvalues of the Jacobi matrix of the probabilists'
// Hermite recurrence, weights the squared first eigenvector components.
inline GaussHermiteRule build_gauss_hermite(int n) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
    require(eig.info() == Eigen::Success, ErrorKind::non_convergent, "Gauss-Hermite eigen solve failed");
    GaussHermiteRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        rule.nodes[i] = eig.eigenvalues()(i);
        const double v = eig.eigenvectors()(0, i);
        rule.weights[i] = v * v;
    }
    // symmetrise; the rule is exact for odd moments
    for (int i = 0; i < n / 2; ++i) {
        const double x = 0.5 * (rule.nodes[n - 1 - i] - rule.nodes[i]);
        const double w = 0.5 * (rule.weights[n - 1 - i] + rule.weights[i]);
        rule.nodes[i] = -x;
        rule.nodes[n - 1 - i] = x;
        rule.weights[i] = rule.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
    return rule;
}

// Golub-Welsch for Legendre on [-1, 1]; weights sum to 2.
inline GaussHermiteRule build_gauss_legendre(int n) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = k / std::sqrt(4.0 * k * k - 1.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
    require(eig.info() == Eigen::Success, ErrorKind::non_convergent, "Gauss-Legendre eigen solve failed");
    GaussHermiteRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        rule.nodes[i] = eig.eigenvalues()(i);
        const double v = eig.eigenvectors()(0, i);
        rule.weights[i] = 2.0 * v * v;
    }
    return rule;
}

}  // namespace detail

/// Cached rule; safe to call from several threads.
inline const GaussHermiteRule& gauss_hermite(int n) {
    require(n >= 1, ErrorKind::invalid_argument, "Gauss-Hermite node count must be positive");
    static std::mutex mutex;
    static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<GaussHermiteRule>(detail::build_gauss_hermite(n));
    return *slot;
}

/// Gauss-Legendre nodes/weights on [-1, 1], cached.
inline const GaussHermiteRule& gauss_legendre(int n) {
    require(n >= 1, ErrorKind::invalid_argument, "Gauss-Legendre node count must be positive");
    static std::mutex mutex;
    static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<GaussHermiteRule>(detail::build_gauss_legendre(n));
    return *slot;
}

}  // namespace eloss
