#pragma once

#include "mbsts/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>

namespace mbsts::linalg {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline void symmetrize(MatrixXd& m) {
    m = 0.5 * (m + m.transpose()).eval();
}

inline bool is_symmetric(const MatrixXd& m, double tol = 1e-10) {
    if (m.rows() != m.cols()) {
        return false;
    }
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

inline bool is_spd(const MatrixXd& m) {
    if (!is_symmetric(m)) {
        return false;
    }
    Eigen::LLT<MatrixXd> llt(m);
    return llt.info() == Eigen::Success;
}

inline double min_eigenvalue(const MatrixXd& m) {
    if (m.size() == 0) {
        return 0.0;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline bool is_psd(const MatrixXd& m, double tol = 1e-10) {
    if (!is_symmetric(m)) {
        return false;
    }
    const double scale = m.size() == 0 ? 1.0 : std::max(1.0, m.cwiseAbs().maxCoeff());
    return min_eigenvalue(m) >= -tol * scale;
}

/// Returns B with B Bᵀ = m for a symmetric PSD m. Uses Cholesky when it
/// succeeds and falls back to an eigen square root for singular inputs.
inline MatrixXd psd_factor(const MatrixXd& m) {
    if (m.size() == 0) {
        return m;
    }
    Eigen::LLT<MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) {
        return llt.matrixL();
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
    VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal();
}

/// Log density of N(mean, cov) at x; throws on a non-SPD covariance.
inline double mvn_log_density(const VectorXd& x, const VectorXd& mean, const MatrixXd& cov) {
    Eigen::LLT<MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
        fail(ErrorKind::numerical, "mvn_log_density: covariance is not positive definite");
    }
    VectorXd z = llt.matrixL().solve(x - mean);
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
}

inline void require_square(const MatrixXd& m, Index n, const std::string& name) {
    if (m.rows() != n || m.cols() != n) {
        fail(ErrorKind::dimension, name + ": expected " + std::to_string(n) + "x" + std::to_string(n) +
                                       ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
}

} // namespace mbsts::linalg
