#pragma once

#include <Eigen/Dense>

#include <vector>

// Thin layer over Eigen: the few decompositions the estimators need.
namespace tmeta::linalg {

inline constexpr double kRankTolerance = 1e-10;

// Columns of `x` that make it rank deficient (smallest/largest singular value
// ratio below kRankTolerance). Empty when x has full column rank.
std::vector<Eigen::Index> deficient_columns(const Eigen::MatrixXd& x);

// Solves a symmetric positive definite system; returns false when the
// factorization fails.
bool solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, Eigen::VectorXd& out);

// Least squares via column-pivoted QR plus one refinement step.
Eigen::VectorXd least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

// Inverse of a square matrix; returns false when the reciprocal condition
// number is below kRankTolerance.
bool checked_inverse(const Eigen::MatrixXd& a, Eigen::MatrixXd& out);

// Moore-Penrose pseudo-inverse of a symmetric matrix.
Eigen::MatrixXd pinv_symmetric(const Eigen::MatrixXd& a, double tol = 1e-12);

}  // namespace tmeta::linalg
