#include "transport_meta/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace tmeta::linalg {

std::vector<Eigen::Index> deficient_columns(const Eigen::MatrixXd& x) {
  if (x.cols() == 0) return {};
  if (x.rows() < x.cols()) {
    std::vector<Eigen::Index> all;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    const auto perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < x.cols(); ++k) all.push_back(perm(k));
    if (all.empty()) all.push_back(x.cols() - 1);
    return all;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x);
  const auto& sv = svd.singularValues();
  const double top = sv(0);
  const double bottom = sv(sv.size() - 1);
  if (top > 0.0 && bottom / top >= kRankTolerance) return {};

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(kRankTolerance);
  std::vector<Eigen::Index> out;
  const auto perm = qr.colsPermutation().indices();
  for (Eigen::Index k = qr.rank(); k < x.cols(); ++k) out.push_back(perm(k));
  if (out.empty()) out.push_back(perm(x.cols() - 1));
  std::sort(out.begin(), out.end());
  return out;
}

bool solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, Eigen::VectorXd& out) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) {
    out = llt.solve(b);
    return out.allFinite();
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success) return false;
  out = ldlt.solve(b);
  return out.allFinite();
}

Eigen::VectorXd least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  Eigen::VectorXd beta = qr.solve(y);
  const Eigen::VectorXd resid = y - x * beta;
  beta += qr.solve(resid);
  return beta;
}

bool checked_inverse(const Eigen::MatrixXd& a, Eigen::MatrixXd& out) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible()) return false;
  if (lu.rcond() < kRankTolerance) return false;
  out = lu.inverse();
  return out.allFinite();
}

Eigen::MatrixXd pinv_symmetric(const Eigen::MatrixXd& a, double tol) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  const auto& ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  for (Eigen::Index k = 0; k < ev.size(); ++k)
    if (std::abs(ev(k)) > tol * top) inv(k) = 1.0 / ev(k);
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace tmeta::linalg
