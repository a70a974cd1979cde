#pragma once

#include <Eigen/Dense>
#include <cmath>
#include "json.hpp"

#include "hbdnn/errors.hpp"

namespace hbdnn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double eigen_floor = 1e-12;

inline double min_eigenvalue(const MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool is_symmetric(const MatrixXd& m, double tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <=
         tol * std::max(1.0, m.cwiseAbs().maxCoeff());
}

inline bool is_spd(const MatrixXd& m, double floor = eigen_floor) {
  return m.rows() == m.cols() && m.allFinite() && is_symmetric(m) &&
         min_eigenvalue(m) > floor;
}

/// Inverse of a symmetric matrix through its eigendecomposition. Positive
/// eigenvalues below `floor` are clamped up to it; a non-positive or
/// non-finite spectrum is a NumericalFailure.
inline MatrixXd sym_inverse(const MatrixXd& sym, double floor = eigen_floor) {
  if (!sym.allFinite()) throw NumericalFailure("matrix has non-finite entries");
  const MatrixXd s = 0.5 * (sym + sym.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(s);
  VectorXd ev = es.eigenvalues();
  if (!(ev.minCoeff() > 0.0))
    throw NumericalFailure("matrix is not positive definite (min eigenvalue " +
                           std::to_string(ev.minCoeff()) + ")");
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = 1.0 / std::max(ev[i], floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Lower Cholesky factor of an SPD matrix via the clamped eigen route, so
/// nearly singular inputs still factor.
inline MatrixXd sym_sqrt_factor(const MatrixXd& sym, double floor = eigen_floor) {
  Eigen::LLT<MatrixXd> llt(0.5 * (sym + sym.transpose()));
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (sym + sym.transpose()));
  VectorXd ev = es.eigenvalues();
  if (!(ev.minCoeff() > 0.0)) throw NumericalFailure("matrix is not positive definite");
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = std::sqrt(std::max(ev[i], floor));
  return es.eigenvectors() * ev.asDiagonal();
}

// Matrices serialize with explicit dimensions and row-major data.
inline nlohmann::json matrix_to_json(const MatrixXd& m) {
  nlohmann::json data = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline MatrixXd matrix_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.size() != 3 || !j.contains("rows") || !j.contains("cols") ||
      !j.contains("data"))
    throw SchemaError("matrix must be an object with exactly rows, cols, data");
  const auto rows = j.at("rows").get<long>();
  const auto cols = j.at("cols").get<long>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || !data.is_array() ||
      data.size() != static_cast<std::size_t>(rows * cols))
    throw SchemaError("matrix data length does not match rows*cols");
  MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  return m;
}

}  // namespace hbdnn
