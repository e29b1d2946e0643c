#pragma once

// Shared fixtures and brute-force references for the test suites. Nothing in
// here calls the fast HODLR code paths.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

#include "gphodlr/geometry.hpp"
#include "gphodlr/kernel.hpp"

namespace gptest {

/// n uniform points on [0, side]^d.
inline gphodlr::PointSet uniform_points(std::size_t n, std::uint64_t seed, std::size_t d = 2,
                                        double side = 100.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, side);
  Eigen::MatrixXd coords(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < coords.cols(); ++j) {
    for (Eigen::Index i = 0; i < coords.rows(); ++i) coords(i, j) = unit(rng);
  }
  return gphodlr::PointSet(std::move(coords));
}

/// Dense kernel matrix, evaluated entry by entry through the public kernel API.
inline Eigen::MatrixXd dense_kernel(const gphodlr::CovarianceModel& model,
                                    const Eigen::VectorXd& theta, const gphodlr::PointSet& pts) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      k(i, j) = gphodlr::eval(model, pts.point(static_cast<std::size_t>(i)),
                              pts.point(static_cast<std::size_t>(j)), theta);
    }
  }
  return k;
}

/// Rows `rows` x columns `cols` of a dense matrix.
inline Eigen::MatrixXd select(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows,
                              const std::vector<std::size_t>& cols) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          m(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(cols[j]));
    }
  }
  return out;
}

inline std::vector<std::size_t> range_indices(const gphodlr::IndexRange& r) {
  std::vector<std::size_t> out(r.size);
  for (std::size_t i = 0; i < r.size; ++i) out[i] = r.begin + i;
  return out;
}

/// Independent dense Nystrom-HODLR construction from an exact kernel matrix in
/// tree order: exact leaves, off-diagonal node blocks
/// K_{I,P} K_{P,P}^{-1} K_{P,J} computed with a full-pivot LU solve.
inline Eigen::MatrixXd dense_nystrom_hodlr(const Eigen::MatrixXd& k,
                                           const std::vector<std::vector<gphodlr::IndexRange>>& levels,
                                           const std::vector<std::size_t>& landmarks) {
  Eigen::MatrixXd out = k;
  const Eigen::MatrixXd kpp = select(k, landmarks, landmarks);
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(kpp);
  for (std::size_t l = 0; l + 1 < levels.size(); ++l) {
    for (std::size_t i = 0; i < levels[l].size(); ++i) {
      const auto rows = range_indices(levels[l + 1][2 * i]);
      const auto cols = range_indices(levels[l + 1][2 * i + 1]);
      const Eigen::MatrixXd kip = select(k, rows, landmarks);
      const Eigen::MatrixXd kpj = select(k, landmarks, cols);
      const Eigen::MatrixXd blk = kip * lu.solve(kpj);
      for (std::size_t a = 0; a < rows.size(); ++a) {
        for (std::size_t b = 0; b < cols.size(); ++b) {
          const auto ra = static_cast<Eigen::Index>(rows[a]);
          const auto cb = static_cast<Eigen::Index>(cols[b]);
          out(ra, cb) = blk(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
          out(cb, ra) = out(ra, cb);
        }
      }
    }
  }
  return out;
}

inline double rel_fro(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / b.norm();
}

}  // namespace gptest
