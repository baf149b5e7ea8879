#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace cks {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Per-class knowledge summary: mean, ridged covariance and the number of
// samples it was estimated from.
struct GaussianSummary {
  Vector mean;
  Matrix cov;
  std::size_t count = 0;

  Eigen::Index dim() const { return mean.size(); }
};

inline void require_symmetric(const Matrix& s, double tol, const char* what) {
  double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > tol * scale)
    throw std::invalid_argument(what);
}

// Population-normalized Gaussian estimate with ridge on the diagonal.
// Rows of `samples` are observations.
inline GaussianSummary estimate_gaussian(const Matrix& samples, double ridge,
                                         bool sample_form = false) {
  if (samples.rows() < 1) throw std::invalid_argument("no samples");
  const auto n = samples.rows();
  GaussianSummary g;
  g.mean = samples.colwise().mean();
  Matrix centered = samples.rowwise() - g.mean.transpose();
  double divisor = sample_form && n > 1 ? static_cast<double>(n - 1)
                                        : static_cast<double>(n);
  g.cov = (centered.transpose() * centered) / divisor;
  g.cov.diagonal().array() += ridge;
  g.count = static_cast<std::size_t>(n);
  return g;
}

inline GaussianSummary estimate_gaussian(const std::vector<Vector>& samples,
                                         double ridge) {
  if (samples.empty()) throw std::invalid_argument("no samples");
  const Eigen::Index d = samples.front().size();
  Matrix m(static_cast<Eigen::Index>(samples.size()), d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != d) throw std::invalid_argument("dimension mismatch");
    m.row(static_cast<Eigen::Index>(i)) = samples[i];
  }
  return estimate_gaussian(m, ridge);
}

// Symmetric eigendecomposition of a PSD matrix with negative eigenvalues
// clamped to zero. Kept around because the square-root gradient reuses the
// same factors.
struct PsdEigen {
  Vector evals;   // clamped, ascending
  Matrix evecs;
};

inline PsdEigen psd_eigen(const Matrix& s) {
  require_symmetric(s, 1e-8, "not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(s);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition failed");
  PsdEigen out{es.eigenvalues(), es.eigenvectors()};
  out.evals = out.evals.cwiseMax(0.0);
  return out;
}

// Principal matrix square root of a symmetric PSD matrix.
inline Matrix sqrtm_psd(const Matrix& s) {
  PsdEigen e = psd_eigen(s);
  Matrix r = e.evecs * e.evals.cwiseSqrt().asDiagonal() * e.evecs.transpose();
  return 0.5 * (r + r.transpose());
}

// Adjoint of the Frechet derivative of the matrix square root at the
// decomposed point: returns M with tr(M dS) = tr(G dsqrt(S)).
// K is the divided-difference kernel of sqrt on the eigenvalues.
inline Matrix sqrtm_grad_adjoint(const PsdEigen& e, const Matrix& grad_on_root) {
  const Eigen::Index d = e.evals.size();
  Matrix g = e.evecs.transpose() * grad_on_root * e.evecs;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      double li = e.evals[i], lj = e.evals[j];
      double si = std::sqrt(li), sj = std::sqrt(lj);
      double denom = si + sj;
      double k = denom > 1e-300 ? 1.0 / denom : 0.0;
      g(i, j) *= k;
    }
  }
  Matrix m = e.evecs * g * e.evecs.transpose();
  return 0.5 * (m + m.transpose());
}

// Squared 2-Wasserstein distance between Gaussians (Bures form).
inline double bures_w2_sq(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("dimension mismatch");
  Matrix ra = sqrtm_psd(a.cov);
  Matrix inner = ra * b.cov * ra;
  double cross = sqrtm_psd(0.5 * (inner + inner.transpose())).trace();
  double v = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() -
             2.0 * cross;
  return std::max(v, 0.0);
}

// Commutative-case simplification: squared mean distance plus the Frobenius
// distance of the covariance square roots. Equals bures_w2_sq when the
// covariances commute; this is the trained objective either way.
inline double collaborative_value(const GaussianSummary& a,
                                  const GaussianSummary& r) {
  if (a.dim() != r.dim()) throw std::invalid_argument("dimension mismatch");
  Matrix diff = sqrtm_psd(a.cov) - sqrtm_psd(r.cov);
  return (a.mean - r.mean).squaredNorm() + diff.squaredNorm();
}

// Optimal-transport map between centered Gaussians:
// T = src^{-1/2} (src^{1/2} dst src^{1/2})^{1/2} src^{-1/2}, so T src T = dst.
inline Matrix transport_map(const Matrix& src, const Matrix& dst) {
  PsdEigen e = psd_eigen(src);
  if (e.evals.minCoeff() < 1e-12 * std::max(1.0, e.evals.maxCoeff()))
    throw std::invalid_argument("ill-conditioned source");
  Matrix half = e.evecs * e.evals.cwiseSqrt().asDiagonal() * e.evecs.transpose();
  Matrix inv_half =
      e.evecs * e.evals.cwiseSqrt().cwiseInverse().asDiagonal() * e.evecs.transpose();
  Matrix inner = half * dst * half;
  Matrix t = inv_half * sqrtm_psd(0.5 * (inner + inner.transpose())) * inv_half;
  return 0.5 * (t + t.transpose());
}

inline double mahalanobis(const Vector& z1, const Vector& z2,
                          const Matrix& cov_inv) {
  if (z1.size() != z2.size() || cov_inv.rows() != z1.size())
    throw std::invalid_argument("dimension mismatch");
  Vector d = z1 - z2;
  double q = d.dot(cov_inv * d);
  return std::sqrt(std::max(q, 0.0));
}

}  // namespace cks
