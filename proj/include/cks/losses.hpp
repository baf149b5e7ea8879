#pragma once

#include <map>
#include <stdexcept>
#include <vector>

#include "cks/knowledge.hpp"
#include "cks/linalg.hpp"
#include "cks/nn.hpp"

namespace cks {

struct EmbeddingBatch {
  Matrix z;                 // n x d
  std::vector<int> labels;  // n

  Eigen::Index size() const { return z.rows(); }
};

struct LossResult {
  double loss = 0.0;
  Matrix grads;  // n x d, w.r.t. the embeddings
};

// Pairwise margin loss over all unordered pairs in the minibatch,
// mean-normalized. Same-label pairs pay their distance, different-label
// pairs pay max(0, M - distance). Subgradient is zero at the hinge kink
// and at coincident points.
inline LossResult contrastive_batch(const EmbeddingBatch& batch, double margin) {
  const Eigen::Index n = batch.size();
  if (n < 2) throw std::invalid_argument("need a pair");
  if (static_cast<Eigen::Index>(batch.labels.size()) != n)
    throw std::invalid_argument("shape mismatch");
  LossResult r;
  r.grads = Matrix::Zero(n, batch.z.cols());
  const double pairs = static_cast<double>(n) * (n - 1) / 2.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      Vector diff = batch.z.row(i) - batch.z.row(j);
      double dist = diff.norm();
      if (batch.labels[i] == batch.labels[j]) {
        total += dist;
        if (dist > 0.0) {
          Vector u = diff / dist;
          r.grads.row(i) += u.transpose() / pairs;
          r.grads.row(j) -= u.transpose() / pairs;
        }
      } else if (dist < margin) {
        total += margin - dist;
        if (dist > 0.0) {
          Vector u = diff / dist;
          r.grads.row(i) -= u.transpose() / pairs;
          r.grads.row(j) += u.transpose() / pairs;
        }
      }
    }
  }
  r.loss = total / pairs;
  return r;
}

// Collaborative cognitive loss: for each class with at least two samples and
// an initialized table entry, squared mean offset plus Frobenius distance of
// the covariance square roots against the table. Gradients flow through the
// batch mean and through the eigendecomposition-based square root.
inline LossResult collaborative_batch(const EmbeddingBatch& batch,
                                      const KnowledgeTable& table, double ridge) {
  const Eigen::Index n = batch.size();
  const Eigen::Index d = batch.z.cols();
  if (d != table.dim) throw std::invalid_argument("dimension mismatch");
  LossResult r;
  r.grads = Matrix::Zero(n, d);
  r.loss = 0.0;

  std::map<int, std::vector<Eigen::Index>> by_class;
  for (Eigen::Index i = 0; i < n; ++i)
    by_class[batch.labels[static_cast<std::size_t>(i)]].push_back(i);

  for (const auto& [cls, idx] : by_class) {
    if (idx.size() < 2) continue;
    if (cls < 0 || cls >= table.classes()) continue;
    const KnowledgeEntry& ref = table.entries[static_cast<std::size_t>(cls)];
    if (!ref.initialized) continue;  // cold-start round

    const double m = static_cast<double>(idx.size());
    Matrix zc(idx.size(), d);
    for (std::size_t k = 0; k < idx.size(); ++k) zc.row(static_cast<Eigen::Index>(k)) = batch.z.row(idx[k]);
    GaussianSummary g = estimate_gaussian(zc, ridge);

    PsdEigen e = psd_eigen(g.cov);
    Matrix root = e.evecs * e.evals.cwiseSqrt().asDiagonal() * e.evecs.transpose();
    Matrix diff_root = root - sqrtm_psd(ref.cov);
    Vector diff_mean = g.mean - ref.mean;
    r.loss += diff_mean.squaredNorm() + diff_root.squaredNorm();

    // tr(M dSigma) = d||root - ref_root||_F^2, then dSigma/dz_i rank-one chain.
    Matrix adj = sqrtm_grad_adjoint(e, 2.0 * diff_root);
    Vector mean_grad = (2.0 / m) * diff_mean;
    for (Eigen::Index i : idx) {
      Vector centered = batch.z.row(i).transpose() - g.mean;
      r.grads.row(i) += (mean_grad + (2.0 / m) * (adj * centered)).transpose();
    }
  }
  return r;
}

// Combined cognitive-module loss: unweighted sum of contrastive and
// collaborative parts (weights configurable upstream, default 1:1).
inline LossResult cognitive_loss(const EmbeddingBatch& batch,
                                 const KnowledgeTable& table, double margin,
                                 double ridge, double con_weight = 1.0,
                                 double col_weight = 1.0) {
  LossResult con = contrastive_batch(batch, margin);
  LossResult col = collaborative_batch(batch, table, ridge);
  LossResult r;
  r.loss = con_weight * con.loss + col_weight * col.loss;
  r.grads = con_weight * con.grads + col_weight * col.grads;
  return r;
}

// Mahalanobis imitation loss; gradients are taken w.r.t. the generated
// embeddings only (the encoder is the teacher here).
inline LossResult descriptive_batch(const Matrix& z_cog, const Matrix& z_des,
                                    const std::vector<int>& labels,
                                    const std::map<int, Matrix>& per_class_cov_inv) {
  const Eigen::Index n = z_cog.rows();
  if (z_des.rows() != n || z_des.cols() != z_cog.cols() ||
      static_cast<Eigen::Index>(labels.size()) != n)
    throw std::invalid_argument("shape mismatch");
  LossResult r;
  r.grads = Matrix::Zero(n, z_des.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    auto it = per_class_cov_inv.find(labels[static_cast<std::size_t>(i)]);
    if (it == per_class_cov_inv.end())
      throw std::invalid_argument("missing class covariance");
    Vector diff = z_cog.row(i) - z_des.row(i);
    Vector sd = it->second * diff;
    double val = std::sqrt(std::max(diff.dot(sd), 0.0));
    r.loss += val;
    if (val > 1e-12) r.grads.row(i) = (-sd / val).transpose();
  }
  return r;
}

struct DiscriminativeResult {
  double loss = 0.0;
  Matrix grads_cog;  // on cognitive logits
  Matrix grads_des;  // on descriptive logits
};

// Weighted cross-entropy over the two prediction paths.
inline DiscriminativeResult discriminative_loss(const Matrix& logits_cog,
                                                const Matrix& logits_des,
                                                const std::vector<int>& labels,
                                                double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha out of [0,1]");
  CeResult cc = softmax_ce(logits_cog, labels);
  CeResult cd = softmax_ce(logits_des, labels);
  DiscriminativeResult r;
  r.loss = alpha * cc.loss + (1.0 - alpha) * cd.loss;
  r.grads_cog = alpha * cc.logit_grads;
  r.grads_des = (1.0 - alpha) * cd.logit_grads;
  return r;
}

}  // namespace cks
