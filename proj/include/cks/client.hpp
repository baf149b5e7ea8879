#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cks/data.hpp"
#include "cks/knowledge.hpp"
#include "cks/losses.hpp"
#include "cks/nn.hpp"
#include "cks/rng.hpp"

namespace cks {

struct TrainConfig {
  double learning_rate = 0.05;
  int batch_size = 64;
  double margin = 1.0;
  double alpha = 0.9;
  double beta = 1.25;
  double ridge = 1e-4;
  // Ridge used only inside the descriptive Mahalanobis metric. Kept larger
  // than the gate/collaborative ridge so the whitening does not concentrate
  // the imitation gradient on near-degenerate directions, which would starve
  // the spread directions and collapse the generator onto class means.
  double des_ridge = 0.1;
  // Per-module step-size multipliers. At the default of 1.0 every module
  // trains at the shared rate `learning_rate`. Small non-IID federations
  // benefit from splitting the rates: the local classifier head is re-adopted
  // from the server at every interaction and is never uploaded, so it can run
  // fast; the server's central head is taught each class by only the few
  // clients that own it, so it needs a faster incremental pass; the encoder,
  // by contrast, is the consensus artifact — the shared initialization is the
  // only cross-client anchor for classes a client never holds — and should
  // move gently.
  double clf_lr_scale = 1.0;
  double server_lr_scale = 1.0;
  double enc_lr_scale = 1.0;
  double gen_lr_scale = 1.0;
  // Hyperbolic encoder step-size decay per interaction:
  // rate(k) = rate / (1 + decay*k). Constant-rate SGD never settles (the
  // collaborative pull is nonzero even at the anchor), and that stationary
  // churn diffuses the encoders apart on the class regions they have no data
  // for. Only the encoder decays: the generator and the local classifier
  // head track stationary or re-adopted targets. 0 disables the decay.
  double lr_decay = 0.0;
  int local_epochs = 4;
  Eigen::Index noise_dim = 4;
  Eigen::Index embed_dim = 8;
  double con_weight = 1.0;
  double col_weight = 1.0;
  bool sample_covariance = false;  // divisor m-1 instead of m (off by default)
};

struct ClientState {
  int id = 0;
  ModelParams encoder;
  ModelParams generator;
  ModelParams classifier;
  Dataset data;  // materialized local slice
  std::map<int, GaussianSummary> local_class_knowledge;
  long interaction_count = 0;
};

struct ServerBroadcast {
  ModelParams classifier;
  KnowledgeTable table;
};

// The only artifact a client ever uploads.
struct ClientUpload {
  int client_id = 0;
  ModelParams generator;
  double timestamp = 0.0;
};

// Wire form of an upload. Exactly three fields: the generator is the only
// model that ever leaves a client.
inline std::string upload_to_json(const ClientUpload& up) {
  std::ostringstream os;
  os.precision(17);
  os << "{\"client_id\":" << up.client_id << ",\"timestamp\":" << up.timestamp
     << ",\"generator\":[";
  for (std::size_t li = 0; li < up.generator.layers.size(); ++li) {
    const Layer& l = up.generator.layers[li];
    if (li) os << ',';
    os << "{\"activation\":" << static_cast<int>(l.act) << ",\"weight\":[";
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      if (r) os << ',';
      os << '[';
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
        os << (c ? "," : "") << l.weight(r, c);
      os << ']';
    }
    os << "],\"bias\":[";
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) os << (i ? "," : "") << l.bias[i];
    os << "]}";
  }
  os << "]}";
  return os.str();
}

inline Matrix one_hot(const std::vector<int>& labels, int classes) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i)
    m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return m;
}

// Conditional generator input: Gaussian noise with the one-hot label appended.
inline Matrix generator_input(const std::vector<int>& labels, int classes,
                              Eigen::Index noise_dim, Rng& rng) {
  const Eigen::Index n = static_cast<Eigen::Index>(labels.size());
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix in(n, noise_dim + classes);
  in.setZero();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < noise_dim; ++j) in(i, j) = gauss(rng);
    in(i, noise_dim + labels[static_cast<std::size_t>(i)]) = 1.0;
  }
  return in;
}

namespace detail {

inline std::map<int, GaussianSummary> class_summaries(const Matrix& z,
                                                      const std::vector<int>& labels,
                                                      double ridge) {
  std::map<int, std::vector<Eigen::Index>> by_class;
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    by_class[labels[static_cast<std::size_t>(i)]].push_back(i);
  std::map<int, GaussianSummary> out;
  for (const auto& [cls, idx] : by_class) {
    Matrix rows(static_cast<Eigen::Index>(idx.size()), z.cols());
    for (std::size_t k = 0; k < idx.size(); ++k)
      rows.row(static_cast<Eigen::Index>(k)) = z.row(idx[k]);
    out[cls] = estimate_gaussian(rows, ridge);
  }
  return out;
}

inline void check_finite(double loss, const char* name) {
  if (!std::isfinite(loss))
    throw std::runtime_error(std::string("diverged: non-finite ") + name);
}

// Hungarian algorithm (Jonker-Volgenant style) for a square cost matrix;
// returns, for each row, the column assigned to it in a minimum-cost
// perfect matching.
inline std::vector<int> min_cost_assignment(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> match(static_cast<std::size_t>(n) + 1, 0);  // col -> row (1-based)
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, kInf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      int i0 = match[static_cast<std::size_t>(j0)], j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                     v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      int j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)]) - 1] = j - 1;
  return row_to_col;
}

// Pair noise draws with same-class target embeddings by a minimum-cost
// balanced assignment. Each noise vector is first pushed through the class's
// Gaussian reference transport (top principal directions of the batch class
// covariance scaled by their standard deviations), so the pairing is a
// consistent function of the noise alone: the k-th noise draw always lands
// near the same region of the class cloud. Balance forces every target row
// to be claimed exactly once, so the generator is pulled toward the whole
// class cloud — it cannot collapse onto the conditional mean, and the
// generated spread faithfully tracks the class spread the server's
// confidence gate measures.
inline Matrix match_targets(const Matrix& targets, const Matrix& noise,
                            const std::vector<int>& labels) {
  const Eigen::Index n = targets.rows();
  const Eigen::Index d = targets.cols();
  Matrix out(n, d);
  std::map<int, std::vector<Eigen::Index>> by_class;
  for (Eigen::Index i = 0; i < n; ++i)
    by_class[labels[static_cast<std::size_t>(i)]].push_back(i);
  for (const auto& [cls, idx] : by_class) {
    const int m = static_cast<int>(idx.size());
    if (m == 1) {
      out.row(idx[0]) = targets.row(idx[0]);
      continue;
    }
    Matrix rows(m, d);
    for (int a = 0; a < m; ++a)
      rows.row(a) = targets.row(idx[static_cast<std::size_t>(a)]);
    Vector mu = rows.colwise().mean();
    Matrix centered = rows.rowwise() - mu.transpose();
    Matrix cov = centered.transpose() * centered / static_cast<double>(m);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    const Eigen::Index rank = std::min<Eigen::Index>(noise.cols(), d);
    // Reference transport: top-`rank` principal directions, largest first.
    // Eigenvector signs are canonicalized (largest-magnitude entry positive)
    // so the noise-to-data direction pairing stays stable across batches.
    Matrix ref(m, d);
    for (int a = 0; a < m; ++a) {
      Vector r = Vector::Zero(d);
      for (Eigen::Index k = 0; k < rank; ++k) {
        const Eigen::Index col = d - 1 - k;  // eigenvalues ascend
        Vector dir = eig.eigenvectors().col(col);
        Eigen::Index imax = 0;
        dir.cwiseAbs().maxCoeff(&imax);
        if (dir[imax] < 0.0) dir = -dir;
        r += std::sqrt(std::max(0.0, eig.eigenvalues()[col])) *
             noise(idx[static_cast<std::size_t>(a)], k) * dir;
      }
      ref.row(a) = r.transpose();
    }
    Matrix cost(m, m);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        cost(a, b) = (ref.row(a) - centered.row(b)).squaredNorm();
    std::vector<int> assign = min_cost_assignment(cost);
    for (int a = 0; a < m; ++a)
      out.row(idx[static_cast<std::size_t>(a)]) =
          rows.row(assign[static_cast<std::size_t>(a)]);
  }
  return out;
}

}  // namespace detail

// One local training pass (Algorithm 1): adopt the central classifier, then
// per batch update encoder on the cognitive loss, generator on the
// descriptive loss, and classifier plus upstream modules on the
// discriminative loss. Refreshes local class knowledge from the final
// encoder and returns the trained generator.
inline ClientUpload client_update(ClientState& state, const ServerBroadcast& inbound,
                                  const TrainConfig& cfg, std::uint64_t seed,
                                  double timestamp = 0.0) {
  if (state.data.size() < 1) throw std::invalid_argument("empty dataset");
  if (inbound.classifier.input_dim() != cfg.embed_dim ||
      inbound.table.dim != cfg.embed_dim)
    throw std::invalid_argument("dimension mismatch");

  state.classifier = inbound.classifier;
  Rng rng = make_rng(mix_seed(seed, 0xc11eu, static_cast<std::uint64_t>(state.id)));
  const int classes = state.data.class_count;
  const Eigen::Index n = state.data.size();
  const double lr_enc = cfg.enc_lr_scale * cfg.learning_rate /
                        (1.0 + cfg.lr_decay * static_cast<double>(state.interaction_count));
  const double lr_gen = cfg.gen_lr_scale * cfg.learning_rate;
  const double lr_clf = cfg.clf_lr_scale * cfg.learning_rate;

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    // Per-class covariance inverses for the descriptive loss, refreshed once
    // per epoch from the current encoder.
    Matrix all_z = forward(state.encoder, state.data.features).output();
    std::map<int, Matrix> cov_inv;
    for (const auto& [cls, g] : detail::class_summaries(all_z, state.data.labels, cfg.des_ridge))
      cov_inv[cls] = g.cov.llt().solve(Matrix::Identity(g.cov.rows(), g.cov.cols()));

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index bn = std::min<Eigen::Index>(cfg.batch_size, n - start);
      Matrix bx(bn, state.data.feature_dim());
      std::vector<int> by(static_cast<std::size_t>(bn));
      for (Eigen::Index i = 0; i < bn; ++i) {
        bx.row(i) = state.data.features.row(order[static_cast<std::size_t>(start + i)]);
        by[static_cast<std::size_t>(i)] =
            state.data.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
      }

      // (1) cognitive loss -> encoder
      if (bn >= 2) {
        ForwardTrace enc = forward(state.encoder, bx);
        EmbeddingBatch batch{enc.output(), by};
        LossResult cog = cognitive_loss(batch, inbound.table, cfg.margin, cfg.ridge,
                                        cfg.con_weight, cfg.col_weight);
        detail::check_finite(cog.loss, "cognitive loss");
        BackwardResult eb = backward(state.encoder, enc, cog.grads);
        sgd_step(state.encoder, eb.grads, lr_enc);
      }

      // (2) descriptive loss against the post-update encoder -> generator
      Matrix z_cog = forward(state.encoder, bx).output();
      Matrix gin = generator_input(by, classes, cfg.noise_dim, rng);
      ForwardTrace gen = forward(state.generator, gin);
      Matrix z_tgt = detail::match_targets(z_cog, gin.leftCols(cfg.noise_dim), by);
      LossResult des = descriptive_batch(z_tgt, gen.output(), by, cov_inv);
      detail::check_finite(des.loss, "descriptive loss");
      BackwardResult gb = backward(state.generator, gen, des.grads);
      sgd_step(state.generator, gb.grads, lr_gen);

      // (3) discriminative loss -> classifier, then fine-tune upstream
      ForwardTrace enc2 = forward(state.encoder, bx);
      Matrix gin2 = generator_input(by, classes, cfg.noise_dim, rng);
      ForwardTrace gen2 = forward(state.generator, gin2);
      ForwardTrace clf_cog = forward(state.classifier, enc2.output());
      ForwardTrace clf_des = forward(state.classifier, gen2.output());
      DiscriminativeResult dis = discriminative_loss(clf_cog.output(), clf_des.output(),
                                                     by, cfg.alpha);
      detail::check_finite(dis.loss, "discriminative loss");
      BackwardResult cb_cog = backward(state.classifier, clf_cog, dis.grads_cog);
      BackwardResult cb_des = backward(state.classifier, clf_des, dis.grads_des);
      std::vector<LayerGrads> clf_grads = cb_cog.grads;
      for (std::size_t i = 0; i < clf_grads.size(); ++i) {
        clf_grads[i].weight += cb_des.grads[i].weight;
        clf_grads[i].bias += cb_des.grads[i].bias;
      }
      sgd_step(state.classifier, clf_grads, lr_clf);
      BackwardResult enc_ft = backward(state.encoder, enc2, cb_cog.input_grad);
      sgd_step(state.encoder, enc_ft.grads, lr_enc);
      BackwardResult gen_ft = backward(state.generator, gen2, cb_des.input_grad);
      sgd_step(state.generator, gen_ft.grads, lr_gen);
    }

    if (epoch + 1 == cfg.local_epochs) {
      Matrix final_z = forward(state.encoder, state.data.features).output();
      state.local_class_knowledge =
          detail::class_summaries(final_z, state.data.labels, cfg.ridge);
    }
  }

  ++state.interaction_count;
  return ClientUpload{state.id, state.generator, timestamp};
}

// Fraction of the test set classified correctly by classifier(encoder(x)),
// ties broken toward the lowest class index.
inline double local_accuracy(const ModelParams& encoder, const ModelParams& classifier,
                             const Dataset& testset) {
  if (testset.size() < 1) throw std::invalid_argument("empty testset");
  Matrix logits = forward(classifier, forward(encoder, testset.features).output()).output();
  long correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    if (static_cast<int>(best) == testset.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

inline double local_accuracy(const ClientState& state, const Dataset& testset) {
  return local_accuracy(state.encoder, state.classifier, testset);
}

}  // namespace cks
