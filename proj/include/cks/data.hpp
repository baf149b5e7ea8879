#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cks/linalg.hpp"
#include "cks/rng.hpp"

namespace cks {

struct Dataset {
  Matrix features;          // n x f
  std::vector<int> labels;  // n
  int class_count = 0;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index feature_dim() const { return features.cols(); }
};

// A client's slice of a parent Dataset. Corruption materializes overrides so
// the shared parent is never mutated.
struct ClientDataset {
  int client_id = 0;
  std::vector<Eigen::Index> indices;
  std::optional<Matrix> features_override;
  std::optional<std::vector<int>> labels_override;

  std::size_t size() const { return indices.size(); }

  Dataset materialize(const Dataset& parent) const {
    Dataset out;
    out.class_count = parent.class_count;
    const Eigen::Index n = static_cast<Eigen::Index>(indices.size());
    if (features_override) {
      out.features = *features_override;
    } else {
      out.features.resize(n, parent.feature_dim());
      for (Eigen::Index i = 0; i < n; ++i)
        out.features.row(i) = parent.features.row(indices[static_cast<std::size_t>(i)]);
    }
    if (labels_override) {
      out.labels = *labels_override;
    } else {
      out.labels.resize(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i)
        out.labels[static_cast<std::size_t>(i)] =
            parent.labels[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
    }
    return out;
  }
};

// Gaussian class blobs with means kept at least 4*spread apart.
inline Dataset synth_blobs(int classes, Eigen::Index feature_dim, int per_class,
                           double spread, std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("need at least 2 classes");
  if (per_class < 1) throw std::invalid_argument("per_class must be positive");
  Rng rng = make_rng(mix_seed(seed, 0x5b0bu));
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Vector> means;
  double scale = 8.0 * spread;
  while (static_cast<int>(means.size()) < classes) {
    Vector cand(feature_dim);
    for (Eigen::Index i = 0; i < feature_dim; ++i) cand[i] = scale * gauss(rng);
    bool ok = true;
    for (const Vector& m : means)
      if ((m - cand).norm() < 4.0 * spread) { ok = false; break; }
    if (ok) means.push_back(cand);
    else scale *= 1.1;  // widen until placement succeeds
  }

  Dataset ds;
  ds.class_count = classes;
  const Eigen::Index n = static_cast<Eigen::Index>(classes) * per_class;
  ds.features.resize(n, feature_dim);
  ds.labels.resize(static_cast<std::size_t>(n));
  Eigen::Index row = 0;
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < per_class; ++k, ++row) {
      for (Eigen::Index j = 0; j < feature_dim; ++j)
        ds.features(row, j) = means[static_cast<std::size_t>(c)][j] + spread * gauss(rng);
      ds.labels[static_cast<std::size_t>(row)] = c;
    }
  }

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Dataset shuffled;
  shuffled.class_count = classes;
  shuffled.features.resize(n, feature_dim);
  shuffled.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    shuffled.features.row(i) = ds.features.row(perm[static_cast<std::size_t>(i)]);
    shuffled.labels[static_cast<std::size_t>(i)] =
        ds.labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  return shuffled;
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const char* err) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error(err);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

// IDX-format loader (MNIST layout): big-endian magic 0x803 for images,
// 0x801 for labels; pixels scaled to [0,1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot open " + images_path);
  if (detail::read_be32(img, "truncated") != 0x00000803u)
    throw std::runtime_error("bad magic in " + images_path);
  std::uint32_t n = detail::read_be32(img, "truncated");
  std::uint32_t rows = detail::read_be32(img, "truncated");
  std::uint32_t cols = detail::read_be32(img, "truncated");

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot open " + labels_path);
  if (detail::read_be32(lab, "truncated") != 0x00000801u)
    throw std::runtime_error("bad magic in " + labels_path);
  std::uint32_t nl = detail::read_be32(lab, "truncated");
  if (n != nl) throw std::runtime_error("image/label count mismatch");

  const std::size_t f = std::size_t(rows) * cols;
  Dataset ds;
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
  ds.labels.resize(n);
  std::vector<unsigned char> buf(f);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(f)))
      throw std::runtime_error("truncated");
    for (std::size_t j = 0; j < f; ++j)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          buf[j] / 255.0;
    char lb;
    if (!lab.get(lb)) throw std::runtime_error("truncated");
    ds.labels[i] = static_cast<unsigned char>(lb);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.class_count = max_label + 1;
  return ds;
}

enum class PartitionScheme { Iid, LabelLimit };

// iid: per-client uniform sampling without replacement.
// label_limit: each client gets exactly `label_limit` random classes and
// draws only from their pools, with replacement once a pool is exhausted.
inline std::vector<ClientDataset> partition(const Dataset& ds, PartitionScheme scheme,
                                            int label_limit, int clients, int n_local,
                                            std::uint64_t seed) {
  if (clients < 1 || n_local < 1) throw std::invalid_argument("infeasible request");
  Rng rng = make_rng(mix_seed(seed, 0x9a47u));
  std::vector<ClientDataset> out;

  std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(ds.class_count));
  for (Eigen::Index i = 0; i < ds.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);

  for (int k = 0; k < clients; ++k) {
    ClientDataset cd;
    cd.client_id = k;
    if (scheme == PartitionScheme::Iid) {
      if (static_cast<Eigen::Index>(n_local) > ds.size())
        throw std::invalid_argument("infeasible request");
      std::vector<Eigen::Index> all(static_cast<std::size_t>(ds.size()));
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng);
      cd.indices.assign(all.begin(), all.begin() + n_local);
    } else {
      if (label_limit < 1 || label_limit > ds.class_count)
        throw std::invalid_argument("infeasible request");
      std::vector<int> cls(static_cast<std::size_t>(ds.class_count));
      std::iota(cls.begin(), cls.end(), 0);
      std::shuffle(cls.begin(), cls.end(), rng);
      std::vector<Eigen::Index> pool;
      for (int j = 0; j < label_limit; ++j)
        pool.insert(pool.end(), by_class[static_cast<std::size_t>(cls[static_cast<std::size_t>(j)])].begin(),
                    by_class[static_cast<std::size_t>(cls[static_cast<std::size_t>(j)])].end());
      std::shuffle(pool.begin(), pool.end(), rng);
      for (int i = 0; i < n_local; ++i) {
        if (static_cast<std::size_t>(i) < pool.size()) {
          cd.indices.push_back(pool[static_cast<std::size_t>(i)]);
        } else {
          std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
          cd.indices.push_back(pool[pick(rng)]);
        }
      }
    }
    out.push_back(std::move(cd));
  }
  return out;
}

enum class CorruptMode { LabelFlip, FeatureNoise };

// label_flip: each label is replaced with a uniformly random *different*
// class with probability p. feature_noise: each feature entry is replaced by
// a fresh draw from that feature's empirical marginal with probability p.
inline ClientDataset corrupt(const Dataset& parent, const ClientDataset& cd,
                             CorruptMode mode, double p, std::uint64_t seed) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("p out of [0,1]");
  Rng rng = make_rng(mix_seed(seed, 0xc0c0u, static_cast<std::uint64_t>(cd.client_id)));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  Dataset local = cd.materialize(parent);
  ClientDataset out = cd;
  if (mode == CorruptMode::LabelFlip) {
    std::vector<int> labels = local.labels;
    std::uniform_int_distribution<int> other(0, parent.class_count - 2);
    for (int& y : labels) {
      if (coin(rng) < p) {
        int repl = other(rng);
        if (repl >= y) ++repl;
        y = repl;
      }
    }
    out.labels_override = std::move(labels);
  } else {
    Matrix feats = local.features;
    std::uniform_int_distribution<Eigen::Index> pick(0, local.size() - 1);
    for (Eigen::Index i = 0; i < feats.rows(); ++i)
      for (Eigen::Index j = 0; j < feats.cols(); ++j)
        if (coin(rng) < p) feats(i, j) = local.features(pick(rng), j);
    out.features_override = std::move(feats);
  }
  return out;
}

// CSV export: feature columns x0..x{f-1}, then label.
inline void write_csv(const Dataset& ds, std::ostream& os) {
  for (Eigen::Index j = 0; j < ds.feature_dim(); ++j) os << 'x' << j << ',';
  os << "label\n";
  os.precision(17);
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.feature_dim(); ++j) os << ds.features(i, j) << ',';
    os << ds.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

}  // namespace cks
