#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "cks/linalg.hpp"

namespace cks {

// One class slot of the server's representative collaborative cognition.
struct KnowledgeEntry {
  Vector mean;
  Matrix cov;
  bool initialized = false;
  std::optional<int> last_winner;
};

// Per-class representative Gaussians held by the server and broadcast to
// clients. Uninitialized slots are skipped by the collaborative loss.
struct KnowledgeTable {
  Eigen::Index dim = 0;
  std::vector<KnowledgeEntry> entries;

  KnowledgeTable() = default;
  KnowledgeTable(Eigen::Index d, int classes) : dim(d), entries(classes) {}

  int classes() const { return static_cast<int>(entries.size()); }

  const KnowledgeEntry& at(int c) const {
    if (c < 0 || c >= classes()) throw std::out_of_range("class index");
    return entries[static_cast<std::size_t>(c)];
  }
  KnowledgeEntry& at(int c) {
    if (c < 0 || c >= classes()) throw std::out_of_range("class index");
    return entries[static_cast<std::size_t>(c)];
  }

  void set(int c, const GaussianSummary& g) {
    KnowledgeEntry& e = at(c);
    if (g.dim() != dim) throw std::invalid_argument("dimension mismatch");
    e.mean = g.mean;
    e.cov = g.cov;
    e.initialized = true;
  }
};

}  // namespace cks
