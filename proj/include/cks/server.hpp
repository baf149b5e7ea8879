#pragma once

#include <algorithm>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cks/client.hpp"
#include "cks/knowledge.hpp"
#include "cks/losses.hpp"
#include "cks/nn.hpp"
#include "cks/rng.hpp"

namespace cks {

// One gate decision; `trace_ref` is the table trace *before* the decision.
struct GateRecord {
  int client = 0;
  int cls = 0;
  double trace_k = 0.0;
  double trace_ref = 0.0;
  bool was_initialized = false;
  bool learned = false;
  bool takeover = false;
};

struct ServerState {
  ModelParams classifier;
  KnowledgeTable table;
  std::vector<GateRecord> gate_log;
  std::vector<std::string> event_log;  // rejections and other anomalies
};

// Architecture defaults shared by server and orchestrator.
inline ModelParams default_classifier(const TrainConfig& cfg, int classes, Rng& rng) {
  return make_mlp({cfg.embed_dim, 64, classes}, {Activation::Relu, Activation::Identity},
                  ModelRole::Classifier, rng);
}

inline ModelParams default_encoder(const TrainConfig& cfg, Eigen::Index input_dim,
                                   Rng& rng) {
  return make_mlp({input_dim, 64, cfg.embed_dim}, {Activation::Relu, Activation::Tanh},
                  ModelRole::Encoder, rng);
}

inline ModelParams default_generator(const TrainConfig& cfg, int classes, Rng& rng) {
  // One relu hidden layer so the noise->output map depends on the class: the
  // one-hot input shifts every hidden unit's preactivation, giving each class
  // its own gating pattern and therefore its own output variance. Label
  // columns are initialized several times wider than Glorot so an untrained
  // class keeps a large, distinctive variance; local training shrinks only
  // the classes the client has actually seen. The confidence gate ranks
  // uploads by generated-cloud trace, so that contrast is what lets the
  // server tell first-hand knowledge from an untrained pathway.
  ModelParams gen = make_mlp({cfg.noise_dim + classes, 64, cfg.embed_dim},
                             {Activation::Relu, Activation::Identity},
                             ModelRole::Generator, rng);
  gen.layers[0].weight.rightCols(classes) *= 3.0;
  return gen;
}

inline ServerState init_server(const TrainConfig& cfg, int classes, std::uint64_t seed) {
  ServerState s;
  Rng rng = make_rng(mix_seed(seed, 0x5e12u));
  s.classifier = default_classifier(cfg, classes, rng);
  s.table = KnowledgeTable(cfg.embed_dim, classes);
  return s;
}

// Pure gate arithmetic, shared with the replay check in tests.
inline bool gate_learns(bool initialized, double trace_k, double trace_ref, double beta) {
  return !initialized || trace_k < beta * trace_ref;
}

inline bool gate_takes_over(bool initialized, double trace_k, double trace_ref,
                            double beta) {
  return initialized && trace_k < trace_ref / beta;
}

// Knowledge integration (Algorithm 2 body): per class, generate embeddings
// from the uploaded generator, estimate their Gaussian, gate classifier
// learning at confidence beta, and apply the winner-take-all table update.
inline void integrate_upload(ServerState& server, const ClientUpload& upload,
                             const TrainConfig& cfg, int n_gen, std::uint64_t seed) {
  const int classes = server.table.classes();
  if (upload.generator.output_dim() != server.table.dim)
    throw std::invalid_argument("dimension mismatch");
  const int per_class = std::max(2, n_gen / std::max(classes, 1));
  Rng rng = make_rng(mix_seed(seed, 0x5e77u, static_cast<std::uint64_t>(upload.client_id)));

  // Generate everything first so a degenerate generator rejects the whole
  // upload without touching server state.
  std::vector<Matrix> embeddings(static_cast<std::size_t>(classes));
  std::vector<GaussianSummary> summaries(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    std::vector<int> labels(static_cast<std::size_t>(per_class), c);
    Matrix in = generator_input(labels, classes, cfg.noise_dim, rng);
    Matrix z = forward(upload.generator, in).output();
    if (!z.allFinite()) {
      server.event_log.push_back("degenerate generator: client " +
                                 std::to_string(upload.client_id));
      return;
    }
    embeddings[static_cast<std::size_t>(c)] = std::move(z);
    summaries[static_cast<std::size_t>(c)] =
        estimate_gaussian(embeddings[static_cast<std::size_t>(c)], cfg.ridge,
                          cfg.sample_covariance);
  }

  std::vector<int> learn_classes;
  for (int c = 0; c < classes; ++c) {
    KnowledgeEntry& entry = server.table.entries[static_cast<std::size_t>(c)];
    const GaussianSummary& g = summaries[static_cast<std::size_t>(c)];
    GateRecord rec;
    rec.client = upload.client_id;
    rec.cls = c;
    rec.trace_k = g.cov.trace();
    rec.trace_ref = entry.initialized ? entry.cov.trace() : 0.0;
    rec.was_initialized = entry.initialized;
    rec.learned = gate_learns(entry.initialized, rec.trace_k, rec.trace_ref, cfg.beta);
    rec.takeover =
        gate_takes_over(entry.initialized, rec.trace_k, rec.trace_ref, cfg.beta);

    if (!entry.initialized) {
      server.table.set(c, g);
      entry.last_winner = upload.client_id;
    } else if (rec.takeover) {
      entry.cov = g.cov;
      entry.mean = 0.5 * (g.mean + entry.mean);
      entry.last_winner = upload.client_id;
    }

    if (rec.learned) learn_classes.push_back(c);
    server.gate_log.push_back(rec);
  }

  // One incremental SGD pass over the generated embeddings of every class
  // that passed the gate, shuffled together so the classifier sees mixed
  // batches; classes that were skipped contribute no gradient.
  if (!learn_classes.empty()) {
    const Eigen::Index total =
        static_cast<Eigen::Index>(learn_classes.size()) * per_class;
    Matrix z(total, server.table.dim);
    std::vector<int> y(static_cast<std::size_t>(total));
    Eigen::Index row = 0;
    for (int c : learn_classes) {
      const Matrix& zc = embeddings[static_cast<std::size_t>(c)];
      for (Eigen::Index i = 0; i < zc.rows(); ++i, ++row) {
        z.row(row) = zc.row(i);
        y[static_cast<std::size_t>(row)] = c;
      }
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < total; start += cfg.batch_size) {
      const Eigen::Index bn = std::min<Eigen::Index>(cfg.batch_size, total - start);
      Matrix bz(bn, server.table.dim);
      std::vector<int> by(static_cast<std::size_t>(bn));
      for (Eigen::Index i = 0; i < bn; ++i) {
        bz.row(i) = z.row(order[static_cast<std::size_t>(start + i)]);
        by[static_cast<std::size_t>(i)] =
            y[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
      }
      ForwardTrace t = forward(server.classifier, bz);
      CeResult ce = softmax_ce(t.output(), by);
      BackwardResult b = backward(server.classifier, t, ce.logit_grads);
      sgd_step(server.classifier, b.grads, cfg.learning_rate * cfg.server_lr_scale);
    }
  }
}

// Deep copy of the classifier and table; uninitialized entries stay flagged
// so clients skip their collaborative terms.
inline ServerBroadcast broadcast(const ServerState& server) {
  return ServerBroadcast{server.classifier, server.table};
}

inline void write_gate_log_jsonl(const std::vector<GateRecord>& log, std::ostream& os) {
  os.precision(17);
  for (const GateRecord& r : log) {
    os << "{\"client\":" << r.client << ",\"class\":" << r.cls
       << ",\"trace_k\":" << r.trace_k << ",\"trace_ref\":" << r.trace_ref
       << ",\"initialized\":" << (r.was_initialized ? "true" : "false")
       << ",\"learned\":" << (r.learned ? "true" : "false")
       << ",\"takeover\":" << (r.takeover ? "true" : "false") << "}\n";
  }
}

}  // namespace cks
