#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "cks/client.hpp"
#include "cks/data.hpp"
#include "cks/server.hpp"

namespace cks {

enum class ScheduleMode { Sync, Async, Random };

struct Schedule {
  ScheduleMode mode = ScheduleMode::Sync;
  int rounds = 1;
  double straggler_fraction = 0.0;
  double straggler_delay = 1.0;                // event-time units
  std::map<int, int> active_clients;           // id -> interactions per round
  int random_interactions_per_round = 20;
  std::optional<double> fixed_latency;         // async: same latency for everyone

  int quota(int client) const {
    auto it = active_clients.find(client);
    return it == active_clients.end() ? 1 : std::max(1, it->second);
  }
};

struct MetricsRecord {
  double event_time = 0.0;
  int round = 0;
  std::string entity;  // "global" or client id
  std::string metric;
  double value = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRecord> records;
  std::map<int, double> final_per_client;
  double final_global = 0.0;
  std::vector<GateRecord> gate_log;
  bool aborted = false;
  std::string abort_reason;

  void add(double t, int round, const std::string& entity, const std::string& metric,
           double value) {
    records.push_back({t, round, entity, metric, value});
  }

  // Accuracy of entity at a given round, if recorded.
  double accuracy_at(int round, const std::string& entity) const {
    for (const MetricsRecord& r : records)
      if (r.round == round && r.entity == entity && r.metric == "accuracy")
        return r.value;
    throw std::out_of_range("no such record");
  }
};

// Everything a run needs: the parent dataset, per-client slices, and the
// shared IID test set.
struct FederationSetup {
  Dataset train;
  std::vector<ClientDataset> parts;
  Dataset test;

  int clients() const { return static_cast<int>(parts.size()); }
};

struct EvalResult {
  double global = 0.0;
  std::map<int, double> per_client;
};

// Per-client accuracy with the central classifier substituted for the local
// one; global is the unweighted mean (each client keeps a unique encoder).
inline EvalResult evaluate_global(const ServerState& server,
                                  const std::vector<ClientState>& clients,
                                  const Dataset& testset) {
  EvalResult r;
  for (const ClientState& c : clients) {
    double a = local_accuracy(c.encoder, server.classifier, testset);
    r.per_client[c.id] = a;
    r.global += a;
  }
  if (!clients.empty()) r.global /= static_cast<double>(clients.size());
  return r;
}

namespace detail {

inline std::vector<ClientState> init_clients(const FederationSetup& setup,
                                             const TrainConfig& cfg,
                                             std::uint64_t seed) {
  // Same initial modules for all clients.
  Rng rng = make_rng(mix_seed(seed, 0xc0deu));
  ModelParams encoder = default_encoder(cfg, setup.train.feature_dim(), rng);
  ModelParams generator = default_generator(cfg, setup.train.class_count, rng);
  ModelParams classifier = default_classifier(cfg, setup.train.class_count, rng);

  std::vector<ClientState> clients;
  for (const ClientDataset& part : setup.parts) {
    ClientState s;
    s.id = part.client_id;
    s.encoder = encoder;
    s.generator = generator;
    s.classifier = classifier;
    s.data = part.materialize(setup.train);
    Matrix z = forward(s.encoder, s.data.features).output();
    s.local_class_knowledge = class_summaries(z, s.data.labels, cfg.ridge);
    clients.push_back(std::move(s));
  }
  return clients;
}

inline std::set<int> pick_stragglers(int clients, double fraction, std::uint64_t seed) {
  int count = static_cast<int>(std::floor(fraction * clients));
  std::vector<int> ids(static_cast<std::size_t>(clients));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng = make_rng(mix_seed(seed, 0x57a6u));
  std::shuffle(ids.begin(), ids.end(), rng);
  return std::set<int>(ids.begin(), ids.begin() + count);
}

inline std::uint64_t call_seed(std::uint64_t seed, int client, long count) {
  return mix_seed(seed, static_cast<std::uint64_t>(client) + 1,
                  static_cast<std::uint64_t>(count));
}

inline void record_eval(MetricsLog& log, const EvalResult& e, double t, int round) {
  log.add(t, round, "global", "accuracy", e.global);
  for (const auto& [id, acc] : e.per_client)
    log.add(t, round, std::to_string(id), "accuracy", acc);
  log.final_global = e.global;
  log.final_per_client = e.per_client;
}

}  // namespace detail

struct ProtocolRun {
  MetricsLog log;
  ServerState server;
  std::vector<ClientState> clients;
};

// The knowledge-sharing protocol under the selected schedule.
inline ProtocolRun run_protocol_full(const TrainConfig& cfg, const Schedule& schedule,
                                     const FederationSetup& setup, int n_gen,
                                     std::uint64_t seed) {
  ProtocolRun run;
  const int classes = setup.train.class_count;
  run.server = init_server(cfg, classes, seed);
  run.clients = detail::init_clients(setup, cfg, seed);
  const int k = setup.clients();
  std::set<int> stragglers =
      detail::pick_stragglers(k, schedule.straggler_fraction, seed);
  std::vector<long> integrations(static_cast<std::size_t>(k), 0);

  auto integrate = [&](const ClientUpload& up) {
    integrate_upload(run.server, up, cfg, n_gen,
                     detail::call_seed(mix_seed(seed, 0x17e6u), up.client_id,
                                       integrations[static_cast<std::size_t>(up.client_id)]++));
  };
  auto train = [&](ClientState& c, const ServerBroadcast& b, double t) {
    return client_update(c, b, cfg,
                         detail::call_seed(seed, c.id, c.interaction_count), t);
  };

  try {
    if (schedule.mode == ScheduleMode::Sync) {
      // Stragglers participate only every `period` rounds.
      const int period = 1 + std::max(0L, std::lround(schedule.straggler_delay));
      for (int r = 1; r <= schedule.rounds; ++r) {
        int max_quota = 1;
        for (int c = 0; c < k; ++c) max_quota = std::max(max_quota, schedule.quota(c));
        for (int pass = 1; pass <= max_quota; ++pass) {
          ServerBroadcast b = broadcast(run.server);
          std::vector<ClientUpload> uploads;
          for (int c = 0; c < k; ++c) {
            if (stragglers.count(c) && r % period != 0) continue;
            if (schedule.quota(c) < pass) continue;
            uploads.push_back(train(run.clients[static_cast<std::size_t>(c)], b,
                                    static_cast<double>(r)));
          }
          for (const ClientUpload& up : uploads) integrate(up);
        }
        detail::record_eval(run.log, evaluate_global(run.server, run.clients, setup.test),
                            static_cast<double>(r), r);
      }
    } else if (schedule.mode == ScheduleMode::Async) {
      // Deterministic per-client latencies; stragglers carry extra delay.
      Rng lat_rng = make_rng(mix_seed(seed, 0x1a7eu));
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::vector<double> latency(static_cast<std::size_t>(k));
      for (int c = 0; c < k; ++c) {
        latency[static_cast<std::size_t>(c)] =
            schedule.fixed_latency ? *schedule.fixed_latency : 0.5 + u(lat_rng);
        if (stragglers.count(c))
          latency[static_cast<std::size_t>(c)] += schedule.straggler_delay;
      }

      std::vector<ServerBroadcast> inbox(static_cast<std::size_t>(k),
                                         broadcast(run.server));
      double now = 0.0;
      for (int r = 1; r <= schedule.rounds; ++r) {
        using Event = std::pair<double, int>;
        std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue;
        std::vector<int> done(static_cast<std::size_t>(k), 0);
        for (int c = 0; c < k; ++c)
          queue.push({now + latency[static_cast<std::size_t>(c)], c});
        while (!queue.empty()) {
          double t = queue.top().first;
          // Events sharing a timestamp are integrated as one batch in id
          // order before any of them receives the reply broadcast.
          std::vector<int> batch;
          while (!queue.empty() && queue.top().first == t) {
            batch.push_back(queue.top().second);
            queue.pop();
          }
          std::vector<ClientUpload> uploads;
          for (int c : batch)
            uploads.push_back(train(run.clients[static_cast<std::size_t>(c)],
                                    inbox[static_cast<std::size_t>(c)], t));
          for (const ClientUpload& up : uploads) integrate(up);
          ServerBroadcast reply = broadcast(run.server);
          for (int c : batch) {
            inbox[static_cast<std::size_t>(c)] = reply;
            if (++done[static_cast<std::size_t>(c)] < schedule.quota(c))
              queue.push({t + latency[static_cast<std::size_t>(c)], c});
          }
          now = t;
        }
        detail::record_eval(run.log, evaluate_global(run.server, run.clients, setup.test),
                            now, r);
      }
    } else {
      // Random interactions; a fixed number of them closes a round.
      Rng pick_rng = make_rng(mix_seed(seed, 0xd1ceu));
      std::uniform_int_distribution<int> pick(0, k - 1);
      const int per_round = schedule.random_interactions_per_round;
      for (int r = 1; r <= schedule.rounds; ++r) {
        for (int i = 0; i < per_round; ++i) {
          int c = pick(pick_rng);
          double t = (r - 1) + static_cast<double>(i + 1) / per_round;
          ClientUpload up =
              train(run.clients[static_cast<std::size_t>(c)], broadcast(run.server), t);
          integrate(up);
        }
        detail::record_eval(run.log, evaluate_global(run.server, run.clients, setup.test),
                            static_cast<double>(r), r);
      }
    }
  } catch (const std::exception& e) {
    run.log.aborted = true;
    run.log.abort_reason = e.what();
  }
  run.log.gate_log = run.server.gate_log;
  return run;
}

inline MetricsLog run_protocol(const TrainConfig& cfg, const Schedule& schedule,
                               const FederationSetup& setup, int n_gen,
                               std::uint64_t seed) {
  return run_protocol_full(cfg, schedule, setup, n_gen, seed).log;
}

namespace detail {

// Chained encoder+classifier, the comparison network for the baselines.
inline ModelParams chained_model(const TrainConfig& cfg, Eigen::Index input_dim,
                                 int classes, std::uint64_t seed) {
  Rng rng = make_rng(mix_seed(seed, 0xc0deu));
  ModelParams enc = default_encoder(cfg, input_dim, rng);
  ModelParams gen = default_generator(cfg, classes, rng);  // burn the same draws
  ModelParams clf = default_classifier(cfg, classes, rng);
  (void)gen;
  ModelParams chain = enc;
  chain.role = ModelRole::Classifier;
  for (const Layer& l : clf.layers) chain.layers.push_back(l);
  return chain;
}

inline void train_chained(ModelParams& model, const Dataset& data,
                          const TrainConfig& cfg, int epochs, Rng& rng) {
  const Eigen::Index n = data.size();
  for (int e = 0; e < epochs; ++e) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index bn = std::min<Eigen::Index>(cfg.batch_size, n - start);
      Matrix bx(bn, data.feature_dim());
      std::vector<int> by(static_cast<std::size_t>(bn));
      for (Eigen::Index i = 0; i < bn; ++i) {
        bx.row(i) = data.features.row(order[static_cast<std::size_t>(start + i)]);
        by[static_cast<std::size_t>(i)] =
            data.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
      }
      ForwardTrace t = forward(model, bx);
      CeResult ce = softmax_ce(t.output(), by);
      BackwardResult b = backward(model, t, ce.logit_grads);
      sgd_step(model, b.grads, cfg.learning_rate);
    }
  }
}

inline double model_accuracy(const ModelParams& model, const Dataset& testset) {
  Matrix logits = forward(model, testset.features).output();
  long correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    if (static_cast<int>(best) == testset.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

}  // namespace detail

// Dataset-size-weighted parameter average; weights need not be normalized.
inline ModelParams average_models(const std::vector<std::pair<double, ModelParams>>& models) {
  if (models.empty()) throw std::invalid_argument("nothing to average");
  double total = 0.0;
  for (const auto& [w, m] : models) total += w;
  ModelParams avg = models.front().second;
  for (std::size_t li = 0; li < avg.layers.size(); ++li) {
    avg.layers[li].weight.setZero();
    avg.layers[li].bias.setZero();
    for (const auto& [w, m] : models) {
      avg.layers[li].weight += (w / total) * m.layers[li].weight;
      avg.layers[li].bias += (w / total) * m.layers[li].bias;
    }
  }
  return avg;
}

// FedAvg baseline: dataset-size-weighted model averaging over the clients
// that are not stragglers (stragglers are dropped from every round).
inline MetricsLog run_fedavg(const TrainConfig& cfg, const Schedule& schedule,
                             const FederationSetup& setup, std::uint64_t seed) {
  MetricsLog log;
  const int k = setup.clients();
  std::set<int> stragglers =
      detail::pick_stragglers(k, schedule.straggler_fraction, seed);
  ModelParams global = detail::chained_model(cfg, setup.train.feature_dim(),
                                             setup.train.class_count, seed);
  std::vector<Dataset> local;
  for (const ClientDataset& p : setup.parts) local.push_back(p.materialize(setup.train));

  try {
    for (int r = 1; r <= schedule.rounds; ++r) {
      std::vector<std::pair<double, ModelParams>> trained;  // weight, model
      for (int c = 0; c < k; ++c) {
        if (stragglers.count(c)) continue;
        ModelParams m = global;
        Rng rng = make_rng(detail::call_seed(seed, c, r));
        detail::train_chained(m, local[static_cast<std::size_t>(c)], cfg,
                              cfg.local_epochs, rng);
        trained.emplace_back(static_cast<double>(local[static_cast<std::size_t>(c)].size()),
                             std::move(m));
      }
      if (!trained.empty()) global = average_models(trained);
      double acc = detail::model_accuracy(global, setup.test);
      log.add(r, r, "global", "accuracy", acc);
      log.final_global = acc;
      for (int c = 0; c < k; ++c) {
        log.add(r, r, std::to_string(c), "accuracy", acc);
        log.final_per_client[c] = acc;
      }
    }
  } catch (const std::exception& e) {
    log.aborted = true;
    log.abort_reason = e.what();
  }
  return log;
}

// Isolation baseline: every client runs the full protocol machinery alone
// (its own server, no peers). Equals run_protocol with K=1 by construction.
inline MetricsLog run_single_device(const TrainConfig& cfg, const Schedule& schedule,
                                    const FederationSetup& setup, int n_gen,
                                    std::uint64_t seed) {
  MetricsLog log;
  const int k = setup.clients();
  std::vector<MetricsLog> subs;
  try {
    for (int c = 0; c < k; ++c) {
      FederationSetup solo;
      solo.train = setup.train;
      solo.test = setup.test;
      ClientDataset part = setup.parts[static_cast<std::size_t>(c)];
      part.client_id = 0;
      solo.parts = {part};
      Schedule sync = schedule;
      sync.mode = ScheduleMode::Sync;
      sync.straggler_fraction = 0.0;
      sync.active_clients.clear();
      subs.push_back(run_protocol(cfg, sync, solo, n_gen,
                                  seed + static_cast<std::uint64_t>(c)));
      if (subs.back().aborted) {
        log.aborted = true;
        log.abort_reason = subs.back().abort_reason;
        break;
      }
    }
    for (int r = 1; r <= schedule.rounds && !log.aborted; ++r) {
      double mean = 0.0;
      for (int c = 0; c < k; ++c) {
        double a = subs[static_cast<std::size_t>(c)].accuracy_at(r, "global");
        log.add(r, r, std::to_string(c), "accuracy", a);
        log.final_per_client[c] = a;
        mean += a;
      }
      mean /= static_cast<double>(k);
      log.add(r, r, "global", "accuracy", mean);
      log.final_global = mean;
    }
  } catch (const std::exception& e) {
    log.aborted = true;
    log.abort_reason = e.what();
  }
  return log;
}

inline void write_metrics_csv(const MetricsLog& log, std::ostream& os) {
  os << "event_time,round,entity,metric,value\n";
  os.precision(17);
  for (const MetricsRecord& r : log.records)
    os << r.event_time << ',' << r.round << ',' << r.entity << ',' << r.metric << ','
       << r.value << '\n';
}

inline void write_metrics_jsonl(const MetricsLog& log, std::ostream& os) {
  os.precision(17);
  for (const MetricsRecord& r : log.records)
    os << "{\"event_time\":" << r.event_time << ",\"round\":" << r.round
       << ",\"entity\":\"" << r.entity << "\",\"metric\":\"" << r.metric
       << "\",\"value\":" << r.value << "}\n";
}

inline void write_summary_json(const MetricsLog& log, std::ostream& os) {
  os.precision(17);
  long learned = 0, skipped = 0, takeovers = 0;
  for (const GateRecord& g : log.gate_log) {
    if (g.learned) ++learned; else ++skipped;
    if (g.takeover) ++takeovers;
  }
  os << "{\"global_accuracy\":" << log.final_global << ",\"per_client\":{";
  bool first = true;
  for (const auto& [id, acc] : log.final_per_client) {
    if (!first) os << ',';
    first = false;
    os << "\"" << id << "\":" << acc;
  }
  os << "},\"gate\":{\"learned\":" << learned << ",\"skipped\":" << skipped
     << ",\"takeovers\":" << takeovers << "},\"aborted\":"
     << (log.aborted ? "true" : "false") << "}\n";
}

}  // namespace cks
