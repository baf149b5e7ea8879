// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 4-8 share one synthetic non-IID federation scenario; the
// runs are cached per seed so each configuration executes once.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "cks/experiment.hpp"
#include "test_util.hpp"

using namespace cks;
using cks::testing::finite_difference;
using cks::testing::max_rel_error;
using cks::testing::random_matrix;
using cks::testing::random_pd;
using cks::testing::random_vector;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::cout << "criterion " << criterion << ": " << (pass ? "PASS" : "FAIL") << " — "
            << detail << "\n";
  if (!pass) ++failures;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Criterion 1: finite-difference gradient suite, >= 20 seeded instances per
// loss, relative error < 1e-3 at eps = 1e-5.
// ---------------------------------------------------------------------------

void criterion_gradients() {
  Clock::time_point t0 = Clock::now();
  const double eps = 1e-5;
  const double tol = 1e-3;
  const int instances = 20;
  double worst = 0.0;
  std::string worst_name = "none";
  auto track = [&](const char* name, double err) {
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  };

  for (int inst = 0; inst < instances; ++inst) {
    Rng rng = make_rng(mix_seed(9000, static_cast<std::uint64_t>(inst)));
    const Eigen::Index n = 6, d = 4;
    const int classes = 3;
    std::vector<int> labels;
    std::uniform_int_distribution<int> lab(0, classes - 1);
    for (Eigen::Index i = 0; i < n; ++i) labels.push_back(lab(rng));
    Matrix z = random_matrix(n, d, rng);

    // contrastive
    {
      LossResult r = contrastive_batch({z, labels}, 1.0);
      Matrix fd = finite_difference(
          [&](const Matrix& x) { return contrastive_batch({x, labels}, 1.0).loss; }, z,
          eps);
      track("contrastive", max_rel_error(fd, r.grads));
    }

    // collaborative (all table entries initialized)
    {
      KnowledgeTable table(d, classes);
      for (int c = 0; c < classes; ++c) {
        GaussianSummary g;
        g.mean = random_vector(d, rng);
        g.cov = random_pd(d, rng);
        table.set(c, g);
      }
      LossResult r = collaborative_batch({z, labels}, table, 1e-4);
      Matrix fd = finite_difference(
          [&](const Matrix& x) { return collaborative_batch({x, labels}, table, 1e-4).loss; },
          z, eps);
      track("collaborative", max_rel_error(fd, r.grads));
    }

    // descriptive (gradient w.r.t. the generated embeddings)
    {
      Matrix z_des = random_matrix(n, d, rng);
      std::map<int, Matrix> cov_inv;
      for (int c = 0; c < classes; ++c) cov_inv[c] = random_pd(d, rng);
      LossResult r = descriptive_batch(z, z_des, labels, cov_inv);
      Matrix fd = finite_difference(
          [&](const Matrix& x) { return descriptive_batch(z, x, labels, cov_inv).loss; },
          z_des, eps);
      track("descriptive", max_rel_error(fd, r.grads));
    }

    // discriminative (both logit paths)
    {
      Matrix lc = random_matrix(n, classes, rng);
      Matrix ld = random_matrix(n, classes, rng);
      DiscriminativeResult r = discriminative_loss(lc, ld, labels, 0.7);
      Matrix fd_c = finite_difference(
          [&](const Matrix& x) { return discriminative_loss(x, ld, labels, 0.7).loss; },
          lc, eps);
      Matrix fd_d = finite_difference(
          [&](const Matrix& x) { return discriminative_loss(lc, x, labels, 0.7).loss; },
          ld, eps);
      track("discriminative/cog", max_rel_error(fd_c, r.grads_cog));
      track("discriminative/des", max_rel_error(fd_d, r.grads_des));
    }

    // softmax cross-entropy
    {
      Matrix logits = random_matrix(n, classes, rng);
      CeResult r = softmax_ce(logits, labels);
      Matrix fd = finite_difference(
          [&](const Matrix& x) { return softmax_ce(x, labels).loss; }, logits, eps);
      track("softmax_ce", max_rel_error(fd, r.logit_grads));
    }
  }

  double elapsed = seconds_since(t0);
  bool pass = worst < tol && elapsed < 30.0;
  report(1, pass,
         "gradient suite: " + std::to_string(instances) + " instances per loss, worst "
             "relative error " + fmt(worst) + " (" + worst_name + ", tolerance 0.001), " +
             fmt(elapsed) + "s");
}

// ---------------------------------------------------------------------------
// Criterion 2: linalg suite.
// ---------------------------------------------------------------------------

void criterion_linalg() {
  Clock::time_point t0 = Clock::now();
  bool pass = true;
  std::ostringstream why;

  // sqrtm_psd round trip
  double worst_sqrt = 0.0;
  Rng rng = make_rng(9100);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix s = random_pd(6, rng);
    Matrix r = sqrtm_psd(s);
    worst_sqrt = std::max(worst_sqrt, (r * r - s).norm() / s.norm());
  }
  if (worst_sqrt >= 1e-8) {
    pass = false;
    why << " sqrtm round-trip error " << worst_sqrt << ";";
  }

  // closed forms
  {
    GaussianSummary a{Vector::Zero(1), Matrix::Identity(1, 1), 1};
    Vector mu(1);
    mu << 3.0;
    Matrix cv(1, 1);
    cv << 4.0;
    GaussianSummary b{mu, cv, 1};
    if (std::abs(bures_w2_sq(a, b) - 10.0) >= 1e-8) {
      pass = false;
      why << " 1-D closed form mismatch;";
    }
    Matrix c1(2, 2), c2(2, 2);
    c1 << 1, 0, 0, 4;
    c2 << 4, 0, 0, 1;
    GaussianSummary p{Vector::Zero(2), c1, 1};
    GaussianSummary q{Vector::Zero(2), c2, 1};
    if (std::abs(bures_w2_sq(p, q) - 2.0) >= 1e-8) {
      pass = false;
      why << " diagonal closed form mismatch;";
    }
  }

  // transport push-forward
  double worst_transport = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Matrix src = random_pd(4, rng);
    Matrix dst = random_pd(4, rng);
    Matrix t = transport_map(src, dst);
    worst_transport = std::max(worst_transport, (t * src * t - dst).norm() / dst.norm());
  }
  if (worst_transport >= 1e-6) {
    pass = false;
    why << " transport push-forward error " << worst_transport << ";";
  }

  // metric axioms on 100 random PD pairs
  for (int trial = 0; trial < 100; ++trial) {
    GaussianSummary a{random_vector(4, rng), random_pd(4, rng), 1};
    GaussianSummary b{random_vector(4, rng), random_pd(4, rng), 1};
    double ab = bures_w2_sq(a, b);
    double ba = bures_w2_sq(b, a);
    if (ab < 0.0 || std::abs(ab - ba) >= 1e-8 * std::max(1.0, ab) ||
        bures_w2_sq(a, a) >= 1e-8) {
      pass = false;
      why << " metric axiom violated at trial " << trial << ";";
      break;
    }
  }

  double elapsed = seconds_since(t0);
  if (elapsed >= 10.0) {
    pass = false;
    why << " over time budget;";
  }
  report(2, pass,
         "linalg suite: sqrtm " + fmt(worst_sqrt) + ", transport " + fmt(worst_transport) +
             ", closed forms and 100 metric-axiom pairs, " + fmt(elapsed) + "s" +
             why.str());
}

// ---------------------------------------------------------------------------
// Criterion 3: gate soundness — full replay of the gate log.
// ---------------------------------------------------------------------------

void criterion_gate_replay() {
  TrainConfig cfg;
  cfg.embed_dim = 4;
  cfg.noise_dim = 2;
  const int classes = 4;
  ServerState server = init_server(cfg, classes, 9200);
  Rng rng = make_rng(9201);
  std::uniform_real_distribution<double> gain(0.05, 3.0);
  // 250 uploads x 4 classes = 1000 gate decisions
  for (int i = 0; i < 250; ++i) {
    ModelParams g;
    g.layers.push_back({gain(rng) * random_matrix(cfg.embed_dim,
                                                  cfg.noise_dim + classes, rng),
                        random_vector(cfg.embed_dim, rng), Activation::Identity});
    g.role = ModelRole::Generator;
    integrate_upload(server, ClientUpload{i % 8, g, 0.0}, cfg, 2 * classes,
                     9300 + static_cast<std::uint64_t>(i));
  }

  // Replay: reproduce every decision and the reference-trace evolution from
  // the log alone.
  struct SlotState {
    bool initialized = false;
    double trace = 0.0;
  };
  std::vector<SlotState> slots(classes);
  bool pass = server.gate_log.size() == 1000;
  long learned = 0, takeovers = 0;
  for (const GateRecord& r : server.gate_log) {
    SlotState& s = slots[static_cast<std::size_t>(r.cls)];
    if (r.was_initialized != s.initialized ||
        (s.initialized && r.trace_ref != s.trace) ||
        r.learned != gate_learns(s.initialized, r.trace_k, s.trace, cfg.beta) ||
        r.takeover != gate_takes_over(s.initialized, r.trace_k, s.trace, cfg.beta)) {
      pass = false;
      break;
    }
    if (!s.initialized) {
      s.initialized = true;
      s.trace = r.trace_k;
    } else if (r.takeover) {
      s.trace = r.trace_k;
    }
    if (r.learned) ++learned;
    if (r.takeover) ++takeovers;
  }
  report(3, pass,
         "gate replay: " + std::to_string(server.gate_log.size()) +
             " decisions reproduced exactly (" + std::to_string(learned) + " learned, " +
             std::to_string(takeovers) + " takeovers)");
}

// ---------------------------------------------------------------------------
// Shared federation scenario for criteria 4-8: C=4 classes, d=8 features,
// K=8 clients holding 2 classes each, 30 sync rounds.
// ---------------------------------------------------------------------------

constexpr int kClasses = 4;
constexpr Eigen::Index kFeatureDim = 8;
constexpr int kClients = 8;
constexpr int kLabelLimit = 2;
constexpr int kRounds = 30;
constexpr int kPerClass = 400;
constexpr int kTestPerClass = 150;
constexpr double kSpread = 0.3;
constexpr int kNLocal = 150;
constexpr int kNGen = 800;
const std::vector<std::uint64_t> kSeeds = {101, 202, 303};

// Pinned desk-scale hyperparameters. The protocol defaults assume the large
// text/image workloads of the original setup; this 8-client blob scenario
// needs a gentler encoder (the shared initialization is the only cross-client
// anchor for classes a client never holds) and per-module rates so the
// generator and classifier keep learning while the encoder settles.
TrainConfig scenario_train_config() {
  TrainConfig cfg;
  cfg.learning_rate = 0.0015;
  cfg.lr_decay = 0.3;        // hyperbolic decay on the encoder, per interaction
  cfg.enc_lr_scale = 0.5;
  cfg.gen_lr_scale = 3.0;
  cfg.clf_lr_scale = 80.0;
  cfg.server_lr_scale = 10.0;
  cfg.col_weight = 0.1;
  cfg.ridge = 0.005;
  cfg.des_ridge = 0.1;
  return cfg;
}

FederationSetup scenario_setup(std::uint64_t seed) {
  // One draw, row-split: held-out rows come from the same class blobs as the
  // training rows (same convention as build_setup for the synth dataset).
  FederationSetup s;
  Dataset all = synth_blobs(kClasses, kFeatureDim, kPerClass + kTestPerClass, kSpread,
                            seed);
  const Eigen::Index n_train = static_cast<Eigen::Index>(kClasses) * kPerClass;
  s.train.class_count = all.class_count;
  s.train.features = all.features.topRows(n_train);
  s.train.labels.assign(all.labels.begin(), all.labels.begin() + n_train);
  s.test.class_count = all.class_count;
  s.test.features = all.features.bottomRows(all.features.rows() - n_train);
  s.test.labels.assign(all.labels.begin() + n_train, all.labels.end());
  s.parts = partition(s.train, PartitionScheme::LabelLimit, kLabelLimit, kClients,
                      kNLocal, seed);
  return s;
}

Schedule sync_schedule() {
  Schedule s;
  s.rounds = kRounds;
  return s;
}

struct ScenarioRuns {
  FederationSetup setup;
  ProtocolRun proto;   // clean sync protocol (with final client states)
  MetricsLog single;   // isolation baseline
  MetricsLog fedavg;   // clean fedavg
};

std::map<std::uint64_t, ScenarioRuns> cache;

const ScenarioRuns& scenario(std::uint64_t seed) {
  auto it = cache.find(seed);
  if (it != cache.end()) return it->second;
  ScenarioRuns r;
  r.setup = scenario_setup(seed);
  TrainConfig cfg = scenario_train_config();
  Schedule sched = sync_schedule();
  r.proto = run_protocol_full(cfg, sched, r.setup, kNGen, seed);
  r.single = run_single_device(cfg, sched, r.setup, kNGen, seed);
  r.fedavg = run_fedavg(cfg, sched, r.setup, seed);
  return cache.emplace(seed, std::move(r)).first->second;
}

// ---------------------------------------------------------------------------
// Criterion 4: non-IID benefit trend.
// ---------------------------------------------------------------------------

void criterion_noniid() {
  Clock::time_point t0 = Clock::now();
  double proto = 0.0, single = 0.0, fedavg10 = 0.0;
  bool aborted = false;
  for (std::uint64_t seed : kSeeds) {
    const ScenarioRuns& r = scenario(seed);
    aborted = aborted || r.proto.log.aborted || r.single.aborted || r.fedavg.aborted;
    if (aborted) break;
    proto += r.proto.log.final_global;
    single += r.single.final_global;
    fedavg10 += r.fedavg.accuracy_at(10, "global");
  }
  proto /= 3.0;
  single /= 3.0;
  fedavg10 /= 3.0;
  double elapsed = seconds_since(t0);
  bool pass = !aborted && proto >= single + 0.15 && proto > fedavg10 && elapsed < 300.0;
  report(4, pass,
         "non-IID trend: protocol " + fmt(proto) + " vs isolated " + fmt(single) +
             " (lead " + fmt(proto - single) + ", need >= 0.15) and fedavg@10 " +
             fmt(fedavg10) + ", 3 seeds, " + fmt(elapsed) + "s" +
             (aborted ? " [run aborted]" : ""));
}

// ---------------------------------------------------------------------------
// Criterion 5: poison containment.
// ---------------------------------------------------------------------------

void criterion_poison() {
  Clock::time_point t0 = Clock::now();
  const std::vector<int> poisoned = {6, 7};
  double honest_clean = 0.0, honest_poisoned = 0.0;
  double bad_clean = 0.0, bad_poisoned = 0.0;
  long skipped_late = 0, total_late = 0;
  bool aborted = false;
  auto is_bad = [&](int id) {
    return std::find(poisoned.begin(), poisoned.end(), id) != poisoned.end();
  };

  for (std::uint64_t seed : kSeeds) {
    const ScenarioRuns& clean = scenario(seed);
    FederationSetup setup = clean.setup;
    for (int id : poisoned)
      setup.parts[static_cast<std::size_t>(id)] =
          corrupt(setup.train, setup.parts[static_cast<std::size_t>(id)],
                  CorruptMode::LabelFlip, 0.9,
                  mix_seed(seed, 0xf00du, static_cast<std::uint64_t>(id)));
    TrainConfig cfg = scenario_train_config();
    ProtocolRun run = run_protocol_full(cfg, sync_schedule(), setup, kNGen, seed);
    aborted = aborted || run.log.aborted || clean.proto.log.aborted;
    if (aborted) break;

    // Honest clients are scored with the central classifier (the protocol
    // benefit they receive); the poisoned clients are scored with their own
    // adopted-and-fine-tuned model on their own label distribution — the
    // classes they actually hold — which is where the flipped labels land.
    for (int c = 0; c < kClients; ++c) {
      if (is_bad(c)) {
        std::vector<bool> keep(static_cast<std::size_t>(kClasses), false);
        for (Eigen::Index idx : clean.setup.parts[static_cast<std::size_t>(c)].indices)
          keep[static_cast<std::size_t>(
              setup.train.labels[static_cast<std::size_t>(idx)])] = true;
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < setup.test.size(); ++i)
          if (keep[static_cast<std::size_t>(setup.test.labels[static_cast<std::size_t>(i)])])
            rows.push_back(i);
        Dataset own;
        own.class_count = setup.test.class_count;
        own.features.resize(static_cast<Eigen::Index>(rows.size()),
                            setup.test.feature_dim());
        own.labels.resize(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          own.features.row(static_cast<Eigen::Index>(i)) =
              setup.test.features.row(rows[i]);
          own.labels[i] = setup.test.labels[static_cast<std::size_t>(rows[i])];
        }
        bad_clean += local_accuracy(clean.proto.clients[static_cast<std::size_t>(c)],
                                    own);
        bad_poisoned += local_accuracy(run.clients[static_cast<std::size_t>(c)],
                                       own);
      } else {
        honest_clean += clean.proto.log.final_per_client.at(c);
        honest_poisoned += run.log.final_per_client.at(c);
      }
    }

    // Gate events after round 5: sync order gives K*C records per round.
    const std::size_t cutoff = 5u * kClients * kClasses;
    for (std::size_t i = cutoff; i < run.log.gate_log.size(); ++i) {
      const GateRecord& g = run.log.gate_log[i];
      if (is_bad(g.client)) {
        ++total_late;
        if (!g.learned) ++skipped_late;
      }
    }
  }
  honest_clean /= 3.0 * (kClients - 2);
  honest_poisoned /= 3.0 * (kClients - 2);
  bad_clean /= 3.0 * 2;
  bad_poisoned /= 3.0 * 2;
  double skip_rate =
      total_late > 0 ? static_cast<double>(skipped_late) / static_cast<double>(total_late)
                     : 0.0;
  double elapsed = seconds_since(t0);
  bool pass = !aborted && honest_poisoned >= honest_clean - 0.05 &&
              bad_poisoned < 0.4 * bad_clean && skip_rate >= 0.8 && elapsed < 300.0;
  report(5, pass,
         "poison containment: honest " + fmt(honest_clean) + " -> " +
             fmt(honest_poisoned) + " (drop <= 0.05), poisoned " + fmt(bad_clean) +
             " -> " + fmt(bad_poisoned) + " (need < 40% of clean), gate skip rate after "
             "round 5 " + fmt(skip_rate) + " (need >= 0.8), 3 seeds, " + fmt(elapsed) +
             "s" + (aborted ? " [run aborted]" : ""));
}

// ---------------------------------------------------------------------------
// Criterion 6: async equivalence.
// ---------------------------------------------------------------------------

void criterion_async() {
  Clock::time_point t0 = Clock::now();
  double sync_mean = 0.0, async_mean = 0.0;
  bool aborted = false;
  for (std::uint64_t seed : kSeeds) {
    const ScenarioRuns& r = scenario(seed);
    Schedule sched = sync_schedule();
    sched.mode = ScheduleMode::Async;  // heterogeneous per-client latencies
    MetricsLog a = run_protocol(scenario_train_config(), sched, r.setup, kNGen, seed);
    aborted = aborted || a.aborted || r.proto.log.aborted;
    if (aborted) break;
    sync_mean += r.proto.log.final_global;
    async_mean += a.final_global;
  }
  sync_mean /= 3.0;
  async_mean /= 3.0;
  double elapsed = seconds_since(t0);
  bool pass = !aborted && std::abs(async_mean - sync_mean) <= 0.02;
  report(6, pass,
         "async equivalence: sync " + fmt(sync_mean) + " vs async " + fmt(async_mean) +
             " (gap " + fmt(std::abs(async_mean - sync_mean)) + ", need <= 0.02), "
             "3 seeds, " + fmt(elapsed) + "s" + (aborted ? " [run aborted]" : ""));
}

// ---------------------------------------------------------------------------
// Criterion 7: straggler robustness trend.
// ---------------------------------------------------------------------------

void criterion_stragglers() {
  Clock::time_point t0 = Clock::now();
  const std::vector<double> fractions = {0.0, 0.4, 0.8};
  std::vector<double> proto_acc, fedavg_acc;
  bool aborted = false;
  for (double f : fractions) {
    double p = 0.0, fa = 0.0;
    for (std::uint64_t seed : kSeeds) {
      const ScenarioRuns& base = scenario(seed);
      if (f == 0.0) {
        aborted = aborted || base.proto.log.aborted || base.fedavg.aborted;
        p += base.proto.log.final_global;
        fa += base.fedavg.final_global;
        continue;
      }
      Schedule sched = sync_schedule();
      sched.straggler_fraction = f;
      TrainConfig cfg = scenario_train_config();
      MetricsLog mp = run_protocol(cfg, sched, base.setup, kNGen, seed);
      MetricsLog mf = run_fedavg(cfg, sched, base.setup, seed);
      aborted = aborted || mp.aborted || mf.aborted;
      p += mp.final_global;
      fa += mf.final_global;
    }
    proto_acc.push_back(p / 3.0);
    fedavg_acc.push_back(fa / 3.0);
  }
  double lo = *std::min_element(proto_acc.begin(), proto_acc.end());
  double hi = *std::max_element(proto_acc.begin(), proto_acc.end());
  double fed_drop = fedavg_acc[0] - fedavg_acc[2];
  double elapsed = seconds_since(t0);
  bool pass = !aborted && (hi - lo) <= 0.03 && fed_drop >= 0.03;
  report(7, pass,
         "straggler trend: protocol finals {" + fmt(proto_acc[0]) + ", " +
             fmt(proto_acc[1]) + ", " + fmt(proto_acc[2]) + "} range " + fmt(hi - lo) +
             " (need <= 0.03); fedavg 0 -> 0.8 drop " + fmt(fed_drop) +
             " (need >= 0.03), 3 seeds, " + fmt(elapsed) + "s" +
             (aborted ? " [run aborted]" : ""));
}

// ---------------------------------------------------------------------------
// Criterion 8: incentive trend for active clients.
// ---------------------------------------------------------------------------

void criterion_incentive() {
  Clock::time_point t0 = Clock::now();
  bool pass = true;
  bool aborted = false;
  std::ostringstream per_seed;
  for (std::uint64_t seed : kSeeds) {
    const ScenarioRuns& base = scenario(seed);
    Schedule sched = sync_schedule();
    sched.active_clients[0] = 3;
    sched.active_clients[1] = 3;
    MetricsLog run = run_protocol(scenario_train_config(), sched, base.setup, kNGen, seed);
    if (run.aborted) {
      aborted = true;
      break;
    }
    double active = 0.5 * (run.final_per_client.at(0) + run.final_per_client.at(1));
    double normal = 0.0;
    for (int c = 2; c < kClients; ++c) normal += run.final_per_client.at(c);
    normal /= kClients - 2;
    per_seed << " [" << fmt(active) << " vs " << fmt(normal) << "]";
    if (active < normal) pass = false;
  }
  double elapsed = seconds_since(t0);
  pass = pass && !aborted;
  report(8, pass,
         "incentive trend: active-vs-normal mean accuracy per seed" + per_seed.str() +
             " (active >= normal required in every seed), " + fmt(elapsed) + "s" +
             (aborted ? " [run aborted]" : ""));
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism — byte-identical metrics files on rerun.
// ---------------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void criterion_determinism() {
  namespace fs = std::filesystem;
  SimConfig cfg;
  cfg.seed = kSeeds[0];
  cfg.classes = kClasses;
  cfg.feature_dim = kFeatureDim;
  cfg.per_class = kPerClass;
  cfg.test_per_class = kTestPerClass;
  cfg.spread = kSpread;
  cfg.partition_scheme = "label_limit";
  cfg.label_limit = kLabelLimit;
  cfg.clients = kClients;
  cfg.n_local = kNLocal;
  cfg.rounds = 5;  // determinism is schedule-independent; keep the rerun cheap
  cfg.n_gen = kNGen;
  validate_config(cfg);

  fs::path root = fs::temp_directory_path() / ("cks_accept_" + std::to_string(::getpid()));
  fs::create_directories(root);
  std::ostringstream err;
  cfg.output_dir = "a";
  int rc1 = run_experiment(cfg, err, root.string());
  cfg.output_dir = "b";
  int rc2 = run_experiment(cfg, err, root.string());

  bool pass = rc1 == 0 && rc2 == 0;
  std::string mismatched;
  for (const char* name : {"metrics.csv", "metrics.jsonl", "summary.json",
                           "gate_log.jsonl"}) {
    std::string a = slurp(root / "a" / name);
    std::string b = slurp(root / "b" / name);
    if (a.empty() || a != b) {
      pass = false;
      mismatched += std::string(" ") + name;
    }
  }
  fs::remove_all(root);
  report(9, pass,
         "determinism: rerun with the same seed produced byte-identical metrics files" +
             (mismatched.empty() ? std::string()
                                 : " [mismatch:" + mismatched + "]") +
             (rc1 || rc2 ? " [nonzero exit]" : ""));
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_linalg();
  criterion_gate_replay();
  criterion_noniid();
  criterion_poison();
  criterion_async();
  criterion_stragglers();
  criterion_incentive();
  criterion_determinism();
  if (failures) {
    std::cout << failures << " criteria failed\n";
    return 1;
  }
  std::cout << "all 9 criteria passed\n";
  return 0;
}
