#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cks/checkpoint.hpp"
#include "cks/config.hpp"
#include "cks/sim.hpp"

namespace cks {

namespace fs = std::filesystem;

inline FederationSetup build_setup(const SimConfig& cfg) {
  FederationSetup setup;
  if (cfg.dataset == "synth") {
    // One draw, row-split: the held-out rows come from the same class blobs
    // as the training rows, so test accuracy measures generalization within
    // the distribution rather than transfer to freshly placed blobs.
    Dataset all = synth_blobs(cfg.classes, cfg.feature_dim,
                              cfg.per_class + cfg.test_per_class, cfg.spread, cfg.seed);
    const Eigen::Index n_train =
        static_cast<Eigen::Index>(cfg.classes) * cfg.per_class;
    setup.train.class_count = all.class_count;
    setup.train.features = all.features.topRows(n_train);
    setup.train.labels.assign(all.labels.begin(), all.labels.begin() + n_train);
    setup.test.class_count = all.class_count;
    setup.test.features = all.features.bottomRows(all.features.rows() - n_train);
    setup.test.labels.assign(all.labels.begin() + n_train, all.labels.end());
  } else {
    setup.train = load_idx(cfg.idx_images, cfg.idx_labels);
    if (!cfg.idx_test_images.empty())
      setup.test = load_idx(cfg.idx_test_images, cfg.idx_test_labels);
    else
      setup.test = setup.train;
  }
  PartitionScheme scheme = cfg.partition_scheme == "iid" ? PartitionScheme::Iid
                                                         : PartitionScheme::LabelLimit;
  setup.parts = partition(setup.train, scheme, cfg.label_limit, cfg.clients,
                          cfg.n_local, cfg.seed);
  for (int id : cfg.corrupt_clients) {
    CorruptMode mode = cfg.corrupt_mode == "label_flip" ? CorruptMode::LabelFlip
                                                        : CorruptMode::FeatureNoise;
    setup.parts[static_cast<std::size_t>(id)] = corrupt(
        setup.train, setup.parts[static_cast<std::size_t>(id)], mode, cfg.corrupt_p,
        cfg.seed);
  }
  return setup;
}

namespace detail {

inline void atomic_write(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << content;
  }
  fs::rename(tmp, path);
}

// Held for the duration of a run; a leftover marker from a concurrent run is
// an error.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : marker_(dir / ".cks-lock") {
    if (fs::exists(marker_))
      throw std::runtime_error("output directory locked: " + marker_.string());
    std::ofstream f(marker_);
    f << "running\n";
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(marker_, ec);
  }

 private:
  fs::path marker_;
};

}  // namespace detail

// Executes the configured runner and writes metrics.csv, metrics.jsonl,
// summary.json, gate_log.jsonl and (for the protocol runner) server.ckpt to
// the output directory. Returns 0 on success, 2 on runtime error.
inline int run_experiment(const SimConfig& cfg, std::ostream& err,
                          const std::string& output_root = "") {
  try {
    FederationSetup setup = build_setup(cfg);
    fs::path out = cfg.output_dir;
    if (!output_root.empty()) out = fs::path(output_root) / out;
    fs::create_directories(out);
    detail::OutputLock lock(out);

    MetricsLog log;
    bool have_server = false;
    ServerState server;
    if (cfg.runner == "protocol") {
      ProtocolRun run =
          run_protocol_full(cfg.train, cfg.schedule(), setup, cfg.n_gen, cfg.seed);
      log = std::move(run.log);
      server = std::move(run.server);
      have_server = true;
    } else if (cfg.runner == "fedavg") {
      log = run_fedavg(cfg.train, cfg.schedule(), setup, cfg.seed);
    } else {
      log = run_single_device(cfg.train, cfg.schedule(), setup, cfg.n_gen, cfg.seed);
    }

    std::ostringstream csv, jsonl, summary, gates;
    write_metrics_csv(log, csv);
    write_metrics_jsonl(log, jsonl);
    write_summary_json(log, summary);
    write_gate_log_jsonl(log.gate_log, gates);
    detail::atomic_write(out / "metrics.csv", csv.str());
    detail::atomic_write(out / "metrics.jsonl", jsonl.str());
    detail::atomic_write(out / "summary.json", summary.str());
    detail::atomic_write(out / "gate_log.jsonl", gates.str());
    if (have_server) save_checkpoint(server, (out / "server.ckpt").string());

    if (log.aborted) {
      err << "run aborted: " << log.abort_reason << "\n";
      return 2;
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace cks
