#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cks/client.hpp"
#include "cks/data.hpp"
#include "cks/sim.hpp"

namespace cks {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SimConfig {
  TrainConfig train;
  int n_gen = 800;

  std::string runner = "protocol";  // protocol | fedavg | single

  std::string dataset = "synth";  // synth | idx
  int classes = 4;
  Eigen::Index feature_dim = 8;
  int per_class = 1000;
  int test_per_class = 250;
  double spread = 0.1;
  std::string idx_images, idx_labels, idx_test_images, idx_test_labels;

  std::string partition_scheme = "iid";  // iid | label_limit
  int label_limit = 2;
  int clients = 8;
  int n_local = 200;

  std::vector<int> corrupt_clients;
  std::string corrupt_mode = "label_flip";  // label_flip | feature_noise
  double corrupt_p = 0.0;

  std::string mode = "sync";  // sync | async | random
  int rounds = 30;
  double straggler_fraction = 0.0;
  double straggler_delay = 1.0;
  std::vector<int> active_clients;
  int active_interactions = 1;
  int random_interactions = 20;

  std::string output_dir = "out";
  std::uint64_t seed = 0;

  Schedule schedule() const {
    Schedule s;
    s.mode = mode == "async"  ? ScheduleMode::Async
             : mode == "random" ? ScheduleMode::Random
                                : ScheduleMode::Sync;
    s.rounds = rounds;
    s.straggler_fraction = straggler_fraction;
    s.straggler_delay = straggler_delay;
    for (int c : active_clients) s.active_clients[c] = active_interactions;
    s.random_interactions_per_round = random_interactions;
    return s;
  }
};

namespace toml {

using Value = std::variant<std::int64_t, double, bool, std::string,
                           std::vector<std::int64_t>, std::vector<std::string>>;

struct Entry {
  Value value;
  int line = 0;
};

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline Value parse_scalar(const std::string& raw, int line) {
  std::string s = trim(raw);
  if (s.empty()) throw ConfigError("line " + std::to_string(line) + ": empty value");
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"')
      throw ConfigError("line " + std::to_string(line) + ": unterminated string");
    return s.substr(1, s.size() - 2);
  }
  if (s == "true") return true;
  if (s == "false") return false;
  bool floaty = s.find_first_of(".eE") != std::string::npos &&
                s.find_first_not_of("+-0123456789.eE") == std::string::npos;
  try {
    std::size_t pos = 0;
    if (floaty) {
      double d = std::stod(s, &pos);
      if (pos == s.size()) return d;
    } else {
      std::int64_t v = std::stoll(s, &pos);
      if (pos == s.size()) return v;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("line " + std::to_string(line) + ": cannot parse value '" + s + "'");
}

inline Value parse_value(const std::string& raw, int line) {
  std::string s = trim(raw);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']')
      throw ConfigError("line " + std::to_string(line) + ": unterminated array");
    std::string body = s.substr(1, s.size() - 2);
    std::vector<std::int64_t> ints;
    std::vector<std::string> strs;
    bool is_str = false, any = false;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      any = true;
      Value v = parse_scalar(item, line);
      if (std::holds_alternative<std::string>(v)) {
        is_str = true;
        strs.push_back(std::get<std::string>(v));
      } else if (std::holds_alternative<std::int64_t>(v)) {
        ints.push_back(std::get<std::int64_t>(v));
      } else {
        throw ConfigError("line " + std::to_string(line) + ": unsupported array element");
      }
    }
    if (any && is_str && !ints.empty())
      throw ConfigError("line " + std::to_string(line) + ": mixed array");
    if (is_str) return strs;
    return ints;
  }
  return parse_scalar(s, line);
}

// Flat key = value TOML subset: strings, integers, floats, booleans and
// homogeneous arrays; '#' comments.
inline std::map<std::string, Entry> parse(std::istream& in) {
  std::map<std::string, Entry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // strip comment outside quotes
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      else if (line[i] == '#' && !quoted) { line = line.substr(0, i); break; }
    }
    std::string t = trim(line);
    if (t.empty()) continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    if (key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (out.count(key))
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    out[key] = Entry{parse_value(t.substr(eq + 1), lineno), lineno};
  }
  return out;
}

}  // namespace toml

namespace detail {

class ConfigReader {
 public:
  explicit ConfigReader(std::map<std::string, toml::Entry> entries)
      : entries_(std::move(entries)) {}

  template <typename T>
  void get(const char* key, T& out) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return;
    consumed_.insert(key);
    assign(it->second, key, out);
  }

  bool has(const char* key) const { return entries_.count(key) > 0; }

  void finish() const {
    for (const auto& [key, entry] : entries_)
      if (!consumed_.count(key))
        throw ConfigError("line " + std::to_string(entry.line) + ": unknown key '" +
                          key + "'");
  }

 private:
  static void assign(const toml::Entry& e, const char* key, double& out) {
    if (std::holds_alternative<double>(e.value)) out = std::get<double>(e.value);
    else if (std::holds_alternative<std::int64_t>(e.value))
      out = static_cast<double>(std::get<std::int64_t>(e.value));
    else throw ConfigError(std::string(key) + " must be a number");
  }
  static void assign(const toml::Entry& e, const char* key, int& out) {
    if (!std::holds_alternative<std::int64_t>(e.value))
      throw ConfigError(std::string(key) + " must be an integer");
    out = static_cast<int>(std::get<std::int64_t>(e.value));
  }
  static void assign(const toml::Entry& e, const char* key, Eigen::Index& out) {
    if (!std::holds_alternative<std::int64_t>(e.value))
      throw ConfigError(std::string(key) + " must be an integer");
    out = static_cast<Eigen::Index>(std::get<std::int64_t>(e.value));
  }
  static void assign(const toml::Entry& e, const char* key, std::uint64_t& out) {
    if (!std::holds_alternative<std::int64_t>(e.value))
      throw ConfigError(std::string(key) + " must be an integer");
    out = static_cast<std::uint64_t>(std::get<std::int64_t>(e.value));
  }
  static void assign(const toml::Entry& e, const char* key, bool& out) {
    if (!std::holds_alternative<bool>(e.value))
      throw ConfigError(std::string(key) + " must be a boolean");
    out = std::get<bool>(e.value);
  }
  static void assign(const toml::Entry& e, const char* key, std::string& out) {
    if (!std::holds_alternative<std::string>(e.value))
      throw ConfigError(std::string(key) + " must be a string");
    out = std::get<std::string>(e.value);
  }
  static void assign(const toml::Entry& e, const char* key, std::vector<int>& out) {
    if (!std::holds_alternative<std::vector<std::int64_t>>(e.value))
      throw ConfigError(std::string(key) + " must be an integer array");
    out.clear();
    for (std::int64_t v : std::get<std::vector<std::int64_t>>(e.value))
      out.push_back(static_cast<int>(v));
  }

  std::map<std::string, toml::Entry> entries_;
  std::set<std::string> consumed_;
};

}  // namespace detail

inline void validate_config(const SimConfig& c) {
  auto reject = [](const std::string& msg) { throw ConfigError(msg); };
  if (c.train.alpha < 0.0 || c.train.alpha > 1.0) reject("alpha out of [0,1]");
  if (c.train.beta <= 1.0) reject("beta must be > 1");
  if (c.train.learning_rate <= 0.0) reject("learning_rate must be positive");
  if (c.train.batch_size < 1) reject("batch_size must be positive");
  if (c.train.margin <= 0.0) reject("margin must be positive");
  if (c.train.ridge <= 0.0) reject("ridge must be positive");
  if (c.train.des_ridge <= 0.0) reject("des_ridge must be positive");
  if (c.train.clf_lr_scale <= 0.0) reject("clf_lr_scale must be positive");
  if (c.train.server_lr_scale <= 0.0) reject("server_lr_scale must be positive");
  if (c.train.enc_lr_scale <= 0.0) reject("enc_lr_scale must be positive");
  if (c.train.gen_lr_scale <= 0.0) reject("gen_lr_scale must be positive");
  if (c.train.lr_decay < 0.0) reject("lr_decay must be nonnegative");
  if (c.train.local_epochs < 1) reject("local_epochs must be positive");
  if (c.train.noise_dim < 1) reject("noise_dim must be positive");
  if (c.train.embed_dim < 1) reject("embed_dim must be positive");
  if (c.n_gen < 2 * std::max(1, c.classes)) reject("n_gen too small for class count");
  if (c.runner != "protocol" && c.runner != "fedavg" && c.runner != "single")
    reject("runner must be protocol, fedavg or single");
  if (c.dataset != "synth" && c.dataset != "idx") reject("dataset must be synth or idx");
  if (c.dataset == "synth") {
    if (c.classes < 2) reject("classes must be at least 2");
    if (c.feature_dim < 1) reject("feature_dim must be positive");
    if (c.per_class < 1) reject("per_class must be positive");
    if (c.test_per_class < 1) reject("test_per_class must be positive");
    if (c.spread <= 0.0) reject("spread must be positive");
  } else {
    if (c.idx_images.empty() || c.idx_labels.empty())
      reject("idx_images and idx_labels required for dataset = idx");
  }
  if (c.partition_scheme != "iid" && c.partition_scheme != "label_limit")
    reject("partition must be iid or label_limit");
  if (c.partition_scheme == "label_limit" &&
      (c.label_limit < 1 || c.label_limit > c.classes))
    reject("label_limit out of [1, classes]");
  if (c.clients < 1) reject("clients must be positive");
  if (c.n_local < 1) reject("n_local must be positive");
  for (int id : c.corrupt_clients)
    if (id < 0 || id >= c.clients) reject("corrupt_clients id out of range");
  if (c.corrupt_mode != "label_flip" && c.corrupt_mode != "feature_noise")
    reject("corrupt_mode must be label_flip or feature_noise");
  if (c.corrupt_p < 0.0 || c.corrupt_p > 1.0) reject("corrupt_p out of [0,1]");
  if (c.mode != "sync" && c.mode != "async" && c.mode != "random")
    reject("mode must be sync, async or random");
  if (c.rounds < 1) reject("rounds must be at least 1");
  if (c.straggler_fraction < 0.0 || c.straggler_fraction >= 1.0)
    reject("straggler_fraction out of [0,1)");
  if (c.straggler_delay < 0.0) reject("straggler_delay must be nonnegative");
  for (int id : c.active_clients)
    if (id < 0 || id >= c.clients) reject("active_clients id out of range");
  if (c.active_interactions < 1) reject("active_interactions must be at least 1");
  if (c.random_interactions < 1) reject("random_interactions must be at least 1");
  if (c.output_dir.empty()) reject("output_dir must not be empty");
}

inline SimConfig load_config_stream(std::istream& in) {
  detail::ConfigReader r(toml::parse(in));
  SimConfig c;
  if (!r.has("seed")) throw ConfigError("seed missing");
  r.get("seed", c.seed);
  r.get("runner", c.runner);
  r.get("dataset", c.dataset);
  r.get("classes", c.classes);
  r.get("feature_dim", c.feature_dim);
  r.get("per_class", c.per_class);
  r.get("test_per_class", c.test_per_class);
  r.get("spread", c.spread);
  r.get("idx_images", c.idx_images);
  r.get("idx_labels", c.idx_labels);
  r.get("idx_test_images", c.idx_test_images);
  r.get("idx_test_labels", c.idx_test_labels);
  r.get("partition", c.partition_scheme);
  r.get("label_limit", c.label_limit);
  r.get("clients", c.clients);
  r.get("n_local", c.n_local);
  r.get("corrupt_clients", c.corrupt_clients);
  r.get("corrupt_mode", c.corrupt_mode);
  r.get("corrupt_p", c.corrupt_p);
  r.get("mode", c.mode);
  r.get("rounds", c.rounds);
  r.get("straggler_fraction", c.straggler_fraction);
  r.get("straggler_delay", c.straggler_delay);
  r.get("active_clients", c.active_clients);
  r.get("active_interactions", c.active_interactions);
  r.get("random_interactions", c.random_interactions);
  r.get("learning_rate", c.train.learning_rate);
  r.get("batch_size", c.train.batch_size);
  r.get("margin", c.train.margin);
  r.get("alpha", c.train.alpha);
  r.get("beta", c.train.beta);
  r.get("ridge", c.train.ridge);
  r.get("des_ridge", c.train.des_ridge);
  r.get("clf_lr_scale", c.train.clf_lr_scale);
  r.get("server_lr_scale", c.train.server_lr_scale);
  r.get("enc_lr_scale", c.train.enc_lr_scale);
  r.get("gen_lr_scale", c.train.gen_lr_scale);
  r.get("lr_decay", c.train.lr_decay);
  r.get("local_epochs", c.train.local_epochs);
  r.get("noise_dim", c.train.noise_dim);
  r.get("embed_dim", c.train.embed_dim);
  r.get("con_weight", c.train.con_weight);
  r.get("col_weight", c.train.col_weight);
  r.get("sample_covariance", c.train.sample_covariance);
  r.get("n_gen", c.n_gen);
  r.get("output_dir", c.output_dir);
  r.finish();
  validate_config(c);
  return c;
}

inline SimConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  return load_config_stream(in);
}

inline std::string serialize_config(const SimConfig& c) {
  std::ostringstream os;
  os.precision(17);
  auto ints = [&os](const std::vector<int>& v) {
    os << '[';
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
    os << "]\n";
  };
  os << "seed = " << c.seed << "\nrunner = \"" << c.runner << "\"\n";
  os << "dataset = \"" << c.dataset << "\"\nclasses = " << c.classes
     << "\nfeature_dim = " << c.feature_dim << "\nper_class = " << c.per_class
     << "\ntest_per_class = " << c.test_per_class << "\nspread = " << c.spread << "\n";
  if (!c.idx_images.empty()) os << "idx_images = \"" << c.idx_images << "\"\n";
  if (!c.idx_labels.empty()) os << "idx_labels = \"" << c.idx_labels << "\"\n";
  if (!c.idx_test_images.empty()) os << "idx_test_images = \"" << c.idx_test_images << "\"\n";
  if (!c.idx_test_labels.empty()) os << "idx_test_labels = \"" << c.idx_test_labels << "\"\n";
  os << "partition = \"" << c.partition_scheme << "\"\nlabel_limit = " << c.label_limit
     << "\nclients = " << c.clients << "\nn_local = " << c.n_local << "\n";
  os << "corrupt_clients = ";
  ints(c.corrupt_clients);
  os << "corrupt_mode = \"" << c.corrupt_mode << "\"\ncorrupt_p = " << c.corrupt_p << "\n";
  os << "mode = \"" << c.mode << "\"\nrounds = " << c.rounds
     << "\nstraggler_fraction = " << c.straggler_fraction
     << "\nstraggler_delay = " << c.straggler_delay << "\n";
  os << "active_clients = ";
  ints(c.active_clients);
  os << "active_interactions = " << c.active_interactions
     << "\nrandom_interactions = " << c.random_interactions << "\n";
  os << "learning_rate = " << c.train.learning_rate
     << "\nbatch_size = " << c.train.batch_size << "\nmargin = " << c.train.margin
     << "\nalpha = " << c.train.alpha << "\nbeta = " << c.train.beta
     << "\nridge = " << c.train.ridge << "\ndes_ridge = " << c.train.des_ridge
     << "\nclf_lr_scale = " << c.train.clf_lr_scale
     << "\nserver_lr_scale = " << c.train.server_lr_scale
     << "\nenc_lr_scale = " << c.train.enc_lr_scale
     << "\ngen_lr_scale = " << c.train.gen_lr_scale
     << "\nlr_decay = " << c.train.lr_decay
     << "\nlocal_epochs = " << c.train.local_epochs
     << "\nnoise_dim = " << c.train.noise_dim << "\nembed_dim = " << c.train.embed_dim
     << "\ncon_weight = " << c.train.con_weight
     << "\ncol_weight = " << c.train.col_weight << "\nsample_covariance = "
     << (c.train.sample_covariance ? "true" : "false") << "\nn_gen = " << c.n_gen
     << "\noutput_dir = \"" << c.output_dir << "\"\n";
  return os.str();
}

}  // namespace cks
