#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cks/checkpoint.hpp"
#include "cks/config.hpp"
#include "cks/experiment.hpp"

namespace {

int cmd_run(const std::string& config_path) {
  cks::SimConfig cfg;
  try {
    cfg = cks::load_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
  const char* root = std::getenv("CKS_OUTPUT_ROOT");
  return cks::run_experiment(cfg, std::cerr, root ? root : "");
}

int cmd_validate(const std::string& config_path) {
  try {
    cks::SimConfig cfg = cks::load_config(config_path);
    std::cout << cks::serialize_config(cfg);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_inspect(const std::string& ckpt_path) {
  try {
    cks::ServerState s = cks::load_checkpoint(ckpt_path);
    std::cout.precision(17);
    std::cout << "{\"classifier_layers\":" << s.classifier.layers.size()
              << ",\"embed_dim\":" << s.table.dim << ",\"classes\":"
              << s.table.classes() << ",\"entries\":[";
    for (int c = 0; c < s.table.classes(); ++c) {
      const cks::KnowledgeEntry& e = s.table.at(c);
      if (c) std::cout << ',';
      std::cout << "{\"class\":" << c << ",\"initialized\":"
                << (e.initialized ? "true" : "false");
      if (e.initialized) {
        std::cout << ",\"trace\":" << e.cov.trace();
        if (e.last_winner) std::cout << ",\"last_winner\":" << *e.last_winner;
      }
      std::cout << '}';
    }
    std::cout << "],\"gate_records\":" << s.gate_log.size() << "}\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive knowledge-sharing multi-party learning simulator"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path;
  CLI::App* run = app.add_subcommand("run", "Run the experiment described by a config");
  run->add_option("config", config_path, "TOML config file")->required();
  CLI::App* validate =
      app.add_subcommand("validate", "Parse and validate a config, echo its canonical form");
  validate->add_option("config", config_path, "TOML config file")->required();
  CLI::App* inspect = app.add_subcommand("inspect", "Summarize a server checkpoint");
  inspect->add_option("checkpoint", ckpt_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (run->parsed()) return cmd_run(config_path);
  if (validate->parsed()) return cmd_validate(config_path);
  return cmd_inspect(ckpt_path);
}
