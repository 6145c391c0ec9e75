#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "icrl/commands.hpp"
#include "icrl/errors.hpp"

namespace {

// Flag name -> configuration key.
const std::vector<std::pair<std::string, std::string>> kCommonFlags = {
    {"seed", "seed"},         {"n", "n"},
    {"k", "k"},               {"m", "m"},
    {"episodes", "episodes"}, {"epochs", "epochs"},
    {"tau", "tau"},           {"lambda1", "lambda1"},
    {"lambda2", "lambda2"},   {"airn", "airn"},
    {"pooling", "pooling"},   {"losses", "losses"},
    {"dataset", "dataset"},   {"checkpoint", "checkpoint"},
    {"out", "out"},           {"split", "split"},
    {"threads", "threads"},   {"pretrain-epochs", "pretrain_epochs"},
    {"episodes-per-epoch", "episodes_per_epoch"},
    {"eval-split", "eval_split"},
};

const std::vector<std::pair<std::string, std::string>> kSynthFlags = {
    {"classes", "synth.classes"},       {"per-class", "synth.per_class"},
    {"channels", "synth.channels"},     {"size", "synth.size"},
    {"separation", "synth.separation"}, {"noise", "synth.noise"},
    {"outlier-fraction", "synth.outlier_fraction"},
    {"outlier-rule", "synth.outlier_rule"},
};

struct Invocation {
  std::string config_path;
  std::map<std::string, std::string> flags;  // key -> value, in flag order of application
  std::vector<std::string> sets;             // raw key=value overrides
  bool from_scratch = false;
};

void add_flags(CLI::App* cmd, Invocation& inv,
               const std::vector<std::pair<std::string, std::string>>& flags) {
  for (const auto& [flag, key] : flags) {
    cmd->add_option_function<std::string>(
        "--" + flag, [&inv, key](const std::string& v) { inv.flags[key] = v; },
        "sets '" + key + "'");
  }
}

icrl::RunConfig build_config(const Invocation& inv) {
  icrl::RunConfig config = inv.config_path.empty() ? icrl::RunConfig{} : icrl::load_run_config(inv.config_path);
  for (const auto& [key, value] : inv.flags) config.set(key, value);
  for (const auto& kv : inv.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw icrl::ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (inv.from_scratch) config.from_scratch = true;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ICRL-Net few-shot classification"};
  app.require_subcommand(1);
  Invocation inv;
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  using Command = void (*)(const icrl::RunConfig&, std::ostream&);
  std::vector<std::pair<CLI::App*, Command>> commands;
  auto add_command = [&](const char* name, const char* help, Command fn, bool synth_flags) {
    CLI::App* cmd = app.add_subcommand(name, help);
    cmd->add_option("--config", inv.config_path, "key = value config file; flags override it");
    cmd->add_option("--set", inv.sets, "override any config key: key=value");
    add_flags(cmd, inv, kCommonFlags);
    if (synth_flags) add_flags(cmd, inv, kSynthFlags);
    commands.emplace_back(cmd, fn);
    return cmd;
  };
  add_command("synth", "generate a synthetic blob dataset", icrl::cmd_synth, true);
  add_command("pretrain", "whole-classifier pre-training of the backbone", icrl::cmd_pretrain, false);
  add_command("meta-train", "episodic training", icrl::cmd_meta_train, false)
      ->add_flag("--from-scratch", inv.from_scratch, "start from a fresh initialization");
  add_command("eval", "evaluate over random test episodes", icrl::cmd_eval, false);
  add_command("inspect", "significance weights of one episode as CSV", icrl::cmd_inspect, false);
  CLI::App* keys = app.add_subcommand("config-keys", "list every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  try {
    if (keys->parsed()) {
      for (const auto& k : icrl::config_keys())
        std::cout << k.name << " = " << k.default_value << "    # " << k.help << "\n";
      return 0;
    }
    for (const auto& [cmd, fn] : commands) {
      if (!cmd->parsed()) continue;
      fn(build_config(inv), std::cout);
      return 0;
    }
  } catch (const icrl::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  } catch (const icrl::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
