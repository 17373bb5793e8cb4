#include <iostream>

#include "CLI11.hpp"
#include "tpn/experiment.hpp"

namespace {

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 0;
  bool deterministic = false;
  std::vector<std::string> overrides;
};

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int run(const std::string& verb, const Flags& f, CLI::App& sub) {
  tpn::Config cfg = f.config.empty() ? tpn::Config{} : tpn::Config::load(f.config);
  std::string stage = verb;
  if (verb == "run") {
    if (!cfg.has("stage")) throw tpn::ConfigError("run needs stage=<name> in the config");
    stage = cfg.get_string("stage", "");
  } else if (cfg.has("stage") && cfg.get_string("stage", "") != verb) {
    throw tpn::ConfigError("config is for stage '" + cfg.get_string("stage", "") + "', not '" + verb + "'");
  }
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw tpn::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (sub.count("--seed")) cfg.set("seed", std::to_string(f.seed));
  if (sub.count("--threads")) cfg.set("threads", std::to_string(f.threads));
  if (f.deterministic) cfg.set("deterministic", "true");
  if (!f.out.empty()) cfg.set("out", f.out);
  const std::string fallback = stage == "describe" ? "" : "out/" + stage;
  const std::string out = cfg.get_string("out", fallback);

  const tpn::StageResult r = tpn::run_experiment(stage, cfg, out);
  std::cout << r.report;
  for (const auto& [k, v] : r.summary) std::cout << k << '=' << v << '\n';
  if (!out.empty()) std::cout << "wrote " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse coding, locally connected networks and temporal product networks"};
  app.require_subcommand(1);
  Flags flags;
  std::vector<std::pair<std::string, CLI::App*>> verbs;
  std::vector<std::string> names = {"run"};
  for (const auto& s : tpn::stage_names()) names.push_back(s);
  for (const auto& name : names) {
    CLI::App* sub =
        app.add_subcommand(name, name == "run" ? "run the stage named by stage= in the config" : "run the " + name + " stage");
    sub->add_option("--config", flags.config, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "random seed (overrides the config)");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--threads", flags.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--deterministic", flags.deterministic, "single-threaded, bit-reproducible run");
    sub->add_option("--set", flags.overrides, "extra key=value setting (repeatable)");
    verbs.emplace_back(name, sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  for (auto& [name, sub] : verbs) {
    if (!sub->parsed()) continue;
    try {
      return run(name, flags, *sub);
    } catch (const std::exception& e) {
      std::cerr << "tpn: error: " << one_line(e.what()) << '\n';
      return 1;
    }
  }
  return 1;
}
