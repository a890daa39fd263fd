// Command-line front end: one subcommand per pipeline stage.

#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "neurotoken/cli.hpp"
#include "neurotoken/error.hpp"

namespace fs = std::filesystem;
using namespace neurotoken;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string work_dir;
};

void add_common(CLI::App* sub, Common& common) {
  sub->add_option("-c,--config", common.config, "Run configuration (ini)");
  sub->add_option("--seed", common.seed, "Overrides the configured and environment seed");
  sub->add_option("--threads", common.threads, "Feature-extraction workers; relaxes deterministic mode");
  sub->add_option("--work-dir", common.work_dir, "Artifact directory");
}

cli::RunConfig resolve(const Common& common) {
  auto config = common.config.empty() ? cli::default_config() : cli::load_config(common.config);
  cli::apply_environment(config);
  if (common.seed) config.seed = *common.seed;
  if (common.threads) {
    require(*common.threads >= 1, ErrorKind::ConfigError, "--threads: must be at least 1");
    config.threads = *common.threads;
    config.deterministic = false;
  }
  if (!common.work_dir.empty()) config.work_dir = common.work_dir;
  cli::propagate_seed(config);
  return config;
}

int run_gradcheck(std::uint64_t seed) {
  double worst = 0.0;
  for (const auto& c : cli::gradient_suite(seed)) {
    nlohmann::ordered_json j;
    j["check"] = c.name;
    j["max_rel_error"] = c.max_rel_error;
    j["coordinates"] = c.checked;
    j["pass"] = c.max_rel_error < 1e-4;
    std::cout << j.dump() << '\n';
    worst = std::max(worst, c.max_rel_error);
  }
  nlohmann::ordered_json summary;
  summary["max_rel_error"] = worst;
  summary["tolerance"] = 1e-4;
  summary["pass"] = worst < 1e-4;
  std::cout << summary.dump() << std::endl;
  return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  const cli::Logger log(std::cerr);
  CLI::App app{"fMRI tokenizer and language model pipeline"};
  app.require_subcommand(1);

  Common common;
  using Stage = void (*)(const cli::RunConfig&, const cli::Logger&);
  const std::vector<std::tuple<std::string, std::string, Stage>> stages = {
      {"synth", "Generate the synthetic cohort", cli::run_synth},
      {"preprocess", "Resample, crop and normalize scans", cli::run_preprocess},
      {"features", "Extract per-scan descriptors", cli::run_features},
      {"corpus", "Render the descriptor corpus", cli::run_corpus},
      {"train-tokenizer", "Stage 1: train the tokenizer and tokenize every scan", cli::run_train_tokenizer},
      {"train-lm", "Stage 2: pretrain the language model", cli::run_train_lm},
      {"instruct", "Stage 3: build instruction data and tune", cli::run_instruct},
      {"eval", "Score the tuned models", cli::run_eval},
      {"probe", "Linear probes on the pretrained model", cli::run_probe},
  };
  std::vector<std::pair<CLI::App*, Stage>> commands;
  for (const auto& [name, help, fn] : stages) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, common);
    commands.emplace_back(sub, fn);
  }

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference checks of every gradient");
  std::uint64_t grad_seed = 1;
  grad->add_option("--seed", grad_seed, "Seed for the random inputs");

  auto* report = app.add_subcommand("report", "Aggregate metrics reports into a table");
  std::vector<std::string> inputs;
  report->add_option("inputs", inputs, "Report files or directories (default: eval and probe outputs)");
  add_common(report, common);

  auto* show = app.add_subcommand("show-config", "Print the resolved configuration");
  add_common(show, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (grad->parsed()) return run_gradcheck(grad_seed);
    const auto config = resolve(common);
    if (show->parsed()) {
      std::cout << cli::to_ini(config) << "# config_hash " << cli::config_hash(config) << '\n';
      return 0;
    }
    if (report->parsed()) {
      std::vector<fs::path> paths(inputs.begin(), inputs.end());
      if (paths.empty()) {
        for (const auto& dir : {cli::layout(config).eval(), cli::layout(config).probe()}) {
          if (fs::exists(dir)) paths.push_back(dir);
        }
        if (paths.empty()) paths.push_back(cli::layout(config).eval());
      }
      std::cout << cli::format_report_table(cli::collect_reports(paths));
      return 0;
    }
    for (const auto& [sub, fn] : commands) {
      if (!sub->parsed()) continue;
      log.info("start", {{"command", sub->get_name()},
                         {"config_hash", cli::config_hash(config)},
                         {"seed", config.seed},
                         {"work_dir", config.work_dir.string()}});
      fn(config, log);
      log.info("done", {{"command", sub->get_name()}});
    }
    return 0;
  } catch (const Error& e) {
    const std::string kind(to_string(e.kind()));
    std::string message = e.what();
    if (message.rfind(kind + ": ", 0) == 0) message = message.substr(kind.size() + 2);
    log.error(kind, message);
    return 2;
  } catch (const std::exception& e) {
    log.error("InternalError", e.what());
    return 3;
  }
}
