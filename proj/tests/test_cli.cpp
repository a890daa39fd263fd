#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "doctest.h"
#include "neurotoken/cli.hpp"
#include "neurotoken/error.hpp"

using namespace neurotoken;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::FormatError;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("neurotoken_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream b;
  b << in.rdbuf();
  return b.str();
}

struct Run {
  int status = -1;
  std::string out;
  std::string err;
};

Run run_tool(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(NEUROTOKEN_BIN) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

std::vector<json> json_lines(const std::string& text) {
  std::vector<json> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

}  // namespace

TEST_CASE("config sections override defaults and paths resolve against the file") {
  const auto c = cli::parse_config(
      "# comment\n[run]\nseed = 7\nwork_dir = out\n[synth]\nn_subjects = 30\n[corpus]\nprompts = p.txt\n"
      "[instruct]\nparadigms = open_ended, single_qa\ntasks = sex\nlora = yes\nlora_targets = q,v\n",
      "/base");
  CHECK(c.seed == 7);
  CHECK(c.synth.n_subjects == 30);
  CHECK(c.work_dir == fs::path("/base/out"));
  CHECK(c.prompts == fs::path("/base/p.txt"));
  CHECK(c.paradigms == std::vector<evalkit::Paradigm>{evalkit::Paradigm::OpenEnded, evalkit::Paradigm::SingleQa});
  CHECK(c.tasks == std::vector<std::string>{"sex"});
  CHECK(c.use_lora);
  CHECK(c.lora.targets == std::vector<std::string>{"q", "v"});
  // The run seed reaches every module.
  CHECK(c.synth.seed == 7);
  CHECK(c.tokenizer.seed == 7);
  CHECK(c.stage1.seed == 7);
  CHECK(c.lm.seed == 7);
  CHECK(c.stage2.seed == 7);
  CHECK(c.stage3.seed == 7);
  CHECK(c.features.seed == 7);
  // Untouched keys keep the desk defaults.
  CHECK(c.lm.model_dim == cli::default_config().lm.model_dim);
}

TEST_CASE("config errors name the offending key") {
  CHECK(kind_of([] { cli::parse_config("[lm]\nmodel_dims = 3\n", ""); }) == ErrorKind::ConfigError);
  CHECK(message_of([] { cli::parse_config("[lm]\nmodel_dims = 3\n", ""); }).find("lm.model_dims") !=
        std::string::npos);
  CHECK(message_of([] { cli::parse_config("[nope]\nseed = 3\n", ""); }).find("nope.seed") != std::string::npos);
  CHECK(message_of([] { cli::parse_config("[lm]\nepochs = ten\n", ""); }).find("lm.epochs") != std::string::npos);
  CHECK(message_of([] { cli::parse_config("[lm]\nepochs = 3.5\n", ""); }).find("lm.epochs") != std::string::npos);
  CHECK(kind_of([] { cli::parse_config("[run]\ndeterministic = maybe\n", ""); }) == ErrorKind::ConfigError);
  CHECK(kind_of([] { cli::parse_config("[run]\nseed = 1\nseed = 2\n", ""); }) == ErrorKind::ConfigError);
  CHECK(kind_of([] { cli::parse_config("seed = 1\n", ""); }) == ErrorKind::ConfigError);
  CHECK(kind_of([] { cli::parse_config("[instruct]\nparadigms = essay\n", ""); }) == ErrorKind::ConfigError);
  CHECK(kind_of([] { cli::parse_config("[instruct]\ntasks = sex\nparadigms = multi_qa\n", ""); }) ==
        ErrorKind::ConfigError);
  CHECK(kind_of([] { cli::parse_config("[instruct]\ntasks = age\n", ""); }) == ErrorKind::ConfigError);
  CHECK(kind_of([] { cli::load_config("/nonexistent/run.ini"); }) == ErrorKind::MissingArtifact);
}

TEST_CASE("ini output parses back to the same configuration") {
  auto c = cli::default_config();
  c.seed = 11;
  c.stage2.lr = 3.3e-4;
  c.paradigms = {evalkit::Paradigm::MultiQa};
  c.lora.train_head = true;
  cli::propagate_seed(c);
  const auto back = cli::parse_config(cli::to_ini(c), "");
  CHECK(cli::to_ini(back) == cli::to_ini(c));
  CHECK(cli::config_hash(back) == cli::config_hash(c));
}

TEST_CASE("config hash tracks results-relevant settings only") {
  const auto dir = scratch("hash");
  {
    std::ofstream(dir / "pool.txt") << "some pool text";
    std::ofstream(dir / "prompts.txt") << "#paradigm:single_qa\nQ {question} {choices}\n";
  }
  auto base = cli::parse_config("[corpus]\ntext_pool = pool.txt\nprompts = prompts.txt\n", dir);
  const auto h = cli::config_hash(base);
  CHECK(h.size() == 16);

  auto c = base;
  c.work_dir = "elsewhere";
  c.threads = 4;
  c.deterministic = false;
  CHECK(cli::config_hash(c) == h);

  c = base;
  c.stage3.lr *= 2;
  CHECK(cli::config_hash(c) != h);

  c = base;
  c.seed = 2;
  CHECK(cli::config_hash(c) != h);

  // The same pool content under another name hashes the same; new content does not.
  fs::copy_file(dir / "pool.txt", dir / "pool2.txt");
  c = base;
  c.text_pool = dir / "pool2.txt";
  CHECK(cli::config_hash(c) == h);
  std::ofstream(dir / "pool.txt") << "changed";
  CHECK(cli::config_hash(base) != h);
}

TEST_CASE("FNV-1a matches the published test vectors") {
  CHECK(cli::fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(cli::fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(cli::fnv1a("foobar") == 0x85944171f73967e8ULL);
  CHECK(cli::hex64(0xabcULL) == "0000000000000abc");
  // Chained hashing equals hashing the concatenation.
  CHECK(cli::fnv1a("bar", cli::fnv1a("foo")) == cli::fnv1a("foobar"));
}

TEST_CASE("environment seed overrides the configured seed") {
  auto c = cli::parse_config("[run]\nseed = 5\n", "");
  ::setenv("NEUROTOKEN_SEED", "42", 1);
  cli::apply_environment(c);
  ::unsetenv("NEUROTOKEN_SEED");
  CHECK(c.seed == 42);
  CHECK(c.lm.seed == 42);
  CHECK(c.synth.seed == 42);
  ::setenv("NEUROTOKEN_SEED", "x1", 1);
  CHECK(kind_of([&] { cli::apply_environment(c); }) == ErrorKind::ConfigError);
  ::unsetenv("NEUROTOKEN_SEED");
}

TEST_CASE("logger writes one JSON object per line") {
  std::ostringstream os;
  const cli::Logger log(os);
  log.info("step", {{"epoch", 3}, {"loss", 0.5}});
  log.error("MissingArtifact", "work/x");
  const auto lines = json_lines(os.str());
  REQUIRE(lines.size() == 2);
  CHECK(lines[0]["level"] == "info");
  CHECK(lines[0]["event"] == "step");
  CHECK(lines[0]["epoch"] == 3);
  CHECK(lines[1]["level"] == "error");
  CHECK(lines[1]["kind"] == "MissingArtifact");
  CHECK(lines[1]["message"] == "work/x");
}

TEST_CASE("grid files round-trip") {
  const auto dir = scratch("grids");
  std::vector<tokenizer::TokenGrid> grids = {{2, 3, {0, 1, 2, 3, 4, 5}}, {1, 3, {7, 7, 1}}};
  cli::write_grids(dir / "g.jsonl", {"a", "b"}, grids);
  std::vector<std::string> ids;
  const auto back = cli::read_grids(dir / "g.jsonl", &ids);
  CHECK(ids == std::vector<std::string>{"a", "b"});
  REQUIRE(back.size() == 2);
  CHECK(back[0].indices == grids[0].indices);
  CHECK(back[1].t_patches == 1);
  CHECK(kind_of([&] { cli::read_grids(dir / "missing.jsonl"); }) == ErrorKind::MissingArtifact);
  std::ofstream(dir / "bad.jsonl") << "{not json\n";
  CHECK(kind_of([&] { cli::read_grids(dir / "bad.jsonl"); }) == ErrorKind::FormatError);
}

TEST_CASE("descriptor records keep NaN values as null") {
  corpus::ScanDescriptors d;
  d.subject_id = "sub-1";
  d.values.push_back({"modularity", {0.25}, {}, ""});
  d.values.push_back({"gradient_range", {std::nan(""), 1.5}, {"g1", "g2"}, "edge list"});
  const auto j = cli::to_json(d);
  CHECK(j["values"][1]["values"][0].is_null());
  CHECK(j["values"][1]["values"][1] == 1.5);
  CHECK(j["values"][1]["labels"][1] == "g2");
  CHECK(j["values"][1]["detail"] == "edge list");
  CHECK(!j["values"][0].contains("labels"));
}

TEST_CASE("score bins and sample layout per paradigm") {
  signal::CohortSpec spec;
  spec.n_subjects = 6;
  spec.seed = 3;
  const auto cohort = signal::generate_cohort(spec);
  std::vector<tokenizer::TokenGrid> grids(6, tokenizer::TokenGrid{1, 2, {0, 1}});
  std::vector<double> y;
  for (const auto& c : cohort) y.push_back(c.continuous_target);
  const auto bins = instruct::make_bins(y, 3);
  const auto bank = corpus::parse_prompt_bank(
      "#paradigm:single_qa\nQ: {question} ({choices}) A:\n#paradigm:multi_qa\nQs: {question} ({choices}) "
      "A:\n#paradigm:open_ended\nDescribe {question} ({choices})\n");
  const std::vector<std::string> tasks = {"sex", "score"};

  const auto single = cli::build_samples(evalkit::Paradigm::SingleQa, tasks, cohort, grids, {4, 1}, bins, bank, 1);
  REQUIRE(single.size() == 4);
  CHECK(single[0].fields.front().first == "sex");
  CHECK(single[1].fields.front().first == "score");
  CHECK(single[0].answer == (cohort[4].binary_factor ? "female" : "male"));
  CHECK(single[1].answer == bins.label(cohort[4].continuous_target));
  CHECK(!single[0].semantic_text.has_value());
  CHECK(single[1].semantic_text == cohort[4].semantic_text);

  const auto multi = cli::build_samples(evalkit::Paradigm::MultiQa, tasks, cohort, grids, {4, 1}, bins, bank, 1);
  REQUIRE(multi.size() == 2);
  CHECK(multi[1].fields.size() == 2);
  CHECK(multi[1].semantic_text == cohort[1].semantic_text);
  CHECK(multi[1].answer == evalkit::format_answer(evalkit::Paradigm::MultiQa, multi[1].fields));

  // Same inputs, same samples.
  const auto again = cli::build_samples(evalkit::Paradigm::MultiQa, tasks, cohort, grids, {4, 1}, bins, bank, 1);
  CHECK(again[0].prompt == multi[0].prompt);
  CHECK(cli::task_choices("score", bins) == bins.labels);
  CHECK(kind_of([&] { cli::task_choices("age", bins); }) == ErrorKind::ConfigError);
}

TEST_CASE("report refuses mismatched format versions") {
  const auto dir = scratch("report");
  evalkit::Report r{"sex", "single_qa", 40, {{"accuracy", 0.75}, {"auc", 0.8}}, 1, "00ff"};
  std::ofstream(dir / "a.json") << evalkit::to_json(r).dump();
  r.paradigm = "multi_qa";
  r.metrics = {{"accuracy", 0.7}};
  std::ofstream(dir / "b.json") << evalkit::to_json(r).dump();

  const auto reports = cli::collect_reports({dir});
  REQUIRE(reports.size() == 2);
  const auto table = cli::format_report_table(reports);
  CHECK(table.find("single_qa") != std::string::npos);
  CHECK(table.find("0.750") != std::string::npos);
  CHECK(table.find("multi_qa") != std::string::npos);

  auto j = evalkit::to_json(r);
  j["format_version"] = cli::kFormatVersion + 1;
  std::ofstream(dir / "c.json") << j.dump();
  CHECK(kind_of([&] { cli::collect_reports({dir}); }) == ErrorKind::FormatError);
  CHECK(message_of([&] { cli::collect_reports({dir}); }).find("c.json") != std::string::npos);
  CHECK(kind_of([&] { cli::collect_reports({dir / "nothing"}); }) == ErrorKind::MissingArtifact);
}

TEST_CASE("gradcheck subcommand passes and reports every check") {
  const auto dir = scratch("gradcheck");
  const auto run = run_tool("gradcheck", dir);
  CHECK(run.status == 0);
  const auto lines = json_lines(run.out);
  REQUIRE(lines.size() > 30);
  CHECK(lines.back()["pass"] == true);
  CHECK(lines.back()["max_rel_error"].get<double>() < 1e-4);
  bool saw_tokenizer = false, saw_lm = false;
  for (const auto& l : lines) {
    if (l.contains("check")) {
      saw_tokenizer |= l["check"] == "tokenizer_total";
      saw_lm |= l["check"] == "stage2_total";
    }
  }
  CHECK(saw_tokenizer);
  CHECK(saw_lm);
}

TEST_CASE("synth twice with the same seed gives the same manifest") {
  const auto dir = scratch("synth");
  std::ofstream(dir / "run.ini") << "[synth]\nn_subjects = 6\nt_points = 64\n";
  std::string hashes[2];
  for (int k = 0; k < 2; ++k) {
    const auto work = dir / ("w" + std::to_string(k));
    const auto run = run_tool("synth --seed 1 -c " + (dir / "run.ini").string() + " --work-dir " + work.string(), dir);
    REQUIRE(run.status == 0);
    hashes[k] = cli::file_hash(work / "synth" / "manifest.jsonl");
    const auto lines = json_lines(run.err);
    bool logged = false;
    for (const auto& l : lines) logged |= l.value("manifest_hash", "") == hashes[k];
    CHECK(logged);
    const auto meta = json::parse(slurp(work / "synth" / "meta.json"));
    CHECK(meta["seed"] == 1);
    CHECK(meta["format_version"] == cli::kFormatVersion);
    CHECK(meta["artifacts"].size() == 7);
  }
  CHECK(hashes[0] == hashes[1]);
  CHECK(slurp(dir / "w0" / "synth" / "meta.json") == slurp(dir / "w1" / "synth" / "meta.json"));

  const auto other = run_tool("synth --seed 2 -c " + (dir / "run.ini").string() + " --work-dir " +
                                  (dir / "w2").string(),
                              dir);
  REQUIRE(other.status == 0);
  CHECK(slurp(dir / "w2" / "synth" / "scans" / "sub-0001.nts") != slurp(dir / "w0" / "synth" / "scans" / "sub-0001.nts"));
}

TEST_CASE("eval without a tuned checkpoint fails with MissingArtifact") {
  const auto dir = scratch("eval");
  const auto run = run_tool("eval --work-dir " + (dir / "work").string(), dir);
  CHECK(run.status != 0);
  const auto lines = json_lines(run.err);
  REQUIRE(!lines.empty());
  CHECK(lines.back()["level"] == "error");
  CHECK(lines.back()["kind"] == "MissingArtifact");
  CHECK(lines.back()["message"].get<std::string>().find("model.fmlm") != std::string::npos);
}

TEST_CASE("unknown config key fails the command with ConfigError") {
  const auto dir = scratch("badkey");
  std::ofstream(dir / "run.ini") << "[lm]\nlayers = 3\n";
  const auto run = run_tool("synth -c " + (dir / "run.ini").string(), dir);
  CHECK(run.status != 0);
  const auto lines = json_lines(run.err);
  REQUIRE(!lines.empty());
  CHECK(lines.back()["kind"] == "ConfigError");
  CHECK(lines.back()["message"].get<std::string>().find("lm.layers") != std::string::npos);
}
