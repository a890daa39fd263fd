#pragma once

// Run configuration, artifact layout and the pipeline stages behind the
// command-line front end.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurotoken/corpus.hpp"
#include "neurotoken/evalkit.hpp"
#include "neurotoken/instruct.hpp"
#include "neurotoken/lm.hpp"
#include "neurotoken/signal.hpp"
#include "neurotoken/tokenizer.hpp"

namespace neurotoken::cli {

// Version stamped on every artifact this module writes.
inline constexpr int kFormatVersion = 1;

// ---- configuration ----

struct RunConfig {
  // [run]
  std::uint64_t seed = 1;
  bool deterministic = true;
  int threads = 1;
  std::filesystem::path work_dir = "work";

  // [synth]
  signal::CohortSpec synth;
  // [preprocess]
  double target_tr = 2.0;
  int target_t = 160;
  // [features]
  corpus::FeatureConfig features;
  // [corpus]
  std::filesystem::path text_pool;
  std::filesystem::path prompts;
  // [tokenizer]
  tokenizer::TokenizerConfig tokenizer;
  tokenizer::Stage1Options stage1;
  // [lm]
  lm::LmConfig lm;
  lm::Stage2Options stage2;
  bool init_from_tokenizer = true;
  // [instruct]
  std::vector<std::string> tasks;
  std::vector<evalkit::Paradigm> paradigms;
  int n_bins = 10;
  double train_fraction = 0.8;
  int k_shot = 0;  // 0 uses every training subject
  instruct::Stage3Options stage3;
  bool use_lora = false;
  lm::LoraConfig lora;
  // [eval]
  int max_new = 64;
  // [probe]
  double probe_l2 = 1e-2;
};

// Desk-scale defaults; data paths point at the installed data directory.
RunConfig default_config();

// Sectioned key = value text. Unknown sections or keys, malformed values and
// duplicates are ConfigError naming section.key. Relative paths resolve
// against `base_dir`.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);
// MissingArtifact when the file does not exist.
RunConfig load_config(const std::filesystem::path& path);

// Copies the run seed into every module's options.
void propagate_seed(RunConfig& config);
// Applies NEUROTOKEN_SEED when set, then propagates the seed.
void apply_environment(RunConfig& config);

// Every key in registry order as an ini document.
std::string to_ini(const RunConfig& config);
// One "section.key=value" line per setting that affects results. work_dir and
// threads are left out; the text pool and prompt bank enter by content hash.
std::string canonical_config(const RunConfig& config);
std::string config_hash(const RunConfig& config);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
// hex64 of the file's bytes; MissingArtifact when absent.
std::string file_hash(const std::filesystem::path& path);

// ---- logging ----

// One JSON object per line.
class Logger {
 public:
  explicit Logger(std::ostream& out) : out_(&out) {}
  void info(const std::string& event, nlohmann::ordered_json fields = nlohmann::ordered_json::object()) const;
  void warn(const std::string& event, nlohmann::ordered_json fields = nlohmann::ordered_json::object()) const;
  void error(const std::string& kind, const std::string& message) const;

 private:
  void emit(const std::string& level, const std::string& event, nlohmann::ordered_json fields) const;
  std::ostream* out_;
};

// ---- artifacts ----

// {"config_hash", "seed", "format_version"}.
nlohmann::ordered_json meta(const RunConfig& config);

// Writes <dir>/meta.json listing content hashes of `files` (relative to dir).
void write_stage_meta(const RunConfig& config, const std::string& stage, const std::filesystem::path& dir,
                      const std::vector<std::string>& files);

// MissingArtifact naming the path when it does not exist.
void require_artifact(const std::filesystem::path& path);

// Artifact locations under the work directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path synth() const { return root / "synth"; }
  std::filesystem::path preprocess() const { return root / "preprocess"; }
  std::filesystem::path features() const { return root / "features"; }
  std::filesystem::path corpus() const { return root / "corpus"; }
  std::filesystem::path tokenizer() const { return root / "tokenizer"; }
  std::filesystem::path lm() const { return root / "lm"; }
  std::filesystem::path instruct() const { return root / "instruct"; }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path probe() const { return root / "probe"; }

  std::filesystem::path manifest(const std::filesystem::path& stage) const { return stage / "manifest.jsonl"; }
  std::filesystem::path descriptors() const { return features() / "descriptors.jsonl"; }
  std::filesystem::path stats() const { return features() / "stats.json"; }
  std::filesystem::path records() const { return corpus() / "records.jsonl"; }
  std::filesystem::path paragraphs() const { return corpus() / "paragraphs.jsonl"; }
  std::filesystem::path tokenizer_checkpoint() const { return tokenizer() / "tokenizer.fmtk"; }
  std::filesystem::path grids() const { return tokenizer() / "grids.jsonl"; }
  std::filesystem::path lm_stem() const { return lm() / "model"; }
  std::filesystem::path bins() const { return instruct() / "bins.json"; }
  std::filesystem::path split() const { return instruct() / "split.json"; }
  std::filesystem::path paradigm_dir(evalkit::Paradigm p) const { return instruct() / evalkit::to_string(p); }
  std::filesystem::path tuned_stem(evalkit::Paradigm p) const { return paradigm_dir(p) / "model"; }
};

Layout layout(const RunConfig& config);

// Token grids keyed by subject: {"subject_id", "grid"} per line.
void write_grids(const std::filesystem::path& path, const std::vector<std::string>& subjects,
                 const std::vector<tokenizer::TokenGrid>& grids);
std::vector<tokenizer::TokenGrid> read_grids(const std::filesystem::path& path,
                                             std::vector<std::string>* subjects = nullptr);

nlohmann::ordered_json to_json(const corpus::ScanDescriptors& d);

// ---- instruction tasks ----

// "sex" asks for the binary factor (male/female); "score" asks for the bin of
// the continuous target and carries the semantic description.
instruct::Field task_field(const std::string& task, const signal::LabeledScan& item, const instruct::BinScheme& bins);
std::vector<std::string> task_choices(const std::string& task, const instruct::BinScheme& bins);

// Samples of one paradigm for the given subjects: one per task and subject for
// single_qa, one per subject with every task otherwise.
std::vector<instruct::InstructionSample> build_samples(evalkit::Paradigm paradigm,
                                                       const std::vector<std::string>& tasks,
                                                       const std::vector<signal::LabeledScan>& cohort,
                                                       const std::vector<tokenizer::TokenGrid>& grids,
                                                       const std::vector<int>& subjects,
                                                       const instruct::BinScheme& bins,
                                                       const corpus::PromptBank& bank, std::uint64_t seed);

// Metrics for one task of a tuned model. Score tasks add the MAE and Pearson r
// of decoded bin midpoints against `targets` (the raw continuous values).
evalkit::Report evaluate_task(const lm::LanguageModel<float>& model,
                              const std::vector<instruct::InstructionSample>& samples, const std::string& task,
                              const instruct::BinScheme& bins, const std::vector<double>& targets,
                              const RunConfig& config);

// ---- stages ----

void run_synth(const RunConfig& config, const Logger& log);
void run_preprocess(const RunConfig& config, const Logger& log);
void run_features(const RunConfig& config, const Logger& log);
void run_corpus(const RunConfig& config, const Logger& log);
void run_train_tokenizer(const RunConfig& config, const Logger& log);
void run_train_lm(const RunConfig& config, const Logger& log);
void run_instruct(const RunConfig& config, const Logger& log);
void run_eval(const RunConfig& config, const Logger& log);
void run_probe(const RunConfig& config, const Logger& log);
// Every stage from synth to probe.
void run_pipeline(const RunConfig& config, const Logger& log);

// ---- gradient checks ----

struct GradCase {
  std::string name;
  double max_rel_error = 0.0;
  int checked = 0;
  std::string worst;
};

// Double-precision central-difference checks of every autodiff op, attention,
// gradient reversal, straight-through quantization, the tokenizer objective
// and the Stage-2 objective, all at tiny sizes.
std::vector<GradCase> gradient_suite(std::uint64_t seed = 1);

// ---- report ----

// Reads metrics reports (files, or every *.json under a directory).
// FormatError when format versions differ or are not the current one.
std::vector<evalkit::Report> collect_reports(const std::vector<std::filesystem::path>& inputs);
// Fixed-width comparison table, one row per (task, paradigm).
std::string format_report_table(const std::vector<evalkit::Report>& reports);

}  // namespace neurotoken::cli
