#pragma once

// Stage 3: instruction samples, regression as binning, instruction tuning and
// linear probing.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "neurotoken/corpus.hpp"
#include "neurotoken/evalkit.hpp"
#include "neurotoken/lm.hpp"

namespace neurotoken::instruct {

using evalkit::Paradigm;
using tokenizer::TokenGrid;

// ---- binning ----

struct BinScheme {
  std::vector<double> boundaries;  // n_bins - 1, strictly increasing
  std::vector<double> midpoints;   // median training value per bin
  std::vector<std::string> labels;

  int n_bins() const { return static_cast<int>(labels.size()); }
  // Index of the bin holding v; values on a boundary go to the upper bin.
  int encode(double v) const;
  double decode(int bin) const;
  const std::string& label(double v) const { return labels[static_cast<std::size_t>(encode(v))]; }
  // Bin index of "bin_<i>"; ParseFailure for anything else.
  int parse_label(const std::string& text) const;
};

// Equal-frequency bins over training values. TooFewDistinct when there are
// fewer distinct values than bins.
BinScheme make_bins(std::vector<double> values, int n_bins = 10);

nlohmann::json to_json(const BinScheme& b);
BinScheme bin_scheme_from_json(const nlohmann::json& j);

// ---- samples ----

// One queried attribute. `choices` lists the admissible canonical answers.
struct Field {
  std::string name;
  std::string question;
  std::vector<std::string> choices;
  std::string value;
};

struct InstructionSample {
  Paradigm paradigm = Paradigm::SingleQa;
  std::string prompt;
  TokenGrid grid;
  std::optional<std::string> semantic_text;
  std::string answer;
  std::vector<std::pair<std::string, std::string>> fields;  // in answer order
};

// single_qa takes exactly one field, multi_qa at least two, open_ended at
// least one (FieldCountMismatch otherwise). The template is drawn from the
// paradigm's section of `bank` with `seed`; semantic text, when given, is
// appended to the prompt.
InstructionSample format_sample(Paradigm paradigm, const corpus::PromptBank& bank, const TokenGrid& grid,
                                const std::vector<Field>& fields, const std::optional<std::string>& semantic_text,
                                std::uint64_t seed);

std::vector<std::string> field_order(const InstructionSample& s);

// Grid, prompt bytes, sep, answer bytes, eos; the answer and eos are targets.
lm::Example make_example(const InstructionSample& s, const lm::Vocab& vocab);
// Grid, prompt bytes, sep: what the model sees before answering.
lm::Sequence make_prefix(const InstructionSample& s, const lm::Vocab& vocab);

// JSON Lines record. The grid is inline under "grid"; on reading, a
// "grid_path" (relative to the file) is accepted instead.
nlohmann::ordered_json to_json(const InstructionSample& s);
InstructionSample sample_from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
void write_jsonl(const std::filesystem::path& path, const std::vector<InstructionSample>& samples);
std::vector<InstructionSample> read_jsonl(const std::filesystem::path& path);

// k indices balanced across the distinct labels (sorted order decides who
// gets the remainder); classes that run short are topped up from the rest.
std::vector<int> balanced_subset(const std::vector<std::string>& labels, int k, std::uint64_t seed);

// ---- tuning ----

struct Stage3Options {
  int epochs = 20;
  int batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0.01;
  // Wraps the model with these adapters first unless it already has some.
  std::optional<lm::LoraConfig> lora;
  std::uint64_t seed = 1;
};

struct Stage3EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

std::vector<Stage3EpochLog> train_stage3(lm::LanguageModel<float>& model, const std::vector<InstructionSample>& samples,
                                         const Stage3Options& options,
                                         const std::function<void(const Stage3EpochLog&)>& on_epoch = {});

// Mean answer-token cross-entropy.
double answer_loss(const lm::LanguageModel<float>& model, const std::vector<InstructionSample>& samples);

// ---- evaluation ----

// Greedy answer text, restricted to bytes after sep.
std::string generate_answer(const lm::LanguageModel<float>& model, const InstructionSample& s, int max_new = 64);

// Softmax over the log-probabilities of single-QA answers `choices`.
std::vector<double> choice_probabilities(const lm::LanguageModel<float>& model, const InstructionSample& s,
                                         const std::vector<std::string>& choices);

struct QaResult {
  double accuracy = 0.0;  // exact field match after parsing
  double auc = 0.5;       // from choice probabilities; binary fields only
  std::vector<std::string> predictions;
  std::vector<std::string> targets;
};

// Scores field `field` of every sample. Unparseable answers count as wrong.
// AUC uses the probability of `choices[1]` when two choices are given and the
// paradigm is single_qa.
QaResult evaluate_field(const lm::LanguageModel<float>& model, const std::vector<InstructionSample>& samples,
                        const std::string& field, const std::vector<std::string>& choices = {});

// ---- linear probing ----

enum class ProbeMode { Classify, Regress };

struct ProbeResult {
  double accuracy = 0.0;
  double auc = 0.0;
  double mae = 0.0;
  double r = 0.0;
  int n_train = 0;
  int n_test = 0;
};

// Mean final hidden state over the fMRI positions of each grid.
Eigen::MatrixXd probe_features(const lm::LanguageModel<float>& model, const std::vector<TokenGrid>& grids);

// Seeded 80/20 split; logistic regression (targets 0/1) or ridge on
// standardized features. TooFewSamples below 20.
ProbeResult linear_probe(const Eigen::MatrixXd& features, const std::vector<double>& targets, ProbeMode mode,
                         std::uint64_t seed = 1, double l2 = 1e-2);
ProbeResult linear_probe(const lm::LanguageModel<float>& model, const std::vector<TokenGrid>& grids,
                         const std::vector<double>& targets, ProbeMode mode, std::uint64_t seed = 1, double l2 = 1e-2);

}  // namespace neurotoken::instruct
