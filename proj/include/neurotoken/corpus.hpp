#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurotoken/rng.hpp"
#include "neurotoken/signal.hpp"

namespace neurotoken::corpus {

enum class Level { MarkedlyLow, Low, Typical, High, MarkedlyHigh };

std::string level_name(Level level);    // "markedly_low"
std::string level_phrase(Level level);  // "markedly low"
Level level_from_name(const std::string& name);

// z < -2 markedly low, [-2, -1) low, [-1, 1] typical, (1, 2] high, > 2 markedly high.
Level level_for(double z);

struct Stat {
  double mean = 0.0;
  double std = 0.0;
  int n = 0;

  bool degenerate() const { return n < 2 || !(std > 0.0); }
};

struct ZLevel {
  double z = 0.0;
  Level level = Level::Typical;
  bool degenerate = false;
};

// Degenerate statistics or a missing value fall back to z = 0, typical.
ZLevel zscore_level(double value, const Stat& stat);

enum class ValueKind { Scalar, List };

struct DescriptorSpec {
  std::string id;
  std::string domain;
  ValueKind kind = ValueKind::Scalar;
  std::string subject;  // sentence subject, e.g. "Network modularity"
};

const std::vector<DescriptorSpec>& default_registry();
const DescriptorSpec& find_descriptor(const std::string& id);

struct FeatureConfig {
  double graph_density = 0.1;
  int gradient_components = 3;
  double gradient_keep = 0.1;
  double gradient_alpha = 0.5;
  double band_lo = 0.01;
  double band_hi = 0.08;
  int edge_k = 3;
  int ica_max_iterations = 200;
  double ica_tolerance = 1e-4;
  std::uint64_t seed = 1;
};

// Raw values of one descriptor for one scan. NaN marks a value that could not
// be computed (for example a constant scan); it renders as typical.
struct DescriptorValue {
  std::string id;
  std::vector<double> values;
  std::vector<std::string> labels;  // per element for list descriptors
  std::string detail;               // extra rendered context (edge lists)
};

struct ScanDescriptors {
  std::string subject_id;
  std::vector<DescriptorValue> values;  // registry order
};

ScanDescriptors extract_descriptors(const signal::RoiTimeSeries& scan, const FeatureConfig& config);

// Runs extraction over a cohort on up to `threads` workers. Output order is the
// cohort order regardless of thread count.
std::vector<ScanDescriptors> extract_cohort(const std::vector<signal::LabeledScan>& cohort,
                                            const FeatureConfig& config, int threads = 1);

struct CohortStats {
  std::map<std::string, std::vector<Stat>> stats;  // element-wise for lists
};

CohortStats compute_cohort_stats(const std::vector<ScanDescriptors>& scans);
nlohmann::json to_json(const CohortStats& stats);
CohortStats stats_from_json(const nlohmann::json& j);

struct DescriptorRecord {
  std::string subject_id;
  std::string descriptor_id;
  bool is_list = false;
  std::vector<double> raw;
  std::vector<double> z;
  std::vector<Level> levels;
  std::vector<std::string> labels;
  std::string detail;
  std::string text;
};

DescriptorRecord make_record(const std::string& subject_id, const DescriptorValue& value, const CohortStats& stats);

// Throws UnknownDescriptor for ids outside the registry.
std::string render_descriptor(const DescriptorRecord& record);

struct Paragraph {
  std::string subject_id;
  std::string text;
};

struct Corpus {
  std::vector<DescriptorRecord> records;
  std::vector<Paragraph> paragraphs;
};

Corpus build_corpus(const std::vector<ScanDescriptors>& scans, const CohortStats& stats);

nlohmann::json to_json(const DescriptorRecord& record);

// Corpus records and paragraphs as JSON Lines.
void write_corpus(const Corpus& corpus, const std::filesystem::path& records_path,
                  const std::filesystem::path& paragraphs_path);
std::vector<Paragraph> read_paragraphs(const std::filesystem::path& path);
std::vector<DescriptorRecord> read_records(const std::filesystem::path& path);

// Sentences of a paragraph, in order.
std::vector<std::string> split_sentences(const std::string& paragraph);

// Lower-cased alphanumeric words.
std::vector<std::string> words_of(const std::string& text);

// Bag-of-words logistic probe on paragraphs; returns held-out accuracy under
// a seeded 80/20 split.
double descriptor_probe(const std::vector<std::string>& paragraphs, const std::vector<int>& labels,
                        std::uint64_t seed = 1);

struct PromptBank {
  std::map<std::string, std::vector<std::string>> templates;
};

// Plain text, one template per line, sections introduced by "#paradigm:<name>".
PromptBank parse_prompt_bank(const std::string& text);
PromptBank load_prompt_bank(const std::filesystem::path& path);

std::string sample_prompt(const PromptBank& bank, const std::string& paradigm, Rng& rng);
std::string sample_prompt(const PromptBank& bank, const std::string& paradigm, std::uint64_t seed);

// Substitutes {question} and {choices}.
std::string fill_prompt(const std::string& tmpl, const std::string& question, const std::string& choices);

}  // namespace neurotoken::corpus
