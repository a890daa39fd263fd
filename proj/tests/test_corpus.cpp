#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "neurotoken/corpus.hpp"
#include "neurotoken/error.hpp"
#include "oracles.hpp"

using namespace neurotoken;
using namespace neurotoken::corpus;

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

ScanDescriptors scalar_scan(const std::string& subject, double v) {
  return ScanDescriptors{subject, {DescriptorValue{"graph_modularity", {v}, {}, {}}}};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<signal::LabeledScan> small_cohort(int n, double effect, std::uint64_t seed) {
  signal::CohortSpec spec;
  spec.n_subjects = n;
  spec.factor_effect = effect;
  spec.seed = seed;
  return signal::preprocess_cohort(signal::generate_cohort(spec));
}

}  // namespace

TEST_CASE("cohort statistics") {
  auto two = compute_cohort_stats({scalar_scan("a", 0.0), scalar_scan("b", 2.0)});
  CHECK(two.stats.at("graph_modularity")[0].mean == 1.0);
  CHECK(two.stats.at("graph_modularity")[0].std == 1.0);

  auto flat = compute_cohort_stats({scalar_scan("a", 3.0), scalar_scan("b", 3.0)});
  CHECK(flat.stats.at("graph_modularity")[0].std == 0.0);
  CHECK(flat.stats.at("graph_modularity")[0].degenerate());

  Rng rng(3);
  std::vector<ScanDescriptors> many;
  std::vector<double> values;
  for (int i = 0; i < 100; ++i) {
    values.push_back(rng.normal());
    many.push_back(scalar_scan("s" + std::to_string(i), values.back()));
  }
  auto st = compute_cohort_stats(many).stats.at("graph_modularity")[0];
  double mean = 0, var = 0;
  for (double v : values) mean += v / 100;
  for (double v : values) var += (v - mean) * (v - mean) / 100;
  CHECK(std::abs(st.mean - mean) < 1e-12);
  CHECK(std::abs(st.std - std::sqrt(var)) < 1e-12);

  CHECK(kind_of([] { compute_cohort_stats({scalar_scan("a", 1.0)}); }) == ErrorKind::InsufficientCohort);
}

TEST_CASE("zscore_level thresholds") {
  const Stat s{2.0, 0.5, 10};
  CHECK(zscore_level(2.0, s).z == 0.0);
  CHECK(zscore_level(2.0, s).level == Level::Typical);
  CHECK(zscore_level(2.0 + 1.5 * 0.5, s).level == Level::High);
  CHECK(zscore_level(2.0 - 2.5 * 0.5, s).level == Level::MarkedlyLow);
  CHECK(level_for(-2.0) == Level::Low);
  CHECK(level_for(-1.0) == Level::Typical);
  CHECK(level_for(1.0) == Level::Typical);
  CHECK(level_for(2.0) == Level::High);
  CHECK(level_for(2.0001) == Level::MarkedlyHigh);
  const auto degenerate = zscore_level(5.0, Stat{1.0, 0.0, 10});
  CHECK(degenerate.z == 0.0);
  CHECK(degenerate.level == Level::Typical);
  CHECK(degenerate.degenerate);
}

TEST_CASE("render_descriptor wording") {
  DescriptorRecord r;
  r.descriptor_id = "graph_modularity";
  r.z = {1.4};
  r.levels = {Level::High};
  CHECK(render_descriptor(r) == "Network modularity is high (z = 1.40) relative to the cohort.");

  DescriptorRecord pair;
  pair.descriptor_id = "fc_network_pair";
  pair.is_list = true;
  pair.labels = {"Visual-Somatomotor"};
  pair.z = {0.2};
  pair.levels = {Level::Typical};
  const auto text = render_descriptor(pair);
  CHECK(text.find("Visual-Somatomotor") != std::string::npos);
  CHECK(text.find("typical") != std::string::npos);

  r.descriptor_id = "not_a_descriptor";
  CHECK(kind_of([&] { render_descriptor(r); }) == ErrorKind::UnknownDescriptor);
}

TEST_CASE("build_corpus emits one record per scan and descriptor, deterministically") {
  auto cohort = small_cohort(2, 0.6, 4);
  auto scans = extract_cohort(cohort, FeatureConfig{});
  auto stats = compute_cohort_stats(scans);
  auto corpus = build_corpus(scans, stats);
  CHECK(corpus.records.size() == 2 * default_registry().size());
  REQUIRE(corpus.paragraphs.size() == 2);
  for (const auto& p : corpus.paragraphs) CHECK(!p.text.empty());
  for (const auto& r : corpus.records) {
    CHECK(!r.text.empty());
    for (std::size_t e = 0; e < r.z.size(); ++e) CHECK(level_for(r.z[e]) == r.levels[e]);
  }

  const auto dir = std::filesystem::temp_directory_path() / "neurotoken_test_corpus";
  std::filesystem::create_directories(dir);
  write_corpus(corpus, dir / "a.jsonl", dir / "pa.jsonl");
  auto again = build_corpus(extract_cohort(cohort, FeatureConfig{}, 2), stats);
  write_corpus(again, dir / "b.jsonl", dir / "pb.jsonl");
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
  CHECK(slurp(dir / "pa.jsonl") == slurp(dir / "pb.jsonl"));

  auto records = read_records(dir / "a.jsonl");
  REQUIRE(records.size() == corpus.records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].text == corpus.records[i].text);
    for (std::size_t e = 0; e < records[i].z.size(); ++e) CHECK(level_for(records[i].z[e]) == records[i].levels[e]);
  }
  auto paragraphs = read_paragraphs(dir / "pa.jsonl");
  CHECK(paragraphs[1].text == corpus.paragraphs[1].text);
  CHECK(split_sentences(paragraphs[0].text).size() == default_registry().size());
  std::filesystem::remove_all(dir);
}

TEST_CASE("constant scans render with the typical fallback") {
  auto cohort = small_cohort(3, 0.6, 2);
  cohort[2].scan.data.setZero();
  auto scans = extract_cohort(cohort, FeatureConfig{});
  auto corpus = build_corpus(scans, compute_cohort_stats(scans));
  for (const auto& r : corpus.records) {
    if (r.subject_id != cohort[2].scan.subject_id) continue;
    if (r.descriptor_id == "fg_range_1" || r.descriptor_id == "ica_overall_amplitude") {
      CHECK(std::isnan(r.raw[0]));
      CHECK(r.levels[0] == Level::Typical);
      CHECK(r.text.find("typical") != std::string::npos);
    }
  }
}

TEST_CASE("descriptor probe separates a strong effect and stays at chance without one") {
  auto cohort = small_cohort(200, 0.6, 5);
  auto scans = extract_cohort(cohort, FeatureConfig{});
  auto corpus = build_corpus(scans, compute_cohort_stats(scans));
  std::vector<std::string> paragraphs;
  std::vector<int> labels;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    paragraphs.push_back(corpus.paragraphs[i].text);
    labels.push_back(cohort[i].binary_factor);
  }
  CHECK(descriptor_probe(paragraphs, labels, 1) >= 0.70);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto shuffled = labels;
    Rng rng(seed);
    rng.shuffle(shuffled);
    const double acc = descriptor_probe(paragraphs, shuffled, seed);
    CHECK(acc >= 0.35);
    CHECK(acc <= 0.65);
  }
  std::vector<int> one_class(labels.size(), 1);
  CHECK(kind_of([&] { descriptor_probe(paragraphs, one_class, 1); }) == ErrorKind::TooFewSubjects);
  std::vector<std::string> few(paragraphs.begin(), paragraphs.begin() + 10);
  std::vector<int> few_labels(labels.begin(), labels.begin() + 10);
  CHECK(kind_of([&] { descriptor_probe(few, few_labels, 1); }) == ErrorKind::TooFewSubjects);
}

TEST_CASE("prompt banks") {
  auto one = parse_prompt_bank("#paradigm:single_qa\nWhat is {question}?\n");
  CHECK(sample_prompt(one, "single_qa", 1) == "What is {question}?");
  CHECK(fill_prompt("Q: {question} ({choices})", "sex", "male or female") == "Q: sex (male or female)");

  std::string text = "#paradigm:multi_qa\n";
  for (int i = 0; i < 200; ++i) text += "template " + std::to_string(i) + " {question}\n";
  auto bank = parse_prompt_bank(text);
  CHECK(sample_prompt(bank, "multi_qa", 42) == sample_prompt(bank, "multi_qa", 42));
  Rng rng(7);
  std::set<std::string> seen;
  for (int i = 0; i < 10000; ++i) seen.insert(sample_prompt(bank, "multi_qa", rng));
  CHECK(seen.size() == 200);

  CHECK(kind_of([&] { sample_prompt(bank, "open_ended", 1); }) == ErrorKind::EmptyParadigm);
  CHECK(kind_of([] { parse_prompt_bank("#paradigm:x\n#paradigm:y\nok\n"); }) == ErrorKind::EmptyParadigm);
  CHECK(kind_of([] { parse_prompt_bank("#paradigm:x\nbad {name}\n"); }) == ErrorKind::FormatError);
  CHECK(kind_of([] { parse_prompt_bank("orphan line\n"); }) == ErrorKind::FormatError);
}
