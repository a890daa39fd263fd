#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "neurotoken/error.hpp"
#include "neurotoken/instruct.hpp"
#include "neurotoken/rng.hpp"

using namespace neurotoken;
using namespace neurotoken::instruct;

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

const char* kBank =
    "#paradigm:single_qa\n"
    "Q: {question} ({choices}) A:\n"
    "Question: {question} Options: {choices}. Answer:\n"
    "Tell me: {question} {choices}\n"
    "#paradigm:multi_qa\n"
    "Answer all: {question} ({choices})\n"
    "#paradigm:open_ended\n"
    "Describe the subject. {question}\n";

corpus::PromptBank bank() { return corpus::parse_prompt_bank(kBank); }

Field sex(const std::string& v) { return {"sex", "What is the sex?", {"male", "female"}, v}; }
Field level(const std::string& v) { return {"level", "Which level?", {"low", "mid", "high"}, v}; }

TokenGrid random_grid(Rng& rng, int t, int n, int k) {
  TokenGrid g{t, n, {}};
  for (int i = 0; i < t * n; ++i) g.indices.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(k))));
  return g;
}

lm::LmConfig tiny_config() {
  lm::LmConfig c;
  c.model_dim = 32;
  c.n_heads = 2;
  c.n_layers = 1;
  c.context_length = 128;
  c.max_steps = 3;
  c.max_rois = 4;
  c.vocab.codebook_size = 8;
  return c;
}

// Boundaries midway between the order statistics around i * n / bins.
std::vector<double> quantile_oracle(std::vector<double> v, int bins) {
  std::sort(v.begin(), v.end());
  std::vector<double> out;
  for (int i = 1; i < bins; ++i) {
    const auto k = static_cast<std::size_t>(i * static_cast<long>(v.size()) / bins);
    out.push_back((v[k - 1] + v[k]) / 2);
  }
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto h = v.size() / 2;
  return v.size() % 2 ? v[h] : (v[h - 1] + v[h]) / 2;
}

}  // namespace

TEST_CASE("equal-frequency bins on 1..100") {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  const auto b = make_bins(v, 4);
  REQUIRE(b.boundaries.size() == 3u);
  CHECK(b.boundaries[0] == 25.5);
  CHECK(b.boundaries[1] == 50.5);
  CHECK(b.boundaries[2] == 75.5);
  CHECK(b.labels == std::vector<std::string>{"bin_0", "bin_1", "bin_2", "bin_3"});
  CHECK(b.midpoints == std::vector<double>{13.0, 38.0, 63.0, 88.0});
  CHECK(b.encode(-1e9) == 0);
  CHECK(b.encode(1e9) == 3);
  CHECK(b.encode(25.5) == 1);
  CHECK(b.label(60.0) == "bin_2");
  CHECK(b.parse_label(" Bin_2. ") == 2);
  CHECK(kind_of([&] { b.parse_label("bin_9"); }) == ErrorKind::ParseFailure);
  CHECK(kind_of([&] { make_bins({1, 1, 2, 2, 3}, 4); }) == ErrorKind::TooFewDistinct);
  const auto j = bin_scheme_from_json(to_json(b));
  CHECK(j.boundaries == b.boundaries);
  CHECK(j.midpoints == b.midpoints);
}

TEST_CASE("bins match the quantile oracle and round-trip") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    std::vector<double> v;
    const int n = 30 + static_cast<int>(rng.below(200));
    for (int i = 0; i < n; ++i) v.push_back(std::exp(rng.normal()));  // skewed, no ties
    const int bins = 2 + static_cast<int>(rng.below(9));
    const auto b = make_bins(v, bins);
    const auto oracle = quantile_oracle(v, bins);
    REQUIRE(b.boundaries.size() == oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(b.boundaries[i] == oracle[i]);
    for (int k = 0; k < bins; ++k) {
      std::vector<double> members;
      for (double x : v) {
        if (b.encode(x) == k) members.push_back(x);
      }
      REQUIRE(!members.empty());
      CHECK(b.midpoints[static_cast<std::size_t>(k)] == median(members));
    }
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i) CHECK(b.encode(sorted[i - 1]) <= b.encode(sorted[i]));
    for (double x : v) {
      const int k = b.encode(x);
      const double lo = k == 0 ? sorted.front() : b.boundaries[static_cast<std::size_t>(k - 1)];
      const double hi = k == bins - 1 ? sorted.back() : b.boundaries[static_cast<std::size_t>(k)];
      CHECK(std::abs(b.decode(k) - x) <= hi - lo);
      CHECK(b.encode(b.decode(k)) == k);
    }
  }
}

TEST_CASE("ties never produce repeated boundaries") {
  std::vector<double> v = {1, 1, 1, 1, 1, 1, 2, 3, 4, 5, 6, 7};
  const auto b = make_bins(v, 4);
  for (std::size_t i = 1; i < b.boundaries.size(); ++i) CHECK(b.boundaries[i] > b.boundaries[i - 1]);
  for (int k = 0; k < 4; ++k) {
    CHECK(std::count_if(v.begin(), v.end(), [&](double x) { return b.encode(x) == k; }) > 0);
  }
  const auto tail = make_bins({1, 2, 3, 4, 4, 4, 4, 4, 4, 4}, 4);
  CHECK(tail.boundaries == std::vector<double>{1.5, 2.5, 3.5});
  CHECK(kind_of([&] { make_bins({1, 1, 1, 1, 1, 1, 1, 2, 3}, 4); }) == ErrorKind::TooFewDistinct);
}

TEST_CASE("format_sample paradigms") {
  Rng rng(1);
  const auto grid = random_grid(rng, 2, 3, 8);
  const auto b = bank();
  const auto single = format_sample(Paradigm::SingleQa, b, grid, {sex("female")}, std::nullopt, 7);
  CHECK(single.answer == "female");
  CHECK(single.prompt.find("What is the sex?") != std::string::npos);
  CHECK(single.prompt.find("male or female") != std::string::npos);
  CHECK(single.grid == grid);

  const auto multi = format_sample(Paradigm::MultiQa, b, grid, {sex("male"), level("high")}, std::nullopt, 7);
  CHECK(multi.answer == "sex: male; level: high");
  CHECK(field_order(multi) == std::vector<std::string>{"sex", "level"});

  const auto open = format_sample(Paradigm::OpenEnded, b, grid, {sex("male"), level("low")}, "Age 40.", 7);
  CHECK(open.answer == "Summary: sex is male; level is low.");
  CHECK(open.prompt.size() > 8);
  CHECK(open.prompt.substr(open.prompt.size() - 8) == " Age 40.");
  CHECK(open.semantic_text == std::optional<std::string>("Age 40."));

  CHECK(format_sample(Paradigm::SingleQa, b, grid, {sex("male")}, std::nullopt, 3).prompt ==
        format_sample(Paradigm::SingleQa, b, grid, {sex("male")}, std::nullopt, 3).prompt);
  std::set<std::string> prompts;
  for (std::uint64_t s = 0; s < 30; ++s) {
    prompts.insert(format_sample(Paradigm::SingleQa, b, grid, {sex("male")}, std::nullopt, s).prompt);
  }
  CHECK(prompts.size() == 3u);

  CHECK(kind_of([&] { format_sample(Paradigm::SingleQa, b, grid, {sex("male"), level("low")}, std::nullopt, 1); }) ==
        ErrorKind::FieldCountMismatch);
  CHECK(kind_of([&] { format_sample(Paradigm::MultiQa, b, grid, {sex("male")}, std::nullopt, 1); }) ==
        ErrorKind::FieldCountMismatch);
  CHECK(kind_of([&] { format_sample(Paradigm::OpenEnded, b, grid, {}, std::nullopt, 1); }) ==
        ErrorKind::FieldCountMismatch);
  CHECK(kind_of([&] { format_sample(Paradigm::SingleQa, b, grid, {sex("other")}, std::nullopt, 1); }) ==
        ErrorKind::PreconditionViolation);
}

TEST_CASE("formatted answers parse back to their fields") {
  Rng rng(2);
  const auto b = bank();
  const TokenGrid grid{1, 1, {0}};
  const std::vector<std::string> words = {"alpha", "beta", "gamma", "bin_3", "42", "low"};
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = static_cast<Paradigm>(rng.below(3));
    const int n = p == Paradigm::SingleQa ? 1 : 2 + static_cast<int>(rng.below(3));
    std::vector<Field> fields;
    for (int i = 0; i < n; ++i) {
      fields.push_back({"field" + std::to_string(i), "q?", {}, words[rng.below(words.size())]});
    }
    const auto s = format_sample(p, b, grid, fields, std::nullopt, static_cast<std::uint64_t>(trial));
    const auto parsed = evalkit::parse_answer(s.answer, p, field_order(s));
    REQUIRE(parsed.size() == fields.size());
    for (const auto& f : fields) CHECK(parsed.at(f.name) == f.value);
  }
}

TEST_CASE("instruction examples mask everything but the answer") {
  Rng rng(3);
  lm::Vocab v;
  v.codebook_size = 8;
  const auto s = format_sample(Paradigm::SingleQa, bank(), random_grid(rng, 2, 3, 8), {sex("male")}, std::nullopt, 1);
  const auto e = make_example(s, v);
  const auto prefix = make_prefix(s, v);
  CHECK(prefix.ids.back() == v.sep());
  CHECK(e.seq.size() == prefix.size() + 4 + 1);
  for (std::size_t i = 0; i < e.seq.size(); ++i) CHECK(e.target[i] == (i >= prefix.size() ? 1 : 0));

  // prompt-position logits never reach the loss
  lm::LanguageModel<float> model(tiny_config());
  diff::NoGradGuard guard;
  const diff::Mat<float> logits = model.forward({&e.seq}).value();
  const float base = lm::masked_next_token_loss(diff::Tensor<float>::constant(logits), {&e}).item();
  diff::Mat<float> perturbed = logits;
  perturbed.topRows(static_cast<Eigen::Index>(prefix.size()) - 1).setConstant(100.0f);
  CHECK(lm::masked_next_token_loss(diff::Tensor<float>::constant(perturbed), {&e}).item() == base);
}

TEST_CASE("JSON Lines round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "neurotoken_test_instruct";
  std::filesystem::create_directories(dir);
  Rng rng(4);
  const auto b = bank();
  std::vector<InstructionSample> samples = {
      format_sample(Paradigm::SingleQa, b, random_grid(rng, 2, 3, 8), {sex("male")}, std::nullopt, 1),
      format_sample(Paradigm::MultiQa, b, random_grid(rng, 3, 2, 8), {sex("female"), level("mid")}, "Age 30.", 2),
      format_sample(Paradigm::OpenEnded, b, random_grid(rng, 1, 4, 8), {level("low"), sex("male")}, std::nullopt, 3)};
  write_jsonl(dir / "s.jsonl", samples);
  const auto back = read_jsonl(dir / "s.jsonl");
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(back[i].paradigm == samples[i].paradigm);
    CHECK(back[i].prompt == samples[i].prompt);
    CHECK(back[i].grid == samples[i].grid);
    CHECK(back[i].semantic_text == samples[i].semantic_text);
    CHECK(back[i].answer == samples[i].answer);
    CHECK(back[i].fields == samples[i].fields);
  }

  // grid by path
  {
    std::ofstream g(dir / "g.json");
    g << tokenizer::to_json(samples[0].grid).dump();
    auto j = nlohmann::json::parse(to_json(samples[0]).dump());
    j.erase("grid");
    j["grid_path"] = "g.json";
    std::ofstream out(dir / "p.jsonl");
    out << j.dump() << "\n";
  }
  CHECK(read_jsonl(dir / "p.jsonl")[0].grid == samples[0].grid);

  {
    auto j = nlohmann::json::parse(to_json(samples[1]).dump());
    j["answer"] = "sex: male; level: mid";
    std::ofstream out(dir / "bad.jsonl");
    out << j.dump() << "\n";
  }
  CHECK(kind_of([&] { read_jsonl(dir / "bad.jsonl"); }) == ErrorKind::FormatError);
  CHECK(kind_of([&] { read_jsonl(dir / "none.jsonl"); }) == ErrorKind::MissingArtifact);
  std::filesystem::remove_all(dir);
}

TEST_CASE("k-shot subsets are balanced and deterministic") {
  std::vector<std::string> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(i % 3 == 0 ? "female" : "male");
  for (int k : {2, 4, 10}) {
    const auto idx = balanced_subset(labels, k, 5);
    CHECK(idx.size() == static_cast<std::size_t>(k));
    const auto f = std::count_if(idx.begin(), idx.end(), [&](int i) { return labels[i] == "female"; });
    CHECK(f == k / 2);
    CHECK(std::set<int>(idx.begin(), idx.end()).size() == idx.size());
    CHECK(balanced_subset(labels, k, 5) == idx);
  }
  CHECK(balanced_subset(labels, 10, 5) != balanced_subset(labels, 10, 6));
  // a short class is topped up from the other
  std::vector<std::string> skewed = {"a", "b", "b", "b", "b", "b"};
  const auto idx = balanced_subset(skewed, 4, 1);
  CHECK(std::count(idx.begin(), idx.end(), 0) == 1);
  CHECK(idx.size() == 4u);
  CHECK(kind_of([&] { balanced_subset(skewed, 7, 1); }) == ErrorKind::PreconditionViolation);
}

TEST_CASE("stage 3 overfits eight samples") {
  Rng rng(6);
  const auto b = bank();
  std::vector<InstructionSample> samples;
  for (int i = 0; i < 8; ++i) {
    samples.push_back(format_sample(Paradigm::SingleQa, b, random_grid(rng, 2, 4, 8), {sex(i % 2 ? "female" : "male")},
                                    std::nullopt, static_cast<std::uint64_t>(i)));
  }
  lm::LanguageModel<float> model(tiny_config());
  const double before = answer_loss(model, samples);
  Stage3Options o;
  o.epochs = 60;
  o.batch_size = 8;
  o.lr = 1e-2;
  const auto logs = train_stage3(model, samples, o);
  CHECK(logs.size() == 60u);
  CHECK(logs.back().loss < logs.front().loss);
  CHECK(answer_loss(model, samples) < 0.05 * before);
  const auto r = evaluate_field(model, samples, "sex", {"male", "female"});
  CHECK(r.accuracy == 1.0);
  CHECK(r.auc == 1.0);
  CHECK(generate_answer(model, samples[1]) == "female");
  const auto p = choice_probabilities(model, samples[1], {"male", "female"});
  CHECK(p[0] + p[1] == doctest::Approx(1.0));
  CHECK(p[1] > 0.9);
}

TEST_CASE("stage 3 in adapter mode trains only the adapters") {
  Rng rng(7);
  std::vector<InstructionSample> samples;
  for (int i = 0; i < 4; ++i) {
    samples.push_back(format_sample(Paradigm::SingleQa, bank(), random_grid(rng, 2, 4, 8), {sex("male")}, std::nullopt, 1));
  }
  lm::LanguageModel<float> model(tiny_config());
  const diff::Mat<float> emb = model.named_parameters()[0].tensor.value();
  Stage3Options o;
  o.epochs = 3;
  o.lora = lm::LoraConfig{};
  train_stage3(model, samples, o);
  CHECK(model.adapted());
  CHECK(model.named_parameters()[0].tensor.value() == emb);
  CHECK(answer_loss(model, samples) > 0.0);
}

TEST_CASE("linear probe on given features") {
  Rng rng(8);
  const int n = 100;
  Eigen::MatrixXd x(n, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  std::vector<double> copy(n), labels(n);
  for (int i = 0; i < n; ++i) {
    copy[static_cast<std::size_t>(i)] = x(i, 2);
    labels[static_cast<std::size_t>(i)] = x(i, 4) > 0.0;
  }
  const auto reg = linear_probe(x, copy, ProbeMode::Regress);
  CHECK(reg.r > 0.99);
  CHECK(reg.n_train == 80);
  CHECK(reg.n_test == 20);
  const auto cls = linear_probe(x, labels, ProbeMode::Classify);
  CHECK(cls.accuracy >= 0.9);
  CHECK(cls.auc >= 0.95);

  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng shuffle(seed);
    std::vector<double> shuffled = labels;
    shuffle.shuffle(shuffled);
    Eigen::MatrixXd noise(n, 6);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = shuffle.normal();
    const auto r = linear_probe(noise, shuffled, ProbeMode::Classify, seed);
    CHECK(r.accuracy >= 0.35);
    CHECK(r.accuracy <= 0.65);
  }
  CHECK(kind_of([&] { linear_probe(x.topRows(19), std::vector<double>(19, 0.0), ProbeMode::Regress); }) ==
        ErrorKind::TooFewSamples);
  CHECK(kind_of([&] { linear_probe(x, std::vector<double>(n, 2.0), ProbeMode::Classify); }) ==
        ErrorKind::PreconditionViolation);
}

TEST_CASE("probe features average the fMRI positions") {
  Rng rng(9);
  lm::LanguageModel<float> model(tiny_config());
  std::vector<TokenGrid> grids;
  for (int i = 0; i < 40; ++i) grids.push_back(random_grid(rng, 2 + static_cast<int>(rng.below(2)), 4, 8));
  const auto f = probe_features(model, grids);
  REQUIRE(f.rows() == 40);
  REQUIRE(f.cols() == 32);
  diff::NoGradGuard guard;
  for (int i : {0, 17, 39}) {
    const auto seq = lm::flatten_grid(grids[static_cast<std::size_t>(i)], model.vocab());
    const diff::Mat<float> h = model.hidden({&seq}).value();
    const Eigen::VectorXd mean = h.middleRows(1, h.rows() - 2).cast<double>().colwise().mean();
    CHECK((f.row(i).transpose() - mean).cwiseAbs().maxCoeff() < 1e-5);
  }
  CHECK(kind_of([&] { linear_probe(model, std::vector<TokenGrid>(grids.begin(), grids.begin() + 10),
                                   std::vector<double>(10, 0.0), ProbeMode::Regress); }) == ErrorKind::TooFewSamples);
}
