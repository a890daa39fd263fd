#include "neurotoken/instruct.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "neurotoken/error.hpp"
#include "neurotoken/rng.hpp"

namespace neurotoken::instruct {

// ---- binning -------------------------------------------------------------------

int BinScheme::encode(double v) const {
  require(!labels.empty(), ErrorKind::PreconditionViolation, "empty bin scheme");
  return static_cast<int>(std::upper_bound(boundaries.begin(), boundaries.end(), v) - boundaries.begin());
}

double BinScheme::decode(int bin) const {
  require(bin >= 0 && bin < n_bins(), ErrorKind::PreconditionViolation, "bin " + std::to_string(bin) + " out of range");
  return midpoints[static_cast<std::size_t>(bin)];
}

int BinScheme::parse_label(const std::string& text) const {
  const auto c = evalkit::canonicalize(text);
  for (int i = 0; i < n_bins(); ++i) {
    if (c == labels[static_cast<std::size_t>(i)]) return i;
  }
  fail(ErrorKind::ParseFailure, "'" + text + "' is not a bin label");
}

BinScheme make_bins(std::vector<double> values, int n_bins) {
  require(n_bins >= 2, ErrorKind::PreconditionViolation, "need at least two bins");
  std::sort(values.begin(), values.end());
  std::set<double> uniq(values.begin(), values.end());
  require(static_cast<int>(uniq.size()) >= n_bins, ErrorKind::TooFewDistinct,
          std::to_string(uniq.size()) + " distinct values for " + std::to_string(n_bins) + " bins");
  const auto n = values.size();
  // candidate cut positions: k such that values[k - 1] < values[k]
  std::vector<std::size_t> gaps;
  for (std::size_t k = 1; k < n; ++k) {
    if (values[k] != values[k - 1]) gaps.push_back(k);
  }
  BinScheme b;
  std::size_t next = 0;  // first gap still available
  for (int i = 1; i < n_bins; ++i) {
    const auto target = static_cast<std::size_t>(static_cast<double>(i) * static_cast<double>(n) / n_bins);
    const std::size_t last = gaps.size() - static_cast<std::size_t>(n_bins - i);  // leave one gap per later cut
    std::size_t best = next;
    for (std::size_t j = next; j <= last; ++j) {
      const auto d = [&](std::size_t g) { return g > target ? g - target : target - g; };
      if (d(gaps[j]) < d(gaps[best])) best = j;
    }
    b.boundaries.push_back(0.5 * (values[gaps[best] - 1] + values[gaps[best]]));
    next = best + 1;
  }
  std::vector<std::vector<double>> members(static_cast<std::size_t>(n_bins));
  for (int i = 0; i < n_bins; ++i) b.labels.push_back("bin_" + std::to_string(i));
  for (double v : values) members[static_cast<std::size_t>(b.encode(v))].push_back(v);
  for (const auto& m : members) {
    require(!m.empty(), ErrorKind::TooFewDistinct, "empty bin");
    const auto h = m.size() / 2;
    b.midpoints.push_back(m.size() % 2 ? m[h] : 0.5 * (m[h - 1] + m[h]));
  }
  return b;
}

nlohmann::json to_json(const BinScheme& b) {
  return {{"boundaries", b.boundaries}, {"midpoints", b.midpoints}, {"labels", b.labels}};
}

BinScheme bin_scheme_from_json(const nlohmann::json& j) {
  BinScheme b;
  try {
    b.boundaries = j.at("boundaries").get<std::vector<double>>();
    b.midpoints = j.at("midpoints").get<std::vector<double>>();
    b.labels = j.at("labels").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, std::string("bin scheme: ") + e.what());
  }
  require(!b.labels.empty() && b.midpoints.size() == b.labels.size() && b.boundaries.size() + 1 == b.labels.size(),
          ErrorKind::FormatError, "bin scheme sizes disagree");
  require(std::is_sorted(b.boundaries.begin(), b.boundaries.end()), ErrorKind::FormatError,
          "bin boundaries are not sorted");
  return b;
}

// ---- samples -------------------------------------------------------------------

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::string choice_list(const Field& f) { return join(f.choices, f.choices.size() == 2 ? " or " : ", "); }

}  // namespace

InstructionSample format_sample(Paradigm paradigm, const corpus::PromptBank& bank, const TokenGrid& grid,
                                const std::vector<Field>& fields, const std::optional<std::string>& semantic_text,
                                std::uint64_t seed) {
  require(!fields.empty(), ErrorKind::FieldCountMismatch, "instruction sample without fields");
  require(paradigm != Paradigm::SingleQa || fields.size() == 1, ErrorKind::FieldCountMismatch,
          "single_qa takes exactly one field, got " + std::to_string(fields.size()));
  require(paradigm != Paradigm::MultiQa || fields.size() >= 2, ErrorKind::FieldCountMismatch,
          "multi_qa needs at least two fields");
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::string> questions, choices;
  for (const auto& f : fields) {
    require(!f.name.empty() && !f.value.empty(), ErrorKind::PreconditionViolation, "field name and value are required");
    require(f.choices.empty() || std::find(f.choices.begin(), f.choices.end(), f.value) != f.choices.end(),
            ErrorKind::PreconditionViolation, "value '" + f.value + "' is not a choice of " + f.name);
    pairs.emplace_back(f.name, f.value);
    if (paradigm == Paradigm::SingleQa) {
      questions.push_back(f.question);
      if (!f.choices.empty()) choices.push_back(choice_list(f));
    } else {
      questions.push_back(f.name + ": " + f.question);
      if (!f.choices.empty()) choices.push_back(f.name + " (" + join(f.choices, "/") + ")");
    }
  }
  InstructionSample s;
  s.paradigm = paradigm;
  s.grid = grid;
  s.semantic_text = semantic_text;
  s.fields = pairs;
  s.answer = evalkit::format_answer(paradigm, pairs);
  const auto tmpl = corpus::sample_prompt(bank, evalkit::to_string(paradigm), seed);
  s.prompt = corpus::fill_prompt(tmpl, join(questions, " "), join(choices, "; "));
  if (semantic_text && !semantic_text->empty()) s.prompt += " " + *semantic_text;
  return s;
}

std::vector<std::string> field_order(const InstructionSample& s) {
  std::vector<std::string> out;
  for (const auto& [name, value] : s.fields) out.push_back(name);
  return out;
}

lm::Sequence make_prefix(const InstructionSample& s, const lm::Vocab& vocab) {
  auto seq = lm::flatten_grid(s.grid, vocab);
  seq.push_text(s.prompt);
  seq.push(vocab.sep());
  return seq;
}

lm::Example make_example(const InstructionSample& s, const lm::Vocab& vocab) {
  require(!s.answer.empty(), ErrorKind::EmptyText, "instruction sample with an empty answer");
  lm::Example e{make_prefix(s, vocab), {}};
  const auto first = e.seq.size();
  e.seq.push_text(s.answer);
  e.seq.push(vocab.eos());
  e.target.assign(e.seq.size(), 0);
  std::fill(e.target.begin() + static_cast<long>(first), e.target.end(), 1);
  return e;
}

nlohmann::ordered_json to_json(const InstructionSample& s) {
  nlohmann::ordered_json fields = nlohmann::ordered_json::object();
  for (const auto& [name, value] : s.fields) fields[name] = value;
  nlohmann::ordered_json j;
  j["paradigm"] = evalkit::to_string(s.paradigm);
  j["prompt"] = s.prompt;
  j["grid"] = nlohmann::ordered_json::parse(tokenizer::to_json(s.grid).dump());
  j["semantic_text"] = s.semantic_text ? nlohmann::ordered_json(*s.semantic_text) : nlohmann::ordered_json();
  j["answer"] = s.answer;
  j["fields"] = std::move(fields);
  return j;
}

InstructionSample sample_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  InstructionSample s;
  try {
    s.paradigm = evalkit::paradigm_from_string(j.at("paradigm").get<std::string>());
    s.prompt = j.at("prompt").get<std::string>();
    if (j.contains("grid")) {
      s.grid = tokenizer::grid_from_json(j.at("grid"));
    } else {
      const auto path = base / j.at("grid_path").get<std::string>();
      std::ifstream in(path);
      require(static_cast<bool>(in), ErrorKind::MissingArtifact, "cannot open grid " + path.string());
      s.grid = tokenizer::grid_from_json(nlohmann::json::parse(in));
    }
    if (j.contains("semantic_text") && !j.at("semantic_text").is_null()) {
      s.semantic_text = j.at("semantic_text").get<std::string>();
    }
    s.answer = j.at("answer").get<std::string>();
    // nlohmann::json sorts keys, so the answer decides the order
    std::map<std::string, std::string> fields = j.at("fields").get<std::map<std::string, std::string>>();
    std::vector<std::pair<std::size_t, std::string>> ranked;
    for (const auto& [name, value] : fields) {
      const auto at = s.paradigm == Paradigm::SingleQa ? 0 : s.answer.find(name + (s.paradigm == Paradigm::MultiQa ? ": " : " is "));
      require(at != std::string::npos, ErrorKind::FormatError, "field '" + name + "' does not appear in the answer");
      ranked.emplace_back(at, name);
    }
    std::sort(ranked.begin(), ranked.end());
    for (const auto& [at, name] : ranked) s.fields.emplace_back(name, fields.at(name));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, std::string("instruction record: ") + e.what());
  }
  require(evalkit::format_answer(s.paradigm, s.fields) == s.answer, ErrorKind::FormatError,
          "answer does not match its fields");
  return s;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<InstructionSample>& samples) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::MissingArtifact, "cannot write " + path.string());
  for (const auto& s : samples) out << to_json(s).dump() << "\n";
}

std::vector<InstructionSample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingArtifact, "cannot open " + path.string());
  std::vector<InstructionSample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line), path.parent_path()));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::FormatError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<int> balanced_subset(const std::vector<std::string>& labels, int k, std::uint64_t seed) {
  require(k >= 0 && k <= static_cast<int>(labels.size()), ErrorKind::PreconditionViolation,
          "cannot draw " + std::to_string(k) + " of " + std::to_string(labels.size()) + " samples");
  std::map<std::string, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
  Rng rng(seed);
  std::vector<std::vector<int>*> pools;
  for (auto& [label, idx] : by_class) {
    rng.shuffle(idx);
    pools.push_back(&idx);
  }
  std::vector<std::size_t> taken(pools.size(), 0);
  std::vector<int> out;
  // round-robin over classes; exhausted classes are skipped
  while (static_cast<int>(out.size()) < k) {
    for (std::size_t c = 0; c < pools.size() && static_cast<int>(out.size()) < k; ++c) {
      if (taken[c] < pools[c]->size()) out.push_back((*pools[c])[taken[c]++]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- tuning --------------------------------------------------------------------

std::vector<Stage3EpochLog> train_stage3(lm::LanguageModel<float>& model, const std::vector<InstructionSample>& samples,
                                         const Stage3Options& options,
                                         const std::function<void(const Stage3EpochLog&)>& on_epoch) {
  require(!samples.empty(), ErrorKind::EmptyBatch, "stage 3 needs at least one sample");
  require(options.epochs >= 1 && options.batch_size >= 1, ErrorKind::ConfigError, "epochs and batch size must be positive");
  if (options.lora && !model.adapted()) model.lora_wrap(*options.lora);
  std::vector<lm::Example> examples;
  for (const auto& s : samples) examples.push_back(make_example(s, model.vocab()));

  diff::AdamWConfig oc;
  oc.lr = options.lr;
  oc.weight_decay = options.weight_decay;
  diff::AdamW<float> opt(model.trainable_parameters(), oc);
  Rng rng(options.seed);
  std::vector<int> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  const long per_epoch = (static_cast<long>(order.size()) + options.batch_size - 1) / options.batch_size;
  const long total = per_epoch * options.epochs;
  long step = 0;
  std::vector<Stage3EpochLog> logs;
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    rng.shuffle(order);
    Stage3EpochLog log;
    log.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      std::vector<const lm::Example*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&examples[static_cast<std::size_t>(order[i])]);
      const double lr = diff::cosine_lr(step++, total, options.lr);
      opt.zero_grad();
      const auto loss = lm::example_loss(model, batch);
      diff::backward(loss);
      opt.step(lr);
      log.loss += loss.item() * static_cast<double>(end - start);
      log.lr = lr;
    }
    log.loss /= static_cast<double>(order.size());
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

double answer_loss(const lm::LanguageModel<float>& model, const std::vector<InstructionSample>& samples) {
  require(!samples.empty(), ErrorKind::EmptyBatch, "no samples");
  diff::NoGradGuard guard;
  double sum = 0.0;
  long count = 0;
  for (std::size_t start = 0; start < samples.size(); start += 32) {
    std::vector<lm::Example> ex;
    for (std::size_t i = start; i < std::min(samples.size(), start + 32); ++i) ex.push_back(make_example(samples[i], model.vocab()));
    std::vector<const lm::Example*> ptr;
    long n = 0;
    for (const auto& e : ex) {
      ptr.push_back(&e);
      n += std::count(e.target.begin(), e.target.end(), 1);
    }
    sum += lm::example_loss(model, ptr).item() * static_cast<double>(n);
    count += n;
  }
  return sum / static_cast<double>(count);
}

// ---- evaluation ----------------------------------------------------------------

std::string generate_answer(const lm::LanguageModel<float>& model, const InstructionSample& s, int max_new) {
  const auto prefix = make_prefix(s, model.vocab());
  lm::GenerateOptions o;
  o.max_new = max_new;
  o.constrain_text = true;
  return lm::decode_text(lm::generate(model, prefix, o), prefix.size(), model.vocab());
}

std::vector<double> choice_probabilities(const lm::LanguageModel<float>& model, const InstructionSample& s,
                                         const std::vector<std::string>& choices) {
  const auto lp = lm::score_continuations(model, make_prefix(s, model.vocab()), choices);
  const double mx = *std::max_element(lp.begin(), lp.end());
  std::vector<double> p;
  double z = 0.0;
  for (double v : lp) z += std::exp(v - mx);
  for (double v : lp) p.push_back(std::exp(v - mx) / z);
  return p;
}

QaResult evaluate_field(const lm::LanguageModel<float>& model, const std::vector<InstructionSample>& samples,
                        const std::string& field, const std::vector<std::string>& choices) {
  require(!samples.empty(), ErrorKind::EmptyBatch, "no samples to evaluate");
  QaResult r;
  std::vector<double> scores;
  std::vector<int> labels;
  const bool binary = choices.size() == 2;
  for (const auto& s : samples) {
    const auto it = std::find_if(s.fields.begin(), s.fields.end(), [&](const auto& f) { return f.first == field; });
    require(it != s.fields.end(), ErrorKind::PreconditionViolation, "sample lacks field '" + field + "'");
    const auto text = generate_answer(model, s);
    std::string pred;
    try {
      pred = evalkit::parse_answer(text, s.paradigm, field_order(s)).at(field);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ParseFailure) throw;
    }
    r.predictions.push_back(pred);
    r.targets.push_back(evalkit::canonicalize(it->second));
    if (binary && s.paradigm == Paradigm::SingleQa) {
      scores.push_back(choice_probabilities(model, s, choices)[1]);
      labels.push_back(evalkit::canonicalize(it->second) == evalkit::canonicalize(choices[1]));
    }
  }
  r.accuracy = evalkit::accuracy(r.predictions, r.targets);
  r.auc = scores.empty() ? std::nan("") : evalkit::auc(scores, labels);
  return r;
}

// ---- linear probing ------------------------------------------------------------

Eigen::MatrixXd probe_features(const lm::LanguageModel<float>& model, const std::vector<TokenGrid>& grids) {
  diff::NoGradGuard guard;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(grids.size()), model.config().model_dim);
  for (std::size_t start = 0; start < grids.size(); start += 32) {
    std::vector<lm::Sequence> seqs;
    for (std::size_t i = start; i < std::min(grids.size(), start + 32); ++i) {
      seqs.push_back(lm::flatten_grid(grids[i], model.vocab()));
    }
    std::vector<const lm::Sequence*> ptr;
    for (const auto& s : seqs) ptr.push_back(&s);
    const diff::Mat<float> h = model.hidden(ptr).value();
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < seqs.size(); ++k) {
      const auto mask = lm::fmri_mask(seqs[k]);
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(h.cols());
      int n = 0;
      for (std::size_t i = 0; i < seqs[k].size(); ++i, ++row) {
        if (!mask[i]) continue;
        acc += h.row(row).transpose().cast<double>();
        ++n;
      }
      out.row(static_cast<Eigen::Index>(start + k)) = acc.transpose() / n;
    }
  }
  return out;
}

ProbeResult linear_probe(const Eigen::MatrixXd& features, const std::vector<double>& targets, ProbeMode mode,
                         std::uint64_t seed, double l2) {
  const auto n = static_cast<int>(targets.size());
  require(features.rows() == n, ErrorKind::LengthMismatch, "one target per feature row");
  require(n >= 20, ErrorKind::TooFewSamples, "linear probing needs at least 20 samples, got " + std::to_string(n));
  std::vector<int> train, test;
  evalkit::split_indices(n, seed, train, test);
  const auto x = evalkit::Standardizer::fit(features, train).apply(features);
  ProbeResult r;
  r.n_train = static_cast<int>(train.size());
  r.n_test = static_cast<int>(test.size());
  if (mode == ProbeMode::Classify) {
    std::vector<int> y;
    for (double t : targets) {
      require(t == 0.0 || t == 1.0, ErrorKind::PreconditionViolation, "classification targets must be 0 or 1");
      y.push_back(static_cast<int>(t));
    }
    const auto model = evalkit::fit_logistic(x, y, train, l2);
    std::vector<int> pred, truth;
    std::vector<double> prob;
    for (int i : test) {
      prob.push_back(model.probability(x.row(i).transpose()));
      pred.push_back(prob.back() >= 0.5);
      truth.push_back(y[static_cast<std::size_t>(i)]);
    }
    r.accuracy = evalkit::accuracy(pred, truth);
    r.auc = evalkit::auc(prob, truth);
  } else {
    const auto model = evalkit::fit_ridge(x, targets, train, l2);
    std::vector<double> pred, truth;
    for (int i : test) {
      pred.push_back(model.predict(x.row(i).transpose()));
      truth.push_back(targets[static_cast<std::size_t>(i)]);
    }
    const auto m = evalkit::mae_pearson(pred, truth);
    r.mae = m.mae;
    r.r = m.r;
  }
  return r;
}

ProbeResult linear_probe(const lm::LanguageModel<float>& model, const std::vector<TokenGrid>& grids,
                         const std::vector<double>& targets, ProbeMode mode, std::uint64_t seed, double l2) {
  require(grids.size() >= 20, ErrorKind::TooFewSamples,
          "linear probing needs at least 20 samples, got " + std::to_string(grids.size()));
  return linear_probe(probe_features(model, grids), targets, mode, seed, l2);
}

}  // namespace neurotoken::instruct
