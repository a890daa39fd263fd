#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "neurotoken/cli.hpp"
#include "neurotoken/error.hpp"

namespace neurotoken::cli {

namespace fs = std::filesystem;
using evalkit::Paradigm;
using nlohmann::json;
using nlohmann::ordered_json;
using tokenizer::TokenGrid;

namespace {

std::string read_text(const fs::path& path) {
  require_artifact(path);
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json read_json(const fs::path& path) {
  require_artifact(path);
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const ordered_json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorKind::FormatError, "cannot write " + path.string());
}

// NaN and infinities become null.
ordered_json number_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

void check_upstream(const RunConfig& c, const fs::path& dir, const Logger& log) {
  const auto path = dir / "meta.json";
  if (!fs::exists(path)) return;
  const auto m = read_json(path);
  if (m.value("config_hash", std::string()) != config_hash(c)) {
    log.warn("config_changed", {{"artifact", dir.string()}, {"recorded", m.value("config_hash", std::string())}});
  }
}

std::vector<signal::LabeledScan> load_preprocessed(const RunConfig& c) {
  return signal::load_cohort(layout(c).manifest(layout(c).preprocess()));
}

// Paragraphs in cohort order.
std::vector<std::string> load_paragraphs(const RunConfig& c, const std::vector<signal::LabeledScan>& cohort) {
  std::map<std::string, std::string> by_subject;
  for (auto& p : corpus::read_paragraphs(layout(c).paragraphs())) by_subject[p.subject_id] = std::move(p.text);
  std::vector<std::string> out;
  for (const auto& item : cohort) {
    const auto it = by_subject.find(item.scan.subject_id);
    require(it != by_subject.end(), ErrorKind::FormatError,
            layout(c).paragraphs().string() + ": no paragraph for " + item.scan.subject_id);
    out.push_back(it->second);
  }
  return out;
}

std::vector<TokenGrid> load_grids(const RunConfig& c, const std::vector<signal::LabeledScan>& cohort) {
  std::vector<std::string> subjects;
  auto grids = read_grids(layout(c).grids(), &subjects);
  require(subjects.size() == cohort.size(), ErrorKind::FormatError,
          layout(c).grids().string() + ": grid count differs from the cohort");
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    require(subjects[i] == cohort[i].scan.subject_id, ErrorKind::FormatError,
            layout(c).grids().string() + ": subject order differs from the cohort");
  }
  return grids;
}

tokenizer::TokenizerConfig stored_tokenizer_config(const RunConfig& c) {
  return tokenizer::tokenizer_config_from_json(read_json(layout(c).tokenizer() / "tokenizer.json").at("config"));
}

void subject_split(const RunConfig& c, int n, std::vector<int>& train, std::vector<int>& test) {
  evalkit::split_indices(n, c.seed, train, test, c.train_fraction);
}

instruct::BinScheme load_bins(const RunConfig& c) {
  return instruct::bin_scheme_from_json(read_json(layout(c).bins()).at("bins"));
}

std::vector<int> load_test_split(const RunConfig& c) {
  return read_json(layout(c).split()).at("test").get<std::vector<int>>();
}

// Manifest plus every scan file of a saved cohort.
std::vector<std::string> cohort_files(const std::vector<signal::LabeledScan>& cohort) {
  std::vector<std::string> files = {"manifest.jsonl"};
  for (const auto& item : cohort) files.push_back("scans/" + item.scan.subject_id + ".nts");
  return files;
}

void write_report(const fs::path& path, const evalkit::Report& r) {
  write_json(path, ordered_json(evalkit::to_json(r)));
}

}  // namespace

// ---- artifact helpers ----

ordered_json to_json(const corpus::ScanDescriptors& d) {
  ordered_json j;
  j["subject_id"] = d.subject_id;
  ordered_json values = ordered_json::array();
  for (const auto& v : d.values) {
    ordered_json e;
    e["id"] = v.id;
    ordered_json nums = ordered_json::array();
    for (double x : v.values) nums.push_back(number_or_null(x));
    e["values"] = nums;
    if (!v.labels.empty()) e["labels"] = v.labels;
    if (!v.detail.empty()) e["detail"] = v.detail;
    values.push_back(e);
  }
  j["values"] = values;
  return j;
}

namespace {

corpus::ScanDescriptors descriptors_from_json(const json& j) {
  corpus::ScanDescriptors d;
  d.subject_id = j.at("subject_id").get<std::string>();
  for (const auto& e : j.at("values")) {
    corpus::DescriptorValue v;
    v.id = e.at("id").get<std::string>();
    for (const auto& x : e.at("values")) v.values.push_back(x.is_null() ? std::nan("") : x.get<double>());
    v.labels = e.value("labels", std::vector<std::string>{});
    v.detail = e.value("detail", std::string());
    d.values.push_back(std::move(v));
  }
  return d;
}

std::vector<corpus::ScanDescriptors> read_descriptors(const fs::path& path) {
  require_artifact(path);
  std::ifstream in(path);
  std::vector<corpus::ScanDescriptors> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(descriptors_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      fail(ErrorKind::FormatError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

void write_grids(const fs::path& path, const std::vector<std::string>& subjects, const std::vector<TokenGrid>& grids) {
  require(subjects.size() == grids.size(), ErrorKind::LengthMismatch, "one subject id per grid");
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  for (std::size_t i = 0; i < grids.size(); ++i) {
    ordered_json j;
    j["subject_id"] = subjects[i];
    j["grid"] = tokenizer::to_json(grids[i]);
    out << j.dump() << '\n';
  }
  require(static_cast<bool>(out), ErrorKind::FormatError, "cannot write " + path.string());
}

std::vector<TokenGrid> read_grids(const fs::path& path, std::vector<std::string>* subjects) {
  require_artifact(path);
  std::ifstream in(path);
  std::vector<TokenGrid> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      out.push_back(tokenizer::grid_from_json(j.at("grid")));
      if (subjects) subjects->push_back(j.at("subject_id").get<std::string>());
    } catch (const json::exception& e) {
      fail(ErrorKind::FormatError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---- tasks ----

instruct::Field task_field(const std::string& task, const signal::LabeledScan& item, const instruct::BinScheme& bins) {
  if (task == "sex") {
    return {"sex", "What is the sex of the subject?", task_choices(task, bins), item.binary_factor ? "female" : "male"};
  }
  if (task == "score") {
    return {"score", "Which score bin does the subject fall in?", task_choices(task, bins),
            bins.label(item.continuous_target)};
  }
  fail(ErrorKind::ConfigError, "instruct.tasks: unknown task '" + task + "'");
}

std::vector<std::string> task_choices(const std::string& task, const instruct::BinScheme& bins) {
  if (task == "sex") return {"male", "female"};
  if (task == "score") return bins.labels;
  fail(ErrorKind::ConfigError, "instruct.tasks: unknown task '" + task + "'");
}

std::vector<instruct::InstructionSample> build_samples(Paradigm paradigm, const std::vector<std::string>& tasks,
                                                       const std::vector<signal::LabeledScan>& cohort,
                                                       const std::vector<TokenGrid>& grids,
                                                       const std::vector<int>& subjects,
                                                       const instruct::BinScheme& bins,
                                                       const corpus::PromptBank& bank, std::uint64_t seed) {
  std::vector<instruct::InstructionSample> out;
  const std::string pname = evalkit::to_string(paradigm);
  for (int i : subjects) {
    const auto& item = cohort[static_cast<std::size_t>(i)];
    const auto& grid = grids[static_cast<std::size_t>(i)];
    const auto sample_seed = [&](const std::string& tag) {
      return fnv1a(pname + "/" + tag + "/" + std::to_string(i), fnv1a(std::to_string(seed)));
    };
    if (paradigm == Paradigm::SingleQa) {
      for (const auto& task : tasks) {
        std::optional<std::string> semantic;
        if (task == "score") semantic = item.semantic_text;
        out.push_back(instruct::format_sample(paradigm, bank, grid, {task_field(task, item, bins)}, semantic,
                                              sample_seed(task)));
      }
    } else {
      std::vector<instruct::Field> fields;
      std::optional<std::string> semantic;
      for (const auto& task : tasks) {
        fields.push_back(task_field(task, item, bins));
        if (task == "score") semantic = item.semantic_text;
      }
      out.push_back(instruct::format_sample(paradigm, bank, grid, fields, semantic, sample_seed("all")));
    }
  }
  return out;
}

evalkit::Report evaluate_task(const lm::LanguageModel<float>& model,
                              const std::vector<instruct::InstructionSample>& samples, const std::string& task,
                              const instruct::BinScheme& bins, const std::vector<double>& targets,
                              const RunConfig& config) {
  std::vector<instruct::InstructionSample> mine;
  for (const auto& s : samples) {
    if (std::any_of(s.fields.begin(), s.fields.end(), [&](const auto& f) { return f.first == task; })) {
      mine.push_back(s);
    }
  }
  require(!mine.empty(), ErrorKind::EmptyBatch, "no samples ask for '" + task + "'");
  const auto choices = task_choices(task, bins);
  const auto qa = instruct::evaluate_field(model, mine, task, choices);

  evalkit::Report r;
  r.task = task;
  r.paradigm = evalkit::to_string(mine.front().paradigm);
  r.n = static_cast<int>(mine.size());
  r.seed = config.seed;
  r.config_hash = config_hash(config);
  r.metrics["accuracy"] = qa.accuracy;
  if (std::isfinite(qa.auc)) r.metrics["auc"] = qa.auc;

  if (task == "score") {
    require(targets.size() == mine.size(), ErrorKind::LengthMismatch, "one continuous target per score sample");
    std::vector<double> decoded;
    int failures = 0;
    for (const auto& p : qa.predictions) {
      try {
        decoded.push_back(bins.decode(bins.parse_label(p)));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::ParseFailure) throw;
        ++failures;
        decoded.push_back(bins.decode((bins.n_bins() - 1) / 2));
      }
    }
    r.metrics["parse_failures"] = failures;
    r.metrics["mae"] = evalkit::mae_pearson(decoded, targets).mae;
    try {
      r.metrics["r"] = evalkit::pearson_r(decoded, targets);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateTarget) throw;
      r.metrics["r"] = 0.0;
    }
  }

  if (mine.front().paradigm == Paradigm::OpenEnded) {
    int matched = 0;
    for (const auto& s : mine) {
      std::vector<evalkit::FieldRule> rules;
      std::map<std::string, std::string> wanted;
      for (const auto& [name, value] : s.fields) {
        evalkit::FieldRule rule;
        rule.field = name;
        rule.canonical_values = task_choices(name, bins);
        for (const auto& v : rule.canonical_values) rule.synonyms[v] = {v};
        rules.push_back(rule);
        wanted[name] = value;
      }
      const auto text = instruct::generate_answer(model, s, config.max_new);
      matched += evalkit::match_open_ended(text, rules, wanted).overall;
    }
    r.metrics["overall_match"] = static_cast<double>(matched) / static_cast<double>(mine.size());
  }
  return r;
}

// ---- stages ----

void run_synth(const RunConfig& c, const Logger& log) {
  const auto dir = layout(c).synth();
  const auto cohort = signal::generate_cohort(c.synth);
  signal::save_cohort(cohort, dir);
  write_stage_meta(c, "synth", dir, cohort_files(cohort));
  log.info("synth", {{"subjects", cohort.size()}, {"manifest_hash", file_hash(layout(c).manifest(dir))}});
}

void run_preprocess(const RunConfig& c, const Logger& log) {
  const auto in = layout(c).manifest(layout(c).synth());
  require_artifact(in);
  check_upstream(c, layout(c).synth(), log);
  const auto cohort = signal::preprocess_cohort(signal::load_cohort(in), c.target_tr, c.target_t);
  const auto dir = layout(c).preprocess();
  signal::save_cohort(cohort, dir);
  write_stage_meta(c, "preprocess", dir, cohort_files(cohort));
  log.info("preprocess", {{"subjects", cohort.size()}, {"manifest_hash", file_hash(layout(c).manifest(dir))}});
}

void run_features(const RunConfig& c, const Logger& log) {
  require_artifact(layout(c).manifest(layout(c).preprocess()));
  check_upstream(c, layout(c).preprocess(), log);
  const auto cohort = load_preprocessed(c);
  const int threads = c.deterministic ? 1 : c.threads;
  const auto scans = corpus::extract_cohort(cohort, c.features, threads);
  const auto dir = layout(c).features();
  fs::create_directories(dir);
  {
    std::ofstream out(layout(c).descriptors());
    for (const auto& s : scans) out << to_json(s).dump() << '\n';
    require(static_cast<bool>(out), ErrorKind::FormatError, "cannot write " + layout(c).descriptors().string());
  }
  ordered_json stats;
  stats["meta"] = meta(c);
  stats["stats"] = corpus::to_json(corpus::compute_cohort_stats(scans));
  write_json(layout(c).stats(), stats);
  write_stage_meta(c, "features", dir, {"descriptors.jsonl", "stats.json"});
  log.info("features", {{"subjects", scans.size()}, {"threads", threads}});
}

void run_corpus(const RunConfig& c, const Logger& log) {
  check_upstream(c, layout(c).features(), log);
  const auto scans = read_descriptors(layout(c).descriptors());
  const auto stats = corpus::stats_from_json(read_json(layout(c).stats()).at("stats"));
  const auto built = corpus::build_corpus(scans, stats);
  const auto dir = layout(c).corpus();
  fs::create_directories(dir);
  corpus::write_corpus(built, layout(c).records(), layout(c).paragraphs());
  write_stage_meta(c, "corpus", dir, {"records.jsonl", "paragraphs.jsonl"});
  log.info("corpus", {{"records", built.records.size()}, {"paragraphs", built.paragraphs.size()}});
}

void run_train_tokenizer(const RunConfig& c, const Logger& log) {
  require_artifact(layout(c).manifest(layout(c).preprocess()));
  require_artifact(layout(c).paragraphs());
  check_upstream(c, layout(c).corpus(), log);
  const auto cohort = load_preprocessed(c);
  const auto paragraphs = load_paragraphs(c, cohort);
  const auto pool = read_text(c.text_pool);

  std::vector<signal::RoiTimeSeries> scans;
  for (const auto& item : cohort) scans.push_back(item.scan);
  auto cfg = c.tokenizer;
  cfg.n_roi = scans.front().n_roi();
  const auto table = tokenizer::initial_text_table(cfg.embed_dim, c.seed);

  auto result = tokenizer::train_stage1(scans, paragraphs, table, pool, cfg, c.stage1,
                                        [&](const tokenizer::Stage1EpochLog& e) {
                                          log.info("stage1_epoch", {{"epoch", e.epoch},
                                                                    {"recon_mse", e.recon_mse},
                                                                    {"commit", e.commit},
                                                                    {"contrast", e.contrast},
                                                                    {"domain", e.domain},
                                                                    {"domain_accuracy", e.domain_accuracy},
                                                                    {"usage", e.usage_fraction},
                                                                    {"lr", e.lr}});
                                        });
  const auto dir = layout(c).tokenizer();
  fs::create_directories(dir);
  tokenizer::save_tokenizer(result.tokenizer, layout(c).tokenizer_checkpoint());

  ordered_json summary;
  summary["meta"] = meta(c);
  summary["config"] = tokenizer::to_json(cfg);
  summary["heldout_domain_accuracy"] = result.heldout_domain_accuracy;
  ordered_json epochs = ordered_json::array();
  for (const auto& e : result.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"recon_mse", e.recon_mse},
                      {"commit", e.commit},
                      {"contrast", e.contrast},
                      {"domain", e.domain},
                      {"domain_accuracy", e.domain_accuracy},
                      {"usage", e.usage_fraction},
                      {"dead_codes_reset", e.dead_codes_reset}});
  }
  summary["epochs"] = epochs;
  write_json(dir / "tokenizer.json", summary);

  std::vector<TokenGrid> grids;
  std::vector<std::string> subjects;
  for (const auto& item : cohort) {
    grids.push_back(tokenizer::tokenize_scan(item.scan, result.tokenizer));
    subjects.push_back(item.scan.subject_id);
  }
  write_grids(layout(c).grids(), subjects, grids);
  write_stage_meta(c, "train-tokenizer", dir, {"tokenizer.fmtk", "tokenizer.json", "grids.jsonl"});
  log.info("train_tokenizer", {{"heldout_domain_accuracy", result.heldout_domain_accuracy},
                               {"usage", result.epochs.empty() ? 0.0 : result.epochs.back().usage_fraction}});
}

void run_train_lm(const RunConfig& c, const Logger& log) {
  require_artifact(layout(c).grids());
  check_upstream(c, layout(c).tokenizer(), log);
  const auto cohort = load_preprocessed(c);
  const auto grids = load_grids(c, cohort);
  const auto paragraphs = load_paragraphs(c, cohort);
  const auto pool = read_text(c.text_pool);
  const auto tok_cfg = stored_tokenizer_config(c);

  auto lm_cfg = c.lm;
  lm_cfg.vocab.codebook_size = tok_cfg.codebook_size;
  lm::LanguageModel<float> model(lm_cfg);
  if (c.init_from_tokenizer) {
    if (lm_cfg.model_dim == tok_cfg.embed_dim) {
      const auto tok = tokenizer::load_tokenizer(tok_cfg, layout(c).tokenizer_checkpoint());
      model.init_text_rows(tokenizer::initial_text_table(tok_cfg.embed_dim, c.seed));
      model.init_fmri_rows(tok.codebook().value());
    } else {
      log.warn("init_skipped", {{"reason", "lm.model_dim differs from tokenizer.embed_dim"}});
    }
  }

  std::vector<int> train, test;
  subject_split(c, static_cast<int>(cohort.size()), train, test);
  std::vector<TokenGrid> g;
  std::vector<std::string> p;
  for (int i : train) {
    g.push_back(grids[static_cast<std::size_t>(i)]);
    p.push_back(paragraphs[static_cast<std::size_t>(i)]);
  }
  const auto logs = lm::train_stage2(model, g, p, pool, c.stage2, [&](const lm::Stage2EpochLog& e) {
    log.info("stage2_epoch",
             {{"epoch", e.epoch}, {"f2t", e.f2t}, {"f2f", e.f2f}, {"t2t", e.t2t}, {"total", e.total}, {"lr", e.lr}});
  });

  const auto dir = layout(c).lm();
  fs::create_directories(dir);
  lm::save_model(model, layout(c).lm_stem());
  ordered_json summary;
  summary["meta"] = meta(c);
  summary["n_train"] = g.size();
  summary["parameters"] = nn::count_parameters(model.named_parameters());
  ordered_json epochs = ordered_json::array();
  for (const auto& e : logs) {
    epochs.push_back({{"epoch", e.epoch}, {"f2t", e.f2t}, {"f2f", e.f2f}, {"t2t", e.t2t}, {"total", e.total}});
  }
  summary["epochs"] = epochs;
  write_json(dir / "stage2.json", summary);
  write_stage_meta(c, "train-lm", dir, {"model.fmlm", "model.vocab.json", "model.config.json", "stage2.json"});
  log.info("train_lm", {{"n_train", g.size()}, {"final_total", logs.empty() ? 0.0 : logs.back().total}});
}

void run_instruct(const RunConfig& c, const Logger& log) {
  require_artifact(layout(c).lm_stem().string() + ".fmlm");
  check_upstream(c, layout(c).lm(), log);
  const auto cohort = load_preprocessed(c);
  const auto grids = load_grids(c, cohort);
  const auto bank = corpus::load_prompt_bank(c.prompts);

  std::vector<int> train, test;
  subject_split(c, static_cast<int>(cohort.size()), train, test);
  std::vector<double> train_targets;
  for (int i : train) train_targets.push_back(cohort[static_cast<std::size_t>(i)].continuous_target);
  const auto bins = instruct::make_bins(train_targets, c.n_bins);

  if (c.k_shot > 0) {
    std::vector<std::string> labels;
    for (int i : train) labels.push_back(cohort[static_cast<std::size_t>(i)].binary_factor ? "female" : "male");
    std::vector<int> picked;
    for (int k : instruct::balanced_subset(labels, c.k_shot, c.seed)) picked.push_back(train[static_cast<std::size_t>(k)]);
    train = picked;
  }

  const auto dir = layout(c).instruct();
  fs::create_directories(dir);
  ordered_json bj;
  bj["meta"] = meta(c);
  bj["bins"] = instruct::to_json(bins);
  write_json(layout(c).bins(), bj);
  ordered_json sj;
  sj["meta"] = meta(c);
  sj["train"] = train;
  sj["test"] = test;
  write_json(layout(c).split(), sj);
  write_stage_meta(c, "instruct", dir, {"bins.json", "split.json"});

  for (const auto paradigm : c.paradigms) {
    const auto pdir = layout(c).paradigm_dir(paradigm);
    fs::create_directories(pdir);
    const auto train_samples = build_samples(paradigm, c.tasks, cohort, grids, train, bins, bank, c.seed);
    const auto test_samples = build_samples(paradigm, c.tasks, cohort, grids, test, bins, bank, c.seed + 1);
    instruct::write_jsonl(pdir / "train.jsonl", train_samples);
    instruct::write_jsonl(pdir / "test.jsonl", test_samples);

    auto model = lm::load_model(layout(c).lm_stem());
    auto options = c.stage3;
    if (c.use_lora) options.lora = c.lora;
    const std::string pname = evalkit::to_string(paradigm);
    const auto logs = instruct::train_stage3(model, train_samples, options, [&](const instruct::Stage3EpochLog& e) {
      log.info("stage3_epoch", {{"paradigm", pname}, {"epoch", e.epoch}, {"loss", e.loss}, {"lr", e.lr}});
    });
    lm::save_model(model, layout(c).tuned_stem(paradigm));

    ordered_json summary;
    summary["meta"] = meta(c);
    summary["paradigm"] = pname;
    summary["n_train"] = train_samples.size();
    summary["n_test"] = test_samples.size();
    summary["trainable_parameters"] = model.trainable_count();
    ordered_json epochs = ordered_json::array();
    for (const auto& e : logs) epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}});
    summary["epochs"] = epochs;
    write_json(pdir / "stage3.json", summary);
    write_stage_meta(c, "instruct/" + pname, pdir,
                     {"train.jsonl", "test.jsonl", "model.fmlm", "model.vocab.json", "model.config.json",
                      "stage3.json"});
    log.info("instruct", {{"paradigm", pname}, {"n_train", train_samples.size()},
                          {"final_loss", logs.empty() ? 0.0 : logs.back().loss}});
  }
}

void run_eval(const RunConfig& c, const Logger& log) {
  for (const auto paradigm : c.paradigms) {
    require_artifact(layout(c).tuned_stem(paradigm).string() + ".fmlm");
  }
  require_artifact(layout(c).bins());
  require_artifact(layout(c).split());
  check_upstream(c, layout(c).instruct(), log);
  const auto cohort = load_preprocessed(c);
  const auto bins = load_bins(c);
  const auto test = load_test_split(c);
  std::vector<double> targets;
  for (int i : test) targets.push_back(cohort.at(static_cast<std::size_t>(i)).continuous_target);

  fs::create_directories(layout(c).eval());
  for (const auto paradigm : c.paradigms) {
    const auto pdir = layout(c).paradigm_dir(paradigm);
    const auto samples = instruct::read_jsonl(pdir / "test.jsonl");
    const auto model = lm::load_model(layout(c).tuned_stem(paradigm));
    for (const auto& task : c.tasks) {
      const auto report = evaluate_task(model, samples, task, bins, targets, c);
      const auto path = layout(c).eval() / (task + "_" + evalkit::to_string(paradigm) + ".json");
      write_report(path, report);
      log.info("eval", {{"task", task}, {"paradigm", report.paradigm}, {"metrics", report.metrics}});
    }
  }
}

void run_probe(const RunConfig& c, const Logger& log) {
  require_artifact(layout(c).lm_stem().string() + ".fmlm");
  check_upstream(c, layout(c).lm(), log);
  const auto cohort = load_preprocessed(c);
  const auto grids = load_grids(c, cohort);
  const auto model = lm::load_model(layout(c).lm_stem());
  const auto features = instruct::probe_features(model, grids);

  fs::create_directories(layout(c).probe());
  for (const auto& task : c.tasks) {
    std::vector<double> y;
    for (const auto& item : cohort) y.push_back(task == "sex" ? item.binary_factor : item.continuous_target);
    const auto mode = task == "sex" ? instruct::ProbeMode::Classify : instruct::ProbeMode::Regress;
    const auto pr = instruct::linear_probe(features, y, mode, c.seed, c.probe_l2);
    evalkit::Report r;
    r.task = task;
    r.paradigm = "linear_probe";
    r.n = pr.n_test;
    r.seed = c.seed;
    r.config_hash = config_hash(c);
    if (mode == instruct::ProbeMode::Classify) {
      r.metrics["accuracy"] = pr.accuracy;
      r.metrics["auc"] = pr.auc;
    } else {
      r.metrics["mae"] = pr.mae;
      r.metrics["r"] = pr.r;
    }
    write_report(layout(c).probe() / (task + "_linear_probe.json"), r);
    log.info("probe", {{"task", task}, {"metrics", r.metrics}});
  }
}

void run_pipeline(const RunConfig& c, const Logger& log) {
  run_synth(c, log);
  run_preprocess(c, log);
  run_features(c, log);
  run_corpus(c, log);
  run_train_tokenizer(c, log);
  run_train_lm(c, log);
  run_instruct(c, log);
  run_eval(c, log);
  run_probe(c, log);
}

// ---- report ----

std::vector<evalkit::Report> collect_reports(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    require_artifact(in);
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".json") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(in);
    }
  }
  require(!files.empty(), ErrorKind::MissingArtifact, "no metrics reports found");
  std::vector<evalkit::Report> out;
  std::optional<int> version;
  fs::path first;
  for (const auto& f : files) {
    const auto j = read_json(f);
    const int v = j.value("format_version", -1);
    if (!version) {
      version = v;
      first = f;
    }
    require(v == *version, ErrorKind::FormatError,
            f.string() + ": format_version " + std::to_string(v) + " differs from " + first.string() + " (" +
                std::to_string(*version) + ")");
    require(v == evalkit::kReportFormatVersion, ErrorKind::FormatError,
            f.string() + ": unsupported format_version " + std::to_string(v));
    try {
      out.push_back(evalkit::report_from_json(j));
    } catch (const json::exception& e) {
      fail(ErrorKind::FormatError, f.string() + ": " + e.what());
    }
  }
  return out;
}

std::string format_report_table(const std::vector<evalkit::Report>& reports) {
  const std::vector<std::string> columns = {"accuracy", "auc", "mae", "r", "overall_match"};
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"task", "paradigm", "n"});
  rows.back().insert(rows.back().end(), columns.begin(), columns.end());
  rows.back().push_back("seed");
  rows.back().push_back("config");
  for (const auto& r : reports) {
    std::vector<std::string> row = {r.task, r.paradigm, std::to_string(r.n)};
    for (const auto& col : columns) {
      const auto it = r.metrics.find(col);
      if (it == r.metrics.end()) {
        row.push_back("-");
      } else {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os.precision(3);
        os << it->second;
        row.push_back(os.str());
      }
    }
    row.push_back(std::to_string(r.seed));
    row.push_back(r.config_hash);
    rows.push_back(row);
  }
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::string line;
    for (std::size_t i = 0; i < rows[k].size(); ++i) {
      std::string cell = rows[k][i];
      cell.resize(width[i], ' ');
      line += (i ? "  " : "") + cell;
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
    if (k == 0) {
      std::size_t total = 0;
      for (std::size_t i = 0; i < width.size(); ++i) total += width[i] + (i ? 2 : 0);
      out += std::string(total, '-') + "\n";
    }
  }
  return out;
}

}  // namespace neurotoken::cli
