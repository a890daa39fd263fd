#include "neurotoken/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "neurotoken/error.hpp"
#include "neurotoken/evalkit.hpp"
#include "neurotoken/features.hpp"

namespace neurotoken::corpus {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::string sig3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

std::string fixed2(double v) {
  if (std::abs(v) < 0.005) v = 0.0;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string join_names(const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i > 0) out += i + 1 == names.size() ? " and " : ", ";
    out += names[i];
  }
  return out;
}

std::string capitalized(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

}  // namespace

std::string level_name(Level level) {
  switch (level) {
    case Level::MarkedlyLow:
      return "markedly_low";
    case Level::Low:
      return "low";
    case Level::Typical:
      return "typical";
    case Level::High:
      return "high";
    case Level::MarkedlyHigh:
      return "markedly_high";
  }
  return "typical";
}

std::string level_phrase(Level level) {
  auto name = level_name(level);
  std::replace(name.begin(), name.end(), '_', ' ');
  return name;
}

Level level_from_name(const std::string& name) {
  for (auto l : {Level::MarkedlyLow, Level::Low, Level::Typical, Level::High, Level::MarkedlyHigh}) {
    if (level_name(l) == name) return l;
  }
  fail(ErrorKind::FormatError, "unknown level '" + name + "'");
}

Level level_for(double z) {
  if (z < -2.0) return Level::MarkedlyLow;
  if (z < -1.0) return Level::Low;
  if (z <= 1.0) return Level::Typical;
  if (z <= 2.0) return Level::High;
  return Level::MarkedlyHigh;
}

ZLevel zscore_level(double value, const Stat& stat) {
  if (stat.degenerate() || !std::isfinite(value)) return ZLevel{0.0, Level::Typical, true};
  const double z = (value - stat.mean) / stat.std;
  return ZLevel{z, level_for(z), false};
}

const std::vector<DescriptorSpec>& default_registry() {
  static const std::vector<DescriptorSpec> registry = {
      {"fc_network_pair", "fc", ValueKind::List, "Mean functional connectivity"},
      {"fc_top_patterns", "fc", ValueKind::Scalar, "their mean strength"},
      {"fc_bottom_patterns", "fc", ValueKind::Scalar, "their mean strength"},
      {"fg_range_1", "gradient", ValueKind::Scalar, "The range of functional gradient 1"},
      {"fg_range_2", "gradient", ValueKind::Scalar, "The range of functional gradient 2"},
      {"fg_range_3", "gradient", ValueKind::Scalar, "The range of functional gradient 3"},
      {"fg_variance", "gradient", ValueKind::List, "Functional gradient variance"},
      {"fg_network_values", "gradient", ValueKind::List, "The mean position along gradient 1"},
      {"ica_network_amplitude", "ica", ValueKind::List, "Network signal amplitude"},
      {"ica_network_variability", "ica", ValueKind::List, "Network signal variability"},
      {"ica_network_spectral_ratio", "ica", ValueKind::List, "The low to high frequency power ratio"},
      {"ica_network_fnc", "ica", ValueKind::List, "Functional network connectivity"},
      {"ica_network_falff", "ica", ValueKind::List, "Network fALFF"},
      {"ica_overall_amplitude", "ica", ValueKind::Scalar, "Overall component amplitude"},
      {"ica_overall_variability", "ica", ValueKind::Scalar, "Overall component variability"},
      {"ica_overall_spectral_ratio", "ica", ValueKind::Scalar, "The overall component spectral ratio"},
      {"graph_network_strength", "graph", ValueKind::List, "Network connection strength"},
      {"graph_modularity", "graph", ValueKind::Scalar, "Network modularity"},
      {"graph_global_efficiency", "graph", ValueKind::Scalar, "Global efficiency"},
      {"graph_avg_clustering", "graph", ValueKind::Scalar, "Average clustering"},
  };
  return registry;
}

const DescriptorSpec& find_descriptor(const std::string& id) {
  for (const auto& spec : default_registry()) {
    if (spec.id == id) return spec;
  }
  fail(ErrorKind::UnknownDescriptor, "descriptor '" + id + "' is not in the registry");
}

namespace {

// Numerical degeneracies turn into missing values; anything else propagates.
template <typename F>
bool computed(F&& f) {
  try {
    f();
    return true;
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::DegenerateAffinity:
      case ErrorKind::NoConvergence:
      case ErrorKind::NoEdges:
      case ErrorKind::PreconditionViolation:
        return false;
      default:
        throw;
    }
  }
}

std::string edge_text(const signal::RoiTimeSeries& scan, const std::vector<features::Edge>& edges, bool strongest) {
  std::vector<std::string> parts;
  for (const auto& e : edges) {
    parts.push_back(scan.roi_name(e.i) + "-" + scan.roi_name(e.j) + " (r = " + sig3(e.value) + ")");
  }
  return std::string(strongest ? "The strongest connections are " : "The weakest connections are ") +
         join_names(parts);
}

}  // namespace

ScanDescriptors extract_descriptors(const signal::RoiTimeSeries& scan, const FeatureConfig& config) {
  signal::validate(scan);
  const int n_net = static_cast<int>(scan.network_names.size());
  const auto& names = scan.network_names;
  std::vector<std::string> net_labels(names.begin(), names.end());
  std::vector<std::string> pair_labels, pair_labels_within;
  for (int a = 0; a < n_net; ++a) {
    for (int b = a; b < n_net; ++b) {
      pair_labels_within.push_back(names[static_cast<std::size_t>(a)] + "-" + names[static_cast<std::size_t>(b)]);
      if (a != b) pair_labels.push_back(pair_labels_within.back());
    }
  }

  std::map<std::string, DescriptorValue> out;
  auto put = [&](const std::string& id, std::vector<double> values, std::vector<std::string> labels = {},
                 std::string detail = {}) {
    out[id] = DescriptorValue{id, std::move(values), std::move(labels), std::move(detail)};
  };

  const auto fc = features::fc_matrix(scan);

  std::vector<double> pair_values;
  for (int a = 0; a < n_net; ++a) {
    for (int b = a; b < n_net; ++b) pair_values.push_back(features::network_pair_value(fc, scan.network_of, a, b));
  }
  put("fc_network_pair", pair_values, pair_labels_within);

  const int n_pairs = fc.size() * (fc.size() - 1) / 2;
  const auto edges = features::top_bottom_edges(fc, std::min(config.edge_k, n_pairs));
  auto mean_of = [](const std::vector<features::Edge>& es) {
    double s = 0.0;
    for (const auto& e : es) s += e.value;
    return s / static_cast<double>(es.size());
  };
  put("fc_top_patterns", {mean_of(edges.top)}, {}, edge_text(scan, edges.top, true));
  put("fc_bottom_patterns", {mean_of(edges.bottom)}, {}, edge_text(scan, edges.bottom, false));

  const int k = config.gradient_components;
  std::vector<double> ranges(static_cast<std::size_t>(std::max(k, 3)), kMissing);
  std::vector<double> variances(3, kMissing);
  std::vector<double> net_grad(static_cast<std::size_t>(n_net), kMissing);
  computed([&] {
    const auto emb = features::diffusion_gradients(fc, k, config.gradient_keep, config.gradient_alpha);
    const auto gs = features::gradient_stats(emb, scan.network_of);
    for (int c = 0; c < 3; ++c) {
      ranges[static_cast<std::size_t>(c)] = gs.ranges[static_cast<std::size_t>(c)];
      variances[static_cast<std::size_t>(c)] = gs.variances[static_cast<std::size_t>(c)];
    }
    for (const auto& [net, v] : gs.network_means) net_grad[static_cast<std::size_t>(net)] = v;
  });
  put("fg_range_1", {ranges[0]});
  put("fg_range_2", {ranges[1]});
  put("fg_range_3", {ranges[2]});
  put("fg_variance", variances, {"gradient 1", "gradient 2", "gradient 3"});
  put("fg_network_values", net_grad, net_labels);

  // Network-level time courses stand in for per-network ICA components.
  const Eigen::MatrixXd tcs = features::network_mean_timecourses(scan);
  std::vector<double> amp, var, ratio, falff;
  for (int a = 0; a < n_net; ++a) {
    const Eigen::RowVectorXd row = tcs.row(a);
    const auto s = features::spectral_stats(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                                            scan.tr_seconds, config.band_lo, config.band_hi);
    amp.push_back(s.amplitude);
    var.push_back(s.variability);
    ratio.push_back(s.spectral_ratio);
    falff.push_back(s.falff);
  }
  put("ica_network_amplitude", amp, net_labels);
  put("ica_network_variability", var, net_labels);
  put("ica_network_spectral_ratio", ratio, net_labels);
  std::vector<double> fnc_values;
  const auto fnc = features::fnc(tcs);
  for (int a = 0; a < n_net; ++a) {
    for (int b = a + 1; b < n_net; ++b) fnc_values.push_back(fnc.values(a, b));
  }
  put("ica_network_fnc", fnc_values, pair_labels);
  put("ica_network_falff", falff, net_labels);

  // Overall measures: component statistics scaled by each component's
  // contribution to the ROI signals, averaged over components. Invariant to
  // component order and sign. Near-Gaussian sources often keep FastICA from
  // meeting its tolerance; the last iterate is used then.
  double overall_amp = kMissing, overall_var = kMissing, overall_ratio = kMissing;
  computed([&] {
    const auto ica = features::fastica(scan.data, std::min(n_net, scan.n_roi()), config.seed,
                                       config.ica_max_iterations, config.ica_tolerance, true);
    double a_sum = 0.0, v_sum = 0.0, r_sum = 0.0;
    const auto n_comp = ica.components.rows();
    for (Eigen::Index c = 0; c < n_comp; ++c) {
      const double scale = ica.mixing.col(c).norm() / std::sqrt(static_cast<double>(scan.n_roi()));
      const Eigen::RowVectorXd row = ica.components.row(c);
      const auto s = features::spectral_stats(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                                              scan.tr_seconds, config.band_lo, config.band_hi);
      a_sum += scale * s.amplitude;
      v_sum += scale * s.variability;
      r_sum += s.spectral_ratio;
    }
    overall_amp = a_sum / static_cast<double>(n_comp);
    overall_var = v_sum / static_cast<double>(n_comp);
    overall_ratio = r_sum / static_cast<double>(n_comp);
  });
  put("ica_overall_amplitude", {overall_amp});
  put("ica_overall_variability", {overall_var});
  put("ica_overall_spectral_ratio", {overall_ratio});

  const auto strength = features::network_strength(fc, scan.network_of);
  std::vector<double> strength_values(static_cast<std::size_t>(n_net), kMissing);
  for (const auto& [net, v] : strength) strength_values[static_cast<std::size_t>(net)] = v;
  put("graph_network_strength", strength_values, net_labels);

  const auto graph = features::threshold_binarize(fc, config.graph_density);
  double q = kMissing;
  computed([&] { q = features::modularity(graph).q; });
  put("graph_modularity", {q});
  put("graph_global_efficiency", {features::global_efficiency(graph)});
  put("graph_avg_clustering", {features::avg_clustering(graph)});

  ScanDescriptors result;
  result.subject_id = scan.subject_id;
  for (const auto& spec : default_registry()) result.values.push_back(std::move(out.at(spec.id)));
  return result;
}

std::vector<ScanDescriptors> extract_cohort(const std::vector<signal::LabeledScan>& cohort,
                                            const FeatureConfig& config, int threads) {
  std::vector<ScanDescriptors> out(cohort.size());
  std::vector<std::exception_ptr> errors(cohort.size());
  auto work = [&](std::size_t i) {
    try {
      out[i] = extract_descriptors(cohort[i].scan, config);
    } catch (const Error& e) {
      errors[i] = std::make_exception_ptr(Error(e.kind(), "scan " + cohort[i].scan.subject_id + ": " + e.what()));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (threads <= 1) {
    for (std::size_t i = 0; i < cohort.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < cohort.size(); i = next++) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

CohortStats compute_cohort_stats(const std::vector<ScanDescriptors>& scans) {
  require(scans.size() >= 2, ErrorKind::InsufficientCohort, "cohort statistics need at least 2 subjects");
  CohortStats out;
  for (std::size_t d = 0; d < scans[0].values.size(); ++d) {
    const auto& id = scans[0].values[d].id;
    const std::size_t width = scans[0].values[d].values.size();
    std::vector<Stat> stats(width);
    for (std::size_t e = 0; e < width; ++e) {
      double sum = 0.0;
      int n = 0;
      for (const auto& s : scans) {
        require(s.values[d].id == id && s.values[d].values.size() == width, ErrorKind::ShapeMismatch,
                "descriptor '" + id + "' differs in shape across subjects");
        const double v = s.values[d].values[e];
        if (std::isfinite(v)) {
          sum += v;
          ++n;
        }
      }
      Stat st;
      st.n = n;
      if (n > 0) {
        st.mean = sum / n;
        double ss = 0.0;
        for (const auto& s : scans) {
          const double v = s.values[d].values[e];
          if (std::isfinite(v)) ss += (v - st.mean) * (v - st.mean);
        }
        st.std = std::sqrt(ss / n);
      }
      stats[e] = st;
    }
    out.stats[id] = std::move(stats);
  }
  return out;
}

nlohmann::json to_json(const CohortStats& stats) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, list] : stats.stats) {
    auto arr = nlohmann::json::array();
    for (const auto& s : list) arr.push_back({{"mean", s.mean}, {"std", s.std}, {"n", s.n}});
    j[id] = arr;
  }
  return j;
}

CohortStats stats_from_json(const nlohmann::json& j) {
  CohortStats out;
  for (const auto& [id, arr] : j.items()) {
    std::vector<Stat> list;
    for (const auto& s : arr) list.push_back(Stat{s.at("mean").get<double>(), s.at("std").get<double>(), s.at("n").get<int>()});
    out.stats[id] = std::move(list);
  }
  return out;
}

DescriptorRecord make_record(const std::string& subject_id, const DescriptorValue& value, const CohortStats& stats) {
  const auto& spec = find_descriptor(value.id);
  auto it = stats.stats.find(value.id);
  require(it != stats.stats.end() && it->second.size() == value.values.size(), ErrorKind::ShapeMismatch,
          "no cohort statistics for descriptor '" + value.id + "'");
  DescriptorRecord r;
  r.subject_id = subject_id;
  r.descriptor_id = value.id;
  r.is_list = spec.kind == ValueKind::List;
  r.raw = value.values;
  r.labels = value.labels;
  r.detail = value.detail;
  for (std::size_t e = 0; e < value.values.size(); ++e) {
    const auto zl = zscore_level(value.values[e], it->second[e]);
    r.z.push_back(zl.z);
    r.levels.push_back(zl.level);
  }
  r.text = render_descriptor(r);
  return r;
}

std::string render_descriptor(const DescriptorRecord& record) {
  const auto& spec = find_descriptor(record.descriptor_id);
  require(!record.levels.empty() && record.levels.size() == record.z.size(), ErrorKind::ShapeMismatch,
          "record for '" + record.descriptor_id + "' has no levels");
  if (spec.kind == ValueKind::Scalar) {
    const std::string clause = " is " + level_phrase(record.levels[0]) + " (z = " + fixed2(record.z[0]) +
                               ") relative to the cohort.";
    if (!record.detail.empty()) return record.detail + "; " + spec.subject + clause;
    return capitalized(spec.subject) + clause;
  }
  require(record.labels.size() == record.levels.size(), ErrorKind::ShapeMismatch,
          "list descriptor '" + record.descriptor_id + "' needs one label per element");
  std::vector<std::string> groups;
  for (auto level : {Level::MarkedlyLow, Level::Low, Level::Typical, Level::High, Level::MarkedlyHigh}) {
    std::vector<std::string> members;
    for (std::size_t e = 0; e < record.levels.size(); ++e) {
      if (record.levels[e] != level) continue;
      members.push_back(level == Level::Typical ? record.labels[e]
                                                : record.labels[e] + " (z = " + fixed2(record.z[e]) + ")");
    }
    if (!members.empty()) groups.push_back(level_phrase(level) + " for " + join_names(members));
  }
  std::string text = capitalized(spec.subject) + " is ";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (g > 0) text += "; ";
    text += groups[g];
  }
  return text + " relative to the cohort.";
}

Corpus build_corpus(const std::vector<ScanDescriptors>& scans, const CohortStats& stats) {
  Corpus corpus;
  for (const auto& scan : scans) {
    std::string paragraph;
    for (const auto& value : scan.values) {
      corpus.records.push_back(make_record(scan.subject_id, value, stats));
      if (!paragraph.empty()) paragraph += ' ';
      paragraph += corpus.records.back().text;
    }
    corpus.paragraphs.push_back(Paragraph{scan.subject_id, paragraph});
  }
  return corpus;
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const DescriptorRecord& r) {
  nlohmann::json j;
  j["subject_id"] = r.subject_id;
  j["descriptor_id"] = r.descriptor_id;
  if (r.is_list) {
    auto raw = nlohmann::json::array(), z = nlohmann::json::array(), level = nlohmann::json::array();
    for (std::size_t e = 0; e < r.raw.size(); ++e) {
      raw.push_back(number_or_null(r.raw[e]));
      z.push_back(r.z[e]);
      level.push_back(level_name(r.levels[e]));
    }
    j["raw_value"] = raw;
    j["z_value"] = z;
    j["level"] = level;
  } else {
    j["raw_value"] = number_or_null(r.raw[0]);
    j["z_value"] = r.z[0];
    j["level"] = level_name(r.levels[0]);
  }
  j["text"] = r.text;
  return j;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& records_path,
                  const std::filesystem::path& paragraphs_path) {
  std::ofstream rec(records_path);
  require(static_cast<bool>(rec), ErrorKind::MissingArtifact, "cannot write " + records_path.string());
  for (const auto& r : corpus.records) rec << to_json(r).dump() << '\n';
  std::ofstream par(paragraphs_path);
  require(static_cast<bool>(par), ErrorKind::MissingArtifact, "cannot write " + paragraphs_path.string());
  for (const auto& p : corpus.paragraphs) {
    par << nlohmann::json{{"subject_id", p.subject_id}, {"paragraph", p.text}}.dump() << '\n';
  }
}

std::vector<Paragraph> read_paragraphs(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingArtifact, "cannot read " + path.string());
  std::vector<Paragraph> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back(Paragraph{j.at("subject_id").get<std::string>(), j.at("paragraph").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::FormatError, path.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<DescriptorRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingArtifact, "cannot read " + path.string());
  std::vector<DescriptorRecord> out;
  std::string line;
  auto number = [](const nlohmann::json& v) { return v.is_null() ? kMissing : v.get<double>(); };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      DescriptorRecord r;
      r.subject_id = j.at("subject_id").get<std::string>();
      r.descriptor_id = j.at("descriptor_id").get<std::string>();
      r.is_list = j.at("level").is_array();
      if (r.is_list) {
        for (const auto& v : j.at("raw_value")) r.raw.push_back(number(v));
        for (const auto& v : j.at("z_value")) r.z.push_back(v.get<double>());
        for (const auto& v : j.at("level")) r.levels.push_back(level_from_name(v.get<std::string>()));
      } else {
        r.raw.push_back(number(j.at("raw_value")));
        r.z.push_back(j.at("z_value").get<double>());
        r.levels.push_back(level_from_name(j.at("level").get<std::string>()));
      }
      r.text = j.at("text").get<std::string>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::FormatError, path.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::string> split_sentences(const std::string& paragraph) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < paragraph.size(); ++i) {
    const bool end = paragraph[i] == '.' &&
                     (i + 1 == paragraph.size() ||
                      (paragraph[i + 1] == ' ' && i + 2 < paragraph.size() &&
                       std::isupper(static_cast<unsigned char>(paragraph[i + 2]))));
    if (end) {
      out.push_back(paragraph.substr(start, i + 1 - start));
      start = i + 2;
    }
  }
  if (start < paragraph.size()) out.push_back(paragraph.substr(start));
  return out;
}

std::vector<std::string> words_of(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

double descriptor_probe(const std::vector<std::string>& paragraphs, const std::vector<int>& labels,
                        std::uint64_t seed) {
  require(paragraphs.size() == labels.size(), ErrorKind::LengthMismatch, "one label per paragraph");
  require(paragraphs.size() >= 20, ErrorKind::TooFewSubjects, "descriptor probe needs at least 20 subjects");
  std::vector<int> train, test;
  evalkit::split_indices(static_cast<int>(paragraphs.size()), seed, train, test);
  bool has0 = false, has1 = false;
  for (int r : train) (labels[static_cast<std::size_t>(r)] == 1 ? has1 : has0) = true;
  require(has0 && has1, ErrorKind::TooFewSubjects, "training split contains a single class");

  std::map<std::string, int> vocab;
  for (int r : train) {
    for (const auto& w : words_of(paragraphs[static_cast<std::size_t>(r)])) vocab.emplace(w, 0);
  }
  int next = 0;
  for (auto& [w, idx] : vocab) idx = next++;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(paragraphs.size()), next);
  for (std::size_t i = 0; i < paragraphs.size(); ++i) {
    for (const auto& w : words_of(paragraphs[i])) {
      auto it = vocab.find(w);
      if (it != vocab.end()) x(static_cast<Eigen::Index>(i), it->second) += 1.0;
    }
  }
  const auto standardizer = evalkit::Standardizer::fit(x, train);
  const Eigen::MatrixXd xs = standardizer.apply(x);
  const auto model = evalkit::fit_logistic(xs, labels, train);
  int hits = 0;
  for (int r : test) {
    const int pred = model.probability(xs.row(r).transpose()) >= 0.5 ? 1 : 0;
    hits += pred == labels[static_cast<std::size_t>(r)] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

namespace {

void check_placeholders(const std::string& tmpl) {
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '}') fail(ErrorKind::FormatError, "unbalanced '}' in prompt template: " + tmpl);
    if (tmpl[i] != '{') continue;
    const auto close = tmpl.find('}', i);
    require(close != std::string::npos, ErrorKind::FormatError, "unbalanced '{' in prompt template: " + tmpl);
    const auto name = tmpl.substr(i + 1, close - i - 1);
    require(name == "question" || name == "choices", ErrorKind::FormatError,
            "unknown placeholder {" + name + "} in prompt template");
    i = close;
  }
}

}  // namespace

PromptBank parse_prompt_bank(const std::string& text) {
  PromptBank bank;
  std::istringstream in(text);
  std::string line;
  std::string current;
  const std::string header = "#paradigm:";
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind(header, 0) == 0) {
      current = line.substr(header.size());
      require(!current.empty(), ErrorKind::FormatError, "empty paradigm name in prompt bank");
      bank.templates[current];
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    require(!current.empty(), ErrorKind::FormatError, "prompt template before any #paradigm: header");
    check_placeholders(line);
    bank.templates[current].push_back(line);
  }
  for (const auto& [name, list] : bank.templates) {
    require(!list.empty(), ErrorKind::EmptyParadigm, "paradigm '" + name + "' has no templates");
  }
  return bank;
}

PromptBank load_prompt_bank(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingArtifact, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_prompt_bank(buf.str());
}

std::string sample_prompt(const PromptBank& bank, const std::string& paradigm, Rng& rng) {
  auto it = bank.templates.find(paradigm);
  require(it != bank.templates.end() && !it->second.empty(), ErrorKind::EmptyParadigm,
          "no prompt templates for paradigm '" + paradigm + "'");
  return it->second[static_cast<std::size_t>(rng.below(it->second.size()))];
}

std::string sample_prompt(const PromptBank& bank, const std::string& paradigm, std::uint64_t seed) {
  Rng rng(seed);
  return sample_prompt(bank, paradigm, rng);
}

std::string fill_prompt(const std::string& tmpl, const std::string& question, const std::string& choices) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl.compare(i, 10, "{question}") == 0) {
      out += question;
      i += 9;
    } else if (tmpl.compare(i, 9, "{choices}") == 0) {
      out += choices;
      i += 8;
    } else {
      out += tmpl[i];
    }
  }
  return out;
}

}  // namespace neurotoken::corpus
