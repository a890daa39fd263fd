#include "neurotoken/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <regex>
#include <sstream>

#include "neurotoken/error.hpp"
#include "neurotoken/rng.hpp"

namespace neurotoken::evalkit {

std::string to_string(Paradigm p) {
  switch (p) {
    case Paradigm::SingleQa:
      return "single_qa";
    case Paradigm::MultiQa:
      return "multi_qa";
    case Paradigm::OpenEnded:
      return "open_ended";
  }
  return "unknown";
}

Paradigm paradigm_from_string(const std::string& name) {
  if (name == "single_qa") return Paradigm::SingleQa;
  if (name == "multi_qa") return Paradigm::MultiQa;
  if (name == "open_ended") return Paradigm::OpenEnded;
  fail(ErrorKind::ConfigError, "unknown paradigm '" + name + "'");
}

double accuracy(std::span<const std::string> preds, std::span<const std::string> targets) {
  require(preds.size() == targets.size() && !preds.empty(), ErrorKind::LengthMismatch,
          "accuracy needs equal, non-empty prediction and target lists");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == targets[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double accuracy(std::span<const int> preds, std::span<const int> targets) {
  require(preds.size() == targets.size() && !preds.empty(), ErrorKind::LengthMismatch,
          "accuracy needs equal, non-empty prediction and target lists");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == targets[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorKind::LengthMismatch, "auc needs one label per score");
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  require(pairs > 0.0, ErrorKind::SingleClass, "auc needs both classes present");
  return wins / pairs;
}

double pearson_r(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorKind::LengthMismatch,
          "pearson needs two equal-length series of length >= 2");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

MaeR mae_pearson(std::span<const double> preds, std::span<const double> targets) {
  require(preds.size() == targets.size() && preds.size() >= 2, ErrorKind::LengthMismatch,
          "mae_pearson needs equal lengths >= 2");
  const double n = static_cast<double>(targets.size());
  const double mt = std::accumulate(targets.begin(), targets.end(), 0.0) / n;
  double vt = 0.0;
  for (double t : targets) vt += (t - mt) * (t - mt);
  require(vt > 0.0, ErrorKind::DegenerateTarget, "targets have zero variance");
  MaeR out;
  for (std::size_t i = 0; i < preds.size(); ++i) out.mae += std::abs(preds[i] - targets[i]);
  out.mae /= n;
  out.r = pearson_r(preds, targets);
  return out;
}

namespace {

bool is_trim_char(unsigned char c) { return std::isspace(c) || std::ispunct(c); }

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, sep)) parts.push_back(part);
  return parts;
}

}  // namespace

std::string canonicalize(const std::string& text) {
  std::size_t a = 0, b = text.size();
  while (a < b && is_trim_char(static_cast<unsigned char>(text[a]))) ++a;
  while (b > a && is_trim_char(static_cast<unsigned char>(text[b - 1]))) --b;
  std::string out = text.substr(a, b - a);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string format_answer(Paradigm p, const std::vector<std::pair<std::string, std::string>>& fields) {
  require(!fields.empty(), ErrorKind::FieldCountMismatch, "answer needs at least one field");
  std::string out;
  switch (p) {
    case Paradigm::SingleQa:
      require(fields.size() == 1, ErrorKind::FieldCountMismatch, "single_qa answers exactly one field");
      return fields[0].second;
    case Paradigm::MultiQa:
      for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) out += "; ";
        out += fields[i].first + ": " + fields[i].second;
      }
      return out;
    case Paradigm::OpenEnded:
      out = "Summary: ";
      for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) out += "; ";
        out += fields[i].first + " is " + fields[i].second;
      }
      return out + ".";
  }
  return out;
}

std::map<std::string, std::string> parse_answer(const std::string& text, Paradigm p,
                                                const std::vector<std::string>& field_order) {
  std::map<std::string, std::string> out;
  if (p == Paradigm::SingleQa) {
    require(field_order.size() == 1, ErrorKind::FieldCountMismatch, "single_qa parses exactly one field");
    const auto value = canonicalize(text);
    require(!value.empty(), ErrorKind::ParseFailure, "empty answer");
    out[field_order[0]] = value;
    return out;
  }

  std::string body = text;
  std::string separator = ":";
  if (p == Paradigm::OpenEnded) {
    const auto colon = body.find(':');
    require(colon != std::string::npos, ErrorKind::ParseFailure, "open-ended answer lacks 'Summary:'");
    body = body.substr(colon + 1);
    separator = " is ";
  }
  const auto parts = split(body, ';');
  require(parts.size() == field_order.size(), ErrorKind::ParseFailure,
          "expected " + std::to_string(field_order.size()) + " answers, found " + std::to_string(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto pos = parts[i].find(separator);
    require(pos != std::string::npos, ErrorKind::ParseFailure, "answer part '" + parts[i] + "' has no separator");
    const auto name = canonicalize(trim(parts[i].substr(0, pos)));
    const auto value = canonicalize(parts[i].substr(pos + separator.size()));
    require(name == canonicalize(field_order[i]), ErrorKind::ParseFailure,
            "expected field '" + field_order[i] + "', found '" + name + "'");
    require(!value.empty(), ErrorKind::ParseFailure, "field '" + name + "' has an empty value");
    out[field_order[i]] = value;
  }
  return out;
}

namespace {

// Whole-word, case-insensitive containment.
bool contains_word(const std::string& haystack, const std::string& needle) {
  if (needle.empty()) return false;
  std::string h = haystack, n = needle;
  for (auto& c : h) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (auto& c : n) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  for (std::size_t pos = h.find(n); pos != std::string::npos; pos = h.find(n, pos + 1)) {
    const bool left = pos == 0 || !is_word(h[pos - 1]);
    const bool right = pos + n.size() == h.size() || !is_word(h[pos + n.size()]);
    if (left && right) return true;
  }
  return false;
}

std::vector<double> numbers_in(const std::string& text) {
  static const std::regex number(R"([-+]?\d+(\.\d+)?([eE][-+]?\d+)?)");
  std::vector<double> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), number); it != std::sregex_iterator(); ++it) {
    out.push_back(std::stod(it->str()));
  }
  return out;
}

}  // namespace

MatchResult match_open_ended(const std::string& text, const std::vector<FieldRule>& rules,
                             const std::map<std::string, std::string>& targets) {
  MatchResult out;
  out.overall = true;
  for (const auto& [field, target] : targets) {
    auto rule = std::find_if(rules.begin(), rules.end(), [&](const FieldRule& r) { return r.field == field; });
    require(rule != rules.end(), ErrorKind::MissingRule, "no matching rule for field '" + field + "'");
    bool matched = false;
    if (rule->numeric_tolerance) {
      const double want = std::stod(target);
      for (double v : numbers_in(text)) matched = matched || std::abs(v - want) <= *rule->numeric_tolerance;
    } else {
      auto syn = rule->synonyms.find(target);
      matched = contains_word(text, target);
      if (syn != rule->synonyms.end()) {
        for (const auto& s : syn->second) matched = matched || contains_word(text, s);
      }
    }
    out.fields[field] = matched;
    out.overall = out.overall && matched;
  }
  return out;
}

void split_indices(int n, std::uint64_t seed, std::vector<int>& train, std::vector<int>& test,
                   double train_fraction) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * n + 1e-9));
  train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& x, std::span<const int> rows) {
  Standardizer s;
  s.mean = Eigen::VectorXd::Zero(x.cols());
  s.scale = Eigen::VectorXd::Ones(x.cols());
  const double n = static_cast<double>(rows.size());
  for (int r : rows) s.mean += x.row(r).transpose();
  s.mean /= n;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(x.cols());
  for (int r : rows) var += (x.row(r).transpose() - s.mean).array().square().matrix();
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double sd = std::sqrt(var[c] / n);
    s.scale[c] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
  return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

double LogisticModel::probability(const Eigen::VectorXd& x) const {
  return 1.0 / (1.0 + std::exp(-(x.dot(w) + b)));
}

LogisticModel fit_logistic(const Eigen::MatrixXd& x, std::span<const int> y, std::span<const int> rows,
                           double l2, int iterations, double lr) {
  require(!rows.empty(), ErrorKind::TooFewSamples, "logistic fit needs training rows");
  Eigen::MatrixXd xs(static_cast<Eigen::Index>(rows.size()), x.cols());
  Eigen::VectorXd ys(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    xs.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    ys[static_cast<Eigen::Index>(i)] = y[static_cast<std::size_t>(rows[i])];
  }
  LogisticModel m;
  m.w = Eigen::VectorXd::Zero(x.cols());
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd logits = (xs * m.w).array() + m.b;
    Eigen::VectorXd err = (1.0 / (1.0 + (-logits.array()).exp())).matrix() - ys;
    m.w -= lr * (xs.transpose() * err * inv_n + l2 * m.w);
    m.b -= lr * err.sum() * inv_n;
  }
  return m;
}

RidgeModel fit_ridge(const Eigen::MatrixXd& x, std::span<const double> y, std::span<const int> rows, double l2) {
  require(!rows.empty(), ErrorKind::TooFewSamples, "ridge fit needs training rows");
  const Eigen::Index d = x.cols();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d + 1, d + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd row(d + 1);
  for (int r : rows) {
    row.head(d) = x.row(r).transpose();
    row[d] = 1.0;
    a += row * row.transpose();
    rhs += row * y[static_cast<std::size_t>(r)];
  }
  for (Eigen::Index i = 0; i < d; ++i) a(i, i) += l2 * static_cast<double>(rows.size());
  Eigen::VectorXd coef = a.ldlt().solve(rhs);
  return RidgeModel{coef.head(d), coef[d]};
}

nlohmann::json to_json(const Report& r) {
  nlohmann::json j;
  j["format_version"] = kReportFormatVersion;
  j["task"] = r.task;
  j["paradigm"] = r.paradigm;
  j["n"] = r.n;
  j["metrics"] = r.metrics;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  return j;
}

Report report_from_json(const nlohmann::json& j) {
  require(j.value("format_version", -1) == kReportFormatVersion, ErrorKind::FormatError,
          "metrics report has an unsupported format version");
  Report r;
  r.task = j.at("task").get<std::string>();
  r.paradigm = j.at("paradigm").get<std::string>();
  r.n = j.at("n").get<int>();
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  return r;
}

}  // namespace neurotoken::evalkit
