#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace neurotoken::evalkit {

enum class Paradigm { SingleQa, MultiQa, OpenEnded };

std::string to_string(Paradigm p);
Paradigm paradigm_from_string(const std::string& name);

double accuracy(std::span<const std::string> preds, std::span<const std::string> targets);
double accuracy(std::span<const int> preds, std::span<const int> targets);

// Mann-Whitney AUC by pair counting; ties count one half.
double auc(std::span<const double> scores, std::span<const int> labels);

struct MaeR {
  double mae = 0.0;
  double r = 0.0;
};

MaeR mae_pearson(std::span<const double> preds, std::span<const double> targets);
double pearson_r(std::span<const double> a, std::span<const double> b);

// Lower-cases and trims whitespace and punctuation from both ends.
std::string canonicalize(const std::string& text);

// Answer layouts shared with the instruction formatter:
//   single_qa   "<value>"
//   multi_qa    "<field>: <value>; <field>: <value>"
//   open_ended  "Summary: <field> is <value>; <field> is <value>."
std::string format_answer(Paradigm p, const std::vector<std::pair<std::string, std::string>>& fields);

// Throws ParseFailure when the text does not follow the paradigm layout.
std::map<std::string, std::string> parse_answer(const std::string& text, Paradigm p,
                                                const std::vector<std::string>& field_order);

struct FieldRule {
  std::string field;
  std::vector<std::string> canonical_values;
  std::map<std::string, std::vector<std::string>> synonyms;  // canonical value -> surface forms
  std::optional<double> numeric_tolerance;
};

struct MatchResult {
  std::map<std::string, bool> fields;
  bool overall = false;
};

MatchResult match_open_ended(const std::string& text, const std::vector<FieldRule>& rules,
                             const std::map<std::string, std::string>& targets);

// Seeded 80/20 split of [0, n).
void split_indices(int n, std::uint64_t seed, std::vector<int>& train, std::vector<int>& test,
                   double train_fraction = 0.8);

// Column standardization fitted on a subset of rows.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& x, std::span<const int> rows);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

struct LogisticModel {
  Eigen::VectorXd w;
  double b = 0.0;

  double probability(const Eigen::VectorXd& x) const;
};

// L2-regularized logistic regression by full-batch gradient descent.
LogisticModel fit_logistic(const Eigen::MatrixXd& x, std::span<const int> y, std::span<const int> rows,
                           double l2 = 1e-2, int iterations = 2000, double lr = 0.1);

struct RidgeModel {
  Eigen::VectorXd w;
  double b = 0.0;

  double predict(const Eigen::VectorXd& x) const { return x.dot(w) + b; }
};

// Closed-form ridge on the selected rows; the intercept is not penalized.
RidgeModel fit_ridge(const Eigen::MatrixXd& x, std::span<const double> y, std::span<const int> rows,
                     double l2 = 1e-2);

struct Report {
  std::string task;
  std::string paradigm;
  int n = 0;
  std::map<std::string, double> metrics;
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline constexpr int kReportFormatVersion = 1;

nlohmann::json to_json(const Report& r);
Report report_from_json(const nlohmann::json& j);

}  // namespace neurotoken::evalkit
