#include <cmath>

#include "doctest.h"
#include "neurotoken/error.hpp"
#include "neurotoken/evalkit.hpp"
#include "neurotoken/rng.hpp"
#include "oracles.hpp"

using namespace neurotoken;
using namespace neurotoken::evalkit;

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

}  // namespace

TEST_CASE("accuracy counts exact matches") {
  std::vector<std::string> t = {"a", "b", "a", "b"};
  CHECK(accuracy(std::span<const std::string>(t), std::span<const std::string>(t)) == 1.0);
  std::vector<std::string> none = {"b", "a", "b", "a"};
  CHECK(accuracy(std::span<const std::string>(none), std::span<const std::string>(t)) == 0.0);
  std::vector<std::string> three = {"a", "b", "a", "a"};
  CHECK(accuracy(std::span<const std::string>(three), std::span<const std::string>(t)) == 0.75);
  std::vector<std::string> short_list = {"a"};
  CHECK(kind_of([&] { accuracy(std::span<const std::string>(short_list), std::span<const std::string>(t)); }) ==
        ErrorKind::LengthMismatch);
}

TEST_CASE("auc by pair counting") {
  std::vector<double> s = {0.1, 0.2, 0.8, 0.9};
  std::vector<int> y = {0, 0, 1, 1};
  CHECK(auc(s, y) == 1.0);
  std::vector<double> flat(4, 0.3);
  CHECK(auc(flat, y) == 0.5);
  std::vector<double> five = {0.3, 0.7, 0.7, 0.2, 0.5};
  std::vector<int> five_y = {1, 0, 1, 0, 1};
  CHECK(auc(five, five_y) == oracle::brute_auc(five, five_y));
  std::vector<int> single = {1, 1, 1, 1};
  CHECK(kind_of([&] { auc(s, single); }) == ErrorKind::SingleClass);
}

TEST_CASE("auc is invariant to strictly monotone transforms and recombines over batches") {
  Rng rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> s, t;
    std::vector<int> y;
    for (int i = 0; i < 30; ++i) {
      s.push_back(std::round(rng.normal() * 4) / 4);  // induce ties
      y.push_back(i % 3 == 0 ? 1 : 0);
      t.push_back(std::exp(3 * s.back()) - 7);
    }
    CHECK(auc(s, y) == auc(t, y));
    CHECK(auc(s, y) == oracle::brute_auc(s, y));
  }
}

TEST_CASE("mae_pearson") {
  std::vector<double> t = {1, -2, 3, -2};
  auto same = mae_pearson(t, t);
  CHECK(same.mae == 0.0);
  CHECK(same.r == doctest::Approx(1.0));
  std::vector<double> neg = {-1, 2, -3, 2};
  CHECK(mae_pearson(neg, t).r == doctest::Approx(-1.0));

  Rng rng(9);
  std::vector<double> a, b;
  for (int i = 0; i < 50; ++i) {
    a.push_back(rng.normal());
    b.push_back(rng.normal());
  }
  auto m = mae_pearson(a, b);
  double mae = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mae += std::abs(a[i] - b[i]) / 50.0;
  CHECK(std::abs(m.mae - mae) < 1e-12);
  CHECK(std::abs(m.r - oracle::naive_pearson(a, b)) < 1e-12);

  std::vector<double> flat(4, 2.0);
  CHECK(kind_of([&] { mae_pearson(t, flat); }) == ErrorKind::DegenerateTarget);
}

TEST_CASE("mae and accuracy combine over batches by weight") {
  Rng rng(2);
  std::vector<double> p, t;
  for (int i = 0; i < 30; ++i) {
    p.push_back(rng.normal());
    t.push_back(rng.normal());
  }
  const auto whole = mae_pearson(p, t).mae;
  const auto first = mae_pearson(std::span(p).first(12), std::span(t).first(12)).mae;
  const auto rest = mae_pearson(std::span(p).subspan(12), std::span(t).subspan(12)).mae;
  CHECK(whole == doctest::Approx((12 * first + 18 * rest) / 30));
}

TEST_CASE("parse_answer canonicalizes and splits") {
  CHECK(parse_answer(" Female.", Paradigm::SingleQa, {"sex"}).at("sex") == "female");
  auto two = parse_answer("sex: male; ad: negative", Paradigm::MultiQa, {"sex", "ad"});
  CHECK(two.at("sex") == "male");
  CHECK(two.at("ad") == "negative");
  CHECK(kind_of([] { parse_answer("blah blah", Paradigm::MultiQa, {"sex", "ad"}); }) == ErrorKind::ParseFailure);
  CHECK(kind_of([] { parse_answer(" ... ", Paradigm::SingleQa, {"sex"}); }) == ErrorKind::ParseFailure);
  CHECK(kind_of([] { parse_answer("ad: x; sex: y", Paradigm::MultiQa, {"sex", "ad"}); }) == ErrorKind::ParseFailure);
}

TEST_CASE("formatted answers parse back to the same fields for every paradigm") {
  Rng rng(11);
  const std::vector<std::string> words = {"positive", "negative", "high", "low", "bin_3", "female", "x7"};
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 1 + static_cast<int>(rng.below(4));
    std::vector<std::pair<std::string, std::string>> fields;
    std::vector<std::string> order;
    for (int f = 0; f < n; ++f) {
      order.push_back("field" + std::to_string(f));
      fields.emplace_back(order.back(), words[rng.below(words.size())]);
    }
    for (auto p : {Paradigm::SingleQa, Paradigm::MultiQa, Paradigm::OpenEnded}) {
      if (p == Paradigm::SingleQa && n != 1) continue;
      auto parsed = parse_answer(format_answer(p, fields), p, order);
      for (const auto& [k, v] : fields) CHECK(parsed.at(k) == v);
    }
  }
}

TEST_CASE("match_open_ended requires every field") {
  std::vector<FieldRule> rules = {
      {"sex", {"male", "female"}, {{"female", {"woman"}}, {"male", {"man"}}}, std::nullopt},
      {"age", {}, {}, 2.0},
  };
  auto ok = match_open_ended("A 63 year old woman.", rules, {{"sex", "female"}, {"age", "62"}});
  CHECK(ok.overall);
  auto missing = match_open_ended("A 63 year old person.", rules, {{"sex", "female"}, {"age", "62"}});
  CHECK(!missing.fields.at("sex"));
  CHECK(missing.fields.at("age"));
  CHECK(!missing.overall);
  // "man" must not match inside "woman".
  CHECK(!match_open_ended("a woman", rules, {{"sex", "male"}}).overall);
  auto far = match_open_ended("aged 70", rules, {{"age", "62"}});
  CHECK(!far.overall);
  CHECK(kind_of([&] { match_open_ended("x", rules, {{"site", "a"}}); }) == ErrorKind::MissingRule);
}

TEST_CASE("logistic and ridge fits") {
  Rng rng(3);
  const int n = 200;
  Eigen::MatrixXd x(n, 3);
  std::vector<int> y(n);
  std::vector<double> t(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) x(i, c) = rng.normal();
    y[static_cast<std::size_t>(i)] = x(i, 0) + 0.1 * rng.normal() > 0 ? 1 : 0;
    t[static_cast<std::size_t>(i)] = 2 * x(i, 1) - 1;
  }
  std::vector<int> train, test;
  split_indices(n, 1, train, test);
  CHECK(train.size() == 160);
  CHECK(test.size() == 40);
  auto model = fit_logistic(x, y, train);
  int hits = 0;
  for (int r : test) hits += (model.probability(x.row(r).transpose()) >= 0.5) == (y[static_cast<std::size_t>(r)] == 1);
  CHECK(hits >= 36);

  auto ridge = fit_ridge(x, t, train, 0.0);
  CHECK(ridge.w[1] == doctest::Approx(2.0));
  CHECK(ridge.b == doctest::Approx(-1.0));
  auto oracle_pred = oracle::ridge_predictions(x, t, train, test, 0.0);
  auto s = Standardizer::fit(x, train);
  auto xs = s.apply(x);
  auto sridge = fit_ridge(xs, t, train, 0.0);
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(sridge.predict(xs.row(test[i]).transpose()) == doctest::Approx(oracle_pred[i]));
  }
}

TEST_CASE("metrics report round-trips and rejects other versions") {
  Report r{"factor", "single_qa", 40, {{"accuracy", 0.9}}, 7, "abc"};
  auto j = to_json(r);
  auto back = report_from_json(j);
  CHECK(back.metrics.at("accuracy") == 0.9);
  CHECK(back.config_hash == "abc");
  j["format_version"] = 99;
  CHECK(kind_of([&] { report_from_json(j); }) == ErrorKind::FormatError);
}
