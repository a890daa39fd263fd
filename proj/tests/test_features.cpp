#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "neurotoken/error.hpp"
#include "neurotoken/features.hpp"
#include "neurotoken/rng.hpp"
#include "oracles.hpp"

using namespace neurotoken;
using namespace neurotoken::features;

namespace {

signal::RoiTimeSeries scan_from(const Eigen::MatrixXd& data, std::vector<int> network_of = {}) {
  signal::RoiTimeSeries s;
  s.data = data;
  s.tr_seconds = 2.0;
  if (network_of.empty()) network_of.assign(static_cast<std::size_t>(data.rows()), 0);
  s.network_of = network_of;
  const int n_net = *std::max_element(network_of.begin(), network_of.end()) + 1;
  for (int k = 0; k < n_net; ++k) s.network_names.push_back("N" + std::to_string(k));
  return s;
}

Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

FcMatrix fc_from(const Eigen::MatrixXd& values) {
  FcMatrix fc;
  fc.values = values;
  for (Eigen::Index i = 0; i < values.rows(); ++i) fc.roi_names.push_back("R" + std::to_string(i));
  return fc;
}

BinaryGraph random_graph(int n, std::uint64_t seed, double p = 0.4) {
  Rng rng(seed);
  BinaryGraph g(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (rng.uniform() < p) g.connect(i, j);
    }
  }
  return g;
}

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

TEST_CASE("fc_matrix: copies, negations, and the direct Pearson formula") {
  Eigen::MatrixXd x = random_matrix(4, 50, 1);
  x.row(1) = x.row(0);
  x.row(2) = -x.row(0);
  auto fc = fc_matrix(scan_from(x));
  CHECK(fc.values(0, 1) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(fc.values(0, 2) == doctest::Approx(-1.0).epsilon(1e-14));

  Eigen::MatrixXd y = random_matrix(3, 40, 42);
  auto fy = fc_matrix(scan_from(y));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      std::vector<double> a(y.row(i).begin(), y.row(i).end()), b(y.row(j).begin(), y.row(j).end());
      CHECK(std::abs(fy.values(i, j) - oracle::naive_pearson(a, b)) < 1e-12);
    }
  }
}

TEST_CASE("fc_matrix invariants hold across seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Eigen::MatrixXd x = random_matrix(6, 30, seed);
    if (seed % 5 == 0) x.row(2).setConstant(1.0);  // zero-variance ROI
    auto fc = fc_matrix(scan_from(x));
    CHECK((fc.values - fc.values.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    for (int i = 0; i < 6; ++i) CHECK(fc.values(i, i) == 1.0);
    CHECK(fc.values.maxCoeff() <= 1.0);
    CHECK(fc.values.minCoeff() >= -1.0);
    if (seed % 5 == 0) CHECK(fc.values(2, 0) == 0.0);
  }
}

TEST_CASE("network_pair_fc averages the right entries") {
  std::vector<int> nets = {0, 0, 1, 1};
  auto zero = network_pair_fc(fc_from(Eigen::MatrixXd::Identity(4, 4)), nets);
  for (const auto& [pair, v] : zero) CHECK(v == 0.0);

  Eigen::MatrixXd m(4, 4);
  m << 1, 0.8, 0.1, 0.2,  //
      0.8, 1, 0.3, -0.4,  //
      0.1, 0.3, 1, 0.6,   //
      0.2, -0.4, 0.6, 1;
  auto pairs = network_pair_fc(fc_from(m), nets);
  CHECK(pairs.at({0, 0}) == doctest::Approx(0.8));
  CHECK(pairs.at({1, 1}) == doctest::Approx(0.6));
  CHECK(pairs.at({0, 1}) == doctest::Approx((0.1 + 0.2 + 0.3 - 0.4) / 4.0));

  std::vector<int> singleton = {0, 1, 1, 1};
  CHECK(kind_of([&] { network_pair_value(fc_from(m), singleton, 0, 0); }) == ErrorKind::SingletonNetwork);
  CHECK(network_pair_value(fc_from(m), singleton, 0, 1) == doctest::Approx((0.8 + 0.1 + 0.2) / 3.0));
}

TEST_CASE("top_bottom_edges ordering and tie-break") {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(4, 4, 0.2);
  m.diagonal().setOnes();
  m(0, 3) = m(3, 0) = 0.9;
  m(1, 2) = m(2, 1) = -0.5;
  auto lists = top_bottom_edges(fc_from(m), 2);
  CHECK(lists.top[0].i == 0);
  CHECK(lists.top[0].j == 3);
  CHECK(lists.bottom[0].i == 1);
  CHECK(lists.bottom[0].j == 2);

  Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(4, 4, 0.3);
  flat.diagonal().setOnes();
  auto ties = top_bottom_edges(fc_from(flat), 2);
  CHECK(ties.top[0].i == 0);
  CHECK(ties.top[0].j == 1);
  CHECK(ties.top[1].i == 0);
  CHECK(ties.top[1].j == 2);
  CHECK(ties.bottom[0].j == 1);

  auto fc = fc_matrix(scan_from(random_matrix(6, 30, 9)));
  auto got = top_bottom_edges(fc, 3);
  std::vector<std::tuple<double, int, int>> all;
  for (int i = 0; i < 6; ++i) {
    for (int j = i + 1; j < 6; ++j) all.emplace_back(fc.values(i, j), i, j);
  }
  std::sort(all.begin(), all.end());
  for (int e = 0; e < 3; ++e) {
    CHECK(got.bottom[static_cast<std::size_t>(e)].value == std::get<0>(all[static_cast<std::size_t>(e)]));
    CHECK(got.top[static_cast<std::size_t>(e)].value == std::get<0>(all[all.size() - 1 - static_cast<std::size_t>(e)]));
  }
  CHECK(kind_of([&] { top_bottom_edges(fc, 16); }) == ErrorKind::KTooLarge);
}

TEST_CASE("threshold_binarize keeps the strongest pairs") {
  auto fc = fc_matrix(scan_from(random_matrix(10, 30, 4)));
  auto full = threshold_binarize(fc, 1.0);
  CHECK(full.edge_count() == 45);
  for (int i = 0; i < 10; ++i) CHECK(!full.edge(i, i));

  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(5, 5, 0.1);
  m.diagonal().setOnes();
  m(1, 4) = m(4, 1) = 0.7;
  auto one = threshold_binarize(fc_from(m), 0.1);
  CHECK(one.edge_count() == 1);
  CHECK(one.edge(1, 4));

  auto g = threshold_binarize(fc, 0.3);
  std::vector<std::tuple<double, int, int>> all;
  for (int i = 0; i < 10; ++i) {
    for (int j = i + 1; j < 10; ++j) all.emplace_back(-fc.values(i, j), i, j);
  }
  std::sort(all.begin(), all.end());
  const int keep = static_cast<int>(std::ceil(0.3 * 45));
  CHECK(g.edge_count() == keep);
  for (int e = 0; e < keep; ++e) {
    CHECK(g.edge(std::get<1>(all[static_cast<std::size_t>(e)]), std::get<2>(all[static_cast<std::size_t>(e)])));
  }

  // 0.1 * 190 is 19.000000000000004 in binary floating point.
  auto big = fc_matrix(scan_from(random_matrix(20, 40, 2)));
  CHECK(threshold_binarize(big, 0.1).edge_count() == 19);
}

TEST_CASE("modularity on reference graphs") {
  BinaryGraph k5(5);
  for (int i = 0; i < 5; ++i) {
    for (int j = i + 1; j < 5; ++j) k5.connect(i, j);
  }
  std::vector<int> single(5, 0);
  CHECK(modularity_of(k5, single) == doctest::Approx(0.0));
  CHECK(modularity(k5).q >= -1e-12);

  BinaryGraph cliques(8);
  for (int base : {0, 4}) {
    for (int i = 0; i < 4; ++i) {
      for (int j = i + 1; j < 4; ++j) cliques.connect(base + i, base + j);
    }
  }
  cliques.connect(3, 4);
  auto part = modularity(cliques);
  const double best = oracle::exhaustive_max_modularity(8, [&](int i, int j) { return cliques.edge(i, j); });
  CHECK(std::abs(part.q - best) < 1e-9);
  CHECK(part.community[0] == part.community[3]);
  CHECK(part.community[0] != part.community[4]);

  CHECK(kind_of([] { modularity(BinaryGraph(4)); }) == ErrorKind::NoEdges);
}

TEST_CASE("modularity of returned partitions matches the definition over random graphs") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const int n = 4 + static_cast<int>(seed % 5);
    auto g = random_graph(n, seed, 0.5);
    if (g.edge_count() == 0) continue;
    auto part = modularity(g);
    // Recompute from the definition with an adjacency walk.
    double m = g.edge_count(), q = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (part.community[static_cast<std::size_t>(i)] != part.community[static_cast<std::size_t>(j)]) continue;
        q += (g.edge(i, j) ? 1.0 : 0.0) - g.degree(i) * g.degree(j) / (2 * m);
      }
    }
    q /= 2 * m;
    CHECK(std::abs(part.q - q) < 1e-12);
    CHECK(part.q >= -0.5);
    CHECK(part.q <= 1.0);
    const double best = oracle::exhaustive_max_modularity(n, [&](int i, int j) { return g.edge(i, j); });
    CHECK(part.q <= best + 1e-12);
  }
}

namespace {

double oracle_efficiency(const BinaryGraph& g) {
  const int n = g.n;
  const int inf = 1 << 20;
  std::vector<std::vector<int>> d(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), inf));
  for (int i = 0; i < n; ++i) {
    d[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 0;
    for (int j = 0; j < n; ++j) {
      if (g.edge(i, j)) d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 1;
    }
  }
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        auto& dij = d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        dij = std::min(dij, d[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] +
                                d[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]);
      }
    }
  }
  double total = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int dij = d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (i != j && dij < inf) total += 1.0 / dij;
    }
  }
  return total / (static_cast<double>(n) * (n - 1));
}

double oracle_clustering(const BinaryGraph& g) {
  const int n = g.n;
  double total = 0;
  for (int i = 0; i < n; ++i) {
    int deg = 0, tri = 0;
    for (int j = 0; j < n; ++j) deg += g.edge(i, j);
    for (int j = 0; j < n; ++j) {
      for (int k = j + 1; k < n; ++k) tri += g.edge(i, j) && g.edge(i, k) && g.edge(j, k);
    }
    if (deg >= 2) total += 2.0 * tri / (static_cast<double>(deg) * (deg - 1.0));
  }
  return total / n;
}

}  // namespace

TEST_CASE("global efficiency and clustering on reference graphs") {
  BinaryGraph k4(4);
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) k4.connect(i, j);
  }
  CHECK(global_efficiency(k4) == 1.0);
  BinaryGraph path(3);
  path.connect(0, 1);
  path.connect(1, 2);
  CHECK(global_efficiency(path) == doctest::Approx(5.0 / 6.0));
  CHECK(global_efficiency(BinaryGraph(5)) == 0.0);

  BinaryGraph tri(3);
  tri.connect(0, 1);
  tri.connect(1, 2);
  tri.connect(0, 2);
  CHECK(avg_clustering(tri) == 1.0);
  BinaryGraph star(5);
  for (int i = 1; i < 5; ++i) star.connect(0, i);
  CHECK(avg_clustering(star) == 0.0);
  auto g7 = random_graph(8, 7);
  CHECK(avg_clustering(g7) == oracle_clustering(g7));
}

TEST_CASE("graph metrics equal exhaustive oracles exactly for n <= 8") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (int n = 3; n <= 8; ++n) {
      auto g = random_graph(n, seed * 31 + static_cast<std::uint64_t>(n), 0.35);
      CHECK(global_efficiency(g) == oracle_efficiency(g));
      CHECK(avg_clustering(g) == oracle_clustering(g));
    }
  }
}

TEST_CASE("network_strength sums absolute off-diagonal FC") {
  std::vector<int> nets = {0, 0, 1, 1};
  auto zero = network_strength(fc_from(Eigen::MatrixXd::Identity(4, 4)), nets);
  CHECK(zero.at(0) == 0.0);
  Eigen::MatrixXd half = Eigen::MatrixXd::Constant(4, 4, 0.5);
  half.diagonal().setOnes();
  auto s = network_strength(fc_from(half), nets);
  CHECK(s.at(0) == doctest::Approx(1.5));
  CHECK(s.at(1) == doctest::Approx(1.5));

  Eigen::MatrixXd m(4, 4);
  m << 1, 0.8, 0.1, 0.2,  //
      0.8, 1, 0.3, -0.4,  //
      0.1, 0.3, 1, 0.6,   //
      0.2, -0.4, 0.6, 1;
  auto h = network_strength(fc_from(m), nets);
  CHECK(h.at(0) == doctest::Approx((0.8 + 0.1 + 0.2 + 0.8 + 0.3 + 0.4) / 2.0));
  CHECK(h.at(1) == doctest::Approx((0.1 + 0.3 + 0.6 + 0.2 + 0.4 + 0.6) / 2.0));
}

TEST_CASE("diffusion_gradients separates two disconnected blocks") {
  Rng rng(5);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(8, 8);
  for (int i = 0; i < 8; ++i) {
    for (int j = i + 1; j < 8; ++j) {
      if ((i < 4) == (j < 4)) m(i, j) = m(j, i) = rng.uniform(0.3, 0.9);
    }
  }
  m.diagonal().setOnes();
  auto emb = diffusion_gradients(fc_from(m), 3, 1.0, 0.5);
  // Direct eigensolve of the block operator: eigenvalue 1 has a
  // two-dimensional eigenspace; its non-stationary member is piecewise
  // constant with opposite signs on the blocks.
  CHECK(emb.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-9));
  const double sign_a = emb.components(0, 0);
  for (int i = 0; i < 8; ++i) {
    CHECK(std::abs(emb.components(i, 0)) > 1e-6);
    CHECK((emb.components(i, 0) > 0) == ((i < 4) == (sign_a > 0)));
  }
  for (int i = 1; i < 4; ++i) CHECK(emb.components(i, 0) == doctest::Approx(emb.components(0, 0)));
}

TEST_CASE("diffusion_gradients is permutation-equivariant and orthogonal") {
  auto fc = fc_matrix(scan_from(random_matrix(12, 60, 21)));
  auto emb = diffusion_gradients(fc, 3, 0.3, 0.5);
  for (std::size_t c = 1; c < emb.eigenvalues.size(); ++c) CHECK(emb.eigenvalues[c] <= emb.eigenvalues[c - 1]);
  for (double l : emb.eigenvalues) {
    CHECK(l <= 1.0);
    CHECK(l >= -1.0);
  }
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      const double ip = (emb.weights.array() * emb.components.col(a).array() * emb.components.col(b).array()).sum();
      CHECK(std::abs(ip) < 1e-8);
    }
  }

  std::vector<int> perm = {3, 7, 1, 0, 11, 5, 9, 2, 8, 10, 4, 6};
  FcMatrix permuted = fc;
  for (int i = 0; i < 12; ++i) {
    for (int j = 0; j < 12; ++j) permuted.values(i, j) = fc.values(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  auto pe = diffusion_gradients(permuted, 3, 0.3, 0.5);
  for (int c = 0; c < 3; ++c) {
    double same = 0, flipped = 0;
    for (int i = 0; i < 12; ++i) {
      const double orig = emb.components(perm[static_cast<std::size_t>(i)], c);
      same = std::max(same, std::abs(pe.components(i, c) - orig));
      flipped = std::max(flipped, std::abs(pe.components(i, c) + orig));
    }
    CHECK(std::min(same, flipped) < 1e-8);
  }
}

TEST_CASE("diffusion_gradients rejects an identity FC") {
  CHECK(kind_of([] { diffusion_gradients(fc_from(Eigen::MatrixXd::Identity(6, 6)), 3, 0.1, 0.5); }) ==
        ErrorKind::DegenerateAffinity);
}

TEST_CASE("gradient_stats against direct computation") {
  std::vector<int> nets = {0, 0, 1, 1};
  GradientEmbedding constant;
  constant.components = Eigen::MatrixXd::Constant(4, 3, 0.7);
  auto cs = gradient_stats(constant, nets);
  CHECK(cs.ranges[0] == 0.0);
  CHECK(cs.variances[0] == 0.0);

  GradientEmbedding split;
  split.components = Eigen::MatrixXd::Zero(4, 3);
  split.components.col(0) << -1, -1, 1, 1;
  auto ss = gradient_stats(split, nets);
  CHECK(ss.ranges[0] == 2.0);
  CHECK(ss.network_means.at(0) == -1.0);
  CHECK(ss.network_means.at(1) == 1.0);

  GradientEmbedding rnd;
  rnd.components = random_matrix(4, 3, 8);
  auto rs = gradient_stats(rnd, nets);
  for (int c = 0; c < 3; ++c) {
    double lo = 1e9, hi = -1e9, mean = 0, var = 0;
    for (int i = 0; i < 4; ++i) {
      lo = std::min(lo, rnd.components(i, c));
      hi = std::max(hi, rnd.components(i, c));
      mean += rnd.components(i, c) / 4;
    }
    for (int i = 0; i < 4; ++i) var += (rnd.components(i, c) - mean) * (rnd.components(i, c) - mean) / 4;
    CHECK(rs.ranges[static_cast<std::size_t>(c)] == doctest::Approx(hi - lo));
    CHECK(rs.variances[static_cast<std::size_t>(c)] == doctest::Approx(var));
  }

  GradientEmbedding two;
  two.components = Eigen::MatrixXd::Zero(4, 2);
  CHECK(kind_of([&] { gradient_stats(two, nets); }) == ErrorKind::TooFewComponents);
}

namespace {

std::vector<double> tone(int n, double tr, double f, double amp = 1.0) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) x[static_cast<std::size_t>(t)] = amp * std::sin(2 * std::numbers::pi * f * tr * t + 0.3);
  return x;
}

}  // namespace

TEST_CASE("spectral_stats band fractions") {
  // 100 samples at tr 2 put 0.04 Hz and 0.2 Hz exactly on bins 8 and 40.
  auto low = tone(100, 2.0, 0.04);
  CHECK(spectral_stats(low, 2.0).falff >= 0.99);
  auto high = tone(100, 2.0, 0.2);
  CHECK(spectral_stats(high, 2.0).falff <= 0.01);
  std::vector<double> both(100);
  for (std::size_t i = 0; i < 100; ++i) both[i] = low[i] + high[i];
  const auto s = spectral_stats(both, 2.0);
  // Exact-bin periodogram: each unit tone contributes amplitude^2 / 2.
  CHECK(std::abs(s.falff - 0.5) < 0.02);
  CHECK(s.spectral_ratio == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.amplitude == doctest::Approx(1.0).epsilon(1e-6));

  CHECK(kind_of([&] { spectral_stats(low, 2.0, 0.01, 0.3); }) == ErrorKind::BandOutOfRange);
  CHECK(kind_of([&] { spectral_stats(low, 2.0, 0.08, 0.01); }) == ErrorKind::BandOutOfRange);
}

TEST_CASE("periodogram satisfies Parseval and fALFF stays in [0, 1]") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (int n : {8, 33, 160}) {
      Eigen::MatrixXd x = random_matrix(1, n, seed);
      std::vector<double> v(x.data(), x.data() + n);
      auto p = periodogram(v);
      double total = 0, mean = 0, var = 0;
      for (double q : p) total += q;
      for (double q : v) mean += q / n;
      for (double q : v) var += (q - mean) * (q - mean) / n;
      CHECK(std::abs(total - var) < 1e-8);
      auto s = spectral_stats(v, 2.0);
      CHECK(s.falff >= 0.0);
      CHECK(s.falff <= 1.0);
      CHECK(s.amplitude >= 0.0);
    }
  }
}

namespace {

double max_abs_corr(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  std::vector<double> va(a.begin(), a.end()), vb(b.begin(), b.end());
  return std::abs(oracle::naive_pearson(va, vb));
}

}  // namespace

TEST_CASE("fastica recovers mixed sine and square sources") {
  const int t = 1000;
  Eigen::MatrixXd src(2, t);
  for (int k = 0; k < t; ++k) {
    src(0, k) = std::sin(0.07 * k);
    src(1, k) = std::sin(0.013 * k + 0.5) >= 0 ? 1.0 : -1.0;
  }
  Eigen::MatrixXd mix(2, 2);
  mix << 0.8, 0.3, -0.4, 1.1;
  auto res = fastica(mix * src, 2, 3);
  const double c00 = max_abs_corr(res.components.row(0), src.row(0));
  const double c01 = max_abs_corr(res.components.row(0), src.row(1));
  const double c10 = max_abs_corr(res.components.row(1), src.row(0));
  const double c11 = max_abs_corr(res.components.row(1), src.row(1));
  CHECK(std::max(std::min(c00, c11), std::min(c01, c10)) > 0.95);
  for (int c = 0; c < 2; ++c) {
    const auto row = res.components.row(c);
    CHECK(std::abs((row.array() - row.mean()).square().mean() - 1.0) < 1e-6);
  }
  CHECK(res.mixing.rows() == 2);
}

TEST_CASE("fastica leaves independent unit-variance sources in place up to order and sign") {
  const int t = 2000;
  Rng rng(17);
  Eigen::MatrixXd src(3, t);
  for (int k = 0; k < t; ++k) {
    src(0, k) = rng.uniform(-1, 1);
    src(1, k) = std::sin(0.05 * k);
    src(2, k) = rng.uniform() < 0.5 ? -1.0 : 1.0;
  }
  for (int r = 0; r < 3; ++r) {
    src.row(r).array() -= src.row(r).mean();
    src.row(r) /= std::sqrt(src.row(r).squaredNorm() / t);
  }
  auto res = fastica(src, 3, 1);
  for (int c = 0; c < 3; ++c) {
    double best = 0;
    for (int r = 0; r < 3; ++r) best = std::max(best, max_abs_corr(res.components.row(c), src.row(r)));
    CHECK(best > 0.99);
    const auto row = res.components.row(c);
    CHECK(std::abs((row.array() - row.mean()).square().mean() - 1.0) < 1e-6);
  }
  CHECK(kind_of([&] { fastica(src, 4, 1); }) == ErrorKind::PreconditionViolation);
}

TEST_CASE("fnc on component time courses") {
  Eigen::MatrixXd dup = random_matrix(1, 40, 3).replicate(2, 1);
  CHECK(fnc(dup).values(0, 1) == doctest::Approx(1.0));

  const int n = 64;
  Eigen::MatrixXd orth(2, n);
  for (int k = 0; k < n; ++k) {
    orth(0, k) = std::sin(2 * std::numbers::pi * 2 * k / n);
    orth(1, k) = std::sin(2 * std::numbers::pi * 5 * k / n);
  }
  CHECK(std::abs(fnc(orth).values(0, 1)) < 1e-6);

  Eigen::MatrixXd rnd = random_matrix(2, 30, 12);
  CHECK(fnc(rnd).values == fc_matrix(scan_from(rnd)).values);
}
