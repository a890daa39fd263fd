#pragma once

// Reference computations used by the test suites. Nothing here calls into the
// library code paths the tests check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline double naive_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
  }
  const double ma = sa / n, mb = sb / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

// Pair-counting AUC.
inline double brute_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Standardizes columns with statistics from `train` rows.
inline void standardize(Eigen::MatrixXd& x, const std::vector<int>& train) {
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    double m = 0, s = 0;
    for (int r : train) m += x(r, c);
    m /= static_cast<double>(train.size());
    for (int r : train) s += (x(r, c) - m) * (x(r, c) - m);
    s = std::sqrt(s / static_cast<double>(train.size()));
    if (s == 0) s = 1;
    x.col(c) = (x.col(c).array() - m) / s;
  }
}

// L2-regularized logistic regression by full-batch gradient descent.
// Returns held-out scores (probabilities) on `test`.
inline std::vector<double> logistic_scores(Eigen::MatrixXd x, const std::vector<int>& y,
                                           const std::vector<int>& train, const std::vector<int>& test,
                                           double l2 = 1e-2, int iterations = 3000, double lr = 0.1) {
  standardize(x, train);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(x.cols());
  double b = 0;
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd gw = l2 * w;
    double gb = 0;
    for (int r : train) {
      const double p = 1.0 / (1.0 + std::exp(-(x.row(r).dot(w) + b)));
      const double e = (p - y[static_cast<std::size_t>(r)]) / static_cast<double>(train.size());
      gw += e * x.row(r).transpose();
      gb += e;
    }
    w -= lr * gw;
    b -= lr * gb;
  }
  std::vector<double> out;
  for (int r : test) out.push_back(1.0 / (1.0 + std::exp(-(x.row(r).dot(w) + b))));
  return out;
}

inline double accuracy_of(const std::vector<double>& probs, const std::vector<int>& y, const std::vector<int>& test) {
  double hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    hits += ((probs[i] >= 0.5) == (y[static_cast<std::size_t>(test[i])] == 1)) ? 1 : 0;
  }
  return hits / static_cast<double>(test.size());
}

// Closed-form ridge regression; returns held-out predictions.
inline std::vector<double> ridge_predictions(Eigen::MatrixXd x, const std::vector<double>& y,
                                             const std::vector<int>& train, const std::vector<int>& test,
                                             double l2 = 1e-2) {
  standardize(x, train);
  const Eigen::Index d = x.cols();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d + 1, d + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d + 1);
  for (int r : train) {
    Eigen::VectorXd row(d + 1);
    row.head(d) = x.row(r).transpose();
    row[d] = 1;
    a += row * row.transpose();
    rhs += row * y[static_cast<std::size_t>(r)];
  }
  for (Eigen::Index i = 0; i < d; ++i) a(i, i) += l2 * static_cast<double>(train.size());
  Eigen::VectorXd coef = a.ldlt().solve(rhs);
  std::vector<double> out;
  for (int r : test) out.push_back(x.row(r).dot(coef.head(d)) + coef[d]);
  return out;
}

// First 80% train, rest test, after a seeded Fisher-Yates shuffle with a
// linear congruential generator.
inline void split_indices(int n, std::uint64_t seed, std::vector<int>& train, std::vector<int>& test) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::uint64_t state = seed * 6364136223846793005ULL + 1442695040888963407ULL;
  for (int i = n - 1; i > 0; --i) {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    const int j = static_cast<int>((state >> 33) % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  const int n_train = n * 4 / 5;
  train.assign(idx.begin(), idx.begin() + n_train);
  test.assign(idx.begin() + n_train, idx.end());
}

// Upper-triangle network-pair mean FC, computed directly from raw data.
inline std::vector<double> network_pair_features(const Eigen::MatrixXd& data, const std::vector<int>& network_of) {
  const int n = static_cast<int>(data.rows());
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)].assign(data.row(i).begin(), data.row(i).end());
  const int n_net = *std::max_element(network_of.begin(), network_of.end()) + 1;
  std::vector<double> out;
  for (int a = 0; a < n_net; ++a) {
    for (int b = a; b < n_net; ++b) {
      double total = 0;
      int count = 0;
      for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
          const int ni = network_of[static_cast<std::size_t>(i)], nj = network_of[static_cast<std::size_t>(j)];
          if ((ni == a && nj == b) || (ni == b && nj == a)) {
            total += naive_pearson(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(j)]);
            ++count;
          }
        }
      }
      out.push_back(total / count);
    }
  }
  return out;
}

// Maximum Newman modularity over all set partitions (restricted growth strings).
inline double exhaustive_max_modularity(int n, const std::function<bool(int, int)>& edge) {
  double m = 0;
  std::vector<int> degree(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j && edge(i, j)) degree[static_cast<std::size_t>(i)]++;
    }
  }
  for (int d : degree) m += d;
  m /= 2;
  std::vector<int> label(static_cast<std::size_t>(n), 0);
  double best = -1e9;
  std::function<void(int, int)> rec = [&](int pos, int used) {
    if (pos == n) {
      double q = 0;
      for (int c = 0; c < used; ++c) {
        double internal = 0, dsum = 0;
        for (int i = 0; i < n; ++i) {
          if (label[static_cast<std::size_t>(i)] != c) continue;
          dsum += degree[static_cast<std::size_t>(i)];
          for (int j = i + 1; j < n; ++j) {
            if (label[static_cast<std::size_t>(j)] == c && edge(i, j)) internal += 1;
          }
        }
        q += internal / m - (dsum / (2 * m)) * (dsum / (2 * m));
      }
      best = std::max(best, q);
      return;
    }
    for (int c = 0; c <= used; ++c) {
      label[static_cast<std::size_t>(pos)] = c;
      rec(pos + 1, std::max(used, c + 1));
    }
  };
  label[0] = 0;
  rec(1, 1);
  return best;
}


// Mean inverse shortest-path length over ordered pairs (Floyd-Warshall).
inline double graph_efficiency(int n, const std::function<bool(int, int)>& edge) {
  const int inf = 1 << 20;
  std::vector<std::vector<int>> d(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), inf));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 0;
      } else if (edge(i, j)) {
        d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 1;
      }
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

// Mean local clustering by triangle enumeration; nodes of degree < 2 count 0.
inline double graph_clustering(int n, const std::function<bool(int, int)>& edge) {
  double total = 0;
  for (int i = 0; i < n; ++i) {
    int deg = 0, tri = 0;
    for (int j = 0; j < n; ++j) deg += (j != i && edge(i, j));
    for (int j = 0; j < n; ++j) {
      for (int k = j + 1; k < n; ++k) tri += j != i && k != i && edge(i, j) && edge(i, k) && edge(j, k);
    }
    if (deg >= 2) total += 2.0 * tri / (static_cast<double>(deg) * (deg - 1.0));
  }
  return total / n;
}

// Newman modularity of a given partition, straight from the definition.
inline double partition_modularity(int n, const std::function<bool(int, int)>& edge, const std::vector<int>& community) {
  std::vector<double> degree(static_cast<std::size_t>(n), 0.0);
  double two_m = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j && edge(i, j)) degree[static_cast<std::size_t>(i)] += 1;
    }
    two_m += degree[static_cast<std::size_t>(i)];
  }
  double q = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (community[static_cast<std::size_t>(i)] != community[static_cast<std::size_t>(j)]) continue;
      const double a = (i != j && edge(i, j)) ? 1.0 : 0.0;
      q += a - degree[static_cast<std::size_t>(i)] * degree[static_cast<std::size_t>(j)] / two_m;
    }
  }
  return q / two_m;
}

// Triple-loop matrix product.
inline Eigen::MatrixXd naive_matmul(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd c(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

// Central differences of a scalar function of a vector.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double eps = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double fp = f(x);
    x[i] = keep - eps;
    const double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2 * eps);
  }
  return g;
}

}  // namespace oracle
