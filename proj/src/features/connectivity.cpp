#include <algorithm>
#include <cmath>
#include <numeric>

#include "neurotoken/error.hpp"
#include "neurotoken/features.hpp"

namespace neurotoken::features {

Eigen::MatrixXd pearson(const Eigen::MatrixXd& rows) {
  const Eigen::Index n = rows.rows();
  require(rows.cols() >= 3, ErrorKind::PreconditionViolation, "correlation needs at least 3 time points");
  Eigen::MatrixXd centered = rows.colwise() - rows.rowwise().mean();
  Eigen::VectorXd norms = centered.rowwise().norm();
  Eigen::MatrixXd out = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double r = 0.0;
      if (norms[i] > 0.0 && norms[j] > 0.0) {
        r = centered.row(i).dot(centered.row(j)) / (norms[i] * norms[j]);
        r = std::clamp(r, -1.0, 1.0);
      }
      out(i, j) = r;
      out(j, i) = r;
    }
  }
  return out;
}

FcMatrix fc_matrix(const signal::RoiTimeSeries& scan) {
  return FcMatrix{pearson(scan.data), scan.roi_names()};
}

FcMatrix fnc(const Eigen::MatrixXd& timecourses) {
  require(timecourses.rows() >= 2, ErrorKind::PreconditionViolation, "fnc needs at least 2 time courses");
  FcMatrix out;
  out.values = pearson(timecourses);
  for (Eigen::Index i = 0; i < timecourses.rows(); ++i) out.roi_names.push_back("C" + std::to_string(i + 1));
  return out;
}

Eigen::MatrixXd network_mean_timecourses(const signal::RoiTimeSeries& scan) {
  const auto n_net = static_cast<Eigen::Index>(scan.network_names.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_net, scan.data.cols());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(n_net);
  for (Eigen::Index r = 0; r < scan.data.rows(); ++r) {
    const int net = scan.network_of[static_cast<std::size_t>(r)];
    out.row(net) += scan.data.row(r);
    counts[net] += 1.0;
  }
  for (Eigen::Index k = 0; k < n_net; ++k) {
    if (counts[k] > 0.0) out.row(k) /= counts[k];
  }
  return out;
}

double network_pair_value(const FcMatrix& fc, std::span<const int> network_of, int a, int b) {
  require(static_cast<int>(network_of.size()) == fc.size(), ErrorKind::PreconditionViolation,
          "every ROI must be assigned a network");
  if (a > b) std::swap(a, b);
  double total = 0.0;
  int count = 0;
  int members_a = 0;
  for (int i = 0; i < fc.size(); ++i) {
    if (network_of[static_cast<std::size_t>(i)] == a) ++members_a;
  }
  if (a == b) {
    require(members_a >= 2, ErrorKind::SingletonNetwork,
            "network " + std::to_string(a) + " has fewer than 2 ROIs");
    for (int i = 0; i < fc.size(); ++i) {
      for (int j = i + 1; j < fc.size(); ++j) {
        if (network_of[static_cast<std::size_t>(i)] == a && network_of[static_cast<std::size_t>(j)] == a) {
          total += fc.values(i, j);
          ++count;
        }
      }
    }
    return total / count;
  }
  for (int i = 0; i < fc.size(); ++i) {
    if (network_of[static_cast<std::size_t>(i)] != a) continue;
    for (int j = 0; j < fc.size(); ++j) {
      if (network_of[static_cast<std::size_t>(j)] != b) continue;
      total += fc.values(i, j);
      ++count;
    }
  }
  require(count > 0, ErrorKind::PreconditionViolation, "network pair has no members");
  return total / count;
}

std::map<NetworkPair, double> network_pair_fc(const FcMatrix& fc, std::span<const int> network_of) {
  const int n_net = network_of.empty() ? 0 : *std::max_element(network_of.begin(), network_of.end()) + 1;
  std::map<NetworkPair, double> out;
  for (int a = 0; a < n_net; ++a) {
    for (int b = a; b < n_net; ++b) out[{a, b}] = network_pair_value(fc, network_of, a, b);
  }
  return out;
}

namespace {

std::vector<Edge> upper_edges(const FcMatrix& fc) {
  std::vector<Edge> edges;
  for (int i = 0; i < fc.size(); ++i) {
    for (int j = i + 1; j < fc.size(); ++j) edges.push_back({i, j, fc.values(i, j)});
  }
  return edges;
}

bool lex_less(const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; }

// Strongest first; equal values in lexicographic (i, j) order.
void sort_descending(std::vector<Edge>& edges) {
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.value != b.value) return a.value > b.value;
    return lex_less(a, b);
  });
}

}  // namespace

EdgeLists top_bottom_edges(const FcMatrix& fc, int k) {
  auto edges = upper_edges(fc);
  require(k >= 0 && k <= static_cast<int>(edges.size()), ErrorKind::KTooLarge,
          "k=" + std::to_string(k) + " exceeds " + std::to_string(edges.size()) + " pairs");
  EdgeLists out;
  sort_descending(edges);
  out.top.assign(edges.begin(), edges.begin() + k);
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.value != b.value) return a.value < b.value;
    return lex_less(a, b);
  });
  out.bottom.assign(edges.begin(), edges.begin() + k);
  return out;
}

BinaryGraph threshold_binarize(const FcMatrix& fc, double density) {
  require(density > 0.0 && density <= 1.0, ErrorKind::PreconditionViolation, "density must be in (0, 1]");
  auto edges = upper_edges(fc);
  sort_descending(edges);
  // The slack absorbs products such as 0.1 * 190 landing just above an integer.
  const auto keep = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(edges.size()), std::ceil(density * static_cast<double>(edges.size()) - 1e-9)));
  BinaryGraph g(fc.size());
  g.density = density;
  for (std::size_t e = 0; e < keep; ++e) g.connect(edges[e].i, edges[e].j);
  return g;
}

std::map<int, double> network_strength(const FcMatrix& fc, std::span<const int> network_of) {
  std::map<int, double> total;
  std::map<int, int> members;
  for (int i = 0; i < fc.size(); ++i) {
    double strength = 0.0;
    for (int j = 0; j < fc.size(); ++j) {
      if (j != i) strength += std::abs(fc.values(i, j));
    }
    const int net = network_of[static_cast<std::size_t>(i)];
    total[net] += strength;
    members[net] += 1;
  }
  for (auto& [net, value] : total) value /= members[net];
  return total;
}

}  // namespace neurotoken::features
