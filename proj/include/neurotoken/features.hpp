#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "neurotoken/signal.hpp"

namespace neurotoken::features {

struct FcMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> roi_names;

  int size() const { return static_cast<int>(values.rows()); }
};

struct BinaryGraph {
  int n = 0;
  std::vector<std::uint8_t> adjacency;  // row-major n x n
  double density = 1.0;

  BinaryGraph() = default;
  explicit BinaryGraph(int nodes) : n(nodes), adjacency(static_cast<std::size_t>(nodes * nodes), 0) {}

  bool edge(int i, int j) const { return adjacency[static_cast<std::size_t>(i * n + j)] != 0; }
  void connect(int i, int j) {
    adjacency[static_cast<std::size_t>(i * n + j)] = 1;
    adjacency[static_cast<std::size_t>(j * n + i)] = 1;
  }
  int degree(int i) const;
  int edge_count() const;
};

struct Edge {
  int i = 0;
  int j = 0;
  double value = 0.0;
};

struct EdgeLists {
  std::vector<Edge> top;
  std::vector<Edge> bottom;
};

struct Partition {
  double q = 0.0;
  std::vector<int> community;
};

// Diffusion-map coordinates. `weights` is the stationary distribution under
// which the columns of `components` are orthogonal.
struct GradientEmbedding {
  Eigen::MatrixXd components;
  std::vector<double> eigenvalues;
  Eigen::VectorXd weights;
};

struct GradientStats {
  std::vector<double> ranges;
  std::vector<double> variances;
  std::map<int, double> network_means;
};

struct SpectralStats {
  double amplitude = 0.0;
  double variability = 0.0;
  double spectral_ratio = 0.0;
  double falff = 0.0;
};

struct IcaResult {
  Eigen::MatrixXd components;  // n_components x T, unit variance rows
  Eigen::MatrixXd mixing;      // channels x n_components
  int iterations = 0;
  bool converged = false;
};

using NetworkPair = std::pair<int, int>;  // first <= second

// Pearson correlation between the rows of `rows`.
Eigen::MatrixXd pearson(const Eigen::MatrixXd& rows);

FcMatrix fc_matrix(const signal::RoiTimeSeries& scan);

double network_pair_value(const FcMatrix& fc, std::span<const int> network_of, int a, int b);
std::map<NetworkPair, double> network_pair_fc(const FcMatrix& fc, std::span<const int> network_of);

EdgeLists top_bottom_edges(const FcMatrix& fc, int k);

BinaryGraph threshold_binarize(const FcMatrix& fc, double density);

// Louvain-style greedy maximization with ascending node order.
Partition modularity(const BinaryGraph& g);

// Newman modularity of an arbitrary partition.
double modularity_of(const BinaryGraph& g, std::span<const int> community);

double global_efficiency(const BinaryGraph& g);
double avg_clustering(const BinaryGraph& g);

std::map<int, double> network_strength(const FcMatrix& fc, std::span<const int> network_of);

GradientEmbedding diffusion_gradients(const FcMatrix& fc, int k = 3, double keep_fraction = 0.1,
                                      double alpha = 0.5);

GradientStats gradient_stats(const GradientEmbedding& emb, std::span<const int> network_of);

SpectralStats spectral_stats(std::span<const double> timecourse, double tr, double f_lo = 0.01,
                             double f_hi = 0.08);

// One-sided periodogram of the mean-removed series over bins k = 1..T/2;
// sums to the population variance.
std::vector<double> periodogram(std::span<const double> timecourse);

// Symmetric FastICA with a tanh contrast. Throws NoConvergence unless
// `allow_unconverged`, in which case the last iterate is returned.
IcaResult fastica(const Eigen::MatrixXd& x, int n_components, std::uint64_t seed, int max_iterations = 500,
                  double tolerance = 1e-6, bool allow_unconverged = false);

FcMatrix fnc(const Eigen::MatrixXd& timecourses);

// Mean time course of each network (rows in network index order).
Eigen::MatrixXd network_mean_timecourses(const signal::RoiTimeSeries& scan);

}  // namespace neurotoken::features
