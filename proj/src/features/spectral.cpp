#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "neurotoken/error.hpp"
#include "neurotoken/features.hpp"
#include "neurotoken/rng.hpp"

namespace neurotoken::features {

GradientEmbedding diffusion_gradients(const FcMatrix& fc, int k, double keep_fraction, double alpha) {
  const int n = fc.size();
  require(k >= 1 && k < n, ErrorKind::PreconditionViolation, "need 1 <= k < N_roi");
  require(keep_fraction > 0.0 && keep_fraction <= 1.0, ErrorKind::PreconditionViolation,
          "row keep fraction must be in (0, 1]");
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::PreconditionViolation, "alpha must be in [0, 1]");

  // Per-row sparsification over off-diagonal entries; ties keep the lowest column.
  const int keep = std::max(1, static_cast<int>(std::ceil(keep_fraction * (n - 1) - 1e-9)));
  Eigen::MatrixXd sparse = Eigen::MatrixXd::Zero(n, n);
  std::vector<int> order(static_cast<std::size_t>(n - 1));
  for (int i = 0; i < n; ++i) {
    order.clear();
    for (int j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return fc.values(i, a) > fc.values(i, b); });
    for (int e = 0; e < keep; ++e) sparse(i, order[static_cast<std::size_t>(e)]) = fc.values(i, order[static_cast<std::size_t>(e)]);
  }

  Eigen::VectorXd norms = sparse.rowwise().norm();
  Eigen::MatrixXd affinity = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      if (norms[i] == 0.0 || norms[j] == 0.0) continue;
      const double c = std::max(0.0, sparse.row(i).dot(sparse.row(j)) / (norms[i] * norms[j]));
      affinity(i, j) = c;
      affinity(j, i) = c;
    }
  }
  Eigen::VectorXd degree = affinity.rowwise().sum();
  require(degree.maxCoeff() > 0.0, ErrorKind::DegenerateAffinity, "affinity matrix is all zero");
  require(degree.minCoeff() > 0.0, ErrorKind::DegenerateAffinity, "affinity matrix has an isolated ROI");

  Eigen::VectorXd scale = degree.array().pow(-alpha);
  Eigen::MatrixXd anisotropic = scale.asDiagonal() * affinity * scale.asDiagonal();
  Eigen::VectorXd d2 = anisotropic.rowwise().sum();
  Eigen::VectorXd inv_sqrt = d2.array().rsqrt();
  Eigen::MatrixXd sym = inv_sqrt.asDiagonal() * anisotropic * inv_sqrt.asDiagonal();
  sym = 0.5 * (sym + sym.transpose());

  // The stationary direction is known in closed form; pushing it to the
  // bottom of the spectrum keeps it out of the returned components even when
  // eigenvalue 1 is degenerate (disconnected affinity).
  Eigen::VectorXd u = d2.array().sqrt();
  u /= u.norm();
  Eigen::MatrixXd deflated = sym - 2.0 * u * u.transpose();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(deflated);
  require(solver.info() == Eigen::Success, ErrorKind::DegenerateAffinity, "eigensolve did not converge");

  GradientEmbedding out;
  out.components.resize(n, k);
  out.weights = d2 / d2.sum();
  for (int c = 0; c < k; ++c) {
    const int idx = n - 1 - c;  // ascending order from the solver
    const double lambda = solver.eigenvalues()[idx];
    Eigen::VectorXd psi = solver.eigenvectors().col(idx).array() / u.array();
    Eigen::Index arg = 0;
    psi.cwiseAbs().maxCoeff(&arg);
    if (psi[arg] < 0.0) psi = -psi;
    out.components.col(c) = lambda * psi;
    out.eigenvalues.push_back(std::clamp(lambda, -1.0, 1.0));
  }
  return out;
}

GradientStats gradient_stats(const GradientEmbedding& emb, std::span<const int> network_of) {
  require(emb.components.cols() >= 3, ErrorKind::TooFewComponents, "need at least 3 gradient components");
  GradientStats out;
  for (int c = 0; c < 3; ++c) {
    const auto col = emb.components.col(c);
    out.ranges.push_back(col.maxCoeff() - col.minCoeff());
    const double mean = col.mean();
    out.variances.push_back((col.array() - mean).square().mean());
  }
  std::map<int, int> counts;
  for (Eigen::Index i = 0; i < emb.components.rows(); ++i) {
    const int net = network_of[static_cast<std::size_t>(i)];
    out.network_means[net] += emb.components(i, 0);
    counts[net] += 1;
  }
  for (auto& [net, value] : out.network_means) value /= counts[net];
  return out;
}

std::vector<double> periodogram(std::span<const double> x) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> power;
  const double nn = static_cast<double>(n);
  for (std::size_t k = 1; k <= n / 2; ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t t = 0; t < n; ++t) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / nn;
      acc += (x[t] - mean) * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    const double weight = (2 * k == n) ? 1.0 : 2.0;
    power.push_back(weight * std::norm(acc) / (nn * nn));
  }
  return power;
}

SpectralStats spectral_stats(std::span<const double> x, double tr, double f_lo, double f_hi) {
  require(x.size() >= 8, ErrorKind::PreconditionViolation, "spectral stats need at least 8 samples");
  require(tr > 0.0, ErrorKind::PreconditionViolation, "tr must be positive");
  const double nyquist = 1.0 / (2.0 * tr);
  require(f_lo >= 0.0 && f_lo < f_hi && f_hi <= nyquist, ErrorKind::BandOutOfRange,
          "band must satisfy 0 <= f_lo < f_hi <= Nyquist");
  const std::size_t n = x.size();
  SpectralStats out;

  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  out.amplitude = std::sqrt(var / static_cast<double>(n));

  double dmean = 0.0;
  for (std::size_t t = 1; t < n; ++t) dmean += x[t] - x[t - 1];
  dmean /= static_cast<double>(n - 1);
  double dvar = 0.0;
  for (std::size_t t = 1; t < n; ++t) {
    const double d = x[t] - x[t - 1] - dmean;
    dvar += d * d;
  }
  out.variability = std::sqrt(dvar / static_cast<double>(n - 1));

  const auto power = periodogram(x);
  double low = 0.0;
  double high = 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < power.size(); ++b) {
    const double f = static_cast<double>(b + 1) / (static_cast<double>(n) * tr);
    total += power[b];
    if (f >= f_lo && f <= f_hi) {
      low += power[b];
    } else if (f > f_hi) {
      high += power[b];
    }
  }
  if (total > 0.0) {
    out.falff = std::clamp(low / total, 0.0, 1.0);
    out.spectral_ratio = low / std::max(high, 1e-12 * total);
  }
  return out;
}

namespace {

// (W W^T)^{-1/2} W
Eigen::MatrixXd symmetric_decorrelation(const Eigen::MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(w * w.transpose());
  Eigen::VectorXd inv_sqrt = solver.eigenvalues().array().max(1e-300).rsqrt();
  return solver.eigenvectors() * inv_sqrt.asDiagonal() * solver.eigenvectors().transpose() * w;
}

}  // namespace

IcaResult fastica(const Eigen::MatrixXd& x, int n_components, std::uint64_t seed, int max_iterations,
                  double tolerance, bool allow_unconverged) {
  const Eigen::Index channels = x.rows();
  const Eigen::Index t = x.cols();
  require(n_components >= 1 && n_components <= channels, ErrorKind::PreconditionViolation,
          "n_components must be in [1, channels]");
  require(t > channels, ErrorKind::PreconditionViolation, "need more samples than channels");

  Eigen::MatrixXd centered = x.colwise() - x.rowwise().mean();
  Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(t);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> pca(cov);
  require(pca.info() == Eigen::Success, ErrorKind::NoConvergence, "whitening eigensolve failed");
  Eigen::MatrixXd basis = pca.eigenvectors().rightCols(n_components);
  Eigen::VectorXd eig = pca.eigenvalues().tail(n_components);
  require(eig.minCoeff() > 0.0, ErrorKind::PreconditionViolation, "input is rank deficient");
  Eigen::MatrixXd whitening = eig.array().rsqrt().matrix().asDiagonal() * basis.transpose();
  Eigen::MatrixXd white = whitening * centered;

  Rng rng(seed);
  Eigen::MatrixXd w(n_components, n_components);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  w = symmetric_decorrelation(w);

  IcaResult out;
  bool converged = false;
  const double inv_t = 1.0 / static_cast<double>(t);
  for (int iter = 1; iter <= max_iterations; ++iter) {
    Eigen::MatrixXd g = (w * white).array().tanh().matrix();
    Eigen::VectorXd g_prime_mean = (1.0 - g.array().square()).rowwise().mean();
    Eigen::MatrixXd next = g * white.transpose() * inv_t - g_prime_mean.asDiagonal() * w;
    next = symmetric_decorrelation(next);
    const double change = ((next * w.transpose()).diagonal().cwiseAbs().array() - 1.0).abs().maxCoeff();
    w = next;
    out.iterations = iter;
    if (change < tolerance) {
      converged = true;
      break;
    }
  }
  out.converged = converged;
  require(converged || allow_unconverged, ErrorKind::NoConvergence,
          "FastICA did not converge in " + std::to_string(max_iterations) + " iterations");

  out.components = w * white;
  out.mixing = basis * eig.array().sqrt().matrix().asDiagonal() * w.transpose();
  return out;
}

}  // namespace neurotoken::features
