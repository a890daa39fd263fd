#include "neurotoken/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "neurotoken/error.hpp"
#include "neurotoken/rng.hpp"

namespace neurotoken::signal {

namespace {

void require_finite(const Eigen::MatrixXd& data, const std::string& what) {
  if (!data.allFinite()) fail(ErrorKind::NonFiniteInput, what + " contains non-finite samples");
}

RoiTimeSeries with_data(const RoiTimeSeries& like, Eigen::MatrixXd data, double tr) {
  RoiTimeSeries out;
  out.data = std::move(data);
  out.tr_seconds = tr;
  out.site_id = like.site_id;
  out.subject_id = like.subject_id;
  out.network_names = like.network_names;
  out.network_of = like.network_of;
  return out;
}

// Linear interpolation of `row` (unit-spaced samples) at fractional index x.
double interpolate(const Eigen::RowVectorXd& row, double x) {
  const Eigen::Index last = row.size() - 1;
  if (x <= 0.0) return row[0];
  if (x >= static_cast<double>(last)) return row[last];
  auto lo = static_cast<Eigen::Index>(std::floor(x));
  double frac = x - static_cast<double>(lo);
  if (frac == 0.0) return row[lo];
  return row[lo] + frac * (row[lo + 1] - row[lo]);
}

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  double upper = *mid;
  if (n % 2 == 1) return upper;
  double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace

std::string RoiTimeSeries::roi_name(int roi) const {
  const auto& net = network_names.at(static_cast<std::size_t>(network_of.at(static_cast<std::size_t>(roi))));
  int ordinal = 0;
  for (int i = 0; i < roi; ++i) {
    if (network_of[static_cast<std::size_t>(i)] == network_of[static_cast<std::size_t>(roi)]) ++ordinal;
  }
  return net + "_" + std::to_string(ordinal + 1);
}

std::vector<std::string> RoiTimeSeries::roi_names() const {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(n_roi()));
  for (int i = 0; i < n_roi(); ++i) names.push_back(roi_name(i));
  return names;
}

void validate(const RoiTimeSeries& scan) {
  require(scan.n_roi() >= 2 && scan.n_time() >= 2, ErrorKind::InvalidSpec,
          "scan must have at least 2 ROIs and 2 time points");
  require(scan.tr_seconds > 0.0, ErrorKind::InvalidSpec, "tr must be positive");
  require(static_cast<int>(scan.network_of.size()) == scan.n_roi(), ErrorKind::InvalidSpec,
          "every ROI needs exactly one network assignment");
  for (int net : scan.network_of) {
    require(net >= 0 && net < static_cast<int>(scan.network_names.size()), ErrorKind::InvalidSpec,
            "network index out of range");
  }
}

RoiTimeSeries resample_tr(const RoiTimeSeries& scan, double target_tr) {
  require(scan.tr_seconds > 0.0 && target_tr > 0.0, ErrorKind::PreconditionViolation,
          "repetition times must be positive");
  require_finite(scan.data, "scan " + scan.subject_id);
  const double duration = static_cast<double>(scan.n_time() - 1) * scan.tr_seconds;
  // Small slack so that exact multiples survive floating-point division.
  const auto n_out = static_cast<Eigen::Index>(std::floor(duration / target_tr + 1e-9)) + 1;
  Eigen::MatrixXd out(scan.data.rows(), n_out);
  const double step = target_tr / scan.tr_seconds;
  for (Eigen::Index r = 0; r < scan.data.rows(); ++r) {
    Eigen::RowVectorXd row = scan.data.row(r);
    for (Eigen::Index j = 0; j < n_out; ++j) out(r, j) = interpolate(row, static_cast<double>(j) * step);
  }
  return with_data(scan, std::move(out), target_tr);
}

RoiTimeSeries fit_length(const RoiTimeSeries& scan, int target_t) {
  require(target_t >= 2, ErrorKind::PreconditionViolation, "target length must be at least 2");
  const int t = scan.n_time();
  if (t == target_t) return scan;
  if (t > target_t) return with_data(scan, scan.data.leftCols(target_t), scan.tr_seconds);
  Eigen::MatrixXd out(scan.data.rows(), target_t);
  const double step = static_cast<double>(t - 1) / static_cast<double>(target_t - 1);
  for (Eigen::Index r = 0; r < scan.data.rows(); ++r) {
    Eigen::RowVectorXd row = scan.data.row(r);
    for (int j = 0; j < target_t; ++j) out(r, j) = interpolate(row, static_cast<double>(j) * step);
  }
  return with_data(scan, std::move(out), scan.tr_seconds);
}

RoiTimeSeries robust_zscore(const RoiTimeSeries& scan) {
  require(scan.n_time() >= 2, ErrorKind::PreconditionViolation, "robust z-score needs T >= 2");
  Eigen::MatrixXd out(scan.data.rows(), scan.data.cols());
  for (Eigen::Index r = 0; r < scan.data.rows(); ++r) {
    std::vector<double> row(scan.data.row(r).begin(), scan.data.row(r).end());
    const double med = median_of(row);
    std::vector<double> dev(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) dev[i] = std::abs(row[i] - med);
    const double mad = median_of(dev);
    if (mad > 0.0) {
      const double scale = 1.4826 * mad;
      for (std::size_t i = 0; i < row.size(); ++i) out(r, static_cast<Eigen::Index>(i)) = (row[i] - med) / scale;
      continue;
    }
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(row.size()));
    for (std::size_t i = 0; i < row.size(); ++i) {
      out(r, static_cast<Eigen::Index>(i)) = sd > 0.0 ? (row[i] - mean) / sd : 0.0;
    }
  }
  return with_data(scan, std::move(out), scan.tr_seconds);
}

std::vector<RoiTimeSeries> site_variance_normalize(const std::vector<RoiTimeSeries>& cohort) {
  std::vector<std::string> sites;
  for (const auto& scan : cohort) {
    if (std::find(sites.begin(), sites.end(), scan.site_id) == sites.end()) sites.push_back(scan.site_id);
  }
  std::vector<RoiTimeSeries> out = cohort;
  for (const auto& site : sites) {
    double sum = 0.0;
    double count = 0.0;
    for (const auto& scan : cohort) {
      if (scan.site_id != site) continue;
      sum += scan.data.sum();
      count += static_cast<double>(scan.data.size());
    }
    const double mean = sum / count;
    double ss = 0.0;
    for (const auto& scan : cohort) {
      if (scan.site_id != site) continue;
      ss += (scan.data.array() - mean).square().sum();
    }
    const double sd = std::sqrt(ss / count);
    require(sd > 0.0, ErrorKind::DegenerateSite, "site '" + site + "' has zero pooled variance");
    for (auto& scan : out) {
      if (scan.site_id == site) scan.data /= sd;
    }
  }
  return out;
}

RoiTimeSeries preprocess(const RoiTimeSeries& scan, double target_tr, int target_t) {
  return robust_zscore(fit_length(resample_tr(scan, target_tr), target_t));
}

std::vector<std::string> default_network_names(int n_networks) {
  static const std::vector<std::string> yeo = {"Visual",  "Somatomotor",    "DorsalAttention", "Salience",
                                               "Limbic",  "Frontoparietal", "Default"};
  std::vector<std::string> names;
  for (int k = 0; k < n_networks; ++k) {
    if (n_networks <= static_cast<int>(yeo.size())) {
      names.push_back(yeo[static_cast<std::size_t>(k)]);
    } else {
      names.push_back("Network" + std::to_string(k + 1));
    }
  }
  return names;
}

namespace {

// Unit-variance AR(1) process.
Eigen::RowVectorXd smooth_latent(Rng& rng, int t_points, double phi) {
  Eigen::RowVectorXd x(t_points);
  const double innovation = std::sqrt(1.0 - phi * phi);
  x[0] = rng.normal();
  for (int t = 1; t < t_points; ++t) x[t] = phi * x[t - 1] + innovation * rng.normal();
  return x;
}

double mean_within_fc(const Eigen::MatrixXd& data, const std::vector<int>& network_of, int network) {
  std::vector<Eigen::Index> members;
  for (std::size_t i = 0; i < network_of.size(); ++i) {
    if (network_of[i] == network) members.push_back(static_cast<Eigen::Index>(i));
  }
  Eigen::MatrixXd centered(static_cast<Eigen::Index>(members.size()), data.cols());
  for (std::size_t i = 0; i < members.size(); ++i) {
    Eigen::RowVectorXd row = data.row(members[i]);
    centered.row(static_cast<Eigen::Index>(i)) = row.array() - row.mean();
    const double norm = centered.row(static_cast<Eigen::Index>(i)).norm();
    if (norm > 0.0) centered.row(static_cast<Eigen::Index>(i)) /= norm;
  }
  double total = 0.0;
  int pairs = 0;
  for (Eigen::Index i = 0; i < centered.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < centered.rows(); ++j) {
      total += centered.row(i).dot(centered.row(j));
      ++pairs;
    }
  }
  return pairs > 0 ? total / pairs : 0.0;
}

}  // namespace

std::vector<LabeledScan> generate_cohort(const CohortSpec& spec) {
  require(spec.n_subjects >= 1, ErrorKind::InvalidSpec, "n_subjects must be positive");
  require(spec.n_networks >= 2, ErrorKind::InvalidSpec, "n_networks must be at least 2");
  require(spec.n_roi >= spec.n_networks && spec.n_roi % spec.n_networks == 0, ErrorKind::InvalidSpec,
          "n_roi must be a positive multiple of n_networks");
  require(spec.n_roi / spec.n_networks >= 2, ErrorKind::InvalidSpec, "each network needs at least 2 ROIs");
  require(spec.noise_std > 0.0, ErrorKind::InvalidSpec, "noise_std must be positive");
  require(spec.t_points >= 2, ErrorKind::InvalidSpec, "t_points must be at least 2");
  require(spec.tr_seconds > 0.0, ErrorKind::InvalidSpec, "tr must be positive");
  require(spec.n_sites >= 1, ErrorKind::InvalidSpec, "n_sites must be positive");
  require(spec.latent_smoothness >= 0.0 && spec.latent_smoothness < 1.0, ErrorKind::InvalidSpec,
          "latent_smoothness must be in [0, 1)");

  const int per_network = spec.n_roi / spec.n_networks;
  const bool has_pair = spec.n_networks > kPairNetworkB;
  std::vector<int> network_of(static_cast<std::size_t>(spec.n_roi));
  for (int i = 0; i < spec.n_roi; ++i) network_of[static_cast<std::size_t>(i)] = i / per_network;
  const auto names = default_network_names(spec.n_networks);

  Rng rng(spec.seed);
  std::vector<double> site_gain(static_cast<std::size_t>(spec.n_sites));
  for (auto& g : site_gain) g = rng.uniform(0.5, 2.0);

  std::vector<LabeledScan> cohort;
  cohort.reserve(static_cast<std::size_t>(spec.n_subjects));
  for (int s = 0; s < spec.n_subjects; ++s) {
    LabeledScan labeled;
    labeled.binary_factor = rng.uniform() < 0.5 ? 1 : 0;
    const double target_gain = rng.uniform(0.3, 1.5);
    const int site = s % spec.n_sites;

    std::vector<Eigen::RowVectorXd> latent;
    for (int k = 0; k < spec.n_networks; ++k) {
      latent.push_back(smooth_latent(rng, spec.t_points, spec.latent_smoothness));
    }
    Eigen::RowVectorXd shared = smooth_latent(rng, spec.t_points, spec.latent_smoothness);
    const double pair_gain = spec.base_pair_gain + spec.factor_effect * labeled.binary_factor;

    Eigen::MatrixXd data(spec.n_roi, spec.t_points);
    for (int i = 0; i < spec.n_roi; ++i) {
      const int net = network_of[static_cast<std::size_t>(i)];
      const double gain = net == kTargetNetwork ? target_gain : 1.0;
      Eigen::RowVectorXd row = gain * latent[static_cast<std::size_t>(net)];
      if (has_pair && (net == kPairNetworkA || net == kPairNetworkB)) row += pair_gain * shared;
      for (int t = 0; t < spec.t_points; ++t) row[t] += spec.noise_std * rng.normal();
      data.row(i) = site_gain[static_cast<std::size_t>(site)] * row.array() + 100.0;
    }
    const double fc = mean_within_fc(data, network_of, kTargetNetwork);
    labeled.continuous_target = spec.continuous_target_gain * (fc + spec.target_noise_std * rng.normal());

    char subject[32];
    std::snprintf(subject, sizeof(subject), "sub-%04d", s + 1);
    labeled.scan.data = std::move(data);
    labeled.scan.tr_seconds = spec.tr_seconds;
    labeled.scan.site_id = "site-" + std::to_string(site + 1);
    labeled.scan.subject_id = subject;
    labeled.scan.network_names = names;
    labeled.scan.network_of = network_of;
    // Attributes carried in the subject description are independent of the
    // labels so that they cannot leak the answer.
    const int age = 40 + static_cast<int>(rng.below(40));
    labeled.semantic_text = "The participant is " + std::to_string(age) + " years old and was scanned at " +
                            labeled.scan.site_id + ".";
    cohort.push_back(std::move(labeled));
  }
  return cohort;
}

std::vector<LabeledScan> preprocess_cohort(const std::vector<LabeledScan>& cohort, double target_tr,
                                           int target_t) {
  std::vector<RoiTimeSeries> scans;
  scans.reserve(cohort.size());
  for (const auto& item : cohort) scans.push_back(preprocess(item.scan, target_tr, target_t));
  scans = site_variance_normalize(scans);
  std::vector<LabeledScan> out = cohort;
  for (std::size_t i = 0; i < out.size(); ++i) out[i].scan = std::move(scans[i]);
  return out;
}

void write_scan(const RoiTimeSeries& scan, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::MissingArtifact, "cannot write " + path.string());
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", scan.tr_seconds);
  out << "NTS1 " << scan.n_roi() << ' ' << scan.n_time() << ' ' << buf << '\n';
  for (Eigen::Index r = 0; r < scan.data.rows(); ++r) {
    for (Eigen::Index c = 0; c < scan.data.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", scan.data(r, c));
      if (c > 0) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

RoiTimeSeries read_scan(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingArtifact, "cannot read " + path.string());
  std::string magic;
  int n_roi = 0;
  int t = 0;
  double tr = 0.0;
  in >> magic >> n_roi >> t >> tr;
  require(in && magic == "NTS1", ErrorKind::FormatError, path.string() + ": bad scan header");
  require(n_roi >= 1 && t >= 1 && tr > 0.0, ErrorKind::FormatError, path.string() + ": bad scan dimensions");
  std::string line;
  std::getline(in, line);
  RoiTimeSeries scan;
  scan.tr_seconds = tr;
  scan.data.resize(n_roi, t);
  for (int r = 0; r < n_roi; ++r) {
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::FormatError,
            path.string() + ": missing ROI row " + std::to_string(r));
    std::stringstream row(line);
    std::string cell;
    int c = 0;
    while (std::getline(row, cell, ',')) {
      require(c < t, ErrorKind::FormatError, path.string() + ": too many columns");
      scan.data(r, c++) = std::stod(cell);
    }
    require(c == t, ErrorKind::FormatError, path.string() + ": too few columns in row " + std::to_string(r));
  }
  return scan;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::MissingArtifact, "cannot write " + path.string());
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["subject_id"] = e.subject_id;
    j["site_id"] = e.site_id;
    j["path"] = e.path;
    j["labels"] = {{"binary_factor", e.binary_factor}, {"continuous_target", e.continuous_target}};
    j["semantic_text"] = e.semantic_text ? nlohmann::ordered_json(*e.semantic_text) : nlohmann::ordered_json();
    j["network_names"] = e.network_names;
    j["network_of"] = e.network_of;
    out << j.dump() << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingArtifact, "cannot read " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.subject_id = j.at("subject_id").get<std::string>();
      e.site_id = j.at("site_id").get<std::string>();
      e.path = j.at("path").get<std::string>();
      e.binary_factor = j.at("labels").at("binary_factor").get<int>();
      e.continuous_target = j.at("labels").at("continuous_target").get<double>();
      if (j.contains("semantic_text") && !j["semantic_text"].is_null()) {
        e.semantic_text = j["semantic_text"].get<std::string>();
      }
      e.network_names = j.at("network_names").get<std::vector<std::string>>();
      e.network_of = j.at("network_of").get<std::vector<int>>();
      entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorKind::FormatError, path.string() + ": " + ex.what());
    }
  }
  return entries;
}

void save_cohort(const std::vector<LabeledScan>& cohort, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "scans");
  std::vector<ManifestEntry> entries;
  for (const auto& item : cohort) {
    const std::string rel = "scans/" + item.scan.subject_id + ".nts";
    write_scan(item.scan, dir / rel);
    ManifestEntry e;
    e.subject_id = item.scan.subject_id;
    e.site_id = item.scan.site_id;
    e.path = rel;
    e.binary_factor = item.binary_factor;
    e.continuous_target = item.continuous_target;
    e.semantic_text = item.semantic_text;
    e.network_names = item.scan.network_names;
    e.network_of = item.scan.network_of;
    entries.push_back(std::move(e));
  }
  write_manifest(entries, dir / "manifest.jsonl");
}

std::vector<LabeledScan> load_cohort(const std::filesystem::path& manifest_path) {
  const auto base = manifest_path.parent_path();
  std::vector<LabeledScan> cohort;
  for (auto& e : read_manifest(manifest_path)) {
    LabeledScan item;
    item.scan = read_scan(base / e.path);
    item.scan.subject_id = e.subject_id;
    item.scan.site_id = e.site_id;
    item.scan.network_names = e.network_names;
    item.scan.network_of = e.network_of;
    validate(item.scan);
    item.binary_factor = e.binary_factor;
    item.continuous_target = e.continuous_target;
    item.semantic_text = e.semantic_text;
    cohort.push_back(std::move(item));
  }
  return cohort;
}

}  // namespace neurotoken::signal
