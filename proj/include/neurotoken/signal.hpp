#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace neurotoken::signal {

// One scan: N_roi rows by T columns of BOLD-like samples.
struct RoiTimeSeries {
  Eigen::MatrixXd data;
  double tr_seconds = 2.0;
  std::string site_id;
  std::string subject_id;
  std::vector<std::string> network_names;  // distinct, in display order
  std::vector<int> network_of;             // per ROI, index into network_names

  int n_roi() const { return static_cast<int>(data.rows()); }
  int n_time() const { return static_cast<int>(data.cols()); }
  std::string roi_name(int roi) const;
  std::vector<std::string> roi_names() const;
};

// Throws InvalidSpec when the structural invariants do not hold.
void validate(const RoiTimeSeries& scan);

struct CohortSpec {
  int n_subjects = 200;
  int n_roi = 20;
  int n_networks = 4;
  int t_points = 160;
  double tr_seconds = 2.0;
  int n_sites = 2;
  // Gain added to the latent shared by the designated network pair when the
  // binary factor is 1.
  double factor_effect = 0.6;
  double base_pair_gain = 0.3;
  double continuous_target_gain = 10.0;
  double target_noise_std = 0.05;
  double noise_std = 0.5;
  // AR(1) coefficient of every latent network signal.
  double latent_smoothness = 0.6;
  std::uint64_t seed = 1;
};

// Networks used by the generator: the continuous target tracks within-network
// coherence of `target_network`; the binary factor couples the pair.
inline constexpr int kTargetNetwork = 0;
inline constexpr int kPairNetworkA = 1;
inline constexpr int kPairNetworkB = 2;

struct LabeledScan {
  RoiTimeSeries scan;
  int binary_factor = 0;
  double continuous_target = 0.0;
  std::optional<std::string> semantic_text;
};

RoiTimeSeries resample_tr(const RoiTimeSeries& scan, double target_tr);
RoiTimeSeries fit_length(const RoiTimeSeries& scan, int target_t);
RoiTimeSeries robust_zscore(const RoiTimeSeries& scan);
std::vector<RoiTimeSeries> site_variance_normalize(const std::vector<RoiTimeSeries>& cohort);

// resample_tr -> fit_length -> robust_zscore.
RoiTimeSeries preprocess(const RoiTimeSeries& scan, double target_tr = 2.0, int target_t = 160);

std::vector<std::string> default_network_names(int n_networks);
std::vector<LabeledScan> generate_cohort(const CohortSpec& spec);

// Preprocesses every scan and applies site-wise variance normalization.
std::vector<LabeledScan> preprocess_cohort(const std::vector<LabeledScan>& cohort,
                                           double target_tr = 2.0, int target_t = 160);

// Scan file: header line "NTS1 <n_roi> <t> <tr>", then one comma-separated
// row per ROI.
void write_scan(const RoiTimeSeries& scan, const std::filesystem::path& path);
RoiTimeSeries read_scan(const std::filesystem::path& path);

struct ManifestEntry {
  std::string subject_id;
  std::string site_id;
  std::string path;
  int binary_factor = 0;
  double continuous_target = 0.0;
  std::optional<std::string> semantic_text;
  std::vector<std::string> network_names;
  std::vector<int> network_of;
};

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// Writes every scan under `dir` and a manifest.jsonl beside them.
void save_cohort(const std::vector<LabeledScan>& cohort, const std::filesystem::path& dir);
std::vector<LabeledScan> load_cohort(const std::filesystem::path& manifest_path);

}  // namespace neurotoken::signal
