#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurotoken/diff.hpp"
#include "neurotoken/nn.hpp"
#include "neurotoken/signal.hpp"

namespace neurotoken::tokenizer {

using diff::Mat;
using diff::Tensor;

enum class ContrastiveKind { Softmax, Sigmoid };

struct TokenizerConfig {
  int patch_size = 32;
  int embed_dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_dim = 128;
  int decoder_hidden = 128;
  int classifier_hidden = 32;
  int codebook_size = 64;
  int n_roi = 20;
  int max_patches = 5;
  double commit_beta = 0.25;
  double grl_scale = 1.0;
  double lambda_domain = 0.5;
  double sigma_temp = 10.0;
  ContrastiveKind contrastive = ContrastiveKind::Softmax;
  std::uint64_t seed = 1;
};

nlohmann::json to_json(const TokenizerConfig& c);
TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j);

// Temporal patches of one scan. Row w * n_roi + r holds samples
// [w P, (w + 1) P) of ROI r; the tail of the last window is zero padding with
// weight 0.
struct Patches {
  int t_patches = 0;
  int n_roi = 0;
  int n_time = 0;
  Mat<double> values;
  Mat<double> weights;
};

// SeriesTooShort when T < P.
Patches patchify(const signal::RoiTimeSeries& scan, int patch_size);
// N_roi x T series from patch rows (padding dropped).
Eigen::MatrixXd unpatchify(const Mat<double>& rows, int t_patches, int n_roi, int n_time);

struct TokenGrid {
  int t_patches = 0;
  int n_roi = 0;
  std::vector<int> indices;  // time-major, ROI-minor

  int at(int w, int roi) const { return indices[static_cast<std::size_t>(w * n_roi + roi)]; }
  bool operator==(const TokenGrid&) const = default;
};

nlohmann::json to_json(const TokenGrid& grid);
TokenGrid grid_from_json(const nlohmann::json& j);

// The frozen text-embedding table: one row per byte. The language model
// initializes its byte embeddings from the same table.
Mat<float> initial_text_table(int dim, std::uint64_t seed);

template <typename T>
struct QuantizeResult {
  Tensor<T> z_tilde;  // straight-through
  Tensor<T> commit;   // scalar
  std::vector<int> indices;
};

template <typename T>
class Tokenizer {
 public:
  explicit Tokenizer(const TokenizerConfig& config);

  const TokenizerConfig& config() const { return config_; }

  // Encoder over a batch of scans; returns sum(M_i) x C with scans stacked.
  Tensor<T> encode(const std::vector<const Patches*>& batch) const;
  // Nearest code by Euclidean distance, ties to the lowest index.
  QuantizeResult<T> quantize(const Tensor<T>& z, std::vector<long>* usage = nullptr) const;
  // Per-token reconstruction: M x P.
  Tensor<T> decode(const Tensor<T>& z_tilde) const;
  // Domain logits, n x 1 (positive = fMRI).
  Tensor<T> classify(const Tensor<T>& x) const;

  const Tensor<T>& codebook() const { return codebook_; }
  Tensor<T>& codebook() { return codebook_; }

  std::vector<nn::Named<T>> named_parameters() const;
  std::vector<Tensor<T>> parameters() const;
  std::vector<Tensor<T>> classifier_parameters() const;

 private:
  TokenizerConfig config_;
  nn::Linear<T> patch_proj_;
  Tensor<T> roi_embed_;
  Tensor<T> time_embed_;
  std::vector<nn::Block<T>> blocks_;
  nn::LayerNorm<T> final_norm_;
  Tensor<T> codebook_;
  nn::Linear<T> dec1_, dec2_;
  nn::Linear<T> cls1_, cls2_;
};

// Mean binary cross-entropy of the domain classifier on encoder tokens
// (label 1, behind gradient reversal) and frozen text embeddings (label 0).
// EmptyBatch if either side is empty. `accuracy` receives the token accuracy.
template <typename T>
Tensor<T> domain_loss(const Tokenizer<T>& tok, const Tensor<T>& z_fmri, const Mat<T>& text_embeddings,
                      double grl_scale, double* accuracy = nullptr);

// Batch-softmax contrastive loss over cosine similarities scaled by sigma, or
// the pairwise sigmoid variant.
template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& fmri_pooled, const Tensor<T>& text_pooled, double sigma,
                           ContrastiveKind kind = ContrastiveKind::Softmax);

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double recon = 0.0;
  double commit = 0.0;
  double quant = 0.0;
  double contrast = 0.0;
  double domain = 0.0;
  double domain_accuracy = 0.0;
  std::vector<int> indices;
  Mat<T> z;  // encoder output values, for dead-code reinitialization
};

// L_quant + L_contrast + lambda L_domain. `text_tokens` may be empty only when
// lambda is zero; `paired_text` holds one pooled descriptor embedding per scan.
template <typename T>
LossTerms<T> tokenizer_loss(const Tokenizer<T>& tok, const std::vector<const Patches*>& batch,
                            const Mat<T>& text_tokens, const Mat<T>& paired_text,
                            std::vector<long>* usage = nullptr);

// Mean of table rows over the bytes of `text`.
Mat<float> pooled_text(const Mat<float>& table, const std::string& text);

struct Stage1Options {
  int epochs = 50;
  int batch_size = 32;
  double lr = 1e-4;
  double weight_decay = 0.01;
  // Learning-rate multiplier for the domain classifier.
  double classifier_lr_scale = 1.0;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 1;
};

struct Stage1EpochLog {
  int epoch = 0;
  double recon_mse = 0.0;
  double commit = 0.0;
  double contrast = 0.0;
  double domain = 0.0;
  double domain_accuracy = 0.0;
  double usage_fraction = 0.0;
  int dead_codes_reset = 0;
  double lr = 0.0;
};

struct Stage1Result {
  Tokenizer<float> tokenizer;
  std::vector<Stage1EpochLog> epochs;
  double heldout_domain_accuracy = 0.0;
  std::vector<int> train_indices;
  std::vector<int> heldout_indices;
};

// Stage 1: trains the tokenizer against a frozen text table. `paragraphs` are
// paired with `scans` by position; `text_pool` supplies the text tokens of the
// domain term together with the paragraphs.
Stage1Result train_stage1(const std::vector<signal::RoiTimeSeries>& scans, const std::vector<std::string>& paragraphs,
                          const Mat<float>& text_table, const std::string& text_pool, const TokenizerConfig& config,
                          const Stage1Options& options,
                          const std::function<void(const Stage1EpochLog&)>& on_epoch = {});

// Deterministic grid of code indices for one scan.
TokenGrid tokenize_scan(const signal::RoiTimeSeries& scan, const Tokenizer<float>& tok);

void save_tokenizer(const Tokenizer<float>& tok, const std::filesystem::path& checkpoint);
// The configuration must match the one the checkpoint was trained with.
Tokenizer<float> load_tokenizer(const TokenizerConfig& config, const std::filesystem::path& checkpoint);

}  // namespace neurotoken::tokenizer
