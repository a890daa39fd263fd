#pragma once

// Decoder-only language model over bytes, fMRI codes and a few specials.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurotoken/diff.hpp"
#include "neurotoken/nn.hpp"
#include "neurotoken/tokenizer.hpp"

namespace neurotoken::lm {

using diff::Mat;
using diff::Tensor;

// Ids: bytes [0, text_size), codes [text_size, text_size + K), then bos, eos,
// pad, fmri_start, fmri_end, sep.
struct Vocab {
  int text_size = 256;
  int codebook_size = 64;

  int size() const { return text_size + codebook_size + 6; }
  int fmri_id(int code) const;
  int code_of(int id) const;  // FormatError outside the code range
  bool is_text(int id) const { return id >= 0 && id < text_size; }
  bool is_fmri(int id) const { return id >= text_size && id < text_size + codebook_size; }
  int bos() const { return text_size + codebook_size; }
  int eos() const { return bos() + 1; }
  int pad() const { return bos() + 2; }
  int fmri_start() const { return bos() + 3; }
  int fmri_end() const { return bos() + 4; }
  int sep() const { return bos() + 5; }
  std::string role(int id) const;  // "text", "fmri" or the special's name
  bool operator==(const Vocab&) const = default;
};

// Full id table: {"text_size", "codebook_size", "entries": [{id, role, byte|code}]}.
nlohmann::json to_json(const Vocab& v);
Vocab vocab_from_json(const nlohmann::json& j);

// A token sequence. fMRI raster positions carry their time step and ROI;
// every other position has -1 in both.
struct Sequence {
  std::vector<int> ids;
  std::vector<int> step;
  std::vector<int> roi;

  std::size_t size() const { return ids.size(); }
  void push(int id, int step_index = -1, int roi_index = -1);
  void push_text(const std::string& text);
  bool operator==(const Sequence&) const = default;
};

// fmri_start, time-major ROI-minor raster of code ids, fmri_end.
Sequence flatten_grid(const tokenizer::TokenGrid& grid, const Vocab& vocab);
// Marks the raster positions.
std::vector<std::uint8_t> fmri_mask(const Sequence& seq);
// Inverse of flatten_grid on the first fMRI block; FormatError if malformed.
tokenizer::TokenGrid unflatten(const Sequence& seq, const Vocab& vocab);

struct LmConfig {
  int n_layers = 4;
  int n_heads = 4;
  int model_dim = 128;
  int ffn_dim = 0;  // 0 means 4 * model_dim
  int context_length = 1024;
  int max_steps = 8;
  int max_rois = 64;
  Vocab vocab;
  double alpha = 0.1;
  double beta = 0.5;
  std::uint64_t seed = 1;
};

nlohmann::json to_json(const LmConfig& c);
LmConfig lm_config_from_json(const nlohmann::json& j);

struct LoraConfig {
  int rank = 4;
  double alpha = 8.0;
  std::vector<std::string> targets = {"q", "k", "v", "o"};
  // Keep the output head trainable alongside the adapters.
  bool train_head = false;
};

nlohmann::json to_json(const LoraConfig& c);
LoraConfig lora_config_from_json(const nlohmann::json& j);

template <typename T>
class LanguageModel {
 public:
  explicit LanguageModel(const LmConfig& config);

  const LmConfig& config() const { return config_; }
  const Vocab& vocab() const { return config_.vocab; }

  // Final normalized hidden states, row-stacked over the batch.
  Tensor<T> hidden(const std::vector<const Sequence*>& batch) const;
  Tensor<T> logits_from_hidden(const Tensor<T>& hidden) const;
  // Next-token logits for every position; ContextOverflow past the context.
  Tensor<T> forward(const std::vector<const Sequence*>& batch) const;

  // Copies `table` rows into the byte embeddings and `codebook` rows into the
  // code embeddings; narrower tables fill the leading columns and zero the rest.
  void init_text_rows(const Mat<float>& table);
  void init_fmri_rows(const Mat<float>& codebook);

  // Adds low-rank adapters to the targeted attention projections and freezes
  // every other parameter. BadTarget for an unknown target or a second wrap.
  void lora_wrap(const LoraConfig& lora);
  bool adapted() const { return lora_.has_value(); }
  const std::optional<LoraConfig>& lora() const { return lora_; }

  std::vector<nn::Named<T>> named_parameters() const;
  std::vector<Tensor<T>> parameters() const;
  std::vector<Tensor<T>> trainable_parameters() const;
  long trainable_count() const;

 private:
  LmConfig config_;
  Tensor<T> tok_embed_;
  Tensor<T> pos_embed_;
  Tensor<T> step_embed_;  // last row: positions outside the raster
  Tensor<T> roi_embed_;   // last row: positions outside the raster
  std::vector<nn::Block<T>> blocks_;
  nn::LayerNorm<T> final_norm_;
  nn::Linear<T> head_;
  std::optional<LoraConfig> lora_;
};

// A sequence with the positions whose tokens are prediction targets.
struct Example {
  Sequence seq;
  std::vector<std::uint8_t> target;
};

// Steps after the first; SingleStep for a one-step grid.
Example make_f2f(const tokenizer::TokenGrid& grid, const Vocab& vocab);
// Grid, sep, text bytes, eos; targets are the text and eos. EmptyText.
Example make_f2t(const tokenizer::TokenGrid& grid, const std::string& text, const Vocab& vocab);
// Bytes only; every byte after the first is a target. TextTooShort below 2.
Example make_t2t(const std::string& text, const Vocab& vocab);

// Row i of a stacked batch predicts token i + 1 of its own sequence.
struct Targets {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
};
Targets next_token_targets(const std::vector<const Example*>& batch);

// Mean cross-entropy of `logits` (stacked over `batch`) on target positions.
// Rows without a target are never read.
template <typename T>
Tensor<T> masked_next_token_loss(const Tensor<T>& logits, const std::vector<const Example*>& batch);

template <typename T>
Tensor<T> example_loss(const LanguageModel<T>& model, const std::vector<const Example*>& batch);

template <typename T>
Tensor<T> f2f_loss(const LanguageModel<T>& model, const std::vector<tokenizer::TokenGrid>& grids);
template <typename T>
Tensor<T> f2t_loss(const LanguageModel<T>& model, const std::vector<tokenizer::TokenGrid>& grids,
                   const std::vector<std::string>& texts);
template <typename T>
Tensor<T> t2t_loss(const LanguageModel<T>& model, const std::vector<std::string>& texts);

// L_F2T + alpha L_F2F + beta L_T2T.
template <typename T>
Tensor<T> stage2_loss(const Tensor<T>& f2t, const Tensor<T>& f2f, const Tensor<T>& t2t, double alpha, double beta);

enum class DecodeMode { Greedy, Sample };

struct GenerateOptions {
  int max_new = 32;
  DecodeMode mode = DecodeMode::Greedy;
  double temperature = 1.0;
  // After the last sep, only bytes and eos may be emitted.
  bool constrain_text = false;
  std::uint64_t seed = 1;
};

// Appends up to max_new tokens, stopping after eos. Greedy ties go to the
// lowest id. ContextOverflow when the prefix alone exceeds the context.
Sequence generate(const LanguageModel<float>& model, const Sequence& prefix, const GenerateOptions& options);

// Log-probability of each candidate's bytes followed by eos after `prefix`.
std::vector<double> score_continuations(const LanguageModel<float>& model, const Sequence& prefix,
                                        const std::vector<std::string>& candidates);

// Bytes between the end of `prefix` and the first eos.
std::string decode_text(const Sequence& seq, std::size_t from, const Vocab& vocab);

// ---- stage 2 ----

struct Stage2Options {
  int epochs = 50;
  int batch_size = 32;
  double lr = 1e-4;
  double weight_decay = 0.01;
  int t2t_window = 128;
  bool use_f2t = true;
  bool use_f2f = true;
  bool use_t2t = true;
  std::uint64_t seed = 1;
};

struct Stage2EpochLog {
  int epoch = 0;
  double f2t = 0.0;
  double f2f = 0.0;
  double t2t = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

// Each step pairs every grid of the batch with one sentence of its paragraph
// (F2T), predicts its later steps (F2F) and models a window of `text_pool`
// (T2T). Only trainable parameters are updated.
std::vector<Stage2EpochLog> train_stage2(LanguageModel<float>& model, const std::vector<tokenizer::TokenGrid>& grids,
                                         const std::vector<std::string>& paragraphs, const std::string& text_pool,
                                         const Stage2Options& options,
                                         const std::function<void(const Stage2EpochLog&)>& on_epoch = {});

// Writes `<stem>.fmlm`, `<stem>.vocab.json` and `<stem>.config.json`.
void save_model(const LanguageModel<float>& model, const std::filesystem::path& stem);
// Restores the configuration, adapters (if saved) and weights.
LanguageModel<float> load_model(const std::filesystem::path& stem);

}  // namespace neurotoken::lm
