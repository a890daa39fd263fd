#include "neurotoken/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "neurotoken/error.hpp"
#include "neurotoken/rng.hpp"

namespace neurotoken::tokenizer {

namespace {

std::string contrastive_name(ContrastiveKind k) { return k == ContrastiveKind::Softmax ? "softmax" : "sigmoid"; }

ContrastiveKind contrastive_from_name(const std::string& s) {
  if (s == "softmax") return ContrastiveKind::Softmax;
  if (s == "sigmoid") return ContrastiveKind::Sigmoid;
  fail(ErrorKind::ConfigError, "unknown contrastive kind '" + s + "'");
}

}  // namespace

nlohmann::json to_json(const TokenizerConfig& c) {
  return {{"patch_size", c.patch_size},         {"embed_dim", c.embed_dim},
          {"n_layers", c.n_layers},             {"n_heads", c.n_heads},
          {"ffn_dim", c.ffn_dim},               {"decoder_hidden", c.decoder_hidden},
          {"classifier_hidden", c.classifier_hidden}, {"codebook_size", c.codebook_size},
          {"n_roi", c.n_roi},                   {"max_patches", c.max_patches},
          {"commit_beta", c.commit_beta},       {"grl_scale", c.grl_scale},
          {"lambda_domain", c.lambda_domain},   {"sigma_temp", c.sigma_temp},
          {"contrastive", contrastive_name(c.contrastive)}, {"seed", c.seed}};
}

TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j) {
  TokenizerConfig c;
  c.patch_size = j.at("patch_size");
  c.embed_dim = j.at("embed_dim");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.ffn_dim = j.at("ffn_dim");
  c.decoder_hidden = j.at("decoder_hidden");
  c.classifier_hidden = j.at("classifier_hidden");
  c.codebook_size = j.at("codebook_size");
  c.n_roi = j.at("n_roi");
  c.max_patches = j.at("max_patches");
  c.commit_beta = j.at("commit_beta");
  c.grl_scale = j.at("grl_scale");
  c.lambda_domain = j.at("lambda_domain");
  c.sigma_temp = j.at("sigma_temp");
  c.contrastive = contrastive_from_name(j.at("contrastive"));
  c.seed = j.at("seed");
  return c;
}

Patches patchify(const signal::RoiTimeSeries& scan, int patch_size) {
  require(patch_size >= 1, ErrorKind::PreconditionViolation, "patch size must be positive");
  const int t = scan.n_time();
  require(t >= patch_size, ErrorKind::SeriesTooShort,
          "series of " + std::to_string(t) + " samples is shorter than one patch of " + std::to_string(patch_size));
  Patches p;
  p.t_patches = (t + patch_size - 1) / patch_size;
  p.n_roi = scan.n_roi();
  p.n_time = t;
  p.values = Mat<double>::Zero(p.t_patches * p.n_roi, patch_size);
  p.weights = Mat<double>::Zero(p.values.rows(), patch_size);
  for (int w = 0; w < p.t_patches; ++w) {
    for (int r = 0; r < p.n_roi; ++r) {
      const Eigen::Index row = w * p.n_roi + r;
      for (int k = 0; k < patch_size; ++k) {
        const int s = w * patch_size + k;
        if (s >= t) break;
        p.values(row, k) = scan.data(r, s);
        p.weights(row, k) = 1.0;
      }
    }
  }
  return p;
}

Eigen::MatrixXd unpatchify(const Mat<double>& rows, int t_patches, int n_roi, int n_time) {
  require(rows.rows() == static_cast<Eigen::Index>(t_patches) * n_roi, ErrorKind::ShapeMismatch,
          "unpatchify: row count does not match the grid");
  const auto p = static_cast<int>(rows.cols());
  Eigen::MatrixXd out(n_roi, n_time);
  for (int w = 0; w < t_patches; ++w) {
    for (int r = 0; r < n_roi; ++r) {
      for (int k = 0; k < p; ++k) {
        const int s = w * p + k;
        if (s < n_time) out(r, s) = rows(w * n_roi + r, k);
      }
    }
  }
  return out;
}

nlohmann::json to_json(const TokenGrid& grid) {
  return {{"t_patches", grid.t_patches}, {"n_roi", grid.n_roi}, {"indices", grid.indices}};
}

TokenGrid grid_from_json(const nlohmann::json& j) {
  TokenGrid g;
  g.t_patches = j.at("t_patches");
  g.n_roi = j.at("n_roi");
  g.indices = j.at("indices").get<std::vector<int>>();
  require(g.indices.size() == static_cast<std::size_t>(g.t_patches * g.n_roi), ErrorKind::FormatError,
          "token grid has " + std::to_string(g.indices.size()) + " indices for a " + std::to_string(g.t_patches) +
              "x" + std::to_string(g.n_roi) + " grid");
  return g;
}

Mat<float> initial_text_table(int dim, std::uint64_t seed) {
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 0x5EED);
  Mat<float> table(256, dim);
  for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = static_cast<float>(rng.normal());
  return table;
}

// ---- model ---------------------------------------------------------------------

template <typename T>
Tokenizer<T>::Tokenizer(const TokenizerConfig& config) : config_(config) {
  const int c = config.embed_dim;
  require(c > 0 && config.n_heads > 0 && c % config.n_heads == 0, ErrorKind::InvalidSpec,
          "embed_dim must be divisible by n_heads");
  require(config.codebook_size >= 2, ErrorKind::InvalidSpec, "codebook needs at least 2 codes");
  require(config.patch_size >= 1 && config.n_roi >= 1 && config.max_patches >= 1, ErrorKind::InvalidSpec,
          "patch size, ROI count and patch count must be positive");
  Rng rng(config.seed);
  auto inv_sqrt = [](int n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  patch_proj_ = nn::Linear<T>::make(rng, config.patch_size, c, true, inv_sqrt(config.patch_size));
  roi_embed_ = nn::init_normal<T>(rng, config.n_roi, c, 0.5);
  time_embed_ = nn::init_normal<T>(rng, config.max_patches, c, 0.5);
  for (int l = 0; l < config.n_layers; ++l) blocks_.push_back(nn::Block<T>::make(rng, c, config.ffn_dim, config.n_layers));
  final_norm_ = nn::LayerNorm<T>::make(c);
  codebook_ = nn::init_normal<T>(rng, config.codebook_size, c, 1.0);
  dec1_ = nn::Linear<T>::make(rng, c, config.decoder_hidden, true, inv_sqrt(c));
  dec2_ = nn::Linear<T>::make(rng, config.decoder_hidden, config.patch_size, true, inv_sqrt(config.decoder_hidden));
  cls1_ = nn::Linear<T>::make(rng, c, config.classifier_hidden, true, inv_sqrt(c));
  cls2_ = nn::Linear<T>::make(rng, config.classifier_hidden, 1, true, inv_sqrt(config.classifier_hidden));
}

template <typename T>
Tensor<T> Tokenizer<T>::encode(const std::vector<const Patches*>& batch) const {
  require(!batch.empty(), ErrorKind::EmptyBatch, "encode of an empty batch");
  Eigen::Index rows = 0;
  for (const auto* p : batch) {
    require(p->n_roi == config_.n_roi && p->values.cols() == config_.patch_size, ErrorKind::ShapeMismatch,
            "encode: scan has " + std::to_string(p->n_roi) + " ROIs and patch width " +
                std::to_string(p->values.cols()) + ", tokenizer expects " + std::to_string(config_.n_roi) + " and " +
                std::to_string(config_.patch_size));
    require(p->t_patches <= config_.max_patches, ErrorKind::ShapeMismatch,
            "encode: " + std::to_string(p->t_patches) + " patches exceed the configured maximum " +
                std::to_string(config_.max_patches));
    rows += p->values.rows();
  }
  Mat<T> x(rows, config_.patch_size);
  std::vector<int> roi_ids, time_ids, segments;
  Eigen::Index off = 0;
  for (const auto* p : batch) {
    // Padded samples are zero by definition, whatever the buffer holds.
    x.middleRows(off, p->values.rows()) = p->values.cwiseProduct(p->weights).template cast<T>();
    off += p->values.rows();
    segments.push_back(static_cast<int>(p->values.rows()));
    for (int w = 0; w < p->t_patches; ++w) {
      for (int r = 0; r < p->n_roi; ++r) {
        roi_ids.push_back(r);
        time_ids.push_back(w);
      }
    }
  }
  auto h = diff::add(diff::add(patch_proj_(Tensor<T>::constant(std::move(x))), diff::gather_rows(roi_embed_, roi_ids)),
                     diff::gather_rows(time_embed_, time_ids));
  for (const auto& blk : blocks_) h = blk(h, config_.n_heads, false, segments);
  return final_norm_(h);
}

template <typename T>
QuantizeResult<T> Tokenizer<T>::quantize(const Tensor<T>& z, std::vector<long>* usage) const {
  require(z.cols() == codebook_.cols(), ErrorKind::ShapeMismatch, "quantize: latent width differs from codebook");
  const Mat<T>& e = codebook_.value();
  Mat<T> idx(z.rows(), 1);
  for (Eigen::Index m = 0; m < z.rows(); ++m) {
    Eigen::Index best = 0;
    T best_d = (z.value().row(m) - e.row(0)).squaredNorm();
    for (Eigen::Index k = 1; k < e.rows(); ++k) {
      const T d = (z.value().row(m) - e.row(k)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    idx(m, 0) = static_cast<T>(best);
  }
  if (auto* session = diff::SurrogateSession<T>::current()) idx = session->frozen(idx);

  QuantizeResult<T> out;
  out.indices.resize(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index m = 0; m < z.rows(); ++m) out.indices[static_cast<std::size_t>(m)] = static_cast<int>(idx(m, 0));
  if (usage) {
    if (usage->size() != static_cast<std::size_t>(e.rows())) usage->assign(static_cast<std::size_t>(e.rows()), 0);
    for (int i : out.indices) ++(*usage)[static_cast<std::size_t>(i)];
  }
  auto zq = diff::gather_rows(codebook_, out.indices);
  out.z_tilde = diff::straight_through(z, zq.value());
  out.commit = diff::add(diff::scale(diff::mse(z, diff::stop_gradient(zq)), static_cast<T>(config_.commit_beta)),
                         diff::mse(zq, diff::stop_gradient(z)));
  return out;
}

template <typename T>
Tensor<T> Tokenizer<T>::decode(const Tensor<T>& z_tilde) const {
  return dec2_(diff::gelu(dec1_(z_tilde)));
}

template <typename T>
Tensor<T> Tokenizer<T>::classify(const Tensor<T>& x) const {
  return cls2_(diff::gelu(cls1_(x)));
}

template <typename T>
std::vector<nn::Named<T>> Tokenizer<T>::named_parameters() const {
  std::vector<nn::Named<T>> out;
  patch_proj_.collect("tok.patch_proj", out);
  out.push_back({"tok.roi_embed", roi_embed_});
  out.push_back({"tok.time_embed", time_embed_});
  for (std::size_t l = 0; l < blocks_.size(); ++l) blocks_[l].collect("tok.block" + std::to_string(l), out);
  final_norm_.collect("tok.final_norm", out);
  out.push_back({"tok.codebook", codebook_});
  dec1_.collect("tok.decoder.l1", out);
  dec2_.collect("tok.decoder.l2", out);
  cls1_.collect("tok.domain.l1", out);
  cls2_.collect("tok.domain.l2", out);
  return out;
}

template <typename T>
std::vector<Tensor<T>> Tokenizer<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& n : named_parameters()) out.push_back(n.tensor);
  return out;
}

template <typename T>
std::vector<Tensor<T>> Tokenizer<T>::classifier_parameters() const {
  std::vector<nn::Named<T>> named;
  cls1_.collect("l1", named);
  cls2_.collect("l2", named);
  std::vector<Tensor<T>> out;
  for (auto& n : named) out.push_back(n.tensor);
  return out;
}

// ---- losses --------------------------------------------------------------------

template <typename T>
Tensor<T> domain_loss(const Tokenizer<T>& tok, const Tensor<T>& z_fmri, const Mat<T>& text_embeddings,
                      double grl_scale, double* accuracy) {
  require(z_fmri.rows() > 0 && text_embeddings.rows() > 0, ErrorKind::EmptyBatch,
          "domain loss needs both fMRI and text tokens");
  require(text_embeddings.cols() == z_fmri.cols(), ErrorKind::ShapeMismatch, "domain loss: embedding widths differ");
  auto x = diff::concat_rows<T>(
      {diff::grad_reverse(z_fmri, static_cast<T>(grl_scale)), Tensor<T>::constant(text_embeddings)});
  auto logits = tok.classify(x);
  std::vector<T> targets(static_cast<std::size_t>(x.rows()), T(0));
  std::fill(targets.begin(), targets.begin() + z_fmri.rows(), T(1));
  if (accuracy) {
    long hits = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) hits += (logits.value()(i, 0) > T(0)) == (targets[static_cast<std::size_t>(i)] > T(0));
    *accuracy = static_cast<double>(hits) / static_cast<double>(logits.rows());
  }
  return diff::bce_with_logits(logits, targets);
}

template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& fmri_pooled, const Tensor<T>& text_pooled, double sigma,
                           ContrastiveKind kind) {
  require(fmri_pooled.rows() >= 1 && fmri_pooled.rows() == text_pooled.rows(), ErrorKind::ShapeMismatch,
          "contrastive loss needs one text row per fMRI row");
  const auto b = static_cast<int>(fmri_pooled.rows());
  auto logits = diff::scale(diff::cosine_similarity(fmri_pooled, text_pooled), static_cast<T>(sigma));
  if (kind == ContrastiveKind::Softmax) {
    std::vector<int> targets(static_cast<std::size_t>(b));
    std::iota(targets.begin(), targets.end(), 0);
    return diff::cross_entropy(logits, targets, std::vector<std::uint8_t>(static_cast<std::size_t>(b), 1));
  }
  std::vector<T> targets(static_cast<std::size_t>(b) * static_cast<std::size_t>(b), T(0));
  for (int i = 0; i < b; ++i) targets[static_cast<std::size_t>(i * b + i)] = T(1);
  return diff::scale(diff::bce_with_logits(logits, targets), static_cast<T>(b));
}

template <typename T>
LossTerms<T> tokenizer_loss(const Tokenizer<T>& tok, const std::vector<const Patches*>& batch,
                            const Mat<T>& text_tokens, const Mat<T>& paired_text, std::vector<long>* usage) {
  const auto& cfg = tok.config();
  require(paired_text.rows() == static_cast<Eigen::Index>(batch.size()), ErrorKind::ShapeMismatch,
          "one paired descriptor embedding per scan is required");
  LossTerms<T> out;
  auto z = tok.encode(batch);
  out.z = z.value();
  auto q = tok.quantize(z, usage);
  out.indices = q.indices;

  Mat<T> target(z.rows(), cfg.patch_size), weights(z.rows(), cfg.patch_size);
  std::vector<Tensor<T>> pooled;
  Eigen::Index off = 0;
  for (const auto* p : batch) {
    const auto m = p->values.rows();
    target.middleRows(off, m) = p->values.template cast<T>();
    weights.middleRows(off, m) = p->weights.template cast<T>();
    pooled.push_back(diff::mean_rows(diff::slice_rows(z, off, m)));
    off += m;
  }
  auto recon = diff::masked_mse(tok.decode(q.z_tilde), Tensor<T>::constant(target), weights);
  auto quant = diff::add(recon, q.commit);
  auto contrast = contrastive_loss(diff::concat_rows(pooled), Tensor<T>::constant(paired_text), cfg.sigma_temp,
                                   cfg.contrastive);
  out.total = diff::add(quant, contrast);
  if (cfg.lambda_domain != 0.0) {
    auto dom = domain_loss(tok, z, text_tokens, cfg.grl_scale, &out.domain_accuracy);
    out.domain = static_cast<double>(dom.item());
    out.total = diff::add(out.total, diff::scale(dom, static_cast<T>(cfg.lambda_domain)));
  }
  out.recon = static_cast<double>(recon.item());
  out.commit = static_cast<double>(q.commit.item());
  out.quant = static_cast<double>(quant.item());
  out.contrast = static_cast<double>(contrast.item());
  return out;
}

Mat<float> pooled_text(const Mat<float>& table, const std::string& text) {
  require(!text.empty(), ErrorKind::EmptyText, "cannot pool an empty text");
  Mat<float> acc = Mat<float>::Zero(1, table.cols());
  for (unsigned char ch : text) acc += table.row(ch);
  return acc / static_cast<float>(text.size());
}

// ---- training ------------------------------------------------------------------

namespace {

Mat<float> sample_text_tokens(const Mat<float>& table, const std::string& source, Eigen::Index count, int window,
                              Rng& rng) {
  Mat<float> out(count, table.cols());
  const auto w = static_cast<std::size_t>(std::min<Eigen::Index>(window, static_cast<Eigen::Index>(source.size())));
  Eigen::Index row = 0;
  while (row < count) {
    const std::size_t start = rng.below(source.size() - w + 1);
    for (std::size_t k = 0; k < w && row < count; ++k, ++row) {
      out.row(row) = table.row(static_cast<unsigned char>(source[start + k]));
    }
  }
  return out;
}

}  // namespace

Stage1Result train_stage1(const std::vector<signal::RoiTimeSeries>& scans, const std::vector<std::string>& paragraphs,
                          const Mat<float>& text_table, const std::string& text_pool, const TokenizerConfig& config,
                          const Stage1Options& options, const std::function<void(const Stage1EpochLog&)>& on_epoch) {
  require(scans.size() == paragraphs.size(), ErrorKind::LengthMismatch, "one descriptor paragraph per scan");
  require(scans.size() >= 2, ErrorKind::TooFewSamples, "stage 1 needs at least 2 scans");
  require(text_table.cols() == config.embed_dim, ErrorKind::ShapeMismatch, "text table width differs from embed_dim");
  require(options.epochs >= 1 && options.batch_size >= 1, ErrorKind::ConfigError, "epochs and batch size must be positive");

  std::vector<Patches> patches;
  std::vector<Mat<float>> paired;
  std::string text_source = text_pool;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    patches.push_back(patchify(scans[i], config.patch_size));
    paired.push_back(pooled_text(text_table, paragraphs[i]));
    text_source += "\n" + paragraphs[i];
  }

  Rng rng(options.seed);
  std::vector<int> order(scans.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const auto n_hold = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(options.holdout_fraction * static_cast<double>(scans.size()))));
  Stage1Result result{Tokenizer<float>(config), {}, 0.0, {}, {}};
  result.heldout_indices.assign(order.begin(), order.begin() + static_cast<long>(n_hold));
  result.train_indices.assign(order.begin() + static_cast<long>(n_hold), order.end());
  auto& tok = result.tokenizer;

  diff::AdamWConfig opt_cfg;
  opt_cfg.lr = options.lr;
  opt_cfg.weight_decay = options.weight_decay;
  std::vector<Tensor<float>> body, head = tok.classifier_parameters();
  for (const auto& p : tok.parameters()) {
    if (std::none_of(head.begin(), head.end(), [&](const Tensor<float>& h) { return h.node() == p.node(); })) {
      body.push_back(p);
    }
  }
  diff::AdamW<float> opt(body, opt_cfg);
  diff::AdamW<float> head_opt(head, opt_cfg);

  auto train = result.train_indices;
  const long steps_per_epoch =
      (static_cast<long>(train.size()) + options.batch_size - 1) / options.batch_size;
  const long total_steps = steps_per_epoch * options.epochs;
  long step = 0;
  const int window = config.max_patches * config.n_roi;

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    rng.shuffle(train);
    Stage1EpochLog log;
    log.epoch = epoch;
    std::vector<long> usage(static_cast<std::size_t>(config.codebook_size), 0);
    double weight = 0.0;
    Mat<float> last_z;
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(options.batch_size));
      std::vector<const Patches*> batch;
      Mat<float> paired_batch(static_cast<Eigen::Index>(end - start), config.embed_dim);
      Eigen::Index tokens = 0;
      for (std::size_t i = start; i < end; ++i) {
        const auto s = static_cast<std::size_t>(train[i]);
        batch.push_back(&patches[s]);
        paired_batch.row(static_cast<Eigen::Index>(i - start)) = paired[s];
        tokens += patches[s].values.rows();
      }
      Mat<float> text = sample_text_tokens(text_table, text_source, tokens, window, rng);
      const double lr = diff::cosine_lr(step, total_steps, options.lr);
      opt.zero_grad();
      head_opt.zero_grad();
      auto terms = tokenizer_loss(tok, batch, text, paired_batch, &usage);
      diff::backward(terms.total);
      opt.step(lr);
      head_opt.step(lr * options.classifier_lr_scale);
      ++step;
      const double w = static_cast<double>(batch.size());
      weight += w;
      log.recon_mse += w * terms.recon;
      log.commit += w * terms.commit;
      log.contrast += w * terms.contrast;
      log.domain += w * terms.domain;
      log.domain_accuracy += w * terms.domain_accuracy;
      log.lr = lr;
      last_z = std::move(terms.z);
    }
    log.recon_mse /= weight;
    log.commit /= weight;
    log.contrast /= weight;
    log.domain /= weight;
    log.domain_accuracy /= weight;
    const long used = std::count_if(usage.begin(), usage.end(), [](long u) { return u > 0; });
    log.usage_fraction = static_cast<double>(used) / config.codebook_size;

    // Dead codes restart at encoder outputs from the last batch.
    if (epoch < options.epochs) {
      auto cb = tok.codebook();
      for (std::size_t k = 0; k < usage.size(); ++k) {
        if (usage[k] > 0) continue;
        cb.mutable_value().row(static_cast<Eigen::Index>(k)) =
            last_z.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(last_z.rows()))));
        ++log.dead_codes_reset;
      }
    }
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }

  // Held-out domain accuracy on unseen scans against freshly drawn text.
  {
    diff::NoGradGuard guard;
    Rng text_rng(options.seed ^ 0xD0A11ULL);
    long hits = 0, total = 0;
    for (std::size_t start = 0; start < result.heldout_indices.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(result.heldout_indices.size(), start + static_cast<std::size_t>(options.batch_size));
      std::vector<const Patches*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&patches[static_cast<std::size_t>(result.heldout_indices[i])]);
      auto z = tok.encode(batch);
      Mat<float> text = sample_text_tokens(text_table, text_source, z.rows(), window, text_rng);
      double acc = 0.0;
      domain_loss(tok, z, text, config.grl_scale, &acc);
      const long n = 2 * z.rows();
      hits += std::lround(acc * static_cast<double>(n));
      total += n;
    }
    result.heldout_domain_accuracy = static_cast<double>(hits) / static_cast<double>(total);
  }
  return result;
}

TokenGrid tokenize_scan(const signal::RoiTimeSeries& scan, const Tokenizer<float>& tok) {
  diff::NoGradGuard guard;
  const auto p = patchify(scan, tok.config().patch_size);
  auto q = tok.quantize(tok.encode({&p}));
  return TokenGrid{p.t_patches, p.n_roi, std::move(q.indices)};
}

void save_tokenizer(const Tokenizer<float>& tok, const std::filesystem::path& checkpoint) {
  save_checkpoint(checkpoint, nn::to_arrays(tok.named_parameters()));
}

Tokenizer<float> load_tokenizer(const TokenizerConfig& config, const std::filesystem::path& checkpoint) {
  Tokenizer<float> tok(config);
  nn::load_arrays(tok.named_parameters(), load_checkpoint(checkpoint));
  return tok;
}

template class Tokenizer<float>;
template class Tokenizer<double>;
template Tensor<float> domain_loss<float>(const Tokenizer<float>&, const Tensor<float>&, const Mat<float>&, double,
                                          double*);
template Tensor<double> domain_loss<double>(const Tokenizer<double>&, const Tensor<double>&, const Mat<double>&,
                                            double, double*);
template Tensor<float> contrastive_loss<float>(const Tensor<float>&, const Tensor<float>&, double, ContrastiveKind);
template Tensor<double> contrastive_loss<double>(const Tensor<double>&, const Tensor<double>&, double,
                                                 ContrastiveKind);
template LossTerms<float> tokenizer_loss<float>(const Tokenizer<float>&, const std::vector<const Patches*>&,
                                                const Mat<float>&, const Mat<float>&, std::vector<long>*);
template LossTerms<double> tokenizer_loss<double>(const Tokenizer<double>&, const std::vector<const Patches*>&,
                                                  const Mat<double>&, const Mat<double>&, std::vector<long>*);

}  // namespace neurotoken::tokenizer
