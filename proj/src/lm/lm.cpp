#include "neurotoken/lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "neurotoken/checkpoint.hpp"
#include "neurotoken/corpus.hpp"
#include "neurotoken/error.hpp"
#include "neurotoken/rng.hpp"

namespace neurotoken::lm {

namespace {

const char* const kSpecialNames[] = {"bos", "eos", "pad", "fmri_start", "fmri_end", "sep"};

}  // namespace

// ---- vocabulary ----------------------------------------------------------------

int Vocab::fmri_id(int code) const {
  require(code >= 0 && code < codebook_size, ErrorKind::FormatError,
          "code " + std::to_string(code) + " outside [0, " + std::to_string(codebook_size) + ")");
  return text_size + code;
}

int Vocab::code_of(int id) const {
  require(is_fmri(id), ErrorKind::FormatError, "id " + std::to_string(id) + " is not an fMRI token");
  return id - text_size;
}

std::string Vocab::role(int id) const {
  if (is_text(id)) return "text";
  if (is_fmri(id)) return "fmri";
  require(id >= bos() && id < size(), ErrorKind::FormatError, "id " + std::to_string(id) + " outside the vocabulary");
  return kSpecialNames[id - bos()];
}

nlohmann::json to_json(const Vocab& v) {
  nlohmann::json entries = nlohmann::json::array();
  for (int id = 0; id < v.size(); ++id) {
    nlohmann::json e = {{"id", id}, {"role", v.role(id)}};
    if (v.is_text(id)) e["byte"] = id;
    if (v.is_fmri(id)) e["code"] = v.code_of(id);
    entries.push_back(std::move(e));
  }
  return {{"text_size", v.text_size}, {"codebook_size", v.codebook_size}, {"entries", std::move(entries)}};
}

Vocab vocab_from_json(const nlohmann::json& j) {
  Vocab v;
  v.text_size = j.at("text_size");
  v.codebook_size = j.at("codebook_size");
  require(v.text_size >= 1 && v.codebook_size >= 1, ErrorKind::FormatError, "vocabulary sizes must be positive");
  if (j.contains("entries")) {
    require(j.at("entries").size() == static_cast<std::size_t>(v.size()), ErrorKind::FormatError,
            "vocabulary table length does not match its sizes");
    for (const auto& e : j.at("entries")) {
      const int id = e.at("id");
      require(e.at("role").get<std::string>() == v.role(id), ErrorKind::FormatError,
              "vocabulary entry " + std::to_string(id) + " has an unexpected role");
    }
  }
  return v;
}

// ---- sequences -----------------------------------------------------------------

void Sequence::push(int id, int step_index, int roi_index) {
  ids.push_back(id);
  step.push_back(step_index);
  roi.push_back(roi_index);
}

void Sequence::push_text(const std::string& text) {
  for (unsigned char c : text) push(static_cast<int>(c));
}

Sequence flatten_grid(const tokenizer::TokenGrid& grid, const Vocab& vocab) {
  require(grid.indices.size() == static_cast<std::size_t>(grid.t_patches * grid.n_roi), ErrorKind::FormatError,
          "token grid size does not match its shape");
  Sequence s;
  s.push(vocab.fmri_start());
  for (int w = 0; w < grid.t_patches; ++w) {
    for (int r = 0; r < grid.n_roi; ++r) s.push(vocab.fmri_id(grid.at(w, r)), w, r);
  }
  s.push(vocab.fmri_end());
  return s;
}

std::vector<std::uint8_t> fmri_mask(const Sequence& seq) {
  std::vector<std::uint8_t> m(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) m[i] = seq.step[i] >= 0;
  return m;
}

tokenizer::TokenGrid unflatten(const Sequence& seq, const Vocab& vocab) {
  const auto start = std::find(seq.ids.begin(), seq.ids.end(), vocab.fmri_start());
  require(start != seq.ids.end(), ErrorKind::FormatError, "sequence has no fMRI block");
  const auto end = std::find(start, seq.ids.end(), vocab.fmri_end());
  require(end != seq.ids.end(), ErrorKind::FormatError, "fMRI block is not closed");
  const auto first = static_cast<std::size_t>(start - seq.ids.begin()) + 1;
  const auto last = static_cast<std::size_t>(end - seq.ids.begin());
  require(last > first, ErrorKind::FormatError, "fMRI block is empty");
  tokenizer::TokenGrid g;
  g.t_patches = seq.step[last - 1] + 1;
  g.n_roi = seq.roi[last - 1] + 1;
  require(g.t_patches >= 1 && g.n_roi >= 1 && last - first == static_cast<std::size_t>(g.t_patches * g.n_roi),
          ErrorKind::FormatError, "fMRI block does not form a full grid");
  for (std::size_t i = first; i < last; ++i) {
    const auto k = static_cast<int>(i - first);
    require(seq.step[i] == k / g.n_roi && seq.roi[i] == k % g.n_roi, ErrorKind::FormatError,
            "fMRI block is not in raster order");
    g.indices.push_back(vocab.code_of(seq.ids[i]));
  }
  return g;
}

// ---- configuration -------------------------------------------------------------

nlohmann::json to_json(const LmConfig& c) {
  return {{"n_layers", c.n_layers},     {"n_heads", c.n_heads},
          {"model_dim", c.model_dim},   {"ffn_dim", c.ffn_dim},
          {"context_length", c.context_length}, {"max_steps", c.max_steps},
          {"max_rois", c.max_rois},     {"text_size", c.vocab.text_size},
          {"codebook_size", c.vocab.codebook_size}, {"alpha", c.alpha},
          {"beta", c.beta},             {"seed", c.seed}};
}

LmConfig lm_config_from_json(const nlohmann::json& j) {
  LmConfig c;
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.model_dim = j.at("model_dim");
  c.ffn_dim = j.at("ffn_dim");
  c.context_length = j.at("context_length");
  c.max_steps = j.at("max_steps");
  c.max_rois = j.at("max_rois");
  c.vocab.text_size = j.at("text_size");
  c.vocab.codebook_size = j.at("codebook_size");
  c.alpha = j.at("alpha");
  c.beta = j.at("beta");
  c.seed = j.at("seed");
  return c;
}

nlohmann::json to_json(const LoraConfig& c) {
  return {{"rank", c.rank}, {"alpha", c.alpha}, {"targets", c.targets}, {"train_head", c.train_head}};
}

LoraConfig lora_config_from_json(const nlohmann::json& j) {
  LoraConfig c;
  c.rank = j.at("rank");
  c.alpha = j.at("alpha");
  c.targets = j.at("targets").get<std::vector<std::string>>();
  c.train_head = j.at("train_head");
  return c;
}

// ---- model ---------------------------------------------------------------------

template <typename T>
LanguageModel<T>::LanguageModel(const LmConfig& config) : config_(config) {
  const int d = config.model_dim;
  require(d > 0 && config.n_heads > 0 && d % config.n_heads == 0, ErrorKind::InvalidSpec,
          "model_dim must be divisible by n_heads");
  require(config.n_layers >= 1 && config.context_length >= 2 && config.max_steps >= 1 && config.max_rois >= 1,
          ErrorKind::InvalidSpec, "layer count, context, step and ROI limits must be positive");
  if (config_.ffn_dim == 0) config_.ffn_dim = 4 * d;
  Rng rng(config.seed);
  tok_embed_ = nn::init_normal<T>(rng, config.vocab.size(), d, 1.0);
  pos_embed_ = nn::init_normal<T>(rng, config.context_length, d, 0.5);
  step_embed_ = nn::init_normal<T>(rng, config.max_steps + 1, d, 0.5);
  roi_embed_ = nn::init_normal<T>(rng, config.max_rois + 1, d, 0.5);
  for (int l = 0; l < config.n_layers; ++l) {
    blocks_.push_back(nn::Block<T>::make(rng, d, config_.ffn_dim, config.n_layers));
  }
  final_norm_ = nn::LayerNorm<T>::make(d);
  head_ = nn::Linear<T>::make(rng, d, config.vocab.size(), true, 1.0 / std::sqrt(static_cast<double>(d)));
}

template <typename T>
Tensor<T> LanguageModel<T>::hidden(const std::vector<const Sequence*>& batch) const {
  require(!batch.empty(), ErrorKind::EmptyBatch, "forward of an empty batch");
  std::vector<int> ids, pos, steps, rois, segments;
  for (const auto* s : batch) {
    require(s->size() >= 1, ErrorKind::EmptyBatch, "forward of an empty sequence");
    require(s->step.size() == s->size() && s->roi.size() == s->size(), ErrorKind::ShapeMismatch,
            "sequence annotations differ in length from its ids");
    require(static_cast<int>(s->size()) <= config_.context_length, ErrorKind::ContextOverflow,
            "sequence of " + std::to_string(s->size()) + " tokens exceeds the context of " +
                std::to_string(config_.context_length));
    for (std::size_t i = 0; i < s->size(); ++i) {
      const int id = s->ids[i];
      require(id >= 0 && id < config_.vocab.size(), ErrorKind::ShapeMismatch,
              "token id " + std::to_string(id) + " outside the vocabulary");
      require(s->step[i] < config_.max_steps && s->roi[i] < config_.max_rois, ErrorKind::ShapeMismatch,
              "grid position exceeds the configured step or ROI limit");
      ids.push_back(id);
      pos.push_back(static_cast<int>(i));
      steps.push_back(s->step[i] >= 0 ? s->step[i] : config_.max_steps);
      rois.push_back(s->roi[i] >= 0 ? s->roi[i] : config_.max_rois);
    }
    segments.push_back(static_cast<int>(s->size()));
  }
  auto x = diff::add(diff::add(diff::gather_rows(tok_embed_, ids), diff::gather_rows(pos_embed_, pos)),
                     diff::add(diff::gather_rows(step_embed_, steps), diff::gather_rows(roi_embed_, rois)));
  for (const auto& blk : blocks_) x = blk(x, config_.n_heads, true, segments);
  return final_norm_(x);
}

template <typename T>
Tensor<T> LanguageModel<T>::logits_from_hidden(const Tensor<T>& hidden) const {
  return head_(hidden);
}

template <typename T>
Tensor<T> LanguageModel<T>::forward(const std::vector<const Sequence*>& batch) const {
  return logits_from_hidden(hidden(batch));
}

namespace {

template <typename T>
void fill_rows(Tensor<T>& table, int first, const Mat<float>& rows, const char* what) {
  require(rows.cols() <= table.cols(), ErrorKind::ShapeMismatch,
          std::string(what) + " rows are wider than the model");
  auto& v = table.mutable_value();
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    v.row(first + r).setZero();
    v.row(first + r).head(rows.cols()) = rows.row(r).template cast<T>();
  }
}

}  // namespace

template <typename T>
void LanguageModel<T>::init_text_rows(const Mat<float>& table) {
  require(table.rows() == config_.vocab.text_size, ErrorKind::ShapeMismatch, "text table needs one row per byte");
  fill_rows(tok_embed_, 0, table, "text table");
}

template <typename T>
void LanguageModel<T>::init_fmri_rows(const Mat<float>& codebook) {
  require(codebook.rows() == config_.vocab.codebook_size, ErrorKind::ShapeMismatch,
          "codebook size differs from the vocabulary");
  fill_rows(tok_embed_, config_.vocab.text_size, codebook, "codebook");
}

template <typename T>
void LanguageModel<T>::lora_wrap(const LoraConfig& lora) {
  require(!lora_.has_value(), ErrorKind::BadTarget, "model already carries adapters");
  require(!lora.targets.empty(), ErrorKind::BadTarget, "no adapter targets given");
  for (const auto& t : lora.targets) {
    require(t == "q" || t == "k" || t == "v" || t == "o", ErrorKind::BadTarget,
            "unknown adapter target '" + t + "' (expected q, k, v or o)");
  }
  require(lora.rank >= 1, ErrorKind::BadTarget, "adapter rank must be at least 1");
  for (auto& p : named_parameters()) p.tensor.set_requires_grad(false);
  Rng rng(config_.seed * 0x9E3779B97F4A7C15ULL + 0x10AA);
  for (auto& blk : blocks_) {
    for (const auto& t : lora.targets) {
      nn::Linear<T>& lin = t == "q" ? blk.q : t == "k" ? blk.k : t == "v" ? blk.v : blk.o;
      if (lin.has_lora()) continue;
      lin.add_lora(rng, lora.rank, lora.alpha);
    }
  }
  if (lora.train_head) {
    head_.w.set_requires_grad(true);
    head_.b.set_requires_grad(true);
  }
  lora_ = lora;
}

template <typename T>
std::vector<nn::Named<T>> LanguageModel<T>::named_parameters() const {
  std::vector<nn::Named<T>> out;
  out.push_back({"lm.tok_embed", tok_embed_});
  out.push_back({"lm.pos_embed", pos_embed_});
  out.push_back({"lm.step_embed", step_embed_});
  out.push_back({"lm.roi_embed", roi_embed_});
  for (std::size_t l = 0; l < blocks_.size(); ++l) blocks_[l].collect("lm.block" + std::to_string(l), out);
  final_norm_.collect("lm.final_norm", out);
  head_.collect("lm.head", out);
  return out;
}

template <typename T>
std::vector<Tensor<T>> LanguageModel<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& n : named_parameters()) out.push_back(n.tensor);
  return out;
}

template <typename T>
std::vector<Tensor<T>> LanguageModel<T>::trainable_parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& n : named_parameters()) {
    if (n.tensor.requires_grad()) out.push_back(n.tensor);
  }
  return out;
}

template <typename T>
long LanguageModel<T>::trainable_count() const {
  long n = 0;
  for (const auto& p : trainable_parameters()) n += static_cast<long>(p.value().size());
  return n;
}

// ---- objectives ----------------------------------------------------------------

Example make_f2f(const tokenizer::TokenGrid& grid, const Vocab& vocab) {
  require(grid.t_patches >= 2, ErrorKind::SingleStep, "next-step prediction needs at least two time steps");
  Example e{flatten_grid(grid, vocab), {}};
  e.target.resize(e.seq.size());
  for (std::size_t i = 0; i < e.seq.size(); ++i) e.target[i] = e.seq.step[i] >= 1;
  return e;
}

Example make_f2t(const tokenizer::TokenGrid& grid, const std::string& text, const Vocab& vocab) {
  require(!text.empty(), ErrorKind::EmptyText, "fMRI-to-text sample with empty text");
  Example e{flatten_grid(grid, vocab), {}};
  e.seq.push(vocab.sep());
  const auto text_start = e.seq.size();
  e.seq.push_text(text);
  e.seq.push(vocab.eos());
  e.target.assign(e.seq.size(), 0);
  std::fill(e.target.begin() + static_cast<long>(text_start), e.target.end(), 1);
  return e;
}

Example make_t2t(const std::string& text, const Vocab& vocab) {
  require(text.size() >= 2, ErrorKind::TextTooShort, "language modeling needs at least two bytes");
  Example e;
  e.seq.push_text(text);
  (void)vocab;
  e.target.assign(e.seq.size(), 1);
  e.target[0] = 0;
  return e;
}

Targets next_token_targets(const std::vector<const Example*>& batch) {
  Targets t;
  for (const auto* e : batch) {
    require(e->target.size() == e->seq.size(), ErrorKind::ShapeMismatch, "target mask length differs from sequence");
    for (std::size_t i = 0; i < e->seq.size(); ++i) {
      const bool has_next = i + 1 < e->seq.size();
      t.ids.push_back(has_next ? e->seq.ids[i + 1] : 0);
      t.mask.push_back(has_next && e->target[i + 1]);
    }
  }
  return t;
}

template <typename T>
Tensor<T> masked_next_token_loss(const Tensor<T>& logits, const std::vector<const Example*>& batch) {
  const auto t = next_token_targets(batch);
  require(static_cast<Eigen::Index>(t.ids.size()) == logits.rows(), ErrorKind::ShapeMismatch,
          "logit rows differ from the batch length");
  std::vector<int> rows, targets;
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    if (!t.mask[i]) continue;
    rows.push_back(static_cast<int>(i));
    targets.push_back(t.ids[i]);
  }
  require(!rows.empty(), ErrorKind::EmptyMask, "batch has no target positions");
  return diff::cross_entropy(diff::gather_rows(logits, rows), targets,
                             std::vector<std::uint8_t>(rows.size(), 1));
}

template <typename T>
Tensor<T> example_loss(const LanguageModel<T>& model, const std::vector<const Example*>& batch) {
  std::vector<const Sequence*> seqs;
  for (const auto* e : batch) seqs.push_back(&e->seq);
  return masked_next_token_loss(model.forward(seqs), batch);
}

namespace {

std::vector<const Example*> pointers(const std::vector<Example>& v) {
  std::vector<const Example*> out;
  for (const auto& e : v) out.push_back(&e);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> f2f_loss(const LanguageModel<T>& model, const std::vector<tokenizer::TokenGrid>& grids) {
  std::vector<Example> ex;
  for (const auto& g : grids) ex.push_back(make_f2f(g, model.vocab()));
  return example_loss(model, pointers(ex));
}

template <typename T>
Tensor<T> f2t_loss(const LanguageModel<T>& model, const std::vector<tokenizer::TokenGrid>& grids,
                   const std::vector<std::string>& texts) {
  require(grids.size() == texts.size(), ErrorKind::LengthMismatch, "one text per grid");
  std::vector<Example> ex;
  for (std::size_t i = 0; i < grids.size(); ++i) ex.push_back(make_f2t(grids[i], texts[i], model.vocab()));
  return example_loss(model, pointers(ex));
}

template <typename T>
Tensor<T> t2t_loss(const LanguageModel<T>& model, const std::vector<std::string>& texts) {
  std::vector<Example> ex;
  for (const auto& t : texts) ex.push_back(make_t2t(t, model.vocab()));
  return example_loss(model, pointers(ex));
}

template <typename T>
Tensor<T> stage2_loss(const Tensor<T>& f2t, const Tensor<T>& f2f, const Tensor<T>& t2t, double alpha, double beta) {
  return diff::add(diff::add(f2t, diff::scale(f2f, static_cast<T>(alpha))), diff::scale(t2t, static_cast<T>(beta)));
}

// ---- decoding ------------------------------------------------------------------

Sequence generate(const LanguageModel<float>& model, const Sequence& prefix, const GenerateOptions& options) {
  const auto& vocab = model.vocab();
  const auto context = static_cast<std::size_t>(model.config().context_length);
  require(prefix.size() <= context, ErrorKind::ContextOverflow,
          "prefix of " + std::to_string(prefix.size()) + " tokens exceeds the context of " + std::to_string(context));
  diff::NoGradGuard guard;
  Rng rng(options.seed);
  Sequence seq = prefix;
  bool after_sep = std::find(seq.ids.begin(), seq.ids.end(), vocab.sep()) != seq.ids.end();
  for (int n = 0; n < options.max_new && seq.size() < context; ++n) {
    const auto h = model.hidden({&seq});
    const auto last = diff::slice_rows(h, h.rows() - 1, 1);
    const Mat<float> logits = model.logits_from_hidden(last).value();
    auto allowed = [&](int id) { return !(options.constrain_text && after_sep) || vocab.is_text(id) || id == vocab.eos(); };
    int next = -1;
    if (options.mode == DecodeMode::Greedy) {
      for (int id = 0; id < vocab.size(); ++id) {
        if (allowed(id) && (next < 0 || logits(0, id) > logits(0, next))) next = id;
      }
    } else {
      require(options.temperature > 0.0, ErrorKind::PreconditionViolation, "temperature must be positive");
      double mx = -INFINITY;
      for (int id = 0; id < vocab.size(); ++id) {
        if (allowed(id)) mx = std::max(mx, static_cast<double>(logits(0, id)));
      }
      std::vector<double> p(static_cast<std::size_t>(vocab.size()), 0.0);
      double z = 0.0;
      for (int id = 0; id < vocab.size(); ++id) {
        if (allowed(id)) z += p[static_cast<std::size_t>(id)] = std::exp((logits(0, id) - mx) / options.temperature);
      }
      double u = rng.uniform() * z;
      for (int id = 0; id < vocab.size(); ++id) {
        if (p[static_cast<std::size_t>(id)] <= 0.0) continue;
        next = id;
        u -= p[static_cast<std::size_t>(id)];
        if (u < 0.0) break;
      }
    }
    seq.push(next);
    if (next == vocab.sep()) after_sep = true;
    if (next == vocab.eos()) break;
  }
  return seq;
}

std::vector<double> score_continuations(const LanguageModel<float>& model, const Sequence& prefix,
                                        const std::vector<std::string>& candidates) {
  require(!candidates.empty() && !prefix.ids.empty(), ErrorKind::PreconditionViolation,
          "scoring needs a prefix and at least one candidate");
  diff::NoGradGuard guard;
  std::vector<Sequence> seqs;
  for (const auto& c : candidates) {
    Sequence s = prefix;
    s.push_text(c);
    s.push(model.vocab().eos());
    seqs.push_back(std::move(s));
  }
  std::vector<const Sequence*> batch;
  for (const auto& s : seqs) batch.push_back(&s);
  const Mat<float> logits = model.forward(batch).value();
  std::vector<double> out;
  Eigen::Index off = 0;
  for (const auto& s : seqs) {
    double lp = 0.0;
    for (std::size_t i = prefix.size() - 1; i + 1 < s.size(); ++i) {
      const auto row = logits.row(off + static_cast<Eigen::Index>(i)).cast<double>();
      const double mx = row.maxCoeff();
      const double lse = mx + std::log((row.array() - mx).exp().sum());
      lp += row(s.ids[i + 1]) - lse;
    }
    out.push_back(lp);
    off += static_cast<Eigen::Index>(s.size());
  }
  return out;
}

std::string decode_text(const Sequence& seq, std::size_t from, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = from; i < seq.size(); ++i) {
    if (seq.ids[i] == vocab.eos()) break;
    if (vocab.is_text(seq.ids[i])) out.push_back(static_cast<char>(seq.ids[i]));
  }
  return out;
}

// ---- stage 2 -------------------------------------------------------------------

std::vector<Stage2EpochLog> train_stage2(LanguageModel<float>& model, const std::vector<tokenizer::TokenGrid>& grids,
                                         const std::vector<std::string>& paragraphs, const std::string& text_pool,
                                         const Stage2Options& options,
                                         const std::function<void(const Stage2EpochLog&)>& on_epoch) {
  require(grids.size() == paragraphs.size(), ErrorKind::LengthMismatch, "one paragraph per grid");
  require(!grids.empty(), ErrorKind::EmptyBatch, "stage 2 needs at least one grid");
  require(options.epochs >= 1 && options.batch_size >= 1, ErrorKind::ConfigError, "epochs and batch size must be positive");
  require(options.use_f2t || options.use_f2f || options.use_t2t, ErrorKind::ConfigError, "every objective is disabled");
  const auto window = static_cast<std::size_t>(std::max(2, options.t2t_window));
  require(!options.use_t2t || text_pool.size() >= window, ErrorKind::TextTooShort,
          "text pool is shorter than the language-modeling window");
  const auto& vocab = model.vocab();

  std::vector<std::vector<std::string>> sentences;
  for (const auto& p : paragraphs) {
    auto s = corpus::split_sentences(p);
    require(!s.empty(), ErrorKind::EmptyText, "paragraph without sentences");
    sentences.push_back(std::move(s));
  }

  diff::AdamWConfig oc;
  oc.lr = options.lr;
  oc.weight_decay = options.weight_decay;
  diff::AdamW<float> opt(model.trainable_parameters(), oc);
  Rng rng(options.seed);
  std::vector<int> order(grids.size());
  std::iota(order.begin(), order.end(), 0);
  const long steps_per_epoch = (static_cast<long>(order.size()) + options.batch_size - 1) / options.batch_size;
  const long total_steps = steps_per_epoch * options.epochs;
  long step = 0;
  const double alpha = model.config().alpha, beta = model.config().beta;
  std::vector<Stage2EpochLog> logs;

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    rng.shuffle(order);
    Stage2EpochLog log;
    log.epoch = epoch;
    double weight = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      std::vector<Example> f2t, f2f, t2t;
      for (std::size_t i = start; i < end; ++i) {
        const auto s = static_cast<std::size_t>(order[i]);
        const auto& grid = grids[s];
        if (options.use_f2t) {
          const auto& pool = sentences[s];
          std::string text = pool[rng.below(pool.size())];
          const auto room = static_cast<std::size_t>(model.config().context_length) -
                            static_cast<std::size_t>(grid.t_patches * grid.n_roi) - 4;
          if (text.size() > room) text.resize(room);
          f2t.push_back(make_f2t(grid, text, vocab));
        }
        if (options.use_f2f && grid.t_patches >= 2) f2f.push_back(make_f2f(grid, vocab));
        if (options.use_t2t) {
          const auto at = rng.below(text_pool.size() - window + 1);
          t2t.push_back(make_t2t(text_pool.substr(at, window), vocab));
        }
      }
      std::vector<const Example*> all;
      for (const auto* group : {&f2t, &f2f, &t2t}) {
        for (const auto& e : *group) all.push_back(&e);
      }
      std::vector<const Sequence*> seqs;
      for (const auto* e : all) seqs.push_back(&e->seq);

      const double lr = diff::cosine_lr(step, total_steps, options.lr);
      opt.zero_grad();
      const auto logits = model.forward(seqs);
      Eigen::Index off = 0;
      auto term = [&](const std::vector<Example>& group) {
        Eigen::Index rows = 0;
        for (const auto& e : group) rows += static_cast<Eigen::Index>(e.seq.size());
        Tensor<float> loss;
        if (!group.empty()) loss = masked_next_token_loss(diff::slice_rows(logits, off, rows), pointers(group));
        off += rows;
        return loss;
      };
      const auto l_f2t = term(f2t), l_f2f = term(f2f), l_t2t = term(t2t);
      auto zero = Tensor<float>::constant(Mat<float>::Zero(1, 1));
      const auto total = stage2_loss(l_f2t.defined() ? l_f2t : zero, l_f2f.defined() ? l_f2f : zero,
                                     l_t2t.defined() ? l_t2t : zero, alpha, beta);
      diff::backward(total);
      opt.step(lr);
      ++step;

      const double w = static_cast<double>(end - start);
      weight += w;
      if (l_f2t.defined()) log.f2t += w * l_f2t.item();
      if (l_f2f.defined()) log.f2f += w * l_f2f.item();
      if (l_t2t.defined()) log.t2t += w * l_t2t.item();
      log.total += w * total.item();
      log.lr = lr;
    }
    log.f2t /= weight;
    log.f2f /= weight;
    log.t2t /= weight;
    log.total /= weight;
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

// ---- persistence ---------------------------------------------------------------

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const std::string& suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingArtifact, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::MissingArtifact, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace

void save_model(const LanguageModel<float>& model, const std::filesystem::path& stem) {
  save_checkpoint(with_suffix(stem, ".fmlm"), nn::to_arrays(model.named_parameters()));
  write_json(with_suffix(stem, ".vocab.json"), to_json(model.vocab()));
  nlohmann::json cfg = {{"model", to_json(model.config())}};
  cfg["lora"] = model.lora() ? to_json(*model.lora()) : nlohmann::json(nullptr);
  write_json(with_suffix(stem, ".config.json"), cfg);
}

LanguageModel<float> load_model(const std::filesystem::path& stem) {
  const auto cfg = read_json(with_suffix(stem, ".config.json"));
  LmConfig config;
  LoraConfig lora;
  bool has_lora = false;
  try {
    config = lm_config_from_json(cfg.at("model"));
    has_lora = !cfg.at("lora").is_null();
    if (has_lora) lora = lora_config_from_json(cfg.at("lora"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, with_suffix(stem, ".config.json").string() + ": " + e.what());
  }
  const auto vocab = vocab_from_json(read_json(with_suffix(stem, ".vocab.json")));
  require(vocab == config.vocab, ErrorKind::FormatError, "vocabulary file disagrees with the model configuration");
  LanguageModel<float> model(config);
  if (has_lora) model.lora_wrap(lora);
  nn::load_arrays(model.named_parameters(), load_checkpoint(with_suffix(stem, ".fmlm")));
  return model;
}

#define NEUROTOKEN_LM_INSTANTIATE(T)                                                                             \
  template class LanguageModel<T>;                                                                               \
  template Tensor<T> masked_next_token_loss<T>(const Tensor<T>&, const std::vector<const Example*>&);            \
  template Tensor<T> example_loss<T>(const LanguageModel<T>&, const std::vector<const Example*>&);               \
  template Tensor<T> f2f_loss<T>(const LanguageModel<T>&, const std::vector<tokenizer::TokenGrid>&);             \
  template Tensor<T> f2t_loss<T>(const LanguageModel<T>&, const std::vector<tokenizer::TokenGrid>&,              \
                                 const std::vector<std::string>&);                                               \
  template Tensor<T> t2t_loss<T>(const LanguageModel<T>&, const std::vector<std::string>&);                      \
  template Tensor<T> stage2_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double, double);

NEUROTOKEN_LM_INSTANTIATE(float)
NEUROTOKEN_LM_INSTANTIATE(double)

#undef NEUROTOKEN_LM_INSTANTIATE

}  // namespace neurotoken::lm
