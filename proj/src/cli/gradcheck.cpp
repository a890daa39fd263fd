#include "neurotoken/cli.hpp"
#include "neurotoken/diff.hpp"
#include "neurotoken/nn.hpp"
#include "neurotoken/rng.hpp"

namespace neurotoken::cli {

using diff::Mat;
using TD = diff::Tensor<double>;
using MD = Mat<double>;

namespace {

MD random_mat(Rng& rng, int r, int c) {
  MD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

struct Op {
  std::string name;
  std::function<TD(const std::vector<TD>&)> fn;
  std::vector<std::pair<int, int>> shapes;
};

std::vector<Op> ops() {
  using namespace diff;
  const std::vector<int> ids = {2, 0, 2, 1};
  return {
      {"matmul", [](auto& p) { return matmul(p[0], p[1]); }, {{3, 4}, {4, 2}}},
      {"linear", [](auto& p) { return linear(p[0], p[1], p[2]); }, {{3, 4}, {4, 2}, {1, 2}}},
      {"add", [](auto& p) { return add(p[0], p[1]); }, {{3, 4}, {1, 4}}},
      {"sub", [](auto& p) { return sub(p[0], p[1]); }, {{3, 4}, {3, 4}}},
      {"mul", [](auto& p) { return mul(p[0], p[1]); }, {{3, 4}, {3, 4}}},
      {"scale", [](auto& p) { return scale(p[0], 1.7); }, {{2, 3}}},
      {"transpose", [](auto& p) { return transpose(p[0]); }, {{2, 5}}},
      {"slice_rows", [](auto& p) { return slice_rows(p[0], 1, 2); }, {{4, 3}}},
      {"slice_cols", [](auto& p) { return slice_cols(p[0], 1, 2); }, {{3, 4}}},
      {"concat_rows", [](auto& p) { return concat_rows<double>({p[0], p[1]}); }, {{2, 3}, {1, 3}}},
      {"concat_cols", [](auto& p) { return concat_cols<double>({p[0], p[1]}); }, {{2, 3}, {2, 2}}},
      {"gather_rows", [ids](auto& p) { return gather_rows(p[0], ids); }, {{3, 4}}},
      {"sum", [](auto& p) { return sum(p[0]); }, {{3, 3}}},
      {"mean", [](auto& p) { return mean(p[0]); }, {{3, 3}}},
      {"mean_rows", [](auto& p) { return mean_rows(p[0]); }, {{4, 3}}},
      {"softmax_rows", [](auto& p) { return softmax_rows(p[0]); }, {{3, 5}}},
      {"log_softmax_rows", [](auto& p) { return log_softmax_rows(p[0]); }, {{3, 5}}},
      {"layer_norm", [](auto& p) { return layer_norm(p[0], p[1], p[2]); }, {{3, 6}, {1, 6}, {1, 6}}},
      {"cross_entropy", [](auto& p) { return cross_entropy(p[0], {1, 0, 3, 2}, {1, 0, 1, 1}); }, {{4, 5}}},
      {"cosine_similarity", [](auto& p) { return cosine_similarity(p[0], p[1]); }, {{3, 4}, {2, 4}}},
      {"relu", [](auto& p) { return relu(p[0]); }, {{3, 4}}},
      {"gelu", [](auto& p) { return gelu(p[0]); }, {{3, 4}}},
      {"tanh", [](auto& p) { return diff::tanh(p[0]); }, {{3, 4}}},
      {"sigmoid", [](auto& p) { return sigmoid(p[0]); }, {{3, 4}}},
      {"bce_with_logits", [](auto& p) { return bce_with_logits<double>(p[0], {1, 0, 0, 1, 1}); }, {{5, 1}}},
      {"mse", [](auto& p) { return mse(p[0], p[1]); }, {{3, 4}, {3, 4}}},
      {"masked_mse",
       [](auto& p) {
         MD w = MD::Ones(3, 4);
         w.row(1).setZero();
         return masked_mse(p[0], p[1], w);
       },
       {{3, 4}, {3, 4}}},
      {"attention_causal", [](auto& p) { return attention(p[0], p[1], p[2], 2, true, {3, 2}); },
       {{5, 4}, {5, 4}, {5, 4}}},
      {"attention_full", [](auto& p) { return attention(p[0], p[1], p[2], 1, false, {5}); }, {{5, 4}, {5, 4}, {5, 4}}},
      {"grad_reverse", [](auto& p) { return grad_reverse(p[0], 0.5); }, {{2, 3}}},
      {"stop_gradient", [](auto& p) { return add(mul(p[0], p[0]), stop_gradient(p[0])); }, {{2, 3}}},
  };
}

GradCase record(const std::string& name, const diff::GradCheckResult& r) {
  return {name, r.max_rel_error, r.checked, r.worst};
}

}  // namespace

std::vector<GradCase> gradient_suite(std::uint64_t seed) {
  std::vector<GradCase> out;
  Rng rng(seed);

  // Each op is read out through fixed random weights so every output element
  // carries its own upstream gradient.
  for (const auto& op : ops()) {
    std::vector<TD> params;
    for (auto [r, c] : op.shapes) params.push_back(TD::parameter(random_mat(rng, r, c)));
    MD w;
    {
      diff::NoGradGuard guard;
      const auto probe = op.fn(params);
      w = random_mat(rng, static_cast<int>(probe.rows()), static_cast<int>(probe.cols()));
    }
    const auto loss = [&] { return diff::sum(diff::mul(op.fn(params), TD::constant(w))); };
    out.push_back(record(op.name, diff::finite_diff_check(loss, params, 1e-5, seed)));
  }

  {
    // Straight-through quantization with a commitment term on stopped codes.
    auto z = TD::parameter(random_mat(rng, 3, 2));
    const MD q = random_mat(rng, 3, 2), w = random_mat(rng, 3, 2);
    const auto loss = [&] {
      auto zq = diff::straight_through(z, q);
      auto commit = diff::mse(z, diff::stop_gradient(TD::constant(q)));
      return diff::add(diff::sum(diff::mul(diff::gelu(zq), TD::constant(w))), diff::scale(commit, 0.25));
    };
    out.push_back(record("straight_through", diff::finite_diff_check(loss, {z}, 1e-5, seed)));
  }

  {
    // One pre-norm transformer block over two sequences.
    Rng init(seed + 11);
    const auto block = nn::Block<double>::make(init, 4, 6, 1);
    auto x = TD::parameter(random_mat(rng, 5, 4));
    const MD w = random_mat(rng, 5, 4);
    std::vector<nn::Named<double>> named;
    block.collect("b", named);
    std::vector<TD> params = {x};
    for (const auto& p : named) params.push_back(p.tensor);
    const auto loss = [&] { return diff::sum(diff::mul(block(x, 2, true, {3, 2}), TD::constant(w))); };
    out.push_back(record("transformer_block", diff::finite_diff_check(loss, params, 1e-5, seed)));
  }

  {
    // Tokenizer objective: reconstruction, commitment, contrastive and domain terms.
    tokenizer::TokenizerConfig cfg;
    cfg.patch_size = 8;
    cfg.embed_dim = 8;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.ffn_dim = 12;
    cfg.decoder_hidden = 6;
    cfg.classifier_hidden = 5;
    cfg.codebook_size = 6;
    cfg.n_roi = 3;
    cfg.max_patches = 3;
    cfg.seed = seed;
    const tokenizer::Tokenizer<double> tok(cfg);
    const auto scan = [&](int t) {
      signal::RoiTimeSeries s;
      s.data = random_mat(rng, 3, t);
      s.subject_id = "sub-0001";
      s.site_id = "site-0";
      s.network_names = {"net0"};
      s.network_of.assign(3, 0);
      return tokenizer::patchify(s, cfg.patch_size);
    };
    const auto a = scan(24), b = scan(20);
    const MD text = random_mat(rng, 12, 8), paired = random_mat(rng, 2, 8);
    const auto loss = [&] { return tokenizer::tokenizer_loss(tok, {&a, &b}, text, paired).total; };
    out.push_back(record("tokenizer_total", diff::finite_diff_check(loss, tok.parameters(), 1e-5, seed, 1 << 20)));
  }

  {
    // Stage-2 objective: F2T + alpha F2F + beta T2T.
    lm::LmConfig cfg;
    cfg.model_dim = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.context_length = 64;
    cfg.max_steps = 4;
    cfg.max_rois = 3;
    cfg.vocab.text_size = 16;
    cfg.vocab.codebook_size = 4;
    cfg.seed = seed;
    const lm::LanguageModel<double> model(cfg);
    const auto grid = [&](int t) {
      tokenizer::TokenGrid g{t, 3, {}};
      for (int i = 0; i < t * 3; ++i) g.indices.push_back(static_cast<int>(rng.below(4)));
      return g;
    };
    const std::vector<tokenizer::TokenGrid> grids = {grid(2), grid(3)};
    const auto loss = [&] {
      return lm::stage2_loss(lm::f2t_loss(model, grids, {"\x01\x02\x03", "\x04\x05"}), lm::f2f_loss(model, grids),
                             lm::t2t_loss(model, std::vector<std::string>{"\x06\x07\x08\x09"}), cfg.alpha, cfg.beta);
    };
    out.push_back(record("stage2_total", diff::finite_diff_check(loss, model.parameters(), 1e-5, seed, 1 << 20)));
  }
  return out;
}

}  // namespace neurotoken::cli
