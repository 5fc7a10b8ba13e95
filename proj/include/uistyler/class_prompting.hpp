#pragma once

#include <string>
#include <utility>
#include <vector>

#include "uistyler/ops.hpp"
#include "uistyler/params.hpp"

// Class-level alignment: learnable template prompts, correlation against
// feature/prompt embeddings, hard one-hot-max selection, prompt addition,
// and the prompt-side classifier head.

namespace uistyler {

struct PromptConfig {
  int classes = 2;
  int tokens = 64;  // L, must equal the encoder grid
  int dim = 128;
  int embed = 64;  // e, shared output dim of both embedders
  int grid_h = 8, grid_w = 8;

  void validate() const {
    if (classes < 2) throw ConfigError("class_prompting: need at least 2 classes");
    if (grid_h * grid_w != tokens) throw ConfigError("class_prompting: grid does not match token count");
    if (dim <= 0 || embed <= 0) throw ConfigError("class_prompting: bad dims");
  }
};

template <class T>
struct PromptParams {
  PromptConfig cfg;
  ad::Tensor<T> prompts;      // C x L x d
  ad::Tensor<T> ef_w, ef_b;   // feature embedder: 3x3 conv d -> e
  ad::Tensor<T> ep_w, ep_b;   // prompt embedder: same pathway, own weights
  ad::Tensor<T> head_w, head_b;  // classifier head: d -> C after mean pooling

  static PromptParams init(const PromptConfig& cfg, const Rng& rng, const std::string& prefix) {
    cfg.validate();
    PromptParams p;
    p.cfg = cfg;
    p.prompts = init::xavier<T>(rng, prefix + ".prompts", {cfg.classes, cfg.tokens, cfg.dim});
    p.ef_w = init::xavier<T>(rng, prefix + ".ef.w", {cfg.embed, cfg.dim, 3, 3});
    p.ef_b = init::zeros<T>({cfg.embed});
    p.ep_w = init::xavier<T>(rng, prefix + ".ep.w", {cfg.embed, cfg.dim, 3, 3});
    p.ep_b = init::zeros<T>({cfg.embed});
    p.head_w = init::xavier<T>(rng, prefix + ".head.w", {cfg.dim, cfg.classes});
    p.head_b = init::zeros<T>({cfg.classes});
    return p;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.add(prefix + ".prompts", prompts);
    out.add(prefix + ".ef.w", ef_w);
    out.add(prefix + ".ef.b", ef_b);
    out.add(prefix + ".ep.w", ep_w);
    out.add(prefix + ".ep.b", ep_b);
    out.add(prefix + ".head.w", head_w);
    out.add(prefix + ".head.b", head_b);
  }
};

// Embed an L x d token matrix to an e-vector: reshape onto the (h,w) grid
// with d channels, 3x3 conv, GELU, global average pool.
template <class T>
inline ad::Tensor<T> embed_tokens(const ad::Tensor<T>& f, const ad::Tensor<T>& conv_w,
                                  const ad::Tensor<T>& conv_b, int grid_h, int grid_w) {
  auto grid = ad::tokens_to_chw(f, grid_h, grid_w);
  return ad::channel_mean(ad::gelu(ad::conv2d(grid, conv_w, conv_b, 1, 1)));
}

template <class T>
struct CorrelationVector {
  ad::Tensor<T> logits;       // pre-sigmoid, used for selection
  ad::Tensor<T> activations;  // sigmoid(logits), used by the direction loss
};

// a_c = sigmoid( E_f(F) . E_p(P_c) ) for every class c.
template <class T>
inline CorrelationVector<T> correlation(const ad::Tensor<T>& f, const PromptParams<T>& p) {
  const auto& cfg = p.cfg;
  auto ef = embed_tokens(f, p.ef_w, p.ef_b, cfg.grid_h, cfg.grid_w);
  std::vector<ad::Tensor<T>> logits;
  for (int c = 0; c < cfg.classes; ++c) {
    auto ep = embed_tokens(ad::slice_first(p.prompts, c), p.ep_w, p.ep_b, cfg.grid_h, cfg.grid_w);
    logits.push_back(ad::sum_all(ad::mul(ef, ep)));
  }
  auto lv = ad::concat_vec(logits);
  return {lv, ad::sigmoid(lv)};
}

// Hard one-hot-max selection over the pre-sigmoid logits; ties break toward
// the lowest class index. The index itself is non-differentiable; gradients
// reach the prompt set only through the selected slice's values.
template <class T>
inline std::pair<int, ad::Tensor<T>> select_prompt(const ad::Tensor<T>& f_stylized,
                                                   const PromptParams<T>& p) {
  auto corr = correlation(f_stylized, p);
  const auto& lv = corr.logits.values();
  int best = 0;
  for (size_t c = 1; c < lv.size(); ++c)
    if (lv[c] > lv[best]) best = static_cast<int>(c);
  return {best, ad::slice_first(p.prompts, best)};
}

template <class T>
inline ad::Tensor<T> apply_prompt(const ad::Tensor<T>& f_stylized, const ad::Tensor<T>& prompt) {
  return ad::add(f_stylized, prompt);
}

// Hard indexing by the pseudo label, independent of any correlation.
template <class T>
inline ad::Tensor<T> supervised_prompt(int pseudo_label, const PromptParams<T>& p) {
  if (pseudo_label < 0 || pseudo_label >= p.cfg.classes)
    throw ConfigError("supervised_prompt: label " + std::to_string(pseudo_label) + " out of range");
  return ad::slice_first(p.prompts, pseudo_label);
}

// p_t = softmax(H(F_t + P_hat)) with H = mean-pool over tokens then linear.
// Returns a 1 x C row of probabilities.
template <class T>
inline ad::Tensor<T> classify_with_prompt(const ad::Tensor<T>& f_target,
                                          const ad::Tensor<T>& prompt, const PromptParams<T>& p) {
  auto pooled = ad::mean_rows(ad::add(f_target, prompt));
  return ad::softmax(ad::linear(pooled, p.head_w, p.head_b), 1);
}

}  // namespace uistyler
