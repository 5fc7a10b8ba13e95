#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "uistyler/ops.hpp"
#include "uistyler/params.hpp"

// Domain-level stylization: stacked multi-head cross-attention blocks that
// inject target-style tokens into source-content tokens. Queries come from
// the (evolving) source side; keys and values always from the target tokens.
// Each block concatenates the per-head residuals, adds them back onto its
// input, and applies layer normalization. No output projection and no MLP.

namespace uistyler {

struct PatternMatchConfig {
  int dim = 128;
  int blocks = 3;
  int heads = 8;

  void validate() const {
    if (dim <= 0 || heads <= 0 || dim % heads != 0)
      throw ConfigError("pattern_match: dim must be divisible by head count");
    if (blocks < 1) throw ConfigError("pattern_match: need at least one block");
  }
};

template <class T>
struct CrossAttnBlockParams {
  ad::Tensor<T> wq, wk, wv;  // d x d, column blocks of d_h per head
  ad::Tensor<T> ln_g, ln_b;
};

template <class T>
struct PatternMatchParams {
  PatternMatchConfig cfg;
  std::vector<CrossAttnBlockParams<T>> blocks;

  static PatternMatchParams init(const PatternMatchConfig& cfg, const Rng& rng,
                                 const std::string& prefix) {
    cfg.validate();
    PatternMatchParams p;
    p.cfg = cfg;
    for (int b = 0; b < cfg.blocks; ++b) {
      const std::string bp = prefix + ".block" + std::to_string(b);
      CrossAttnBlockParams<T> blk;
      blk.wq = init::xavier<T>(rng, bp + ".wq", {cfg.dim, cfg.dim});
      blk.wk = init::xavier<T>(rng, bp + ".wk", {cfg.dim, cfg.dim});
      blk.wv = init::xavier<T>(rng, bp + ".wv", {cfg.dim, cfg.dim});
      blk.ln_g = init::ones<T>({cfg.dim});
      blk.ln_b = init::zeros<T>({cfg.dim});
      p.blocks.push_back(std::move(blk));
    }
    return p;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (size_t b = 0; b < blocks.size(); ++b) {
      const std::string bp = prefix + ".block" + std::to_string(b);
      out.add(bp + ".wq", blocks[b].wq);
      out.add(bp + ".wk", blocks[b].wk);
      out.add(bp + ".wv", blocks[b].wv);
      out.add(bp + ".ln.g", blocks[b].ln_g);
      out.add(bp + ".ln.b", blocks[b].ln_b);
    }
  }
};

// One head's residual: softmax(Q K^T / sqrt(d_h)) V with Q from the content
// side and K,V from the style side. Content and style token counts may
// differ; the output has the content side's length.
template <class T>
inline ad::Tensor<T> cross_attention_head(const ad::Tensor<T>& f_content,
                                          const ad::Tensor<T>& f_style, const ad::Tensor<T>& wq,
                                          const ad::Tensor<T>& wk, const ad::Tensor<T>& wv,
                                          int head, int dh) {
  if (f_content.shape()[1] != f_style.shape()[1])
    throw ShapeError("cross_attention_head: embedding dims differ, " +
                     ad::shape_str(f_content.shape()) + " vs " + ad::shape_str(f_style.shape()));
  auto q = ad::slice_cols(ad::matmul(f_content, wq), head * dh, dh);
  auto k = ad::slice_cols(ad::matmul(f_style, wk), head * dh, dh);
  auto v = ad::slice_cols(ad::matmul(f_style, wv), head * dh, dh);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  auto attn = ad::softmax(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt), 1);
  return ad::matmul(attn, v);
}

template <class T>
inline ad::Tensor<T> cross_attention_block(const ad::Tensor<T>& f_content,
                                           const ad::Tensor<T>& f_style,
                                           const CrossAttnBlockParams<T>& blk, int heads) {
  const int d = f_content.shape()[1];
  const int dh = d / heads;
  std::vector<ad::Tensor<T>> residuals;
  for (int h = 0; h < heads; ++h)
    residuals.push_back(cross_attention_head(f_content, f_style, blk.wq, blk.wk, blk.wv, h, dh));
  return ad::layer_norm(ad::add(ad::concat_cols(residuals), f_content), blk.ln_g, blk.ln_b);
}

// Full pattern matching: N stacked cross-attention blocks. K and V re-attend
// to the original target tokens at every block.
template <class T>
inline ad::Tensor<T> pattern_match(const ad::Tensor<T>& f_source, const ad::Tensor<T>& f_target,
                                   const PatternMatchParams<T>& p) {
  auto x = f_source;
  for (const auto& blk : p.blocks) x = cross_attention_block(x, f_target, blk, p.cfg.heads);
  return x;
}

}  // namespace uistyler
