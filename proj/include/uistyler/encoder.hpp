#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "uistyler/image.hpp"
#include "uistyler/ops.hpp"
#include "uistyler/params.hpp"

// Patch tokenization and the ViT-style encoders producing L x d token
// matrices. Blocks are pre-norm: x += MHSA(LN(x)); x += MLP(LN(x)).

namespace uistyler {

enum class Provenance { source, target, stylized, class_aligned };

template <class T>
struct FeatureMap {
  ad::Tensor<T> tokens;  // L x d
  int grid_h = 0, grid_w = 0;
  Provenance tag = Provenance::source;
};

struct EncoderConfig {
  int image = 64;
  int patch = 8;
  int dim = 128;
  int blocks = 3;
  int heads = 8;
  int mlp_ratio = 4;

  int grid() const { return image / patch; }
  int tokens() const { return grid() * grid(); }

  void validate() const {
    if (image <= 0 || patch <= 0 || image % patch != 0)
      throw ConfigError("encoder: image size must be a positive multiple of the patch size");
    if (dim <= 0 || heads <= 0 || dim % heads != 0)
      throw ConfigError("encoder: dim must be divisible by head count");
    if (blocks < 1) throw ConfigError("encoder: need at least one block");
  }
};

template <class T>
struct ViTBlockParams {
  ad::Tensor<T> ln1_g, ln1_b;
  ad::Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Tensor<T> ln2_g, ln2_b;
  ad::Tensor<T> w1, b1, w2, b2;
};

template <class T>
struct EncoderParams {
  EncoderConfig cfg;
  ad::Tensor<T> patch_w, patch_b;
  ad::Tensor<T> pos;  // learned positional embedding, zero-initialized
  std::vector<ViTBlockParams<T>> blocks;

  static EncoderParams init(const EncoderConfig& cfg, const Rng& rng, const std::string& prefix) {
    cfg.validate();
    EncoderParams p;
    p.cfg = cfg;
    const int d = cfg.dim, hidden = cfg.dim * cfg.mlp_ratio;
    p.patch_w = init::xavier<T>(rng, prefix + ".patch.w", {cfg.patch * cfg.patch * 3, d});
    p.patch_b = init::zeros<T>({d});
    p.pos = init::zeros<T>({cfg.tokens(), d});
    for (int b = 0; b < cfg.blocks; ++b) {
      const std::string bp = prefix + ".block" + std::to_string(b);
      ViTBlockParams<T> blk;
      blk.ln1_g = init::ones<T>({d});
      blk.ln1_b = init::zeros<T>({d});
      blk.wq = init::xavier<T>(rng, bp + ".attn.wq", {d, d});
      blk.bq = init::zeros<T>({d});
      blk.wk = init::xavier<T>(rng, bp + ".attn.wk", {d, d});
      blk.bk = init::zeros<T>({d});
      blk.wv = init::xavier<T>(rng, bp + ".attn.wv", {d, d});
      blk.bv = init::zeros<T>({d});
      blk.wo = init::xavier<T>(rng, bp + ".attn.wo", {d, d});
      blk.bo = init::zeros<T>({d});
      blk.ln2_g = init::ones<T>({d});
      blk.ln2_b = init::zeros<T>({d});
      blk.w1 = init::xavier<T>(rng, bp + ".mlp.w1", {d, hidden});
      blk.b1 = init::zeros<T>({hidden});
      blk.w2 = init::xavier<T>(rng, bp + ".mlp.w2", {hidden, d});
      blk.b2 = init::zeros<T>({d});
      p.blocks.push_back(std::move(blk));
    }
    return p;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.add(prefix + ".patch.w", patch_w);
    out.add(prefix + ".patch.b", patch_b);
    out.add(prefix + ".pos", pos);
    for (size_t b = 0; b < blocks.size(); ++b) {
      const std::string bp = prefix + ".block" + std::to_string(b);
      const auto& k = blocks[b];
      out.add(bp + ".ln1.g", k.ln1_g);
      out.add(bp + ".ln1.b", k.ln1_b);
      out.add(bp + ".attn.wq", k.wq);
      out.add(bp + ".attn.bq", k.bq);
      out.add(bp + ".attn.wk", k.wk);
      out.add(bp + ".attn.bk", k.bk);
      out.add(bp + ".attn.wv", k.wv);
      out.add(bp + ".attn.bv", k.bv);
      out.add(bp + ".attn.wo", k.wo);
      out.add(bp + ".attn.bo", k.bo);
      out.add(bp + ".ln2.g", k.ln2_g);
      out.add(bp + ".ln2.b", k.ln2_b);
      out.add(bp + ".mlp.w1", k.w1);
      out.add(bp + ".mlp.b1", k.b1);
      out.add(bp + ".mlp.w2", k.w2);
      out.add(bp + ".mlp.b2", k.b2);
    }
  }
};

namespace enc_detail {

// Standard multi-head self-attention on pre-normalized tokens.
template <class T>
inline ad::Tensor<T> mhsa(const ad::Tensor<T>& x, const ViTBlockParams<T>& p, int heads) {
  const int d = x.shape()[1];
  const int dh = d / heads;
  auto q = ad::linear(x, p.wq, p.bq);
  auto k = ad::linear(x, p.wk, p.bk);
  auto v = ad::linear(x, p.wv, p.bv);
  std::vector<ad::Tensor<T>> outs;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  for (int h = 0; h < heads; ++h) {
    auto qh = ad::slice_cols(q, h * dh, dh);
    auto kh = ad::slice_cols(k, h * dh, dh);
    auto vh = ad::slice_cols(v, h * dh, dh);
    auto attn = ad::softmax(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt), 1);
    outs.push_back(ad::matmul(attn, vh));
  }
  return ad::linear(ad::concat_cols(outs), p.wo, p.bo);
}

}  // namespace enc_detail

// Full encoder forward: patchify -> project -> +pos -> pre-norm ViT blocks.
// `img` is a (3,H,W) tensor; use replicate3/image_to_tensor to build it.
template <class T>
inline FeatureMap<T> encode(const ad::Tensor<T>& img, const EncoderParams<T>& p, Provenance tag) {
  const auto& cfg = p.cfg;
  if (img.shape() != ad::Shape{3, cfg.image, cfg.image})
    throw ShapeError("encode: expected (3," + std::to_string(cfg.image) + "," +
                     std::to_string(cfg.image) + "), got " + ad::shape_str(img.shape()));
  auto x = ad::add(ad::linear(ad::patchify(img, cfg.patch), p.patch_w, p.patch_b), p.pos);
  for (const auto& blk : p.blocks) {
    x = ad::add(x, enc_detail::mhsa(ad::layer_norm(x, blk.ln1_g, blk.ln1_b), blk, cfg.heads));
    auto h = ad::layer_norm(x, blk.ln2_g, blk.ln2_b);
    x = ad::add(x, ad::linear(ad::gelu(ad::linear(h, blk.w1, blk.b1)), blk.w2, blk.b2));
  }
  return {x, cfg.grid(), cfg.grid(), tag};
}

template <class T>
inline ad::Tensor<T> image_to_tensor(const PlanarImage& img) {
  std::vector<T> data(img.data.begin(), img.data.end());
  return ad::Tensor<T>::from({img.c, img.h, img.w}, std::move(data));
}

template <class T>
inline PlanarImage tensor_to_image(const ad::Tensor<T>& t) {
  if (t.shape().size() != 3) throw ShapeError("tensor_to_image: expected rank 3");
  PlanarImage img{t.shape()[0], t.shape()[1], t.shape()[2], {}};
  img.data.assign(t.values().begin(), t.values().end());
  return img;
}

}  // namespace uistyler
