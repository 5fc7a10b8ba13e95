#pragma once

#include <string>
#include <vector>

#include "uistyler/ops.hpp"
#include "uistyler/params.hpp"

// Decoder: token grid -> image. Three stages of [nearest upsample x2,
// 3x3 conv halving channels, GELU], then a final 3x3 conv to 3 channels and
// a sigmoid into [0,1]. With patch size 8 the three doublings restore the
// full input resolution.

namespace uistyler {

struct DecoderConfig {
  int dim = 128;
  int grid_h = 8, grid_w = 8;
  int patch = 8;

  void validate() const {
    if (patch != 8) throw ConfigError("decoder: three upsample stages require patch size 8");
    if (dim % 8 != 0) throw ConfigError("decoder: dim must be divisible by 8 for channel halving");
    if (grid_h <= 0 || grid_w <= 0) throw ConfigError("decoder: bad grid");
  }
};

template <class T>
struct DecoderParams {
  DecoderConfig cfg;
  std::vector<ad::Tensor<T>> conv_w, conv_b;  // 3 halving stages + final

  static DecoderParams init(const DecoderConfig& cfg, const Rng& rng, const std::string& prefix) {
    cfg.validate();
    DecoderParams p;
    p.cfg = cfg;
    int ch = cfg.dim;
    for (int s = 0; s < 3; ++s) {
      p.conv_w.push_back(init::xavier<T>(rng, prefix + ".stage" + std::to_string(s) + ".w",
                                         {ch / 2, ch, 3, 3}));
      p.conv_b.push_back(init::zeros<T>({ch / 2}));
      ch /= 2;
    }
    p.conv_w.push_back(init::xavier<T>(rng, prefix + ".out.w", {3, ch, 3, 3}));
    p.conv_b.push_back(init::zeros<T>({3}));
    return p;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (int s = 0; s < 3; ++s) {
      out.add(prefix + ".stage" + std::to_string(s) + ".w", conv_w[s]);
      out.add(prefix + ".stage" + std::to_string(s) + ".b", conv_b[s]);
    }
    out.add(prefix + ".out.w", conv_w[3]);
    out.add(prefix + ".out.b", conv_b[3]);
  }
};

template <class T>
inline ad::Tensor<T> decode(const ad::Tensor<T>& tokens, const DecoderParams<T>& p) {
  const auto& cfg = p.cfg;
  if (tokens.shape() != ad::Shape{cfg.grid_h * cfg.grid_w, cfg.dim})
    throw ShapeError("decode: tokens " + ad::shape_str(tokens.shape()) + " do not match grid " +
                     std::to_string(cfg.grid_h) + "x" + std::to_string(cfg.grid_w) + " with dim " +
                     std::to_string(cfg.dim));
  auto x = ad::tokens_to_chw(tokens, cfg.grid_h, cfg.grid_w);
  for (int s = 0; s < 3; ++s)
    x = ad::gelu(ad::conv2d(ad::upsample_nearest(x, 2), p.conv_w[s], p.conv_b[s], 1, 1));
  return ad::sigmoid(ad::conv2d(x, p.conv_w[3], p.conv_b[3], 1, 1));
}

}  // namespace uistyler
