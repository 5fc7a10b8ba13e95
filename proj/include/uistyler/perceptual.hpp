#pragma once

#include <string>
#include <vector>

#include "uistyler/ops.hpp"
#include "uistyler/params.hpp"

// Frozen multi-scale feature network standing in for a pretrained perceptual
// backbone. Stages are [3x3 conv, GELU, 2x average pool], widths
// 16/32/64/128/128; weights are drawn once from a seed and never trained.
// Gradients flow through the network to its inputs only.

namespace uistyler {

template <class T>
class PerceptualNet {
 public:
  static constexpr int kDefaultStages = 5;

  static PerceptualNet create(uint64_t seed, int stages = kDefaultStages) {
    if (stages < 2 || stages > 5) throw ConfigError("perceptual: stages must be in [2,5]");
    static const int widths[5] = {16, 32, 64, 128, 128};
    PerceptualNet net;
    net.stages_ = stages;
    net.seed_ = seed;
    Rng rng(seed);
    int in_ch = 3;
    for (int s = 0; s < stages; ++s) {
      auto w = ad::xavier_init<T>({widths[s], in_ch, 3, 3}, rng.stream("perc.w" + std::to_string(s)));
      w.set_requires_grad(false);
      auto b = ad::Tensor<T>::zeros({widths[s]});
      net.w_.push_back(w);
      net.b_.push_back(b);
      in_ch = widths[s];
    }
    return net;
  }

  int stages() const { return stages_; }
  uint64_t seed() const { return seed_; }
  int feature_dim() const { return w_.back().shape()[0]; }

  // phi^1 .. phi^S; phi^l has spatial extent H/2^l x W/2^l.
  std::vector<ad::Tensor<T>> features(const ad::Tensor<T>& img) const {
    if (img.shape().size() != 3 || img.shape()[0] != 3)
      throw ShapeError("perceptual: expected a (3,H,W) image, got " + ad::shape_str(img.shape()));
    const int min_side = 1 << stages_;
    if (img.shape()[1] < min_side || img.shape()[2] < min_side)
      throw ConfigError("perceptual: image too small for " + std::to_string(stages_) +
                        " halvings (requires H >= " + std::to_string(min_side) + ")");
    std::vector<ad::Tensor<T>> out;
    auto x = img;
    for (int s = 0; s < stages_; ++s) {
      x = ad::avg_pool2(ad::gelu(ad::conv2d(x, w_[s], b_[s], 1, 1)));
      out.push_back(x);
    }
    return out;
  }

 private:
  int stages_ = 0;
  uint64_t seed_ = 0;
  std::vector<ad::Tensor<T>> w_, b_;
};

// || phi^{S-1}(a) - phi^{S-1}(b) ||^2 + || phi^S(a) - phi^S(b) ||^2, each
// term mean-reduced over elements. With the default 5 stages this compares
// the two deepest feature maps.
template <class T>
inline ad::Tensor<T> content_loss(const PerceptualNet<T>& net, const ad::Tensor<T>& a,
                                  const ad::Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("content_loss: image shapes differ, " + ad::shape_str(a.shape()) + " vs " +
                     ad::shape_str(b.shape()));
  auto fa = net.features(a);
  auto fb = net.features(b);
  const int S = net.stages();
  return ad::add(ad::mse(fa[S - 2], fb[S - 2]), ad::mse(fa[S - 1], fb[S - 1]));
}

// Sum over stages 2..S of squared differences between per-channel mean and
// std statistics, each mean-reduced. Statistics only, so the two images may
// have different sizes.
template <class T>
inline ad::Tensor<T> style_loss(const PerceptualNet<T>& net, const ad::Tensor<T>& a,
                                const ad::Tensor<T>& b) {
  auto fa = net.features(a);
  auto fb = net.features(b);
  ad::Tensor<T> total = ad::Tensor<T>::scalar_value(T(0));
  for (int l = 1; l < net.stages(); ++l) {  // stage index l+1 in 1-based terms
    auto mu = ad::mse(ad::channel_mean(fa[l]), ad::channel_mean(fb[l]));
    auto sd = ad::mse(ad::channel_std(fa[l]), ad::channel_std(fb[l]));
    total = ad::add(total, ad::add(mu, sd));
  }
  return total;
}

}  // namespace uistyler
