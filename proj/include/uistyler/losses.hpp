#pragma once

#include <vector>

#include "uistyler/class_prompting.hpp"
#include "uistyler/ops.hpp"

namespace uistyler {

constexpr double kLogFloor = 1e-12;

// Mean over classes of binary cross-entropy between the correlation vector
// and the one-hot pseudo label.
template <class T>
inline ad::Tensor<T> direction_loss(const ad::Tensor<T>& feat, const PromptParams<T>& p,
                                    int pseudo_label) {
  const int C = p.cfg.classes;
  if (pseudo_label < 0 || pseudo_label >= C)
    throw ConfigError("direction_loss: label out of range");
  auto a = correlation(feat, p).activations;
  std::vector<T> hot(C, T(0)), cold(C, T(1));
  hot[pseudo_label] = T(1);
  cold[pseudo_label] = T(0);
  auto y = ad::Tensor<T>::from({C}, hot);
  auto not_y = ad::Tensor<T>::from({C}, cold);
  auto log_a = ad::log_clamped(a, T(kLogFloor));
  auto log_1a = ad::log_clamped(ad::add_scalar(ad::scale(a, T(-1)), T(1)), T(kLogFloor));
  auto s = ad::sum_all(ad::add(ad::mul(y, log_a), ad::mul(not_y, log_1a)));
  return ad::scale(s, T(-1) / static_cast<T>(C));
}

// -log p_t[label] with p_t = softmax(H(F_t + P_hat)).
template <class T>
inline ad::Tensor<T> supervised_loss(const ad::Tensor<T>& f_target, const PromptParams<T>& p,
                                     int pseudo_label) {
  auto prompt = supervised_prompt(pseudo_label, p);
  auto probs = classify_with_prompt(f_target, prompt, p);
  return ad::scale(ad::pick(ad::log_clamped(probs, T(kLogFloor)), pseudo_label), T(-1));
}

struct LossWeights {
  double dir = 1.0, sup = 1.0, content = 1.0, style = 1.0;

  void validate() const {
    if (dir < 0 || sup < 0 || content < 0 || style < 0)
      throw ConfigError("loss weights must be non-negative");
  }
};

template <class T>
inline ad::Tensor<T> total_loss(const ad::Tensor<T>& l_dir, const ad::Tensor<T>& l_sup,
                                const ad::Tensor<T>& l_content, const ad::Tensor<T>& l_style,
                                const LossWeights& w) {
  w.validate();
  auto sum = ad::add(ad::scale(l_dir, T(w.dir)), ad::scale(l_sup, T(w.sup)));
  sum = ad::add(sum, ad::scale(l_content, T(w.content)));
  return ad::add(sum, ad::scale(l_style, T(w.style)));
}

}  // namespace uistyler
