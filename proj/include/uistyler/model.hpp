#pragma once

#include <string>
#include <utility>

#include "uistyler/class_prompting.hpp"
#include "uistyler/decoder.hpp"
#include "uistyler/encoder.hpp"
#include "uistyler/losses.hpp"
#include "uistyler/pattern_matching.hpp"
#include "uistyler/perceptual.hpp"

// The full stylization model: two encoders, pattern matching, class-aware
// prompting, decoder. The target encoder output is shared between the
// stylization path and the prompt losses (same tensors, not copies).

namespace uistyler {

struct ModelConfig {
  int image = 64;
  int patch = 8;
  int dim = 128;
  int enc_blocks = 3;
  int pm_blocks = 3;
  int heads = 8;
  int embed = 64;  // e
  int classes = 2;
  uint64_t perceptual_seed = 77;

  int grid() const { return image / patch; }
  int tokens() const { return grid() * grid(); }

  EncoderConfig encoder_config() const { return {image, patch, dim, enc_blocks, heads, 4}; }
  PatternMatchConfig pm_config() const { return {dim, pm_blocks, heads}; }
  PromptConfig prompt_config() const { return {classes, tokens(), dim, embed, grid(), grid()}; }
  DecoderConfig decoder_config() const { return {dim, grid(), grid(), patch}; }

  void validate() const {
    encoder_config().validate();
    pm_config().validate();
    prompt_config().validate();
    decoder_config().validate();
  }
};

template <class T>
struct UIStylerModel {
  ModelConfig cfg;
  EncoderParams<T> enc_s, enc_t;
  PatternMatchParams<T> pm;
  PromptParams<T> cp;
  DecoderParams<T> dec;

  static UIStylerModel init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    UIStylerModel m;
    m.cfg = cfg;
    m.enc_s = EncoderParams<T>::init(cfg.encoder_config(), rng, "enc_s");
    m.enc_t = EncoderParams<T>::init(cfg.encoder_config(), rng, "enc_t");
    m.pm = PatternMatchParams<T>::init(cfg.pm_config(), rng, "pm");
    m.cp = PromptParams<T>::init(cfg.prompt_config(), rng, "cp");
    m.dec = DecoderParams<T>::init(cfg.decoder_config(), rng, "dec");
    return m;
  }

  ParamList<T> params() const {
    ParamList<T> out;
    enc_s.collect(out, "enc_s");
    enc_t.collect(out, "enc_t");
    pm.collect(out, "pm");
    cp.collect(out, "cp");
    dec.collect(out, "dec");
    return out;
  }

  // Deep copy with fresh parameter storage (used by the parallel trainer).
  UIStylerModel clone() const {
    UIStylerModel copy = *this;
    copy.for_each_param([](ad::Tensor<T>& t) { t = t.clone_leaf(); });
    return copy;
  }

  template <class Fn>
  void for_each_param(Fn&& fn) {
    auto enc_visit = [&](EncoderParams<T>& e) {
      fn(e.patch_w);
      fn(e.patch_b);
      fn(e.pos);
      for (auto& b : e.blocks) {
        fn(b.ln1_g); fn(b.ln1_b);
        fn(b.wq); fn(b.bq); fn(b.wk); fn(b.bk); fn(b.wv); fn(b.bv); fn(b.wo); fn(b.bo);
        fn(b.ln2_g); fn(b.ln2_b);
        fn(b.w1); fn(b.b1); fn(b.w2); fn(b.b2);
      }
    };
    enc_visit(enc_s);
    enc_visit(enc_t);
    for (auto& b : pm.blocks) {
      fn(b.wq); fn(b.wk); fn(b.wv); fn(b.ln_g); fn(b.ln_b);
    }
    fn(cp.prompts);
    fn(cp.ef_w); fn(cp.ef_b); fn(cp.ep_w); fn(cp.ep_b);
    fn(cp.head_w); fn(cp.head_b);
    for (auto& w : dec.conv_w) fn(w);
    for (auto& b : dec.conv_b) fn(b);
  }

  FeatureMap<T> encode_source(const ad::Tensor<T>& img) const {
    return encode(img, enc_s, Provenance::source);
  }
  FeatureMap<T> encode_target(const ad::Tensor<T>& img) const {
    return encode(img, enc_t, Provenance::target);
  }

  struct StylizeResult {
    ad::Tensor<T> image;       // (3,H,W) in [0,1]
    int selected_class = -1;   // -1 when prompting is bypassed
    ad::Tensor<T> f_stylized;  // L x d after pattern matching
  };

  // Full inference path: encode both sides, pattern-match, select and add the
  // class prompt (unless bypassed), decode.
  StylizeResult stylize(const ad::Tensor<T>& x_source, const ad::Tensor<T>& x_target_ref,
                        bool with_prompt = true) const {
    auto fs = encode_source(x_source);
    auto ft = encode_target(x_target_ref);
    auto f_st = pattern_match(fs.tokens, ft.tokens, pm);
    StylizeResult out;
    out.f_stylized = f_st;
    if (with_prompt) {
      auto [cls, prompt] = select_prompt(f_st, cp);
      out.selected_class = cls;
      out.image = decode(apply_prompt(f_st, prompt), dec);
    } else {
      out.image = decode(f_st, dec);
    }
    return out;
  }
};

}  // namespace uistyler
