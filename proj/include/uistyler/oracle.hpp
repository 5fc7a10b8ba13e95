#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "uistyler/adam.hpp"
#include "uistyler/checkpoint.hpp"
#include "uistyler/data_synth.hpp"
#include "uistyler/encoder.hpp"
#include "uistyler/losses.hpp"

// Simulated inference-blackbox downstream model. Trained once on a target
// domain's training split, then frozen behind a predictions-only surface:
// class IDs and binary masks. No parameters, features, logits, or scores are
// reachable through the public interface; the evaluation-only AUC tap is a
// friend living in the evaluation module.

namespace uistyler {

class EvalTap;  // defined in eval.hpp; the only sanctioned score access

struct OracleConfig {
  int image = 64;
  int classes = 2;
  int epochs = 14;
  double lr = 1e-3;
  int batch = 8;
  uint64_t seed = 0;
  bool mask_head = true;
  double min_accuracy = 0.9;
};

namespace oracle_detail {

// 3 conv stages (GELU + 2x pool) -> GAP -> linear classifier, plus an
// upsampling mask head off the last conv stage.
struct Net {
  OracleConfig cfg;
  ad::Tensor<float> c1w, c1b, c2w, c2b, c3w, c3b;
  ad::Tensor<float> fcw, fcb;
  ad::Tensor<float> m1w, m1b, m2w, m2b, m3w, m3b, m4w, m4b;

  static Net init(const OracleConfig& cfg) {
    Rng rng(cfg.seed);
    Net n;
    n.cfg = cfg;
    n.c1w = init::xavier<float>(rng, "oracle.c1.w", {8, 3, 3, 3});
    n.c1b = init::zeros<float>({8});
    n.c2w = init::xavier<float>(rng, "oracle.c2.w", {16, 8, 3, 3});
    n.c2b = init::zeros<float>({16});
    n.c3w = init::xavier<float>(rng, "oracle.c3.w", {32, 16, 3, 3});
    n.c3b = init::zeros<float>({32});
    n.fcw = init::xavier<float>(rng, "oracle.fc.w", {32, cfg.classes});
    n.fcb = init::zeros<float>({cfg.classes});
    n.m1w = init::xavier<float>(rng, "oracle.m1.w", {16, 32, 3, 3});
    n.m1b = init::zeros<float>({16});
    n.m2w = init::xavier<float>(rng, "oracle.m2.w", {8, 16, 3, 3});
    n.m2b = init::zeros<float>({8});
    n.m3w = init::xavier<float>(rng, "oracle.m3.w", {4, 8, 3, 3});
    n.m3b = init::zeros<float>({4});
    n.m4w = init::xavier<float>(rng, "oracle.m4.w", {1, 4, 3, 3});
    n.m4b = init::zeros<float>({1});
    return n;
  }

  ParamList<float> params() const {
    ParamList<float> out;
    out.add("oracle.c1.w", c1w);
    out.add("oracle.c1.b", c1b);
    out.add("oracle.c2.w", c2w);
    out.add("oracle.c2.b", c2b);
    out.add("oracle.c3.w", c3w);
    out.add("oracle.c3.b", c3b);
    out.add("oracle.fc.w", fcw);
    out.add("oracle.fc.b", fcb);
    out.add("oracle.m1.w", m1w);
    out.add("oracle.m1.b", m1b);
    out.add("oracle.m2.w", m2w);
    out.add("oracle.m2.b", m2b);
    out.add("oracle.m3.w", m3w);
    out.add("oracle.m3.b", m3b);
    out.add("oracle.m4.w", m4w);
    out.add("oracle.m4.b", m4b);
    return out;
  }

  // Shared trunk to the 8x8x32 feature grid (for 64x64 inputs).
  ad::Tensor<float> trunk(const ad::Tensor<float>& img) const {
    auto x = ad::avg_pool2(ad::gelu(ad::conv2d(img, c1w, c1b, 1, 1)));
    x = ad::avg_pool2(ad::gelu(ad::conv2d(x, c2w, c2b, 1, 1)));
    return ad::avg_pool2(ad::gelu(ad::conv2d(x, c3w, c3b, 1, 1)));
  }

  // 1 x C logits row from the pooled trunk features.
  ad::Tensor<float> logits_from_trunk(const ad::Tensor<float>& feat) const {
    auto pooled = ad::reshape(ad::channel_mean(feat), {1, fcw.shape()[0]});
    return ad::linear(pooled, fcw, fcb);
  }

  ad::Tensor<float> mask_logits_from_trunk(const ad::Tensor<float>& feat) const {
    auto x = ad::gelu(ad::conv2d(ad::upsample_nearest(feat, 2), m1w, m1b, 1, 1));
    x = ad::gelu(ad::conv2d(ad::upsample_nearest(x, 2), m2w, m2b, 1, 1));
    x = ad::gelu(ad::conv2d(ad::upsample_nearest(x, 2), m3w, m3b, 1, 1));
    return ad::conv2d(x, m4w, m4b, 1, 1);  // (1,H,W) pre-sigmoid
  }
};

}  // namespace oracle_detail

class OracleHandle {
 public:
  int predict_class(const PlanarImage& img) const {
    auto logits = class_logits(img);
    int best = 0;
    for (size_t c = 1; c < logits.size(); ++c)
      if (logits[c] > logits[best]) best = static_cast<int>(c);
    return best;
  }

  Mask predict_mask(const PlanarImage& img) const {
    if (!net_.cfg.mask_head) throw CapabilityError("oracle: trained without a mask head");
    check_size(img);
    auto t = image_to_tensor<float>(img);
    auto logits = net_.mask_logits_from_trunk(net_.trunk(t));
    Mask m{logits.shape()[1], logits.shape()[2], {}};
    m.px.resize(logits.values().size());
    for (size_t i = 0; i < m.px.size(); ++i) m.px[i] = logits.values()[i] > 0.f ? 1 : 0;
    return m;
  }

  const std::string& domain() const { return domain_; }
  bool has_mask_head() const { return net_.cfg.mask_head; }
  int image_size() const { return net_.cfg.image; }
  int classes() const { return net_.cfg.classes; }
  double reported_accuracy() const { return reported_accuracy_; }

  void save(const std::string& path) const {
    std::ostringstream cfg;
    cfg << "kind=oracle\n";
    cfg << "image=" << net_.cfg.image << "\n";
    cfg << "classes=" << net_.cfg.classes << "\n";
    cfg << "mask_head=" << (net_.cfg.mask_head ? 1 : 0) << "\n";
    cfg << "seed=" << net_.cfg.seed << "\n";
    cfg << "domain=" << domain_ << "\n";
    cfg << "accuracy=" << reported_accuracy_ << "\n";
    save_checkpoint(path, snapshot(net_.params(), 0, cfg.str()));
  }

  static OracleHandle load(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    OracleConfig cfg;
    std::string domain;
    double acc = 0.0;
    std::istringstream in(ck.config_text);
    std::string line;
    bool is_oracle = false;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
      if (k == "kind") is_oracle = v == "oracle";
      else if (k == "image") cfg.image = std::stoi(v);
      else if (k == "classes") cfg.classes = std::stoi(v);
      else if (k == "mask_head") cfg.mask_head = v == "1";
      else if (k == "seed") cfg.seed = std::stoull(v);
      else if (k == "domain") domain = v;
      else if (k == "accuracy") acc = std::stod(v);
    }
    if (!is_oracle) throw IntegrityError("oracle: checkpoint is not an oracle (" + path + ")");
    OracleHandle h(oracle_detail::Net::init(cfg), std::move(domain), acc);
    auto params = h.net_.params();
    restore(ck, params);
    return h;
  }

 private:
  friend class EvalTap;
  friend OracleHandle train_oracle(const Dataset&, const OracleConfig&);

  OracleHandle(oracle_detail::Net net, std::string domain, double acc)
      : net_(std::move(net)), domain_(std::move(domain)), reported_accuracy_(acc) {}

  void check_size(const PlanarImage& img) const {
    if (img.c != 3 || img.h != net_.cfg.image || img.w != net_.cfg.image)
      throw ShapeError("oracle: expected a 3x" + std::to_string(net_.cfg.image) + "x" +
                       std::to_string(net_.cfg.image) + " image");
  }

  std::vector<float> class_logits(const PlanarImage& img) const {
    check_size(img);
    auto t = image_to_tensor<float>(img);
    return net_.logits_from_trunk(net_.trunk(t)).values();
  }

  // Class-1 probability; reachable only through the evaluation tap.
  float class1_score(const PlanarImage& img) const {
    auto logits = class_logits(img);
    float mx = logits[0];
    for (float l : logits) mx = std::max(mx, l);
    float z = 0.f;
    for (float& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    return logits[1] / z;
  }

  oracle_detail::Net net_;
  std::string domain_;
  double reported_accuracy_ = 0.0;
};

// Trains the downstream model on the dataset's training split and gates on
// test-split accuracy. Labels come from the generator, mirroring a vendor
// training their model on labeled target data before shipping it as a black
// box.
inline OracleHandle train_oracle(const Dataset& target, const OracleConfig& cfg) {
  auto train = target.train();
  auto test = target.test();
  if (train.empty() || test.empty())
    throw ConfigError("train_oracle: dataset needs both train and test splits");
  for (const auto* s : train)
    if (s->pixels.h != cfg.image)
      throw ConfigError("train_oracle: dataset image size does not match config");

  auto net = oracle_detail::Net::init(cfg);
  auto params = net.params();
  Adam<float> opt(params);
  Rng batch_rng = Rng(cfg.seed).stream("oracle-batches");

  const long steps_per_epoch = std::max<long>(1, static_cast<long>(train.size()) / cfg.batch);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (long s = 0; s < steps_per_epoch; ++s) {
      ad::Tensor<float> loss = ad::Tensor<float>::scalar_value(0.f);
      for (int b = 0; b < cfg.batch; ++b) {
        const auto* sample = train[batch_rng.below(train.size())];
        auto img = image_to_tensor<float>(replicate3(sample->pixels));
        auto feat = net.trunk(img);
        auto pooled = ad::channel_mean(feat);
        // Cross-entropy through a 1xC softmax row.
        std::vector<ad::Tensor<float>> cols;
        for (int c = 0; c < cfg.classes; ++c) {
          auto wc = ad::slice_cols(net.fcw, c, 1);  // d x 1
          cols.push_back(ad::sum_all(ad::mul(pooled, ad::chw_to_tokens(lift_chw(wc)))));
        }
        auto logits = ad::concat_vec(cols);
        logits = ad::add(logits, net.fcb);
        auto probs = ad::softmax(row_of(logits), 1);
        auto ce = ad::scale(ad::pick(ad::log_clamped(probs, 1e-12f), sample->label), -1.f);
        loss = ad::add(loss, ce);
        if (cfg.mask_head) {
          auto mlogits = net.mask_logits_from_trunk(feat);
          auto msig = ad::sigmoid(mlogits);
          std::vector<float> target_mask(sample->mask.px.begin(), sample->mask.px.end());
          auto y = ad::Tensor<float>::from(mlogits.shape(), std::move(target_mask));
          auto one_minus_y = ad::add_scalar(ad::scale(y, -1.f), 1.f);
          auto bce = ad::scale(
              ad::mean_all(ad::add(ad::mul(y, ad::log_clamped(msig, 1e-12f)),
                                   ad::mul(one_minus_y, ad::log_clamped(ad::add_scalar(ad::scale(msig, -1.f), 1.f),
                                                                        1e-12f)))),
              -1.f);
          loss = ad::add(loss, bce);
        }
      }
      loss = ad::scale(loss, 1.f / cfg.batch);
      params.zero_grads();
      ad::backward(loss);
      opt.step(params, cfg.lr);
    }
  }

  OracleHandle handle(std::move(net), target.domain(), 0.0);
  long correct = 0;
  for (const auto* s : test)
    correct += handle.predict_class(replicate3(s->pixels)) == s->label ? 1 : 0;
  handle.reported_accuracy_ = static_cast<double>(correct) / static_cast<double>(test.size());
  if (handle.reported_accuracy_ < cfg.min_accuracy)
    throw OracleQualityError("train_oracle: target-test accuracy " +
                             std::to_string(handle.reported_accuracy_) + " below required " +
                             std::to_string(cfg.min_accuracy));
  return handle;
}

// Static pseudo labels for a set of images, in input order.
inline std::vector<int> pseudo_label(const OracleHandle& oracle,
                                     const std::vector<const ImageSample*>& images) {
  std::vector<int> out;
  out.reserve(images.size());
  for (const auto* s : images) out.push_back(oracle.predict_class(replicate3(s->pixels)));
  return out;
}

// Flip exactly round(rate*N) labels to a different class, positions drawn
// uniformly without replacement.
inline std::vector<int> inject_label_noise(std::vector<int> labels, double rate, int classes,
                                           Rng rng) {
  if (rate < 0.0 || rate > 1.0) throw ConfigError("inject_label_noise: rate outside [0,1]");
  if (classes < 2) throw ConfigError("inject_label_noise: need at least 2 classes");
  const long n = static_cast<long>(labels.size());
  const long flips = std::lround(rate * static_cast<double>(n));
  std::vector<long> idx(n);
  for (long i = 0; i < n; ++i) idx[i] = i;
  for (long i = 0; i < flips; ++i) {
    const long j = i + static_cast<long>(rng.below(static_cast<uint64_t>(n - i)));
    std::swap(idx[i], idx[j]);
  }
  for (long i = 0; i < flips; ++i) {
    int& l = labels[idx[i]];
    int shift = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(classes - 1)));
    l = (l + shift) % classes;
  }
  return labels;
}

}  // namespace uistyler
