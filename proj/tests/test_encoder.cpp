#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "uistyler/encoder.hpp"
#include "uistyler/grad_check.hpp"

using namespace uistyler;
using ad::Tensor;

namespace {

template <class T>
Tensor<T> random_image(int size, uint64_t seed) {
  Rng rng(seed);
  std::vector<T> data(static_cast<size_t>(3) * size * size);
  for (auto& v : data) v = rng.uniform<T>(0, 1);
  return Tensor<T>::from({3, size, size}, std::move(data));
}

}  // namespace

TEST_CASE("patchify: token counts and inverse") {
  SECTION("256x256 with P=8 gives 1024 tokens") {
    std::vector<float> data(3 * 256 * 256, 0.25f);
    auto img = Tensor<float>::from({3, 256, 256}, std::move(data));
    REQUIRE(ad::patchify(img, 8).shape()[0] == 1024);
  }

  SECTION("64x64 with P=8 gives 64 tokens") {
    auto img = random_image<float>(64, 0);
    auto t = ad::patchify(img, 8);
    REQUIRE(t.shape() == ad::Shape{64, 192});
    REQUIRE(ad::unpatchify(t, 8, 8, 8, 3).values() == img.values());
  }

  SECTION("non-divisible size rejected") {
    auto img = random_image<float>(64, 0);
    REQUIRE_THROWS_AS(ad::patchify(img, 7), ShapeError);
  }
}

TEST_CASE("encode: shapes and degenerate symmetry") {
  EncoderConfig cfg{64, 8, 128, 3, 8, 4};
  Rng rng(1);
  auto params = EncoderParams<float>::init(cfg, rng, "enc");

  SECTION("64x64 input with d=128 gives a 64x128 feature map") {
    auto fm = encode(random_image<float>(64, 3), params, Provenance::source);
    REQUIRE(fm.tokens.shape() == ad::Shape{64, 128});
    REQUIRE(fm.grid_h * fm.grid_w == 64);
  }

  SECTION("zero image with zero positional embedding gives identical token rows") {
    // pos is zero-initialized, so a constant-zero image keeps all tokens equal
    // through every attention and MLP block.
    auto zero = Tensor<float>::from({3, 64, 64}, std::vector<float>(3 * 64 * 64, 0.f));
    auto fm = encode(zero, params, Provenance::source);
    const auto& v = fm.tokens.values();
    for (int i = 1; i < 64; ++i)
      for (int j = 0; j < 128; ++j)
        REQUIRE(v[static_cast<size_t>(i) * 128 + j] == Catch::Approx(v[j]).margin(1e-6));
  }

  SECTION("d not divisible by heads is a config error") {
    EncoderConfig bad{64, 8, 130, 3, 8, 4};
    REQUIRE_THROWS_AS(EncoderParams<float>::init(bad, rng, "enc"), ConfigError);
  }
}

TEST_CASE("encode: permutation equivariance on a toy encoder") {
  // 16x16 image, P=8 -> 4 tokens. Permuting input patches together with the
  // positional embedding must permute output tokens identically.
  EncoderConfig cfg{16, 8, 16, 2, 2, 4};
  Rng rng(5);
  auto params = EncoderParams<double>::init(cfg, rng, "enc");
  // Give the positional embedding distinct values so the test is not vacuous.
  {
    Rng prng(99);
    auto& pv = params.pos.mutable_values();
    for (auto& v : pv) v = prng.uniform(-0.5, 0.5);
  }

  auto img = random_image<double>(16, 7);
  auto base = encode(img, params, Provenance::source).tokens;

  // Permute the 2x2 patch grid: swap patches 0<->3 and 1<->2.
  const int perm[4] = {3, 2, 1, 0};
  auto tokens = ad::patchify(img, 8);
  std::vector<double> permuted(tokens.values().size());
  std::vector<double> pos_permuted(params.pos.values().size());
  for (int i = 0; i < 4; ++i) {
    std::copy_n(tokens.values().data() + static_cast<size_t>(perm[i]) * 192, 192,
                permuted.data() + static_cast<size_t>(i) * 192);
    std::copy_n(params.pos.values().data() + static_cast<size_t>(perm[i]) * 16, 16,
                pos_permuted.data() + static_cast<size_t>(i) * 16);
  }
  auto img_permuted = ad::unpatchify(Tensor<double>::from({4, 192}, permuted), 2, 2, 8, 3);
  auto saved_pos = params.pos.values();
  params.pos.mutable_values() = pos_permuted;
  auto out_permuted = encode(img_permuted, params, Provenance::source).tokens;
  params.pos.mutable_values() = saved_pos;

  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 16; ++j)
      REQUIRE(out_permuted.values()[static_cast<size_t>(i) * 16 + j] ==
              Catch::Approx(base.values()[static_cast<size_t>(perm[i]) * 16 + j]).margin(1e-9));
}

TEST_CASE("encoder gradient check on a micro configuration", "[gradcheck]") {
  EncoderConfig cfg{16, 8, 8, 1, 2, 2};
  Rng rng(11);
  auto params = EncoderParams<double>::init(cfg, rng, "enc");
  auto img = random_image<double>(16, 13);

  ParamList<double> list;
  params.collect(list, "enc");
  // Move every parameter off its (often symmetric) init point so no gradient
  // entry is structurally zero; near-zero gradients are where central
  // differences bottom out on cancellation noise.
  Rng cond(321);
  for (auto& [name, t] : list.items) {
    Rng s = cond.stream(name);
    for (auto& v : t.mutable_values()) v = s.uniform(-0.5, 0.5);
  }
  std::vector<Tensor<double>> tensors;
  for (auto& [name, t] : list.items) tensors.push_back(t);

  auto build = [&] {
    auto fm = encode(img, params, Provenance::source);
    return ad::mean_all(ad::square(fm.tokens));
  };
  REQUIRE(ad::grad_check(build, tensors) < 1e-4);
}
