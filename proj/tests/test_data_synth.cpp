#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "uistyler/data_synth.hpp"

using namespace uistyler;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("uistyler_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("generate_sample: contracts and determinism") {
  SECTION("identity style reproduces content exactly") {
    Rng rng(5);
    auto styled = generate_sample(0, DeviceStyle::identity(), 64, rng);
    auto plain = generate_sample(0, DeviceStyle::identity(), 64, rng);
    REQUIRE(styled.pixels.px == plain.pixels.px);

    // Identity chain must not perturb values: compare against content built
    // through a gamma=1/offset=0/speckle=0/blur=0 style alias.
    DeviceStyle s;
    s.gamma = 1.f;
    auto again = generate_sample(0, s, 64, rng);
    REQUIRE(again.pixels.px == styled.pixels.px);
  }

  SECTION("same seed twice gives identical samples") {
    auto a = generate_sample(1, DeviceStyle::preset_b(), 64, Rng(9));
    auto b = generate_sample(1, DeviceStyle::preset_b(), 64, Rng(9));
    REQUIRE(a.pixels.px == b.pixels.px);
    REQUIRE(a.mask.px == b.mask.px);
  }

  SECTION("size not divisible by patch") {
    REQUIRE_THROWS_AS(generate_sample(0, DeviceStyle::identity(), 60, Rng(0)), ConfigError);
  }

  SECTION("masks are filled and in range") {
    for (uint64_t seed = 0; seed < 8; ++seed) {
      for (int cls = 0; cls < 2; ++cls) {
        auto s = generate_sample(cls, DeviceStyle::preset_a(), 64, Rng(seed));
        REQUIRE(s.mask.area() > 0);
        for (float v : s.pixels.px) {
          REQUIRE(v >= 0.f);
          REQUIRE(v <= 1.f);
        }
        for (auto m : s.mask.px) REQUIRE((m == 0 || m == 1));
      }
    }
  }

  SECTION("benign boundary is sharper than malignant on matched seeds") {
    for (uint64_t seed = 0; seed < 6; ++seed) {
      auto benign = generate_sample(0, DeviceStyle::preset_a(), 64, Rng(seed));
      auto malignant = generate_sample(1, DeviceStyle::preset_a(), 64, Rng(seed));
      REQUIRE(boundary_sharpness(benign) > boundary_sharpness(malignant));
    }
  }
}

TEST_CASE("class-separability oracle: boundary sharpness splits classes", "[slow]") {
  // A single threshold on the sharpness statistic must reach >= 90% accuracy
  // on 200 samples per class; this guarantees the synthetic task is learnable.
  for (const auto& style : {DeviceStyle::preset_a(), DeviceStyle::preset_b()}) {
    std::vector<double> stat_benign, stat_malignant;
    for (int i = 0; i < 200; ++i) {
      stat_benign.push_back(boundary_sharpness(generate_sample(0, style, 64, Rng(1000 + i))));
      stat_malignant.push_back(boundary_sharpness(generate_sample(1, style, 64, Rng(1000 + i))));
    }
    // Best threshold by exhaustive scan over observed values.
    std::vector<double> all = stat_benign;
    all.insert(all.end(), stat_malignant.begin(), stat_malignant.end());
    std::sort(all.begin(), all.end());
    int best = 0;
    for (double th : all) {
      int correct = 0;
      for (double v : stat_benign) correct += v > th ? 1 : 0;
      for (double v : stat_malignant) correct += v <= th ? 1 : 0;
      best = std::max(best, correct);
    }
    const double acc = best / 400.0;
    INFO("gamma=" << style.gamma << " acc=" << acc);
    REQUIRE(acc >= 0.90);
  }
}

TEST_CASE("default presets give a mean-intensity gap >= 0.1 on identical content") {
  double gap_sum = 0.0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto a = generate_sample(seed % 2, DeviceStyle::preset_a(), 64, Rng(seed));
    auto b = generate_sample(seed % 2, DeviceStyle::preset_b(), 64, Rng(seed));
    double ma = 0, mb = 0;
    for (float v : a.pixels.px) ma += v;
    for (float v : b.pixels.px) mb += v;
    gap_sum += std::abs(ma - mb) / a.pixels.px.size();
  }
  REQUIRE(gap_sum / 10.0 >= 0.1);
}

TEST_CASE("generate_dataset: counts, balance, split, round trip") {
  auto dir = temp_dir("gen");
  SynthConfig cfg;
  cfg.seed = 3;
  cfg.domains = {{"deviceA", DeviceStyle::preset_a(), 100}};
  auto manifests = generate_dataset(cfg, dir.string());
  REQUIRE(manifests.size() == 1);

  Dataset ds = load_dataset(manifests[0]);
  REQUIRE(ds.entries.size() == 100);

  int pos = 0, train_count = 0;
  for (const auto& e : ds.entries) {
    pos += e.sample.label;
    train_count += e.split == "train" ? 1 : 0;
  }
  REQUIRE(pos == 50);
  REQUIRE(train_count == 70);
  REQUIRE(ds.test().size() == 30);
}

TEST_CASE("dataset round trip is exact to 8-bit quantization") {
  auto dir = temp_dir("roundtrip");
  auto s = generate_sample(1, DeviceStyle::preset_b(), 64, Rng(17));
  write_image_pgm((dir / "img.pgm").string(), s.pixels);
  auto back = read_image_pgm((dir / "img.pgm").string());
  REQUIRE(back.h == 64);
  float max_diff = 0.f;
  for (size_t i = 0; i < back.px.size(); ++i)
    max_diff = std::max(max_diff, std::abs(back.px[i] - s.pixels.px[i]));
  REQUIRE(max_diff <= 1.f / 255.f + 1e-6f);

  write_mask_pgm((dir / "mask.pgm").string(), s.mask);
  REQUIRE(read_mask_pgm((dir / "mask.pgm").string()).px == s.mask.px);
}

TEST_CASE("load_dataset error contracts") {
  auto dir = temp_dir("errors");

  SECTION("missing mask file named in the error") {
    std::ofstream f(dir / "manifest.csv");
    f << "path,label,domain,mask_path,split\n";
    f << "images/a.pgm,0,deviceA,masks/a.pgm,train\n";
    f.close();
    fs::create_directories(dir / "images");
    write_image_pgm((dir / "images/a.pgm").string(), Image::filled(8, 8, 0.5f));
    try {
      load_dataset((dir / "manifest.csv").string());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      REQUIRE(std::string(e.what()).find("masks/a.pgm") != std::string::npos);
    }
  }

  SECTION("empty manifest loads as empty dataset") {
    std::ofstream f(dir / "empty.csv");
    f << "path,label,domain,mask_path,split\n";
    f.close();
    REQUIRE(load_dataset((dir / "empty.csv").string()).entries.empty());
  }

  SECTION("malformed PGM reports a byte offset") {
    std::ofstream f(dir / "bad.pgm", std::ios::binary);
    f << "P5\n8 8\n255\n";
    f << "short";  // truncated payload
    f.close();
    try {
      read_image_pgm((dir / "bad.pgm").string());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      REQUIRE(std::string(e.what()).find("byte") != std::string::npos);
    }
  }

  SECTION("non-PGM file rejected") {
    std::ofstream f(dir / "nope.pgm", std::ios::binary);
    f << "JUNK";
    f.close();
    REQUIRE_THROWS_AS(read_image_pgm((dir / "nope.pgm").string()), ParseError);
  }
}
