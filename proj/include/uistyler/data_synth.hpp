#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "uistyler/errors.hpp"
#include "uistyler/image.hpp"
#include "uistyler/rng.hpp"

// Synthetic two-class, two-device ultrasound-like data. Benign lesions are
// smooth ellipses with a sharp boundary; malignant lesions are irregular
// star-shaped blobs whose boundary is Gaussian-blurred. Device appearance is
// a gamma -> brightness -> speckle -> blur chain on top of shared content.

namespace uistyler {

constexpr int kPatchSize = 8;

struct ImageSample {
  Image pixels;
  Mask mask;
  int label = 0;  // 0 = benign, 1 = malignant
  std::string domain;
};

struct DeviceStyle {
  float gamma = 1.f;
  float brightness = 0.f;
  float speckle = 0.f;
  float blur_radius = 0.f;
  uint64_t texture_seed = 0;

  void validate() const {
    if (!(gamma > 0.f)) throw ConfigError("DeviceStyle: gamma must be > 0");
    if (brightness < -0.3f || brightness > 0.3f)
      throw ConfigError("DeviceStyle: brightness offset outside [-0.3, 0.3]");
    if (speckle < 0.f) throw ConfigError("DeviceStyle: speckle strength must be >= 0");
    if (blur_radius < 0.f) throw ConfigError("DeviceStyle: blur radius must be >= 0");
  }

  static DeviceStyle identity() { return {}; }

  // Default presets with a strong but invertible gap, dominated by
  // gamma/brightness. preset_a plays the source device, preset_b the target.
  static DeviceStyle preset_a() { return {0.85f, -0.03f, 0.10f, 0.0f, 11}; }
  static DeviceStyle preset_b() { return {2.10f, 0.14f, 0.22f, 0.7f, 22}; }
};

namespace synth_detail {

inline void gaussian_blur_inplace(std::vector<float>& img, int h, int w, float sigma) {
  if (sigma <= 0.f) return;
  const int r = std::max(1, static_cast<int>(std::ceil(3.f * sigma)));
  std::vector<float> k(2 * r + 1);
  float sum = 0.f;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5f * i * i / (sigma * sigma));
    sum += k[i + r];
  }
  for (auto& v : k) v /= sum;

  std::vector<float> tmp(img.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -r; i <= r; ++i) {
        const int xx = std::clamp(x + i, 0, w - 1);
        acc += k[i + r] * img[static_cast<size_t>(y) * w + xx];
      }
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -r; i <= r; ++i) {
        const int yy = std::clamp(y + i, 0, h - 1);
        acc += k[i + r] * tmp[static_cast<size_t>(yy) * w + x];
      }
      img[static_cast<size_t>(y) * w + x] = acc;
    }
}

struct Content {
  std::vector<float> px;  // [0,1]
  Mask mask;
};

// Class-conditional content on a textured background. The lesion is darker
// than the background (hypoechoic), and the mask marks the lesion support
// before any boundary blurring or device styling.
inline Content make_content(int class_id, int size, Rng rng) {
  const int h = size, w = size;
  std::vector<float> px(static_cast<size_t>(h) * w, 0.f);

  Rng bg = rng.stream("background");
  // Smooth low-frequency field plus a mild depth falloff.
  float au[3], av[3], aph[3], aamp[3];
  for (int k = 0; k < 3; ++k) {
    au[k] = bg.uniform(0.5f, 2.5f);
    av[k] = bg.uniform(0.5f, 2.5f);
    aph[k] = bg.uniform(0.f, 6.2831853f);
    aamp[k] = bg.uniform(0.02f, 0.05f);
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float fy = static_cast<float>(y) / h, fx = static_cast<float>(x) / w;
      float v = 0.46f - 0.06f * fy;
      for (int k = 0; k < 3; ++k)
        v += aamp[k] * std::cos(6.2831853f * (au[k] * fx + av[k] * fy) + aph[k]);
      px[static_cast<size_t>(y) * w + x] = v;
    }

  Rng les = rng.stream("lesion");
  const float cx = les.uniform(0.38f, 0.62f) * w;
  const float cy = les.uniform(0.38f, 0.62f) * h;

  std::vector<float> alpha(px.size(), 0.f);
  Mask mask{h, w, std::vector<uint8_t>(px.size(), 0)};

  if (class_id == 0) {
    // Benign: rotated ellipse, hard boundary (~1px analytic anti-alias only).
    const float rx = les.uniform(0.13f, 0.20f) * w;
    const float ry = les.uniform(0.13f, 0.20f) * h;
    const float th = les.uniform(0.f, 3.1415926f);
    const float ct = std::cos(th), st = std::sin(th);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float dx = x + 0.5f - cx, dy = y + 0.5f - cy;
        const float u = (ct * dx + st * dy) / rx;
        const float v = (-st * dx + ct * dy) / ry;
        const float rho = std::sqrt(u * u + v * v);
        // Signed distance approximation in pixels.
        const float d = (rho - 1.f) * std::min(rx, ry);
        const float a = std::clamp(0.5f - d, 0.f, 1.f);  // ~1px ramp
        alpha[static_cast<size_t>(y) * w + x] = a;
        mask.px[static_cast<size_t>(y) * w + x] = rho <= 1.f ? 1 : 0;
      }
  } else {
    // Malignant: star-shaped radius profile with a blurred boundary.
    const float r0 = les.uniform(0.13f, 0.19f) * std::min(h, w);
    float amp[3], ph[3];
    const int harm[3] = {3, 5, 7};
    for (int k = 0; k < 3; ++k) {
      amp[k] = les.uniform(0.07f, 0.16f);
      ph[k] = les.uniform(0.f, 6.2831853f);
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float dx = x + 0.5f - cx, dy = y + 0.5f - cy;
        const float phi = std::atan2(dy, dx);
        float rb = 1.f;
        for (int k = 0; k < 3; ++k) rb += amp[k] * std::sin(harm[k] * phi + ph[k]);
        const float rad = r0 * rb;
        const float d = std::sqrt(dx * dx + dy * dy) - rad;
        const float a = std::clamp(0.5f - d, 0.f, 1.f);
        alpha[static_cast<size_t>(y) * w + x] = a;
        mask.px[static_cast<size_t>(y) * w + x] = d <= 0.f ? 1 : 0;
      }
    gaussian_blur_inplace(alpha, h, w, 2.2f);  // fuzzy class boundary
  }

  const float lesion_val = class_id == 0 ? 0.13f : 0.16f;
  for (size_t i = 0; i < px.size(); ++i) {
    px[i] = px[i] * (1.f - alpha[i]) + lesion_val * alpha[i];
    px[i] = std::clamp(px[i], 0.f, 1.f);
  }
  return {std::move(px), std::move(mask)};
}

inline void apply_style(std::vector<float>& px, int h, int w, const DeviceStyle& style, Rng rng) {
  style.validate();
  if (style.gamma != 1.f)
    for (auto& v : px) v = std::pow(v, style.gamma);
  if (style.brightness != 0.f)
    for (auto& v : px) v = std::clamp(v + style.brightness, 0.f, 1.f);
  if (style.speckle > 0.f) {
    Rng sp = rng.stream("speckle-" + std::to_string(style.texture_seed));
    for (auto& v : px) v = std::clamp(v * (1.f + style.speckle * sp.normal<float>()), 0.f, 1.f);
  }
  if (style.blur_radius > 0.f) gaussian_blur_inplace(px, h, w, style.blur_radius);
  for (auto& v : px) v = std::clamp(v, 0.f, 1.f);
}

}  // namespace synth_detail

inline ImageSample generate_sample(int class_id, const DeviceStyle& style, int size, Rng rng,
                                   std::string domain = "device") {
  if (class_id != 0 && class_id != 1) throw ConfigError("generate_sample: class_id must be 0 or 1");
  if (size <= 0 || size % kPatchSize != 0)
    throw ConfigError("generate_sample: size " + std::to_string(size) + " not divisible by patch " +
                      std::to_string(kPatchSize));
  auto content = synth_detail::make_content(class_id, size, rng.stream("content"));
  synth_detail::apply_style(content.px, size, size, style, rng.stream("style"));
  ImageSample s;
  s.pixels = Image{size, size, std::move(content.px)};
  s.mask = std::move(content.mask);
  s.label = class_id;
  s.domain = std::move(domain);
  return s;
}

// Mean absolute gradient magnitude in a band around the mask boundary; the
// statistic that separates sharp benign boundaries from blurred malignant
// ones.
inline double boundary_sharpness(const ImageSample& s) {
  const int h = s.pixels.h, w = s.pixels.w;
  double acc = 0.0;
  long count = 0;
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      // Boundary band: mask pixels adjacent to background or vice versa,
      // dilated by one.
      bool band = false;
      const uint8_t m = s.mask.at(y, x);
      for (int dy = -2; dy <= 2 && !band; ++dy)
        for (int dx = -2; dx <= 2 && !band; ++dx) {
          const int yy = std::clamp(y + dy, 0, h - 1), xx = std::clamp(x + dx, 0, w - 1);
          if (s.mask.at(yy, xx) != m) band = true;
        }
      if (!band) continue;
      const double gx = 0.5 * (s.pixels.at(y, x + 1) - s.pixels.at(y, x - 1));
      const double gy = 0.5 * (s.pixels.at(y + 1, x) - s.pixels.at(y - 1, x));
      acc += std::sqrt(gx * gx + gy * gy);
      ++count;
    }
  return count ? acc / count : 0.0;
}

// ---------------------------------------------------------------------------
// Dataset on disk: PGM images/masks plus a CSV manifest.
// ---------------------------------------------------------------------------

struct ManifestRow {
  std::string path;
  int label = 0;
  std::string domain;
  std::string mask_path;
  std::string split;  // "train" or "test"
};

struct Manifest {
  std::string base_dir;  // directory containing the manifest file
  std::vector<ManifestRow> rows;
};

struct DomainSpec {
  std::string name;
  DeviceStyle style;
  int count = 200;
};

struct SynthConfig {
  int size = 64;
  double class_balance = 0.5;
  double train_fraction = 0.7;
  uint64_t seed = 0;
  std::vector<DomainSpec> domains;
};

struct DatasetEntry {
  ImageSample sample;
  std::string split;
  std::string path;
};

struct Dataset {
  std::vector<DatasetEntry> entries;

  std::vector<const ImageSample*> split(const std::string& which) const {
    std::vector<const ImageSample*> out;
    for (const auto& e : entries)
      if (e.split == which) out.push_back(&e.sample);
    return out;
  }
  std::vector<const ImageSample*> train() const { return split("train"); }
  std::vector<const ImageSample*> test() const { return split("test"); }

  std::string domain() const { return entries.empty() ? std::string{} : entries.front().sample.domain; }
};

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("manifest: cannot open for write: " + path);
  f << "path,label,domain,mask_path,split\n";
  for (const auto& r : m.rows)
    f << r.path << "," << r.label << "," << r.domain << "," << r.mask_path << "," << r.split << "\n";
  if (!f) throw IoError("manifest: write failed: " + path);
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("manifest: cannot open: " + path);
  Manifest m;
  m.base_dir = std::filesystem::path(path).parent_path().string();
  std::string line;
  if (!std::getline(f, line)) return m;  // empty manifest: empty dataset
  if (line != "path,label,domain,mask_path,split")
    throw ParseError("manifest: bad header in " + path + ": " + line);
  size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() != 5)
      throw ParseError("manifest: expected 5 columns at line " + std::to_string(lineno) + " in " + path);
    ManifestRow r;
    r.path = cols[0];
    try {
      r.label = std::stoi(cols[1]);
    } catch (...) {
      throw ParseError("manifest: bad label at line " + std::to_string(lineno) + " in " + path);
    }
    r.domain = cols[2];
    r.mask_path = cols[3];
    r.split = cols[4];
    if (r.split != "train" && r.split != "test")
      throw ParseError("manifest: bad split '" + r.split + "' at line " + std::to_string(lineno));
    m.rows.push_back(std::move(r));
  }
  return m;
}

// Generates one manifest per domain: <out_dir>/<domain>_manifest.csv with
// images under <out_dir>/images and masks under <out_dir>/masks. Counts and
// class balance are honored exactly; the split fraction is rounded per
// domain.
inline std::vector<std::string> generate_dataset(const SynthConfig& cfg, const std::string& out_dir) {
  if (cfg.domains.empty()) throw ConfigError("generate_dataset: no domains configured");
  if (cfg.class_balance < 0.0 || cfg.class_balance > 1.0)
    throw ConfigError("generate_dataset: class balance outside [0,1]");
  if (cfg.train_fraction < 0.0 || cfg.train_fraction > 1.0)
    throw ConfigError("generate_dataset: train fraction outside [0,1]");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  fs::create_directories(fs::path(out_dir) / "masks", ec);
  if (!fs::exists(fs::path(out_dir) / "images") || !fs::exists(fs::path(out_dir) / "masks"))
    throw IoError("generate_dataset: cannot create output directories under " + out_dir);

  Rng root(cfg.seed);
  std::vector<std::string> manifest_paths;
  for (const auto& dom : cfg.domains) {
    dom.style.validate();
    const int n = dom.count;
    const int n_pos = static_cast<int>(std::lround(cfg.class_balance * n));
    std::vector<int> labels(n, 0);
    for (int i = 0; i < n_pos; ++i) labels[i] = 1;
    // Deterministic shuffle so splits stay class-mixed.
    Rng sh = root.stream("shuffle-" + dom.name);
    for (int i = n - 1; i > 0; --i)
      std::swap(labels[i], labels[sh.below(static_cast<uint64_t>(i) + 1)]);

    const int n_train = static_cast<int>(std::lround(cfg.train_fraction * n));
    Manifest m;
    for (int i = 0; i < n; ++i) {
      Rng srng = root.stream(dom.name + "-sample-" + std::to_string(i));
      ImageSample s = generate_sample(labels[i], dom.style, cfg.size, srng, dom.name);
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04d.pgm", dom.name.c_str(), i);
      const std::string img_rel = std::string("images/") + name;
      const std::string mask_rel = std::string("masks/") + name;
      write_image_pgm((fs::path(out_dir) / img_rel).string(), s.pixels);
      write_mask_pgm((fs::path(out_dir) / mask_rel).string(), s.mask);
      m.rows.push_back({img_rel, s.label, dom.name, mask_rel, i < n_train ? "train" : "test"});
    }
    const std::string mpath = (fs::path(out_dir) / (dom.name + "_manifest.csv")).string();
    write_manifest(mpath, m);
    manifest_paths.push_back(mpath);
  }
  return manifest_paths;
}

inline Dataset load_dataset(const std::string& manifest_path) {
  Manifest m = read_manifest(manifest_path);
  namespace fs = std::filesystem;
  Dataset ds;
  for (const auto& r : m.rows) {
    const std::string img_path = (fs::path(m.base_dir) / r.path).string();
    const std::string mask_path = (fs::path(m.base_dir) / r.mask_path).string();
    if (!fs::exists(img_path)) throw IoError("load_dataset: missing image file: " + img_path);
    if (!fs::exists(mask_path)) throw IoError("load_dataset: missing mask file: " + mask_path);
    DatasetEntry e;
    e.sample.pixels = read_image_pgm(img_path);
    e.sample.mask = read_mask_pgm(mask_path);
    e.sample.label = r.label;
    e.sample.domain = r.domain;
    e.split = r.split;
    e.path = r.path;
    ds.entries.push_back(std::move(e));
  }
  return ds;
}

// Union of several manifests (multi-source training is configuration-only).
inline Dataset load_dataset_union(const std::vector<std::string>& manifest_paths) {
  Dataset all;
  for (const auto& p : manifest_paths) {
    Dataset d = load_dataset(p);
    for (auto& e : d.entries) all.entries.push_back(std::move(e));
  }
  return all;
}

}  // namespace uistyler
