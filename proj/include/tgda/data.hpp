#pragma once

#include <filesystem>
#include <fstream>

#include "tgda/image.hpp"
#include "tgda/rng.hpp"

#include "json.hpp"

namespace tgda::data {

namespace fs = std::filesystem;
using img::Image;

struct SampleRef {
  std::string path;  // relative to the dataset root
  int class_index = 0;
  std::string split;  // train | val | test
};

struct DatasetManifest {
  std::string root;
  std::vector<std::string> classes;
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stddev{0.25f, 0.25f, 0.25f};
  int64_t image_size = 64;
  std::vector<SampleRef> samples;

  std::vector<int64_t> split_indices(const std::string& split) const {
    std::vector<int64_t> idx;
    for (size_t i = 0; i < samples.size(); ++i)
      if (samples[i].split == split) idx.push_back(static_cast<int64_t>(i));
    return idx;
  }

  void validate() const {
    check(!classes.empty(), ErrorKind::kData, "manifest: no classes");
    for (const auto& s : samples)
      check(s.class_index >= 0 && s.class_index < static_cast<int>(classes.size()),
            ErrorKind::kData, "manifest: class index out of range for " + s.path);
  }
};

// Cue-driven synthetic fine-grained dataset. Classes share the background
// texture distribution and differ only in small localized glyph cues; the
// similarity knob interpolates the per-class glyph pattern and cue color
// toward shared prototypes, so high similarity leaves only fine pattern
// structure as a class signal.
struct SyntheticSpec {
  int64_t num_classes = 10;
  int64_t train_per_class = 20;
  int64_t val_per_class = 10;
  int64_t test_per_class = 20;
  int64_t image_size = 64;
  std::string background = "blotch";
  int64_t cue_size = 12;
  int64_t cue_count = 3;
  double similarity = 0.7;
  uint64_t seed = 1;

  void validate() const {
    check(num_classes >= 2, ErrorKind::kConfig, "synthetic: need at least 2 classes");
    check(cue_size >= 4 && cue_size < image_size / 4, ErrorKind::kConfig,
          "synthetic: cue size must satisfy 4 <= cue < image_size/4");
    check(cue_count >= 1, ErrorKind::kConfig, "synthetic: cue count must be positive");
    check(similarity >= 0.0 && similarity <= 1.0, ErrorKind::kConfig,
          "synthetic: similarity in [0,1]");
    check(train_per_class >= 1 && val_per_class >= 1 && test_per_class >= 1, ErrorKind::kConfig,
          "synthetic: per-split counts must be positive");
    check(image_size >= 32, ErrorKind::kConfig, "synthetic: image size too small");
  }
};

namespace detail {

constexpr int kGlyphGrid = 5;

inline void hsv_to_rgb(double h, double s, double v, float rgb[3]) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  rgb[0] = static_cast<float>(r + m);
  rgb[1] = static_cast<float>(g + m);
  rgb[2] = static_cast<float>(b + m);
}

struct ClassSignature {
  std::array<uint8_t, kGlyphGrid * kGlyphGrid> pattern;
  double hue;
};

// Per-class glyphs: each cell copies a shared master pattern with probability
// `similarity`, otherwise a class-specific bit. Identical glyph collisions
// are broken deterministically.
inline std::vector<ClassSignature> make_signatures(const SyntheticSpec& spec) {
  RngStream root(spec.seed);
  RngStream master_rng = root.derive(1);
  std::array<uint8_t, kGlyphGrid * kGlyphGrid> master;
  for (auto& c : master) c = master_rng.bernoulli(0.5) ? 1 : 0;
  const double shared_hue = master_rng.next_double();

  std::vector<ClassSignature> sigs(static_cast<size_t>(spec.num_classes));
  for (int64_t k = 0; k < spec.num_classes; ++k) {
    RngStream crng = root.derive(2, static_cast<uint64_t>(k));
    auto& sig = sigs[static_cast<size_t>(k)];
    for (int i = 0; i < kGlyphGrid * kGlyphGrid; ++i) {
      const uint8_t own = crng.bernoulli(0.5) ? 1 : 0;
      sig.pattern[static_cast<size_t>(i)] =
          crng.bernoulli(spec.similarity) ? master[static_cast<size_t>(i)] : own;
    }
    // class hues sit evenly on the color wheel and collapse onto the shared
    // hue as similarity grows, so color is a strong signal only when the
    // classes are dissimilar
    const double own_hue =
        std::fmod(shared_hue + static_cast<double>(k) / static_cast<double>(spec.num_classes), 1.0);
    double d = own_hue - shared_hue;
    if (d > 0.5) d -= 1.0;
    if (d < -0.5) d += 1.0;
    sig.hue = shared_hue + d * (1.0 - spec.similarity);
  }
  // break exact glyph collisions
  for (int64_t a = 0; a < spec.num_classes; ++a)
    for (int64_t b = a + 1; b < spec.num_classes; ++b) {
      auto& pa = sigs[static_cast<size_t>(a)].pattern;
      auto& pb = sigs[static_cast<size_t>(b)].pattern;
      if (pa == pb) {
        const size_t cell = static_cast<size_t>((a * 7 + b * 13) % (kGlyphGrid * kGlyphGrid));
        pb[cell] ^= 1;
      }
    }
  return sigs;
}

inline Image render_image(const SyntheticSpec& spec, const ClassSignature& sig, RngStream rng) {
  const int64_t n = spec.image_size;
  Image im(Shape{3, n, n});
  // shared blotchy background: low-frequency cosine mixture on a base color
  float base_rgb[3];
  hsv_to_rgb(rng.next_double(), 0.15 + 0.15 * rng.next_double(), 0.5 + 0.12 * rng.next_double(),
             base_rgb);
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<Wave, 3> waves;
  for (auto& wv : waves)
    wv = {rng.uniform(0.5, 2.5) / static_cast<double>(n), rng.uniform(0.5, 2.5) / static_cast<double>(n),
          rng.uniform(0.0, 6.283185307), rng.uniform(0.03, 0.08)};
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x) {
      double tex = 0.0;
      for (const auto& wv : waves)
        tex += wv.amp * std::cos(6.283185307 * (wv.fx * x + wv.fy * y) + wv.phase);
      for (int64_t c = 0; c < 3; ++c) {
        double v = base_rgb[c] + tex + rng.uniform(-0.02, 0.02);
        im.at((c * n + y) * n + x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  // cues: the class glyph stamped at random positions with slight size and
  // contrast jitter; cue color interpolates toward the shared hue with
  // similarity, so global color statistics stay uninformative when similar
  for (int64_t cue = 0; cue < spec.cue_count; ++cue) {
    const auto px = static_cast<int64_t>(std::llround(
        static_cast<double>(spec.cue_size) * rng.uniform(0.85, 1.15)));
    const int64_t span = std::min<int64_t>(px, n - 2);
    const int64_t top = 1 + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n - span - 1)));
    const int64_t left = 1 + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n - span - 1)));
    float cue_rgb[3];
    hsv_to_rgb(sig.hue + rng.uniform(-0.02, 0.02), 0.8, 0.9, cue_rgb);
    const double blend = rng.uniform(0.9, 1.0);
    for (int64_t y = 0; y < span; ++y)
      for (int64_t x = 0; x < span; ++x) {
        const int gy = static_cast<int>(y * kGlyphGrid / span);
        const int gx = static_cast<int>(x * kGlyphGrid / span);
        if (!sig.pattern[static_cast<size_t>(gy * kGlyphGrid + gx)]) continue;
        for (int64_t c = 0; c < 3; ++c) {
          float& p = im.at((c * n + top + y) * n + left + x);
          p = static_cast<float>((1.0 - blend) * p + blend * cue_rgb[c]);
        }
      }
  }
  return im;
}

// statistics are taken over the 8-bit values the PNG actually stores
inline void accumulate_mean_std(const Image& im, std::array<double, 3>& sum,
                                std::array<double, 3>& sq, int64_t& count) {
  const int64_t hw = im.shape()[1] * im.shape()[2];
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < hw; ++i) {
      const float raw = std::clamp(im.at(c * hw + i), 0.0f, 1.0f);
      const double v = std::floor(raw * 255.0f + 0.5f) / 255.0;
      sum[static_cast<size_t>(c)] += v;
      sq[static_cast<size_t>(c)] += v * v;
    }
  count += hw;
}

}  // namespace detail

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
  nlohmann::json j;
  j["classes"] = m.classes;
  j["mean"] = m.mean;
  j["std"] = m.stddev;
  j["image_size"] = m.image_size;
  auto samples = nlohmann::json::array();
  for (const auto& s : m.samples)
    samples.push_back({{"path", s.path}, {"class", s.class_index}, {"split", s.split}});
  j["samples"] = samples;
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorKind::kData, "cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

inline DatasetManifest read_manifest(const std::string& root, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorKind::kData, "cannot read manifest: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, "malformed manifest json: " + std::string(e.what()));
  }
  DatasetManifest m;
  m.root = root;
  m.classes = j.at("classes").get<std::vector<std::string>>();
  auto mean = j.at("mean").get<std::vector<float>>();
  auto stddev = j.at("std").get<std::vector<float>>();
  check(mean.size() == 3 && stddev.size() == 3, ErrorKind::kData, "manifest: mean/std must be [3]");
  std::copy(mean.begin(), mean.end(), m.mean.begin());
  std::copy(stddev.begin(), stddev.end(), m.stddev.begin());
  m.image_size = j.at("image_size").get<int64_t>();
  for (const auto& s : j.at("samples")) {
    m.samples.push_back(
        {s.at("path").get<std::string>(), s.at("class").get<int>(), s.at("split").get<std::string>()});
  }
  m.validate();
  return m;
}

// Generates the synthetic benchmark on disk (PNG images + manifest.json) and
// returns its manifest. Fully determined by the spec.
inline DatasetManifest generate_synthetic_fgir(const SyntheticSpec& spec, const std::string& root) {
  spec.validate();
  const auto sigs = detail::make_signatures(spec);
  DatasetManifest m;
  m.root = root;
  m.image_size = spec.image_size;
  for (int64_t k = 0; k < spec.num_classes; ++k) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "class_%02d", static_cast<int>(k));
    m.classes.emplace_back(buf);
  }
  const std::array<std::pair<std::string, int64_t>, 3> splits{
      {{"train", spec.train_per_class}, {"val", spec.val_per_class}, {"test", spec.test_per_class}}};
  RngStream root_rng(spec.seed);
  std::array<double, 3> sum{0, 0, 0}, sq{0, 0, 0};
  int64_t count = 0;
  std::error_code ec;
  for (const auto& [split, per_class] : splits) {
    for (int64_t k = 0; k < spec.num_classes; ++k) {
      const fs::path dir = fs::path(root) / split / m.classes[static_cast<size_t>(k)];
      fs::create_directories(dir, ec);
      check(!ec, ErrorKind::kData, "cannot create dataset directory: " + dir.string());
      for (int64_t i = 0; i < per_class; ++i) {
        const uint64_t split_tag = split == "train" ? 10 : (split == "val" ? 11 : 12);
        Image im = detail::render_image(
            spec, sigs[static_cast<size_t>(k)],
            root_rng.derive(split_tag, static_cast<uint64_t>(k), static_cast<uint64_t>(i)));
        char name[32];
        std::snprintf(name, sizeof(name), "img_%04d.png", static_cast<int>(i));
        const fs::path rel = fs::path(split) / m.classes[static_cast<size_t>(k)] / name;
        img::encode_png((fs::path(root) / rel).string(), im);
        m.samples.push_back({rel.generic_string(), static_cast<int>(k), split});
        if (split == "train") detail::accumulate_mean_std(im, sum, sq, count);
      }
    }
  }
  for (int64_t c = 0; c < 3; ++c) {
    const double mean = sum[static_cast<size_t>(c)] / static_cast<double>(count);
    const double var = sq[static_cast<size_t>(c)] / static_cast<double>(count) - mean * mean;
    m.mean[static_cast<size_t>(c)] = static_cast<float>(mean);
    m.stddev[static_cast<size_t>(c)] = static_cast<float>(std::sqrt(std::max(var, 1e-12)));
  }
  write_manifest(m, (fs::path(root) / "manifest.json").string());
  return m;
}

// Loads a dataset root: manifest.json when present, otherwise a lexicographic
// scan of split/class/image directories. Channel statistics come from the
// manifest or are computed over the train split.
inline DatasetManifest load_image_folder(const std::string& root) {
  const fs::path manifest_path = fs::path(root) / "manifest.json";
  if (fs::exists(manifest_path)) {
    DatasetManifest m = read_manifest(root, manifest_path.string());
    for (const auto& s : m.samples)
      check(fs::exists(fs::path(root) / s.path), ErrorKind::kData,
            "manifest references a missing file: " + s.path);
    return m;
  }
  DatasetManifest m;
  m.root = root;
  check(fs::is_directory(fs::path(root) / "train"), ErrorKind::kData,
        "dataset root has neither manifest.json nor a train/ directory: " + root);
  std::vector<std::string> classes;
  for (const auto& e : fs::directory_iterator(fs::path(root) / "train"))
    if (e.is_directory()) classes.push_back(e.path().filename().string());
  std::sort(classes.begin(), classes.end());
  check(!classes.empty(), ErrorKind::kData, "train split has no class directories");
  m.classes = classes;

  auto is_image = [](const fs::path& p) {
    const auto ext = p.extension().string();
    return ext == ".png" || ext == ".rawf";
  };
  for (const std::string split : {"train", "val", "test"}) {
    const fs::path sdir = fs::path(root) / split;
    if (!fs::is_directory(sdir)) continue;
    for (size_t k = 0; k < classes.size(); ++k) {
      const fs::path cdir = sdir / classes[k];
      if (!fs::is_directory(cdir)) continue;
      std::vector<std::string> files;
      for (const auto& e : fs::directory_iterator(cdir))
        if (e.is_regular_file() && is_image(e.path())) files.push_back(e.path().filename().string());
      check(!files.empty(), ErrorKind::kData, "empty class directory: " + cdir.string());
      std::sort(files.begin(), files.end());
      for (const auto& f : files)
        m.samples.push_back({(fs::path(split) / classes[k] / f).generic_string(),
                             static_cast<int>(k), split});
    }
  }
  // image size from the first sample; statistics over the train split
  check(!m.samples.empty(), ErrorKind::kData, "dataset is empty: " + root);
  Image first = img::load_image((fs::path(root) / m.samples[0].path).string());
  m.image_size = first.shape()[1];
  std::array<double, 3> sum{0, 0, 0}, sq{0, 0, 0};
  int64_t count = 0;
  for (const auto& s : m.samples) {
    if (s.split != "train") continue;
    Image im = img::load_image((fs::path(root) / s.path).string());
    detail::accumulate_mean_std(im, sum, sq, count);
  }
  check(count > 0, ErrorKind::kData, "train split is empty: " + root);
  for (int64_t c = 0; c < 3; ++c) {
    const double mean = sum[static_cast<size_t>(c)] / static_cast<double>(count);
    const double var = sq[static_cast<size_t>(c)] / static_cast<double>(count) - mean * mean;
    m.mean[static_cast<size_t>(c)] = static_cast<float>(mean);
    m.stddev[static_cast<size_t>(c)] = static_cast<float>(std::sqrt(std::max(var, 1e-12)));
  }
  return m;
}

// In-memory dataset: decoded images plus labels, indexed like the manifest.
struct Dataset {
  DatasetManifest manifest;
  std::vector<Image> images;  // aligned with manifest.samples
  std::vector<int> labels;

  int64_t num_classes() const { return static_cast<int64_t>(manifest.classes.size()); }
};

inline Dataset load_dataset(const std::string& root) {
  Dataset d;
  d.manifest = load_image_folder(root);
  d.images.reserve(d.manifest.samples.size());
  for (const auto& s : d.manifest.samples) {
    Image im = img::load_image((fs::path(root) / s.path).string());
    check(im.shape()[1] == d.manifest.image_size && im.shape()[2] == d.manifest.image_size,
          ErrorKind::kData, "image size mismatch for " + s.path);
    d.images.push_back(std::move(im));
    d.labels.push_back(s.class_index);
  }
  return d;
}

// Deterministic epoch batching: the train split is shuffled by (seed, epoch),
// eval splits keep manifest order; the last partial batch is kept.
inline std::vector<std::vector<int64_t>> make_batches(const DatasetManifest& manifest,
                                                      const std::string& split,
                                                      int64_t batch_size, int64_t epoch,
                                                      uint64_t seed) {
  check(batch_size >= 1, ErrorKind::kConfig, "make_batches: batch_size must be >= 1");
  std::vector<int64_t> idx = manifest.split_indices(split);
  check(!idx.empty(), ErrorKind::kData, "make_batches: split '" + split + "' is empty");
  if (split == "train") {
    RngStream rng = RngStream(seed).derive(0xBA7C4, static_cast<uint64_t>(epoch));
    for (int64_t i = static_cast<int64_t>(idx.size()) - 1; i > 0; --i) {
      const auto j = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(i + 1)));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
  }
  std::vector<std::vector<int64_t>> batches;
  for (size_t i = 0; i < idx.size(); i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(idx.size(), i + static_cast<size_t>(batch_size));
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace tgda::data
