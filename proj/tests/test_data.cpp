#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "tgda/data.hpp"

using namespace tgda;
using namespace tgda::data;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("tgda_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

uint64_t hash_tree(const std::string& root) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    h = fnv1a(bytes.data(), bytes.size(), h);
  }
  return h;
}

// test-only linear probe on raw pixels: dual ridge regression with targets
// ±1, solved in closed form over the train gram matrix
double linear_probe_acc(const Dataset& d) {
  const auto train = d.manifest.split_indices("train");
  const auto val = d.manifest.split_indices("val");
  const int64_t dim = 3 * d.manifest.image_size * d.manifest.image_size;
  const size_t n = train.size();
  std::vector<double> gram(n * n, 0.0);
  for (size_t a = 0; a < n; ++a)
    for (size_t b = a; b < n; ++b) {
      const auto& ia = d.images[static_cast<size_t>(train[a])];
      const auto& ib = d.images[static_cast<size_t>(train[b])];
      double dot = 0;
      for (int64_t j = 0; j < dim; ++j) dot += ia.at(j) * ib.at(j);
      gram[a * n + b] = gram[b * n + a] = dot;
    }
  std::vector<double> rhs(n);
  for (size_t a = 0; a < n; ++a)
    rhs[a] = d.labels[static_cast<size_t>(train[a])] == 1 ? 1.0 : -1.0;
  const double lambda = 1e-2 * static_cast<double>(dim);
  for (size_t a = 0; a < n; ++a) gram[a * n + a] += lambda;
  // gaussian elimination with partial pivoting
  std::vector<double> alpha = rhs;
  for (size_t col = 0; col < n; ++col) {
    size_t piv = col;
    for (size_t r = col + 1; r < n; ++r)
      if (std::abs(gram[r * n + col]) > std::abs(gram[piv * n + col])) piv = r;
    for (size_t j = 0; j < n; ++j) std::swap(gram[col * n + j], gram[piv * n + j]);
    std::swap(alpha[col], alpha[piv]);
    for (size_t r = col + 1; r < n; ++r) {
      const double f = gram[r * n + col] / gram[col * n + col];
      for (size_t j = col; j < n; ++j) gram[r * n + j] -= f * gram[col * n + j];
      alpha[r] -= f * alpha[col];
    }
  }
  for (size_t col = n; col-- > 0;) {
    for (size_t j = col + 1; j < n; ++j) alpha[col] -= gram[col * n + j] * alpha[j];
    alpha[col] /= gram[col * n + col];
  }
  int correct = 0;
  for (int64_t i : val) {
    const auto& im = d.images[static_cast<size_t>(i)];
    double score = 0;
    for (size_t a = 0; a < n; ++a) {
      const auto& ia = d.images[static_cast<size_t>(train[a])];
      double dot = 0;
      for (int64_t j = 0; j < dim; ++j) dot += ia.at(j) * im.at(j);
      score += alpha[a] * dot;
    }
    const int pred = score > 0 ? 1 : 0;
    if (pred == d.labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(val.size());
}

// nearest-centroid classifier on global mean color
double color_probe_acc(const Dataset& d) {
  const auto train = d.manifest.split_indices("train");
  const auto val = d.manifest.split_indices("val");
  const int64_t hw = d.manifest.image_size * d.manifest.image_size;
  const auto classes = d.num_classes();
  std::vector<std::array<double, 3>> centroids(static_cast<size_t>(classes), {0, 0, 0});
  std::vector<int> counts(static_cast<size_t>(classes), 0);
  auto mean_color = [&](const img::Image& im) {
    std::array<double, 3> m{0, 0, 0};
    for (int64_t c = 0; c < 3; ++c) {
      for (int64_t i = 0; i < hw; ++i) m[static_cast<size_t>(c)] += im.at(c * hw + i);
      m[static_cast<size_t>(c)] /= static_cast<double>(hw);
    }
    return m;
  };
  for (int64_t i : train) {
    const auto m = mean_color(d.images[static_cast<size_t>(i)]);
    auto& ctr = centroids[static_cast<size_t>(d.labels[static_cast<size_t>(i)])];
    for (int c = 0; c < 3; ++c) ctr[static_cast<size_t>(c)] += m[static_cast<size_t>(c)];
    counts[static_cast<size_t>(d.labels[static_cast<size_t>(i)])]++;
  }
  for (int64_t k = 0; k < classes; ++k)
    for (int c = 0; c < 3; ++c)
      centroids[static_cast<size_t>(k)][static_cast<size_t>(c)] /= std::max(1, counts[static_cast<size_t>(k)]);
  int correct = 0;
  for (int64_t i : val) {
    const auto m = mean_color(d.images[static_cast<size_t>(i)]);
    int best = 0;
    double best_d = 1e300;
    for (int64_t k = 0; k < classes; ++k) {
      double dist = 0;
      for (int c = 0; c < 3; ++c) {
        const double df = m[static_cast<size_t>(c)] - centroids[static_cast<size_t>(k)][static_cast<size_t>(c)];
        dist += df * df;
      }
      if (dist < best_d) {
        best_d = dist;
        best = static_cast<int>(k);
      }
    }
    if (best == d.labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(val.size());
}

}  // namespace

TEST_CASE("synthetic generation is deterministic byte for byte") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.train_per_class = 3;
  spec.val_per_class = 2;
  spec.test_per_class = 2;
  spec.seed = 42;
  const auto root1 = temp_dir("gen_a");
  const auto root2 = temp_dir("gen_b");
  generate_synthetic_fgir(spec, root1);
  generate_synthetic_fgir(spec, root2);
  REQUIRE(hash_tree(root1) == hash_tree(root2));
  SyntheticSpec other = spec;
  other.seed = 43;
  const auto root3 = temp_dir("gen_c");
  generate_synthetic_fgir(other, root3);
  REQUIRE(hash_tree(root1) != hash_tree(root3));
}

TEST_CASE("manifest round trip and image decode") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.train_per_class = 2;
  spec.val_per_class = 1;
  spec.test_per_class = 1;
  spec.seed = 7;
  const auto root = temp_dir("roundtrip");
  DatasetManifest m = generate_synthetic_fgir(spec, root);
  REQUIRE(m.samples.size() == 8);
  DatasetManifest loaded = load_image_folder(root);
  REQUIRE(loaded.classes == m.classes);
  REQUIRE(loaded.samples.size() == m.samples.size());
  Dataset d = load_dataset(root);
  for (const auto& im : d.images) {
    REQUIRE(im.shape() == Shape{3, spec.image_size, spec.image_size});
    for (int64_t i = 0; i < im.numel(); ++i) {
      REQUIRE(im.at(i) >= 0.0f);
      REQUIRE(im.at(i) <= 1.0f);
    }
  }
  // splits disjoint by construction of paths
  for (const auto& s : loaded.samples)
    REQUIRE((s.split == "train" || s.split == "val" || s.split == "test"));
}

TEST_CASE("folder scan without manifest and its error paths") {
  const auto root = temp_dir("scan");
  // build a tiny tree by generating then removing the manifest
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.train_per_class = 3;
  spec.val_per_class = 1;
  spec.test_per_class = 1;
  spec.seed = 9;
  DatasetManifest gen = generate_synthetic_fgir(spec, root);
  fs::remove(fs::path(root) / "manifest.json");
  DatasetManifest m = load_image_folder(root);
  REQUIRE(m.classes == std::vector<std::string>{"class_00", "class_01"});
  REQUIRE(m.samples.size() == 10);
  // statistics recomputed from pixels match the generator's manifest values
  for (int c = 0; c < 3; ++c) {
    REQUIRE(std::abs(m.mean[static_cast<size_t>(c)] - gen.mean[static_cast<size_t>(c)]) < 1e-5);
    REQUIRE(std::abs(m.stddev[static_cast<size_t>(c)] - gen.stddev[static_cast<size_t>(c)]) < 1e-5);
  }
  // reload is identical
  DatasetManifest m2 = load_image_folder(root);
  REQUIRE(m2.samples.size() == m.samples.size());
  for (size_t i = 0; i < m.samples.size(); ++i) REQUIRE(m2.samples[i].path == m.samples[i].path);

  // empty class directory is a data error
  fs::create_directories(fs::path(root) / "train" / "class_99");
  REQUIRE_THROWS_AS(load_image_folder(root), Error);
  fs::remove_all(fs::path(root) / "train" / "class_99");
  // unreadable image names the file
  {
    std::ofstream bad((fs::path(root) / "train" / "class_00" / "broken.png").string());
    bad << "not a png";
  }
  try {
    load_dataset(root);
    FAIL("expected a data error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::kData);
    REQUIRE(std::string(e.what()).find("broken.png") != std::string::npos);
  }
}

TEST_CASE("batching determinism and coverage") {
  DatasetManifest m;
  m.classes = {"a", "b"};
  for (int i = 0; i < 10000; ++i) m.samples.push_back({"x", i % 2, "train"});
  auto b1 = make_batches(m, "train", 64, 3, 123);
  auto b2 = make_batches(m, "train", 64, 3, 123);
  REQUIRE(b1 == b2);
  auto b3 = make_batches(m, "train", 64, 4, 123);
  REQUIRE(b1 != b3);
  // permutation covers each index exactly once
  std::vector<int> seen(10000, 0);
  int64_t total = 0;
  for (const auto& batch : b1)
    for (int64_t i : batch) {
      seen[static_cast<size_t>(i)]++;
      ++total;
    }
  REQUIRE(total == 10000);
  for (int v : seen) REQUIRE(v == 1);
  // degenerate batching: one batch holds everything
  auto all = make_batches(m, "train", 20000, 0, 1);
  REQUIRE(all.size() == 1);
  REQUIRE(all[0].size() == 10000);
  // partial final batch kept
  auto parts = make_batches(m, "train", 4096, 0, 1);
  REQUIRE(parts.size() == 3);
  REQUIRE(parts[2].size() == 10000 - 2 * 4096);
  REQUIRE_THROWS_AS(make_batches(m, "train", 0, 0, 1), Error);
}

TEST_CASE("similarity 0 with large cues is linearly separable") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.train_per_class = 30;
  spec.val_per_class = 15;
  spec.test_per_class = 1;
  spec.image_size = 64;
  spec.cue_size = 15;
  spec.cue_count = 5;
  spec.similarity = 0.0;
  spec.seed = 11;
  const auto root = temp_dir("sep");
  generate_synthetic_fgir(spec, root);
  Dataset d = load_dataset(root);
  const double acc = linear_probe_acc(d);
  INFO("linear probe accuracy " << acc);
  REQUIRE(acc > 0.9);
}

TEST_CASE("similarity 0.9 defeats a global-average-color classifier") {
  SyntheticSpec spec;
  spec.num_classes = 10;
  spec.train_per_class = 20;
  spec.val_per_class = 10;
  spec.test_per_class = 1;
  spec.similarity = 0.9;
  spec.seed = 12;
  const auto root = temp_dir("color");
  generate_synthetic_fgir(spec, root);
  Dataset d = load_dataset(root);
  const double acc = color_probe_acc(d);
  INFO("color probe accuracy " << acc);
  REQUIRE(std::abs(acc - 0.1) <= 0.05);
}

TEST_CASE("spec invariants are enforced") {
  SyntheticSpec bad;
  bad.cue_size = 20;  // >= image/4
  bad.image_size = 64;
  REQUIRE_THROWS_AS(bad.validate(), Error);
}
