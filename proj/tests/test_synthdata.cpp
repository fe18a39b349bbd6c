#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "jrf/synthdata.hpp"
#include "oracles.hpp"

using namespace jrf;

namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& b) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
}

void push_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back((v >> 24) & 0xff);
  b.push_back((v >> 16) & 0xff);
  b.push_back((v >> 8) & 0xff);
  b.push_back(v & 0xff);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("ring mode centers", "[synthdata]") {
  RingMixtureSpec spec = toy32_spec();
  auto centers = ring_mode_centers(spec);
  REQUIRE(centers.size() == 32);
  // first mode of each circle sits at (radius, 0); radii 1..4
  for (int c = 0; c < 4; ++c) {
    REQUIRE(centers[std::size_t(c) * 8].x == Catch::Approx(double(c + 1)).margin(1e-12));
    REQUIRE(centers[std::size_t(c) * 8].y == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(centers[std::size_t(c) * 8].label == c);
  }
  // every center has the circle's radius and evenly spaced angles
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const double r = std::sqrt(centers[i].x * centers[i].x + centers[i].y * centers[i].y);
    REQUIRE(r == Catch::Approx(double(i / 8 + 1)).margin(1e-12));
  }

  auto two = ring_mode_centers(toy2circ_spec());
  REQUIRE(two.size() == 16);
  REQUIRE(two.front().x == Catch::Approx(2.0));
  REQUIRE(two.back().label == 1);
}

TEST_CASE("zero component std puts every sample exactly on a center", "[synthdata]") {
  RingMixtureSpec spec = toy2circ_spec();
  spec.component_std = 0.0;
  spec.n_samples = 200;
  Rng rng(21);
  RingDataset ds = gen_ring_mixture(spec, rng);
  for (std::size_t i = 0; i < ds.x.rows(); ++i) {
    bool on_center = false;
    for (const auto& c : ds.centers)
      if (ds.x.at(i, 0) == Catch::Approx(c.x).margin(1e-12) &&
          ds.x.at(i, 1) == Catch::Approx(c.y).margin(1e-12) && ds.labels[i] == c.label)
        on_center = true;
    REQUIRE(on_center);
  }
}

TEST_CASE("mode assignment counts look multinomial", "[synthdata]") {
  RingMixtureSpec spec = toy32_spec();
  Rng rng(22);
  RingDataset ds = gen_ring_mixture(spec, rng);
  REQUIRE(ds.x.rows() == 1600);
  // nearest-center histogram; expected 50 per mode, sd ~= 6.97, use 4 sd
  std::vector<int> counts(ds.centers.size(), 0);
  for (std::size_t i = 0; i < ds.x.rows(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < ds.centers.size(); ++k) {
      const double dx = ds.x.at(i, 0) - ds.centers[k].x;
      const double dy = ds.x.at(i, 1) - ds.centers[k].y;
      if (dx * dx + dy * dy < best_d) best_d = dx * dx + dy * dy, best = k;
    }
    ++counts[best];
  }
  for (int c : counts) REQUIRE(std::abs(c - 50) <= 28);
  // all modes covered; a 3-sigma disc holds 1 - exp(-4.5) ~ 98.9% of a
  // 2-d Gaussian, so the realistic ratio should sit near that
  auto cov = oracle::brute_force_coverage(ds.x, ds.centers, 3 * spec.component_std);
  REQUIRE(cov.covered == 32);
  REQUIRE(cov.ratio == Catch::Approx(1.0 - std::exp(-4.5)).margin(0.01));
}

TEST_CASE("class-balanced split", "[synthdata]") {
  RingMixtureSpec spec = toy2circ_spec();
  Rng rng(23);
  RingDataset ds = gen_ring_mixture(spec, rng);
  SECTION("4 per class over 800 samples leaves 792 unlabeled") {
    LabeledSplit split = make_split(ds.x, ds.labels, 4, rng);
    REQUIRE(split.size() == 800);
    REQUIRE(split.labeled_idx.size() == 8);
    REQUIRE(std::is_sorted(split.labeled_idx.begin(), split.labeled_idx.end()));
    int c0 = 0, c1 = 0;
    for (std::size_t i : split.labeled_idx) (split.labels[i] == 0 ? c0 : c1)++;
    REQUIRE(c0 == 4);
    REQUIRE(c1 == 4);
  }
  SECTION("balance holds for any seed") {
    for (std::uint64_t seed : {5u, 77u}) {
      Rng r(seed);
      LabeledSplit split = make_split(ds.x, ds.labels, 10, r);
      int c0 = 0, c1 = 0;
      for (std::size_t i : split.labeled_idx) (split.labels[i] == 0 ? c0 : c1)++;
      REQUIRE(c0 == 10);
      REQUIRE(c1 == 10);
    }
  }
  SECTION("asking for more labels than a class has fails") {
    REQUIRE_THROWS_AS(make_split(ds.x, ds.labels, 1000, rng), DataError);
  }
  SECTION("label/row count mismatch fails") {
    std::vector<int> short_labels(ds.labels.begin(), ds.labels.end() - 1);
    REQUIRE_THROWS_AS(make_split(ds.x, short_labels, 1, rng), DataError);
  }
}

TEST_CASE("CSV round trip", "[synthdata]") {
  const std::string path = tmp_path("jrf_csv_test.csv");
  Tensor x = Tensor::from({3, 2}, {0.1, -2.25, 1.0 / 3.0, 4e-17, 100, -0.0});
  std::vector<int> y = {0, 2, 1};
  SECTION("labeled") {
    save_dataset_csv(path, x, &y);
    LabeledSplit back = load_dataset_csv(path);
    REQUIRE(back.x.vec() == x.vec());
    REQUIRE(back.labels == y);
    REQUIRE(back.labeled_idx.size() == 3);
    // %.17g rendering makes the file byte-stable across rewrites
    const std::string first = slurp(path);
    save_dataset_csv(path, back.x, &back.labels);
    REQUIRE(slurp(path) == first);
  }
  SECTION("unlabeled") {
    save_dataset_csv(path, x);
    LabeledSplit back = load_dataset_csv(path);
    REQUIRE(back.x.vec() == x.vec());
    REQUIRE_FALSE(back.has_labels());
    REQUIRE(back.labeled_idx.empty());
  }
  SECTION("malformed rows fail with the row number") {
    std::ofstream os(path);
    os << "x0,x1\n1.0\n";
    os.close();
    REQUIRE_THROWS_WITH(load_dataset_csv(path), Catch::Matchers::ContainsSubstring("row 2"));
  }
  fs::remove(path);
}

TEST_CASE("IDX loading", "[synthdata]") {
  const std::string im = tmp_path("jrf_idx_images");
  const std::string lb = tmp_path("jrf_idx_labels");

  SECTION("two 2x2 images with labels") {
    std::vector<unsigned char> ib;
    push_be32(ib, 0x00000803u);
    push_be32(ib, 2);
    push_be32(ib, 2);
    push_be32(ib, 2);
    for (unsigned char p : {0, 255, 51, 102, 255, 255, 0, 0}) ib.push_back(p);
    write_bytes(im, ib);
    std::vector<unsigned char> lbb;
    push_be32(lbb, 0x00000801u);
    push_be32(lbb, 2);
    lbb.push_back(7);
    lbb.push_back(0);
    write_bytes(lb, lbb);

    LabeledSplit ds = load_idx(im, lb);
    REQUIRE(ds.x.rows() == 2);
    REQUIRE(ds.x.cols() == 4);
    REQUIRE(ds.x.at(0, 0) == 0.0);
    REQUIRE(ds.x.at(0, 1) == 1.0);
    REQUIRE(ds.x.at(0, 2) == Catch::Approx(51.0 / 255.0).epsilon(1e-15));
    REQUIRE(ds.labels == std::vector<int>{7, 0});
    REQUIRE(ds.labeled_idx.size() == 2);
  }
  SECTION("zero-image file loads as an empty dataset") {
    std::vector<unsigned char> ib;
    push_be32(ib, 0x00000803u);
    push_be32(ib, 0);
    push_be32(ib, 28);
    push_be32(ib, 28);
    write_bytes(im, ib);
    std::vector<unsigned char> lbb;
    push_be32(lbb, 0x00000801u);
    push_be32(lbb, 0);
    write_bytes(lb, lbb);
    LabeledSplit ds = load_idx(im, lb);
    REQUIRE(ds.x.rows() == 0);
    REQUIRE(ds.labels.empty());
  }
  SECTION("bad image magic is rejected with offset 0") {
    std::vector<unsigned char> ib;
    push_be32(ib, 0x12345678u);
    write_bytes(im, ib);
    std::vector<unsigned char> lbb;
    push_be32(lbb, 0x00000801u);
    push_be32(lbb, 0);
    write_bytes(lb, lbb);
    REQUIRE_THROWS_WITH(load_idx(im, lb), Catch::Matchers::ContainsSubstring("offset 0"));
  }
  SECTION("count mismatch between images and labels") {
    std::vector<unsigned char> ib;
    push_be32(ib, 0x00000803u);
    push_be32(ib, 1);
    push_be32(ib, 1);
    push_be32(ib, 1);
    ib.push_back(128);
    write_bytes(im, ib);
    std::vector<unsigned char> lbb;
    push_be32(lbb, 0x00000801u);
    push_be32(lbb, 2);
    lbb.push_back(1);
    lbb.push_back(2);
    write_bytes(lb, lbb);
    REQUIRE_THROWS_AS(load_idx(im, lb), FormatError);
  }
  SECTION("truncated pixel data reports the file offset") {
    std::vector<unsigned char> ib;
    push_be32(ib, 0x00000803u);
    push_be32(ib, 1);
    push_be32(ib, 2);
    push_be32(ib, 2);
    ib.push_back(10);  // 1 of 4 pixels
    write_bytes(im, ib);
    std::vector<unsigned char> lbb;
    push_be32(lbb, 0x00000801u);
    push_be32(lbb, 1);
    lbb.push_back(3);
    write_bytes(lb, lbb);
    REQUIRE_THROWS_WITH(load_idx(im, lb), Catch::Matchers::ContainsSubstring("offset 16"));
  }
  SECTION("label byte outside 0..9 is rejected") {
    std::vector<unsigned char> ib;
    push_be32(ib, 0x00000803u);
    push_be32(ib, 1);
    push_be32(ib, 1);
    push_be32(ib, 1);
    ib.push_back(0);
    write_bytes(im, ib);
    std::vector<unsigned char> lbb;
    push_be32(lbb, 0x00000801u);
    push_be32(lbb, 1);
    lbb.push_back(200);
    write_bytes(lb, lbb);
    REQUIRE_THROWS_AS(load_idx(im, lb), FormatError);
  }
  fs::remove(im);
  fs::remove(lb);
}
