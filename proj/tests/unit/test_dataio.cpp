#include <doctest.h>

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "semlink/dataio.hpp"
#include "semlink/errors.hpp"

using namespace semlink;
namespace fs = std::filesystem;

namespace {

// Pixels that stay background for every class under every allowed shift.
std::vector<std::size_t> always_background(int max_shift) {
  std::vector<std::size_t> out;
  const int side = static_cast<int>(kImageSide);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      bool bg = true;
      for (int label = 0; label < kNumClasses && bg; ++label) {
        const Image t = glyph_template(label);
        for (int dy = -max_shift; dy <= max_shift && bg; ++dy)
          for (int dx = -max_shift; dx <= max_shift && bg; ++dx) {
            const int sr = r - dy;
            const int sc = c - dx;
            if (sr < 0 || sc < 0 || sr >= side || sc >= side) continue;
            if (t[static_cast<std::size_t>(sr * side + sc)] != 0.0) bg = false;
          }
      }
      if (bg) out.push_back(static_cast<std::size_t>(r * side + c));
    }
  return out;
}

void write_gray_png(const fs::path& path, const std::vector<unsigned char>& pixels, int w, int h) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  REQUIRE(fp != nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    FAIL("libpng write failed");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < h; ++r)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(r * w)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("semlink_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("generate_dataset") {
  SUBCASE("reproducible from the seed") {
    const auto a = generate_dataset(200, 42);
    const auto b = generate_dataset(200, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].label == b[k].label);
      CHECK(a[k].image == b[k].image);
    }
    CHECK_FALSE(generate_dataset(200, 43)[0].image == a[0].image);
  }
  SUBCASE("class balanced") {
    const auto d = generate_dataset(10000, 1);
    std::vector<int> hist(kNumClasses, 0);
    for (const auto& s : d) ++hist[static_cast<std::size_t>(s.label)];
    for (int h : hist) CHECK(h == 1000);
  }
  SUBCASE("pixels in range with the right shape") {
    for (const auto& s : generate_dataset(50, 2)) {
      REQUIRE(s.image.size() == kImageSide * kImageSide);
      for (double px : s.image) {
        CHECK(px >= 0.0);
        CHECK(px <= 1.0);
      }
    }
  }
  SUBCASE("background mean equals the clipped Gaussian mean") {
    const GlyphOptions opts;
    const auto bg = always_background(opts.max_shift);
    REQUIRE(bg.size() > 100);
    const auto d = generate_dataset(2000, 3, opts);
    double sum = 0.0;
    for (const auto& s : d)
      for (std::size_t k : bg) sum += s.image[k];
    const double mean = sum / static_cast<double>(d.size() * bg.size());
    // E[clip(X, 0, 1)] for X ~ N(0, s^2)
    const double s = opts.pixel_noise_sigma;
    const double oracle = s / std::sqrt(2.0 * M_PI) * (1.0 - std::exp(-1.0 / (2.0 * s * s))) +
                          0.5 * std::erfc(1.0 / (s * std::sqrt(2.0)));
    CHECK(mean == doctest::Approx(oracle).epsilon(0.01));
  }
  SUBCASE("too few samples") { CHECK_THROWS_AS(generate_dataset(5, 1), ArgumentError); }
}

TEST_CASE("assign_groups") {
  Rng rng(7);
  SUBCASE("16 devices in 4 groups") {
    const auto g = assign_groups(16, 4, rng);
    REQUIRE(g.membership.size() == 16);
    std::size_t covered = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(g.members(k).size() == 4);
      covered += g.members(k).size();
    }
    CHECK(covered == 16);
  }
  SUBCASE("sizes as equal as possible") {
    const auto g = assign_groups(10, 4, rng);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(g.members(k).size() >= 2);
      CHECK(g.members(k).size() <= 3);
    }
  }
  SUBCASE("single group") {
    const auto g = assign_groups(16, 1, rng);
    for (std::size_t m : g.membership) CHECK(m == 0);
  }
  SUBCASE("every device alone") {
    const auto g = assign_groups(16, 16, rng);
    std::set<std::size_t> seen(g.membership.begin(), g.membership.end());
    CHECK(seen.size() == 16);
  }
  SUBCASE("assignment is random") {
    const auto a = assign_groups(16, 4, rng);
    const auto b = assign_groups(16, 4, rng);
    CHECK_FALSE(a.membership == b.membership);
  }
  SUBCASE("invalid") {
    CHECK_THROWS_AS(assign_groups(3, 4, rng), ArgumentError);
    CHECK_THROWS_AS(assign_groups(3, 0, rng), ArgumentError);
  }
}

TEST_CASE("apply_patch") {
  Rng rng(11);
  const Image black(kImageSide * kImageSide, 0.0);
  SUBCASE("scale 0.4 paints a 12x12 white square") {
    CHECK(patch_side(0.4, PatchMode::Side) == 12);
    for (int t = 0; t < 50; ++t) {
      const Image out = apply_patch(black, 0.4, rng);
      std::size_t white = 0;
      std::size_t rmin = kImageSide, rmax = 0, cmin = kImageSide, cmax = 0;
      for (std::size_t k = 0; k < out.size(); ++k) {
        if (out[k] == 1.0) {
          ++white;
          rmin = std::min(rmin, k / kImageSide);
          rmax = std::max(rmax, k / kImageSide);
          cmin = std::min(cmin, k % kImageSide);
          cmax = std::max(cmax, k % kImageSide);
        } else {
          CHECK(out[k] == 0.0);
        }
      }
      CHECK(white == 144);
      CHECK(rmax - rmin == 11);
      CHECK(cmax - cmin == 11);
    }
  }
  SUBCASE("area mode uses the square root of the scale") {
    CHECK(patch_side(0.16, PatchMode::Area) == 12);
    CHECK(patch_side(0.4, PatchMode::Area) == 20);
  }
  SUBCASE("a patch narrower than a pixel leaves the image unchanged") {
    const auto img = generate_dataset(10, 5)[0].image;
    CHECK(apply_patch(img, 0.01, rng) == img);
  }
  SUBCASE("at most 144 pixels change and the rest are untouched") {
    for (const auto& s : generate_dataset(100, 6)) {
      const Image out = apply_patch(s.image, 0.4, rng);
      std::size_t changed = 0;
      for (std::size_t k = 0; k < out.size(); ++k) {
        if (out[k] != s.image[k]) {
          ++changed;
          CHECK(out[k] == 1.0);
        }
      }
      CHECK(static_cast<double>(changed) / 1024.0 <= 144.0 / 1024.0);
    }
  }
  SUBCASE("patch positions cover the image uniformly") {
    std::vector<int> top_left_rows(21, 0);
    for (int t = 0; t < 4200; ++t) {
      const Image out = apply_patch(black, 0.4, rng);
      for (std::size_t k = 0; k < out.size(); ++k)
        if (out[k] == 1.0) {
          ++top_left_rows[k / kImageSide];
          break;
        }
    }
    for (int c : top_left_rows) CHECK(c > 100);
  }
  SUBCASE("invalid scale") {
    CHECK_THROWS_AS(apply_patch(black, 0.0, rng), ArgumentError);
    CHECK_THROWS_AS(apply_patch(black, 1.0, rng), ArgumentError);
    CHECK_THROWS_AS(apply_patch(black, -0.2, rng), ArgumentError);
  }
}

TEST_CASE("make_observation_batch") {
  const auto samples = generate_dataset(40, 8);
  const std::vector<Sample> chosen(samples.begin(), samples.begin() + 4);
  Rng rng(13);
  const auto groups = assign_groups(16, 4, rng);
  SUBCASE("p = 0 keeps every view clean") {
    const auto b = make_observation_batch(chosen, groups, 0.0, 0.4, rng);
    for (std::size_t d = 0; d < 16; ++d) {
      CHECK_FALSE(b.corrupted[d]);
      CHECK(b.observed[d] == b.clean_of(d));
      CHECK(b.label_of(d) == chosen[groups.membership[d]].label);
    }
  }
  SUBCASE("p = 1 corrupts every view at independent positions") {
    const auto b = make_observation_batch(chosen, groups, 1.0, 0.4, rng);
    std::size_t distinct_pairs = 0;
    for (std::size_t d = 0; d < 16; ++d) {
      CHECK(b.corrupted[d]);
      CHECK_FALSE(b.observed[d] == b.clean_of(d));
      for (std::size_t e = d + 1; e < 16; ++e)
        if (groups.membership[d] == groups.membership[e] && b.observed[d] != b.observed[e])
          ++distinct_pairs;
    }
    CHECK(distinct_pairs > 0);
  }
  SUBCASE("group members share the clean image") {
    const auto b = make_observation_batch(chosen, groups, 0.8, 0.4, rng);
    for (std::size_t d = 0; d < 16; ++d) CHECK(b.clean_of(d) == chosen[groups.membership[d]].image);
  }
  SUBCASE("corruption rate matches p") {
    std::size_t hits = 0;
    std::size_t draws = 0;
    while (draws < 10000) {
      const auto b = make_observation_batch(chosen, groups, 0.8, 0.4, rng);
      for (bool c : b.corrupted) hits += c ? 1 : 0;
      draws += 16;
    }
    CHECK(std::abs(static_cast<double>(hits) / static_cast<double>(draws) - 0.8) < 0.01);
  }
  SUBCASE("identical seeds give identical batches") {
    Rng a(99);
    Rng b(99);
    const auto ba = make_observation_batch(chosen, groups, 0.8, 0.4, a);
    const auto bb = make_observation_batch(chosen, groups, 0.8, 0.4, b);
    CHECK(ba.observed == bb.observed);
    CHECK(ba.corrupted == bb.corrupted);
  }
}

TEST_CASE("dataset file round trip") {
  const fs::path dir = temp_dir("slds");
  const auto d = generate_dataset(30, 21);
  save_dataset(dir / "d.slds", d);
  const auto back = load_dataset(dir / "d.slds");
  REQUIRE(back.size() == d.size());
  for (std::size_t k = 0; k < d.size(); ++k) {
    CHECK(back[k].label == d[k].label);
    CHECK(back[k].image == d[k].image);
  }
  CHECK(fs::file_size(dir / "d.slds") == 8 + 30 * (4 + 1024 * 8));
  CHECK_THROWS_AS(load_dataset(dir / "missing.slds"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("PNG directory ingestion") {
  const fs::path dir = temp_dir("png");
  std::vector<unsigned char> px(1024);
  for (std::size_t k = 0; k < px.size(); ++k) px[k] = static_cast<unsigned char>(k % 256);
  write_gray_png(dir / "3_0001.png", px, 32, 32);
  std::vector<unsigned char> white(1024, 255);
  write_gray_png(dir / "7_0002.png", white, 32, 32);
  const auto samples = load_png_directory(dir);
  REQUIRE(samples.size() == 2);
  CHECK(samples[0].label == 3);
  CHECK(samples[1].label == 7);
  CHECK(samples[0].image[0] == 0.0);
  CHECK(samples[0].image[255] == 1.0);
  CHECK(samples[0].image[51] == doctest::Approx(51.0 / 255.0).epsilon(1e-15));
  for (double v : samples[1].image) CHECK(v == 1.0);

  write_gray_png(dir / "2_bad.png", std::vector<unsigned char>(16 * 16, 0), 16, 16);
  CHECK_THROWS_AS(load_png_directory(dir), IoError);
  fs::remove_all(dir);
}
