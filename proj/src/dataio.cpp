#include "semlink/dataio.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

#include "semlink/checkpoint.hpp"
#include "semlink/errors.hpp"

namespace semlink {

namespace {

// Seven-segment glyph box, stroke-drawn.
constexpr int kGlyphW = 14;
constexpr int kGlyphH = 22;
constexpr int kStroke = 3;

// Segment bits: a b c d e f g (top, top-right, bottom-right, bottom,
// bottom-left, top-left, middle).
constexpr std::array<std::uint8_t, kNumClasses> kSegments = {
    0b1111110, 0b0110000, 0b1101101, 0b1111001, 0b0110011,
    0b1011011, 0b1011111, 0b1110000, 0b1111111, 0b1111011,
};

void fill_rect(Image& img, int top, int left, int h, int w) {
  const int side = static_cast<int>(kImageSide);
  for (int r = std::max(0, top); r < std::min(side, top + h); ++r)
    for (int c = std::max(0, left); c < std::min(side, left + w); ++c)
      img[static_cast<std::size_t>(r) * kImageSide + static_cast<std::size_t>(c)] = 1.0;
}

Image draw_glyph(int label, int dy, int dx) {
  Image img(kImagePixels, 0.0);
  const int top = (static_cast<int>(kImageSide) - kGlyphH) / 2 + dy;
  const int left = (static_cast<int>(kImageSide) - kGlyphW) / 2 + dx;
  const int mid = top + (kGlyphH - kStroke) / 2;
  const int half = (kGlyphH + 1) / 2;
  const auto bits = kSegments[static_cast<std::size_t>(label)];
  auto on = [&](int seg) { return (bits >> (6 - seg)) & 1; };
  if (on(0)) fill_rect(img, top, left, kStroke, kGlyphW);
  if (on(1)) fill_rect(img, top, left + kGlyphW - kStroke, half, kStroke);
  if (on(2)) fill_rect(img, top + half - 1, left + kGlyphW - kStroke, kGlyphH - half + 1, kStroke);
  if (on(3)) fill_rect(img, top + kGlyphH - kStroke, left, kStroke, kGlyphW);
  if (on(4)) fill_rect(img, top + half - 1, left, kGlyphH - half + 1, kStroke);
  if (on(5)) fill_rect(img, top, left, half, kStroke);
  if (on(6)) fill_rect(img, mid, left, kStroke, kGlyphW);
  return img;
}

struct PngReadState {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadState() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

Image read_png_gray(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  PngReadState st;
  st.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!st.png) throw IoError("libpng init failed");
  st.info = png_create_info_struct(st.png);
  if (!st.info) throw IoError("libpng init failed");
  if (setjmp(png_jmpbuf(st.png))) throw IoError("malformed PNG: " + path.string());
  png_init_io(st.png, fp.get());
  png_read_info(st.png, st.info);
  const auto w = png_get_image_width(st.png, st.info);
  const auto h = png_get_image_height(st.png, st.info);
  const auto color = png_get_color_type(st.png, st.info);
  const auto depth = png_get_bit_depth(st.png, st.info);
  if (color != PNG_COLOR_TYPE_GRAY || depth != 8) {
    throw IoError(path.string() + ": expected 8-bit grayscale PNG");
  }
  if (w != kImageSide || h != kImageSide) {
    throw IoError(path.string() + ": expected 32x32 image");
  }
  std::vector<png_byte> raw(kImagePixels);
  std::vector<png_bytep> rows(kImageSide);
  for (std::size_t r = 0; r < kImageSide; ++r) rows[r] = raw.data() + r * kImageSide;
  png_read_image(st.png, rows.data());
  Image img(kImagePixels);
  for (std::size_t k = 0; k < kImagePixels; ++k) img[k] = raw[k] / 255.0;
  return img;
}

}  // namespace

Image glyph_template(int label) {
  if (label < 0 || label >= kNumClasses) throw ArgumentError("glyph_template: bad label");
  return draw_glyph(label, 0, 0);
}

std::vector<Sample> generate_dataset(std::size_t n_samples, std::uint64_t seed,
                                     const GlyphOptions& opts) {
  if (n_samples < static_cast<std::size_t>(kNumClasses)) {
    throw ArgumentError("generate_dataset: need at least one sample per class");
  }
  Rng rng(seed);
  std::vector<int> labels(n_samples);
  for (std::size_t k = 0; k < n_samples; ++k) labels[k] = static_cast<int>(k % kNumClasses);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::uniform_int_distribution<int> shift(-opts.max_shift, opts.max_shift);
  std::normal_distribution<double> noise(0.0, opts.pixel_noise_sigma);
  std::vector<Sample> out;
  out.reserve(n_samples);
  for (int label : labels) {
    const int dy = shift(rng);
    const int dx = shift(rng);
    Image img = draw_glyph(label, dy, dx);
    for (double& px : img) px = std::clamp(px + noise(rng), 0.0, 1.0);
    out.push_back({std::move(img), label});
  }
  return out;
}

std::vector<std::size_t> GroupAssignment::members(std::size_t group) const {
  std::vector<std::size_t> out;
  for (std::size_t d = 0; d < membership.size(); ++d)
    if (membership[d] == group) out.push_back(d);
  return out;
}

GroupAssignment assign_groups(std::size_t n_devices, std::size_t n_groups, Rng& rng) {
  if (n_groups < 1) throw ArgumentError("assign_groups: need at least one group");
  if (n_groups > n_devices) throw ArgumentError("assign_groups: more groups than devices");
  GroupAssignment g{n_devices, n_groups, std::vector<std::size_t>(n_devices)};
  for (std::size_t d = 0; d < n_devices; ++d) g.membership[d] = d % n_groups;
  std::shuffle(g.membership.begin(), g.membership.end(), rng);
  return g;
}

std::string to_string(PatchMode m) { return m == PatchMode::Side ? "side" : "area"; }

PatchMode patch_mode_from_string(const std::string& s) {
  if (s == "side") return PatchMode::Side;
  if (s == "area") return PatchMode::Area;
  throw ArgumentError("unknown patch mode '" + s + "' (expected side|area)");
}

std::size_t patch_side(double scale, PatchMode mode, std::size_t image_side) {
  if (!(scale > 0.0 && scale < 1.0)) throw ArgumentError("patch scale must lie in (0, 1)");
  const double ratio = mode == PatchMode::Side ? scale : std::sqrt(scale);
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(image_side)));
}

Image apply_patch(const Image& img, double scale, Rng& rng, PatchMode mode) {
  if (img.size() != kImagePixels) throw DimensionError("apply_patch: expected 32x32 image");
  const std::size_t side = patch_side(scale, mode);
  Image out = img;
  if (side == 0) return out;
  std::uniform_int_distribution<std::size_t> pos(0, kImageSide - side);
  const std::size_t top = pos(rng);
  const std::size_t left = pos(rng);
  for (std::size_t r = top; r < top + side; ++r)
    for (std::size_t c = left; c < left + side; ++c) out[r * kImageSide + c] = 1.0;
  return out;
}

ObservationBatch make_observation_batch(std::span<const Sample> samples,
                                        const GroupAssignment& groups, double p, double scale,
                                        Rng& rng, PatchMode mode) {
  if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("make_observation_batch: p outside [0, 1]");
  if (samples.size() != groups.n_groups) {
    throw ArgumentError("make_observation_batch: need one sample per group");
  }
  ObservationBatch batch;
  batch.groups = groups;
  for (const Sample& s : samples) {
    batch.group_images.push_back(s.image);
    batch.group_labels.push_back(s.label);
  }
  std::bernoulli_distribution coin(p);
  batch.observed.reserve(groups.n_devices);
  for (std::size_t d = 0; d < groups.n_devices; ++d) {
    const Image& clean = batch.group_images[groups.membership[d]];
    const bool hit = coin(rng);
    batch.corrupted.push_back(hit);
    batch.observed.push_back(hit ? apply_patch(clean, scale, rng, mode) : clean);
  }
  return batch;
}

void save_dataset(const std::filesystem::path& path, std::span<const Sample> samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write("SLDS", 4);
  write_u32(out, static_cast<std::uint32_t>(samples.size()));
  for (const Sample& s : samples) {
    if (s.image.size() != kImagePixels) throw DimensionError("save_dataset: bad image size");
    write_u32(out, static_cast<std::uint32_t>(s.label));
    for (double v : s.image) write_f64(out, v);
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<Sample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || std::string(magic.data(), 4) != "SLDS") throw IoError("not a dataset file: " + path.string());
  const auto count = read_u32(in);
  std::vector<Sample> out(count);
  for (Sample& s : out) {
    s.label = static_cast<int>(read_u32(in));
    s.image.resize(kImagePixels);
    for (double& v : s.image) v = read_f64(in);
  }
  return out;
}

std::vector<Sample> load_png_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Sample> out;
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    const auto us = stem.find('_');
    int label = -1;
    try {
      label = std::stoi(stem.substr(0, us));
    } catch (const std::exception&) {
      throw IoError(f.string() + ": filename must be <class>_<id>.png");
    }
    if (us == std::string::npos || label < 0 || label >= kNumClasses) {
      throw IoError(f.string() + ": filename must be <class>_<id>.png");
    }
    out.push_back({read_png_gray(f), label});
  }
  return out;
}

}  // namespace semlink
