#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "semlink/rng.hpp"

namespace semlink {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;
inline constexpr int kNumClasses = 10;

// Row-major grayscale, values in [0, 1].
using Image = std::vector<double>;

struct Sample {
  Image image;
  int label = 0;
};

struct GlyphOptions {
  int max_shift = 4;
  double pixel_noise_sigma = 0.1;
};

// Class-balanced procedurally drawn glyphs, reproducible from the seed.
std::vector<Sample> generate_dataset(std::size_t n_samples, std::uint64_t seed,
                                     const GlyphOptions& opts = {});

// The noiseless, unshifted template of a class.
Image glyph_template(int label);

struct GroupAssignment {
  std::size_t n_devices = 0;
  std::size_t n_groups = 0;
  std::vector<std::size_t> membership;  // device -> group

  std::vector<std::size_t> members(std::size_t group) const;
};

GroupAssignment assign_groups(std::size_t n_devices, std::size_t n_groups, Rng& rng);

enum class PatchMode { Side, Area };

std::string to_string(PatchMode m);
PatchMode patch_mode_from_string(const std::string& s);

// Patch side in pixels for an image side and scale.
std::size_t patch_side(double scale, PatchMode mode, std::size_t image_side = kImageSide);

// Paints a white square at a uniformly random position fully inside the image.
Image apply_patch(const Image& img, double scale, Rng& rng, PatchMode mode = PatchMode::Side);

struct ObservationBatch {
  GroupAssignment groups;
  std::vector<Image> group_images;  // clean x_g
  std::vector<int> group_labels;
  std::vector<Image> observed;      // x̂_i per device
  std::vector<bool> corrupted;

  std::size_t n_devices() const { return observed.size(); }
  int label_of(std::size_t device) const { return group_labels[groups.membership[device]]; }
  const Image& clean_of(std::size_t device) const {
    return group_images[groups.membership[device]];
  }
};

// samples holds one sample per group.
ObservationBatch make_observation_batch(std::span<const Sample> samples,
                                        const GroupAssignment& groups, double p, double scale,
                                        Rng& rng, PatchMode mode = PatchMode::Side);

// Single-file dataset: "SLDS" | u32 count | per sample: u32 label, 1024 f64 (LE).
void save_dataset(const std::filesystem::path& path, std::span<const Sample> samples);
std::vector<Sample> load_dataset(const std::filesystem::path& path);

// Directory of 8-bit grayscale 32x32 PNGs named <class>_<id>.png, sorted by name.
std::vector<Sample> load_png_directory(const std::filesystem::path& dir);

}  // namespace semlink
