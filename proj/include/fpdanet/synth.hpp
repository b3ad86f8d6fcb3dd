#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fpdanet/data.hpp"

namespace fpdanet {

// Geometry of one synthetic class: a main elliptical structure (hollow ring
// or filled body) with optional mirror-symmetric spots, drawn inside an
// ultrasound-style sector. All layouts are symmetric under horizontal flip,
// so flip augmentation never maps one class onto another.
struct ClassGeometry {
  double radius_x = 0.25;        // semi-axes as fractions of the image width/height
  double radius_y = 0.25;
  double ring_thickness = 0.0;   // fraction of the image size; 0 = filled
  int spots = 0;                 // 0, 1 (centre) or 2 (mirrored pair)
  double spot_radius = 0.05;

  bool operator==(const ClassGeometry&) const = default;
};

// One pairwise-distinct geometry per class, deterministic in the index.
std::vector<ClassGeometry> default_class_geometries(int64_t num_classes);

struct SynthSpec {
  int64_t num_classes = kNumSections;
  int64_t images_per_class = 10;
  int64_t height = 64;
  int64_t width = 64;
  // Standard deviation of the unit-mean multiplicative (gamma) speckle; 0 = none.
  double speckle = 0.35;
  uint64_t seed = 7;
  // Empty = default_class_geometries(num_classes).
  std::vector<ClassGeometry> geometry;

  // Throws ConfigError, e.g. for duplicate class geometries.
  void validate() const;
};

struct SynthImage {
  int64_t label = 0;
  int64_t index = 0;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint8_t> pixels;  // row-major grayscale
};

// Renders a single image. Depends only on (spec, label, index).
SynthImage synth_render(const SynthSpec& spec, int64_t label, int64_t index);

struct SynthDataset {
  std::vector<SynthImage> images;
  DatasetManifest manifest;  // paths "<ABBREV>/<index>.png", splits unassigned
};

SynthDataset synth_generate(const SynthSpec& spec);

// Writes <root>/<ABBREV>/<index>.png for every image and returns the manifest
// with paths relative to root.
DatasetManifest synth_write(const SynthDataset& data, const std::filesystem::path& root);

}  // namespace fpdanet
