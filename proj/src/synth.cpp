#include "fpdanet/synth.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fpdanet/errors.hpp"

namespace fpdanet {

namespace {

uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

constexpr double kSectorBackground = 0.12;

}  // namespace

std::vector<ClassGeometry> default_class_geometries(int64_t num_classes) {
  static constexpr std::array<std::pair<double, double>, 4> kShapes{{
      {0.16, 0.16},  // small round
      {0.30, 0.30},  // large round
      {0.36, 0.17},  // wide
      {0.17, 0.34},  // tall
  }};
  if (num_classes < 1 || num_classes > 24) {
    throw ConfigError("synth: default geometries cover 1..24 classes, got " + std::to_string(num_classes));
  }
  std::vector<ClassGeometry> out;
  for (int64_t c = 0; c < num_classes; ++c) {
    ClassGeometry g;
    std::tie(g.radius_x, g.radius_y) = kShapes[static_cast<size_t>(c % 4)];
    g.ring_thickness = (c / 4) % 2 == 0 ? 0.06 : 0.0;
    g.spots = static_cast<int>(c / 8);
    g.spot_radius = 0.055;
    out.push_back(g);
  }
  return out;
}

void SynthSpec::validate() const {
  if (num_classes < 2 || num_classes > kNumSections) {
    throw ConfigError("synth: num_classes must lie in [2, " + std::to_string(kNumSections) + "]");
  }
  if (images_per_class < 1) throw ConfigError("synth: images_per_class must be >= 1");
  if (height < 8 || width < 8) throw ConfigError("synth: image size must be at least 8x8");
  if (!(speckle >= 0.0)) throw ConfigError("synth: speckle level must be >= 0");
  if (!geometry.empty()) {
    if (static_cast<int64_t>(geometry.size()) != num_classes) {
      throw ConfigError("synth: geometry list has " + std::to_string(geometry.size()) +
                        " entries for " + std::to_string(num_classes) + " classes");
    }
    for (size_t a = 0; a < geometry.size(); ++a) {
      const auto& g = geometry[a];
      if (g.radius_x <= 0 || g.radius_y <= 0 || g.ring_thickness < 0 || g.spots < 0 || g.spots > 2) {
        throw ConfigError("synth: invalid geometry for class " + std::to_string(a));
      }
      for (size_t b = a + 1; b < geometry.size(); ++b) {
        if (geometry[a] == geometry[b]) {
          throw ConfigError("synth: classes " + std::to_string(a) + " and " + std::to_string(b) +
                            " share the same geometry");
        }
      }
    }
  }
}

SynthImage synth_render(const SynthSpec& spec, int64_t label, int64_t index) {
  const auto geometries = spec.geometry.empty() ? default_class_geometries(spec.num_classes) : spec.geometry;
  const auto& g = geometries.at(static_cast<size_t>(label));

  std::mt19937_64 rng(mix(spec.seed ^ mix(static_cast<uint64_t>(label) * 1000003ULL + static_cast<uint64_t>(index))));
  const double cx = 0.5 + uniform(rng, -0.05, 0.05);
  const double cy = 0.55 + uniform(rng, -0.05, 0.05);
  const double scale = 1.0 + uniform(rng, -0.08, 0.08);
  const double gain = 0.8 + uniform(rng, -0.1, 0.1);
  const double rx = g.radius_x * scale, ry = g.radius_y * scale;
  const double half_ring = 0.5 * g.ring_thickness * scale;
  const double spot_r = g.spot_radius * scale;
  const bool filled = g.ring_thickness == 0.0;

  std::gamma_distribution<double> speckle_dist(
      spec.speckle > 0 ? 1.0 / (spec.speckle * spec.speckle) : 1.0,
      spec.speckle > 0 ? spec.speckle * spec.speckle : 1.0);

  SynthImage img{label, index, spec.height, spec.width,
                 std::vector<uint8_t>(static_cast<size_t>(spec.height * spec.width))};
  // Sector apex above the image, opening downward by +-40 degrees.
  const double apex_x = 0.5, apex_y = -0.1;
  const double half_angle = 40.0 * std::numbers::pi / 180.0;

  for (int64_t row = 0; row < spec.height; ++row) {
    for (int64_t col = 0; col < spec.width; ++col) {
      const double x = (static_cast<double>(col) + 0.5) / static_cast<double>(spec.width);
      const double y = (static_cast<double>(row) + 0.5) / static_cast<double>(spec.height);

      const double sx = x - apex_x, sy = y - apex_y;
      const double r = std::hypot(sx, sy);
      const bool in_sector = r > 0.2 && r < 1.05 && std::abs(std::atan2(sx, sy)) < half_angle;
      double v = in_sector ? kSectorBackground : 0.0;

      const double ex = (x - cx) / rx, ey = (y - cy) / ry;
      const double rho = std::sqrt(ex * ex + ey * ey);
      if (filled) {
        if (rho <= 1.0) v = 0.75 * gain;
      } else if (std::abs(rho - 1.0) * std::min(rx, ry) <= half_ring) {
        v = gain;
      }

      for (int s = 0; s < g.spots; ++s) {
        const double px = g.spots == 1 ? cx : cx + (s == 0 ? -0.5 : 0.5) * rx;
        if (std::hypot(x - px, y - cy) <= spot_r) v = filled ? 0.1 * gain : gain;
      }

      if (spec.speckle > 0 && v > 0) v *= speckle_dist(rng);
      img.pixels[static_cast<size_t>(row * spec.width + col)] =
          static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  }
  return img;
}

SynthDataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  SynthDataset out;
  out.manifest.source = "synthetic";
  const auto& taxonomy = section_taxonomy();
  for (int64_t label = 0; label < spec.num_classes; ++label) {
    for (int64_t i = 0; i < spec.images_per_class; ++i) {
      out.images.push_back(synth_render(spec, label, i));
      char name[32];
      std::snprintf(name, sizeof(name), "%04lld.png", static_cast<long long>(i));
      out.manifest.records.push_back(
          {std::string(taxonomy[static_cast<size_t>(label)].abbreviation) + "/" + name, label,
           Split::kUnassigned});
    }
  }
  return out;
}

DatasetManifest synth_write(const SynthDataset& data, const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  for (size_t k = 0; k < data.images.size(); ++k) {
    const auto& img = data.images[k];
    const auto path = root / data.manifest.records.at(k).path;
    std::filesystem::create_directories(path.parent_path());
    cv::Mat mat(static_cast<int>(img.height), static_cast<int>(img.width), CV_8UC1,
                const_cast<uint8_t*>(img.pixels.data()));
    if (!cv::imwrite(path.string(), mat)) throw InputError("synth: cannot write " + path.string());
  }
  return data.manifest;
}

}  // namespace fpdanet
