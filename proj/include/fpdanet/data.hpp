#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fpdanet {

// ---------------------------------------------------------------- taxonomy

struct SectionClass {
  std::string_view abbreviation;
  std::string_view full_name;
};

inline constexpr int64_t kNumSections = 21;

// The 21 standard planes. Order is fixed and defines label indices.
const std::array<SectionClass, kNumSections>& section_taxonomy();

// Label index for an abbreviation, or nullopt.
std::optional<int64_t> section_index(std::string_view abbreviation);

// ---------------------------------------------------------------- manifest

enum class Split : uint8_t { kTrain = 0, kVal = 1, kTest = 2, kUnassigned = 3 };

std::string_view split_name(Split s);
// Throws InputError for anything but train/val/test/unassigned.
Split parse_split(std::string_view name);

struct ManifestRecord {
  std::string path;  // relative to the dataset root
  int64_t label = 0;
  Split split = Split::kUnassigned;

  bool operator==(const ManifestRecord&) const = default;
};

using SplitRatios = std::array<double, 3>;

struct DatasetManifest {
  std::string source = "folder";  // folder | synthetic | fixture
  std::vector<ManifestRecord> records;
  std::vector<std::string> unknown_directories;
  std::vector<std::string> warnings;

  // counts[label][split] for train/val/test.
  std::vector<std::array<int64_t, 3>> split_counts(int64_t num_classes = kNumSections) const;
  // Train/val/test totals.
  std::array<int64_t, 3> split_totals() const;
  std::vector<ManifestRecord> select(Split split) const;
  std::vector<int64_t> class_counts(int64_t num_classes = kNumSections) const;

  bool operator==(const DatasetManifest& o) const {
    return source == o.source && records == o.records;
  }
};

// Manifest file: UTF-8 text, one record per line, tab-separated
//   <path>\t<label>\t<split>
// preceded by a header line "# fpdanet-manifest v1 source=<source>".
// Blank lines and other lines starting with '#' are ignored.
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Indexes <root>/<ABBREV>/*.{png,jpg,jpeg}. Subdirectories that are not class
// abbreviations are listed in unknown_directories and skipped; a missing class
// directory adds a warning. Throws InputError when no image is found.
DatasetManifest scan_dataset(const std::filesystem::path& root);

// Largest-remainder apportionment of n items over the ratios. Ties in the
// fractional parts go to the lower split index.
std::array<int64_t, 3> apportion(int64_t n, const SplitRatios& ratios);

// Stratified split: each class is shuffled with a seed-derived generator and
// cut per apportion(). Deterministic for a given (manifest, ratios, seed).
DatasetManifest split_manifest(const DatasetManifest& m, const SplitRatios& ratios = {7, 2, 1},
                               uint64_t seed = 0);

// Per-class split counts, one line per class:  <ABBREV>\t<train>\t<val>\t<test>
// Produces a manifest of placeholder records ("<ABBREV>/<n>") carrying those
// counts, for bookkeeping checks against published tables.
DatasetManifest manifest_from_counts_file(const std::filesystem::path& path);

}  // namespace fpdanet
