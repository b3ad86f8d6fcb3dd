#include "fpdanet/data.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "fpdanet/errors.hpp"

namespace fpdanet {

namespace fs = std::filesystem;

const std::array<SectionClass, kNumSections>& section_taxonomy() {
  static const std::array<SectionClass, kNumSections> taxonomy{{
      {"3VT", "Three Vessel Tracheal View"},
      {"BL", "Bladder Axial View"},
      {"4C", "Four-Chamber View"},
      {"TV", "Transventricular View"},
      {"UR", "Ulna and Radius Coronal View"},
      {"HL", "Humerus Long Axis View"},
      {"ICO", "Internal Cervical Os Sagittal View"},
      {"FL", "Femur Long Axis View"},
      {"CTSP", "Cervicothoracic Spine Sagittal View"},
      {"TF", "Tibia and Fibula Coronal View"},
      {"CI", "Cord Insertion Abdominal Axial View"},
      {"TTV", "Transthalamic View"},
      {"DI", "Diaphragm Coronal View"},
      {"Ab", "Upper Abdomen Axial View"},
      {"LVOT", "Left Ventricular Outflow Tract"},
      {"Kidneys", "Kidneys Axial View"},
      {"Eyes", "Eye Axial View"},
      {"TCV", "Transcerebellar View"},
      {"MFP", "Median Sagittal Facial Profile View"},
      {"LSSP", "Lumbosacral Spine Sagittal View"},
      {"RVOT", "Right Ventricular Outflow Tract"},
  }};
  return taxonomy;
}

std::optional<int64_t> section_index(std::string_view abbreviation) {
  const auto& t = section_taxonomy();
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i].abbreviation == abbreviation) return static_cast<int64_t>(i);
  }
  return std::nullopt;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  if (name == "unassigned") return Split::kUnassigned;
  throw InputError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

std::vector<std::array<int64_t, 3>> DatasetManifest::split_counts(int64_t num_classes) const {
  std::vector<std::array<int64_t, 3>> counts(static_cast<size_t>(num_classes), {0, 0, 0});
  for (const auto& r : records) {
    if (r.split == Split::kUnassigned || r.label < 0 || r.label >= num_classes) continue;
    ++counts[static_cast<size_t>(r.label)][static_cast<size_t>(r.split)];
  }
  return counts;
}

std::array<int64_t, 3> DatasetManifest::split_totals() const {
  std::array<int64_t, 3> totals{0, 0, 0};
  for (const auto& r : records) {
    if (r.split != Split::kUnassigned) ++totals[static_cast<size_t>(r.split)];
  }
  return totals;
}

std::vector<ManifestRecord> DatasetManifest::select(Split split) const {
  std::vector<ManifestRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [split](const ManifestRecord& r) { return r.split == split; });
  return out;
}

std::vector<int64_t> DatasetManifest::class_counts(int64_t num_classes) const {
  std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
  for (const auto& r : records) {
    if (r.label >= 0 && r.label < num_classes) ++counts[static_cast<size_t>(r.label)];
  }
  return counts;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("manifest: cannot open " + path.string() + " for writing");
  os << "# fpdanet-manifest v1 source=" << m.source << "\n";
  for (const auto& r : m.records) {
    if (r.path.find_first_of("\t\n") != std::string::npos) {
      throw InputError("manifest: path contains a tab or newline: " + r.path);
    }
    os << r.path << '\t' << r.label << '\t' << split_name(r.split) << '\n';
  }
  if (!os) throw InputError("manifest: write to " + path.string() + " failed");
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw LoadError("manifest: cannot open " + path.string());
  DatasetManifest m;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("source=");
      if (lineno == 1 && pos != std::string::npos) m.source = line.substr(pos + 7);
      continue;
    }
    std::istringstream fields(line);
    ManifestRecord r;
    std::string label, split;
    if (!std::getline(fields, r.path, '\t') || !std::getline(fields, label, '\t') ||
        !std::getline(fields, split, '\t')) {
      throw LoadError("manifest " + path.string() + ":" + std::to_string(lineno) +
                      ": expected <path>\\t<label>\\t<split>");
    }
    try {
      size_t used = 0;
      r.label = std::stoll(label, &used);
      if (used != label.size()) throw std::invalid_argument(label);
      r.split = parse_split(split);
    } catch (const std::exception& e) {
      throw LoadError("manifest " + path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

namespace {

bool has_image_extension(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

DatasetManifest scan_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw InputError("dataset root " + root.string() + " is not a directory");
  DatasetManifest m;
  m.source = "folder";
  std::set<std::string> known;
  for (const auto& cls : section_taxonomy()) known.emplace(cls.abbreviation);

  std::vector<std::string> subdirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) subdirs.push_back(entry.path().filename().string());
  }
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& d : subdirs) {
    if (!known.count(d)) m.unknown_directories.push_back(d);
  }

  const auto& taxonomy = section_taxonomy();
  for (size_t label = 0; label < taxonomy.size(); ++label) {
    const auto abbrev = std::string(taxonomy[label].abbreviation);
    const auto dir = root / abbrev;
    if (!fs::is_directory(dir)) {
      m.warnings.push_back("class directory " + abbrev + " is missing; class will be empty");
      continue;
    }
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file() || !has_image_extension(entry.path())) continue;
      if (!cv::haveImageReader(entry.path().string())) {
        m.warnings.push_back("skipping unreadable image " + entry.path().string());
        continue;
      }
      files.push_back(entry.path().filename().string());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      m.records.push_back({abbrev + "/" + f, static_cast<int64_t>(label), Split::kUnassigned});
    }
  }
  if (m.records.empty()) throw InputError("dataset root " + root.string() + " contains no images");
  return m;
}

std::array<int64_t, 3> apportion(int64_t n, const SplitRatios& ratios) {
  if (n < 0) throw InputError("apportion: negative count");
  for (double r : ratios) {
    if (!(r > 0.0)) throw InputError("split ratios must be positive");
  }
  const double total = ratios[0] + ratios[1] + ratios[2];
  std::array<int64_t, 3> counts{};
  std::array<double, 3> remainder{};
  int64_t assigned = 0;
  for (size_t k = 0; k < 3; ++k) {
    const double quota = static_cast<double>(n) * ratios[k] / total;
    counts[k] = static_cast<int64_t>(std::floor(quota));
    remainder[k] = quota - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  std::array<size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return remainder[a] > remainder[b]; });
  for (size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
  return counts;
}

DatasetManifest split_manifest(const DatasetManifest& m, const SplitRatios& ratios, uint64_t seed) {
  DatasetManifest out = m;
  std::map<int64_t, std::vector<size_t>> by_class;
  for (size_t i = 0; i < out.records.size(); ++i) by_class[out.records[i].label].push_back(i);

  const auto nonzero_slots = static_cast<int64_t>(ratios.size());
  for (auto& [label, idx] : by_class) {
    // Shuffle a path-sorted copy so the result is independent of record order.
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return out.records[a].path < out.records[b].path; });
    std::mt19937_64 rng(mix(seed ^ mix(static_cast<uint64_t>(label) + 1)));
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);

    const auto counts = apportion(static_cast<int64_t>(idx.size()), ratios);
    if (static_cast<int64_t>(idx.size()) < nonzero_slots) {
      const auto& tax = section_taxonomy();
      const std::string name = label >= 0 && label < kNumSections
                                   ? std::string(tax[static_cast<size_t>(label)].abbreviation)
                                   : std::to_string(label);
      out.warnings.push_back("class " + name + " has " + std::to_string(idx.size()) +
                             " images; some splits receive none");
    }
    size_t pos = 0;
    for (size_t k = 0; k < 3; ++k) {
      for (int64_t c = 0; c < counts[k]; ++c) out.records[idx[pos++]].split = static_cast<Split>(k);
    }
  }
  return out;
}

DatasetManifest manifest_from_counts_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw LoadError("counts file: cannot open " + path.string());
  DatasetManifest m;
  m.source = "fixture";
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string abbrev;
    std::array<int64_t, 3> counts{};
    if (!(fields >> abbrev >> counts[0] >> counts[1] >> counts[2])) {
      throw LoadError("counts file " + path.string() + ":" + std::to_string(lineno) +
                      ": expected <ABBREV> <train> <val> <test>");
    }
    const auto label = section_index(abbrev);
    if (!label) throw LoadError("counts file " + path.string() + ": unknown class " + abbrev);
    int64_t serial = 0;
    for (size_t k = 0; k < 3; ++k) {
      for (int64_t c = 0; c < counts[k]; ++c) {
        m.records.push_back({abbrev + "/" + std::to_string(serial++), *label, static_cast<Split>(k)});
      }
    }
  }
  return m;
}

}  // namespace fpdanet
