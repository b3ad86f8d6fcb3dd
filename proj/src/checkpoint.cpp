#include "fpdanet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "fpdanet/errors.hpp"

namespace fpdanet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'P', 'D', 'A', 'N', 'E', 'T', '\0'};

enum class DType : uint8_t { kFloat32 = 0, kFloat64 = 1, kInt64 = 2 };

DType dtype_code(const torch::Tensor& t) {
  switch (t.scalar_type()) {
    case torch::kFloat: return DType::kFloat32;
    case torch::kDouble: return DType::kFloat64;
    case torch::kLong: return DType::kInt64;
    default: throw InputError(std::string("checkpoint: unsupported dtype ") + c10::toString(t.scalar_type()));
  }
}

torch::ScalarType scalar_type(DType code) {
  switch (code) {
    case DType::kFloat32: return torch::kFloat;
    case DType::kFloat64: return torch::kDouble;
    case DType::kInt64: return torch::kLong;
  }
  throw LoadError("checkpoint: unknown dtype code " + std::to_string(static_cast<int>(code)));
}

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw LoadError("checkpoint " + path.string() + ": truncated archive");
  }
  return v;
}

std::string get_bytes(std::istream& is, uint64_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw LoadError("checkpoint " + path.string() + ": truncated archive");
  }
  return s;
}

}  // namespace

void write_tensor_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<uint32_t>(os, kCheckpointVersion);
  const std::string manifest = archive.manifest.dump(2);
  put<uint64_t>(os, manifest.size());
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  put<uint64_t>(os, archive.tensors.size());
  for (const auto& [name, tensor] : archive.tensors) {
    auto t = tensor.detach().contiguous().cpu();
    put<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint8_t>(os, static_cast<uint8_t>(dtype_code(t)));
    put<uint32_t>(os, static_cast<uint32_t>(t.dim()));
    for (int64_t extent : t.sizes()) put<int64_t>(os, extent);
    os.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
  }
  if (!os) throw InputError("checkpoint: write to " + path.string() + " failed");
}

TensorArchive read_tensor_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("checkpoint: cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw LoadError("checkpoint " + path.string() + ": not an FPDANet archive");
  }
  const auto version = get<uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint " + path.string() + ": version " + std::to_string(version) +
                    " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  TensorArchive archive;
  const auto manifest_len = get<uint64_t>(is, path);
  try {
    archive.manifest = nlohmann::json::parse(get_bytes(is, manifest_len, path));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("checkpoint " + path.string() + ": malformed manifest: " + e.what());
  }
  const auto count = get<uint64_t>(is, path);
  for (uint64_t k = 0; k < count; ++k) {
    const auto name = get_bytes(is, get<uint32_t>(is, path), path);
    const auto type = scalar_type(static_cast<DType>(get<uint8_t>(is, path)));
    const auto rank = get<uint32_t>(is, path);
    std::vector<int64_t> sizes(rank);
    for (auto& s : sizes) s = get<int64_t>(is, path);
    auto t = torch::empty(sizes, torch::TensorOptions().dtype(type));
    if (t.nbytes() > 0 && !is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()))) {
      throw LoadError("checkpoint " + path.string() + ": truncated data for " + name);
    }
    archive.tensors.emplace(name, std::move(t));
  }
  return archive;
}

std::map<std::string, torch::Tensor> named_state(const torch::nn::Module& module) {
  std::map<std::string, torch::Tensor> state;
  for (const auto& item : module.named_parameters(true)) state.emplace(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) state.emplace(item.key(), item.value());
  return state;
}

void save_checkpoint(const FPDANet& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata) {
  TensorArchive archive;
  archive.manifest = {{"format", "fpdanet-checkpoint"},
                      {"version", kCheckpointVersion},
                      {"model", model->config()},
                      {"metadata", metadata}};
  archive.tensors = named_state(*model);
  write_tensor_archive(path, archive);
}

void load_state(torch::nn::Module& module, const std::map<std::string, torch::Tensor>& state) {
  auto target = named_state(module);
  std::vector<std::string> missing, unexpected, mismatched;
  for (const auto& [name, tensor] : target) {
    auto it = state.find(name);
    if (it == state.end()) {
      missing.push_back(name);
    } else if (it->second.sizes() != tensor.sizes()) {
      std::ostringstream os;
      os << name << " (archive " << it->second.sizes() << ", model " << tensor.sizes() << ")";
      mismatched.push_back(os.str());
    }
  }
  for (const auto& [name, _] : state) {
    if (!target.count(name)) unexpected.push_back(name);
  }
  if (!missing.empty() || !unexpected.empty() || !mismatched.empty()) {
    std::ostringstream os;
    os << "checkpoint does not match the model:";
    auto list = [&os](const char* what, const std::vector<std::string>& names) {
      if (names.empty()) return;
      os << "\n  " << what << ":";
      for (const auto& n : names) os << "\n    " << n;
    };
    list("missing keys", missing);
    list("unexpected keys", unexpected);
    list("shape mismatches", mismatched);
    throw LoadError(os.str());
  }
  torch::NoGradGuard no_grad;
  for (auto& [name, tensor] : target) {
    const auto& src = state.at(name);
    if (tensor.scalar_type() != src.scalar_type()) tensor.set_data(tensor.to(src.scalar_type()));
    tensor.copy_(src);
  }
}

namespace {

Checkpoint load_with(const std::filesystem::path& path, const ModelConfig* expected) {
  auto archive = read_tensor_archive(path);
  const auto& m = archive.manifest;
  if (m.value("format", "") != "fpdanet-checkpoint" || !m.contains("model")) {
    throw LoadError("checkpoint " + path.string() + ": manifest lacks format/model entries");
  }
  Checkpoint ck;
  if (expected) {
    ck.config = *expected;
  } else {
    try {
      ck.config = m.at("model").get<ModelConfig>();
    } catch (const ConfigError& e) {
      throw LoadError("checkpoint " + path.string() + ": bad model config: " + e.what());
    }
  }
  ck.metadata = m.value("metadata", nlohmann::json::object());
  ck.model = FPDANet(ck.config);
  load_state(*ck.model, archive.tensors);
  return ck;
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path) { return load_with(path, nullptr); }

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  return load_with(path, &expected);
}

}  // namespace fpdanet
