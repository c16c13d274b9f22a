#include "hli/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace hli {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "hli-checkpoint-v1";

std::filesystem::path with_ext(std::filesystem::path p, const char* ext) {
  if (p.extension() == ".json" || p.extension() == ".bin") p.replace_extension();
  p += ext;
  return p;
}

void write_le(std::ofstream& out, double v) {
  static_assert(sizeof(double) == 8);
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

double read_le(const unsigned char* buf) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const CheckpointMeta& meta) {
  const auto json_path = with_ext(path, ".json");
  const auto bin_path = with_ext(path, ".bin");
  if (json_path.has_parent_path()) std::filesystem::create_directories(json_path.parent_path());

  json manifest;
  manifest["format"] = kFormat;
  manifest["role"] = meta.role;
  manifest["step"] = meta.step;
  manifest["config_hash"] = meta.config_hash;
  manifest["payload"] = bin_path.filename().string();
  manifest["arch"] = {{"in_channels", meta.arch.in_channels},
                      {"height", meta.arch.height},
                      {"width", meta.arch.width},
                      {"channels", meta.arch.channels},
                      {"num_classes", meta.arch.num_classes},
                      {"bn_eps", meta.arch.bn_eps},
                      {"bn_momentum", meta.arch.bn_momentum}};
  json tensors = json::array();

  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw Error("cannot write " + bin_path.string());
  std::uint64_t offset = 0;
  for (const auto& e : params.entries()) {
    tensors.push_back({{"name", e.name},
                       {"shape", e.value.shape},
                       {"dtype", "float64"},
                       {"offset", offset},
                       {"trainable", e.trainable}});
    for (double v : e.value.data) write_le(bin, v);
    offset += e.value.size() * 8;
  }
  if (!bin) throw Error("write failed: " + bin_path.string());
  manifest["tensors"] = std::move(tensors);
  manifest["payload_bytes"] = offset;

  std::ofstream js(json_path);
  if (!js) throw Error("cannot write " + json_path.string());
  js << manifest.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto json_path = with_ext(path, ".json");
  std::ifstream js(json_path);
  if (!js) throw Error("cannot read checkpoint manifest " + json_path.string());
  json manifest;
  try {
    js >> manifest;
  } catch (const json::exception& e) {
    throw Error("malformed checkpoint manifest " + json_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat) throw Error(json_path.string() + ": unsupported checkpoint format");

  LoadedCheckpoint out;
  out.meta.role = manifest.at("role").get<std::string>();
  out.meta.step = manifest.at("step").get<std::int64_t>();
  out.meta.config_hash = manifest.at("config_hash").get<std::string>();
  const json& a = manifest.at("arch");
  out.meta.arch.in_channels = a.at("in_channels");
  out.meta.arch.height = a.at("height");
  out.meta.arch.width = a.at("width");
  out.meta.arch.channels = a.at("channels").get<std::vector<int>>();
  out.meta.arch.num_classes = a.at("num_classes");
  out.meta.arch.bn_eps = a.at("bn_eps");
  out.meta.arch.bn_momentum = a.at("bn_momentum");

  const auto bin_path = json_path.parent_path() / manifest.at("payload").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw Error("cannot read checkpoint payload " + bin_path.string());
  std::vector<unsigned char> payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (payload.size() != manifest.at("payload_bytes").get<std::uint64_t>()) {
    throw Error(bin_path.string() + ": payload size does not match manifest");
  }

  for (const json& t : manifest.at("tensors")) {
    if (t.at("dtype") != "float64") throw Error("unsupported dtype in " + json_path.string());
    Tensor value(t.at("shape").get<std::vector<int>>());
    const auto offset = t.at("offset").get<std::uint64_t>();
    if (offset + value.size() * 8 > payload.size()) {
      throw Error(json_path.string() + ": tensor '" + t.at("name").get<std::string>() + "' exceeds payload");
    }
    for (std::size_t i = 0; i < value.size(); ++i) value.data[i] = read_le(payload.data() + offset + 8 * i);
    out.params.add(t.at("name").get<std::string>(), std::move(value), t.at("trainable").get<bool>());
  }
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelParams& expected) {
  LoadedCheckpoint out = load_checkpoint(path);
  if (!out.params.same_schema(expected)) {
    throw Error("checkpoint schema mismatch: expected " + expected.schema_string() + " got " +
                out.params.schema_string());
  }
  return out;
}

}  // namespace hli
