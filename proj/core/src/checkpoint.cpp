#include "lupi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace lupi {

static const char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::uint8_t* data, std::size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    std::uint32_t v = data[i] << 16;
    if (i + 1 < len) v |= data[i + 1] << 8;
    if (i + 2 < len) v |= data[i + 2];
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(i + 1 < len ? kB64[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? kB64[v & 63] : '=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& s) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  int acc = 0, bits = 0;
  for (char c : s) {
    if (c == '=') break;
    int v = val(c);
    if (v < 0) throw CheckpointError("invalid base64 character");
    acc = (acc << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

static std::string encode_doubles(const Tensor& t) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  return base64_encode(reinterpret_cast<const std::uint8_t*>(t.data()),
                       t.size() * sizeof(double));
}

std::string checkpoint_to_json(const Model& model, std::uint64_t seed) {
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["arch"] = model.arch().fingerprint();
  doc["kind"] = model_kind_name(model.kind());
  doc["seed"] = seed;
  nlohmann::json params = nlohmann::json::object();
  for (const auto& p : model.params()) {
    nlohmann::json entry;
    entry["shape"] = p.value->value.shape();
    entry["data"] = encode_doubles(p.value->value);
    params[p.name] = std::move(entry);
  }
  doc["params"] = std::move(params);
  return doc.dump();
}

void save_checkpoint(const Model& model, std::uint64_t seed, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
  f << checkpoint_to_json(model, seed);
}

void load_checkpoint(Model& model, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path);
  nlohmann::json doc;
  try {
    f >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint parse error: ") + e.what());
  }
  if (doc.value("format_version", 0) != 1)
    throw CheckpointError("unsupported checkpoint format_version");
  std::string arch = doc.value("arch", "");
  if (arch != model.arch().fingerprint()) {
    throw CheckpointError("arch fingerprint mismatch: checkpoint " + arch + " vs model " +
                          model.arch().fingerprint());
  }
  const auto& params = doc.at("params");
  for (const auto& p : model.params()) {
    if (!params.contains(p.name))
      throw CheckpointError("checkpoint missing parameter " + p.name);
    const auto& entry = params.at(p.name);
    std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != p.value->value.shape())
      throw CheckpointError("shape mismatch for parameter " + p.name);
    auto bytes = base64_decode(entry.at("data").get<std::string>());
    if (bytes.size() != p.value->value.size() * sizeof(double))
      throw CheckpointError("payload size mismatch for parameter " + p.name);
    std::memcpy(p.value->value.data(), bytes.data(), bytes.size());
  }
}

}  // namespace lupi
