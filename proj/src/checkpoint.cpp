#include "sedt/checkpoint.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sedt {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'S', 'E', 'D', 'T', 'C', 'K', 'P', 'T'};
}

std::string config_hash(const std::string& canonical_json) {
  // FNV-1a 64-bit over the canonical JSON dump.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_json) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json header;
  header["format_version"] = ckpt.format_version;
  header["config"] = json::parse(ckpt.config_json.empty() ? "{}" : ckpt.config_json);
  header["config_hash"] = ckpt.config_hash;
  header["norm_mean"] = ckpt.norm_mean;
  header["norm_std"] = ckpt.norm_std;
  header["tensors"] = json::array();
  for (const auto& name : ckpt.tensor_order) {
    const auto& m = ckpt.tensors.at(name);
    header["tensors"].push_back(
        {{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const auto len = static_cast<uint64_t>(header_str.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& name : ckpt.tensor_order) {
    const auto& m = ckpt.tensors.at(name);
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(m.size())));
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path,
                           const std::string& expected_config_hash,
                           bool force_transfer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header_str(len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  const json header = json::parse(header_str);

  Checkpoint ckpt;
  ckpt.format_version = header.at("format_version").get<int>();
  if (ckpt.format_version != 1)
    throw std::runtime_error("unsupported checkpoint format version");
  ckpt.config_json = header.at("config").dump();
  ckpt.config_hash = header.at("config_hash").get<std::string>();
  ckpt.norm_mean = header.at("norm_mean").get<std::vector<double>>();
  ckpt.norm_std = header.at("norm_std").get<std::vector<double>>();

  if (!expected_config_hash.empty() && expected_config_hash != ckpt.config_hash &&
      !force_transfer) {
    throw std::runtime_error(
        "checkpoint config hash " + ckpt.config_hash + " does not match " +
        expected_config_hash + "; pass --force-transfer to load anyway");
  }

  for (const auto& jt : header.at("tensors")) {
    const auto name = jt.at("name").get<std::string>();
    Eigen::MatrixXf m(jt.at("rows").get<Eigen::Index>(),
                      jt.at("cols").get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(m.size())));
    if (!in) throw std::runtime_error("truncated checkpoint tensor: " + name);
    ckpt.tensor_order.push_back(name);
    ckpt.tensors[name] = std::move(m);
  }
  return ckpt;
}

}  // namespace sedt
