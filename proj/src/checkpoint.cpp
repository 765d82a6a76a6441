#include "st/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace st {

namespace {
constexpr char kMagic[8] = {'S', 'T', 'C', 'K', 'P', 'T', '0', '1'};
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["manifest"] = nlohmann::json::parse(ckpt.manifest_json.empty() ? "{}" : ckpt.manifest_json);
  nlohmann::json table = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& e : ckpt.tensors.entries()) {
    table.push_back({{"name", e.name},
                     {"shape", e.value.shape()},
                     {"trainable", e.trainable},
                     {"offset", offset},
                     {"count", e.value.numel()}});
    offset += uint64_t(e.value.numel());
  }
  header["tensors"] = std::move(table);
  std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, 8);
  uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& e : ckpt.tensors.entries())
    out.write(reinterpret_cast<const char*>(e.value.data()),
              std::streamsize(e.value.numel() * 8));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string hs(len, '\0');
  in.read(hs.data(), std::streamsize(len));
  nlohmann::json header = nlohmann::json::parse(hs);

  Checkpoint ckpt;
  ckpt.manifest_json = header.at("manifest").dump();
  for (const auto& t : header.at("tensors")) {
    std::vector<int> shape = t.at("shape").get<std::vector<int>>();
    Tensor tensor(shape);
    in.read(reinterpret_cast<char*>(tensor.data()), std::streamsize(tensor.numel() * 8));
    ckpt.tensors.add(t.at("name").get<std::string>(), std::move(tensor),
                     t.at("trainable").get<bool>());
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return ckpt;
}

}  // namespace st
