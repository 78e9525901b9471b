#include "kmpc/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace kmpc {

using nlohmann::json;

void save_tensors(const std::string& path, const std::map<std::string, Tensor>& tensors, const json& metadata) {
  json index;
  index["format"] = "ntc-v1";
  index["tensors"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    index["tensors"].push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.v.size();
  }
  index["metadata"] = metadata;
  std::string header = index.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  std::uint64_t hlen = header.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : tensors)
    f.write(reinterpret_cast<const char*>(t.v.data()), static_cast<std::streamsize>(t.v.size() * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

void save_tensors(const std::string& path, const std::map<std::string, Tensor>& tensors) {
  save_tensors(path, tensors, json::object());
}

TensorContainer load_tensors(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!f || hlen == 0 || hlen > (1ull << 30)) throw std::runtime_error("checkpoint: bad header length in '" + path + "'");
  std::string header(hlen, '\0');
  f.read(header.data(), static_cast<std::streamsize>(hlen));
  json index = json::parse(header);
  if (index.value("format", "") != "ntc-v1")
    throw std::runtime_error("checkpoint: unsupported container format in '" + path + "'");

  std::vector<char> blob(std::istreambuf_iterator<char>(f), {});
  std::size_t n_doubles = blob.size() / sizeof(double);

  TensorContainer out;
  out.metadata = index.value("metadata", json::object());
  for (const auto& e : index.at("tensors")) {
    std::string name = e.at("name").get<std::string>();
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    std::uint64_t offset = e.at("offset").get<std::uint64_t>();
    std::size_t count = Tensor::count(shape);
    if (offset + count > n_doubles)
      throw std::runtime_error("checkpoint: tensor '" + name + "' exceeds blob in '" + path + "'");
    std::vector<double> v(count);
    std::memcpy(v.data(), blob.data() + offset * sizeof(double), count * sizeof(double));
    out.tensors.emplace(name, Tensor(shape, std::move(v)));
  }
  return out;
}

}  // namespace kmpc
