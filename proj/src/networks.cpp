#include "psgan/networks.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace psgan::nn {

namespace fs = std::filesystem;
using json = nlohmann::json;

template struct NetworkBundle<float>;
template struct NetworkBundle<double>;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'P', 'S', 'G', 'A', 'N', 'P', 'P', '1'};
}

void ArchSpec::validate() const {
  if (!is_supported_size(input_size)) throw ShapeError("input_size must be 64, 256 or 512");
  if (base_width < 1 || disc_width < 1) throw ShapeError("network widths must be positive");
  if (amm_split_index < 0 || amm_split_index > bottleneck_blocks)
    throw ShapeError("amm_split_index must lie within the bottleneck");
}

json arch_to_json(const ArchSpec& a) {
  return {{"input_size", a.input_size},
          {"base_width", a.base_width},
          {"bottleneck_blocks", a.bottleneck_blocks},
          {"amm_split_index", a.amm_split_index},
          {"channels_at_split", a.channels_at_split()},
          {"disc_width", a.disc_width}};
}

ArchSpec arch_from_json(const json& j) {
  ArchSpec a;
  a.input_size = j.at("input_size").get<int>();
  a.base_width = j.at("base_width").get<int>();
  a.bottleneck_blocks = j.at("bottleneck_blocks").get<int>();
  a.amm_split_index = j.at("amm_split_index").get<int>();
  a.disc_width = j.value("disc_width", a.base_width);
  if (j.contains("channels_at_split") && j["channels_at_split"].get<int>() != a.channels_at_split())
    throw ShapeError("checkpoint metadata: channels_at_split inconsistent with base_width");
  a.validate();
  return a;
}

void save_checkpoint(const NetworkBundle<float>& bundle, const fs::path& path, const CheckpointExtras* extras) {
  json header;
  header["format"] = 1;
  header["metadata"] = arch_to_json(bundle.arch);
  header["tensors"] = json::array();
  std::vector<const Eigen::ArrayXf*> blobs;
  std::uint64_t offset = 0;
  auto add = [&](const std::string& name, const Eigen::ArrayXf& data, const Shape& shape) {
    header["tensors"].push_back(
        {{"name", name}, {"shape", {shape.n, shape.c, shape.h, shape.w}}, {"offset", offset}, {"count", data.size()}});
    blobs.push_back(&data);
    offset += std::uint64_t(data.size());
  };
  for (const auto& [name, t] : bundle.named_parameters()) add(name, t.value(), t.shape());
  if (extras) {
    for (const auto& [name, data] : extras->tensors) add(name, data, Shape{1, 1, 1, int(data.size())});
    if (!extras->train_state.is_null()) header["train_state"] = extras->train_state;
  }
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint " + tmp.string() + " for writing");
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), std::streamsize(text.size()));
    for (const auto* b : blobs) out.write(reinterpret_cast<const char*>(b->data()), std::streamsize(b->size() * sizeof(float)));
    out.flush();
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp.string() + " (disk full?)");
  }
  fs::rename(tmp, path);
}

NetworkBundle<float> load_checkpoint(const fs::path& path, const ArchSpec* expected, CheckpointExtras* extras) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0 || len > (1u << 30))
    throw std::runtime_error("corrupt checkpoint " + path.string() + ": bad header");
  std::string text(len, '\0');
  in.read(text.data(), std::streamsize(len));
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  const ArchSpec arch = arch_from_json(header.at("metadata"));
  if (expected && !(arch == *expected))
    throw ShapeError("checkpoint metadata " + arch_to_json(arch).dump() + " does not match configuration " +
                     arch_to_json(*expected).dump());

  const auto data_start = in.tellg();
  std::vector<float> data;
  {
    in.seekg(0, std::ios::end);
    const auto bytes = std::uint64_t(in.tellg() - data_start);
    if (bytes % sizeof(float) != 0) throw std::runtime_error("corrupt checkpoint " + path.string() + ": truncated data");
    data.resize(bytes / sizeof(float));
    in.seekg(data_start);
    in.read(reinterpret_cast<char*>(data.data()), std::streamsize(bytes));
    if (!in) throw std::runtime_error("corrupt checkpoint " + path.string() + ": read failed");
  }

  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> index;
  for (const auto& t : header.at("tensors")) {
    const auto off = t.at("offset").get<std::uint64_t>();
    const auto cnt = t.at("count").get<std::uint64_t>();
    if (off + cnt > data.size()) throw std::runtime_error("corrupt checkpoint " + path.string() + ": tensor out of range");
    index[t.at("name").get<std::string>()] = {off, cnt};
  }

  NetworkBundle<float> bundle = NetworkBundle<float>::create(arch, 0);
  for (auto& [name, t] : bundle.named_parameters()) {
    auto it = index.find(name);
    if (it == index.end()) throw std::runtime_error("corrupt checkpoint " + path.string() + ": missing tensor " + name);
    if (Eigen::Index(it->second.second) != t.value().size())
      throw ShapeError("checkpoint tensor " + name + " has the wrong size for its metadata");
    auto& v = t.mutable_value();
    std::memcpy(v.data(), data.data() + it->second.first, it->second.second * sizeof(float));
    index.erase(it);
  }
  if (extras) {
    extras->tensors.clear();
    for (const auto& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      if (!index.count(name)) continue;
      const auto [off, cnt] = index[name];
      extras->tensors.emplace_back(name, Eigen::Map<const Eigen::ArrayXf>(data.data() + off, Eigen::Index(cnt)));
    }
    extras->train_state = header.value("train_state", json());
  }
  return bundle;
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), std::streamsize(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), std::size_t(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  EVP_DigestFinal_ex(ctx, md, &n);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < n; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

}  // namespace psgan::nn
