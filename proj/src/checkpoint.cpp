#include "lgmoe/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace lgmoe {

namespace {
constexpr char kMagic[4] = {'L', 'G', 'M', 'O'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  nlohmann::json header;
  header["config"] = model.cfg.to_json();
  nlohmann::json dir = nlohmann::json::array();
  for (const Param& p : model.params.items()) {
    dir.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  }
  header["tensors"] = dir;
  std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  LGMOE_CHECK(out.good(), "save_checkpoint: cannot open " << path);
  out.write(kMagic, 4);
  uint32_t ver = kVersion;
  out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const Param& p : model.params.items()) {
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(sizeof(double) * p.value.numel()));
  }
  LGMOE_CHECK(out.good(), "save_checkpoint: write failed for " << path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  LGMOE_CHECK(in.good(), "load_checkpoint: cannot open " << path);
  char magic[4];
  in.read(magic, 4);
  LGMOE_CHECK(in.good() && std::memcmp(magic, kMagic, 4) == 0,
              "load_checkpoint: " << path << " is not a checkpoint");
  uint32_t ver = 0;
  in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  LGMOE_CHECK(ver == kVersion, "load_checkpoint: unsupported version " << ver);
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  LGMOE_CHECK(in.good(), "load_checkpoint: truncated header in " << path);
  nlohmann::json header = nlohmann::json::parse(hs);

  Model model(ModelConfig::from_json(header.at("config")), /*seed=*/0);
  const auto& dir = header.at("tensors");
  LGMOE_CHECK(dir.size() == model.params.size(),
              "load_checkpoint: tensor count " << dir.size() << " does not match model ("
                                               << model.params.size() << ")");
  for (size_t i = 0; i < model.params.size(); ++i) {
    Param& p = model.params.at(static_cast<int>(i));
    LGMOE_CHECK(dir[i].at("name").get<std::string>() == p.name,
                "load_checkpoint: tensor order mismatch at " << p.name);
    auto shape = dir[i].at("shape").get<std::vector<int>>();
    LGMOE_CHECK(shape == p.value.shape(), "load_checkpoint: shape mismatch for " << p.name);
    in.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(sizeof(double) * p.value.numel()));
  }
  LGMOE_CHECK(in.good(), "load_checkpoint: truncated payload in " << path);
  return model;
}

}  // namespace lgmoe
