#include "dscomp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "spec_json.hpp"

namespace dscomp {

static_assert(std::endian::native == std::endian::little, "checkpoint blob assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'S', 'C', 'K', 'P', 'T', '0', '1'};

struct Parsed {
  nlohmann::json header;
  std::vector<char> blob;
};

Parsed parse(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("checkpoint: " + path.string() + " is not a checkpoint (bad magic)");
  }
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 26)) {
    throw IoError("checkpoint: " + path.string() + " has a truncated or oversized header");
  }
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw IoError("checkpoint: truncated header in " + path.string());
  Parsed p;
  try {
    p.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: malformed header in " + path.string() + ": " + e.what());
  }
  p.blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return p;
}

CheckpointInfo info_from(const nlohmann::json& header, const std::filesystem::path& path) {
  CheckpointInfo info;
  try {
    from_json(header.at("model"), info.spec);
    if (header.contains("metadata")) header.at("metadata").get_to(info.metadata);
  } catch (const std::exception& e) {
    throw IoError("checkpoint: bad model description in " + path.string() + ": " + e.what());
  }
  return info;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, CompositionModel& model,
                     const std::map<std::string, std::string>& metadata) {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  const auto params = model.parameters();
  for (auto* p : params) {
    const std::uint64_t bytes = p->numel() * sizeof(float);
    index.push_back({{"name", p->name}, {"shape", p->shape()}, {"offset", offset}, {"bytes", bytes},
                     {"precision", "float32"}});
    offset += bytes;
  }
  const nlohmann::json header = {{"format", "dscomp-checkpoint"}, {"version", 1}, {"model", to_json(model.spec())},
                                 {"metadata", metadata}, {"tensors", index}};
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  const auto tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot write " + tmp);
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(len));
    for (auto* p : params) {
      out.write(reinterpret_cast<const char*>(p->value().ptr()),
                static_cast<std::streamsize>(p->numel() * sizeof(float)));
    }
    if (!out) throw IoError("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  return info_from(parse(path).header, path);
}

CompositionModel load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  const auto parsed = parse(path);
  auto meta = info_from(parsed.header, path);
  auto model = CompositionModel::build(meta.spec);
  std::set<std::string> seen;
  try {
    for (const auto& entry : parsed.header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      auto* p = model.find(name);
      if (!p) throw IoError("checkpoint: unexpected tensor '" + name + "' in " + path.string());
      if (entry.at("precision").get<std::string>() != "float32") {
        throw IoError("checkpoint: tensor '" + name + "' has unsupported precision");
      }
      const auto shape = entry.at("shape").get<Shape>();
      if (shape != p->shape()) {
        throw IoError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                      shape_str(p->shape()));
      }
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const std::uint64_t bytes = p->numel() * sizeof(float);
      if (offset + bytes > parsed.blob.size()) throw IoError("checkpoint: tensor '" + name + "' runs past end of file");
      std::memcpy(p->mutable_value().ptr(), parsed.blob.data() + offset, bytes);
      seen.insert(name);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: malformed index in " + path.string() + ": " + e.what());
  }
  for (auto* p : model.parameters()) {
    if (!seen.count(p->name)) throw IoError("checkpoint: missing tensor '" + p->name + "' in " + path.string());
  }
  if (info) *info = std::move(meta);
  return model;
}

}  // namespace dscomp
