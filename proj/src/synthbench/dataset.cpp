#include <fstream>
#include <string>

#include "dscomp/image_io.hpp"
#include "dscomp/synthbench.hpp"
#include "json.hpp"

namespace dscomp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json pose_json(const Pose& p) {
  return {{"angle_deg", p.angle_deg}, {"scale", p.scale}, {"cx", p.cx},
          {"cy", p.cy},               {"src_cx", p.src_cx}, {"src_cy", p.src_cy}};
}

Pose pose_from(const json& j) {
  Pose p;
  p.angle_deg = j.at("angle_deg").get<double>();
  p.scale = j.at("scale").get<double>();
  p.cx = j.at("cx").get<double>();
  p.cy = j.at("cy").get<double>();
  p.src_cx = j.at("src_cx").get<double>();
  p.src_cy = j.at("src_cy").get<double>();
  return p;
}

}  // namespace

fs::path write_dataset(const std::vector<CompositionSample>& samples, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto manifest = dir / "manifest.jsonl";
  std::ofstream out(manifest, std::ios::binary);
  if (!out) throw IoError("cannot write " + manifest.string());
  for (const auto& s : samples) {
    s.validate();
    const std::string gt = s.id + "_gt.ppm", bg = s.id + "_bg.ppm", ref = s.id + "_ref.ppm";
    const std::string mbg = s.id + "_mask_bg.pgm", mref = s.id + "_mask_ref.pgm";
    write_ppm(dir / gt, s.gt);
    write_ppm(dir / bg, s.bg);
    write_ppm(dir / ref, s.ref);
    write_mask(dir / mbg, s.mask_bg);
    write_mask(dir / mref, s.mask_ref);
    const json rec{{"id", s.id}, {"gt", gt},         {"bg", bg},     {"ref", ref},
                   {"mask_bg", mbg}, {"mask_ref", mref}, {"seed", s.seed}, {"pose", pose_json(s.pose)}};
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + manifest.string());
  return manifest;
}

std::vector<CompositionSample> read_dataset(const fs::path& dir) {
  const auto manifest = dir / "manifest.jsonl";
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open " + manifest.string());
  std::vector<CompositionSample> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto rec = json::parse(line);
      CompositionSample s;
      s.id = rec.at("id").get<std::string>();
      s.gt = read_ppm(dir / rec.at("gt").get<std::string>());
      s.bg = read_ppm(dir / rec.at("bg").get<std::string>());
      s.ref = read_ppm(dir / rec.at("ref").get<std::string>());
      s.mask_bg = read_mask(dir / rec.at("mask_bg").get<std::string>());
      s.mask_ref = read_mask(dir / rec.at("mask_ref").get<std::string>());
      s.seed = rec.at("seed").get<std::uint64_t>();
      s.pose = pose_from(rec.at("pose"));
      s.validate();
      samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw IoError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return samples;
}

}  // namespace dscomp
