#include "dscomp/curation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "dscomp/image_io.hpp"

namespace dscomp {

namespace {

double variance(const std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double acc = 0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / double(v.size());
}

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
  std::size_t find(std::size_t i) {
    while (parent_[i] != i) i = parent_[i] = parent_[parent_[i]];
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

void check_mask(const Tensor32& mask) {
  if (mask.shape().size() != 3 || mask.dim(0) != 1) {
    throw ShapeError("mask must be [1 x H x W], got " + shape_str(mask.shape()));
  }
}

}  // namespace

Tensor32 luma(const Tensor32& img) {
  if (img.shape().size() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) {
    throw ShapeError("luma: expected [1|3 x H x W], got " + shape_str(img.shape()));
  }
  if (img.dim(0) == 1) return img;
  const auto h = img.dim(1), w = img.dim(2);
  Tensor32 out({1, h, w});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const double v = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
      out.at(0, y, x) = float(std::clamp(std::round(v), 0.0, 255.0));
    }
  return out;
}

Sharpness sharpness_scores(const Tensor32& img) {
  const auto g = luma(img);
  const auto h = g.dim(1), w = g.dim(2);
  if (h < 3 || w < 3) throw std::invalid_argument("sharpness_scores: image must be at least 3x3, got " + shape_str(img.shape()));
  std::vector<double> sobel, lap;
  sobel.reserve(static_cast<std::size_t>((h - 2) * (w - 2)));
  lap.reserve(sobel.capacity());
  auto p = [&](std::int64_t y, std::int64_t x) { return double(g.at(0, y, x)); };
  for (std::int64_t y = 1; y + 1 < h; ++y)
    for (std::int64_t x = 1; x + 1 < w; ++x) {
      const double gx = (p(y - 1, x + 1) + 2 * p(y, x + 1) + p(y + 1, x + 1)) -
                        (p(y - 1, x - 1) + 2 * p(y, x - 1) + p(y + 1, x - 1));
      const double gy = (p(y + 1, x - 1) + 2 * p(y + 1, x) + p(y + 1, x + 1)) -
                        (p(y - 1, x - 1) + 2 * p(y - 1, x) + p(y - 1, x + 1));
      sobel.push_back(std::sqrt(gx * gx + gy * gy));
      lap.push_back(p(y - 1, x) + p(y + 1, x) + p(y, x - 1) + p(y, x + 1) - 4 * p(y, x));
    }
  return {variance(sobel), variance(lap)};
}

bool blur_filter(const Sharpness& s, const CurationThresholds& th) {
  return !(s.sobel_var < th.min_sobel_var || s.laplacian_var < th.min_laplacian_var);
}

double largest_cc_ratio(const Tensor32& mask) {
  check_mask(mask);
  const auto h = mask.dim(1), w = mask.dim(2);
  std::vector<int> label(static_cast<std::size_t>(h * w), -1);
  std::vector<std::int64_t> stack;
  std::int64_t total = 0, best = 0;
  for (std::int64_t start = 0; start < h * w; ++start) {
    if (mask[static_cast<std::size_t>(start)] == 0.0f || label[static_cast<std::size_t>(start)] >= 0) continue;
    std::int64_t area = 0;
    stack.assign(1, start);
    label[static_cast<std::size_t>(start)] = 1;
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      ++area;
      const auto y = i / w, x = i % w;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
          const auto j = static_cast<std::size_t>(yy * w + xx);
          if (mask[j] != 0.0f && label[j] < 0) {
            label[j] = 1;
            stack.push_back(yy * w + xx);
          }
        }
    }
    total += area;
    best = std::max(best, area);
  }
  if (total == 0) throw std::invalid_argument("largest_cc_ratio: mask has no foreground");
  return double(best) / double(total);
}

bool mask_filter(const Tensor32& mask, const CurationThresholds& th) {
  return largest_cc_ratio(mask) > th.min_component_ratio;
}

std::vector<int> cluster_objects(const std::vector<std::vector<double>>& embeddings, double threshold) {
  const auto n = embeddings.size();
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0;
    for (double v : embeddings[i]) norm += v * v;
    if (std::abs(std::sqrt(norm) - 1) > 1e-6) {
      throw std::invalid_argument("cluster_objects: embedding " + std::to_string(i) + " is not unit norm");
    }
    if (embeddings[i].size() != embeddings[0].size()) {
      throw std::invalid_argument("cluster_objects: embeddings differ in dimension");
    }
  }
  DisjointSets sets(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double c = std::inner_product(embeddings[i].begin(), embeddings[i].end(), embeddings[j].begin(), 0.0);
      if (c >= threshold) sets.unite(i, j);
    }
  std::vector<int> out(n);
  std::map<std::size_t, int> ids;
  for (std::size_t i = 0; i < n; ++i) {
    const auto root = sets.find(i);
    auto it = ids.find(root);
    if (it == ids.end()) it = ids.emplace(root, static_cast<int>(ids.size())).first;
    out[i] = it->second;
  }
  return out;
}

Tensor32 crop(const Tensor32& img, const Box& box) {
  const auto h = img.dim(1), w = img.dim(2);
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > w || box.y1 > h || box.x0 >= box.x1 || box.y0 >= box.y1) {
    throw std::invalid_argument("crop: box [" + std::to_string(box.x0) + "," + std::to_string(box.y0) + "," +
                                std::to_string(box.x1) + "," + std::to_string(box.y1) + ") outside " +
                                shape_str(img.shape()));
  }
  Tensor32 out({img.dim(0), box.y1 - box.y0, box.x1 - box.x0});
  for (std::int64_t c = 0; c < img.dim(0); ++c)
    for (int y = box.y0; y < box.y1; ++y)
      for (int x = box.x0; x < box.x1; ++x) out.at(c, y - box.y0, x - box.x0) = img.at(c, y, x);
  return out;
}

std::vector<double> histogram_embedding(const ObjectCrop& c) {
  const auto& img = c.image;
  const auto ch = img.dim(0);
  std::vector<double> hist(static_cast<std::size_t>(ch * 4), 0.0);
  const auto plane = static_cast<std::size_t>(img.dim(1) * img.dim(2));
  for (std::int64_t k = 0; k < ch; ++k)
    for (std::size_t i = 0; i < plane; ++i) {
      const int bin = std::clamp(static_cast<int>(img[static_cast<std::size_t>(k) * plane + i] / 64.0f), 0, 3);
      hist[static_cast<std::size_t>(k * 4 + bin)] += 1;
    }
  double norm = 0;
  for (double v : hist) norm += v * v;
  for (double& v : hist) v /= std::sqrt(norm);
  return hist;
}

OracleHooks recorded_hooks() {
  OracleHooks hooks;
  hooks.verify = [](const ObjectCrop& c) { return c.detection->verified.value_or(true); };
  hooks.embed = [](const ObjectCrop& c) {
    if (c.detection->embedding.empty()) return histogram_embedding(c);
    auto v = c.detection->embedding;
    double norm = 0;
    for (double x : v) norm += x * x;
    for (double& x : v) x /= std::sqrt(norm);
    return v;
  };
  return hooks;
}

CurationResult build_pairs(std::vector<FrameRecord> frames, const OracleHooks& hooks, const CurationThresholds& th) {
  CurationResult result;
  result.frames = std::move(frames);
  auto& stats = result.stats;
  stats.frames = static_cast<int>(result.frames.size());

  struct Instance {
    const FrameRecord* frame;
    const Detection* detection;
    std::size_t order;  // position of the frame in the input
    std::vector<double> embedding;
  };
  std::vector<std::string> sources;  // first-appearance order
  std::map<std::string, std::vector<Instance>> by_source;

  for (std::size_t fi = 0; fi < result.frames.size(); ++fi) {
    auto& f = result.frames[fi];
    f.sharpness = sharpness_scores(f.image);
    if (!blur_filter(f.sharpness, th)) {
      ++stats.blurry;
      f.detections.clear();
      continue;
    }
    if (hooks.detect) f.detections = hooks.detect(f);
    stats.detections += static_cast<int>(f.detections.size());
    std::vector<Detection> kept;
    std::vector<std::vector<double>> embeddings;
    for (auto& d : f.detections) {
      ObjectCrop c{&f, &d, crop(f.image, d.box)};
      if (hooks.verify && !hooks.verify(c)) {
        ++stats.rejected_by_verifier;
        continue;
      }
      bool empty = std::all_of(d.mask.data().begin(), d.mask.data().end(), [](float v) { return v == 0.0f; });
      if (d.mask.numel() == 0 || empty || !mask_filter(d.mask, th)) {
        ++stats.rejected_by_mask;
        continue;
      }
      embeddings.push_back(hooks.embed ? hooks.embed(c) : histogram_embedding(c));
      kept.push_back(d);
    }
    f.detections = std::move(kept);
    if (!by_source.count(f.source)) sources.push_back(f.source);
    auto& list = by_source[f.source];
    for (std::size_t k = 0; k < f.detections.size(); ++k) list.push_back({&f, &f.detections[k], fi, embeddings[k]});
  }

  for (const auto& source : sources) {
    const auto& list = by_source[source];
    std::vector<std::vector<double>> emb;
    for (const auto& inst : list) emb.push_back(inst.embedding);
    const auto labels = cluster_objects(emb, th.cluster_cosine);
    const int n_clusters = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    stats.clusters += n_clusters;
    for (int k = 0; k < n_clusters; ++k) {
      // One instance per frame, earliest frame first.
      std::vector<const Instance*> members;
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (labels[i] != k) continue;
        if (!members.empty() && members.back()->frame == list[i].frame) continue;
        members.push_back(&list[i]);
      }
      if (members.size() < 2) {
        ++stats.singleton_clusters;
        continue;
      }
      const std::string name = source + "/" + std::to_string(k);
      for (std::size_t m = 1; m < members.size(); ++m) {
        result.pairs.push_back(
            {name, members[0]->frame, members[0]->detection, members[m]->frame, members[m]->detection});
      }
    }
  }
  stats.pairs = static_cast<int>(result.pairs.size());
  return result;
}

void write_pair_manifest(std::ostream& out, const CurationResult& result) {
  auto frame_json = [](const FrameRecord& f, const Detection& d) {
    return nlohmann::json{{"source", f.source},
                          {"frame", f.index},
                          {"image", f.image_path},
                          {"label", d.label},
                          {"box", {d.box.x0, d.box.y0, d.box.x1, d.box.y1}}};
  };
  for (const auto& p : result.pairs) {
    nlohmann::json line = {{"cluster", p.cluster},
                           {"reference", frame_json(*p.reference, *p.reference_object)},
                           {"target", frame_json(*p.target, *p.target_object)},
                           {"masks", {{"reference", p.reference_object->mask_path}, {"target", p.target_object->mask_path}}}};
    out << line.dump() << '\n';
  }
}

std::vector<FrameRecord> read_frame_index(const std::filesystem::path& dir, const std::string& index_name) {
  const auto index = dir / index_name;
  std::ifstream in(index);
  if (!in) throw IoError("curation: cannot open frame index " + index.string());
  std::vector<FrameRecord> frames;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      FrameRecord f;
      f.source = j.at("source").get<std::string>();
      f.index = j.at("frame").get<int>();
      f.image_path = j.at("image").get<std::string>();
      const auto img_file = dir / f.image_path;
      f.image = img_file.extension() == ".pgm" ? read_pgm(img_file) : read_ppm(img_file);
      if (j.contains("detections")) {
        for (const auto& dj : j.at("detections")) {
          Detection d;
          d.label = dj.at("label").get<std::string>();
          const auto b = dj.at("box").get<std::vector<int>>();
          if (b.size() != 4) throw IoError("box must have 4 entries");
          d.box = {b[0], b[1], b[2], b[3]};
          d.mask_path = dj.at("mask").get<std::string>();
          d.mask = read_mask(dir / d.mask_path);
          if (dj.contains("embedding")) d.embedding = dj.at("embedding").get<std::vector<double>>();
          if (dj.contains("verified")) d.verified = dj.at("verified").get<bool>();
          f.detections.push_back(std::move(d));
        }
      }
      frames.push_back(std::move(f));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(index.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const IoError& e) {
      throw IoError(index.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return frames;
}

}  // namespace dscomp
