#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dscomp/tensor.hpp"

namespace dscomp {

struct Sharpness {
  double sobel_var = 0;
  double laplacian_var = 0;
};

/// 8-bit BT.601 luma of a [3 x H x W] image; [1 x H x W] input passes through.
Tensor32 luma(const Tensor32& img);

/// Variance of the 3x3 Sobel gradient magnitude and of the 4-neighbour
/// Laplacian response over interior pixels. Throws below 3x3.
Sharpness sharpness_scores(const Tensor32& img);

struct CurationThresholds {
  double min_sobel_var = 1600;
  double min_laplacian_var = 800;
  double min_component_ratio = 0.95;
  double cluster_cosine = 0.85;
};

/// True keeps the frame; a score strictly below either threshold discards it.
bool blur_filter(const Sharpness& s, const CurationThresholds& th = {});

/// Largest 8-connected component area over total foreground. Throws on an empty mask.
double largest_cc_ratio(const Tensor32& mask);

/// True keeps the mask: its largest component is strictly above the ratio threshold.
bool mask_filter(const Tensor32& mask, const CurationThresholds& th = {});

/// Single-linkage clustering: two items share a cluster when a chain of
/// pairwise cosines >= threshold connects them. Labels are numbered by first
/// occurrence. Inputs must be unit vectors.
std::vector<int> cluster_objects(const std::vector<std::vector<double>>& embeddings, double threshold = 0.85);

struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open [x0, x1) x [y0, y1)
};

struct Detection {
  std::string label;
  Box box;
  Tensor32 mask;          // [1 x H x W] candidate object mask over the frame
  std::string mask_path;  // where the mask lives on disk, if anywhere
  // Annotations carried by pre-computed detections; empty when absent.
  std::vector<double> embedding;
  std::optional<bool> verified;
};

struct FrameRecord {
  std::string source;
  int index = 0;
  std::string image_path;
  Tensor32 image;
  Sharpness sharpness;
  std::vector<Detection> detections;
};

/// One verified detection cut out of its frame.
struct ObjectCrop {
  const FrameRecord* frame = nullptr;
  const Detection* detection = nullptr;
  Tensor32 image;  // box crop of the frame
};

/// Stand-ins for the detector, verifier and feature extractor models. An
/// unset detector keeps the detections already on the frame record.
struct OracleHooks {
  std::function<std::vector<Detection>(const FrameRecord&)> detect;
  std::function<bool(const ObjectCrop&)> verify;
  std::function<std::vector<double>(const ObjectCrop&)> embed;
};

Tensor32 crop(const Tensor32& img, const Box& box);

/// Unit-norm colour histogram of a crop (4 bins per channel); a cheap
/// default embedder when no feature model is wired in.
std::vector<double> histogram_embedding(const ObjectCrop& c);

struct PairRecord {
  std::string cluster;
  const FrameRecord* reference = nullptr;
  const Detection* reference_object = nullptr;
  const FrameRecord* target = nullptr;
  const Detection* target_object = nullptr;
};

struct CurationStats {
  int frames = 0;
  int blurry = 0;
  int detections = 0;
  int rejected_by_verifier = 0;
  int rejected_by_mask = 0;
  int clusters = 0;
  int singleton_clusters = 0;
  int pairs = 0;
};

struct CurationResult {
  std::vector<FrameRecord> frames;  // every input frame with scores and surviving detections
  std::vector<PairRecord> pairs;
  CurationStats stats;
};

/// Scores and filters frames, runs the hooks, clusters objects within each
/// source and pairs the earliest frame of every cluster with each later one.
/// Frames must be time-ordered within a source.
CurationResult build_pairs(std::vector<FrameRecord> frames, const OracleHooks& hooks,
                           const CurationThresholds& th = {});

/// One JSON object per line: {cluster, reference, target, masks}.
void write_pair_manifest(std::ostream& out, const CurationResult& result);

/// Frame directory index: JSON lines {source, frame, image, detections?:
/// [{label, box:[x0,y0,x1,y1], mask, embedding?, verified?}]}. Paths are
/// relative to the directory.
std::vector<FrameRecord> read_frame_index(const std::filesystem::path& dir, const std::string& index_name = "frames.jsonl");

/// Hooks answering from annotations already on the detections: verify
/// honours "verified" (default accept), embed returns the recorded embedding
/// or falls back to histogram_embedding.
OracleHooks recorded_hooks();

}  // namespace dscomp
