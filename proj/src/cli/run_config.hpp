#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "../io/spec_json.hpp"
#include "dscomp/curation.hpp"
#include "dscomp/synthbench.hpp"

namespace dscomp {

/// Everything a command reads. Serialized beside every output so a run can be replayed.
struct RunConfig {
  std::string command;
  std::string run_name;  // empty: derived from command and seed

  ModelSpec model;
  int schedule_steps = 200;
  int sample_steps = 50;

  SceneConfig scene;
  bool scene_size_set = false;  // not serialized; evaluation data otherwise follows the checkpoint
  AugmentationConfig augmentation;
  bool augment = false;
  std::uint64_t data_seed = 0;
  int count = 500;
  std::string data_dir;  // existing dataset; empty generates one from data_seed/count

  TrainConfig train;
  std::string checkpoint;
  std::string frozen_checkpoint, dual_checkpoint;  // extra variants for conlab's l2 curves
  int draws = 200;
  std::uint64_t eval_seed = 31;
  int sample_count = 8;
  std::uint64_t sample_seed = 0;

  std::string frames_dir, frames_index = "frames.jsonl";
  CurationThresholds thresholds;

  std::string outputs_dir, gt_dir;
};

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& a = c.augmentation;
  const auto& t = c.thresholds;
  return {
      {"command", c.command},
      {"run_name", c.run_name},
      {"model", to_json(c.model)},
      {"schedule", {{"steps", c.schedule_steps}, {"sample_steps", c.sample_steps}}},
      {"scene",
       {{"size", c.scene.size},
        {"max_rotation_deg", c.scene.max_rotation_deg},
        {"min_scale", c.scene.min_scale},
        {"max_scale", c.scene.max_scale},
        {"min_area", c.scene.min_area},
        {"max_area", c.scene.max_area},
        {"max_retries", c.scene.max_retries}}},
      {"augmentation",
       {{"enabled", c.augment},
        {"p_flip", a.p_flip},
        {"p_rotate", a.p_rotate},
        {"max_angle_deg", a.max_angle_deg},
        {"p_scale", a.p_scale},
        {"scale_range", a.scale_range},
        {"p_crop", a.p_crop},
        {"min_crop_ratio", a.min_crop_ratio},
        {"mask_branch_p", a.mask_branch_p},
        {"min_radius", a.min_radius},
        {"max_radius", a.max_radius},
        {"blur_sigma", a.blur_sigma},
        {"blur_threshold", a.blur_threshold}}},
      {"data", {{"seed", c.data_seed}, {"count", c.count}, {"dir", c.data_dir}}},
      {"train",
       {{"steps", c.train.steps},
        {"batch", c.train.batch},
        {"lr", c.train.lr},
        {"seed", c.train.seed},
        {"average_window", c.train.average_window}}},
      {"checkpoint", c.checkpoint},
      {"frozen_checkpoint", c.frozen_checkpoint},
      {"dual_checkpoint", c.dual_checkpoint},
      {"eval", {{"draws", c.draws}, {"seed", c.eval_seed}}},
      {"sample", {{"count", c.sample_count}, {"seed", c.sample_seed}}},
      {"curation",
       {{"frames_dir", c.frames_dir},
        {"frames_index", c.frames_index},
        {"min_sobel_var", t.min_sobel_var},
        {"min_laplacian_var", t.min_laplacian_var},
        {"min_component_ratio", t.min_component_ratio},
        {"cluster_cosine", t.cluster_cosine}}},
      {"metrics", {{"outputs_dir", c.outputs_dir}, {"gt_dir", c.gt_dir}}},
  };
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  read_key(j, "command", c.command);
  read_key(j, "run_name", c.run_name);
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("schedule")) {
    read_key(j.at("schedule"), "steps", c.schedule_steps);
    read_key(j.at("schedule"), "sample_steps", c.sample_steps);
  }
  if (j.contains("scene")) {
    c.scene_size_set = j.at("scene").contains("size");
    const auto& s = j.at("scene");
    read_key(s, "size", c.scene.size);
    read_key(s, "max_rotation_deg", c.scene.max_rotation_deg);
    read_key(s, "min_scale", c.scene.min_scale);
    read_key(s, "max_scale", c.scene.max_scale);
    read_key(s, "min_area", c.scene.min_area);
    read_key(s, "max_area", c.scene.max_area);
    read_key(s, "max_retries", c.scene.max_retries);
  }
  if (j.contains("augmentation")) {
    const auto& s = j.at("augmentation");
    auto& a = c.augmentation;
    read_key(s, "enabled", c.augment);
    read_key(s, "p_flip", a.p_flip);
    read_key(s, "p_rotate", a.p_rotate);
    read_key(s, "max_angle_deg", a.max_angle_deg);
    read_key(s, "p_scale", a.p_scale);
    read_key(s, "scale_range", a.scale_range);
    read_key(s, "p_crop", a.p_crop);
    read_key(s, "min_crop_ratio", a.min_crop_ratio);
    read_key(s, "mask_branch_p", a.mask_branch_p);
    read_key(s, "min_radius", a.min_radius);
    read_key(s, "max_radius", a.max_radius);
    read_key(s, "blur_sigma", a.blur_sigma);
    read_key(s, "blur_threshold", a.blur_threshold);
  }
  if (j.contains("data")) {
    read_key(j.at("data"), "seed", c.data_seed);
    read_key(j.at("data"), "count", c.count);
    read_key(j.at("data"), "dir", c.data_dir);
  }
  if (j.contains("train")) {
    const auto& s = j.at("train");
    read_key(s, "steps", c.train.steps);
    read_key(s, "batch", c.train.batch);
    read_key(s, "lr", c.train.lr);
    read_key(s, "seed", c.train.seed);
    read_key(s, "average_window", c.train.average_window);
  }
  read_key(j, "checkpoint", c.checkpoint);
  read_key(j, "frozen_checkpoint", c.frozen_checkpoint);
  read_key(j, "dual_checkpoint", c.dual_checkpoint);
  if (j.contains("eval")) {
    read_key(j.at("eval"), "draws", c.draws);
    read_key(j.at("eval"), "seed", c.eval_seed);
  }
  if (j.contains("sample")) {
    read_key(j.at("sample"), "count", c.sample_count);
    read_key(j.at("sample"), "seed", c.sample_seed);
  }
  if (j.contains("curation")) {
    const auto& s = j.at("curation");
    read_key(s, "frames_dir", c.frames_dir);
    read_key(s, "frames_index", c.frames_index);
    read_key(s, "min_sobel_var", c.thresholds.min_sobel_var);
    read_key(s, "min_laplacian_var", c.thresholds.min_laplacian_var);
    read_key(s, "min_component_ratio", c.thresholds.min_component_ratio);
    read_key(s, "cluster_cosine", c.thresholds.cluster_cosine);
  }
  if (j.contains("metrics")) {
    read_key(j.at("metrics"), "outputs_dir", c.outputs_dir);
    read_key(j.at("metrics"), "gt_dir", c.gt_dir);
  }
}

}  // namespace dscomp
