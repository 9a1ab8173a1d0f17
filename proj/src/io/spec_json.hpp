#pragma once

#include <json.hpp>

#include "dscomp/diffusion.hpp"

namespace dscomp {

inline nlohmann::json to_json(const UNetConfig& c) {
  return {{"image_size", c.image_size}, {"in_channels", c.in_channels}, {"out_channels", c.out_channels},
          {"width0", c.width0},         {"width1", c.width1},           {"depth", c.depth},
          {"groups", c.groups},         {"heads", c.heads},             {"time_dim", c.time_dim},
          {"max_timestep", c.max_timestep}};
}

inline nlohmann::json to_json(const DiTConfig& c) {
  return {{"image_size", c.image_size}, {"in_channels", c.in_channels}, {"out_channels", c.out_channels},
          {"patch", c.patch},           {"width", c.width},             {"depth", c.depth},
          {"heads", c.heads},           {"time_dim", c.time_dim},       {"max_timestep", c.max_timestep}};
}

inline nlohmann::json to_json(const ModelSpec& s) {
  return {{"backbone", to_string(s.kind)},
          {"variant", to_string(s.variant)},
          {"seed", s.seed},
          {"unet", to_json(s.unet)},
          {"dit", to_json(s.dit)}};
}

// Missing keys keep their defaults.
template <typename V>
void read_key(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

inline void from_json(const nlohmann::json& j, UNetConfig& c) {
  read_key(j, "image_size", c.image_size);
  read_key(j, "in_channels", c.in_channels);
  read_key(j, "out_channels", c.out_channels);
  read_key(j, "width0", c.width0);
  read_key(j, "width1", c.width1);
  read_key(j, "depth", c.depth);
  read_key(j, "groups", c.groups);
  read_key(j, "heads", c.heads);
  read_key(j, "time_dim", c.time_dim);
  read_key(j, "max_timestep", c.max_timestep);
}

inline void from_json(const nlohmann::json& j, DiTConfig& c) {
  read_key(j, "image_size", c.image_size);
  read_key(j, "in_channels", c.in_channels);
  read_key(j, "out_channels", c.out_channels);
  read_key(j, "patch", c.patch);
  read_key(j, "width", c.width);
  read_key(j, "depth", c.depth);
  read_key(j, "heads", c.heads);
  read_key(j, "time_dim", c.time_dim);
  read_key(j, "max_timestep", c.max_timestep);
}

inline void from_json(const nlohmann::json& j, ModelSpec& s) {
  if (j.contains("backbone")) s.kind = parse_backbone(j.at("backbone").get<std::string>());
  if (j.contains("variant")) s.variant = parse_variant(j.at("variant").get<std::string>());
  read_key(j, "seed", s.seed);
  if (j.contains("unet")) from_json(j.at("unet"), s.unet);
  if (j.contains("dit")) from_json(j.at("dit"), s.dit);
}

}  // namespace dscomp
