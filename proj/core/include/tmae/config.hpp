#pragma once
#include <string>

#include "tmae/geometry.hpp"
#include "tmae/model.hpp"
#include "tmae/pillars.hpp"
#include "tmae/training.hpp"

namespace tmae {

struct RunConfig {
  GridConfig grid;
  ModelConfig model;
  TrainConfig train;
  SceneConfig scene = SceneConfig::default_desk();

  void validate() const;
};

// `key = value` lines under [grid] [model] [train] [scene] sections, '#'
// comments. Unknown sections or keys are hard errors. Values: numbers,
// true/false, comma tuples (range_min = -8,-8,-2). static_box and moving_box
// under [scene] are repeatable and append.
RunConfig parse_config_text(const std::string& text, const RunConfig& base = RunConfig());
RunConfig load_config_file(const std::string& path, const RunConfig& base = RunConfig());

// command-line override "section.key=value"; box keys append
void apply_override(RunConfig& cfg, const std::string& dotted);

// canonical text form; parse(serialize(c)) reproduces c exactly
std::string serialize_config(const RunConfig& cfg);

}  // namespace tmae
