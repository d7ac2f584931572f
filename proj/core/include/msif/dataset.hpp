#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msif/flow.hpp"
#include "msif/geometry.hpp"
#include "msif/image.hpp"

namespace msif {

// Explicit agent for tests and demos; when GeneratorConfig::agents is
// non-empty it replaces the randomly drawn population.
struct AgentSpec {
  Vec2 start;                 // center position at frame 0
  Vec2 velocity;              // px/frame
  double turn_rate = 0.0;     // rad/frame heading change
  double box_w = 12.0;
  double box_h = 12.0;
  double intensity = 0.7;
};

struct GeneratorConfig {
  int width = 160;
  int height = 120;
  int frame_count = 40;
  int object_count = 3;
  int scene_count = 40;
  double min_speed = 1.5;     // px/frame
  double max_speed = 3.5;
  double turner_fraction = 0.4;
  double max_turn_rate = 0.05;  // rad/frame
  double texture_amplitude = 0.05;
  double min_box = 8.0;
  double max_box = 18.0;
  double frame_rate_hz = 10.0;
  std::vector<AgentSpec> agents;
};

struct TrackState {
  std::int64_t frame = 0;
  Vec2 center;
  BBox box;
};

struct ObjectTrack {
  std::int64_t object_id = 0;
  std::vector<TrackState> states;  // sorted by frame

  const TrackState* state_at(std::int64_t frame) const;
  bool covers(std::int64_t first, std::int64_t last) const;
};

struct SceneSequence {
  std::vector<Image> frames;
  std::vector<ObjectTrack> tracks;
  std::vector<FlowField> flows;  // flows[t]: frame t -> t+1; may be empty until cached
  double frame_rate_hz = 10.0;
  double gamma_applied = 1.0;
};

struct SampleWindow {
  std::int64_t start = 0;
  int obs_len = 8;
  int pred_len = 12;
  std::vector<std::int64_t> node_ids;  // objects present in all obs+pred frames
};

// Deterministic render of moving rectangles over a textured background.
// Frames come back quantized to the 16-bit grid so disk round-trips are
// bit-exact. Flow is not computed here; see scene_flows.
SceneSequence generate_scene(const GeneratorConfig& config, std::uint64_t seed);

// Gamma-darkens every frame (then re-quantizes) and drops any cached flow,
// which must be recomputed from the darkened frames.
SceneSequence darken_scene(const SceneSequence& scene, double gamma);

std::vector<SampleWindow> window_samples(const SceneSequence& scene, int obs_len = 8,
                                         int pred_len = 12);

void save_scene(const std::string& dir, const SceneSequence& scene);
SceneSequence load_scene(const std::string& dir);

// scene_<k> subdirectories under root, k starting at 0.
void save_dataset(const std::string& root, const std::vector<SceneSequence>& scenes);
std::vector<SceneSequence> load_dataset(const std::string& root);

}  // namespace msif
