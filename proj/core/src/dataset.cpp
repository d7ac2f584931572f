#include "msif/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "msif/errors.hpp"
#include "msif/parallel.hpp"
#include "msif/rng.hpp"

namespace fs = std::filesystem;

namespace msif {

namespace {

constexpr int kMetaVersion = 1;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double hash01(std::uint64_t seed, std::int64_t a, std::int64_t b) {
  std::uint64_t h = Rng::mix(seed, static_cast<std::uint64_t>(a) * 0x100000001b3ULL +
                                       static_cast<std::uint64_t>(b));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

struct Agent {
  AgentSpec spec;
  std::uint64_t texture_seed = 0;
};

}  // namespace

const TrackState* ObjectTrack::state_at(std::int64_t frame) const {
  auto it = std::lower_bound(states.begin(), states.end(), frame,
                             [](const TrackState& s, std::int64_t f) { return s.frame < f; });
  if (it == states.end() || it->frame != frame) return nullptr;
  return &*it;
}

bool ObjectTrack::covers(std::int64_t first, std::int64_t last) const {
  for (std::int64_t f = first; f <= last; ++f)
    if (!state_at(f)) return false;
  return true;
}

SceneSequence generate_scene(const GeneratorConfig& config, std::uint64_t seed) {
  if (config.frame_count < 20)
    throw ValueError("generate_scene: frame count " + std::to_string(config.frame_count) +
                     " below the 20-frame window minimum");
  if (config.width < 16 || config.height < 16)
    throw ValueError("generate_scene: image size must be at least 16x16");
  if (config.agents.empty() && config.object_count < 1)
    throw ValueError("generate_scene: need at least one object");

  Rng rng(seed);

  // static background, drawn once per scene
  Image background = Image::zeros(config.width, config.height);
  for (auto& p : background.pixels)
    p = 0.15 + config.texture_amplitude * rng.uniform();

  std::vector<Agent> agents;
  if (!config.agents.empty()) {
    for (const auto& spec : config.agents) agents.push_back({spec, rng.next()});
  } else {
    const int n = config.object_count;
    for (int i = 0; i < n; ++i) {
      AgentSpec spec;
      spec.box_w = rng.uniform(config.min_box, config.max_box);
      spec.box_h = rng.uniform(config.min_box, config.max_box);
      const double margin = config.max_box / 2.0 + 2.0;
      spec.start.x = rng.uniform(margin, config.width - 1.0 - margin);
      spec.start.y = rng.uniform(margin, config.height - 1.0 - margin);
      const double speed = rng.uniform(config.min_speed, config.max_speed);
      const double heading = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      spec.velocity = {speed * std::cos(heading), speed * std::sin(heading)};
      spec.turn_rate = rng.uniform() < config.turner_fraction
                           ? rng.uniform(-config.max_turn_rate, config.max_turn_rate)
                           : 0.0;
      // evenly spaced so no two rectangles share a brightness
      spec.intensity = 0.4 + 0.5 * (i + 0.5) / n;
      agents.push_back({spec, rng.next()});
    }
  }

  SceneSequence scene;
  scene.frame_rate_hz = config.frame_rate_hz;
  scene.gamma_applied = 1.0;
  scene.tracks.resize(agents.size());

  std::vector<Vec2> pos(agents.size()), vel(agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i) {
    pos[i] = agents[i].spec.start;
    vel[i] = agents[i].spec.velocity;
    scene.tracks[i].object_id = static_cast<std::int64_t>(i);
  }

  for (int t = 0; t < config.frame_count; ++t) {
    Image frame = background;
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const auto& sp = agents[i].spec;
      BBox box{pos[i].x - sp.box_w / 2.0, pos[i].y - sp.box_h / 2.0,
               pos[i].x + sp.box_w / 2.0, pos[i].y + sp.box_h / 2.0};
      scene.tracks[i].states.push_back({t, pos[i], box});

      const int y0 = static_cast<int>(std::ceil(box.y_tl));
      const int y1 = static_cast<int>(std::floor(box.y_br));
      const int x0 = static_cast<int>(std::ceil(box.x_tl));
      const int x1 = static_cast<int>(std::floor(box.x_br));
      for (int y = std::max(0, y0); y <= std::min(config.height - 1, y1); ++y)
        for (int x = std::max(0, x0); x <= std::min(config.width - 1, x1); ++x) {
          // texture rides with the object so a still object renders identical crops
          const double tex =
              (hash01(agents[i].texture_seed, y - y0, x - x0) - 0.5) * config.texture_amplitude;
          frame.at(y, x) = sp.intensity + tex;
        }
    }
    for (auto& p : frame.pixels) p = std::clamp(p, 0.0, 1.0);
    scene.frames.push_back(quantize16(frame));

    // advance motion; reflect at frame margins so objects stay visible
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const auto& sp = agents[i].spec;
      if (sp.turn_rate != 0.0) {
        const double c = std::cos(sp.turn_rate), s = std::sin(sp.turn_rate);
        vel[i] = {vel[i].x * c - vel[i].y * s, vel[i].x * s + vel[i].y * c};
      }
      const double mx = sp.box_w / 2.0 + 1.0;
      const double my = sp.box_h / 2.0 + 1.0;
      double nx = pos[i].x + vel[i].x;
      double ny = pos[i].y + vel[i].y;
      if (nx < mx || nx > config.width - 1 - mx) {
        vel[i].x = -vel[i].x;
        nx = pos[i].x + vel[i].x;
      }
      if (ny < my || ny > config.height - 1 - my) {
        vel[i].y = -vel[i].y;
        ny = pos[i].y + vel[i].y;
      }
      pos[i] = {nx, ny};
    }
  }
  return scene;
}

SceneSequence darken_scene(const SceneSequence& scene, double gamma) {
  SceneSequence out;
  out.tracks = scene.tracks;
  out.frame_rate_hz = scene.frame_rate_hz;
  out.gamma_applied = gamma;
  out.frames.reserve(scene.frames.size());
  for (const auto& f : scene.frames) out.frames.push_back(quantize16(apply_gamma(f, gamma)));
  return out;  // flow cache intentionally dropped; recompute on the dark frames
}

std::vector<SampleWindow> window_samples(const SceneSequence& scene, int obs_len, int pred_len) {
  if (obs_len < 1 || pred_len < 1)
    throw ValueError("window_samples: window lengths must be positive");
  const std::int64_t span = obs_len + pred_len;
  const std::int64_t frames = static_cast<std::int64_t>(scene.frames.size());
  std::vector<SampleWindow> out;
  for (std::int64_t s = 0; s + span <= frames; ++s) {
    SampleWindow w;
    w.start = s;
    w.obs_len = obs_len;
    w.pred_len = pred_len;
    for (const auto& track : scene.tracks)
      if (track.covers(s, s + span - 1)) w.node_ids.push_back(track.object_id);
    if (!w.node_ids.empty()) out.push_back(std::move(w));
  }
  return out;
}

void save_scene(const std::string& dir, const SceneSequence& scene) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "frames", ec);
  fs::create_directories(fs::path(dir) / "flow", ec);
  if (ec) throw IoError("save_scene: cannot create " + dir + ": " + ec.message());
  if (scene.frames.empty()) throw ValueError("save_scene: scene has no frames");

  {
    std::ofstream meta(fs::path(dir) / "meta");
    if (!meta) throw IoError("save_scene: cannot write meta in " + dir);
    meta << "msif-scene " << kMetaVersion << "\n"
         << "width " << scene.frames[0].width << "\n"
         << "height " << scene.frames[0].height << "\n"
         << "frames " << scene.frames.size() << "\n"
         << "fps " << fmt_double(scene.frame_rate_hz) << "\n"
         << "gamma " << fmt_double(scene.gamma_applied) << "\n"
         << "objects " << scene.tracks.size() << "\n"
         << "flows " << scene.flows.size() << "\n";
    if (!meta) throw IoError("save_scene: short write to meta in " + dir);
  }

  for (std::size_t t = 0; t < scene.frames.size(); ++t)
    write_pgm16((fs::path(dir) / "frames" / (std::to_string(t) + ".pgm")).string(),
                scene.frames[t]);

  {
    std::ofstream csv(fs::path(dir) / "tracks.csv");
    if (!csv) throw IoError("save_scene: cannot write tracks.csv in " + dir);
    csv << "frame,object_id,x_tl,y_tl,x_br,y_br\n";
    for (const auto& track : scene.tracks)
      for (const auto& s : track.states)
        csv << s.frame << "," << track.object_id << "," << fmt_double(s.box.x_tl) << ","
            << fmt_double(s.box.y_tl) << "," << fmt_double(s.box.x_br) << ","
            << fmt_double(s.box.y_br) << "\n";
    if (!csv) throw IoError("save_scene: short write to tracks.csv in " + dir);
  }

  for (std::size_t t = 0; t < scene.flows.size(); ++t)
    write_flo((fs::path(dir) / "flow" / (std::to_string(t) + ".flo")).string(), scene.flows[t]);
}

SceneSequence load_scene(const std::string& dir) {
  const fs::path meta_path = fs::path(dir) / "meta";
  std::ifstream meta(meta_path);
  if (!meta) throw MissingFileError("load_scene: cannot open " + meta_path.string());

  std::string tag;
  int version = -1;
  meta >> tag >> version;
  if (!meta || tag != "msif-scene")
    throw CorruptFileError("load_scene: " + meta_path.string() + " lacks the scene header");
  if (version != kMetaVersion)
    throw VersionMismatchError("load_scene: " + meta_path.string() + " has version " +
                               std::to_string(version) + ", expected " +
                               std::to_string(kMetaVersion));

  std::map<std::string, std::string> kv;
  std::string key, value;
  while (meta >> key >> value) kv[key] = value;
  for (const char* required : {"width", "height", "frames", "fps", "gamma", "objects", "flows"})
    if (!kv.count(required))
      throw CorruptFileError("load_scene: meta missing key '" + std::string(required) + "' in " +
                             dir);

  const int width = std::stoi(kv["width"]);
  const int height = std::stoi(kv["height"]);
  const long frame_count = std::stol(kv["frames"]);
  const long flow_count = std::stol(kv["flows"]);

  SceneSequence scene;
  scene.frame_rate_hz = std::stod(kv["fps"]);
  scene.gamma_applied = std::stod(kv["gamma"]);

  scene.frames.resize(static_cast<std::size_t>(frame_count));
  for (long t = 0; t < frame_count; ++t) {
    Image im =
        read_pgm16((fs::path(dir) / "frames" / (std::to_string(t) + ".pgm")).string());
    if (im.width != width || im.height != height)
      throw CorruptFileError("load_scene: frame " + std::to_string(t) + " is " +
                             std::to_string(im.width) + "x" + std::to_string(im.height) +
                             ", meta says " + std::to_string(width) + "x" +
                             std::to_string(height));
    scene.frames[static_cast<std::size_t>(t)] = std::move(im);
  }

  const fs::path csv_path = fs::path(dir) / "tracks.csv";
  std::ifstream csv(csv_path);
  if (!csv) throw MissingFileError("load_scene: cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(csv, line) || line != "frame,object_id,x_tl,y_tl,x_br,y_br")
    throw CorruptFileError("load_scene: bad tracks.csv header in " + dir);
  std::map<std::int64_t, ObjectTrack> by_id;
  std::size_t line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    double fields[6];
    for (int i = 0; i < 6; ++i) {
      if (!std::getline(ss, cell, ','))
        throw CorruptFileError("load_scene: tracks.csv line " + std::to_string(line_no) +
                               " truncated in " + dir);
      try {
        fields[i] = std::stod(cell);
      } catch (const std::exception&) {
        throw CorruptFileError("load_scene: tracks.csv line " + std::to_string(line_no) +
                               " has non-numeric cell '" + cell + "' in " + dir);
      }
    }
    TrackState s;
    s.frame = static_cast<std::int64_t>(fields[0]);
    s.box = {fields[2], fields[3], fields[4], fields[5]};
    if (!(s.box.x_tl < s.box.x_br) || !(s.box.y_tl < s.box.y_br))
      throw CorruptFileError("load_scene: degenerate box on tracks.csv line " +
                             std::to_string(line_no) + " in " + dir);
    s.center = bbox_center(s.box);
    const auto id = static_cast<std::int64_t>(fields[1]);
    by_id[id].object_id = id;
    by_id[id].states.push_back(s);
  }
  for (auto& [id, track] : by_id) {
    std::sort(track.states.begin(), track.states.end(),
              [](const TrackState& a, const TrackState& b) { return a.frame < b.frame; });
    scene.tracks.push_back(std::move(track));
  }

  scene.flows.resize(static_cast<std::size_t>(flow_count));
  for (long t = 0; t < flow_count; ++t) {
    FlowField f = read_flo((fs::path(dir) / "flow" / (std::to_string(t) + ".flo")).string());
    if (f.width != width || f.height != height)
      throw CorruptFileError("load_scene: flow " + std::to_string(t) + " size mismatch in " +
                             dir);
    scene.flows[static_cast<std::size_t>(t)] = std::move(f);
  }
  return scene;
}

void save_dataset(const std::string& root, const std::vector<SceneSequence>& scenes) {
  if (scenes.empty()) throw ValueError("save_dataset: no scenes");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("save_dataset: cannot create " + root + ": " + ec.message());
  for (std::size_t k = 0; k < scenes.size(); ++k)
    save_scene((fs::path(root) / ("scene_" + std::to_string(k))).string(), scenes[k]);
}

std::vector<SceneSequence> load_dataset(const std::string& root) {
  std::size_t count = 0;
  while (fs::exists(fs::path(root) / ("scene_" + std::to_string(count)) / "meta")) ++count;
  if (count == 0)
    throw MissingFileError("load_dataset: no scene_0 under " + root);
  std::vector<SceneSequence> scenes(count);
  parallel_for(static_cast<std::int64_t>(count), [&](std::int64_t k) {
    scenes[static_cast<std::size_t>(k)] =
        load_scene((fs::path(root) / ("scene_" + std::to_string(k))).string());
  });
  return scenes;
}

}  // namespace msif
