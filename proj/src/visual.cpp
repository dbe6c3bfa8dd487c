#include "comvt/visual.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "comvt/error.hpp"
#include "json.hpp"

namespace comvt {

using nlohmann::json;

void Box::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(x0) || !in_unit(y0) || !in_unit(x1) || !in_unit(y1)) {
    throw ContractError("box coordinates must lie in [0, 1]");
  }
  if (x1 < x0) throw ContractError("box: x1 < x0");
  if (y1 < y0) throw ContractError("box: y1 < y0");
}

VisualEncoder::VisualEncoder(ParamStore& store, const std::string& name, const VisualConfig& config,
                             SeededRng& rng)
    : config_(config) {
  const std::size_t d = config.d_model;
  combine_ = Mlp2(store, name + ".g_comb", config.d_object + config.d_scene, d, d, rng);
  box_projection_ = Linear(store, name + ".box_projection", 4, d, rng);
  query_ = Linear(store, name + ".g_query", d, d, rng);
  // No bias: a shared key offset shifts every score of a query equally.
  key_ = Linear(store, name + ".g_key", d, d, rng, /*with_bias=*/false);
  value_ = Linear(store, name + ".g_value", d, d, rng);
  output_ = Linear(store, name + ".g_output", d, d, rng);
  projection_ = Mlp2(store, name + ".g_proj", d, d, d, rng);
}

Tensor positional_encoding(std::size_t frame_index, const Box& box, const VisualEncoder& params) {
  if (frame_index < 1) throw ContractError("positional_encoding: frame index must be >= 1");
  box.validate();
  const Tensor coords = Tensor::row({box.x0, box.y0, box.x1, box.y1});
  return sinusoidal_encoding(static_cast<double>(frame_index - 1), params.config().d_model) +
         params.box_projection()(coords);
}

Tensor combine_features(const ObjectFeature& object, const SceneFeature& scene, const VisualEncoder& params) {
  if (object.frame != scene.index) {
    throw ContractError("combine_features: object frame " + std::to_string(object.frame) +
                        " is not aligned with scene index " + std::to_string(scene.index));
  }
  const auto& cfg = params.config();
  if (object.values.size() != cfg.d_object || scene.values.size() != cfg.d_scene) {
    throw ContractError("combine_features: feature width mismatch");
  }
  std::vector<double> joined(object.values);
  joined.insert(joined.end(), scene.values.begin(), scene.values.end());
  return params.combine()(Tensor::row(std::move(joined))) +
         positional_encoding(object.frame, object.box, params);
}

Tensor combine_clip(const ClipFeatures& clip, const VisualEncoder& params) {
  const auto& cfg = params.config();
  const std::size_t frames = clip.frames();
  const std::size_t slots = cfg.objects_per_frame;
  if (frames == 0) throw ContractError("combine_clip: clip has no frames");
  if (clip.objects.size() != frames) throw ContractError("combine_clip: object grid does not match frames");
  const std::size_t width = cfg.d_object + cfg.d_scene;
  std::vector<double> inputs, boxes, sinus;
  inputs.reserve(frames * slots * width);
  for (std::size_t i = 0; i < frames; ++i) {
    const auto& scene = clip.scenes[i];
    if (scene.values.size() != cfg.d_scene) throw ContractError("combine_clip: scene width mismatch");
    if (clip.objects[i].size() != slots) {
      throw ContractError("combine_clip: frame " + std::to_string(i + 1) + " has " +
                          std::to_string(clip.objects[i].size()) + " objects, expected " +
                          std::to_string(slots));
    }
    const Tensor pe = sinusoidal_encoding(static_cast<double>(scene.index - 1), cfg.d_model);
    for (const auto& obj : clip.objects[i]) {
      if (obj.frame != scene.index) throw ContractError("combine_clip: object/scene frame misalignment");
      if (obj.values.size() != cfg.d_object) throw ContractError("combine_clip: object width mismatch");
      obj.box.validate();
      inputs.insert(inputs.end(), obj.values.begin(), obj.values.end());
      inputs.insert(inputs.end(), scene.values.begin(), scene.values.end());
      boxes.insert(boxes.end(), {obj.box.x0, obj.box.y0, obj.box.x1, obj.box.y1});
      sinus.insert(sinus.end(), pe.data().begin(), pe.data().end());
    }
  }
  const std::size_t n = frames * slots;
  const Tensor x = Tensor::matrix(n, width, std::move(inputs));
  const Tensor b = Tensor::matrix(n, 4, std::move(boxes));
  const Tensor s = Tensor::matrix(n, cfg.d_model, std::move(sinus));
  return params.combine()(x) + params.box_projection()(b) + s;
}

CompactVisualSet compact_extract(const Tensor& grid, std::size_t frames, std::size_t objects_per_frame,
                                 std::size_t anchor, const VisualEncoder& params) {
  if (frames == 0 || objects_per_frame == 0) throw ContractError("compact_extract: empty grid");
  if (anchor < 1 || anchor > frames) {
    throw ContractError("compact_extract: anchor " + std::to_string(anchor) + " outside 1.." +
                        std::to_string(frames));
  }
  if (grid.rows() != frames * objects_per_frame) throw ContractError("compact_extract: grid is incomplete");
  const std::size_t L = objects_per_frame;
  const Tensor anchor_rows = slice_rows(grid, (anchor - 1) * L, anchor * L);
  CompactVisualSet out;
  out.anchor = anchor;
  if (frames == 1) {
    out.features = params.projection()(anchor_rows);
    return out;
  }
  std::vector<Tensor> parts;
  if (anchor > 1) parts.push_back(slice_rows(grid, 0, (anchor - 1) * L));
  if (anchor < frames) parts.push_back(slice_rows(grid, anchor * L, frames * L));
  const Tensor targets = parts.size() == 1 ? parts[0] : concat_rows(parts);

  const Tensor q = params.query()(anchor_rows);
  const Tensor k = params.key()(targets);
  const Tensor v = params.value()(targets);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  out.attention = softmax(scale(matmul_nt(q, k), inv_sqrt_d), 1);
  const Tensor attended = params.output()(matmul(out.attention, v));
  out.features = params.projection()(anchor_rows + attended);
  return out;
}

// ---------------------------------------------------------------------------
// Clip-features files

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw ParseError(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::vector<double> read_numbers(const json& j, const char* field, std::size_t expected,
                                 const std::filesystem::path& path, std::size_t line) {
  if (!j.is_array()) fail(path, line, std::string("field '") + field + "' must be an array");
  if (j.size() != expected) {
    fail(path, line, std::string("field '") + field + "' has " + std::to_string(j.size()) +
                         " values, expected " + std::to_string(expected));
  }
  std::vector<double> out;
  out.reserve(expected);
  for (const auto& v : j) {
    if (!v.is_number()) fail(path, line, std::string("field '") + field + "' contains a non-number");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

ClipFeatures truncate_frames(ClipFeatures clip, std::size_t max_frames) {
  if (max_frames == 0) throw ContractError("truncate_frames: limit must be >= 1");
  if (clip.scenes.size() > max_frames) {
    const auto drop = static_cast<std::ptrdiff_t>(clip.scenes.size() - max_frames);
    clip.scenes.erase(clip.scenes.begin(), clip.scenes.begin() + drop);
    clip.objects.erase(clip.objects.begin(), clip.objects.begin() + drop);
  }
  for (std::size_t i = 0; i < clip.scenes.size(); ++i) {
    clip.scenes[i].index = i + 1;
    for (auto& obj : clip.objects[i]) obj.frame = i + 1;
  }
  return clip;
}

ClipFeatures load_features(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open clip-features file " + path.string());
  ClipFeatures clip;
  std::string text;
  std::size_t line = 0;
  std::size_t previous_frame = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::parse_error& e) {
      fail(path, line, std::string("malformed JSON: ") + e.what());
    }
    if (!rec.is_object()) fail(path, line, "record must be a JSON object");
    for (const char* field : {"clip_id", "frame", "scene", "objects"}) {
      if (!rec.contains(field)) fail(path, line, std::string("missing field '") + field + "'");
    }
    if (!rec["clip_id"].is_string()) fail(path, line, "field 'clip_id' must be a string");
    const std::string clip_id = rec["clip_id"].get<std::string>();
    if (clip.scenes.empty()) {
      clip.clip_id = clip_id;
    } else if (clip_id != clip.clip_id) {
      fail(path, line, "field 'clip_id' changes within the file");
    }
    if (!rec["frame"].is_number_integer() || rec["frame"].get<long long>() < 1) {
      fail(path, line, "field 'frame' must be an integer >= 1");
    }
    const auto frame = static_cast<std::size_t>(rec["frame"].get<long long>());
    if (frame <= previous_frame) fail(path, line, "field 'frame' is not in temporal order");
    previous_frame = frame;

    SceneFeature scene;
    scene.values = read_numbers(rec["scene"], "scene", schema.d_scene, path, line);
    scene.source_frame = frame;
    const json& objects = rec["objects"];
    if (!objects.is_array()) fail(path, line, "field 'objects' must be an array");
    if (objects.size() != schema.objects_per_frame) {
      fail(path, line, "field 'objects' has " + std::to_string(objects.size()) + " entries, expected " +
                           std::to_string(schema.objects_per_frame));
    }
    std::vector<ObjectFeature> row;
    for (std::size_t j = 0; j < objects.size(); ++j) {
      const json& o = objects[j];
      if (!o.is_object() || !o.contains("box") || !o.contains("feat")) {
        fail(path, line, "objects[" + std::to_string(j) + "] needs 'box' and 'feat'");
      }
      const auto box = read_numbers(o["box"], "box", 4, path, line);
      ObjectFeature obj;
      obj.slot = j + 1;
      obj.box = {box[0], box[1], box[2], box[3]};
      try {
        obj.box.validate();
      } catch (const ContractError& e) {
        fail(path, line, "objects[" + std::to_string(j) + "]." + e.what());
      }
      obj.values = read_numbers(o["feat"], "feat", schema.d_object, path, line);
      row.push_back(std::move(obj));
    }
    clip.scenes.push_back(std::move(scene));
    clip.objects.push_back(std::move(row));
  }
  if (clip.scenes.empty()) throw ParseError(path.string() + ": no frames");
  return truncate_frames(std::move(clip), schema.max_frames);
}

void save_features(const std::filesystem::path& path, const ClipFeatures& clip) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write clip-features file " + path.string());
  for (std::size_t i = 0; i < clip.scenes.size(); ++i) {
    json rec;
    rec["clip_id"] = clip.clip_id;
    rec["frame"] = clip.scenes[i].source_frame;
    rec["scene"] = clip.scenes[i].values;
    json objects = json::array();
    for (const auto& obj : clip.objects[i]) {
      objects.push_back({{"box", {obj.box.x0, obj.box.y0, obj.box.x1, obj.box.y1}}, {"feat", obj.values}});
    }
    rec["objects"] = std::move(objects);
    out << rec.dump() << '\n';
  }
}

}  // namespace comvt
