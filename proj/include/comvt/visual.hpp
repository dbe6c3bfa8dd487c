#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "comvt/layers.hpp"
#include "comvt/params.hpp"
#include "comvt/rng.hpp"
#include "comvt/tensor.hpp"

namespace comvt {

/// Normalized box corners (top-left, bottom-right).
struct Box {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 1.0;
  double y1 = 1.0;

  /// Throws ContractError unless 0 <= x0 <= x1 <= 1 and 0 <= y0 <= y1 <= 1.
  void validate() const;
};

/// Per-second scene feature m_i. `index` is 1-based within the clip.
struct SceneFeature {
  std::size_t index = 1;
  std::vector<double> values;
  /// Frame number in the source file (differs from `index` after truncation).
  std::size_t source_frame = 1;
};

/// Object feature o_ij with its box, anchored to frame `frame` (1-based) and slot `slot` (1-based).
struct ObjectFeature {
  std::size_t frame = 1;
  std::size_t slot = 1;
  Box box;
  std::vector<double> values;
};

/// Everything extracted for one clip: scenes[i] is aligned with objects[i].
struct ClipFeatures {
  std::string clip_id;
  std::vector<SceneFeature> scenes;
  std::vector<std::vector<ObjectFeature>> objects;

  std::size_t frames() const { return scenes.size(); }
  std::size_t objects_per_frame() const { return objects.empty() ? 0 : objects.front().size(); }
};

struct VisualConfig {
  std::size_t d_model = 64;
  std::size_t d_scene = 32;
  std::size_t d_object = 32;
  std::size_t objects_per_frame = 4;
  std::size_t max_frames = 30;
};

/// Learnable maps of the visual pipeline: g_comb, box projection,
/// g_query/g_key/g_value/g_output and g_proj.
class VisualEncoder {
 public:
  VisualEncoder() = default;
  VisualEncoder(ParamStore& store, const std::string& name, const VisualConfig& config, SeededRng& rng);

  const VisualConfig& config() const { return config_; }
  const Mlp2& combine() const { return combine_; }
  const Linear& box_projection() const { return box_projection_; }
  const Linear& query() const { return query_; }
  const Linear& key() const { return key_; }
  const Linear& value() const { return value_; }
  const Linear& output() const { return output_; }
  const Mlp2& projection() const { return projection_; }

 private:
  VisualConfig config_;
  Mlp2 combine_;
  Linear box_projection_;
  Linear query_;
  Linear key_;
  Linear value_;
  Linear output_;
  Mlp2 projection_;
};

/// sinusoid(frame_index - 1) + box_projection(box); 1 x d.
Tensor positional_encoding(std::size_t frame_index, const Box& box, const VisualEncoder& params);

/// v_st = g_comb([o; m]) + pos(o); 1 x d. Frame indices must agree.
Tensor combine_features(const ObjectFeature& object, const SceneFeature& scene, const VisualEncoder& params);

/// All combined features of a clip, frame-major: row (i-1)*L + (j-1) holds v_st_ij.
Tensor combine_clip(const ClipFeatures& clip, const VisualEncoder& params);

struct CompactVisualSet {
  Tensor features;   // L x d
  std::size_t anchor = 1;
  /// L x |targets| attention weights; undefined for single-frame clips.
  Tensor attention;
};

/// Attention-based aggregation onto the anchor frame's L object slots.
/// `grid` is the frames*L x d output of combine_clip; `anchor` is 1-based.
CompactVisualSet compact_extract(const Tensor& grid, std::size_t frames, std::size_t objects_per_frame,
                                 std::size_t anchor, const VisualEncoder& params);

struct FeatureSchema {
  std::size_t d_scene = 32;
  std::size_t d_object = 32;
  std::size_t objects_per_frame = 4;
  std::size_t max_frames = 30;
};

/// Reads a clip-features JSON Lines file. Frames beyond max_frames are dropped
/// from the front; retained frames are re-indexed 1..N.
ClipFeatures load_features(const std::filesystem::path& path, const FeatureSchema& schema);

/// Writes the clip in the same JSON Lines layout.
void save_features(const std::filesystem::path& path, const ClipFeatures& clip);

/// Keeps the last `max_frames` frames and re-indexes them.
ClipFeatures truncate_frames(ClipFeatures clip, std::size_t max_frames);

}  // namespace comvt
