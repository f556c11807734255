#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cobe/box.hpp"
#include "cobe/core_math.hpp"

namespace cobe {

struct RoiRecord {
  Box box;
  Vec64 feature;
  std::optional<std::string> category;  // set on every foreground RoI
  double roi_score = 1.0;
  bool is_background = false;

  bool operator==(const RoiRecord&) const = default;
};

/// One video frame: candidate regions and the narration that accompanies it.
/// token_embeddings[j] is the frozen contextual embedding of narration_tokens[j].
struct FrameRecord {
  std::string frame_id;
  std::vector<RoiRecord> rois;
  std::vector<std::string> narration_tokens;
  std::vector<Vec64> token_embeddings;

  bool operator==(const FrameRecord&) const = default;
};

}  // namespace cobe
