// Grid-resolution study: renders the same poses from a dataset thinned by
// several factors and scores each against the full-density render.
#pragma once

#include <string>
#include <vector>

#include "panosim/dataset.hpp"
#include "panosim/pano_cache.hpp"
#include "panosim/renderer.hpp"

namespace panosim {

struct StudyRow {
  int factor = 1;
  std::size_t pose_index = 0;
  double mae = 0.0;
  double psnr = 0.0;
  std::string source_pano_id;
};

struct StudySettings {
  CameraIntrinsics intrinsics{320, 240, deg_to_rad(60.0)};
  InterpolationParams interpolation;
};

/// Rows ordered by factor (as given), then pose. The baseline is always the
/// factor-1 render, whether or not 1 is listed.
std::vector<StudyRow> decimation_study(const DatasetManifest& manifest, const std::vector<int>& factors,
                                       const std::vector<CameraPose>& poses,
                                       const StudySettings& settings, const PanoLoader& loader);

std::string study_csv(const std::vector<StudyRow>& rows);

}  // namespace panosim
