#include "panosim/study.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <sstream>

namespace panosim {

std::vector<StudyRow> decimation_study(const DatasetManifest& manifest, const std::vector<int>& factors,
                                       const std::vector<CameraPose>& poses,
                                       const StudySettings& settings, const PanoLoader& loader) {
  std::map<std::string, std::shared_ptr<const EquirectPanorama>> loaded;
  auto pano_for = [&](const PanoRecord& r) {
    auto it = loaded.find(r.id);
    if (it == loaded.end()) {
      it = loaded.emplace(r.id, std::make_shared<const EquirectPanorama>(loader(r))).first;
    }
    return it->second;
  };

  auto render_all = [&](const DatasetManifest& m) {
    const GridIndex grid(m);
    std::vector<Frame> frames;
    frames.reserve(poses.size());
    for (const auto& pose : poses) {
      const auto sel = select_panorama(grid, pose);
      const PanoRecord& rec = grid.record(sel.cell);
      RenderRequest req{pose, settings.intrinsics, settings.interpolation};
      frames.push_back(render(req, *pano_for(rec), m.cell_size_m, m.record_z(rec)));
    }
    return frames;
  };

  const auto baseline = render_all(manifest);
  std::vector<StudyRow> rows;
  for (int k : factors) {
    const auto frames = k == 1 ? baseline : render_all(decimate(manifest, k));
    for (std::size_t p = 0; p < poses.size(); ++p) {
      rows.push_back({k, p, image_mae(baseline[p].image, frames[p].image),
                      image_psnr(baseline[p].image, frames[p].image), frames[p].source_pano_id});
    }
  }
  return rows;
}

std::string study_csv(const std::vector<StudyRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "factor,pose_index,mae,psnr\n";
  for (const auto& r : rows) {
    out << r.factor << ',' << r.pose_index << ',' << r.mae << ',';
    if (std::isinf(r.psnr)) {
      out << "inf";
    } else {
      out << r.psnr;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace panosim
