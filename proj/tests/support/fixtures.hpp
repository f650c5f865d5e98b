#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "panosim/dataset.hpp"

namespace panosim::testing {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("panosim-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::vector<CellCoord> block(int i0, int j0, int ni, int nj) {
  std::vector<CellCoord> out;
  for (int i = i0; i < i0 + ni; ++i)
    for (int j = j0; j < j0 + nj; ++j) out.push_back({i, j});
  return out;
}

inline std::string cell_id(CellCoord c) { return "c" + std::to_string(c.i) + "_" + std::to_string(c.j); }

inline DatasetManifest grid_manifest(const std::vector<CellCoord>& cells, double cell_size, int w, int h) {
  DatasetManifest m;
  m.cell_size_m = cell_size;
  m.pano_width = w;
  m.pano_height = h;
  for (CellCoord c : cells) {
    PanoRecord r;
    r.id = cell_id(c);
    r.file = "imgs/" + r.id + ".png";
    r.x_m = c.i * cell_size;
    r.y_m = c.j * cell_size;
    r.captured_at = "2026-01-01T00:00:00.000Z";
    m.records.push_back(r);
  }
  return m;
}

enum class Content { kPlaceholder, kDirection, kRoom };

/// Writes manifest.json plus one image per cell; returns the manifest path.
inline std::filesystem::path write_dataset(const std::filesystem::path& dir,
                                           const std::vector<CellCoord>& cells, double cell_size,
                                           int w, int h, bool write_images,
                                           Content content = Content::kDirection) {
  if (!write_images) content = Content::kPlaceholder;
  DatasetManifest m = grid_manifest(cells, cell_size, w, h);
  std::filesystem::create_directories(dir / "imgs");
  const RgbImage direction = content == Content::kDirection ? synth_pano(w, h).image : RgbImage{};
  for (const auto& r : m.records) {
    const auto file = dir / r.file;
    switch (content) {
      case Content::kPlaceholder:
        std::ofstream(file) << "x";
        break;
      case Content::kDirection:
        write_image(file, direction);
        break;
      case Content::kRoom:
        write_image(file, synth_room_pano(w, h, {r.x_m, r.y_m, 1.1}));
        break;
    }
  }
  const auto path = dir / "manifest.json";
  save_manifest(m, path);
  return path;
}

/// In-memory loader for room datasets: renders the panorama on demand.
inline EquirectPanorama room_pano(const DatasetManifest& m, const PanoRecord& r) {
  return {synth_room_pano(m.pano_width, m.pano_height, {r.x_m, r.y_m, 1.1}), r};
}

}  // namespace panosim::testing
