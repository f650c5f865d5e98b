// Panorama dataset: manifest format, grid lattice, validation and decimation.
#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "panosim/image.hpp"

namespace panosim {

/// Integer lattice coordinates; position = (i, j) * cell_size_m.
struct CellCoord {
  int i = 0;
  int j = 0;
  friend constexpr auto operator<=>(CellCoord, CellCoord) = default;
};

std::string to_string(CellCoord c);

struct PanoRecord {
  std::string id;
  std::string file;  // relative to the manifest directory
  double x_m = 0.0;
  double y_m = 0.0;
  std::optional<double> z_m;
  double yaw_offset = 0.0;
  std::string captured_at;  // RFC 3339
};

struct DatasetManifest {
  int version = 1;
  double cell_size_m = 0.2;
  int pano_width = 0;
  int pano_height = 0;
  double default_z_m = 0.0;  // camera height for records without z_m
  std::vector<PanoRecord> records;

  std::filesystem::path base_dir;  // not serialized

  double record_z(const PanoRecord& r) const { return r.z_m.value_or(default_z_m); }
  CellCoord cell_of(const PanoRecord& r) const;
};

/// Carries one diagnostic line per offending record.
class DatasetError : public std::runtime_error {
 public:
  explicit DatasetError(std::vector<std::string> diagnostics);
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<std::string> diagnostics_;
};

struct LoadOptions {
  bool check_files = true;
};

DatasetManifest load_manifest(const std::filesystem::path& path, LoadOptions options = {});
DatasetManifest parse_manifest(const std::string& json_text);
std::string manifest_to_json(const DatasetManifest& manifest);
/// Writes via a temporary file and rename.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

inline constexpr double kLatticeTolerance_m = 0.01;

struct ValidationReport {
  std::vector<std::string> aspect_violations;
  std::vector<std::string> duplicate_cells;
  std::vector<std::string> off_lattice;
  std::vector<std::string> missing_files;
  std::vector<std::string> other;
  double pano_px_per_deg = 0.0;
  double required_px_per_deg = 0.0;
  bool resolution_ok = false;

  bool ok() const;
  std::vector<std::string> lines() const;
};

/// Never throws; every finding lands in the report.
ValidationReport validate(const DatasetManifest& manifest, double required_px_per_deg,
                          bool check_files = true);

/// Horizontal pixels per degree of a full 360 degree panorama.
double angular_resolution(int pano_width);

/// Keeps records whose cell coordinates are both multiples of k and scales the
/// cell size by k.
DatasetManifest decimate(const DatasetManifest& manifest, int k);

/// Immutable lattice of occupied cells with nearest-cell lookup.
class GridIndex {
 public:
  explicit GridIndex(const DatasetManifest& manifest);

  double cell_size() const { return cell_size_; }
  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }
  bool occupied(CellCoord c) const { return cells_.contains(c); }
  const PanoRecord& record(CellCoord c) const;
  std::vector<CellCoord> cells() const;

  CellCoord min_cell() const { return min_; }
  CellCoord max_cell() const { return max_; }

  /// Occupied cell whose lattice point is planar-nearest to (x, y). Ties go to
  /// the lowest (i, then j).
  CellCoord nearest(double x_m, double y_m) const;

  /// The k nearest occupied cells ordered by distance with the same tie rule,
  /// optionally skipping one cell.
  std::vector<CellCoord> nearest_k(double x_m, double y_m, std::size_t k,
                                   std::optional<CellCoord> exclude = std::nullopt) const;

  double distance_m(double x_m, double y_m, CellCoord c) const;
  double lattice_x(CellCoord c) const { return c.i * cell_size_; }
  double lattice_y(CellCoord c) const { return c.j * cell_size_; }

 private:
  double cell_size_;
  std::map<CellCoord, PanoRecord> cells_;
  CellCoord min_{};
  CellCoord max_{};
};

/// Squared planar distance in cell units. Shared by every nearest-cell query so
/// that ties compare exactly.
inline double cell_distance2(double px, double py, CellCoord c) {
  const double dx = px - c.i;
  const double dy = py - c.j;
  return dx * dx + dy * dy;
}

/// Decoded panorama plus the record it came from.
struct EquirectPanorama {
  RgbImage image;
  PanoRecord record;

  int width() const { return image.width; }
  int height() const { return image.height; }
};

/// Decodes a record's image file and checks the 2:1 aspect ratio.
EquirectPanorama load_panorama(const DatasetManifest& manifest, const PanoRecord& record);

/// Test pattern: R = round(255 u / (W-1)), G = round(255 v / (H-1)), B = 128.
EquirectPanorama synth_pano(int width, int height);

/// Equirectangular view of an axis-aligned box room with smooth wall shading,
/// as seen from `eye`. Used to build synthetic multi-panorama datasets whose
/// content changes with capture position.
struct SynthRoom {
  Vec3 min_corner{-3.0, -3.0, 0.0};
  Vec3 max_corner{5.0, 5.0, 2.6};
};
RgbImage synth_room_pano(int width, int height, Vec3 eye, const SynthRoom& room = {});

}  // namespace panosim
