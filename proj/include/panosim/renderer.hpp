// Perspective view synthesis from a single equirectangular panorama.
#pragma once

#include <string>

#include "panosim/dataset.hpp"
#include "panosim/geo.hpp"
#include "panosim/image.hpp"

namespace panosim {

struct CameraPose {
  double x_m = 0.0;
  double y_m = 0.0;
  double z_m = 0.0;
  Orientation orientation;
  double vx = 0.0;  // planar velocity, m/s
  double vy = 0.0;
};

/// In-cell interpolation: the projection camera is displaced inside the unit
/// sphere in proportion to the virtual camera's offset from the capture point.
struct InterpolationParams {
  bool enabled = false;
  double lambda = 0.5;
  double max_radius = 0.95;
  bool include_z = false;
};

struct RenderRequest {
  CameraPose pose;
  CameraIntrinsics intrinsics{640, 480, deg_to_rad(60.0)};
  InterpolationParams interpolation;
};

struct Frame {
  RgbImage image;
  std::string source_pano_id;
  bool stalled = false;
};

struct PanoSelection {
  CellCoord cell;
  std::string id;
  double distance_m = 0.0;
};

PanoSelection select_panorama(const GridIndex& grid, const CameraPose& pose);

/// Sphere-frame origin for the projection camera. dz is the height difference
/// to the capture point and only contributes when params.include_z is set.
Vec3 sphere_offset(const CameraPose& pose, double center_x, double center_y, double cell_size,
                   const InterpolationParams& params, double dz = 0.0);

/// Renders the view of `pano` for the request. The capture point of the
/// panorama record serves as the cell center. Rows may be split across
/// `threads` workers; output is identical for any thread count.
Frame render(const RenderRequest& req, const EquirectPanorama& pano, double cell_size_m,
             double pano_z_m = 0.0, int threads = 1);

/// Alpha-over of a straight-alpha RGBA overlay onto an RGB base, rounding half
/// up. Throws std::invalid_argument on a size mismatch.
RgbImage composite_over(const RgbImage& base, const RgbaImage& overlay);

/// Mean absolute difference over all channels.
double image_mae(const RgbImage& a, const RgbImage& b);
/// Peak signal-to-noise ratio in dB; +infinity for identical images.
double image_psnr(const RgbImage& a, const RgbImage& b);

}  // namespace panosim
