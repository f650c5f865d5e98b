// Virtual-clock replay of a robot trajectory against the cache policy.
//
// Mirrors PanoCache: prefetch plans come from predict_cells, prefetch decodes
// run FIFO on `workers` simulated decoders, and a frame whose cell is neither
// resident nor being decoded decodes on the render thread.
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "panosim/dataset.hpp"
#include "panosim/pano_cache.hpp"
#include "panosim/renderer.hpp"

namespace panosim {

struct TimedPose {
  double t_s = 0.0;
  CameraPose pose;
};

/// Decode time = fixed_ms + uniform jitter in [0, jitter_ms), from a seeded
/// generator.
struct LatencyModel {
  double fixed_ms = 200.0;
  double jitter_ms = 0.0;
  std::uint64_t seed = 1;
};

struct SimOptions {
  bool prefetch = true;
  double render_ms = 0.0;  // time the render thread spends per frame after the pano is ready
};

struct FrameTrace {
  double t_s = 0.0;
  CellCoord cell;
  bool stalled = false;
  double wait_ms = 0.0;
  std::size_t resident = 0;
};

struct StallReport {
  std::size_t frames = 0;
  std::size_t stalls = 0;                   // all frames that waited on a decode
  std::size_t warmup_stalls = 0;            // stalls before the robot first left its start cell
  std::size_t stalls_after_first_cell = 0;  // stalls - warmup_stalls
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t decodes = 0;
  std::uint64_t prefetch_loads = 0;
  std::size_t max_resident = 0;
  std::vector<FrameTrace> trace;
};

/// Throws std::invalid_argument if poses are not time-ordered or the config is
/// invalid. Deterministic for a fixed latency seed.
StallReport simulate_trajectory(const std::vector<TimedPose>& poses, const GridIndex& grid,
                                const LatencyModel& latency, const CacheConfig& config,
                                const SimOptions& options = {});

/// Constant-velocity straight line sampled at `fps`, starting at (x0, y0).
std::vector<TimedPose> straight_line(double x0, double y0, double vx, double vy,
                                     double duration_s, double fps);

}  // namespace panosim
