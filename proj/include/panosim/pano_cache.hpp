// Residency management for decoded panoramas.
//
// One render consumer calls get() for the cell it is about to draw and
// prefetch() with a plan derived from the robot's motion. Prefetch decodes run
// on a fixed pool of workers; a get() on a cell that is neither resident nor
// being decoded decodes on the calling thread.
#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "panosim/dataset.hpp"
#include "panosim/renderer.hpp"

namespace panosim {

struct CacheConfig {
  std::size_t capacity = 8;
  std::size_t workers = 1;
  std::size_t prefetch_depth = 2;
  std::size_t neighbor_k = 4;

  /// Throws std::invalid_argument if capacity < neighbor_k + prefetch_depth or
  /// workers == 0.
  void validate() const;
};

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t stalls = 0;
  std::uint64_t decodes = 0;
  std::uint64_t prefetch_loads = 0;
  std::uint64_t failures = 0;
  double mean_decode_ms = 0.0;
  double last_decode_ms = 0.0;
  std::size_t resident = 0;
};

struct PlanEntry {
  CellCoord cell;
  double priority = 0.0;  // lower is sooner: entry distance (m) or neighbor distance
};

struct PrefetchPlan {
  std::vector<PlanEntry> entries;

  std::vector<CellCoord> cells() const;
  bool empty() const { return entries.empty(); }
};

/// Below this speed (m/s) the robot counts as stationary.
inline constexpr double kStationarySpeed = 1e-9;

/// Cells to warm next. A moving pose marches its velocity ray across the
/// lattice and collects the first `depth` occupied cells it enters after the
/// current one; a stationary pose falls back to the `neighbor_k` nearest
/// occupied cells. The current (nearest) cell is never part of the plan.
PrefetchPlan predict_cells(const CameraPose& pose, const GridIndex& grid, std::size_t depth,
                           std::size_t neighbor_k = 4);

/// Highest robot speed (m/s) at which decodes keep pace with cell crossings
/// along a grid axis: cell_size * workers / t_load. Off-axis motion enters a
/// new cell up to every cell_size/sqrt(2) of travel, so its sustainable speed
/// is lower by up to sqrt(2); this bound does not account for that.
double max_speed(double cell_size_m, double t_load_s, std::size_t workers);

/// Bookkeeping shared by the threaded cache and the trajectory simulator.
/// Recency is tracked per resident cell; insertion happens when a decode
/// completes and may evict the least recently used unprotected entry.
class LruResidency {
 public:
  explicit LruResidency(std::size_t capacity) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return index_.size(); }
  bool contains(CellCoord c) const { return index_.contains(c); }
  void touch(CellCoord c);

  /// The cell being rendered; never evicted.
  void set_current(CellCoord c) { current_ = c; }
  /// Plan head; evicted only to make room for other protected cells.
  void set_plan(const std::vector<CellCoord>& plan) { protected_ = {plan.begin(), plan.end()}; }
  bool is_protected(CellCoord c) const { return c == current_ || protected_.contains(c); }

  struct InsertResult {
    bool inserted = false;
    std::optional<CellCoord> evicted;
  };
  /// New entries start as most recent. Unprotected newcomers are dropped when
  /// every resident entry is protected.
  InsertResult insert(CellCoord c);

  std::vector<CellCoord> lru_order() const;  // most recent first

 private:
  std::size_t capacity_;
  std::list<CellCoord> order_;  // front = most recent
  std::map<CellCoord, std::list<CellCoord>::iterator> index_;
  std::optional<CellCoord> current_;
  std::set<CellCoord> protected_;
};

class DecodeError : public std::runtime_error {
 public:
  DecodeError(std::string pano_id, const std::string& what)
      : std::runtime_error("decode of " + pano_id + " failed: " + what), pano_id_(std::move(pano_id)) {}
  const std::string& pano_id() const { return pano_id_; }

 private:
  std::string pano_id_;
};

using PanoLoader = std::function<EquirectPanorama(const PanoRecord&)>;
using PanoPtr = std::shared_ptr<const EquirectPanorama>;

enum class Access { kRender, kBackground };

class PanoCache {
 public:
  PanoCache(const GridIndex& grid, PanoLoader loader, CacheConfig config = {});
  ~PanoCache();
  PanoCache(const PanoCache&) = delete;
  PanoCache& operator=(const PanoCache&) = delete;

  struct Lookup {
    PanoPtr pano;
    bool was_resident = false;
  };

  /// Throws DecodeError for a failed decode and std::out_of_range for an
  /// unoccupied cell.
  Lookup get(CellCoord cell, Access access = Access::kRender);

  /// Replaces queued (not yet started) prefetches with the non-resident cells
  /// among the first capacity-1 plan entries, in plan order. Never blocks.
  void prefetch(const PrefetchPlan& plan);

  CacheStats stats() const;
  const CacheConfig& config() const { return config_; }
  bool resident(CellCoord c) const;
  /// Queued plus in-progress prefetch cells, queue order first.
  std::vector<CellCoord> scheduled() const;
  /// Blocks until no prefetch is queued or running.
  void wait_idle() const;

 private:
  struct Pending {
    std::shared_future<PanoPtr> result;
    bool from_prefetch = false;
  };

  void worker_loop(std::stop_token stop);
  PanoPtr decode(CellCoord cell);
  void finish_decode(CellCoord cell, const PanoPtr& pano, double ms);

  const GridIndex& grid_;
  PanoLoader loader_;
  CacheConfig config_;

  mutable std::mutex mu_;
  mutable std::condition_variable_any cv_;
  LruResidency residency_;
  std::map<CellCoord, PanoPtr> store_;
  std::map<CellCoord, Pending> running_;
  std::deque<CellCoord> queue_;
  CacheStats stats_;
  double total_decode_ms_ = 0.0;
  std::uint64_t completed_decodes_ = 0;
  std::vector<std::jthread> workers_;
};

}  // namespace panosim
