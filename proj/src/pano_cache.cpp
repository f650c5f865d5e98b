#include "panosim/pano_cache.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace panosim {

void CacheConfig::validate() const {
  if (workers == 0) throw std::invalid_argument("cache needs at least one decode worker");
  if (capacity == 0 || capacity < neighbor_k + prefetch_depth) {
    throw std::invalid_argument("cache capacity must be >= neighbor_k + prefetch_depth and >= 1");
  }
}

std::vector<CellCoord> PrefetchPlan::cells() const {
  std::vector<CellCoord> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.cell);
  return out;
}

PrefetchPlan predict_cells(const CameraPose& pose, const GridIndex& grid, std::size_t depth,
                           std::size_t neighbor_k) {
  PrefetchPlan plan;
  if (grid.empty()) return plan;
  const CellCoord current = grid.nearest(pose.x_m, pose.y_m);
  const double speed = std::hypot(pose.vx, pose.vy);

  if (speed < kStationarySpeed) {
    for (CellCoord c : grid.nearest_k(pose.x_m, pose.y_m, neighbor_k, current)) {
      plan.entries.push_back({c, grid.distance_m(pose.x_m, pose.y_m, c)});
    }
    return plan;
  }
  if (depth == 0) return plan;

  // Amanatides-Woo traversal in cell units; cell (i, j) spans
  // (i - 0.5, i + 0.5] x (j - 0.5, j + 0.5].
  const double d = grid.cell_size();
  const double px = pose.x_m / d;
  const double py = pose.y_m / d;
  const double dx = pose.vx / speed;
  const double dy = pose.vy / speed;
  constexpr double kInf = std::numeric_limits<double>::infinity();

  int ci = static_cast<int>(std::ceil(px - 0.5));
  int cj = static_cast<int>(std::ceil(py - 0.5));
  const int step_i = dx > 0.0 ? 1 : (dx < 0.0 ? -1 : 0);
  const int step_j = dy > 0.0 ? 1 : (dy < 0.0 ? -1 : 0);
  double t_max_i = step_i == 0 ? kInf : ((ci + 0.5 * step_i) - px) / dx;
  double t_max_j = step_j == 0 ? kInf : ((cj + 0.5 * step_j) - py) / dy;
  const double t_delta_i = step_i == 0 ? kInf : 1.0 / std::abs(dx);
  const double t_delta_j = step_j == 0 ? kInf : 1.0 / std::abs(dy);

  const CellCoord lo = grid.min_cell();
  const CellCoord hi = grid.max_cell();
  auto unreachable = [&] {
    return (ci < lo.i && step_i <= 0) || (ci > hi.i && step_i >= 0) ||
           (cj < lo.j && step_j <= 0) || (cj > hi.j && step_j >= 0);
  };

  while (plan.entries.size() < depth && !unreachable()) {
    double t;
    const double tol = 1e-9 * std::max(1.0, std::min(t_max_i, t_max_j));
    if (std::abs(t_max_i - t_max_j) <= tol) {
      // Through a lattice corner: enter the diagonal cell directly.
      t = t_max_i;
      ci += step_i;
      cj += step_j;
      t_max_i += t_delta_i;
      t_max_j += t_delta_j;
    } else if (t_max_i < t_max_j) {
      t = t_max_i;
      ci += step_i;
      t_max_i += t_delta_i;
    } else {
      t = t_max_j;
      cj += step_j;
      t_max_j += t_delta_j;
    }
    const CellCoord c{ci, cj};
    if (c == current || !grid.occupied(c)) continue;
    const bool seen = std::any_of(plan.entries.begin(), plan.entries.end(),
                                  [&](const PlanEntry& e) { return e.cell == c; });
    if (!seen) plan.entries.push_back({c, t * d});
  }
  return plan;
}

double max_speed(double cell_size_m, double t_load_s, std::size_t workers) {
  if (!(cell_size_m > 0.0) || !(t_load_s > 0.0) || workers == 0) {
    throw std::invalid_argument("max_speed arguments must be positive");
  }
  return cell_size_m * static_cast<double>(workers) / t_load_s;
}

// --- LruResidency ---

void LruResidency::touch(CellCoord c) {
  auto it = index_.find(c);
  if (it == index_.end()) return;
  order_.splice(order_.begin(), order_, it->second);
}

LruResidency::InsertResult LruResidency::insert(CellCoord c) {
  if (contains(c)) {
    touch(c);
    return {true, std::nullopt};
  }
  InsertResult result;
  if (index_.size() >= capacity_) {
    auto victim = order_.end();
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      if (!is_protected(*it)) {
        victim = std::prev(it.base());
        break;
      }
    }
    if (victim == order_.end()) {
      if (!is_protected(c)) return result;
      // Every entry is protected: give up the oldest plan entry, never the
      // current cell.
      for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        if (!(current_ && *it == *current_)) {
          victim = std::prev(it.base());
          break;
        }
      }
      if (victim == order_.end()) return result;
    }
    result.evicted = *victim;
    index_.erase(*victim);
    order_.erase(victim);
  }
  order_.push_front(c);
  index_[c] = order_.begin();
  result.inserted = true;
  return result;
}

std::vector<CellCoord> LruResidency::lru_order() const { return {order_.begin(), order_.end()}; }

// --- PanoCache ---

PanoCache::PanoCache(const GridIndex& grid, PanoLoader loader, CacheConfig config)
    : grid_(grid), loader_(std::move(loader)), config_(config), residency_(config.capacity) {
  config_.validate();
  workers_.reserve(config_.workers);
  for (std::size_t i = 0; i < config_.workers; ++i) {
    workers_.emplace_back([this](std::stop_token st) { worker_loop(st); });
  }
}

PanoCache::~PanoCache() {
  for (auto& w : workers_) w.request_stop();
  workers_.clear();
}

PanoPtr PanoCache::decode(CellCoord cell) {
  const PanoRecord& record = grid_.record(cell);
  const auto start = std::chrono::steady_clock::now();
  PanoPtr pano;
  try {
    pano = std::make_shared<const EquirectPanorama>(loader_(record));
  } catch (const DecodeError&) {
    throw;
  } catch (const std::exception& e) {
    throw DecodeError(record.id, e.what());
  }
  if (pano->record.id != record.id) {
    throw DecodeError(record.id, "loader returned panorama " + pano->record.id);
  }
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  std::lock_guard lock(mu_);
  finish_decode(cell, pano, ms);
  return pano;
}

void PanoCache::finish_decode(CellCoord cell, const PanoPtr& pano, double ms) {
  total_decode_ms_ += ms;
  ++completed_decodes_;
  stats_.last_decode_ms = ms;
  const auto r = residency_.insert(cell);
  if (r.evicted) store_.erase(*r.evicted);
  if (r.inserted) store_[cell] = pano;
}

PanoCache::Lookup PanoCache::get(CellCoord cell, Access access) {
  if (!grid_.occupied(cell)) throw std::out_of_range("cell " + to_string(cell) + " is not occupied");
  std::unique_lock lock(mu_);
  residency_.set_current(cell);
  if (auto it = store_.find(cell); it != store_.end()) {
    ++stats_.hits;
    residency_.touch(cell);
    return {it->second, true};
  }
  ++stats_.misses;
  if (access == Access::kRender) ++stats_.stalls;

  if (auto it = running_.find(cell); it != running_.end()) {
    if (it->second.from_prefetch) {
      it->second.from_prefetch = false;
      --stats_.prefetch_loads;
    }
    auto fut = it->second.result;
    lock.unlock();
    return {fut.get(), false};
  }

  std::erase(queue_, cell);
  std::promise<PanoPtr> promise;
  running_[cell] = {promise.get_future().share(), false};
  ++stats_.decodes;
  lock.unlock();

  try {
    PanoPtr pano = decode(cell);
    lock.lock();
    running_.erase(cell);
    promise.set_value(pano);
    cv_.notify_all();
    return {pano, false};
  } catch (...) {
    if (!lock.owns_lock()) lock.lock();
    ++stats_.failures;
    running_.erase(cell);
    promise.set_exception(std::current_exception());
    cv_.notify_all();
    throw;
  }
}

void PanoCache::prefetch(const PrefetchPlan& plan) {
  std::lock_guard lock(mu_);
  const std::size_t budget = config_.capacity > 0 ? config_.capacity - 1 : 0;
  std::vector<CellCoord> head;
  for (const auto& e : plan.entries) {
    if (head.size() >= budget) break;
    head.push_back(e.cell);
  }
  residency_.set_plan(head);
  queue_.clear();
  for (CellCoord c : head) {
    if (!grid_.occupied(c) || store_.contains(c) || running_.contains(c)) continue;
    queue_.push_back(c);
  }
  cv_.notify_all();
}

void PanoCache::worker_loop(std::stop_token stop) {
  while (true) {
    std::unique_lock lock(mu_);
    if (!cv_.wait(lock, stop, [&] { return !queue_.empty(); })) return;
    const CellCoord cell = queue_.front();
    queue_.pop_front();
    std::promise<PanoPtr> promise;
    running_[cell] = {promise.get_future().share(), true};
    ++stats_.decodes;
    ++stats_.prefetch_loads;
    lock.unlock();
    try {
      PanoPtr pano = decode(cell);
      lock.lock();
      running_.erase(cell);
      promise.set_value(std::move(pano));
    } catch (...) {
      if (!lock.owns_lock()) lock.lock();
      ++stats_.failures;
      running_.erase(cell);
      promise.set_exception(std::current_exception());
    }
    cv_.notify_all();
  }
}

CacheStats PanoCache::stats() const {
  std::lock_guard lock(mu_);
  CacheStats s = stats_;
  s.resident = store_.size();
  s.mean_decode_ms =
      completed_decodes_ > 0 ? total_decode_ms_ / static_cast<double>(completed_decodes_) : 0.0;
  return s;
}

bool PanoCache::resident(CellCoord c) const {
  std::lock_guard lock(mu_);
  return store_.contains(c);
}

std::vector<CellCoord> PanoCache::scheduled() const {
  std::lock_guard lock(mu_);
  std::vector<CellCoord> out(queue_.begin(), queue_.end());
  for (const auto& [c, p] : running_) {
    if (p.from_prefetch) out.push_back(c);
  }
  return out;
}

void PanoCache::wait_idle() const {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return queue_.empty() && running_.empty(); });
}

}  // namespace panosim
