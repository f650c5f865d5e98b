#include "panosim/trajectory_sim.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <random>
#include <stdexcept>

namespace panosim {

namespace {

class DecodeClock {
 public:
  struct Job {
    CellCoord cell;
    double finish;
    bool prefetch;
  };

  DecodeClock(const LatencyModel& model, std::size_t workers, std::size_t capacity)
      : model_(model), rng_(model.seed), worker_free_(workers, 0.0), residency_(capacity) {}

  LruResidency& residency() { return residency_; }
  StallReport& report() { return report_; }

  double sample_latency_s() {
    double ms = model_.fixed_ms;
    if (model_.jitter_ms > 0.0) ms += std::uniform_real_distribution<double>(0.0, model_.jitter_ms)(rng_);
    return ms / 1000.0;
  }

  const Job* running(CellCoord c) const {
    for (const auto& j : running_) {
      if (j.cell == c) return &j;
    }
    return nullptr;
  }

  void replace_queue(const std::vector<CellCoord>& cells, double now) {
    queue_.clear();
    for (CellCoord c : cells) {
      if (residency_.contains(c) || running(c)) continue;
      queue_.push_back({c, now});
    }
  }

  void dequeue(CellCoord c) {
    std::erase_if(queue_, [&](const Queued& q) { return q.cell == c; });
  }

  /// Joins a running prefetch; returns its finish time.
  double claim(CellCoord c) {
    for (auto& j : running_) {
      if (j.cell == c) {
        if (j.prefetch) {
          j.prefetch = false;
          --report_.prefetch_loads;
        }
        return j.finish;
      }
    }
    throw std::logic_error("claim of a cell that is not being decoded");
  }

  /// Processes worker starts and completions up to and including `until`.
  void advance_to(double until) {
    while (true) {
      auto done = std::min_element(running_.begin(), running_.end(),
                                   [](const Job& a, const Job& b) { return a.finish < b.finish; });
      const double t_done =
          done == running_.end() ? std::numeric_limits<double>::infinity() : done->finish;

      double t_start = std::numeric_limits<double>::infinity();
      std::size_t worker = 0;
      if (!queue_.empty()) {
        auto w = std::min_element(worker_free_.begin(), worker_free_.end());
        worker = static_cast<std::size_t>(w - worker_free_.begin());
        t_start = std::max(*w, queue_.front().enqueued);
      }

      if (t_done <= until && t_done <= t_start) {
        residency_.insert(done->cell);
        running_.erase(done);
        continue;
      }
      if (t_start <= until) {
        const CellCoord c = queue_.front().cell;
        queue_.pop_front();
        const double finish = t_start + sample_latency_s();
        worker_free_[worker] = finish;
        running_.push_back({c, finish, true});
        ++report_.decodes;
        ++report_.prefetch_loads;
        continue;
      }
      break;
    }
  }

 private:
  struct Queued {
    CellCoord cell;
    double enqueued;
  };

  LatencyModel model_;
  std::mt19937_64 rng_;
  std::vector<double> worker_free_;
  std::vector<Job> running_;
  std::deque<Queued> queue_;
  LruResidency residency_;
  StallReport report_;
};

}  // namespace

StallReport simulate_trajectory(const std::vector<TimedPose>& poses, const GridIndex& grid,
                                const LatencyModel& latency, const CacheConfig& config,
                                const SimOptions& options) {
  config.validate();
  for (std::size_t i = 1; i < poses.size(); ++i) {
    if (poses[i].t_s < poses[i - 1].t_s) throw std::invalid_argument("poses must be time-ordered");
  }
  DecodeClock clock(latency, config.workers, config.capacity);
  auto& res = clock.residency();
  auto& report = clock.report();

  double render_free = 0.0;
  std::optional<CellCoord> start_cell;
  bool left_start = false;

  for (const auto& tp : poses) {
    const double now = std::max(tp.t_s, render_free);
    clock.advance_to(now);

    const CellCoord cur = grid.nearest(tp.pose.x_m, tp.pose.y_m);
    if (!start_cell) start_cell = cur;
    if (cur != *start_cell) left_start = true;
    res.set_current(cur);

    if (options.prefetch) {
      const auto plan = predict_cells(tp.pose, grid, config.prefetch_depth, config.neighbor_k);
      std::vector<CellCoord> head = plan.cells();
      if (head.size() > config.capacity - 1) head.resize(config.capacity - 1);
      res.set_plan(head);
      clock.replace_queue(head, now);
      clock.advance_to(now);
    }

    FrameTrace ft{tp.t_s, cur, false, 0.0, 0};
    double ready = now;
    if (res.contains(cur)) {
      ++report.hits;
      res.touch(cur);
    } else {
      ++report.misses;
      ft.stalled = true;
      if (clock.running(cur)) {
        ready = clock.claim(cur);
        clock.advance_to(ready);
      } else {
        clock.dequeue(cur);
        ++report.decodes;
        ready = now + clock.sample_latency_s();
        clock.advance_to(ready);
        res.insert(cur);
      }
      ++report.stalls;
      if (left_start) {
        ++report.stalls_after_first_cell;
      } else {
        ++report.warmup_stalls;
      }
    }
    ft.wait_ms = (ready - now) * 1000.0;
    ft.resident = res.size();
    report.max_resident = std::max(report.max_resident, res.size());
    render_free = ready + options.render_ms / 1000.0;
    report.trace.push_back(ft);
    ++report.frames;
  }
  return report;
}

std::vector<TimedPose> straight_line(double x0, double y0, double vx, double vy, double duration_s,
                                     double fps) {
  std::vector<TimedPose> out;
  const auto n = static_cast<std::size_t>(duration_s * fps) + 1;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / fps;
    CameraPose p;
    p.x_m = x0 + vx * t;
    p.y_m = y0 + vy * t;
    p.vx = vx;
    p.vy = vy;
    out.push_back({t, p});
  }
  return out;
}

}  // namespace panosim
