#include <json.hpp>

#include "service_internal.hpp"

namespace panosim {

using nlohmann::json;

namespace {

json session_payload(const CaptureSession& s) {
  json j = json::parse(session_to_json(s));
  const Throughput tp = throughput_and_eta(s);
  const std::size_t total = s.cells().size();
  j["stats"] = {{"total", total},
                {"planned", s.count(CellStatus::kPlanned)},
                {"in_flight", s.count(CellStatus::kInFlight)},
                {"captured", tp.captured},
                {"failed", s.count(CellStatus::kFailed)},
                {"remaining", tp.remaining},
                {"progress", total ? static_cast<double>(tp.captured) / static_cast<double>(total) : 0.0},
                {"rate_per_min", tp.rate_per_min ? json(*tp.rate_per_min) : json(nullptr)},
                {"eta_min", tp.eta_min ? json(*tp.eta_min) : json(nullptr)}};
  return j;
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, json{{"error", message}});
}

CellCoord cell_from(const json& j) { return {j.at("i").get<int>(), j.at("j").get<int>()}; }

}  // namespace

void load_capture_session(SimService::CaptureState& state, const ServiceConfig& config) {
  if (!config.session_path.empty() && std::filesystem::exists(config.session_path)) {
    state.session = load_session(config.session_path);
  }
}

void install_capture_routes(httplib::Server& server, SimService::CaptureState& state,
                            const ServiceConfig& config, double default_cell_size) {
  auto persist = [&state, &config] {
    if (!config.session_path.empty() && state.session) save_session(*state.session, config.session_path);
  };
  auto dataset_dir = [&config] {
    if (!config.capture_dir.empty()) return config.capture_dir;
    if (!config.session_path.empty()) return config.session_path.parent_path();
    return std::filesystem::current_path();
  };

  server.Get("/capture/session", [&state](const httplib::Request&, httplib::Response& res) {
    std::lock_guard lk(state.mu);
    if (!state.session) return reply_error(res, 404, "no capture session; POST /capture/plan first");
    reply(res, 200, session_payload(*state.session));
  });

  server.Post("/capture/plan", [&state, persist, default_cell_size](const httplib::Request& req,
                                                                     httplib::Response& res) {
    std::vector<CellCoord> cells;
    std::optional<double> cell_size;
    try {
      const json body = json::parse(req.body);
      for (const auto& c : body.at("cells")) cells.push_back(cell_from(c));
      if (body.contains("cell_size_m")) cell_size = body["cell_size_m"].get<double>();
    } catch (const json::exception& e) {
      return reply_error(res, 400, std::string("malformed plan: ") + e.what());
    }
    std::lock_guard lk(state.mu);
    try {
      if (!state.session) {
        state.session.emplace(cell_size.value_or(default_cell_size), format_rfc3339(now_millis()));
      } else if (cell_size && *cell_size != state.session->cell_size_m()) {
        return reply_error(res, 409, "session already uses a different cell size");
      }
    } catch (const std::invalid_argument& e) {
      return reply_error(res, 400, e.what());
    }
    state.session->plan(cells);
    persist();
    reply(res, 200, session_payload(*state.session));
  });

  server.Post("/capture/trigger", [&state, &config, persist, dataset_dir](const httplib::Request& req,
                                                                           httplib::Response& res) {
    CellCoord cell;
    try {
      cell = cell_from(json::parse(req.body));
    } catch (const json::exception& e) {
      return reply_error(res, 400, std::string("malformed trigger: ") + e.what());
    }
    if (config.camera_url.empty()) return reply_error(res, 503, "no camera configured");

    // Triggers are serialized; mark and session reads only take state.mu.
    std::lock_guard serial(state.trigger_mu);
    auto check = [&](httplib::Response& r) {
      if (!state.session) return reply_error(r, 404, "no capture session"), false;
      if (!state.session->cells().contains(cell)) return reply_error(r, 404, "cell is not planned"), false;
      if (state.trigger_busy || state.session->in_flight()) {
        return reply_error(r, 409, "another capture is in progress"), false;
      }
      const CellStatus st = state.session->cell(cell).status;
      if (st == CellStatus::kCaptured) return reply_error(r, 409, "cell is already captured"), false;
      return true;
    };
    {
      std::lock_guard lk(state.mu);
      if (!check(res)) return;
    }
    if (state.completion.joinable()) state.completion.join();  // finished: nothing is in flight
    {
      std::lock_guard lk(state.mu);
      if (!check(res)) return;
      if (state.session->cell(cell).status == CellStatus::kFailed) state.session->retry(cell);
      state.trigger_busy = true;
    }

    auto client = std::make_shared<OscClient>(config.camera_url, std::chrono::seconds(5));
    std::optional<OscCommand> cmd;
    std::string failure;
    try {
      cmd = client->take_picture();
    } catch (const std::exception& e) {
      failure = e.what();
    }
    std::lock_guard lk(state.mu);
    state.trigger_busy = false;
    auto& session = *state.session;
    if (!cmd) {
      session.begin(cell);
      session.fail(cell, failure);
      persist();
      return reply_error(res, 502, "camera unreachable: " + failure);
    }
    session.begin(cell, cmd->id);
    persist();

    CaptureTarget target;
    target.dataset_dir = dataset_dir();
    target.manifest_path = target.dataset_dir / "manifest.json";
    target.poll_interval = config.camera_poll_interval;
    target.max_polls = 240;
    const double cell_size = session.cell_size_m();
    state.completion = std::jthread([&state, persist, client, cell, cell_size, target, started = *cmd] {
      try {
        const CapturedPhoto p = fetch_photo(cell, cell_size, started, *client, target);
        std::lock_guard inner(state.mu);
        state.session->complete(cell, p.file, p.photo_id, p.captured_at);
        persist();
      } catch (const std::exception& e) {
        std::lock_guard inner(state.mu);
        if (state.session->cell(cell).status == CellStatus::kInFlight) state.session->fail(cell, e.what());
        persist();
      }
    });
    reply(res, 202, json{{"command_id", cmd->id}, {"i", cell.i}, {"j", cell.j}, {"status", "in_flight"}});
  });

  server.Post("/capture/mark", [&state, persist](const httplib::Request& req, httplib::Response& res) {
    CellCoord cell;
    std::string photo_id;
    std::optional<std::string> file;
    try {
      const json body = json::parse(req.body);
      cell = cell_from(body);
      photo_id = body.at("photo_id").get<std::string>();
      if (body.contains("file")) file = body["file"].get<std::string>();
    } catch (const json::exception& e) {
      return reply_error(res, 400, std::string("malformed mark: ") + e.what());
    }
    if (photo_id.empty()) return reply_error(res, 400, "photo_id must not be empty");
    std::lock_guard lk(state.mu);
    if (!state.session) return reply_error(res, 404, "no capture session");
    auto& session = *state.session;
    if (!session.cells().contains(cell)) return reply_error(res, 404, "cell is not planned");
    const CellStatus st = session.cell(cell).status;
    if (st == CellStatus::kCaptured) return reply_error(res, 409, "cell is already captured");
    if (st == CellStatus::kInFlight || state.trigger_busy || session.in_flight()) {
      return reply_error(res, 409, "a capture is in progress");
    }
    try {
      if (st == CellStatus::kFailed) session.retry(cell);
      session.begin(cell);
      session.complete(cell, file.value_or(photo_id), photo_id, format_rfc3339(now_millis()));
    } catch (const SessionError& e) {
      if (session.cell(cell).status == CellStatus::kInFlight) session.fail(cell, e.what());
      return reply_error(res, 409, e.what());
    }
    persist();
    reply(res, 200, session_payload(session));
  });
}

}  // namespace panosim
