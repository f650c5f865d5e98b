#include "panosim/capture_osc.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <thread>

#include "panosim/image.hpp"

namespace panosim {

using nlohmann::ordered_json;

// ---- Timestamps ----------------------------------------------------------

std::string format_rfc3339(SysMillis t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss hms{t - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()), static_cast<int>(hms.subseconds().count()));
  return buf;
}

SysMillis parse_rfc3339(const std::string& text) {
  using namespace std::chrono;
  const auto bad = [&] { return std::invalid_argument("not an RFC 3339 timestamp: " + text); };
  int y, mo, d, h, mi, s, consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &y, &mo, &d, &h, &mi, &s, &consumed) != 6 ||
      consumed != 19) {
    throw bad();
  }
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) throw bad();
  std::size_t pos = 19;
  int millis = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int digits = 0;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      if (digits < 3) millis = millis * 10 + (text[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0 || digits > 9) throw bad();
    for (int k = digits; k < 3; ++k) millis *= 10;
  }
  minutes offset{0};
  if (pos < text.size() && (text[pos] == 'Z' || text[pos] == 'z')) {
    ++pos;
  } else if (pos + 6 == text.size() && (text[pos] == '+' || text[pos] == '-') && text[pos + 3] == ':') {
    int oh, om;
    if (std::sscanf(text.c_str() + pos + 1, "%2d:%2d", &oh, &om) != 2) throw bad();
    offset = minutes{oh * 60 + om};
    if (text[pos] == '-') offset = -offset;
    pos += 6;
  } else {
    throw bad();
  }
  if (pos != text.size()) throw bad();
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} + milliseconds{millis} - offset;
}

SysMillis now_millis() {
  return std::chrono::floor<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

// ---- OSC client ----------------------------------------------------------

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw TransportError("not an absolute URL: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

httplib::Client make_client(const std::string& origin, std::chrono::milliseconds timeout) {
  httplib::Client cli(origin);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  return cli;
}

OscState parse_state(const std::string& s) {
  if (s == "inProgress") return OscState::kInProgress;
  if (s == "done") return OscState::kDone;
  if (s == "error") return OscState::kError;
  throw TransportError("unknown command state '" + s + "'");
}

}  // namespace

OscClient::OscClient(std::string base_url, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

OscCommand OscClient::post_command(const std::string& path, const std::string& body) {
  auto cli = make_client(base_url_, timeout_);
  const auto res = cli.Post(path, body, "application/json;charset=utf-8");
  if (!res) {
    throw TransportError("camera at " + base_url_ + " unreachable: " + httplib::to_string(res.error()));
  }
  ordered_json j;
  try {
    j = ordered_json::parse(res->body);
  } catch (const ordered_json::parse_error&) {
    throw TransportError("camera returned HTTP " + std::to_string(res->status) + " with a non-JSON body");
  }
  if (j.contains("error")) {
    const auto& e = j["error"];
    throw OscError(e.value("code", std::string("unknown")), e.value("message", std::string()));
  }
  if (res->status != 200) throw TransportError("camera returned HTTP " + std::to_string(res->status));

  OscCommand cmd;
  cmd.name = j.value("name", std::string());
  cmd.id = j.value("id", std::string());
  cmd.state = parse_state(j.value("state", std::string()));
  if (cmd.state == OscState::kError) throw OscError("unknown", "command failed without an error body");
  if (cmd.state == OscState::kDone) {
    const auto results = j.value("results", ordered_json::object());
    if (!results.contains("fileUrl")) throw TransportError("finished command has no fileUrl");
    cmd.file_url = results["fileUrl"].get<std::string>();
  }
  return cmd;
}

OscCommand OscClient::take_picture() {
  return post_command("/osc/commands/execute",
                      R"({"name":"camera.takePicture","parameters":{}})");
}

OscCommand OscClient::poll(const std::string& id) {
  return post_command("/osc/commands/status", ordered_json{{"id", id}}.dump());
}

OscCommand OscClient::wait_done(const OscCommand& started, std::chrono::milliseconds interval,
                                int max_polls) {
  OscCommand cmd = started;
  for (int n = 0; cmd.state == OscState::kInProgress; ++n) {
    if (n == max_polls) {
      throw TransportError("command " + started.id + " still in progress after " +
                           std::to_string(max_polls) + " polls");
    }
    if (interval.count() > 0) std::this_thread::sleep_for(interval);
    cmd = poll(started.id);
  }
  return cmd;
}

std::filesystem::path OscClient::download(const std::string& file_url,
                                          const std::filesystem::path& dest) {
  const SplitUrl url = file_url.starts_with("/") ? SplitUrl{base_url_, file_url} : split_url(file_url);
  auto cli = make_client(url.origin, timeout_);

  auto tmp = dest;
  tmp += ".part";
  std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + tmp.string());
  std::uint64_t received = 0;
  std::array<unsigned char, 3> head{};
  std::array<unsigned char, 2> tail{};
  std::optional<std::uint64_t> advertised;
  int status = 0;

  const auto res = cli.Get(
      url.path,
      [&](const httplib::Response& r) {
        status = r.status;
        if (r.has_header("Content-Length")) advertised = std::stoull(r.get_header_value("Content-Length"));
        return r.status == 200;
      },
      [&](const char* data, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) {
          const auto b = static_cast<unsigned char>(data[k]);
          if (received + k < head.size()) head[received + k] = b;
          tail[0] = tail[1];
          tail[1] = b;
        }
        received += n;
        out.write(data, static_cast<std::streamsize>(n));
        return static_cast<bool>(out);
      });
  out.close();

  auto discard = [&] {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
  };
  if (!res) {
    discard();
    if (status != 0 && status != 200) {
      throw TransportError("download of " + file_url + " returned HTTP " + std::to_string(status));
    }
    if (status == 200 || res.error() == httplib::Error::Read) {
      throw TruncatedDownload("download of " + file_url + " interrupted after " +
                              std::to_string(received) + " bytes");
    }
    throw TransportError("download of " + file_url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    discard();
    throw TransportError("download of " + file_url + " returned HTTP " + std::to_string(res->status));
  }
  if (advertised && *advertised != received) {
    discard();
    throw TruncatedDownload("download of " + file_url + " has " + std::to_string(received) +
                            " bytes, expected " + std::to_string(*advertised));
  }
  const bool soi = received >= 3 && head == std::array<unsigned char, 3>{0xFF, 0xD8, 0xFF};
  const bool eoi = received >= 5 && tail == std::array<unsigned char, 2>{0xFF, 0xD9};
  if (!soi || !eoi) {
    discard();
    throw TruncatedDownload("download of " + file_url + " is not a complete JPEG (" +
                            std::to_string(received) + " bytes)");
  }
  std::filesystem::rename(tmp, dest);
  return dest;
}

// ---- Capture session -----------------------------------------------------

std::string to_string(CellStatus s) {
  switch (s) {
    case CellStatus::kPlanned: return "planned";
    case CellStatus::kInFlight: return "in_flight";
    case CellStatus::kCaptured: return "captured";
    case CellStatus::kFailed: return "failed";
  }
  return "?";
}

CellStatus parse_cell_status(const std::string& s) {
  for (auto c : {CellStatus::kPlanned, CellStatus::kInFlight, CellStatus::kCaptured, CellStatus::kFailed}) {
    if (to_string(c) == s) return c;
  }
  throw std::invalid_argument("unknown cell status '" + s + "'");
}

CaptureSession::CaptureSession(double cell_size_m, std::string started_at)
    : cell_size_m_(cell_size_m), started_at_(std::move(started_at)) {
  if (!(cell_size_m > 0.0)) throw std::invalid_argument("cell_size_m must be positive");
}

const CellState& CaptureSession::cell(CellCoord c) const {
  const auto it = cells_.find(c);
  if (it == cells_.end()) throw SessionError("cell " + to_string(c) + " is not in the plan");
  return it->second;
}

CellState& CaptureSession::mutable_cell(CellCoord c) { return const_cast<CellState&>(cell(c)); }

void CaptureSession::expect(CellCoord c, CellStatus want, const char* action) const {
  const CellStatus have = cell(c).status;
  if (have != want) {
    throw SessionError("cannot " + std::string(action) + " cell " + to_string(c) + ": it is " +
                       to_string(have));
  }
}

std::optional<CellCoord> CaptureSession::in_flight() const {
  for (const auto& [c, st] : cells_) {
    if (st.status == CellStatus::kInFlight) return c;
  }
  return std::nullopt;
}

void CaptureSession::plan(const std::vector<CellCoord>& cells) {
  for (CellCoord c : cells) cells_.try_emplace(c);
}

void CaptureSession::begin(CellCoord c, std::optional<std::string> command_id) {
  expect(c, CellStatus::kPlanned, "start capturing");
  if (const auto busy = in_flight()) {
    throw SessionError("cell " + to_string(*busy) + " is already being captured");
  }
  auto& st = mutable_cell(c);
  st.status = CellStatus::kInFlight;
  st.command_id = std::move(command_id);
  st.reason.reset();
}

void CaptureSession::complete(CellCoord c, std::string file, std::string photo_id,
                              std::string captured_at) {
  expect(c, CellStatus::kInFlight, "complete");
  if (!history_.empty() && parse_rfc3339(captured_at) < parse_rfc3339(history_.back())) {
    throw SessionError("capture time " + captured_at + " precedes the last capture");
  }
  auto& st = mutable_cell(c);
  st.status = CellStatus::kCaptured;
  st.file = std::move(file);
  st.photo_id = std::move(photo_id);
  st.captured_at = captured_at;
  history_.push_back(std::move(captured_at));
}

void CaptureSession::fail(CellCoord c, std::string reason) {
  expect(c, CellStatus::kInFlight, "fail");
  auto& st = mutable_cell(c);
  st.status = CellStatus::kFailed;
  st.reason = std::move(reason);
}

void CaptureSession::retry(CellCoord c) {
  expect(c, CellStatus::kFailed, "retry");
  mutable_cell(c).status = CellStatus::kPlanned;
}

std::size_t CaptureSession::count(CellStatus s) const {
  return static_cast<std::size_t>(
      std::count_if(cells_.begin(), cells_.end(), [&](const auto& kv) { return kv.second.status == s; }));
}

std::string session_to_json(const CaptureSession& s) {
  ordered_json cells = ordered_json::array();
  for (const auto& [c, st] : s.cells()) {
    ordered_json e{{"i", c.i}, {"j", c.j}, {"status", to_string(st.status)}};
    auto opt = [&](const char* key, const std::optional<std::string>& v) {
      if (v) e[key] = *v;
    };
    opt("file", st.file);
    opt("photo_id", st.photo_id);
    opt("captured_at", st.captured_at);
    opt("command_id", st.command_id);
    opt("reason", st.reason);
    cells.push_back(std::move(e));
  }
  const ordered_json j{{"version", 1},
                       {"cell_size_m", s.cell_size_m()},
                       {"started_at", s.started_at()},
                       {"cells", std::move(cells)},
                       {"history", s.history()}};
  return j.dump(2) + "\n";
}

CaptureSession parse_session(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw std::invalid_argument(std::string("session is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != 1) throw std::invalid_argument("unsupported session version");
    CaptureSession s(j.at("cell_size_m").get<double>(), j.at("started_at").get<std::string>());
    std::size_t in_flight = 0;
    for (const auto& e : j.at("cells")) {
      const CellCoord c{e.at("i").get<int>(), e.at("j").get<int>()};
      CellState st;
      st.status = parse_cell_status(e.at("status").get<std::string>());
      auto opt = [&](const char* key, std::optional<std::string>& v) {
        if (e.contains(key)) v = e[key].get<std::string>();
      };
      opt("file", st.file);
      opt("photo_id", st.photo_id);
      opt("captured_at", st.captured_at);
      opt("command_id", st.command_id);
      opt("reason", st.reason);
      if (st.status == CellStatus::kCaptured && (!st.file || !st.captured_at)) {
        throw std::invalid_argument("captured cell " + to_string(c) + " lacks file or captured_at");
      }
      in_flight += st.status == CellStatus::kInFlight;
      if (!s.cells_.emplace(c, std::move(st)).second) {
        throw std::invalid_argument("cell " + to_string(c) + " listed twice");
      }
    }
    if (in_flight > 1) throw std::invalid_argument("more than one cell in flight");

    s.history_ = j.at("history").get<std::vector<std::string>>();
    for (std::size_t k = 1; k < s.history_.size(); ++k) {
      if (parse_rfc3339(s.history_[k]) < parse_rfc3339(s.history_[k - 1])) {
        throw std::invalid_argument("session history is not ordered");
      }
    }
    return s;
  } catch (const ordered_json::exception& e) {
    throw std::invalid_argument(std::string("malformed session: ") + e.what());
  }
}

CaptureSession load_session(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read session " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_session(text);
}

void save_session(const CaptureSession& s, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << session_to_json(s);
    if (!out.flush()) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Throughput throughput_and_eta(const CaptureSession& s, std::optional<std::size_t> window) {
  Throughput out;
  out.captured = s.count(CellStatus::kCaptured);
  out.remaining = s.remaining();
  const auto& h = s.history();
  const std::size_t n = window ? std::min(*window, h.size()) : h.size();
  if (n < 2) return out;
  const auto first = parse_rfc3339(h[h.size() - n]);
  const auto last = parse_rfc3339(h.back());
  const double minutes = std::chrono::duration<double, std::ratio<60>>(last - first).count();
  if (!(minutes > 0.0)) return out;
  out.rate_per_min = static_cast<double>(n - 1) / minutes;
  out.eta_min = static_cast<double>(out.remaining) / *out.rate_per_min;
  return out;
}

// ---- End-to-end capture --------------------------------------------------

std::string capture_id(CellCoord c) {
  return "cell_" + std::to_string(c.i) + "_" + std::to_string(c.j);
}

OscCommand begin_capture(CaptureSession& session, CellCoord cell, OscClient& client) {
  // Validate the transition before touching the camera.
  if (session.cell(cell).status != CellStatus::kPlanned || session.in_flight()) {
    session.begin(cell);  // throws SessionError with the reason
  }
  try {
    OscCommand cmd = client.take_picture();
    session.begin(cell, cmd.id);
    return cmd;
  } catch (const std::exception& e) {
    session.begin(cell);
    session.fail(cell, e.what());
    throw;
  }
}

CapturedPhoto fetch_photo(CellCoord cell, double cell_size_m, const OscCommand& started,
                          OscClient& client, const CaptureTarget& target) {
  const OscCommand done = client.wait_done(started, target.poll_interval, target.max_polls);

  const std::string id = capture_id(cell);
  const std::string rel = "imgs/" + id + ".jpg";
  std::filesystem::create_directories(target.dataset_dir / "imgs");
  const auto dest = target.dataset_dir / rel;
  client.download(*done.file_url, dest);
  const RgbImage img = read_rgb(dest);

  DatasetManifest m;
  if (std::filesystem::exists(target.manifest_path)) {
    m = load_manifest(target.manifest_path, {.check_files = false});
    if (std::abs(m.cell_size_m - cell_size_m) > 1e-12) {
      throw DatasetError({"manifest cell size " + std::to_string(m.cell_size_m) +
                          " differs from the session's " + std::to_string(cell_size_m)});
    }
    if (m.pano_width != img.width || m.pano_height != img.height) {
      throw DatasetError({"photo is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                          ", manifest expects " + std::to_string(m.pano_width) + "x" +
                          std::to_string(m.pano_height)});
    }
  } else {
    m.cell_size_m = cell_size_m;
    m.pano_width = img.width;
    m.pano_height = img.height;
  }

  CapturedPhoto photo{rel, id, format_rfc3339(target.clock())};
  PanoRecord rec;
  rec.id = id;
  rec.file = rel;
  rec.x_m = cell.i * cell_size_m;
  rec.y_m = cell.j * cell_size_m;
  rec.captured_at = photo.captured_at;
  std::erase_if(m.records, [&](const PanoRecord& r) { return r.id == id; });
  m.records.push_back(rec);
  std::sort(m.records.begin(), m.records.end(), [&](const PanoRecord& a, const PanoRecord& b) {
    return m.cell_of(a) < m.cell_of(b);
  });
  save_manifest(m, target.manifest_path);
  return photo;
}

void finish_capture(CaptureSession& session, CellCoord cell, const OscCommand& started,
                    OscClient& client, const CaptureTarget& target) {
  try {
    const CapturedPhoto p = fetch_photo(cell, session.cell_size_m(), started, client, target);
    session.complete(cell, p.file, p.photo_id, p.captured_at);
  } catch (const std::exception& e) {
    if (session.cell(cell).status == CellStatus::kInFlight) session.fail(cell, e.what());
    throw;
  }
}

void capture_cell(CaptureSession& session, CellCoord cell, OscClient& client,
                  const CaptureTarget& target) {
  const OscCommand cmd = begin_capture(session, cell, client);
  finish_capture(session, cell, cmd, client, target);
}

}  // namespace panosim
