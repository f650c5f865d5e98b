// Open Spherical Camera client and capture-session bookkeeping.
//
// A capture session tracks which lattice cells still need a photo. Capture is
// strictly sequential: one cell at a time is in flight. Each captured photo is
// downloaded next to the dataset manifest and recorded at the exact lattice
// position of its cell.
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "panosim/dataset.hpp"

namespace panosim {

// ---- Timestamps ----------------------------------------------------------

using SysMillis = std::chrono::sys_time<std::chrono::milliseconds>;

/// "2026-01-01T00:00:00.000Z"
std::string format_rfc3339(SysMillis t);
/// Accepts "Z" or "+hh:mm" offsets and 0-9 fractional digits; throws
/// std::invalid_argument otherwise.
SysMillis parse_rfc3339(const std::string& text);
SysMillis now_millis();

// ---- OSC client ----------------------------------------------------------

enum class OscState { kInProgress, kDone, kError };

struct OscCommand {
  std::string name;
  std::string id;
  OscState state = OscState::kInProgress;
  std::optional<std::string> file_url;  // present iff state == kDone
};

/// The camera answered with an error envelope.
class OscError : public std::runtime_error {
 public:
  OscError(std::string code, const std::string& message)
      : std::runtime_error("camera error " + code + ": " + message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

/// No usable HTTP exchange: connection refused, timeout, non-JSON reply.
class TransportError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Downloaded bytes are not a complete JPEG. Retrying the download may help.
class TruncatedDownload : public TransportError {
  using TransportError::TransportError;
};

class OscClient {
 public:
  /// base_url like "http://192.168.1.1" or "http://127.0.0.1:8080".
  explicit OscClient(std::string base_url,
                     std::chrono::milliseconds timeout = std::chrono::seconds(10));

  const std::string& base_url() const { return base_url_; }

  OscCommand take_picture();
  OscCommand poll(const std::string& id);
  /// Polls until the command leaves inProgress. Throws TransportError after
  /// max_polls unfinished answers, OscError if the command ends in error.
  OscCommand wait_done(const OscCommand& started, std::chrono::milliseconds interval,
                       int max_polls = 600);
  /// Streams fileUrl into dest via a temporary file. The body must be a
  /// complete JPEG (SOI marker first, EOI marker last) whose size matches any
  /// advertised Content-Length.
  std::filesystem::path download(const std::string& file_url, const std::filesystem::path& dest);

 private:
  OscCommand post_command(const std::string& path, const std::string& body);

  std::string base_url_;
  std::chrono::milliseconds timeout_;
};

// ---- Capture session -----------------------------------------------------

enum class CellStatus { kPlanned, kInFlight, kCaptured, kFailed };

std::string to_string(CellStatus s);
CellStatus parse_cell_status(const std::string& s);

struct CellState {
  CellStatus status = CellStatus::kPlanned;
  std::optional<std::string> file;         // relative to the dataset directory
  std::optional<std::string> photo_id;
  std::optional<std::string> captured_at;  // RFC 3339
  std::optional<std::string> command_id;
  std::optional<std::string> reason;       // last failure

  friend bool operator==(const CellState&, const CellState&) = default;
};

/// Illegal status change, e.g. capturing a cell that is already captured.
class SessionError : public std::logic_error {
  using std::logic_error::logic_error;
};

class CaptureSession {
 public:
  CaptureSession() = default;
  CaptureSession(double cell_size_m, std::string started_at);

  double cell_size_m() const { return cell_size_m_; }
  const std::string& started_at() const { return started_at_; }
  const std::map<CellCoord, CellState>& cells() const { return cells_; }
  const std::vector<std::string>& history() const { return history_; }
  const CellState& cell(CellCoord c) const;
  std::optional<CellCoord> in_flight() const;

  /// Adds cells as planned; cells already present are left untouched.
  void plan(const std::vector<CellCoord>& cells);
  /// planned -> in_flight. At most one cell may be in flight.
  void begin(CellCoord c, std::optional<std::string> command_id = {});
  /// in_flight -> captured; appends the timestamp to history, which must not
  /// go backwards.
  void complete(CellCoord c, std::string file, std::string photo_id, std::string captured_at);
  /// in_flight -> failed.
  void fail(CellCoord c, std::string reason);
  /// failed -> planned.
  void retry(CellCoord c);

  std::size_t count(CellStatus s) const;
  std::size_t remaining() const { return cells_.size() - count(CellStatus::kCaptured); }

  friend bool operator==(const CaptureSession&, const CaptureSession&) = default;
  friend CaptureSession parse_session(const std::string& text);

 private:
  CellState& mutable_cell(CellCoord c);
  void expect(CellCoord c, CellStatus want, const char* action) const;

  double cell_size_m_ = 0.2;
  std::string started_at_;
  std::map<CellCoord, CellState> cells_;
  std::vector<std::string> history_;
};

std::string session_to_json(const CaptureSession& s);
/// Throws std::invalid_argument on malformed input or broken invariants.
CaptureSession parse_session(const std::string& text);
CaptureSession load_session(const std::filesystem::path& path);
/// Crash-safe: writes a sibling temporary file, then renames it over path.
void save_session(const CaptureSession& s, const std::filesystem::path& path);

struct Throughput {
  std::optional<double> rate_per_min;  // needs >= 2 captures in the window
  std::optional<double> eta_min;
  std::size_t captured = 0;
  std::size_t remaining = 0;
};

/// rate = (n - 1) / (last - first) over the newest `window` history entries
/// (all when unset); eta = remaining / rate.
Throughput throughput_and_eta(const CaptureSession& s, std::optional<std::size_t> window = {});

// ---- End-to-end capture --------------------------------------------------

struct CaptureTarget {
  std::filesystem::path dataset_dir;   // photos go to dataset_dir/imgs/
  std::filesystem::path manifest_path; // created on first capture if absent
  std::chrono::milliseconds poll_interval{500};
  int max_polls = 600;
  std::function<SysMillis()> clock = now_millis;
};

/// Manifest record id for a cell, e.g. "cell_3_-2".
std::string capture_id(CellCoord c);

/// Starts a capture: take_picture, then planned -> in_flight. A transport or
/// camera error marks the cell failed and is rethrown. Returns the command.
OscCommand begin_capture(CaptureSession& session, CellCoord cell, OscClient& client);

struct CapturedPhoto {
  std::string file;  // relative to the dataset directory
  std::string photo_id;
  std::string captured_at;
};

/// Session-free half of a capture: polls the command to completion, downloads
/// the photo and adds or replaces the cell's manifest record at exactly
/// (i * cell_size, j * cell_size). Leaves the manifest unchanged on error.
CapturedPhoto fetch_photo(CellCoord cell, double cell_size_m, const OscCommand& started,
                          OscClient& client, const CaptureTarget& target);

/// fetch_photo, then in_flight -> captured. On any error the cell is marked
/// failed and the error is rethrown.
void finish_capture(CaptureSession& session, CellCoord cell, const OscCommand& started,
                    OscClient& client, const CaptureTarget& target);

/// begin_capture followed by finish_capture.
void capture_cell(CaptureSession& session, CellCoord cell, OscClient& client,
                  const CaptureTarget& target);

}  // namespace panosim
