#include "csv_input.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace panosim::cli {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, sep)) out.push_back(trim(field));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double to_double(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || !std::isfinite(v)) {
    throw InputError(where + ": not a finite number: '" + s + "'");
  }
  return v;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

}  // namespace

std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path,
                                                  const std::vector<std::string>& columns) {
  std::ifstream in(path);
  if (!in) throw InputError(path.string() + ": cannot open");
  std::string line;
  if (!std::getline(in, line) || split(trim(line)) != columns) {
    throw InputError(path.string() + ": header must be '" + join(columns) + "'");
  }
  std::vector<std::vector<double>> rows;
  for (int lineno = 2; std::getline(in, line); ++lineno) {
    if (trim(line).empty()) continue;
    const auto fields = split(trim(line));
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (fields.size() != columns.size()) {
      throw InputError(where + ": expected " + std::to_string(columns.size()) + " fields");
    }
    std::vector<double> row;
    for (const auto& f : fields) row.push_back(to_double(f, where));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<TimedPose> read_pose_csv(const std::filesystem::path& path) {
  const auto rows = read_numeric_csv(path, {"t", "x", "y", "z", "yaw", "pitch", "roll"});
  std::vector<TimedPose> poses;
  for (const auto& r : rows) {
    TimedPose p;
    p.t_s = r[0];
    p.pose.x_m = r[1];
    p.pose.y_m = r[2];
    p.pose.z_m = r[3];
    p.pose.orientation = {r[4], r[5], r[6]};
    if (!poses.empty() && p.t_s <= poses.back().t_s) {
      throw InputError(path.string() + ": timestamps must increase strictly");
    }
    poses.push_back(p);
  }
  for (std::size_t k = 0; k + 1 < poses.size(); ++k) {
    const double dt = poses[k + 1].t_s - poses[k].t_s;
    poses[k].pose.vx = (poses[k + 1].pose.x_m - poses[k].pose.x_m) / dt;
    poses[k].pose.vy = (poses[k + 1].pose.y_m - poses[k].pose.y_m) / dt;
  }
  if (poses.size() > 1) {
    poses.back().pose.vx = poses[poses.size() - 2].pose.vx;
    poses.back().pose.vy = poses[poses.size() - 2].pose.vy;
  }
  return poses;
}

std::vector<CellCoord> read_cell_csv(const std::filesystem::path& path) {
  std::vector<CellCoord> cells;
  for (const auto& r : read_numeric_csv(path, {"i", "j"})) {
    if (r[0] != std::floor(r[0]) || r[1] != std::floor(r[1])) {
      throw InputError(path.string() + ": cell indices must be integers");
    }
    cells.push_back({static_cast<int>(r[0]), static_cast<int>(r[1])});
  }
  return cells;
}

CameraPose parse_pose(const std::string& text) {
  const auto fields = split(text);
  if (fields.size() != 6) throw UsageError("--pose needs x,y,z,yaw,pitch,roll");
  std::vector<double> v;
  for (const auto& f : fields) {
    try {
      v.push_back(to_double(f, "--pose"));
    } catch (const InputError& e) {
      throw UsageError(e.what());
    }
  }
  CameraPose p;
  p.x_m = v[0];
  p.y_m = v[1];
  p.z_m = v[2];
  p.orientation = {v[3], v[4], v[5]};
  return p;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (const auto& f : split(text)) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (f.empty() || ec != std::errc() || ptr != f.data() + f.size()) {
      throw UsageError("not an integer list: '" + text + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("empty integer list");
  return out;
}

}  // namespace panosim::cli
