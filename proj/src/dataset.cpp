#include "panosim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

#include "json.hpp"

namespace panosim {

using nlohmann::json;

namespace {

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    if (!out.empty()) out += "; ";
    out += l;
  }
  return out;
}

double lattice_error(double pos, double cell_size) {
  return std::abs(pos - std::round(pos / cell_size) * cell_size);
}

PanoRecord record_from_json(const json& j) {
  PanoRecord r;
  r.id = j.at("id").get<std::string>();
  r.file = j.at("file").get<std::string>();
  r.x_m = j.at("x_m").get<double>();
  r.y_m = j.at("y_m").get<double>();
  if (j.contains("z_m") && !j.at("z_m").is_null()) r.z_m = j.at("z_m").get<double>();
  r.yaw_offset = j.value("yaw_offset", 0.0);
  r.captured_at = j.value("captured_at", std::string{});
  return r;
}

json record_to_json(const PanoRecord& r) {
  json j;
  j["id"] = r.id;
  j["file"] = r.file;
  j["x_m"] = r.x_m;
  j["y_m"] = r.y_m;
  if (r.z_m) j["z_m"] = *r.z_m;
  j["yaw_offset"] = r.yaw_offset;
  j["captured_at"] = r.captured_at;
  return j;
}

// Structural problems that make a manifest unusable.
std::vector<std::string> structural_errors(const DatasetManifest& m) {
  std::vector<std::string> errs;
  if (m.version != 1) errs.push_back("unsupported manifest version " + std::to_string(m.version));
  if (!(m.cell_size_m > 0.0)) errs.push_back("cell_size_m must be positive");
  if (m.records.empty()) errs.push_back("empty dataset");
  return errs;
}

}  // namespace

std::string to_string(CellCoord c) {
  return "(" + std::to_string(c.i) + "," + std::to_string(c.j) + ")";
}

CellCoord DatasetManifest::cell_of(const PanoRecord& r) const {
  return {static_cast<int>(std::lround(r.x_m / cell_size_m)),
          static_cast<int>(std::lround(r.y_m / cell_size_m))};
}

DatasetError::DatasetError(std::vector<std::string> diagnostics)
    : std::runtime_error(join_lines(diagnostics)), diagnostics_(std::move(diagnostics)) {}

DatasetManifest parse_manifest(const std::string& json_text) {
  DatasetManifest m;
  try {
    const json j = json::parse(json_text);
    m.version = j.at("version").get<int>();
    m.cell_size_m = j.at("cell_size_m").get<double>();
    m.pano_width = j.at("pano_width").get<int>();
    m.pano_height = j.at("pano_height").get<int>();
    m.default_z_m = j.value("default_z_m", 0.0);
    for (const auto& r : j.at("records")) m.records.push_back(record_from_json(r));
  } catch (const json::exception& e) {
    throw DatasetError({std::string("manifest parse error: ") + e.what()});
  }
  return m;
}

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["version"] = m.version;
  j["cell_size_m"] = m.cell_size_m;
  j["pano_width"] = m.pano_width;
  j["pano_height"] = m.pano_height;
  if (m.default_z_m != 0.0) j["default_z_m"] = m.default_z_m;
  j["records"] = json::array();
  for (const auto& r : m.records) j["records"].push_back(record_to_json(r));
  return j.dump(2) + "\n";
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetError({"cannot write " + tmp.string()});
    out << manifest_to_json(manifest);
    if (!out) throw DatasetError({"short write to " + tmp.string()});
  }
  std::filesystem::rename(tmp, path);
}

DatasetManifest load_manifest(const std::filesystem::path& path, LoadOptions options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError({"cannot open manifest " + path.string()});
  std::stringstream buf;
  buf << in.rdbuf();
  DatasetManifest m = parse_manifest(buf.str());
  m.base_dir = path.parent_path();

  auto errs = structural_errors(m);
  if (errs.empty()) {
    const ValidationReport report = validate(m, 0.0, options.check_files);
    for (const auto* group : {&report.aspect_violations, &report.duplicate_cells,
                              &report.off_lattice, &report.missing_files, &report.other}) {
      errs.insert(errs.end(), group->begin(), group->end());
    }
  }
  if (!errs.empty()) throw DatasetError(std::move(errs));
  return m;
}

bool ValidationReport::ok() const {
  return aspect_violations.empty() && duplicate_cells.empty() && off_lattice.empty() &&
         missing_files.empty() && other.empty() && resolution_ok;
}

std::vector<std::string> ValidationReport::lines() const {
  std::vector<std::string> out;
  for (const auto* group : {&other, &aspect_violations, &duplicate_cells, &off_lattice, &missing_files}) {
    out.insert(out.end(), group->begin(), group->end());
  }
  std::ostringstream res;
  res.precision(4);
  res << "angular resolution " << pano_px_per_deg << " px/deg (required " << required_px_per_deg
      << "): " << (resolution_ok ? "pass" : "FAIL");
  out.push_back(res.str());
  return out;
}

ValidationReport validate(const DatasetManifest& m, double required_px_per_deg, bool check_files) {
  ValidationReport report;
  report.other = structural_errors(m);
  report.required_px_per_deg = required_px_per_deg;

  if (m.pano_width <= 0 || m.pano_height <= 0 || m.pano_width != 2 * m.pano_height) {
    report.aspect_violations.push_back("panorama size " + std::to_string(m.pano_width) + "x" +
                                       std::to_string(m.pano_height) + " is not 2:1");
  }
  if (m.pano_width > 0) report.pano_px_per_deg = angular_resolution(m.pano_width);
  report.resolution_ok = report.pano_px_per_deg >= required_px_per_deg && m.pano_width > 0;

  std::set<std::string> ids;
  std::map<CellCoord, std::string> owners;
  for (const auto& r : m.records) {
    if (!ids.insert(r.id).second) report.other.push_back("duplicate record id " + r.id);
    if (!(m.cell_size_m > 0.0)) continue;
    const CellCoord c = m.cell_of(r);
    if (auto [it, inserted] = owners.emplace(c, r.id); !inserted) {
      report.duplicate_cells.push_back("cell " + to_string(c) + " holds both " + it->second +
                                       " and " + r.id);
    }
    if (lattice_error(r.x_m, m.cell_size_m) > kLatticeTolerance_m ||
        lattice_error(r.y_m, m.cell_size_m) > kLatticeTolerance_m) {
      std::ostringstream s;
      s << "record " << r.id << " at (" << r.x_m << ", " << r.y_m
        << ") is more than 1 cm from the lattice";
      report.off_lattice.push_back(s.str());
    }
    if (check_files) {
      std::error_code ec;
      if (!std::filesystem::is_regular_file(m.base_dir / r.file, ec)) {
        report.missing_files.push_back("record " + r.id + ": missing file " + r.file);
      }
    }
  }
  return report;
}

double angular_resolution(int pano_width) { return pano_width / 360.0; }

DatasetManifest decimate(const DatasetManifest& m, int k) {
  if (k < 1) throw std::invalid_argument("decimation factor must be >= 1");
  DatasetManifest out = m;
  out.records.clear();
  out.cell_size_m = m.cell_size_m * k;
  auto multiple = [k](int v) { return ((v % k) + k) % k == 0; };
  for (const auto& r : m.records) {
    const CellCoord c = m.cell_of(r);
    if (multiple(c.i) && multiple(c.j)) out.records.push_back(r);
  }
  if (out.records.empty()) throw DatasetError({"decimation empties dataset"});
  return out;
}

GridIndex::GridIndex(const DatasetManifest& manifest) : cell_size_(manifest.cell_size_m) {
  if (!(cell_size_ > 0.0)) throw DatasetError({"cell_size_m must be positive"});
  std::vector<std::string> errs;
  bool first = true;
  for (const auto& r : manifest.records) {
    const CellCoord c = manifest.cell_of(r);
    if (auto [it, inserted] = cells_.emplace(c, r); !inserted) {
      errs.push_back("cell " + to_string(c) + " holds both " + it->second.id + " and " + r.id);
      continue;
    }
    if (first) {
      min_ = max_ = c;
      first = false;
    } else {
      min_ = {std::min(min_.i, c.i), std::min(min_.j, c.j)};
      max_ = {std::max(max_.i, c.i), std::max(max_.j, c.j)};
    }
  }
  if (!errs.empty()) throw DatasetError(std::move(errs));
}

const PanoRecord& GridIndex::record(CellCoord c) const {
  auto it = cells_.find(c);
  if (it == cells_.end()) throw std::out_of_range("cell " + to_string(c) + " is not occupied");
  return it->second;
}

std::vector<CellCoord> GridIndex::cells() const {
  std::vector<CellCoord> out;
  out.reserve(cells_.size());
  for (const auto& [c, _] : cells_) out.push_back(c);
  return out;
}

double GridIndex::distance_m(double x_m, double y_m, CellCoord c) const {
  return std::sqrt(cell_distance2(x_m / cell_size_, y_m / cell_size_, c)) * cell_size_;
}

CellCoord GridIndex::nearest(double x_m, double y_m) const {
  if (cells_.empty()) throw std::logic_error("nearest() on an empty grid");
  const double px = x_m / cell_size_;
  const double py = y_m / cell_size_;
  // Clamp the ring center into the occupied bounding box so far-away queries
  // still terminate quickly.
  const CellCoord c0{std::clamp(static_cast<int>(std::lround(px)), min_.i, max_.i),
                     std::clamp(static_cast<int>(std::lround(py)), min_.j, max_.j)};
  const double off = std::max(std::abs(px - c0.i), std::abs(py - c0.j));
  const int max_ring = std::max({c0.i - min_.i, max_.i - c0.i, c0.j - min_.j, max_.j - c0.j});

  bool found = false;
  CellCoord best{};
  double best_d2 = 0.0;
  auto consider = [&](CellCoord c) {
    if (!cells_.contains(c)) return;
    const double d2 = cell_distance2(px, py, c);
    if (!found || d2 < best_d2 || (d2 == best_d2 && c < best)) {
      found = true;
      best = c;
      best_d2 = d2;
    }
  };

  for (int r = 0; r <= max_ring; ++r) {
    if (found) {
      // Every cell on ring r is at least (r - off) away along one axis.
      const double lower = r - off;
      if (lower > 0.0 && lower * lower > best_d2) break;
    }
    if (r == 0) {
      consider(c0);
      continue;
    }
    for (int di = -r; di <= r; ++di) {
      consider({c0.i + di, c0.j - r});
      consider({c0.i + di, c0.j + r});
    }
    for (int dj = -r + 1; dj <= r - 1; ++dj) {
      consider({c0.i - r, c0.j + dj});
      consider({c0.i + r, c0.j + dj});
    }
  }
  return best;
}

std::vector<CellCoord> GridIndex::nearest_k(double x_m, double y_m, std::size_t k,
                                            std::optional<CellCoord> exclude) const {
  const double px = x_m / cell_size_;
  const double py = y_m / cell_size_;
  std::vector<std::pair<double, CellCoord>> all;
  all.reserve(cells_.size());
  for (const auto& [c, _] : cells_) {
    if (exclude && c == *exclude) continue;
    all.emplace_back(cell_distance2(px, py, c), c);
  }
  const std::size_t n = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end());
  std::vector<CellCoord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(all[i].second);
  return out;
}

EquirectPanorama load_panorama(const DatasetManifest& manifest, const PanoRecord& record) {
  EquirectPanorama pano{read_rgb(manifest.base_dir / record.file), record};
  if (pano.width() != 2 * pano.height()) {
    throw ImageError(record.file + ": panorama is " + std::to_string(pano.width()) + "x" +
                     std::to_string(pano.height()) + ", not 2:1");
  }
  if (manifest.pano_width > 0 &&
      (pano.width() != manifest.pano_width || pano.height() != manifest.pano_height)) {
    throw ImageError(record.file + ": size differs from the manifest");
  }
  return pano;
}

EquirectPanorama synth_pano(int width, int height) {
  if (width != 2 * height || height < 1) {
    throw std::invalid_argument("synthetic panorama must be 2:1");
  }
  EquirectPanorama pano;
  pano.image = RgbImage(width, height);
  pano.record.id = "synthetic";
  for (int v = 0; v < height; ++v) {
    const auto g = static_cast<std::uint8_t>(
        std::lround(255.0 * v / std::max(1, height - 1)));
    for (int u = 0; u < width; ++u) {
      const auto r = static_cast<std::uint8_t>(std::lround(255.0 * u / (width - 1)));
      pano.image.set(u, v, {r, g, 128});
    }
  }
  return pano;
}

RgbImage synth_room_pano(int width, int height, Vec3 eye, const SynthRoom& room) {
  constexpr double kPi = std::numbers::pi;
  RgbImage img(width, height);
  const double lo[3] = {room.min_corner.x, room.min_corner.y, room.min_corner.z};
  const double hi[3] = {room.max_corner.x, room.max_corner.y, room.max_corner.z};
  const double e[3] = {eye.x, eye.y, eye.z};
  for (int v = 0; v < height; ++v) {
    const double phi = kPi / 2.0 - kPi * v / std::max(1, height - 1);
    for (int u = 0; u < width; ++u) {
      const double theta = 2.0 * kPi * u / width - kPi;
      const double d[3] = {std::cos(phi) * std::cos(theta), std::cos(phi) * std::sin(theta),
                           std::sin(phi)};
      double t = 1e30;
      int axis = 0;
      for (int a = 0; a < 3; ++a) {
        if (d[a] == 0.0) continue;
        const double ta = ((d[a] > 0.0 ? hi[a] : lo[a]) - e[a]) / d[a];
        if (ta > 0.0 && ta < t) {
          t = ta;
          axis = a;
        }
      }
      const double p[3] = {e[0] + t * d[0], e[1] + t * d[1], e[2] + t * d[2]};
      // Two in-plane coordinates of the hit wall.
      const double s = p[(axis + 1) % 3];
      const double w = p[(axis + 2) % 3];
      const double side = d[axis] > 0.0 ? 1.0 : 0.0;
      auto shade = [](double x) {
        return static_cast<std::uint8_t>(std::clamp(std::lround(x), 0L, 255L));
      };
      const double base = 60.0 + 50.0 * axis + 30.0 * side;
      img.set(u, v,
              {shade(base + 60.0 * std::sin(1.3 * s) * std::cos(0.9 * w)),
               shade(128.0 + 90.0 * std::sin(0.8 * s + 1.7 * w + side)),
               shade(200.0 - base * 0.5 + 40.0 * std::cos(2.1 * w - 0.6 * s))});
    }
  }
  return img;
}

}  // namespace panosim
