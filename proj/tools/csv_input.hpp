// Header-checked numeric CSV input for the command-line tools.
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "panosim/dataset.hpp"
#include "panosim/trajectory_sim.hpp"

namespace panosim::cli {

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed command-line value, as opposed to malformed file contents.
class UsageError : public InputError {
 public:
  using InputError::InputError;
};

/// Rows of a CSV whose header must equal `columns` exactly. Blank lines are
/// skipped; every field must parse as a finite number.
std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path,
                                                  const std::vector<std::string>& columns);

/// t,x,y,z,yaw,pitch,roll (seconds, meters, radians). Planar velocity is
/// differenced from consecutive rows.
std::vector<TimedPose> read_pose_csv(const std::filesystem::path& path);

/// i,j
std::vector<CellCoord> read_cell_csv(const std::filesystem::path& path);

/// "x,y,z,yaw,pitch,roll"
CameraPose parse_pose(const std::string& text);

std::vector<int> parse_int_list(const std::string& text);

}  // namespace panosim::cli
