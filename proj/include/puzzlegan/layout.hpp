#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace puzzlegan {

// Part ids are 1-based; 0 never names a part.
using PartId = int;

struct GridCell {
  int row = 0;  // 0 = top
  int col = 0;  // 0 = left

  auto operator<=>(const GridCell&) const = default;
};

struct CellAssignment {
  GridCell cell;
  PartId part = 0;

  bool operator==(const CellAssignment&) const = default;
};

// Grid-cell to part assignment for the generator's first spatial block.
//
// The layout is stored as a raw list of (cell, part) pairs so that broken
// layouts (missing cells, cells claimed twice, parts with no cells) can be
// represented and reported by validate_layout(). Everything downstream of
// validation assumes the assignment is a partition of the grid.
class PartLayout {
 public:
  PartLayout() = default;
  PartLayout(int grid_height, int grid_width, int num_parts,
             std::vector<CellAssignment> assignment,
             std::vector<std::string> part_names = {});

  // Row-major part ids, one per cell; 0 marks an unassigned cell.
  static PartLayout from_grid(int grid_height, int grid_width, int num_parts,
                              std::span<const PartId> row_major,
                              std::vector<std::string> part_names = {});

  int grid_height() const { return grid_height_; }
  int grid_width() const { return grid_width_; }
  int num_parts() const { return num_parts_; }
  int num_cells() const { return grid_height_ * grid_width_; }
  const std::vector<CellAssignment>& assignment() const { return assignment_; }
  const std::vector<std::string>& part_names() const { return part_names_; }

  // Label for a part; falls back to "part <id>".
  std::string part_name(PartId part) const;

  // Part owning `cell` (first match in the assignment list), 0 if none.
  PartId part_at(GridCell cell) const;

  // Row-major part id per cell, 0 for unassigned cells.
  std::vector<PartId> grid() const;

  bool operator==(const PartLayout&) const = default;

 private:
  int grid_height_ = 0;
  int grid_width_ = 0;
  int num_parts_ = 0;
  std::vector<CellAssignment> assignment_;
  std::vector<std::string> part_names_;
};

struct LayoutViolation {
  enum class Kind {
    kBadDimensions,
    kCellOutOfBounds,
    kUncoveredCell,
    kOverlappingCell,
    kBadPartId,
    kEmptyPart,
  };

  Kind kind;
  std::optional<GridCell> cell;
  std::optional<PartId> part;
  std::string message;
};

struct LayoutReport {
  std::vector<LayoutViolation> violations;

  bool ok() const { return violations.empty(); }
};

LayoutReport validate_layout(const PartLayout& layout);

enum class CanonicalLayout { kFaceSwap, kFacialParts };

PartLayout canonical_layout(CanonicalLayout kind);
// Accepts "face_swap" and "facial_parts".
PartLayout canonical_layout(std::string_view kind);

// Cells owned by `part`, sorted row-major. This order fixes where each
// head's output lands in the first block.
std::vector<GridCell> part_cells(const PartLayout& layout, PartId part);

// Layout file text format:
//
//   grid_height: 8
//   grid_width: 8
//   num_parts: 2
//   part 1: face            (optional, one line per named part)
//   grid:
//   2 2 2 2 2 2 2 2
//   ...                     (grid_height rows of grid_width ids)
//
// '#' starts a comment. Ragged or malformed rows are rejected with the
// offending line number. The parser does not validate the partition; run
// validate_layout() on the result.
PartLayout parse_layout(std::string_view text);
PartLayout read_layout_file(const std::string& path);
std::string serialize_layout(const PartLayout& layout);
void write_layout_file(const std::string& path, const PartLayout& layout);

// ASCII rendering of the grid with part ids, '.' for unassigned cells.
std::string render_layout(const PartLayout& layout);

// FNV-1a over the serialized layout; ties bundles and checkpoints to the
// layout they were made for.
std::uint64_t layout_fingerprint(const PartLayout& layout);

}  // namespace puzzlegan
