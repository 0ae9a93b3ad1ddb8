#include "puzzlegan/layout.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "puzzlegan/errors.hpp"

namespace puzzlegan {

namespace {

std::string cell_str(GridCell c) {
  return "(" + std::to_string(c.row) + "," + std::to_string(c.col) + ")";
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::optional<int> parse_int(std::string_view s) {
  int value = 0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) return std::nullopt;
  return value;
}

[[noreturn]] void fail_at(int line, const std::string& what) {
  throw ValidationError("layout line " + std::to_string(line) + ": " + what);
}

}  // namespace

PartLayout::PartLayout(int grid_height, int grid_width, int num_parts,
                       std::vector<CellAssignment> assignment,
                       std::vector<std::string> part_names)
    : grid_height_(grid_height),
      grid_width_(grid_width),
      num_parts_(num_parts),
      assignment_(std::move(assignment)),
      part_names_(std::move(part_names)) {}

PartLayout PartLayout::from_grid(int grid_height, int grid_width, int num_parts,
                                 std::span<const PartId> row_major,
                                 std::vector<std::string> part_names) {
  if (grid_height < 0 || grid_width < 0 ||
      row_major.size() != static_cast<std::size_t>(grid_height) * grid_width) {
    throw ValidationError("layout grid has " + std::to_string(row_major.size()) +
                          " entries, expected " + std::to_string(grid_height) + "x" +
                          std::to_string(grid_width));
  }
  std::vector<CellAssignment> assignment;
  assignment.reserve(row_major.size());
  for (int r = 0; r < grid_height; ++r) {
    for (int c = 0; c < grid_width; ++c) {
      const PartId p = row_major[static_cast<std::size_t>(r) * grid_width + c];
      if (p != 0) assignment.push_back({{r, c}, p});
    }
  }
  return PartLayout(grid_height, grid_width, num_parts, std::move(assignment),
                    std::move(part_names));
}

std::string PartLayout::part_name(PartId part) const {
  if (part >= 1 && static_cast<std::size_t>(part) <= part_names_.size() &&
      !part_names_[part - 1].empty()) {
    return part_names_[part - 1];
  }
  return "part " + std::to_string(part);
}

PartId PartLayout::part_at(GridCell cell) const {
  for (const auto& a : assignment_) {
    if (a.cell == cell) return a.part;
  }
  return 0;
}

std::vector<PartId> PartLayout::grid() const {
  std::vector<PartId> out(static_cast<std::size_t>(std::max(0, num_cells())), 0);
  for (const auto& a : assignment_) {
    if (a.cell.row < 0 || a.cell.row >= grid_height_ || a.cell.col < 0 ||
        a.cell.col >= grid_width_) {
      continue;
    }
    auto& slot = out[static_cast<std::size_t>(a.cell.row) * grid_width_ + a.cell.col];
    if (slot == 0) slot = a.part;
  }
  return out;
}

LayoutReport validate_layout(const PartLayout& layout) {
  LayoutReport report;
  auto add = [&](LayoutViolation::Kind kind, std::optional<GridCell> cell,
                 std::optional<PartId> part, std::string message) {
    report.violations.push_back({kind, cell, part, std::move(message)});
  };

  const int h = layout.grid_height();
  const int w = layout.grid_width();
  const int k = layout.num_parts();
  if (h < 1 || w < 1 || k < 1) {
    add(LayoutViolation::Kind::kBadDimensions, std::nullopt, std::nullopt,
        "grid must be at least 1x1 with at least one part (got " + std::to_string(h) + "x" +
            std::to_string(w) + ", K=" + std::to_string(k) + ")");
    return report;
  }

  std::vector<int> claims(static_cast<std::size_t>(h) * w, 0);
  std::vector<int> owned(static_cast<std::size_t>(k) + 1, 0);
  for (const auto& a : layout.assignment()) {
    const bool in_bounds = a.cell.row >= 0 && a.cell.row < h && a.cell.col >= 0 && a.cell.col < w;
    if (!in_bounds) {
      add(LayoutViolation::Kind::kCellOutOfBounds, a.cell, a.part,
          "cell " + cell_str(a.cell) + " lies outside the " + std::to_string(h) + "x" +
              std::to_string(w) + " grid");
      continue;
    }
    if (a.part < 1 || a.part > k) {
      add(LayoutViolation::Kind::kBadPartId, a.cell, a.part,
          "cell " + cell_str(a.cell) + " assigned to part " + std::to_string(a.part) +
              ", valid ids are 1.." + std::to_string(k));
    } else {
      ++owned[a.part];
    }
    ++claims[static_cast<std::size_t>(a.cell.row) * w + a.cell.col];
  }

  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int n = claims[static_cast<std::size_t>(r) * w + c];
      if (n == 0) {
        add(LayoutViolation::Kind::kUncoveredCell, GridCell{r, c}, std::nullopt,
            "cell " + cell_str({r, c}) + " is not assigned to any part");
      } else if (n > 1) {
        add(LayoutViolation::Kind::kOverlappingCell, GridCell{r, c}, std::nullopt,
            "cell " + cell_str({r, c}) + " is assigned " + std::to_string(n) + " times");
      }
    }
  }
  for (PartId p = 1; p <= k; ++p) {
    if (owned[p] == 0) {
      add(LayoutViolation::Kind::kEmptyPart, std::nullopt, p,
          layout.part_name(p) + " (id " + std::to_string(p) + ") owns no cells");
    }
  }
  return report;
}

PartLayout canonical_layout(CanonicalLayout kind) {
  constexpr int kGrid = 8;
  std::vector<PartId> grid(kGrid * kGrid, 0);
  auto set = [&](int r, int c, PartId p) { grid[r * kGrid + c] = p; };

  switch (kind) {
    case CanonicalLayout::kFaceSwap: {
      for (int r = 0; r < kGrid; ++r)
        for (int c = 0; c < kGrid; ++c) set(r, c, 2);
      for (int r = 2; r <= 6; ++r)
        for (int c = 2; c <= 5; ++c) set(r, c, 1);
      return PartLayout::from_grid(kGrid, kGrid, 2, grid, {"face", "everything else"});
    }
    case CanonicalLayout::kFacialParts: {
      for (int r = 0; r < kGrid; ++r)
        for (int c = 0; c < kGrid; ++c) set(r, c, 1);
      for (int c = 2; c <= 5; ++c) {
        set(2, c, 2);
        set(3, c, 3);
        set(6, c, 5);
      }
      for (int r = 4; r <= 5; ++r) {
        set(r, 2, 5);
        set(r, 3, 4);
        set(r, 4, 4);
        set(r, 5, 5);
      }
      return PartLayout::from_grid(
          kGrid, kGrid, 5, grid,
          {"background/hair", "hairline/forehead", "eyes", "nose/mouth", "face shape"});
    }
  }
  throw ValidationError("unknown canonical layout");
}

PartLayout canonical_layout(std::string_view kind) {
  if (kind == "face_swap") return canonical_layout(CanonicalLayout::kFaceSwap);
  if (kind == "facial_parts") return canonical_layout(CanonicalLayout::kFacialParts);
  throw ValidationError("unknown canonical layout '" + std::string(kind) +
                        "' (expected face_swap or facial_parts)");
}

std::vector<GridCell> part_cells(const PartLayout& layout, PartId part) {
  if (part < 1 || part > layout.num_parts()) {
    throw ValidationError("part id " + std::to_string(part) + " out of range 1.." +
                          std::to_string(layout.num_parts()));
  }
  std::vector<GridCell> cells;
  for (const auto& a : layout.assignment()) {
    if (a.part == part) cells.push_back(a.cell);
  }
  std::sort(cells.begin(), cells.end());
  return cells;
}

PartLayout parse_layout(std::string_view text) {
  std::map<std::string, int> header;
  std::map<int, std::string> names;
  std::vector<PartId> grid;
  int grid_rows_read = 0;
  bool in_grid = false;
  int expected_width = -1;
  int expected_height = -1;

  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view raw = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;

    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string_view line = trim(raw);
    if (line.empty()) {
      if (nl == text.size()) break;
      continue;
    }

    if (in_grid) {
      if (grid_rows_read == expected_height) fail_at(line_no, "extra grid row");
      std::istringstream row{std::string(line)};
      std::string tok;
      int count = 0;
      while (row >> tok) {
        const auto v = parse_int(tok);
        if (!v) fail_at(line_no, "non-integer part id '" + tok + "'");
        grid.push_back(*v);
        ++count;
      }
      if (count != expected_width) {
        fail_at(line_no, "ragged row: " + std::to_string(count) + " entries, expected " +
                             std::to_string(expected_width));
      }
      ++grid_rows_read;
    } else {
      const auto colon = line.find(':');
      if (colon == std::string_view::npos) fail_at(line_no, "expected 'key: value'");
      const std::string key{trim(line.substr(0, colon))};
      const std::string_view value = trim(line.substr(colon + 1));

      if (key == "grid") {
        if (!value.empty()) fail_at(line_no, "'grid:' takes no inline value");
        for (const char* req : {"grid_height", "grid_width", "num_parts"}) {
          if (!header.contains(req)) fail_at(line_no, std::string("missing '") + req + "' before grid");
        }
        expected_height = header["grid_height"];
        expected_width = header["grid_width"];
        if (expected_height < 1 || expected_width < 1) fail_at(line_no, "grid dimensions must be positive");
        in_grid = true;
      } else if (key.rfind("part ", 0) == 0) {
        const auto id = parse_int(trim(std::string_view(key).substr(5)));
        if (!id) fail_at(line_no, "bad part name key '" + key + "'");
        names[*id] = std::string(value);
      } else if (key == "grid_height" || key == "grid_width" || key == "num_parts") {
        const auto v = parse_int(value);
        if (!v) fail_at(line_no, "'" + key + "' must be an integer");
        if (header.contains(key)) fail_at(line_no, "duplicate '" + key + "'");
        header[key] = *v;
      } else {
        fail_at(line_no, "unknown key '" + key + "'");
      }
    }
    if (nl == text.size()) break;
  }

  if (!in_grid) throw ValidationError("layout: missing 'grid:' block");
  if (grid_rows_read != expected_height) {
    throw ValidationError("layout: grid has " + std::to_string(grid_rows_read) +
                          " rows, expected " + std::to_string(expected_height));
  }

  const int k = header["num_parts"];
  std::vector<std::string> part_names;
  if (!names.empty()) {
    for (const auto& [id, name] : names) {
      if (id < 1 || id > k) throw ValidationError("layout: name given for nonexistent part " + std::to_string(id));
    }
    part_names.resize(static_cast<std::size_t>(k));
    for (const auto& [id, name] : names) part_names[id - 1] = name;
  }
  return PartLayout::from_grid(expected_height, expected_width, k, grid, std::move(part_names));
}

PartLayout read_layout_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open layout file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_layout(ss.str());
}

std::string serialize_layout(const PartLayout& layout) {
  std::ostringstream out;
  out << "grid_height: " << layout.grid_height() << "\n";
  out << "grid_width: " << layout.grid_width() << "\n";
  out << "num_parts: " << layout.num_parts() << "\n";
  const auto& names = layout.part_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!names[i].empty()) out << "part " << (i + 1) << ": " << names[i] << "\n";
  }
  out << "grid:\n";
  const auto g = layout.grid();
  for (int r = 0; r < layout.grid_height(); ++r) {
    for (int c = 0; c < layout.grid_width(); ++c) {
      if (c) out << ' ';
      out << g[static_cast<std::size_t>(r) * layout.grid_width() + c];
    }
    out << "\n";
  }
  return out.str();
}

void write_layout_file(const std::string& path, const PartLayout& layout) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write layout file " + path);
  out << serialize_layout(layout);
}

std::string render_layout(const PartLayout& layout) {
  const auto g = layout.grid();
  int width = 1;
  for (int k = layout.num_parts(); k >= 10; k /= 10) ++width;
  std::ostringstream out;
  for (int r = 0; r < layout.grid_height(); ++r) {
    for (int c = 0; c < layout.grid_width(); ++c) {
      const PartId p = g[static_cast<std::size_t>(r) * layout.grid_width() + c];
      std::string s = p == 0 ? "." : std::to_string(p);
      if (c) out << ' ';
      out << std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), ' ') << s;
    }
    out << "\n";
  }
  return out.str();
}

std::uint64_t layout_fingerprint(const PartLayout& layout) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char ch : serialize_layout(layout)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace puzzlegan
