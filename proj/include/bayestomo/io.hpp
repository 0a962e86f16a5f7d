#pragma once

// Plain-text file formats: CSV for grids, fields, beams, matrices and
// per-node tables; binary portable graymaps for quick-look images.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Dense>

#include "bayestomo/beams.hpp"
#include "bayestomo/errors.hpp"
#include "bayestomo/grid.hpp"

namespace bayestomo::io {

/// Shortest round-trip decimal representation ('.' separator, no locale).
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ArgumentError("cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Non-empty lines that are not '#' comments.
inline std::vector<std::string> data_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw ArgumentError("cannot open '" + path + "' for writing");
  return out;
}

/// Emits "# line" for each header line.
inline void write_comment(std::ostream& out, const std::vector<std::string>& header) {
  for (const auto& h : header) out << "# " << h << '\n';
}

// --- grid / field -----------------------------------------------------------

/// First data row "nx,ny,x_min,x_max,y_min,y_max", then N nodal values
/// (row-major), one per line.
inline void write_field(std::ostream& out, const Field& field,
                        const std::vector<std::string>& header = {}) {
  write_comment(out, header);
  const Grid& g = field.grid();
  const Domain& d = g.domain();
  out << g.nx() << ',' << g.ny() << ',' << format_double(d.x_min) << ',' << format_double(d.x_max)
      << ',' << format_double(d.y_min) << ',' << format_double(d.y_max) << '\n';
  for (Index j = 0; j < g.size(); ++j) out << format_double(field.values()[j]) << '\n';
}

inline Field read_field(std::istream& in) {
  const auto lines = data_lines(in);
  if (lines.empty()) throw ArgumentError("field CSV: missing header row");
  const auto head = split(lines[0]);
  if (head.size() != 6) throw ArgumentError("field CSV: header needs 6 entries");
  const auto nx = static_cast<Index>(parse_double(head[0]));
  const auto ny = static_cast<Index>(parse_double(head[1]));
  Grid grid(Domain(parse_double(head[2]), parse_double(head[3]), parse_double(head[4]),
                   parse_double(head[5])),
            nx, ny);
  if (static_cast<Index>(lines.size()) - 1 != grid.size()) {
    throw ArgumentError("field CSV: expected " + std::to_string(grid.size()) + " values, got " +
                        std::to_string(lines.size() - 1));
  }
  Eigen::VectorXd v(grid.size());
  for (Index j = 0; j < grid.size(); ++j) v[j] = parse_double(lines[static_cast<std::size_t>(j + 1)]);
  return {grid, std::move(v)};
}

// --- beams --------------------------------------------------------------------

inline void write_beams(std::ostream& out, const BeamSet& beams,
                        const std::vector<std::string>& header = {}) {
  write_comment(out, header);
  for (const auto& b : beams) {
    out << format_double(b.start.x()) << ',' << format_double(b.start.y()) << ','
        << format_double(b.end.x()) << ',' << format_double(b.end.y()) << '\n';
  }
}

/// One beam per line: x0,y0,x1,y1.
inline BeamSet read_beams(std::istream& in) {
  BeamSet beams;
  for (const auto& line : data_lines(in)) {
    const auto f = split(line);
    if (f.size() != 4) throw ArgumentError("beam CSV: expected x0,y0,x1,y1 per line");
    beams.emplace_back(Point(parse_double(f[0]), parse_double(f[1])),
                       Point(parse_double(f[2]), parse_double(f[3])));
  }
  return beams;
}

// --- matrices and vectors -----------------------------------------------------

inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& m,
                         const std::vector<std::string>& header = {}) {
  write_comment(out, header);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
}

inline Eigen::MatrixXd read_matrix(std::istream& in) {
  const auto lines = data_lines(in);
  if (lines.empty()) return {};
  const auto cols = static_cast<Index>(split(lines[0]).size());
  Eigen::MatrixXd m(static_cast<Index>(lines.size()), cols);
  for (Index r = 0; r < m.rows(); ++r) {
    const auto f = split(lines[static_cast<std::size_t>(r)]);
    if (static_cast<Index>(f.size()) != cols) throw ArgumentError("matrix CSV: ragged rows");
    for (Index c = 0; c < cols; ++c) m(r, c) = parse_double(f[static_cast<std::size_t>(c)]);
  }
  return m;
}

/// One value per line.
inline Eigen::VectorXd read_vector(std::istream& in) {
  const auto lines = data_lines(in);
  Eigen::VectorXd v(static_cast<Index>(lines.size()));
  for (Index i = 0; i < v.size(); ++i) v[i] = parse_double(lines[static_cast<std::size_t>(i)]);
  return v;
}

/// Per-node table "node_index,x,y,<name>".
inline void write_node_values(std::ostream& out, const Grid& grid, const Eigen::VectorXd& values,
                              const std::string& name,
                              const std::vector<std::string>& header = {}) {
  write_comment(out, header);
  out << "node_index,x,y," << name << '\n';
  for (Index j = 0; j < grid.size(); ++j) {
    const Point p = grid.node(j);
    out << j << ',' << format_double(p.x()) << ',' << format_double(p.y()) << ','
        << format_double(values[j]) << '\n';
  }
}

// --- images -------------------------------------------------------------------

/// Binary PGM (P5) of nodal values, linearly mapped from [min, max] onto the
/// full gray range. The top image row is the largest y. Non-finite values map
/// to black. bits must be 8 or 16.
inline void write_pgm(std::ostream& out, const Grid& grid, const Eigen::VectorXd& values,
                      int bits = 8) {
  if (bits != 8 && bits != 16) throw ArgumentError("write_pgm: bits must be 8 or 16");
  const int maxval = bits == 8 ? 255 : 65535;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (Index j = 0; j < values.size(); ++j) {
    if (!std::isfinite(values[j])) continue;
    lo = std::min(lo, values[j]);
    hi = std::max(hi, values[j]);
  }
  const double span = (std::isfinite(lo) && hi > lo) ? hi - lo : 1.0;
  out << "P5\n" << grid.nx() << ' ' << grid.ny() << '\n' << maxval << '\n';
  for (Index iy = grid.ny() - 1; iy >= 0; --iy) {
    for (Index ix = 0; ix < grid.nx(); ++ix) {
      const double v = values[grid.index(ix, iy)];
      int level = 0;
      if (std::isfinite(v) && std::isfinite(lo)) {
        level = static_cast<int>(std::lround((v - lo) / span * maxval));
      }
      level = std::clamp(level, 0, maxval);
      if (bits == 8) {
        out.put(static_cast<char>(level));
      } else {
        out.put(static_cast<char>((level >> 8) & 0xff));
        out.put(static_cast<char>(level & 0xff));
      }
    }
  }
}

}  // namespace bayestomo::io
