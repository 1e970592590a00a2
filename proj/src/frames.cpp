#include "eitkit/frames.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

namespace eitkit {

MeasuredFrames ingest_measured_frames(const std::filesystem::path& path, int baseline_row,
                                      int expected_columns) {
  std::ifstream is(path);
  if (!is) throw CsvError("ingest: cannot open " + path.string());

  std::vector<VoltageFrame> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(expected_columns));
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(cell, &pos);
        while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
        if (pos != cell.size()) throw std::invalid_argument(cell);
        values.push_back(v);
      } catch (const std::exception&) {
        throw CsvError("ingest: row " + std::to_string(line_no) + " has a non-numeric cell: '" +
                       cell + "'");
      }
    }
    if (static_cast<int>(values.size()) != expected_columns)
      throw CsvError("ingest: row " + std::to_string(line_no) + " has " +
                     std::to_string(values.size()) + " columns, expected " +
                     std::to_string(expected_columns));
    for (double v : values)
      if (!std::isfinite(v))
        throw CsvError("ingest: row " + std::to_string(line_no) + " contains a non-finite value");
    rows.emplace_back(Eigen::Map<const VoltageFrame>(values.data(),
                                                     static_cast<Eigen::Index>(values.size())));
  }
  if (rows.empty()) throw CsvError("ingest: " + path.string() + " has no data rows");
  if (baseline_row < 0 || baseline_row >= static_cast<int>(rows.size()))
    throw CsvError("ingest: baseline row " + std::to_string(baseline_row) + " out of range");

  MeasuredFrames out;
  out.v0 = rows[static_cast<std::size_t>(baseline_row)];
  for (int i = 0; i < static_cast<int>(rows.size()); ++i)
    if (i != baseline_row) out.frames.push_back(rows[static_cast<std::size_t>(i)]);
  return out;
}

void export_image_pgm(const ConductivityImage& sigma, const std::filesystem::path& path) {
  if (!sigma.allFinite()) throw ValueError("export_image: image contains non-finite values");
  const double lo = sigma.minCoeff();
  const double hi = sigma.maxCoeff();
  const bool constant = hi == lo;

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("export_image: cannot write " + path.string());
  os << "P5\n" << sigma.cols() << " " << sigma.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < sigma.rows(); ++r)
    for (Eigen::Index c = 0; c < sigma.cols(); ++c) {
      const double t = constant ? 128.0 : std::round((sigma(r, c) - lo) / (hi - lo) * 255.0);
      const auto byte = static_cast<unsigned char>(std::min(255.0, std::max(0.0, t)));
      os.write(reinterpret_cast<const char*>(&byte), 1);
    }

  std::ofstream meta(path.string() + ".meta.txt", std::ios::trunc);
  meta.precision(17);
  meta << "min=" << lo << "\nmax=" << hi << "\nconstant=" << (constant ? 1 : 0) << "\n";
}

}  // namespace eitkit
