#pragma once

#include <filesystem>
#include <vector>

#include "eitkit/fem.hpp"

namespace eitkit {

struct MeasuredFrames {
  VoltageFrame v0;                   // no-contact baseline
  std::vector<VoltageFrame> frames;  // contact frames, file order
};

/// Reads a CSV of voltage frames (one frame per row, `expected_columns`
/// finite values each). Row `baseline_row` (0-based) is the no-contact
/// baseline; all other rows become contact frames in file order.
MeasuredFrames ingest_measured_frames(const std::filesystem::path& path, int baseline_row = 0,
                                      int expected_columns = 208);

/// Writes a binary P5 graymap, min-max normalized to 8 bits, matrix row 0
/// first. A sidecar `<path>.meta.txt` records the min/max used (and flags a
/// constant image, which is exported as mid-gray 128).
void export_image_pgm(const ConductivityImage& sigma, const std::filesystem::path& path);

}  // namespace eitkit
