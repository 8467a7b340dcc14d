// Calibrated pinhole projection of LiDAR points into camera images and the
// point-pixel correspondence machinery built on it.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace crossmodal {

// Near-plane floor for the pinhole division.
inline constexpr double kDepthMin = 1e-3;

struct Calibration {
    std::array<double, 9> intrinsic{};    // row-major 3×3: fx 0 cx / 0 fy cy / 0 0 1
    std::array<double, 16> extrinsic{};   // row-major 4×4 rigid LiDAR→camera
    std::size_t width = 0, height = 0;

    double fx() const { return intrinsic[0]; }
    double fy() const { return intrinsic[4]; }
    double cx() const { return intrinsic[2]; }
    double cy() const { return intrinsic[5]; }

    // Rotation block orthonormal within 1e-9 with det +1; fx,fy > 0;
    // principal point inside the image. Violations → DataError.
    void validate() const;

    // LiDAR frame → camera frame.
    std::array<double, 3> to_camera(const std::array<double, 3>& p) const;
    // Inverse transform (camera frame → LiDAR frame), for round-trip checks.
    std::array<double, 3> to_lidar(const std::array<double, 3>& p) const;
};

struct PairEntry {
    std::size_t point = 0;
    std::size_t camera = 0;
    double u = 0.0, v = 0.0;  // continuous pixel coordinates
    double depth = 0.0;       // camera-frame z, meters
    long px = 0, py = 0;      // half-up rounded pixel
};

struct PointPixelPairing {
    std::vector<PairEntry> entries;  // point-major, then camera-ascending
};

struct LabelGrid {
    std::vector<std::int32_t> data;  // row-major height×width
    std::size_t width = 0, height = 0;

    std::int32_t at(long px, long py) const { return data[static_cast<std::size_t>(py) * width + px]; }
    std::int32_t& at(long px, long py) { return data[static_cast<std::size_t>(py) * width + px]; }
};

inline long round_half_up(double x) { return static_cast<long>(std::floor(x + 0.5)); }

// One past the last valid class id.
inline int ignore_label(std::size_t num_classes) { return static_cast<int>(num_classes); }

// Every (point, camera) pair with depth > kDepthMin whose half-up rounded
// pixel lands in-frame. Out-of-frame and behind-camera points are silently
// excluded.
PointPixelPairing project_points(const std::vector<std::array<double, 3>>& coords,
                                 const std::vector<Calibration>& calibs);

// Per-point label lookup through the pairing: smallest camera index whose
// pixel is not the ignore sentinel wins; unpaired (or all-ignore) points get
// the sentinel. Grid values outside [0, num_classes] → DataError.
std::vector<int> transfer_labels(const PointPixelPairing& pairing,
                                 const std::vector<LabelGrid>& label_images,
                                 std::size_t num_classes, std::size_t num_points);

// Indices into pairing.entries where the pixel class equals the point class
// and neither is the ignore sentinel.
std::vector<std::size_t> matched_pairs_for_distill(const PointPixelPairing& pairing,
                                                   const std::vector<LabelGrid>& pixel_classes,
                                                   const std::vector<int>& point_classes,
                                                   std::size_t num_classes);

}  // namespace crossmodal
