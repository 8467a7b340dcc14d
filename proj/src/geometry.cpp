#include "crossmodal/geometry.hpp"

#include <cmath>
#include <string>

#include "crossmodal/error.hpp"

namespace crossmodal {
namespace {

double rot_entry(const std::array<double, 16>& e, int r, int c) { return e[r * 4 + c]; }

}  // namespace

void Calibration::validate() const {
    // RᵀR = I within 1e-9
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (int k = 0; k < 3; ++k) dot += rot_entry(extrinsic, k, i) * rot_entry(extrinsic, k, j);
            const double want = (i == j) ? 1.0 : 0.0;
            if (std::abs(dot - want) > 1e-9)
                throw DataError("calibration: extrinsic rotation is not orthonormal");
        }
    }
    const double det =
        rot_entry(extrinsic, 0, 0) *
            (rot_entry(extrinsic, 1, 1) * rot_entry(extrinsic, 2, 2) -
             rot_entry(extrinsic, 1, 2) * rot_entry(extrinsic, 2, 1)) -
        rot_entry(extrinsic, 0, 1) *
            (rot_entry(extrinsic, 1, 0) * rot_entry(extrinsic, 2, 2) -
             rot_entry(extrinsic, 1, 2) * rot_entry(extrinsic, 2, 0)) +
        rot_entry(extrinsic, 0, 2) *
            (rot_entry(extrinsic, 1, 0) * rot_entry(extrinsic, 2, 1) -
             rot_entry(extrinsic, 1, 1) * rot_entry(extrinsic, 2, 0));
    if (std::abs(det - 1.0) > 1e-9)
        throw DataError("calibration: extrinsic rotation determinant is " + std::to_string(det));
    if (extrinsic[12] != 0.0 || extrinsic[13] != 0.0 || extrinsic[14] != 0.0 ||
        extrinsic[15] != 1.0)
        throw DataError("calibration: extrinsic bottom row must be 0 0 0 1");
    if (!(fx() > 0.0) || !(fy() > 0.0))
        throw DataError("calibration: focal lengths must be positive");
    if (cx() < 0.0 || cx() >= static_cast<double>(width) || cy() < 0.0 ||
        cy() >= static_cast<double>(height))
        throw DataError("calibration: principal point outside the image");
    if (width == 0 || height == 0) throw DataError("calibration: empty image");
}

std::array<double, 3> Calibration::to_camera(const std::array<double, 3>& p) const {
    std::array<double, 3> out{};
    for (int r = 0; r < 3; ++r)
        out[r] = extrinsic[r * 4 + 0] * p[0] + extrinsic[r * 4 + 1] * p[1] +
                 extrinsic[r * 4 + 2] * p[2] + extrinsic[r * 4 + 3];
    return out;
}

std::array<double, 3> Calibration::to_lidar(const std::array<double, 3>& p) const {
    const double dx = p[0] - extrinsic[3];
    const double dy = p[1] - extrinsic[7];
    const double dz = p[2] - extrinsic[11];
    std::array<double, 3> out{};
    for (int r = 0; r < 3; ++r)  // Rᵀ·(p − t)
        out[r] = extrinsic[0 * 4 + r] * dx + extrinsic[1 * 4 + r] * dy + extrinsic[2 * 4 + r] * dz;
    return out;
}

PointPixelPairing project_points(const std::vector<std::array<double, 3>>& coords,
                                 const std::vector<Calibration>& calibs) {
    for (const Calibration& c : calibs) c.validate();
    PointPixelPairing pairing;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        for (std::size_t cam = 0; cam < calibs.size(); ++cam) {
            const Calibration& c = calibs[cam];
            const std::array<double, 3> pc = c.to_camera(coords[i]);
            if (pc[2] <= kDepthMin) continue;
            const double u = c.fx() * pc[0] / pc[2] + c.cx();
            const double v = c.fy() * pc[1] / pc[2] + c.cy();
            const long px = round_half_up(u);
            const long py = round_half_up(v);
            if (px < 0 || py < 0 || px >= static_cast<long>(c.width) ||
                py >= static_cast<long>(c.height))
                continue;
            pairing.entries.push_back({i, cam, u, v, pc[2], px, py});
        }
    }
    return pairing;
}

std::vector<int> transfer_labels(const PointPixelPairing& pairing,
                                 const std::vector<LabelGrid>& label_images,
                                 std::size_t num_classes, std::size_t num_points) {
    const int ignore = ignore_label(num_classes);
    std::vector<int> labels(num_points, ignore);
    // Entries are point-major and camera-ascending, so the first non-ignore
    // hit per point is the smallest-camera-index winner.
    for (const PairEntry& e : pairing.entries) {
        const std::int32_t cls = label_images[e.camera].at(e.px, e.py);
        if (cls < 0 || cls > ignore)
            throw DataError("transfer_labels: class id " + std::to_string(cls) +
                            " out of vocabulary range");
        if (cls == ignore) continue;
        if (labels[e.point] == ignore) labels[e.point] = cls;
    }
    return labels;
}

std::vector<std::size_t> matched_pairs_for_distill(const PointPixelPairing& pairing,
                                                   const std::vector<LabelGrid>& pixel_classes,
                                                   const std::vector<int>& point_classes,
                                                   std::size_t num_classes) {
    const int ignore = ignore_label(num_classes);
    std::vector<std::size_t> matched;
    for (std::size_t i = 0; i < pairing.entries.size(); ++i) {
        const PairEntry& e = pairing.entries[i];
        const std::int32_t pix = pixel_classes[e.camera].at(e.px, e.py);
        const int pt = point_classes[e.point];
        if (pix == ignore || pt == ignore) continue;
        if (pix == pt) matched.push_back(i);
    }
    return matched;
}

}  // namespace crossmodal
