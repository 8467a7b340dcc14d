// Procedural calibrated scenes: primitives on a ground plane, surface-sampled
// point clouds, z-buffered label renders, and the controlled corruption that
// turns clean renders into noisy pseudo-labels.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "crossmodal/alignment.hpp"
#include "crossmodal/geometry.hpp"
#include "crossmodal/rng.hpp"

namespace crossmodal {

enum class ShapeKind { Plane, Box, Cylinder };

struct ClassShapeSpec {
    std::string name;
    ShapeKind kind = ShapeKind::Box;
    double size_min = 1.0, size_max = 2.0;      // box footprint edge
    double height_min = 1.0, height_max = 2.0;  // box/cylinder height
    double radius_min = 0.5, radius_max = 1.0;  // cylinder
    double intensity = 0.5;                     // class-level reflectance
};

struct SceneSpec {
    double extent = 20.0;  // square workspace edge, meters
    int objects_min = 6, objects_max = 10;
    int points_per_object_min = 600, points_per_object_max = 900;
    int ground_points = 2500;
    int cameras = 4;
    double ring_radius = 12.0, camera_height = 3.5;
    std::size_t image_width = 128, image_height = 128;
    double focal = 110.0;
    double intensity_sigma = 0.02;
    std::vector<ClassShapeSpec> classes;  // index == class id; exactly one Plane

    void validate(const ClassVocabulary& vocab) const;
};

struct NoiseModel {
    double rot_sigma = 0.0;    // radians, extrinsic jitter for pseudo-label rendering only
    double trans_sigma = 0.0;  // meters
    double p_flip = 0.0;       // per (camera, instance)
    double p_drop = 0.0;       // per (camera, instance)
    int dilation_px = 0;       // majority-filter radius

    void validate() const;
};

struct Primitive {
    ShapeKind kind = ShapeKind::Box;
    int class_id = 0;
    int instance_id = 0;
    double cx = 0.0, cy = 0.0, yaw = 0.0;
    double sx = 0.0, sy = 0.0;  // box footprint
    double radius = 0.0;        // cylinder
    double height = 0.0;        // box/cylinder; plane uses half_extent
    double half_extent = 0.0;   // plane only
};

struct RenderBuffers {
    LabelGrid labels;     // class ids; background pixels hold 0 — test instances
    LabelGrid instances;  // instance ids, -1 = background (the authoritative mask)
    std::vector<double> depth;   // camera-frame z per pixel, 0 = background
    std::vector<double> height;  // world z of the hit, 0 = background
};

struct CameraData {
    Calibration calib;
    LabelGrid gt_grid;
    LabelGrid pseudo_grid;
    std::vector<double> channels;  // 3·H·W, planes: depth, intensity, world-z
};

struct CorruptionStats {
    std::size_t drop_trials = 0, drops = 0;
    std::size_t flip_trials = 0, flips = 0;
};

struct SyntheticScene {
    std::vector<std::array<double, 3>> coords;
    std::vector<double> intensity;
    std::vector<int> gt_labels;
    std::vector<std::uint8_t> base_mask;
    std::vector<CameraData> cameras;
    CorruptionStats corruption;  // in-memory diagnostics, not serialized
};

enum class DatasetMode { BaseAnnotated, AnnotationFree };

// Ray-cast z-buffer over the primitive list (camera-frame z as depth, rays
// through pixel centers so rendering agrees with half-up projection rounding).
RenderBuffers render_scene_geometry(const std::vector<Primitive>& prims, const Calibration& calib);
// The label plane alone (background = ignore sentinel).
LabelGrid render_label_image(const std::vector<Primitive>& prims, const Calibration& calib,
                             std::size_t num_classes);

// Jittered re-render, per-instance drop/flip, then majority-filter dilation.
// Zero noise reproduces gt exactly. Statistics accumulate into stats.
LabelGrid corrupt_labels(const std::vector<Primitive>& prims, const Calibration& calib,
                         std::size_t num_classes, const NoiseModel& noise, Rng& rng,
                         CorruptionStats* stats);

// Deterministic camera ring: position k at angle 2πk/K, looking at the scene
// center, v axis pointing groundward.
Calibration ring_camera(const SceneSpec& spec, int index);

// Full scene: placement, sampling, renders, corruption. Points that any
// in-frame camera would label differently than their own class under the
// clean calibration are discarded, so clean label transfer is exact.
SyntheticScene generate_scene(const SceneSpec& spec, const NoiseModel& noise,
                              const ClassVocabulary& vocab, std::uint64_t seed);

std::vector<SyntheticScene> make_dataset(const SceneSpec& spec, const NoiseModel& noise,
                                         const ClassVocabulary& vocab, DatasetMode mode,
                                         std::uint64_t seed, std::size_t count);

}  // namespace crossmodal
