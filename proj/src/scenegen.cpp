#include "crossmodal/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "crossmodal/error.hpp"
#include "crossmodal/rng.hpp"

namespace crossmodal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kClearance = 0.4;  // minimum gap between object footprints

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

Vec3 normalized(const Vec3& v) {
    double n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
    if (n == 0.0) throw GenError("scenegen: cannot normalize zero vector");
    return {v.x / n, v.y / n, v.z / n};
}

// Clip ray parameter range [t0,t1] against slab lo <= o + t*d <= hi.
// Returns false when the slab excludes the whole ray.
bool clip_slab(double o, double d, double lo, double hi, double& t0, double& t1) {
    if (std::abs(d) < 1e-300) return o >= lo && o <= hi;
    double ta = (lo - o) / d;
    double tb = (hi - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    return t0 <= t1;
}

// Smallest t > kDepthMin at which the ray origin + t*dir enters the primitive,
// or +inf. dir is the unnormalized pixel-center direction, so in camera space
// t is exactly the camera-frame z depth.
double ray_hit(const Primitive& p, const Vec3& o, const Vec3& d) {
    switch (p.kind) {
        case ShapeKind::Plane: {
            if (std::abs(d.z) < 1e-300) return kInf;
            double t = -o.z / d.z;
            if (t <= kDepthMin) return kInf;
            double hx = o.x + t * d.x, hy = o.y + t * d.y;
            if (std::abs(hx) > p.half_extent || std::abs(hy) > p.half_extent) return kInf;
            return t;
        }
        case ShapeKind::Box: {
            double c = std::cos(p.yaw), s = std::sin(p.yaw);
            double ox = o.x - p.cx, oy = o.y - p.cy;
            Vec3 lo_ = {c * ox + s * oy, -s * ox + c * oy, o.z};
            Vec3 ld = {c * d.x + s * d.y, -s * d.x + c * d.y, d.z};
            double t0 = kDepthMin, t1 = kInf;
            if (!clip_slab(lo_.x, ld.x, -p.sx / 2, p.sx / 2, t0, t1)) return kInf;
            if (!clip_slab(lo_.y, ld.y, -p.sy / 2, p.sy / 2, t0, t1)) return kInf;
            if (!clip_slab(lo_.z, ld.z, 0.0, p.height, t0, t1)) return kInf;
            return t0;
        }
        case ShapeKind::Cylinder: {
            double best = kInf;
            double ox = o.x - p.cx, oy = o.y - p.cy;
            double a = d.x * d.x + d.y * d.y;
            double b = 2.0 * (ox * d.x + oy * d.y);
            double cc = ox * ox + oy * oy - p.radius * p.radius;
            if (a > 1e-300) {
                double disc = b * b - 4.0 * a * cc;
                if (disc >= 0.0) {
                    double sq = std::sqrt(disc);
                    for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
                        if (t > kDepthMin && t < best) {
                            double z = o.z + t * d.z;
                            if (z >= 0.0 && z <= p.height) best = t;
                        }
                    }
                }
            }
            if (std::abs(d.z) > 1e-300) {
                double t = (p.height - o.z) / d.z;  // top cap
                if (t > kDepthMin && t < best) {
                    double hx = ox + t * d.x, hy = oy + t * d.y;
                    if (hx * hx + hy * hy <= p.radius * p.radius) best = t;
                }
            }
            return best;
        }
    }
    return kInf;
}

Vec3 camera_position(const Calibration& c) {
    // extrinsic maps world->camera: p_cam = R p + t, so the center is -R^T t.
    const auto& e = c.extrinsic;
    double tx = e[3], ty = e[7], tz = e[11];
    return {-(e[0] * tx + e[4] * ty + e[8] * tz), -(e[1] * tx + e[5] * ty + e[9] * tz),
            -(e[2] * tx + e[6] * ty + e[10] * tz)};
}

Vec3 ray_direction_world(const Calibration& c, std::size_t ix, std::size_t iy) {
    double dx = (static_cast<double>(ix) - c.cx()) / c.fx();
    double dy = (static_cast<double>(iy) - c.cy()) / c.fy();
    const auto& e = c.extrinsic;  // world dir = R^T * cam dir
    return {e[0] * dx + e[4] * dy + e[8], e[1] * dx + e[5] * dy + e[9],
            e[2] * dx + e[6] * dy + e[10]};
}

double bounding_radius(const Primitive& p) {
    if (p.kind == ShapeKind::Cylinder) return p.radius;
    return 0.5 * std::sqrt(p.sx * p.sx + p.sy * p.sy);
}

// Area-weighted surface sample in world coordinates (boxes skip the hidden
// bottom face; cylinders sample side plus top cap).
Vec3 sample_surface(const Primitive& p, Rng& rng) {
    if (p.kind == ShapeKind::Box) {
        double top = p.sx * p.sy;
        double side_x = p.sy * p.height;  // faces normal to local x
        double side_y = p.sx * p.height;  // faces normal to local y
        double total = top + 2 * side_x + 2 * side_y;
        double pick = rng.uniform(0.0, total);
        double lx, ly, lz;
        if (pick < top) {
            lx = rng.uniform(-p.sx / 2, p.sx / 2);
            ly = rng.uniform(-p.sy / 2, p.sy / 2);
            lz = p.height;
        } else if (pick < top + 2 * side_x) {
            lx = (pick < top + side_x) ? p.sx / 2 : -p.sx / 2;
            ly = rng.uniform(-p.sy / 2, p.sy / 2);
            lz = rng.uniform(0.0, p.height);
        } else {
            lx = rng.uniform(-p.sx / 2, p.sx / 2);
            ly = (pick < top + 2 * side_x + side_y) ? p.sy / 2 : -p.sy / 2;
            lz = rng.uniform(0.0, p.height);
        }
        double c = std::cos(p.yaw), s = std::sin(p.yaw);
        return {p.cx + c * lx - s * ly, p.cy + s * lx + c * ly, lz};
    }
    if (p.kind == ShapeKind::Cylinder) {
        double side = 2.0 * M_PI * p.radius * p.height;
        double top = M_PI * p.radius * p.radius;
        if (rng.uniform(0.0, side + top) < side) {
            double theta = rng.uniform(0.0, 2.0 * M_PI);
            double z = rng.uniform(0.0, p.height);
            return {p.cx + p.radius * std::cos(theta), p.cy + p.radius * std::sin(theta), z};
        }
        for (;;) {  // uniform disc by rejection
            double x = rng.uniform(-p.radius, p.radius);
            double y = rng.uniform(-p.radius, p.radius);
            if (x * x + y * y <= p.radius * p.radius) return {p.cx + x, p.cy + y, p.height};
        }
    }
    double h = p.half_extent;
    return {rng.uniform(-h, h), rng.uniform(-h, h), 0.0};
}

std::array<double, 16> jitter_extrinsic(const std::array<double, 16>& e, const NoiseModel& noise,
                                        Rng& rng) {
    double ax = noise.rot_sigma * rng.normal();
    double ay = noise.rot_sigma * rng.normal();
    double az = noise.rot_sigma * rng.normal();
    double tx = noise.trans_sigma * rng.normal();
    double ty = noise.trans_sigma * rng.normal();
    double tz = noise.trans_sigma * rng.normal();
    double cx = std::cos(ax), sx = std::sin(ax);
    double cy = std::cos(ay), sy = std::sin(ay);
    double cz = std::cos(az), sz = std::sin(az);
    // J = Rz(az) Ry(ay) Rx(ax), applied on the camera side: E' = [J|t_j] · E
    double J[9] = {cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
                   sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
                   -sy,     cy * sx,                cy * cx};
    std::array<double, 16> out{};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += J[r * 3 + k] * e[k * 4 + c];
            out[r * 4 + c] = acc;
        }
    }
    out[3] += tx;
    out[7] += ty;
    out[11] += tz;
    out[15] = 1.0;
    return out;
}

LabelGrid majority_filter(const LabelGrid& grid, int radius, std::size_t num_classes) {
    if (radius <= 0) return grid;
    LabelGrid out = grid;
    int w = static_cast<int>(grid.width), h = static_cast<int>(grid.height);
    int ignore = static_cast<int>(num_classes);
    std::vector<int> counts(num_classes + 1, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::fill(counts.begin(), counts.end(), 0);
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    int nx = x + dx, ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    int v = grid.data[static_cast<std::size_t>(ny) * grid.width + nx];
                    counts[v == ignore ? num_classes : static_cast<std::size_t>(v)]++;
                }
            }
            int center = grid.data[static_cast<std::size_t>(y) * grid.width + x];
            std::size_t center_slot = center == ignore ? num_classes : static_cast<std::size_t>(center);
            int best_count = -1;
            std::size_t best_slot = center_slot;
            for (std::size_t s = 0; s <= num_classes; ++s) {
                if (counts[s] > best_count) {
                    best_count = counts[s];
                    best_slot = s;
                }
            }
            // Ties (including the center matching the max count) keep the center.
            if (counts[center_slot] == best_count) best_slot = center_slot;
            out.data[static_cast<std::size_t>(y) * grid.width + x] =
                best_slot == num_classes ? ignore : static_cast<int>(best_slot);
        }
    }
    return out;
}

}  // namespace

void SceneSpec::validate(const ClassVocabulary& vocab) const {
    if (extent <= 0.0) throw ConfigError("scene: extent must be positive");
    if (cameras < 1) throw ConfigError("scene: at least one camera is required");
    if (image_width == 0 || image_height == 0) throw ConfigError("scene: image dims must be positive");
    if (focal <= 0.0) throw ConfigError("scene: focal must be positive");
    if (objects_min < 1 || objects_max < objects_min)
        throw ConfigError("scene: invalid object count range");
    if (points_per_object_min < 1 || points_per_object_max < points_per_object_min)
        throw ConfigError("scene: invalid points-per-object range");
    if (ground_points < 0) throw ConfigError("scene: ground_points must be non-negative");
    if (classes.size() != vocab.size())
        throw ConfigError("scene: classes must assign one shape per vocabulary class");
    std::size_t planes = 0;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i].name != vocab.names[i])
            throw ConfigError("scene: class '" + classes[i].name + "' does not match vocabulary order");
        if (classes[i].kind == ShapeKind::Plane) planes++;
        if (classes[i].intensity < 0.0 || classes[i].intensity > 1.0)
            throw ConfigError("scene: intensity must lie in [0,1]");
    }
    if (planes != 1) throw ConfigError("scene: exactly one class must use the plane shape");
    if (intensity_sigma < 0.0) throw ConfigError("scene: intensity_sigma must be non-negative");
}

void NoiseModel::validate() const {
    if (rot_sigma < 0.0 || trans_sigma < 0.0)
        throw ConfigError("noise: sigmas must be non-negative");
    if (p_flip < 0.0 || p_flip > 1.0 || p_drop < 0.0 || p_drop > 1.0)
        throw ConfigError("noise: probabilities must lie in [0,1]");
    if (dilation_px < 0) throw ConfigError("noise: dilation_px must be non-negative");
}

RenderBuffers render_scene_geometry(const std::vector<Primitive>& prims, const Calibration& calib) {
    calib.validate();
    RenderBuffers out;
    std::size_t n = calib.width * calib.height;
    out.labels.width = out.instances.width = calib.width;
    out.labels.height = out.instances.height = calib.height;
    out.labels.data.assign(n, 0);
    out.instances.data.assign(n, -1);
    out.depth.assign(n, 0.0);
    out.height.assign(n, 0.0);
    Vec3 origin = camera_position(calib);
    for (std::size_t iy = 0; iy < calib.height; ++iy) {
        for (std::size_t ix = 0; ix < calib.width; ++ix) {
            Vec3 dir = ray_direction_world(calib, ix, iy);
            double best = kInf;
            const Primitive* hit = nullptr;
            for (const auto& p : prims) {
                double t = ray_hit(p, origin, dir);
                if (t < best) {
                    best = t;
                    hit = &p;
                }
            }
            std::size_t idx = iy * calib.width + ix;
            if (hit != nullptr) {
                out.labels.data[idx] = hit->class_id;
                out.instances.data[idx] = hit->instance_id;
                out.depth[idx] = best;
                out.height[idx] = origin.z + best * dir.z;
            }
        }
    }
    return out;
}

LabelGrid render_label_image(const std::vector<Primitive>& prims, const Calibration& calib,
                             std::size_t num_classes) {
    RenderBuffers buf = render_scene_geometry(prims, calib);
    int ignore = static_cast<int>(num_classes);
    for (std::size_t i = 0; i < buf.labels.data.size(); ++i)
        if (buf.instances.data[i] < 0) buf.labels.data[i] = ignore;
    return buf.labels;
}

LabelGrid corrupt_labels(const std::vector<Primitive>& prims, const Calibration& calib,
                         std::size_t num_classes, const NoiseModel& noise, Rng& rng,
                         CorruptionStats* stats) {
    noise.validate();
    Calibration jittered = calib;
    jittered.extrinsic = jitter_extrinsic(calib.extrinsic, noise, rng);
    RenderBuffers buf = render_scene_geometry(prims, jittered);

    int max_instance = -1;
    for (const auto& p : prims) max_instance = std::max(max_instance, p.instance_id);
    int ignore = static_cast<int>(num_classes);
    std::vector<int> remap(static_cast<std::size_t>(max_instance) + 1);
    for (const auto& p : prims) remap[static_cast<std::size_t>(p.instance_id)] = p.class_id;
    for (int inst = 0; inst <= max_instance; ++inst) {
        auto& slot = remap[static_cast<std::size_t>(inst)];
        if (stats != nullptr) stats->drop_trials++;
        if (rng.bernoulli(noise.p_drop)) {
            slot = ignore;
            if (stats != nullptr) stats->drops++;
            continue;
        }
        if (stats != nullptr) stats->flip_trials++;
        if (rng.bernoulli(noise.p_flip)) {
            std::uint64_t r = rng.integer(num_classes - 1);
            int flipped = static_cast<int>(r);
            if (flipped >= slot) flipped++;  // uniform over the other classes
            slot = flipped;
            if (stats != nullptr) stats->flips++;
        }
    }

    LabelGrid grid;
    grid.width = buf.labels.width;
    grid.height = buf.labels.height;
    grid.data.assign(grid.width * grid.height, ignore);
    for (std::size_t i = 0; i < grid.data.size(); ++i) {
        int inst = buf.instances.data[i];
        if (inst >= 0) grid.data[i] = remap[static_cast<std::size_t>(inst)];
    }
    return majority_filter(grid, noise.dilation_px, num_classes);
}

Calibration ring_camera(const SceneSpec& spec, int index) {
    double theta = 2.0 * M_PI * static_cast<double>(index) / static_cast<double>(spec.cameras);
    Vec3 pos = {spec.ring_radius * std::cos(theta), spec.ring_radius * std::sin(theta),
                spec.camera_height};
    Vec3 target = {0.0, 0.0, 0.5};
    Vec3 zc = normalized({target.x - pos.x, target.y - pos.y, target.z - pos.z});
    Vec3 xc = normalized(cross(zc, Vec3{0.0, 0.0, 1.0}));  // optical x: level, rightward
    Vec3 yc = cross(zc, xc);                               // optical y: groundward
    Calibration c;
    c.width = spec.image_width;
    c.height = spec.image_height;
    c.intrinsic = {spec.focal, 0.0, (static_cast<double>(spec.image_width) - 1.0) / 2.0,
                   0.0, spec.focal, (static_cast<double>(spec.image_height) - 1.0) / 2.0,
                   0.0, 0.0, 1.0};
    // Rows of R are the camera axes; t = -R * pos.
    c.extrinsic = {xc.x, xc.y, xc.z, -(xc.x * pos.x + xc.y * pos.y + xc.z * pos.z),
                   yc.x, yc.y, yc.z, -(yc.x * pos.x + yc.y * pos.y + yc.z * pos.z),
                   zc.x, zc.y, zc.z, -(zc.x * pos.x + zc.y * pos.y + zc.z * pos.z),
                   0.0,  0.0,  0.0,  1.0};
    c.validate();
    return c;
}

SyntheticScene generate_scene(const SceneSpec& spec, const NoiseModel& noise,
                              const ClassVocabulary& vocab, std::uint64_t seed) {
    spec.validate(vocab);
    noise.validate();

    int plane_class = -1;
    std::vector<int> object_classes;
    for (std::size_t i = 0; i < spec.classes.size(); ++i) {
        if (spec.classes[i].kind == ShapeKind::Plane)
            plane_class = static_cast<int>(i);
        else
            object_classes.push_back(static_cast<int>(i));
    }

    std::vector<Primitive> prims;
    Primitive ground;
    ground.kind = ShapeKind::Plane;
    ground.class_id = plane_class;
    ground.instance_id = 0;
    ground.half_extent = spec.extent / 2.0;
    prims.push_back(ground);

    // Placement: rejection-sampled non-overlapping footprints inside the extent.
    Rng rng_place(mix_seed(seed, 0xA1));
    int n_objects = spec.objects_min +
                    static_cast<int>(rng_place.integer(
                        static_cast<std::uint64_t>(spec.objects_max - spec.objects_min + 1)));
    for (int i = 0; i < n_objects; ++i) {
        int cls = object_classes[rng_place.integer(object_classes.size())];
        const ClassShapeSpec& shape = spec.classes[static_cast<std::size_t>(cls)];
        Primitive p;
        p.kind = shape.kind;
        p.class_id = cls;
        p.instance_id = i + 1;
        if (shape.kind == ShapeKind::Box) {
            p.sx = rng_place.uniform(shape.size_min, shape.size_max);
            p.sy = rng_place.uniform(shape.size_min, shape.size_max);
            p.height = rng_place.uniform(shape.height_min, shape.height_max);
        } else {
            p.radius = rng_place.uniform(shape.radius_min, shape.radius_max);
            p.height = rng_place.uniform(shape.height_min, shape.height_max);
        }
        double br = bounding_radius(p);
        double lim = spec.extent / 2.0 - br - 0.2;
        if (lim <= 0.0) throw GenError("scenegen: object too large for the workspace");
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            p.cx = rng_place.uniform(-lim, lim);
            p.cy = rng_place.uniform(-lim, lim);
            p.yaw = rng_place.uniform(0.0, 2.0 * M_PI);
            placed = true;
            for (const auto& q : prims) {
                if (q.kind == ShapeKind::Plane) continue;
                double dx = q.cx - p.cx, dy = q.cy - p.cy;
                double min_dist = bounding_radius(q) + br + kClearance;
                if (dx * dx + dy * dy < min_dist * min_dist) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed) throw GenError("scenegen: failed to place object after 200 attempts");
        prims.push_back(p);
    }

    SyntheticScene scene;

    // Cameras: clean render first (channels + gt), corruption afterwards so the
    // per-camera corruption stream is independent of the channel stream.
    int ignore = static_cast<int>(vocab.size());
    scene.cameras.resize(static_cast<std::size_t>(spec.cameras));
    for (int cam = 0; cam < spec.cameras; ++cam) {
        CameraData& data = scene.cameras[static_cast<std::size_t>(cam)];
        data.calib = ring_camera(spec, cam);
        RenderBuffers buf = render_scene_geometry(prims, data.calib);
        std::size_t n = data.calib.width * data.calib.height;
        data.gt_grid.width = data.calib.width;
        data.gt_grid.height = data.calib.height;
        data.gt_grid.data.assign(n, ignore);
        data.channels.assign(3 * n, 0.0);
        Rng rng_chan(mix_seed(seed, 0xB000 + static_cast<std::uint64_t>(cam)));
        for (std::size_t i = 0; i < n; ++i) {
            if (buf.instances.data[i] < 0) continue;
            int cls = buf.labels.data[i];
            data.gt_grid.data[i] = cls;
            data.channels[i] = buf.depth[i];
            double level = spec.classes[static_cast<std::size_t>(cls)].intensity +
                           spec.intensity_sigma * rng_chan.normal();
            data.channels[n + i] = std::clamp(level, 0.0, 1.0);
            data.channels[2 * n + i] = buf.height[i];
        }
        Rng rng_corrupt(mix_seed(seed, 0xC000 + static_cast<std::uint64_t>(cam)));
        data.pseudo_grid =
            corrupt_labels(prims, data.calib, vocab.size(), noise, rng_corrupt, &scene.corruption);
    }

    // Candidate points, then the visibility-consistency filter: a point
    // survives only if every camera that sees it assigns its own class.
    Rng rng_points(mix_seed(seed, 0xA2));
    std::vector<std::array<double, 3>> cand_coords;
    std::vector<double> cand_intensity;
    std::vector<int> cand_labels;
    for (const auto& p : prims) {
        int count = p.kind == ShapeKind::Plane
                        ? spec.ground_points
                        : spec.points_per_object_min +
                              static_cast<int>(rng_points.integer(static_cast<std::uint64_t>(
                                  spec.points_per_object_max - spec.points_per_object_min + 1)));
        const ClassShapeSpec& shape = spec.classes[static_cast<std::size_t>(p.class_id)];
        for (int k = 0; k < count; ++k) {
            Vec3 s = sample_surface(p, rng_points);
            cand_coords.push_back({s.x, s.y, s.z});
            double level = shape.intensity + spec.intensity_sigma * rng_points.normal();
            cand_intensity.push_back(std::clamp(level, 0.0, 1.0));
            cand_labels.push_back(p.class_id);
        }
    }
    std::vector<Calibration> calibs;
    for (const auto& c : scene.cameras) calibs.push_back(c.calib);
    PointPixelPairing pairing = project_points(cand_coords, calibs);
    std::vector<std::uint8_t> keep(cand_coords.size(), 1);
    for (const auto& e : pairing.entries) {
        const LabelGrid& grid = scene.cameras[static_cast<std::size_t>(e.camera)].gt_grid;
        if (grid.at(e.px, e.py) != cand_labels[e.point]) keep[e.point] = 0;
    }
    for (std::size_t i = 0; i < cand_coords.size(); ++i) {
        if (!keep[i]) continue;
        scene.coords.push_back(cand_coords[i]);
        scene.intensity.push_back(cand_intensity[i]);
        scene.gt_labels.push_back(cand_labels[i]);
    }
    scene.base_mask.assign(scene.coords.size(), 1);
    return scene;
}

std::vector<SyntheticScene> make_dataset(const SceneSpec& spec, const NoiseModel& noise,
                                         const ClassVocabulary& vocab, DatasetMode mode,
                                         std::uint64_t seed, std::size_t count) {
    std::vector<SyntheticScene> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        SyntheticScene scene = generate_scene(spec, noise, vocab, mix_seed(seed, i));
        for (std::size_t k = 0; k < scene.gt_labels.size(); ++k) {
            bool base = vocab.is_base[static_cast<std::size_t>(scene.gt_labels[k])];
            scene.base_mask[k] = (mode == DatasetMode::BaseAnnotated && base) ? 1 : 0;
        }
        out.push_back(std::move(scene));
    }
    return out;
}

}  // namespace crossmodal
