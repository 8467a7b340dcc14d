#include "crossmodal/io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "crossmodal/error.hpp"

namespace crossmodal {

namespace {

constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::vector<std::size_t> read_shape(const nlohmann::json& node) {
    if (!node.contains("shape") || !node["shape"].is_array())
        throw IoError("array payload missing shape");
    std::vector<std::size_t> shape;
    for (const auto& d : node["shape"]) {
        if (!d.is_number_unsigned() && !d.is_number_integer())
            throw IoError("array shape entries must be integers");
        auto v = d.get<std::int64_t>();
        if (v < 0) throw IoError("array shape entries must be non-negative");
        shape.push_back(static_cast<std::size_t>(v));
    }
    return shape;
}

}  // namespace

std::string base64_encode(const std::uint8_t* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        std::uint32_t chunk = static_cast<std::uint32_t>(data[i]) << 16;
        if (i + 1 < len) chunk |= static_cast<std::uint32_t>(data[i + 1]) << 8;
        if (i + 2 < len) chunk |= static_cast<std::uint32_t>(data[i + 2]);
        out.push_back(kB64Alphabet[(chunk >> 18) & 63]);
        out.push_back(kB64Alphabet[(chunk >> 12) & 63]);
        out.push_back(i + 1 < len ? kB64Alphabet[(chunk >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? kB64Alphabet[chunk & 63] : '=');
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw IoError("base64 payload length must be a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int vals[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            char c = text[i + k];
            if (c == '=') {
                if (i + 4 != text.size() || k < 2) throw IoError("base64 padding misplaced");
                vals[k] = 0;
                pad++;
            } else {
                if (pad > 0) throw IoError("base64 data after padding");
                vals[k] = b64_value(c);
                if (vals[k] < 0) throw IoError("base64 payload contains invalid characters");
            }
        }
        std::uint32_t chunk = (static_cast<std::uint32_t>(vals[0]) << 18) |
                              (static_cast<std::uint32_t>(vals[1]) << 12) |
                              (static_cast<std::uint32_t>(vals[2]) << 6) |
                              static_cast<std::uint32_t>(vals[3]);
        out.push_back(static_cast<std::uint8_t>((chunk >> 16) & 0xff));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>((chunk >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(chunk & 0xff));
    }
    return out;
}

nlohmann::json pack_f64(const std::vector<double>& values, const std::vector<std::size_t>& shape) {
    if (shape_product(shape) != values.size()) throw IoError("pack_f64: shape does not match size");
    std::vector<std::uint8_t> bytes(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &values[i], 8);
        for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<std::uint8_t>((bits >> (8 * b)) & 0xff);
    }
    return {{"shape", shape}, {"dtype", "f64"}, {"data", base64_encode(bytes.data(), bytes.size())}};
}

nlohmann::json pack_i32(const std::vector<int>& values, const std::vector<std::size_t>& shape) {
    if (shape_product(shape) != values.size()) throw IoError("pack_i32: shape does not match size");
    std::vector<std::uint8_t> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits = static_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<std::uint8_t>((bits >> (8 * b)) & 0xff);
    }
    return {{"shape", shape}, {"dtype", "i32"}, {"data", base64_encode(bytes.data(), bytes.size())}};
}

std::vector<double> unpack_f64(const nlohmann::json& node, std::vector<std::size_t>* shape_out) {
    auto shape = read_shape(node);
    if (!node.contains("dtype") || node["dtype"] != "f64") throw IoError("expected f64 payload");
    if (!node.contains("data") || !node["data"].is_string()) throw IoError("array payload missing data");
    auto bytes = base64_decode(node["data"].get<std::string>());
    if (bytes.size() != shape_product(shape) * 8) throw IoError("f64 payload size mismatch");
    std::vector<double> out(shape_product(shape));
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[i * 8 + static_cast<std::size_t>(b)];
        std::memcpy(&out[i], &bits, 8);
    }
    if (shape_out != nullptr) *shape_out = shape;
    return out;
}

std::vector<int> unpack_i32(const nlohmann::json& node, std::vector<std::size_t>* shape_out) {
    auto shape = read_shape(node);
    if (!node.contains("dtype") || node["dtype"] != "i32") throw IoError("expected i32 payload");
    if (!node.contains("data") || !node["data"].is_string()) throw IoError("array payload missing data");
    auto bytes = base64_decode(node["data"].get<std::string>());
    if (bytes.size() != shape_product(shape) * 4) throw IoError("i32 payload size mismatch");
    std::vector<int> out(shape_product(shape));
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 3; b >= 0; --b) bits = (bits << 8) | bytes[i * 4 + static_cast<std::size_t>(b)];
        out[i] = static_cast<int>(bits);
    }
    if (shape_out != nullptr) *shape_out = shape;
    return out;
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

nlohmann::ordered_json metrics_report_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["miou_base"] = round6(report.miou_base);
    j["miou_novel"] = round6(report.miou_novel);
    j["miou_all"] = round6(report.miou_all);
    j["hiou"] = round6(report.hiou);
    j["num_scenes"] = report.num_scenes;
    j["num_points"] = report.num_points;
    nlohmann::ordered_json per_class = nlohmann::ordered_json::array();
    for (const ClassMetric& m : report.per_class) {
        per_class.push_back({{"name", m.name}, {"iou", round6(m.iou)}, {"present", m.present}});
    }
    j["per_class"] = std::move(per_class);
    return j;
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file for reading: " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("invalid JSON in " + path + ": " + e.what());
    }
}

void write_json_file(const std::string& path, const nlohmann::ordered_json& value, int indent) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out << value.dump(indent) << "\n";
    if (!out) throw IoError("failed while writing: " + path);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out << text;
    if (!out) throw IoError("failed while writing: " + path);
}

nlohmann::json scene_to_json(const SyntheticScene& scene) {
    nlohmann::json j;
    j["format"] = kSceneFormat;
    std::size_t n = scene.coords.size();
    std::vector<double> flat(n * 3);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < 3; ++k) flat[i * 3 + k] = scene.coords[i][k];
    j["coords"] = pack_f64(flat, {n, 3});
    j["intensity"] = pack_f64(scene.intensity, {n});
    j["gt_labels"] = pack_i32(scene.gt_labels, {n});
    std::vector<int> mask(scene.base_mask.begin(), scene.base_mask.end());
    j["base_mask"] = pack_i32(mask, {n});
    nlohmann::json cams = nlohmann::json::array();
    for (const auto& cam : scene.cameras) {
        nlohmann::json c;
        c["width"] = cam.calib.width;
        c["height"] = cam.calib.height;
        c["intrinsic"] = pack_f64({cam.calib.intrinsic.begin(), cam.calib.intrinsic.end()}, {3, 3});
        c["extrinsic"] = pack_f64({cam.calib.extrinsic.begin(), cam.calib.extrinsic.end()}, {4, 4});
        c["gt_grid"] = pack_i32(cam.gt_grid.data, {cam.calib.height, cam.calib.width});
        c["pseudo_grid"] = pack_i32(cam.pseudo_grid.data, {cam.calib.height, cam.calib.width});
        c["channels"] = pack_f64(cam.channels, {3, cam.calib.height, cam.calib.width});
        cams.push_back(std::move(c));
    }
    j["cameras"] = std::move(cams);
    return j;
}

SyntheticScene scene_from_json(const nlohmann::json& value) {
    if (!value.contains("format") || value["format"] != kSceneFormat)
        throw IoError("scene file has unknown format tag");
    SyntheticScene scene;
    std::vector<std::size_t> shape;
    auto coords = unpack_f64(value.at("coords"), &shape);
    if (shape.size() != 2 || shape[1] != 3) throw IoError("scene coords must be Nx3");
    std::size_t n = shape[0];
    scene.coords.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        scene.coords[i] = {coords[i * 3], coords[i * 3 + 1], coords[i * 3 + 2]};
    scene.intensity = unpack_f64(value.at("intensity"), &shape);
    if (scene.intensity.size() != n) throw IoError("scene intensity length mismatch");
    scene.gt_labels = unpack_i32(value.at("gt_labels"), &shape);
    if (scene.gt_labels.size() != n) throw IoError("scene gt_labels length mismatch");
    auto mask = unpack_i32(value.at("base_mask"), &shape);
    if (mask.size() != n) throw IoError("scene base_mask length mismatch");
    scene.base_mask.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] != 0 && mask[i] != 1) throw IoError("scene base_mask must be 0/1");
        scene.base_mask[i] = static_cast<std::uint8_t>(mask[i]);
    }
    if (!value.contains("cameras") || !value["cameras"].is_array())
        throw IoError("scene file missing cameras");
    for (const auto& c : value["cameras"]) {
        CameraData cam;
        cam.calib.width = c.at("width").get<std::size_t>();
        cam.calib.height = c.at("height").get<std::size_t>();
        auto intr = unpack_f64(c.at("intrinsic"), &shape);
        if (intr.size() != 9) throw IoError("scene intrinsic must be 3x3");
        std::copy(intr.begin(), intr.end(), cam.calib.intrinsic.begin());
        auto extr = unpack_f64(c.at("extrinsic"), &shape);
        if (extr.size() != 16) throw IoError("scene extrinsic must be 4x4");
        std::copy(extr.begin(), extr.end(), cam.calib.extrinsic.begin());
        cam.calib.validate();
        std::size_t px = cam.calib.width * cam.calib.height;
        cam.gt_grid.width = cam.pseudo_grid.width = cam.calib.width;
        cam.gt_grid.height = cam.pseudo_grid.height = cam.calib.height;
        cam.gt_grid.data = unpack_i32(c.at("gt_grid"), &shape);
        cam.pseudo_grid.data = unpack_i32(c.at("pseudo_grid"), &shape);
        if (cam.gt_grid.data.size() != px || cam.pseudo_grid.data.size() != px)
            throw IoError("scene grid size mismatch");
        cam.channels = unpack_f64(c.at("channels"), &shape);
        if (cam.channels.size() != 3 * px) throw IoError("scene channels must be 3xHxW");
        scene.cameras.push_back(std::move(cam));
    }
    return scene;
}

void save_scene(const std::string& path, const SyntheticScene& scene) {
    // Scene payloads are large; skip pretty-printing.
    write_json_file(path, scene_to_json(scene), -1);
}

SyntheticScene load_scene(const std::string& path) { return scene_from_json(read_json_file(path)); }

void save_dataset(const std::string& dir, const std::vector<SyntheticScene>& train,
                  const std::vector<SyntheticScene>& eval_scenes,
                  const nlohmann::json& manifest_extra) {
    std::filesystem::create_directories(dir);
    auto name = [](const char* split, std::size_t i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s_%04zu.json", split, i);
        return std::string(buf);
    };
    for (std::size_t i = 0; i < train.size(); ++i)
        save_scene(dir + "/" + name("train", i), train[i]);
    for (std::size_t i = 0; i < eval_scenes.size(); ++i)
        save_scene(dir + "/" + name("eval", i), eval_scenes[i]);
    nlohmann::json manifest = manifest_extra;
    manifest["format"] = "crossmodal-dataset-v1";
    manifest["train_scenes"] = train.size();
    manifest["eval_scenes"] = eval_scenes.size();
    write_json_file(dir + "/manifest.json", manifest);
}

std::vector<SyntheticScene> load_split(const std::string& dir, const std::string& split) {
    if (split != "train" && split != "eval")
        throw IoError("unknown dataset split '" + split + "' (expected train or eval)");
    nlohmann::json manifest = read_json_file(dir + "/manifest.json");
    if (!manifest.contains(split + "_scenes"))
        throw IoError("manifest in " + dir + " is missing " + split + "_scenes");
    std::size_t count = manifest.at(split + "_scenes").get<std::size_t>();
    std::vector<SyntheticScene> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s_%04zu.json", split.c_str(), i);
        out.push_back(load_scene(dir + "/" + buf));
    }
    return out;
}

void save_checkpoint(const std::string& path, const Model& model, const std::string& config_hash,
                     std::uint64_t seed) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& [name, tensor] : model.named_params()) {
        nlohmann::json p = pack_f64(tensor.values(), tensor.shape());
        p["name"] = name;
        params.push_back(std::move(p));
    }
    j["params"] = std::move(params);
    write_json_file(path, j, -1);
}

void load_checkpoint(const std::string& path, Model& model, const std::string& expected_hash,
                     std::uint64_t* seed_out) {
    nlohmann::json j = read_json_file(path);
    if (!j.contains("format") || j["format"] != kCheckpointFormat)
        throw IoError("checkpoint file has unknown format tag");
    std::string hash = j.at("config_hash").get<std::string>();
    if (!expected_hash.empty() && hash != expected_hash)
        throw ConfigError("checkpoint was produced under a different configuration (hash " + hash +
                          ", expected " + expected_hash + ")");
    if (seed_out != nullptr) *seed_out = j.at("seed").get<std::uint64_t>();
    auto params = model.named_params();
    const auto& stored = j.at("params");
    if (!stored.is_array() || stored.size() != params.size())
        throw IoError("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& node = stored[i];
        if (node.at("name").get<std::string>() != params[i].first)
            throw IoError("checkpoint parameter order mismatch at '" +
                          node.at("name").get<std::string>() + "'");
        std::vector<std::size_t> shape;
        auto values = unpack_f64(node, &shape);
        if (shape != params[i].second.shape())
            throw IoError("checkpoint shape mismatch for '" + params[i].first + "'");
        params[i].second.node()->values = values;
    }
}

}  // namespace crossmodal
