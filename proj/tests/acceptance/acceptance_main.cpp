// Release gate for the crossmodal workbench. Nine numbered criteria are
// verified end to end and one PASS/FAIL line is printed per criterion;
// the exit code is zero only when every criterion holds.
//
// Quick criteria (1-4) exercise the library in-process. The benchmark
// criteria (5-9) drive the installed CLI binary over the reference
// configuration — the library defaults — sharing training runs between
// criteria so the full gate stays within its time budget on one core:
//   - five two-stage runs, seeds 0..4 (criterion 6; seeds 0..2 double as
//     criterion 5's runs and criterion 9's joint arm),
//   - five single-stage runs with the same total step budget (criterion 6),
//   - a byte-for-byte repeat of the seed-0 run (criterion 8),
//   - the seed-0 training logs (criterion 7),
//   - three ground-truth-only point-branch trainings (criterion 9).
//
// `acceptance --smoke` runs the same plumbing at toy scale: criteria whose
// content is scale-free (1-4, 7, 8) still gate the exit code; the benchmark
// margins (5, 6, 9) are reported as INFO only.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vendor/json.hpp"

#include "crossmodal/alignment.hpp"
#include "crossmodal/config.hpp"
#include "crossmodal/error.hpp"
#include "crossmodal/geometry.hpp"
#include "crossmodal/io.hpp"
#include "crossmodal/metrics.hpp"
#include "crossmodal/model.hpp"
#include "crossmodal/rng.hpp"
#include "crossmodal/scenegen.hpp"
#include "crossmodal/tensor.hpp"
#include "crossmodal/trainer.hpp"
#include "crossmodal/transfer.hpp"
#include "tests/testutil.hpp"

using namespace crossmodal;
using nlohmann::json;

namespace {

const std::string kBin = CROSSMODAL_BIN_PATH;
const std::string kScratch = CROSSMODAL_ACCEPT_SCRATCH;

bool g_smoke = false;

double now_s() {
    using clock = std::chrono::steady_clock;
    static const clock::time_point start = clock::now();
    return std::chrono::duration<double>(clock::now() - start).count();
}

void progress(const std::string& msg) {
    std::fprintf(stderr, "[%8.1fs] %s\n", now_s(), msg.c_str());
    std::fflush(stderr);
}

struct Verdict {
    int id = 0;
    std::string title;
    bool pass = false;
    bool gating = true;  // --smoke downgrades the benchmark margins to INFO
    std::string detail;
};

Verdict make_verdict(int id, std::string title) {
    Verdict v;
    v.id = id;
    v.title = std::move(title);
    return v;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

void run_cmd(const std::string& args) {
    const std::string cmd = "unset CROSSMODAL_SEED; \"" + kBin + "\" " + args;
    progress("$ " + args);
    const int status = std::system(cmd.c_str());
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (code != 0) throw std::runtime_error("command failed (exit " + std::to_string(code) + "): " + args);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Criterion 1 — the harmonic metric reproduces its published anchor rows.
// ---------------------------------------------------------------------------

Verdict criterion1() {
    Verdict v = make_verdict(1, "hIoU anchor values");
    const double a = hiou(0.769, 0.665) * 100.0;
    const double b = hiou(0.759, 0.622) * 100.0;
    v.pass = std::fabs(a - 71.3) <= 0.05 && std::fabs(b - 68.4) <= 0.1;
    v.detail = fmt("hiou(76.9,66.5)=%.4f (want 71.3±0.05), hiou(75.9,62.2)=%.4f (want 68.4±0.1)", a, b);
    return v;
}

// ---------------------------------------------------------------------------
// Criterion 2 — central finite differences agree with autograd for every
// differentiable primitive (<1e-6) and for the full matching module (<1e-5),
// over ≥20 random configurations each.
// ---------------------------------------------------------------------------

Tensor project_to_scalar(const Tensor& out, Rng& rng) {
    std::vector<double> w(out.size());
    for (double& x : w) x = rng.normal();
    Tensor r = Tensor::from_values(out.shape(), w, false);
    return sum_all(mul(out, r));
}

Tensor rand_input(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = scale * rng.normal();
    return Tensor::from_values({rows, cols}, v, true);
}

Verdict criterion2() {
    Verdict v = make_verdict(2, "gradient correctness");
    const int configs = g_smoke ? 20 : 25;  // ≥20 either way; smoke saves nothing here
    struct OpCase {
        const char* name;
        std::function<double(Rng&)> check;  // returns gradcheck worst rel-err
    };

    auto dims = [](Rng& rng) { return std::pair<std::size_t, std::size_t>(1 + rng.integer(4), 1 + rng.integer(4)); };

    const std::vector<OpCase> ops = {
        {"matmul",
         [&](Rng& rng) {
             std::size_t m = 1 + rng.integer(4), k = 1 + rng.integer(4), n = 1 + rng.integer(4);
             Tensor a = rand_input(rng, m, k), b = rand_input(rng, k, n);
             return testutil::gradcheck([&] { return project_to_scalar(matmul(a, b), rng); }, {a, b});
         }},
        {"matmul_nt",
         [&](Rng& rng) {
             std::size_t m = 1 + rng.integer(4), k = 1 + rng.integer(4), n = 1 + rng.integer(4);
             Tensor a = rand_input(rng, m, k), b = rand_input(rng, n, k);
             return testutil::gradcheck([&] { return project_to_scalar(matmul_nt(a, b), rng); }, {a, b});
         }},
        {"add",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor a = rand_input(rng, m, n), b = rand_input(rng, m, n);
             return testutil::gradcheck([&] { return project_to_scalar(add(a, b), rng); }, {a, b});
         }},
        {"sub",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor a = rand_input(rng, m, n), b = rand_input(rng, m, n);
             return testutil::gradcheck([&] { return project_to_scalar(sub(a, b), rng); }, {a, b});
         }},
        {"mul",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor a = rand_input(rng, m, n), b = rand_input(rng, m, n);
             return testutil::gradcheck([&] { return project_to_scalar(mul(a, b), rng); }, {a, b});
         }},
        {"divide",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor a = rand_input(rng, m, n);
             std::vector<double> bd(m * n);
             for (double& x : bd) x = (1.0 + rng.uniform()) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
             Tensor b = Tensor::from_values({m, n}, bd, true);
             return testutil::gradcheck([&] { return project_to_scalar(divide(a, b), rng); }, {a, b});
         }},
        {"add_rowvec",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor x = rand_input(rng, m, n), bias = rand_input(rng, 1, n);
             return testutil::gradcheck([&] { return project_to_scalar(add_rowvec(x, bias), rng); },
                                        {x, bias});
         }},
        {"scale",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor x = rand_input(rng, m, n);
             double c = rng.normal();
             return testutil::gradcheck([&] { return project_to_scalar(scale(x, c), rng); }, {x});
         }},
        {"add_scalar",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor x = rand_input(rng, m, n);
             double c = rng.normal();
             return testutil::gradcheck([&] { return project_to_scalar(add_scalar(x, c), rng); }, {x});
         }},
        {"scale_rows",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor x = rand_input(rng, m, n);
             std::vector<double> w(m);
             for (double& y : w) y = rng.normal();
             return testutil::gradcheck([&] { return project_to_scalar(scale_rows(x, w), rng); }, {x});
         }},
        {"sigmoid",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor x = rand_input(rng, m, n);
             return testutil::gradcheck([&] { return project_to_scalar(sigmoid(x), rng); }, {x});
         }},
        {"tanh",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor x = rand_input(rng, m, n);
             return testutil::gradcheck([&] { return project_to_scalar(tanh_act(x), rng); }, {x});
         }},
        {"softmax_rows",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor x = rand_input(rng, m, n + 1);  // ≥2 columns keeps rows non-degenerate
             return testutil::gradcheck([&] { return project_to_scalar(softmax_rows(x), rng); }, {x});
         }},
        {"l2_normalize_rows",
         [&](Rng& rng) {
             std::size_t m = 1 + rng.integer(4), n = 3 + rng.integer(3);
             Tensor x;
             do {
                 x = rand_input(rng, m, n);
                 bool ok = true;
                 for (std::size_t r = 0; r < m; ++r) {
                     double s = 0.0;
                     for (std::size_t c = 0; c < n; ++c) s += x.values()[r * n + c] * x.values()[r * n + c];
                     ok = ok && s > 0.09;
                 }
                 if (ok) break;
             } while (true);
             return testutil::gradcheck([&] { return project_to_scalar(l2_normalize_rows(x), rng); },
                                        {x});
         }},
        {"gather_rows",
         [&](Rng& rng) {
             std::size_t m = 2 + rng.integer(4), n = 1 + rng.integer(4), k = 1 + rng.integer(6);
             Tensor x = rand_input(rng, m, n);
             std::vector<std::size_t> idx(k);
             for (std::size_t& i : idx) i = rng.integer(m);  // repeats exercise accumulation
             return testutil::gradcheck([&] { return project_to_scalar(gather_rows(x, idx), rng); },
                                        {x});
         }},
        {"concat_rows",
         [&](Rng& rng) {
             std::size_t n = 1 + rng.integer(4);
             Tensor a = rand_input(rng, 1 + rng.integer(3), n);
             Tensor b = rand_input(rng, 1 + rng.integer(3), n);
             return testutil::gradcheck([&] { return project_to_scalar(concat_rows({a, b}), rng); },
                                        {a, b});
         }},
        {"concat_cols",
         [&](Rng& rng) {
             std::size_t m = 1 + rng.integer(4);
             Tensor a = rand_input(rng, m, 1 + rng.integer(3));
             Tensor b = rand_input(rng, m, 1 + rng.integer(3));
             return testutil::gradcheck([&] { return project_to_scalar(concat_cols({a, b}), rng); },
                                        {a, b});
         }},
        {"unfold_3x3",
         [&](Rng& rng) {
             std::size_t h = 2 + rng.integer(4), w = 2 + rng.integer(4), f = 1 + rng.integer(3);
             Tensor x = rand_input(rng, h * w, f);
             return testutil::gradcheck(
                 [&] { return project_to_scalar(unfold_3x3(x, h, w), rng); }, {x});
         }},
        {"colsum",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor x = rand_input(rng, m, n);
             return testutil::gradcheck([&] { return project_to_scalar(colsum(x), rng); }, {x});
         }},
        {"sum_all",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor x = rand_input(rng, m, n);
             return testutil::gradcheck([&] { return sum_all(x); }, {x});
         }},
        {"mean_all",
         [&](Rng& rng) {
             auto [m, n] = dims(rng);
             Tensor x = rand_input(rng, m, n);
             return testutil::gradcheck([&] { return mean_all(x); }, {x});
         }},
        {"cosine_distance_mean",
         [&](Rng& rng) {
             std::size_t m = 1 + rng.integer(4), n = 3 + rng.integer(4);
             auto rows = [&] {
                 Tensor t;
                 do {
                     t = rand_input(rng, m, n);
                     bool ok = true;
                     for (std::size_t r = 0; r < m; ++r) {
                         double s = 0.0;
                         for (std::size_t c = 0; c < n; ++c)
                             s += t.values()[r * n + c] * t.values()[r * n + c];
                         ok = ok && s > 0.09;
                     }
                     if (ok) return t;
                 } while (true);
             };
             Tensor a = rows(), b = rows();
             return testutil::gradcheck([&] { return cosine_distance_mean(a, b); }, {a, b});
         }},
        {"masked_softmax_ce",
         [&](Rng& rng) {
             std::size_t m = 2 + rng.integer(5), c = 2 + rng.integer(4);
             Tensor logits = rand_input(rng, m, c, 2.0);
             std::vector<int> labels(m);
             for (int& l : labels)
                 l = rng.bernoulli(0.3) ? static_cast<int>(c) : static_cast<int>(rng.integer(c));
             labels[0] = 0;  // at least one live row
             return testutil::gradcheck(
                 [&] { return masked_softmax_ce(logits, labels, static_cast<int>(c)).loss; },
                 {logits});
         }},
    };

    double worst_prim = 0.0;
    std::string worst_name = "-";
    for (const OpCase& op : ops) {
        Rng rng(fnv1a(op.name) ^ 0x5eed);
        for (int i = 0; i < configs; ++i) {
            const double e = op.check(rng);
            if (e > worst_prim) {
                worst_prim = e;
                worst_name = op.name;
            }
        }
    }

    // Full matching module: attention + FFN + binary head through its loss,
    // against every module parameter and both row inputs.
    double worst_vpm = 0.0;
    Rng vrng(0x9a7c);
    for (int i = 0; i < configs; ++i) {
        ModelConfig mc;
        mc.num_classes = 3;
        const std::size_t dims_choices[] = {4, 6, 8};
        mc.embed_dim = dims_choices[vrng.integer(3)];
        mc.feature_dim = 6;
        mc.vpm_heads = (mc.embed_dim % 2 == 0 && vrng.bernoulli(0.5)) ? 2 : 1;
        Model model = Model::init(mc, 1000 + i);
        const std::size_t r = 1 + vrng.integer(5);
        Tensor img = rand_input(vrng, r, mc.embed_dim);
        Tensor pts = rand_input(vrng, r, mc.embed_dim);
        std::vector<int> labels(r);
        for (int& l : labels) l = vrng.bernoulli(0.5) ? 1 : 0;
        std::vector<Tensor> inputs = {img, pts};
        for (const Tensor& p : model.vpm_params()) inputs.push_back(p);
        const double e = testutil::gradcheck(
            [&] { return vpm_loss(model.vpm_forward(img, pts), labels).loss; }, inputs);
        worst_vpm = std::max(worst_vpm, e);
    }

    v.pass = worst_prim < 1e-6 && worst_vpm < 1e-5;
    v.detail = fmt("%zu primitives x %d configs, worst %.3g (%s, need <1e-6); "
                   "matching module x %d configs, worst %.3g (need <1e-5)",
                   ops.size(), configs, worst_prim, worst_name.c_str(), configs, worst_vpm);
    return v;
}

// ---------------------------------------------------------------------------
// Criterion 3 — projection against a homogeneous-matrix oracle, and exact
// label recovery through noise-free transfer.
// ---------------------------------------------------------------------------

Calibration random_calibration(Rng& rng) {
    Calibration c;
    c.width = 32 + rng.integer(225);
    c.height = 32 + rng.integer(225);
    const double fx = 50.0 + rng.uniform() * 250.0;
    const double fy = 50.0 + rng.uniform() * 250.0;
    const double cx = 1.0 + rng.uniform() * (static_cast<double>(c.width) - 2.0);
    const double cy = 1.0 + rng.uniform() * (static_cast<double>(c.height) - 2.0);
    c.intrinsic = {fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0};

    // Rodrigues rotation from a random axis and angle.
    double ax = 0.0, ay = 0.0, az = 0.0, norm = 0.0;
    do {
        ax = rng.normal();
        ay = rng.normal();
        az = rng.normal();
        norm = std::sqrt(ax * ax + ay * ay + az * az);
    } while (norm < 0.2);
    ax /= norm;
    ay /= norm;
    az /= norm;
    const double ang = rng.uniform() * 2.0 * M_PI;
    const double ca = std::cos(ang), sa = std::sin(ang), oc = 1.0 - ca;
    const double R[9] = {ca + ax * ax * oc,      ax * ay * oc - az * sa, ax * az * oc + ay * sa,
                         ay * ax * oc + az * sa, ca + ay * ay * oc,      ay * az * oc - ax * sa,
                         az * ax * oc - ay * sa, az * ay * oc + ax * sa, ca + az * az * oc};
    const double t[3] = {rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
    c.extrinsic = {R[0], R[1], R[2], t[0], R[3], R[4], R[5], t[1],
                   R[6], R[7], R[8], t[2], 0.0,  0.0,  0.0,  1.0};
    c.validate();
    return c;
}

Verdict criterion3() {
    Verdict v = make_verdict(3, "projection oracle and noise-free transfer");
    const std::size_t draws = g_smoke ? 1000 : 10000;
    const std::size_t pts_per_calib = 20;

    Rng rng(0xca11b);
    double worst = 0.0;
    std::size_t tested = 0, in_frame = 0, mismatched_presence = 0;
    while (tested < draws) {
        const Calibration calib = random_calibration(rng);

        // Independent oracle: the full 3x4 homogeneous matrix K·[R|t], built
        // as an explicit matrix product and applied to [x y z 1].
        double P[12];
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 4; ++col) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += calib.intrinsic[r * 3 + k] * calib.extrinsic[k * 4 + col];
                P[r * 4 + col] = s;
            }

        std::vector<std::array<double, 3>> coords(pts_per_calib);
        for (auto& p : coords) p = {rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0)};
        const PointPixelPairing pairing = project_points(coords, {calib});

        std::map<std::size_t, PairEntry> by_point;
        for (const PairEntry& e : pairing.entries) by_point[e.point] = e;

        for (std::size_t i = 0; i < coords.size(); ++i, ++tested) {
            const double x = coords[i][0], y = coords[i][1], z = coords[i][2];
            const double a = P[0] * x + P[1] * y + P[2] * z + P[3];
            const double b = P[4] * x + P[5] * y + P[6] * z + P[7];
            const double w = P[8] * x + P[9] * y + P[10] * z + P[11];
            const double u = a / w, vv = b / w;
            const long px = round_half_up(u), py = round_half_up(vv);
            const bool expect = w > kDepthMin && px >= 0 && px < static_cast<long>(calib.width) &&
                                py >= 0 && py < static_cast<long>(calib.height);
            auto it = by_point.find(i);
            if (expect != (it != by_point.end())) {
                ++mismatched_presence;
                continue;
            }
            if (!expect) continue;
            ++in_frame;
            worst = std::max({worst, std::fabs(it->second.u - u), std::fabs(it->second.v - vv),
                              std::fabs(it->second.depth - w)});
            if (it->second.px != px || it->second.py != py) ++mismatched_presence;
        }
    }

    // Noise-free transfer recovers ground truth for every paired point.
    const RunConfig ref = default_run_config();
    const NoiseModel no_noise{};
    const std::size_t num_scenes = g_smoke ? 2 : 10;
    std::size_t paired = 0, correct = 0;
    for (std::size_t s = 0; s < num_scenes; ++s) {
        const SyntheticScene scene = generate_scene(ref.scene, no_noise, ref.vocab, 9000 + s);
        std::vector<Calibration> calibs;
        std::vector<LabelGrid> grids;
        for (const CameraData& cam : scene.cameras) {
            calibs.push_back(cam.calib);
            grids.push_back(cam.pseudo_grid);
        }
        const PointPixelPairing pairing = project_points(scene.coords, calibs);
        const std::vector<int> transferred =
            transfer_labels(pairing, grids, ref.vocab.size(), scene.coords.size());
        for (std::size_t i = 0; i < transferred.size(); ++i) {
            if (transferred[i] == ref.vocab.ignore_id()) continue;
            ++paired;
            if (transferred[i] == scene.gt_labels[i]) ++correct;
        }
    }

    v.pass = worst <= 1e-9 && mismatched_presence == 0 && paired > 0 && correct == paired;
    v.detail = fmt("%zu draws, %zu in frame, worst |Δ|=%.3g (need ≤1e-9), %zu presence mismatches; "
                   "noise-free transfer %zu/%zu paired points correct over %zu scenes",
                   tested, in_frame, worst, mismatched_presence, correct, paired, num_scenes);
    return v;
}

// ---------------------------------------------------------------------------
// Criterion 4 — loss contracts: analytic anchors, saturation, empty-zero.
// ---------------------------------------------------------------------------

Verdict criterion4() {
    Verdict v = make_verdict(4, "loss contracts");
    std::vector<std::string> fails;

    auto row = [](std::vector<double> vals) {
        return Tensor::from_values({1, vals.size()}, vals, false);
    };
    const double fd_same = feature_distill_loss(row({1, 0, 0, 0}), row({1, 0, 0, 0})).value.item();
    const double fd_orth = feature_distill_loss(row({1, 0, 0, 0}), row({0, 1, 0, 0})).value.item();
    const double fd_opp = feature_distill_loss(row({1, 0, 0, 0}), row({-1, 0, 0, 0})).value.item();
    if (std::fabs(fd_same - 0.0) > 1e-12) fails.push_back(fmt("fd(same)=%.3g", fd_same));
    if (std::fabs(fd_orth - 1.0) > 1e-12) fails.push_back(fmt("fd(orth)=%.3g", fd_orth));
    if (std::fabs(fd_opp - 2.0) > 1e-12) fails.push_back(fmt("fd(opp)=%.3g", fd_opp));

    Rng rng(0xfd);
    for (int i = 0; i < 200; ++i) {
        const std::size_t r = 1 + rng.integer(6), d = 3 + rng.integer(6);
        const double val = feature_distill_loss(rand_input(rng, r, d), rand_input(rng, r, d)).value.item();
        if (val < -1e-12 || val > 2.0 + 1e-12) fails.push_back(fmt("fd out of range: %.3g", val));
    }

    // Saturated-correct predictions: CE+dice within 0.01 of zero, through both
    // the branch loss and the distillation loss.
    const std::size_t n = 40, C = 5;
    std::vector<double> logits(n * C, -30.0);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(rng.integer(C));
        logits[i * C + labels[i]] = 30.0;
    }
    const Tensor lt = Tensor::from_values({n, C}, logits, false);
    const double sat_seg = segmentation_loss(lt, labels, C).total.item();
    const double sat_distill = logit_distill_loss(lt, labels, C).total.item();
    if (sat_seg >= 0.01) fails.push_back(fmt("saturated seg=%.4f", sat_seg));
    if (sat_distill >= 0.01) fails.push_back(fmt("saturated distill=%.4f", sat_distill));

    // Fully masked inputs are exactly the empty zero.
    const std::vector<int> all_ignore(n, static_cast<int>(C));
    const SegLoss masked = segmentation_loss(lt, all_ignore, C);
    if (!masked.empty() || masked.total.item() != 0.0) fails.push_back("masked seg not empty-zero");
    const SegLoss masked_distill = logit_distill_loss(lt, all_ignore, C);
    if (!masked_distill.empty() || masked_distill.total.item() != 0.0)
        fails.push_back("masked distill not empty-zero");
    const FeatureDistillLoss fd_empty = feature_distill_loss(Tensor::zeros({0, 4}), Tensor::zeros({0, 4}));
    if (!fd_empty.empty() || fd_empty.value.item() != 0.0) fails.push_back("empty fd not zero");
    const MaskedCE vpm_empty = vpm_loss(Tensor::zeros({0, 2}), {});
    if (!vpm_empty.empty() || vpm_empty.loss.item() != 0.0) fails.push_back("empty vpm not zero");

    // Uniform match logits score exactly ln 2.
    const MaskedCE uniform = vpm_loss(Tensor::zeros({5, 2}), std::vector<int>{0, 1, 0, 1, 1});
    if (std::fabs(uniform.loss.item() - std::log(2.0)) > 1e-12)
        fails.push_back(fmt("uniform vpm=%.12f", uniform.loss.item()));

    v.pass = fails.empty();
    std::string joined;
    for (const std::string& f : fails) joined += (joined.empty() ? "" : "; ") + f;
    v.detail = v.pass ? fmt("anchors 0/1/2 exact, range ok, saturated %.2g/%.2g, empty-zero exact, "
                            "uniform=ln2",
                            sat_seg, sat_distill)
                      : joined;
    return v;
}

// ---------------------------------------------------------------------------
// Benchmark harness shared by criteria 5-9.
// ---------------------------------------------------------------------------

struct Bench {
    std::string data_dir;
    RunConfig ref;
    std::vector<double> two_base, two_novel;  // seeds 0..4
    std::vector<double> one_novel;            // seeds 0..4
    double baseline_novel = 0.0;
    std::string run_dir(std::uint64_t seed, const char* kind) const {
        return kScratch + "/runs/" + kind + std::to_string(seed);
    }
};

RunConfig smoke_config() {
    RunConfig cfg = default_run_config();
    cfg.scene.image_width = 32;
    cfg.scene.image_height = 32;
    cfg.scene.cameras = 2;
    cfg.scene.focal = 110.0 * 32.0 / 128.0;
    cfg.scene.ground_points = 200;
    cfg.scene.objects_min = 3;
    cfg.scene.objects_max = 5;
    cfg.scene.points_per_object_min = 50;
    cfg.scene.points_per_object_max = 80;
    cfg.train_scenes = 6;
    cfg.eval_scenes = 3;
    cfg.trainer.stage1_steps = 20;
    cfg.trainer.stage2_steps = 40;
    cfg.vpm_r_max = 128;
    return cfg;
}

json read_metrics(const std::string& dir) { return read_json_file(dir + "/metrics.json"); }

Bench run_benchmark() {
    Bench b;
    b.ref = g_smoke ? smoke_config() : default_run_config();
    b.data_dir = kScratch + "/data";

    const std::string cfg_path = kScratch + "/reference.json";
    write_json_file(cfg_path, b.ref.merged());

    RunConfig one = b.ref;
    one.trainer.stage2_steps += one.trainer.stage1_steps;  // equal total budget
    one.trainer.stage1_steps = 0;
    const std::string one_path = kScratch + "/reference_onestage.json";
    write_json_file(one_path, one.merged());

    run_cmd("gen --config \"" + cfg_path + "\" --out \"" + b.data_dir + "\"");

    run_cmd("baseline --config \"" + cfg_path + "\" --data \"" + b.data_dir + "\" --out \"" +
            kScratch + "/runs/baseline\"");
    b.baseline_novel = read_metrics(kScratch + "/runs/baseline").at("miou_novel").get<double>();
    progress(fmt("baseline novel mIoU %.6f", b.baseline_novel));

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const std::string dir = b.run_dir(seed, "two");
        run_cmd("train --config \"" + cfg_path + "\" --data \"" + b.data_dir + "\" --out \"" + dir +
                "\" --seed " + std::to_string(seed));
        run_cmd("eval --run \"" + dir + "\" --out \"" + dir + "\"");
        const json m = read_metrics(dir);
        b.two_base.push_back(m.at("miou_base").get<double>());
        b.two_novel.push_back(m.at("miou_novel").get<double>());
        progress(fmt("two-stage seed %llu: base %.6f novel %.6f",
                     static_cast<unsigned long long>(seed), b.two_base.back(), b.two_novel.back()));
    }

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const std::string dir = b.run_dir(seed, "one");
        run_cmd("train --config \"" + one_path + "\" --data \"" + b.data_dir + "\" --out \"" + dir +
                "\" --seed " + std::to_string(seed));
        run_cmd("eval --run \"" + dir + "\" --out \"" + dir + "\"");
        b.one_novel.push_back(read_metrics(dir).at("miou_novel").get<double>());
        progress(fmt("one-stage seed %llu: novel %.6f", static_cast<unsigned long long>(seed),
                     b.one_novel.back()));
    }
    return b;
}

Verdict criterion5(const Bench& b) {
    Verdict v = make_verdict(5, "denoising margin over the projection baseline");
    const std::vector<double> novels(b.two_novel.begin(), b.two_novel.begin() + 3);
    const double mean_novel = mean_of(novels);
    v.pass = mean_novel >= b.baseline_novel + 0.10;
    v.gating = !g_smoke;
    v.detail = fmt("trained novel %.4f (seeds 0-2) vs baseline %.4f; margin %+.1f pts (need ≥ +10)",
                   mean_novel, b.baseline_novel, (mean_novel - b.baseline_novel) * 100.0);
    return v;
}

Verdict criterion6(const Bench& b) {
    Verdict v = make_verdict(6, "two-stage vs single-stage schedule");
    const double two = mean_of(b.two_novel), one = mean_of(b.one_novel);
    v.pass = two >= one - 0.01;
    v.gating = !g_smoke;
    v.detail = fmt("two-stage novel %.4f vs single-stage %.4f over 5 seeds, equal budgets "
                   "(need two ≥ one − 1 pt)",
                   two, one);
    return v;
}

Verdict criterion7(const Bench& b) {
    Verdict v = make_verdict(7, "stage isolation and clipping scope");
    const std::string dir = b.run_dir(0, "two");

    std::ifstream freeze(dir + "/freeze.log");
    std::string first, hex;
    std::size_t step = 0, freeze_lines = 0;
    bool frozen_ok = true;
    while (freeze >> step >> hex) {
        if (freeze_lines == 0) first = hex;
        frozen_ok = frozen_ok && hex == first;
        ++freeze_lines;
    }
    frozen_ok = frozen_ok && freeze_lines == b.ref.trainer.stage1_steps;

    std::ifstream norms(dir + "/norms.log");
    std::string branch;
    int stage = 0, clipped = 0;
    double pre = 0.0, post = 0.0;
    std::size_t s1 = 0, s2 = 0;
    bool clip_ok = true;
    while (norms >> step >> stage >> branch >> pre >> post >> clipped) {
        if (stage == 1) {
            ++s1;
            clip_ok = clip_ok && post <= b.ref.trainer.clip_norm * (1.0 + 1e-12) &&
                      clipped == (pre > b.ref.trainer.clip_norm ? 1 : 0);
        } else {
            ++s2;
            clip_ok = clip_ok && pre == post && clipped == 0;
        }
    }
    clip_ok = clip_ok && s1 == b.ref.trainer.stage1_steps && s2 == 2 * b.ref.trainer.stage2_steps;

    v.pass = frozen_ok && clip_ok;
    v.detail = fmt("%zu stage-1 checksums identical: %s; clip bound respected in stage 1 and "
                   "never applied across %zu stage-2 norm lines: %s",
                   freeze_lines, frozen_ok ? "yes" : "NO", s2, clip_ok ? "yes" : "NO");
    return v;
}

Verdict criterion8(const Bench& b) {
    Verdict v = make_verdict(8, "bit-identical artifacts across executions");
    const std::string first = b.run_dir(0, "two");
    const std::string repeat = kScratch + "/runs/two0_repeat";
    run_cmd("train --config \"" + kScratch + "/reference.json\" --data \"" + b.data_dir +
            "\" --out \"" + repeat + "\" --seed 0");
    run_cmd("eval --run \"" + repeat + "\" --out \"" + repeat + "\"");

    std::vector<std::string> same, diff;
    for (const char* name : {"checkpoint.json", "losses.log", "norms.log", "freeze.log", "metrics.json"})
        (slurp(first + "/" + name) == slurp(repeat + "/" + name) ? same : diff).push_back(name);
    v.pass = diff.empty();
    std::string diffs;
    for (const std::string& d : diff) diffs += (diffs.empty() ? "" : ", ") + d;
    v.detail = v.pass ? fmt("checkpoint, loss/norm/freeze logs and metrics identical across two "
                            "independent executions (seed 0)")
                      : "differing artifacts: " + diffs;
    return v;
}

Verdict criterion9(const Bench& b) {
    Verdict v = make_verdict(9, "base-class preservation under joint training");
    v.gating = !g_smoke;

    // Reference arm: the point branch trained on base ground truth alone with
    // the same total step budget, via the same optimizer settings.
    const std::vector<SyntheticScene> train = make_dataset(
        b.ref.scene, b.ref.noise, b.ref.vocab, b.ref.trainer.mode, mix_seed(b.ref.scene_seed, 1),
        b.ref.train_scenes);
    const std::vector<SyntheticScene> eval_scenes = make_dataset(
        b.ref.scene, b.ref.noise, b.ref.vocab, b.ref.trainer.mode, mix_seed(b.ref.scene_seed, 2),
        b.ref.eval_scenes);
    const std::size_t budget = b.ref.trainer.stage1_steps + b.ref.trainer.stage2_steps;

    std::vector<double> gt_base;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Model model = Model::init(b.ref.model, mix_seed(seed, 0xA11C));
        const TextEmbeddings text = embed_text(b.ref.vocab, b.ref.embed_dim, b.ref.embed_seed);
        AdamWConfig oc;
        oc.lr = b.ref.trainer.point_lr;
        oc.weight_decay = b.ref.trainer.point_weight_decay;
        std::vector<Tensor> params = model.point_params(false);
        AdamW opt(params, oc);
        for (std::size_t s = 0; s < budget; ++s) {
            const SyntheticScene& scene = train[s % train.size()];
            const Tensor pts = point_input_tensor(scene, b.ref.scene);
            const Tensor logits = compute_logits(model.point_features(pts), model.w_p2t, text);
            SegLoss loss = point_branch_loss(logits, scene.gt_labels, b.ref.vocab, true);
            loss.total.backward();
            for (Tensor& p : params) p.ensure_grad();
            opt.step();
            opt.zero_grad();
        }
        const MetricsReport r = evaluate_model(model, text, eval_scenes, b.ref.vocab, b.ref.scene, 1);
        gt_base.push_back(r.miou_base);
        progress(fmt("gt-only arm seed %llu: base %.6f", static_cast<unsigned long long>(seed),
                     gt_base.back()));
    }

    const std::vector<double> joint(b.two_base.begin(), b.two_base.begin() + 3);
    const double joint_mean = mean_of(joint), gt_mean = mean_of(gt_base);
    v.pass = joint_mean >= gt_mean - 0.05;
    v.detail = fmt("joint base %.4f vs gt-only base %.4f over 3 seeds; drop %.1f pts (allowed ≤ 5)",
                   joint_mean, gt_mean, (gt_mean - joint_mean) * 100.0);
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--smoke") {
            g_smoke = true;
        } else {
            std::fprintf(stderr, "usage: acceptance [--smoke]\n");
            return 2;
        }
    }
    unsetenv("CROSSMODAL_SEED");

    std::filesystem::remove_all(kScratch);
    std::filesystem::create_directories(kScratch + "/runs");

    std::vector<Verdict> verdicts;
    auto record = [&](std::function<Verdict()> fn, int id, const char* title) {
        const double t0 = now_s();
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v.id = id;
            v.title = title;
            v.pass = false;
            v.detail = std::string("exception: ") + e.what();
        }
        v.detail += fmt("  [%.1fs]", now_s() - t0);
        verdicts.push_back(v);
        progress(fmt("criterion %d done", v.id));
    };

    record(criterion1, 1, "hIoU anchor values");
    record(criterion2, 2, "gradient correctness");
    record(criterion3, 3, "projection oracle and noise-free transfer");
    record(criterion4, 4, "loss contracts");

    bool bench_ok = true;
    Bench bench;
    try {
        bench = run_benchmark();
    } catch (const std::exception& e) {
        bench_ok = false;
        for (int id = 5; id <= 9; ++id) {
            Verdict v = make_verdict(id, "benchmark");
            v.detail = std::string("benchmark setup failed: ") + e.what();
            verdicts.push_back(v);
        }
    }
    if (bench_ok) {
        record([&] { return criterion5(bench); }, 5, "denoising margin");
        record([&] { return criterion6(bench); }, 6, "two-stage schedule");
        record([&] { return criterion7(bench); }, 7, "stage isolation");
        record([&] { return criterion8(bench); }, 8, "determinism");
        record([&] { return criterion9(bench); }, 9, "base preservation");
    }

    bool all = true;
    std::printf("%s\n", g_smoke ? "acceptance (smoke scale — margins informational)" : "acceptance");
    for (const Verdict& v : verdicts) {
        const char* tag = v.pass ? "PASS" : (v.gating ? "FAIL" : "info");
        if (v.gating) all = all && v.pass;
        std::printf("[%d] %-4s %s — %s\n", v.id, tag, v.title.c_str(), v.detail.c_str());
    }
    std::printf("%s\n", all ? "acceptance: all criteria hold" : "acceptance: FAILURES above");
    return all ? 0 : 1;
}
