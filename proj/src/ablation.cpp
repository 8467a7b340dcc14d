#include "crossmodal/ablation.hpp"

#include <cmath>

#include "crossmodal/io.hpp"
#include "crossmodal/trainer.hpp"

namespace crossmodal {

namespace {

RunConfig with_switches(const RunConfig& base, bool one_stage, bool novel_only, bool feature,
                        bool vpm) {
    RunConfig cfg = base;
    if (one_stage) {
        cfg.trainer.stage2_steps = base.trainer.stage1_steps + base.trainer.stage2_steps;
        cfg.trainer.stage1_steps = 0;
    }
    cfg.transfer.logit_distill = true;
    cfg.transfer.novel_only = novel_only;
    cfg.transfer.feature_distill = feature;
    cfg.transfer.vpm = vpm;
    cfg.transfer.use_vpm_filter = base.transfer.use_vpm_filter && vpm;
    return cfg;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

std::vector<AblationVariant> ablation_variants(const RunConfig& base) {
    return {
        {"one_stage_logit", with_switches(base, true, false, false, false)},
        {"one_stage_full", with_switches(base, true, true, true, true)},
        {"two_stage_logit", with_switches(base, false, false, false, false)},
        {"two_stage_novel_only", with_switches(base, false, true, false, false)},
        {"two_stage_feature", with_switches(base, false, true, true, false)},
        {"two_stage_full", with_switches(base, false, true, true, true)},
    };
}

std::vector<AblationRow> run_ablation(const RunConfig& base,
                                      const std::vector<SyntheticScene>& train,
                                      const std::vector<SyntheticScene>& eval_scenes,
                                      const std::vector<std::uint64_t>& seeds) {
    std::vector<AblationRow> rows;
    for (const AblationVariant& variant : ablation_variants(base)) {
        AblationRow row;
        row.name = variant.name;
        std::vector<double> bases, novels, hious;
        for (std::uint64_t seed : seeds) {
            TrainOutputs trained = train_model(variant.cfg, train, seed, "");
            MetricsReport report = evaluate_model(trained.model, trained.text, eval_scenes,
                                                  variant.cfg.vocab, variant.cfg.scene,
                                                  variant.cfg.workers);
            bases.push_back(report.miou_base);
            novels.push_back(report.miou_novel);
            hious.push_back(report.hiou);
            row.per_seed.push_back(std::move(report));
        }
        row.mean_base = mean_of(bases);
        row.mean_novel = mean_of(novels);
        row.mean_hiou = mean_of(hious);
        row.std_base = std_of(bases);
        row.std_novel = std_of(novels);
        row.std_hiou = std_of(hious);
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::ordered_json ablation_report_json(const std::vector<AblationRow>& rows,
                                            const RunConfig& base,
                                            const std::vector<std::uint64_t>& seeds) {
    nlohmann::ordered_json j;
    j["format"] = kAblationFormat;
    j["config_hash"] = base.hash();
    j["seeds"] = seeds;
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    for (const AblationRow& row : rows) {
        nlohmann::ordered_json r;
        r["variant"] = row.name;
        r["mean"] = {{"miou_base", round6(row.mean_base)},
                     {"miou_novel", round6(row.mean_novel)},
                     {"hiou", round6(row.mean_hiou)}};
        r["std"] = {{"miou_base", round6(row.std_base)},
                    {"miou_novel", round6(row.std_novel)},
                    {"hiou", round6(row.std_hiou)}};
        nlohmann::ordered_json runs = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < row.per_seed.size(); ++i) {
            nlohmann::ordered_json run = metrics_report_json(row.per_seed[i]);
            run["seed"] = seeds[i];
            runs.push_back(std::move(run));
        }
        r["runs"] = std::move(runs);
        table.push_back(std::move(r));
    }
    j["variants"] = std::move(table);
    return j;
}

}  // namespace crossmodal
