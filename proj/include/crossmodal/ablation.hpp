// The six-variant optimization/loss study: one-stage vs two-stage schedules
// crossed with progressively enabled transfer losses, trained on shared seeds.

#pragma once

#include <string>
#include <vector>

#include "vendor/json.hpp"

#include "crossmodal/config.hpp"
#include "crossmodal/metrics.hpp"
#include "crossmodal/scenegen.hpp"

namespace crossmodal {

struct AblationVariant {
    std::string name;
    RunConfig cfg;  // same data/budget as the base config, switches adjusted
};

// Variant table, in report order:
//   one_stage_logit, one_stage_full, two_stage_logit, two_stage_novel_only,
//   two_stage_feature, two_stage_full.
// One-stage variants fold the whole step budget into the joint stage.
std::vector<AblationVariant> ablation_variants(const RunConfig& base);

struct AblationRow {
    std::string name;
    std::vector<MetricsReport> per_seed;
    double mean_base = 0.0, mean_novel = 0.0, mean_hiou = 0.0;
    double std_base = 0.0, std_novel = 0.0, std_hiou = 0.0;
};

// Trains every variant on every seed and evaluates on the eval split.
std::vector<AblationRow> run_ablation(const RunConfig& base,
                                      const std::vector<SyntheticScene>& train,
                                      const std::vector<SyntheticScene>& eval_scenes,
                                      const std::vector<std::uint64_t>& seeds);

nlohmann::ordered_json ablation_report_json(const std::vector<AblationRow>& rows,
                                            const RunConfig& base,
                                            const std::vector<std::uint64_t>& seeds);

}  // namespace crossmodal
