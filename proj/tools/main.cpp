// crossmodal: open-vocabulary point segmentation workbench.
//   gen       synthesize a calibrated scene dataset
//   train     two-stage training on a generated dataset
//   eval      score a checkpoint on the eval split
//   baseline  naive 2D→3D label-projection baseline
//   ablate    schedule/loss variant study over shared seeds

#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>

#include "vendor/CLI11.hpp"

#include "crossmodal/ablation.hpp"
#include "crossmodal/config.hpp"
#include "crossmodal/error.hpp"
#include "crossmodal/io.hpp"
#include "crossmodal/kernels.hpp"
#include "crossmodal/trainer.hpp"

namespace {

using namespace crossmodal;

struct CommonArgs {
    std::string config_path;
    std::string data_dir;
    std::string out_dir;
    std::string run_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
};

std::string run_id(const std::string& config_hash, std::uint64_t seed, const std::string& sub) {
    std::string key = config_hash + ":" + std::to_string(seed) + ":" + sub;
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(key)));
    return std::string(buf);
}

void write_metrics_file(const std::string& path, const MetricsReport& report,
                        const std::string& subcommand, const RunConfig& cfg, std::uint64_t seed) {
    nlohmann::ordered_json j;
    j["format"] = kMetricsFormat;
    std::string hash = cfg.hash();
    j["run_id"] = run_id(hash, seed, subcommand);
    j["subcommand"] = subcommand;
    j["seed"] = seed;
    j["config_hash"] = hash;
    nlohmann::ordered_json body = metrics_report_json(report);
    for (auto& [key, value] : body.items()) j[key] = value;
    write_json_file(path, j);
}

RunConfig config_for(const CommonArgs& args) {
    if (args.config_path.empty()) throw ConfigError("a --config file is required");
    return load_run_config(args.config_path);
}

int resolved_workers(const CommonArgs& args, const RunConfig& cfg) {
    int w = args.workers.value_or(cfg.workers);
    if (w < 1) throw ConfigError("--workers must be at least 1");
    return w;
}

int cmd_gen(const CommonArgs& args) {
    RunConfig cfg = config_for(args);
    if (args.out_dir.empty()) throw ConfigError("gen: an --out directory is required");
    std::uint64_t seed = resolve_seed(args.seed, cfg.scene_seed);
    std::vector<SyntheticScene> train = make_dataset(cfg.scene, cfg.noise, cfg.vocab,
                                                     cfg.trainer.mode, mix_seed(seed, 1),
                                                     cfg.train_scenes);
    std::vector<SyntheticScene> eval_scenes = make_dataset(cfg.scene, cfg.noise, cfg.vocab,
                                                           cfg.trainer.mode, mix_seed(seed, 2),
                                                           cfg.eval_scenes);
    nlohmann::json manifest;
    manifest["config_hash"] = cfg.hash();
    manifest["seed"] = seed;
    save_dataset(args.out_dir, train, eval_scenes, manifest);
    std::printf("gen: wrote %zu train + %zu eval scenes to %s\n", train.size(),
                eval_scenes.size(), args.out_dir.c_str());
    return 0;
}

int cmd_train(const CommonArgs& args) {
    RunConfig cfg = config_for(args);
    if (args.data_dir.empty()) throw ConfigError("train: a --data directory is required");
    if (args.out_dir.empty()) throw ConfigError("train: an --out directory is required");
    std::filesystem::create_directories(args.out_dir);
    std::uint64_t seed = resolve_seed(args.seed, cfg.trainer.seed);
    std::vector<SyntheticScene> train = load_split(args.data_dir, "train");
    TrainOutputs out = train_model(cfg, train, seed, args.out_dir);
    save_checkpoint(args.out_dir + "/checkpoint.json", out.model, cfg.hash(), seed);
    nlohmann::json run;
    run["config"] = cfg.merged();
    run["config_hash"] = cfg.hash();
    run["seed"] = seed;
    run["data_dir"] = std::filesystem::absolute(args.data_dir).string();
    run["checkpoint"] = "checkpoint.json";
    write_json_file(args.out_dir + "/run.json", run);
    std::printf("train: checkpoint and logs written to %s\n", args.out_dir.c_str());
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    RunConfig cfg;
    std::string data_dir = args.data_dir;
    std::string checkpoint_path;
    std::uint64_t config_seed = 0;
    if (!args.run_dir.empty()) {
        nlohmann::json run = read_json_file(args.run_dir + "/run.json");
        cfg = parse_run_config(run.at("config"));
        if (data_dir.empty()) data_dir = run.at("data_dir").get<std::string>();
        checkpoint_path = args.run_dir + "/" + run.at("checkpoint").get<std::string>();
        config_seed = run.at("seed").get<std::uint64_t>();
    } else {
        cfg = config_for(args);
        config_seed = cfg.trainer.seed;
        if (args.data_dir.empty()) throw ConfigError("eval: --data is required without --run");
        checkpoint_path = args.out_dir.empty() ? "" : args.out_dir + "/checkpoint.json";
        if (checkpoint_path.empty() || !std::filesystem::exists(checkpoint_path))
            throw ConfigError("eval: no checkpoint found; pass --run or place checkpoint.json in --out");
    }
    if (data_dir.empty()) throw ConfigError("eval: no data directory known");
    std::uint64_t seed = resolve_seed(args.seed, config_seed);

    Model model = Model::init(cfg.model, seed);
    load_checkpoint(checkpoint_path, model, cfg.hash(), nullptr);
    TextEmbeddings text = embed_text(cfg.vocab, cfg.embed_dim, cfg.embed_seed);
    std::vector<SyntheticScene> eval_scenes = load_split(data_dir, "eval");
    MetricsReport report =
        evaluate_model(model, text, eval_scenes, cfg.vocab, cfg.scene, resolved_workers(args, cfg));
    std::string out_dir = args.out_dir.empty()
                              ? (args.run_dir.empty() ? std::string(".") : args.run_dir)
                              : args.out_dir;
    std::filesystem::create_directories(out_dir);
    write_metrics_file(out_dir + "/metrics.json", report, "eval", cfg, seed);
    std::printf("eval: miou_base=%.6f miou_novel=%.6f hiou=%.6f → %s/metrics.json\n",
                report.miou_base, report.miou_novel, report.hiou, out_dir.c_str());
    return 0;
}

int cmd_baseline(const CommonArgs& args) {
    RunConfig cfg = config_for(args);
    if (args.data_dir.empty()) throw ConfigError("baseline: a --data directory is required");
    std::string out_dir = args.out_dir.empty() ? "." : args.out_dir;
    std::filesystem::create_directories(out_dir);
    std::uint64_t seed = resolve_seed(args.seed, cfg.trainer.seed);
    std::vector<SyntheticScene> eval_scenes = load_split(args.data_dir, "eval");
    MetricsReport report =
        evaluate_transfer_baseline(eval_scenes, cfg.vocab, resolved_workers(args, cfg));
    write_metrics_file(out_dir + "/metrics.json", report, "baseline", cfg, seed);
    std::printf("baseline: miou_base=%.6f miou_novel=%.6f hiou=%.6f → %s/metrics.json\n",
                report.miou_base, report.miou_novel, report.hiou, out_dir.c_str());
    return 0;
}

int cmd_ablate(const CommonArgs& args) {
    RunConfig cfg = config_for(args);
    if (args.data_dir.empty()) throw ConfigError("ablate: a --data directory is required");
    std::string out_dir = args.out_dir.empty() ? "." : args.out_dir;
    std::filesystem::create_directories(out_dir);
    std::vector<std::uint64_t> seeds = cfg.ablation_seeds;
    if (args.seed.has_value()) seeds = {*args.seed};
    std::vector<SyntheticScene> train = load_split(args.data_dir, "train");
    std::vector<SyntheticScene> eval_scenes = load_split(args.data_dir, "eval");
    std::vector<AblationRow> rows = run_ablation(cfg, train, eval_scenes, seeds);
    write_json_file(out_dir + "/ablation.json", ablation_report_json(rows, cfg, seeds));
    for (const AblationRow& row : rows)
        std::printf("ablate: %-22s miou_base=%.6f miou_novel=%.6f\n", row.name.c_str(),
                    row.mean_base, row.mean_novel);
    std::printf("ablate: table written to %s/ablation.json\n", out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crossmodal: open-vocabulary point segmentation workbench"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    CommonArgs args;
    auto add_common = [&args](CLI::App* sub, bool with_run) {
        sub->add_option("--config", args.config_path, "JSON run configuration");
        sub->add_option("--data", args.data_dir, "dataset directory (from gen)");
        sub->add_option("--out", args.out_dir, "output directory");
        if (with_run) sub->add_option("--run", args.run_dir, "training run directory (from train)");
        sub->add_option("--seed", args.seed, "seed override (flag > CROSSMODAL_SEED > config)");
        sub->add_option("--workers", args.workers, "parallel evaluation workers");
    };
    CLI::App* gen = app.add_subcommand("gen", "synthesize a scene dataset");
    CLI::App* train = app.add_subcommand("train", "run two-stage training");
    CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the eval split");
    CLI::App* baseline = app.add_subcommand("baseline", "projection-transfer baseline");
    CLI::App* ablate = app.add_subcommand("ablate", "schedule/loss variant study");
    add_common(gen, false);
    add_common(train, false);
    add_common(eval_cmd, true);
    add_common(baseline, false);
    add_common(ablate, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the usage message
        return 1;
    }

    try {
        kern::active();  // fail fast on a bad CROSSMODAL_KERNELS setting
        if (gen->parsed()) return cmd_gen(args);
        if (train->parsed()) return cmd_train(args);
        if (eval_cmd->parsed()) return cmd_eval(args);
        if (baseline->parsed()) return cmd_baseline(args);
        if (ablate->parsed()) return cmd_ablate(args);
        std::fprintf(stderr, "error: no subcommand given\n");
        return 1;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
