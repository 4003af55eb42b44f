// Command-line front end: training runs, sweeps, comparisons, and the small
// analysis utilities (assignment demo, Gini, weight dumps, matcher oracle).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "paq/harness.hpp"

namespace {

using paq::json;
namespace fs = std::filesystem;

struct GlobalOpts {
    std::string config_path;
    std::string out_dir = "runs";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
};

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return json::parse(in);
}

json load_config_or_default(const GlobalOpts& g) {
    json cfg = g.config_path.empty() ? json::object() : load_json_file(g.config_path);
    if (g.seed_set) cfg["seed"] = g.seed;
    return cfg;
}

int cmd_train(const GlobalOpts& g) {
    paq::TrainConfig cfg = paq::config_from_json(load_config_or_default(g));
    {
        std::mt19937_64 probe(cfg.seed);
        auto model = paq::DetectorModel::init(cfg.model, probe);
        std::fprintf(stderr, "model parameters: %lld\n", model.param_count());
    }
    paq::RunRecord rec = paq::train(cfg);
    const fs::path dir = fs::path(g.out_dir) / ("train_seed-" + std::to_string(cfg.seed));
    paq::write_run_dir(dir, rec, "train");
    std::vector<std::pair<std::string, std::vector<double>>> series(2);
    series[0].first = "mAP";
    series[1].first = "Gini";
    for (const auto& row : rec.rows) {
        series[0].second.push_back(row.map);
        series[1].second.push_back(row.gini_coeff);
    }
    paq::write_file(dir / "curves.svg", paq::svg_line_chart(series, "validation mAP / Gini"));
    std::printf("run dir: %s\n", dir.string().c_str());
    std::printf("final mAP %.4f, final Gini %.4f%s\n", rec.rows.empty() ? 0.0 : rec.rows.back().map,
                rec.final_gini, rec.diverged ? " (diverged)" : "");
    return rec.diverged ? 2 : 0;
}

int cmd_sweep(const GlobalOpts& g, bool resume) {
    if (g.config_path.empty()) throw std::runtime_error("sweep requires --config <spec.json>");
    paq::ExperimentSpec spec = paq::ExperimentSpec::from_json(load_json_file(g.config_path));
    std::fprintf(stderr, "sweep expansion: %zu points\n", spec.num_points());
    auto records = paq::run_experiment(spec, g.out_dir, g.threads, resume);
    int failures = 0;
    for (const auto& r : records)
        if (r.diverged) ++failures;
    std::printf("completed %zu points, %d diverged\n", records.size(), failures);
    return failures == 0 ? 0 : 2;
}

int cmd_compare(const GlobalOpts& g, const std::vector<std::string>& dirs,
                const std::string& baseline) {
    std::vector<fs::path> run_dirs(dirs.begin(), dirs.end());
    paq::CompareReport report = paq::compare_runs(run_dirs, baseline);
    paq::write_compare_report(report, g.out_dir);
    std::printf("baseline: %s\n", report.baseline_label.c_str());
    std::printf("%-32s %5s %10s %10s %10s %10s\n", "label", "runs", "mean_map", "mean_gini",
                "d_map", "d_gini");
    for (const auto& r : report.rows)
        std::printf("%-32s %5d %10.4f %10.4f %+10.4f %+10.4f\n", r.label.c_str(), r.runs,
                    r.mean_map, r.mean_gini, r.delta_map, r.delta_gini);
    return 0;
}

int cmd_assign_demo(const GlobalOpts& g) {
    if (g.config_path.empty()) throw std::runtime_error("assign-demo requires --config <scene.json>");
    json j = load_json_file(g.config_path);
    std::vector<paq::Box> pred_boxes, gt_boxes;
    std::vector<double> confidences;
    for (const auto& p : j.at("predictions")) {
        auto b = p.at("box");
        pred_boxes.push_back({b[0], b[1], b[2], b[3]});
        confidences.push_back(p.at("confidence").get<double>());
    }
    for (const auto& b : j.at("ground_truths"))
        gt_boxes.push_back({b[0], b[1], b[2], b[3]});
    const double gamma = j.value("gamma", 0.4);
    const int k = j.value("k", 4), l = j.value("l", 1);

    paq::QualityScoreTable table = paq::quality_score(pred_boxes, confidences, gt_boxes, gamma);
    std::printf("quality scores (rows = predictions, cols = ground truths):\n");
    for (int i = 0; i < table.n_pred; ++i) {
        for (int jj = 0; jj < table.n_gt; ++jj) std::printf("%8.4f", table.at(i, jj));
        std::printf("\n");
    }
    auto ks = paq::adaptive_k(table, k, l);
    auto result = paq::select_positives(table, ks);
    for (int jj = 0; jj < table.n_gt; ++jj) {
        std::printf("gt %d: k_j=%d positives:", jj, ks[static_cast<size_t>(jj)]);
        for (size_t p = 0; p < result.positives[static_cast<size_t>(jj)].size(); ++p)
            std::printf(" %d(%.4f)", result.positives[static_cast<size_t>(jj)][p],
                        result.scores[static_cast<size_t>(jj)][p]);
        std::printf("\n");
    }
    return 0;
}

int cmd_gini(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("cannot open " + csv_path);
    std::vector<double> counts;
    std::string line;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            if (cell.empty()) continue;
            try {
                counts.push_back(std::stod(cell));
            } catch (const std::exception&) {
                // header or label cell
            }
        }
    }
    std::printf("%.6f\n", paq::gini(counts));
    return 0;
}

int cmd_dump_weights(const GlobalOpts& g) {
    paq::TrainConfig cfg = paq::config_from_json(load_config_or_default(g));
    if (cfg.model.query_mode != paq::QueryMode::kDynamic)
        throw std::runtime_error("dump-weights requires query_mode=dynamic");
    std::fprintf(stderr, "training %d epochs before dumping weights...\n", cfg.epochs);
    paq::DetectorModel model;
    paq::train(cfg, &model);
    fs::path dir = fs::path(g.out_dir) / "weights";
    fs::create_directories(dir);
    std::vector<double> column_mass(static_cast<size_t>(cfg.model.m), 0.0);
    std::string agg = "pattern,mass\n";
    for (int s = 0; s < cfg.val_scenes; ++s) {
        paq::Scene scene = paq::render_scene(paq::scene_seed(cfg.seed, true, s), cfg.scene);
        paq::DecodeResult decoded = paq::decode(model, scene);
        std::string csv;
        for (int i = 0; i < cfg.model.n; ++i) {
            for (int jj = 0; jj < cfg.model.m; ++jj) {
                csv += paq::fmt(decoded.dyn_weights.at(i, jj));
                csv += jj + 1 < cfg.model.m ? ',' : '\n';
                column_mass[static_cast<size_t>(jj)] += decoded.dyn_weights.at(i, jj);
            }
        }
        paq::write_file(dir / ("scene_" + std::to_string(s) + ".csv"), csv);
    }
    for (int jj = 0; jj < cfg.model.m; ++jj)
        agg += std::to_string(jj) + ',' + paq::fmt(column_mass[static_cast<size_t>(jj)]) + '\n';
    paq::write_file(dir / "pattern_mass.csv", agg);
    paq::write_file(dir / "pattern_mass.svg",
                    paq::svg_bar_chart(column_mass, "pattern activation mass"));
    std::printf("weights written to %s\n", dir.string().c_str());
    return 0;
}

int cmd_oracle_check(std::uint64_t seed, int instances) {
    std::mt19937_64 rng(seed ? seed : 7);
    std::uniform_int_distribution<int> pred_dist(1, 10), gt_extra(0, 6);
    std::uniform_real_distribution<double> cost_dist(-2.0, 5.0);
    int pass = 0, fail = 0;
    for (int t = 0; t < instances; ++t) {
        const int np = pred_dist(rng);
        const int ng = std::min(np, 1 + gt_extra(rng));
        paq::CostMatrix c;
        c.n_pred = np;
        c.n_gt = ng;
        c.cost.resize(static_cast<size_t>(np) * ng);
        for (double& v : c.cost) v = cost_dist(rng);
        auto h = paq::hungarian(c);
        auto b = paq::brute_force_match(c);
        if (std::abs(h.total_cost - b.total_cost) <= 1e-9)
            ++pass;
        else
            ++fail;
    }
    std::printf("oracle-check: %d pass, %d fail of %d instances\n", pass, fail, instances);
    return fail == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pattern-based dynamic queries and quality-aware assignment, desk scale"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "JSON config / spec path");
    app.add_option("--out-dir", g.out_dir, "output directory");
    app.add_option("--threads", g.threads, "worker threads for sweeps");
    auto* seed_opt = app.add_option("--seed", g.seed, "seed override");

    auto* train = app.add_subcommand("train", "train one configuration");
    bool resume = false;
    auto* sweep = app.add_subcommand("sweep", "run an experiment spec");
    sweep->add_flag("--resume", resume, "skip points with an existing summary");
    auto* compare = app.add_subcommand("compare", "compare run directories against a baseline");
    std::vector<std::string> cmp_dirs;
    std::string cmp_baseline;
    compare->add_option("dirs", cmp_dirs, "run directories")->required();
    compare->add_option("--baseline", cmp_baseline, "baseline run directory")->required();
    auto* assign_demo = app.add_subcommand("assign-demo", "print quality-aware assignment for a scene");
    auto* gini_cmd = app.add_subcommand("gini", "Gini coefficient of a CSV of counts");
    std::string gini_csv;
    gini_cmd->add_option("csv", gini_csv, "CSV file of counts")->required();
    auto* dump = app.add_subcommand("dump-weights", "train, then dump per-scene mixing matrices");
    auto* oracle = app.add_subcommand("oracle-check", "hungarian vs brute-force sweep");
    int oracle_instances = 1000;
    oracle->add_option("--instances", oracle_instances, "number of random instances");

    CLI11_PARSE(app, argc, argv);
    g.seed_set = seed_opt->count() > 0;

    try {
        if (train->parsed()) return cmd_train(g);
        if (sweep->parsed()) return cmd_sweep(g, resume);
        if (compare->parsed()) return cmd_compare(g, cmp_dirs, cmp_baseline);
        if (assign_demo->parsed()) return cmd_assign_demo(g);
        if (gini_cmd->parsed()) return cmd_gini(gini_csv);
        if (dump->parsed()) return cmd_dump_weights(g);
        if (oracle->parsed()) return cmd_oracle_check(g.seed, oracle_instances);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "{\"error\": \"%s\"}\n", e.what());
        return 1;
    }
    return 0;
}
