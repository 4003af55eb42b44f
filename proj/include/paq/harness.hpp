#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "paq/model.hpp"

namespace paq {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---- config (de)serialization ----

inline std::string to_string(QueryMode m) {
    return m == QueryMode::kDynamic ? "dynamic" : "static";
}
inline std::string to_string(AssignMode m) {
    switch (m) {
        case AssignMode::kOneToOne: return "one-to-one";
        case AssignMode::kFixedK: return "fixed-k";
        default: return "quality-aware";
    }
}
inline QueryMode query_mode_from(const std::string& s) {
    if (s == "dynamic") return QueryMode::kDynamic;
    if (s == "static") return QueryMode::kStatic;
    throw std::invalid_argument("unknown query_mode: " + s);
}
inline AssignMode assign_mode_from(const std::string& s) {
    if (s == "one-to-one") return AssignMode::kOneToOne;
    if (s == "fixed-k") return AssignMode::kFixedK;
    if (s == "quality-aware") return AssignMode::kQualityAware;
    throw std::invalid_argument("unknown assign_mode: " + s);
}

inline json config_to_json(const TrainConfig& c) {
    return json{{"query_mode", to_string(c.model.query_mode)},
                {"assign_mode", to_string(c.assign_mode)},
                {"n", c.model.n},
                {"m", c.model.m},
                {"d", c.model.d},
                {"layers", c.model.layers},
                {"classes", c.model.num_classes},
                {"ffn_hidden", c.model.ffn_hidden},
                {"gamma", c.gamma},
                {"k", c.k},
                {"l", c.l},
                {"beta", c.beta},
                {"lambda_cls", c.lambda.cls},
                {"lambda_l1", c.lambda.l1},
                {"lambda_giou", c.lambda.giou},
                {"varifocal_alpha", c.varifocal.alpha},
                {"varifocal_gamma", c.varifocal.gamma},
                {"background_weight", c.background_weight},
                {"lr", c.lr},
                {"momentum", c.momentum},
                {"clip_norm", c.clip_norm},
                {"epochs", c.epochs},
                {"train_scenes", c.train_scenes},
                {"val_scenes", c.val_scenes},
                {"seed", c.seed},
                {"max_objects", c.scene.max_objects},
                {"noise_sigma", c.scene.noise_sigma}};
}

inline TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    auto get = [&](const char* key, auto fallback) {
        using T = decltype(fallback);
        return j.contains(key) ? j.at(key).get<T>() : fallback;
    };
    c.model.query_mode = query_mode_from(get("query_mode", std::string("dynamic")));
    c.assign_mode = assign_mode_from(get("assign_mode", std::string("quality-aware")));
    c.model.n = get("n", 60);
    c.model.m = get("m", 10);
    c.model.d = get("d", 16);
    c.model.layers = get("layers", 2);
    c.model.num_classes = get("classes", 6);
    c.model.ffn_hidden = get("ffn_hidden", 32);
    c.gamma = get("gamma", 0.4);
    c.k = get("k", 4);
    c.l = get("l", 1);
    c.beta = get("beta", 0.2);
    c.lambda.cls = get("lambda_cls", 2.0);
    c.lambda.l1 = get("lambda_l1", 5.0);
    c.lambda.giou = get("lambda_giou", 2.0);
    c.varifocal.alpha = get("varifocal_alpha", 0.75);
    c.varifocal.gamma = get("varifocal_gamma", 2.0);
    c.background_weight = get("background_weight", 0.1);
    c.lr = get("lr", 0.05);
    c.momentum = get("momentum", 0.9);
    c.clip_norm = get("clip_norm", 1.0);
    c.epochs = get("epochs", 48);
    c.train_scenes = get("train_scenes", 200);
    c.val_scenes = get("val_scenes", 50);
    c.seed = get("seed", static_cast<std::uint64_t>(1));
    c.scene.max_objects = get("max_objects", 4);
    c.scene.noise_sigma = get("noise_sigma", 0.1);
    c.scene.d = c.model.d;
    c.scene.num_classes = c.model.num_classes;
    return c;
}

// ---- persistence ----

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

inline std::string epochs_csv(const RunRecord& r) {
    std::string out = "epoch,l_total,l_1m,l_aux,l_div,map,gini\n";
    for (const auto& row : r.rows) {
        out += std::to_string(row.epoch) + ',' + fmt(row.total) + ',' + fmt(row.one_to_many) +
               ',' + fmt(row.aux) + ',' + fmt(row.diversity) + ',' + fmt(row.map) + ',' +
               fmt(row.gini_coeff) + '\n';
    }
    return out;
}

inline json summary_json(const RunRecord& r, const std::string& label) {
    json pm = json::array();
    for (double v : r.pattern_mass) pm.push_back(v);
    return json{{"label", label},
                {"diverged", r.diverged},
                {"diagnostic", r.diagnostic},
                {"epochs_completed", r.rows.size()},
                {"best_map", r.best_map},
                {"final_map", r.rows.empty() ? 0.0 : r.rows.back().map},
                {"final_gini", r.final_gini},
                {"pattern_mass", pm},
                {"param_count", r.param_count},
                {"wall_seconds", r.wall_seconds},
                {"seed", r.cfg.seed}};
}

inline void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

inline void write_run_dir(const fs::path& dir, const RunRecord& r, const std::string& label) {
    fs::create_directories(dir);
    write_file(dir / "config.json", config_to_json(r.cfg).dump(2) + "\n");
    write_file(dir / "epochs.csv", epochs_csv(r));
    write_file(dir / "summary.json", summary_json(r, label).dump(2) + "\n");
}

// ---- SVG emission ----

inline std::string svg_line_chart(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                                  const std::string& title) {
    const int W = 640, H = 400, ml = 50, mr = 20, mt = 30, mb = 30;
    double lo = 1e300, hi = -1e300;
    size_t len = 0;
    for (const auto& [name, ys] : series) {
        len = std::max(len, ys.size());
        for (double y : ys) {
            lo = std::min(lo, y);
            hi = std::max(hi, y);
        }
    }
    if (len < 2 || hi <= lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    std::ostringstream s;
    s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    s << "<rect width='100%' height='100%' fill='white'/>\n";
    s << "<text x='" << W / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title
      << "</text>\n";
    s << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
      << "' stroke='black'/>\n";
    s << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
      << "' stroke='black'/>\n";
    int ci = 0;
    for (const auto& [name, ys] : series) {
        if (ys.empty()) continue;
        s << "<polyline fill='none' stroke='" << colors[ci % 6] << "' stroke-width='1.5' points='";
        for (size_t i = 0; i < ys.size(); ++i) {
            const double x = ml + (W - ml - mr) * (len > 1 ? static_cast<double>(i) / (len - 1) : 0.0);
            const double y = H - mb - (H - mt - mb) * (ys[i] - lo) / (hi - lo);
            s << fmt(x) << ',' << fmt(y) << ' ';
        }
        s << "'/>\n";
        s << "<text x='" << W - mr - 150 << "' y='" << mt + 16 * (ci + 1) << "' fill='"
          << colors[ci % 6] << "' font-size='12'>" << name << "</text>\n";
        ++ci;
    }
    s << "<text x='10' y='" << mt + 4 << "' font-size='10'>" << fmt(hi) << "</text>\n";
    s << "<text x='10' y='" << H - mb << "' font-size='10'>" << fmt(lo) << "</text>\n";
    s << "</svg>\n";
    return s.str();
}

inline std::string svg_bar_chart(const std::vector<double>& values, const std::string& title) {
    const int W = 640, H = 400, ml = 50, mr = 20, mt = 30, mb = 30;
    double hi = 1e-12;
    for (double v : values) hi = std::max(hi, v);
    std::ostringstream s;
    s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    s << "<rect width='100%' height='100%' fill='white'/>\n";
    s << "<text x='" << W / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title
      << "</text>\n";
    const double bw = static_cast<double>(W - ml - mr) / std::max<size_t>(values.size(), 1);
    for (size_t i = 0; i < values.size(); ++i) {
        const double h = (H - mt - mb) * values[i] / hi;
        s << "<rect x='" << fmt(ml + bw * i + 1) << "' y='" << fmt(H - mb - h) << "' width='"
          << fmt(std::max(bw - 2, 1.0)) << "' height='" << fmt(h) << "' fill='#1f77b4'/>\n";
    }
    s << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
      << "' stroke='black'/>\n";
    s << "</svg>\n";
    return s.str();
}

// ---- experiment orchestration ----

struct ExperimentSpec {
    std::string name;
    json base_config;                                   // TrainConfig fields
    std::vector<std::pair<std::string, json>> sweep;    // axis name -> value list
    std::vector<std::uint64_t> seeds;

    static ExperimentSpec from_json(const json& j) {
        ExperimentSpec s;
        s.name = j.value("name", "experiment");
        s.base_config = j.value("config", json::object());
        if (j.contains("sweep"))
            for (auto& [key, vals] : j.at("sweep").items()) s.sweep.emplace_back(key, vals);
        if (j.contains("seeds"))
            for (auto& v : j.at("seeds")) s.seeds.push_back(v.get<std::uint64_t>());
        if (s.seeds.empty()) s.seeds.push_back(s.base_config.value("seed", 1));
        return s;
    }

    size_t num_points() const {
        size_t n = 1;
        for (const auto& [key, vals] : sweep) n *= vals.size();
        return n * seeds.size();
    }
};

struct SweepPoint {
    std::string label;   // axis values, seed excluded
    std::string dirname; // label plus seed
    json config;
};

inline std::string value_token(const json& v) {
    std::string s = v.is_string() ? v.get<std::string>() : v.dump();
    for (char& c : s)
        if (c == '.' ) c = 'p';
    return s;
}

inline std::vector<SweepPoint> expand(const ExperimentSpec& spec) {
    std::vector<std::pair<std::string, json>> partial{{"", spec.base_config}};
    for (const auto& [key, vals] : spec.sweep) {
        std::vector<std::pair<std::string, json>> next;
        for (const auto& [label, cfg] : partial)
            for (const auto& v : vals) {
                json c = cfg;
                c[key] = v;
                next.emplace_back(label + (label.empty() ? "" : "_") + key + "-" + value_token(v), c);
            }
        partial = std::move(next);
    }
    std::vector<SweepPoint> points;
    for (const auto& [label, cfg] : partial)
        for (std::uint64_t seed : spec.seeds) {
            json c = cfg;
            c["seed"] = seed;
            SweepPoint p;
            p.label = label.empty() ? "default" : label;
            p.dirname = p.label + "_seed-" + std::to_string(seed);
            p.config = c;
            points.push_back(std::move(p));
        }
    return points;
}

// Executes every sweep point into out_dir/<spec.name>/<point>/. Points already
// holding a summary.json are skipped when resume is set. Aborted runs are
// still recorded with their diagnostic.
inline std::vector<RunRecord> run_experiment(const ExperimentSpec& spec, const fs::path& out_dir,
                                             int threads = 1, bool resume = false,
                                             bool verbose = true) {
    auto points = expand(spec);
    if (verbose)
        std::fprintf(stderr, "experiment %s: %zu points (%zu axes, %zu seeds)\n", spec.name.c_str(),
                     points.size(), spec.sweep.size(), spec.seeds.size());
    const fs::path root = out_dir / spec.name;
    std::vector<RunRecord> records(points.size());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= points.size()) break;
            const fs::path dir = root / points[i].dirname;
            if (resume && fs::exists(dir / "summary.json")) {
                if (verbose) std::fprintf(stderr, "skip %s (resume)\n", points[i].dirname.c_str());
                continue;
            }
            TrainConfig cfg = config_from_json(points[i].config);
            RunRecord rec = train(cfg);
            write_run_dir(dir, rec, points[i].label);
            if (verbose)
                std::fprintf(stderr, "done %s: final_map=%.4f final_gini=%.4f%s\n",
                             points[i].dirname.c_str(),
                             rec.rows.empty() ? 0.0 : rec.rows.back().map, rec.final_gini,
                             rec.diverged ? " (DIVERGED)" : "");
            records[i] = std::move(rec);
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return records;
}

// ---- comparison report ----

struct CompareRow {
    std::string label;
    int runs = 0;
    double mean_map = 0, sd_map = 0;
    double mean_gini = 0, sd_gini = 0;
    double delta_map = 0, delta_gini = 0;
};

struct CompareReport {
    std::string baseline_label;
    std::vector<CompareRow> rows;
    std::string csv;
};

inline json load_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    return json::parse(in);
}

inline CompareReport compare_runs(const std::vector<fs::path>& run_dirs,
                                  const fs::path& baseline_dir) {
    struct Agg {
        std::vector<double> maps, ginis;
    };
    std::map<std::string, Agg> groups;
    auto ingest = [&](const fs::path& dir) -> std::string {
        json s = load_json(dir / "summary.json");
        if (!s.contains("final_map") || !s.contains("final_gini"))
            throw std::invalid_argument("compare: " + dir.string() + " lacks the common metric columns");
        std::string label = s.value("label", dir.filename().string());
        groups[label].maps.push_back(s["final_map"].get<double>());
        groups[label].ginis.push_back(s["final_gini"].get<double>());
        return label;
    };
    const std::string base_label = ingest(baseline_dir);
    for (const auto& d : run_dirs)
        if (fs::canonical(d) != fs::canonical(baseline_dir)) ingest(d);

    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto sd = [&](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        const double m = mean(v);
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size() - 1));
    };

    CompareReport report;
    report.baseline_label = base_label;
    const double base_map = mean(groups.at(base_label).maps);
    const double base_gini = mean(groups.at(base_label).ginis);
    std::string csv = "label,runs,mean_map,sd_map,mean_gini,sd_gini,delta_map,delta_gini\n";
    for (const auto& [label, agg] : groups) {
        CompareRow r;
        r.label = label;
        r.runs = static_cast<int>(agg.maps.size());
        r.mean_map = mean(agg.maps);
        r.sd_map = sd(agg.maps);
        r.mean_gini = mean(agg.ginis);
        r.sd_gini = sd(agg.ginis);
        r.delta_map = r.mean_map - base_map;
        r.delta_gini = r.mean_gini - base_gini;
        report.rows.push_back(r);
        csv += label + ',' + std::to_string(r.runs) + ',' + fmt(r.mean_map) + ',' + fmt(r.sd_map) +
               ',' + fmt(r.mean_gini) + ',' + fmt(r.sd_gini) + ',' + fmt(r.delta_map) + ',' +
               fmt(r.delta_gini) + '\n';
    }
    report.csv = csv;
    return report;
}

inline void write_compare_report(const CompareReport& report, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    write_file(out_dir / "compare.csv", report.csv);
    std::vector<double> maps;
    for (const auto& r : report.rows) maps.push_back(r.mean_map);
    write_file(out_dir / "compare_map.svg", svg_bar_chart(maps, "mean final mAP per configuration"));
}

}  // namespace paq
