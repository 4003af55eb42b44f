#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "paq/geometry.hpp"
#include "paq/matching.hpp"

namespace paq {

// Standard sorted-index Gini coefficient over nonnegative values.
inline double gini(std::vector<double> counts) {
    if (counts.empty()) throw std::invalid_argument("gini: empty input");
    double total = 0;
    for (double c : counts) {
        if (c < 0) throw std::invalid_argument("gini: negative count");
        total += c;
    }
    if (total == 0) throw std::invalid_argument("gini: all-zero input is undefined");
    std::sort(counts.begin(), counts.end());
    const double n = static_cast<double>(counts.size());
    double acc = 0;
    for (size_t i = 0; i < counts.size(); ++i)
        acc += (2.0 * (static_cast<double>(i) + 1) - n - 1) * counts[i];
    return acc / (n * total);
}

struct Detection {
    Box box;
    int cls = 0;
    double score = 0;
    int scene = 0;  // scene id, detections and gts are matched per scene
};

struct GroundTruth {
    Box box;
    int cls = 0;
    int scene = 0;
};

// All-point interpolated AP for one class at one IoU threshold.
// Detections are greedily matched in descending score order to the
// highest-IoU unmatched ground truth of the same scene.
inline double average_precision(std::vector<Detection> dets, const std::vector<GroundTruth>& gts,
                                double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
        throw std::invalid_argument("average_precision: threshold must be in (0,1)");
    if (gts.empty()) throw std::invalid_argument("average_precision: no ground truths");
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<bool> taken(gts.size(), false);
    std::vector<int> tp;
    tp.reserve(dets.size());
    for (const auto& d : dets) {
        int best = -1;
        double best_iou = iou_threshold;
        for (size_t j = 0; j < gts.size(); ++j) {
            if (taken[j] || gts[j].scene != d.scene) continue;
            const double v = iou(d.box, gts[j].box);
            if (v >= best_iou) {
                best_iou = v;
                best = static_cast<int>(j);
            }
        }
        if (best >= 0) {
            taken[static_cast<size_t>(best)] = true;
            tp.push_back(1);
        } else {
            tp.push_back(0);
        }
    }
    // precision-recall curve with all-point interpolation
    const double n_gt = static_cast<double>(gts.size());
    std::vector<double> precision, recall;
    int cum_tp = 0;
    for (size_t i = 0; i < tp.size(); ++i) {
        cum_tp += tp[i];
        precision.push_back(static_cast<double>(cum_tp) / static_cast<double>(i + 1));
        recall.push_back(static_cast<double>(cum_tp) / n_gt);
    }
    // make precision monotone non-increasing from the right
    for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
        precision[static_cast<size_t>(i)] =
            std::max(precision[static_cast<size_t>(i)], precision[static_cast<size_t>(i) + 1]);
    double ap = 0, prev_recall = 0;
    for (size_t i = 0; i < recall.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

// COCO-style mAP: average over classes present in the ground truth and over
// IoU thresholds 0.5 : 0.05 : 0.95.
inline double mean_average_precision(const std::vector<Detection>& dets,
                                     const std::vector<GroundTruth>& gts) {
    if (gts.empty()) throw std::invalid_argument("mean_average_precision: no ground truths");
    std::vector<int> classes;
    for (const auto& g : gts)
        if (std::find(classes.begin(), classes.end(), g.cls) == classes.end())
            classes.push_back(g.cls);
    std::sort(classes.begin(), classes.end());
    double total = 0;
    int terms = 0;
    for (int cls : classes) {
        std::vector<Detection> cd;
        std::vector<GroundTruth> cg;
        for (const auto& d : dets)
            if (d.cls == cls) cd.push_back(d);
        for (const auto& g : gts)
            if (g.cls == cls) cg.push_back(g);
        for (int t = 0; t < 10; ++t) {
            total += average_precision(cd, cg, 0.5 + 0.05 * t);
            ++terms;
        }
    }
    return total / static_cast<double>(terms);
}

// Per-query match counts and per-pattern activation mass over an eval pass.
struct ActivationCounts {
    std::vector<double> query_matches;  // length n, final-layer Hungarian match events
    std::vector<double> pattern_mass;   // length m, W^D column sums over confident detections
    long long total_matches = 0;

    void record_match(int query) {
        query_matches[static_cast<size_t>(query)] += 1.0;
        ++total_matches;
    }
    // Accumulates one query's mixing row for a detection passing the
    // confidence/IoU gate.
    void record_confident_detection(const std::vector<double>& weight_row) {
        for (size_t j = 0; j < weight_row.size(); ++j) pattern_mass[j] += weight_row[j];
    }
};

inline ActivationCounts make_activation_counts(int n_queries, int n_patterns) {
    ActivationCounts a;
    a.query_matches.assign(static_cast<size_t>(n_queries), 0.0);
    a.pattern_mass.assign(static_cast<size_t>(std::max(n_patterns, 0)), 0.0);
    return a;
}

}  // namespace paq
