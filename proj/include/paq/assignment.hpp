#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "paq/geometry.hpp"
#include "paq/matching.hpp"
#include "paq/tensor.hpp"

namespace paq {

struct QualityScoreTable {
    int n_pred = 0, n_gt = 0;
    double gamma = 0.0;
    std::vector<double> s;  // n_pred x n_gt, s[i][j] = IoU(b_i, g_j) - gamma * conf_i

    double at(int i, int j) const { return s[static_cast<size_t>(i) * n_gt + j]; }
};

struct AssignmentResult {
    // per ground truth: adaptive positive count, selected prediction indices
    // (descending score, index tie-break), and their scores
    std::vector<int> k;
    std::vector<std::vector<int>> positives;
    std::vector<std::vector<double>> scores;
};

struct VarifocalParams {
    double alpha = 0.75;
    double gamma = 2.0;
};

inline QualityScoreTable quality_score(const std::vector<Box>& pred_boxes,
                                       const std::vector<double>& confidences,
                                       const std::vector<Box>& gt_boxes, double gamma) {
    if (gamma < 0) throw std::invalid_argument("quality_score: gamma must be >= 0");
    if (pred_boxes.size() != confidences.size())
        throw std::invalid_argument("quality_score: boxes/confidences length mismatch");
    QualityScoreTable t;
    t.n_pred = static_cast<int>(pred_boxes.size());
    t.n_gt = static_cast<int>(gt_boxes.size());
    t.gamma = gamma;
    t.s.resize(static_cast<size_t>(t.n_pred) * t.n_gt);
    for (int i = 0; i < t.n_pred; ++i) {
        const double c = confidences[static_cast<size_t>(i)];
        if (c < 0.0 || c > 1.0)
            throw std::invalid_argument("quality_score: confidence outside [0,1]");
        for (int j = 0; j < t.n_gt; ++j)
            t.s[static_cast<size_t>(i) * t.n_gt + j] =
                iou(pred_boxes[static_cast<size_t>(i)], gt_boxes[static_cast<size_t>(j)]) - gamma * c;
    }
    return t;
}

// Per-column adaptive positive count: ceil of the summed top-k scores,
// floored at l. top-k is capped at the number of predictions.
inline std::vector<int> adaptive_k(const QualityScoreTable& t, int k, int l) {
    if (l < 1) throw std::invalid_argument("adaptive_k: l must be >= 1");
    if (k < 1) throw std::invalid_argument("adaptive_k: k must be >= 1");
    const int kk = std::min(k, t.n_pred);
    std::vector<int> out(static_cast<size_t>(t.n_gt));
    std::vector<double> col(static_cast<size_t>(t.n_pred));
    for (int j = 0; j < t.n_gt; ++j) {
        for (int i = 0; i < t.n_pred; ++i) col[static_cast<size_t>(i)] = t.at(i, j);
        std::partial_sort(col.begin(), col.begin() + kk, col.end(), std::greater<>());
        const double sum = std::accumulate(col.begin(), col.begin() + kk, 0.0);
        out[static_cast<size_t>(j)] = std::max(static_cast<int>(std::ceil(sum)), l);
    }
    return out;
}

// Top-k_j predictions per ground truth; a prediction may serve several ground
// truths. Ties resolved toward the lower prediction index.
inline AssignmentResult select_positives(const QualityScoreTable& t, const std::vector<int>& k) {
    if (static_cast<int>(k.size()) != t.n_gt)
        throw std::invalid_argument("select_positives: k list length mismatch");
    AssignmentResult r;
    r.k = k;
    r.positives.resize(static_cast<size_t>(t.n_gt));
    r.scores.resize(static_cast<size_t>(t.n_gt));
    std::vector<int> order(static_cast<size_t>(t.n_pred));
    for (int j = 0; j < t.n_gt; ++j) {
        const int kj = std::min(k[static_cast<size_t>(j)], t.n_pred);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return t.at(a, j) > t.at(b, j); });
        for (int p = 0; p < kj; ++p) {
            r.positives[static_cast<size_t>(j)].push_back(order[static_cast<size_t>(p)]);
            r.scores[static_cast<size_t>(j)].push_back(t.at(order[static_cast<size_t>(p)], j));
        }
    }
    return r;
}

// One-to-many loss over the assigned (positive, ground-truth) pairs.
// The classification term is an IoU-aware varifocal form: each positive is
// weighted by its localization quality q = IoU(pred, gt), with gradient
// flowing through q so the objective matches its analytic derivative;
// negatives (predictions positive for no ground truth) get the focal-style
// term -alpha * p^gamma * log(1 - p) with p the total foreground confidence.
inline Tensor one_to_many_loss(const AssignmentResult& assignment, const Tensor& cls_probs,
                               const Tensor& boxes, const std::vector<GtObject>& gts,
                               const LambdaWeights& lambda,
                               const VarifocalParams& vf = {}) {
    const int n = cls_probs.extent(0);
    const int bg = cls_probs.extent(1) - 1;
    std::vector<bool> is_positive(static_cast<size_t>(n), false);
    Tensor loss = Tensor::scalar(0.0);
    for (size_t j = 0; j < assignment.positives.size(); ++j) {
        const auto& gt = gts[j];
        for (int i : assignment.positives[j]) {
            is_positive[static_cast<size_t>(i)] = true;
            Tensor q = iou_t(boxes, i, gt.box);
            Tensor p = pick(cls_probs, i, gt.cls);
            Tensor one_minus_p = sub(Tensor::scalar(1.0), p);
            // -q * (q log p + (1-q) log(1-p))
            Tensor cls = scale(mul(q, add(mul(q, log_t(p)),
                                          mul(sub(Tensor::scalar(1.0), q), log_t(one_minus_p)))),
                               -1.0);
            loss = add(loss, scale(cls, lambda.cls));
            loss = add(loss, scale(l1_box_t(boxes, i, gt.box), lambda.l1));
            loss = add(loss, scale(giou_loss_t(boxes, i, gt.box), lambda.giou));
        }
    }
    for (int i = 0; i < n; ++i) {
        if (is_positive[static_cast<size_t>(i)]) continue;
        // total foreground confidence
        Tensor p = sub(Tensor::scalar(1.0), pick(cls_probs, i, bg));
        Tensor focal = mul(pow_t(p, vf.gamma), log_t(sub(Tensor::scalar(1.0), p)));
        loss = add(loss, scale(focal, -vf.alpha * lambda.cls));
    }
    // normalize by the number of targets so the scale is stable across scenes
    return scale(loss, 1.0 / static_cast<double>(gts.empty() ? 1 : gts.size()));
}

}  // namespace paq
