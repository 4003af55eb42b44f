#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "paq/geometry.hpp"
#include "paq/tensor.hpp"

namespace paq {

struct GtObject {
    Box box;
    int cls = 0;
};

// Prediction snapshot as plain values; matching itself is not differentiated.
struct PredValue {
    Box box;
    std::vector<double> probs;  // over C foreground classes + background
};

struct LambdaWeights {
    double cls = 2.0;
    double l1 = 5.0;
    double giou = 2.0;
};

struct CostMatrix {
    int n_pred = 0, n_gt = 0;
    std::vector<double> cost;       // n_pred x n_gt
    std::vector<double> cls_cost;   // component breakdown, same layout
    std::vector<double> l1_cost;
    std::vector<double> giou_cost;

    double at(int i, int j) const { return cost[static_cast<size_t>(i) * n_gt + j]; }
};

struct Matching {
    std::vector<std::pair<int, int>> pairs;  // (prediction, ground truth), sorted by prediction
    double total_cost = 0.0;
};

inline CostMatrix build_cost(const std::vector<PredValue>& preds,
                             const std::vector<GtObject>& gts, const LambdaWeights& lambda) {
    if (preds.empty()) throw std::invalid_argument("build_cost: no predictions");
    CostMatrix c;
    c.n_pred = static_cast<int>(preds.size());
    c.n_gt = static_cast<int>(gts.size());
    const size_t cells = static_cast<size_t>(c.n_pred) * c.n_gt;
    c.cost.resize(cells);
    c.cls_cost.resize(cells);
    c.l1_cost.resize(cells);
    c.giou_cost.resize(cells);
    for (int i = 0; i < c.n_pred; ++i) {
        double psum = 0;
        for (double p : preds[static_cast<size_t>(i)].probs) psum += p;
        if (std::abs(psum - 1.0) > 1e-6)
            throw std::invalid_argument("build_cost: class probabilities must sum to 1");
        for (int j = 0; j < c.n_gt; ++j) {
            const auto& gt = gts[static_cast<size_t>(j)];
            if (gt.cls < 0 || static_cast<size_t>(gt.cls) >= preds[static_cast<size_t>(i)].probs.size())
                throw std::invalid_argument("build_cost: class id out of range");
            const size_t p = static_cast<size_t>(i) * c.n_gt + j;
            c.cls_cost[p] = -preds[static_cast<size_t>(i)].probs[static_cast<size_t>(gt.cls)];
            c.l1_cost[p] = l1_box(preds[static_cast<size_t>(i)].box, gt.box);
            c.giou_cost[p] = 1.0 - giou(preds[static_cast<size_t>(i)].box, gt.box);
            c.cost[p] = lambda.cls * c.cls_cost[p] + lambda.l1 * c.l1_cost[p] +
                        lambda.giou * c.giou_cost[p];
        }
    }
    return c;
}

// Exact minimum-cost injective assignment covering every ground truth.
// Solved by suffix DP over ground-truth subsets, which is exact at this
// problem size (gt count <= 8 throughout the artifact) and makes the
// lexicographic tie-break on the pair list straightforward: walk predictions
// in order and match the smallest feasible ground truth that preserves the
// optimum.
inline Matching hungarian(const CostMatrix& c) {
    if (c.n_gt == 0) return {};
    if (c.n_pred < c.n_gt)
        throw std::invalid_argument("hungarian: fewer predictions than ground truths");
    if (c.n_gt > 12) throw std::invalid_argument("hungarian: too many ground truths (> 12)");
    const int n = c.n_pred, m = c.n_gt;
    const int full = (1 << m) - 1;
    const double inf = std::numeric_limits<double>::infinity();
    // suf[i][mask]: min cost covering `mask` using predictions i..n-1
    std::vector<std::vector<double>> suf(static_cast<size_t>(n) + 1,
                                         std::vector<double>(static_cast<size_t>(full) + 1, inf));
    suf[static_cast<size_t>(n)][0] = 0.0;
    for (int i = n - 1; i >= 0; --i) {
        for (int mask = 0; mask <= full; ++mask) {
            double best = suf[static_cast<size_t>(i) + 1][static_cast<size_t>(mask)];
            for (int j = 0; j < m; ++j) {
                if (!(mask >> j & 1)) continue;
                const double v = c.at(i, j) +
                                 suf[static_cast<size_t>(i) + 1][static_cast<size_t>(mask ^ (1 << j))];
                if (v < best) best = v;
            }
            suf[static_cast<size_t>(i)][static_cast<size_t>(mask)] = best;
        }
    }
    Matching result;
    result.total_cost = suf[0][static_cast<size_t>(full)];
    int mask = full;
    for (int i = 0; i < n && mask; ++i) {
        bool matched = false;
        for (int j = 0; j < m && !matched; ++j) {
            if (!(mask >> j & 1)) continue;
            if (c.at(i, j) + suf[static_cast<size_t>(i) + 1][static_cast<size_t>(mask ^ (1 << j))] ==
                suf[static_cast<size_t>(i)][static_cast<size_t>(mask)]) {
                result.pairs.emplace_back(i, j);
                mask ^= 1 << j;
                matched = true;
            }
        }
    }
    return result;
}

// Exhaustive enumeration of injections, identical tie-break; test oracle.
inline Matching brute_force_match(const CostMatrix& c) {
    if (c.n_gt == 0) return {};
    if (c.n_gt > 8) throw std::invalid_argument("brute_force_match: too many ground truths (> 8)");
    if (c.n_pred < c.n_gt)
        throw std::invalid_argument("brute_force_match: fewer predictions than ground truths");
    const int n = c.n_pred, m = c.n_gt;
    std::vector<int> assign(static_cast<size_t>(m), -1);
    std::vector<bool> used(static_cast<size_t>(n), false);
    Matching best;
    best.total_cost = std::numeric_limits<double>::infinity();
    bool have = false;

    auto as_pairs = [&](const std::vector<int>& a) {
        std::vector<std::pair<int, int>> ps;
        for (int j = 0; j < m; ++j) ps.emplace_back(a[static_cast<size_t>(j)], j);
        std::sort(ps.begin(), ps.end());
        return ps;
    };
    std::function<void(int, double)> rec = [&](int j, double acc) {
        if (j == m) {
            auto ps = as_pairs(assign);
            if (!have || acc < best.total_cost ||
                (acc == best.total_cost && ps < best.pairs)) {
                best.total_cost = acc;
                best.pairs = std::move(ps);
                have = true;
            }
            return;
        }
        for (int i = 0; i < n; ++i) {
            if (used[static_cast<size_t>(i)]) continue;
            used[static_cast<size_t>(i)] = true;
            assign[static_cast<size_t>(j)] = i;
            rec(j + 1, acc + c.at(i, j));
            used[static_cast<size_t>(i)] = false;
        }
    };
    rec(0, 0.0);
    return best;
}

// Eq-style one-to-one loss over the matched pairs, differentiable through the
// class-probability and box tensors. Unmatched predictions contribute a
// down-weighted background cross-entropy term (background = last class index).
inline Tensor one_to_one_loss(const Matching& matching, const Tensor& cls_probs,
                              const Tensor& boxes, const std::vector<GtObject>& gts,
                              const LambdaWeights& lambda, double background_weight = 0.1) {
    const int n = cls_probs.extent(0);
    const int bg = cls_probs.extent(1) - 1;
    std::vector<bool> matched(static_cast<size_t>(n), false);
    Tensor loss = Tensor::scalar(0.0);
    for (auto [i, j] : matching.pairs) {
        matched[static_cast<size_t>(i)] = true;
        const auto& gt = gts[static_cast<size_t>(j)];
        Tensor ce = scale(log_t(pick(cls_probs, i, gt.cls)), -1.0);
        loss = add(loss, scale(ce, lambda.cls));
        loss = add(loss, scale(l1_box_t(boxes, i, gt.box), lambda.l1));
        loss = add(loss, scale(giou_loss_t(boxes, i, gt.box), lambda.giou));
    }
    for (int i = 0; i < n; ++i) {
        if (matched[static_cast<size_t>(i)]) continue;
        Tensor ce = scale(log_t(pick(cls_probs, i, bg)), -1.0);
        loss = add(loss, scale(ce, lambda.cls * background_weight));
    }
    // normalize by the number of targets so the scale is stable across scenes
    return scale(loss, 1.0 / static_cast<double>(gts.empty() ? 1 : gts.size()));
}

}  // namespace paq
