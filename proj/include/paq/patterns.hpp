#pragma once

#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <vector>

#include "paq/tensor.hpp"

namespace paq {

namespace detail {
inline Tensor randn(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data()) v = dist(rng);
    return t;
}
}  // namespace detail

// The m shared base patterns, one per row.
struct PatternBank {
    Tensor patterns;  // m x d, learnable
    int m = 0, d = 0;

    static PatternBank init(int m, int d, std::mt19937_64& rng) {
        PatternBank b;
        b.m = m;
        b.d = d;
        b.patterns = detail::randn({m, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng, true);
        return b;
    }

    // Keeps every pattern row away from the zero vector after an update.
    void enforce_min_norm(double floor = 1e-8) {
        for (int i = 0; i < m; ++i) {
            double s = 0;
            for (int j = 0; j < d; ++j) s += patterns.at(i, j) * patterns.at(i, j);
            if (std::sqrt(s) < floor) patterns.at(i, 0) = floor;
        }
    }
};

// Row-stochastic n x m mixing matrix.
struct DynamicWeights {
    Tensor w;
};

// Per-position linear map + 3x3 rate-2 dilated stencil standing in for the
// 1x1 and dilated convolutions of the weight-generator front end.
struct ScaleTransform {
    Tensor lin;      // d x d
    Tensor bias;     // 1 x d, zero-initialized
    Tensor stencil;  // 9 x d, identity-initialized (center tap 1)

    static ScaleTransform init(int d, std::mt19937_64& rng) {
        ScaleTransform t;
        t.lin = detail::randn({d, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng, true);
        t.bias = Tensor::zeros({1, d}, true);
        t.stencil = Tensor::zeros({9, d}, true);
        for (int k = 0; k < d; ++k) t.stencil.at(4, k) = 1.0;  // center tap
        return t;
    }
};

// Channel/spatial sigmoid gates used during top-down fusion.
struct FusionGate {
    Tensor channel_logits;  // 1 x d
    Tensor spatial_proj;    // d x 1
    Tensor spatial_bias;    // 1 x 1

    static FusionGate init(int d) {
        FusionGate g;
        g.channel_logits = Tensor::zeros({1, d}, true);
        g.spatial_proj = Tensor::zeros({d, 1}, true);
        g.spatial_bias = Tensor::zeros({1, 1}, true);
        return g;
    }
};

struct WeightGenerator {
    int n = 0, m = 0, d = 0, hidden = 0;
    std::vector<ScaleTransform> transforms;  // one per input scale
    std::vector<FusionGate> gates;           // one per fusion step
    Tensor w1, b1;                           // d -> hidden
    Tensor ln_gain, ln_bias;                 // 1 x hidden
    Tensor w2, b2;                           // hidden -> n*m, zero-initialized

    static WeightGenerator init(int n, int m, int d, int num_scales, std::mt19937_64& rng,
                                int hidden = 0) {
        if (num_scales < 2) throw std::invalid_argument("WeightGenerator: need >= 2 scales");
        WeightGenerator g;
        g.n = n;
        g.m = m;
        g.d = d;
        g.hidden = hidden > 0 ? hidden : d;
        for (int i = 0; i < num_scales; ++i) g.transforms.push_back(ScaleTransform::init(d, rng));
        for (int i = 0; i + 1 < num_scales; ++i) g.gates.push_back(FusionGate::init(d));
        g.w1 = detail::randn({d, g.hidden}, 1.0 / std::sqrt(static_cast<double>(d)), rng, true);
        g.b1 = Tensor::zeros({1, g.hidden}, true);
        g.ln_gain = Tensor::from({1, g.hidden}, std::vector<double>(static_cast<size_t>(g.hidden), 1.0), true);
        g.ln_bias = Tensor::zeros({1, g.hidden}, true);
        // zero-initialized final layer: training starts from uniform weights
        g.w2 = Tensor::zeros({g.hidden, n * m}, true);
        g.b2 = Tensor::zeros({1, n * m}, true);
        return g;
    }

    std::vector<Tensor> params() {
        std::vector<Tensor> p;
        for (auto& t : transforms) {
            p.push_back(t.lin);
            p.push_back(t.bias);
            p.push_back(t.stencil);
        }
        for (auto& g : gates) {
            p.push_back(g.channel_logits);
            p.push_back(g.spatial_proj);
            p.push_back(g.spatial_bias);
        }
        p.push_back(w1);
        p.push_back(b1);
        p.push_back(ln_gain);
        p.push_back(ln_bias);
        p.push_back(w2);
        p.push_back(b2);
        return p;
    }
};

// Per-position linear map, then (when the map is large enough for the rate-2
// stencil) dilated local aggregation, then ReLU.
inline Tensor scale_transform(const ScaleTransform& t, const Tensor& feat) {
    if (feat.rank() != 3) throw std::invalid_argument("scale_transform: rank-3 feature map");
    const int h = feat.extent(0), w = feat.extent(1), d = feat.extent(2);
    if (d != t.lin.extent(0)) throw std::invalid_argument("scale_transform: channel mismatch");
    Tensor flat = reshape(feat, {h * w, d});
    Tensor lin = add_rowvec(matmul(flat, t.lin), t.bias);
    Tensor cube = reshape(lin, {h, w, d});
    if (h >= 5 && w >= 5) cube = dilated_stencil(cube, t.stencil);
    return relu(cube);
}

// Upsample the coarse map, add to the fine one, gate per channel and per
// position, and keep a skip connection of the fine input.
inline Tensor top_down_fuse(const FusionGate& g, const Tensor& high, const Tensor& low) {
    if (high.rank() != 3 || low.rank() != 3)
        throw std::invalid_argument("top_down_fuse: rank-3 maps");
    if (low.extent(0) != 2 * high.extent(0) || low.extent(1) != 2 * high.extent(1) ||
        low.extent(2) != high.extent(2))
        throw std::invalid_argument("top_down_fuse: low must be exactly twice the extent of high");
    const int h = low.extent(0), w = low.extent(1), d = low.extent(2);
    Tensor fused = add(nearest_upsample2x(high), low);
    Tensor flat = reshape(fused, {h * w, d});
    Tensor channel_gate = sigmoid(g.channel_logits);
    Tensor spatial_logits = matmul(flat, g.spatial_proj);  // (h*w) x 1
    Tensor spatial_gate = sigmoid(add_scalar_t(spatial_logits, g.spatial_bias));
    Tensor gated = mul_colvec(mul_rowvec(flat, channel_gate), spatial_gate);
    return add(reshape(gated, {h, w, d}), low);
}

// Full Eq.-5 style pipeline: transform each scale, fuse top-down, pool, MLP
// with layer norm, reshape, row softmax.
inline DynamicWeights generate_weights(const WeightGenerator& gen,
                                       const std::vector<Tensor>& scales) {
    if (scales.size() < 2) throw std::invalid_argument("generate_weights: need >= 2 scales");
    if (scales.size() != gen.transforms.size())
        throw std::invalid_argument("generate_weights: scale count mismatch");
    for (const Tensor& s : scales)
        if (s.rank() != 3 || s.extent(2) != gen.d)
            throw std::invalid_argument("generate_weights: embedding width mismatch");
    Tensor fused = scale_transform(gen.transforms[0], scales[0]);
    for (size_t i = 1; i < scales.size(); ++i)
        fused = top_down_fuse(gen.gates[i - 1], fused, scale_transform(gen.transforms[i], scales[i]));
    const int h = fused.extent(0), w = fused.extent(1);
    Tensor pooled = mean_rows(reshape(fused, {h * w, gen.d}));  // 1 x d
    Tensor hidden = relu(layernorm_rows(add_rowvec(matmul(pooled, gen.w1), gen.b1),
                                        gen.ln_gain, gen.ln_bias));
    Tensor out = add_rowvec(matmul(hidden, gen.w2), gen.b2);
    return {softmax_rows(reshape(out, {gen.n, gen.m}))};
}

inline Tensor compose_queries(const PatternBank& bank, const DynamicWeights& weights) {
    if (weights.w.extent(1) != bank.m)
        throw std::invalid_argument("compose_queries: pattern count mismatch");
    return matmul(weights.w, bank.patterns);
}

// Mean absolute pairwise cosine similarity of the normalized patterns.
inline Tensor diversity_loss(const PatternBank& bank) {
    if (bank.m < 2) {
        std::fprintf(stderr, "warning: diversity_loss with m < 2 is vacuous, returning 0\n");
        return Tensor::scalar(0.0);
    }
    Tensor normed = l2_normalize_rows(bank.patterns);
    Tensor gram = abs_t(matmul(normed, transpose(normed)));
    // diagonal entries are exactly 1; subtract them out
    Tensor total = add_const(sum_all(gram), -static_cast<double>(bank.m));
    return scale(total, 1.0 / (static_cast<double>(bank.m) * (bank.m - 1)));
}

}  // namespace paq
