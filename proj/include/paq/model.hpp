#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "paq/assignment.hpp"
#include "paq/matching.hpp"
#include "paq/metrics.hpp"
#include "paq/patterns.hpp"
#include "paq/tensor.hpp"

namespace paq {

// ---- synthetic world ----

struct SceneParams {
    int d = 16;
    int num_classes = 6;
    int max_objects = 4;  // scene contract allows up to 8
    double noise_sigma = 0.1;
};

struct Scene {
    std::vector<GtObject> objects;
    Tensor coarse;  // 4 x 4 x d
    Tensor fine;    // 8 x 8 x d
    std::uint64_t seed = 0;
};

namespace detail {

// Fixed per-class signature directions, independent of the scene seed so the
// rendering stays learnable across scenes.
inline std::vector<double> class_signature(int cls, int d) {
    std::mt19937_64 rng(0xC1A55ull * 2654435761ull + static_cast<std::uint64_t>(cls));
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(static_cast<size_t>(d));
    double norm = 0;
    for (double& x : v) {
        x = dist(rng);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

inline double overlap_fraction(const Box& b, double cx1, double cy1, double cx2, double cy2) {
    const double iw = std::min(b.x2(), cx2) - std::max(b.x1(), cx1);
    const double ih = std::min(b.y2(), cy2) - std::max(b.y1(), cy1);
    if (iw <= 0 || ih <= 0) return 0;
    return (iw * ih) / ((cx2 - cx1) * (cy2 - cy1));
}

inline Tensor render_map(const std::vector<GtObject>& objects, int g, const SceneParams& p,
                         std::mt19937_64& rng) {
    Tensor feat = Tensor::zeros({g, g, p.d});
    for (const auto& obj : objects) {
        const auto sig = class_signature(obj.cls, p.d);
        for (int y = 0; y < g; ++y)
            for (int x = 0; x < g; ++x) {
                const double w = overlap_fraction(obj.box, static_cast<double>(x) / g,
                                                  static_cast<double>(y) / g,
                                                  static_cast<double>(x + 1) / g,
                                                  static_cast<double>(y + 1) / g);
                if (w <= 0) continue;
                for (int k = 0; k < p.d; ++k)
                    feat.data()[(static_cast<size_t>(y) * g + x) * p.d + k] += w * sig[static_cast<size_t>(k)];
            }
    }
    std::normal_distribution<double> noise(0.0, p.noise_sigma);
    if (p.noise_sigma > 0)
        for (double& v : feat.data()) v += noise(rng);
    return feat;
}

}  // namespace detail

inline Scene render_scene(std::uint64_t seed, const SceneParams& params = {}) {
    if (params.max_objects < 1 || params.max_objects > 8)
        throw std::invalid_argument("render_scene: max_objects must be in [1,8]");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> count_dist(1, params.max_objects);
    std::uniform_int_distribution<int> cls_dist(0, params.num_classes - 1);
    std::uniform_real_distribution<double> center_dist(0.15, 0.85);
    std::uniform_real_distribution<double> extent_dist(0.1, 0.35);

    int want = count_dist(rng);
    Scene scene;
    scene.seed = seed;
    while (true) {
        scene.objects.clear();
        bool ok = true;
        for (int i = 0; i < want; ++i) {
            bool placed = false;
            for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
                Box b{center_dist(rng), center_dist(rng), extent_dist(rng), extent_dist(rng)};
                bool clear = true;
                for (const auto& o : scene.objects) {
                    const double dx = b.cx - o.box.cx, dy = b.cy - o.box.cy;
                    if (std::sqrt(dx * dx + dy * dy) < 0.1) {
                        clear = false;
                        break;
                    }
                }
                if (clear) {
                    scene.objects.push_back({b, cls_dist(rng)});
                    placed = true;
                }
            }
            if (!placed) {
                ok = false;
                break;
            }
        }
        if (ok) break;
        std::fprintf(stderr, "warning: scene %llu: placement failed, reducing object count to %d\n",
                     static_cast<unsigned long long>(seed), want - 1);
        --want;
    }
    scene.coarse = detail::render_map(scene.objects, 4, params, rng);
    scene.fine = detail::render_map(scene.objects, 8, params, rng);
    return scene;
}

// ---- detector ----

enum class QueryMode { kStatic, kDynamic };
enum class AssignMode { kOneToOne, kFixedK, kQualityAware };

struct ModelConfig {
    int n = 60;       // queries
    int m = 10;       // patterns
    int d = 16;       // embedding width
    int layers = 2;   // decoder depth
    int num_classes = 6;
    int ffn_hidden = 32;
    QueryMode query_mode = QueryMode::kDynamic;
};

struct DecoderLayer {
    Tensor sa_q, sa_k, sa_v;
    Tensor ln1_gain, ln1_bias;
    Tensor ca_q, ca_k, ca_v;
    Tensor ln2_gain, ln2_bias;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor ln3_gain, ln3_bias;

    static DecoderLayer init(int d, int hidden, std::mt19937_64& rng) {
        const double s = 1.0 / std::sqrt(static_cast<double>(d));
        auto ones = [&](int c) {
            return Tensor::from({1, c}, std::vector<double>(static_cast<size_t>(c), 1.0), true);
        };
        DecoderLayer l;
        l.sa_q = detail::randn({d, d}, s, rng, true);
        l.sa_k = detail::randn({d, d}, s, rng, true);
        l.sa_v = detail::randn({d, d}, s, rng, true);
        l.ln1_gain = ones(d);
        l.ln1_bias = Tensor::zeros({1, d}, true);
        // Identity q/k projections keep the anchored position codes aligned at
        // the start, so cross-attention begins localized instead of uniform.
        auto eye = [&] {
            Tensor t = Tensor::zeros({d, d}, true);
            for (int i = 0; i < d; ++i) t.at(i, i) = 1.0;
            return t;
        };
        l.ca_q = eye();
        l.ca_k = eye();
        l.ca_v = detail::randn({d, d}, s, rng, true);
        l.ln2_gain = ones(d);
        l.ln2_bias = Tensor::zeros({1, d}, true);
        l.ffn_w1 = detail::randn({d, hidden}, s, rng, true);
        l.ffn_b1 = Tensor::zeros({1, hidden}, true);
        l.ffn_w2 = detail::randn({hidden, d}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng, true);
        l.ffn_b2 = Tensor::zeros({1, d}, true);
        l.ln3_gain = ones(d);
        l.ln3_bias = Tensor::zeros({1, d}, true);
        return l;
    }

    void collect(std::vector<Tensor>& p) {
        for (Tensor* t : {&sa_q, &sa_k, &sa_v, &ln1_gain, &ln1_bias, &ca_q, &ca_k, &ca_v,
                          &ln2_gain, &ln2_bias, &ffn_w1, &ffn_b1, &ffn_w2, &ffn_b2, &ln3_gain,
                          &ln3_bias})
            p.push_back(*t);
    }
};

struct DetectorModel {
    ModelConfig cfg;
    // dynamic route
    PatternBank bank;
    WeightGenerator generator;
    // static route
    Tensor static_queries;  // n x d
    Tensor pos_embed;       // n x d
    Tensor feat_pos;        // 64 x d, position code for the flattened fine map
    std::vector<DecoderLayer> layers;
    Tensor head_gain, head_bias;  // shared norm applied before the output heads
    Tensor class_w, class_b;  // d -> C+1
    Tensor box_w, box_b;      // d -> 4
    Tensor box_anchor;        // n x 4 fixed logit-space reference, one per query
    // Architectural reduction switch: with m == n, bypass the generator and
    // mix with the identity so dynamic mode collapses onto static mode.
    bool pin_identity_weights = false;

    static DetectorModel init(const ModelConfig& cfg, std::mt19937_64& rng) {
        DetectorModel m;
        m.cfg = cfg;
        const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
        if (cfg.query_mode == QueryMode::kDynamic) {
            m.bank = PatternBank::init(cfg.m, cfg.d, rng);
            m.generator = WeightGenerator::init(cfg.n, cfg.m, cfg.d, 2, rng);
        } else {
            m.static_queries = detail::randn({cfg.n, cfg.d}, s, rng, true);
        }
        // Distinct cell codes with norm well above the content scale, so
        // attention logits can separate positions from the first step.
        m.feat_pos = detail::randn({64, cfg.d}, 1.25, rng, true);
        // Anchor each query to a cell: identical position codes on both sides
        // of the cross-attention give a localized starting point.
        m.pos_embed = Tensor::zeros({cfg.n, cfg.d}, true);
        for (int i = 0; i < cfg.n; ++i)
            for (int j = 0; j < cfg.d; ++j)
                m.pos_embed.at(i, j) = m.feat_pos.at(i % 64, j);
        for (int i = 0; i < cfg.layers; ++i)
            m.layers.push_back(DecoderLayer::init(cfg.d, cfg.ffn_hidden, rng));
        m.head_gain = Tensor::from({1, cfg.d}, std::vector<double>(static_cast<size_t>(cfg.d), 1.0), true);
        m.head_bias = Tensor::zeros({1, cfg.d}, true);
        m.class_w = detail::randn({cfg.d, cfg.num_classes + 1}, s, rng, true);
        m.class_b = Tensor::zeros({1, cfg.num_classes + 1}, true);
        // Zero-init box head: boxes start exactly at the per-query reference,
        // so early matching is stable instead of churning over random boxes.
        m.box_w = Tensor::zeros({cfg.d, 4}, true);
        m.box_b = Tensor::zeros({1, 4}, true);
        auto logit = [](double p) { return std::log(p / (1.0 - p)); };
        m.box_anchor = Tensor::zeros({cfg.n, 4});
        for (int i = 0; i < cfg.n; ++i) {
            const int cell = i % 64;
            m.box_anchor.at(i, 0) = logit((cell % 8 + 0.5) / 8.0);
            m.box_anchor.at(i, 1) = logit((cell / 8 + 0.5) / 8.0);
            m.box_anchor.at(i, 2) = logit(0.2);
            m.box_anchor.at(i, 3) = logit(0.2);
        }
        return m;
    }

    std::vector<Tensor> params() {
        std::vector<Tensor> p;
        if (cfg.query_mode == QueryMode::kDynamic) {
            p.push_back(bank.patterns);
            for (auto& t : generator.params()) p.push_back(t);
        } else {
            p.push_back(static_queries);
        }
        p.push_back(pos_embed);
        p.push_back(feat_pos);
        for (auto& l : layers) l.collect(p);
        p.push_back(head_gain);
        p.push_back(head_bias);
        p.push_back(class_w);
        p.push_back(class_b);
        p.push_back(box_w);
        p.push_back(box_b);
        return p;
    }

    long long param_count() {
        long long c = 0;
        for (auto& t : params()) c += static_cast<long long>(t.size());
        return c;
    }
};

struct LayerOutput {
    Tensor cls_probs;  // n x (C+1), rows sum to 1
    Tensor boxes;      // n x 4, (cx,cy,w,h), sigmoid-squashed with a 1e-4 w/h floor
};

struct DecodeResult {
    std::vector<LayerOutput> layers;
    Tensor dyn_weights;       // n x m (dynamic mode only)
    bool has_dyn_weights = false;
};

namespace detail {

inline Tensor attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                        const Tensor& wq, const Tensor& wk, const Tensor& wv) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(wq.extent(1)));
    Tensor q = matmul(queries, wq);
    Tensor k = matmul(keys, wk);
    Tensor v = matmul(values, wv);
    Tensor scores = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
    return matmul(scores, v);
}

inline LayerOutput apply_heads(const DetectorModel& model, const Tensor& q) {
    LayerOutput out;
    out.cls_probs = softmax_rows(add_rowvec(matmul(q, model.class_w), model.class_b));
    Tensor raw = sigmoid(add(add_rowvec(matmul(q, model.box_w), model.box_b), model.box_anchor));
    // keep w,h strictly positive: affine floor on the last two columns
    Tensor col_scale = Tensor::from({1, 4}, {1.0, 1.0, 1.0 - 1e-4, 1.0 - 1e-4});
    Tensor col_shift = Tensor::from({1, 4}, {0.0, 0.0, 1e-4, 1e-4});
    out.boxes = add_rowvec(mul_rowvec(raw, col_scale), col_shift);
    return out;
}

}  // namespace detail

// Runs the decoder stack; every layer's output goes through the heads so all
// layers can be supervised.
inline DecodeResult decode(const DetectorModel& model, const Scene& scene) {
    if (scene.fine.extent(2) != model.cfg.d)
        throw std::invalid_argument("decode: scene and model disagree on d");
    DecodeResult result;
    Tensor content;
    if (model.cfg.query_mode == QueryMode::kDynamic) {
        DynamicWeights w;
        if (model.pin_identity_weights) {
            if (model.cfg.n != model.cfg.m)
                throw std::invalid_argument("decode: identity pin requires n == m");
            w.w = Tensor::zeros({model.cfg.n, model.cfg.m});
            for (int i = 0; i < model.cfg.n; ++i) w.w.at(i, i) = 1.0;
        } else {
            w = generate_weights(model.generator, {scene.coarse, scene.fine});
        }
        result.dyn_weights = w.w;
        result.has_dyn_weights = true;
        content = compose_queries(model.bank, w);
    } else {
        content = model.static_queries;
    }
    Tensor q = content;
    Tensor z = reshape(scene.fine, {scene.fine.extent(0) * scene.fine.extent(1), model.cfg.d});
    // Position codes join the attention queries/keys only; the value stream
    // stays positional-free so the heads read pure content.
    Tensor zk = add(z, model.feat_pos);
    // pre-norm residual blocks: normalize the block input, keep the stream raw
    for (const auto& layer : model.layers) {
        Tensor qn = layernorm_rows(q, layer.ln1_gain, layer.ln1_bias);
        Tensor qp = add(qn, model.pos_embed);
        q = add(q, detail::attention(qp, qp, qn, layer.sa_q, layer.sa_k, layer.sa_v));
        qn = layernorm_rows(q, layer.ln2_gain, layer.ln2_bias);
        q = add(q, detail::attention(add(qn, model.pos_embed), zk, z,
                                     layer.ca_q, layer.ca_k, layer.ca_v));
        qn = layernorm_rows(q, layer.ln3_gain, layer.ln3_bias);
        Tensor ff = add_rowvec(matmul(relu(add_rowvec(matmul(qn, layer.ffn_w1), layer.ffn_b1)),
                                      layer.ffn_w2),
                               layer.ffn_b2);
        q = add(q, ff);
        result.layers.push_back(
            detail::apply_heads(model, layernorm_rows(q, model.head_gain, model.head_bias)));
    }
    return result;
}

// ---- objective ----

struct TrainConfig {
    ModelConfig model;
    AssignMode assign_mode = AssignMode::kQualityAware;
    double gamma = 0.4;  // quality-score trade-off
    int k = 4;           // top-k for adaptive positive counts
    int l = 1;           // positive-count floor
    double beta = 0.2;   // diversity loss weight
    LambdaWeights lambda;
    VarifocalParams varifocal;
    double background_weight = 0.1;
    double lr = 0.05;
    double momentum = 0.9;
    double clip_norm = 1.0;  // global gradient-norm clip, 0 disables
    int epochs = 48;
    int train_scenes = 200;
    int val_scenes = 50;
    std::uint64_t seed = 1;
    SceneParams scene;

    void validate() const {
        if (beta < 0 || gamma < 0) throw std::invalid_argument("TrainConfig: beta, gamma must be >= 0");
        if (clip_norm < 0) throw std::invalid_argument("TrainConfig: clip_norm must be >= 0");
        if (l < 1 || k < l) throw std::invalid_argument("TrainConfig: need k >= l >= 1");
        if (scene.d != model.d || scene.num_classes != model.num_classes)
            throw std::invalid_argument("TrainConfig: scene/model d or class count mismatch");
    }
};

struct LossBreakdown {
    Tensor total;
    double one_to_many = 0;
    double aux = 0;
    double diversity = 0;
};

namespace detail {

inline std::vector<PredValue> snapshot_preds(const LayerOutput& layer) {
    const int n = layer.cls_probs.extent(0);
    const int c = layer.cls_probs.extent(1);
    std::vector<PredValue> preds(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        preds[static_cast<size_t>(i)].box = box_from_row(layer.boxes, i);
        preds[static_cast<size_t>(i)].probs.resize(static_cast<size_t>(c));
        for (int j = 0; j < c; ++j)
            preds[static_cast<size_t>(i)].probs[static_cast<size_t>(j)] = layer.cls_probs.at(i, j);
    }
    return preds;
}

inline double foreground_confidence(const PredValue& p) {
    double best = 0;
    for (size_t j = 0; j + 1 < p.probs.size(); ++j) best = std::max(best, p.probs[j]);
    return best;
}

}  // namespace detail

// Total objective: quality-aware one-to-many supervision on intermediate
// layers, one-to-one Hungarian loss on every layer (the final layer gets only
// that), plus weighted pattern diversity.
inline LossBreakdown total_loss(const DetectorModel& model, const DecodeResult& decoded,
                                const Scene& scene, const TrainConfig& cfg) {
    const int L = static_cast<int>(decoded.layers.size());
    Tensor aux = Tensor::scalar(0.0);
    Tensor many = Tensor::scalar(0.0);
    for (int li = 0; li < L; ++li) {
        const auto& layer = decoded.layers[static_cast<size_t>(li)];
        auto preds = detail::snapshot_preds(layer);
        CostMatrix cost = build_cost(preds, scene.objects, cfg.lambda);
        Matching match = hungarian(cost);
        aux = add(aux, one_to_one_loss(match, layer.cls_probs, layer.boxes, scene.objects,
                                       cfg.lambda, cfg.background_weight));
        if (li == L - 1 || cfg.assign_mode == AssignMode::kOneToOne) continue;

        std::vector<Box> pred_boxes, gt_boxes;
        std::vector<double> confidences;
        for (const auto& p : preds) {
            pred_boxes.push_back(p.box);
            confidences.push_back(detail::foreground_confidence(p));
        }
        for (const auto& g : scene.objects) gt_boxes.push_back(g.box);
        QualityScoreTable table = quality_score(pred_boxes, confidences, gt_boxes, cfg.gamma);
        std::vector<int> ks;
        if (cfg.assign_mode == AssignMode::kFixedK)
            ks.assign(gt_boxes.size(), std::min(cfg.k, table.n_pred));
        else
            ks = adaptive_k(table, cfg.k, cfg.l);
        AssignmentResult assignment = select_positives(table, ks);
        many = add(many, one_to_many_loss(assignment, layer.cls_probs, layer.boxes, scene.objects,
                                          cfg.lambda, cfg.varifocal));
    }
    LossBreakdown out;
    out.aux = aux.item();
    out.one_to_many = many.item();
    Tensor total = add(many, aux);
    if (cfg.model.query_mode == QueryMode::kDynamic && cfg.beta > 0) {
        Tensor div = scale(diversity_loss(model.bank), cfg.beta);
        out.diversity = div.item();
        total = add(total, div);
    }
    out.total = total;
    return out;
}

// ---- training ----

struct EpochRow {
    int epoch = 0;
    double total = 0, one_to_many = 0, aux = 0, diversity = 0;
    double map = 0, gini_coeff = 0;
};

struct RunRecord {
    TrainConfig cfg;
    std::vector<EpochRow> rows;
    bool diverged = false;
    std::string diagnostic;
    double best_map = 0;
    double final_gini = 0;
    std::vector<double> pattern_mass;
    long long param_count = 0;
    double wall_seconds = 0;
};

struct EvalResult {
    double map = 0;
    double gini_coeff = 0;
    ActivationCounts counts;
};

// Validation pass: final-layer Hungarian matches define query activation;
// detections above the confidence/IoU gate accumulate pattern mass.
inline EvalResult evaluate(const DetectorModel& model, const std::vector<Scene>& scenes,
                           const LambdaWeights& lambda) {
    EvalResult r;
    r.counts = make_activation_counts(model.cfg.n,
                                      model.cfg.query_mode == QueryMode::kDynamic ? model.cfg.m : 0);
    std::vector<Detection> dets;
    std::vector<GroundTruth> gts;
    for (size_t si = 0; si < scenes.size(); ++si) {
        const Scene& scene = scenes[si];
        DecodeResult decoded = decode(model, scene);
        const LayerOutput& final_layer = decoded.layers.back();
        auto preds = detail::snapshot_preds(final_layer);
        Matching match = hungarian(build_cost(preds, scene.objects, lambda));
        for (auto [qi, gj] : match.pairs) {
            (void)gj;
            r.counts.record_match(qi);
        }
        for (const auto& g : scene.objects) gts.push_back({g.box, g.cls, static_cast<int>(si)});
        for (int i = 0; i < model.cfg.n; ++i) {
            const auto& p = preds[static_cast<size_t>(i)];
            int best_cls = 0;
            double best_p = p.probs[0];
            for (size_t j = 1; j + 1 < p.probs.size(); ++j)
                if (p.probs[j] > best_p) {
                    best_p = p.probs[j];
                    best_cls = static_cast<int>(j);
                }
            dets.push_back({p.box, best_cls, best_p, static_cast<int>(si)});
            if (decoded.has_dyn_weights && best_p > 0.5) {
                double best_iou = 0;
                for (const auto& g : scene.objects)
                    best_iou = std::max(best_iou, iou(p.box, g.box));
                if (best_iou > 0.7) {
                    std::vector<double> row(static_cast<size_t>(model.cfg.m));
                    for (int j = 0; j < model.cfg.m; ++j) row[static_cast<size_t>(j)] = decoded.dyn_weights.at(i, j);
                    r.counts.record_confident_detection(row);
                }
            }
        }
    }
    r.map = mean_average_precision(dets, gts);
    r.gini_coeff = gini(r.counts.query_matches);
    return r;
}

inline std::uint64_t scene_seed(std::uint64_t base, bool validation, int index) {
    return base * 1000003ull + (validation ? 500000ull : 0ull) + static_cast<std::uint64_t>(index);
}

inline RunRecord train(const TrainConfig& cfg, DetectorModel* trained_out = nullptr) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(cfg.seed);
    DetectorModel model = DetectorModel::init(cfg.model, rng);

    std::vector<Scene> train_set, val_set;
    for (int i = 0; i < cfg.train_scenes; ++i)
        train_set.push_back(render_scene(scene_seed(cfg.seed, false, i), cfg.scene));
    for (int i = 0; i < cfg.val_scenes; ++i)
        val_set.push_back(render_scene(scene_seed(cfg.seed, true, i), cfg.scene));

    auto params = model.params();
    std::vector<std::vector<double>> velocity(params.size());
    for (size_t i = 0; i < params.size(); ++i) velocity[i].assign(params[i].size(), 0.0);

    RunRecord record;
    record.cfg = cfg;
    record.param_count = model.param_count();

    const int drop_epoch = static_cast<int>(std::ceil(0.85 * cfg.epochs));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = epoch >= drop_epoch ? cfg.lr * 0.1 : cfg.lr;
        EpochRow row;
        row.epoch = epoch;
        for (const Scene& scene : train_set) {
            for (Tensor& p : params) p.zero_grad();
            LossBreakdown loss;
            {
                Tape tape;
                DecodeResult decoded = decode(model, scene);
                loss = total_loss(model, decoded, scene, cfg);
                tape.backward(loss.total);
            }
            const double lv = loss.total.item();
            if (!std::isfinite(lv) || lv > 1e4) {
                record.diverged = true;
                record.diagnostic = "loss diverged at epoch " + std::to_string(epoch) +
                                    " (value " + std::to_string(lv) + ")";
                record.rows.push_back(row);
                if (trained_out) *trained_out = model;
                return record;
            }
            row.total += lv;
            row.one_to_many += loss.one_to_many;
            row.aux += loss.aux;
            row.diversity += loss.diversity;
            double clip_scale = 1.0;
            if (cfg.clip_norm > 0) {
                double sq = 0;
                for (const Tensor& p : params)
                    for (double g : p.grad()) sq += g * g;
                const double norm = std::sqrt(sq);
                if (norm > cfg.clip_norm) clip_scale = cfg.clip_norm / norm;
            }
            for (size_t pi = 0; pi < params.size(); ++pi) {
                auto& v = velocity[pi];
                auto& data = params[pi].data();
                const auto& g = params[pi].grad();
                for (size_t i = 0; i < data.size(); ++i) {
                    v[i] = cfg.momentum * v[i] + clip_scale * g[i];
                    data[i] -= lr * v[i];
                }
            }
            if (cfg.model.query_mode == QueryMode::kDynamic) model.bank.enforce_min_norm();
        }
        const double inv = 1.0 / cfg.train_scenes;
        row.total *= inv;
        row.one_to_many *= inv;
        row.aux *= inv;
        row.diversity *= inv;
        EvalResult ev = evaluate(model, val_set, cfg.lambda);
        row.map = ev.map;
        row.gini_coeff = ev.gini_coeff;
        record.rows.push_back(row);
        record.best_map = std::max(record.best_map, ev.map);
        record.final_gini = ev.gini_coeff;
        record.pattern_mass = ev.counts.pattern_mass;
    }
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (trained_out) *trained_out = model;
    return record;
}

}  // namespace paq
