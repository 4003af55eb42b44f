#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "paq/metrics.hpp"

using namespace paq;

TEST_CASE("gini hand values") {
    CHECK(gini({5, 5, 5, 5}) == Catch::Approx(0.0).margin(1e-12));
    CHECK(gini({42}) == Catch::Approx(0.0).margin(1e-12));
    // one query takes everything among four
    CHECK(gini({0, 0, 0, 8}) == Catch::Approx(0.75).epsilon(1e-12));
    // two-value hand computation: {1,3} -> (2*1-2-1)*1 + (2*2-2-1)*3 = 2, / (2*4) = 0.25
    CHECK(gini({1, 3}) == Catch::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("gini properties") {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> dist(0.0, 10.0);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> x(12);
        for (double& v : x) v = dist(rng);
        const double g = gini(x);
        CHECK(g >= 0.0);
        CHECK(g < 1.0);

        // scale invariance
        std::vector<double> sx = x;
        for (double& v : sx) v *= 7.25;
        CHECK(gini(sx) == Catch::Approx(g).margin(1e-12));

        // permutation invariance
        std::vector<double> px = x;
        std::shuffle(px.begin(), px.end(), rng);
        CHECK(gini(px) == Catch::Approx(g).margin(1e-12));

        // adding a constant moves toward equality
        std::vector<double> cx = x;
        for (double& v : cx) v += 5.0;
        CHECK(gini(cx) <= g + 1e-12);
    }
}

TEST_CASE("gini rejects invalid input") {
    CHECK_THROWS_AS(gini({}), std::invalid_argument);
    CHECK_THROWS_AS(gini({1.0, -0.5}), std::invalid_argument);
    CHECK_THROWS_AS(gini({0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("average_precision extremes") {
    Box b{0.5, 0.5, 0.2, 0.2};
    std::vector<GroundTruth> gts{{b, 0, 0}, {{0.2, 0.2, 0.1, 0.1}, 0, 1}};

    // perfect detections -> AP 1
    std::vector<Detection> perfect{{b, 0, 0.9, 0}, {{0.2, 0.2, 0.1, 0.1}, 0, 0.8, 1}};
    CHECK(average_precision(perfect, gts, 0.5) == Catch::Approx(1.0));

    // detections that never overlap -> AP 0
    std::vector<Detection> junk{{{0.9, 0.9, 0.05, 0.05}, 0, 0.9, 0}};
    CHECK(average_precision(junk, gts, 0.5) == Catch::Approx(0.0));

    // no detections at all -> AP 0
    CHECK(average_precision({}, gts, 0.5) == Catch::Approx(0.0));

    CHECK_THROWS_AS(average_precision(perfect, {}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(average_precision(perfect, gts, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(average_precision(perfect, gts, 1.0), std::invalid_argument);
}

TEST_CASE("average_precision hand-computed curve") {
    // 2 gts in one scene; 3 detections ranked TP, FP, TP
    Box g0{0.3, 0.3, 0.2, 0.2};
    Box g1{0.7, 0.7, 0.2, 0.2};
    std::vector<GroundTruth> gts{{g0, 0, 0}, {g1, 0, 0}};
    std::vector<Detection> dets{
        {g0, 0, 0.9, 0},                      // TP, recall 1/2, precision 1
        {{0.1, 0.9, 0.05, 0.05}, 0, 0.8, 0},  // FP
        {g1, 0, 0.7, 0},                      // TP, recall 1, precision 2/3
    };
    // all-point AP = 0.5 * 1 + 0.5 * (2/3)
    CHECK(average_precision(dets, gts, 0.5) == Catch::Approx(0.5 + 0.5 * 2.0 / 3).epsilon(1e-12));
}

TEST_CASE("average_precision ignores cross-scene matches and is monotone in threshold") {
    Box b{0.5, 0.5, 0.2, 0.2};
    std::vector<GroundTruth> gts{{b, 0, 0}};
    // detection in scene 1 cannot match the gt in scene 0
    std::vector<Detection> other_scene{{b, 0, 0.9, 1}};
    CHECK(average_precision(other_scene, gts, 0.5) == Catch::Approx(0.0));

    // slightly shifted detection: AP 1 at loose thresholds, 0 at tight ones
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> shift(0.0, 0.06);
    for (int t = 0; t < 50; ++t) {
        Box d{0.5 + shift(rng), 0.5, 0.2, 0.2};
        std::vector<Detection> dets{{d, 0, 0.9, 0}};
        double prev = 1.0;
        for (int k = 0; k < 10; ++k) {
            const double ap = average_precision(dets, gts, 0.5 + 0.05 * k);
            CHECK(ap <= prev + 1e-12);
            prev = ap;
        }
    }
}

TEST_CASE("average_precision greedy matching prefers the highest-IoU gt") {
    // one detection overlapping two gts; it must consume the closer one so a
    // later detection can still match the other
    Box g0{0.5, 0.5, 0.3, 0.3};
    Box g1{0.62, 0.5, 0.3, 0.3};
    std::vector<GroundTruth> gts{{g0, 0, 0}, {g1, 0, 0}};
    std::vector<Detection> dets{{g1, 0, 0.9, 0}, {g0, 0, 0.8, 0}};
    CHECK(average_precision(dets, gts, 0.5) == Catch::Approx(1.0));
}

TEST_CASE("mean_average_precision averages over present classes") {
    Box b0{0.3, 0.3, 0.2, 0.2};
    Box b1{0.7, 0.7, 0.2, 0.2};
    std::vector<GroundTruth> gts{{b0, 0, 0}, {b1, 3, 0}};

    // class 0 perfect, class 3 missed entirely -> mAP 0.5
    std::vector<Detection> dets{{b0, 0, 0.9, 0}};
    CHECK(mean_average_precision(dets, gts) == Catch::Approx(0.5).margin(1e-12));

    // both perfect -> 1; detection class labels must line up
    dets.push_back({b1, 3, 0.9, 0});
    CHECK(mean_average_precision(dets, gts) == Catch::Approx(1.0));

    // wrong class label scores zero for that class
    std::vector<Detection> wrong{{b0, 3, 0.9, 0}, {b1, 0, 0.9, 0}};
    CHECK(mean_average_precision(wrong, gts) == Catch::Approx(0.0).margin(1e-12));

    CHECK_THROWS_AS(mean_average_precision(dets, {}), std::invalid_argument);
}

TEST_CASE("activation counters accumulate") {
    ActivationCounts a = make_activation_counts(4, 3);
    REQUIRE(a.query_matches.size() == 4);
    REQUIRE(a.pattern_mass.size() == 3);

    a.record_match(1);
    a.record_match(1);
    a.record_match(3);
    CHECK(a.total_matches == 3);
    CHECK(a.query_matches == std::vector<double>{0, 2, 0, 1});

    a.record_confident_detection({0.2, 0.3, 0.5});
    a.record_confident_detection({0.1, 0.1, 0.8});
    CHECK(a.pattern_mass[0] == Catch::Approx(0.3));
    CHECK(a.pattern_mass[2] == Catch::Approx(1.3));

    // static mode: zero patterns is allowed
    ActivationCounts s = make_activation_counts(2, 0);
    CHECK(s.pattern_mass.empty());
}
