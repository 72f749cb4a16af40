#include "doctest.h"

#include <cmath>
#include <vector>

#include "read/mean_teacher.hpp"
#include "read/util.hpp"

using namespace readcore;

namespace {

// Bright-vs-dark images, trivially separable.
Image class_image(Rng& rng, int cls, int size) {
    Image img(size, size);
    const float base = cls == 0 ? 0.8f : -0.8f;
    for (auto& v : img.pixels) v = base + static_cast<float>(rng.uniform(-0.1, 0.1));
    return img;
}

}  // namespace

TEST_CASE("supervised loss anchors") {
    // Matching one-hot rows cost nothing.
    CHECK(supervised_loss({1, 0, 0, 0, 1, 0}, {1, 0, 0, 0, 1, 0}, 2, 3) == 0.0);
    // −log(1/e) = 1.
    CHECK(supervised_loss({1.0 / std::exp(1.0), 0.3, 0.3}, {1, 0, 0}, 1, 3) == 1.0);
    // Uniform against uniform costs ln 3.
    const double third = 1.0 / 3.0;
    CHECK(supervised_loss({third, third, third}, {third, third, third}, 1, 3) ==
          doctest::Approx(std::log(3.0)).epsilon(1e-15));
    // Zero probability on the labeled class is clamped, not fatal.
    CHECK(supervised_loss({0, 1, 0}, {1, 0, 0}, 1, 3) == -std::log(1e-12));
    CHECK_THROWS_AS(supervised_loss({1, 0}, {1, 0, 0}, 1, 3), numeric_error);
}

TEST_CASE("supervised loss gradient is (p − t)/n") {
    std::vector<double> probs = {0.5, 0.25, 0.25, 0.1, 0.2, 0.7};
    std::vector<double> targets = {1, 0, 0, 0, 0, 1};
    auto d = supervised_loss_dlogits(probs, targets, 2, 3);
    REQUIRE(d.size() == 6);
    for (std::size_t k = 0; k < 6; ++k) CHECK(d[k] == (probs[k] - targets[k]) / 2.0);
}

TEST_CASE("consistency loss anchors") {
    CHECK(consistency_loss({0.2, 0.8, 0.0}, {0.2, 0.8, 0.0}, 1, 3) == 0.0);
    CHECK(consistency_loss({1, 0, 0}, {0, 1, 0}, 1, 3) == 2.0);
    std::vector<double> a = {0.6, 0.3, 0.1, 0.25, 0.5, 0.25};
    std::vector<double> b = {0.5, 0.25, 0.25, 0.1, 0.6, 0.3};
    CHECK(consistency_loss(a, b, 2, 3) == consistency_loss(b, a, 2, 3));
    // Mean over the batch: duplicating a row keeps the value.
    std::vector<double> a2 = {0.6, 0.3, 0.1, 0.6, 0.3, 0.1};
    std::vector<double> b2 = {0.5, 0.25, 0.25, 0.5, 0.25, 0.25};
    CHECK(consistency_loss(a2, b2, 2, 3) ==
          doctest::Approx(consistency_loss({0.6, 0.3, 0.1}, {0.5, 0.25, 0.25}, 1, 3)));

    auto d = consistency_loss_dprobs(a, b, 2, 3);
    for (std::size_t k = 0; k < 6; ++k) CHECK(d[k] == 2.0 * (a[k] - b[k]) / 2.0);
}

TEST_CASE("rampup weight shapes") {
    MeanTeacherConfig cfg;
    CHECK(rampup_weight(0, cfg) == 0.0);
    CHECK(rampup_weight(20, cfg) == 6.25);
    CHECK(rampup_weight(40, cfg) == 12.5);
    CHECK(rampup_weight(41, cfg) == 12.5);
    CHECK(rampup_weight(1000, cfg) == 12.5);
    // Non-decreasing over the ramp.
    for (int e = 1; e <= 40; ++e) CHECK(rampup_weight(e, cfg) >= rampup_weight(e - 1, cfg));

    MeanTeacherConfig instant = cfg;
    instant.rampup_epochs = 0;
    CHECK(rampup_weight(0, instant) == 12.5);

    MeanTeacherConfig sig = cfg;
    sig.rampup_shape = "sigmoid";
    CHECK(rampup_weight(0, sig) == doctest::Approx(12.5 * std::exp(-5.0)));
    CHECK(rampup_weight(40, sig) == 12.5);
    CHECK(rampup_weight(20, sig) == doctest::Approx(12.5 * std::exp(-1.25)));

    CHECK_THROWS_AS(rampup_weight(-1, cfg), config_error);
}

TEST_CASE("config validation") {
    MeanTeacherConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    MeanTeacherConfig bad = cfg;
    bad.rampup_target = -1;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = cfg;
    bad.ema_alpha = 1.5;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = cfg;
    bad.rampup_shape = "step";
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = cfg;
    bad.test_fraction = 1.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("train: empty labeled set is a configuration error") {
    ConvNetSpec spec{8, {2}, 3, 2};
    MeanTeacherConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(train(spec, {}, {}, cfg), config_error);
}

TEST_CASE("train report: totals, ramp column, csv layout") {
    ConvNetSpec spec{8, {2, 3}, 4, 2};
    Rng rng(40);
    std::vector<TrainSample> labeled;
    std::vector<Image> unlabeled;
    for (int i = 0; i < 12; ++i) {
        const int cls = i % 2;
        labeled.push_back({class_image(rng, cls, 8),
                           cls == 0 ? std::vector<double>{1, 0} : std::vector<double>{0, 1}});
        unlabeled.push_back(class_image(rng, cls, 8));
    }
    MeanTeacherConfig cfg;
    cfg.epochs = 5;
    cfg.rampup_epochs = 3;
    cfg.rampup_target = 2.0;
    cfg.labeled_batch = 4;
    cfg.unlabeled_batch = 4;
    cfg.seed = 7;

    TrainResult res = train(spec, labeled, unlabeled, cfg);
    REQUIRE(res.report.epochs.size() == 5);
    for (int e = 0; e < 5; ++e) {
        const auto& st = res.report.epochs[static_cast<std::size_t>(e)];
        CHECK(st.epoch == e);
        CHECK(st.w == rampup_weight(e, cfg));
        CHECK(st.l_sup >= 0.0);
        CHECK(st.l_cons >= 0.0);
        CHECK(st.total == st.l_sup + st.w * st.l_cons);
        CHECK(st.test_acc >= 0.0);
        CHECK(st.test_acc <= 1.0);
    }
    CHECK(res.report.epochs[0].w == 0.0);
    CHECK(res.report.epochs[0].l_cons == 0.0);  // no consistency pass before the ramp starts
    CHECK(res.report.epochs[4].l_cons > 0.0);
    CHECK(res.report.final_test_acc == res.report.epochs.back().test_acc);

    const std::string csv = train_report_csv(res.report);
    CHECK(csv.substr(0, csv.find('\n')) == "epoch,l_sup,l_cons,w,total,test_acc");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}

TEST_CASE("train is deterministic given the seed") {
    ConvNetSpec spec{8, {2}, 3, 2};
    Rng rng(50);
    std::vector<TrainSample> labeled;
    std::vector<Image> unlabeled;
    for (int i = 0; i < 8; ++i) {
        const int cls = i % 2;
        labeled.push_back({class_image(rng, cls, 8),
                           cls == 0 ? std::vector<double>{1, 0} : std::vector<double>{0, 1}});
        unlabeled.push_back(class_image(rng, 1 - cls, 8));
    }
    MeanTeacherConfig cfg;
    cfg.epochs = 3;
    cfg.rampup_epochs = 2;
    cfg.rampup_target = 1.0;
    cfg.labeled_batch = 4;
    cfg.unlabeled_batch = 4;
    cfg.seed = 11;

    TrainResult a = train(spec, labeled, unlabeled, cfg);
    TrainResult b = train(spec, labeled, unlabeled, cfg);
    for (std::size_t t = 0; t < a.student.items.size(); ++t) {
        CHECK(a.student.items[t].second.data == b.student.items[t].second.data);
        CHECK(a.teacher.items[t].second.data == b.teacher.items[t].second.data);
    }
    CHECK(train_report_csv(a.report) == train_report_csv(b.report));

    MeanTeacherConfig other = cfg;
    other.seed = 12;
    TrainResult c = train(spec, labeled, unlabeled, other);
    CHECK(a.student.at("head.w").data != c.student.at("head.w").data);
}

TEST_CASE("zero rampup target with no unlabeled data matches supervised training") {
    ConvNetSpec spec{8, {2}, 3, 2};
    Rng rng(60);
    std::vector<TrainSample> labeled;
    for (int i = 0; i < 10; ++i) {
        const int cls = i % 2;
        labeled.push_back({class_image(rng, cls, 8),
                           cls == 0 ? std::vector<double>{1, 0} : std::vector<double>{0, 1}});
    }
    MeanTeacherConfig cfg;
    cfg.epochs = 4;
    cfg.rampup_target = 0.0;
    cfg.labeled_batch = 4;
    cfg.seed = 3;

    // With the weight pinned at zero the consistency pool must not matter.
    std::vector<Image> pool;
    for (const auto& s : labeled) pool.push_back(s.image);
    TrainResult bare = train(spec, labeled, {}, cfg);
    TrainResult pooled = train(spec, labeled, pool, cfg);
    for (std::size_t t = 0; t < bare.student.items.size(); ++t)
        CHECK(bare.student.items[t].second.data == pooled.student.items[t].second.data);
    for (const auto& st : bare.report.epochs) {
        CHECK(st.w == 0.0);
        CHECK(st.l_cons == 0.0);
        CHECK(st.total == st.l_sup);
    }
}

TEST_CASE("train learns a separable problem quickly") {
    ConvNetSpec spec{8, {3}, 4, 2};
    Rng rng(70);
    std::vector<TrainSample> labeled;
    std::vector<Image> unlabeled;
    for (int i = 0; i < 30; ++i) {
        const int cls = i % 2;
        labeled.push_back({class_image(rng, cls, 8),
                           cls == 0 ? std::vector<double>{1, 0} : std::vector<double>{0, 1}});
        unlabeled.push_back(class_image(rng, cls, 8));
    }
    MeanTeacherConfig cfg;
    cfg.epochs = 12;
    cfg.rampup_epochs = 6;
    cfg.rampup_target = 1.0;
    cfg.labeled_batch = 8;
    cfg.unlabeled_batch = 8;
    cfg.ema_alpha = 0.9;
    cfg.seed = 5;

    TrainResult res = train(spec, labeled, unlabeled, cfg);
    CHECK(res.report.final_test_acc >= 0.9);
}
