#include <doctest.h>

#include <cmath>

#include "vidiff/error.hpp"
#include "vidiff/labels.hpp"
#include "vidiff/types.hpp"

using namespace vidiff;

TEST_CASE("generalized cross entropy limits and hand values") {
    const std::vector<double> p{0.2, 0.5, 0.3};
    CHECK(gce_loss(p, 1, 1.0) == doctest::Approx(0.5));
    CHECK(gce_loss(p, 1, 0.7) == doctest::Approx(0.5491825618964884).epsilon(1e-12));
    CHECK(gce_loss(p, 0, 1e-7) == doctest::Approx(-std::log(0.2)).epsilon(1e-5));
    CHECK(cross_entropy(p, 2) == doctest::Approx(-std::log(0.3)));
    // Bounded by 1/q even for a vanishing probability, unlike cross entropy.
    const std::vector<double> z{0.0, 1.0};
    CHECK(gce_loss(z, 0, 0.7) <= 1.0 / 0.7);
    CHECK(std::isfinite(cross_entropy(z, 0)));
    CHECK(cross_entropy(z, 0) == doctest::Approx(-std::log(kProbFloor)));
    CHECK_THROWS_AS(gce_loss(p, 3, 0.7), ContractError);
}

TEST_CASE("label smoothing targets") {
    const auto t = lsr_smooth(2, {0.1, 4});
    CHECK(t == std::vector<double>{0.025, 0.025, 0.925, 0.025});
    const auto none = lsr_smooth(0, {0.0, 3});
    CHECK(none == std::vector<double>{1.0, 0.0, 0.0});
    CHECK_THROWS_AS((LsrConfig{1.0, 4}).validate(), ConfigError);
    CHECK_THROWS_AS((LsrConfig{0.1, 0}).validate(), ConfigError);
    CHECK_THROWS_AS((GceConfig{0.0}).validate(), ConfigError);
    CHECK_THROWS_AS((GceConfig{1.5}).validate(), ConfigError);
    CHECK_NOTHROW((GceConfig{1.0}).validate());
}

TEST_CASE("label smoothing targets sum to exactly one") {
    for (int K : {2, 3, 7, 10, 395})
        for (double a : {0.01, 0.1, 0.3, 0.9})
            for (int y : {0, K / 2, K - 1}) {
                const auto t = lsr_smooth(y, {a, K});
                double sum = 0.0;
                for (double v : t) sum += v;
                CHECK(sum == 1.0);
                CHECK(t[y] == doctest::Approx(1.0 - a + a / K).epsilon(1e-12));
            }
}

TEST_CASE("softmax is stable and normalized") {
    const std::vector<double> l{1000.0, 1000.0, -1000.0};
    const auto p = softmax(l);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[2] == 0.0);
    const std::vector<double> s{0.0, std::log(3.0)};
    CHECK(softmax(s)[1] == doctest::Approx(0.75));
}

TEST_CASE("mixed objective on a four-item batch") {
    const std::vector<std::vector<double>> probs{{0.8, 0.2}, {0.4, 0.6}, {0.5, 0.5}, {0.9, 0.1}};
    const std::vector<int> y{0, 1, 0, 1};
    const std::vector<Provenance> prov{Provenance::Real, Provenance::Real, Provenance::Generated,
                                       Provenance::Generated};
    const GceConfig gce{0.7};
    const LsrConfig lsr{0.1, 2};
    const double real = -std::log(0.8) - std::log(0.6);
    const double gce_gen = (1 - std::pow(0.5, 0.7)) / 0.7 + (1 - std::pow(0.1, 0.7)) / 0.7;
    const double lsr_gen = -(0.95 * std::log(0.5) + 0.05 * std::log(0.5)) - (0.05 * std::log(0.9) + 0.95 * std::log(0.1));
    const double ce_gen = -std::log(0.5) - std::log(0.1);

    auto run = [&](LabelMode m) { return mixed_objective_probs(probs, y, prov, m, gce, lsr); };
    CHECK(run(LabelMode::Gce) == doctest::Approx((real + gce_gen) / 4).epsilon(1e-12));
    CHECK(run(LabelMode::Gce) == doctest::Approx(0.606672).epsilon(1e-5));
    CHECK(run(LabelMode::Lsr) == doctest::Approx((real + lsr_gen) / 4).epsilon(1e-12));
    CHECK(run(LabelMode::GceLsr) == doctest::Approx((real + gce_gen + lsr_gen) / 4).epsilon(1e-12));
    CHECK(run(LabelMode::CeOnly) == doctest::Approx((real + ce_gen) / 4).epsilon(1e-12));

    // Every item real: the mode is irrelevant.
    const std::vector<Provenance> all_real(4, Provenance::Real);
    CHECK(mixed_objective_probs(probs, y, all_real, LabelMode::GceLsr, gce, lsr) ==
          doctest::Approx(mixed_objective_probs(probs, y, all_real, LabelMode::CeOnly, gce, lsr)));

    std::vector<Provenance> unset = prov;
    unset[1] = Provenance::Unset;
    CHECK_THROWS_AS(mixed_objective_probs(probs, y, unset, LabelMode::Gce, gce, lsr), ContractError);
}

TEST_CASE("label mode names") {
    CHECK(parse_label_mode("ce_only") == LabelMode::CeOnly);
    CHECK(parse_label_mode("gce") == LabelMode::Gce);
    CHECK(parse_label_mode("lsr") == LabelMode::Lsr);
    CHECK(parse_label_mode("gce+lsr") == LabelMode::GceLsr);
    CHECK_THROWS_AS(parse_label_mode("focal"), ConfigError);
    for (LabelMode m : {LabelMode::CeOnly, LabelMode::Gce, LabelMode::Lsr, LabelMode::GceLsr})
        CHECK(parse_label_mode(to_string(m)) == m);
}

TEST_CASE("logit gradients match central differences") {
    Rng rng(5);
    std::vector<LabeledItem> batch;
    for (int i = 0; i < 6; ++i) {
        LabeledItem it;
        for (int k = 0; k < 5; ++k) it.logits.push_back(1.5 * rng.normal());
        it.label = i % 5;
        it.provenance = i < 2 ? Provenance::Real : Provenance::Generated;
        batch.push_back(it);
    }
    const GceConfig gce{0.7};
    const LsrConfig lsr{0.1, 0};
    for (LabelMode m : {LabelMode::CeOnly, LabelMode::Gce, LabelMode::Lsr, LabelMode::GceLsr}) {
        const auto r = mixed_objective(batch, m, gce, lsr);
        std::vector<std::vector<double>> probs;
        std::vector<int> y;
        std::vector<Provenance> prov;
        for (const auto& it : batch) {
            probs.push_back(softmax(it.logits));
            y.push_back(it.label);
            prov.push_back(it.provenance);
        }
        CHECK(r.loss == doctest::Approx(mixed_objective_probs(probs, y, prov, m, gce, {0.1, 5})).epsilon(1e-12));
        const double h = 1e-6;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            double row_sum = 0.0;
            for (std::size_t k = 0; k < 5; ++k) {
                auto up = batch, down = batch;
                up[i].logits[k] += h;
                down[i].logits[k] -= h;
                const double numeric =
                    (mixed_objective(up, m, gce, lsr).loss - mixed_objective(down, m, gce, lsr).loss) / (2 * h);
                CHECK(r.dlogits[i][k] == doctest::Approx(numeric).epsilon(1e-5));
                row_sum += r.dlogits[i][k];
            }
            // Softmax gradients are orthogonal to the all-ones direction.
            CHECK(std::abs(row_sum) < 1e-12);
        }
    }
}

TEST_CASE("generalized cross entropy down-weights confident mistakes") {
    // Gradient magnitude on the true-class logit scales with p_y^q, so a
    // sample the model strongly disagrees with contributes less than under CE.
    LabeledItem wrong{{4.0, -4.0}, 1, Provenance::Generated};
    const std::vector<LabeledItem> b{wrong};
    const auto ce = mixed_objective(b, LabelMode::CeOnly, {0.7}, {0.1, 0});
    const auto gce = mixed_objective(b, LabelMode::Gce, {0.7}, {0.1, 0});
    CHECK(std::abs(gce.dlogits[0][1]) < 0.1 * std::abs(ce.dlogits[0][1]));
}
