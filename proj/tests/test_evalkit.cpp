#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vidiff/conditioning.hpp"
#include "vidiff/evalkit.hpp"
#include "vidiff/synthdata.hpp"

using namespace vidiff;

namespace {

const std::vector<int> kRanks{1, 2, 3};

TensorF renders(int n_ids, int per_id, Modality m, std::uint64_t seed, std::vector<int>* labels = nullptr,
                int offset = 0, const RenderConfig& rc = {}) {
    std::vector<TensorF> parts;
    for (int id = 0; id < n_ids; ++id) {
        const auto spec = generate_identity(derive_seed(seed, static_cast<std::uint64_t>(id)), id);
        for (int k = 0; k < per_id; ++k) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(id * 100 + k + offset)));
            parts.push_back(render(spec, m, rng, rc).reshaped({1, 3, rc.height, rc.width}));
            if (labels) labels->push_back(id);
        }
    }
    return concat_batch<float>(parts);
}

TensorF constant_images(int n, float v) { return TensorF({n, 3, 64, 32}, v); }

}  // namespace

TEST_CASE("CMC and mAP on a hand fixture") {
    // Query 0 finds its only positive first; query 1 finds it third.
    const std::vector<std::vector<double>> d{{0.1, 0.5, 0.9}, {0.1, 0.2, 0.3}};
    const std::vector<int> q{7, 8}, g{7, 9, 8};
    const auto m = cmc_map_from_distances(d, q, g, kRanks);
    CHECK(m.mAP == doctest::Approx(2.0 / 3.0));
    CHECK(m.rank.at(1) == doctest::Approx(0.5));
    CHECK(m.rank.at(2) == doctest::Approx(0.5));
    CHECK(m.rank.at(3) == doctest::Approx(1.0));
    CHECK(m.evaluated == 2);
    CHECK(m.excluded == 0);

    // Two positives at ranks 2 and 4.
    const std::vector<std::vector<double>> d2{{0.1, 0.2, 0.3, 0.4}};
    const std::vector<int> q2{1}, g2{0, 1, 0, 1};
    CHECK(cmc_map_from_distances(d2, q2, g2, kRanks).mAP == doctest::Approx(0.5));
}

TEST_CASE("ties rank negatives first and positive-free queries are excluded") {
    const std::vector<std::vector<double>> d{{0.5, 0.5}, {0.1, 0.2}};
    const std::vector<int> q{1, 5}, g{1, 2};
    const auto m = cmc_map_from_distances(d, q, g, kRanks);
    CHECK(m.evaluated == 1);
    CHECK(m.excluded == 1);
    CHECK(m.rank.at(1) == 0.0);
    CHECK(m.rank.at(2) == 1.0);
    CHECK(m.mAP == doctest::Approx(0.5));

    const std::vector<int> swapped{2, 1};
    const std::vector<std::vector<double>> d_sw{{0.5, 0.5}};
    const std::vector<int> q1{1};
    CHECK(cmc_map_from_distances(d_sw, q1, swapped, kRanks).mAP == doctest::Approx(0.5));
}

TEST_CASE("retrieval metrics are invariant to gallery order and monotone transforms") {
    Rng rng(11);
    const int nq = 12, ng = 30;
    std::vector<int> q(nq), g(ng);
    for (auto& v : q) v = rng.uniform_int(0, 4);
    for (auto& v : g) v = rng.uniform_int(0, 4);
    std::vector<std::vector<double>> d(nq, std::vector<double>(ng));
    for (auto& row : d)
        for (auto& v : row) v = std::round(rng.uniform() * 10) / 10;  // coarse values force ties
    const std::vector<int> ks{1, 5, 10};
    const auto base = cmc_map_from_distances(d, q, g, ks);

    std::vector<int> perm(ng);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    std::vector<std::vector<double>> dp(nq, std::vector<double>(ng)), dm = d;
    std::vector<int> gp(ng);
    for (int j = 0; j < ng; ++j) {
        gp[j] = g[perm[j]];
        for (int i = 0; i < nq; ++i) dp[i][j] = d[i][perm[j]];
    }
    for (auto& row : dm)
        for (auto& v : row) v = std::exp(3 * v) - 7;
    for (const auto& other : {cmc_map_from_distances(dp, q, gp, ks), cmc_map_from_distances(dm, q, g, ks)}) {
        CHECK(other.mAP == doctest::Approx(base.mAP).epsilon(1e-12));
        for (int k : ks) CHECK(other.rank.at(k) == base.rank.at(k));
    }
}

TEST_CASE("cosine retrieval ignores embedding scale") {
    EmbeddingSet qs{{{1, 0}, {0, 2}}, {0, 1}, {Modality::Infrared, Modality::Infrared}};
    EmbeddingSet gs{{{5, 0.1}, {0.1, 0.3}, {-1, -1}}, {0, 1, 2}, std::vector<Modality>(3, Modality::Visible)};
    const auto m = cmc_map(qs, gs, kRanks);
    CHECK(m.rank.at(1) == 1.0);
    CHECK(m.mAP == 1.0);
    EmbeddingSet bad = qs;
    bad.vectors[1].push_back(1.0);
    CHECK_THROWS_AS(bad.validate(), ContractError);
    bad = qs;
    bad.vectors[0][0] = std::nan("");
    CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("gap features and modality gap") {
    const auto f = gap_features(constant_images(2, 0.25f));
    CHECK(f.size() == 2);
    CHECK(f[0].size() == 128);
    for (std::size_t i = 0; i < 128; ++i) CHECK(f[0][i] == doctest::Approx(i % 2 == 0 ? 0.25 : 0.0));
    // 64 means move by 0.5 each: distance 0.5 * sqrt(64).
    CHECK(modality_gap(f, gap_features(constant_images(3, -0.25f))) == doctest::Approx(4.0));
    CHECK(modality_gap(f, f) == 0.0);

    const TensorF v = renders(4, 3, Modality::Visible, 1);
    const TensorF i = renders(4, 3, Modality::Infrared, 1);
    const auto fv = gap_features(v), fi = gap_features(i);
    CHECK(modality_gap(fv, fi) == doctest::Approx(modality_gap(fi, fv)));
    CHECK(modality_gap(fv, fi) > 0.0);
    CHECK(gap_features(TensorF({1, 1, 64, 32}, 0.5f))[0] == gap_features(constant_images(1, 0.5f))[0]);
}

TEST_CASE("principal projection of collinear points") {
    std::vector<std::vector<double>> x;
    for (int k = 0; k < 10; ++k) x.push_back({1.0 * k, 2.0 * k, -1.0 * k});
    const auto p = pca_2d(x);
    CHECK(p.size() == 10);
    double var = 0.0;
    for (const auto& r : p) {
        CHECK(std::abs(r[1]) < 1e-9);
        var += r[0] * r[0];
    }
    // Total variance of k * (1, 2, -1) about its mean.
    double expect = 0.0;
    for (int k = 0; k < 10; ++k) expect += 6.0 * (k - 4.5) * (k - 4.5);
    CHECK(var == doctest::Approx(expect));
}

TEST_CASE("pearson correlation") {
    const std::vector<float> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{4, 3, 2, 1}, z{1, 1, 1, 1};
    CHECK(pearson(a, b) == doctest::Approx(1.0));
    CHECK(pearson(a, c) == doctest::Approx(-1.0));
    CHECK(pearson(a, z) == 0.0);
    const std::vector<float> d{1, 0, 0, 1};
    CHECK(pearson(a, d) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("identity preservation is one for the source itself") {
    ImageBatch src{renders(3, 1, Modality::Visible, 2), std::vector<Modality>(3, Modality::Visible)};
    const auto c = make_condition(src, {});
    for (double r : identity_preservation(src, c.data, {})) CHECK(r == doctest::Approx(1.0));
}

TEST_CASE("saturation statistic and modality scorer") {
    TensorF gray({1, 3, 2, 2}, 0.3f);
    TensorF rgb({1, 3, 2, 2});
    for (int k = 0; k < 4; ++k) {
        rgb[k] = 1.f;
        rgb[4 + k] = -1.f;
    }
    CHECK(saturation_statistic(gray)[0] == 0.0);
    CHECK(saturation_statistic(rgb)[0] == doctest::Approx(2.0));

    const TensorF v = renders(6, 2, Modality::Visible, 3);
    const TensorF i = renders(6, 2, Modality::Infrared, 3);
    const auto scorer = ModalityScorer::calibrate(v, i);
    const TensorF v2 = renders(6, 2, Modality::Visible, 4);
    const TensorF i2 = renders(6, 2, Modality::Infrared, 4);
    for (Modality m : scorer.classify(v2)) CHECK(m == Modality::Visible);
    for (Modality m : scorer.classify(i2)) CHECK(m == Modality::Infrared);
    for (Modality m : ModalityScorer{}.classify(TensorF({2, 1, 4, 4}, 0.5f))) CHECK(m == Modality::Infrared);
}

TEST_CASE("symmetric label noise") {
    Rng rng(6);
    std::vector<int> y(5000);
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = static_cast<int>(k % 5);
    CHECK(symmetric_label_noise(y, 5, 0.0, rng) == y);
    const auto all = symmetric_label_noise(y, 5, 1.0, rng);
    std::vector<int> hist(5, 0);
    for (std::size_t k = 0; k < y.size(); ++k) {
        CHECK(all[k] != y[k]);
        if (y[k] == 0) ++hist[all[k]];
    }
    CHECK(hist[0] == 0);
    for (int c = 1; c < 5; ++c) CHECK(std::abs(hist[c] - 250) < 60);
    const auto some = symmetric_label_noise(y, 5, 0.2, rng);
    int flipped = 0;
    for (std::size_t k = 0; k < y.size(); ++k) flipped += some[k] != y[k];
    // Binomial std sqrt(5000 * 0.16) ~ 28.
    CHECK(std::abs(flipped - 1000) < 120);
}

TEST_CASE("a two-identity classifier separates its training identities") {
    std::vector<int> labels;
    const TensorF x = renders(2, 8, Modality::Visible, 5, &labels);
    ReidConfig cfg;
    cfg.steps = 200;
    cfg.batch_size = 16;
    const auto res = train_reid({x, labels}, {}, cfg);
    CHECK(res.model.num_classes() == 2);
    CHECK(res.loss_log.size() == 200);
    CHECK(res.model.accuracy(x, labels) == 1.0);

    std::vector<int> fresh_labels;
    const TensorF fresh = renders(2, 4, Modality::Visible, 5, &fresh_labels, 50);
    CHECK(res.model.accuracy(fresh, fresh_labels) >= 0.75);

    const auto p = res.model.predict_proba(x);
    for (const auto& row : p) CHECK(row[0] + row[1] == doctest::Approx(1.0));
    CHECK(res.model.embed(x)[0].size() == 64);
}

TEST_CASE("classifier configuration errors") {
    ReidConfig cfg;
    cfg.steps = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    CHECK_THROWS_AS(ToyClassifier(cfg, 3, 60, 32, 0), ConfigError);
}
