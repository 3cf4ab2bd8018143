#include "vidiff/evalkit.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "vidiff/trainer.hpp"

namespace vidiff {

void EmbeddingSet::validate() const {
    if (labels.size() != vectors.size()) throw ContractError("embedding set: one label per vector required");
    if (!modality.empty() && modality.size() != vectors.size())
        throw ContractError("embedding set: modality tags do not match vectors");
    const std::size_t d = dim();
    for (const auto& v : vectors) {
        if (v.size() != d) throw ContractError("embedding set: ragged vectors");
        for (double x : v)
            if (!std::isfinite(x)) throw ContractError("embedding set: non-finite value");
    }
    for (int l : labels)
        if (l < 0) throw ContractError("embedding set: negative label");
}

RetrievalMetrics cmc_map_from_distances(const std::vector<std::vector<double>>& dist,
                                        std::span<const int> query_labels, std::span<const int> gallery_labels,
                                        std::span<const int> ks) {
    if (dist.size() != query_labels.size()) throw ContractError("cmc_map: distance rows do not match queries");
    for (int k : ks)
        if (k < 1) throw ContractError("cmc_map: ranks must be >= 1");
    RetrievalMetrics m;
    for (int k : ks) m.rank[k] = 0.0;
    const std::size_t g = gallery_labels.size();
    std::vector<std::size_t> order(g);
    for (std::size_t q = 0; q < dist.size(); ++q) {
        if (dist[q].size() != g) throw ContractError("cmc_map: distance columns do not match gallery");
        auto positive = [&](std::size_t j) { return gallery_labels[j] == query_labels[q]; };
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (dist[q][a] != dist[q][b]) return dist[q][a] < dist[q][b];
            return !positive(a) && positive(b);
        });
        int hits = 0;
        double ap = 0.0;
        std::size_t first = g;
        for (std::size_t r = 0; r < g; ++r)
            if (positive(order[r])) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(r + 1);
                first = std::min(first, r);
            }
        if (hits == 0) {
            ++m.excluded;
            continue;
        }
        ++m.evaluated;
        m.mAP += ap / hits;
        for (int k : ks)
            if (first < static_cast<std::size_t>(k)) m.rank[k] += 1.0;
    }
    if (m.excluded > 0) spdlog::warn("cmc_map: {} queries without a positive gallery item were excluded", m.excluded);
    if (m.evaluated > 0) {
        m.mAP /= m.evaluated;
        for (auto& [k, v] : m.rank) v /= m.evaluated;
    }
    return m;
}

namespace {

std::vector<double> normalized(const std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    std::vector<double> out(v);
    if (n > 0.0)
        for (auto& x : out) x /= n;
    return out;
}

}  // namespace

RetrievalMetrics cmc_map(const EmbeddingSet& queries, const EmbeddingSet& gallery, std::span<const int> ks) {
    queries.validate();
    gallery.validate();
    if (queries.dim() != gallery.dim()) throw ContractError("cmc_map: query and gallery dimensions differ");
    std::vector<std::vector<double>> gn;
    for (const auto& v : gallery.vectors) gn.push_back(normalized(v));
    std::vector<std::vector<double>> dist(queries.size(), std::vector<double>(gallery.size()));
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto qn = normalized(queries.vectors[q]);
        for (std::size_t j = 0; j < gn.size(); ++j)
            dist[q][j] = 1.0 - std::inner_product(qn.begin(), qn.end(), gn[j].begin(), 0.0);
    }
    return cmc_map_from_distances(dist, queries.labels, gallery.labels, ks);
}

std::vector<std::vector<double>> gap_features(const TensorF& images, int grid) {
    if (images.rank() != 4) throw ContractError("gap_features expects NCHW input");
    const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    if (grid < 1 || h % grid != 0 || w % grid != 0)
        throw ContractError("gap_features: image size must be divisible by the grid");
    const int ch = h / grid, cw = w / grid;
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) {
        auto& f = out[b];
        f.reserve(static_cast<std::size_t>(2 * grid * grid));
        for (int gi = 0; gi < grid; ++gi)
            for (int gj = 0; gj < grid; ++gj) {
                double s = 0.0, s2 = 0.0;
                for (int i = gi * ch; i < (gi + 1) * ch; ++i)
                    for (int j = gj * cw; j < (gj + 1) * cw; ++j) {
                        double l = 0.0;
                        for (int k = 0; k < c; ++k) l += images.at(b, k, i, j);
                        l /= c;
                        s += l;
                        s2 += l * l;
                    }
                const double cnt = ch * cw, mean = s / cnt;
                f.push_back(mean);
                f.push_back(std::sqrt(std::max(0.0, s2 / cnt - mean * mean)));
            }
    }
    return out;
}

double modality_gap(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    if (a.empty() || b.empty()) throw ContractError("modality_gap: empty feature set");
    const std::size_t d = a.front().size();
    auto centre = [d](const std::vector<std::vector<double>>& s) {
        std::vector<double> m(d, 0.0);
        for (const auto& v : s) {
            if (v.size() != d) throw ContractError("modality_gap: feature dimensions differ");
            for (std::size_t i = 0; i < d; ++i) m[i] += v[i];
        }
        for (auto& x : m) x /= static_cast<double>(s.size());
        return m;
    };
    const auto ma = centre(a), mb = centre(b);
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += (ma[i] - mb[i]) * (ma[i] - mb[i]);
    return std::sqrt(s);
}

double modality_gap(const EmbeddingSet& a, const EmbeddingSet& b) { return modality_gap(a.vectors, b.vectors); }

std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& x) {
    if (x.empty()) return {};
    const Eigen::Index n = static_cast<Eigen::Index>(x.size()), d = static_cast<Eigen::Index>(x.front().size());
    Eigen::MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = x[i][j];
    m.rowwise() -= m.colwise().mean();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.transpose() * m);
    // Eigenvalues come in increasing order.
    Eigen::MatrixXd basis(d, 2);
    basis.col(0) = es.eigenvectors().col(d - 1);
    basis.col(1) = d > 1 ? Eigen::VectorXd(es.eigenvectors().col(d - 2)) : Eigen::VectorXd::Zero(d);
    const Eigen::MatrixXd p = m * basis;
    std::vector<std::array<double, 2>> out(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) out[i] = {p(i, 0), p(i, 1)};
    return out;
}

double pearson(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size() || a.empty()) throw ContractError("pearson: size mismatch");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) {
        spdlog::warn("pearson: zero-variance input, correlation defined as 0");
        return 0.0;
    }
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> identity_preservation(const ImageBatch& x_gen, const TensorF& c_src, const FilterConfig& filter) {
    const ConditionBatch c_gen = make_condition(x_gen, filter);
    if (c_gen.data.shape() != c_src.shape())
        throw ContractError("identity_preservation: " + shape_str(c_gen.data.shape()) + " vs " +
                            shape_str(c_src.shape()));
    const int n = x_gen.size();
    const std::size_t per = c_src.size() / static_cast<std::size_t>(std::max(1, n));
    std::vector<double> out;
    for (int b = 0; b < n; ++b)
        out.push_back(pearson({c_gen.data.data() + b * per, per}, {c_src.data() + b * per, per}));
    return out;
}

std::vector<double> saturation_statistic(const TensorF& images) {
    if (images.rank() != 4) throw ContractError("saturation_statistic expects NCHW input");
    const int n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
    std::vector<double> out(static_cast<std::size_t>(n), 0.0);
    if (c == 1) return out;
    for (int b = 0; b < n; ++b) {
        double s = 0.0;
        for (int p = 0; p < hw; ++p) {
            float lo = images[(static_cast<std::size_t>(b) * c) * hw + p], hi = lo;
            for (int k = 1; k < c; ++k) {
                const float v = images[(static_cast<std::size_t>(b) * c + k) * hw + p];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            s += hi - lo;
        }
        out[b] = s / hw;
    }
    return out;
}

std::vector<Modality> ModalityScorer::classify(const TensorF& images) const {
    const auto s = saturation_statistic(images);
    std::vector<Modality> out;
    const bool gray = images.dim(1) == 1;
    for (double v : s) out.push_back(!gray && v > threshold ? Modality::Visible : Modality::Infrared);
    return out;
}

ModalityScorer ModalityScorer::calibrate(const TensorF& visible, const TensorF& infrared) {
    const auto sv = saturation_statistic(visible), si = saturation_statistic(infrared);
    if (sv.empty() || si.empty()) throw ContractError("calibration needs both modalities");
    const double vmin = *std::min_element(sv.begin(), sv.end());
    const double imax = *std::max_element(si.begin(), si.end());
    if (vmin > imax) return {0.5 * (vmin + imax)};
    const double mv = std::accumulate(sv.begin(), sv.end(), 0.0) / sv.size();
    const double mi = std::accumulate(si.begin(), si.end(), 0.0) / si.size();
    spdlog::warn("modality calibration: classes overlap, using midpoint of means");
    return {0.5 * (mv + mi)};
}

// --- classifier ----------------------------------------------------------------

void ReidConfig::validate() const {
    if (steps < 0) throw ConfigError("steps must be >= 0", "reid.steps");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1", "reid.batch_size");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive", "reid.learning_rate");
    if (embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1", "reid.embedding_dim");
    if (width < 1) throw ConfigError("width must be >= 1", "reid.width");
    if (num_classes < 0) throw ConfigError("num_classes must be >= 0", "reid.num_classes");
    gce.validate();
    if (!(lsr.alpha >= 0.0 && lsr.alpha < 1.0)) throw ConfigError("lsr alpha must lie in [0, 1)", "labels.lsr_alpha");
}

ToyClassifier::ToyClassifier(ReidConfig cfg, int channels, int height, int width, std::uint64_t seed)
    : cfg_(std::move(cfg)), channels_(channels), height_(height), width_(width) {
    cfg_.validate();
    if (cfg_.num_classes < 1) throw ConfigError("classifier needs at least one class", "reid.num_classes");
    if (height % 8 != 0 || width % 8 != 0) throw ConfigError("classifier input size must be divisible by 8", "reid");
    Rng rng(derive_seed(seed, 0xc1));
    auto gauss = [&](Shape s, int fan_in) {
        TensorF t(std::move(s));
        const double sd = std::sqrt(1.0 / fan_in);
        for (auto& v : t.vec()) v = static_cast<float>(sd * rng.normal());
        return t;
    };
    const int w = cfg_.width;
    const int flat = 2 * w * (height / 8) * (width / 8);
    params_["c1.w"] = gauss({w, channels, 3, 3}, channels * 9);
    params_["c1.b"] = TensorF({w});
    params_["c2.w"] = gauss({2 * w, w, 3, 3}, w * 9);
    params_["c2.b"] = TensorF({2 * w});
    params_["c3.w"] = gauss({2 * w, 2 * w, 3, 3}, 2 * w * 9);
    params_["c3.b"] = TensorF({2 * w});
    params_["emb.w"] = gauss({cfg_.embedding_dim, flat}, flat);
    params_["emb.b"] = TensorF({cfg_.embedding_dim});
    params_["head.w"] = gauss({cfg_.num_classes, cfg_.embedding_dim}, cfg_.embedding_dim);
    params_["head.b"] = TensorF({cfg_.num_classes});
}

std::pair<ag::Var, ag::Var> ToyClassifier::forward(ag::Graph<float>& g, ParamStore<float>* grads,
                                                   const TensorF& x) const {
    if (x.rank() != 4 || x.dim(1) != channels_ || x.dim(2) != height_ || x.dim(3) != width_)
        throw ContractError("classifier input " + shape_str(x.shape()) + " does not match its configuration");
    auto p = [&](const std::string& name) {
        return g.param(params_.at(name), grads ? &grads->at(name) : nullptr);
    };
    ag::Var h = g.constant(x);
    for (const std::string s : {"c1", "c2", "c3"}) h = g.avg_pool2(g.silu(g.conv2d(h, p(s + ".w"), p(s + ".b"), 1)));
    const ag::Var emb = g.linear(g.flatten(h), p("emb.w"), p("emb.b"));
    const ag::Var logits = g.linear(g.silu(emb), p("head.w"), p("head.b"));
    return {emb, logits};
}

namespace {

std::vector<std::vector<double>> rows_of(const TensorF& t) {
    const int n = t.dim(0), d = t.dim(1);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n), std::vector<double>(d));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[i][j] = t[static_cast<std::size_t>(i) * d + j];
    return out;
}

TensorF gather_rows(const TensorF& x, std::span<const int> idx) {
    Shape s = x.shape();
    const std::size_t per = x.size() / static_cast<std::size_t>(s[0]);
    s[0] = static_cast<int>(idx.size());
    TensorF out(s);
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(x.data() + idx[i] * per, per, out.data() + i * per);
    return out;
}

template <typename F>
std::vector<std::vector<double>> chunked(const TensorF& x, F&& f) {
    constexpr int kChunk = 64;
    std::vector<std::vector<double>> out;
    for (int b = 0; b < x.dim(0); b += kChunk) {
        auto part = f(x.slice_batch(b, std::min(x.dim(0), b + kChunk)));
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

}  // namespace

std::vector<std::vector<double>> ToyClassifier::embed(const TensorF& x) const {
    return chunked(x, [&](const TensorF& part) {
        ag::Graph<float> g(false);
        return rows_of(g.value(forward(g, nullptr, part).first));
    });
}

std::vector<std::vector<double>> ToyClassifier::predict_proba(const TensorF& x) const {
    auto logits = chunked(x, [&](const TensorF& part) {
        ag::Graph<float> g(false);
        return rows_of(g.value(forward(g, nullptr, part).second));
    });
    for (auto& l : logits) l = softmax(l);
    return logits;
}

double ToyClassifier::accuracy(const TensorF& x, std::span<const int> labels) const {
    const auto p = predict_proba(x);
    if (p.size() != labels.size()) throw ContractError("accuracy: one label per image required");
    if (p.empty()) return 0.0;
    int hit = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        hit += static_cast<int>(std::max_element(p[i].begin(), p[i].end()) - p[i].begin()) == labels[i];
    return static_cast<double>(hit) / static_cast<double>(p.size());
}

ReidResult train_reid(const LabeledImages& real, const LabeledImages& generated, const ReidConfig& cfg_in) {
    cfg_in.validate();
    const int nr = real.images.empty() ? 0 : real.images.dim(0);
    const int ng = generated.images.empty() ? 0 : generated.images.dim(0);
    if (nr != static_cast<int>(real.labels.size()) || ng != static_cast<int>(generated.labels.size()))
        throw ContractError("train_reid: one label per image required");
    if (nr + ng == 0) throw ContractError("train_reid: no training images");
    if (nr > 0 && ng > 0 && real.images.shape()[1] != generated.images.shape()[1])
        throw ContractError("train_reid: streams have different image shapes");

    ReidConfig cfg = cfg_in;
    int max_label = -1;
    for (int l : real.labels) max_label = std::max(max_label, l);
    for (int l : generated.labels) max_label = std::max(max_label, l);
    if (cfg.num_classes == 0) cfg.num_classes = max_label + 1;
    if (max_label >= cfg.num_classes) throw ContractError("train_reid: label outside [0, num_classes)");
    cfg.lsr.K = cfg.num_classes;

    if (nr > 0 && ng > 0) {
        const std::set<int> a(real.labels.begin(), real.labels.end()), b(generated.labels.begin(), generated.labels.end());
        std::vector<int> common;
        std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
        if (common.empty()) spdlog::warn("train_reid: real and generated identity sets are disjoint");
    }

    const TensorF& shape_src = nr > 0 ? real.images : generated.images;
    ReidResult res{ToyClassifier(cfg, shape_src.dim(1), shape_src.dim(2), shape_src.dim(3), cfg.seed), {}};
    std::vector<TensorF> parts;
    if (nr > 0) parts.push_back(real.images);
    if (ng > 0) parts.push_back(generated.images);
    const TensorF all = concat_batch<float>(parts);
    std::vector<int> labels(real.labels);
    labels.insert(labels.end(), generated.labels.begin(), generated.labels.end());
    std::vector<Provenance> prov(static_cast<std::size_t>(nr), Provenance::Real);
    prov.resize(static_cast<std::size_t>(nr + ng), Provenance::Generated);

    TrainConfig opt_cfg;
    opt_cfg.learning_rate = cfg.learning_rate;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW opt(res.model.params(), opt_cfg);
    Rng rng(derive_seed(cfg.seed, 0xa7));
    const int n = nr + ng;
    std::vector<int> order(static_cast<std::size_t>(n));
    std::size_t cursor = order.size();
    std::vector<int> idx;
    for (int step = 0; step < cfg.steps; ++step) {
        idx.clear();
        while (static_cast<int>(idx.size()) < std::min(cfg.batch_size, n)) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), 0);
                std::shuffle(order.begin(), order.end(), rng.engine());
                cursor = 0;
            }
            idx.push_back(order[cursor++]);
        }
        const TensorF x = gather_rows(all, idx);
        ParamStore<float> grads = zeros_like(res.model.params());
        ag::Graph<float> g;
        const ag::Var logits = res.model.forward(g, &grads, x).second;
        const auto rows = rows_of(g.value(logits));
        std::vector<LabeledItem> items;
        for (std::size_t i = 0; i < idx.size(); ++i) items.push_back({rows[i], labels[idx[i]], prov[idx[i]]});
        const ObjectiveResult obj = mixed_objective(items, cfg.mode, cfg.gce, cfg.lsr);
        if (!std::isfinite(obj.loss)) throw NumericError("train_reid: non-finite loss at step " + std::to_string(step));
        TensorF seed(g.shape(logits));
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (int k = 0; k < cfg.num_classes; ++k)
                seed[i * cfg.num_classes + k] = static_cast<float>(obj.dlogits[i][k]);
        g.backward(logits, seed);
        opt.step(res.model.params(), grads);
        res.loss_log.push_back(obj.loss);
    }
    return res;
}

std::vector<int> symmetric_label_noise(std::span<const int> labels, int K, double rate, Rng& rng) {
    if (K < 2) throw ContractError("symmetric label noise needs at least two classes");
    std::vector<int> out(labels.begin(), labels.end());
    for (auto& l : out)
        if (rng.bernoulli(rate)) {
            const int r = rng.uniform_int(0, K - 2);
            l = r >= l ? r + 1 : r;
        }
    return out;
}

}  // namespace vidiff
