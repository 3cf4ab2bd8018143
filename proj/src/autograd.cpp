#include "vidiff/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

namespace vidiff::ag {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;

void expect(bool cond, const char* op, const std::string& what) {
    if (!cond) throw ContractError(std::string(op) + ": " + what);
}

// col: [C*k*k, H*W] for one image plane stack [C, H, W].
template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int pad, T* col) {
    const int hw = h * w;
    for (int ch = 0; ch < c; ++ch)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                T* row = col + static_cast<std::size_t>((ch * k + ki) * k + kj) * hw;
                const T* plane = x + static_cast<std::size_t>(ch) * hw;
                const int dj = kj - pad;
                const int j0 = std::max(0, -dj), j1 = std::min(w, w - dj);
                for (int i = 0; i < h; ++i) {
                    const int si = i + ki - pad;
                    T* dst = row + i * w;
                    if (si < 0 || si >= h) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    std::fill(dst, dst + j0, T(0));
                    std::copy(plane + si * w + j0 + dj, plane + si * w + j1 + dj, dst + j0);
                    std::fill(dst + j1, dst + w, T(0));
                }
            }
}

template <typename T>
void col2im(const T* col, int c, int h, int w, int k, int pad, T* x) {
    const int hw = h * w;
    for (int ch = 0; ch < c; ++ch)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const T* row = col + static_cast<std::size_t>((ch * k + ki) * k + kj) * hw;
                T* plane = x + static_cast<std::size_t>(ch) * hw;
                const int dj = kj - pad;
                const int j0 = std::max(0, -dj), j1 = std::min(w, w - dj);
                for (int i = 0; i < h; ++i) {
                    const int si = i + ki - pad;
                    if (si < 0 || si >= h) continue;
                    T* dst = plane + si * w + dj;
                    const T* src = row + i * w;
                    for (int j = j0; j < j1; ++j) dst[j] += src[j];
                }
            }
}

}  // namespace

template <typename T>
Var Graph<T>::push(Tensor<T> value, bool needs_grad) {
    Node n;
    n.own = std::move(value);
    n.needs_grad = needs_grad && record_;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
    return push(std::move(value), false);
}

template <typename T>
Var Graph<T>::param(const Tensor<T>& value, Tensor<T>* sink) {
    Node n;
    n.ext = &value;
    n.sink = sink;
    n.needs_grad = record_ && sink != nullptr;
    if (sink && sink->shape() != value.shape()) throw ContractError("param: gradient sink shape mismatch");
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
    return node(v).val();
}

template <typename T>
Tensor<T>& Graph<T>::grad_of(Var v) {
    Node& n = node(v);
    if (n.grad.shape() != n.val().shape()) n.grad = Tensor<T>(n.val().shape());
    return n.grad;
}

template <typename T>
bool Graph<T>::any_grad(std::initializer_list<Var> vs) const {
    if (!record_) return false;
    return std::any_of(vs.begin(), vs.end(), [&](Var v) { return v.valid() && node(v).needs_grad; });
}

template <typename T>
void Graph<T>::backward(Var out, const Tensor<T>& seed) {
    expect(record_, "backward", "graph was built without recording");
    expect(seed.shape() == value(out).shape(), "backward", "seed shape mismatch");
    Tensor<T>& g = grad_of(out);
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
    for (int id = out.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.back) n.back();
        if (n.sink)
            for (std::size_t i = 0; i < n.grad.size(); ++i) (*n.sink)[i] += n.grad[i];
    }
}

template <typename T>
Var Graph<T>::conv2d(Var xv, Var wv, Var bv, int pad) {
    const auto& x = value(xv);
    const auto& w = value(wv);
    expect(x.rank() == 4 && w.rank() == 4, "conv2d", "expects rank-4 input and weight");
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int co = w.dim(0), k = w.dim(2);
    expect(w.dim(1) == ci, "conv2d", "input channels " + std::to_string(ci) + " != weight " + std::to_string(w.dim(1)));
    expect(k == 2 * pad + 1, "conv2d", "only 'same' padding is supported");
    const bool has_b = bv.valid();
    if (has_b) expect(value(bv).size() == static_cast<std::size_t>(co), "conv2d", "bias size");
    const int hw = h * wd, kk = ci * k * k;
    Tensor<T> out({n, co, h, wd});
    CMapM<T> W(w.data(), co, kk);
    Mat<T> col(k == 1 ? 0 : kk, k == 1 ? 0 : hw);
    for (int b = 0; b < n; ++b) {
        const T* xb = x.data() + static_cast<std::size_t>(b) * ci * hw;
        MapM<T> Y(out.data() + static_cast<std::size_t>(b) * co * hw, co, hw);
        if (k == 1) {
            Y.noalias() = W * CMapM<T>(xb, ci, hw);
        } else {
            im2col(xb, ci, h, wd, k, pad, col.data());
            Y.noalias() = W * col;
        }
        if (has_b) {
            const T* bias = value(bv).data();
            for (int o = 0; o < co; ++o) Y.row(o).array() += bias[o];
        }
    }
    Var ov = push(std::move(out), any_grad({xv, wv, bv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, xv, wv, bv, n, ci, h, wd, co, k, pad, hw, kk, has_b] {
            const Tensor<T>& gy = node(ov).grad;
            const auto& x = value(xv);
            CMapM<T> W(value(wv).data(), co, kk);
            const bool gx_on = node(xv).needs_grad, gw_on = node(wv).needs_grad;
            const bool gb_on = has_b && node(bv).needs_grad;
            Mat<T> col(kk, hw), dcol(kk, hw);
            for (int b = 0; b < n; ++b) {
                CMapM<T> GY(gy.data() + static_cast<std::size_t>(b) * co * hw, co, hw);
                const T* xb = x.data() + static_cast<std::size_t>(b) * ci * hw;
                if (gw_on) {
                    MapM<T> GW(grad_of(wv).data(), co, kk);
                    if (k == 1)
                        GW.noalias() += GY * CMapM<T>(xb, ci, hw).transpose();
                    else {
                        im2col(xb, ci, h, wd, k, pad, col.data());
                        GW.noalias() += GY * col.transpose();
                    }
                }
                if (gb_on) {
                    T* gb = grad_of(bv).data();
                    for (int o = 0; o < co; ++o) gb[o] += GY.row(o).sum();
                }
                if (gx_on) {
                    T* gxb = grad_of(xv).data() + static_cast<std::size_t>(b) * ci * hw;
                    if (k == 1) {
                        MapM<T>(gxb, ci, hw).noalias() += W.transpose() * GY;
                    } else {
                        dcol.noalias() = W.transpose() * GY;
                        col2im(dcol.data(), ci, h, wd, k, pad, gxb);
                    }
                }
            }
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::linear(Var xv, Var wv, Var bv) {
    const auto& x = value(xv);
    const auto& w = value(wv);
    expect(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1), "linear",
           "shapes " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
    const int n = x.dim(0), f = x.dim(1), o = w.dim(0);
    Tensor<T> out({n, o});
    MapM<T> Y(out.data(), n, o);
    Y.noalias() = CMapM<T>(x.data(), n, f) * CMapM<T>(w.data(), o, f).transpose();
    if (bv.valid())
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < o; ++c) Y(r, c) += value(bv)[c];
    Var ov = push(std::move(out), any_grad({xv, wv, bv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, xv, wv, bv, n, f, o] {
            CMapM<T> GY(node(ov).grad.data(), n, o);
            if (node(wv).needs_grad)
                MapM<T>(grad_of(wv).data(), o, f).noalias() += GY.transpose() * CMapM<T>(value(xv).data(), n, f);
            if (bv.valid() && node(bv).needs_grad) {
                T* gb = grad_of(bv).data();
                for (int c = 0; c < o; ++c) gb[c] += GY.col(c).sum();
            }
            if (node(xv).needs_grad)
                MapM<T>(grad_of(xv).data(), n, f).noalias() += GY * CMapM<T>(value(wv).data(), o, f);
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::silu(Var xv) {
    const auto& x = value(xv);
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    Tensor<T> out(x.shape());
    Eigen::Map<const Arr> X(x.data(), static_cast<Eigen::Index>(x.size()));
    Eigen::Map<Arr>(out.data(), static_cast<Eigen::Index>(x.size())) = X / (T(1) + (-X).exp());
    Var ov = push(std::move(out), any_grad({xv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, xv] {
            const auto& x = value(xv);
            const auto n = static_cast<Eigen::Index>(x.size());
            Eigen::Map<const Arr> X(x.data(), n), GY(node(ov).grad.data(), n);
            const Arr sig = T(1) / (T(1) + (-X).exp());
            Eigen::Map<Arr>(grad_of(xv).data(), n) += GY * sig * (T(1) + X * (T(1) - sig));
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::group_norm(Var xv, Var gv, Var bv, int groups, T eps) {
    const auto& x = value(xv);
    expect(x.rank() == 4, "group_norm", "expects NCHW");
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    expect(groups > 0 && c % groups == 0, "group_norm",
           std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
    const int cpg = c / groups;
    const std::size_t gsize = static_cast<std::size_t>(cpg) * hw;
    Tensor<T> xhat(x.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(n) * groups);
    const T* gamma = value(gv).data();
    const T* beta = value(bv).data();
    Tensor<T> out(x.shape());
    for (int b = 0; b < n; ++b)
        for (int g = 0; g < groups; ++g) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + g * cpg) * hw;
            const T* src = x.data() + off;
            double sum = 0.0, sq = 0.0;
            for (std::size_t i = 0; i < gsize; ++i) sum += src[i];
            const double mean = sum / static_cast<double>(gsize);
            for (std::size_t i = 0; i < gsize; ++i) sq += (src[i] - mean) * (src[i] - mean);
            const T is = static_cast<T>(1.0 / std::sqrt(sq / static_cast<double>(gsize) + eps));
            const T m = static_cast<T>(mean);
            inv_std[b * groups + g] = is;
            for (int cc = 0; cc < cpg; ++cc) {
                const int ch = g * cpg + cc;
                const std::size_t o = off + static_cast<std::size_t>(cc) * hw;
                for (int i = 0; i < hw; ++i) {
                    const T xh = (x[o + i] - m) * is;
                    xhat[o + i] = xh;
                    out[o + i] = gamma[ch] * xh + beta[ch];
                }
            }
        }
    Var ov = push(std::move(out), any_grad({xv, gv, bv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, xv, gv, bv, n, c, hw, groups, cpg, xhat = std::move(xhat),
                         inv_std = std::move(inv_std)] {
            const auto& gy = node(ov).grad;
            const T* gamma = value(gv).data();
            const bool gg_on = node(gv).needs_grad, gb_on = node(bv).needs_grad, gx_on = node(xv).needs_grad;
            const double gsize = static_cast<double>(cpg) * hw;
            for (int b = 0; b < n; ++b)
                for (int g = 0; g < groups; ++g) {
                    const std::size_t off = (static_cast<std::size_t>(b) * c + g * cpg) * hw;
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (int cc = 0; cc < cpg; ++cc) {
                        const int ch = g * cpg + cc;
                        const std::size_t o = off + static_cast<std::size_t>(cc) * hw;
                        T sdy = 0, sdyx = 0;
                        for (int i = 0; i < hw; ++i) {
                            sdy += gy[o + i];
                            sdyx += gy[o + i] * xhat[o + i];
                        }
                        if (gg_on) grad_of(gv)[ch] += sdyx;
                        if (gb_on) grad_of(bv)[ch] += sdy;
                        mean_d += static_cast<double>(gamma[ch]) * sdy;
                        mean_dx += static_cast<double>(gamma[ch]) * sdyx;
                    }
                    if (!gx_on) continue;
                    const T md = static_cast<T>(mean_d / gsize), mdx = static_cast<T>(mean_dx / gsize);
                    const T is = inv_std[b * groups + g];
                    T* gx = grad_of(xv).data();
                    for (int cc = 0; cc < cpg; ++cc) {
                        const T gm = gamma[g * cpg + cc];
                        const std::size_t o = off + static_cast<std::size_t>(cc) * hw;
                        for (int i = 0; i < hw; ++i) gx[o + i] += is * (gy[o + i] * gm - md - xhat[o + i] * mdx);
                    }
                }
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::add(Var av, Var bv) {
    const auto& a = value(av);
    const auto& b = value(bv);
    expect(a.shape() == b.shape(), "add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    Var ov = push(std::move(out), any_grad({av, bv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, av, bv] {
            const auto& gy = node(ov).grad;
            for (Var v : {av, bv}) {
                if (!node(v).needs_grad) continue;
                auto& g = grad_of(v);
                for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
            }
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::add_channel(Var xv, Var vv) {
    const auto& x = value(xv);
    const auto& v = value(vv);
    expect(x.rank() == 4 && v.rank() == 2 && v.dim(0) == x.dim(0) && v.dim(1) == x.dim(1), "add_channel",
           shape_str(x.shape()) + " + " + shape_str(v.shape()));
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> out(x.shape());
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
            const T add = v[b * c + ch];
            for (int i = 0; i < hw; ++i) out[off + i] = x[off + i] + add;
        }
    Var ov = push(std::move(out), any_grad({xv, vv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, xv, vv, n, c, hw] {
            const auto& gy = node(ov).grad;
            if (node(xv).needs_grad) {
                auto& gx = grad_of(xv);
                for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
            }
            if (node(vv).needs_grad) {
                auto& gv = grad_of(vv);
                for (int b = 0; b < n; ++b)
                    for (int ch = 0; ch < c; ++ch) {
                        const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
                        T s = 0;
                        for (int i = 0; i < hw; ++i) s += gy[off + i];
                        gv[b * c + ch] += s;
                    }
            }
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::mul_channel(Var xv, Var vv) {
    const auto& x = value(xv);
    const auto& v = value(vv);
    expect(x.rank() == 4 && v.rank() == 2 && v.dim(0) == x.dim(0) && v.dim(1) == x.dim(1), "mul_channel",
           shape_str(x.shape()) + " * " + shape_str(v.shape()));
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> out(x.shape());
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
            const T scale = v[b * c + ch];
            for (int i = 0; i < hw; ++i) out[off + i] = x[off + i] * scale;
        }
    Var ov = push(std::move(out), any_grad({xv, vv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, xv, vv, n, c, hw] {
            const auto& gy = node(ov).grad;
            const auto& x = value(xv);
            const auto& v = value(vv);
            const bool gx_on = node(xv).needs_grad, gv_on = node(vv).needs_grad;
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
                    if (gx_on) {
                        auto& gx = grad_of(xv);
                        const T scale = v[b * c + ch];
                        for (int i = 0; i < hw; ++i) gx[off + i] += gy[off + i] * scale;
                    }
                    if (gv_on) {
                        T s = 0;
                        for (int i = 0; i < hw; ++i) s += gy[off + i] * x[off + i];
                        grad_of(vv)[b * c + ch] += s;
                    }
                }
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::avg_pool2(Var xv) {
    const auto& x = value(xv);
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    expect(h % 2 == 0 && w % 2 == 0, "avg_pool2", "spatial size must be even, got " + shape_str(x.shape()));
    const int oh = h / 2, ow = w / 2;
    Tensor<T> out({n, c, oh, ow});
    for (int p = 0; p < n * c; ++p)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                const T* src = x.data() + static_cast<std::size_t>(p) * h * w;
                out[(static_cast<std::size_t>(p) * oh + i) * ow + j] =
                    T(0.25) * (src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] + src[(2 * i + 1) * w + 2 * j] +
                               src[(2 * i + 1) * w + 2 * j + 1]);
            }
    Var ov = push(std::move(out), any_grad({xv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, xv, n, c, h, w, oh, ow] {
            const auto& gy = node(ov).grad;
            auto& gx = grad_of(xv);
            for (int p = 0; p < n * c; ++p)
                for (int i = 0; i < oh; ++i)
                    for (int j = 0; j < ow; ++j) {
                        const T g = T(0.25) * gy[(static_cast<std::size_t>(p) * oh + i) * ow + j];
                        T* dst = gx.data() + static_cast<std::size_t>(p) * h * w;
                        dst[2 * i * w + 2 * j] += g;
                        dst[2 * i * w + 2 * j + 1] += g;
                        dst[(2 * i + 1) * w + 2 * j] += g;
                        dst[(2 * i + 1) * w + 2 * j + 1] += g;
                    }
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::upsample2(Var xv) {
    const auto& x = value(xv);
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = 2 * h, ow = 2 * w;
    Tensor<T> out({n, c, oh, ow});
    for (int p = 0; p < n * c; ++p)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j)
                out[(static_cast<std::size_t>(p) * oh + i) * ow + j] =
                    x[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2];
    Var ov = push(std::move(out), any_grad({xv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, xv, n, c, h, w, oh, ow] {
            const auto& gy = node(ov).grad;
            auto& gx = grad_of(xv);
            for (int p = 0; p < n * c; ++p)
                for (int i = 0; i < oh; ++i)
                    for (int j = 0; j < ow; ++j)
                        gx[(static_cast<std::size_t>(p) * h + i / 2) * w + j / 2] +=
                            gy[(static_cast<std::size_t>(p) * oh + i) * ow + j];
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::concat_channels(Var av, Var bv) {
    const auto& a = value(av);
    const auto& b = value(bv);
    expect(a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
           "concat_channels", shape_str(a.shape()) + " ++ " + shape_str(b.shape()));
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
    Tensor<T> out({n, ca + cb, a.dim(2), a.dim(3)});
    for (int i = 0; i < n; ++i) {
        std::copy_n(a.data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
        std::copy_n(b.data() + i * cb * hw, cb * hw, out.data() + (i * (ca + cb) + ca) * hw);
    }
    Var ov = push(std::move(out), any_grad({av, bv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, av, bv, n, ca, cb, hw] {
            const auto& gy = node(ov).grad;
            for (int i = 0; i < n; ++i) {
                if (node(av).needs_grad) {
                    T* g = grad_of(av).data() + i * ca * hw;
                    const T* s = gy.data() + i * (ca + cb) * hw;
                    for (std::size_t k = 0; k < ca * hw; ++k) g[k] += s[k];
                }
                if (node(bv).needs_grad) {
                    T* g = grad_of(bv).data() + i * cb * hw;
                    const T* s = gy.data() + (i * (ca + cb) + ca) * hw;
                    for (std::size_t k = 0; k < cb * hw; ++k) g[k] += s[k];
                }
            }
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::attention(Var qkvv) {
    const auto& qkv = value(qkvv);
    expect(qkv.rank() == 4 && qkv.dim(1) % 3 == 0, "attention", "expects [N, 3C, H, W]");
    const int n = qkv.dim(0), c = qkv.dim(1) / 3, l = qkv.dim(2) * qkv.dim(3);
    const T scale = T(1) / std::sqrt(static_cast<T>(c));
    Tensor<T> out({n, c, qkv.dim(2), qkv.dim(3)});
    std::vector<Mat<T>> probs(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) {
        const T* base = qkv.data() + static_cast<std::size_t>(b) * 3 * c * l;
        CMapM<T> Q(base, c, l), K(base + c * l, c, l), V(base + 2 * c * l, c, l);
        Mat<T> S = (Q.transpose() * K) * scale;  // [L, L], row i = query i
        for (int i = 0; i < l; ++i) {
            const T m = S.row(i).maxCoeff();
            S.row(i) = (S.row(i).array() - m).exp();
            S.row(i) /= S.row(i).sum();
        }
        MapM<T>(out.data() + static_cast<std::size_t>(b) * c * l, c, l).noalias() = V * S.transpose();
        probs[b] = std::move(S);
    }
    Var ov = push(std::move(out), any_grad({qkvv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, qkvv, n, c, l, scale, probs = std::move(probs)] {
            const auto& gy = node(ov).grad;
            const auto& qkv = value(qkvv);
            auto& gq = grad_of(qkvv);
            for (int b = 0; b < n; ++b) {
                const T* base = qkv.data() + static_cast<std::size_t>(b) * 3 * c * l;
                T* gbase = gq.data() + static_cast<std::size_t>(b) * 3 * c * l;
                CMapM<T> Q(base, c, l), K(base + c * l, c, l), V(base + 2 * c * l, c, l);
                CMapM<T> GO(gy.data() + static_cast<std::size_t>(b) * c * l, c, l);
                const Mat<T>& P = probs[b];
                MapM<T>(gbase + 2 * c * l, c, l).noalias() += GO * P;
                Mat<T> dP = GO.transpose() * V;  // [L, L]
                Mat<T> dS(l, l);
                for (int i = 0; i < l; ++i) {
                    const T dot = (dP.row(i).array() * P.row(i).array()).sum();
                    dS.row(i) = P.row(i).array() * (dP.row(i).array() - dot) * scale;
                }
                MapM<T>(gbase, c, l).noalias() += K * dS.transpose();
                MapM<T>(gbase + c * l, c, l).noalias() += Q * dS;
            }
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::embedding(Var tv, std::vector<int> rows) {
    const auto& table = value(tv);
    expect(table.rank() == 2, "embedding", "table must be rank 2");
    const int k = table.dim(0), e = table.dim(1), n = static_cast<int>(rows.size());
    Tensor<T> out({n, e});
    for (int i = 0; i < n; ++i) {
        expect(rows[i] >= 0 && rows[i] < k, "embedding", "row index out of range");
        std::copy_n(table.data() + rows[i] * e, e, out.data() + i * e);
    }
    Var ov = push(std::move(out), any_grad({tv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, tv, e, rows = std::move(rows)] {
            const auto& gy = node(ov).grad;
            auto& gt = grad_of(tv);
            for (std::size_t i = 0; i < rows.size(); ++i)
                for (int j = 0; j < e; ++j) gt[rows[i] * e + j] += gy[i * e + j];
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::global_avg_pool(Var xv) {
    const auto& x = value(xv);
    expect(x.rank() == 4, "global_avg_pool", "expects NCHW");
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> out({n, c});
    for (int p = 0; p < n * c; ++p) {
        T s = 0;
        for (int i = 0; i < hw; ++i) s += x[static_cast<std::size_t>(p) * hw + i];
        out[p] = s / hw;
    }
    Var ov = push(std::move(out), any_grad({xv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, xv, n, c, hw] {
            const auto& gy = node(ov).grad;
            auto& gx = grad_of(xv);
            for (int p = 0; p < n * c; ++p)
                for (int i = 0; i < hw; ++i) gx[static_cast<std::size_t>(p) * hw + i] += gy[p] / hw;
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::flatten(Var xv) {
    const auto& x = value(xv);
    expect(x.rank() >= 2, "flatten", "expects a batch dimension");
    const int n = x.dim(0);
    const int f = static_cast<int>(x.size() / static_cast<std::size_t>(n));
    Var ov = push(x.reshaped({n, f}), any_grad({xv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, xv] {
            const auto& gy = node(ov).grad;
            auto& gx = grad_of(xv);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
        };
    }
    return ov;
}

template <typename T>
Var Graph<T>::mse(Var xv, const Tensor<T>& target) {
    const auto& x = value(xv);
    expect(x.shape() == target.shape(), "mse", shape_str(x.shape()) + " vs " + shape_str(target.shape()));
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(x[i] - target[i]) * (x[i] - target[i]);
    const std::size_t count = x.size();
    Tensor<T> out({1}, static_cast<T>(s / static_cast<double>(count)));
    Var ov = push(std::move(out), any_grad({xv}));
    if (node(ov).needs_grad) {
        node(ov).back = [this, ov, xv, target, count] {
            const T g = node(ov).grad[0] * T(2) / static_cast<T>(count);
            const auto& x = value(xv);
            auto& gx = grad_of(xv);
            for (std::size_t i = 0; i < count; ++i) gx[i] += g * (x[i] - target[i]);
        };
    }
    return ov;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace vidiff::ag
