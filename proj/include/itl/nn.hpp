#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "itl/rng.hpp"
#include "itl/tensor.hpp"

namespace itl {

using ParamVisitor =
    std::function<void(const std::string& name, std::vector<double>& value,
                       std::vector<double>& grad)>;

namespace detail {
inline int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
}  // namespace detail

// ---------------------------------------------------------------------------
// Layers. Each layer keeps the activations its backward needs from the last
// training-mode forward; training runs one sample at a time, so one slot is
// enough. Gradients accumulate until zero_grad().
// ---------------------------------------------------------------------------

struct Conv2d {
    int ci = 0, co = 0, k = 3, stride = 1, pad = 1;
    std::vector<double> w, b, gw, gb;
    Tensor x_saved;

    Conv2d() = default;
    Conv2d(int ci_, int co_, int k_, int stride_, int pad_)
        : ci(ci_), co(co_), k(k_), stride(stride_), pad(pad_),
          w(static_cast<std::size_t>(co_) * ci_ * k_ * k_),
          b(co_), gw(w.size(), 0.0), gb(co_, 0.0) {}

    void init(Rng& rng) {
        // fan-in-scaled uniform; biases start at zero
        const double bound = 1.0 / std::sqrt(static_cast<double>(ci) * k * k);
        for (double& x : w) x = rng.uniform(-bound, bound);
        std::fill(b.begin(), b.end(), 0.0);
    }

    int out_dim(int in) const { return (in + 2 * pad - k) / stride + 1; }

    Tensor forward(const Tensor& x, bool train) {
        require(x.c == ci, "Conv2d: channel mismatch");
        const int oh = out_dim(x.h), ow = out_dim(x.w);
        Tensor y(co, oh, ow);
        for (int o = 0; o < co; ++o) {
            double* yc = y.channel(o);
            const double bo = b[o];
            for (std::size_t i = 0; i < y.plane(); ++i) yc[i] = bo;
            for (int c = 0; c < ci; ++c) {
                const double* xc = x.channel(c);
                for (int kh = 0; kh < k; ++kh) {
                    const int oy0 = std::max(0, detail::ceil_div(pad - kh, stride));
                    const int oy1 = std::min(oh, detail::floor_div(x.h - 1 - kh + pad, stride) + 1);
                    for (int kw = 0; kw < k; ++kw) {
                        const double wv = w[((static_cast<std::size_t>(o) * ci + c) * k + kh) * k + kw];
                        const int ox0 = std::max(0, detail::ceil_div(pad - kw, stride));
                        const int ox1 = std::min(ow, detail::floor_div(x.w - 1 - kw + pad, stride) + 1);
                        for (int oy = oy0; oy < oy1; ++oy) {
                            const int iy = oy * stride + kh - pad;
                            const double* xrow = xc + static_cast<std::size_t>(iy) * x.w +
                                                 (ox0 * stride + kw - pad);
                            double* yrow = yc + static_cast<std::size_t>(oy) * ow + ox0;
                            const int n = ox1 - ox0;
                            if (stride == 1) {
                                for (int i = 0; i < n; ++i) yrow[i] += wv * xrow[i];
                            } else {
                                for (int i = 0; i < n; ++i) yrow[i] += wv * xrow[i * stride];
                            }
                        }
                    }
                }
            }
        }
        if (train) x_saved = x;
        return y;
    }

    // Returns dL/dx; accumulates dL/dw, dL/db when accum_params is set.
    Tensor backward(const Tensor& gy, bool accum_params = true) {
        const Tensor& x = x_saved;
        require(x.c == ci, "Conv2d: backward without saved forward input");
        const int oh = gy.h, ow = gy.w;
        Tensor gx(ci, x.h, x.w);
        for (int o = 0; o < co; ++o) {
            const double* gyc = gy.channel(o);
            if (accum_params) {
                double s = 0.0;
                for (std::size_t i = 0; i < gy.plane(); ++i) s += gyc[i];
                gb[o] += s;
            }
            for (int c = 0; c < ci; ++c) {
                const double* xc = x.channel(c);
                double* gxc = gx.channel(c);
                for (int kh = 0; kh < k; ++kh) {
                    const int oy0 = std::max(0, detail::ceil_div(pad - kh, stride));
                    const int oy1 = std::min(oh, detail::floor_div(x.h - 1 - kh + pad, stride) + 1);
                    for (int kw = 0; kw < k; ++kw) {
                        const std::size_t widx =
                            ((static_cast<std::size_t>(o) * ci + c) * k + kh) * k + kw;
                        const double wv = w[widx];
                        const int ox0 = std::max(0, detail::ceil_div(pad - kw, stride));
                        const int ox1 = std::min(ow, detail::floor_div(x.w - 1 - kw + pad, stride) + 1);
                        double gwv = 0.0;
                        for (int oy = oy0; oy < oy1; ++oy) {
                            const int iy = oy * stride + kh - pad;
                            const std::size_t xoff = static_cast<std::size_t>(iy) * x.w +
                                                     (ox0 * stride + kw - pad);
                            const double* xrow = xc + xoff;
                            double* gxrow = gxc + xoff;
                            const double* gyrow = gyc + static_cast<std::size_t>(oy) * ow + ox0;
                            const int n = ox1 - ox0;
                            if (stride == 1) {
                                for (int i = 0; i < n; ++i) {
                                    gxrow[i] += wv * gyrow[i];
                                    gwv += gyrow[i] * xrow[i];
                                }
                            } else {
                                for (int i = 0; i < n; ++i) {
                                    gxrow[i * stride] += wv * gyrow[i];
                                    gwv += gyrow[i] * xrow[i * stride];
                                }
                            }
                        }
                        if (accum_params) gw[widx] += gwv;
                    }
                }
            }
        }
        return gx;
    }

    void visit_params(const std::string& prefix, const ParamVisitor& v) {
        v(prefix + ".w", w, gw);
        v(prefix + ".b", b, gb);
    }
};

struct ReLU {
    Tensor y_saved;

    Tensor forward(Tensor x, bool train) {
        for (double& d : x.v) d = d > 0.0 ? d : 0.0;
        if (train) y_saved = x;
        return x;
    }
    Tensor backward(Tensor gy) const {
        for (std::size_t i = 0; i < gy.v.size(); ++i)
            if (y_saved.v[i] <= 0.0) gy.v[i] = 0.0;
        return gy;
    }
};

struct Upsample2x {
    Tensor forward(const Tensor& x) const {
        Tensor y(x.c, 2 * x.h, 2 * x.w);
        for (int c = 0; c < x.c; ++c)
            for (int iy = 0; iy < x.h; ++iy)
                for (int ix = 0; ix < x.w; ++ix) {
                    const double v = x.at(c, iy, ix);
                    y.at(c, 2 * iy, 2 * ix) = v;
                    y.at(c, 2 * iy, 2 * ix + 1) = v;
                    y.at(c, 2 * iy + 1, 2 * ix) = v;
                    y.at(c, 2 * iy + 1, 2 * ix + 1) = v;
                }
        return y;
    }
    Tensor backward(const Tensor& gy) const {
        Tensor gx(gy.c, gy.h / 2, gy.w / 2);
        for (int c = 0; c < gx.c; ++c)
            for (int iy = 0; iy < gx.h; ++iy)
                for (int ix = 0; ix < gx.w; ++ix)
                    gx.at(c, iy, ix) = gy.at(c, 2 * iy, 2 * ix) + gy.at(c, 2 * iy, 2 * ix + 1) +
                                       gy.at(c, 2 * iy + 1, 2 * ix) +
                                       gy.at(c, 2 * iy + 1, 2 * ix + 1);
        return gx;
    }
};

struct Sigmoid {
    Tensor y_saved;

    Tensor forward(Tensor x, bool train) {
        for (double& d : x.v) d = 1.0 / (1.0 + std::exp(-d));
        if (train) y_saved = x;
        return x;
    }
    Tensor backward(Tensor gy) const {
        for (std::size_t i = 0; i < gy.v.size(); ++i) {
            const double y = y_saved.v[i];
            gy.v[i] *= y * (1.0 - y);
        }
        return gy;
    }
};

// conv3x3 -> relu -> conv3x3, plus identity (or 1x1 projection) skip,
// relu on the sum. stride > 1 downsamples in conv1 and the projection.
struct ResidualBlock {
    Conv2d conv1, conv2;
    std::optional<Conv2d> proj;
    ReLU relu1, relu2;

    ResidualBlock() = default;
    ResidualBlock(int ci, int co, int stride = 1)
        : conv1(ci, co, 3, stride, 1), conv2(co, co, 3, 1, 1) {
        if (ci != co || stride != 1) proj.emplace(ci, co, 1, stride, 0);
    }

    void init(Rng& rng) {
        conv1.init(rng);
        conv2.init(rng);
        if (proj) proj->init(rng);
    }

    Tensor forward(const Tensor& x, bool train) {
        Tensor h = relu1.forward(conv1.forward(x, train), train);
        Tensor y = conv2.forward(h, train);
        if (proj) {
            Tensor s = proj->forward(x, train);
            for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += s.v[i];
        } else {
            for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
        }
        return relu2.forward(std::move(y), train);
    }

    Tensor backward(const Tensor& gy, bool accum_params = true) {
        Tensor gz = relu2.backward(gy);
        Tensor gx = conv1.backward(relu1.backward(conv2.backward(gz, accum_params)),
                                   accum_params);
        if (proj) {
            Tensor gs = proj->backward(gz, accum_params);
            for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += gs.v[i];
        } else {
            for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += gz.v[i];
        }
        return gx;
    }

    void visit_params(const std::string& prefix, const ParamVisitor& v) {
        conv1.visit_params(prefix + ".conv1", v);
        conv2.visit_params(prefix + ".conv2", v);
        if (proj) proj->visit_params(prefix + ".proj", v);
    }
};

// 1x1 -> 3x3 -> 1x1 bottleneck with expansion 4 (deep residual encoders).
struct BottleneckBlock {
    Conv2d conv1, conv2, conv3;
    std::optional<Conv2d> proj;
    ReLU relu1, relu2, relu3;

    BottleneckBlock() = default;
    BottleneckBlock(int ci, int mid, int stride = 1)
        : conv1(ci, mid, 1, 1, 0), conv2(mid, mid, 3, stride, 1),
          conv3(mid, mid * 4, 1, 1, 0) {
        if (ci != mid * 4 || stride != 1) proj.emplace(ci, mid * 4, 1, stride, 0);
    }

    void init(Rng& rng) {
        conv1.init(rng);
        conv2.init(rng);
        conv3.init(rng);
        if (proj) proj->init(rng);
    }

    Tensor forward(const Tensor& x, bool train) {
        Tensor h = relu1.forward(conv1.forward(x, train), train);
        h = relu2.forward(conv2.forward(h, train), train);
        Tensor y = conv3.forward(h, train);
        if (proj) {
            Tensor s = proj->forward(x, train);
            for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += s.v[i];
        } else {
            for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
        }
        return relu3.forward(std::move(y), train);
    }

    Tensor backward(const Tensor& gy, bool accum_params = true) {
        Tensor gz = relu3.backward(gy);
        Tensor gh = relu2.backward(conv3.backward(gz, accum_params));
        Tensor gx = conv1.backward(relu1.backward(conv2.backward(gh, accum_params)),
                                   accum_params);
        if (proj) {
            Tensor gs = proj->backward(gz, accum_params);
            for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += gs.v[i];
        } else {
            for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += gz.v[i];
        }
        return gx;
    }

    void visit_params(const std::string& prefix, const ParamVisitor& v) {
        conv1.visit_params(prefix + ".conv1", v);
        conv2.visit_params(prefix + ".conv2", v);
        conv3.visit_params(prefix + ".conv3", v);
        if (proj) proj->visit_params(prefix + ".proj", v);
    }
};

// ---------------------------------------------------------------------------
// Token-space layers for the hybrid transformer encoder. Token matrices ride
// in Tensor with c == 1, h == tokens, w == feature dim.
// ---------------------------------------------------------------------------

struct Linear {
    int din = 0, dout = 0;
    std::vector<double> w, b, gw, gb;
    Tensor x_saved;

    Linear() = default;
    Linear(int din_, int dout_)
        : din(din_), dout(dout_),
          w(static_cast<std::size_t>(dout_) * din_), b(dout_),
          gw(w.size(), 0.0), gb(dout_, 0.0) {}

    void init(Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(din));
        for (double& x : w) x = rng.uniform(-bound, bound);
        std::fill(b.begin(), b.end(), 0.0);
    }

    Tensor forward(const Tensor& x, bool train) {
        require(x.w == din, "Linear: dim mismatch");
        Tensor y(1, x.h, dout);
        for (int t = 0; t < x.h; ++t) {
            const double* xr = x.v.data() + static_cast<std::size_t>(t) * din;
            double* yr = y.v.data() + static_cast<std::size_t>(t) * dout;
            for (int o = 0; o < dout; ++o) {
                const double* wr = w.data() + static_cast<std::size_t>(o) * din;
                double s = b[o];
                for (int i = 0; i < din; ++i) s += wr[i] * xr[i];
                yr[o] = s;
            }
        }
        if (train) x_saved = x;
        return y;
    }

    Tensor backward(const Tensor& gy, bool accum_params = true) {
        const Tensor& x = x_saved;
        Tensor gx(1, x.h, din);
        for (int t = 0; t < x.h; ++t) {
            const double* xr = x.v.data() + static_cast<std::size_t>(t) * din;
            const double* gyr = gy.v.data() + static_cast<std::size_t>(t) * dout;
            double* gxr = gx.v.data() + static_cast<std::size_t>(t) * din;
            for (int o = 0; o < dout; ++o) {
                const double g = gyr[o];
                const double* wr = w.data() + static_cast<std::size_t>(o) * din;
                for (int i = 0; i < din; ++i) gxr[i] += g * wr[i];
                if (accum_params) {
                    double* gwr = gw.data() + static_cast<std::size_t>(o) * din;
                    for (int i = 0; i < din; ++i) gwr[i] += g * xr[i];
                    gb[o] += g;
                }
            }
        }
        return gx;
    }

    void visit_params(const std::string& prefix, const ParamVisitor& v) {
        v(prefix + ".w", w, gw);
        v(prefix + ".b", b, gb);
    }
};

struct LayerNorm {
    static constexpr double kEps = 1e-5;
    int dim = 0;
    std::vector<double> gamma, beta, ggamma, gbeta;
    Tensor xhat_saved;
    std::vector<double> inv_sigma_saved;

    LayerNorm() = default;
    explicit LayerNorm(int dim_)
        : dim(dim_), gamma(dim_, 1.0), beta(dim_, 0.0),
          ggamma(dim_, 0.0), gbeta(dim_, 0.0) {}

    Tensor forward(const Tensor& x, bool train) {
        require(x.w == dim, "LayerNorm: dim mismatch");
        Tensor y(1, x.h, dim);
        Tensor xhat(1, x.h, dim);
        std::vector<double> inv_sigma(x.h);
        for (int t = 0; t < x.h; ++t) {
            const double* xr = x.v.data() + static_cast<std::size_t>(t) * dim;
            double mean = 0.0;
            for (int i = 0; i < dim; ++i) mean += xr[i];
            mean /= dim;
            double var = 0.0;
            for (int i = 0; i < dim; ++i) var += (xr[i] - mean) * (xr[i] - mean);
            var /= dim;
            const double is = 1.0 / std::sqrt(var + kEps);
            inv_sigma[t] = is;
            double* hr = xhat.v.data() + static_cast<std::size_t>(t) * dim;
            double* yr = y.v.data() + static_cast<std::size_t>(t) * dim;
            for (int i = 0; i < dim; ++i) {
                hr[i] = (xr[i] - mean) * is;
                yr[i] = gamma[i] * hr[i] + beta[i];
            }
        }
        if (train) {
            xhat_saved = std::move(xhat);
            inv_sigma_saved = std::move(inv_sigma);
        }
        return y;
    }

    Tensor backward(const Tensor& gy, bool accum_params = true) {
        const Tensor& xhat = xhat_saved;
        Tensor gx(1, gy.h, dim);
        for (int t = 0; t < gy.h; ++t) {
            const double* gyr = gy.v.data() + static_cast<std::size_t>(t) * dim;
            const double* hr = xhat.v.data() + static_cast<std::size_t>(t) * dim;
            double* gxr = gx.v.data() + static_cast<std::size_t>(t) * dim;
            double m1 = 0.0, m2 = 0.0;  // mean(g*gamma), mean(g*gamma*xhat)
            for (int i = 0; i < dim; ++i) {
                const double gg = gyr[i] * gamma[i];
                m1 += gg;
                m2 += gg * hr[i];
            }
            m1 /= dim;
            m2 /= dim;
            const double is = inv_sigma_saved[t];
            for (int i = 0; i < dim; ++i) {
                const double gg = gyr[i] * gamma[i];
                gxr[i] = is * (gg - m1 - hr[i] * m2);
                if (accum_params) {
                    ggamma[i] += gyr[i] * hr[i];
                    gbeta[i] += gyr[i];
                }
            }
        }
        return gx;
    }

    void visit_params(const std::string& prefix, const ParamVisitor& v) {
        v(prefix + ".gamma", gamma, ggamma);
        v(prefix + ".beta", beta, gbeta);
    }
};

struct MultiHeadAttention {
    int dim = 0, heads = 0, head_dim = 0;
    Linear qkv, proj;
    Tensor q_saved, k_saved, v_saved;  // (heads, T, head_dim)
    Tensor attn_saved;                 // (heads, T, T)

    MultiHeadAttention() = default;
    MultiHeadAttention(int dim_, int heads_)
        : dim(dim_), heads(heads_), head_dim(dim_ / heads_),
          qkv(dim_, 3 * dim_), proj(dim_, dim_) {
        require(dim_ % heads_ == 0, "attention dim must divide heads");
    }

    void init(Rng& rng) {
        qkv.init(rng);
        proj.init(rng);
    }

    Tensor forward(const Tensor& x, bool train) {
        const int T = x.h;
        Tensor f = qkv.forward(x, train);  // (1, T, 3*dim)
        Tensor Q(heads, T, head_dim), K(heads, T, head_dim), V(heads, T, head_dim);
        for (int t = 0; t < T; ++t) {
            const double* fr = f.v.data() + static_cast<std::size_t>(t) * 3 * dim;
            for (int h = 0; h < heads; ++h)
                for (int d = 0; d < head_dim; ++d) {
                    Q.at(h, t, d) = fr[h * head_dim + d];
                    K.at(h, t, d) = fr[dim + h * head_dim + d];
                    V.at(h, t, d) = fr[2 * dim + h * head_dim + d];
                }
        }
        const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
        Tensor A(heads, T, T);
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < T; ++i) {
                double mx = -1e300;
                for (int j = 0; j < T; ++j) {
                    double s = 0.0;
                    for (int d = 0; d < head_dim; ++d) s += Q.at(h, i, d) * K.at(h, j, d);
                    s *= scale;
                    A.at(h, i, j) = s;
                    mx = std::max(mx, s);
                }
                double z = 0.0;
                for (int j = 0; j < T; ++j) {
                    const double e = std::exp(A.at(h, i, j) - mx);
                    A.at(h, i, j) = e;
                    z += e;
                }
                for (int j = 0; j < T; ++j) A.at(h, i, j) /= z;
            }
        Tensor O(1, T, dim);
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < T; ++i)
                for (int d = 0; d < head_dim; ++d) {
                    double s = 0.0;
                    for (int j = 0; j < T; ++j) s += A.at(h, i, j) * V.at(h, j, d);
                    O.v[static_cast<std::size_t>(i) * dim + h * head_dim + d] = s;
                }
        if (train) {
            q_saved = std::move(Q);
            k_saved = std::move(K);
            v_saved = std::move(V);
            attn_saved = std::move(A);
        }
        return proj.forward(O, train);
    }

    Tensor backward(const Tensor& gy, bool accum_params = true) {
        Tensor gO = proj.backward(gy, accum_params);  // (1, T, dim)
        const Tensor& Q = q_saved;
        const Tensor& K = k_saved;
        const Tensor& V = v_saved;
        const Tensor& A = attn_saved;
        const int T = gO.h;
        const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
        Tensor gQ(heads, T, head_dim), gK(heads, T, head_dim), gV(heads, T, head_dim);
        std::vector<double> gS(static_cast<std::size_t>(T));
        for (int h = 0; h < heads; ++h) {
            for (int i = 0; i < T; ++i) {
                // gA row, then softmax jacobian, then scatter to Q/K
                double dot = 0.0;
                for (int j = 0; j < T; ++j) {
                    double ga = 0.0;
                    for (int d = 0; d < head_dim; ++d)
                        ga += gO.v[static_cast<std::size_t>(i) * dim + h * head_dim + d] *
                              V.at(h, j, d);
                    gS[j] = ga;
                    dot += ga * A.at(h, i, j);
                }
                for (int j = 0; j < T; ++j) {
                    const double gs = A.at(h, i, j) * (gS[j] - dot) * scale;
                    for (int d = 0; d < head_dim; ++d) {
                        gQ.at(h, i, d) += gs * K.at(h, j, d);
                        gK.at(h, j, d) += gs * Q.at(h, i, d);
                    }
                }
                for (int j = 0; j < T; ++j) {
                    const double a = A.at(h, i, j);
                    for (int d = 0; d < head_dim; ++d)
                        gV.at(h, j, d) += a * gO.v[static_cast<std::size_t>(i) * dim +
                                                   h * head_dim + d];
                }
            }
        }
        Tensor gf(1, T, 3 * dim);
        for (int t = 0; t < T; ++t) {
            double* gr = gf.v.data() + static_cast<std::size_t>(t) * 3 * dim;
            for (int h = 0; h < heads; ++h)
                for (int d = 0; d < head_dim; ++d) {
                    gr[h * head_dim + d] = gQ.at(h, t, d);
                    gr[dim + h * head_dim + d] = gK.at(h, t, d);
                    gr[2 * dim + h * head_dim + d] = gV.at(h, t, d);
                }
        }
        return qkv.backward(gf, accum_params);
    }

    void visit_params(const std::string& prefix, const ParamVisitor& v) {
        qkv.visit_params(prefix + ".qkv", v);
        proj.visit_params(prefix + ".proj", v);
    }
};

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

struct Mlp {
    Linear fc1, fc2;
    Tensor pre_saved;

    Mlp() = default;
    Mlp(int dim, int hidden) : fc1(dim, hidden), fc2(hidden, dim) {}

    void init(Rng& rng) {
        fc1.init(rng);
        fc2.init(rng);
    }

    Tensor forward(const Tensor& x, bool train) {
        Tensor a = fc1.forward(x, train);
        Tensor h = a;
        for (double& d : h.v) d = gelu(d);
        if (train) pre_saved = std::move(a);
        return fc2.forward(h, train);
    }

    Tensor backward(const Tensor& gy, bool accum_params = true) {
        Tensor gh = fc2.backward(gy, accum_params);
        for (std::size_t i = 0; i < gh.v.size(); ++i) gh.v[i] *= gelu_grad(pre_saved.v[i]);
        return fc1.backward(gh, accum_params);
    }

    void visit_params(const std::string& prefix, const ParamVisitor& v) {
        fc1.visit_params(prefix + ".fc1", v);
        fc2.visit_params(prefix + ".fc2", v);
    }
};

// Pre-norm transformer block: x + attn(ln1(x)), then u + mlp(ln2(u)).
struct TransformerBlock {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    Mlp mlp;

    TransformerBlock() = default;
    TransformerBlock(int dim, int heads, int mlp_hidden)
        : ln1(dim), ln2(dim), attn(dim, heads), mlp(dim, mlp_hidden) {}

    void init(Rng& rng) {
        attn.init(rng);
        mlp.init(rng);
    }

    Tensor forward(const Tensor& x, bool train) {
        Tensor u = attn.forward(ln1.forward(x, train), train);
        for (std::size_t i = 0; i < u.v.size(); ++i) u.v[i] += x.v[i];
        Tensor e = mlp.forward(ln2.forward(u, train), train);
        for (std::size_t i = 0; i < e.v.size(); ++i) e.v[i] += u.v[i];
        return e;
    }

    Tensor backward(const Tensor& gy, bool accum_params = true) {
        Tensor gu = ln2.backward(mlp.backward(gy, accum_params), accum_params);
        for (std::size_t i = 0; i < gu.v.size(); ++i) gu.v[i] += gy.v[i];
        Tensor gx = ln1.backward(attn.backward(gu, accum_params), accum_params);
        for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += gu.v[i];
        return gx;
    }

    void visit_params(const std::string& prefix, const ParamVisitor& v) {
        ln1.visit_params(prefix + ".ln1", v);
        attn.visit_params(prefix + ".attn", v);
        ln2.visit_params(prefix + ".ln2", v);
        mlp.visit_params(prefix + ".mlp", v);
    }
};

}  // namespace itl
