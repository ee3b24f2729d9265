#include "osp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace osp {

int64_t shape_product(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension");
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->value.assign(static_cast<size_t>(shape_product(t.node_->shape)), 0.0);
    t.node_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (shape_product(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("data length does not match shape");
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::rand_init(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t = zeros(std::move(shape), true);
    double a = std::sqrt(6.0 / std::max(1, fan_in));
    for (double& v : t.node_->value) v = rng.uniform(-a, a);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : node_->value)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

Tensor make_result(std::vector<int> shape, std::vector<double> value,
                   std::vector<Tensor> parents, std::function<void(TensorNode&)> backprop) {
    Tensor out = Tensor::from_data(std::move(shape), std::move(value), false);
    bool needs = false;
    for (const Tensor& p : parents) needs = needs || p.requires_grad();
    if (needs) {
        out.node()->requires_grad = true;
        for (const Tensor& p : parents) out.node()->parents.push_back(p.node());
        out.node()->backprop = std::move(backprop);
    }
    return out;
}

void check_same_spatial(const Tensor& a, const Tensor& b, const char* what) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1))
        throw ShapeError(std::string(what) + ": spatial shapes differ");
}

}  // namespace

// ---- conv2d ------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding) {
    if (input.ndim() != 3) throw ShapeError("conv2d: input must be [H,W,Cin]");
    if (kernel.ndim() != 4) throw ShapeError("conv2d: kernel must be [kh,kw,Cin,Cout]");
    const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
    const int kh = kernel.dim(0), kw = kernel.dim(1);
    const int kcin = kernel.dim(2), cout = kernel.dim(3);
    if (kcin != cin) throw ShapeError("conv2d: kernel Cin mismatch");
    if (bias.ndim() != 1 || bias.dim(0) != cout) throw ShapeError("conv2d: bias Cout mismatch");
    if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel sides must be odd");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (w + 2 * padding - kw) / stride + 1;
    if (h + 2 * padding - kh < 0 || w + 2 * padding - kw < 0 || oh < 1 || ow < 1)
        throw ShapeError("conv2d: empty output");
    if (!input.all_finite() || !kernel.all_finite() || !bias.all_finite())
        throw NumericError("conv2d: non-finite input");

    std::vector<double> out(static_cast<size_t>(oh) * ow * cout);
    const double* in = input.data().data();
    const double* ker = kernel.data().data();
    const double* bs = bias.data().data();
    std::vector<double> acc(static_cast<size_t>(cout));
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            for (int co = 0; co < cout; ++co) acc[static_cast<size_t>(co)] = bs[co];
            const int iy0 = oy * stride - padding;
            const int ix0 = ox * stride - padding;
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = iy0 + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ix0 + kx;
                    if (ix < 0 || ix >= w) continue;
                    const double* in_px = in + (static_cast<size_t>(iy) * w + ix) * cin;
                    const double* krow = ker + ((static_cast<size_t>(ky) * kw + kx) * cin) * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double a = in_px[ci];
                        const double* kc = krow + static_cast<size_t>(ci) * cout;
                        for (int co = 0; co < cout; ++co) acc[static_cast<size_t>(co)] += a * kc[co];
                    }
                }
            }
            double* out_px = out.data() + (static_cast<size_t>(oy) * ow + ox) * cout;
            for (int co = 0; co < cout; ++co) out_px[co] = acc[static_cast<size_t>(co)];
        }
    }

    auto in_node = input.node();
    auto ker_node = kernel.node();
    auto bias_node = bias.node();
    auto bp = [h, w, cin, kh, kw, cout, oh, ow, stride, padding, in_node, ker_node,
               bias_node](TensorNode& self) {
        const double* g = self.grad.data();
        const double* in = in_node->value.data();
        const double* ker = ker_node->value.data();
        double* din = nullptr;
        double* dker = nullptr;
        double* dbias = nullptr;
        if (in_node->requires_grad) {
            in_node->ensure_grad();
            din = in_node->grad.data();
        }
        if (ker_node->requires_grad) {
            ker_node->ensure_grad();
            dker = ker_node->grad.data();
        }
        if (bias_node->requires_grad) {
            bias_node->ensure_grad();
            dbias = bias_node->grad.data();
        }
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const double* g_px = g + (static_cast<size_t>(oy) * ow + ox) * cout;
                if (dbias)
                    for (int co = 0; co < cout; ++co) dbias[co] += g_px[co];
                const int iy0 = oy * stride - padding;
                const int ix0 = ox * stride - padding;
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = iy0 + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ix0 + kx;
                        if (ix < 0 || ix >= w) continue;
                        const size_t in_off = (static_cast<size_t>(iy) * w + ix) * cin;
                        const size_t k_off = (static_cast<size_t>(ky) * kw + kx) * cin * cout;
                        if (dker) {
                            const double* in_px = in + in_off;
                            for (int ci = 0; ci < cin; ++ci) {
                                const double a = in_px[ci];
                                double* dk = dker + k_off + static_cast<size_t>(ci) * cout;
                                for (int co = 0; co < cout; ++co) dk[co] += a * g_px[co];
                            }
                        }
                        if (din) {
                            const double* krow = ker + k_off;
                            double* di = din + in_off;
                            for (int ci = 0; ci < cin; ++ci) {
                                const double* kc = krow + static_cast<size_t>(ci) * cout;
                                double s = 0.0;
                                for (int co = 0; co < cout; ++co) s += kc[co] * g_px[co];
                                di[ci] += s;
                            }
                        }
                    }
                }
            }
        }
    };
    return make_result({oh, ow, cout}, std::move(out), {input, kernel, bias}, bp);
}

// ---- elementwise -------------------------------------------------------------

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    auto xn = x.node();
    return make_result(x.shape(), std::move(out), {x}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i)
            if (xn->value[i] > 0.0) xn->grad[i] += self.grad[i];
    });
}

Tensor softmax_channels(const Tensor& logits) {
    if (logits.ndim() != 3) throw ShapeError("softmax_channels: need [H,W,C]");
    const int hw = logits.dim(0) * logits.dim(1);
    const int c = logits.dim(2);
    std::vector<double> out(logits.data().size());
    const double* in = logits.data().data();
    for (int p = 0; p < hw; ++p) {
        const double* px = in + static_cast<size_t>(p) * c;
        double* opx = out.data() + static_cast<size_t>(p) * c;
        double mx = px[0];
        for (int k = 1; k < c; ++k) mx = std::max(mx, px[k]);
        double denom = 0.0;
        for (int k = 0; k < c; ++k) {
            opx[k] = std::exp(px[k] - mx);
            denom += opx[k];
        }
        for (int k = 0; k < c; ++k) opx[k] /= denom;
    }
    auto ln = logits.node();
    Tensor result = make_result(logits.shape(), std::move(out), {logits}, nullptr);
    if (result.requires_grad()) {
        auto rn = result.node();
        result.node()->backprop = [ln, hw, c](TensorNode& self) {
            if (!ln->requires_grad) return;
            ln->ensure_grad();
            for (int p = 0; p < hw; ++p) {
                const double* sp = self.value.data() + static_cast<size_t>(p) * c;
                const double* gp = self.grad.data() + static_cast<size_t>(p) * c;
                double dot = 0.0;
                for (int k = 0; k < c; ++k) dot += sp[k] * gp[k];
                double* dl = ln->grad.data() + static_cast<size_t>(p) * c;
                for (int k = 0; k < c; ++k) dl[k] += sp[k] * (gp[k] - dot);
            }
        };
        (void)rn;
    }
    return result;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    check_same_spatial(a, b, "concat_channels");
    const int h = a.dim(0), w = a.dim(1), ca = a.dim(2), cb = b.dim(2);
    std::vector<double> out(static_cast<size_t>(h) * w * (ca + cb));
    for (int p = 0; p < h * w; ++p) {
        const double* ap = a.data().data() + static_cast<size_t>(p) * ca;
        const double* bp = b.data().data() + static_cast<size_t>(p) * cb;
        double* op = out.data() + static_cast<size_t>(p) * (ca + cb);
        std::copy(ap, ap + ca, op);
        std::copy(bp, bp + cb, op + ca);
    }
    auto an = a.node();
    auto bn = b.node();
    return make_result({h, w, ca + cb}, std::move(out), {a, b}, [an, bn, h, w, ca, cb](TensorNode& self) {
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (int p = 0; p < h * w; ++p) {
            const double* gp = self.grad.data() + static_cast<size_t>(p) * (ca + cb);
            if (an->requires_grad) {
                double* ga = an->grad.data() + static_cast<size_t>(p) * ca;
                for (int k = 0; k < ca; ++k) ga[k] += gp[k];
            }
            if (bn->requires_grad) {
                double* gb = bn->grad.data() + static_cast<size_t>(p) * cb;
                for (int k = 0; k < cb; ++k) gb[k] += gp[ca + k];
            }
        }
    });
}

Tensor slice_channels(const Tensor& x, int first, int count) {
    if (x.ndim() != 3) throw ShapeError("slice_channels: need [H,W,C]");
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (first < 0 || count < 1 || first + count > c) throw ShapeError("slice_channels: bad range");
    std::vector<double> out(static_cast<size_t>(h) * w * count);
    for (int p = 0; p < h * w; ++p)
        for (int k = 0; k < count; ++k)
            out[static_cast<size_t>(p) * count + k] = x.data()[static_cast<size_t>(p) * c + first + k];
    auto xn = x.node();
    return make_result({h, w, count}, std::move(out), {x}, [xn, h, w, c, first, count](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int p = 0; p < h * w; ++p)
            for (int k = 0; k < count; ++k)
                xn->grad[static_cast<size_t>(p) * c + first + k] +=
                    self.grad[static_cast<size_t>(p) * count + k];
    });
}

// ---- metric ops ----------------------------------------------------------------

Tensor cosine_map(const Tensor& features, const Tensor& proto) {
    if (features.ndim() != 3) throw ShapeError("cosine_map: features must be [H,W,K]");
    if (proto.ndim() != 1 || proto.dim(0) != features.dim(2))
        throw ShapeError("cosine_map: prototype length mismatch");
    const int h = features.dim(0), w = features.dim(1), k = features.dim(2);
    const double* p = proto.data().data();
    double pn2 = 0.0;
    for (int i = 0; i < k; ++i) pn2 += p[i] * p[i];
    const double pn = std::sqrt(pn2);
    if (pn == 0.0) throw DegeneratePrototype("cosine_map: zero-norm prototype");

    std::vector<double> out(static_cast<size_t>(h) * w);
    const double* f = features.data().data();
    for (int px = 0; px < h * w; ++px) {
        const double* fv = f + static_cast<size_t>(px) * k;
        double dot = 0.0, fn2 = 0.0;
        for (int i = 0; i < k; ++i) {
            dot += fv[i] * p[i];
            fn2 += fv[i] * fv[i];
        }
        out[static_cast<size_t>(px)] = fn2 == 0.0 ? 0.0 : dot / (std::sqrt(fn2) * pn);
    }
    auto fn_node = features.node();
    auto pn_node = proto.node();
    return make_result({h, w}, std::move(out), {features, proto},
                       [fn_node, pn_node, h, w, k, pn](TensorNode& self) {
        const double* f = fn_node->value.data();
        const double* p = pn_node->value.data();
        double* df = nullptr;
        double* dp = nullptr;
        if (fn_node->requires_grad) {
            fn_node->ensure_grad();
            df = fn_node->grad.data();
        }
        if (pn_node->requires_grad) {
            pn_node->ensure_grad();
            dp = pn_node->grad.data();
        }
        for (int px = 0; px < h * w; ++px) {
            const double g = self.grad[static_cast<size_t>(px)];
            if (g == 0.0) continue;
            const double* fv = f + static_cast<size_t>(px) * k;
            double dot = 0.0, fn2 = 0.0;
            for (int i = 0; i < k; ++i) {
                dot += fv[i] * p[i];
                fn2 += fv[i] * fv[i];
            }
            if (fn2 == 0.0) continue;  // similarity pinned to 0, zero gradient
            const double fn = std::sqrt(fn2);
            const double m = dot / (fn * pn);
            if (df) {
                double* dfv = df + static_cast<size_t>(px) * k;
                const double inv = 1.0 / (fn * pn);
                for (int i = 0; i < k; ++i) dfv[i] += g * (p[i] * inv - m * fv[i] / fn2);
            }
            if (dp) {
                const double inv = 1.0 / (fn * pn);
                for (int i = 0; i < k; ++i) dp[i] += g * (fv[i] * inv - m * p[i] / (pn * pn));
            }
        }
    });
}

Tensor masked_mean(const Tensor& features, const std::vector<uint8_t>& mask) {
    if (features.ndim() != 3) throw ShapeError("masked_mean: features must be [H,W,K]");
    const int h = features.dim(0), w = features.dim(1), k = features.dim(2);
    if (static_cast<int>(mask.size()) != h * w) throw ShapeError("masked_mean: mask size mismatch");
    int64_t n = 0;
    for (uint8_t m : mask) n += m ? 1 : 0;
    if (n == 0) throw EmptyMask("masked_mean: no selected pixels");
    std::vector<double> out(static_cast<size_t>(k), 0.0);
    const double* f = features.data().data();
    for (int px = 0; px < h * w; ++px) {
        if (!mask[static_cast<size_t>(px)]) continue;
        const double* fv = f + static_cast<size_t>(px) * k;
        for (int i = 0; i < k; ++i) out[static_cast<size_t>(i)] += fv[i];
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (double& v : out) v *= inv;
    auto fn_node = features.node();
    auto mask_copy = mask;
    return make_result({k}, std::move(out), {features},
                       [fn_node, mask_copy, h, w, k, inv](TensorNode& self) {
        if (!fn_node->requires_grad) return;
        fn_node->ensure_grad();
        for (int px = 0; px < h * w; ++px) {
            if (!mask_copy[static_cast<size_t>(px)]) continue;
            double* dfv = fn_node->grad.data() + static_cast<size_t>(px) * k;
            for (int i = 0; i < k; ++i) dfv[i] += self.grad[static_cast<size_t>(i)] * inv;
        }
    });
}

Tensor attend(const Tensor& map, const Tensor& features) {
    if (map.ndim() != 2 || features.ndim() != 3) throw ShapeError("attend: need [H,W] and [H,W,K]");
    if (map.dim(0) != features.dim(0) || map.dim(1) != features.dim(1))
        throw ShapeError("attend: spatial mismatch");
    const int hw = map.dim(0) * map.dim(1);
    const int k = features.dim(2);
    std::vector<double> out(features.data().size());
    for (int px = 0; px < hw; ++px) {
        const double s = 1.0 + map.data()[static_cast<size_t>(px)];
        const double* fv = features.data().data() + static_cast<size_t>(px) * k;
        double* ov = out.data() + static_cast<size_t>(px) * k;
        for (int i = 0; i < k; ++i) ov[i] = s * fv[i];
    }
    auto mn = map.node();
    auto fn = features.node();
    return make_result(features.shape(), std::move(out), {map, features},
                       [mn, fn, hw, k](TensorNode& self) {
        if (mn->requires_grad) mn->ensure_grad();
        if (fn->requires_grad) fn->ensure_grad();
        for (int px = 0; px < hw; ++px) {
            const double* gv = self.grad.data() + static_cast<size_t>(px) * k;
            const double* fv = fn->value.data() + static_cast<size_t>(px) * k;
            if (fn->requires_grad) {
                const double s = 1.0 + mn->value[static_cast<size_t>(px)];
                double* dfv = fn->grad.data() + static_cast<size_t>(px) * k;
                for (int i = 0; i < k; ++i) dfv[i] += s * gv[i];
            }
            if (mn->requires_grad) {
                double dm = 0.0;
                for (int i = 0; i < k; ++i) dm += gv[i] * fv[i];
                mn->grad[static_cast<size_t>(px)] += dm;
            }
        }
    });
}

Tensor scale_channels(const Tensor& x, const Tensor& channel_scale) {
    if (x.ndim() != 3 || channel_scale.ndim() != 1 || channel_scale.dim(0) != x.dim(2))
        throw ShapeError("scale_channels: need [H,W,C] and [C]");
    const int hw = x.dim(0) * x.dim(1);
    const int c = x.dim(2);
    std::vector<double> out(x.data().size());
    const double* s = channel_scale.data().data();
    for (int px = 0; px < hw; ++px)
        for (int k = 0; k < c; ++k)
            out[static_cast<size_t>(px) * c + k] = x.data()[static_cast<size_t>(px) * c + k] * s[k];
    auto xn = x.node();
    auto sn = channel_scale.node();
    return make_result(x.shape(), std::move(out), {x, channel_scale}, [xn, sn, hw, c](TensorNode& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (int px = 0; px < hw; ++px)
                for (int k = 0; k < c; ++k)
                    xn->grad[static_cast<size_t>(px) * c + k] +=
                        self.grad[static_cast<size_t>(px) * c + k] * sn->value[static_cast<size_t>(k)];
        }
        if (sn->requires_grad) {
            sn->ensure_grad();
            for (int px = 0; px < hw; ++px)
                for (int k = 0; k < c; ++k)
                    sn->grad[static_cast<size_t>(k)] +=
                        self.grad[static_cast<size_t>(px) * c + k] * xn->value[static_cast<size_t>(px) * c + k];
        }
    });
}

Tensor stack_maps(const std::vector<Tensor>& maps) {
    if (maps.empty()) throw ShapeError("stack_maps: no maps");
    const int h = maps[0].dim(0), w = maps[0].dim(1);
    const int c = static_cast<int>(maps.size());
    for (const Tensor& m : maps)
        if (m.ndim() != 2 || m.dim(0) != h || m.dim(1) != w)
            throw ShapeError("stack_maps: inconsistent shapes");
    std::vector<double> out(static_cast<size_t>(h) * w * c);
    for (int k = 0; k < c; ++k)
        for (int px = 0; px < h * w; ++px)
            out[static_cast<size_t>(px) * c + k] = maps[static_cast<size_t>(k)].data()[static_cast<size_t>(px)];
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const Tensor& m : maps) nodes.push_back(m.node());
    Tensor result = make_result({h, w, c}, std::move(out), maps, [nodes, h, w, c](TensorNode& self) {
        for (int k = 0; k < c; ++k) {
            auto& n = nodes[static_cast<size_t>(k)];
            if (!n->requires_grad) continue;
            n->ensure_grad();
            for (int px = 0; px < h * w; ++px)
                n->grad[static_cast<size_t>(px)] += self.grad[static_cast<size_t>(px) * c + k];
        }
    });
    return result;
}

// ---- arithmetic ------------------------------------------------------------

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
    if (shape_product(new_shape) != x.size()) throw ShapeError("reshape: size mismatch");
    auto xn = x.node();
    return make_result(std::move(new_shape), x.data(), {x}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i) xn->grad[i] += self.grad[i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) { return add_scalar_scale(a, 1.0, b, 1.0); }

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    auto an = a.node();
    return make_result(a.shape(), std::move(out), {a}, [an, s](TensorNode& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i) an->grad[i] += s * self.grad[i];
    });
}

Tensor add_scalar_scale(const Tensor& a, double sa, const Tensor& b, double sb) {
    if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
    std::vector<double> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = sa * a.data()[i] + sb * b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_result(a.shape(), std::move(out), {a, b}, [an, bn, sa, sb](TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i) an->grad[i] += sa * self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i) bn->grad[i] += sb * self.grad[i];
        }
    });
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    auto xn = x.node();
    return make_result({1}, {s}, {x}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (double& g : xn->grad) g += self.grad[0];
    });
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.size())); }

Tensor cross_entropy_probs(const Tensor& probs, const std::vector<int>& targets, double clamp) {
    if (probs.ndim() != 3) throw ShapeError("cross_entropy_probs: need [H,W,C]");
    const int hw = probs.dim(0) * probs.dim(1);
    const int c = probs.dim(2);
    if (static_cast<int>(targets.size()) != hw)
        throw ShapeError("cross_entropy_probs: target size mismatch");
    int64_t counted = 0;
    double loss = 0.0;
    for (int px = 0; px < hw; ++px) {
        const int t = targets[static_cast<size_t>(px)];
        if (t < 0) continue;
        if (t >= c) throw ContractError("cross_entropy_probs: target channel out of range");
        ++counted;
        loss -= std::log(std::max(probs.data()[static_cast<size_t>(px) * c + t], clamp));
    }
    if (counted == 0) throw ContractError("cross_entropy_probs: no supervised pixels");
    loss /= static_cast<double>(counted);
    auto pn = probs.node();
    auto tcopy = targets;
    const double inv = 1.0 / static_cast<double>(counted);
    return make_result({1}, {loss}, {probs}, [pn, tcopy, c, clamp, inv](TensorNode& self) {
        if (!pn->requires_grad) return;
        pn->ensure_grad();
        const double g = self.grad[0];
        for (size_t px = 0; px < tcopy.size(); ++px) {
            const int t = tcopy[px];
            if (t < 0) continue;
            const double p = pn->value[px * static_cast<size_t>(c) + t];
            if (p > clamp) pn->grad[px * static_cast<size_t>(c) + t] -= g * inv / p;
        }
    });
}

// ---- value-only ------------------------------------------------------------

Tensor resize_bilinear(const Tensor& image, int new_h, int new_w) {
    if (image.ndim() != 3) throw ShapeError("resize_bilinear: need [H,W,C]");
    if (new_h < 1 || new_w < 1) throw ShapeError("resize_bilinear: bad target size");
    const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (new_h == h && new_w == w) return image.detached();
    Tensor out = Tensor::zeros({new_h, new_w, c});
    const double sy = static_cast<double>(h) / new_h;
    const double sx = static_cast<double>(w) / new_w;
    for (int y = 0; y < new_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < new_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            for (int k = 0; k < c; ++k) {
                const double v00 = image.at(y0, x0, k), v01 = image.at(y0, x1, k);
                const double v10 = image.at(y1, x0, k), v11 = image.at(y1, x1, k);
                out.at(y, x, k) = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                  wy * ((1 - wx) * v10 + wx * v11);
            }
        }
    }
    return out;
}

// ---- autodiff driver ---------------------------------------------------------

void backward(const Tensor& scalar_loss) {
    if (scalar_loss.size() != 1) throw ContractError("backward: loss must be scalar");
    // Iterative post-order topological sort over parent edges.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(scalar_loss.node().get(), 0);
    seen.insert(scalar_loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // Reset gradients of everything reachable so repeated calls are idempotent.
    for (TensorNode* n : order) n->grad.assign(n->value.size(), 0.0);
    scalar_loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                  double step) {
    if (step <= 0.0) throw ContractError("grad_check: step must be positive");
    Tensor x = Tensor::from_data(point.shape(), point.data(), true);
    Tensor loss = fn(x);
    if (loss.size() != 1) throw ContractError("grad_check: fn must be scalar-valued");
    backward(loss);
    std::vector<double> analytic = x.grad();
    double worst = 0.0;
    for (size_t i = 0; i < x.data().size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + step;
        const double fp = fn(x).item();
        x.data()[i] = keep - step;
        const double fm = fn(x).item();
        x.data()[i] = keep;
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace osp
