#include "gvs/autodiff.hpp"

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "gvs/errors.hpp"
#include "gvs/parallel.hpp"

namespace gvs {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::atomic<std::uint64_t> g_order{1};
thread_local bool t_grad_enabled = true;

NodePtr make_node(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && t_grad_enabled;
    n->order = g_order.fetch_add(1, std::memory_order_relaxed);
    return n;
}

// Attaches parents and the backward closure only when the graph is live.
Var finish(NodePtr n, std::vector<NodePtr> parents, std::function<void(Node&)> op) {
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_op = std::move(op);
    }
    return Var(std::move(n));
}

bool any_requires_grad(const Var& a) { return a.requires_grad(); }
bool any_requires_grad(const Var& a, const Var& b) { return a.requires_grad() || b.requires_grad(); }
bool any_requires_grad(const Var& a, const Var& b, const Var& c) {
    return a.requires_grad() || b.requires_grad() || c.requires_grad();
}

struct ConvDims {
    std::int64_t n, c, h, w, o, kh, kw, oh, ow;
    int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
    if (x.rank() != 4 || w.rank() != 4) throw InvalidInputError("conv2d: expected 4-d input and weight");
    if (x.dim(1) != w.dim(1)) {
        throw InvalidInputError("conv2d: channel mismatch " + x.shape_string() + " vs " + w.shape_string());
    }
    ConvDims d;
    d.n = x.dim(0);
    d.c = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.o = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = pad;
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.oh <= 0 || d.ow <= 0) throw InvalidInputError("conv2d: kernel larger than padded input");
    return d;
}

// col is (C*KH*KW) x (OH*OW), row-major, zero padding.
void im2col(const double* x, const ConvDims& d, double* col) {
    const std::int64_t spatial = d.oh * d.ow;
    for (std::int64_t c = 0; c < d.c; ++c) {
        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
            for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                double* row = col + ((c * d.kh + kh) * d.kw + kw) * spatial;
                for (std::int64_t oh = 0; oh < d.oh; ++oh) {
                    const std::int64_t ih = oh * d.stride + kh - d.pad;
                    if (ih < 0 || ih >= d.h) {
                        std::memset(row + oh * d.ow, 0, sizeof(double) * static_cast<std::size_t>(d.ow));
                        continue;
                    }
                    const double* src = x + (c * d.h + ih) * d.w;
                    for (std::int64_t ow = 0; ow < d.ow; ++ow) {
                        const std::int64_t iw = ow * d.stride + kw - d.pad;
                        row[oh * d.ow + ow] = (iw < 0 || iw >= d.w) ? 0.0 : src[iw];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvDims& d, double* dx) {
    for (std::int64_t c = 0; c < d.c; ++c) {
        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
            for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                const double* row = col + ((c * d.kh + kh) * d.kw + kw) * d.oh * d.ow;
                for (std::int64_t oh = 0; oh < d.oh; ++oh) {
                    const std::int64_t ih = oh * d.stride + kh - d.pad;
                    if (ih < 0 || ih >= d.h) continue;
                    double* dst = dx + (c * d.h + ih) * d.w;
                    for (std::int64_t ow = 0; ow < d.ow; ++ow) {
                        const std::int64_t iw = ow * d.stride + kw - d.pad;
                        if (iw >= 0 && iw < d.w) dst[iw] += row[oh * d.ow + ow];
                    }
                }
            }
        }
    }
}

}  // namespace

Var Var::leaf(Tensor value, bool requires_grad) { return Var(make_node(std::move(value), requires_grad)); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

void backward(const Var& loss) {
    if (!loss.defined()) throw InvalidInputError("backward: undefined loss");
    if (loss.value().numel() != 1) throw InvalidInputError("backward: loss must be scalar");
    if (!loss.requires_grad()) throw InvalidInputError("backward: loss does not require grad");

    // Reachable subgraph, processed in reverse creation order.
    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.node().get()};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        topo.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(topo.begin(), topo.end(), [](const Node* a, const Node* b) { return a->order > b->order; });

    Node* root = loss.node().get();
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (Node* n : topo) {
        if (n->backward_op && n->grad_allocated) n->backward_op(*n);
    }
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    const double* pb = b.value().data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.numel(); ++i) po[i] += pb[i];
    auto n = make_node(std::move(out), any_requires_grad(a, b));
    return finish(n, {a.node(), b.node()}, [](Node& self) {
        for (const auto& p : self.parents) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            double* dst = p->grad.data();
            const double* src = self.grad.data();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) dst[i] += src[i];
        }
    });
}

Var add_scaled(const Var& a, const Var& b, double scale) {
    require_same_shape(a.value(), b.value(), "add_scaled");
    Tensor out = a.value();
    const double* pb = b.value().data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.numel(); ++i) po[i] += scale * pb[i];
    auto n = make_node(std::move(out), any_requires_grad(a, b));
    return finish(n, {a.node(), b.node()}, [scale](Node& self) {
        const double* src = self.grad.data();
        if (self.parents[0]->requires_grad) {
            self.parents[0]->ensure_grad();
            double* dst = self.parents[0]->grad.data();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) dst[i] += src[i];
        }
        if (self.parents[1]->requires_grad) {
            self.parents[1]->ensure_grad();
            double* dst = self.parents[1]->grad.data();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) dst[i] += scale * src[i];
        }
    });
}

Var add_constant(const Var& x, const Tensor& c) {
    require_same_shape(x.value(), c, "add_constant");
    Tensor out = x.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += c[i];
    auto n = make_node(std::move(out), any_requires_grad(x));
    return finish(n, {x.node()}, [](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) p->grad[i] += self.grad[i];
    });
}

Var relu(const Var& x) {
    Tensor out = x.value();
    // v < 0 ? 0 : v keeps NaN propagating instead of silently zeroing it
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] < 0.0 ? 0.0 : out[i];
    auto n = make_node(std::move(out), any_requires_grad(x));
    return finish(n, {x.node()}, [](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        const double* xv = p->value.data();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
            if (xv[i] > 0.0) p->grad[i] += self.grad[i];
        }
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    auto n = make_node(std::move(out), any_requires_grad(x));
    return finish(n, {x.node()}, [](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        const double* y = self.value.data();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) p->grad[i] += self.grad[i] * y[i] * (1.0 - y[i]);
    });
}

Var tanh_act(const Var& x) {
    Tensor out = x.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    auto n = make_node(std::move(out), any_requires_grad(x));
    return finish(n, {x.node()}, [](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        const double* y = self.value.data();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) p->grad[i] += self.grad[i] * (1.0 - y[i] * y[i]);
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    const ConvDims d = conv_dims(x.value(), weight.value(), stride, pad);
    if (bias.value().numel() != d.o) throw InvalidInputError("conv2d: bias size mismatch");

    Tensor out({d.n, d.o, d.oh, d.ow});
    const std::int64_t ckk = d.c * d.kh * d.kw;
    const std::int64_t spatial = d.oh * d.ow;
    const double* px = x.value().data();
    const double* pw = weight.value().data();
    const double* pb = bias.value().data();
    double* py = out.data();

    parallel_for(d.n, [&](std::int64_t begin, std::int64_t end) {
        AlignedBuffer col(static_cast<std::size_t>(ckk * spatial));
        ConstMapMat wmat(pw, d.o, ckk);
        for (std::int64_t s = begin; s < end; ++s) {
            im2col(px + s * d.c * d.h * d.w, d, col.data());
            ConstMapMat cmat(col.data(), ckk, spatial);
            MapMat ymat(py + s * d.o * spatial, d.o, spatial);
            ymat.noalias() = wmat * cmat;
            for (std::int64_t o = 0; o < d.o; ++o) ymat.row(o).array() += pb[o];
        }
    });

    auto n = make_node(std::move(out), any_requires_grad(x, weight, bias));
    return finish(n, {x.node(), weight.node(), bias.node()}, [d, ckk, spatial](Node& self) {
        Node* xn = self.parents[0].get();
        Node* wn = self.parents[1].get();
        Node* bn = self.parents[2].get();
        const bool need_dx = xn->requires_grad;
        const bool need_dw = wn->requires_grad;
        const bool need_db = bn->requires_grad;
        if (need_dx) xn->ensure_grad();
        if (need_dw) wn->ensure_grad();
        if (need_db) bn->ensure_grad();

        const double* dy = self.grad.data();
        const double* px = xn->value.data();
        const double* pw = wn->value.data();

        // Per-range weight/bias accumulators merged in range order keep the
        // reduction deterministic under threading.
        const int workers = thread_count();
        const std::int64_t chunks = std::min<std::int64_t>(workers, d.n);
        std::vector<Tensor> dw_parts(static_cast<std::size_t>(need_dw ? chunks : 0), Tensor(wn->value.shape()));
        std::vector<Tensor> db_parts(static_cast<std::size_t>(need_db ? chunks : 0), Tensor(bn->value.shape()));
        const std::int64_t chunk = chunks > 0 ? (d.n + chunks - 1) / chunks : 1;

        parallel_for(d.n, [&](std::int64_t begin, std::int64_t end) {
            const std::int64_t part = begin / chunk;
            AlignedBuffer col(static_cast<std::size_t>(ckk * spatial));
            AlignedBuffer dcol(static_cast<std::size_t>(ckk * spatial));
            ConstMapMat wmat(pw, d.o, ckk);
            for (std::int64_t s = begin; s < end; ++s) {
                ConstMapMat dymat(dy + s * d.o * spatial, d.o, spatial);
                if (need_dw) {
                    im2col(px + s * d.c * d.h * d.w, d, col.data());
                    ConstMapMat cmat(col.data(), ckk, spatial);
                    MapMat dwmat(dw_parts[static_cast<std::size_t>(part)].data(), d.o, ckk);
                    dwmat.noalias() += dymat * cmat.transpose();
                }
                if (need_db) {
                    double* db = db_parts[static_cast<std::size_t>(part)].data();
                    const double* dyp = dy + s * d.o * spatial;
                    for (std::int64_t o = 0; o < d.o; ++o) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < spatial; ++i) acc += dyp[o * spatial + i];
                        db[o] += acc;
                    }
                }
                if (need_dx) {
                    MapMat dcmat(dcol.data(), ckk, spatial);
                    dcmat.noalias() = wmat.transpose() * dymat;
                    col2im_add(dcol.data(), d, xn->grad.data() + s * d.c * d.h * d.w);
                }
            }
        });
        for (std::int64_t part = 0; part < chunks; ++part) {
            if (need_dw) {
                const Tensor& dwp = dw_parts[static_cast<std::size_t>(part)];
                for (std::int64_t i = 0; i < dwp.numel(); ++i) wn->grad[i] += dwp[i];
            }
            if (need_db) {
                const Tensor& dbp = db_parts[static_cast<std::size_t>(part)];
                for (std::int64_t i = 0; i < dbp.numel(); ++i) bn->grad[i] += dbp[i];
            }
        }
    });
}

Var maxpool2x2(const Var& x) {
    const Tensor& v = x.value();
    if (v.rank() != 4) throw InvalidInputError("maxpool2x2: expected 4-d input");
    const std::int64_t n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
    if (h % 2 != 0 || w % 2 != 0) throw InvalidInputError("maxpool2x2: odd spatial size " + v.shape_string());
    const std::int64_t oh = h / 2, ow = w / 2;

    Tensor out({n, c, oh, ow});
    auto indices = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(out.numel()));
    const double* px = v.data();
    double* py = out.data();
    std::int32_t* pi = indices->data();

    parallel_for(n * c, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t nc = begin; nc < end; ++nc) {
            const double* plane = px + nc * h * w;
            double* oplane = py + nc * oh * ow;
            std::int32_t* iplane = pi + nc * oh * ow;
            for (std::int64_t i = 0; i < oh; ++i) {
                for (std::int64_t j = 0; j < ow; ++j) {
                    const std::int64_t base = (2 * i) * w + 2 * j;
                    double best = plane[base];
                    std::int32_t arg = 0;
                    const std::int64_t cands[3] = {base + 1, base + w, base + w + 1};
                    for (int k = 0; k < 3; ++k) {
                        if (plane[cands[k]] > best) {
                            best = plane[cands[k]];
                            arg = static_cast<std::int32_t>(k + 1);
                        }
                    }
                    oplane[i * ow + j] = best;
                    iplane[i * ow + j] = arg;
                }
            }
        }
    });

    auto node = make_node(std::move(out), any_requires_grad(x));
    return finish(node, {x.node()}, [indices, n, c, h, w, oh, ow](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        const double* dy = self.grad.data();
        const std::int32_t* pi = indices->data();
        double* dx = p->grad.data();
        for (std::int64_t nc = 0; nc < n * c; ++nc) {
            double* dplane = dx + nc * h * w;
            for (std::int64_t i = 0; i < oh; ++i) {
                for (std::int64_t j = 0; j < ow; ++j) {
                    const std::int64_t oidx = nc * oh * ow + i * ow + j;
                    const std::int32_t arg = pi[oidx];
                    const std::int64_t base = (2 * i) * w + 2 * j;
                    const std::int64_t off = arg == 0 ? 0 : (arg == 1 ? 1 : (arg == 2 ? w : w + 1));
                    dplane[base + off] += dy[oidx];
                }
            }
        }
    });
}

Var upsample_nearest2x(const Var& x) {
    const Tensor& v = x.value();
    if (v.rank() != 4) throw InvalidInputError("upsample_nearest2x: expected 4-d input");
    const std::int64_t n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
    Tensor out({n, c, 2 * h, 2 * w});
    const double* px = v.data();
    double* py = out.data();
    parallel_for(n * c, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t nc = begin; nc < end; ++nc) {
            const double* plane = px + nc * h * w;
            double* oplane = py + nc * 4 * h * w;
            for (std::int64_t i = 0; i < h; ++i) {
                for (std::int64_t j = 0; j < w; ++j) {
                    const double val = plane[i * w + j];
                    double* row0 = oplane + (2 * i) * 2 * w + 2 * j;
                    double* row1 = row0 + 2 * w;
                    row0[0] = row0[1] = row1[0] = row1[1] = val;
                }
            }
        }
    });
    auto node = make_node(std::move(out), any_requires_grad(x));
    return finish(node, {x.node()}, [n, c, h, w](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        const double* dy = self.grad.data();
        double* dx = p->grad.data();
        for (std::int64_t nc = 0; nc < n * c; ++nc) {
            const double* oplane = dy + nc * 4 * h * w;
            double* plane = dx + nc * h * w;
            for (std::int64_t i = 0; i < h; ++i) {
                for (std::int64_t j = 0; j < w; ++j) {
                    const double* row0 = oplane + (2 * i) * 2 * w + 2 * j;
                    const double* row1 = row0 + 2 * w;
                    plane[i * w + j] += row0[0] + row0[1] + row1[0] + row1[1];
                }
            }
        }
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const Tensor& va = a.value();
    const Tensor& vb = b.value();
    if (va.rank() != 4 || vb.rank() != 4 || va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(2) ||
        va.dim(3) != vb.dim(3)) {
        throw InvalidInputError("concat_channels: incompatible shapes " + va.shape_string() + " vs " +
                                vb.shape_string());
    }
    const std::int64_t n = va.dim(0), ca = va.dim(1), cb = vb.dim(1), h = va.dim(2), w = va.dim(3);
    Tensor out({n, ca + cb, h, w});
    const std::int64_t plane = h * w;
    for (std::int64_t s = 0; s < n; ++s) {
        std::memcpy(out.data() + s * (ca + cb) * plane, va.data() + s * ca * plane,
                    sizeof(double) * static_cast<std::size_t>(ca * plane));
        std::memcpy(out.data() + (s * (ca + cb) + ca) * plane, vb.data() + s * cb * plane,
                    sizeof(double) * static_cast<std::size_t>(cb * plane));
    }
    auto node = make_node(std::move(out), any_requires_grad(a, b));
    return finish(node, {a.node(), b.node()}, [n, ca, cb, plane](Node& self) {
        Node* pa = self.parents[0].get();
        Node* pb = self.parents[1].get();
        const double* dy = self.grad.data();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::int64_t s = 0; s < n; ++s) {
                const double* src = dy + s * (ca + cb) * plane;
                double* dst = pa->grad.data() + s * ca * plane;
                for (std::int64_t i = 0; i < ca * plane; ++i) dst[i] += src[i];
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::int64_t s = 0; s < n; ++s) {
                const double* src = dy + (s * (ca + cb) + ca) * plane;
                double* dst = pb->grad.data() + s * cb * plane;
                for (std::int64_t i = 0; i < cb * plane; ++i) dst[i] += src[i];
            }
        }
    });
}

namespace {
// reflect-101 index: 0 1 2 ... H-1 H-2 H-3 ...
std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    if (i < n) return i;
    return 2 * n - 2 - i;
}
}  // namespace

Var reflect_pad2d(const Var& x, int pad_bottom, int pad_right) {
    const Tensor& v = x.value();
    if (v.rank() != 4) throw InvalidInputError("reflect_pad2d: expected 4-d input");
    const std::int64_t n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
    if (pad_bottom >= h || pad_right >= w) throw InvalidInputError("reflect_pad2d: pad exceeds input size");
    const std::int64_t oh = h + pad_bottom, ow = w + pad_right;
    Tensor out({n, c, oh, ow});
    const double* px = v.data();
    double* py = out.data();
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const double* plane = px + nc * h * w;
        double* oplane = py + nc * oh * ow;
        for (std::int64_t i = 0; i < oh; ++i) {
            const std::int64_t si = reflect_index(i, h);
            for (std::int64_t j = 0; j < ow; ++j) {
                oplane[i * ow + j] = plane[si * w + reflect_index(j, w)];
            }
        }
    }
    auto node = make_node(std::move(out), any_requires_grad(x));
    return finish(node, {x.node()}, [n, c, h, w, oh, ow](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        const double* dy = self.grad.data();
        double* dx = p->grad.data();
        for (std::int64_t nc = 0; nc < n * c; ++nc) {
            const double* oplane = dy + nc * oh * ow;
            double* plane = dx + nc * h * w;
            for (std::int64_t i = 0; i < oh; ++i) {
                const std::int64_t si = reflect_index(i, h);
                for (std::int64_t j = 0; j < ow; ++j) {
                    plane[si * w + reflect_index(j, w)] += oplane[i * ow + j];
                }
            }
        }
    });
}

Var crop2d(const Var& x, std::int64_t out_h, std::int64_t out_w) {
    const Tensor& v = x.value();
    if (v.rank() != 4) throw InvalidInputError("crop2d: expected 4-d input");
    const std::int64_t n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
    if (out_h > h || out_w > w) throw InvalidInputError("crop2d: crop larger than input");
    if (out_h == h && out_w == w) return Var(x.node());
    Tensor out({n, c, out_h, out_w});
    const double* px = v.data();
    double* py = out.data();
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        for (std::int64_t i = 0; i < out_h; ++i) {
            std::memcpy(py + (nc * out_h + i) * out_w, px + (nc * h + i) * w,
                        sizeof(double) * static_cast<std::size_t>(out_w));
        }
    }
    auto node = make_node(std::move(out), any_requires_grad(x));
    return finish(node, {x.node()}, [n, c, h, w, out_h, out_w](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        const double* dy = self.grad.data();
        double* dx = p->grad.data();
        for (std::int64_t nc = 0; nc < n * c; ++nc) {
            for (std::int64_t i = 0; i < out_h; ++i) {
                const double* src = dy + (nc * out_h + i) * out_w;
                double* dst = dx + (nc * h + i) * w;
                for (std::int64_t j = 0; j < out_w; ++j) dst[j] += src[j];
            }
        }
    });
}

namespace {

// Shared normalization backward for a group of `count` values with mean mu
// and inverse stddev istd: dx = istd * (g - mean(g) - xhat * mean(g * xhat)),
// where g = dy * gamma.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> istd;
};

}  // namespace

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Tensor& v = x.value();
    if (v.rank() != 4) throw InvalidInputError("instance_norm: expected 4-d input");
    const std::int64_t n = v.dim(0), c = v.dim(1), hw = v.dim(2) * v.dim(3);
    if (gamma.value().numel() != c || beta.value().numel() != c) {
        throw InvalidInputError("instance_norm: affine parameter size mismatch");
    }
    Tensor out(v.shape());
    auto stats = std::make_shared<NormStats>();
    stats->mean.resize(static_cast<std::size_t>(n * c));
    stats->istd.resize(static_cast<std::size_t>(n * c));
    const double* px = v.data();
    const double* pg = gamma.value().data();
    const double* pb = beta.value().data();
    double* py = out.data();

    parallel_for(n * c, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t nc = begin; nc < end; ++nc) {
            const double* plane = px + nc * hw;
            double mu = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) mu += plane[i];
            mu /= static_cast<double>(hw);
            double var = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) {
                const double dlt = plane[i] - mu;
                var += dlt * dlt;
            }
            var /= static_cast<double>(hw);
            const double istd = 1.0 / std::sqrt(var + eps);
            stats->mean[static_cast<std::size_t>(nc)] = mu;
            stats->istd[static_cast<std::size_t>(nc)] = istd;
            const std::int64_t ch = nc % c;
            double* oplane = py + nc * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                oplane[i] = pg[ch] * (plane[i] - mu) * istd + pb[ch];
            }
        }
    });

    auto node = make_node(std::move(out), any_requires_grad(x, gamma, beta));
    return finish(node, {x.node(), gamma.node(), beta.node()}, [stats, n, c, hw](Node& self) {
        Node* xn = self.parents[0].get();
        Node* gn = self.parents[1].get();
        Node* bn = self.parents[2].get();
        if (xn->requires_grad) xn->ensure_grad();
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        const double* dy = self.grad.data();
        const double* px = xn->value.data();
        const double* pg = gn->value.data();
        for (std::int64_t nc = 0; nc < n * c; ++nc) {
            const std::int64_t ch = nc % c;
            const double mu = stats->mean[static_cast<std::size_t>(nc)];
            const double istd = stats->istd[static_cast<std::size_t>(nc)];
            const double* plane = px + nc * hw;
            const double* dplane = dy + nc * hw;
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) {
                const double xhat = (plane[i] - mu) * istd;
                sum_dy += dplane[i];
                sum_dy_xhat += dplane[i] * xhat;
            }
            if (gn->requires_grad) gn->grad[ch] += sum_dy_xhat;
            if (bn->requires_grad) bn->grad[ch] += sum_dy;
            if (!xn->requires_grad) continue;
            const double g = pg[ch];
            const double mean_dy = sum_dy / static_cast<double>(hw);
            const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(hw);
            double* dxplane = xn->grad.data() + nc * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                const double xhat = (plane[i] - mu) * istd;
                dxplane[i] += g * istd * (dplane[i] - mean_dy - xhat * mean_dy_xhat);
            }
        }
    });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
               bool use_batch_stats, bool update_running, double momentum, double eps) {
    const Tensor& v = x.value();
    if (v.rank() != 4) throw InvalidInputError("batch_norm: expected 4-d input");
    const std::int64_t n = v.dim(0), c = v.dim(1), hw = v.dim(2) * v.dim(3);
    if (gamma.value().numel() != c || beta.value().numel() != c || running_mean.numel() != c ||
        running_var.numel() != c) {
        throw InvalidInputError("batch_norm: parameter size mismatch");
    }
    const std::int64_t count = n * hw;
    Tensor out(v.shape());
    auto stats = std::make_shared<NormStats>();
    stats->mean.resize(static_cast<std::size_t>(c));
    stats->istd.resize(static_cast<std::size_t>(c));
    const double* px = v.data();
    const double* pg = gamma.value().data();
    const double* pb = beta.value().data();
    double* py = out.data();

    for (std::int64_t ch = 0; ch < c; ++ch) {
        double mu, istd;
        if (use_batch_stats) {
            double sum = 0.0;
            for (std::int64_t s = 0; s < n; ++s) {
                const double* plane = px + (s * c + ch) * hw;
                for (std::int64_t i = 0; i < hw; ++i) sum += plane[i];
            }
            mu = sum / static_cast<double>(count);
            double var = 0.0;
            for (std::int64_t s = 0; s < n; ++s) {
                const double* plane = px + (s * c + ch) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    const double dlt = plane[i] - mu;
                    var += dlt * dlt;
                }
            }
            var /= static_cast<double>(count);
            istd = 1.0 / std::sqrt(var + eps);
            if (update_running) {
                const double unbiased =
                    count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
                running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mu;
                running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * unbiased;
            }
        } else {
            mu = running_mean[ch];
            istd = 1.0 / std::sqrt(running_var[ch] + eps);
        }
        stats->mean[static_cast<std::size_t>(ch)] = mu;
        stats->istd[static_cast<std::size_t>(ch)] = istd;
        for (std::int64_t s = 0; s < n; ++s) {
            const double* plane = px + (s * c + ch) * hw;
            double* oplane = py + (s * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                oplane[i] = pg[ch] * (plane[i] - mu) * istd + pb[ch];
            }
        }
    }

    auto node = make_node(std::move(out), any_requires_grad(x, gamma, beta));
    return finish(node, {x.node(), gamma.node(), beta.node()},
                  [stats, n, c, hw, count, use_batch_stats](Node& self) {
                      Node* xn = self.parents[0].get();
                      Node* gn = self.parents[1].get();
                      Node* bn = self.parents[2].get();
                      if (xn->requires_grad) xn->ensure_grad();
                      if (gn->requires_grad) gn->ensure_grad();
                      if (bn->requires_grad) bn->ensure_grad();
                      const double* dy = self.grad.data();
                      const double* px = xn->value.data();
                      const double* pg = gn->value.data();
                      for (std::int64_t ch = 0; ch < c; ++ch) {
                          const double mu = stats->mean[static_cast<std::size_t>(ch)];
                          const double istd = stats->istd[static_cast<std::size_t>(ch)];
                          double sum_dy = 0.0, sum_dy_xhat = 0.0;
                          for (std::int64_t s = 0; s < n; ++s) {
                              const double* plane = px + (s * c + ch) * hw;
                              const double* dplane = dy + (s * c + ch) * hw;
                              for (std::int64_t i = 0; i < hw; ++i) {
                                  const double xhat = (plane[i] - mu) * istd;
                                  sum_dy += dplane[i];
                                  sum_dy_xhat += dplane[i] * xhat;
                              }
                          }
                          if (gn->requires_grad) gn->grad[ch] += sum_dy_xhat;
                          if (bn->requires_grad) bn->grad[ch] += sum_dy;
                          if (!xn->requires_grad) continue;
                          const double g = pg[ch];
                          if (use_batch_stats) {
                              const double mean_dy = sum_dy / static_cast<double>(count);
                              const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(count);
                              for (std::int64_t s = 0; s < n; ++s) {
                                  const double* plane = px + (s * c + ch) * hw;
                                  const double* dplane = dy + (s * c + ch) * hw;
                                  double* dxplane = xn->grad.data() + (s * c + ch) * hw;
                                  for (std::int64_t i = 0; i < hw; ++i) {
                                      const double xhat = (plane[i] - mu) * istd;
                                      dxplane[i] += g * istd * (dplane[i] - mean_dy - xhat * mean_dy_xhat);
                                  }
                              }
                          } else {
                              // Running statistics are constants.
                              for (std::int64_t s = 0; s < n; ++s) {
                                  const double* dplane = dy + (s * c + ch) * hw;
                                  double* dxplane = xn->grad.data() + (s * c + ch) * hw;
                                  for (std::int64_t i = 0; i < hw; ++i) dxplane[i] += g * istd * dplane[i];
                              }
                          }
                      }
                  });
}

Var softmax_channels(const Var& x) {
    const Tensor& v = x.value();
    if (v.rank() != 4) throw InvalidInputError("softmax_channels: expected 4-d input");
    const std::int64_t n = v.dim(0), c = v.dim(1), hw = v.dim(2) * v.dim(3);
    Tensor out(v.shape());
    const double* px = v.data();
    double* py = out.data();
    parallel_for(n, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t s = begin; s < end; ++s) {
            const double* base = px + s * c * hw;
            double* obase = py + s * c * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                double m = base[i];
                for (std::int64_t ch = 1; ch < c; ++ch) m = std::max(m, base[ch * hw + i]);
                double sum = 0.0;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double e = std::exp(base[ch * hw + i] - m);
                    obase[ch * hw + i] = e;
                    sum += e;
                }
                for (std::int64_t ch = 0; ch < c; ++ch) obase[ch * hw + i] /= sum;
            }
        }
    });
    auto node = make_node(std::move(out), any_requires_grad(x));
    return finish(node, {x.node()}, [n, c, hw](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        const double* dy = self.grad.data();
        const double* py = self.value.data();
        double* dx = p->grad.data();
        for (std::int64_t s = 0; s < n; ++s) {
            const double* ybase = py + s * c * hw;
            const double* dybase = dy + s * c * hw;
            double* dxbase = dx + s * c * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                double dot = 0.0;
                for (std::int64_t ch = 0; ch < c; ++ch) dot += dybase[ch * hw + i] * ybase[ch * hw + i];
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    dxbase[ch * hw + i] += ybase[ch * hw + i] * (dybase[ch * hw + i] - dot);
                }
            }
        }
    });
}

namespace {
constexpr double kProbFloor = 1e-7;
constexpr double kProbCeil = 1.0 - 1e-7;
}  // namespace

Var weighted_ce(const Var& prob, const Tensor& target, const Tensor& weights) {
    const Tensor& p = prob.value();
    if (p.rank() != 4 || p.dim(1) != 2) throw InvalidInputError("weighted_ce: prob must be (N, 2, H, W)");
    const std::int64_t n = p.dim(0), h = p.dim(2), w = p.dim(3), hw = h * w;
    if (target.numel() != n * hw || weights.numel() != n * hw) {
        throw InvalidInputError("weighted_ce: target/weights shape mismatch with prob " + p.shape_string());
    }
    const std::int64_t total = n * hw;
    const double* pp = p.data();
    const double* pt = target.data();
    const double* pw = weights.data();
    double sum = 0.0;
    for (std::int64_t s = 0; s < n; ++s) {
        const double* base = pp + s * 2 * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            const bool tumor = pt[s * hw + i] != 0.0;
            const double raw = tumor ? base[hw + i] : base[i];
            const double clamped = std::min(std::max(raw, kProbFloor), kProbCeil);
            sum += pw[s * hw + i] * -std::log(clamped);
        }
    }
    Tensor out({1});
    out[0] = sum / static_cast<double>(total);

    auto node = make_node(std::move(out), any_requires_grad(prob));
    auto target_copy = std::make_shared<Tensor>(target);
    auto weights_copy = std::make_shared<Tensor>(weights);
    return finish(node, {prob.node()}, [target_copy, weights_copy, n, hw, total](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        const double gy = self.grad[0];
        const double* pp = p->value.data();
        const double* pt = target_copy->data();
        const double* pw = weights_copy->data();
        double* dp = p->grad.data();
        for (std::int64_t s = 0; s < n; ++s) {
            const double* base = pp + s * 2 * hw;
            double* dbase = dp + s * 2 * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                const bool tumor = pt[s * hw + i] != 0.0;
                const std::int64_t idx = tumor ? hw + i : i;
                const double raw = base[idx];
                if (raw <= kProbFloor || raw >= kProbCeil) continue;  // clamp region
                dbase[idx] += gy * -pw[s * hw + i] / (raw * static_cast<double>(total));
            }
        }
    });
}

Var mse(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mse");
    const std::int64_t total = a.value().numel();
    if (total == 0) throw InvalidInputError("mse: empty input");
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double sum = 0.0;
    for (std::int64_t i = 0; i < total; ++i) {
        const double d = pa[i] - pb[i];
        sum += d * d;
    }
    Tensor out({1});
    out[0] = sum / static_cast<double>(total);
    auto node = make_node(std::move(out), any_requires_grad(a, b));
    return finish(node, {a.node(), b.node()}, [total](Node& self) {
        Node* na = self.parents[0].get();
        Node* nb = self.parents[1].get();
        const double gy = self.grad[0];
        const double* pa = na->value.data();
        const double* pb = nb->value.data();
        const double scale = 2.0 * gy / static_cast<double>(total);
        if (na->requires_grad) {
            na->ensure_grad();
            for (std::int64_t i = 0; i < total; ++i) na->grad[i] += scale * (pa[i] - pb[i]);
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (std::int64_t i = 0; i < total; ++i) nb->grad[i] -= scale * (pa[i] - pb[i]);
        }
    });
}

}  // namespace gvs
