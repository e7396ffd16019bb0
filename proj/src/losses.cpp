#include "gvs/losses.hpp"

#include <algorithm>
#include <cmath>

#include "gvs/errors.hpp"

namespace gvs {

void WeightMap::validate() const {
    if (pixels.rank() != 2) throw InvalidInputError("WeightMap: expected 2-d tensor");
    for (std::int64_t i = 0; i < pixels.numel(); ++i) {
        const double v = pixels[i];
        if (!(v >= 0.1 && v <= 1.0)) {
            throw InvalidInputError("WeightMap: value out of [0.1, 1.0]: " + std::to_string(v));
        }
    }
}

namespace {

// Lifts a (H, W) image / (2, H, W) prob map into a batch-of-one tensor.
Tensor as_batch_image(const Tensor& t) {
    Tensor b({1, 1, t.dim(0), t.dim(1)});
    std::copy(t.data(), t.data() + t.numel(), b.data());
    return b;
}

Tensor as_batch_prob(const Tensor& t) {
    Tensor b({1, 2, t.dim(1), t.dim(2)});
    std::copy(t.data(), t.data() + t.numel(), b.data());
    return b;
}

Tensor as_batch_plane(const Tensor& t) {
    Tensor b({1, t.dim(0), t.dim(1)});
    std::copy(t.data(), t.data() + t.numel(), b.data());
    return b;
}

}  // namespace

Var seg_ce_loss_graph(const Var& prob, const Tensor& target) {
    Tensor ones(target.shape(), 1.0);
    return weighted_ce(prob, target, ones);
}

Var adv_fool_loss_graph(const Var& prob) {
    const Tensor& p = prob.value();
    Tensor zeros({p.dim(0), p.dim(2), p.dim(3)});
    Tensor ones({p.dim(0), p.dim(2), p.dim(3)}, 1.0);
    return weighted_ce(prob, zeros, ones);
}

Var residual_loss_graph(const Var& x_s, const Var& x_p) { return mse(x_s, x_p); }

Var difference_aware_loss_graph(const Var& prob, const Tensor& target, const Tensor& weight_map, WceMode mode) {
    if (target.numel() != weight_map.numel()) {
        throw InvalidInputError("difference_aware_loss: target/weight shape mismatch");
    }
    Tensor weights(target.shape());
    for (std::int64_t i = 0; i < target.numel(); ++i) {
        if (target[i] != 0.0) {
            weights[i] = weight_map[i];
        } else {
            weights[i] = mode == WceMode::TwoClass ? 1.0 : 0.0;
        }
    }
    return weighted_ce(prob, target, weights);
}

Tensor difference_weight_map_batch(const Tensor& x_p, const Tensor& x_s) {
    require_same_shape(x_p, x_s, "difference_weight_map");
    if (x_p.rank() != 4 || x_p.dim(1) != 1) {
        throw InvalidInputError("difference_weight_map_batch: expected (N, 1, H, W)");
    }
    const std::int64_t n = x_p.dim(0), hw = x_p.dim(2) * x_p.dim(3);
    Tensor w({n, x_p.dim(2), x_p.dim(3)});
    for (std::int64_t s = 0; s < n; ++s) {
        const double* pp = x_p.data() + s * hw;
        const double* ps = x_s.data() + s * hw;
        double* pw = w.data() + s * hw;
        double dmin = std::abs(pp[0] - ps[0]);
        double dmax = dmin;
        for (std::int64_t i = 1; i < hw; ++i) {
            const double d = std::abs(pp[i] - ps[i]);
            dmin = std::min(dmin, d);
            dmax = std::max(dmax, d);
        }
        const double range = dmax - dmin;
        for (std::int64_t i = 0; i < hw; ++i) {
            const double m = range > 0.0 ? (std::abs(pp[i] - ps[i]) - dmin) / range : 0.0;
            const double v = 1.0 - m;
            pw[i] = v < 0.1 ? 0.1 : v;
        }
    }
    return w;
}

LossValue seg_ce_loss(const ProbMap& pred, const LesionMask& target) {
    if (pred.height() != target.height() || pred.width() != target.width()) {
        throw InvalidInputError("seg_ce_loss: shape mismatch");
    }
    NoGradGuard guard;
    Var v = seg_ce_loss_graph(Var::constant(as_batch_prob(pred.probs)), as_batch_plane(target.pixels));
    return LossValue{v.value()[0], false};
}

LossValue adv_fool_loss(const ProbMap& pred) {
    NoGradGuard guard;
    Var v = adv_fool_loss_graph(Var::constant(as_batch_prob(pred.probs)));
    return LossValue{v.value()[0], false};
}

LossValue residual_loss(const ImageGrid& x_p, const ImageGrid& x_s) {
    require_same_shape(x_p.pixels, x_s.pixels, "residual_loss");
    NoGradGuard guard;
    Var v = mse(Var::constant(as_batch_image(x_s.pixels)), Var::constant(as_batch_image(x_p.pixels)));
    return LossValue{v.value()[0], false};
}

LossValue generator_total(const LossValue& ls2, const LossValue& lr_, double lambda_) {
    if (!(lambda_ > 0.0)) throw InvalidConfigError("generator_total: lambda must be > 0");
    return LossValue{ls2.value + lambda_ * lr_.value, ls2.has_gradient && lr_.has_gradient};
}

WeightMap difference_weight_map(const ImageGrid& x_p, const ImageGrid& x_s) {
    require_same_shape(x_p.pixels, x_s.pixels, "difference_weight_map");
    Tensor batch = difference_weight_map_batch(as_batch_image(x_p.pixels), as_batch_image(x_s.pixels));
    Tensor out({x_p.height(), x_p.width()});
    std::copy(batch.data(), batch.data() + out.numel(), out.data());
    WeightMap w{std::move(out)};
    return w;
}

LossValue difference_aware_loss(const ProbMap& pred, const LesionMask& target, const WeightMap& w, WceMode mode) {
    if (pred.height() != target.height() || pred.width() != target.width()) {
        throw InvalidInputError("difference_aware_loss: pred/target shape mismatch");
    }
    require_same_shape(target.pixels, w.pixels, "difference_aware_loss");
    w.validate();
    NoGradGuard guard;
    Var v = difference_aware_loss_graph(Var::constant(as_batch_prob(pred.probs)), as_batch_plane(target.pixels),
                                        as_batch_plane(w.pixels), mode);
    return LossValue{v.value()[0], false};
}

}  // namespace gvs
