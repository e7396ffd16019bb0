#pragma once

#include "gvs/autodiff.hpp"
#include "gvs/image.hpp"
#include "gvs/tensor.hpp"

namespace gvs {

struct LossValue {
    double value = 0.0;
    bool has_gradient = false;
};

// Per-pixel weights in [0.1, 1.0] derived from the input-vs-synthesis
// difference map; 1 leaves a pixel's loss untouched, 0.1 nearly mutes it.
struct WeightMap {
    Tensor pixels;  // (H, W)

    WeightMap() = default;
    explicit WeightMap(Tensor t) : pixels(std::move(t)) {}

    void validate() const;
};

// How the difference-aware loss treats background pixels. TwoClass applies
// weight 1 to no-tumor pixels; FormulaLiteral drops them entirely so only
// the weighted tumor term remains.
enum class WceMode { TwoClass, FormulaLiteral };

// --- spec-level operations (pure, no graph) ---------------------------------

// Mean over pixels of -log(probability of the true class).
LossValue seg_ce_loss(const ProbMap& pred, const LesionMask& target);

// Cross-entropy toward "no tumor" everywhere; identical to seg_ce_loss
// against an all-zero mask.
LossValue adv_fool_loss(const ProbMap& pred);

// Mean squared per-pixel difference.
LossValue residual_loss(const ImageGrid& x_p, const ImageGrid& x_s);

// ls2 + lambda * lr; lambda must be > 0.
LossValue generator_total(const LossValue& ls2, const LossValue& lr_, double lambda_);

// m = per-image min-max normalization of |x_p - x_s| (flat difference -> all
// zeros); w = 1 - m floored at 0.1.
WeightMap difference_weight_map(const ImageGrid& x_p, const ImageGrid& x_s);

// Weighted cross-entropy: tumor pixels contribute w(i) * -log(p_tumor),
// background pixels 1 * -log(p_notumor) (TwoClass), mean over all pixels.
LossValue difference_aware_loss(const ProbMap& pred, const LesionMask& target, const WeightMap& w,
                                WceMode mode = WceMode::TwoClass);

// --- batch graph builders (used by the trainer and gradient tests) ----------
// prob is (N, 2, H, W); target/weights are (N, H, W). The weight tensors are
// constants: no gradient flows through the weight map.

Var seg_ce_loss_graph(const Var& prob, const Tensor& target);
Var adv_fool_loss_graph(const Var& prob);
Var residual_loss_graph(const Var& x_s, const Var& x_p);
Var difference_aware_loss_graph(const Var& prob, const Tensor& target, const Tensor& weight_map, WceMode mode);

// Per-image weight maps for a whole batch; x_p and x_s are (N, 1, H, W),
// result is (N, H, W).
Tensor difference_weight_map_batch(const Tensor& x_p, const Tensor& x_s);

}  // namespace gvs
