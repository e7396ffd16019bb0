#pragma once

#include <vector>

#include "gvs/image.hpp"
#include "gvs/networks.hpp"
#include "gvs/trainer.hpp"

namespace gvs {

// Direction of the enhancement residue. PaperLiteral moves the input toward
// the synthesis (x_p + a * (x_s - x_p)); PathologicalResidue adds the
// extracted pathological part back (x_p + a * (x_p - x_s)), which is what
// raises lesion contrast when the synthesis removed the lesion.
enum class SignMode { PaperLiteral, PathologicalResidue };

struct EnhanceConfig {
    std::vector<double> alpha_grid{0.0, 0.3, 0.5, 0.7, 1.0};
    SignMode sign_mode = SignMode::PathologicalResidue;
    bool clamp_output = true;

    void validate() const;
};

ImageGrid enhance(const ImageGrid& x_p, const ImageGrid& x_s, double alpha, const EnhanceConfig& cfg);

struct DownstreamResult {
    double alpha = 0.0;
    std::vector<double> per_image_dice;
    double mean_dice = 0.0;
    double delta_vs_baseline = 0.0;  // filled by the caller that ran the alpha = 0 arm
};

// Trains a fresh downstream segmentor on enhanced training images and scores
// dice on enhanced test images (test samples are enhanced with the same
// generator before prediction).
DownstreamResult run_downstream(const std::vector<Sample>& data_train, const std::vector<Sample>& data_test,
                                ParamSet& generator, const GeneratorSpec& gen_spec, double alpha,
                                const SegTrainConfig& seg_cfg, const EnhanceConfig& enh_cfg);

}  // namespace gvs
