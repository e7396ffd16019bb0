#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gvs/image.hpp"
#include "gvs/networks.hpp"
#include "gvs/trainer.hpp"

namespace gvs {

// Per-epoch dice values of the evaluation segmentor on its own training set.
using DiceCurve = std::vector<double>;

// (2*|pred & gt| + eps) / (|pred| + |gt| + eps) with eps = 1e-6.
double dice_score(const LesionMask& pred_mask, const LesionMask& gt);

// Masked PSNR: PSNR[(1 - y_t) * x_s, (1 - y_t) * x_p] over the full grids
// with peak 1.0; a zero-MSE pair reports the 99.0 dB sentinel. Raises
// UndefinedMetricError when y_t masks every pixel.
double mpsnr(const ImageGrid& x_p, const ImageGrid& x_s, const LesionMask& y_t);

// Masked single-scale SSIM (11-tap Gaussian window, sigma 1.5, K1=0.01,
// K2=0.03, dynamic range 1.0); images must be at least 11x11.
double mssim(const ImageGrid& x_p, const ImageGrid& x_s, const LesionMask& y_t);

struct ADiceConfig {
    double eval_lr = 0.1;
    int epochs = 20;
    int repeats = 3;
    int batch_size = 8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t base_seed = 0;
    std::vector<std::uint64_t> seeds;  // explicit per-repeat seeds; else derived from base_seed
    SegmentorSpec spec;

    void validate() const;
    std::uint64_t repeat_seed(int repeat) const;
};

double adice_from_curve(const DiceCurve& curve);

struct ADiceResult {
    double adice = 0.0;                 // mean over repeats
    std::vector<double> per_repeat;
    std::vector<DiceCurve> curves;
};

// Trains a fresh evaluation segmentor per repeat on (images, masks) at the
// high evaluation learning rate, recording the mean per-image dice on the
// same training data after every epoch; A-Dice is the mean of those values.
ADiceResult adice(const std::vector<ImageGrid>& images, const std::vector<LesionMask>& masks,
                  const ADiceConfig& cfg);

// Lesion pixels replaced by the mean intensity of normal (non-lesion,
// nonzero) tissue.
ImageGrid counterfeit_meanfill(const ImageGrid& x_p, const LesionMask& y_t);

// Lesion pixels perturbed by N(0, 0.2) noise, clamped to [0, 1].
ImageGrid counterfeit_noisefill(const ImageGrid& x_p, const LesionMask& y_t, std::uint64_t seed);

struct GeneralizationReport {
    std::vector<double> per_image;
    double mean = 0.0;
    double variance = 0.0;
};

// Dice of the segmentor's raw-pathological-image predictions against y_t.
GeneralizationReport segmentor_generalization(ParamSet& segmentor, const SegmentorSpec& spec,
                                              const std::vector<Sample>& data);

struct MetricReport {
    std::optional<double> mpsnr_mean;
    std::optional<double> mssim_mean;
    std::optional<double> adice_mean;
    std::vector<double> adice_repeats;
    std::vector<DiceCurve> dice_curves;
    std::string config_hash;

    void validate() const;
};

}  // namespace gvs
