#include "gvs/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "gvs/errors.hpp"
#include "gvs/rng.hpp"

namespace gvs {

double dice_score(const LesionMask& pred_mask, const LesionMask& gt) {
    require_same_shape(pred_mask.pixels, gt.pixels, "dice_score");
    constexpr double eps = 1e-6;
    std::int64_t inter = 0, np = 0, ng = 0;
    for (std::int64_t i = 0; i < gt.pixels.numel(); ++i) {
        const bool p = pred_mask.pixels[i] != 0.0;
        const bool g = gt.pixels[i] != 0.0;
        inter += (p && g) ? 1 : 0;
        np += p ? 1 : 0;
        ng += g ? 1 : 0;
    }
    return (2.0 * static_cast<double>(inter) + eps) / (static_cast<double>(np + ng) + eps);
}

namespace {

void check_metric_inputs(const ImageGrid& x_p, const ImageGrid& x_s, const LesionMask& y_t) {
    require_same_shape(x_p.pixels, x_s.pixels, "masked metric");
    require_same_shape(x_p.pixels, y_t.pixels, "masked metric");
    if (y_t.count() == y_t.pixels.numel()) {
        throw UndefinedMetricError("masked metric undefined: mask covers every pixel");
    }
}

Tensor apply_mask(const Tensor& img, const Tensor& mask) {
    Tensor out = img;
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        if (mask[i] != 0.0) out[i] = 0.0;
    }
    return out;
}

}  // namespace

double mpsnr(const ImageGrid& x_p, const ImageGrid& x_s, const LesionMask& y_t) {
    check_metric_inputs(x_p, x_s, y_t);
    const Tensor a = apply_mask(x_s.pixels, y_t.pixels);
    const Tensor b = apply_mask(x_p.pixels, y_t.pixels);
    double mse = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return 99.0;
    const double psnr = 10.0 * std::log10(1.0 / mse);
    return std::min(psnr, 99.0);
}

double mssim(const ImageGrid& x_p, const ImageGrid& x_s, const LesionMask& y_t) {
    check_metric_inputs(x_p, x_s, y_t);
    constexpr int kWindow = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2, L = 1
    constexpr double kC2 = 0.03 * 0.03;
    const std::int64_t h = x_p.height(), w = x_p.width();
    if (h < kWindow || w < kWindow) {
        throw InvalidInputError("mssim: image smaller than the 11x11 SSIM window");
    }
    const Tensor a = apply_mask(x_s.pixels, y_t.pixels);
    const Tensor b = apply_mask(x_p.pixels, y_t.pixels);

    // normalized separable Gaussian window
    double win[kWindow];
    double wsum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = static_cast<double>(i - kWindow / 2);
        win[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        wsum += win[i];
    }
    for (int i = 0; i < kWindow; ++i) win[i] /= wsum;

    double total = 0.0;
    std::int64_t count = 0;
    for (std::int64_t y = 0; y + kWindow <= h; ++y) {
        for (std::int64_t x = 0; x + kWindow <= w; ++x) {
            double mu_a = 0.0, mu_b = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
            for (int i = 0; i < kWindow; ++i) {
                for (int j = 0; j < kWindow; ++j) {
                    const double wt = win[i] * win[j];
                    const double va = a[(y + i) * w + (x + j)];
                    const double vb = b[(y + i) * w + (x + j)];
                    mu_a += wt * va;
                    mu_b += wt * vb;
                    aa += wt * va * va;
                    bb += wt * vb * vb;
                    ab += wt * va * vb;
                }
            }
            const double var_a = aa - mu_a * mu_a;
            const double var_b = bb - mu_b * mu_b;
            const double cov = ab - mu_a * mu_b;
            const double ssim = ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
                                ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
            total += ssim;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

void ADiceConfig::validate() const {
    if (!(eval_lr > 0.0)) throw InvalidConfigError("ADiceConfig: eval_lr must be > 0");
    if (epochs < 1) throw InvalidConfigError("ADiceConfig: epochs must be >= 1");
    if (repeats < 1) throw InvalidConfigError("ADiceConfig: repeats must be >= 1");
    if (batch_size < 1) throw InvalidConfigError("ADiceConfig: batch_size must be >= 1");
    if (!seeds.empty() && static_cast<int>(seeds.size()) < repeats) {
        throw InvalidConfigError("ADiceConfig: fewer seeds than repeats");
    }
}

std::uint64_t ADiceConfig::repeat_seed(int repeat) const {
    if (!seeds.empty()) return seeds[static_cast<std::size_t>(repeat)];
    return base_seed + static_cast<std::uint64_t>(repeat);
}

double adice_from_curve(const DiceCurve& curve) {
    if (curve.empty()) throw InvalidInputError("adice_from_curve: empty curve");
    double sum = 0.0;
    for (double v : curve) sum += v;
    return sum / static_cast<double>(curve.size());
}

namespace {

// Mean per-image dice of eval-mode argmax predictions.
double mean_train_dice(ParamSet& params, const SegmentorSpec& spec, const std::vector<ImageGrid>& images,
                       const std::vector<LesionMask>& masks, int batch_size) {
    NoGradGuard guard;
    double total = 0.0;
    const std::size_t n = images.size();
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
        std::vector<const ImageGrid*> batch;
        for (std::size_t i = start; i < std::min(n, start + static_cast<std::size_t>(batch_size)); ++i) {
            batch.push_back(&images[i]);
        }
        BatchForward fwd = segmentor_run(params, spec, Var::constant(pack_batch(batch)),
                                         ForwardOptions{RunMode::Eval, false, false});
        const Tensor& probs = fwd.output.value();
        const std::int64_t h = probs.dim(2), w = probs.dim(3), hw = h * w;
        for (std::size_t bi = 0; bi < batch.size(); ++bi) {
            LesionMask pred(h, w);
            const double* base = probs.data() + static_cast<std::int64_t>(bi) * 2 * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                pred.pixels[i] = base[hw + i] > base[i] ? 1.0 : 0.0;
            }
            total += dice_score(pred, masks[start + bi]);
        }
    }
    return total / static_cast<double>(n);
}

}  // namespace

ADiceResult adice(const std::vector<ImageGrid>& images, const std::vector<LesionMask>& masks,
                  const ADiceConfig& cfg) {
    cfg.validate();
    if (images.empty() || images.size() != masks.size()) {
        throw InvalidInputError("adice: empty or misaligned image/mask lists");
    }
    for (std::size_t i = 0; i < images.size(); ++i) {
        require_same_shape(images[i].pixels, masks[i].pixels, "adice");
    }

    ADiceResult result;
    for (int repeat = 0; repeat < cfg.repeats; ++repeat) {
        SegTrainConfig tc;
        tc.spec = cfg.spec;
        tc.lr = cfg.eval_lr;
        tc.beta1 = cfg.beta1;
        tc.beta2 = cfg.beta2;
        tc.adam_eps = cfg.adam_eps;
        tc.batch_size = cfg.batch_size;
        tc.epochs = cfg.epochs;
        tc.seed = cfg.repeat_seed(repeat);

        std::vector<const ImageGrid*> image_ptrs;
        std::vector<const LesionMask*> mask_ptrs;
        for (std::size_t i = 0; i < images.size(); ++i) {
            image_ptrs.push_back(&images[i]);
            mask_ptrs.push_back(&masks[i]);
        }

        DiceCurve curve;
        curve.reserve(static_cast<std::size_t>(cfg.epochs));
        train_segmentor(image_ptrs, mask_ptrs, tc, [&](int, ParamSet& params) {
            const double d = mean_train_dice(params, cfg.spec, images, masks, cfg.batch_size);
            if (!std::isfinite(d)) {
                throw NonFiniteLossError("adice: non-finite dice in repeat " + std::to_string(repeat));
            }
            curve.push_back(d);
        });
        result.per_repeat.push_back(adice_from_curve(curve));
        result.curves.push_back(std::move(curve));
    }
    double sum = 0.0;
    for (double v : result.per_repeat) sum += v;
    result.adice = sum / static_cast<double>(result.per_repeat.size());
    return result;
}

ImageGrid counterfeit_meanfill(const ImageGrid& x_p, const LesionMask& y_t) {
    require_same_shape(x_p.pixels, y_t.pixels, "counterfeit_meanfill");
    if (y_t.count() == y_t.pixels.numel()) {
        throw InvalidInputError("counterfeit_meanfill: mask covers every pixel");
    }
    ImageGrid out = x_p;
    if (y_t.count() == 0) return out;

    // "normal tissue" = non-lesion pixels inside the anatomy (nonzero)
    double sum = 0.0;
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < x_p.pixels.numel(); ++i) {
        if (y_t.pixels[i] == 0.0 && x_p.pixels[i] > 0.0) {
            sum += x_p.pixels[i];
            ++n;
        }
    }
    if (n == 0) throw InvalidInputError("counterfeit_meanfill: no normal tissue to average");
    const double mean = sum / static_cast<double>(n);
    for (std::int64_t i = 0; i < out.pixels.numel(); ++i) {
        if (y_t.pixels[i] != 0.0) out.pixels[i] = mean;
    }
    return out;
}

ImageGrid counterfeit_noisefill(const ImageGrid& x_p, const LesionMask& y_t, std::uint64_t seed) {
    require_same_shape(x_p.pixels, y_t.pixels, "counterfeit_noisefill");
    ImageGrid out = x_p;
    Rng rng(seed);
    for (std::int64_t i = 0; i < out.pixels.numel(); ++i) {
        if (y_t.pixels[i] != 0.0) {
            out.pixels[i] = std::clamp(out.pixels[i] + rng.normal(0.0, 0.2), 0.0, 1.0);
        }
    }
    return out;
}

GeneralizationReport segmentor_generalization(ParamSet& segmentor, const SegmentorSpec& spec,
                                              const std::vector<Sample>& data) {
    if (data.empty()) throw InvalidInputError("segmentor_generalization: empty dataset");
    GeneralizationReport report;
    NoGradGuard guard;
    for (const auto& sample : data) {
        ProbMap pred = segmentor_forward(sample.image, segmentor, spec, RunMode::Eval);
        report.per_image.push_back(dice_score(pred.argmax_mask(), sample.mask));
    }
    double sum = 0.0;
    for (double v : report.per_image) sum += v;
    report.mean = sum / static_cast<double>(report.per_image.size());
    double var = 0.0;
    for (double v : report.per_image) var += (v - report.mean) * (v - report.mean);
    report.variance = var / static_cast<double>(report.per_image.size());
    return report;
}

void MetricReport::validate() const {
    if (mssim_mean && !(*mssim_mean >= -1.0 && *mssim_mean <= 1.0)) {
        throw InvalidInputError("MetricReport: mssim out of [-1, 1]");
    }
    if (adice_mean && !(*adice_mean >= 0.0 && *adice_mean <= 1.0)) {
        throw InvalidInputError("MetricReport: adice out of [0, 1]");
    }
}

}  // namespace gvs
