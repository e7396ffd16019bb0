#include <doctest.h>

#include <cmath>

#include "gvs/dataset.hpp"
#include "gvs/errors.hpp"
#include "gvs/evaluation.hpp"
#include "gvs/rng.hpp"

using namespace gvs;

namespace {

LesionMask mask_with(std::int64_t h, std::int64_t w, std::initializer_list<std::int64_t> set_pixels) {
    LesionMask m(h, w);
    for (std::int64_t i : set_pixels) m.pixels[i] = 1.0;
    return m;
}

ImageGrid constant_image(std::int64_t h, std::int64_t w, double v) {
    ImageGrid img(h, w);
    img.pixels.fill(v);
    return img;
}

SegmentorSpec small_eval_spec() {
    SegmentorSpec spec;
    spec.levels = 2;
    spec.base_channels = 4;
    return spec;
}

}  // namespace

TEST_CASE("dice: identical nonempty masks score ~1, disjoint ~0") {
    LesionMask a = mask_with(4, 4, {1, 2, 5});
    CHECK(dice_score(a, a) > 0.999999);
    LesionMask b = mask_with(4, 4, {10, 11});
    CHECK(dice_score(a, b) < 1e-6);
}

TEST_CASE("dice: |pred|=4, |gt|=6, overlap=3 gives 0.6") {
    LesionMask pred = mask_with(4, 4, {0, 1, 2, 3});
    LesionMask gt = mask_with(4, 4, {1, 2, 3, 4, 5, 6});
    CHECK(std::abs(dice_score(pred, gt) - 0.6) < 1e-6);
    CHECK_THROWS_AS(dice_score(pred, LesionMask(3, 3)), InvalidInputError);
}

TEST_CASE("dice: empty masks are stable under the epsilon smoothing") {
    LesionMask e1(4, 4), e2(4, 4);
    CHECK(dice_score(e1, e2) == 1.0);  // (0 + eps) / (0 + eps)
}

TEST_CASE("mpsnr: identical and lesion-only-different pairs hit the sentinel") {
    auto samples = make_phantom(31, 32, 32, 1, 0.4);
    const Sample& s = samples[0];
    CHECK(mpsnr(s.image, s.image, s.mask) == 99.0);

    // differences strictly inside the lesion are masked away
    ImageGrid tweaked = s.image;
    for (std::int64_t i = 0; i < tweaked.pixels.numel(); ++i) {
        if (s.mask.pixels[i] != 0.0) tweaked.pixels[i] = 0.9 * tweaked.pixels[i];
    }
    CHECK(mpsnr(s.image, tweaked, s.mask) == 99.0);
}

TEST_CASE("mpsnr: hand-computed 2x2 case gives ~26.02 dB") {
    // one healthy pixel off by 0.1: MSE = 0.01 / 4, PSNR = 10 log10(400)
    ImageGrid a = constant_image(2, 2, 0.5);
    ImageGrid b = a;
    b.pixels[3] = 0.6;
    const double expected = 10.0 * std::log10(400.0);
    CHECK(std::abs(mpsnr(a, b, LesionMask(2, 2)) - expected) < 1e-6);
    CHECK(std::abs(expected - 26.0206) < 1e-3);
}

TEST_CASE("mpsnr: all-ones mask is undefined") {
    ImageGrid a = constant_image(2, 2, 0.5);
    LesionMask all = mask_with(2, 2, {0, 1, 2, 3});
    CHECK_THROWS_AS(mpsnr(a, a, all), UndefinedMetricError);
}

TEST_CASE("mssim: identity gives 1, lesion-only differences are masked away") {
    auto samples = make_phantom(32, 32, 32, 1, 0.4);
    const Sample& s = samples[0];
    CHECK(std::abs(mssim(s.image, s.image, s.mask) - 1.0) < 1e-12);

    ImageGrid tweaked = s.image;
    for (std::int64_t i = 0; i < tweaked.pixels.numel(); ++i) {
        if (s.mask.pixels[i] != 0.0) tweaked.pixels[i] = std::min(1.0, tweaked.pixels[i] + 0.3);
    }
    CHECK(std::abs(mssim(s.image, tweaked, s.mask) - 1.0) < 1e-12);
}

TEST_CASE("mssim: inverted image scores below 0.5") {
    auto samples = make_phantom(33, 48, 48, 1, 0.0);
    const Sample& s = samples[0];
    ImageGrid inverted = s.image;
    for (std::int64_t i = 0; i < inverted.pixels.numel(); ++i) inverted.pixels[i] = 1.0 - inverted.pixels[i];
    CHECK(mssim(s.image, inverted, s.mask) < 0.5);
}

TEST_CASE("mssim rejects images smaller than the window") {
    ImageGrid tiny = constant_image(8, 8, 0.5);
    CHECK_THROWS_AS(mssim(tiny, tiny, LesionMask(8, 8)), InvalidInputError);
}

TEST_CASE("masked metrics are insensitive to any lesion-only edit (property)") {
    Rng rng(77);
    auto samples = make_phantom(34, 32, 32, 3, 0.35);
    for (const auto& s : samples) {
        ImageGrid noisy = s.image;
        for (std::int64_t i = 0; i < noisy.pixels.numel(); ++i) {
            if (s.mask.pixels[i] != 0.0) noisy.pixels[i] = rng.uniform();
        }
        CHECK(mpsnr(s.image, noisy, s.mask) == 99.0);
        CHECK(std::abs(mssim(s.image, noisy, s.mask) - 1.0) < 1e-12);
    }
}

TEST_CASE("adice_from_curve implements the epoch mean") {
    CHECK(adice_from_curve(DiceCurve(20, 1.0)) == 1.0);
    DiceCurve linear;
    for (int e = 1; e <= 20; ++e) linear.push_back(static_cast<double>(e) / 20.0);
    CHECK(std::abs(adice_from_curve(linear) - 0.525) < 1e-12);
    CHECK_THROWS_AS(adice_from_curve({}), InvalidInputError);
}

TEST_CASE("adice: repeats are deterministic per seed and curves have length E") {
    auto samples = make_phantom(35, 32, 32, 12, 0.5);
    std::vector<ImageGrid> images;
    std::vector<LesionMask> masks;
    for (const auto& s : samples) {
        images.push_back(s.image);
        masks.push_back(s.mask);
    }
    ADiceConfig cfg;
    cfg.spec = small_eval_spec();
    cfg.epochs = 3;
    cfg.repeats = 2;
    cfg.batch_size = 4;
    cfg.base_seed = 5;

    ADiceResult r1 = adice(images, masks, cfg);
    ADiceResult r2 = adice(images, masks, cfg);
    REQUIRE(r1.curves.size() == 2);
    CHECK(r1.curves[0].size() == 3);
    CHECK(r1.adice == r2.adice);
    CHECK(r1.per_repeat == r2.per_repeat);
    for (double v : r1.per_repeat) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // different repeats see different init/batch streams
    CHECK(r1.per_repeat[0] != r1.per_repeat[1]);

    ADiceConfig bad = cfg;
    bad.eval_lr = 0.0;
    CHECK_THROWS_AS(adice(images, masks, bad), InvalidConfigError);
    CHECK_THROWS_AS(adice({}, {}, cfg), InvalidInputError);
}

TEST_CASE("counterfeit_meanfill: oracle masked mean and untouched pixels") {
    auto samples = make_phantom(36, 32, 32, 4, 0.4);
    for (const auto& s : samples) {
        ImageGrid filled = counterfeit_meanfill(s.image, s.mask);
        // independent masked-mean oracle
        double sum = 0.0;
        std::int64_t n = 0;
        for (std::int64_t i = 0; i < s.image.pixels.numel(); ++i) {
            if (s.mask.pixels[i] == 0.0 && s.image.pixels[i] > 0.0) {
                sum += s.image.pixels[i];
                ++n;
            }
        }
        const double mean = sum / static_cast<double>(n);
        for (std::int64_t i = 0; i < filled.pixels.numel(); ++i) {
            if (s.mask.pixels[i] != 0.0) {
                CHECK(filled.pixels[i] == mean);
            } else {
                CHECK(filled.pixels[i] == s.image.pixels[i]);
            }
        }
    }
}

TEST_CASE("counterfeit_meanfill: uniform tissue fills with that value, empty mask no-op") {
    ImageGrid img = constant_image(8, 8, 0.4);
    LesionMask mask = mask_with(8, 8, {9, 10});
    ImageGrid filled = counterfeit_meanfill(img, mask);
    CHECK(std::abs(filled.pixels[9] - 0.4) < 1e-12);

    ImageGrid untouched = counterfeit_meanfill(img, LesionMask(8, 8));
    CHECK(untouched.pixels.bit_equal(img.pixels));

    // all pixels lesion -> no normal region
    LesionMask all(8, 8);
    all.pixels.fill(1.0);
    CHECK_THROWS_AS(counterfeit_meanfill(img, all), InvalidInputError);
}

TEST_CASE("counterfeit_noisefill: determinism, no-op mask, and moment check") {
    // large synthetic lesion for the empirical std
    ImageGrid img = constant_image(128, 128, 0.5);
    LesionMask mask(128, 128);
    for (std::int64_t i = 0; i < mask.pixels.numel(); ++i) mask.pixels[i] = i < 10000 ? 1.0 : 0.0;

    ImageGrid a = counterfeit_noisefill(img, mask, 3);
    ImageGrid b = counterfeit_noisefill(img, mask, 3);
    CHECK(a.pixels.bit_equal(b.pixels));
    ImageGrid c = counterfeit_noisefill(img, mask, 4);
    CHECK_FALSE(a.pixels.bit_equal(c.pixels));

    ImageGrid untouched = counterfeit_noisefill(img, LesionMask(128, 128), 3);
    CHECK(untouched.pixels.bit_equal(img.pixels));

    // sample std over the 10,000-pixel lesion ~ 0.2 (clamping trims a little;
    // base 0.5 keeps most mass inside [0, 1])
    double sum = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < 10000; ++i) {
        const double d = a.pixels[i];
        sum += d;
        sq += d * d;
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
    }
    const double mean = sum / 10000.0;
    const double stddev = std::sqrt(sq / 10000.0 - mean * mean);
    CHECK(stddev > 0.17);
    CHECK(stddev < 0.21);
}

TEST_CASE("segmentor_generalization: oracle-like segmentor vs untrained baseline") {
    auto samples = make_phantom(37, 32, 32, 6, 0.5);

    // train briefly so the segmentor is a near-oracle on this easy task
    std::vector<const ImageGrid*> imgs;
    std::vector<const LesionMask*> msks;
    for (const auto& s : samples) {
        imgs.push_back(&s.image);
        msks.push_back(&s.mask);
    }
    SegTrainConfig cfg;
    cfg.spec = small_eval_spec();
    cfg.spec.base_channels = 8;
    cfg.epochs = 15;
    cfg.batch_size = 4;
    cfg.seed = 37;
    ParamSet trained = train_segmentor(imgs, msks, cfg);
    GeneralizationReport good = segmentor_generalization(trained, cfg.spec, samples);
    CHECK(good.per_image.size() == samples.size());

    Rng rng(1234);
    ParamSet fresh = init_segmentor(cfg.spec, rng);
    GeneralizationReport baseline = segmentor_generalization(fresh, cfg.spec, samples);

    CHECK(good.mean > baseline.mean);
    CHECK(good.mean > 0.5);

    // closed-form oracle: predictions independent of lesion position give
    // E[dice] ~ 2*p*f / (p + f) with p the predicted-positive rate and f the
    // lesion fraction
    double expected = 0.0;
    for (const auto& s : samples) {
        ProbMap pred = segmentor_forward(s.image, fresh, cfg.spec, RunMode::Eval);
        const double total = static_cast<double>(s.mask.pixels.numel());
        const double p_rate = static_cast<double>(pred.argmax_mask().count()) / total;
        const double f_rate = static_cast<double>(s.mask.count()) / total;
        expected += (p_rate + f_rate) > 0.0 ? 2.0 * p_rate * f_rate / (p_rate + f_rate) : 1.0;
    }
    expected /= static_cast<double>(samples.size());
    CHECK(std::abs(baseline.mean - expected) < 0.1);
}

TEST_CASE("metric report validation") {
    MetricReport report;
    report.mssim_mean = 2.0;
    CHECK_THROWS_AS(report.validate(), InvalidInputError);
    report.mssim_mean = 0.95;
    report.adice_mean = 1.4;
    CHECK_THROWS_AS(report.validate(), InvalidInputError);
    report.adice_mean = 0.4;
    report.validate();
}
