#include <doctest.h>

#include <cmath>

#include "gvs/errors.hpp"
#include "gvs/losses.hpp"
#include "gvs/networks.hpp"
#include "gvs/rng.hpp"

using namespace gvs;

namespace {

GeneratorSpec tiny_generator_spec() {
    GeneratorSpec spec;
    spec.base_channels = 4;
    spec.down_stages = 1;
    spec.res_blocks = 1;
    return spec;
}

SegmentorSpec tiny_segmentor_spec() {
    SegmentorSpec spec;
    spec.levels = 2;
    spec.base_channels = 4;
    return spec;
}

ImageGrid random_image(std::int64_t h, std::int64_t w, Rng& rng) {
    ImageGrid img(h, w);
    for (std::int64_t i = 0; i < img.pixels.numel(); ++i) img.pixels[i] = rng.uniform();
    return img;
}

}  // namespace

TEST_CASE("paramset enumeration order is stable and snapshots are deep") {
    Rng rng(1);
    ParamSet ps = init_generator(tiny_generator_spec(), rng);
    CHECK(ps.size() > 0);
    CHECK(ps.all_finite());

    ParamSet snap = ps.snapshot();
    CHECK(ps.equals(snap));
    const double saved = ps.entry(0).value[0];
    ps.entry(0).value[0] = saved + 1.0;
    CHECK_FALSE(ps.equals(snap));
    ps.entry(0).value[0] = saved;
    CHECK(ps.equals(snap));

    Rng rng2(1);
    ParamSet again = init_generator(tiny_generator_spec(), rng2);
    CHECK(ps.equals(again));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        CHECK(ps.entry(i).name == again.entry(i).name);
    }
}

TEST_CASE("generator preserves shape and output range") {
    Rng rng(2);
    GeneratorSpec spec = tiny_generator_spec();
    ParamSet g = init_generator(spec, rng);

    for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{64, 64}, {32, 48}, {33, 35}, {8, 8}}) {
        ImageGrid x = random_image(h, w, rng);
        ImageGrid y = generator_forward(x, g, spec, RunMode::Eval);
        CHECK(y.height() == h);
        CHECK(y.width() == w);
        CHECK(y.pixels.min() >= 0.0);
        CHECK(y.pixels.max() <= 1.0);
    }
}

TEST_CASE("generator eval mode is deterministic") {
    Rng rng(3);
    GeneratorSpec spec = tiny_generator_spec();
    ParamSet g = init_generator(spec, rng);
    ImageGrid x = random_image(32, 32, rng);
    ImageGrid y1 = generator_forward(x, g, spec, RunMode::Eval);
    ImageGrid y2 = generator_forward(x, g, spec, RunMode::Eval);
    CHECK(y1.pixels.bit_equal(y2.pixels));
}

TEST_CASE("residual head stays bounded and reduces to near-identity at zero weights") {
    Rng rng(4);
    GeneratorSpec spec = tiny_generator_spec();
    spec.residual_head = true;
    ParamSet g = init_generator(spec, rng);
    ImageGrid x = random_image(16, 16, rng);
    ImageGrid y = generator_forward(x, g, spec, RunMode::Eval);
    CHECK(y.pixels.min() >= 0.0);
    CHECK(y.pixels.max() <= 1.0);

    // zero the head so the logit offset vanishes: output == clamped input
    g.value("head.weight").fill(0.0);
    g.value("head.bias").fill(0.0);
    ImageGrid id = generator_forward(x, g, spec, RunMode::Eval);
    for (std::int64_t i = 0; i < x.pixels.numel(); ++i) {
        CHECK(std::abs(id.pixels[i] - std::clamp(x.pixels[i], 1e-4, 1.0 - 1e-4)) < 1e-9);
    }
}

TEST_CASE("segmentor emits a valid per-pixel simplex at matching dims") {
    Rng rng(5);
    SegmentorSpec spec = tiny_segmentor_spec();
    ParamSet s = init_segmentor(spec, rng);
    for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{32, 32}, {33, 35}, {8, 8}}) {
        ImageGrid x = random_image(h, w, rng);
        ProbMap p = segmentor_forward(x, s, spec, RunMode::Eval);
        CHECK(p.height() == h);
        CHECK(p.width() == w);
        p.validate();
    }
}

TEST_CASE("segmentor eval mode deterministic; 4-level spec works on 64x64") {
    Rng rng(6);
    SegmentorSpec spec;  // defaults: 4 levels, base 32, batch norm
    ParamSet s = init_segmentor(spec, rng);
    ImageGrid x = random_image(64, 64, rng);
    ProbMap p1 = segmentor_forward(x, s, spec, RunMode::Eval);
    ProbMap p2 = segmentor_forward(x, s, spec, RunMode::Eval);
    CHECK(p1.probs.bit_equal(p2.probs));
    p1.validate();
}

TEST_CASE("segmentor without skip connections still runs") {
    Rng rng(7);
    SegmentorSpec spec = tiny_segmentor_spec();
    spec.skip_connections = false;
    ParamSet s = init_segmentor(spec, rng);
    ImageGrid x = random_image(16, 16, rng);
    ProbMap p = segmentor_forward(x, s, spec, RunMode::Eval);
    p.validate();
}

TEST_CASE("every trainable generator parameter receives a finite gradient") {
    Rng rng(8);
    GeneratorSpec spec = tiny_generator_spec();
    ParamSet g = init_generator(spec, rng);

    Tensor x({2, 1, 8, 8});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
    BatchForward fwd = generator_run(g, spec, Var::constant(x), ForwardOptions{RunMode::Train, true, false});
    Var loss = residual_loss_graph(fwd.output, Var::constant(x));
    backward(loss);
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!g.entry(i).trainable) continue;
        REQUIRE_MESSAGE(fwd.leaves[i].has_grad(), "no gradient for ", g.entry(i).name);
        CHECK_MESSAGE(fwd.leaves[i].grad().all_finite(), "non-finite gradient for ", g.entry(i).name);
    }
}

TEST_CASE("every trainable segmentor parameter receives a finite gradient") {
    Rng rng(9);
    SegmentorSpec spec = tiny_segmentor_spec();
    ParamSet s = init_segmentor(spec, rng);

    Tensor x({2, 1, 8, 8});
    Tensor y({2, 8, 8});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    BatchForward fwd = segmentor_run(s, spec, Var::constant(x), ForwardOptions{RunMode::Train, true, false});
    Var loss = seg_ce_loss_graph(fwd.output, y);
    backward(loss);
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!s.entry(i).trainable) continue;
        REQUIRE_MESSAGE(fwd.leaves[i].has_grad(), "no gradient for ", s.entry(i).name);
        CHECK_MESSAGE(fwd.leaves[i].grad().all_finite(), "non-finite gradient for ", s.entry(i).name);
    }
}

TEST_CASE("generator gradient matches finite differences on sampled parameters") {
    Rng rng(10);
    GeneratorSpec spec = tiny_generator_spec();
    ParamSet g = init_generator(spec, rng);
    Tensor x({1, 1, 8, 8});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = 0.5;

    auto loss_value = [&](ParamSet& params) {
        NoGradGuard guard;
        BatchForward fwd = generator_run(params, spec, Var::constant(x), ForwardOptions{RunMode::Eval, false, false});
        return residual_loss_graph(fwd.output, Var::constant(x)).value()[0];
    };

    BatchForward fwd = generator_run(g, spec, Var::constant(x), ForwardOptions{RunMode::Eval, true, false});
    Var loss = residual_loss_graph(fwd.output, Var::constant(x));
    backward(loss);

    Rng pick(11);
    for (int probe = 0; probe < 8; ++probe) {
        const auto pi = static_cast<std::size_t>(pick.uniform_int(g.size()));
        if (!g.entry(pi).trainable) continue;
        const auto idx = static_cast<std::int64_t>(pick.uniform_int(static_cast<std::uint64_t>(g.entry(pi).value.numel())));
        const double v = g.entry(pi).value[idx];
        const double h = 1e-5 * std::max(1.0, std::abs(v));
        g.entry(pi).value[idx] = v + h;
        const double lp = loss_value(g);
        g.entry(pi).value[idx] = v - h;
        const double lm = loss_value(g);
        g.entry(pi).value[idx] = v;
        const double numeric = (lp - lm) / (2.0 * h);
        const double analytic = fwd.leaves[pi].grad()[idx];
        const double denom = std::max(1e-6, std::abs(numeric) + std::abs(analytic));
        CHECK_MESSAGE(std::abs(numeric - analytic) / denom < 1e-3, g.entry(pi).name, " idx ", idx,
                      " numeric=", numeric, " analytic=", analytic);
    }
}

TEST_CASE("batch norm running buffers update only when asked") {
    Rng rng(12);
    SegmentorSpec spec = tiny_segmentor_spec();
    ParamSet s = init_segmentor(spec, rng);
    ParamSet before = s.snapshot();

    Tensor x({2, 1, 8, 8});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();

    // train-mode forward without update: bit-identical ParamSet
    (void)segmentor_run(s, spec, Var::constant(x), ForwardOptions{RunMode::Train, false, false});
    CHECK(s.equals(before));

    // with update: running buffers move, trainable weights do not
    (void)segmentor_run(s, spec, Var::constant(x), ForwardOptions{RunMode::Train, false, true});
    CHECK_FALSE(s.equals(before));
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.entry(i).trainable) {
            CHECK(s.entry(i).value.bit_equal(before.entry(i).value));
        }
    }
}

TEST_CASE("adam moves only trainable parameters with gradients") {
    Rng rng(13);
    SegmentorSpec spec = tiny_segmentor_spec();
    ParamSet s = init_segmentor(spec, rng);
    Adam opt(Adam::Config{0.01, 0.9, 0.999, 1e-8}, s);

    Tensor x({1, 1, 8, 8});
    Tensor y({1, 8, 8});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
    y[12] = 1.0;

    ParamSet before = s.snapshot();
    BatchForward fwd = segmentor_run(s, spec, Var::constant(x), ForwardOptions{RunMode::Train, true, false});
    Var loss = seg_ce_loss_graph(fwd.output, y);
    backward(loss);
    opt.step(s, fwd.leaves);
    CHECK(opt.step_count() == 1);

    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.entry(i).trainable) {
            CHECK_FALSE(s.entry(i).value.bit_equal(before.entry(i).value));
        } else {
            CHECK(s.entry(i).value.bit_equal(before.entry(i).value));
        }
    }
}

TEST_CASE("spec validation rejects bad configurations") {
    Rng rng(14);
    GeneratorSpec bad_gen;
    bad_gen.norm = NormKind::Batch;
    CHECK_THROWS_AS(init_generator(bad_gen, rng), InvalidConfigError);

    SegmentorSpec bad_seg;
    bad_seg.levels = 1;
    CHECK_THROWS_AS(init_segmentor(bad_seg, rng), InvalidConfigError);

    CHECK_THROWS_AS(norm_kind_from_string("bogus"), InvalidConfigError);
}
