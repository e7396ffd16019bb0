#include "gvs/networks.hpp"

#include <algorithm>
#include <cmath>

#include "gvs/errors.hpp"

namespace gvs {

std::size_t ParamSet::add(std::string name, Tensor value, bool trainable) {
    if (index_.count(name)) throw InvalidConfigError("ParamSet: duplicate parameter '" + name + "'");
    const std::size_t idx = entries_.size();
    index_.emplace(name, idx);
    entries_.push_back(Entry{std::move(name), std::move(value), trainable});
    return idx;
}

std::size_t ParamSet::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidConfigError("ParamSet: unknown parameter '" + name + "'");
    return it->second;
}

bool ParamSet::equals(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const Entry& a = entries_[i];
        const Entry& b = other.entries_[i];
        if (a.name != b.name || a.trainable != b.trainable || !a.value.bit_equal(b.value)) return false;
    }
    return true;
}

bool ParamSet::all_finite() const {
    for (const auto& e : entries_) {
        if (!e.value.all_finite()) return false;
    }
    return true;
}

std::int64_t ParamSet::total_scalars() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
}

NormKind norm_kind_from_string(const std::string& s) {
    if (s == "instance") return NormKind::Instance;
    if (s == "batch") return NormKind::Batch;
    if (s == "none") return NormKind::None;
    throw InvalidConfigError("unknown norm kind '" + s + "'");
}

std::string to_string(NormKind k) {
    switch (k) {
        case NormKind::Instance: return "instance";
        case NormKind::Batch: return "batch";
        case NormKind::None: return "none";
    }
    return "none";
}

namespace {

// He-style normal init for relu convs; `gain` scales the stddev.
void add_conv(ParamSet& ps, Rng& rng, const std::string& name, int in_c, int out_c, int k, double gain) {
    Tensor w({out_c, in_c, k, k});
    const double fan_in = static_cast<double>(in_c * k * k);
    const double stddev = gain * std::sqrt(2.0 / fan_in);
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, stddev);
    ps.add(name + ".weight", std::move(w));
    ps.add(name + ".bias", Tensor({out_c}));
}

void add_norm(ParamSet& ps, const std::string& name, int channels, NormKind kind) {
    if (kind == NormKind::None) return;
    ps.add(name + ".gamma", Tensor({channels}, 1.0));
    ps.add(name + ".beta", Tensor({channels}));
    if (kind == NormKind::Batch) {
        ps.add(name + ".running_mean", Tensor({channels}), /*trainable=*/false);
        ps.add(name + ".running_var", Tensor({channels}, 1.0), /*trainable=*/false);
    }
}

constexpr double kBnMomentum = 0.1;
constexpr double kNormEps = 1e-5;

// Binds every entry once per forward; frozen or unbound runs use constant
// leaves so no graph is recorded behind them.
std::vector<Var> bind_leaves(const ParamSet& ps, bool bind_grad) {
    std::vector<Var> leaves;
    leaves.reserve(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& e = ps.entry(i);
        leaves.push_back(Var::leaf(e.value, bind_grad && e.trainable));
    }
    return leaves;
}

struct NetContext {
    ParamSet& params;
    const std::vector<Var>& leaves;
    ForwardOptions opt;

    const Var& leaf(const std::string& name) const { return leaves[params.index_of(name)]; }

    Var conv(const std::string& name, const Var& x, int stride, int pad) const {
        return conv2d(x, leaf(name + ".weight"), leaf(name + ".bias"), stride, pad);
    }

    Var norm(const std::string& name, const Var& x, NormKind kind) const {
        switch (kind) {
            case NormKind::None: return x;
            case NormKind::Instance:
                return instance_norm(x, leaf(name + ".gamma"), leaf(name + ".beta"), kNormEps);
            case NormKind::Batch: {
                Tensor& rm = params.value(name + ".running_mean");
                Tensor& rv = params.value(name + ".running_var");
                const bool batch_stats = opt.mode == RunMode::Train;
                return batch_norm(x, leaf(name + ".gamma"), leaf(name + ".beta"), rm, rv, batch_stats,
                                  opt.update_running && batch_stats, kBnMomentum, kNormEps);
            }
        }
        return x;
    }
};

// Pads (H, W) up to a multiple of `alignment`; returns the padded Var.
Var pad_to_alignment(const Var& x, int alignment, std::int64_t& orig_h, std::int64_t& orig_w) {
    orig_h = x.value().dim(2);
    orig_w = x.value().dim(3);
    const std::int64_t ph = (alignment - orig_h % alignment) % alignment;
    const std::int64_t pw = (alignment - orig_w % alignment) % alignment;
    if (ph == 0 && pw == 0) return x;
    return reflect_pad2d(x, static_cast<int>(ph), static_cast<int>(pw));
}

}  // namespace

ParamSet init_generator(const GeneratorSpec& spec, Rng& rng) {
    if (spec.base_channels < 1 || spec.down_stages < 0 || spec.res_blocks < 0) {
        throw InvalidConfigError("init_generator: bad spec");
    }
    if (spec.norm == NormKind::Batch) {
        throw InvalidConfigError("init_generator: batch norm is not supported in the generator");
    }
    ParamSet ps;
    int c = spec.base_channels;
    add_conv(ps, rng, "stem", 1, c, 7, 1.0);
    add_norm(ps, "stem.norm", c, spec.norm);
    for (int i = 0; i < spec.down_stages; ++i) {
        add_conv(ps, rng, "down" + std::to_string(i), c, 2 * c, 3, 1.0);
        add_norm(ps, "down" + std::to_string(i) + ".norm", 2 * c, spec.norm);
        c *= 2;
    }
    for (int i = 0; i < spec.res_blocks; ++i) {
        const std::string base = "res" + std::to_string(i);
        add_conv(ps, rng, base + ".conv1", c, c, 3, 1.0);
        add_norm(ps, base + ".norm1", c, spec.norm);
        add_conv(ps, rng, base + ".conv2", c, c, 3, 1.0);
        add_norm(ps, base + ".norm2", c, spec.norm);
    }
    for (int i = 0; i < spec.down_stages; ++i) {
        add_conv(ps, rng, "up" + std::to_string(i), c, c / 2, 3, 1.0);
        add_norm(ps, "up" + std::to_string(i) + ".norm", c / 2, spec.norm);
        c /= 2;
    }
    add_conv(ps, rng, "head", c, 1, 7, 0.5);
    return ps;
}

BatchForward generator_run(ParamSet& params, const GeneratorSpec& spec, const Var& x, const ForwardOptions& opt) {
    if (x.value().rank() != 4 || x.value().dim(1) != 1) {
        throw InvalidInputError("generator_run: expected (N, 1, H, W) input, got " + x.value().shape_string());
    }
    std::vector<Var> leaves = bind_leaves(params, opt.bind_grad);
    NetContext ctx{params, leaves, opt};

    std::int64_t orig_h = 0, orig_w = 0;
    Var h = pad_to_alignment(x, spec.alignment(), orig_h, orig_w);
    const Var padded_input = h;

    h = relu(ctx.norm("stem.norm", ctx.conv("stem", h, 1, 3), spec.norm));
    for (int i = 0; i < spec.down_stages; ++i) {
        const std::string base = "down" + std::to_string(i);
        h = relu(ctx.norm(base + ".norm", ctx.conv(base, h, 2, 1), spec.norm));
    }
    for (int i = 0; i < spec.res_blocks; ++i) {
        const std::string base = "res" + std::to_string(i);
        Var r = relu(ctx.norm(base + ".norm1", ctx.conv(base + ".conv1", h, 1, 1), spec.norm));
        r = ctx.norm(base + ".norm2", ctx.conv(base + ".conv2", r, 1, 1), spec.norm);
        h = add(h, r);
    }
    for (int i = 0; i < spec.down_stages; ++i) {
        const std::string base = "up" + std::to_string(i);
        h = relu(ctx.norm(base + ".norm", ctx.conv(base, upsample_nearest2x(h), 1, 1), spec.norm));
    }
    Var z = ctx.conv("head", h, 1, 3);
    if (spec.residual_head) {
        // logit of the input as a constant baseline: z = 0 reproduces x
        Tensor baseline = padded_input.value();
        for (std::int64_t i = 0; i < baseline.numel(); ++i) {
            const double p = std::clamp(baseline[i], 1e-4, 1.0 - 1e-4);
            baseline[i] = std::log(p / (1.0 - p));
        }
        z = add_constant(z, baseline);
    }
    Var out = crop2d(sigmoid(z), orig_h, orig_w);
    return BatchForward{out, std::move(leaves)};
}

ParamSet init_segmentor(const SegmentorSpec& spec, Rng& rng) {
    if (spec.levels < 2 || spec.base_channels < 1) throw InvalidConfigError("init_segmentor: bad spec");
    ParamSet ps;
    int in_c = 1;
    for (int level = 0; level < spec.levels; ++level) {
        const int c = spec.base_channels << level;
        const std::string base = "enc" + std::to_string(level);
        add_conv(ps, rng, base + ".conv1", in_c, c, 3, 1.0);
        add_norm(ps, base + ".norm1", c, spec.norm);
        add_conv(ps, rng, base + ".conv2", c, c, 3, 1.0);
        add_norm(ps, base + ".norm2", c, spec.norm);
        in_c = c;
    }
    for (int level = spec.levels - 2; level >= 0; --level) {
        const int c = spec.base_channels << level;
        const std::string base = "dec" + std::to_string(level);
        add_conv(ps, rng, base + ".up", 2 * c, c, 3, 1.0);
        add_norm(ps, base + ".upnorm", c, spec.norm);
        const int merged = spec.skip_connections ? 2 * c : c;
        add_conv(ps, rng, base + ".conv1", merged, c, 3, 1.0);
        add_norm(ps, base + ".norm1", c, spec.norm);
        add_conv(ps, rng, base + ".conv2", c, c, 3, 1.0);
        add_norm(ps, base + ".norm2", c, spec.norm);
    }
    add_conv(ps, rng, "head", spec.base_channels, 2, 1, 0.5);
    return ps;
}

BatchForward segmentor_run(ParamSet& params, const SegmentorSpec& spec, const Var& x, const ForwardOptions& opt) {
    if (x.value().rank() != 4 || x.value().dim(1) != 1) {
        throw InvalidInputError("segmentor_run: expected (N, 1, H, W) input, got " + x.value().shape_string());
    }
    std::vector<Var> leaves = bind_leaves(params, opt.bind_grad);
    NetContext ctx{params, leaves, opt};

    std::int64_t orig_h = 0, orig_w = 0;
    Var h = pad_to_alignment(x, spec.alignment(), orig_h, orig_w);

    auto block = [&](const std::string& base, Var input) {
        Var t = relu(ctx.norm(base + ".norm1", ctx.conv(base + ".conv1", input, 1, 1), spec.norm));
        return relu(ctx.norm(base + ".norm2", ctx.conv(base + ".conv2", t, 1, 1), spec.norm));
    };

    std::vector<Var> skips;
    for (int level = 0; level < spec.levels; ++level) {
        if (level > 0) h = maxpool2x2(h);
        h = block("enc" + std::to_string(level), h);
        if (level + 1 < spec.levels) skips.push_back(h);
    }
    for (int level = spec.levels - 2; level >= 0; --level) {
        const std::string base = "dec" + std::to_string(level);
        h = relu(ctx.norm(base + ".upnorm", ctx.conv(base + ".up", upsample_nearest2x(h), 1, 1), spec.norm));
        if (spec.skip_connections) h = concat_channels(skips[static_cast<std::size_t>(level)], h);
        h = block(base, h);
    }
    Var out = crop2d(softmax_channels(ctx.conv("head", h, 1, 0)), orig_h, orig_w);
    return BatchForward{out, std::move(leaves)};
}

Tensor pack_batch(const std::vector<const ImageGrid*>& images) {
    if (images.empty()) throw InvalidInputError("pack_batch: empty batch");
    const std::int64_t h = images[0]->height(), w = images[0]->width();
    Tensor batch({static_cast<std::int64_t>(images.size()), 1, h, w});
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->height() != h || images[i]->width() != w) {
            throw InvalidInputError("pack_batch: inconsistent image shapes");
        }
        std::copy(images[i]->pixels.data(), images[i]->pixels.data() + h * w,
                  batch.data() + static_cast<std::int64_t>(i) * h * w);
    }
    return batch;
}

ImageGrid generator_forward(const ImageGrid& x, ParamSet& params, const GeneratorSpec& spec, RunMode mode) {
    x.validate();
    NoGradGuard guard;
    Tensor batch({1, 1, x.height(), x.width()});
    std::copy(x.pixels.data(), x.pixels.data() + x.pixels.numel(), batch.data());
    BatchForward fwd = generator_run(params, spec, Var::constant(std::move(batch)), ForwardOptions{mode, false, false});
    Tensor out({x.height(), x.width()});
    std::copy(fwd.output.value().data(), fwd.output.value().data() + out.numel(), out.data());
    return ImageGrid{std::move(out)};
}

ProbMap segmentor_forward(const ImageGrid& x, ParamSet& params, const SegmentorSpec& spec, RunMode mode) {
    x.validate();
    NoGradGuard guard;
    Tensor batch({1, 1, x.height(), x.width()});
    std::copy(x.pixels.data(), x.pixels.data() + x.pixels.numel(), batch.data());
    BatchForward fwd = segmentor_run(params, spec, Var::constant(std::move(batch)), ForwardOptions{mode, false, false});
    Tensor out({2, x.height(), x.width()});
    std::copy(fwd.output.value().data(), fwd.output.value().data() + out.numel(), out.data());
    return ProbMap{std::move(out)};
}

Adam::Adam(Config cfg, const ParamSet& params) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_.emplace_back(params.entry(i).value.shape());
        v_.emplace_back(params.entry(i).value.shape());
    }
}

void Adam::step(ParamSet& params, const std::vector<Var>& leaves) {
    if (leaves.size() != params.size() || m_.size() != params.size()) {
        throw InvalidConfigError("Adam::step: leaf/parameter count mismatch");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& e = params.entry(i);
        if (!e.trainable || !leaves[i].defined() || !leaves[i].has_grad()) continue;
        const Tensor& g = leaves[i].grad();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        Tensor& p = e.value;
        for (std::int64_t j = 0; j < p.numel(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace gvs
