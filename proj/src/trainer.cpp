#include "gvs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "gvs/checkpoint.hpp"
#include "gvs/errors.hpp"

namespace gvs {

void TrainConfig::validate() const {
    if (!(lambda > 0.0)) throw InvalidConfigError("TrainConfig: lambda must be > 0");
    if (!(lr > 0.0)) throw InvalidConfigError("TrainConfig: lr must be > 0");
    if (epochs < 1) throw InvalidConfigError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw InvalidConfigError("TrainConfig: batch_size must be >= 1");
    if (steps_per_phase < 1) throw InvalidConfigError("TrainConfig: steps_per_phase must be >= 1");
}

void SegTrainConfig::validate() const {
    if (!(lr > 0.0)) throw InvalidConfigError("SegTrainConfig: lr must be > 0");
    if (epochs < 1) throw InvalidConfigError("SegTrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw InvalidConfigError("SegTrainConfig: batch_size must be >= 1");
}

TrainState init_train_state(const TrainConfig& cfg) {
    cfg.validate();
    TrainState state;
    Rng rng_g = Rng::derive(cfg.seed, 1);
    Rng rng_s = Rng::derive(cfg.seed, 2);
    state.generator = init_generator(cfg.generator, rng_g);
    state.segmentor = init_segmentor(cfg.segmentor, rng_s);
    state.opt_g = Adam(cfg.adam(), state.generator);
    state.opt_s = Adam(cfg.adam(), state.segmentor);
    state.rng = Rng::derive(cfg.seed, 0);
    return state;
}

namespace {

Tensor pack_images(const std::vector<const Sample*>& batch) {
    std::vector<const ImageGrid*> images;
    images.reserve(batch.size());
    for (const Sample* s : batch) images.push_back(&s->image);
    return pack_batch(images);
}

Tensor pack_masks(const std::vector<const Sample*>& batch) {
    const std::int64_t h = batch[0]->mask.height(), w = batch[0]->mask.width();
    Tensor t({static_cast<std::int64_t>(batch.size()), h, w});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::copy(batch[i]->mask.pixels.data(), batch[i]->mask.pixels.data() + h * w,
                  t.data() + static_cast<std::int64_t>(i) * h * w);
    }
    return t;
}

void check_finite(double loss, const char* where) {
    if (!std::isfinite(loss)) {
        throw NonFiniteLossError(std::string(where) + ": non-finite loss " + std::to_string(loss));
    }
}

}  // namespace

void step_A(const std::vector<const Sample*>& batch, TrainState& state, const TrainConfig& cfg) {
    if (batch.empty()) throw InvalidInputError("step_A: empty batch");
    Tensor x_p = pack_images(batch);
    Tensor y_t = pack_masks(batch);

    // x_s with no gradient to G; G stays untouched
    Tensor x_s;
    {
        NoGradGuard guard;
        BatchForward g = generator_run(state.generator, cfg.generator, Var::constant(x_p),
                                       ForwardOptions{RunMode::Eval, false, false});
        x_s = g.output.value();
    }

    Var x_s_const = Var::constant(x_s);
    BatchForward s = segmentor_run(state.segmentor, cfg.segmentor, x_s_const,
                                   ForwardOptions{RunMode::Train, true, true});
    Var loss;
    if (cfg.use_difference_aware) {
        Tensor w = difference_weight_map_batch(x_p, x_s);
        loss = difference_aware_loss_graph(s.output, y_t, w, cfg.wce_mode);
    } else {
        loss = seg_ce_loss_graph(s.output, y_t);
    }
    check_finite(loss.value()[0], "step_A");
    backward(loss);
    state.opt_s.step(state.segmentor, s.leaves);
    state.last_l_seg = loss.value()[0];
}

void step_B(const std::vector<const Sample*>& batch, TrainState& state, const TrainConfig& cfg) {
    if (batch.empty()) throw InvalidInputError("step_B: empty batch");
    Tensor x_p = pack_images(batch);

    Var x_p_var = Var::constant(x_p);
    BatchForward g = generator_run(state.generator, cfg.generator, x_p_var,
                                   ForwardOptions{RunMode::Train, true, false});
    // segmentor frozen: constant leaves, no running-stat updates
    BatchForward s = segmentor_run(state.segmentor, cfg.segmentor, g.output,
                                   ForwardOptions{RunMode::Train, false, false});
    Var l_s2 = adv_fool_loss_graph(s.output);
    Var l_r = residual_loss_graph(g.output, x_p_var);
    Var l_g = add_scaled(l_s2, l_r, cfg.lambda);
    check_finite(l_g.value()[0], "step_B");
    backward(l_g);
    state.opt_g.step(state.generator, g.leaves);
    state.last_l_s2 = l_s2.value()[0];
    state.last_l_r = l_r.value()[0];
    state.last_l_g = l_g.value()[0];
}

void write_loss_csv(const std::vector<LossRow>& history, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InvalidInputError("cannot write loss csv " + path.string());
    out << "step,epoch,L_seg,L_s2,L_R,L_G\n";
    char buf[256];
    for (const auto& row : history) {
        std::snprintf(buf, sizeof(buf), "%lld,%d,%.17g,%.17g,%.17g,%.17g\n",
                      static_cast<long long>(row.step), row.epoch, row.l_seg, row.l_s2, row.l_r, row.l_g);
        out << buf;
    }
}

TrainState train_gvs(const std::vector<Sample>& data, const TrainConfig& cfg,
                     const std::optional<std::filesystem::path>& run_dir,
                     std::optional<TrainState> resume_from) {
    cfg.validate();
    if (data.empty()) throw InvalidInputError("train_gvs: empty dataset");
    for (const auto& s : data) s.validate();

    TrainState state = resume_from ? std::move(*resume_from) : init_train_state(cfg);

    if (run_dir) {
        std::filesystem::create_directories(*run_dir / "checkpoints");
    }

    std::vector<std::size_t> order(data.size());

    for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        // order restarts from identity so each epoch's permutation is a pure
        // function of the rng position; resumed runs replay it exactly
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        state.rng.shuffle(order);
        const std::size_t n = order.size();
        const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
        for (std::size_t start = 0; start < n; start += bs) {
            std::vector<const Sample*> batch;
            for (std::size_t i = start; i < std::min(n, start + bs); ++i) {
                batch.push_back(&data[order[i]]);
            }
            try {
                for (int k = 0; k < cfg.steps_per_phase; ++k) step_A(batch, state, cfg);
                for (int k = 0; k < cfg.steps_per_phase; ++k) step_B(batch, state, cfg);
            } catch (const NonFiniteLossError& e) {
                // diagnostic snapshot so the aborted state can be inspected
                if (run_dir) {
                    const auto diag = *run_dir / "diagnostic.ckpt";
                    save_checkpoint(diag, state, cfg);
                    throw NonFiniteLossError(std::string(e.what()) + " (state saved to " + diag.string() + ")");
                }
                throw;
            }
            ++state.global_step;
            state.history.push_back(LossRow{state.global_step, epoch + 1, state.last_l_seg, state.last_l_s2,
                                            state.last_l_r, state.last_l_g});
        }
        state.epoch = epoch + 1;
        if (run_dir) {
            save_checkpoint(*run_dir / "checkpoints" / ("epoch_" + std::to_string(state.epoch) + ".ckpt"), state,
                            cfg);
            write_loss_csv(state.history, *run_dir / "losses.csv");
        }
    }
    return state;
}

ParamSet train_segmentor(const std::vector<const ImageGrid*>& images, const std::vector<const LesionMask*>& masks,
                         const SegTrainConfig& cfg, const std::function<void(int, ParamSet&)>& on_epoch) {
    cfg.validate();
    if (images.empty() || images.size() != masks.size()) {
        throw InvalidInputError("train_segmentor: empty or misaligned inputs");
    }
    Rng init_rng = Rng::derive(cfg.seed, 11);
    ParamSet params = init_segmentor(cfg.spec, init_rng);
    Adam opt(cfg.adam(), params);
    Rng shuffle_rng = Rng::derive(cfg.seed, 12);

    std::vector<std::size_t> order(images.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);
        const std::size_t n = order.size();
        const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
        for (std::size_t start = 0; start < n; start += bs) {
            std::vector<const ImageGrid*> imgs;
            std::vector<const LesionMask*> msks;
            for (std::size_t i = start; i < std::min(n, start + bs); ++i) {
                imgs.push_back(images[order[i]]);
                msks.push_back(masks[order[i]]);
            }
            Tensor x = pack_batch(imgs);
            const std::int64_t h = x.dim(2), w = x.dim(3);
            Tensor y({static_cast<std::int64_t>(msks.size()), h, w});
            for (std::size_t i = 0; i < msks.size(); ++i) {
                std::copy(msks[i]->pixels.data(), msks[i]->pixels.data() + h * w,
                          y.data() + static_cast<std::int64_t>(i) * h * w);
            }
            BatchForward s = segmentor_run(params, cfg.spec, Var::constant(std::move(x)),
                                           ForwardOptions{RunMode::Train, true, true});
            Var loss = seg_ce_loss_graph(s.output, y);
            check_finite(loss.value()[0], "train_segmentor");
            backward(loss);
            opt.step(params, s.leaves);
        }
        if (on_epoch) on_epoch(epoch + 1, params);
    }
    return params;
}

}  // namespace gvs
