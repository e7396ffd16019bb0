#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "gvs/autodiff.hpp"
#include "gvs/image.hpp"
#include "gvs/rng.hpp"
#include "gvs/tensor.hpp"

namespace gvs {

// Named parameter collection with a stable enumeration order (insertion
// order). Non-trainable entries hold normalization running buffers. Copies
// are deep, so snapshot() is just a copy; equals() is bitwise, which is what
// the freeze contracts assert.
class ParamSet {
public:
    struct Entry {
        std::string name;
        Tensor value;
        bool trainable = true;
    };

    std::size_t add(std::string name, Tensor value, bool trainable = true);

    std::size_t size() const { return entries_.size(); }
    const Entry& entry(std::size_t i) const { return entries_[i]; }
    Entry& entry(std::size_t i) { return entries_[i]; }

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t index_of(const std::string& name) const;
    Tensor& value(const std::string& name) { return entries_[index_of(name)].value; }
    const Tensor& value(const std::string& name) const { return entries_[index_of(name)].value; }

    ParamSet snapshot() const { return *this; }
    bool equals(const ParamSet& other) const;
    bool all_finite() const;
    std::int64_t total_scalars() const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class RunMode { Train, Eval };

enum class NormKind { Instance, Batch, None };

NormKind norm_kind_from_string(const std::string& s);
std::string to_string(NormKind k);

// Johnson-style encoder-decoder: stem conv, `down_stages` strided convs,
// `res_blocks` residual blocks, nearest-upsample decoder, sigmoid-bounded
// head. Output spatial size always equals input size.
struct GeneratorSpec {
    int base_channels = 32;
    int down_stages = 2;
    int res_blocks = 4;
    NormKind norm = NormKind::Instance;
    // When set the head predicts a logit offset from the input instead of
    // the image directly; output stays bounded in [0, 1].
    bool residual_head = false;

    int alignment() const { return 1 << down_stages; }
};

// U-Net: `levels` encoder resolutions (levels-1 poolings), channels doubling
// per level, optional skip connections, 2-class softmax head.
struct SegmentorSpec {
    int levels = 4;
    int base_channels = 32;
    bool skip_connections = true;
    NormKind norm = NormKind::Batch;

    int alignment() const { return 1 << (levels - 1); }
};

ParamSet init_generator(const GeneratorSpec& spec, Rng& rng);
ParamSet init_segmentor(const SegmentorSpec& spec, Rng& rng);

struct ForwardOptions {
    RunMode mode = RunMode::Eval;
    bool bind_grad = false;       // create differentiable leaves for trainable params
    bool update_running = false;  // write batch-norm running buffers
};

struct BatchForward {
    Var output;               // generator: (N, 1, H, W) image; segmentor: (N, 2, H, W) probabilities
    std::vector<Var> leaves;  // aligned with ParamSet entries; undefined for buffer entries
};

// x is (N, 1, H, W) with values in [0, 1]. Inputs whose spatial size is not
// divisible by the network alignment are reflect-padded and the output
// cropped back.
BatchForward generator_run(ParamSet& params, const GeneratorSpec& spec, const Var& x, const ForwardOptions& opt);
BatchForward segmentor_run(ParamSet& params, const SegmentorSpec& spec, const Var& x, const ForwardOptions& opt);

// Single-image entry points; eval mode is deterministic.
ImageGrid generator_forward(const ImageGrid& x, ParamSet& params, const GeneratorSpec& spec,
                            RunMode mode = RunMode::Eval);
ProbMap segmentor_forward(const ImageGrid& x, ParamSet& params, const SegmentorSpec& spec,
                          RunMode mode = RunMode::Eval);

// Packs images into an (N, 1, H, W) batch; all images must share one shape.
Tensor pack_batch(const std::vector<const ImageGrid*>& images);

// Adam with bias correction; one moment pair per ParamSet entry.
class Adam {
public:
    struct Config {
        double lr = 0.001;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam() = default;
    Adam(Config cfg, const ParamSet& params);

    // Applies gradients accumulated on `leaves` to the trainable entries.
    void step(ParamSet& params, const std::vector<Var>& leaves);

    const Config& config() const { return cfg_; }
    std::int64_t step_count() const { return t_; }

    // Checkpoint access.
    std::vector<Tensor>& moments_m() { return m_; }
    std::vector<Tensor>& moments_v() { return v_; }
    const std::vector<Tensor>& moments_m() const { return m_; }
    const std::vector<Tensor>& moments_v() const { return v_; }
    void restore(std::int64_t t) { t_ = t; }

private:
    Config cfg_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::int64_t t_ = 0;
};

}  // namespace gvs
