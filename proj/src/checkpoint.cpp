#include "gvs/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "gvs/config.hpp"
#include "gvs/errors.hpp"

namespace gvs {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "GVSCKPT1\n";
constexpr std::size_t kMagicLen = 9;

struct TensorRef {
    std::string name;
    const Tensor* tensor;
};

void collect(std::vector<TensorRef>& refs, const std::string& prefix, const ParamSet& ps) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
        refs.push_back({prefix + ps.entry(i).name, &ps.entry(i).value});
    }
}

void collect_adam(std::vector<TensorRef>& refs, const std::string& prefix, const Adam& opt, const ParamSet& ps) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
        refs.push_back({prefix + ".m." + ps.entry(i).name, &opt.moments_m()[i]});
        refs.push_back({prefix + ".v." + ps.entry(i).name, &opt.moments_v()[i]});
    }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg) {
    std::vector<TensorRef> refs;
    collect(refs, "g.", state.generator);
    collect(refs, "s.", state.segmentor);
    collect_adam(refs, "adam_g", state.opt_g, state.generator);
    collect_adam(refs, "adam_s", state.opt_s, state.segmentor);

    json header;
    header["format"] = 1;
    header["config"] = to_json(cfg);
    header["config_hash"] = config_hash(to_json(cfg));
    header["seed"] = cfg.seed;
    header["epoch"] = state.epoch;
    header["global_step"] = state.global_step;
    header["rng"] = state.rng.serialize();
    header["adam_g_t"] = state.opt_g.step_count();
    header["adam_s_t"] = state.opt_s.step_count();
    json hist = json::array();
    for (const auto& row : state.history) {
        hist.push_back(json::array({row.step, row.epoch, row.l_seg, row.l_s2, row.l_r, row.l_g}));
    }
    header["history"] = std::move(hist);
    json dir = json::array();
    for (const auto& ref : refs) {
        dir.push_back(json{{"name", ref.name}, {"shape", ref.tensor->shape()}});
    }
    header["tensors"] = std::move(dir);

    const std::string header_str = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kMagic, kMagicLen);
    const std::uint64_t len = header_str.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& ref : refs) {
        out.write(reinterpret_cast<const char*>(ref.tensor->data()),
                  static_cast<std::streamsize>(ref.tensor->numel() * sizeof(double)));
    }
    if (!out) throw CheckpointError("short write to checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    char magic[kMagicLen];
    in.read(magic, kMagicLen);
    if (in.gcount() != static_cast<std::streamsize>(kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0) {
        throw CheckpointError("not a checkpoint file: " + path.string());
    }
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header_str(len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(len));
    if (in.gcount() != static_cast<std::streamsize>(len)) {
        throw CheckpointError("truncated checkpoint header: " + path.string());
    }
    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw CheckpointError("malformed checkpoint header: " + std::string(e.what()));
    }

    LoadedCheckpoint loaded;
    try {
        loaded.config = train_config_from_json(header.at("config"));
    } catch (const Error& e) {
        throw CheckpointError("bad embedded config: " + std::string(e.what()));
    }
    loaded.state = init_train_state(loaded.config);
    TrainState& state = loaded.state;
    state.epoch = header.at("epoch").get<int>();
    state.global_step = header.at("global_step").get<std::int64_t>();
    state.rng = Rng::deserialize(header.at("rng").get<std::string>());
    state.opt_g.restore(header.at("adam_g_t").get<std::int64_t>());
    state.opt_s.restore(header.at("adam_s_t").get<std::int64_t>());
    for (const auto& row : header.at("history")) {
        state.history.push_back(LossRow{row.at(0).get<std::int64_t>(), row.at(1).get<int>(), row.at(2).get<double>(),
                                        row.at(3).get<double>(), row.at(4).get<double>(), row.at(5).get<double>()});
    }

    // destination tensors in the exact order save_checkpoint wrote them
    std::vector<TensorRef> refs;
    collect(refs, "g.", state.generator);
    collect(refs, "s.", state.segmentor);
    collect_adam(refs, "adam_g", state.opt_g, state.generator);
    collect_adam(refs, "adam_s", state.opt_s, state.segmentor);

    const auto& dir = header.at("tensors");
    if (dir.size() != refs.size()) {
        throw CheckpointError("checkpoint tensor count mismatch: expected " + std::to_string(refs.size()) +
                              ", found " + std::to_string(dir.size()));
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const std::string name = dir[i].at("name").get<std::string>();
        const auto shape = dir[i].at("shape").get<std::vector<std::int64_t>>();
        if (name != refs[i].name) {
            throw CheckpointError("checkpoint tensor name mismatch at index " + std::to_string(i) + ": expected '" +
                                  refs[i].name + "', found '" + name + "'");
        }
        if (shape != refs[i].tensor->shape()) {
            throw CheckpointError("checkpoint shape mismatch for '" + name + "'");
        }
        Tensor* dst = const_cast<Tensor*>(refs[i].tensor);
        in.read(reinterpret_cast<char*>(dst->data()), static_cast<std::streamsize>(dst->numel() * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(dst->numel() * sizeof(double))) {
            throw CheckpointError("truncated tensor data for '" + name + "'");
        }
    }
    return loaded;
}

}  // namespace gvs
