#include "lmbis/checkpoint.hpp"

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

namespace lmbis {

namespace {

constexpr char kMagic[4] = {'L', 'M', 'B', 'S'};

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string fmt_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

std::vector<std::string> config_lines(const NetworkConfig& net, const TrainConfig& train) {
    std::vector<std::string> lines;
    auto put = [&](const std::string& key, const std::string& value) {
        lines.push_back(key + "=" + value);
    };
    put("net.input_channels", std::to_string(net.input_channels));
    put("net.num_classes", std::to_string(net.num_classes));
    put("net.width1", std::to_string(net.stage_widths[0]));
    put("net.width2", std::to_string(net.stage_widths[1]));
    put("net.width3", std::to_string(net.stage_widths[2]));
    put("net.multipath_width", std::to_string(net.multipath_width));
    put("net.pass_count", std::to_string(net.pass_count));
    put("net.multipath", net.multipath ? "1" : "0");
    put("net.parameter_budget", std::to_string(net.parameter_budget));
    put("net.seed", std::to_string(net.seed));
    put("train.learning_rate", fmt_float(train.learning_rate));
    put("train.max_epochs", std::to_string(train.max_epochs));
    put("train.plateau_patience", std::to_string(train.plateau_patience));
    put("train.lr_factor", fmt_float(train.lr_factor));
    put("train.early_stop_patience", std::to_string(train.early_stop_patience));
    put("train.batch_size", std::to_string(train.batch_size));
    put("train.seed", std::to_string(train.seed));
    put("train.smoothing_eps", fmt_float(train.smoothing_eps));
    put("train.val_fraction", fmt_float(train.val_fraction));
    return lines;
}

void apply_config_line(NetworkConfig& net, TrainConfig& train, const std::string& key,
                       const std::string& value) {
    const auto to_int = [&] { return std::stoi(value); };
    const auto to_f = [&] { return std::strtof(value.c_str(), nullptr); };
    if (key == "net.input_channels") net.input_channels = to_int();
    else if (key == "net.num_classes") net.num_classes = to_int();
    else if (key == "net.width1") net.stage_widths[0] = to_int();
    else if (key == "net.width2") net.stage_widths[1] = to_int();
    else if (key == "net.width3") net.stage_widths[2] = to_int();
    else if (key == "net.multipath_width") net.multipath_width = to_int();
    else if (key == "net.pass_count") net.pass_count = to_int();
    else if (key == "net.multipath") net.multipath = value != "0";
    else if (key == "net.parameter_budget") net.parameter_budget = std::stoll(value);
    else if (key == "net.seed") net.seed = static_cast<std::uint32_t>(std::stoul(value));
    else if (key == "train.learning_rate") train.learning_rate = to_f();
    else if (key == "train.max_epochs") train.max_epochs = to_int();
    else if (key == "train.plateau_patience") train.plateau_patience = to_int();
    else if (key == "train.lr_factor") train.lr_factor = to_f();
    else if (key == "train.early_stop_patience") train.early_stop_patience = to_int();
    else if (key == "train.batch_size") train.batch_size = to_int();
    else if (key == "train.seed") train.seed = static_cast<std::uint32_t>(std::stoul(value));
    else if (key == "train.smoothing_eps") train.smoothing_eps = to_f();
    else if (key == "train.val_fraction") train.val_fraction = to_f();
    else throw CheckpointError("checkpoint: unknown config key " + key);
}

class Writer {
public:
    explicit Writer(const std::filesystem::path& path)
        : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw CheckpointError("checkpoint: cannot open for writing: " + path.string());
    }

    void u32(std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        out_.write(reinterpret_cast<const char*>(b), 4);
    }

    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }

    void record(const std::string& name, TensorShape shape, std::span<const float> payload) {
        u32(static_cast<std::uint32_t>(name.size()));
        bytes(name.data(), name.size());
        u32(static_cast<std::uint32_t>(shape.n));
        u32(static_cast<std::uint32_t>(shape.c));
        u32(static_cast<std::uint32_t>(shape.h));
        u32(static_cast<std::uint32_t>(shape.w));
        for (float v : payload) u32(std::bit_cast<std::uint32_t>(v));
    }

    void marker(const std::string& name) {
        const float zero = 0.0f;
        record(name, {1, 1, 1, 1}, std::span<const float>(&zero, 1));
    }

    void scalar(const std::string& name, float v) {
        record(name, {1, 1, 1, 1}, std::span<const float>(&v, 1));
    }

    bool good() const { return static_cast<bool>(out_); }

private:
    std::ofstream out_;
};

struct Record {
    std::string name;
    TensorShape shape;
    std::vector<float> payload;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
        if (!in_) throw CheckpointError("checkpoint: cannot open: " + path.string());
    }

    std::uint32_t u32() {
        unsigned char b[4];
        in_.read(reinterpret_cast<char*>(b), 4);
        if (in_.gcount() != 4) throw CheckpointError("checkpoint: truncated file");
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) |
               (static_cast<std::uint32_t>(b[3]) << 24);
    }

    std::string str(std::size_t n) {
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw CheckpointError("checkpoint: truncated file");
        return s;
    }

    bool at_eof() {
        return in_.peek() == std::char_traits<char>::eof();
    }

    std::optional<Record> next_record() {
        if (at_eof()) return std::nullopt;
        Record r;
        r.name = str(u32());
        r.shape.n = static_cast<int>(u32());
        r.shape.c = static_cast<int>(u32());
        r.shape.h = static_cast<int>(u32());
        r.shape.w = static_cast<int>(u32());
        const std::size_t count = r.shape.count();
        if (count > (1u << 28))
            throw CheckpointError("checkpoint: implausible record size for " + r.name);
        r.payload.resize(count);
        for (std::size_t i = 0; i < count; ++i)
            r.payload[i] = std::bit_cast<float>(u32());
        return r;
    }

private:
    std::ifstream in_;
};

}  // namespace

std::string config_digest(const NetworkConfig& net, const TrainConfig& train) {
    std::string joined;
    for (const auto& line : config_lines(net, train)) {
        joined += line;
        joined += '\n';
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64(joined));
    return buf;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    const Model& model = checkpoint.model;
    const std::string digest = config_digest(model.config, checkpoint.train_cfg);

    Writer w(path);
    w.bytes(kMagic, 4);
    w.u32(checkpoint.version);
    w.u32(static_cast<std::uint32_t>(digest.size()));
    w.bytes(digest.data(), digest.size());

    for (const auto& line : config_lines(model.config, checkpoint.train_cfg))
        w.marker("cfg/" + line);

    for (int i = 0; i < model.params.size(); ++i)
        w.record("p/" + model.params.name(i), model.params.tensor(i).shape(),
                 model.params.tensor(i).data());

    for (int p = 0; p < 2; ++p) {
        const std::string prefix = "bn/p" + std::to_string(p + 1) + "/";
        for (std::size_t i = 0; i < model.bn_names.size(); ++i) {
            const auto& r = model.bn_running[p][i];
            const int c = static_cast<int>(r.mean.size());
            w.record(prefix + model.bn_names[i] + "/mean", {1, c, 1, 1}, r.mean);
            w.record(prefix + model.bn_names[i] + "/var", {1, c, 1, 1}, r.var);
            w.scalar(prefix + model.bn_names[i] + "/init", r.initialized ? 1.0f : 0.0f);
        }
    }

    if (checkpoint.optimizer) {
        const AdamState& opt = *checkpoint.optimizer;
        w.scalar("opt/t", static_cast<float>(opt.step_count()));
        for (int i = 0; i < model.params.size(); ++i) {
            w.record("opt/m/" + model.params.name(i), opt.moment1(i).shape(),
                     opt.moment1(i).data());
            w.record("opt/v/" + model.params.name(i), opt.moment2(i).shape(),
                     opt.moment2(i).data());
        }
    }

    const int epochs = static_cast<int>(checkpoint.history.size());
    if (epochs > 0) {
        std::vector<float> loss(epochs), dice(epochs), lr(epochs);
        for (int e = 0; e < epochs; ++e) {
            loss[e] = checkpoint.history[e].train_loss;
            dice[e] = checkpoint.history[e].val_dice;
            lr[e] = checkpoint.history[e].lr;
        }
        w.record("hist/train_loss", {1, 1, 1, epochs}, loss);
        w.record("hist/val_dice", {1, 1, 1, epochs}, dice);
        w.record("hist/lr", {1, 1, 1, epochs}, lr);
    }

    if (!w.good()) throw CheckpointError("checkpoint: write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    Reader in(path);
    if (in.str(4) != std::string(kMagic, 4))
        throw CheckpointError("checkpoint: bad magic in " + path.string());

    Checkpoint cp;
    cp.version = in.u32();
    if (cp.version != kCheckpointVersion)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(cp.version));
    cp.digest = in.str(in.u32());

    std::map<std::string, Record> records;
    while (auto r = in.next_record()) {
        std::string name = r->name;
        if (!records.emplace(name, std::move(*r)).second)
            throw CheckpointError("checkpoint: duplicate record " + name);
    }

    NetworkConfig net;
    TrainConfig train;
    bool saw_cfg = false;
    for (const auto& [name, rec] : records) {
        if (name.rfind("cfg/", 0) != 0) continue;
        const std::string line = name.substr(4);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw CheckpointError("checkpoint: malformed config record " + name);
        apply_config_line(net, train, line.substr(0, eq), line.substr(eq + 1));
        saw_cfg = true;
    }
    if (!saw_cfg) throw CheckpointError("checkpoint: missing config records");

    if (config_digest(net, train) != cp.digest)
        throw CheckpointError("checkpoint: digest mismatch (file tampered or edited)");

    cp.model = build_network(net);
    cp.train_cfg = train;

    std::size_t consumed_params = 0;
    for (int i = 0; i < cp.model.params.size(); ++i) {
        const std::string key = "p/" + cp.model.params.name(i);
        auto it = records.find(key);
        if (it == records.end())
            throw CheckpointError("checkpoint: missing parameter " + key);
        Tensor& dst = cp.model.params.tensor(i);
        if (it->second.shape != dst.shape())
            throw CheckpointError("checkpoint: shape mismatch for " + key);
        std::copy(it->second.payload.begin(), it->second.payload.end(), dst.data().begin());
        ++consumed_params;
    }
    for (const auto& [name, rec] : records)
        if (name.rfind("p/", 0) == 0 && cp.model.params.find(name.substr(2)) < 0)
            throw CheckpointError("checkpoint: unexpected parameter " + name);
    (void)consumed_params;

    for (int p = 0; p < 2; ++p) {
        for (std::size_t i = 0; i < cp.model.bn_names.size(); ++i) {
            const std::string base =
                "bn/p" + std::to_string(p + 1) + "/" + cp.model.bn_names[i];
            auto mean = records.find(base + "/mean");
            auto var = records.find(base + "/var");
            auto init = records.find(base + "/init");
            if (mean == records.end() || var == records.end() || init == records.end())
                throw CheckpointError("checkpoint: missing BN stats for " + base);
            auto& r = cp.model.bn_running[p][i];
            if (mean->second.payload.size() != r.mean.size())
                throw CheckpointError("checkpoint: BN width mismatch for " + base);
            r.mean = mean->second.payload;
            r.var = var->second.payload;
            r.initialized = init->second.payload.at(0) != 0.0f;
        }
    }

    if (records.count("opt/t")) {
        AdamState opt = AdamState::for_params(cp.model.params);
        opt.set_step_count(static_cast<std::int64_t>(records.at("opt/t").payload.at(0)));
        for (int i = 0; i < cp.model.params.size(); ++i) {
            const std::string& pname = cp.model.params.name(i);
            auto m = records.find("opt/m/" + pname);
            auto v = records.find("opt/v/" + pname);
            if (m == records.end() || v == records.end())
                throw CheckpointError("checkpoint: missing optimizer state for " + pname);
            std::copy(m->second.payload.begin(), m->second.payload.end(),
                      opt.moment1(i).data().begin());
            std::copy(v->second.payload.begin(), v->second.payload.end(),
                      opt.moment2(i).data().begin());
        }
        cp.optimizer = std::move(opt);
    }

    if (records.count("hist/train_loss")) {
        const auto& loss = records.at("hist/train_loss").payload;
        const auto& dice = records.at("hist/val_dice").payload;
        const auto& lr = records.at("hist/lr").payload;
        if (dice.size() != loss.size() || lr.size() != loss.size())
            throw CheckpointError("checkpoint: inconsistent history lengths");
        cp.history.resize(loss.size());
        for (std::size_t e = 0; e < loss.size(); ++e)
            cp.history[e] = {loss[e], dice[e], lr[e]};
    }
    return cp;
}

}  // namespace lmbis
