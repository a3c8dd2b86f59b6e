#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ted/errors.hpp"
#include "ted/io.hpp"
#include "ted/model.hpp"
#include "ted/optimizer.hpp"

namespace ted {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'T', 'E', 'D', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> data;

    bool operator==(const NamedArray&) const = default;
};

struct OptimizerSnapshot {
    OptimizerConfig config;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> first, second;

    bool operator==(const OptimizerSnapshot& o) const {
        return config.lr == o.config.lr && config.beta1 == o.config.beta1 && config.beta2 == o.config.beta2 &&
               config.eps == o.config.eps && config.rectify == o.config.rectify &&
               config.clip_norm == o.config.clip_norm && step == o.step && first == o.first && second == o.second;
    }
};

struct Checkpoint {
    ModelConfig config;
    std::uint64_t step = 0;
    std::optional<double> best_metric;
    std::string tokenizer;  // fingerprint of the tokenizer model the ids refer to
    std::vector<NamedArray> params;
    std::optional<OptimizerSnapshot> optimizer;

    bool operator==(const Checkpoint&) const = default;
};

inline Checkpoint capture(const Transformer& model, std::uint64_t step, const RAdam* opt = nullptr) {
    Checkpoint c;
    c.config = model.config();
    c.config.ff_inner_size = c.config.ff_size();
    c.step = step;
    for (const auto& [name, t] : model.named_parameters())
        c.params.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
    if (opt) c.optimizer = OptimizerSnapshot{opt->config(), opt->step_count(), opt->first_moments(), opt->second_moments()};
    return c;
}

inline void require_compatible(const Checkpoint& c, const ModelConfig& expected) {
    ModelConfig a = c.config, b = expected;
    a.ff_inner_size = a.ff_size();
    b.ff_inner_size = b.ff_size();
    // Dropout is a training-time setting and may differ between phases.
    a.dropout = b.dropout;
    if (!(a == b))
        throw ConfigError("checkpoint architecture " + std::to_string(a.num_layers) + "L" + std::to_string(a.num_heads) +
                          "H/N=" + std::to_string(a.hidden_size) + "/V=" + std::to_string(a.vocab_size) +
                          " does not match the configured " + std::to_string(b.num_layers) + "L" +
                          std::to_string(b.num_heads) + "H/N=" + std::to_string(b.hidden_size) +
                          "/V=" + std::to_string(b.vocab_size));
}

inline Transformer restore_model(const Checkpoint& c, std::optional<double> dropout = std::nullopt) {
    ModelConfig cfg = c.config;
    if (dropout) cfg.dropout = *dropout;
    Transformer model(cfg, 0);
    const auto& names = model.named_parameters();
    if (names.size() != c.params.size())
        throw DataError("checkpoint holds " + std::to_string(c.params.size()) + " parameters, model expects " +
                        std::to_string(names.size()));
    for (std::size_t i = 0; i < c.params.size(); ++i) {
        if (c.params[i].name != names[i].first)
            throw DataError("checkpoint parameter #" + std::to_string(i) + " is " + c.params[i].name + ", expected " +
                            names[i].first);
        if (c.params[i].shape != names[i].second.shape())
            throw DataError("checkpoint parameter " + c.params[i].name + " has shape " + shape_str(c.params[i].shape));
        model.set_parameter(c.params[i].name, c.params[i].data);
    }
    return model;
}

inline void restore_optimizer(const Checkpoint& c, RAdam& opt) {
    if (!c.optimizer) throw DataError("checkpoint carries no optimizer state");
    auto& m = opt.first_moments();
    auto& v = opt.second_moments();
    if (m.size() != c.optimizer->first.size() || v.size() != c.optimizer->second.size())
        throw DataError("optimizer state does not match the parameter list");
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i].size() != c.optimizer->first[i].size() || v[i].size() != c.optimizer->second[i].size())
            throw DataError("optimizer moment #" + std::to_string(i) + " has the wrong length");
        m[i] = c.optimizer->first[i];
        v[i] = c.optimizer->second[i];
    }
    opt.set_step_count(c.optimizer->step);
}

namespace detail {

class ByteWriter {
public:
    template <typename T>
    void put(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out_.append(buf, sizeof(T));
    }
    void put_bytes(std::string_view s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        out_.append(s);
    }
    void put_doubles(const std::vector<double>& v) {
        put<std::uint64_t>(v.size());
        out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }
    void raw(std::string_view s) { out_.append(s); }
    std::string& str() { return out_; }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view in) : in_(in) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, in_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_bytes(const char* what) {
        const auto n = get<std::uint32_t>(what);
        need(n, what);
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::vector<double> get_doubles(const char* what) {
        const auto n = get<std::uint64_t>(what);
        if (n > (in_.size() - pos_) / sizeof(double)) throw DataError(std::string("checkpoint truncated in ") + what);
        std::vector<double> v(n);
        std::memcpy(v.data(), in_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return v;
    }
    std::string_view take(std::size_t n, const char* what) {
        need(n, what);
        auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (in_.size() - pos_ < n) throw DataError(std::string("checkpoint truncated in ") + what);
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// Binary layout is documented in docs/formats.md.
inline std::string serialize_checkpoint(const Checkpoint& c) {
    detail::ByteWriter w;
    w.raw(std::string_view(kCheckpointMagic, 8));
    w.put<std::uint8_t>(kCheckpointVersion);
    const auto& m = c.config;
    for (std::uint64_t v : {std::uint64_t{m.num_layers}, std::uint64_t{m.num_heads}, std::uint64_t{m.hidden_size},
                            std::uint64_t{m.ff_size()}, std::uint64_t{m.max_positions}, std::uint64_t{m.vocab_size}})
        w.put<std::uint64_t>(v);
    w.put<double>(m.dropout);
    w.put<double>(m.positional_scale);
    w.put<std::uint64_t>(c.step);
    w.put<std::uint8_t>(c.best_metric ? 1 : 0);
    w.put<double>(c.best_metric.value_or(0.0));
    w.put_bytes(c.tokenizer);
    w.put<std::uint64_t>(c.params.size());
    for (const auto& p : c.params) {
        w.put_bytes(p.name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(p.shape.size()));
        for (auto d : p.shape) w.put<std::uint64_t>(d);
        w.put_doubles(p.data);
    }
    w.put<std::uint8_t>(c.optimizer ? 1 : 0);
    if (c.optimizer) {
        const auto& o = *c.optimizer;
        w.put<std::uint64_t>(o.step);
        for (double v : {o.config.lr, o.config.beta1, o.config.beta2, o.config.eps, o.config.clip_norm}) w.put<double>(v);
        w.put<std::uint8_t>(o.config.rectify ? 1 : 0);
        w.put<std::uint64_t>(o.first.size());
        for (std::size_t i = 0; i < o.first.size(); ++i) {
            w.put_doubles(o.first[i]);
            w.put_doubles(o.second[i]);
        }
    }
    w.put<std::uint64_t>(detail::fnv1a64(w.str()));
    return std::move(w.str());
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes);
    if (r.take(8, "magic") != std::string_view(kCheckpointMagic, 8)) throw DataError("not a checkpoint: bad magic");
    const auto version = r.get<std::uint8_t>("version");
    if (version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    if (bytes.size() < 8 + 1 + 8) throw DataError("checkpoint truncated");
    const auto stored = [&] {
        std::uint64_t v;
        std::memcpy(&v, bytes.data() + bytes.size() - 8, 8);
        return v;
    }();
    if (detail::fnv1a64(bytes.substr(0, bytes.size() - 8)) != stored)
        throw DataError("checkpoint checksum mismatch (truncated or corrupted file)");

    Checkpoint c;
    auto& m = c.config;
    m.num_layers = r.get<std::uint64_t>("config");
    m.num_heads = r.get<std::uint64_t>("config");
    m.hidden_size = r.get<std::uint64_t>("config");
    m.ff_inner_size = r.get<std::uint64_t>("config");
    m.max_positions = r.get<std::uint64_t>("config");
    m.vocab_size = r.get<std::uint64_t>("config");
    m.dropout = r.get<double>("config");
    m.positional_scale = r.get<double>("config");
    try {
        m.validate();
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint holds an invalid model config: ") + e.what());
    }
    c.step = r.get<std::uint64_t>("step");
    const bool has_metric = r.get<std::uint8_t>("metric") != 0;
    const double metric = r.get<double>("metric");
    if (has_metric) c.best_metric = metric;
    c.tokenizer = r.get_bytes("tokenizer reference");
    const auto count = r.get<std::uint64_t>("parameter count");
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedArray p;
        p.name = r.get_bytes("parameter name");
        const auto dims = r.get<std::uint32_t>("parameter shape");
        if (dims == 0 || dims > 8) throw DataError("parameter " + p.name + " has invalid rank");
        for (std::uint32_t d = 0; d < dims; ++d) p.shape.push_back(r.get<std::uint64_t>("parameter shape"));
        p.data = r.get_doubles("parameter data");
        if (shape_numel(p.shape) != p.data.size()) throw DataError("parameter " + p.name + " data does not match its shape");
        c.params.push_back(std::move(p));
    }
    if (r.get<std::uint8_t>("optimizer flag")) {
        OptimizerSnapshot o;
        o.step = r.get<std::uint64_t>("optimizer");
        o.config.lr = r.get<double>("optimizer");
        o.config.beta1 = r.get<double>("optimizer");
        o.config.beta2 = r.get<double>("optimizer");
        o.config.eps = r.get<double>("optimizer");
        o.config.clip_norm = r.get<double>("optimizer");
        o.config.rectify = r.get<std::uint8_t>("optimizer") != 0;
        const auto n = r.get<std::uint64_t>("optimizer");
        if (n != c.params.size()) throw DataError("optimizer state does not match the parameter count");
        for (std::uint64_t i = 0; i < n; ++i) {
            o.first.push_back(r.get_doubles("optimizer moments"));
            o.second.push_back(r.get_doubles("optimizer moments"));
            if (o.first.back().size() != c.params[i].data.size() || o.second.back().size() != c.params[i].data.size())
                throw DataError("optimizer moments for " + c.params[i].name + " have the wrong length");
        }
        c.optimizer = std::move(o);
    }
    if (r.remaining() != 8) throw DataError("checkpoint has trailing bytes");
    return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    write_file_atomic(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    try {
        return deserialize_checkpoint(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

}  // namespace ted
