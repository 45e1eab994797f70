#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dswinir/config.hpp"
#include "dswinir/image.hpp"
#include "dswinir/model.hpp"
#include "dswinir/optim.hpp"

namespace dswinir {

inline constexpr char kCheckpointMagic[4] = {'D', 'S', 'W', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to rebuild a model and continue training bit-exactly.
template <Scalar T>
struct Checkpoint {
    RunConfig config;
    ParamStore<T> params;
    AdamState<T> adam;
    std::uint64_t step = 0;  // completed training steps
    std::uint64_t seed = 0;

    Model<T> model() const { return Model<T>{config.model, params}; }
};

namespace detail {

struct RawTensor {
    DType dtype = DType::f32;
    Shape shape;
    std::vector<std::uint8_t> bytes;
};

class ByteWriter {
public:
    template <class U>
    void put(U v) {
        unsigned char b[sizeof(U)];
        std::memcpy(b, &v, sizeof(U));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
        out_.insert(out_.end(), b, b + sizeof(U));
    }
    void raw(const void* p, std::size_t n) {
        const auto* c = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), c, c + n);
    }
    std::vector<std::uint8_t>& bytes() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t>& b, std::size_t end) : b_(b), end_(end) {}
    template <class U>
    U get(const char* what) {
        need(sizeof(U), what);
        unsigned char tmp[sizeof(U)];
        std::memcpy(tmp, b_.data() + pos_, sizeof(U));
        if constexpr (std::endian::native == std::endian::big) std::reverse(tmp, tmp + sizeof(U));
        U v;
        std::memcpy(&v, tmp, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }
    const std::uint8_t* take(std::size_t n, const char* what) {
        need(n, what);
        const std::uint8_t* p = b_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (n > end_ - pos_) throw CheckpointError(std::string("truncated while reading ") + what, pos_);
    }
    const std::vector<std::uint8_t>& b_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

template <Scalar T>
RawTensor raw_of(const Tensor<T>& t) {
    RawTensor r{dtype_of<T>(), t.shape(), {}};
    r.bytes.resize(t.numel() * sizeof(T));
    std::memcpy(r.bytes.data(), t.ptr(), r.bytes.size());
    return r;
}

template <Scalar T>
Tensor<T> tensor_of(const RawTensor& r, const std::string& name, std::size_t at) {
    if (r.dtype != dtype_of<T>()) throw CheckpointError("dtype mismatch for " + name, at);
    Tensor<T> t(r.shape);
    std::memcpy(t.ptr(), r.bytes.data(), r.bytes.size());
    return t;
}

inline std::vector<std::uint8_t> encode_tensors(const std::map<std::string, RawTensor>& tensors) {
    ByteWriter w;
    w.raw(kCheckpointMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint64_t>(tensors.size());
    for (const auto& [name, t] : tensors) {
        w.put<std::uint32_t>(std::uint32_t(name.size()));
        w.raw(name.data(), name.size());
        w.put<std::uint8_t>(std::uint8_t(t.dtype));
        w.put<std::uint8_t>(std::uint8_t(t.shape.size()));
        for (auto d : t.shape) w.put<std::uint64_t>(d);
        w.raw(t.bytes.data(), t.bytes.size());
    }
    w.put<std::uint64_t>(w.bytes().size());
    return std::move(w.bytes());
}

// Returns the tensors together with the byte offset each record started at.
inline std::map<std::string, std::pair<RawTensor, std::size_t>> decode_tensors(const std::vector<std::uint8_t>& b) {
    constexpr std::size_t kHeader = 4 + 4 + 8;
    if (b.size() < 4 || std::memcmp(b.data(), kCheckpointMagic, 4) != 0) throw CheckpointError("bad magic", 0);
    if (b.size() < kHeader + 8) throw CheckpointError("file too short (" + std::to_string(b.size()) + " bytes)", b.size());
    ByteReader footer(b, b.size());
    (void)footer.take(b.size() - 8, "body");
    const auto declared = footer.get<std::uint64_t>("footer");
    if (declared != b.size() - 8)
        throw CheckpointError("footer declares " + std::to_string(declared) + " body bytes, found " +
                              std::to_string(b.size() - 8) + " (truncated or corrupt)",
                              b.size() - 8);
    ByteReader r(b, b.size() - 8);
    (void)r.take(4, "magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported version " + std::to_string(version), 4);
    const auto count = r.get<std::uint64_t>("tensor count");
    std::map<std::string, std::pair<RawTensor, std::size_t>> out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t at = r.pos();
        const auto len = r.get<std::uint32_t>("name length");
        const auto* np = r.take(len, "name");
        std::string name(reinterpret_cast<const char*>(np), len);
        RawTensor t;
        const auto dt = r.get<std::uint8_t>("dtype");
        if (dt > 1) throw CheckpointError("unknown dtype tag " + std::to_string(dt), r.pos() - 1);
        t.dtype = DType(dt);
        const auto rank = r.get<std::uint8_t>("rank");
        if (rank < 1 || rank > kMaxRank) throw CheckpointError("invalid rank " + std::to_string(rank), r.pos() - 1);
        std::size_t numel = 1;
        for (std::uint8_t k = 0; k < rank; ++k) {
            const auto d = r.get<std::uint64_t>("dims");
            if (d == 0 || d > (std::uint64_t(1) << 32)) throw CheckpointError("invalid extent", r.pos() - 8);
            t.shape.push_back(std::size_t(d));
            numel *= std::size_t(d);
        }
        const std::size_t nbytes = numel * (t.dtype == DType::f32 ? 4 : 8);
        const auto* data = r.take(nbytes, "tensor data");
        t.bytes.assign(data, data + nbytes);
        if (!out.emplace(name, std::pair{std::move(t), at}).second) throw CheckpointError("duplicate tensor " + name, at);
    }
    if (r.pos() != b.size() - 8) throw CheckpointError("trailing bytes after tensor records", r.pos());
    return out;
}

}  // namespace detail

template <Scalar T>
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<T>& ck) {
    std::map<std::string, detail::RawTensor> tensors;
    for (const auto& [name, t] : ck.params) tensors.emplace("param/" + name, detail::raw_of(t));
    for (const auto& [name, t] : ck.adam.m) tensors.emplace("adam.m/" + name, detail::raw_of(t));
    for (const auto& [name, t] : ck.adam.v) tensors.emplace("adam.v/" + name, detail::raw_of(t));
    tensors.emplace("state/step", detail::raw_of(TensorD({1}, {double(ck.step)})));
    tensors.emplace("state/adam_step", detail::raw_of(TensorD({1}, {double(ck.adam.step)})));
    tensors.emplace("state/seed",
                    detail::raw_of(TensorD({2}, {double(ck.seed >> 32), double(ck.seed & 0xffffffffu)})));
    const std::string cfg = to_json(ck.config).dump();
    TensorF bytes({cfg.size()});
    for (std::size_t i = 0; i < cfg.size(); ++i) bytes[i] = float(static_cast<unsigned char>(cfg[i]));
    tensors.emplace("meta/config", detail::raw_of(bytes));
    return detail::encode_tensors(tensors);
}

template <Scalar T>
Checkpoint<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    auto raw = detail::decode_tensors(bytes);
    auto need = [&](const std::string& name) -> std::pair<detail::RawTensor, std::size_t>& {
        auto it = raw.find(name);
        if (it == raw.end()) throw CheckpointError("missing tensor " + name, bytes.size() - 8);
        return it->second;
    };
    Checkpoint<T> ck;
    {
        auto& [t, at] = need("meta/config");
        const TensorF c = detail::tensor_of<float>(t, "meta/config", at);
        std::string text(c.numel(), '\0');
        for (std::size_t i = 0; i < c.numel(); ++i) text[i] = char(static_cast<unsigned char>(c[i]));
        try {
            ck.config = parse_run_config(text);
        } catch (const Error& e) {
            throw CheckpointError(std::string("embedded config rejected: ") + e.what(), at);
        }
    }
    auto scalar = [&](const std::string& name, std::size_t i) {
        auto& [t, at] = need(name);
        const TensorD v = detail::tensor_of<double>(t, name, at);
        if (i >= v.numel()) throw CheckpointError("short state tensor " + name, at);
        return std::uint64_t(v[i]);
    };
    ck.step = scalar("state/step", 0);
    ck.adam.step = scalar("state/adam_step", 0);
    ck.seed = (scalar("state/seed", 0) << 32) | scalar("state/seed", 1);

    const Model<T> ref = build_model<T>(ck.config.model, 0);
    for (const auto& [name, t] : ref.params) {
        auto& [rt, at] = need("param/" + name);
        if (rt.shape != t.shape()) throw CheckpointError("shape mismatch for parameter " + name, at);
        ck.params.add(name, detail::tensor_of<T>(rt, name, at));
    }
    std::size_t expected = ref.params.size() + 4;  // step, adam_step, seed, config
    if (raw.count("adam.m/" + ref.params.begin()->first)) {
        for (const auto& [name, t] : ref.params) {
            auto& [mt, ma] = need("adam.m/" + name);
            auto& [vt, va] = need("adam.v/" + name);
            if (mt.shape != t.shape() || vt.shape != t.shape())
                throw CheckpointError("optimizer state shape mismatch for " + name, ma);
            ck.adam.m.emplace(name, detail::tensor_of<T>(mt, name, ma));
            ck.adam.v.emplace(name, detail::tensor_of<T>(vt, name, va));
        }
        expected += 2 * ref.params.size();
    }
    if (raw.size() != expected) throw CheckpointError("unexpected extra tensors in checkpoint", bytes.size() - 8);
    return ck;
}

template <Scalar T>
void save_checkpoint(const Checkpoint<T>& ck, const std::filesystem::path& path) {
    try {
        write_file(path, encode_checkpoint(ck));
    } catch (const IoError& e) {
        throw CheckpointError(e.what(), 0);
    }
}

template <Scalar T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file(path);
    } catch (const IoError& e) {
        throw CheckpointError(e.what(), 0);
    }
    return decode_checkpoint<T>(bytes);
}

}  // namespace dswinir
