#pragma once

// Binary checkpoint: magic "TTSRCKPT", u32 version, config text, counters,
// a parameter table, optimizer moments and RNG states. All integers and
// payloads are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ttsr/nn.hpp"

namespace ttsr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'T', 'T', 'S', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// A named tensor stored with its element type ('f' = f32, 'd' = f64).
struct TensorRecord {
    std::string name;
    char dtype = 'f';
    Shape shape;
    std::vector<std::uint8_t> payload;

    template <typename T>
    static TensorRecord from(std::string name, const Tensor<T>& t) {
        static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
        TensorRecord r{std::move(name), std::is_same_v<T, float> ? 'f' : 'd', t.shape(), {}};
        r.payload.resize(t.numel() * sizeof(T));
        if (t.numel()) std::memcpy(r.payload.data(), t.data(), r.payload.size());
        return r;
    }

    template <typename T>
    Tensor<T> to() const {
        const char want = std::is_same_v<T, float> ? 'f' : 'd';
        if (dtype != want)
            throw FormatError("checkpoint tensor '" + name + "' has dtype '" + std::string(1, dtype) + "', expected '" +
                              std::string(1, want) + "'");
        Tensor<T> t(shape);
        if (payload.size() != t.numel() * sizeof(T))
            throw FormatError("checkpoint tensor '" + name + "' payload size mismatch");
        if (t.numel()) std::memcpy(t.data(), payload.data(), payload.size());
        return t;
    }

    friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct OptimizerRecord {
    std::string name;
    std::uint64_t step = 0;
    std::vector<TensorRecord> first, second;  // moments, keyed by parameter name

    friend bool operator==(const OptimizerRecord&, const OptimizerRecord&) = default;
};

struct RngRecord {
    std::string name;
    Rng::State state{};

    friend bool operator==(const RngRecord&, const RngRecord&) = default;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string config;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    std::vector<TensorRecord> params;
    std::vector<OptimizerRecord> optimizers;
    std::vector<RngRecord> rngs;

    const OptimizerRecord* optimizer(const std::string& name) const {
        for (const auto& o : optimizers)
            if (o.name == name) return &o;
        return nullptr;
    }
    const RngRecord* rng(const std::string& name) const {
        for (const auto& r : rngs)
            if (r.name == name) return &r;
        return nullptr;
    }

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

class Writer {
  public:
    template <typename U>
    void pod(U v) {
        static_assert(std::is_trivially_copyable_v<U>);
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.append(p, sizeof(U));
    }
    void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    void str(const std::string& s) {
        pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void tensor(const TensorRecord& r) {
        str(r.name);
        pod<std::uint8_t>(static_cast<std::uint8_t>(r.dtype));
        pod<std::uint32_t>(static_cast<std::uint32_t>(r.shape.size()));
        for (auto e : r.shape) pod<std::uint64_t>(e);
        bytes(r.payload.data(), r.payload.size());
    }
    const std::string& data() const { return buf_; }

  private:
    std::string buf_;
};

class Reader {
  public:
    explicit Reader(std::string data) : buf_(std::move(data)) {}

    template <typename U>
    U pod() {
        U v;
        need(sizeof(U));
        std::memcpy(&v, buf_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }
    void bytes(void* p, std::size_t n) {
        need(n);
        if (n) std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    TensorRecord tensor() {
        TensorRecord r;
        r.name = str();
        r.dtype = static_cast<char>(pod<std::uint8_t>());
        if (r.dtype != 'f' && r.dtype != 'd')
            throw FormatError("checkpoint tensor '" + r.name + "' has unknown dtype tag");
        const auto rank = pod<std::uint32_t>();
        if (rank > 8) throw FormatError("checkpoint tensor '" + r.name + "' has implausible rank");
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            r.shape.push_back(pod<std::uint64_t>());
            n *= r.shape.back();
        }
        const std::size_t size = n * (r.dtype == 'f' ? 4 : 8);
        need(size);
        r.payload.resize(size);
        bytes(r.payload.data(), size);
        return r;
    }
    bool done() const { return pos_ == buf_.size(); }

  private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) throw FormatError("checkpoint truncated");
    }
    std::string buf_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Checkpoint& c) {
    detail::Writer w;
    w.bytes(kCheckpointMagic, 8);
    w.pod<std::uint32_t>(c.version);
    w.str(c.config);
    w.pod<std::uint64_t>(c.step);
    w.pod<std::uint64_t>(c.epoch);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.params.size()));
    for (const auto& r : c.params) w.tensor(r);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.optimizers.size()));
    for (const auto& o : c.optimizers) {
        w.str(o.name);
        w.pod<std::uint64_t>(o.step);
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(o.first.size()));
        for (std::size_t i = 0; i < o.first.size(); ++i) {
            w.tensor(o.first[i]);
            w.tensor(o.second[i]);
        }
    }
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.rngs.size()));
    for (const auto& r : c.rngs) {
        w.str(r.name);
        for (auto s : r.state) w.pod<std::uint64_t>(s);
    }
    return w.data();
}

inline Checkpoint deserialize(std::string bytes) {
    detail::Reader rd(std::move(bytes));
    char magic[8];
    rd.bytes(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw FormatError("not a checkpoint (bad magic)");
    Checkpoint c;
    c.version = rd.pod<std::uint32_t>();
    if (c.version != kCheckpointVersion)
        throw FormatError("checkpoint version " + std::to_string(c.version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    c.config = rd.str();
    c.step = rd.pod<std::uint64_t>();
    c.epoch = rd.pod<std::uint64_t>();
    for (auto n = rd.pod<std::uint32_t>(); n > 0; --n) c.params.push_back(rd.tensor());
    for (auto n = rd.pod<std::uint32_t>(); n > 0; --n) {
        OptimizerRecord o;
        o.name = rd.str();
        o.step = rd.pod<std::uint64_t>();
        for (auto m = rd.pod<std::uint32_t>(); m > 0; --m) {
            o.first.push_back(rd.tensor());
            o.second.push_back(rd.tensor());
        }
        c.optimizers.push_back(std::move(o));
    }
    for (auto n = rd.pod<std::uint32_t>(); n > 0; --n) {
        RngRecord r;
        r.name = rd.str();
        for (auto& s : r.state) s = rd.pod<std::uint64_t>();
        c.rngs.push_back(std::move(r));
    }
    if (!rd.done()) throw FormatError("checkpoint has trailing bytes");
    return c;
}

/// Atomic write through a temporary file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    const std::filesystem::path tmp = path.string() + ".partial";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) {
            f.close();
            std::filesystem::remove(tmp);
            throw std::runtime_error("failed writing '" + path.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    write_file_atomic(path, serialize(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    try {
        return deserialize(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError("'" + path.string() + "': " + e.what());
    }
}

template <typename T>
void store_parameters(Checkpoint& c, const ParameterList<T>& ps) {
    for (const auto& p : ps) c.params.push_back(TensorRecord::from(p->name, p->value));
}

/// Copies the parameter table into `lists`; every parameter must appear
/// exactly once and every record must name a parameter.
template <typename T>
void restore_parameters(const Checkpoint& c, const std::vector<ParameterList<T>*>& lists) {
    std::set<std::string> seen;
    for (const auto& r : c.params) {
        Parameter<T>* p = nullptr;
        for (auto* l : lists)
            if ((p = l->find(r.name))) break;
        if (!p) throw FormatError("checkpoint has unknown parameter '" + r.name + "'");
        if (!seen.insert(r.name).second) throw FormatError("checkpoint repeats parameter '" + r.name + "'");
        if (r.shape != p->value.shape())
            throw FormatError("checkpoint parameter '" + r.name + "' has shape " + shape_str(r.shape) +
                              ", model expects " + shape_str(p->value.shape()));
        p->value = r.to<T>();
    }
    for (auto* l : lists)
        for (const auto& p : *l)
            if (!seen.contains(p->name)) throw FormatError("checkpoint is missing parameter '" + p->name + "'");
}

}  // namespace ttsr
