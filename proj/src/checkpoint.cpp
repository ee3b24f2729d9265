#include "osp/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <set>

namespace osp {

uint32_t crc32(const uint8_t* data, size_t len) {
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t crc = 0xffffffffu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 24));
}

void put_f64(std::vector<uint8_t>& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(bits >> (8 * i)));
}

void put_f32(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    uint8_t u8() {
        if (pos + 1 > buf.size()) throw CorruptCheckpoint("truncated");
        return buf[pos++];
    }
    uint32_t u32() {
        if (pos + 4 > buf.size()) throw CorruptCheckpoint("truncated");
        uint32_t v = static_cast<uint32_t>(buf[pos]) | static_cast<uint32_t>(buf[pos + 1]) << 8 |
                     static_cast<uint32_t>(buf[pos + 2]) << 16 |
                     static_cast<uint32_t>(buf[pos + 3]) << 24;
        pos += 4;
        return v;
    }
    double f64() {
        if (pos + 8 > buf.size()) throw CorruptCheckpoint("truncated");
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(buf[pos + static_cast<size_t>(i)]) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(size_t n) {
        if (pos + n > buf.size()) throw CorruptCheckpoint("truncated");
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
    std::vector<uint8_t> buf;
    buf.insert(buf.end(), {'P', 'O', 'P', 'C'});
    put_u32(buf, data.version);
    put_u32(buf, data.stage_mask);
    put_u32(buf, static_cast<uint32_t>(data.tensors.size()));
    std::set<std::string> names;
    for (const NamedTensor& t : data.tensors) {
        if (!names.insert(t.name).second)
            throw ContractError("checkpoint: duplicate tensor name " + t.name);
        put_u32(buf, static_cast<uint32_t>(t.name.size()));
        buf.insert(buf.end(), t.name.begin(), t.name.end());
        buf.push_back(t.dtype);
        buf.push_back(static_cast<uint8_t>(t.dims.size()));
        int64_t n = 1;
        for (int d : t.dims) {
            put_u32(buf, static_cast<uint32_t>(d));
            n *= d;
        }
        switch (t.dtype) {
            case 0:
                if (static_cast<int64_t>(t.f64.size()) != n)
                    throw ContractError("checkpoint: payload size mismatch for " + t.name);
                for (double v : t.f64) put_f32(buf, static_cast<float>(v));
                break;
            case 1:
                if (static_cast<int64_t>(t.f64.size()) != n)
                    throw ContractError("checkpoint: payload size mismatch for " + t.name);
                for (double v : t.f64) put_f64(buf, v);
                break;
            case 2:
                if (static_cast<int64_t>(t.u8.size()) != n)
                    throw ContractError("checkpoint: payload size mismatch for " + t.name);
                buf.insert(buf.end(), t.u8.begin(), t.u8.end());
                break;
            default:
                throw ContractError("checkpoint: unknown dtype");
        }
    }
    put_u32(buf, crc32(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to " + path.string());
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 16) throw CorruptCheckpoint(path.string() + ": too short");
    const uint32_t stored = static_cast<uint32_t>(buf[buf.size() - 4]) |
                            static_cast<uint32_t>(buf[buf.size() - 3]) << 8 |
                            static_cast<uint32_t>(buf[buf.size() - 2]) << 16 |
                            static_cast<uint32_t>(buf[buf.size() - 1]) << 24;
    if (crc32(buf.data(), buf.size() - 4) != stored)
        throw CorruptCheckpoint(path.string() + ": CRC mismatch");
    buf.resize(buf.size() - 4);

    Reader r{buf};
    if (r.str(4) != "POPC") throw CorruptCheckpoint(path.string() + ": bad magic");
    CheckpointData data;
    data.version = r.u32();
    if (data.version != 1) throw CorruptCheckpoint(path.string() + ": unsupported version");
    data.stage_mask = r.u32();
    const uint32_t count = r.u32();
    std::set<std::string> names;
    for (uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.str(r.u32());
        if (!names.insert(t.name).second)
            throw CorruptCheckpoint(path.string() + ": duplicate tensor " + t.name);
        t.dtype = r.u8();
        const int ndim = r.u8();
        int64_t n = 1;
        for (int d = 0; d < ndim; ++d) {
            t.dims.push_back(static_cast<int>(r.u32()));
            n *= t.dims.back();
        }
        if (n < 0 || n > (1 << 28)) throw CorruptCheckpoint(path.string() + ": absurd tensor size");
        switch (t.dtype) {
            case 0:
                t.f64.reserve(static_cast<size_t>(n));
                for (int64_t k = 0; k < n; ++k) t.f64.push_back(static_cast<double>(r.f32()));
                break;
            case 1:
                t.f64.reserve(static_cast<size_t>(n));
                for (int64_t k = 0; k < n; ++k) t.f64.push_back(r.f64());
                break;
            case 2:
                for (int64_t k = 0; k < n; ++k) t.u8.push_back(r.u8());
                break;
            default:
                throw CorruptCheckpoint(path.string() + ": unknown dtype");
        }
        data.tensors.push_back(std::move(t));
    }
    if (r.pos != buf.size()) throw CorruptCheckpoint(path.string() + ": trailing bytes");
    return data;
}

// ---- pipeline round trip -----------------------------------------------------

namespace {

NamedTensor tensor_entry(const std::string& name, const Tensor& t) {
    NamedTensor nt;
    nt.name = name;
    nt.dtype = 1;
    nt.dims = t.shape();
    nt.f64 = t.data();
    return nt;
}

NamedTensor scalar_entry(const std::string& name, double v) {
    NamedTensor nt;
    nt.name = name;
    nt.dtype = 1;
    nt.dims = {1};
    nt.f64 = {v};
    return nt;
}

NamedTensor byte_entry(const std::string& name, uint8_t v) {
    NamedTensor nt;
    nt.name = name;
    nt.dtype = 2;
    nt.dims = {1};
    nt.u8 = {v};
    return nt;
}

void bank_entries(std::vector<NamedTensor>& out, const std::string& prefix,
                  const PrototypeBank& bank) {
    out.push_back(scalar_entry(prefix + ".alpha", bank.alpha));
    for (const auto& [id, entry] : bank.protos) {
        if (!entry.initialized) continue;
        NamedTensor nt;
        nt.name = prefix + ".proto." + std::to_string(id);
        nt.dtype = 1;
        nt.dims = {static_cast<int>(entry.vec.size())};
        nt.f64 = entry.vec;
        out.push_back(std::move(nt));
        out.push_back(byte_entry(prefix + ".mode." + std::to_string(id), entry.dynamic ? 1 : 0));
    }
}

}  // namespace

void save_pipeline(const std::filesystem::path& path, PipelineState& state, double eval_beta,
                   bool dynamic_prototypes) {
    CheckpointData data;
    for (int s = 1; s <= 3; ++s)
        if (state.trained[static_cast<size_t>(s)]) data.stage_mask |= 1u << s;
    data.tensors.push_back(scalar_entry("model.k_stage", state.config.k_stage));
    data.tensors.push_back(byte_entry("model.use_kim", state.config.use_kim ? 1 : 0));
    data.tensors.push_back(byte_entry("model.use_fg_prior", state.config.use_fg_prior ? 1 : 0));
    data.tensors.push_back(scalar_entry("model.eval_beta", eval_beta));
    data.tensors.push_back(byte_entry("model.dynamic_prototypes", dynamic_prototypes ? 1 : 0));
    for (auto& [name, tensor] : state.named_params())
        data.tensors.push_back(tensor_entry(name, tensor));
    data.tensors.push_back(tensor_entry("fuse2.in_scale", state.fuse2.input_scale));
    data.tensors.push_back(tensor_entry("fuse3.in_scale", state.fuse3.input_scale));
    bank_entries(data.tensors, "bank2", state.bank2);
    bank_entries(data.tensors, "bank3", state.bank3);
    save_checkpoint(path, data);
}

LoadedPipeline load_pipeline(const std::filesystem::path& path) {
    CheckpointData data = load_checkpoint(path);
    std::map<std::string, const NamedTensor*> by_name;
    for (const NamedTensor& t : data.tensors) by_name[t.name] = &t;
    auto need = [&](const std::string& name) -> const NamedTensor& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw CorruptCheckpoint("missing tensor " + name);
        return *it->second;
    };

    ModelConfig config;
    config.k_stage = static_cast<int>(need("model.k_stage").f64.at(0));
    config.use_kim = need("model.use_kim").u8.at(0) != 0;
    config.use_fg_prior = need("model.use_fg_prior").u8.at(0) != 0;

    LoadedPipeline loaded;
    Rng dummy(0);
    loaded.state = PipelineState::init(config, dummy);
    loaded.eval_beta = need("model.eval_beta").f64.at(0);
    loaded.dynamic_prototypes = need("model.dynamic_prototypes").u8.at(0) != 0;

    for (auto& [name, tensor] : loaded.state.named_params()) {
        const NamedTensor& stored = need(name);
        if (stored.dims != tensor.shape())
            throw CorruptCheckpoint("tensor " + name + " has unexpected shape");
        tensor.data() = stored.f64;
    }
    loaded.state.fuse2.input_scale.data() = need("fuse2.in_scale").f64;
    loaded.state.fuse3.input_scale.data() = need("fuse3.in_scale").f64;
    auto load_bank = [&](const std::string& prefix, PrototypeBank& bank) {
        bank.alpha = need(prefix + ".alpha").f64.at(0);
        for (const NamedTensor& t : data.tensors) {
            const std::string proto_prefix = prefix + ".proto.";
            if (t.name.rfind(proto_prefix, 0) != 0) continue;
            const int id = std::stoi(t.name.substr(proto_prefix.size()));
            PrototypeEntry entry;
            entry.vec = t.f64;
            entry.initialized = true;
            entry.dynamic = need(prefix + ".mode." + std::to_string(id)).u8.at(0) != 0;
            bank.protos[id] = std::move(entry);
        }
    };
    load_bank("bank2", loaded.state.bank2);
    load_bank("bank3", loaded.state.bank3);
    for (int s = 1; s <= 3; ++s)
        loaded.state.trained[static_cast<size_t>(s)] = (data.stage_mask >> s) & 1u;
    return loaded;
}

}  // namespace osp
