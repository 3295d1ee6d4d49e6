#include "lmtrace/tensor_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "lmtrace/errors.hpp"

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace lmtrace {

using json = nlohmann::json;

std::string dtype_tag(DType dtype) { return dtype == DType::F16 ? "F16" : "F32"; }

std::size_t dtype_size(DType dtype) { return dtype == DType::F16 ? 2 : 4; }

float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1fu;
    const std::uint32_t mant = h & 0x3ffu;
    if (exp == 0) {
        const float mag = static_cast<float>(mant) * 5.9604644775390625e-8f;  // 2^-24
        return sign ? -mag : mag;
    }
    std::uint32_t bits;
    if (exp == 31) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

std::uint16_t float_to_half(float f) {
    const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
    const auto sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
    const std::uint32_t absx = x & 0x7fffffffu;
    if (absx >= 0x7f800000u) return sign | (absx > 0x7f800000u ? 0x7e00 : 0x7c00);
    if (absx >= 0x477ff000u) return sign | 0x7c00;  // rounds past 65504
    if (absx < 0x38800000u) {
        const float scaled = std::nearbyint(std::bit_cast<float>(absx) * 16777216.0f);
        return sign | static_cast<std::uint16_t>(scaled);
    }
    const std::uint32_t mant = absx & 0x7fffffu;
    const std::uint32_t exp = (absx >> 23) - 127 + 15;
    std::uint32_t half = (exp << 10) | (mant >> 13);
    const std::uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;
    return sign | static_cast<std::uint16_t>(half);
}

namespace {

DType parse_dtype(const json& tag, const std::string& name) {
    if (!tag.is_string()) throw ArchiveFormatError("tensor '" + name + "': dtype is not a string");
    const auto s = tag.get<std::string>();
    if (s == "F32") return DType::F32;
    if (s == "F16") return DType::F16;
    throw UnsupportedDtype("tensor '" + name + "': unsupported dtype " + s);
}

std::size_t as_index(const json& v, const std::string& what) {
    if (!v.is_number_unsigned()) throw ArchiveFormatError(what + " must be a non-negative integer");
    return v.get<std::size_t>();
}

}  // namespace

TensorMap parse_archive(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8) throw ArchiveFormatError("archive shorter than its 8-byte header length");
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data(), 8);
    if (header_len > bytes.size() - 8) throw ArchiveFormatError("header length exceeds file size");

    const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + 8);
    json header;
    try {
        header = json::parse(header_begin, header_begin + header_len);
    } catch (const json::parse_error& e) {
        throw ArchiveFormatError(std::string("malformed header: ") + e.what());
    }
    if (!header.is_object()) throw ArchiveFormatError("header is not an object");

    const std::uint8_t* region = bytes.data() + 8 + header_len;
    const std::size_t region_size = bytes.size() - 8 - header_len;

    TensorMap out;
    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") continue;
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets")) {
            throw ArchiveFormatError("tensor '" + name + "': entry needs dtype, shape and data_offsets");
        }
        const DType dtype = parse_dtype(entry["dtype"], name);
        const json& jshape = entry["shape"];
        const json& joff = entry["data_offsets"];
        if (!jshape.is_array()) throw ArchiveFormatError("tensor '" + name + "': shape is not a list");
        if (!joff.is_array() || joff.size() != 2) {
            throw ArchiveFormatError("tensor '" + name + "': data_offsets must be [begin, end]");
        }
        Shape shape;
        for (const auto& d : jshape) shape.push_back(as_index(d, "tensor '" + name + "' shape entry"));
        const std::size_t begin = as_index(joff[0], "tensor '" + name + "' offset");
        const std::size_t end = as_index(joff[1], "tensor '" + name + "' offset");
        if (begin > end || end > region_size) {
            throw ArchiveFormatError("tensor '" + name + "': offsets [" + std::to_string(begin) + ", " +
                                     std::to_string(end) + ") outside data region of " +
                                     std::to_string(region_size) + " bytes");
        }
        const std::size_t numel = shape_numel(shape);
        if (end - begin != numel * dtype_size(dtype)) {
            throw ArchiveFormatError("tensor '" + name + "': shape " + shape_to_string(shape) + " needs " +
                                     std::to_string(numel * dtype_size(dtype)) + " bytes, found " +
                                     std::to_string(end - begin));
        }
        std::vector<float> values(numel);
        const std::uint8_t* src = region + begin;
        if (dtype == DType::F32) {
            std::memcpy(values.data(), src, numel * 4);
        } else {
            for (std::size_t i = 0; i < numel; ++i) {
                std::uint16_t h;
                std::memcpy(&h, src + 2 * i, 2);
                values[i] = half_to_float(h);
            }
        }
        out.emplace(name, TensorRecord{name, dtype, Tensor(std::move(shape), std::move(values))});
    }
    return out;
}

TensorMap open_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveFormatError("cannot open archive " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(size);
    if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
        throw ArchiveFormatError("failed to read archive " + path.string());
    }
    return parse_archive(bytes);
}

std::vector<std::uint8_t> serialize_archive(const TensorMap& tensors) {
    json header = json::object();
    std::size_t offset = 0;
    for (const auto& [name, rec] : tensors) {
        const std::size_t nbytes = rec.value.size() * dtype_size(rec.stored_dtype);
        header[name] = {{"dtype", dtype_tag(rec.stored_dtype)},
                        {"shape", rec.value.shape()},
                        {"data_offsets", {offset, offset + nbytes}}};
        offset += nbytes;
    }
    std::string text = header.dump();
    while (text.size() % 8 != 0) text.push_back(' ');

    std::vector<std::uint8_t> bytes(8 + text.size() + offset);
    const std::uint64_t header_len = text.size();
    std::memcpy(bytes.data(), &header_len, 8);
    std::memcpy(bytes.data() + 8, text.data(), text.size());
    std::uint8_t* dst = bytes.data() + 8 + text.size();
    for (const auto& [name, rec] : tensors) {
        const float* src = rec.value.data();
        if (rec.stored_dtype == DType::F32) {
            std::memcpy(dst, src, rec.value.size() * 4);
            dst += rec.value.size() * 4;
        } else {
            for (std::size_t i = 0; i < rec.value.size(); ++i) {
                const std::uint16_t h = float_to_half(src[i]);
                std::memcpy(dst, &h, 2);
                dst += 2;
            }
        }
    }
    return bytes;
}

void write_archive(const std::filesystem::path& path, const TensorMap& tensors) {
    const auto bytes = serialize_archive(tensors);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ArchiveFormatError("cannot write archive " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ArchiveFormatError("failed writing archive " + path.string());
}

void ModelConfig::validate() const {
    if (n_layer == 0) throw ModelLoadError("n_layer must be >= 1");
    if (n_head == 0) throw ModelLoadError("n_head must be >= 1");
    if (d_model == 0 || d_model % n_head != 0) {
        throw ModelLoadError("d_model (" + std::to_string(d_model) + ") must be a positive multiple of n_head (" +
                             std::to_string(n_head) + ")");
    }
    if (d_ff == 0) throw ModelLoadError("d_ff must be >= 1");
    if (n_ctx == 0) throw ModelLoadError("n_ctx must be >= 1");
    if (n_vocab == 0) throw ModelLoadError("n_vocab must be >= 1");
    if (!(ln_eps > 0.0f)) throw ModelLoadError("ln_eps must be positive");
}

namespace {

class ParamReader {
public:
    explicit ParamReader(const TensorMap& archive) : archive_(archive) {}

    Tensor take(const std::string& name, const Shape& expected) const {
        const TensorRecord* rec = find(name);
        if (rec == nullptr) throw MissingParameter(name);
        if (rec->value.shape() != expected) {
            throw ShapeMismatch("parameter " + name + " has shape " + shape_to_string(rec->value.shape()) +
                                ", config implies " + shape_to_string(expected));
        }
        return rec->value;
    }

private:
    const TensorRecord* find(const std::string& name) const {
        if (auto it = archive_.find(name); it != archive_.end()) return &it->second;
        if (auto it = archive_.find("transformer." + name); it != archive_.end()) return &it->second;
        return nullptr;
    }

    const TensorMap& archive_;
};

// Columns [col0, col0 + width) of a row-major matrix.
Tensor column_slice(const Tensor& m, std::size_t col0, std::size_t width) {
    const std::size_t rows = m.dim(0);
    const std::size_t cols = m.dim(1);
    std::vector<float> out(rows * width);
    for (std::size_t r = 0; r < rows; ++r) {
        std::memcpy(out.data() + r * width, m.data() + r * cols + col0, width * sizeof(float));
    }
    return Tensor({rows, width}, std::move(out));
}

Tensor vector_slice(const Tensor& v, std::size_t begin, std::size_t len) {
    return Tensor({len}, std::vector<float>(v.data() + begin, v.data() + begin + len));
}

std::string layer_name(std::size_t l, const char* suffix) { return "h." + std::to_string(l) + "." + suffix; }

}  // namespace

ModelParams load_model(const TensorMap& archive, const ModelConfig& config) {
    config.validate();
    const ParamReader reader(archive);
    const std::size_t d = config.d_model;
    const std::size_t f = config.d_ff;

    ModelParams p;
    p.config = config;
    p.token_embedding = reader.take("wte.weight", {config.n_vocab, d});
    p.position_embedding = reader.take("wpe.weight", {config.n_ctx, d});
    p.lnf_gain = reader.take("ln_f.weight", {d});
    p.lnf_bias = reader.take("ln_f.bias", {d});

    p.layers.reserve(config.n_layer);
    for (std::size_t l = 0; l < config.n_layer; ++l) {
        LayerParams lp;
        lp.ln1_gain = reader.take(layer_name(l, "ln_1.weight"), {d});
        lp.ln1_bias = reader.take(layer_name(l, "ln_1.bias"), {d});
        const Tensor qkv = reader.take(layer_name(l, "attn.c_attn.weight"), {d, 3 * d});
        const Tensor qkv_b = reader.take(layer_name(l, "attn.c_attn.bias"), {3 * d});
        lp.w_q = column_slice(qkv, 0, d);
        lp.w_k = column_slice(qkv, d, d);
        lp.w_v = column_slice(qkv, 2 * d, d);
        lp.b_q = vector_slice(qkv_b, 0, d);
        lp.b_k = vector_slice(qkv_b, d, d);
        lp.b_v = vector_slice(qkv_b, 2 * d, d);
        lp.w_o = reader.take(layer_name(l, "attn.c_proj.weight"), {d, d});
        lp.b_o = reader.take(layer_name(l, "attn.c_proj.bias"), {d});
        lp.ln2_gain = reader.take(layer_name(l, "ln_2.weight"), {d});
        lp.ln2_bias = reader.take(layer_name(l, "ln_2.bias"), {d});
        lp.w_in = reader.take(layer_name(l, "mlp.c_fc.weight"), {d, f});
        lp.b_in = reader.take(layer_name(l, "mlp.c_fc.bias"), {f});
        lp.w_out = reader.take(layer_name(l, "mlp.c_proj.weight"), {f, d});
        lp.b_out = reader.take(layer_name(l, "mlp.c_proj.bias"), {d});
        p.layers.push_back(std::move(lp));
    }
    return p;
}

TensorMap export_model(const ModelParams& params, DType dtype) {
    TensorMap out;
    auto put = [&](const std::string& name, const Tensor& t) { out[name] = TensorRecord{name, dtype, t}; };
    const std::size_t d = params.config.d_model;
    put("wte.weight", params.token_embedding);
    put("wpe.weight", params.position_embedding);
    put("ln_f.weight", params.lnf_gain);
    put("ln_f.bias", params.lnf_bias);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const LayerParams& lp = params.layers[l];
        Tensor qkv({d, 3 * d});
        Tensor qkv_b({3 * d});
        for (std::size_t r = 0; r < d; ++r) {
            std::memcpy(qkv.data() + r * 3 * d, lp.w_q.data() + r * d, d * sizeof(float));
            std::memcpy(qkv.data() + r * 3 * d + d, lp.w_k.data() + r * d, d * sizeof(float));
            std::memcpy(qkv.data() + r * 3 * d + 2 * d, lp.w_v.data() + r * d, d * sizeof(float));
        }
        std::memcpy(qkv_b.data(), lp.b_q.data(), d * sizeof(float));
        std::memcpy(qkv_b.data() + d, lp.b_k.data(), d * sizeof(float));
        std::memcpy(qkv_b.data() + 2 * d, lp.b_v.data(), d * sizeof(float));
        put(layer_name(l, "ln_1.weight"), lp.ln1_gain);
        put(layer_name(l, "ln_1.bias"), lp.ln1_bias);
        put(layer_name(l, "attn.c_attn.weight"), qkv);
        put(layer_name(l, "attn.c_attn.bias"), qkv_b);
        put(layer_name(l, "attn.c_proj.weight"), lp.w_o);
        put(layer_name(l, "attn.c_proj.bias"), lp.b_o);
        put(layer_name(l, "ln_2.weight"), lp.ln2_gain);
        put(layer_name(l, "ln_2.bias"), lp.ln2_bias);
        put(layer_name(l, "mlp.c_fc.weight"), lp.w_in);
        put(layer_name(l, "mlp.c_fc.bias"), lp.b_in);
        put(layer_name(l, "mlp.c_proj.weight"), lp.w_out);
        put(layer_name(l, "mlp.c_proj.bias"), lp.b_out);
    }
    return out;
}

}  // namespace lmtrace
