#include "laser/container.hpp"

#include "laser/error.hpp"
#include "laser/hashing.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace laser {

namespace {

using nlohmann::json;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

std::uint64_t get_u64(std::span<const std::uint8_t> in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(in[static_cast<std::size_t>(i)]) << (8 * i);
    }
    return v;
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
}

float get_f32(const std::uint8_t* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) {
        bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    }
    return std::bit_cast<float>(bits);
}

std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) {
        n *= s;
    }
    return n;
}

bool is_reserved_key(const std::string& key) { return key == "config" || key == "metadata"; }

LtcTensor matrix_tensor(const Matrix& m) {
    LtcTensor t{{m.rows(), m.cols()}, {}};
    t.values.reserve(m.size());
    for (double x : m.data()) {
        t.values.push_back(static_cast<float>(x));
    }
    return t;
}

LtcTensor vector_tensor(const std::vector<double>& v) {
    LtcTensor t{{v.size()}, {}};
    t.values.reserve(v.size());
    for (double x : v) {
        t.values.push_back(static_cast<float>(x));
    }
    return t;
}

const char* activation_name(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }
const char* norm_name(NormKind n) { return n == NormKind::pre_layernorm ? "pre_layernorm" : "post_layernorm"; }
const char* fidelity_name(Fidelity f) { return f == Fidelity::full ? "full" : "reduced"; }

// Takes ownership of tensors as they are consumed so leftovers can be reported.
class TensorTaker {
public:
    explicit TensorTaker(const std::map<std::string, LtcTensor>& tensors) : tensors_(tensors) {}

    const LtcTensor* find(const std::string& name) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) {
            missing_.push_back(name);
            return nullptr;
        }
        used_.insert(name);
        return &it->second;
    }

    Matrix matrix(const std::string& name, std::size_t rows, std::size_t cols) {
        const LtcTensor* t = find(name);
        if (t == nullptr) {
            return Matrix(rows, cols);
        }
        if (t->shape != std::vector<std::size_t>{rows, cols}) {
            throw FormatError("tensor " + name + ": expected shape [" + std::to_string(rows) + ", " +
                              std::to_string(cols) + "]");
        }
        std::vector<double> data(t->values.begin(), t->values.end());
        return Matrix(rows, cols, std::move(data));
    }

    std::vector<double> vector(const std::string& name, std::size_t n) {
        const LtcTensor* t = find(name);
        if (t == nullptr) {
            return std::vector<double>(n, 0.0);
        }
        if (t->shape != std::vector<std::size_t>{n}) {
            throw FormatError("tensor " + name + ": expected shape [" + std::to_string(n) + "]");
        }
        return {t->values.begin(), t->values.end()};
    }

    void finish() const {
        std::string problems;
        if (!missing_.empty()) {
            problems += "missing tensors:";
            for (const auto& n : missing_) {
                problems += " " + n;
            }
        }
        std::string unknown;
        for (const auto& [name, _] : tensors_) {
            if (!used_.contains(name)) {
                unknown += " " + name;
            }
        }
        if (!unknown.empty()) {
            problems += (problems.empty() ? "" : "; ") + std::string("unknown tensors:") + unknown;
        }
        if (!problems.empty()) {
            throw FormatError("LTC " + problems);
        }
    }

private:
    const std::map<std::string, LtcTensor>& tensors_;
    std::vector<std::string> missing_;
    std::set<std::string> used_;
};

} // namespace

std::vector<std::uint8_t> encode_ltc(const LtcFile& file) {
    json header = json::object();
    header["config"] = file.config;
    if (!file.metadata.is_null()) {
        header["metadata"] = file.metadata;
    }
    std::uint64_t offset = 0;
    for (const auto& [name, t] : file.tensors) {
        if (is_reserved_key(name)) {
            throw ArgumentError("LTC: tensor name '" + name + "' is reserved");
        }
        if (t.shape.empty() || t.shape.size() > 2 || element_count(t.shape) != t.values.size()) {
            throw ArgumentError("LTC: tensor " + name + " has inconsistent shape");
        }
        const std::uint64_t length = 4 * static_cast<std::uint64_t>(t.values.size());
        header[name] = {{"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}, {"length", length}};
        offset += length;
    }
    const std::string text = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(16 + text.size() + offset);
    for (char c : kLtcMagic) {
        out.push_back(static_cast<std::uint8_t>(c));
    }
    put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& [name, t] : file.tensors) {
        for (float f : t.values) {
            put_f32(out, f);
        }
    }
    return out;
}

LtcFile decode_ltc(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16 || !std::equal(std::begin(kLtcMagic), std::end(kLtcMagic), bytes.begin(),
                                         [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
        throw FormatError("LTC: bad magic (expected LTCV0001)");
    }
    const std::uint64_t header_len = get_u64(bytes.subspan(8, 8));
    if (header_len > bytes.size() - 16) {
        throw FormatError("LTC: header length " + std::to_string(header_len) + " exceeds file size");
    }
    const auto* hp = reinterpret_cast<const char*>(bytes.data() + 16);
    json header;
    try {
        header = json::parse(hp, hp + header_len);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("LTC: header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) {
        throw FormatError("LTC: header must be a JSON object");
    }
    const auto payload = bytes.subspan(16 + header_len);

    LtcFile file;
    if (!header.contains("config")) {
        throw FormatError("LTC: header has no config object");
    }
    file.config = header.at("config");
    if (header.contains("metadata")) {
        file.metadata = header.at("metadata");
    }

    struct Extent {
        std::uint64_t offset;
        std::uint64_t length;
        std::string name;
    };
    std::vector<Extent> extents;
    for (const auto& [name, desc] : header.items()) {
        if (is_reserved_key(name)) {
            continue;
        }
        try {
            if (desc.at("dtype").get<std::string>() != "f32") {
                throw FormatError("LTC: tensor " + name + " has unsupported dtype");
            }
            LtcTensor t;
            t.shape = desc.at("shape").get<std::vector<std::size_t>>();
            const auto offset = desc.at("offset").get<std::uint64_t>();
            const auto length = desc.at("length").get<std::uint64_t>();
            if (t.shape.empty() || t.shape.size() > 2 || 4 * element_count(t.shape) != length) {
                throw FormatError("LTC: tensor " + name + " shape/length mismatch");
            }
            if (offset > payload.size() || length > payload.size() - offset) {
                throw FormatError("LTC: tensor " + name + " extends past end of file");
            }
            t.values.resize(element_count(t.shape));
            const std::uint8_t* p = payload.data() + offset;
            for (std::size_t i = 0; i < t.values.size(); ++i) {
                t.values[i] = get_f32(p + 4 * i);
            }
            extents.push_back({offset, length, name});
            file.tensors.emplace(name, std::move(t));
        } catch (const json::exception& e) {
            throw FormatError("LTC: bad descriptor for tensor " + name + ": " + e.what());
        }
    }
    std::sort(extents.begin(), extents.end(), [](const Extent& a, const Extent& b) { return a.offset < b.offset; });
    for (std::size_t i = 1; i < extents.size(); ++i) {
        if (extents[i - 1].offset + extents[i - 1].length > extents[i].offset) {
            throw FormatError("LTC: tensors " + extents[i - 1].name + " and " + extents[i].name + " overlap");
        }
    }
    return file;
}

LtcFile read_ltc(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_ltc(bytes);
}

void write_ltc(const std::filesystem::path& path, const LtcFile& file) {
    const std::vector<std::uint8_t> bytes = encode_ltc(file);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw FormatError("short write to " + path.string());
    }
}

json config_to_json(const ModelConfig& c) {
    return json{{"num_layers", c.num_layers},
                {"hidden_dim", c.hidden_dim},
                {"num_heads", c.num_heads},
                {"mlp_hidden_dim", c.mlp_hidden_dim},
                {"vocab_size", c.vocab_size},
                {"max_context", c.max_context},
                {"activation", activation_name(c.activation)},
                {"use_bias", c.use_bias},
                {"norm_kind", norm_name(c.norm_kind)},
                {"layernorm_eps", c.layernorm_eps},
                {"fidelity", fidelity_name(c.fidelity)}};
}

ModelConfig config_from_json(const json& j) {
    try {
        ModelConfig c;
        c.num_layers = j.at("num_layers").get<std::size_t>();
        c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        c.num_heads = j.at("num_heads").get<std::size_t>();
        c.mlp_hidden_dim = j.at("mlp_hidden_dim").get<std::size_t>();
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.max_context = j.at("max_context").get<std::size_t>();
        const auto act = j.value("activation", std::string("gelu"));
        if (act != "gelu" && act != "relu") {
            throw FormatError("config: unknown activation '" + act + "'");
        }
        c.activation = act == "relu" ? Activation::relu : Activation::gelu;
        c.use_bias = j.value("use_bias", true);
        const auto norm = j.value("norm_kind", std::string("pre_layernorm"));
        if (norm != "pre_layernorm" && norm != "post_layernorm") {
            throw FormatError("config: unknown norm_kind '" + norm + "'");
        }
        c.norm_kind = norm == "post_layernorm" ? NormKind::post_layernorm : NormKind::pre_layernorm;
        c.layernorm_eps = j.value("layernorm_eps", 1e-5);
        const auto fid = j.value("fidelity", std::string("full"));
        if (fid != "full" && fid != "reduced") {
            throw FormatError("config: unknown fidelity '" + fid + "'");
        }
        c.fidelity = fid == "reduced" ? Fidelity::reduced : Fidelity::full;
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    } catch (const ArgumentError& e) {
        throw FormatError(e.what());
    }
}

std::string tensor_name(MatrixType tau, std::size_t layer, bool bias) {
    return "layers." + std::to_string(layer) + "." + std::string(to_string(tau)) + (bias ? ".bias" : ".weight");
}

LtcFile to_ltc(const ModelWeights& w) {
    LtcFile f;
    f.config = config_to_json(w.config);
    f.tensors["embedding.weight"] = matrix_tensor(w.embedding);
    f.tensors["position.weight"] = matrix_tensor(w.position);
    f.tensors["unembedding.weight"] = matrix_tensor(w.unembedding);
    if (!w.unembedding_bias.empty()) {
        f.tensors["unembedding.bias"] = vector_tensor(w.unembedding_bias);
    }
    f.tensors["final_ln.weight"] = vector_tensor(w.final_ln.weight);
    f.tensors["final_ln.bias"] = vector_tensor(w.final_ln.bias);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto& layer = w.layers[l];
        for (MatrixType tau : kAllMatrixTypes) {
            const auto idx = static_cast<std::size_t>(tau);
            f.tensors[tensor_name(tau, l)] = matrix_tensor(layer.matrices[idx]);
            if (w.config.use_bias) {
                f.tensors[tensor_name(tau, l, true)] = vector_tensor(layer.biases[idx]);
            }
        }
        const std::string prefix = "layers." + std::to_string(l) + ".";
        f.tensors[prefix + "ln1.weight"] = vector_tensor(layer.ln1.weight);
        f.tensors[prefix + "ln1.bias"] = vector_tensor(layer.ln1.bias);
        f.tensors[prefix + "ln2.weight"] = vector_tensor(layer.ln2.weight);
        f.tensors[prefix + "ln2.bias"] = vector_tensor(layer.ln2.bias);
    }
    return f;
}

ModelWeights from_ltc(const LtcFile& file) {
    ModelWeights w;
    w.config = config_from_json(file.config);
    const ModelConfig& c = w.config;
    const std::size_t d = c.hidden_dim;
    TensorTaker take(file.tensors);
    w.embedding = take.matrix("embedding.weight", c.vocab_size, d);
    w.position = take.matrix("position.weight", c.max_context, d);
    w.unembedding = take.matrix("unembedding.weight", d, c.vocab_size);
    if (file.tensors.contains("unembedding.bias")) {
        w.unembedding_bias = take.vector("unembedding.bias", c.vocab_size);
    }
    w.final_ln.weight = take.vector("final_ln.weight", d);
    w.final_ln.bias = take.vector("final_ln.bias", d);
    w.layers.resize(c.num_layers);
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        auto& layer = w.layers[l];
        for (MatrixType tau : kAllMatrixTypes) {
            const auto idx = static_cast<std::size_t>(tau);
            const auto [r, cols] = c.shape_of(tau);
            layer.matrices[idx] = take.matrix(tensor_name(tau, l), r, cols);
            if (c.use_bias) {
                layer.biases[idx] = take.vector(tensor_name(tau, l, true), cols);
            }
        }
        const std::string prefix = "layers." + std::to_string(l) + ".";
        layer.ln1.weight = take.vector(prefix + "ln1.weight", d);
        layer.ln1.bias = take.vector(prefix + "ln1.bias", d);
        layer.ln2.weight = take.vector(prefix + "ln2.weight", d);
        layer.ln2.bias = take.vector(prefix + "ln2.bias", d);
    }
    take.finish();
    return w;
}

TransformerModel load_model(const std::filesystem::path& path) {
    try {
        return TransformerModel(from_ltc(read_ltc(path)));
    } catch (const ArgumentError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::string model_hash(const TransformerModel& model) {
    const LtcFile f = to_ltc(model.materialize());
    Sha256 h;
    h.update(config_to_json(model.config()).dump());
    std::vector<std::uint8_t> buf;
    for (const auto& [name, t] : f.tensors) {
        h.update(name);
        buf.clear();
        for (std::size_t s : t.shape) {
            put_u64(buf, s);
        }
        for (float v : t.values) {
            put_f32(buf, v);
        }
        h.update(buf);
    }
    return h.hex_digest();
}

} // namespace laser
