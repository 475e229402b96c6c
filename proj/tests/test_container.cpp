#include "doctest.h"

#include "helpers.hpp"

#include "laser/container.hpp"
#include "laser/error.hpp"
#include "laser/hashing.hpp"
#include "laser/inference.hpp"

#include <cstring>
#include <fstream>

using namespace laser;
using nlohmann::json;

namespace {

std::vector<std::uint8_t> with_header(const json& header, std::size_t payload_bytes) {
    const std::string text = header.dump();
    std::vector<std::uint8_t> out(kLtcMagic, kLtcMagic + 8);
    std::uint64_t n = text.size();
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
    }
    out.insert(out.end(), text.begin(), text.end());
    out.resize(out.size() + payload_bytes, 0);
    return out;
}

} // namespace

TEST_CASE("sha256 test vectors") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    Sha256 h;
    h.update("a");
    h.update("bc");
    CHECK(h.hex_digest() == sha256_hex("abc"));
}

TEST_CASE("raw LTC encode/decode round-trip") {
    LtcFile f;
    f.config = {{"num_layers", 1}};
    f.metadata = {{"note", "x"}};
    f.tensors["b"] = {{3}, {1.5f, -2.0f, 0.25f}};
    f.tensors["a"] = {{2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}};
    const auto bytes = encode_ltc(f);
    CHECK(std::memcmp(bytes.data(), "LTCV0001", 8) == 0);
    const LtcFile g = decode_ltc(bytes);
    CHECK(g.config == f.config);
    CHECK(g.metadata == f.metadata);
    REQUIRE(g.tensors.size() == 2);
    CHECK(g.tensors.at("a").shape == std::vector<std::size_t>{2, 2});
    CHECK(g.tensors.at("a").values == f.tensors["a"].values);
    CHECK(g.tensors.at("b").values == f.tensors["b"].values);
    CHECK(encode_ltc(g) == bytes);

    LtcFile no_meta = f;
    no_meta.metadata = nullptr;
    CHECK(decode_ltc(encode_ltc(no_meta)).metadata.is_null());

    LtcFile reserved = f;
    reserved.tensors["config"] = {{1}, {0.0f}};
    CHECK_THROWS_AS(encode_ltc(reserved), ArgumentError);
    LtcFile bad_shape = f;
    bad_shape.tensors["c"] = {{2, 2}, {0.0f}};
    CHECK_THROWS_AS(encode_ltc(bad_shape), ArgumentError);
}

TEST_CASE("corrupt LTC files are rejected with FormatError") {
    LtcFile f;
    f.config = json::object();
    f.tensors["a"] = {{2}, {1.0f, 2.0f}};
    const auto good = encode_ltc(f);

    auto bad_magic = good;
    bad_magic[3] = 'X';
    CHECK_THROWS_AS(decode_ltc(bad_magic), FormatError);
    CHECK_THROWS_AS(decode_ltc(std::vector<std::uint8_t>(good.begin(), good.begin() + 10)), FormatError);

    auto long_header = good;
    long_header[8] = 0xff;
    long_header[9] = 0xff;
    CHECK_THROWS_AS(decode_ltc(long_header), FormatError);

    auto truncated = good;
    truncated.pop_back();
    CHECK_THROWS_AS(decode_ltc(truncated), FormatError);

    const json desc = {{"dtype", "f32"}, {"shape", {2}}, {"offset", 0}, {"length", 8}};
    CHECK_NOTHROW(decode_ltc(with_header({{"config", json::object()}, {"a", desc}}, 8)));
    CHECK_THROWS_AS(decode_ltc(with_header({{"a", desc}}, 8)), FormatError);
    CHECK_THROWS_AS(decode_ltc(with_header(json::array(), 0)), FormatError);

    json f16 = desc;
    f16["dtype"] = "f16";
    CHECK_THROWS_AS(decode_ltc(with_header({{"config", json::object()}, {"a", f16}}, 8)), FormatError);
    json wrong_len = desc;
    wrong_len["length"] = 12;
    CHECK_THROWS_AS(decode_ltc(with_header({{"config", json::object()}, {"a", wrong_len}}, 12)), FormatError);
    json overlap = desc;
    overlap["offset"] = 4;
    CHECK_THROWS_AS(decode_ltc(with_header({{"config", json::object()}, {"a", desc}, {"b", overlap}}, 12)),
                    FormatError);
    json missing = desc;
    missing.erase("offset");
    CHECK_THROWS_AS(decode_ltc(with_header({{"config", json::object()}, {"a", missing}}, 8)), FormatError);

    std::vector<std::uint8_t> garbage = good;
    garbage[16] = '!';
    CHECK_THROWS_AS(decode_ltc(garbage), FormatError);
}

TEST_CASE("model weights round-trip through LTC at f32 precision") {
    const auto weights = make_random_weights(testing::small_config(), 31);
    const LtcFile file = to_ltc(weights);
    CHECK(file.tensors.count("layers.1.u_in.weight") == 1);
    CHECK(file.tensors.count("layers.0.ln2.bias") == 1);
    CHECK(file.tensors.count("embedding.weight") == 1);
    CHECK(file.tensors.at("layers.1.u_in.weight").shape == std::vector<std::size_t>{16, 32});
    const ModelWeights back = from_ltc(decode_ltc(encode_ltc(file)));
    CHECK(back.config == weights.config);
    const Matrix& a = weights.layers[1].matrices[4];
    const Matrix& b = back.layers[1].matrices[4];
    CHECK(max_abs_diff(a, b) < 1e-6);
    for (std::size_t i = 0; i < b.size(); ++i) {
        CHECK(b.data()[i] == static_cast<double>(static_cast<float>(a.data()[i])));
    }
    // A second round-trip is exact.
    CHECK(encode_ltc(to_ltc(back)) == encode_ltc(file));
}

TEST_CASE("tensor names and config serialization") {
    CHECK(tensor_name(MatrixType::u_in, 3) == "layers.3.u_in.weight");
    CHECK(tensor_name(MatrixType::wq, 0, true) == "layers.0.wq.bias");
    ModelConfig c = testing::small_config();
    c.norm_kind = NormKind::post_layernorm;
    c.activation = Activation::relu;
    c.fidelity = Fidelity::reduced;
    CHECK(config_from_json(config_to_json(c)) == c);
    json j = config_to_json(c);
    j["activation"] = "swish";
    CHECK_THROWS_AS(config_from_json(j), FormatError);
    j = config_to_json(c);
    j.erase("hidden_dim");
    CHECK_THROWS_AS(config_from_json(j), FormatError);
}

TEST_CASE("missing or unknown tensors are listed") {
    LtcFile file = to_ltc(make_random_weights(testing::small_config(), 32));
    file.tensors.erase("layers.0.wk.weight");
    file.tensors["layers.0.extra.weight"] = {{1}, {0.0f}};
    try {
        from_ltc(file);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("layers.0.wk.weight") != std::string::npos);
        CHECK(msg.find("layers.0.extra.weight") != std::string::npos);
    }
    LtcFile wrong = to_ltc(make_random_weights(testing::small_config(), 32));
    wrong.tensors["layers.0.wk.weight"].shape = {32, 8};
    CHECK_THROWS_AS(from_ltc(wrong), FormatError);
}

TEST_CASE("model files on disk and model hashes") {
    const auto dir = testing::temp_dir("container");
    const auto weights = make_random_weights(testing::small_config(), 33);
    write_ltc(dir / "m.ltc", to_ltc(weights));
    const TransformerModel loaded = load_model(dir / "m.ltc");
    const TransformerModel reloaded = load_model(dir / "m.ltc");
    CHECK(model_hash(loaded) == model_hash(reloaded));
    CHECK(model_hash(loaded).size() == 64);
    CHECK(forward(loaded, {1, 2, 3}) == forward(reloaded, {1, 2, 3}));

    const auto edited = loaded.with_override(MatrixType::wo, 0, Matrix(16, 16));
    CHECK(model_hash(edited) != model_hash(loaded));
    CHECK(model_hash(TransformerModel(edited.materialize())) == model_hash(edited));

    CHECK_THROWS_AS(load_model(dir / "missing.ltc"), FormatError);
    std::ofstream(dir / "junk.ltc") << "not a model";
    CHECK_THROWS_AS(load_model(dir / "junk.ltc"), FormatError);
}

TEST_CASE("the toy fixture loads") {
    const auto model = load_model(testing::fixture_dir() / "toy_model.ltc");
    CHECK(model.config().num_layers == 2);
    CHECK(model.config().hidden_dim == 64);
    CHECK(model.config().vocab_size == 259);
    CHECK_FALSE(model.baseline().unembedding_bias.empty());
}
