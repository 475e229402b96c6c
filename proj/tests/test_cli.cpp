#include "doctest.h"

#include "helpers.hpp"

#include "laser/cli.hpp"
#include "laser/container.hpp"
#include "laser/error.hpp"
#include "laser/intervention.hpp"

#include <fstream>
#include <sstream>

using namespace laser;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

// A small model and dataset on disk.
struct Workspace {
    std::filesystem::path dir;
    std::filesystem::path model;
    std::filesystem::path dataset;

    explicit Workspace(const std::string& name) : dir(testing::temp_dir(name)) {
        model = dir / "model.ltc";
        dataset = dir / "data.jsonl";
        write_ltc(model, to_ltc(make_random_weights(testing::small_config(2, 16, 2, 32, 259, 32), 81)));
        std::ofstream out(dataset);
        for (const auto& s : testing::random_samples(82, 12, 6, 2)) {
            out << json{{"id", s.id}, {"prompt", s.prompt}, {"answer", s.answer}}.dump() << "\n";
        }
    }

    RunConfig config(const std::string& out) const {
        RunConfig c;
        c.model = model;
        c.dataset = dataset;
        c.out = dir / out;
        return c;
    }
};

} // namespace

TEST_CASE("run config JSON round-trip and validation") {
    RunConfig c;
    c.model = "m.ltc";
    c.rho_grid = {0.5, 0.1};
    c.layers = {1};
    c.study_tau = "u_out";
    c.seed = 7;
    const RunConfig back = run_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK_THROWS_AS(run_config_from_json({{"rho_gird", {0.5}}}), FormatError);
    CHECK(run_config_from_json(json::object()).out == "out");
    CHECK(parse_split("validation") == SplitChoice::validation);
    CHECK_THROWS_AS(parse_split("train"), ArgumentError);
}

TEST_CASE("config hash ignores paths and threads but not settings") {
    RunConfig a;
    a.model = "a.ltc";
    RunConfig b = a;
    b.model = "elsewhere/b.ltc";
    b.out = "other";
    b.threads = 8;
    b.corpus = "corpus.jsonl";
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 64);
    RunConfig c = a;
    c.seed = 1;
    CHECK(config_hash(c) != config_hash(a));
    c = a;
    c.rho_grid = {0.5};
    CHECK(config_hash(c) != config_hash(a));
    c = a;
    c.metric = "classification";
    CHECK(config_hash(c) != config_hash(a));
}

TEST_CASE("write_atomic replaces the target") {
    const auto dir = testing::temp_dir("atomic");
    write_atomic(dir / "f.txt", "one");
    write_atomic(dir / "f.txt", "two");
    CHECK(slurp(dir / "f.txt") == "two");
    CHECK_FALSE(std::filesystem::exists(dir / "f.txt.tmp"));
}

TEST_CASE("effective rank of identity weights equals the smaller dimension") {
    const auto dir = testing::temp_dir("effrank");
    const ModelConfig cfg = testing::small_config(2, 16, 2, 32, 259, 32);
    ModelWeights w = make_random_weights(cfg, 83);
    for (auto& layer : w.layers) {
        for (MatrixType tau : kAllMatrixTypes) {
            const auto [m, n] = cfg.shape_of(tau);
            layer.matrices[static_cast<std::size_t>(tau)] = Matrix::eye(m, n);
        }
    }
    write_ltc(dir / "eye.ltc", to_ltc(w));
    RunConfig c;
    c.model = dir / "eye.ltc";
    c.out = dir / "out";
    std::ostringstream log;
    CHECK(run_command("effective-rank", c, log) == 0);
    const std::string csv = slurp(dir / "out" / "effective_rank.csv");
    CHECK(csv.rfind("# config_hash=", 0) == 0);
    CHECK(csv.find("\ntau,layer,rows,cols,effective_rank\n") != std::string::npos);
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    std::getline(lines, line);
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
        CAPTURE(line);
        const auto comma = line.rfind(',');
        CHECK(std::stod(line.substr(comma + 1)) == doctest::Approx(16.0).epsilon(1e-12));
        ++rows;
    }
    CHECK(rows == 12);
    CHECK(csv.find("\nu_in,1,16,32,") != std::string::npos);
    CHECK(csv.find("\nu_out,1,32,16,") != std::string::npos);
}

TEST_CASE("apply with an empty plan reproduces the input tensors") {
    const Workspace ws("apply_empty");
    RunConfig c = ws.config("out");
    c.dataset.clear();
    std::ostringstream log;
    CHECK(run_command("apply", c, log) == 0);
    const LtcFile in = read_ltc(ws.model);
    const LtcFile out = read_ltc(c.out / "model.ltc");
    REQUIRE(in.tensors.size() == out.tensors.size());
    for (const auto& [name, t] : in.tensors) {
        CHECK(out.tensors.at(name).shape == t.shape);
        CHECK(out.tensors.at(name).values == t.values);
    }
    CHECK(out.config == in.config);
    CHECK(out.metadata["plan"] == json::array());
    CHECK(out.metadata["model_hash"] == out.metadata["source_model_hash"]);
    CHECK(json::parse(slurp(c.out / "plan.json")) == json::array());
}

TEST_CASE("apply materializes the plan") {
    const Workspace ws("apply_plan");
    write_atomic(ws.dir / "plan.json", R"([{"tau": "u_in", "layer": 1, "rho": 0.25, "method": "svd_truncate"}])");
    RunConfig c = ws.config("out");
    c.plan = ws.dir / "plan.json";
    std::ostringstream log;
    CHECK(run_command("apply", c, log) == 0);
    const TransformerModel edited = load_model(c.out / "model.ltc");
    const TransformerModel base = load_model(ws.model);
    const TransformerModel expect = apply_plan(base, read_plan(c.plan));
    CHECK(max_abs_diff(edited.weight(MatrixType::u_in, 1), expect.weight(MatrixType::u_in, 1)) < 1e-6);
    CHECK(edited.weight(MatrixType::u_out, 1) == base.weight(MatrixType::u_out, 1));
    CHECK(std::filesystem::exists(c.out / "report.json"));
    CHECK(std::filesystem::exists(c.out / "report.csv"));
}

TEST_CASE("reruns produce byte-identical outputs") {
    const Workspace ws("rerun");
    for (const char* cmd : {"eval", "search", "compose"}) {
        CAPTURE(cmd);
        RunConfig a = ws.config(std::string(cmd) + "_a");
        RunConfig b = ws.config(std::string(cmd) + "_b");
        a.rho_grid = b.rho_grid = {0.5, 0.1};
        b.threads = 4;
        std::ostringstream log;
        REQUIRE(run_command(cmd, a, log) == 0);
        REQUIRE(run_command(cmd, b, log) == 0);
        for (const auto& entry : std::filesystem::directory_iterator(a.out)) {
            const auto name = entry.path().filename();
            CAPTURE(name.string());
            CHECK(slurp(entry.path()) == slurp(b.out / name));
        }
    }
}

TEST_CASE("search writes the plan, candidates and split reports") {
    const Workspace ws("search");
    RunConfig c = ws.config("out");
    c.rho_grid = {0.5};
    c.objective = "neg_loss";
    std::ostringstream log;
    REQUIRE(run_command("search", c, log) == 0);
    for (const char* f : {"search.json", "plan.json", "candidates.csv", "validation_report.json",
                          "validation_report.csv", "test_report.json", "test_report.csv"}) {
        CHECK(std::filesystem::exists(c.out / f));
    }
    const std::string candidates = slurp(c.out / "candidates.csv");
    CHECK(candidates.find("index,plan,objective\n0,baseline,") != std::string::npos);
    const json search = json::parse(slurp(c.out / "search.json"));
    CHECK(search["candidates"].size() == 5);
    CHECK(json::parse(slurp(c.out / "plan.json")) == search["best"]);
    CHECK(read_report(c.out / "validation_report.json").records.size() == 2);
    CHECK(read_report(c.out / "test_report.json").records.size() == 10);
    CHECK(log.str().find("candidate") != std::string::npos);
}

TEST_CASE("analyze: identical reports give empty flips, missing frequencies warn") {
    const Workspace ws("analyze");
    RunConfig e = ws.config("eval");
    std::ostringstream log;
    REQUIRE(run_command("eval", e, log) == 0);
    RunConfig a = ws.config("analysis");
    a.baseline_report = e.out / "report.json";
    a.intervened_report = e.out / "report.json";
    std::ostringstream alog;
    REQUIRE(run_command("analyze", a, alog) == 0);
    const json flips = json::parse(slurp(a.out / "flip_sets.json"));
    CHECK(flips["answer_corrected"].empty());
    CHECK(flips["answer_broken"].empty());
    CHECK(flips["originally_correct"].size() + flips["never_correct"].size() == 12);
    CHECK(alog.str().find("warning: frequencies missing") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(a.out / "frequency_bins.json"));
}

TEST_CASE("run_command maps errors to exit codes") {
    const Workspace ws("errors");
    std::ostringstream log;
    RunConfig c;
    CHECK(run_command("eval", c, log) == 2);
    CHECK(log.str().find("--model is required") != std::string::npos);
    c.model = ws.dir / "missing.ltc";
    CHECK(run_command("eval", c, log) == 2);
    c = ws.config("out");
    c.template_name = "nope";
    CHECK(run_command("eval", c, log) == 2);
    c = ws.config("out");
    std::ofstream(ws.dir / "broken.ltc") << "garbage";
    c.model = ws.dir / "broken.ltc";
    CHECK(run_command("eval", c, log) == 1);
    CHECK(run_command("frobnicate", ws.config("out"), log) == 2);
}
