#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hgn/checkpoint.hpp"
#include "hgn/cli.hpp"

using namespace hgn;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "hgn");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

// Shared workspace: hierarchy, 64-sample dataset and a one-epoch checkpoint.
struct Workspace {
    fs::path dir;
    std::string hier, data, ckpt, report;

    Workspace() {
        dir = fs::temp_directory_path() / "hgn_cli_test";
        fs::remove_all(dir);
        fs::create_directories(dir);
        hier = (dir / "hier").string();
        data = (dir / "data.jsonl").string();
        ckpt = (dir / "model.ckpt").string();
        report = (dir / "report.jsonl").string();
        REQUIRE(run({"coarsen", "--out", hier}).code == 0);
        REQUIRE(run({"gen-data", "--hierarchy", hier, "--out", data, "--set", "n_samples=64"}).code == 0);
        REQUIRE(run(train_args(ckpt, report)).code == 0);
    }

    std::vector<std::string> train_args(const std::string& c, const std::string& r) const {
        return {"train", "--hierarchy", hier, "--dataset", data, "--checkpoint", c, "--channels", "8",
                "--set", "epochs=1", "--set", "report=" + r};
    }
};

const Workspace& ws() {
    static const Workspace w;
    return w;
}

}  // namespace

TEST_CASE("coarsen lists selected levels and is reproducible") {
    const fs::path a = ws().dir / "coarsen_a";
    const Result r1 = run({"coarsen", "--out", a.string()});
    CHECK(r1.code == 0);
    CHECK(r1.out.find("target 96 -> level") != std::string::npos);
    CHECK(r1.out.find("target 48 -> level") != std::string::npos);
    const std::string h = slurp(a / "hierarchy.json"), s = slurp(a / "summary.json");
    const Result r2 = run({"coarsen", "--out", a.string()});
    CHECK(r1.out == r2.out);
    CHECK(slurp(a / "hierarchy.json") == h);
    CHECK(slurp(a / "summary.json") == s);
    CHECK(nlohmann::json::parse(s).contains("config"));
}

TEST_CASE("bad command lines exit 64") {
    CHECK(run({"coarsen", "--targets", "48,96", "--out", (ws().dir / "x").string()}).code == cli::kUsage);
    CHECK(run({"train", "--set", "no_such_key=1"}).code == cli::kUsage);
    CHECK(run({"train", "--bogus-flag"}).code == cli::kUsage);
    CHECK(run({"frobnicate"}).code == cli::kUsage);
    CHECK(run({}).code == cli::kUsage);
}

TEST_CASE("config file errors exit 2 with a line number") {
    const fs::path f = ws().dir / "bad.cfg";
    {
        std::ofstream os(f);
        os << "# comment\nchannels = 8\nthis line has no equals\n";
    }
    Result r = run({"param-count", "--config", f.string()});
    CHECK(r.code == cli::kParse);
    CHECK(r.err.find("3") != std::string::npos);
    {
        std::ofstream os(f);
        os << "channels = 8\nmystery = 1\n";
    }
    r = run({"param-count", "--config", f.string()});
    CHECK(r.code == cli::kParse);
    CHECK(r.err.find("mystery") != std::string::npos);
    {
        std::ofstream os(f);
        os << "channels = eight\n";
    }
    CHECK(run({"param-count", "--config", f.string()}).code == cli::kParse);
}

TEST_CASE("config precedence: defaults < file < flags") {
    cli::RunConfig c;
    CHECK(c.size("channels") == 128);
    std::istringstream file("channels = 64\nepochs = 3\n");
    c.merge(file);
    CHECK(c.size("channels") == 64);
    c.set("channels", "32");
    CHECK(c.size("channels") == 32);
    CHECK(c.size("epochs") == 3);
    CHECK(c.echo().at("channels") == "32");
    CHECK_THROWS_AS(c.set("nope", "1"), cli::UsageError);

    // the text form reads back to the same configuration
    cli::RunConfig d;
    std::istringstream back(c.text());
    d.merge(back);
    CHECK(d.echo() == c.echo());

    // flags override the file on the command line too
    const fs::path f = ws().dir / "prec.cfg";
    {
        std::ofstream os(f);
        os << "channels = 64\nvariants = baseline\n";
    }
    const Result r = run({"param-count", "--config", f.string(), "--channels", "16"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("16") != std::string::npos);
    CHECK(r.out.find("baseline") != std::string::npos);
    CHECK(r.out.find("no_top") == std::string::npos);
}

TEST_CASE("param-count prints counts with references") {
    const Result r = run({"param-count", "--hierarchy", ws().hier});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("1.04M") != std::string::npos);
    CHECK(r.out.find("0.43M") != std::string::npos);
    const Result r64 = run({"param-count", "--hierarchy", ws().hier, "--channels", "64", "--set", "variants=full"});
    REQUIRE(r64.code == 0);
    CHECK(r64.out.find("0.29M") != std::string::npos);
}

TEST_CASE("gen-data prints count and checksum, seed changes the checksum") {
    const fs::path a = ws().dir / "a.jsonl", b = ws().dir / "b.jsonl";
    const Result r1 = run({"gen-data", "--set", "n_samples=16", "--set", "n_mesh_vertices=0", "--out", a.string()});
    const Result r2 = run({"gen-data", "--set", "n_samples=16", "--set", "n_mesh_vertices=0", "--seed", "1",
                           "--out", b.string()});
    REQUIRE(r1.code == 0);
    REQUIRE(r2.code == 0);
    CHECK(r1.out.find("samples 16") != std::string::npos);
    CHECK(r1.out != r2.out);
    CHECK(load_dataset(a.string()).size() == 16);
    CHECK(load_dataset(a.string()).meta.contains("config"));
}

TEST_CASE("gen-data rejects a vertex-count mismatch with the hierarchy") {
    const Result r = run({"gen-data", "--hierarchy", ws().hier, "--set", "n_mesh_vertices=5000", "--set",
                          "n_samples=4", "--out", (ws().dir / "mismatch.jsonl").string()});
    CHECK(r.code == cli::kParse);
    CHECK_FALSE(r.err.empty());
}

TEST_CASE("train writes one report line per epoch after the config line") {
    std::istringstream lines(slurp(ws().report));
    std::string first, line;
    std::getline(lines, first);
    const auto head = nlohmann::json::parse(first);
    CHECK(head.at("config").at("channels") == "8");
    CHECK(head.at("param_count").get<std::size_t>() > 0);
    std::size_t epochs = 0;
    while (std::getline(lines, line)) ++epochs;
    CHECK(epochs == 1);
    const Checkpoint c = load_checkpoint(ws().ckpt);
    CHECK(c.run_config.at("channels") == "8");
    CHECK(c.optimizer.has_value());
}

TEST_CASE("train is byte-reproducible") {
    const std::string c = (ws().dir / "again.ckpt").string(), r = (ws().dir / "again.jsonl").string();
    REQUIRE(run(ws().train_args(c, r)).code == 0);
    const std::string first_c = slurp(c), first_r = slurp(r);
    REQUIRE(run(ws().train_args(c, r)).code == 0);
    CHECK(slurp(c) == first_c);
    CHECK(slurp(r) == first_r);
}

TEST_CASE("train reports non-finite loss with exit 4") {
    const Result r = run({"train", "--hierarchy", ws().hier, "--dataset", ws().data, "--checkpoint",
                          (ws().dir / "nan.ckpt").string(), "--channels", "8", "--set", "epochs=3", "--set",
                          "report=" + (ws().dir / "nan_report.jsonl").string(), "--set", "batch_size=8", "--set",
                          "lr=1e300", "--set", "max_norm=1e300"});
    CHECK(r.code == cli::kNumeric);
    CHECK(r.err.find("epoch") != std::string::npos);
}

TEST_CASE("eval writes reports with 17 per-joint rows") {
    const fs::path out = ws().dir / "eval";
    const Result r = run({"eval", "--checkpoint", ws().ckpt, "--dataset", ws().data, "--out", out.string()});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(slurp(out / "eval.json"));
    CHECK(j.contains("config"));
    CHECK(j.at("samples") == 64);
    std::istringstream csv(slurp(out / "per_joint.csv"));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        if (line.empty() || line[0] == '#') continue;
        ++rows;
    }
    CHECK(rows == 18);  // header plus 17 joints
    CHECK(slurp(out / "breakdown.svg").find("<svg") != std::string::npos);
    CHECK(slurp(out / "per_action.csv").rfind("# config", 0) == 0);
}

TEST_CASE("flip-averaged eval stays finite and close") {
    const fs::path a = ws().dir / "eval_plain", b = ws().dir / "eval_flip";
    REQUIRE(run({"eval", "--checkpoint", ws().ckpt, "--dataset", ws().data, "--out", a.string()}).code == 0);
    REQUIRE(run({"eval", "--checkpoint", ws().ckpt, "--dataset", ws().data, "--out", b.string(), "--flip-eval"})
                .code == 0);
    const auto ja = nlohmann::json::parse(slurp(a / "eval.json"));
    const auto jb = nlohmann::json::parse(slurp(b / "eval.json"));
    CHECK(std::isfinite(jb.at("mpjpe_mm").get<double>()));
    CHECK(jb.at("mpjpe_mm").get<double>() == doctest::Approx(ja.at("mpjpe_mm").get<double>()).epsilon(0.5));
}

TEST_CASE("eval on a dataset from another hierarchy exits 5") {
    const fs::path other = ws().dir / "other_hier";
    REQUIRE(run({"coarsen", "--out", other.string(), "--targets", "60,20"}).code == 0);
    const fs::path data = ws().dir / "other.jsonl";
    REQUIRE(run({"gen-data", "--hierarchy", other.string(), "--out", data.string(), "--set", "n_samples=4"}).code == 0);
    const Result r = run({"eval", "--checkpoint", ws().ckpt, "--dataset", data.string(), "--out",
                          (ws().dir / "eval_other").string()});
    CHECK(r.code == cli::kCompatibility);
}
