#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bexg/pipeline.hpp"

using namespace bexg;
using bexg::io::Config;

namespace fs = std::filesystem;

namespace {

Config parse(const std::string& text) {
    std::istringstream in(text);
    return Config::parse(in);
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("bexg_pipeline_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

io::Json load_json(const fs::path& p) { return io::Json::parse(slurp(p)); }

}  // namespace

TEST(Config, SectionsQuotesAndComments) {
    const auto c = parse("# header\nseed = 7\nname = \"a # b\"\n[grid]\ncell = 0.3  # trailing\n\n");
    EXPECT_EQ(c.str("seed"), "7");
    EXPECT_EQ(c.str("name"), "a # b");
    EXPECT_EQ(c.str("grid.cell"), "0.3");
    EXPECT_EQ(c.integer("seed", 0), 7);
    EXPECT_DOUBLE_EQ(c.real("grid.cell", 0), 0.3);
    EXPECT_EQ(c.real("missing", 2.5), 2.5);
}

TEST(Config, MalformedLinesReportLineNumber) {
    try {
        parse("a = 1\nnot a pair\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW(parse("[open\n"), ParseError);
    EXPECT_THROW(parse(" = 3\n"), ParseError);
}

TEST(Config, TypedAccessorsRejectJunk) {
    const auto c = parse("n = 12x\nu = -3\nr = 1.5e\n");
    EXPECT_THROW(c.integer("n", 0), io::UsageError);
    EXPECT_THROW(c.u64("u", 0), io::UsageError);
    EXPECT_THROW(c.real("r", 0), io::UsageError);
}

TEST(Config, HashIgnoresOutputAndJobs) {
    auto a = parse("seed = 1\nsteps = 10\n");
    auto b = a;
    b.set("out", "/tmp/elsewhere");
    b.set("jobs", "4");
    EXPECT_EQ(a.hash("rps"), b.hash("rps"));
    EXPECT_NE(a.hash("rps"), a.hash("simulate"));
    b.set("steps", "11");
    EXPECT_NE(a.hash("rps"), b.hash("rps"));
}

TEST(Fmt, RoundTripsDoubles) {
    for (double v : {0.1, 1.0 / 3, 6.02214076e23, -2.5e-300, 1.6180339887498949}) EXPECT_EQ(std::stod(io::fmt(v)), v);
    EXPECT_EQ(io::fmt(0.5), "0.5");
    EXPECT_EQ(io::fmt(std::nan("")), "nan");
}

TEST(Pipeline, KernelsWritesExactTables) {
    const auto dir = scratch("kernels");
    auto cfg = parse("m_max = 4\n");
    ASSERT_EQ(pipeline::run("kernels", cfg, dir), 0);
    const auto ids = load_json(dir / "identities.json");
    ASSERT_EQ(ids["identities"].size(), 5u);
    for (std::size_t m = 0; m < 5; ++m) EXPECT_EQ(ids["identities"][m]["m"], m);
    const auto csv = slurp(dir / "kernels.csv");
    EXPECT_EQ(csv.rfind("# bexg kernels format_version=1 config_hash=", 0), 0u);
    EXPECT_NE(csv.find("20,895014631192902121,2432902008176640000"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "manifest.json"));
    EXPECT_FALSE(fs::exists(dir / "errors.json"));
}

TEST(Pipeline, SimulateEvcfRatio) {
    const auto dir = scratch("simulate");
    ASSERT_EQ(pipeline::run("simulate", parse("regime = evcf\nsteps = 60\n"), dir), 0);
    const auto rates = load_json(dir / "rates.json");
    EXPECT_NEAR(rates["ratio"].get<double>(), std::numbers::phi / 2, 0.005);
    EXPECT_EQ(rates["config_hash"], io::hex64(parse("regime = evcf\nsteps = 60\n").hash("simulate")));
    EXPECT_TRUE(fs::exists(dir / "hyperbolic.csv"));
}

TEST(Pipeline, SimulateCfRateIsTwo) {
    const auto dir = scratch("simulate_cf");
    ASSERT_EQ(pipeline::run("simulate", parse("regime = cf\nsteps = 20\n"), dir), 0);
    const auto rates = load_json(dir / "rates.json");
    EXPECT_EQ(rates["rate_n_a"].get<double>(), 2.0);
    EXPECT_EQ(rates["rate_n_abar"].get<double>(), 2.0);
}

TEST(Pipeline, UsageErrors) {
    const auto dir = scratch("usage");
    EXPECT_THROW(pipeline::run("simulate", parse("regime = fast\n"), dir), io::UsageError);
    EXPECT_THROW(pipeline::run("simulate", parse("speed = 3\n"), dir), io::UsageError);
    EXPECT_THROW(pipeline::run("nope", parse(""), dir), io::UsageError);
    for (const char* cmd : {"rps", "generate", "spatial"}) EXPECT_THROW(pipeline::run(cmd, parse(""), dir), io::UsageError) << cmd;
    EXPECT_THROW(pipeline::run("generate", parse("seed = 1\nsquares = 6:7:0.6\n"), dir), io::UsageError);
    EXPECT_THROW(pipeline::run("fit", parse("model = catenary\n"), dir), io::UsageError);
    EXPECT_THROW(pipeline::run("spatial", parse("seed = 1\nfit_starts = 0\n"), dir), io::UsageError);
}

TEST(Pipeline, MalformedFitInputIsParseError) {
    const auto dir = scratch("fit_bad");
    fs::create_directories(dir);
    std::ofstream(dir / "in.csv") << "x,y\n1,2\n2,oops\n";
    auto cfg = parse("model = catenary\n");
    cfg.set("input", (dir / "in.csv").string());
    try {
        pipeline::run("fit", cfg, dir / "out");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(Pipeline, FitCatenaryFromCsv) {
    const auto dir = scratch("fit");
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "in.csv");
        f << "x,y\n";
        for (int i = 0; i <= 20; ++i) {
            const double x = -2.0 + 0.2 * i;
            f << io::fmt(x) << "," << io::fmt(1.5 * std::cosh(x / 1.5)) << "\n";
        }
    }
    auto cfg = parse("model = catenary\n");
    cfg.set("input", (dir / "in.csv").string());
    ASSERT_EQ(pipeline::run("fit", cfg, dir / "out"), 0);
    const auto fit = load_json(dir / "out" / "fit.json");
    EXPECT_NEAR(fit["h"].get<double>(), 1.5, 1e-6);
    EXPECT_TRUE(fs::exists(dir / "out" / "fit.csv"));
}

TEST(Pipeline, SpectrumOfSine) {
    const auto dir = scratch("spectrum");
    ASSERT_EQ(pipeline::run("spectrum", parse("series = sine\nperiod = 8\nsamples = 64\n"), dir), 0);
    const auto s = load_json(dir / "spectrum.json");
    EXPECT_NEAR(s["peak_frequency"].get<double>(), 0.125, 1e-12);
    EXPECT_NEAR(s["total_power"].get<double>(), s["variance"].get<double>(), 1e-12);
}

TEST(Pipeline, GenerateWritesTruth) {
    const auto dir = scratch("generate");
    ASSERT_EQ(pipeline::run("generate", parse("seed = 4\nsquares = 6:6:0.6\n"), dir), 0);
    const auto truth = load_json(dir / "truth.json");
    ASSERT_EQ(truth["squares"].size(), 1u);
    EXPECT_NEAR(truth["squares"][0]["s_sq"].get<double>(), 0.6, 1e-9);
    EXPECT_EQ(truth["squares"][0]["factors"].size(), 6u);
    const auto units = slurp(dir / "units.csv");
    EXPECT_EQ(std::count(units.begin(), units.end(), '\n'), 2 + 225 * 294);
}

TEST(Pipeline, SpatialPlantedSquare) {
    const auto dir = scratch("spatial");
    ASSERT_EQ(pipeline::run("spatial", parse("seed = 2\nsquares = 6:6:0.6\n"), dir), 0);
    const auto det = load_json(dir / "detection_0.json");
    EXPECT_NEAR(det["s_sq"].get<double>(), 0.6, 0.1 + 1e-9);
    EXPECT_EQ(det["omega_hat"], 6);
    const auto acf = slurp(dir / "acf_0.csv");
    EXPECT_NE(acf.find(",0.1,1\n"), std::string::npos);
    for (const char* f : {"spatial_0.json", "ranks_0.csv", "spatial_summary.csv"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
}

TEST(Pipeline, SpatialHomogeneousPrefersZipf) {
    const auto dir = scratch("spatial_homog");
    const auto rc = pipeline::run("spatial", parse("seed = 5\nsquares = 6:1:0.6\nnoise = 0.05\n"), dir);
    EXPECT_EQ(rc, 0);
    const auto s = load_json(dir / "spatial_0.json");
    ASSERT_FALSE(s["model_comparison"].is_null());
    EXPECT_EQ(s["model_comparison"]["bic"]["preferred"], "zipf");
}

TEST(Pipeline, SpatialYearsWriteAccuracy) {
    const auto dir = scratch("spatial_years");
    ASSERT_EQ(pipeline::run("spatial", parse("seed = 3\nyears = 2\nlevels = 5\n"), dir), 0);
    const auto acc = slurp(dir / "accuracy_0.csv");
    EXPECT_NE(acc.find("\n2020,"), std::string::npos);
}

TEST(Pipeline, SpatialInputNeedsReferenceLocation) {
    const auto dir = scratch("spatial_input");
    fs::create_directories(dir);
    std::ofstream(dir / "units.csv") << "unit_id,lat,lon,factor\n1,40,-100,a\n2,40.1,-100,b\n3,95,0,c\n";
    auto cfg = parse("seed = 1\n");
    cfg.set("input", (dir / "units.csv").string());
    EXPECT_THROW(pipeline::run("spatial", cfg, dir / "a"), io::UsageError);
    cfg.set("x0", "40:-100");
    cfg.set("levels", "3");
    cfg.set("m", "2");
    const int rc = pipeline::run("spatial", cfg, dir / "b");
    EXPECT_EQ(rc, 3);  // the out-of-range row is reported
    const auto errs = load_json(dir / "b" / "errors.json");
    EXPECT_EQ(errs["errors"][0]["stage"], "ingest");
}
