#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "kvsim/runner.hpp"
#include "kvsim/synthetic_model.hpp"
#include "kvsim/trace_io.hpp"

using namespace kvsim;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.model = ModelShape{2, 4, 2, 8, 2};
    cfg.workload.d_model = 32;
    cfg.workload.n_prompt = 32;
    cfg.workload.steps = 4;
    cfg.workload.sequences = 1;
    cfg.workload.sigma = {0.02};
    cfg.attention.sink_tokens = 2;
    cfg.attention.recent_tokens = 8;
    cfg.attention.topk_ratio = {0.1};
    cfg.policies = {"similarity", "lru"};
    cfg.profiling.sequences = 1;
    cfg.profiling.steps = 4;
    cfg.profiling.blend_sequences = 1;
    cfg.profiling.blend_steps = 2;
    cfg.profiling.n_prompt = 32;
    return cfg;
}

fs::path fresh_base(const char* name) {
    fs::path base = fs::temp_directory_path() / "kvsim_runner_test" / name;
    fs::remove_all(base);
    fs::create_directories(base);
    return base;
}

}  // namespace

TEST_CASE("cells come back in canonical grid order") {
    RunConfig cfg = tiny_config();
    cfg.workload.sigma = {0.02, 0.05};
    cfg.workload.seeds = {1, 2};
    RunOutput out = run_experiment(cfg);

    REQUIRE(out.cells.size() == 8);  // 2 policies x 2 sigmas x 1 ratio x 2 seeds
    // Policy-major, then sigma, then ratio, then seed.
    CHECK(out.cells[0].policy == "similarity");
    CHECK(out.cells[0].sigma == 0.02);
    CHECK(out.cells[0].seed == 1);
    CHECK(out.cells[1].seed == 2);
    CHECK(out.cells[2].sigma == 0.05);
    CHECK(out.cells[4].policy == "lru");
    CHECK(out.cells[7].sigma == 0.05);
    CHECK(out.cells[7].seed == 2);
    for (const CellResult& c : out.cells) {
        CHECK(c.k == 4);  // ceil(0.1 * 32)
        CHECK(c.steps == 4);
        CHECK(c.lookups == c.hits + c.misses);
        CHECK(c.timeline.steps == 4);
    }
    REQUIRE(out.plans.size() == 1);
    CHECK(out.plans[0].layers.size() == 2);
}

TEST_CASE("worker count never changes results") {
    RunConfig cfg = tiny_config();
    cfg.workload.sequences = 2;
    cfg.workload.seeds = {1, 2};
    cfg.run.workers = 1;
    RunOutput serial = run_experiment(cfg);
    cfg.run.workers = 3;
    RunOutput threaded = run_experiment(cfg);

    REQUIRE(serial.cells.size() == threaded.cells.size());
    for (size_t i = 0; i < serial.cells.size(); ++i) {
        const CellResult& a = serial.cells[i];
        const CellResult& b = threaded.cells[i];
        CHECK(a.policy == b.policy);
        CHECK(a.hits == b.hits);
        CHECK(a.misses == b.misses);
        CHECK(a.transferred_bytes == b.transferred_bytes);
        CHECK(a.timeline.totals.total_s == b.timeline.totals.total_s);
        CHECK(a.cache_state == b.cache_state);
    }
}

TEST_CASE("reports list exactly their manifest files") {
    RunConfig cfg = tiny_config();
    fs::path base = fresh_base("manifest");
    cfg.run.out_dir = base.string();
    cfg.run.label = "cell_reports";
    RunOutput out = run_experiment(cfg);
    fs::path dir = write_reports(cfg, out);
    CHECK(dir == base / "cell_reports");

    std::ifstream in(dir / "manifest.json");
    REQUIRE(in.good());
    nlohmann::json manifest = nlohmann::json::parse(in);
    CHECK(manifest["tool"] == "kvsim");

    std::set<std::string> listed;
    for (const auto& f : manifest["files"]) listed.insert(f.get<std::string>());
    std::set<std::string> present;
    for (const auto& e : fs::directory_iterator(dir)) present.insert(e.path().filename().string());

    std::set<std::string> expected = listed;
    expected.insert("manifest.json");
    CHECK(present == expected);
    CHECK(listed.count("config.json") == 1);
    CHECK(listed.count("profiles.json") == 1);
    CHECK(listed.count("plan_r0.1.json") == 1);
    CHECK(listed.count("results.json") == 1);
    CHECK(listed.count("results.csv") == 1);
    // One cache dump per similarity cell, none for the block baseline.
    int dumps = 0, breakdowns = 0;
    for (const std::string& f : listed) {
        if (f.rfind("cache_state_", 0) == 0) ++dumps;
        if (f.rfind("breakdown_", 0) == 0) ++breakdowns;
    }
    CHECK(dumps == 1);
    CHECK(breakdowns == 4);  // json + csv for each of the two cells

    // The recorded config normalizes the worker count: scheduling detail, not
    // an input to the results.
    std::ifstream cfg_in(dir / "config.json");
    nlohmann::json recorded = nlohmann::json::parse(cfg_in);
    CHECK(recorded["run"]["workers"] == 1);
}

TEST_CASE("rerunning a label appends a suffixed directory") {
    RunConfig cfg = tiny_config();
    fs::path base = fresh_base("append");
    cfg.run.out_dir = base.string();
    cfg.run.label = "exp";
    RunOutput out = run_experiment(cfg);

    fs::path first = write_reports(cfg, out);
    fs::path second = write_reports(cfg, out);
    CHECK(first == base / "exp");
    CHECK(second == base / "exp_2");
    CHECK(fs::exists(first / "results.json"));
    CHECK(fs::exists(second / "results.json"));

    // Identical inputs produce byte-identical reports in both directories.
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(first / "results.json") == slurp(second / "results.json"));
    CHECK(slurp(first / "config.json") == slurp(second / "config.json"));
}

TEST_CASE("results table renders one row per cell") {
    RunConfig cfg = tiny_config();
    fs::path base = fresh_base("table");
    cfg.run.out_dir = base.string();
    RunOutput out = run_experiment(cfg);
    fs::path dir = write_reports(cfg, out);

    std::ifstream in(dir / "results.json", std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    std::string table = render_results_table(text);
    CHECK(table.find("policy") != std::string::npos);
    CHECK(table.find("similarity") != std::string::npos);
    CHECK(table.find("lru") != std::string::npos);
    CHECK(std::count(table.begin(), table.end(), '\n') == 3);  // header + 2 cells

    CHECK_THROWS_AS(render_results_table("nonsense"), IoError);
    CHECK_THROWS_AS(render_results_table("{}"), IoError);
}

TEST_CASE("trace replay pins the workload axes") {
    RunConfig cfg = tiny_config();
    cfg.policies = {"similarity"};

    SyntheticConfig sc;
    sc.shape = cfg.model;
    sc.d_model = 32;
    sc.n_prompt = 24;
    sc.steps = 3;
    sc.seed = 5;
    SyntheticModel model(sc);
    fs::path base = fresh_base("trace");
    fs::path trace_path = base / "workload.trace";
    write_trace(trace_path.string(), record_trace(model, 8));

    cfg.workload.trace_path = trace_path.string();
    RunOutput out = run_experiment(cfg);
    REQUIRE(out.cells.size() == 1);
    // Prompt length, steps and sequence count come from the trace.
    CHECK(out.cells[0].steps == 3);
    CHECK(out.cells[0].sequences == 1);
    CHECK(out.cells[0].k == 3);  // ceil(0.1 * 24)

    cfg.workload.sigma = {0.01, 0.02};
    CHECK_THROWS_AS(run_experiment(cfg), ConfigError);

    // A trace whose shape disagrees with the model is rejected.
    cfg.workload.sigma = {0.02};
    cfg.model.num_layers = 3;
    cfg.profiling.sequences = 1;
    CHECK_THROWS_AS(run_experiment(cfg), ConfigError);
}

TEST_CASE("output directory resolution prefers config, then environment") {
    RunConfig cfg = tiny_config();
    fs::path base = fresh_base("resolve");

    cfg.run.out_dir = (base / "explicit").string();
    cfg.run.label = "a";
    CHECK(resolve_run_dir(cfg) == base / "explicit" / "a");

    setenv("KVSIM_OUT_DIR", (base / "from_env").string().c_str(), 1);
    cfg.run.out_dir.clear();
    CHECK(resolve_run_dir(cfg) == base / "from_env" / "a");
    // An explicit directory still wins over the environment.
    cfg.run.out_dir = (base / "explicit").string();
    CHECK(resolve_run_dir(cfg) == base / "explicit" / "a");
    unsetenv("KVSIM_OUT_DIR");
}
