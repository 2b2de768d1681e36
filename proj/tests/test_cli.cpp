#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "omnixfer/config.hpp"
#include "omnixfer/latents.hpp"
#include "omnixfer/pipeline.hpp"

using namespace omnixfer;
using cli::CliOverrides;
using cli::ConfigError;
using cli::Mode;
using nlohmann::json;

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "omnixfer_cli_test";

int run_cmd(const std::string& args) {
    const std::string cmd = std::string(OMNIXFER_BIN) + " " + args;
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const fs::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::trunc);
    out << body;
}

struct Workspace {
    Workspace() {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
        REQUIRE(run_cmd("gen-fixtures --seed 7 --out " + (kWork / "fx").string() +
                        " > /dev/null 2>&1") == 0);
    }
    std::string fx(const char* name) const { return (kWork / "fx" / name).string(); }
};

}  // namespace

TEST_CASE("parse_config: minimal file gets defaults filled") {
    fs::create_directories(kWork);
    const fs::path cfg_path = kWork / "minimal.json";
    write_file(cfg_path, R"({"task": "motion", "seed": 7})");
    CliOverrides o;
    o.config_path = cfg_path.string();
    const cli::RunConfig cfg = cli::parse_config(Mode::Verify, o);
    CHECK(cfg.tasks.size() == 1);
    CHECK(cfg.tasks[0].kind == TaskKind::Motion);
    CHECK(cfg.seed == 7);
    CHECK(cfg.steps == 8);
    CHECK(cfg.precision == "f32");
    CHECK(cfg.model.model_dim == 128);
    CHECK(cfg.model.layers == 4);
}

TEST_CASE("parse_config: unknown keys are rejected by name") {
    fs::create_directories(kWork);
    const fs::path cfg_path = kWork / "unknown.json";
    write_file(cfg_path, R"({"task": "motion", "seed": 7, "foo": 1})");
    CliOverrides o;
    o.config_path = cfg_path.string();
    CHECK_THROWS_WITH_AS(cli::parse_config(Mode::Verify, o), doctest::Contains("foo"),
                         ConfigError);
}

TEST_CASE("parse_config: flags beat file values") {
    fs::create_directories(kWork);
    const fs::path cfg_path = kWork / "steps.json";
    write_file(cfg_path, R"({"task": "motion", "seed": 7, "steps": 4})");
    CliOverrides o;
    o.config_path = cfg_path.string();
    o.steps = 2;
    const cli::RunConfig cfg = cli::parse_config(Mode::Verify, o);
    CHECK(cfg.steps == 2);
}

TEST_CASE("parse_config: seed is mandatory for runs") {
    CliOverrides o;
    o.task = "motion";
    CHECK_THROWS_WITH_AS(cli::parse_config(Mode::Bench, o), doctest::Contains("seed"),
                         ConfigError);
}

TEST_CASE("parse_config: missing fixtures are itemized") {
    CliOverrides o;
    o.task = "motion";
    o.seed = 1;
    o.reference_fixture = "/nonexistent/ref.lat";
    o.first_frame_fixture = "/nonexistent/ff.lat";
    try {
        (void)cli::parse_config(Mode::Demo, o);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("/nonexistent/ref.lat") != std::string::npos);
        CHECK(msg.find("/nonexistent/ff.lat") != std::string::npos);
    }
}

TEST_CASE("cli end-to-end") {
    const Workspace ws;

    SUBCASE("demo runs, manifest records bias, flags and counters") {
        const std::string out = (kWork / "demo_camera").string();
        REQUIRE(run_cmd("demo --task camera --seed 11 --steps 5 --reference " + ws.fx("ref_a.lat") +
                        " --first-frame " + ws.fx("first_frame.lat") + " --out " + out +
                        " > /dev/null 2>&1") == 0);
        const json manifest = json::parse(slurp(out + "/manifest.json"));
        CHECK(manifest["task"]["mask_flag"].get<double>() == -1.0);
        const auto bias = manifest["bias"].get<std::vector<int64_t>>();
        CHECK(bias[0] == 0);
        CHECK(bias[1] == 8);  // 64px first frame at spatial factor 8
        CHECK(bias[2] == 0);
        CHECK(manifest["counters"]["reference_forwards"].get<int>() == 1);
        CHECK(manifest["counters"]["target_forwards"].get<int>() == 5);
        CHECK(fs::exists(out + "/output.lat"));
        CHECK(fs::exists(out + "/meta.json"));
    }

    SUBCASE("appearance demo records its flag and frame bias") {
        const std::string out = (kWork / "demo_style").string();
        REQUIRE(run_cmd("demo --task style --seed 11 --steps 3 --reference " + ws.fx("ref_a.lat") +
                        " --out " + out + " > /dev/null 2>&1") == 0);
        const json manifest = json::parse(slurp(out + "/manifest.json"));
        CHECK(manifest["task"]["mask_flag"].get<double>() == -3.0);
        const auto bias = manifest["bias"].get<std::vector<int64_t>>();
        CHECK(bias[0] == 2);  // default target frames
        CHECK(bias[1] == 0);
    }

    SUBCASE("identical configs give byte-identical manifests") {
        const std::string cfg = ws.fx("demo.json");
        REQUIRE(run_cmd("demo --config " + cfg + " > /dev/null 2>&1") == 0);
        const std::string manifest_path = (kWork / "fx" / "demo_run" / "manifest.json").string();
        const std::string first = slurp(manifest_path);
        REQUIRE(run_cmd("demo --config " + cfg + " > /dev/null 2>&1") == 0);
        CHECK(first == slurp(manifest_path));
    }

    SUBCASE("verify passes and writes a stable report") {
        const std::string out = (kWork / "verify").string();
        REQUIRE(run_cmd("verify --out " + out + " > /dev/null 2>&1") == 0);
        const json report = json::parse(slurp(out + "/verify_report.json"));
        CHECK(report["all_pass"].get<bool>());
        bool saw_decoupling = false;
        for (const json& inv : report["invariants"]) {
            CHECK(inv["pass"].get<bool>());
            if (inv["id"] == "decoupling_equivalence") saw_decoupling = true;
        }
        CHECK(saw_decoupling);
    }

    SUBCASE("fault injection makes the decoupling check fail") {
        const std::string out = (kWork / "verify_fault").string();
        CHECK(run_cmd("verify --fault-inject kv-order --out " + out + " > /dev/null 2>&1") == 1);
        const json report = json::parse(slurp(out + "/verify_report.json"));
        CHECK_FALSE(report["all_pass"].get<bool>());
        for (const json& inv : report["invariants"]) {
            if (inv["id"] == "decoupling_equivalence") CHECK_FALSE(inv["pass"].get<bool>());
        }
    }

    SUBCASE("compose runs and records per-task biases and combined sizes") {
        const std::string cfg = ws.fx("compose.json");
        REQUIRE(run_cmd("compose --config " + cfg + " --steps 3 > /dev/null 2>&1") == 0);
        const json manifest =
            json::parse(slurp((kWork / "fx" / "compose_run" / "manifest.json").string()));
        REQUIRE(manifest["parts"].size() == 2);
        CHECK(manifest["parts"][0]["kind"] == "camera");
        CHECK(manifest["parts"][1]["kind"] == "id");
        const auto b0 = manifest["parts"][0]["bias"].get<std::vector<int64_t>>();
        const auto b1 = manifest["parts"][1]["bias"].get<std::vector<int64_t>>();
        CHECK(b0[1] > 0);  // temporal: width offset
        CHECK(b1[0] > 0);  // appearance: frame offset
        const int64_t combined = manifest["combined"]["ref_kv_tokens"].get<int64_t>();
        CHECK(combined == manifest["parts"][0]["ref_tokens"].get<int64_t>() +
                              manifest["parts"][1]["ref_tokens"].get<int64_t>());
    }

    SUBCASE("compose output is invariant under task order") {
        const auto write_compose = [&](const fs::path& path, bool swapped, const char* out) {
            const std::string first = swapped ? "id" : "camera";
            const std::string second = swapped ? "camera" : "id";
            const std::string ref_first = swapped ? ws.fx("ref_b.lat") : ws.fx("ref_a.lat");
            const std::string ref_second = swapped ? ws.fx("ref_a.lat") : ws.fx("ref_b.lat");
            write_file(path, std::string("{\"tasks\": [{\"kind\": \"") + first +
                                 "\", \"reference\": \"" + ref_first +
                                 "\"}, {\"kind\": \"" + second + "\", \"reference\": \"" +
                                 ref_second + "\"}], \"first_frame\": \"" +
                                 ws.fx("first_frame.lat") + "\", \"seed\": 9, \"steps\": 2, " +
                                 "\"out\": \"" + (kWork / out).string() + "\"}");
        };
        write_compose(kWork / "compose_ab.json", false, "compose_ab");
        write_compose(kWork / "compose_ba.json", true, "compose_ba");
        REQUIRE(run_cmd("compose --config " + (kWork / "compose_ab.json").string() +
                        " > /dev/null 2>&1") == 0);
        REQUIRE(run_cmd("compose --config " + (kWork / "compose_ba.json").string() +
                        " > /dev/null 2>&1") == 0);
        const LatentBlock<float> ab = read_latent<float>((kWork / "compose_ab" / "output.lat").string());
        const LatentBlock<float> ba = read_latent<float>((kWork / "compose_ba" / "output.lat").string());
        double magnitude = 1.0;
        for (int64_t i = 0; i < ab.data.numel(); ++i) {
            magnitude = std::max(magnitude, std::abs(static_cast<double>(ab.data[i])));
        }
        CHECK(max_abs_diff(ab.data, ba.data) < 1e-6 * magnitude);
    }

    SUBCASE("compose with a single task is a config error") {
        const fs::path cfg_path = kWork / "compose_one.json";
        write_file(cfg_path, std::string(R"({"tasks": [{"kind": "camera", "reference": ")") +
                                 ws.fx("ref_a.lat") + R"("}], "seed": 3})");
        CHECK(run_cmd("compose --config " + cfg_path.string() + " > /dev/null 2>&1") == 2);
    }

    SUBCASE("unknown config keys exit with the config-error code") {
        const fs::path cfg_path = kWork / "bad.json";
        write_file(cfg_path, R"({"task": "motion", "seed": 7, "typo_key": true})");
        const std::string err_file = (kWork / "bad.err").string();
        CHECK(run_cmd("demo --config " + cfg_path.string() + " 2> " + err_file +
                      " > /dev/null") == 2);
        CHECK(slurp(err_file).find("typo_key") != std::string::npos);
    }

    SUBCASE("bench writes deterministic manifest plus measured sidecars") {
        const fs::path cfg_path = kWork / "bench.json";
        write_file(cfg_path, R"({
            "seed": 7,
            "out": ")" + (kWork / "bench_out").string() + R"(",
            "target": {"frames": 1, "height": 2, "width": 4},
            "model": {"layers": 1, "model_dim": 32, "heads": 2, "ffn_dim": 64,
                      "latent_channels": 8, "time_embed_dim": 32},
            "bench": {"repeats": 1, "steps": [1, 2], "threads": 1}
        })");
        REQUIRE(run_cmd("bench --config " + cfg_path.string() + " > /dev/null 2>&1") == 0);
        const std::string manifest = slurp(kWork / "bench_out" / "manifest.json");
        CHECK(fs::exists(kWork / "bench_out" / "report.json"));
        CHECK(fs::exists(kWork / "bench_out" / "sweep.csv"));
        REQUIRE(run_cmd("bench --config " + cfg_path.string() + " > /dev/null 2>&1") == 0);
        CHECK(manifest == slurp(kWork / "bench_out" / "manifest.json"));
        // Wall-clock lives in the report, never in the manifest.
        CHECK(manifest.find("wall") == std::string::npos);
        const json report = json::parse(slurp(kWork / "bench_out" / "report.json"));
        CHECK(report.size() == 2);
        CHECK(report[0]["equivalence"]["ok"].get<bool>());
    }

    SUBCASE("OMNIXFER_THREADS caps the substrate thread count") {
        const std::string out_file = (kWork / "threads.out").string();
        const std::string cmd = std::string("OMNIXFER_THREADS=1 ") + OMNIXFER_KERNEL_BENCH +
                                " 48 1 > " + out_file + " 2>&1";
        REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
        CHECK(slurp(out_file).find("threads=1") != std::string::npos);
    }

    SUBCASE("precision flag switches the run to f64") {
        const std::string out = (kWork / "demo_f64").string();
        REQUIRE(run_cmd("demo --task motion --seed 5 --steps 2 --precision f64 --reference " +
                        ws.fx("ref_b.lat") + " --first-frame " + ws.fx("first_frame.lat") +
                        " --out " + out + " > /dev/null 2>&1") == 0);
        const json manifest = json::parse(slurp(out + "/manifest.json"));
        CHECK(manifest["config"]["precision"] == "f64");
    }
}
