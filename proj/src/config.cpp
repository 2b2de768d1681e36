#include "omnixfer/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "omnixfer/latents.hpp"

namespace omnixfer::cli {

const char* mode_name(Mode mode) {
    switch (mode) {
        case Mode::Demo:
            return "demo";
        case Mode::Verify:
            return "verify";
        case Mode::Bench:
            return "bench";
        case Mode::Compose:
            return "compose";
        case Mode::GenFixtures:
            return "gen-fixtures";
    }
    return "?";
}

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where, std::vector<std::string>& errors) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (allowed.find(key) == allowed.end()) {
            errors.push_back("unknown key \"" + key + "\" in " + where);
        }
    }
}

template <typename V>
void read_field(const json& obj, const char* key, V& out, std::vector<std::string>& errors) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<V>();
    } catch (const json::exception&) {
        errors.push_back(std::string("key \"") + key + "\" has the wrong type");
    }
}

void parse_model(const json& obj, dit::DitConfig& model, std::vector<std::string>& errors) {
    reject_unknown_keys(obj,
                        {"layers", "model_dim", "heads", "ffn_dim", "latent_channels",
                         "time_embed_dim", "rope_base"},
                        "model", errors);
    read_field(obj, "layers", model.layers, errors);
    read_field(obj, "model_dim", model.model_dim, errors);
    read_field(obj, "heads", model.heads, errors);
    read_field(obj, "ffn_dim", model.ffn_dim, errors);
    read_field(obj, "latent_channels", model.latent_channels, errors);
    read_field(obj, "time_embed_dim", model.time_embed_dim, errors);
    read_field(obj, "rope_base", model.rope_base, errors);
}

void parse_file(const std::string& path, RunConfig& cfg, bool& seed_seen,
                std::vector<std::string>& errors) {
    std::ifstream in(path);
    if (!in) {
        errors.push_back("config file '" + path + "' cannot be opened");
        return;
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        errors.push_back("config file '" + path + "' is not valid JSON: " + e.what());
        return;
    }
    if (!doc.is_object()) {
        errors.push_back("config root must be a JSON object");
        return;
    }
    reject_unknown_keys(doc,
                        {"task", "tasks", "reference", "first_frame", "prompt", "seed", "steps",
                         "out", "precision", "ref_cross_attention", "target", "model", "bench"},
                        "config", errors);

    if (doc.contains("task") && doc.contains("tasks")) {
        errors.push_back("config may set either \"task\" or \"tasks\", not both");
    }
    if (doc.contains("task")) {
        std::string name;
        read_field(doc, "task", name, errors);
        if (!name.empty()) {
            try {
                cfg.tasks.push_back({task_from_name(name), ""});
            } catch (const std::invalid_argument& e) {
                errors.push_back(e.what());
            }
        }
    }
    if (doc.contains("tasks")) {
        if (!doc.at("tasks").is_array()) {
            errors.push_back("\"tasks\" must be an array");
        } else {
            for (const json& entry : doc.at("tasks")) {
                if (!entry.is_object()) {
                    errors.push_back("each tasks[] entry must be an object");
                    continue;
                }
                reject_unknown_keys(entry, {"kind", "reference"}, "tasks[]", errors);
                TaskEntry te;
                std::string name;
                read_field(entry, "kind", name, errors);
                read_field(entry, "reference", te.reference_fixture, errors);
                if (!name.empty()) {
                    try {
                        te.kind = task_from_name(name);
                        cfg.tasks.push_back(te);
                    } catch (const std::invalid_argument& e) {
                        errors.push_back(e.what());
                    }
                }
            }
        }
    }
    if (doc.contains("reference")) {
        std::string ref;
        read_field(doc, "reference", ref, errors);
        if (cfg.tasks.size() == 1 && cfg.tasks[0].reference_fixture.empty()) {
            cfg.tasks[0].reference_fixture = ref;
        } else if (cfg.tasks.empty()) {
            errors.push_back("\"reference\" given without \"task\"");
        }
    }
    read_field(doc, "first_frame", cfg.first_frame_fixture, errors);
    read_field(doc, "prompt", cfg.prompt_fixture, errors);
    if (doc.contains("seed")) {
        read_field(doc, "seed", cfg.seed, errors);
        seed_seen = true;
    }
    read_field(doc, "steps", cfg.steps, errors);
    read_field(doc, "out", cfg.out_dir, errors);
    read_field(doc, "precision", cfg.precision, errors);
    read_field(doc, "ref_cross_attention", cfg.model.ref_cross_attention, errors);
    if (doc.contains("target")) {
        const json& t = doc.at("target");
        reject_unknown_keys(t, {"frames", "height", "width"}, "target", errors);
        read_field(t, "frames", cfg.tgt_frames, errors);
        read_field(t, "height", cfg.tgt_height, errors);
        read_field(t, "width", cfg.tgt_width, errors);
    }
    if (doc.contains("model")) parse_model(doc.at("model"), cfg.model, errors);
    if (doc.contains("bench")) {
        const json& b = doc.at("bench");
        reject_unknown_keys(b, {"repeats", "steps", "threads"}, "bench", errors);
        read_field(b, "repeats", cfg.bench_repeats, errors);
        read_field(b, "steps", cfg.bench_steps, errors);
        read_field(b, "threads", cfg.bench_threads, errors);
    }
}

void check_fixture(const std::string& path, const char* label,
                   std::vector<std::string>& errors) {
    if (path.empty()) {
        errors.push_back(std::string(label) + " fixture path is required");
        return;
    }
    if (!std::filesystem::exists(path)) {
        errors.push_back(std::string(label) + " fixture '" + path + "' does not exist");
        return;
    }
    try {
        (void)read_latent<float>(path);
    } catch (const std::exception& e) {
        errors.push_back(std::string(label) + " fixture '" + path + "' does not parse: " +
                         e.what());
    }
}

}  // namespace

RunConfig parse_config(Mode mode, const CliOverrides& overrides) {
    RunConfig cfg;
    cfg.mode = mode;
    bool seed_seen = false;
    std::vector<std::string> errors;

    if (overrides.config_path) parse_file(*overrides.config_path, cfg, seed_seen, errors);

    if (overrides.task) {
        try {
            cfg.tasks.assign(1, TaskEntry{task_from_name(*overrides.task), ""});
        } catch (const std::invalid_argument& e) {
            errors.push_back(e.what());
        }
    }
    if (overrides.seed) {
        cfg.seed = *overrides.seed;
        seed_seen = true;
    }
    if (overrides.steps) cfg.steps = *overrides.steps;
    if (overrides.out) cfg.out_dir = *overrides.out;
    if (overrides.precision) cfg.precision = *overrides.precision;
    if (overrides.ref_cross_attention) cfg.model.ref_cross_attention = *overrides.ref_cross_attention;
    if (overrides.reference_fixture && !cfg.tasks.empty()) {
        cfg.tasks[0].reference_fixture = *overrides.reference_fixture;
    }
    if (overrides.first_frame_fixture) cfg.first_frame_fixture = *overrides.first_frame_fixture;
    if (overrides.prompt_fixture) cfg.prompt_fixture = *overrides.prompt_fixture;
    if (overrides.bench_threads) cfg.bench_threads = *overrides.bench_threads;
    if (overrides.fault_inject) cfg.fault_inject = *overrides.fault_inject;

    // Shared validation.
    if (!seed_seen && (mode == Mode::Demo || mode == Mode::Compose || mode == Mode::Bench ||
                       mode == Mode::GenFixtures)) {
        errors.push_back("seed is mandatory (wall-clock seeding is not supported)");
    }
    if (cfg.precision != "f32" && cfg.precision != "f64") {
        errors.push_back("precision must be f32 or f64, got \"" + cfg.precision + "\"");
    }
    if (cfg.steps < 1) errors.push_back("steps must be >= 1");
    if (cfg.tgt_frames < 1 || cfg.tgt_height < 1 || cfg.tgt_width < 1) {
        errors.push_back("target grid extents must be >= 1");
    }
    if (cfg.bench_repeats < 1) errors.push_back("bench.repeats must be >= 1");
    if (cfg.bench_threads < 1) errors.push_back("bench.threads must be >= 1");
    for (int s : cfg.bench_steps) {
        if (s < 1) errors.push_back("bench.steps entries must be >= 1");
    }
    if (!cfg.fault_inject.empty() && cfg.fault_inject != "kv-order") {
        errors.push_back("unknown fault-inject mode \"" + cfg.fault_inject + "\"");
    }
    try {
        cfg.model.seed = cfg.seed;
        cfg.model.validate();
    } catch (const std::invalid_argument& e) {
        errors.push_back(e.what());
    }

    // Per-mode validation.
    if (mode == Mode::Demo) {
        if (cfg.tasks.size() != 1) {
            errors.push_back("demo needs exactly one task (use compose for several)");
        } else {
            check_fixture(cfg.tasks[0].reference_fixture, "reference", errors);
            if (category_of(cfg.tasks[0].kind) == TaskCategory::Temporal) {
                check_fixture(cfg.first_frame_fixture, "first_frame", errors);
            }
        }
    }
    if (mode == Mode::Compose) {
        if (cfg.tasks.size() < 2) {
            errors.push_back("compose needs at least two distinct tasks (use demo for one)");
        }
        for (size_t i = 0; i < cfg.tasks.size(); ++i) {
            for (size_t j = i + 1; j < cfg.tasks.size(); ++j) {
                if (cfg.tasks[i].kind == cfg.tasks[j].kind) {
                    errors.push_back(std::string("duplicate task kind \"") +
                                     task_name(cfg.tasks[i].kind) + "\" in compose");
                }
            }
        }
        bool needs_first_frame = false;
        for (const TaskEntry& t : cfg.tasks) {
            check_fixture(t.reference_fixture,
                          (std::string("reference (") + task_name(t.kind) + ")").c_str(), errors);
            needs_first_frame = needs_first_frame || category_of(t.kind) == TaskCategory::Temporal;
        }
        if (needs_first_frame) check_fixture(cfg.first_frame_fixture, "first_frame", errors);
    }
    if (!cfg.prompt_fixture.empty()) check_fixture(cfg.prompt_fixture, "prompt", errors);

    if (!errors.empty()) {
        std::string msg = "invalid configuration:";
        for (const std::string& e : errors) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
    return cfg;
}

}  // namespace omnixfer::cli
