#include "omnixfer/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include <json.hpp>

#include "omnixfer/kernels.hpp"
#include "omnixfer/rng.hpp"

namespace omnixfer::bench {

FlopTotals flops(const CostModel& m) {
    if (m.n_ref < 0 || m.n_tgt <= 0 || m.d_model <= 0 || m.layers <= 0 || m.steps <= 0 ||
        m.ffn_dim <= 0) {
        throw std::invalid_argument("flops: counts must be positive (n_ref may be zero)");
    }
    const double c = 4.0 * static_cast<double>(m.d_model);
    const double p = 8.0 * static_cast<double>(m.d_model) * static_cast<double>(m.d_model) +
                     4.0 * static_cast<double>(m.d_model) * static_cast<double>(m.ffn_dim);
    const double L = static_cast<double>(m.layers);
    const double S = static_cast<double>(m.steps);
    const double nr = static_cast<double>(m.n_ref);
    const double nt = static_cast<double>(m.n_tgt);
    const double n_all = nr + nt;

    FlopTotals out;
    out.joint.attention = S * L * c * n_all * n_all;
    out.joint.token = S * L * p * n_all;
    // Target work every step; reference tokens processed once.
    out.decoupled.attention = S * L * c * nt * n_all + L * c * nr * nr;
    out.decoupled.token = S * L * p * nt + L * p * nr;
    out.attention_ratio = out.decoupled.attention / out.joint.attention;
    out.token_ratio = out.decoupled.token / out.joint.token;
    out.total_ratio = out.decoupled.total() / out.joint.total();
    return out;
}

std::string machine_fingerprint(int threads) {
    std::string s = "cxx=";
#ifdef __VERSION__
    s += __VERSION__;
#else
    s += "unknown";
#endif
#ifdef _OPENMP
    s += " openmp=" + std::to_string(_OPENMP);
#endif
    s += " threads=" + std::to_string(threads);
#ifdef __linux__
    s += " os=linux";
#endif
    return s;
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    if (n == 0) return 0.0;
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename T>
LatentBlock<T> synth_reference(const TimedConfig& cfg, const dit::DitConfig& model_cfg,
                               const TaskSpec& task) {
    Rng rng(cfg.seed + 1);
    const Tensor<T> ref = seeded_normal<T>(
        {cfg.ref_frames, cfg.ref_height, cfg.ref_width,
         static_cast<int64_t>(model_cfg.latent_channels)},
        rng);
    return build_reference_latent(ref, task);
}

template <typename T>
LatentBlock<T> synth_target_init(const TimedConfig& cfg, const dit::DitConfig& model_cfg) {
    Rng rng(cfg.seed + 2);
    const Tensor<T> cond = seeded_normal<T>(
        {int64_t{1}, cfg.tgt_height, cfg.tgt_width,
         static_cast<int64_t>(model_cfg.latent_channels)},
        rng);
    const Tensor<T> zeros({cfg.tgt_frames, cfg.tgt_height, cfg.tgt_width,
                           static_cast<int64_t>(model_cfg.latent_channels)});
    return build_target_latent(cond, zeros);
}

}  // namespace

template <typename T>
BenchReport timed_run(const TimedConfig& cfg) {
    if (cfg.repeats < 1) throw std::invalid_argument("timed_run: repeats must be >= 1");

    const int saved_threads = kernels::max_threads();
    kernels::set_max_threads(cfg.threads);

    BenchReport report;
    report.config = cfg;
    report.n_ref = cfg.ref_frames * cfg.ref_height * cfg.ref_width;
    report.n_tgt = cfg.tgt_frames * cfg.tgt_height * cfg.tgt_width;
    report.precision = sizeof(T) == 4 ? "f32" : "f64";
    report.machine = machine_fingerprint(cfg.threads);

    CostModel cost;
    cost.n_ref = report.n_ref;
    cost.n_tgt = report.n_tgt;
    cost.d_model = cfg.model.model_dim;
    cost.ffn_dim = cfg.model.ffn_dim;
    cost.layers = cfg.model.layers;
    cost.steps = cfg.steps;
    report.analytic = flops(cost);

    const dit::Model<T> model(cfg.model);
    const TaskSpec task = task_spec(cfg.task);
    const LatentBlock<T> l_ref = synth_reference<T>(cfg, cfg.model, task);
    const LatentBlock<T> l_tgt = synth_target_init<T>(cfg, cfg.model);

    const auto run_decoupled = [&] {
        const attn::RefCache<T> cache =
            model.build_ref_cache(l_ref, task, cfg.tgt_frames, cfg.tgt_width);
        Rng rng(cfg.seed);
        return model.sample(l_tgt, cache, cfg.steps, rng).latent;
    };
    const auto run_joint = [&] {
        Rng rng(cfg.seed);
        return model.sample_joint(l_tgt, l_ref, task, cfg.steps, rng).latent;
    };

    // Topology equivalence gates the timing: never benchmark computations
    // that do not produce the same output.
    const Tensor<T> out_decoupled = run_decoupled();
    const Tensor<T> out_joint = run_joint();
    report.equivalence_max_abs_diff = max_abs_diff(out_decoupled, out_joint);
    report.equivalence_ok = report.equivalence_max_abs_diff <= cfg.equivalence_tol;
    if (!report.equivalence_ok) {
        kernels::set_max_threads(saved_threads);
        throw std::runtime_error(
            "timed_run: topology outputs differ by " +
            std::to_string(report.equivalence_max_abs_diff) + " (tolerance " +
            std::to_string(cfg.equivalence_tol) + "); benchmark invalidated");
    }

    using clock = std::chrono::steady_clock;
    const auto time_one = [&](const auto& fn) {
        const auto start = clock::now();
        fn();
        return std::chrono::duration<double, std::milli>(clock::now() - start).count();
    };
    for (int i = 0; i < cfg.warmup; ++i) {
        run_decoupled();
        run_joint();
    }
    for (int i = 0; i < cfg.repeats; ++i) {
        report.decoupled_ms_runs.push_back(time_one(run_decoupled));
        report.joint_ms_runs.push_back(time_one(run_joint));
    }
    report.decoupled_ms = median(report.decoupled_ms_runs);
    report.joint_ms = median(report.joint_ms_runs);
    report.reduction = 1.0 - report.decoupled_ms / report.joint_ms;

    kernels::set_max_threads(saved_threads);
    return report;
}

namespace {

nlohmann::json report_json(const BenchReport& r) {
    nlohmann::json j;
    j["config"] = {{"layers", r.config.model.layers},
                   {"model_dim", r.config.model.model_dim},
                   {"heads", r.config.model.heads},
                   {"ffn_dim", r.config.model.ffn_dim},
                   {"task", task_name(r.config.task)},
                   {"steps", r.config.steps},
                   {"repeats", r.config.repeats},
                   {"warmup", r.config.warmup},
                   {"threads", r.config.threads},
                   {"seed", r.config.seed},
                   {"tgt_grid", {r.config.tgt_frames, r.config.tgt_height, r.config.tgt_width}},
                   {"ref_grid", {r.config.ref_frames, r.config.ref_height, r.config.ref_width}}};
    j["tokens"] = {{"n_ref", r.n_ref}, {"n_tgt", r.n_tgt}};
    j["analytic_flops"] = {
        {"joint", {{"attention", r.analytic.joint.attention}, {"token", r.analytic.joint.token}}},
        {"decoupled",
         {{"attention", r.analytic.decoupled.attention}, {"token", r.analytic.decoupled.token}}},
        {"attention_ratio", r.analytic.attention_ratio},
        {"token_ratio", r.analytic.token_ratio},
        {"total_ratio", r.analytic.total_ratio}};
    j["measured"] = {{"joint_ms", r.joint_ms},
                     {"decoupled_ms", r.decoupled_ms},
                     {"reduction", r.reduction},
                     {"joint_ms_runs", r.joint_ms_runs},
                     {"decoupled_ms_runs", r.decoupled_ms_runs}};
    j["equivalence"] = {{"max_abs_diff", r.equivalence_max_abs_diff},
                        {"tolerance", r.config.equivalence_tol},
                        {"ok", r.equivalence_ok}};
    j["machine"] = r.machine;
    j["precision"] = r.precision;
    return j;
}

}  // namespace

void emit_report(const std::vector<BenchReport>& reports, const std::string& json_path,
                 const std::string& csv_path) {
    nlohmann::json j = nlohmann::json::array();
    for (const BenchReport& r : reports) j.push_back(report_json(r));
    {
        std::ofstream out(json_path, std::ios::trunc);
        if (!out) throw std::runtime_error("emit_report: cannot open '" + json_path + "'");
        out << j.dump(2) << "\n";
        if (!out) throw std::runtime_error("emit_report: write failed for '" + json_path + "'");
    }
    {
        std::ofstream out(csv_path, std::ios::trunc);
        if (!out) throw std::runtime_error("emit_report: cannot open '" + csv_path + "'");
        out << "n_ref,n_tgt,steps,topology,analytic_flops,wall_ms\n";
        for (const BenchReport& r : reports) {
            out << r.n_ref << "," << r.n_tgt << "," << r.config.steps << ",joint,"
                << r.analytic.joint.total() << "," << r.joint_ms << "\n";
            out << r.n_ref << "," << r.n_tgt << "," << r.config.steps << ",decoupled,"
                << r.analytic.decoupled.total() << "," << r.decoupled_ms << "\n";
        }
        if (!out) throw std::runtime_error("emit_report: write failed for '" + csv_path + "'");
    }
}

template BenchReport timed_run<float>(const TimedConfig&);
template BenchReport timed_run<double>(const TimedConfig&);

}  // namespace omnixfer::bench
