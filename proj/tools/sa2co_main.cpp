#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "sa2co/csv.hpp"
#include "sa2co/harness.hpp"

using namespace sa2co;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string checkpoint;
    std::string backend;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int episodes = 0;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_episodes = true) {
    cmd->add_option("--config", flags.config_path, "key = value run configuration file");
    cmd->add_option("--out", flags.out_dir, "output directory");
    cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint path");
    cmd->add_option("--backend", flags.backend, "fallback backend: conic or search")
        ->check(CLI::IsMember({"conic", "search"}));
    cmd->add_option_function<std::uint64_t>(
           "--seed", [&flags](const std::uint64_t& v) {
               flags.seed = v;
               flags.seed_set = true;
           },
           "run seed");
    if (with_episodes) cmd->add_option("--episodes", flags.episodes, "episode count");
}

RunConfig make_config(const CommonFlags& flags) {
    RunConfig cfg;
    if (!flags.config_path.empty()) cfg = load_run_config(flags.config_path);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (!flags.checkpoint.empty()) cfg.checkpoint_path = flags.checkpoint;
    if (!flags.backend.empty()) apply_config_key(cfg, "backend", flags.backend);
    if (flags.seed_set) cfg.seed = flags.seed;
    if (flags.episodes > 0) cfg.episodes = flags.episodes;
    return cfg;
}

void emit_outputs(const RunConfig& cfg, const ExecutionResult& result,
                  const std::string& stem, int n_ess) {
    std::filesystem::create_directories(cfg.out_dir);
    write_trajectory_csv(cfg.out_dir + "/" + stem + "_trajectory.csv",
                         result.trajectory, n_ess);
    write_metrics_csv(cfg.out_dir + "/" + stem + "_metrics.csv", result.report);
    write_voltage_distribution_csv(cfg.out_dir + "/" + stem + "_voltages.csv",
                                   result.report);
    std::cout << stem << ": daily cost " << result.report.average_daily_cost_gbp
              << " GBP/day, executed violations " << result.report.executed_violations
              << ", fallback invocations " << result.report.fallback_invocations
              << "\n";
}

int cmd_train(const CommonFlags& flags, bool resume) {
    RunConfig cfg = make_config(flags);
    Trainer trainer(cfg);
    if (resume)
        trainer.resume(cfg.resolved_checkpoint());
    else
        trainer.run();
    const auto& stats = trainer.episode_stats();
    double last_reward = stats.empty() ? 0.0 : stats.back().cum_reward;
    std::cout << "trained " << stats.size() << " episodes, final cum_reward "
              << last_reward << ", training " << trainer.training_minutes()
              << " min, checkpoint " << cfg.resolved_checkpoint() << "\n";
    return 0;
}

int cmd_execute(const CommonFlags& flags) {
    RunConfig cfg = make_config(flags);
    const auto checkpoint = Checkpoint::load(cfg.resolved_checkpoint());
    const auto result = execute_episode(cfg, checkpoint);
    emit_outputs(cfg, result, "execute",
                 static_cast<int>(result.trajectory.front().p_ess_kw.size()));
    std::cout << "mean decision time " << result.report.mean_decision_seconds << " s\n";
    return 0;
}

int cmd_baseline(const std::string& kind_str, const CommonFlags& flags) {
    RunConfig cfg = make_config(flags);
    const BaselineKind kind = baseline_from_string(kind_str);
    std::unique_ptr<Checkpoint> checkpoint;
    if (kind == BaselineKind::sac_plain || kind == BaselineKind::acpf_sac)
        checkpoint = std::make_unique<Checkpoint>(
            Checkpoint::load(cfg.resolved_checkpoint()));
    const auto result = run_baseline(kind, cfg, checkpoint.get());
    emit_outputs(cfg, result, "baseline_" + kind_str,
                 static_cast<int>(result.trajectory.front().p_ess_kw.size()));
    return 0;
}

std::vector<TrajectoryStep> read_trajectory_csv(const std::string& path) {
    const auto table = csv::read_file(path);
    const int c_step = table.require_column("step");
    const int c_cost = table.require_column("step_cost_gbp");
    const int c_reward = table.require_column("reward");
    const int c_viol = table.require_column("violations");
    const int c_fb = table.require_column("used_fallback");
    const int c_unsafe = table.require_column("unsafe_proposal");
    std::vector<TrajectoryStep> steps;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        TrajectoryStep s;
        s.step = static_cast<int>(csv::to_long(table, i, c_step));
        s.step_cost_gbp = csv::to_double(table, i, c_cost);
        s.reward = csv::to_double(table, i, c_reward);
        s.violations = static_cast<int>(csv::to_long(table, i, c_viol));
        s.used_fallback = csv::to_long(table, i, c_fb) != 0;
        s.unsafe_proposal = csv::to_long(table, i, c_unsafe) != 0;
        steps.push_back(std::move(s));
    }
    return steps;
}

int cmd_evaluate(const std::string& trajectory_path, const std::string& reference_path,
                 const CommonFlags& flags) {
    RunConfig cfg = make_config(flags);
    const auto steps = read_trajectory_csv(trajectory_path);
    std::optional<double> reference_daily;
    if (!reference_path.empty()) {
        const auto ref = read_trajectory_csv(reference_path);
        double total = 0.0;
        for (const auto& s : ref) total += s.step_cost_gbp;
        reference_daily = total / (static_cast<double>(ref.size()) / 24.0);
    }
    const auto report = evaluate_metrics(steps, {}, reference_daily);
    std::filesystem::create_directories(cfg.out_dir);
    write_metrics_csv(cfg.out_dir + "/evaluate_metrics.csv", report);
    std::cout << "daily cost " << report.average_daily_cost_gbp << " GBP/day";
    if (reference_daily)
        std::cout << ", improvement vs reference "
                  << report.improvement_vs_uncontrolled_pct << "%";
    std::cout << "\n";
    return 0;
}

int cmd_powerflow(const std::string& network_path, const std::string& injections_path,
                  const std::string& out_path) {
    const auto net = load_network(network_path);
    const auto table = csv::read_file(injections_path);
    const int cb = table.require_column("bus");
    const int cp = table.require_column("p_kw");
    const int cq = table.require_column("q_kvar");
    InjectionVector inj;
    inj.p = Vec::Zero(net.bus_count);
    inj.q = Vec::Zero(net.bus_count);
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const int bus = static_cast<int>(csv::to_long(table, i, cb)) - 1;
        if (bus < 0 || bus >= net.bus_count)
            throw IngestError("powerflow: bus out of range at data row " +
                              std::to_string(i + 1));
        inj.p(bus) += csv::to_double(table, i, cp) / net.s_base_kva;
        inj.q(bus) += csv::to_double(table, i, cq) / net.s_base_kva;
    }
    AcpfSolver solver(net);
    const auto sol = solver.solve(inj);
    if (!out_path.empty()) {
        csv::Writer w(out_path);
        w.row({"bus", "v_re", "v_im", "v_mag"});
        const auto mags = sol.magnitudes();
        for (int i = 0; i < net.bus_count; ++i)
            w.row({std::to_string(i + 1), csv::format_double(sol.v_re(i)),
                   csv::format_double(sol.v_im(i)), csv::format_double(mags(i))});
    }
    std::cout << "converged " << (sol.converged ? "yes" : "no") << ", iterations "
              << sol.iterations << ", slack_p " << sol.slack_p * net.s_base_kva
              << " kW, max residual " << sol.max_residual << "\n";
    if (sol.converged) {
        const auto violations = violation_report(sol, net.limits);
        std::cout << "voltage violations: " << violations.size() << "\n";
    }
    return sol.converged ? 0 : 1;
}

int cmd_synth(std::uint64_t seed, int days, const std::string& out_path) {
    BaseLoads dummy;  // factors only; loads come from the bundled base file
    dummy.p_kw.assign(1, 0.0);
    dummy.q_kvar.assign(1, 0.0);
    const auto p = synth_dataset(seed, days, dummy);
    csv::Writer w(out_path);
    w.row({"timestamp", "load_factor", "pv_factor", "wt_factor", "price_gbp_per_kwh"});
    for (std::size_t t = 0; t < p.length(); ++t)
        w.row({p.timestamps[t], csv::format_double(p.load_factor[t]),
               csv::format_double(p.pv_factor[t]), csv::format_double(p.wt_factor[t]),
               csv::format_double(p.price_grid[t])});
    std::cout << "wrote " << p.length() << " hours to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Safe dispatch of distribution-network battery storage: "
                 "guarded soft actor-critic with an optimization fallback"};
    app.require_subcommand(1);

    CommonFlags train_flags, exec_flags, base_flags, eval_flags;
    bool resume = false;

    auto* train = app.add_subcommand("train", "train the dispatcher (Algorithm-1 loop)");
    add_common(train, train_flags);
    train->add_flag("--resume", resume, "continue from the configured checkpoint");

    auto* execute = app.add_subcommand("execute", "run the trained policy on the held-out range");
    add_common(execute, exec_flags, false);

    std::string baseline_kind;
    auto* baseline = app.add_subcommand("baseline", "run a comparison baseline");
    baseline->add_option("kind", baseline_kind,
                         "uncontrolled | perfect_foresight | sac_plain | acpf_sac")
        ->required();
    add_common(baseline, base_flags, false);

    std::string eval_traj, eval_ref;
    auto* evaluate = app.add_subcommand("evaluate", "compute metrics from trajectory logs");
    evaluate->add_option("--trajectory", eval_traj, "trajectory CSV")->required();
    evaluate->add_option("--reference", eval_ref, "uncontrolled trajectory CSV");
    add_common(evaluate, eval_flags, false);

    std::string pf_network = "data/ieee33_branches.csv", pf_injections, pf_out;
    auto* powerflow = app.add_subcommand("powerflow", "one-shot power flow for a state file");
    powerflow->add_option("--network", pf_network, "branch CSV with .meta.json sidecar");
    powerflow->add_option("--injections", pf_injections, "CSV bus,p_kw,q_kvar")->required();
    powerflow->add_option("--out", pf_out, "per-bus voltage CSV");

    std::uint64_t synth_seed = 1;
    int synth_days = 28;
    std::string synth_out = "synthetic.csv";
    auto* synth = app.add_subcommand("synth", "generate a synthetic hourly dataset");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--days", synth_days, "number of days");
    synth->add_option("--out", synth_out, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_flags, resume);
        if (execute->parsed()) return cmd_execute(exec_flags);
        if (baseline->parsed()) return cmd_baseline(baseline_kind, base_flags);
        if (evaluate->parsed()) return cmd_evaluate(eval_traj, eval_ref, eval_flags);
        if (powerflow->parsed()) return cmd_powerflow(pf_network, pf_injections, pf_out);
        if (synth->parsed()) return cmd_synth(synth_seed, synth_days, synth_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
