#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sa2co/env.hpp"
#include "sa2co/guard.hpp"
#include "sa2co/sac.hpp"
#include "sa2co/safe_dispatch.hpp"

namespace sa2co {

enum class Method { sa2co, sac_plain, acpf_sac };
enum class BaselineKind { uncontrolled, perfect_foresight, sac_plain, acpf_sac };

Method method_from_string(const std::string& s);
BaselineKind baseline_from_string(const std::string& s);

struct RunConfig {
    // data sources; an empty dataset_csv selects the synthetic generator
    std::string network_csv = "data/ieee33_branches.csv";
    std::string loads_csv = "data/ieee33_loads.csv";
    std::string devices_csv = "data/ieee33_devices.csv";
    std::string dataset_csv;
    std::uint64_t synth_seed = 1;
    int synth_days = 28;
    int train_days = 20;

    EnvConfig env;           // high_risk_buses filled with the 33-bus default when empty
    SacConfig sac;           // episodes/steps mirrored below
    GuardConfig guard;
    int guard_updates_per_step = 4;
    int guard_extra_samples = 8;

    DispatchBackend backend = DispatchBackend::search;
    Method method = Method::sa2co;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::string checkpoint_path;  // defaults to <out_dir>/checkpoint.json
    bool checkpoint_buffer = true;

    int episodes = 300;
    int steps = 480;

    std::string resolved_checkpoint() const;
    void validate() const;
};

/// Key = value configuration file; '#' starts a comment. Unknown keys are
/// rejected. CLI overrides reuse apply_config_key.
RunConfig load_run_config(const std::string& path);
void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

struct TrajectoryStep {
    int step = 0;
    std::size_t time_index = 0;
    std::vector<double> p_ess_kw;
    std::vector<double> soe;
    double p_r_kw = 0.0;
    double step_cost_gbp = 0.0;
    double reward = 0.0;
    int violations = 0;
    bool used_fallback = false;
    bool unsafe_proposal = false;
    bool guard_ready = false;
    Vec high_risk_v;  // |V| at the high-risk buses after execution
    double decision_seconds = 0.0;
};

void write_trajectory_csv(const std::string& path,
                          const std::vector<TrajectoryStep>& steps, int n_ess);

struct EpisodeStats {
    int episode = 0;
    double cum_reward = 0.0;
    double mean_q_loss = 0.0;
    double mean_pi_loss = 0.0;
    int unsafe_proposals = 0;
    int executed_violations = 0;
    int fallback_invocations = 0;
    double episode_cost_gbp = 0.0;
    bool guard_ready = false;
};

void write_training_curve_csv(const std::string& path,
                              const std::vector<EpisodeStats>& stats);

struct EvalReport {
    double average_daily_cost_gbp = 0.0;
    double improvement_vs_uncontrolled_pct = 0.0;  // set when a reference is given
    long executed_violations = 0;
    long unsafe_proposals = 0;
    long fallback_invocations = 0;
    double mean_decision_seconds = 0.0;
    double training_minutes = 0.0;
    struct BusSummary {
        int bus = 0;  // 0-based
        double v_min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, v_max = 0.0;
    };
    std::vector<BusSummary> voltage_summaries;
};

/// Improvement formula used in the comparison table.
double improvement_pct(double uncontrolled_cost, double method_cost);

EvalReport evaluate_metrics(const std::vector<TrajectoryStep>& trajectory,
                            const std::vector<int>& high_risk_buses,
                            std::optional<double> uncontrolled_daily_cost = {});

void write_metrics_csv(const std::string& path, const EvalReport& report);
void write_voltage_distribution_csv(const std::string& path, const EvalReport& report);

/// Shared immutable assets for one run.
struct Stack {
    NetworkModel net;
    DeviceSet devices;
    ProfileSet profiles;
    std::size_t train_hours = 0;  // profiles [0, train_hours) train, rest test
    EnvConfig env_cfg;
};

Stack build_stack(const RunConfig& cfg);

class Trainer {
public:
    Trainer(RunConfig cfg);

    /// Algorithm-1 training loop; writes training_curve.csv, the final
    /// trajectory log and a checkpoint under out_dir.
    void run();
    /// Resumes from a checkpoint produced by run() and continues to the
    /// configured episode count.
    void resume(const std::string& checkpoint_path);

    const std::vector<EpisodeStats>& episode_stats() const { return stats_; }
    const SacAgent& agent() const { return *agent_; }
    const GuardTrainer& guard() const { return *guard_; }
    double training_minutes() const { return training_minutes_; }

    void save_checkpoint(const std::string& path) const;

private:
    void train_episodes();
    std::size_t pick_episode_start();

    RunConfig cfg_;
    Stack stack_;
    std::unique_ptr<Environment> env_;
    std::unique_ptr<SacAgent> agent_;
    std::unique_ptr<GuardTrainer> guard_;
    Rng rng_;
    std::int64_t total_env_steps_ = 0;
    int next_episode_ = 0;
    std::vector<EpisodeStats> stats_;
    std::vector<TrajectoryStep> last_trajectory_;
    double training_minutes_ = 0.0;
};

struct ExecutionResult {
    std::vector<TrajectoryStep> trajectory;
    EvalReport report;
};

/// Fig.-2 execution flow: deterministic policy, guard screen, fallback on
/// unsafe. Refuses to run without a ready guard.
ExecutionResult execute_episode(const RunConfig& cfg, const Checkpoint& checkpoint);

/// Baseline runs over the held-out range. SAC-based kinds require a
/// checkpoint trained with the matching method.
ExecutionResult run_baseline(BaselineKind kind, const RunConfig& cfg,
                             const Checkpoint* checkpoint = nullptr);

}  // namespace sa2co
