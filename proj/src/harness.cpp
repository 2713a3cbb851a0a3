#include "sa2co/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "sa2co/csv.hpp"

namespace sa2co {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) { return csv::format_double(v); }

Vec high_risk_voltages(const Vec& all_mags, const std::vector<int>& buses) {
    Vec out(static_cast<int>(buses.size()));
    for (std::size_t i = 0; i < buses.size(); ++i)
        out(static_cast<int>(i)) = all_mags(buses[i]);
    return out;
}

double quantile(std::vector<double> sorted_values, double q) {
    if (sorted_values.empty()) return 0.0;
    const double pos = q * (static_cast<double>(sorted_values.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted_values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac;
}

}  // namespace

Method method_from_string(const std::string& s) {
    if (s == "sa2co") return Method::sa2co;
    if (s == "sac_plain") return Method::sac_plain;
    if (s == "acpf_sac") return Method::acpf_sac;
    throw ConfigError("unknown method '" + s + "'");
}

BaselineKind baseline_from_string(const std::string& s) {
    if (s == "uncontrolled") return BaselineKind::uncontrolled;
    if (s == "perfect_foresight") return BaselineKind::perfect_foresight;
    if (s == "sac_plain") return BaselineKind::sac_plain;
    if (s == "acpf_sac") return BaselineKind::acpf_sac;
    throw ConfigError("unknown baseline '" + s + "'");
}

std::string RunConfig::resolved_checkpoint() const {
    return checkpoint_path.empty() ? out_dir + "/checkpoint.json" : checkpoint_path;
}

void RunConfig::validate() const {
    if (episodes < 1 || steps < 1) throw ConfigError("config: episodes and steps must be positive");
    if (train_days < 1) throw ConfigError("config: train_days must be positive");
    sac.validate();
}

namespace {

bool to_bool(const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config: bad boolean '" + v + "'");
}

std::vector<int> parse_bus_list(const std::string& v) {
    std::vector<int> out;
    std::string cur;
    for (char c : v + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stoi(cur) - 1);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    return out;
}

}  // namespace

void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto d = [&]() { return std::stod(value); };
    auto i = [&]() { return std::stoi(value); };
    auto u = [&]() { return static_cast<std::uint64_t>(std::stoull(value)); };

    if (key == "network") cfg.network_csv = value;
    else if (key == "loads") cfg.loads_csv = value;
    else if (key == "devices") cfg.devices_csv = value;
    else if (key == "dataset") cfg.dataset_csv = value;
    else if (key == "synth_seed") cfg.synth_seed = u();
    else if (key == "synth_days") cfg.synth_days = i();
    else if (key == "train_days") cfg.train_days = i();
    else if (key == "episodes") cfg.episodes = i();
    else if (key == "steps") cfg.steps = i();
    else if (key == "seed") cfg.seed = u();
    else if (key == "out") cfg.out_dir = value;
    else if (key == "method") cfg.method = method_from_string(value);
    else if (key == "backend")
        cfg.backend = value == "conic" ? DispatchBackend::conic
                                       : value == "search"
                                             ? DispatchBackend::search
                                             : throw ConfigError("config: backend must be conic or search");
    else if (key == "checkpoint") cfg.checkpoint_path = value;
    else if (key == "checkpoint_buffer") cfg.checkpoint_buffer = to_bool(value);
    else if (key == "cost_scale") cfg.env.cost_scale = d();
    else if (key == "violation_weight") cfg.env.violation_weight = d();
    else if (key == "initial_soe") cfg.env.initial_soe = d();
    else if (key == "price_noise_std") cfg.env.price_noise_std = d();
    else if (key == "high_risk") cfg.env.high_risk_buses = parse_bus_list(value);
    else if (key == "gamma") cfg.sac.gamma = d();
    else if (key == "tau") cfg.sac.tau = d();
    else if (key == "alpha") cfg.sac.alpha = d();
    else if (key == "auto_alpha") cfg.sac.auto_alpha = to_bool(value);
    else if (key == "batch_size") cfg.sac.batch_size = i();
    else if (key == "buffer") cfg.sac.buffer_capacity = i();
    else if (key == "lr_actor") cfg.sac.lr_actor = d();
    else if (key == "lr_critic") cfg.sac.lr_critic = d();
    else if (key == "weight_decay") cfg.sac.weight_decay = d();
    else if (key == "hidden") cfg.sac.hidden = i();
    else if (key == "warmup") cfg.sac.warmup_steps = i();
    else if (key == "per_alpha") cfg.sac.per_alpha = d();
    else if (key == "per_beta_start") cfg.sac.per_beta_start = d();
    else if (key == "per_beta_end") cfg.sac.per_beta_end = d();
    else if (key == "guard_hidden") cfg.guard.hidden = i();
    else if (key == "guard_lr") cfg.guard.lr = d();
    else if (key == "guard_margin") cfg.guard.margin = d();
    else if (key == "guard_threshold") cfg.guard.readiness_threshold = d();
    else if (key == "guard_window") cfg.guard.readiness_window = i();
    else if (key == "guard_min_samples") cfg.guard.min_samples = i();
    else if (key == "guard_updates_per_step") cfg.guard_updates_per_step = i();
    else if (key == "guard_extra_samples") cfg.guard_extra_samples = i();
    else throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    RunConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            bool blank = true;
            for (char c : line)
                if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
            if (blank) continue;
            throw ConfigError("config: malformed line " + std::to_string(line_no));
        }
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t");
            return s.substr(a, b - a + 1);
        };
        apply_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

Stack build_stack(const RunConfig& cfg) {
    Stack stack;
    stack.net = load_network(cfg.network_csv);
    stack.devices = load_devices(cfg.devices_csv);
    auto base = load_base_loads(cfg.loads_csv, stack.net.bus_count);
    if (cfg.dataset_csv.empty())
        stack.profiles = synth_dataset(cfg.synth_seed, cfg.synth_days, std::move(base));
    else
        stack.profiles = load_dataset(cfg.dataset_csv, std::move(base));

    stack.train_hours =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.train_days) * 24,
                              stack.profiles.length());
    stack.env_cfg = cfg.env;
    stack.env_cfg.episode_length = cfg.steps;
    if (stack.env_cfg.high_risk_buses.empty()) {
        if (stack.net.bus_count == 33)
            stack.env_cfg.high_risk_buses = default_high_risk_33().buses;
        else
            throw ConfigError("config: high_risk buses required for non-33-bus networks");
    }
    HighRiskSet hr{stack.env_cfg.high_risk_buses};
    hr.validate(stack.net.bus_count);
    return stack;
}

// ---------------------------------------------------------------------------
// CSV writers

void write_trajectory_csv(const std::string& path,
                          const std::vector<TrajectoryStep>& steps, int n_ess) {
    csv::Writer w(path);
    std::vector<std::string> header = {"step", "time_index"};
    for (int k = 0; k < n_ess; ++k) header.push_back("p_ess_" + std::to_string(k + 1) + "_kw");
    for (int k = 0; k < n_ess; ++k) header.push_back("soe_" + std::to_string(k + 1));
    header.insert(header.end(), {"p_r_kw", "step_cost_gbp", "reward", "violations",
                                 "used_fallback", "unsafe_proposal", "guard_ready"});
    w.row(header);
    for (const auto& s : steps) {
        std::vector<std::string> row = {std::to_string(s.step), std::to_string(s.time_index)};
        for (double p : s.p_ess_kw) row.push_back(fmt(p));
        for (double v : s.soe) row.push_back(fmt(v));
        row.push_back(fmt(s.p_r_kw));
        row.push_back(fmt(s.step_cost_gbp));
        row.push_back(fmt(s.reward));
        row.push_back(std::to_string(s.violations));
        row.push_back(s.used_fallback ? "1" : "0");
        row.push_back(s.unsafe_proposal ? "1" : "0");
        row.push_back(s.guard_ready ? "1" : "0");
        w.row(row);
    }
}

void write_training_curve_csv(const std::string& path,
                              const std::vector<EpisodeStats>& stats) {
    csv::Writer w(path);
    w.row({"episode", "cum_reward", "mean_q_loss", "mean_pi_loss", "unsafe_proposals",
           "executed_violations", "fallback_invocations", "episode_cost_gbp",
           "guard_ready"});
    for (const auto& s : stats)
        w.row({std::to_string(s.episode), fmt(s.cum_reward), fmt(s.mean_q_loss),
               fmt(s.mean_pi_loss), std::to_string(s.unsafe_proposals),
               std::to_string(s.executed_violations),
               std::to_string(s.fallback_invocations), fmt(s.episode_cost_gbp),
               s.guard_ready ? "1" : "0"});
}

double improvement_pct(double uncontrolled_cost, double method_cost) {
    return (uncontrolled_cost - method_cost) / uncontrolled_cost * 100.0;
}

EvalReport evaluate_metrics(const std::vector<TrajectoryStep>& trajectory,
                            const std::vector<int>& high_risk_buses,
                            std::optional<double> uncontrolled_daily_cost) {
    if (trajectory.empty()) throw ConfigError("evaluate_metrics: empty trajectory");
    EvalReport r;
    double total_cost = 0.0;
    double total_decision = 0.0;
    for (const auto& s : trajectory) {
        total_cost += s.step_cost_gbp;
        r.executed_violations += s.violations > 0 ? 1 : 0;
        r.unsafe_proposals += s.unsafe_proposal ? 1 : 0;
        r.fallback_invocations += s.used_fallback ? 1 : 0;
        total_decision += s.decision_seconds;
    }
    const double days = static_cast<double>(trajectory.size()) / 24.0;
    r.average_daily_cost_gbp = total_cost / days;
    r.mean_decision_seconds = total_decision / static_cast<double>(trajectory.size());
    if (uncontrolled_daily_cost)
        r.improvement_vs_uncontrolled_pct =
            improvement_pct(*uncontrolled_daily_cost, r.average_daily_cost_gbp);

    for (std::size_t b = 0; b < high_risk_buses.size(); ++b) {
        std::vector<double> vals;
        vals.reserve(trajectory.size());
        for (const auto& s : trajectory)
            if (s.high_risk_v.size() == static_cast<int>(high_risk_buses.size()))
                vals.push_back(s.high_risk_v(static_cast<int>(b)));
        if (vals.empty()) continue;
        std::sort(vals.begin(), vals.end());
        EvalReport::BusSummary bs;
        bs.bus = high_risk_buses[b];
        bs.v_min = vals.front();
        bs.q1 = quantile(vals, 0.25);
        bs.median = quantile(vals, 0.5);
        bs.q3 = quantile(vals, 0.75);
        bs.v_max = vals.back();
        r.voltage_summaries.push_back(bs);
    }
    return r;
}

void write_metrics_csv(const std::string& path, const EvalReport& report) {
    csv::Writer w(path);
    w.row({"metric", "value"});
    w.row({"average_daily_cost_gbp", fmt(report.average_daily_cost_gbp)});
    w.row({"improvement_vs_uncontrolled_pct", fmt(report.improvement_vs_uncontrolled_pct)});
    w.row({"executed_violations", std::to_string(report.executed_violations)});
    w.row({"unsafe_proposals", std::to_string(report.unsafe_proposals)});
    w.row({"fallback_invocations", std::to_string(report.fallback_invocations)});
    w.row({"mean_decision_seconds", fmt(report.mean_decision_seconds)});
    w.row({"training_minutes", fmt(report.training_minutes)});
}

void write_voltage_distribution_csv(const std::string& path, const EvalReport& report) {
    csv::Writer w(path);
    w.row({"bus", "v_min", "q1", "median", "q3", "v_max"});
    for (const auto& b : report.voltage_summaries)
        w.row({std::to_string(b.bus + 1), fmt(b.v_min), fmt(b.q1), fmt(b.median),
               fmt(b.q3), fmt(b.v_max)});
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(RunConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
    cfg_.validate();
    cfg_.sac.episodes = cfg_.episodes;
    cfg_.sac.steps_per_episode = cfg_.steps;
    stack_ = build_stack(cfg_);
    env_ = std::make_unique<Environment>(stack_.net, stack_.devices, stack_.profiles,
                                         stack_.env_cfg);
    agent_ = std::make_unique<SacAgent>(env_->observation_dim(), env_->action_dim(),
                                        cfg_.sac, rng_);
    HighRiskSet hr{stack_.env_cfg.high_risk_buses};
    guard_ = std::make_unique<GuardTrainer>(cfg_.guard, 2 * stack_.net.bus_count, hr,
                                            rng_);
    std::filesystem::create_directories(cfg_.out_dir);
}

std::size_t Trainer::pick_episode_start() {
    const std::size_t train_hours = stack_.train_hours;
    if (static_cast<std::size_t>(cfg_.steps) >= train_hours) return 0;
    const std::size_t max_offset_days = (train_hours - cfg_.steps) / 24;
    return 24 * rng_.index(max_offset_days + 1);
}

void Trainer::run() {
    const auto t0 = Clock::now();
    train_episodes();
    training_minutes_ += seconds_since(t0) / 60.0;

    write_training_curve_csv(cfg_.out_dir + "/training_curve.csv", stats_);
    write_trajectory_csv(cfg_.out_dir + "/trajectory_train_last.csv", last_trajectory_,
                         env_->action_dim());
    save_checkpoint(cfg_.resolved_checkpoint());
}

void Trainer::train_episodes() {
    const auto& risk = stack_.env_cfg.high_risk_buses;
    const bool screened = cfg_.method != Method::sac_plain;
    const bool uses_guard = cfg_.method == Method::sa2co;

    for (int ep = next_episode_; ep < cfg_.episodes; ++ep) {
        EpisodeStats st;
        st.episode = ep;
        Observation obs = env_->reset(pick_episode_start());
        agent_->observe(obs.values);

        std::vector<TrajectoryStep> trajectory;
        double q_loss_sum = 0.0, pi_loss_sum = 0.0;
        int update_count = 0;

        for (int step = 0; step < cfg_.steps; ++step) {
            // proposal: uniform random during warmup, stochastic policy after
            Action proposal;
            proposal.normalized = Vec::Zero(env_->action_dim());
            if (total_env_steps_ < cfg_.sac.warmup_steps) {
                for (int k = 0; k < env_->action_dim(); ++k)
                    proposal.normalized(k) = rng_.uniform(-1.0, 1.0);
            } else {
                proposal.normalized = agent_->act(obs.values, true, rng_);
            }
            const std::vector<double> proposal_kw = env_->denormalize(proposal);

            bool safe = true;
            bool guard_ready = guard_->model().ready;
            if (cfg_.method == Method::acpf_sac) {
                safe = env_->screen_exact(proposal_kw).violations == 0;
            } else if (uses_guard) {
                if (guard_ready) {
                    const Vec features =
                        guard_featurize(stack_.net, stack_.profiles, stack_.devices,
                                        proposal_kw, env_->time_index());
                    safe = predict_and_assess(guard_->model(), features,
                                              stack_.net.limits)
                               .safe;
                } else {
                    // exact screening doubles as guard training data
                    const auto screen = env_->screen_exact(proposal_kw);
                    safe = screen.converged && screen.violations == 0;
                    if (screen.converged) {
                        const Vec features =
                            guard_featurize(stack_.net, stack_.profiles, stack_.devices,
                                            proposal_kw, env_->time_index());
                        guard_->add_labeled_sample(
                            features, high_risk_voltages(screen.magnitudes, risk));
                    }
                    // uniformly perturbed load/action states, labeled exactly
                    const auto bounds = env_->current_bounds();
                    std::vector<double> zeros(bounds.size(), 0.0);
                    const auto base_inj =
                        net_injections(stack_.net, stack_.profiles, stack_.devices,
                                       zeros, env_->time_index());
                    for (int extra = 0; extra < cfg_.guard_extra_samples; ++extra) {
                        InjectionVector inj = base_inj;
                        const double load_scale = rng_.uniform(0.85, 1.15);
                        inj.p *= load_scale;
                        inj.q *= load_scale;
                        for (std::size_t k = 0; k < bounds.size(); ++k) {
                            const double a = rng_.uniform(bounds[k].lower_kw,
                                                          bounds[k].upper_kw);
                            inj.p(stack_.devices.ess[k].bus) += a / stack_.net.s_base_kva;
                        }
                        const auto sol = env_->solver().solve(inj);
                        if (!sol.converged) continue;
                        Vec features(2 * stack_.net.bus_count);
                        features.head(stack_.net.bus_count) = inj.p;
                        features.tail(stack_.net.bus_count) = inj.q;
                        guard_->add_labeled_sample(
                            features, high_risk_voltages(sol.magnitudes(), risk));
                    }
                    guard_->train_minibatches(cfg_.guard_updates_per_step, rng_);
                    if (guard_->maybe_freeze()) {
                        Checkpoint gc;
                        guard_->model().save(gc, "guard");
                        gc.save(cfg_.out_dir + "/guard_checkpoint.json");
                    }
                }
            }

            Action executed = proposal;
            bool used_fallback = false;
            if (screened && !safe) {
                st.unsafe_proposals += 1;
                DispatchContext ctx;
                ctx.net = &stack_.net;
                ctx.devices = &stack_.devices;
                ctx.profiles = &stack_.profiles;
                ctx.solver = &env_->solver();
                for (const auto& es : env_->ess_states()) ctx.soe.push_back(es.soe);
                ctx.t = env_->time_index();
                const auto fb = safe_dispatch(ctx, cfg_.backend);
                executed = env_->normalize_kw(fb.p_ess_kw);
                used_fallback = true;
            }

            const StepResult res = env_->step(executed, used_fallback);
            if (cfg_.method == Method::sac_plain && res.violations > 0)
                st.unsafe_proposals += 1;

            TrajectoryStep row;
            row.step = step;
            row.time_index = env_->time_index() - 1;
            row.p_ess_kw = res.executed_action_kw;
            for (const auto& es : env_->ess_states()) row.soe.push_back(es.soe);
            row.p_r_kw = res.slack_p_kw;
            row.step_cost_gbp = res.step_cost_gbp;
            row.reward = res.reward;
            row.violations = res.violations;
            row.used_fallback = used_fallback;
            row.unsafe_proposal = used_fallback || (cfg_.method == Method::sac_plain &&
                                                    res.violations > 0);
            row.guard_ready = guard_ready;
            row.high_risk_v = high_risk_voltages(res.voltage_magnitudes, risk);
            trajectory.push_back(std::move(row));

            st.cum_reward += res.reward;
            st.episode_cost_gbp += res.step_cost_gbp;
            if (res.violations > 0) st.executed_violations += 1;
            if (used_fallback) st.fallback_invocations += 1;

            Transition tr;
            tr.s = obs.values;
            tr.a = executed.normalized;
            tr.r = res.reward;
            tr.s2 = res.next_obs.values;
            tr.done = res.done;
            agent_->store(std::move(tr));
            agent_->observe(res.next_obs.values);

            total_env_steps_ += 1;
            if (total_env_steps_ > cfg_.sac.warmup_steps && agent_->can_update()) {
                const auto up = agent_->update(rng_);
                if (!up.skipped) {
                    q_loss_sum += 0.5 * (up.q1_loss + up.q2_loss);
                    pi_loss_sum += up.pi_loss;
                    ++update_count;
                }
            }
            obs = res.next_obs;
        }

        st.mean_q_loss = update_count ? q_loss_sum / update_count : 0.0;
        st.mean_pi_loss = update_count ? pi_loss_sum / update_count : 0.0;
        st.guard_ready = guard_->model().ready;
        stats_.push_back(st);
        last_trajectory_ = std::move(trajectory);
        next_episode_ = ep + 1;
    }
}

void Trainer::save_checkpoint(const std::string& path) const {
    Checkpoint c;
    c.put_int("meta.method", static_cast<int>(cfg_.method));
    c.put_int("meta.next_episode", next_episode_);
    c.put_int("meta.total_env_steps", total_env_steps_);
    c.put_string("meta.rng", rng_.serialize());
    c.put_scalar("meta.training_minutes", training_minutes_);
    agent_->save(c, "agent", cfg_.checkpoint_buffer);
    guard_->save(c, "guard");
    c.save(path);
}

void Trainer::resume(const std::string& checkpoint_path) {
    const auto c = Checkpoint::load(checkpoint_path);
    next_episode_ = static_cast<int>(c.get_int("meta.next_episode"));
    total_env_steps_ = c.get_int("meta.total_env_steps");
    training_minutes_ = c.get_scalar("meta.training_minutes");
    rng_.deserialize(c.get_string("meta.rng"));
    agent_->load(c, "agent");
    guard_->load(c, "guard");

    const auto t0 = Clock::now();
    train_episodes();
    training_minutes_ += seconds_since(t0) / 60.0;
    write_training_curve_csv(cfg_.out_dir + "/training_curve.csv", stats_);
    write_trajectory_csv(cfg_.out_dir + "/trajectory_train_last.csv", last_trajectory_,
                         env_->action_dim());
    save_checkpoint(cfg_.resolved_checkpoint());
}

// ---------------------------------------------------------------------------
// execution + baselines

namespace {

struct EvalRig {
    Stack stack;
    std::unique_ptr<Environment> env;
    std::size_t test_start = 0;
    int test_hours = 0;
};

EvalRig make_eval_rig(const RunConfig& cfg) {
    EvalRig rig;
    rig.stack = build_stack(cfg);
    rig.test_start = rig.stack.train_hours;
    const std::size_t total = rig.stack.profiles.length();
    if (rig.test_start >= total)
        throw ConfigError("evaluation: dataset has no held-out range after the "
                          "training days");
    rig.test_hours = static_cast<int>(total - rig.test_start);
    EnvConfig env_cfg = rig.stack.env_cfg;
    env_cfg.episode_length = rig.test_hours;
    rig.env = std::make_unique<Environment>(rig.stack.net, rig.stack.devices,
                                            rig.stack.profiles, env_cfg);
    return rig;
}

TrajectoryStep record_step(const Environment& env, const StepResult& res, int step,
                           const std::vector<int>& risk, bool unsafe_proposal,
                           bool guard_ready, double decision_seconds) {
    TrajectoryStep row;
    row.step = step;
    row.time_index = env.time_index() - 1;
    row.p_ess_kw = res.executed_action_kw;
    for (const auto& es : env.ess_states()) row.soe.push_back(es.soe);
    row.p_r_kw = res.slack_p_kw;
    row.step_cost_gbp = res.step_cost_gbp;
    row.reward = res.reward;
    row.violations = res.violations;
    row.used_fallback = res.used_fallback;
    row.unsafe_proposal = unsafe_proposal;
    row.guard_ready = guard_ready;
    row.high_risk_v = high_risk_voltages(res.voltage_magnitudes, risk);
    row.decision_seconds = decision_seconds;
    return row;
}

}  // namespace

ExecutionResult execute_episode(const RunConfig& cfg, const Checkpoint& checkpoint) {
    EvalRig rig = make_eval_rig(cfg);
    Environment& env = *rig.env;
    const auto& risk = rig.stack.env_cfg.high_risk_buses;

    Rng rng(cfg.seed + 1);
    SacConfig sac_cfg = cfg.sac;
    SacAgent agent(env.observation_dim(), env.action_dim(), sac_cfg, rng);
    agent.load(checkpoint, "agent");

    GuardModel guard;
    guard.load(checkpoint, "guard.model");
    if (!guard.ready)
        throw ReadinessError("execute: the checkpointed guard is not ready");

    ExecutionResult result;
    Observation obs = env.reset(rig.test_start);
    for (int step = 0; step < rig.test_hours; ++step) {
        const auto t0 = Clock::now();
        Action action;
        action.normalized = agent.act(obs.values, false, rng);
        const auto kw = env.denormalize(action);
        const Vec features = guard_featurize(rig.stack.net, rig.stack.profiles,
                                             rig.stack.devices, kw, env.time_index());
        const auto assess = predict_and_assess(guard, features, rig.stack.net.limits);
        bool used_fallback = false;
        if (!assess.safe) {
            DispatchContext ctx;
            ctx.net = &rig.stack.net;
            ctx.devices = &rig.stack.devices;
            ctx.profiles = &rig.stack.profiles;
            ctx.solver = &env.solver();
            for (const auto& es : env.ess_states()) ctx.soe.push_back(es.soe);
            ctx.t = env.time_index();
            const auto fb = safe_dispatch(ctx, cfg.backend);
            action = env.normalize_kw(fb.p_ess_kw);
            used_fallback = true;
        }
        const double decision_s = seconds_since(t0);

        const StepResult res = env.step(action, used_fallback);
        result.trajectory.push_back(
            record_step(env, res, step, risk, !assess.safe, true, decision_s));
        obs = res.next_obs;
    }
    result.report = evaluate_metrics(result.trajectory, risk);
    return result;
}

ExecutionResult run_baseline(BaselineKind kind, const RunConfig& cfg,
                             const Checkpoint* checkpoint) {
    EvalRig rig = make_eval_rig(cfg);
    Environment& env = *rig.env;
    const auto& risk = rig.stack.env_cfg.high_risk_buses;

    ExecutionResult result;
    Observation obs = env.reset(rig.test_start);

    std::unique_ptr<SacAgent> agent;
    Rng rng(cfg.seed + 2);
    if (kind == BaselineKind::sac_plain || kind == BaselineKind::acpf_sac) {
        if (!checkpoint)
            throw ConfigError("baseline: SAC-based kinds need a trained checkpoint");
        agent = std::make_unique<SacAgent>(env.observation_dim(), env.action_dim(),
                                           cfg.sac, rng);
        agent->load(*checkpoint, "agent");
    }

    std::vector<std::vector<double>> foresight;
    if (kind == BaselineKind::perfect_foresight) {
        std::vector<double> soe(env.ess_states().size(), cfg.env.initial_soe);
        std::size_t at = rig.test_start;
        int remaining = rig.test_hours;
        while (remaining > 0) {
            const int horizon = std::min(24, remaining);
            auto day = perfect_foresight_schedule(rig.stack.net, rig.stack.devices,
                                                  rig.stack.profiles, at, horizon, soe);
            for (auto& hour : day) foresight.push_back(hour);
            // roll the SoE forward through the plan
            for (int h = 0; h < horizon; ++h)
                for (std::size_t k = 0; k < soe.size(); ++k) {
                    const auto& u = rig.stack.devices.ess[k];
                    EssState s{soe[k]};
                    const auto b = power_bounds(u, s);
                    const double p = std::clamp(day[static_cast<std::size_t>(h)][k],
                                                b.lower_kw, b.upper_kw);
                    soe[k] = ess_step(u, s, p).soe;
                }
            at += static_cast<std::size_t>(horizon);
            remaining -= horizon;
        }
    }

    for (int step = 0; step < rig.test_hours; ++step) {
        const auto t0 = Clock::now();
        Action action;
        action.normalized = Vec::Zero(env.action_dim());
        bool unsafe_proposal = false;
        bool used_fallback = false;

        switch (kind) {
            case BaselineKind::uncontrolled:
                break;
            case BaselineKind::perfect_foresight:
                action = env.normalize_kw(foresight[static_cast<std::size_t>(step)]);
                break;
            case BaselineKind::sac_plain:
                action.normalized = agent->act(obs.values, false, rng);
                break;
            case BaselineKind::acpf_sac: {
                action.normalized = agent->act(obs.values, false, rng);
                const auto kw = env.denormalize(action);
                if (env.screen_exact(kw).violations != 0) {
                    unsafe_proposal = true;
                    DispatchContext ctx;
                    ctx.net = &rig.stack.net;
                    ctx.devices = &rig.stack.devices;
                    ctx.profiles = &rig.stack.profiles;
                    ctx.solver = &env.solver();
                    for (const auto& es : env.ess_states()) ctx.soe.push_back(es.soe);
                    ctx.t = env.time_index();
                    const auto fb = safe_dispatch(ctx, cfg.backend);
                    action = env.normalize_kw(fb.p_ess_kw);
                    used_fallback = true;
                }
                break;
            }
        }
        const double decision_s = seconds_since(t0);
        const StepResult res = env.step(action, used_fallback);
        if (kind == BaselineKind::sac_plain && res.violations > 0) unsafe_proposal = true;
        result.trajectory.push_back(
            record_step(env, res, step, risk, unsafe_proposal, false, decision_s));
        obs = res.next_obs;
    }
    result.report = evaluate_metrics(result.trajectory, risk);
    return result;
}

}  // namespace sa2co
