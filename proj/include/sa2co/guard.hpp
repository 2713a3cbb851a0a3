#pragma once

#include <deque>
#include <string>
#include <vector>

#include "sa2co/assets.hpp"
#include "sa2co/checkpoint.hpp"
#include "sa2co/common.hpp"
#include "sa2co/grid.hpp"
#include "sa2co/nn.hpp"
#include "sa2co/rng.hpp"

namespace sa2co {

struct HighRiskSet {
    std::vector<int> buses;  // 0-based

    void validate(int bus_count) const;
};

/// Default high-risk set for the 33-bus feeder: the tails of the two long
/// laterals (1-based buses 12-18 and 29-33).
HighRiskSet default_high_risk_33();

struct GuardConfig {
    int hidden = 128;  // two rectifier layers
    double lr = 2e-4;
    double weight_decay = 0.0;
    int batch_size = 64;
    double readiness_threshold = 1e-2;  // running-average RMSE, p.u.
    int readiness_window = 200;
    int min_samples = 20000;  // labeled samples required before freezing
    double margin = 0.002;    // p.u. buffer inside the voltage limits
    int max_dataset = 200000;
};

struct GuardSample {
    Vec features;  // (P_1..P_N, Q_1..Q_N) p.u., dispatch folded into P
    Vec labels;    // |V| at the high-risk buses
};

struct GuardModel {
    MlpParams net;
    RunningNorm feature_norm;
    HighRiskSet risk;
    double margin = 0.002;
    bool ready = false;
    double running_avg_loss = 1e9;

    Vec predict(const Vec& features) const;

    void save(Checkpoint& c, const std::string& prefix) const;
    void load(const Checkpoint& c, const std::string& prefix);
};

/// Candidate-state features: exactly the net-injection vector with the
/// dispatch command folded into P, serialized P-block then Q-block.
Vec guard_featurize(const NetworkModel& net, const ProfileSet& profiles,
                    const DeviceSet& devices, const std::vector<double>& action_kw,
                    std::size_t t);

/// Per-sample voltage-regression loss: sqrt(mean squared error) in p.u.
double guard_loss(const Vec& predicted, const Vec& label);

struct GuardAssessment {
    Vec predicted;
    bool safe = false;
};

/// Safe iff every predicted magnitude lies in [lower + margin, upper - margin].
/// Requires a ready model.
GuardAssessment predict_and_assess(const GuardModel& model, const Vec& features,
                                   const VoltageLimits& limits);

/// Online trainer used during the pre-readiness phase: labeled samples are
/// scored before being trained on, so the readiness window tracks held-out
/// error.
class GuardTrainer {
public:
    GuardTrainer(GuardConfig cfg, int feature_dim, HighRiskSet risk, Rng& rng);

    /// Returns the prequential RMSE of the sample.
    double add_labeled_sample(const Vec& features, const Vec& labels);
    void train_minibatches(int count, Rng& rng);
    /// Freezes the model once the window is full, enough samples were seen
    /// and the window average is below threshold.
    bool maybe_freeze();

    GuardModel& model() { return model_; }
    const GuardModel& model() const { return model_; }
    const GuardConfig& config() const { return cfg_; }
    double window_average() const;
    std::int64_t samples_seen() const { return samples_seen_; }

    void save(Checkpoint& c, const std::string& prefix) const;
    void load(const Checkpoint& c, const std::string& prefix);

private:
    GuardConfig cfg_;
    GuardModel model_;
    AdamState opt_;
    std::vector<Vec> xs_, ys_;
    std::deque<double> window_;
    double window_sum_ = 0.0;
    std::int64_t samples_seen_ = 0;
};

struct GuardTrainReport {
    std::vector<double> epoch_loss;
    double final_loss = 0.0;
};

/// Batch training against power-flow-labeled samples. Raises NumericalError
/// if the loss exceeds ten times its initial value for five consecutive
/// epochs.
GuardTrainReport train_guard(GuardModel& model, const std::vector<GuardSample>& samples,
                             const GuardConfig& cfg, int epochs, Rng& rng);

struct GuardEvalRow {
    double rmse = 0.0;
    double max_abs_err = 0.0;
};

/// Held-out evaluation; optionally writes `sample,rmse,max_abs_err` rows.
std::vector<GuardEvalRow> evaluate_guard(const GuardModel& model,
                                         const std::vector<GuardSample>& samples,
                                         const std::string& csv_path = "");

}  // namespace sa2co
