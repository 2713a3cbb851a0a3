#pragma once

#include <cstdint>
#include <vector>

#include "sa2co/checkpoint.hpp"
#include "sa2co/common.hpp"
#include "sa2co/nn.hpp"
#include "sa2co/rng.hpp"

namespace sa2co {

struct SacConfig {
    double gamma = 0.99;
    double tau = 1e-2;
    double alpha = 0.2;
    bool auto_alpha = false;   // optional temperature tuning, target entropy -act_dim
    double alpha_lr = 2e-4;
    int batch_size = 64;
    int buffer_capacity = 200000;
    int episodes = 300;
    int steps_per_episode = 480;
    double lr_actor = 2e-4;
    double lr_critic = 2e-4;
    double weight_decay = 1e-2;
    int hidden = 512;          // width of both hidden layers
    int warmup_steps = 1000;   // uniform-random action steps before updates
    double per_alpha = 0.6;
    double per_beta_start = 0.4;
    double per_beta_end = 1.0;
    double logstd_min = -20.0;
    double logstd_max = 2.0;

    void validate() const;
};

struct Transition {
    Vec s;
    Vec a;
    double r = 0.0;
    Vec s2;
    bool done = false;
};

/// Sum-tree backed replay buffer with proportional prioritization.
class PerBuffer {
public:
    PerBuffer(int capacity, double per_alpha);

    void insert(Transition t);
    void update_priorities(const std::vector<int>& indices, const Vec& abs_td);

    struct Batch {
        std::vector<int> indices;
        Vec weights;  // importance weights, max-normalized
        std::vector<const Transition*> items;
    };
    /// Stratified proportional sampling. Refuses batches larger than the
    /// current fill.
    Batch sample(int batch_size, double beta, Rng& rng) const;

    int size() const { return size_; }
    int capacity() const { return capacity_; }
    double sampling_probability(int index) const;
    double priority(int index) const { return raw_priority_[static_cast<std::size_t>(index)]; }

    void save(Checkpoint& c, const std::string& prefix) const;
    void load(const Checkpoint& c, const std::string& prefix);

private:
    void set_leaf(int index, double value);
    int find_prefix(double mass) const;

    int capacity_ = 0;
    int leaf_base_ = 0;          // first leaf slot in the tree array
    std::vector<double> tree_;   // priority^alpha sums
    std::vector<double> raw_priority_;
    std::vector<Transition> store_;
    int size_ = 0;
    int next_ = 0;
    double per_alpha_ = 0.6;
    double max_raw_priority_ = 1.0;
};

/// Squashed-Gaussian head: returns the action in [-1,1]^K and its
/// log-density including the tanh correction. Deterministic mode returns
/// tanh(mean) with no density.
struct PolicySample {
    Vec action;
    double log_prob = 0.0;
};
PolicySample sample_action(const MlpParams& policy, const Vec& obs, bool stochastic,
                           Rng& rng, double logstd_min = -20.0, double logstd_max = 2.0);

/// Entropy-regularized bootstrap target with twin target critics.
double q_target(double r, const Vec& s2, bool done, const MlpParams& target_q1,
                const MlpParams& target_q2, const MlpParams& policy, double alpha,
                double gamma, Rng& rng);

class SacAgent {
public:
    SacAgent(int obs_dim, int act_dim, SacConfig cfg, Rng& rng);

    /// Policy action for a raw (unstandardized) observation.
    Vec act(const Vec& raw_obs, bool stochastic, Rng& rng) const;

    void observe(const Vec& raw_obs);  // feeds the running standardizer
    void store(Transition t) { buffer_.insert(std::move(t)); }

    struct UpdateStats {
        double q1_loss = 0.0;
        double q2_loss = 0.0;
        double pi_loss = 0.0;
        double alpha = 0.0;
        bool skipped = false;
    };

    bool can_update() const { return buffer_.size() >= cfg_.batch_size; }
    UpdateStats update(Rng& rng);

    const SacConfig& config() const { return cfg_; }
    const MlpParams& actor() const { return actor_; }
    const RunningNorm& obs_norm() const { return obs_norm_; }
    PerBuffer& buffer() { return buffer_; }
    const PerBuffer& buffer() const { return buffer_; }
    double alpha() const;
    std::int64_t updates_done() const { return updates_done_; }

    void save(Checkpoint& c, const std::string& prefix, bool include_buffer) const;
    void load(const Checkpoint& c, const std::string& prefix);

    // exposed for gradient verification
    struct CriticUpdateResult {
        double loss1 = 0.0;
        double loss2 = 0.0;
        Vec abs_td;
        MlpGrads grads1;
        MlpGrads grads2;
    };
    CriticUpdateResult critic_loss_and_grads(const std::vector<const Transition*>& batch,
                                             const Vec& weights, Rng& rng) const;
    struct ActorUpdateResult {
        double loss = 0.0;
        MlpGrads grads;
        double mean_log_prob = 0.0;
    };
    ActorUpdateResult actor_loss_and_grads(const std::vector<const Transition*>& batch,
                                           const Mat& noise) const;

    MlpParams& mutable_actor() { return actor_; }
    MlpParams& mutable_q1() { return q1_; }
    MlpParams& mutable_q2() { return q2_; }
    const MlpParams& q1() const { return q1_; }
    const MlpParams& q2() const { return q2_; }
    const MlpParams& target_q1() const { return tq1_; }
    const MlpParams& target_q2() const { return tq2_; }

private:
    Mat normalized_obs_matrix(const std::vector<const Transition*>& batch, bool next) const;

    SacConfig cfg_;
    int obs_dim_ = 0;
    int act_dim_ = 0;

    MlpParams actor_;  // outputs [mean; log_std]
    MlpParams q1_, q2_, tq1_, tq2_;
    AdamState opt_actor_, opt_q1_, opt_q2_;
    double log_alpha_ = 0.0;
    double alpha_m_ = 0.0, alpha_v_ = 0.0;  // Adam moments for auto-alpha
    std::int64_t alpha_steps_ = 0;

    RunningNorm obs_norm_;
    PerBuffer buffer_;
    std::int64_t updates_done_ = 0;
    std::int64_t planned_updates_ = 1;
};

}  // namespace sa2co
