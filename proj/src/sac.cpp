#include "sa2co/sac.hpp"

#include <algorithm>
#include <cmath>

namespace sa2co {

namespace {

constexpr double kLogTwoPi = 1.8378770664093453;  // ln(2*pi)
constexpr double kSquashEps = 1e-6;

struct HeadSample {
    Mat mean;     // K x B
    Mat log_std;  // clamped
    Mat clamped;  // 1 where the clamp was active (zero gradient)
    Mat u;        // pre-squash draw
    Mat action;   // tanh(u)
    Vec log_prob; // per sample
};

// Splits the policy head into mean/log-std, applies the reparameterized
// draw u = mean + std*eps and the tanh squash, and accumulates the
// log-density with the squash correction.
HeadSample head_sample(const Mat& head, const Mat& noise, double lo, double hi) {
    const int k = static_cast<int>(head.rows()) / 2;
    const int b = static_cast<int>(head.cols());
    HeadSample hs;
    hs.mean = head.topRows(k);
    hs.log_std = head.bottomRows(k);
    hs.clamped = Mat::Zero(k, b);
    for (int j = 0; j < b; ++j)
        for (int i = 0; i < k; ++i) {
            double& v = hs.log_std(i, j);
            if (v < lo) { v = lo; hs.clamped(i, j) = 1.0; }
            else if (v > hi) { v = hi; hs.clamped(i, j) = 1.0; }
        }
    const Mat std = hs.log_std.array().exp().matrix();
    hs.u = hs.mean + std.cwiseProduct(noise);
    hs.action = hs.u.array().tanh().matrix();
    hs.log_prob = Vec::Zero(b);
    for (int j = 0; j < b; ++j) {
        double lp = 0.0;
        for (int i = 0; i < k; ++i) {
            const double eps = noise(i, j);
            lp += -0.5 * kLogTwoPi - hs.log_std(i, j) - 0.5 * eps * eps;
            const double a = hs.action(i, j);
            lp -= std::log(1.0 - a * a + kSquashEps);
        }
        hs.log_prob(j) = lp;
    }
    return hs;
}

Mat critic_input(const Mat& obs, const Mat& act) {
    Mat x(obs.rows() + act.rows(), obs.cols());
    x.topRows(obs.rows()) = obs;
    x.bottomRows(act.rows()) = act;
    return x;
}

}  // namespace

void SacConfig::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("sac: gamma must be in (0,1]");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("sac: tau must be in (0,1]");
    if (alpha < 0.0) throw ConfigError("sac: alpha must be >= 0");
    if (batch_size < 1 || buffer_capacity < batch_size)
        throw ConfigError("sac: buffer must hold at least one batch");
}

// ---------------------------------------------------------------------------
// PerBuffer

PerBuffer::PerBuffer(int capacity, double per_alpha)
    : capacity_(capacity), per_alpha_(per_alpha) {
    if (capacity < 1) throw ConfigError("per: capacity must be positive");
    leaf_base_ = 1;
    while (leaf_base_ < capacity) leaf_base_ *= 2;
    tree_.assign(static_cast<std::size_t>(2 * leaf_base_), 0.0);
    raw_priority_.assign(static_cast<std::size_t>(capacity), 0.0);
    store_.resize(static_cast<std::size_t>(capacity));
}

void PerBuffer::set_leaf(int index, double value) {
    int node = leaf_base_ + index;
    tree_[static_cast<std::size_t>(node)] = value;
    node /= 2;
    while (node >= 1) {
        tree_[static_cast<std::size_t>(node)] =
            tree_[static_cast<std::size_t>(2 * node)] +
            tree_[static_cast<std::size_t>(2 * node + 1)];
        node /= 2;
    }
}

int PerBuffer::find_prefix(double mass) const {
    int node = 1;
    while (node < leaf_base_) {
        const double left = tree_[static_cast<std::size_t>(2 * node)];
        if (mass <= left || tree_[static_cast<std::size_t>(2 * node + 1)] <= 0.0) {
            node = 2 * node;
        } else {
            mass -= left;
            node = 2 * node + 1;
        }
    }
    int idx = node - leaf_base_;
    return std::min(idx, size_ - 1);
}

void PerBuffer::insert(Transition t) {
    store_[static_cast<std::size_t>(next_)] = std::move(t);
    raw_priority_[static_cast<std::size_t>(next_)] = max_raw_priority_;
    set_leaf(next_, std::pow(max_raw_priority_, per_alpha_));
    next_ = (next_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
}

void PerBuffer::update_priorities(const std::vector<int>& indices, const Vec& abs_td) {
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const double p = abs_td(static_cast<int>(i)) + 1e-6;
        raw_priority_[static_cast<std::size_t>(indices[i])] = p;
        max_raw_priority_ = std::max(max_raw_priority_, p);
        set_leaf(indices[i], std::pow(p, per_alpha_));
    }
}

double PerBuffer::sampling_probability(int index) const {
    const double total = tree_[1];
    if (total <= 0.0) return 0.0;
    return tree_[static_cast<std::size_t>(leaf_base_ + index)] / total;
}

PerBuffer::Batch PerBuffer::sample(int batch_size, double beta, Rng& rng) const {
    if (size_ < batch_size)
        throw ContractError("per: buffer holds " + std::to_string(size_) +
                            " transitions, need " + std::to_string(batch_size));
    Batch batch;
    batch.indices.reserve(static_cast<std::size_t>(batch_size));
    batch.items.reserve(static_cast<std::size_t>(batch_size));
    batch.weights = Vec::Zero(batch_size);

    const double total = tree_[1];
    const double segment = total / batch_size;
    for (int i = 0; i < batch_size; ++i) {
        const double mass = (i + rng.uniform()) * segment;
        const int idx = find_prefix(mass);
        batch.indices.push_back(idx);
        batch.items.push_back(&store_[static_cast<std::size_t>(idx)]);
        const double prob = sampling_probability(idx);
        batch.weights(i) = std::pow(static_cast<double>(size_) * prob, -beta);
    }
    const double wmax = batch.weights.maxCoeff();
    if (wmax > 0.0) batch.weights /= wmax;
    return batch;
}

void PerBuffer::save(Checkpoint& c, const std::string& prefix) const {
    c.put_int(prefix + ".size", size_);
    c.put_int(prefix + ".next", next_);
    c.put_int(prefix + ".capacity", capacity_);
    c.put_scalar(prefix + ".max_raw", max_raw_priority_);
    if (size_ == 0) return;
    const int od = static_cast<int>(store_[0].s.size());
    const int ad = static_cast<int>(store_[0].a.size());
    Mat s(od, size_), s2(od, size_), a(ad, size_);
    Vec r(size_), done(size_), prio(size_);
    for (int i = 0; i < size_; ++i) {
        s.col(i) = store_[static_cast<std::size_t>(i)].s;
        s2.col(i) = store_[static_cast<std::size_t>(i)].s2;
        a.col(i) = store_[static_cast<std::size_t>(i)].a;
        r(i) = store_[static_cast<std::size_t>(i)].r;
        done(i) = store_[static_cast<std::size_t>(i)].done ? 1.0 : 0.0;
        prio(i) = raw_priority_[static_cast<std::size_t>(i)];
    }
    c.put_mat(prefix + ".s", s);
    c.put_mat(prefix + ".s2", s2);
    c.put_mat(prefix + ".a", a);
    c.put_vec(prefix + ".r", r);
    c.put_vec(prefix + ".done", done);
    c.put_vec(prefix + ".prio", prio);
}

void PerBuffer::load(const Checkpoint& c, const std::string& prefix) {
    const int cap = static_cast<int>(c.get_int(prefix + ".capacity"));
    *this = PerBuffer(cap, per_alpha_);
    size_ = static_cast<int>(c.get_int(prefix + ".size"));
    next_ = static_cast<int>(c.get_int(prefix + ".next"));
    max_raw_priority_ = c.get_scalar(prefix + ".max_raw");
    if (size_ == 0) return;
    const Mat s = c.get_mat(prefix + ".s");
    const Mat s2 = c.get_mat(prefix + ".s2");
    const Mat a = c.get_mat(prefix + ".a");
    const Vec r = c.get_vec(prefix + ".r");
    const Vec done = c.get_vec(prefix + ".done");
    const Vec prio = c.get_vec(prefix + ".prio");
    for (int i = 0; i < size_; ++i) {
        Transition t;
        t.s = s.col(i);
        t.s2 = s2.col(i);
        t.a = a.col(i);
        t.r = r(i);
        t.done = done(i) != 0.0;
        store_[static_cast<std::size_t>(i)] = std::move(t);
        raw_priority_[static_cast<std::size_t>(i)] = prio(i);
        set_leaf(i, std::pow(prio(i), per_alpha_));
    }
}

// ---------------------------------------------------------------------------
// policy head

PolicySample sample_action(const MlpParams& policy, const Vec& obs, bool stochastic,
                           Rng& rng, double logstd_min, double logstd_max) {
    const Mat head = mlp_forward(policy, Mat(obs));
    if (!head.allFinite()) throw NumericalError("policy: non-finite head output");
    const int k = static_cast<int>(head.rows()) / 2;
    Mat noise = Mat::Zero(k, 1);
    if (stochastic)
        for (int i = 0; i < k; ++i) noise(i, 0) = rng.normal();
    const HeadSample hs = head_sample(head, noise, logstd_min, logstd_max);
    PolicySample out;
    if (stochastic) {
        out.action = hs.action.col(0);
        out.log_prob = hs.log_prob(0);
    } else {
        out.action = hs.mean.array().tanh().matrix().col(0);
        out.log_prob = 0.0;
    }
    return out;
}

double q_target(double r, const Vec& s2, bool done, const MlpParams& target_q1,
                const MlpParams& target_q2, const MlpParams& policy, double alpha,
                double gamma, Rng& rng) {
    if (done || gamma == 0.0) return r;
    const PolicySample ps = sample_action(policy, s2, true, rng);
    Vec x(s2.size() + ps.action.size());
    x << s2, ps.action;
    const double v1 = mlp_forward_vec(target_q1, x)(0);
    const double v2 = mlp_forward_vec(target_q2, x)(0);
    return r + gamma * (std::min(v1, v2) - alpha * ps.log_prob);
}

// ---------------------------------------------------------------------------
// agent

SacAgent::SacAgent(int obs_dim, int act_dim, SacConfig cfg, Rng& rng)
    : cfg_(cfg),
      obs_dim_(obs_dim),
      act_dim_(act_dim),
      buffer_(cfg.buffer_capacity, cfg.per_alpha) {
    cfg_.validate();
    const std::vector<Act> acts = {Act::relu, Act::relu, Act::identity};
    actor_ = init_mlp({obs_dim, cfg_.hidden, cfg_.hidden, 2 * act_dim}, acts, rng, 1e-3);
    q1_ = init_mlp({obs_dim + act_dim, cfg_.hidden, cfg_.hidden, 1}, acts, rng);
    q2_ = init_mlp({obs_dim + act_dim, cfg_.hidden, cfg_.hidden, 1}, acts, rng);
    tq1_ = q1_;
    tq2_ = q2_;
    opt_actor_ = AdamState::like(actor_, cfg_.lr_actor, cfg_.weight_decay);
    opt_q1_ = AdamState::like(q1_, cfg_.lr_critic, cfg_.weight_decay);
    opt_q2_ = AdamState::like(q2_, cfg_.lr_critic, cfg_.weight_decay);
    log_alpha_ = std::log(std::max(cfg_.alpha, 1e-8));
    obs_norm_.init(obs_dim);
    planned_updates_ = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(cfg_.episodes) * cfg_.steps_per_episode);
}

double SacAgent::alpha() const {
    return cfg_.auto_alpha ? std::exp(log_alpha_) : cfg_.alpha;
}

void SacAgent::observe(const Vec& raw_obs) { obs_norm_.update(raw_obs); }

Vec SacAgent::act(const Vec& raw_obs, bool stochastic, Rng& rng) const {
    const Vec z = obs_norm_.normalize(raw_obs);
    return sample_action(actor_, z, stochastic, rng, cfg_.logstd_min, cfg_.logstd_max)
        .action;
}

Mat SacAgent::normalized_obs_matrix(const std::vector<const Transition*>& batch,
                                    bool next) const {
    Mat m(obs_dim_, static_cast<int>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i)
        m.col(static_cast<int>(i)) = next ? batch[i]->s2 : batch[i]->s;
    return obs_norm_.normalize(m);
}

SacAgent::CriticUpdateResult SacAgent::critic_loss_and_grads(
    const std::vector<const Transition*>& batch, const Vec& weights, Rng& rng) const {
    const int b = static_cast<int>(batch.size());
    const Mat s = normalized_obs_matrix(batch, false);
    const Mat s2 = normalized_obs_matrix(batch, true);
    Mat a(act_dim_, b);
    Vec r(b), not_done(b);
    for (int i = 0; i < b; ++i) {
        a.col(i) = batch[static_cast<std::size_t>(i)]->a;
        r(i) = batch[static_cast<std::size_t>(i)]->r;
        not_done(i) = batch[static_cast<std::size_t>(i)]->done ? 0.0 : 1.0;
    }

    // fresh policy sample at s' for the entropy-regularized bootstrap
    Mat noise(act_dim_, b);
    for (int j = 0; j < b; ++j)
        for (int i = 0; i < act_dim_; ++i) noise(i, j) = rng.normal();
    const Mat head = mlp_forward(actor_, s2);
    const HeadSample hs = head_sample(head, noise, cfg_.logstd_min, cfg_.logstd_max);

    const Mat xin2 = critic_input(s2, hs.action);
    const Vec tv1 = mlp_forward(tq1_, xin2).row(0).transpose();
    const Vec tv2 = mlp_forward(tq2_, xin2).row(0).transpose();
    const double alpha_now = alpha();
    Vec target(b);
    for (int i = 0; i < b; ++i)
        target(i) = r(i) + cfg_.gamma * not_done(i) *
                               (std::min(tv1(i), tv2(i)) - alpha_now * hs.log_prob(i));

    const Mat xin = critic_input(s, a);
    CriticUpdateResult res;
    ForwardCache c1, c2;
    const Vec qv1 = mlp_forward(q1_, xin, &c1).row(0).transpose();
    const Vec qv2 = mlp_forward(q2_, xin, &c2).row(0).transpose();
    const Vec td1 = qv1 - target;
    const Vec td2 = qv2 - target;
    res.loss1 = 0.5 * (weights.cwiseProduct(td1.cwiseProduct(td1))).mean();
    res.loss2 = 0.5 * (weights.cwiseProduct(td2.cwiseProduct(td2))).mean();
    const Mat gy1 = (weights.cwiseProduct(td1) / b).transpose();
    const Mat gy2 = (weights.cwiseProduct(td2) / b).transpose();
    res.grads1 = mlp_backward(q1_, c1, gy1);
    res.grads2 = mlp_backward(q2_, c2, gy2);
    res.abs_td = 0.5 * (td1.cwiseAbs() + td2.cwiseAbs());
    return res;
}

SacAgent::ActorUpdateResult SacAgent::actor_loss_and_grads(
    const std::vector<const Transition*>& batch, const Mat& noise) const {
    const int b = static_cast<int>(batch.size());
    const Mat s = normalized_obs_matrix(batch, false);

    ForwardCache actor_cache;
    const Mat head = mlp_forward(actor_, s, &actor_cache);
    const HeadSample hs = head_sample(head, noise, cfg_.logstd_min, cfg_.logstd_max);
    const double alpha_now = alpha();

    // min-twin critic value of the reparameterized action
    const Mat xin = critic_input(s, hs.action);
    ForwardCache qc1, qc2;
    const Vec v1 = mlp_forward(q1_, xin, &qc1).row(0).transpose();
    const Vec v2 = mlp_forward(q2_, xin, &qc2).row(0).transpose();

    ActorUpdateResult res;
    double loss = 0.0;
    for (int i = 0; i < b; ++i)
        loss += alpha_now * hs.log_prob(i) - std::min(v1(i), v2(i));
    res.loss = loss / b;
    res.mean_log_prob = hs.log_prob.mean();

    // dQmin/da via the critic input gradients, masked per-sample by argmin
    Mat mask1(1, b), mask2(1, b);
    for (int i = 0; i < b; ++i) {
        const bool first = v1(i) <= v2(i);
        mask1(0, i) = first ? 1.0 : 0.0;
        mask2(0, i) = first ? 0.0 : 1.0;
    }
    Mat dx1, dx2;
    mlp_backward(q1_, qc1, mask1, &dx1);
    mlp_backward(q2_, qc2, mask2, &dx2);
    const Mat dq_da = dx1.bottomRows(act_dim_) + dx2.bottomRows(act_dim_);

    // gradient on the policy head, mean slots then log-std slots
    const Mat std = hs.log_std.array().exp().matrix();
    Mat ghead = Mat::Zero(2 * act_dim_, b);
    for (int j = 0; j < b; ++j) {
        for (int i = 0; i < act_dim_; ++i) {
            const double aij = hs.action(i, j);
            const double one_m_a2 = 1.0 - aij * aij;
            const double squash = 2.0 * aij * one_m_a2 / (one_m_a2 + kSquashEps);
            const double du = alpha_now * squash - dq_da(i, j) * one_m_a2;
            ghead(i, j) = du / b;
            double glog = du * std(i, j) * noise(i, j) - alpha_now;
            if (hs.clamped(i, j) != 0.0) glog = 0.0;
            ghead(act_dim_ + i, j) = glog / b;
        }
    }
    res.grads = mlp_backward(actor_, actor_cache, ghead);
    return res;
}

SacAgent::UpdateStats SacAgent::update(Rng& rng) {
    UpdateStats stats;
    const double progress =
        std::min(1.0, static_cast<double>(updates_done_) / planned_updates_);
    const double beta = cfg_.per_beta_start +
                        (cfg_.per_beta_end - cfg_.per_beta_start) * progress;
    auto batch = buffer_.sample(cfg_.batch_size, beta, rng);

    try {
        auto cres = critic_loss_and_grads(batch.items, batch.weights, rng);
        if (!std::isfinite(cres.loss1) || !std::isfinite(cres.loss2))
            throw NumericalError("sac: non-finite critic loss");
        adam_step(opt_q1_, q1_, cres.grads1);
        adam_step(opt_q2_, q2_, cres.grads2);
        buffer_.update_priorities(batch.indices, cres.abs_td);
        stats.q1_loss = cres.loss1;
        stats.q2_loss = cres.loss2;

        Mat noise(act_dim_, cfg_.batch_size);
        for (int j = 0; j < cfg_.batch_size; ++j)
            for (int i = 0; i < act_dim_; ++i) noise(i, j) = rng.normal();
        auto ares = actor_loss_and_grads(batch.items, noise);
        if (!std::isfinite(ares.loss)) throw NumericalError("sac: non-finite actor loss");
        adam_step(opt_actor_, actor_, ares.grads);
        stats.pi_loss = ares.loss;

        if (cfg_.auto_alpha) {
            // one Adam step on log_alpha toward entropy target -act_dim
            const double target_entropy = -static_cast<double>(act_dim_);
            const double g = -(ares.mean_log_prob + target_entropy);
            alpha_steps_ += 1;
            alpha_m_ = 0.9 * alpha_m_ + 0.1 * g;
            alpha_v_ = 0.999 * alpha_v_ + 0.001 * g * g;
            const double mhat = alpha_m_ / (1.0 - std::pow(0.9, static_cast<double>(alpha_steps_)));
            const double vhat = alpha_v_ / (1.0 - std::pow(0.999, static_cast<double>(alpha_steps_)));
            log_alpha_ -= cfg_.alpha_lr * mhat / (std::sqrt(vhat) + 1e-8);
        }

        polyak_update(tq1_, q1_, cfg_.tau);
        polyak_update(tq2_, q2_, cfg_.tau);
    } catch (const NumericalError&) {
        stats.skipped = true;
    }
    stats.alpha = alpha();
    updates_done_ += 1;
    return stats;
}

void SacAgent::save(Checkpoint& c, const std::string& prefix, bool include_buffer) const {
    c.put_mlp(prefix + ".actor", actor_);
    c.put_mlp(prefix + ".q1", q1_);
    c.put_mlp(prefix + ".q2", q2_);
    c.put_mlp(prefix + ".tq1", tq1_);
    c.put_mlp(prefix + ".tq2", tq2_);
    c.put_adam(prefix + ".opt_actor", opt_actor_);
    c.put_adam(prefix + ".opt_q1", opt_q1_);
    c.put_adam(prefix + ".opt_q2", opt_q2_);
    c.put_norm(prefix + ".obs_norm", obs_norm_);
    c.put_scalar(prefix + ".log_alpha", log_alpha_);
    c.put_scalar(prefix + ".alpha_m", alpha_m_);
    c.put_scalar(prefix + ".alpha_v", alpha_v_);
    c.put_int(prefix + ".alpha_steps", alpha_steps_);
    c.put_int(prefix + ".updates_done", updates_done_);
    c.put_int(prefix + ".planned_updates", planned_updates_);
    c.put_int(prefix + ".has_buffer", include_buffer ? 1 : 0);
    if (include_buffer) buffer_.save(c, prefix + ".buffer");
}

void SacAgent::load(const Checkpoint& c, const std::string& prefix) {
    actor_ = c.get_mlp(prefix + ".actor");
    q1_ = c.get_mlp(prefix + ".q1");
    q2_ = c.get_mlp(prefix + ".q2");
    tq1_ = c.get_mlp(prefix + ".tq1");
    tq2_ = c.get_mlp(prefix + ".tq2");
    opt_actor_ = c.get_adam(prefix + ".opt_actor", actor_);
    opt_q1_ = c.get_adam(prefix + ".opt_q1", q1_);
    opt_q2_ = c.get_adam(prefix + ".opt_q2", q2_);
    obs_norm_ = c.get_norm(prefix + ".obs_norm");
    log_alpha_ = c.get_scalar(prefix + ".log_alpha");
    alpha_m_ = c.get_scalar(prefix + ".alpha_m");
    alpha_v_ = c.get_scalar(prefix + ".alpha_v");
    alpha_steps_ = c.get_int(prefix + ".alpha_steps");
    updates_done_ = c.get_int(prefix + ".updates_done");
    planned_updates_ = c.get_int(prefix + ".planned_updates");
    if (c.get_int(prefix + ".has_buffer") != 0) buffer_.load(c, prefix + ".buffer");
}

}  // namespace sa2co
