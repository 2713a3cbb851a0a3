#include "sa2co/guard.hpp"

#include <algorithm>
#include <cmath>

#include "sa2co/csv.hpp"

namespace sa2co {

void HighRiskSet::validate(int bus_count) const {
    if (buses.empty()) throw ConfigError("high-risk set must be nonempty");
    for (int b : buses)
        if (b < 0 || b >= bus_count)
            throw ConfigError("high-risk bus " + std::to_string(b + 1) + " out of range");
}

HighRiskSet default_high_risk_33() {
    HighRiskSet s;
    for (int b : {12, 13, 14, 15, 16, 17, 18, 29, 30, 31, 32, 33})
        s.buses.push_back(b - 1);
    return s;
}

Vec GuardModel::predict(const Vec& features) const {
    return mlp_forward_vec(net, feature_norm.normalize(features));
}

void GuardModel::save(Checkpoint& c, const std::string& prefix) const {
    c.put_mlp(prefix + ".net", net);
    c.put_norm(prefix + ".feat_norm", feature_norm);
    Vec risk_v(static_cast<int>(risk.buses.size()));
    for (std::size_t i = 0; i < risk.buses.size(); ++i)
        risk_v(static_cast<int>(i)) = risk.buses[i];
    c.put_vec(prefix + ".risk", risk_v);
    c.put_scalar(prefix + ".margin", margin);
    c.put_int(prefix + ".ready", ready ? 1 : 0);
    c.put_scalar(prefix + ".running_avg_loss", running_avg_loss);
}

void GuardModel::load(const Checkpoint& c, const std::string& prefix) {
    net = c.get_mlp(prefix + ".net");
    feature_norm = c.get_norm(prefix + ".feat_norm");
    const Vec risk_v = c.get_vec(prefix + ".risk");
    risk.buses.clear();
    for (int i = 0; i < risk_v.size(); ++i)
        risk.buses.push_back(static_cast<int>(risk_v(i)));
    margin = c.get_scalar(prefix + ".margin");
    ready = c.get_int(prefix + ".ready") != 0;
    running_avg_loss = c.get_scalar(prefix + ".running_avg_loss");
}

Vec guard_featurize(const NetworkModel& net, const ProfileSet& profiles,
                    const DeviceSet& devices, const std::vector<double>& action_kw,
                    std::size_t t) {
    const auto inj = net_injections(net, profiles, devices, action_kw, t);
    Vec features(2 * net.bus_count);
    features.head(net.bus_count) = inj.p;
    features.tail(net.bus_count) = inj.q;
    return features;
}

double guard_loss(const Vec& predicted, const Vec& label) {
    if (predicted.size() != label.size())
        throw ShapeError("guard_loss: prediction/label size mismatch");
    const double mse = (predicted - label).squaredNorm() / predicted.size();
    return std::sqrt(mse);
}

GuardAssessment predict_and_assess(const GuardModel& model, const Vec& features,
                                   const VoltageLimits& limits) {
    if (!model.ready)
        throw ReadinessError("guard: model is not ready; screen with exact power flow");
    GuardAssessment out;
    out.predicted = model.predict(features);
    out.safe = true;
    for (int i = 0; i < out.predicted.size(); ++i) {
        const double v = out.predicted(i);
        if (v < limits.lower + model.margin || v > limits.upper - model.margin) {
            out.safe = false;
            break;
        }
    }
    return out;
}

namespace {

// mean-over-batch of per-sample RMSE; gradient w.r.t. predictions
double batch_loss_and_grad(const Mat& pred, const Mat& labels, Mat* grad) {
    const int b = static_cast<int>(pred.cols());
    const int k = static_cast<int>(pred.rows());
    if (grad) *grad = Mat::Zero(k, b);
    double total = 0.0;
    for (int j = 0; j < b; ++j) {
        const Vec diff = pred.col(j) - labels.col(j);
        const double rmse = std::sqrt(diff.squaredNorm() / k + 1e-12);
        total += rmse;
        if (grad) grad->col(j) = diff / (k * rmse * b);
    }
    return total / b;
}

MlpParams make_guard_net(int feature_dim, int out_dim, int hidden, Rng& rng) {
    auto net = init_mlp({feature_dim, hidden, hidden, out_dim},
                        {Act::relu, Act::relu, Act::identity}, rng);
    net.biases.back().setConstant(1.0);  // start at the nominal voltage
    return net;
}

}  // namespace

GuardTrainer::GuardTrainer(GuardConfig cfg, int feature_dim, HighRiskSet risk, Rng& rng)
    : cfg_(cfg) {
    model_.net = make_guard_net(feature_dim, static_cast<int>(risk.buses.size()),
                                cfg.hidden, rng);
    model_.feature_norm.init(feature_dim);
    model_.risk = std::move(risk);
    model_.margin = cfg.margin;
    opt_ = AdamState::like(model_.net, cfg.lr, cfg.weight_decay);
}

double GuardTrainer::add_labeled_sample(const Vec& features, const Vec& labels) {
    const double fresh = guard_loss(model_.predict(features), labels);
    window_.push_back(fresh);
    window_sum_ += fresh;
    while (static_cast<int>(window_.size()) > cfg_.readiness_window) {
        window_sum_ -= window_.front();
        window_.pop_front();
    }
    model_.feature_norm.update(features);
    if (static_cast<int>(xs_.size()) < cfg_.max_dataset) {
        xs_.push_back(features);
        ys_.push_back(labels);
    } else {
        const std::size_t slot = static_cast<std::size_t>(samples_seen_) %
                                 static_cast<std::size_t>(cfg_.max_dataset);
        xs_[slot] = features;
        ys_[slot] = labels;
    }
    samples_seen_ += 1;
    model_.running_avg_loss = window_average();
    return fresh;
}

double GuardTrainer::window_average() const {
    if (window_.empty()) return 1e9;
    return window_sum_ / static_cast<double>(window_.size());
}

void GuardTrainer::train_minibatches(int count, Rng& rng) {
    if (model_.ready) return;  // frozen
    const int n = static_cast<int>(xs_.size());
    if (n == 0) return;
    const int b = std::min(cfg_.batch_size, n);
    const int fdim = static_cast<int>(xs_[0].size());
    const int odim = static_cast<int>(ys_[0].size());
    Mat x(fdim, b), y(odim, b);
    for (int c = 0; c < count; ++c) {
        for (int j = 0; j < b; ++j) {
            const std::size_t pick = rng.index(static_cast<std::size_t>(n));
            x.col(j) = xs_[pick];
            y.col(j) = ys_[pick];
        }
        ForwardCache cache;
        const Mat pred = mlp_forward(model_.net, model_.feature_norm.normalize(x), &cache);
        Mat grad;
        batch_loss_and_grad(pred, y, &grad);
        auto grads = mlp_backward(model_.net, cache, grad);
        adam_step(opt_, model_.net, grads);
    }
}

bool GuardTrainer::maybe_freeze() {
    if (model_.ready) return true;
    if (static_cast<int>(window_.size()) < cfg_.readiness_window) return false;
    if (samples_seen_ < cfg_.min_samples) return false;
    if (window_average() >= cfg_.readiness_threshold) return false;
    model_.ready = true;
    return true;
}

void GuardTrainer::save(Checkpoint& c, const std::string& prefix) const {
    model_.save(c, prefix + ".model");
    c.put_adam(prefix + ".opt", opt_);
    c.put_int(prefix + ".samples_seen", samples_seen_);
    Vec w(static_cast<int>(window_.size()));
    for (std::size_t i = 0; i < window_.size(); ++i) w(static_cast<int>(i)) = window_[i];
    c.put_vec(prefix + ".window", w);
    const int n = static_cast<int>(xs_.size());
    c.put_int(prefix + ".dataset_size", n);
    if (n > 0) {
        Mat x(xs_[0].size(), n), y(ys_[0].size(), n);
        for (int i = 0; i < n; ++i) {
            x.col(i) = xs_[static_cast<std::size_t>(i)];
            y.col(i) = ys_[static_cast<std::size_t>(i)];
        }
        c.put_mat(prefix + ".xs", x);
        c.put_mat(prefix + ".ys", y);
    }
}

void GuardTrainer::load(const Checkpoint& c, const std::string& prefix) {
    model_.load(c, prefix + ".model");
    opt_ = c.get_adam(prefix + ".opt", model_.net);
    samples_seen_ = c.get_int(prefix + ".samples_seen");
    const Vec w = c.get_vec(prefix + ".window");
    window_.clear();
    window_sum_ = 0.0;
    for (int i = 0; i < w.size(); ++i) {
        window_.push_back(w(i));
        window_sum_ += w(i);
    }
    xs_.clear();
    ys_.clear();
    const int n = static_cast<int>(c.get_int(prefix + ".dataset_size"));
    if (n > 0) {
        const Mat x = c.get_mat(prefix + ".xs");
        const Mat y = c.get_mat(prefix + ".ys");
        for (int i = 0; i < n; ++i) {
            xs_.push_back(x.col(i));
            ys_.push_back(y.col(i));
        }
    }
}

GuardTrainReport train_guard(GuardModel& model, const std::vector<GuardSample>& samples,
                             const GuardConfig& cfg, int epochs, Rng& rng) {
    if (samples.empty()) throw ConfigError("train_guard: no samples");
    if (model.net.layer_count() == 0) {
        model.net = make_guard_net(static_cast<int>(samples[0].features.size()),
                                   static_cast<int>(samples[0].labels.size()),
                                   cfg.hidden, rng);
        model.margin = cfg.margin;
    }
    if (model.feature_norm.count < 2.0)
        for (const auto& s : samples) model.feature_norm.update(s.features);

    AdamState opt = AdamState::like(model.net, cfg.lr, cfg.weight_decay);
    const int n = static_cast<int>(samples.size());
    const int b = std::min(cfg.batch_size, n);
    const int fdim = static_cast<int>(samples[0].features.size());
    const int odim = static_cast<int>(samples[0].labels.size());

    GuardTrainReport report;
    double initial_loss = -1.0;
    int bad_epochs = 0;
    Mat x(fdim, b), y(odim, b);
    for (int e = 0; e < epochs; ++e) {
        const int batches = std::max(1, n / b);
        double epoch_loss = 0.0;
        for (int it = 0; it < batches; ++it) {
            for (int j = 0; j < b; ++j) {
                const auto& s = samples[rng.index(static_cast<std::size_t>(n))];
                x.col(j) = s.features;
                y.col(j) = s.labels;
            }
            ForwardCache cache;
            const Mat pred = mlp_forward(model.net, model.feature_norm.normalize(x), &cache);
            Mat grad;
            epoch_loss += batch_loss_and_grad(pred, y, &grad);
            auto grads = mlp_backward(model.net, cache, grad);
            adam_step(opt, model.net, grads);
        }
        epoch_loss /= batches;
        if (initial_loss < 0.0) initial_loss = epoch_loss;
        report.epoch_loss.push_back(epoch_loss);
        bad_epochs = epoch_loss > 10.0 * initial_loss ? bad_epochs + 1 : 0;
        if (bad_epochs >= 5)
            throw NumericalError("train_guard: diverged (loss above 10x initial for 5 epochs)");
    }
    report.final_loss = report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back();
    model.running_avg_loss = report.final_loss;
    if (report.final_loss < cfg.readiness_threshold) model.ready = true;
    return report;
}

std::vector<GuardEvalRow> evaluate_guard(const GuardModel& model,
                                         const std::vector<GuardSample>& samples,
                                         const std::string& csv_path) {
    std::vector<GuardEvalRow> rows;
    rows.reserve(samples.size());
    for (const auto& s : samples) {
        const Vec pred = model.predict(s.features);
        GuardEvalRow r;
        r.rmse = guard_loss(pred, s.labels);
        r.max_abs_err = (pred - s.labels).cwiseAbs().maxCoeff();
        rows.push_back(r);
    }
    if (!csv_path.empty()) {
        csv::Writer w(csv_path);
        w.row({"sample", "rmse", "max_abs_err"});
        for (std::size_t i = 0; i < rows.size(); ++i)
            w.row({std::to_string(i), csv::format_double(rows[i].rmse),
                   csv::format_double(rows[i].max_abs_err)});
    }
    return rows;
}

}  // namespace sa2co
