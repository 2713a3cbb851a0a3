#include "sa2co/nn.hpp"

#include <cmath>

namespace sa2co {

namespace {

Mat apply_act(Act a, const Mat& z) {
    switch (a) {
        case Act::relu:
            return z.cwiseMax(0.0);
        case Act::tanh_fn:
            return z.array().tanh().matrix();
        case Act::identity:
            return z;
    }
    return z;
}

// derivative expressed through pre-activation z and activated value y
Mat act_grad(Act a, const Mat& z, const Mat& y) {
    switch (a) {
        case Act::relu:
            return (z.array() > 0.0).cast<double>().matrix();
        case Act::tanh_fn:
            return (1.0 - y.array().square()).matrix();
        case Act::identity:
            return Mat::Ones(z.rows(), z.cols());
    }
    return Mat::Ones(z.rows(), z.cols());
}

}  // namespace

std::size_t MlpParams::param_count() const {
    std::size_t n = 0;
    for (int l = 0; l < layer_count(); ++l)
        n += static_cast<std::size_t>(weights[l].size()) +
             static_cast<std::size_t>(biases[l].size());
    return n;
}

bool MlpParams::all_finite() const {
    for (int l = 0; l < layer_count(); ++l)
        if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    return true;
}

MlpParams init_mlp(const std::vector<int>& sizes, const std::vector<Act>& activations,
                   Rng& rng, double final_scale) {
    if (sizes.size() < 2) throw ShapeError("mlp: need at least input and output sizes");
    if (activations.size() != sizes.size() - 1)
        throw ShapeError("mlp: one activation per layer required");
    MlpParams p;
    p.sizes = sizes;
    p.activations = activations;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const int fan_in = sizes[l];
        const int fan_out = sizes[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        const double scale = (l + 2 == sizes.size()) ? final_scale : 1.0;
        Mat w(fan_out, fan_in);
        for (int i = 0; i < fan_out; ++i)
            for (int j = 0; j < fan_in; ++j)
                w(i, j) = scale * rng.uniform(-bound, bound);
        Vec b(fan_out);
        for (int i = 0; i < fan_out; ++i) b(i) = scale * rng.uniform(-bound, bound);
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    return p;
}

Mat mlp_forward(const MlpParams& params, const Mat& input, ForwardCache* cache) {
    if (input.rows() != params.input_dim())
        throw ShapeError("mlp_forward: input dim " + std::to_string(input.rows()) +
                         " != " + std::to_string(params.input_dim()));
    if (cache) {
        cache->input = input;
        cache->pre.clear();
        cache->post.clear();
    }
    Mat x = input;
    for (int l = 0; l < params.layer_count(); ++l) {
        Mat z = params.weights[l] * x;
        z.colwise() += params.biases[l];
        Mat y = apply_act(params.activations[l], z);
        if (cache) {
            cache->pre.push_back(z);
            cache->post.push_back(y);
        }
        x = std::move(y);
    }
    return x;
}

Vec mlp_forward_vec(const MlpParams& params, const Vec& input) {
    return mlp_forward(params, Mat(input)).col(0);
}

MlpGrads MlpGrads::zeros_like(const MlpParams& params) {
    MlpGrads g;
    for (int l = 0; l < params.layer_count(); ++l) {
        g.d_weights.emplace_back(Mat::Zero(params.weights[l].rows(), params.weights[l].cols()));
        g.d_biases.emplace_back(Vec::Zero(params.biases[l].size()));
    }
    return g;
}

void MlpGrads::accumulate(const MlpGrads& other, double scale) {
    for (std::size_t l = 0; l < d_weights.size(); ++l) {
        d_weights[l] += scale * other.d_weights[l];
        d_biases[l] += scale * other.d_biases[l];
    }
}

bool MlpGrads::all_finite() const {
    for (std::size_t l = 0; l < d_weights.size(); ++l)
        if (!d_weights[l].allFinite() || !d_biases[l].allFinite()) return false;
    return true;
}

MlpGrads mlp_backward(const MlpParams& params, const ForwardCache& cache,
                      const Mat& output_grad, Mat* input_grad) {
    const int layers = params.layer_count();
    if (static_cast<int>(cache.pre.size()) != layers)
        throw ContractError("mlp_backward: cache does not match network");
    if (output_grad.rows() != params.output_dim() ||
        output_grad.cols() != cache.input.cols())
        throw ShapeError("mlp_backward: output_grad shape mismatch");

    MlpGrads grads = MlpGrads::zeros_like(params);
    Mat delta = output_grad;
    for (int l = layers - 1; l >= 0; --l) {
        delta = delta.cwiseProduct(act_grad(params.activations[l], cache.pre[l], cache.post[l]));
        const Mat& below = (l == 0) ? cache.input : cache.post[l - 1];
        grads.d_weights[l] = delta * below.transpose();
        grads.d_biases[l] = delta.rowwise().sum();
        if (l > 0 || input_grad) {
            Mat next = params.weights[l].transpose() * delta;
            if (l == 0 && input_grad) *input_grad = std::move(next);
            else delta = std::move(next);
        }
    }
    return grads;
}

AdamState AdamState::like(const MlpParams& params, double lr, double weight_decay) {
    AdamState s;
    s.lr = lr;
    s.weight_decay = weight_decay;
    for (int l = 0; l < params.layer_count(); ++l) {
        s.m_w.emplace_back(Mat::Zero(params.weights[l].rows(), params.weights[l].cols()));
        s.v_w.emplace_back(Mat::Zero(params.weights[l].rows(), params.weights[l].cols()));
        s.m_b.emplace_back(Vec::Zero(params.biases[l].size()));
        s.v_b.emplace_back(Vec::Zero(params.biases[l].size()));
    }
    return s;
}

void adam_step(AdamState& state, MlpParams& params, const MlpGrads& grads) {
    if (!grads.all_finite())
        throw NumericalError("adam_step: non-finite gradient, update rejected (step " +
                             std::to_string(state.step) + ")");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        state.m_w[l] = state.beta1 * state.m_w[l] + (1.0 - state.beta1) * grads.d_weights[l];
        state.v_w[l] = state.beta2 * state.v_w[l] +
                       (1.0 - state.beta2) * grads.d_weights[l].cwiseProduct(grads.d_weights[l]);
        state.m_b[l] = state.beta1 * state.m_b[l] + (1.0 - state.beta1) * grads.d_biases[l];
        state.v_b[l] = state.beta2 * state.v_b[l] +
                       (1.0 - state.beta2) * grads.d_biases[l].cwiseProduct(grads.d_biases[l]);

        if (state.weight_decay != 0.0)
            params.weights[l] *= (1.0 - state.lr * state.weight_decay);

        params.weights[l].array() -=
            state.lr * (state.m_w[l].array() / bc1) /
            ((state.v_w[l].array() / bc2).sqrt() + state.eps);
        params.biases[l].array() -=
            state.lr * (state.m_b[l].array() / bc1) /
            ((state.v_b[l].array() / bc2).sqrt() + state.eps);
    }
}

void polyak_update(MlpParams& target, const MlpParams& online, double tau) {
    for (std::size_t l = 0; l < target.weights.size(); ++l) {
        target.weights[l] = tau * online.weights[l] + (1.0 - tau) * target.weights[l];
        target.biases[l] = tau * online.biases[l] + (1.0 - tau) * target.biases[l];
    }
}

void RunningNorm::init(int dim) {
    mean = Vec::Zero(dim);
    m2 = Vec::Zero(dim);
    count = 0.0;
}

void RunningNorm::update(const Vec& x) {
    if (mean.size() == 0) init(static_cast<int>(x.size()));
    count += 1.0;
    const Vec delta = x - mean;
    mean += delta / count;
    m2 += delta.cwiseProduct(x - mean);
}

Vec RunningNorm::variance() const {
    if (count < 2.0) return Vec::Ones(mean.size());
    return m2 / count;
}

Vec RunningNorm::normalize(const Vec& x) const {
    if (count < 2.0) return x;
    return (x - mean).cwiseQuotient((variance().array() + 1e-8).sqrt().matrix());
}

Mat RunningNorm::normalize(const Mat& x) const {
    if (count < 2.0) return x;
    const Vec stddev = (variance().array() + 1e-8).sqrt().matrix();
    Mat out = x.colwise() - mean;
    out.array().colwise() /= stddev.array();
    return out;
}

}  // namespace sa2co
