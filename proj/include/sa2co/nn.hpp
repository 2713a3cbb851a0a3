#pragma once

#include <cstdint>
#include <vector>

#include "sa2co/common.hpp"
#include "sa2co/rng.hpp"

namespace sa2co {

enum class Act { relu, tanh_fn, identity };

/// Dense network parameters. Batched data is column-major: one sample per
/// column.
struct MlpParams {
    std::vector<int> sizes;  // [input, hidden..., output]
    std::vector<Mat> weights;
    std::vector<Vec> biases;
    std::vector<Act> activations;  // one per layer

    int layer_count() const { return static_cast<int>(weights.size()); }
    int input_dim() const { return sizes.front(); }
    int output_dim() const { return sizes.back(); }
    std::size_t param_count() const;
    bool all_finite() const;
};

/// Uniform fan-in initialization; the final layer is scaled by
/// `final_scale` (policy heads start near zero).
MlpParams init_mlp(const std::vector<int>& sizes, const std::vector<Act>& activations,
                   Rng& rng, double final_scale = 1.0);

struct ForwardCache {
    Mat input;
    std::vector<Mat> pre;   // pre-activation per layer
    std::vector<Mat> post;  // activated output per layer
};

Mat mlp_forward(const MlpParams& params, const Mat& input, ForwardCache* cache = nullptr);
Vec mlp_forward_vec(const MlpParams& params, const Vec& input);

struct MlpGrads {
    std::vector<Mat> d_weights;
    std::vector<Vec> d_biases;

    static MlpGrads zeros_like(const MlpParams& params);
    void accumulate(const MlpGrads& other, double scale = 1.0);
    bool all_finite() const;
};

/// Exact reverse-mode gradients for the cached forward pass. `output_grad`
/// is dL/dy with one column per sample; gradients are summed over the
/// batch. Optionally returns dL/dx.
MlpGrads mlp_backward(const MlpParams& params, const ForwardCache& cache,
                      const Mat& output_grad, Mat* input_grad = nullptr);

struct AdamState {
    std::vector<Mat> m_w, v_w;
    std::vector<Vec> m_b, v_b;
    std::int64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled

    static AdamState like(const MlpParams& params, double lr, double weight_decay = 0.0);
};

/// One Adam update with bias correction and decoupled weight decay.
/// Non-finite gradients raise NumericalError and leave params untouched.
void adam_step(AdamState& state, MlpParams& params, const MlpGrads& grads);

/// Polyak averaging: target <- tau * online + (1 - tau) * target.
void polyak_update(MlpParams& target, const MlpParams& online, double tau);

/// Welford running standardizer for observation vectors.
struct RunningNorm {
    Vec mean;
    Vec m2;
    double count = 0.0;

    void init(int dim);
    void update(const Vec& x);
    Vec variance() const;
    Vec normalize(const Vec& x) const;
    Mat normalize(const Mat& x) const;
};

}  // namespace sa2co
