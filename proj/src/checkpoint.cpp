#include "sa2co/checkpoint.hpp"

#include <fstream>
#include <memory>

#include <json.hpp>

namespace sa2co {

using nlohmann::json;

struct Checkpoint::Impl {
    json root;
};

namespace {

constexpr const char* kFormat = "sa2co-checkpoint";
constexpr int kVersion = 1;

const json& entry(const json& root, const std::string& name) {
    if (!root.contains("data") || !root["data"].contains(name))
        throw ConfigError("checkpoint: missing entry '" + name + "'");
    return root["data"][name];
}

}  // namespace

Checkpoint::Checkpoint() : impl_(std::make_shared<Impl>()) {
    impl_->root["format"] = kFormat;
    impl_->root["version"] = kVersion;
    impl_->root["data"] = json::object();
}

void Checkpoint::put_scalar(const std::string& name, double v) {
    impl_->root["data"][name] = {{"kind", "f64"}, {"value", v}};
}

void Checkpoint::put_int(const std::string& name, std::int64_t v) {
    impl_->root["data"][name] = {{"kind", "i64"}, {"value", v}};
}

void Checkpoint::put_string(const std::string& name, const std::string& v) {
    impl_->root["data"][name] = {{"kind", "str"}, {"value", v}};
}

void Checkpoint::put_vec(const std::string& name, const Vec& v) {
    std::vector<double> data(v.data(), v.data() + v.size());
    impl_->root["data"][name] = {{"kind", "vec"}, {"value", data}};
}

void Checkpoint::put_mat(const std::string& name, const Mat& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    impl_->root["data"][name] = {
        {"kind", "mat"}, {"rows", m.rows()}, {"cols", m.cols()}, {"value", data}};
}

double Checkpoint::get_scalar(const std::string& name) const {
    return entry(impl_->root, name).at("value").get<double>();
}

std::int64_t Checkpoint::get_int(const std::string& name) const {
    return entry(impl_->root, name).at("value").get<std::int64_t>();
}

std::string Checkpoint::get_string(const std::string& name) const {
    return entry(impl_->root, name).at("value").get<std::string>();
}

Vec Checkpoint::get_vec(const std::string& name) const {
    auto data = entry(impl_->root, name).at("value").get<std::vector<double>>();
    Vec v(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) v(static_cast<int>(i)) = data[i];
    return v;
}

Mat Checkpoint::get_mat(const std::string& name) const {
    const auto& e = entry(impl_->root, name);
    const int rows = e.at("rows").get<int>();
    const int cols = e.at("cols").get<int>();
    auto data = e.at("value").get<std::vector<double>>();
    if (static_cast<int>(data.size()) != rows * cols)
        throw ConfigError("checkpoint: corrupt matrix '" + name + "'");
    Mat m(rows, cols);
    std::size_t at = 0;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = data[at++];
    return m;
}

bool Checkpoint::has(const std::string& name) const {
    return impl_->root["data"].contains(name);
}

void Checkpoint::put_mlp(const std::string& prefix, const MlpParams& p) {
    std::vector<std::int64_t> sizes(p.sizes.begin(), p.sizes.end());
    impl_->root["data"][prefix + ".sizes"] = {{"kind", "i64s"}, {"value", sizes}};
    std::vector<int> acts;
    for (auto a : p.activations) acts.push_back(static_cast<int>(a));
    impl_->root["data"][prefix + ".acts"] = {{"kind", "i64s"}, {"value", acts}};
    for (int l = 0; l < p.layer_count(); ++l) {
        put_mat(prefix + ".w" + std::to_string(l), p.weights[l]);
        put_vec(prefix + ".b" + std::to_string(l), p.biases[l]);
    }
}

MlpParams Checkpoint::get_mlp(const std::string& prefix) const {
    MlpParams p;
    auto sizes = entry(impl_->root, prefix + ".sizes").at("value").get<std::vector<std::int64_t>>();
    for (auto s : sizes) p.sizes.push_back(static_cast<int>(s));
    auto acts = entry(impl_->root, prefix + ".acts").at("value").get<std::vector<int>>();
    for (auto a : acts) p.activations.push_back(static_cast<Act>(a));
    for (std::size_t l = 0; l + 1 < p.sizes.size(); ++l) {
        p.weights.push_back(get_mat(prefix + ".w" + std::to_string(l)));
        p.biases.push_back(get_vec(prefix + ".b" + std::to_string(l)));
    }
    return p;
}

void Checkpoint::put_adam(const std::string& prefix, const AdamState& s) {
    put_int(prefix + ".step", s.step);
    put_scalar(prefix + ".lr", s.lr);
    put_scalar(prefix + ".beta1", s.beta1);
    put_scalar(prefix + ".beta2", s.beta2);
    put_scalar(prefix + ".eps", s.eps);
    put_scalar(prefix + ".decay", s.weight_decay);
    for (std::size_t l = 0; l < s.m_w.size(); ++l) {
        put_mat(prefix + ".mw" + std::to_string(l), s.m_w[l]);
        put_mat(prefix + ".vw" + std::to_string(l), s.v_w[l]);
        put_vec(prefix + ".mb" + std::to_string(l), s.m_b[l]);
        put_vec(prefix + ".vb" + std::to_string(l), s.v_b[l]);
    }
}

AdamState Checkpoint::get_adam(const std::string& prefix, const MlpParams& shaped) const {
    AdamState s;
    s.step = get_int(prefix + ".step");
    s.lr = get_scalar(prefix + ".lr");
    s.beta1 = get_scalar(prefix + ".beta1");
    s.beta2 = get_scalar(prefix + ".beta2");
    s.eps = get_scalar(prefix + ".eps");
    s.weight_decay = get_scalar(prefix + ".decay");
    for (int l = 0; l < shaped.layer_count(); ++l) {
        s.m_w.push_back(get_mat(prefix + ".mw" + std::to_string(l)));
        s.v_w.push_back(get_mat(prefix + ".vw" + std::to_string(l)));
        s.m_b.push_back(get_vec(prefix + ".mb" + std::to_string(l)));
        s.v_b.push_back(get_vec(prefix + ".vb" + std::to_string(l)));
    }
    return s;
}

void Checkpoint::put_norm(const std::string& prefix, const RunningNorm& n) {
    put_vec(prefix + ".mean", n.mean);
    put_vec(prefix + ".m2", n.m2);
    put_scalar(prefix + ".count", n.count);
}

RunningNorm Checkpoint::get_norm(const std::string& prefix) const {
    RunningNorm n;
    n.mean = get_vec(prefix + ".mean");
    n.m2 = get_vec(prefix + ".m2");
    n.count = get_scalar(prefix + ".count");
    return n;
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw ConfigError("checkpoint: cannot write " + path);
    f << impl_->root.dump();
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("checkpoint: cannot open " + path);
    Checkpoint c;
    c.impl_->root = json::parse(f);
    if (c.impl_->root.value("format", "") != kFormat)
        throw ConfigError("checkpoint: unrecognized format in " + path);
    if (c.impl_->root.value("version", 0) != kVersion)
        throw ConfigError("checkpoint: unsupported version in " + path);
    return c;
}

}  // namespace sa2co
