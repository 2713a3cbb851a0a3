#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sa2co/common.hpp"
#include "sa2co/nn.hpp"

namespace sa2co {

/// Self-describing store of named arrays and scalars, serialized as JSON
/// with round-trip-exact floating point. Reloading on the same build
/// restores training state bit for bit.
class Checkpoint {
public:
    Checkpoint();

    void put_scalar(const std::string& name, double v);
    void put_int(const std::string& name, std::int64_t v);
    void put_string(const std::string& name, const std::string& v);
    void put_vec(const std::string& name, const Vec& v);
    void put_mat(const std::string& name, const Mat& m);

    double get_scalar(const std::string& name) const;
    std::int64_t get_int(const std::string& name) const;
    std::string get_string(const std::string& name) const;
    Vec get_vec(const std::string& name) const;
    Mat get_mat(const std::string& name) const;
    bool has(const std::string& name) const;

    void put_mlp(const std::string& prefix, const MlpParams& p);
    MlpParams get_mlp(const std::string& prefix) const;
    void put_adam(const std::string& prefix, const AdamState& s);
    AdamState get_adam(const std::string& prefix, const MlpParams& shaped) const;
    void put_norm(const std::string& prefix, const RunningNorm& n);
    RunningNorm get_norm(const std::string& prefix) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

}  // namespace sa2co
