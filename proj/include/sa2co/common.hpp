#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace sa2co {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TopologyError : Error { using Error::Error; };
struct SolverError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct IngestError : Error { using Error::Error; };
struct NumericalError : Error { using Error::Error; };
struct ReadinessError : Error { using Error::Error; };

}  // namespace sa2co
