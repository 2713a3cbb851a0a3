#pragma once

#include <Eigen/SparseCore>
#include <vector>

#include "sa2co/common.hpp"

namespace sa2co {

/// Variable ordering: free block, then the nonnegative orthant, then the
/// second-order cone blocks in sequence.
struct ConeDims {
    int free = 0;
    int nonneg = 0;
    std::vector<int> soc;

    int cone_size() const {
        int n = nonneg;
        for (int q : soc) n += q;
        return n;
    }
    int total() const { return free + cone_size(); }
    /// Barrier degree: one per LP coordinate, one per SOC block.
    double degree() const { return nonneg + static_cast<double>(soc.size()); }
};

/// min c'x  s.t.  Ax = b,  x_cone in K.
struct ConeProgram {
    Eigen::SparseMatrix<double> A;
    Vec b;
    Vec c;
    ConeDims dims;
};

struct SocpOptions {
    double tol_feas = 1e-8;
    double tol_gap = 1e-6;
    int max_iterations = 100;
    double regularization = 1e-8;
    int refinement_steps = 2;
};

enum class SocpStatus { optimal, max_iterations, numerical_failure };

struct SocpSolution {
    Vec x, y, z;
    SocpStatus status = SocpStatus::numerical_failure;
    double primal_objective = 0.0;
    double dual_objective = 0.0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double rel_gap = 0.0;
    int iterations = 0;

    bool ok() const { return status == SocpStatus::optimal; }
};

/// Primal-dual interior-point method with Nesterov-Todd scaling and a
/// Mehrotra predictor-corrector, for programs over the nonnegative orthant
/// and second-order cones. Infeasible start; quasi-definite KKT solved by
/// sparse LDL with static regularization and iterative refinement.
SocpSolution solve_socp(const ConeProgram& prog, const SocpOptions& opts = {});

/// Plain-text dump of the program (sizes, cones, c, b, A triplets) for
/// external cross-checking.
void write_cone_program(const ConeProgram& prog, const std::string& path);

}  // namespace sa2co
