#pragma once

#include <Eigen/Dense>

namespace covmon {

/// Commuting coupling between regions. Row i, column j of `D` is the proportion
/// commuting into region i from region j.
class CommuteNetwork {
public:
    CommuteNetwork(Eigen::MatrixXd D, double lambda);

    const Eigen::MatrixXd& D() const { return D_; }
    /// Column sums of D.
    const Eigen::VectorXd& d() const { return d_; }
    double lambda() const { return lambda_; }
    int size() const { return static_cast<int>(D_.rows()); }

private:
    Eigen::MatrixXd D_;
    Eigen::VectorXd d_;
    double lambda_;
};

/// phi_bar + lambda (D phi - d .* phi): infectious pressure after one coupled step.
Eigen::VectorXd network_phi_update(const Eigen::VectorXd& phi, const CommuteNetwork& net,
                                   const Eigen::VectorXd& phi_bar);

} // namespace covmon
