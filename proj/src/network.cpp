#include "covmon/network.hpp"
#include "covmon/errors.hpp"

namespace covmon {

CommuteNetwork::CommuteNetwork(Eigen::MatrixXd D, double lambda)
    : D_(std::move(D))
    , lambda_(lambda)
{
    if (D_.rows() != D_.cols()) {
        throw InputError("commute matrix must be square");
    }
    if ((D_.array() < 0.0).any()) {
        throw InputError("commute matrix entries must be nonnegative");
    }
    if (D_.size() > 0 && D_.diagonal().cwiseAbs().maxCoeff() != 0.0) {
        throw InputError("commute matrix must have a zero diagonal");
    }
    if (!(lambda_ >= 0.0)) {
        throw InputError("commuting intensity must be nonnegative");
    }
    d_ = D_.colwise().sum().transpose();
}

Eigen::VectorXd network_phi_update(const Eigen::VectorXd& phi, const CommuteNetwork& net,
                                   const Eigen::VectorXd& phi_bar)
{
    if (phi.size() != net.size() || phi_bar.size() != net.size()) {
        throw InputError("phi vectors must have one entry per region");
    }
    if ((phi.array() < 0.0).any()) {
        throw InputError("infectious pressure must be nonnegative");
    }
    return phi_bar + net.lambda() * (net.D() * phi - net.d().cwiseProduct(phi));
}

} // namespace covmon
