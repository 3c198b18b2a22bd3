#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace mfg {

enum class SetKind { Whole, Box, Ball, Orthant };

std::string to_string(SetKind kind);

/// Closed convex control-constraint set in R^m. All variants are nonempty
/// and closed; Box requires lo <= hi componentwise, Ball requires radius > 0.
class ConvexSet {
public:
    static ConvexSet whole(int dim);
    static ConvexSet box(Eigen::VectorXd lo, Eigen::VectorXd hi);
    static ConvexSet ball(Eigen::VectorXd center, double radius);
    static ConvexSet orthant(int dim);

    SetKind kind() const { return kind_; }
    int dim() const { return dim_; }
    const Eigen::VectorXd& lo() const { return lo_; }
    const Eigen::VectorXd& hi() const { return hi_; }
    const Eigen::VectorXd& center() const { return center_; }
    double radius() const { return radius_; }

    /// Euclidean nearest point; closed form for every variant.
    Eigen::VectorXd euclidean_project(const Eigen::VectorXd& v) const;
    /// Euclidean distance to the set.
    double euclidean_distance(const Eigen::VectorXd& v) const;
    /// True iff v is within tol of the set in Euclidean norm.
    bool contains(const Eigen::VectorXd& v, double tol) const;

private:
    ConvexSet() = default;
    SetKind kind_ = SetKind::Whole;
    int dim_ = 0;
    Eigen::VectorXd lo_, hi_, center_;
    double radius_ = 0.0;
};

struct WeightedProjectionResult {
    Eigen::VectorXd point;
    int iterations = 0;
    double kkt_residual = 0.0;
};

/// Nearest point of `set` to v in the R-weighted inner product <Rx, x>,
/// R symmetric positive definite. Closed form for the whole space and for
/// box/orthant under diagonal R (componentwise clamp); otherwise a projected
/// gradient iteration with step 1/lambda_max(R), terminating when the KKT
/// residual drops below 1e-12 (or throwing after 1e5 iterations).
///
/// The weighted norm is evaluated through the bilinear form <Rx, x>
/// directly; no matrix square root is formed.
WeightedProjectionResult project(const ConvexSet& set, const Eigen::MatrixXd& R,
                                 const Eigen::VectorXd& v);

/// Deterministic sample of points of the set (mix of interior and boundary),
/// all satisfying contains(., 1e-12). Feeds the variational-inequality tests
/// and the maximum-principle spot checks.
std::vector<Eigen::VectorXd> sample_boundary_and_interior(const ConvexSet& set, int count,
                                                          std::uint64_t seed);

}  // namespace mfg
