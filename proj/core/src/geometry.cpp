#include "lidarsim/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "lidarsim/error.hpp"

namespace lidarsim {

namespace {

void require_neighbors(const PointCloud& cloud, int k) {
    if (k < 1 || static_cast<std::size_t>(k) + 1 > cloud.size()) {
        throw Error(ErrorCode::InsufficientPoints,
                    "need at least k+1=" + std::to_string(k + 1) + " points, cloud has " +
                        std::to_string(cloud.size()));
    }
}

Vec3d toward_sensor_fallback(const Vec3f& p) {
    const Vec3d pd = p.cast<double>();
    return -pd / pd.norm();
}

}  // namespace

std::vector<int> knn(const PointCloud& cloud, int k, int q) {
    require_neighbors(cloud, k);
    const KdTree tree(cloud.points);
    return tree.knn(q, k);
}

NormalEstimate estimate_normal(const PointCloud& cloud, const KdTree& tree, int q, int k) {
    require_neighbors(cloud, k);
    std::vector<int> hood = tree.knn(q, k);
    hood.push_back(q);

    Vec3d centroid = Vec3d::Zero();
    for (int idx : hood) {
        centroid += cloud.points[idx].cast<double>();
    }
    centroid /= static_cast<double>(hood.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (int idx : hood) {
        const Vec3d d = cloud.points[idx].cast<double>() - centroid;
        cov.noalias() += d * d.transpose();
    }
    cov /= static_cast<double>(hood.size());

    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
    const Vec3d lambda = solver.eigenvalues().cwiseMax(0.0);  // ascending
    const double total = lambda.sum();

    NormalEstimate est;
    est.planarity = total > 0.0 ? lambda(0) / total : 0.0;
    const bool rank_deficient = !(total > 0.0) || lambda(1) <= 1e-12 * lambda(2);
    const bool repeated_smallest = (lambda(1) - lambda(0)) < 1e-9 * total;
    if (solver.info() != Eigen::Success || rank_deficient || repeated_smallest) {
        est.degenerate = true;
        est.normal = toward_sensor_fallback(cloud.points[q]);
        return est;
    }
    est.normal = solver.eigenvectors().col(0).normalized();
    return est;
}

NormalEstimate estimate_normal(const PointCloud& cloud, int q, int k) {
    require_neighbors(cloud, k);
    const KdTree tree(cloud.points);
    return estimate_normal(cloud, tree, q, k);
}

Vec3d orient_toward_sensor(const Vec3d& p, const Vec3d& n) {
    const Vec3d u = p / p.norm();
    return u.dot(n) <= 0.0 ? n : Vec3d(-n);
}

IncidenceResult incidence_angle(const Vec3d& p, const Vec3d& n) {
    const double r = p.norm();
    if (!(r > 0.0) || !p.allFinite()) {
        throw Error(ErrorCode::InvalidPoint, "incidence_angle: point at zero range");
    }
    IncidenceResult out;
    out.direction = p / r;
    out.cos_angle = std::clamp(std::abs(out.direction.dot(n)), 0.0, 1.0);
    out.angle = std::acos(out.cos_angle);
    return out;
}

IncidenceChannel incidence_channel(const PointCloud& cloud, int k) {
    require_neighbors(cloud, k);
    const KdTree tree(cloud.points);
    IncidenceChannel out;
    out.angle.resize(cloud.size());
    out.normal.resize(cloud.size());
    out.degenerate.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3d p = cloud.points[i].cast<double>();
        const NormalEstimate est = estimate_normal(cloud, tree, static_cast<int>(i), k);
        const Vec3d n = orient_toward_sensor(p, est.normal);
        out.normal[i] = n.cast<float>().normalized();
        out.degenerate[i] = est.degenerate ? 1 : 0;
        out.angle[i] = est.degenerate ? 0.0f : static_cast<float>(incidence_angle(p, n).angle);
    }
    return out;
}

void attach_incidence(PointCloud& cloud, int k) {
    IncidenceChannel channel = incidence_channel(cloud, k);
    cloud.normal = std::move(channel.normal);
    cloud.incidence = std::move(channel.angle);
}

void write_angle_csv(const std::filesystem::path& path, const IncidenceChannel& channel) {
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    out << "index,angle_rad,degenerate_flag\n" << std::setprecision(9);
    for (std::size_t i = 0; i < channel.angle.size(); ++i) {
        out << i << ',' << channel.angle[i] << ',' << static_cast<int>(channel.degenerate[i]) << '\n';
    }
}

}  // namespace lidarsim
