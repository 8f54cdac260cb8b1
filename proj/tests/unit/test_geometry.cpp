#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "lidarsim/error.hpp"
#include "lidarsim/geometry.hpp"
#include "reference.hpp"

using namespace lidarsim;

namespace {

PointCloud from_points(const std::vector<Vec3f>& pts) {
    PointCloud cloud;
    cloud.points = pts;
    cloud.intensity.assign(pts.size(), 0.5f);
    return cloud;
}

// Grid samples on the plane {x : n.x = d} around `center`, with a little jitter
// inside the plane so neighbourhoods are not perfectly regular.
PointCloud plane_patch(const Vec3d& n, const Vec3d& center, int half, double step, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> j(-0.2 * step, 0.2 * step);
    const Vec3d a = n.unitOrthogonal();
    const Vec3d b = n.cross(a);
    std::vector<Vec3f> pts;
    for (int s = -half; s <= half; ++s)
        for (int t = -half; t <= half; ++t)
            pts.push_back((center + (s * step + j(rng)) * a + (t * step + j(rng)) * b).cast<float>());
    return from_points(pts);
}

void expect_parallel(const Vec3d& got, const Vec3d& want, double tol) {
    EXPECT_NEAR(std::abs(got.dot(want.normalized())), 1.0, tol) << got.transpose();
    EXPECT_NEAR(got.norm(), 1.0, 1e-6);
}

}  // namespace

TEST(Geometry, KnnCollinear) {
    const auto cloud = from_points({Vec3f(1, 0, 0), Vec3f(2, 0, 0), Vec3f(3, 0, 0), Vec3f(4, 0, 0)});
    EXPECT_EQ(knn(cloud, 2, 1), (std::vector<int>{0, 2}));
    // k = n - 1 returns every other index.
    auto all = knn(cloud, 3, 2);
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, (std::vector<int>{0, 1, 3}));
    try {
        knn(cloud, 4, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InsufficientPoints);
    }
}

TEST(Geometry, KnnMatchesBruteForce) {
    std::mt19937_64 rng(21);
    for (std::size_t n : {50u, 1000u, 2000u}) {
        const auto cloud = fixtures::random_cloud(rng, n, 10.0);
        const KdTree tree(cloud.points);
        for (int q = 0; q < static_cast<int>(n); q += (n > 100 ? 7 : 1)) {
            for (int k : {1, 3, 16}) {
                ASSERT_EQ(tree.knn(q, k), ref::brute_force_knn(cloud.points, q, k)) << "n=" << n << " q=" << q;
            }
        }
    }
}

TEST(Geometry, KnnTiesByLowerIndex) {
    // Lattice points: many exactly equal distances.
    std::vector<Vec3f> pts;
    for (int x = -3; x <= 3; ++x)
        for (int y = -3; y <= 3; ++y)
            for (int z = -3; z <= 3; ++z) pts.emplace_back(float(x), float(y), float(z) + 10.0f);
    const KdTree tree(pts);
    for (int q = 0; q < static_cast<int>(pts.size()); q += 5) {
        for (int k : {6, 18, 26, 40}) ASSERT_EQ(tree.knn(q, k), ref::brute_force_knn(pts, q, k));
    }
}

TEST(Geometry, NormalOfHorizontalPlane) {
    const auto cloud = plane_patch(Vec3d(0, 0, 1), Vec3d(4, 2, 3), 5, 0.3, 1);
    const auto est = estimate_normal(cloud, 60, 16);
    EXPECT_FALSE(est.degenerate);
    expect_parallel(est.normal, Vec3d(0, 0, 1), 1e-6);
    EXPECT_NEAR(est.planarity, 0.0, 1e-9);
}

TEST(Geometry, NormalOfTiltedPlane) {
    const Vec3d n = Vec3d(1, 0, 1).normalized();
    const auto cloud = plane_patch(n, Vec3d(5, 0, 0), 5, 0.3, 2);
    const auto est = estimate_normal(cloud, 60, 16);
    expect_parallel(est.normal, n, 1e-6);
}

TEST(Geometry, CollinearIsDegenerate) {
    const auto cloud = from_points({Vec3f(1, 1, 0), Vec3f(2, 1, 0), Vec3f(3, 1, 0), Vec3f(4, 1, 0)});
    const auto est = estimate_normal(cloud, 1, 3);
    EXPECT_TRUE(est.degenerate);
    const Vec3d u = cloud.points[1].cast<double>().normalized();
    EXPECT_NEAR((est.normal + u).norm(), 0.0, 1e-9);
}

TEST(Geometry, PlanarityInRange) {
    std::mt19937_64 rng(4);
    const auto cloud = fixtures::random_cloud(rng, 300, 5.0);
    const KdTree tree(cloud.points);
    for (int q = 0; q < 300; q += 10) {
        const auto est = estimate_normal(cloud, tree, q, 16);
        EXPECT_GE(est.planarity, 0.0);
        EXPECT_LE(est.planarity, 1.0 / 3.0 + 1e-12);
    }
}

TEST(Geometry, OrientTowardSensor) {
    EXPECT_EQ(orient_toward_sensor(Vec3d(5, 0, 0), Vec3d(1, 0, 0)), Vec3d(-1, 0, 0));
    EXPECT_EQ(orient_toward_sensor(Vec3d(5, 0, 0), Vec3d(-1, 0, 0)), Vec3d(-1, 0, 0));
    EXPECT_EQ(orient_toward_sensor(Vec3d(3, 4, 0), Vec3d(0, 0, 1)), Vec3d(0, 0, 1));
}

TEST(Geometry, IncidenceAngleExamples) {
    EXPECT_DOUBLE_EQ(incidence_angle(Vec3d(5, 0, 0), Vec3d(-1, 0, 0)).angle, 0.0);
    const auto r = incidence_angle(Vec3d(5, 0, 0), -Vec3d(1, 0, 1).normalized());
    EXPECT_NEAR(r.angle, M_PI / 4, 1e-12);
    EXPECT_NEAR(r.cos_angle, std::cos(r.angle), 1e-12);
    EXPECT_NEAR(r.direction.norm(), 1.0, 1e-12);
    try {
        incidence_angle(Vec3d::Zero(), Vec3d(0, 0, 1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidPoint);
    }
}

TEST(Geometry, IncidenceInvariances) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g;
    for (int t = 0; t < 500; ++t) {
        const Vec3d p(g(rng) * 10, g(rng) * 10, g(rng) * 10);
        const Vec3d n = Vec3d(g(rng), g(rng), g(rng)).normalized();
        const auto a = incidence_angle(p, n);
        EXPECT_EQ(a.angle, incidence_angle(p, -n).angle);
        EXPECT_NEAR(a.angle, incidence_angle(3.7 * p, n).angle, 1e-12);
        EXPECT_GE(a.angle, 0.0);
        EXPECT_LE(a.angle, M_PI / 2);
        EXPECT_NEAR(a.cos_angle, std::cos(a.angle), 1e-6);
    }
}

TEST(Geometry, PlaneSceneMatchesAnalyticAngle) {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        const auto scene = fixtures::plane_scene(seed);
        const auto ch = incidence_channel(scene.cloud, 16);
        std::size_t interior = 0, good = 0;
        for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
            if (!scene.interior[i]) continue;
            ++interior;
            good += std::abs(ch.angle[i] - scene.analytic_angle[i]) < 0.05;
        }
        ASSERT_GT(interior, 0u);
        EXPECT_GE(static_cast<double>(good) / interior, 0.99) << "seed " << seed;
    }
}

TEST(Geometry, SphereSceneIsHeadOn) {
    const auto scene = fixtures::sphere_scene(6);
    const auto ch = incidence_channel(scene.cloud, 16);
    for (float a : ch.angle) EXPECT_LT(a, 0.05f);
}

TEST(Geometry, RotationInvariance) {
    const auto scene = fixtures::plane_scene(9);
    std::mt19937_64 rng(10);
    std::normal_distribution<double> g;
    const Eigen::Quaterniond q(Eigen::Vector4d(g(rng), g(rng), g(rng), g(rng)).normalized());
    PointCloud rotated = scene.cloud;
    for (auto& p : rotated.points) p = (q * p.cast<double>()).cast<float>();
    const auto a = incidence_channel(scene.cloud, 16);
    const auto b = incidence_channel(rotated, 16);
    for (std::size_t i = 0; i < a.angle.size(); ++i) EXPECT_NEAR(a.angle[i], b.angle[i], 1e-5);
}

TEST(Geometry, IncidenceChannelOutputs) {
    const auto scene = fixtures::plane_scene(12);
    PointCloud cloud = scene.cloud;
    attach_incidence(cloud, 16);
    ASSERT_TRUE(cloud.incidence && cloud.normal);
    cloud.validate();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3d u = cloud.points[i].cast<double>().normalized();
        EXPECT_LE(u.dot((*cloud.normal)[i].cast<double>()), 1e-9);
        EXPECT_GE((*cloud.incidence)[i], 0.0f);
        EXPECT_LE((*cloud.incidence)[i], static_cast<float>(M_PI / 2));
    }
}

TEST(Geometry, DegeneratePointsGetZeroAngle) {
    std::vector<Vec3f> pts;
    for (int i = 0; i < 20; ++i) pts.emplace_back(1.0f + i, 2.0f, 0.5f);
    const auto ch = incidence_channel(from_points(pts), 4);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        EXPECT_EQ(ch.degenerate[i], 1);
        EXPECT_EQ(ch.angle[i], 0.0f);
    }
}

TEST(Geometry, TooFewPointsForK) {
    std::mt19937_64 rng(3);
    const auto cloud = fixtures::random_cloud(rng, 16);
    try {
        incidence_channel(cloud, 16);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InsufficientPoints);
    }
}

TEST(Geometry, AngleCsv) {
    const auto scene = fixtures::plane_scene(2, 1.0);
    const auto ch = incidence_channel(scene.cloud, 8);
    fixtures::TempDir dir("geometry");
    write_angle_csv(dir / "a.csv", ch);
    const auto text = fixtures::read_text(dir / "a.csv");
    EXPECT_EQ(text.rfind("index,angle_rad,degenerate_flag\n", 0), 0u);
    EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), ch.angle.size() + 1);
}
