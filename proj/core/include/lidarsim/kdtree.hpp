#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lidarsim/point_cloud.hpp"

namespace lidarsim {

// Exact 3-d tree with median splits. Neighbour order is ascending squared
// distance with ties broken by lower point index, so results are identical to a
// brute-force sort.
class KdTree {
public:
    explicit KdTree(std::span<const Vec3f> points, int leaf_size = 8);

    // k nearest points to points[query], excluding the query itself.
    std::vector<int> knn(int query, int k) const;
    // k nearest points to an arbitrary location; `exclude` is skipped (-1 for none).
    std::vector<int> knn(const Vec3f& location, int k, int exclude = -1) const;

    std::size_t size() const { return points_.size(); }

private:
    struct NodeRec {
        int begin;
        int end;
        int left = -1;
        int right = -1;
        int axis = -1;  // -1 marks a leaf
        double split = 0.0;
    };
    struct Candidate {
        double d2;
        int index;
        bool operator<(const Candidate& o) const {
            return d2 < o.d2 || (d2 == o.d2 && index < o.index);
        }
    };

    int build(int begin, int end);
    void search(int node, const Vec3f& q, int k, int exclude, std::vector<Candidate>& heap) const;

    std::vector<Vec3f> points_;
    std::vector<int> order_;
    std::vector<NodeRec> nodes_;
    int leaf_size_;
};

// Squared Euclidean distance evaluated in double from float coordinates.
inline double squared_distance(const Vec3f& a, const Vec3f& b) {
    const double dx = static_cast<double>(a.x()) - static_cast<double>(b.x());
    const double dy = static_cast<double>(a.y()) - static_cast<double>(b.y());
    const double dz = static_cast<double>(a.z()) - static_cast<double>(b.z());
    return dx * dx + dy * dy + dz * dz;
}

}  // namespace lidarsim
