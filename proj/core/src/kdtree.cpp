#include "lidarsim/kdtree.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "lidarsim/error.hpp"

namespace lidarsim {

KdTree::KdTree(std::span<const Vec3f> points, int leaf_size)
    : points_(points.begin(), points.end()), order_(points.size()), leaf_size_(std::max(1, leaf_size)) {
    std::iota(order_.begin(), order_.end(), 0);
    if (!points_.empty()) {
        nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
        build(0, static_cast<int>(points_.size()));
    }
}

int KdTree::build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= leaf_size_) {
        return id;
    }
    // Split along the axis of largest extent at the median point.
    Vec3f lo = points_[order_[begin]];
    Vec3f hi = lo;
    for (int i = begin + 1; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
    nodes_[id].axis = axis;
    nodes_[id].split = points_[order_[mid]][axis];
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

void KdTree::search(int node_id, const Vec3f& q, int k, int exclude,
                    std::vector<Candidate>& heap) const {
    const NodeRec& node = nodes_[node_id];
    if (node.axis < 0) {
        for (int i = node.begin; i < node.end; ++i) {
            const int idx = order_[i];
            if (idx == exclude) {
                continue;
            }
            const Candidate c{squared_distance(q, points_[idx]), idx};
            if (static_cast<int>(heap.size()) < k) {
                heap.push_back(c);
                std::push_heap(heap.begin(), heap.end());
            } else if (c < heap.front()) {
                std::pop_heap(heap.begin(), heap.end());
                heap.back() = c;
                std::push_heap(heap.begin(), heap.end());
            }
        }
        return;
    }
    // Left subtree holds coordinates <= split, right holds >= split.
    const double diff = static_cast<double>(q[node.axis]) - node.split;
    const int near = diff <= 0.0 ? node.left : node.right;
    const int far = diff <= 0.0 ? node.right : node.left;
    search(near, q, k, exclude, heap);
    // Equal bound still explores: a tie on distance may carry a lower index.
    if (static_cast<int>(heap.size()) < k || diff * diff <= heap.front().d2) {
        search(far, q, k, exclude, heap);
    }
}

std::vector<int> KdTree::knn(const Vec3f& location, int k, int exclude) const {
    const int available = static_cast<int>(points_.size()) - (exclude >= 0 ? 1 : 0);
    if (k < 1 || k > available) {
        throw Error(ErrorCode::InsufficientPoints, "knn: k=" + std::to_string(k) + " but only " +
                                                       std::to_string(available) + " candidates");
    }
    std::vector<Candidate> heap;
    heap.reserve(k + 1);
    search(0, location, k, exclude, heap);
    std::sort_heap(heap.begin(), heap.end());
    std::vector<int> out;
    out.reserve(heap.size());
    for (const auto& c : heap) {
        out.push_back(c.index);
    }
    return out;
}

std::vector<int> KdTree::knn(int query, int k) const {
    if (query < 0 || query >= static_cast<int>(points_.size())) {
        throw Error(ErrorCode::InvalidPoint, "knn: query index out of range");
    }
    return knn(points_[query], k, query);
}

}  // namespace lidarsim
