#ifndef RLAB_SPATIAL_HPP
#define RLAB_SPATIAL_HPP

// Kd-tree over weighted points with deterministic construction and traversal.
// Serves ball queries for the functionals and carries per-node monopole data
// (mass, mass centroid, bounding box) for the Barnes-Hut style field sums.

#include <functional>
#include <vector>

#include "rlab/core.hpp"

namespace rlab {

class KdTree {
public:
    struct Node {
        int begin = 0, end = 0;        // range into perm_
        int left = -1, right = -1;     // children, -1 at leaves
        double bbox_lo[kMaxDim];
        double bbox_hi[kMaxDim];
        double mass = 0;               // total weight in node
        double com[kMaxDim];           // mass centroid
        double radius = 0;             // max distance from com to a node point
    };

    KdTree() = default;

    // Points are a flat array (count x dim); weights may be empty (all ones).
    void build(const double* pts, const double* weights, int count, int dim, int leaf_size = 16);

    int dim() const { return dim_; }
    int size() const { return count_; }
    bool empty() const { return count_ == 0; }
    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<int>& permutation() const { return perm_; }

    // Calls fn(atom_index) for every point with |x - center| <= radius
    // (closed ball). Traversal order is deterministic for a fixed build.
    template <class F>
    void for_each_in_ball(const double* center, double radius, F&& fn) const {
        if (count_ == 0) return;
        walk_ball(0, center, radius, fn);
    }

    // Total weight within the closed ball, fixed traversal order.
    double mass_in_ball(const double* center, double radius) const;

    // Squared distance to the nearest point distinct from `exclude` (-1: none).
    double nearest_dist2(const double* query, int exclude = -1) const;

    // Minimal pairwise squared distance among all points (inf if < 2 points).
    double min_pairwise_dist2() const;

private:
    int build_node(int begin, int end, int leaf_size);
    template <class F>
    void walk_ball(int ni, const double* c, double r, F& fn) const {
        const Node& nd = nodes_[static_cast<size_t>(ni)];
        double d2 = 0;
        for (int i = 0; i < dim_; ++i) {
            double lo = nd.bbox_lo[i], hi = nd.bbox_hi[i];
            double t = c[i] < lo ? lo - c[i] : (c[i] > hi ? c[i] - hi : 0.0);
            d2 += t * t;
        }
        if (d2 > r * r) return;
        if (nd.left < 0) {
            for (int k = nd.begin; k < nd.end; ++k) {
                int idx = perm_[static_cast<size_t>(k)];
                if (dist2(pt(idx), c, dim_) <= r * r) fn(idx);
            }
            return;
        }
        walk_ball(nd.left, c, r, fn);
        walk_ball(nd.right, c, r, fn);
    }
    void nearest_walk(int ni, const double* q, int exclude, double& best2) const;
    const double* pt(int i) const { return pts_ + static_cast<size_t>(i) * dim_; }

    const double* pts_ = nullptr;
    const double* w_ = nullptr;
    int count_ = 0;
    int dim_ = 0;
    std::vector<int> perm_;
    std::vector<Node> nodes_;
};

}  // namespace rlab

#endif
