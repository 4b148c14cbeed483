#include "rlab/spatial.hpp"

#include <numeric>

namespace rlab {

void KdTree::build(const double* pts, const double* weights, int count, int dim, int leaf_size) {
    pts_ = pts;
    w_ = weights;
    count_ = count;
    dim_ = dim;
    perm_.resize(static_cast<size_t>(count));
    std::iota(perm_.begin(), perm_.end(), 0);
    nodes_.clear();
    if (count == 0) return;
    nodes_.reserve(static_cast<size_t>(2 * count / std::max(1, leaf_size) + 8));
    build_node(0, count, leaf_size);
}

int KdTree::build_node(int begin, int end, int leaf_size) {
    int ni = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    {
        Node& nd = nodes_.back();
        nd.begin = begin;
        nd.end = end;
        for (int i = 0; i < dim_; ++i) {
            nd.bbox_lo[i] = std::numeric_limits<double>::infinity();
            nd.bbox_hi[i] = -std::numeric_limits<double>::infinity();
        }
        Kahan mass;
        Kahan com[kMaxDim];
        for (int k = begin; k < end; ++k) {
            const double* p = pt(perm_[static_cast<size_t>(k)]);
            double wk = w_ ? w_[perm_[static_cast<size_t>(k)]] : 1.0;
            mass.add(wk);
            for (int i = 0; i < dim_; ++i) {
                nd.bbox_lo[i] = std::min(nd.bbox_lo[i], p[i]);
                nd.bbox_hi[i] = std::max(nd.bbox_hi[i], p[i]);
                com[i].add(wk * p[i]);
            }
        }
        nd.mass = mass.value();
        for (int i = 0; i < dim_; ++i)
            nd.com[i] = nd.mass > 0 ? com[i].value() / nd.mass : 0.5 * (nd.bbox_lo[i] + nd.bbox_hi[i]);
        double r2 = 0;
        for (int k = begin; k < end; ++k)
            r2 = std::max(r2, dist2(pt(perm_[static_cast<size_t>(k)]), nd.com, dim_));
        nd.radius = std::sqrt(r2);
    }

    if (end - begin <= leaf_size) return ni;

    // split on the widest axis at the median; ties broken by atom index so the
    // tree (and every traversal order) is a pure function of the input
    int axis = 0;
    double width = -1;
    for (int i = 0; i < dim_; ++i) {
        double w = nodes_[static_cast<size_t>(ni)].bbox_hi[i] - nodes_[static_cast<size_t>(ni)].bbox_lo[i];
        if (w > width) {
            width = w;
            axis = i;
        }
    }
    if (width <= 0) return ni;  // all points coincide: stay a leaf

    int mid = (begin + end) / 2;
    std::nth_element(perm_.begin() + begin, perm_.begin() + mid, perm_.begin() + end,
                     [&](int a, int b) {
                         double pa = pt(a)[axis], pb = pt(b)[axis];
                         if (pa != pb) return pa < pb;
                         return a < b;
                     });
    int left = build_node(begin, mid, leaf_size);
    int right = build_node(mid, end, leaf_size);
    nodes_[static_cast<size_t>(ni)].left = left;
    nodes_[static_cast<size_t>(ni)].right = right;
    return ni;
}

double KdTree::mass_in_ball(const double* center, double radius) const {
    Kahan acc;
    for_each_in_ball(center, radius, [&](int idx) { acc.add(w_ ? w_[idx] : 1.0); });
    return acc.value();
}

void KdTree::nearest_walk(int ni, const double* q, int exclude, double& best2) const {
    const Node& nd = nodes_[static_cast<size_t>(ni)];
    double d2 = 0;
    for (int i = 0; i < dim_; ++i) {
        double t = q[i] < nd.bbox_lo[i] ? nd.bbox_lo[i] - q[i]
                                        : (q[i] > nd.bbox_hi[i] ? q[i] - nd.bbox_hi[i] : 0.0);
        d2 += t * t;
    }
    if (d2 >= best2) return;
    if (nd.left < 0) {
        for (int k = nd.begin; k < nd.end; ++k) {
            int idx = perm_[static_cast<size_t>(k)];
            if (idx == exclude) continue;
            best2 = std::min(best2, dist2(pt(idx), q, dim_));
        }
        return;
    }
    nearest_walk(nd.left, q, exclude, best2);
    nearest_walk(nd.right, q, exclude, best2);
}

double KdTree::nearest_dist2(const double* query, int exclude) const {
    double best2 = std::numeric_limits<double>::infinity();
    if (count_ == 0) return best2;
    nearest_walk(0, query, exclude, best2);
    return best2;
}

double KdTree::min_pairwise_dist2() const {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < count_; ++i) best = std::min(best, nearest_dist2(pt(i), i));
    return best;
}

}  // namespace rlab
