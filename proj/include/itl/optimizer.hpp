#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "itl/model.hpp"

namespace itl {

// Multiplicative decay at each milestone epoch.
inline double lr_at(int epoch, double lr_init, double lr_decay,
                    const std::vector<int>& milestones) {
    double lr = lr_init;
    for (int m : milestones)
        if (epoch >= m) lr *= lr_decay;
    return lr;
}

// Adam over the trainable components (encoder + target decoder). The frozen
// source decoder is never attached. State lives for one phase; each phase
// starts with fresh moments.
class AdamOptimizer {
public:
    AdamOptimizer(ModelBundle& bundle, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : b1_(beta1), b2_(beta2), eps_(eps) {
        auto grab = [this](const std::string&, std::vector<double>& w,
                           std::vector<double>& g) { refs_.push_back({&w, &g}); };
        bundle.visit_params("encoder", grab);
        bundle.visit_params("target", grab);
        std::size_t n = 0;
        for (const auto& r : refs_) n += r.w->size();
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        std::size_t off = 0;
        for (const auto& r : refs_) {
            double* w = r.w->data();
            const double* g = r.g->data();
            const std::size_t n = r.w->size();
            for (std::size_t i = 0; i < n; ++i) {
                double& m = m_[off + i];
                double& v = v_[off + i];
                m = b1_ * m + (1.0 - b1_) * g[i];
                v = b2_ * v + (1.0 - b2_) * g[i] * g[i];
                w[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps_);
            }
            off += n;
        }
    }

    long steps_taken() const { return t_; }

private:
    struct Ref {
        std::vector<double>* w;
        std::vector<double>* g;
    };
    std::vector<Ref> refs_;
    std::vector<double> m_, v_;
    long t_ = 0;
    double b1_, b2_, eps_;
};

}  // namespace itl
