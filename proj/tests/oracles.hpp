#pragma once

// Test-only oracles, written independently of include/itl so the library's
// metric and loss paths are checked against straight-line reimplementations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "itl/rng.hpp"
#include "itl/tensor.hpp"

namespace oracles {

inline itl::Mask random_mask(itl::Rng& rng, int h, int w, double density) {
    itl::Mask m(h, w);
    for (auto& v : m.v) v = rng.uniform() < density ? 1 : 0;
    return m;
}

inline double oracle_dice(const itl::Mask& a, const itl::Mask& b) {
    double inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        if (a.v[i] && b.v[i]) inter += 1;
        na += a.v[i];
        nb += b.v[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * inter / (na + nb);
}

// Brute force 95HD: boundary = foreground pixel with a 4-neighbor outside
// the foreground (image border counts as background); every directed
// min-distance found by scanning all opposing boundary pixels; pooled;
// percentile by linear interpolation between order statistics.
inline double oracle_hd95(const itl::Mask& a, const itl::Mask& b, double spacing_mm) {
    auto boundary = [](const itl::Mask& m) {
        std::vector<std::pair<int, int>> px;
        for (int y = 0; y < m.h; ++y)
            for (int x = 0; x < m.w; ++x) {
                if (m.at(y, x) != 1) continue;
                bool edge = false;
                const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int ny = y + dy[k], nx = x + dx[k];
                    if (ny < 0 || ny >= m.h || nx < 0 || nx >= m.w || m.at(ny, nx) == 0)
                        edge = true;
                }
                if (edge) px.push_back({y, x});
            }
        return px;
    };
    const auto ba = boundary(a);
    const auto bb = boundary(b);
    if (ba.empty() && bb.empty()) return 0.0;
    std::vector<double> pool;
    if (ba.empty() || bb.empty()) {
        const double sentinel =
            std::hypot(static_cast<double>(a.h - 1), static_cast<double>(a.w - 1));
        pool.assign(ba.size() + bb.size(), sentinel);
    } else {
        auto directed = [&pool](const std::vector<std::pair<int, int>>& from,
                                const std::vector<std::pair<int, int>>& to) {
            for (const auto& p : from) {
                std::int64_t best = INT64_MAX;
                for (const auto& q : to) {
                    const std::int64_t dy = p.first - q.first, dx = p.second - q.second;
                    best = std::min(best, dy * dy + dx * dx);
                }
                pool.push_back(std::sqrt(static_cast<double>(best)));
            }
        };
        directed(ba, bb);
        directed(bb, ba);
    }
    std::sort(pool.begin(), pool.end());
    if (pool.size() == 1) return pool[0] * spacing_mm;
    const double rank = 0.95 * static_cast<double>(pool.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const double frac = rank - static_cast<double>(lo);
    const double v = lo + 1 < pool.size()
                         ? pool[lo] + frac * (pool[lo + 1] - pool[lo])
                         : pool.back();
    return v * spacing_mm;
}

// Central finite differences of a scalar function of a vector argument.
template <typename F>
inline std::vector<double> finite_difference(F&& f, std::vector<double> x,
                                             double h = 1e-6) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double dn = f(x);
        x[i] = keep;
        g[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

inline double max_relative_error(const std::vector<double>& got,
                                 const std::vector<double>& want,
                                 double floor = 1e-8) {
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double denom = std::max({std::abs(got[i]), std::abs(want[i]), floor});
        worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
    }
    return worst;
}

// Max error normalized by the gradient's overall scale; the right metric
// for FD checks through deep sums, where per-entry ratios against near-zero
// entries only measure FD roundoff.
inline double max_error_vs_scale(const std::vector<double>& got,
                                 const std::vector<double>& want) {
    double scale = 1e-12, worst = 0.0;
    for (double w : want) scale = std::max(scale, std::abs(w));
    for (double g : got) scale = std::max(scale, std::abs(g));
    for (std::size_t i = 0; i < got.size(); ++i)
        worst = std::max(worst, std::abs(got[i] - want[i]));
    return worst / scale;
}

}  // namespace oracles
