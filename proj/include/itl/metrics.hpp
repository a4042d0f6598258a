#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "itl/data.hpp"
#include "itl/tensor.hpp"

namespace itl {

// ---------------------------------------------------------------------------
// Dice
// ---------------------------------------------------------------------------

// 2|P∩G| / (|P|+|G|); both masks empty counts as perfect agreement (1).
inline double dice_coefficient(const Mask& pred, const Mask& gt) {
    require(pred.h == gt.h && pred.w == gt.w, "dice: shape mismatch");
    std::size_t inter = 0, np = 0, ng = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        np += pred.v[i];
        ng += gt.v[i];
        inter += static_cast<std::size_t>(pred.v[i] & gt.v[i]);
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

// Dice over a case: slices pooled into one set of pixels.
inline double dice_stack(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
    require(pred.size() == gt.size(), "dice_stack: slice count mismatch");
    std::size_t inter = 0, np = 0, ng = 0;
    for (std::size_t s = 0; s < pred.size(); ++s) {
        require(pred[s].h == gt[s].h && pred[s].w == gt[s].w, "dice_stack: shape mismatch");
        for (std::size_t i = 0; i < pred[s].v.size(); ++i) {
            np += pred[s].v[i];
            ng += gt[s].v[i];
            inter += static_cast<std::size_t>(pred[s].v[i] & gt[s].v[i]);
        }
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

// ---------------------------------------------------------------------------
// 95% Hausdorff distance
// ---------------------------------------------------------------------------

struct PixelCoord {
    int y, x;
};

// Foreground pixels with at least one 4-connected background neighbor;
// outside the image counts as background.
inline std::vector<PixelCoord> boundary_pixels(const Mask& m) {
    std::vector<PixelCoord> out;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(y, x)) continue;
            const bool bg = (y == 0 || !m.at(y - 1, x)) || (y == m.h - 1 || !m.at(y + 1, x)) ||
                            (x == 0 || !m.at(y, x - 1)) || (x == m.w - 1 || !m.at(y, x + 1));
            if (bg) out.push_back({y, x});
        }
    return out;
}

// Linear interpolation between order statistics; values must be sorted.
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
    require(!sorted.empty(), "percentile of empty set");
    if (sorted.size() == 1) return sorted[0];
    const double rank = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const double frac = rank - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double image_diagonal_px(int h, int w) {
    return std::hypot(static_cast<double>(h - 1), static_cast<double>(w - 1));
}

namespace detail {

// Directed min distances (pixels) from each of `from` to the set `to`.
// Squared distances stay in integers, so ties and minima are exact.
inline void append_min_distances(const std::vector<PixelCoord>& from,
                                 const std::vector<PixelCoord>& to,
                                 std::vector<double>& pool) {
    for (const auto& p : from) {
        std::int64_t best = INT64_MAX;
        for (const auto& q : to) {
            const std::int64_t dy = p.y - q.y, dx = p.x - q.x;
            const std::int64_t d2 = dy * dy + dx * dx;
            if (d2 < best) best = d2;
        }
        pool.push_back(std::sqrt(static_cast<double>(best)));
    }
}

// Pools symmetric boundary distances for one slice pair into `pool`
// (pixel units). One-sided emptiness contributes the diagonal sentinel per
// boundary pixel of the nonempty side; both empty contributes nothing.
inline void pool_slice_distances(const Mask& pred, const Mask& gt,
                                 std::vector<double>& pool) {
    require(pred.h == gt.h && pred.w == gt.w, "hd95: shape mismatch");
    const auto bp = boundary_pixels(pred);
    const auto bg = boundary_pixels(gt);
    if (bp.empty() && bg.empty()) return;
    if (bp.empty() || bg.empty()) {
        const double sentinel = image_diagonal_px(pred.h, pred.w);
        const auto n = bp.size() + bg.size();
        for (std::size_t i = 0; i < n; ++i) pool.push_back(sentinel);
        return;
    }
    append_min_distances(bp, bg, pool);
    append_min_distances(bg, bp, pool);
}

}  // namespace detail

// 95th percentile of pooled symmetric boundary distances, in millimeters.
inline double hd95(const Mask& pred, const Mask& gt, double in_plane_mm = 1.0) {
    std::vector<double> pool;
    detail::pool_slice_distances(pred, gt, pool);
    if (pool.empty()) return 0.0;  // both masks empty
    std::sort(pool.begin(), pool.end());
    return percentile_sorted(pool, 0.95) * in_plane_mm;
}

// Per-case 95HD: 2D distances per slice, pooled across the case's slices.
inline double hd95_stack(const std::vector<Mask>& pred, const std::vector<Mask>& gt,
                         double in_plane_mm = 1.0) {
    require(pred.size() == gt.size(), "hd95_stack: slice count mismatch");
    std::vector<double> pool;
    for (std::size_t s = 0; s < pred.size(); ++s)
        detail::pool_slice_distances(pred[s], gt[s], pool);
    if (pool.empty()) return 0.0;
    std::sort(pool.begin(), pool.end());
    return percentile_sorted(pool, 0.95) * in_plane_mm;
}

// ---------------------------------------------------------------------------
// Site evaluation
// ---------------------------------------------------------------------------

struct CaseMetrics {
    std::string case_id;
    double dsc = 0.0;    // [0, 1]
    double hd95_mm = 0.0;
};

struct SiteMetrics {
    std::string site_id;
    double dsc_percent = 0.0;
    double hd95_mm = 0.0;
    std::vector<CaseMetrics> per_case;
};

// Probability map for one axial-context input.
using PredictFn = std::function<Image(const AugmentedInput&)>;

inline Mask binarize(const Image& prob, double threshold) {
    Mask m(prob.h, prob.w);
    for (std::size_t i = 0; i < prob.v.size(); ++i) m.v[i] = prob.v[i] >= threshold ? 1 : 0;
    return m;
}

// Predictions binarized at `threshold`; metrics per case (slices pooled),
// then averaged over cases.
inline SiteMetrics evaluate_site(const PredictFn& predict, const SiteDataset& site,
                                 double threshold = 0.5) {
    require(!site.test.empty(), "evaluate_site: empty test set");
    SiteMetrics sm;
    sm.site_id = site.meta.site_id;
    const auto cases = group_cases(site.test);
    for (const auto& cv : cases) {
        std::vector<Mask> preds, gts;
        double spacing = 1.0;
        for (std::size_t pos = 0; pos < cv.slices.size(); ++pos) {
            const SliceSample& s = *cv.slices[pos];
            spacing = s.in_plane_mm;
            Image prob = predict(augmented_input_at(cv, static_cast<int>(pos)));
            require(prob.h == s.image.h && prob.w == s.image.w,
                    "evaluate_site: prediction shape mismatch for case " + cv.case_id);
            preds.push_back(binarize(prob, threshold));
            gts.push_back(s.mask);
        }
        CaseMetrics cm;
        cm.case_id = cv.case_id;
        cm.dsc = dice_stack(preds, gts);
        cm.hd95_mm = hd95_stack(preds, gts, spacing);
        sm.per_case.push_back(cm);
    }
    double dsum = 0.0, hsum = 0.0;
    for (const auto& cm : sm.per_case) {
        dsum += cm.dsc;
        hsum += cm.hd95_mm;
    }
    const double n = static_cast<double>(sm.per_case.size());
    sm.dsc_percent = 100.0 * dsum / n;
    sm.hd95_mm = hsum / n;
    return sm;
}

// ---------------------------------------------------------------------------
// Forgetting matrix
// ---------------------------------------------------------------------------

// Metrics snapshot after one incremental phase.
struct PhaseMetrics {
    int phase_index = 1;                              // 1-based
    std::string trained_site;
    std::map<std::string, SiteMetrics> site_metrics;  // all sites seen so far
};

struct ForgettingDelta {
    std::string site_id;
    int learned_phase = 1;
    int final_phase = 1;
    double dsc_delta = 0.0;   // final - at-learning (negative means forgetting)
    double hd95_delta = 0.0;
};

struct ForgettingMatrix {
    std::vector<int> phases;
    std::vector<std::string> sites;                   // in learning order
    // entry (phase, site) defined iff site trained at or before that phase
    std::map<std::pair<int, std::string>, SiteMetrics> entries;
    std::vector<ForgettingDelta> deltas;

    bool has(int phase, const std::string& site) const {
        return entries.count({phase, site}) > 0;
    }
};

inline ForgettingMatrix forgetting_matrix(const std::vector<PhaseMetrics>& results) {
    ForgettingMatrix fm;
    std::map<std::string, int> learned_at;
    for (const auto& pr : results) {
        fm.phases.push_back(pr.phase_index);
        if (!learned_at.count(pr.trained_site)) {
            learned_at[pr.trained_site] = pr.phase_index;
            fm.sites.push_back(pr.trained_site);
        }
        for (const auto& [site, m] : pr.site_metrics)
            fm.entries[{pr.phase_index, site}] = m;
    }
    if (results.empty()) return fm;
    const auto& last = results.back();
    for (const auto& site : fm.sites) {
        const int lp = learned_at[site];
        auto first_it = fm.entries.find({lp, site});
        auto last_it = fm.entries.find({last.phase_index, site});
        if (first_it == fm.entries.end() || last_it == fm.entries.end()) continue;
        ForgettingDelta d;
        d.site_id = site;
        d.learned_phase = lp;
        d.final_phase = last.phase_index;
        d.dsc_delta = last_it->second.dsc_percent - first_it->second.dsc_percent;
        d.hd95_delta = last_it->second.hd95_mm - first_it->second.hd95_mm;
        fm.deltas.push_back(d);
    }
    return fm;
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

inline std::string format_metric(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

// Schema: scheme, backbone, gamma, phase, site, dsc_percent, hd95_mm
inline std::string metrics_csv(const std::string& scheme, const std::string& backbone,
                               double gamma_percent,
                               const std::vector<PhaseMetrics>& results) {
    std::string out = "scheme,backbone,gamma,phase,site,dsc_percent,hd95_mm\n";
    for (const auto& pr : results)
        for (const auto& [site, m] : pr.site_metrics) {
            out += scheme + "," + backbone + "," + format_metric(gamma_percent) + "," +
                   std::to_string(pr.phase_index) + "," + site + "," +
                   format_metric(m.dsc_percent) + "," + format_metric(m.hd95_mm) + "\n";
        }
    return out;
}

inline std::string forgetting_matrix_csv(const ForgettingMatrix& fm) {
    std::string out = "phase,site,dsc_percent,hd95_mm\n";
    for (int phase : fm.phases)
        for (const auto& site : fm.sites) {
            auto it = fm.entries.find({phase, site});
            if (it == fm.entries.end()) continue;
            out += std::to_string(phase) + "," + site + "," +
                   format_metric(it->second.dsc_percent) + "," +
                   format_metric(it->second.hd95_mm) + "\n";
        }
    return out;
}

inline std::string forgetting_deltas_csv(const ForgettingMatrix& fm) {
    std::string out = "site,learned_phase,final_phase,dsc_delta,hd95_delta\n";
    for (const auto& d : fm.deltas)
        out += d.site_id + "," + std::to_string(d.learned_phase) + "," +
               std::to_string(d.final_phase) + "," + format_metric(d.dsc_delta) + "," +
               format_metric(d.hd95_delta) + "\n";
    return out;
}

}  // namespace itl
