#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "itl/engine.hpp"

namespace itl {

// One run's loss trajectory: per-epoch l_all, concatenated across phases.
struct LossCurve {
    std::string label;
    std::vector<double> train;
    std::vector<double> val;
    std::vector<int> phase_starts;  // epoch index where each phase begins
};

inline LossCurve loss_curve_of(const std::string& label,
                               const std::vector<PhaseResult>& results) {
    LossCurve c;
    c.label = label;
    for (const auto& r : results) {
        c.phase_starts.push_back(static_cast<int>(c.train.size()));
        for (const auto& b : r.train_epoch_loss) c.train.push_back(b.l_all);
        for (const auto& b : r.val_epoch_loss) c.val.push_back(b.l_all);
    }
    return c;
}

namespace detail {

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

inline const char* curve_color(std::size_t i) {
    static const char* palette[] = {"#1f6fb4", "#d1495b", "#2e8b57", "#8c5aa5",
                                    "#c77b2e", "#4a4a4a"};
    return palette[i % 6];
}

}  // namespace detail

// Static SVG figure: solid train curves, dashed validation curves, dotted
// phase boundaries.
inline std::string svg_loss_curves(const std::vector<LossCurve>& curves,
                                   const std::string& title = "training / validation loss") {
    const int W = 960, H = 540, ml = 70, mr = 20, mt = 40, mb = 50;
    const double pw = W - ml - mr, ph = H - mt - mb;

    std::size_t max_n = 1;
    double ymax = 0.0;
    for (const auto& c : curves) {
        max_n = std::max({max_n, c.train.size(), c.val.size()});
        for (double v : c.train) ymax = std::max(ymax, v);
        for (double v : c.val) ymax = std::max(ymax, v);
    }
    if (ymax <= 0.0) ymax = 1.0;
    ymax *= 1.05;

    auto X = [&](std::size_t i) {
        return ml + (max_n <= 1 ? 0.0 : pw * static_cast<double>(i) /
                                        static_cast<double>(max_n - 1));
    };
    auto Y = [&](double v) { return mt + ph * (1.0 - v / ymax); };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(W) +
         "\" height=\"" + std::to_string(H) + "\" viewBox=\"0 0 " + std::to_string(W) +
         " " + std::to_string(H) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + std::to_string(W / 2) + "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">" + title + "</text>\n";

    // axes and gridlines
    for (int g = 0; g <= 5; ++g) {
        const double v = ymax * g / 5.0;
        const double y = Y(v);
        s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + detail::fmt(y) + "\" x2=\"" +
             std::to_string(W - mr) + "\" y2=\"" + detail::fmt(y) +
             "\" stroke=\"#dddddd\"/>\n";
        s += "<text x=\"" + std::to_string(ml - 8) + "\" y=\"" + detail::fmt(y + 4) +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
             detail::fmt(v) + "</text>\n";
    }
    s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(mt) + "\" x2=\"" +
         std::to_string(ml) + "\" y2=\"" + std::to_string(H - mb) +
         "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(H - mb) +
         "\" x2=\"" + std::to_string(W - mr) + "\" y2=\"" + std::to_string(H - mb) +
         "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + std::to_string(W / 2) + "\" y=\"" + std::to_string(H - 14) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch"
         "</text>\n";
    s += "<text x=\"18\" y=\"" + std::to_string(H / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "transform=\"rotate(-90 18 " + std::to_string(H / 2) + ")\">loss</text>\n";

    auto polyline = [&](const std::vector<double>& ys, const char* color, bool dashed) {
        if (ys.empty()) return std::string();
        std::string p = "<polyline fill=\"none\" stroke=\"" + std::string(color) +
                        "\" stroke-width=\"1.5\"";
        if (dashed) p += " stroke-dasharray=\"5,4\"";
        p += " points=\"";
        for (std::size_t i = 0; i < ys.size(); ++i)
            p += detail::fmt(X(i)) + "," + detail::fmt(Y(ys[i])) + " ";
        p += "\"/>\n";
        return p;
    };

    for (std::size_t ci = 0; ci < curves.size(); ++ci) {
        const auto& c = curves[ci];
        const char* color = detail::curve_color(ci);
        for (std::size_t pi = 1; pi < c.phase_starts.size(); ++pi) {
            const double x = X(static_cast<std::size_t>(c.phase_starts[pi]));
            s += "<line x1=\"" + detail::fmt(x) + "\" y1=\"" + std::to_string(mt) +
                 "\" x2=\"" + detail::fmt(x) + "\" y2=\"" + std::to_string(H - mb) +
                 "\" stroke=\"#bbbbbb\" stroke-dasharray=\"2,3\"/>\n";
        }
        s += polyline(c.train, color, false);
        s += polyline(c.val, color, true);
        const int ly = mt + 16 + static_cast<int>(ci) * 18;
        s += "<line x1=\"" + std::to_string(W - mr - 190) + "\" y1=\"" + std::to_string(ly) +
             "\" x2=\"" + std::to_string(W - mr - 160) + "\" y2=\"" + std::to_string(ly) +
             "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        s += "<text x=\"" + std::to_string(W - mr - 152) + "\" y=\"" + std::to_string(ly + 4) +
             "\" font-family=\"sans-serif\" font-size=\"11\">" + c.label +
             " (solid train, dashed val)</text>\n";
    }
    s += "</svg>\n";
    return s;
}

}  // namespace itl
