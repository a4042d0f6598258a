#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "itl/image_io.hpp"
#include "itl/rng.hpp"
#include "itl/tensor.hpp"

namespace itl {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct SiteMeta {
    std::string site_id;
    std::string modality = "MRI";
    int num_cases = 0;
    double field_strength_tesla = 1.5;
    std::pair<double, double> in_plane_resolution_mm{1.0, 1.0};   // [lo, hi]
    std::pair<double, double> through_plane_mm{3.0, 3.0};
    std::string source_name;
};

struct SliceSample {
    std::string site_id;
    std::string case_id;
    int slice_index = 0;
    Image image;            // z-scored intensities
    Mask mask;
    double in_plane_mm = 1.0;
    double through_plane_mm = 3.0;
};

// Three axial neighbors (k-1, k, k+1) stacked channel-wise.
struct AugmentedInput {
    Tensor channels;  // c == 3
};

struct SiteDataset {
    SiteMeta meta;
    std::vector<SliceSample> train;
    std::vector<SliceSample> test;
};

struct SynthSiteSpec {
    std::string site_id;
    int num_cases = 6;
    int slices_per_case = 4;
    std::string shape_family = "ellipse";  // ellipse | blob
    double intensity_mean = 100.0;
    double intensity_std = 5.0;
    double contrast = 40.0;
    double noise_std = 4.0;
    std::pair<double, double> size_range{0.18, 0.32};  // semi-axis as fraction of min(H,W)
    std::uint64_t rng_seed = 1;

    void validate() const {
        require(!site_id.empty(), "synth spec: site_id must be nonempty");
        require(num_cases >= 1, "synth spec: num_cases must be >= 1");
        require(slices_per_case >= 1, "synth spec: slices_per_case must be >= 1");
        require(shape_family == "ellipse" || shape_family == "blob",
                "synth spec: shape_family must be ellipse or blob");
        require(noise_std >= 0.0, "synth spec: noise_std must be >= 0");
        require(size_range.first > 0.0 && size_range.second >= size_range.first,
                "synth spec: size_range must be a nonempty positive range");
    }
};

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

// Per-case z-score over all voxels of the stack. A constant stack maps to
// all zeros with a warning, so degenerate cases cannot poison training.
inline std::vector<Image> normalize_intensity(std::vector<Image> volume) {
    require(!volume.empty(), "normalize_intensity: empty volume");
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : volume) {
        for (double d : s.v) sum += d;
        n += s.v.size();
    }
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (const auto& s : volume)
        for (double d : s.v) var += (d - mean) * (d - mean);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) {
        std::cerr << "[itl] warning: constant intensity volume, normalizing to zeros\n";
        for (auto& s : volume) std::fill(s.v.begin(), s.v.end(), 0.0);
        return volume;
    }
    for (auto& s : volume)
        for (double& d : s.v) d = (d - mean) / sd;
    return volume;
}

// Half-pixel-center bilinear resampling with edge clamping.
inline Image resample_bilinear(const Image& in, int th, int tw) {
    require(th >= 1 && tw >= 1, "resample: target dims must be >= 1");
    Image out(th, tw);
    const double sy = static_cast<double>(in.h) / th;
    const double sx = static_cast<double>(in.w) / tw;
    for (int y = 0; y < th; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        const double wy = fy - y0;
        const int y1 = std::clamp(y0 + 1, 0, in.h - 1);
        y0 = std::clamp(y0, 0, in.h - 1);
        for (int x = 0; x < tw; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            const double wx = fx - x0;
            const int x1 = std::clamp(x0 + 1, 0, in.w - 1);
            x0 = std::clamp(x0, 0, in.w - 1);
            out.at(y, x) = (1 - wy) * ((1 - wx) * in.at(y0, x0) + wx * in.at(y0, x1)) +
                           wy * ((1 - wx) * in.at(y1, x0) + wx * in.at(y1, x1));
        }
    }
    return out;
}

inline Mask resample_nearest(const Mask& in, int th, int tw) {
    require(th >= 1 && tw >= 1, "resample: target dims must be >= 1");
    Mask out(th, tw);
    const double sy = static_cast<double>(in.h) / th;
    const double sx = static_cast<double>(in.w) / tw;
    for (int y = 0; y < th; ++y) {
        const int iy = std::min(in.h - 1, static_cast<int>(std::floor((y + 0.5) * sy)));
        for (int x = 0; x < tw; ++x) {
            const int ix = std::min(in.w - 1, static_cast<int>(std::floor((x + 0.5) * sx)));
            out.at(y, x) = in.at(iy, ix);
        }
    }
    return out;
}

inline SliceSample resample_slice(const SliceSample& s, int th, int tw) {
    require(s.image.h == s.mask.h && s.image.w == s.mask.w,
            "resample_slice: image/mask shape mismatch");
    SliceSample out = s;
    if (s.image.h == th && s.image.w == tw) return out;
    out.image = resample_bilinear(s.image, th, tw);
    out.mask = resample_nearest(s.mask, th, tw);
    const double ry = static_cast<double>(s.image.h) / th;
    const double rx = static_cast<double>(s.image.w) / tw;
    out.in_plane_mm = s.in_plane_mm * 0.5 * (ry + rx);
    return out;
}

// ---------------------------------------------------------------------------
// Train/test split (by case, 4:1)
// ---------------------------------------------------------------------------

inline std::pair<std::vector<std::string>, std::vector<std::string>>
split_train_test(const std::vector<std::string>& cases, std::uint64_t seed) {
    require(cases.size() >= 2, "split_train_test: need at least 2 cases");
    std::vector<std::string> order = cases;
    Rng rng(seed);
    rng.shuffle(order);
    const auto n = order.size();
    std::size_t n_test = static_cast<std::size_t>(
        std::lround(static_cast<double>(n) / 5.0));
    n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
    std::vector<std::string> test(order.begin(), order.begin() + n_test);
    std::vector<std::string> train(order.begin() + n_test, order.end());
    return {train, test};
}

// ---------------------------------------------------------------------------
// Axial-context input
// ---------------------------------------------------------------------------

inline AugmentedInput make_augmented_input(const std::vector<Image>& case_volume, int k) {
    require(!case_volume.empty(), "make_augmented_input: empty case volume");
    const int n = static_cast<int>(case_volume.size());
    if (k < 0 || k >= n) throw std::out_of_range("make_augmented_input: slice index out of range");
    const Image& mid = case_volume[k];
    Tensor t(3, mid.h, mid.w);
    // boundary slices replicate the edge slice
    const int idx[3] = {std::max(0, k - 1), k, std::min(n - 1, k + 1)};
    for (int c = 0; c < 3; ++c) {
        const Image& src = case_volume[idx[c]];
        require(src.h == mid.h && src.w == mid.w, "make_augmented_input: ragged case volume");
        std::copy(src.v.begin(), src.v.end(), t.channel(c));
    }
    return AugmentedInput{std::move(t)};
}

// Groups a flat sample list into per-case volumes, preserving first-seen
// case order; slices sorted by slice_index. Cases are keyed by
// (site_id, case_id) so pooled multi-site lists never merge cases.
struct CaseView {
    std::string site_id;
    std::string case_id;
    std::vector<const SliceSample*> slices;
};

inline std::vector<CaseView> group_cases(const std::vector<SliceSample>& samples) {
    std::vector<CaseView> cases;
    std::map<std::pair<std::string, std::string>, std::size_t> pos;
    for (const auto& s : samples) {
        const auto key = std::make_pair(s.site_id, s.case_id);
        auto it = pos.find(key);
        if (it == pos.end()) {
            pos.emplace(key, cases.size());
            cases.push_back(CaseView{s.site_id, s.case_id, {}});
            it = pos.find(key);
        }
        cases[it->second].slices.push_back(&s);
    }
    for (auto& cv : cases)
        std::sort(cv.slices.begin(), cv.slices.end(),
                  [](const SliceSample* a, const SliceSample* b) {
                      return a->slice_index < b->slice_index;
                  });
    return cases;
}

inline AugmentedInput augmented_input_at(const CaseView& cv, int pos) {
    std::vector<Image> vol;
    vol.reserve(cv.slices.size());
    for (const auto* s : cv.slices) vol.push_back(s->image);
    return make_augmented_input(vol, pos);
}

// ---------------------------------------------------------------------------
// Training augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
    double flip_prob = 0.5;
    double max_rotation_deg = 15.0;
    double max_shift_frac = 0.10;
};

struct AugmentParams {
    bool hflip = false;
    double angle_deg = 0.0;
    double shift_y_frac = 0.0;
    double shift_x_frac = 0.0;
};

inline AugmentParams draw_augment_params(const AugmentConfig& cfg, Rng& rng) {
    AugmentParams p;
    p.hflip = rng.uniform() < cfg.flip_prob;
    p.angle_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    p.shift_y_frac = rng.uniform(-cfg.max_shift_frac, cfg.max_shift_frac);
    p.shift_x_frac = rng.uniform(-cfg.max_shift_frac, cfg.max_shift_frac);
    return p;
}

// One geometric transform (flip, then rotation about center, then shift)
// applied to all channels and the mask. Channels sample bilinearly with
// zero fill; the mask samples nearest so it stays binary.
inline std::pair<AugmentedInput, Mask>
augment(const AugmentedInput& input, const Mask& mask, const AugmentParams& p) {
    const Tensor& in = input.channels;
    require(in.c == 3, "augment: expected 3 channels");
    require(in.h == mask.h && in.w == mask.w, "augment: input/mask shape mismatch");
    const int h = in.h, w = in.w;
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    const double th = p.angle_deg * M_PI / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const double ty = p.shift_y_frac * h, tx = p.shift_x_frac * w;

    Tensor out(3, h, w);
    Mask mout(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // invert: undo shift, undo rotation, undo flip
            const double ry = y - ty - cy, rx = x - tx - cx;
            double sy = st * rx + ct * ry + cy;
            double sx = ct * rx - st * ry + cx;
            if (p.hflip) sx = (w - 1) - sx;

            // mask: nearest
            const int my = static_cast<int>(std::lround(sy));
            const int mx = static_cast<int>(std::lround(sx));
            if (my >= 0 && my < h && mx >= 0 && mx < w) mout.at(y, x) = mask.at(my, mx);

            // channels: bilinear, zero outside
            const int y0 = static_cast<int>(std::floor(sy));
            const int x0 = static_cast<int>(std::floor(sx));
            const double wy = sy - y0, wx = sx - x0;
            for (int c = 0; c < 3; ++c) {
                auto px = [&](int yy, int xx) -> double {
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
                    return in.at(c, yy, xx);
                };
                out.at(c, y, x) =
                    (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
                    wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1));
            }
        }
    }
    return {AugmentedInput{std::move(out)}, std::move(mout)};
}

// ---------------------------------------------------------------------------
// Synthetic multi-site generator
// ---------------------------------------------------------------------------

namespace detail {

struct SynthShape {
    double cy, cx;         // center (pixels)
    double a, b;           // semi-axes (pixels)
    double theta;          // orientation
    double wobble[6];      // radial perturbation coefficients (blob only)
    bool blob = false;

    bool inside(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double ct = std::cos(theta), st = std::sin(theta);
        const double u = ct * dx + st * dy;
        const double v = -st * dx + ct * dy;
        double r2 = (u * u) / (a * a) + (v * v) / (b * b);
        if (!blob) return r2 <= 1.0;
        const double phi = std::atan2(v / b, u / a);
        double pert = 1.0;
        for (int k = 0; k < 3; ++k)
            pert += wobble[2 * k] * std::cos((k + 2) * phi) +
                    wobble[2 * k + 1] * std::sin((k + 2) * phi);
        pert = std::max(0.35, pert);
        return r2 <= pert * pert;
    }
};

inline SynthShape draw_shape(const SynthSiteSpec& spec, int h, int w, Rng& rng) {
    SynthShape s;
    const double m = std::min(h, w);
    s.cy = h / 2.0 + rng.uniform(-0.10, 0.10) * h;
    s.cx = w / 2.0 + rng.uniform(-0.10, 0.10) * w;
    s.a = m * rng.uniform(spec.size_range.first, spec.size_range.second);
    s.b = m * rng.uniform(spec.size_range.first, spec.size_range.second);
    s.theta = rng.uniform(0.0, M_PI);
    s.blob = spec.shape_family == "blob";
    for (double& c : s.wobble) c = 0.12 * rng.normal();
    return s;
}

}  // namespace detail

// Raw (pre-normalization) case: image = base + contrast * foreground + noise,
// mask = the exact foreground indicator. Deterministic per (spec, case_index).
inline std::pair<std::vector<Image>, std::vector<Mask>>
synthesize_case_raw(const SynthSiteSpec& spec, int case_index, int h, int w) {
    spec.validate();
    Rng rng = Rng(spec.rng_seed).split("case").split(static_cast<std::uint64_t>(case_index));
    const double base = spec.intensity_mean + spec.intensity_std * rng.normal();
    detail::SynthShape shape = detail::draw_shape(spec, h, w, rng);

    std::vector<Image> images;
    std::vector<Mask> masks;
    const int ns = spec.slices_per_case;
    const double mid = (ns - 1) / 2.0;
    for (int s = 0; s < ns; ++s) {
        // shapes taper away from the central slice, as a volume would
        const double taper = ns == 1 ? 1.0 : 1.0 - 0.25 * std::abs(s - mid) / std::max(mid, 0.5);
        detail::SynthShape sl = shape;
        sl.a = std::max(1.5, shape.a * taper);
        sl.b = std::max(1.5, shape.b * taper);
        Image img(h, w, base);
        Mask msk(h, w, 0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (sl.inside(y, x)) {
                    msk.at(y, x) = 1;
                    img.at(y, x) += spec.contrast;
                }
        if (spec.noise_std > 0.0)
            for (double& d : img.v) d += spec.noise_std * rng.normal();
        images.push_back(std::move(img));
        masks.push_back(std::move(msk));
    }
    return {std::move(images), std::move(masks)};
}

inline SiteMeta synth_site_meta(const SynthSiteSpec& spec) {
    SiteMeta meta;
    meta.site_id = spec.site_id;
    meta.modality = "SYN";
    meta.num_cases = spec.num_cases;
    meta.field_strength_tesla = 1.5;
    meta.in_plane_resolution_mm = {1.0, 1.0};
    meta.through_plane_mm = {3.0, 3.0};
    meta.source_name = "synthetic";
    return meta;
}

inline SiteDataset synthesize_site(const SynthSiteSpec& spec, int h, int w) {
    spec.validate();
    SiteDataset ds;
    ds.meta = synth_site_meta(spec);

    std::vector<std::string> case_ids;
    std::vector<std::vector<SliceSample>> case_samples;
    for (int c = 0; c < spec.num_cases; ++c) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "case%03d", c);
        case_ids.emplace_back(buf);
        auto [raw, masks] = synthesize_case_raw(spec, c, h, w);
        auto norm = normalize_intensity(std::move(raw));
        std::vector<SliceSample> samples;
        for (int s = 0; s < spec.slices_per_case; ++s) {
            SliceSample sample;
            sample.site_id = spec.site_id;
            sample.case_id = buf;
            sample.slice_index = s;
            sample.image = std::move(norm[s]);
            sample.mask = std::move(masks[s]);
            sample.in_plane_mm = 1.0;
            sample.through_plane_mm = 3.0;
            samples.push_back(std::move(sample));
        }
        case_samples.push_back(std::move(samples));
    }

    if (spec.num_cases >= 2) {
        auto [train_ids, test_ids] =
            split_train_test(case_ids, Rng(spec.rng_seed).split("split").next_u64());
        auto in = [](const std::vector<std::string>& v, const std::string& id) {
            return std::find(v.begin(), v.end(), id) != v.end();
        };
        for (std::size_t c = 0; c < case_ids.size(); ++c) {
            auto& dst = in(train_ids, case_ids[c]) ? ds.train : ds.test;
            for (auto& s : case_samples[c]) dst.push_back(std::move(s));
        }
    } else {
        for (auto& s : case_samples[0]) ds.train.push_back(std::move(s));
    }
    return ds;
}

inline std::vector<SiteDataset>
synthesize_sites(const std::vector<SynthSiteSpec>& specs, int h, int w) {
    require(!specs.empty(), "synthesize_sites: no specs");
    std::vector<SiteDataset> out;
    out.reserve(specs.size());
    for (const auto& s : specs) out.push_back(synthesize_site(s, h, w));
    return out;
}

// ---------------------------------------------------------------------------
// Manifest I/O
// ---------------------------------------------------------------------------
//
// One JSON document per site:
// {
//   "site_id": "...", "modality": "...",
//   "spacing": {"in_plane_mm": 1.0, "through_plane_mm": 3.0},
//   "cases": [{"case_id": "...", "slices": [{"image": "p.raw", "mask": "m.png"}]}],
//   // optional: "field_strength_tesla", "source_name"
// }
// Image paths end in .png (16-bit grayscale) or anything else (raw float32,
// header H,W,1 int32 LE). Paths are relative to the manifest's directory.

inline Image read_slice_image(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".png")
        return read_png_gray(path);
    return read_raw_f32(path);
}

// Loads, normalizes per case, and resamples to (target_h, target_w).
// target 0 means keep native resolution (all slices must agree).
inline SiteDataset load_site(const std::string& manifest_path,
                             int target_h = 0, int target_w = 0,
                             std::uint64_t split_seed = 0) {
    namespace fs = std::filesystem;
    require(fs::exists(manifest_path), "manifest not found: " + manifest_path);
    std::ifstream in(manifest_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("manifest parse error in " + manifest_path + ": " + e.what());
    }
    for (const char* k : {"site_id", "spacing", "cases"})
        require(j.contains(k), "manifest missing key '" + std::string(k) + "': " + manifest_path);

    SiteDataset ds;
    ds.meta.site_id = j.at("site_id").get<std::string>();
    ds.meta.modality = j.value("modality", std::string("MRI"));
    ds.meta.field_strength_tesla = j.value("field_strength_tesla", 1.5);
    ds.meta.source_name = j.value("source_name", std::string(""));
    const double in_plane = j.at("spacing").at("in_plane_mm").get<double>();
    const double through = j.at("spacing").at("through_plane_mm").get<double>();
    require(in_plane > 0 && through > 0, "manifest spacing must be positive: " + manifest_path);
    ds.meta.in_plane_resolution_mm = {in_plane, in_plane};
    ds.meta.through_plane_mm = {through, through};

    const fs::path root = fs::path(manifest_path).parent_path();
    std::vector<std::string> case_ids;
    std::vector<std::vector<SliceSample>> case_samples;
    int native_h = 0, native_w = 0;

    for (const auto& jc : j.at("cases")) {
        const auto case_id = jc.at("case_id").get<std::string>();
        std::vector<Image> raw;
        std::vector<Mask> masks;
        int slice_index = 0;
        for (const auto& js : jc.at("slices")) {
            const std::string ipath = (root / js.at("image").get<std::string>()).string();
            const std::string mpath = (root / js.at("mask").get<std::string>()).string();
            const std::string where = " (case " + case_id + ", slice " +
                                      std::to_string(slice_index) + ")";
            try {
                raw.push_back(read_slice_image(ipath));
                masks.push_back(read_png_mask(mpath));
            } catch (const std::exception& e) {
                throw std::runtime_error(std::string(e.what()) + where);
            }
            const Image& img = raw.back();
            const Mask& msk = masks.back();
            require(img.h == msk.h && img.w == msk.w,
                    "image/mask shape mismatch" + where);
            if (native_h == 0) { native_h = img.h; native_w = img.w; }
            else if (target_h == 0)
                require(img.h == native_h && img.w == native_w,
                        "inconsistent native slice shapes" + where);
            ++slice_index;
        }
        require(!raw.empty(), "case with no slices: " + case_id);
        auto norm = normalize_intensity(std::move(raw));

        std::vector<SliceSample> samples;
        for (std::size_t s = 0; s < norm.size(); ++s) {
            SliceSample sample;
            sample.site_id = ds.meta.site_id;
            sample.case_id = case_id;
            sample.slice_index = static_cast<int>(s);
            sample.image = std::move(norm[s]);
            sample.mask = std::move(masks[s]);
            sample.in_plane_mm = in_plane;
            sample.through_plane_mm = through;
            if (target_h > 0) sample = resample_slice(sample, target_h, target_w);
            samples.push_back(std::move(sample));
        }
        case_ids.push_back(case_id);
        case_samples.push_back(std::move(samples));
    }
    require(!case_ids.empty(), "manifest has no cases: " + manifest_path);
    ds.meta.num_cases = static_cast<int>(case_ids.size());

    if (case_ids.size() >= 2) {
        auto [train_ids, test_ids] = split_train_test(
            case_ids, split_seed != 0 ? split_seed : hash_tag(ds.meta.site_id));
        auto in_list = [](const std::vector<std::string>& v, const std::string& id) {
            return std::find(v.begin(), v.end(), id) != v.end();
        };
        for (std::size_t c = 0; c < case_ids.size(); ++c) {
            auto& dst = in_list(train_ids, case_ids[c]) ? ds.train : ds.test;
            for (auto& s : case_samples[c]) dst.push_back(std::move(s));
        }
    } else {
        for (auto& s : case_samples[0]) ds.train.push_back(std::move(s));
    }
    return ds;
}

// Writes one synthetic site to dir: raw float32 slice files, PNG masks and
// the manifest. Returns the manifest path. Rerunning with the same spec
// produces byte-identical files.
inline std::string write_synthetic_site(const SynthSiteSpec& spec, int h, int w,
                                        const std::string& dir) {
    namespace fs = std::filesystem;
    spec.validate();
    fs::create_directories(fs::path(dir) / spec.site_id);
    nlohmann::json cases = nlohmann::json::array();
    for (int c = 0; c < spec.num_cases; ++c) {
        auto [raw, masks] = synthesize_case_raw(spec, c, h, w);
        char cid[32];
        std::snprintf(cid, sizeof(cid), "case%03d", c);
        nlohmann::json slices = nlohmann::json::array();
        for (int s = 0; s < spec.slices_per_case; ++s) {
            char iname[64], mname[64];
            std::snprintf(iname, sizeof(iname), "%s/%s_s%02d.raw", spec.site_id.c_str(), cid, s);
            std::snprintf(mname, sizeof(mname), "%s/%s_s%02d_mask.png", spec.site_id.c_str(), cid, s);
            write_raw_f32((fs::path(dir) / iname).string(), raw[s]);
            write_png_mask((fs::path(dir) / mname).string(), masks[s]);
            slices.push_back({{"image", iname}, {"mask", mname}});
        }
        cases.push_back({{"case_id", cid}, {"slices", slices}});
    }
    nlohmann::json j{
        {"site_id", spec.site_id},
        {"modality", "SYN"},
        {"source_name", "synthetic"},
        {"spacing", {{"in_plane_mm", 1.0}, {"through_plane_mm", 3.0}}},
        {"cases", cases},
    };
    const std::string mpath = (fs::path(dir) / (spec.site_id + "_manifest.json")).string();
    std::ofstream out(mpath);
    out << j.dump(2) << "\n";
    return mpath;
}

}  // namespace itl
