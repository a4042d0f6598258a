#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "itl/data.hpp"
#include "itl/rng.hpp"
#include "itl/tensor.hpp"

namespace itl {

// Exemplar count for one finished site. Gamma 0 disables rehearsal; any
// positive gamma keeps at least one exemplar so a site is never silently
// dropped.
inline std::size_t quota(double gamma_percent, std::size_t site_train_size) {
    require(gamma_percent >= 0.0, "quota: gamma must be >= 0");
    require(site_train_size >= 1, "quota: site train size must be >= 1");
    if (gamma_percent == 0.0) return 0;
    const auto q = static_cast<std::size_t>(
        std::lround(gamma_percent / 100.0 * static_cast<double>(site_train_size)));
    return std::max<std::size_t>(1, q);
}

// Exemplar memory M: per-site verbatim copies of training samples, appended
// in phase order and never rewritten.
struct MemoryStore {
    double gamma_percent = 5.0;
    std::uint64_t selection_seed = 0;

    struct SiteEntry {
        std::string site_id;
        std::vector<SliceSample> exemplars;
    };
    std::vector<SiteEntry> per_site;  // insertion (phase) order

    bool has_site(const std::string& site_id) const {
        for (const auto& e : per_site)
            if (e.site_id == site_id) return true;
        return false;
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& e : per_site) n += e.exemplars.size();
        return n;
    }

    bool all_empty() const { return total_size() == 0; }
};

// Appends quota-many exemplars drawn uniformly without replacement from the
// finished site's training split. Existing entries are untouched.
inline void update_memory(MemoryStore& store, const SiteDataset& finished_site, Rng& rng) {
    const auto& site_id = finished_site.meta.site_id;
    require(!store.has_site(site_id), "update_memory: duplicate site " + site_id);
    require(!finished_site.train.empty(), "update_memory: site has no training data");
    const std::size_t k = quota(store.gamma_percent, finished_site.train.size());
    auto idx = rng.sample_without_replacement(finished_site.train.size(), k);
    std::sort(idx.begin(), idx.end());
    MemoryStore::SiteEntry entry;
    entry.site_id = site_id;
    for (auto i : idx) entry.exemplars.push_back(finished_site.train[i]);
    store.per_site.push_back(std::move(entry));
}

// Rehearsal batch grouped by site. Batch slots go to sites round-robin from
// an rng-chosen start, so every past site is drawn equally often in
// expectation. Within a site, exemplars are drawn without replacement
// (cycling through fresh permutations if a site gets more slots than it has
// exemplars), so a slot count equal to the site size is exhaustive.
inline std::map<std::string, std::vector<const SliceSample*>>
sample_rehearsal_batch(const MemoryStore& store, std::size_t batch_size, Rng& rng) {
    std::map<std::string, std::vector<const SliceSample*>> out;
    std::vector<const MemoryStore::SiteEntry*> sites;
    for (const auto& e : store.per_site)
        if (!e.exemplars.empty()) sites.push_back(&e);
    if (sites.empty() || batch_size == 0) return out;

    std::vector<std::size_t> slots(sites.size(), 0);
    const std::size_t start = static_cast<std::size_t>(rng.uniform_index(sites.size()));
    for (std::size_t i = 0; i < batch_size; ++i) ++slots[(start + i) % sites.size()];

    for (std::size_t s = 0; s < sites.size(); ++s) {
        const auto* e = sites[s];
        std::size_t remaining = slots[s];
        auto& dst = out[e->site_id];
        while (remaining > 0) {
            const std::size_t k = std::min(remaining, e->exemplars.size());
            for (auto j : rng.sample_without_replacement(e->exemplars.size(), k))
                dst.push_back(&e->exemplars[j]);
            remaining -= k;
        }
    }
    return out;
}

// Manifest for exact experiment resumption: which (case, slice) of each
// site's training split the memory holds.
inline nlohmann::json memory_manifest(const MemoryStore& store) {
    nlohmann::json sites = nlohmann::json::array();
    for (const auto& e : store.per_site) {
        nlohmann::json ex = nlohmann::json::array();
        for (const auto& s : e.exemplars)
            ex.push_back({{"case_id", s.case_id}, {"slice_index", s.slice_index}});
        sites.push_back({{"site_id", e.site_id}, {"exemplars", ex}});
    }
    return {{"gamma_percent", store.gamma_percent}, {"sites", sites}};
}

inline void write_memory_manifest(const MemoryStore& store, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), "cannot write memory manifest: " + path);
    f << memory_manifest(store).dump(2) << "\n";
}

}  // namespace itl
