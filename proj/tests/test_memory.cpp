#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "itl/memory.hpp"

using namespace itl;

namespace {

SiteDataset fake_site(const std::string& id, int n_train) {
    SiteDataset ds;
    ds.meta.site_id = id;
    ds.meta.num_cases = n_train;
    for (int i = 0; i < n_train; ++i) {
        SliceSample s;
        s.site_id = id;
        s.case_id = "c" + std::to_string(i);
        s.slice_index = 0;
        s.image = Image(4, 4, static_cast<double>(i));
        s.mask = Mask(4, 4);
        ds.train.push_back(std::move(s));
    }
    return ds;
}

}  // namespace

TEST_CASE("quota follows the update rule", "[memory]") {
    REQUIRE(quota(5.0, 100) == 5);
    REQUIRE(quota(1.0, 30) == 1);   // round(0.3) lifted to the minimum of 1
    REQUIRE(quota(0.0, 1000) == 0);
    REQUIRE(quota(5.0, 40) == 2);
    REQUIRE(quota(3.0, 24) == 1);
    REQUIRE(quota(50.0, 3) == 2);   // round(1.5) away from zero
}

TEST_CASE("update_memory appends the quota from the training split", "[memory]") {
    MemoryStore store;
    store.gamma_percent = 5.0;
    Rng rng(3);
    update_memory(store, fake_site("a", 40), rng);
    REQUIRE(store.per_site.size() == 1);
    REQUIRE(store.per_site[0].exemplars.size() == 2);
    REQUIRE(store.total_size() == 2);
    // exemplars are verbatim copies of training samples
    std::set<std::string> train_ids;
    for (int i = 0; i < 40; ++i) train_ids.insert("c" + std::to_string(i));
    for (const auto& e : store.per_site[0].exemplars)
        REQUIRE(train_ids.count(e.case_id) == 1);
}

TEST_CASE("second update leaves the first site byte-identical", "[memory]") {
    MemoryStore store;
    store.gamma_percent = 5.0;
    Rng rng(4);
    update_memory(store, fake_site("a", 40), rng);
    const auto snapshot = store.per_site[0].exemplars;
    update_memory(store, fake_site("b", 60), rng);
    REQUIRE(store.per_site.size() == 2);
    REQUIRE(store.per_site[0].exemplars.size() == snapshot.size());
    for (std::size_t i = 0; i < snapshot.size(); ++i) {
        REQUIRE(store.per_site[0].exemplars[i].case_id == snapshot[i].case_id);
        REQUIRE(store.per_site[0].exemplars[i].image.v == snapshot[i].image.v);
    }
}

TEST_CASE("selection is deterministic per seed and rejects duplicates", "[memory]") {
    MemoryStore s1, s2;
    s1.gamma_percent = s2.gamma_percent = 10.0;
    Rng r1(9), r2(9);
    update_memory(s1, fake_site("a", 30), r1);
    update_memory(s2, fake_site("a", 30), r2);
    REQUIRE(s1.per_site[0].exemplars.size() == s2.per_site[0].exemplars.size());
    for (std::size_t i = 0; i < s1.per_site[0].exemplars.size(); ++i)
        REQUIRE(s1.per_site[0].exemplars[i].case_id == s2.per_site[0].exemplars[i].case_id);

    Rng r3(10);
    REQUIRE_THROWS(update_memory(s1, fake_site("a", 30), r3));
}

TEST_CASE("memory size follows the quota law for all gammas", "[memory]") {
    for (double gamma : {0.0, 1.0, 3.0, 5.0}) {
        MemoryStore store;
        store.gamma_percent = gamma;
        Rng rng(11);
        const int sizes[] = {24, 30, 40};
        std::size_t expect = 0;
        int i = 0;
        for (int n : sizes) {
            update_memory(store, fake_site("s" + std::to_string(i++), n), rng);
            expect += quota(gamma, n);
            REQUIRE(store.total_size() == expect);
        }
    }
}

TEST_CASE("a batch matching one site's exemplar count is exhaustive", "[memory]") {
    MemoryStore store;
    store.gamma_percent = 100.0;
    Rng rng(12);
    update_memory(store, fake_site("a", 5), rng);
    auto batch = sample_rehearsal_batch(store, 5, rng);
    REQUIRE(batch.size() == 1);
    REQUIRE(batch["a"].size() == 5);
    std::set<std::string> seen;
    for (const auto* s : batch["a"]) seen.insert(s->case_id);
    REQUIRE(seen.size() == 5);  // all five, no repeats
}

TEST_CASE("round-robin sampling balances sites within 5% over 1000 draws", "[memory]") {
    MemoryStore store;
    store.gamma_percent = 100.0;
    Rng rng(13);
    update_memory(store, fake_site("a", 6), rng);
    update_memory(store, fake_site("b", 6), rng);
    std::size_t count_a = 0, count_b = 0;
    for (int i = 0; i < 1000; ++i) {
        auto batch = sample_rehearsal_batch(store, 5, rng);
        count_a += batch.count("a") ? batch["a"].size() : 0;
        count_b += batch.count("b") ? batch["b"].size() : 0;
    }
    REQUIRE(count_a + count_b == 5000);
    REQUIRE(std::abs(static_cast<double>(count_a) - 2500.0) < 125.0);
}

TEST_CASE("empty store samples an empty map", "[memory]") {
    MemoryStore store;
    Rng rng(14);
    REQUIRE(sample_rehearsal_batch(store, 5, rng).empty());
    store.gamma_percent = 0.0;
    update_memory(store, fake_site("a", 10), rng);  // quota 0
    REQUIRE(store.per_site.size() == 1);
    REQUIRE(sample_rehearsal_batch(store, 5, rng).empty());
}

TEST_CASE("memory manifest lists (case, slice) per site", "[memory]") {
    MemoryStore store;
    store.gamma_percent = 10.0;
    Rng rng(15);
    update_memory(store, fake_site("a", 20), rng);
    const auto j = memory_manifest(store);
    REQUIRE(j.at("gamma_percent").get<double>() == 10.0);
    REQUIRE(j.at("sites").size() == 1);
    REQUIRE(j.at("sites")[0].at("site_id") == "a");
    REQUIRE(j.at("sites")[0].at("exemplars").size() == 2);
    REQUIRE(j.at("sites")[0].at("exemplars")[0].contains("case_id"));
    REQUIRE(j.at("sites")[0].at("exemplars")[0].contains("slice_index"));
}
