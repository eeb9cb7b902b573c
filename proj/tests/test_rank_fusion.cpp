#include <doctest.h>

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "evret/rank_fusion.hpp"

using namespace evret;

namespace {

SubmissionTable run_of(int output_len, std::initializer_list<std::pair<const char*, std::vector<std::string>>> rows) {
    SubmissionTable table(output_len, "#");
    for (const auto& [query, ids] : rows) {
        std::vector<std::string> padded = ids;
        while (static_cast<int>(padded.size()) < output_len) padded.push_back("#");
        table.add_row(query, padded);
    }
    return table;
}

}  // namespace

TEST_CASE("single run keeps its order with the exact per-rank scores") {
    auto run = run_of(3, {{"q", {"a", "b", "c"}}});
    auto scores = rrf_scores({run}, "q", 60.0);
    CHECK(scores.at("a") == 1.0 / 61.0);
    CHECK(scores.at("b") == 1.0 / 62.0);
    CHECK(scores.at("c") == 1.0 / 63.0);

    auto fused = rrf_fuse({run}, "q", 60.0, 3, "#");
    CHECK(fused == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("an id ranked second in both runs beats the two singleton leaders") {
    auto run1 = run_of(2, {{"q", {"x", "g"}}});
    auto run2 = run_of(2, {{"q", {"y", "g"}}});
    auto scores = rrf_scores({run1, run2}, "q", 60.0);
    CHECK(scores.at("g") == doctest::Approx(2.0 / 62.0).epsilon(1e-12));
    CHECK(scores.at("x") == doctest::Approx(1.0 / 61.0).epsilon(1e-12));
    CHECK(2.0 / 62.0 > 1.0 / 61.0);

    auto fused = rrf_fuse({run1, run2}, "q", 60.0, 3, "#");
    REQUIRE(fused.size() == 3);
    CHECK(fused[0] == "g");
    CHECK(fused[1] == "x");  // tie with y broken by ascending id
    CHECK(fused[2] == "y");
}

TEST_CASE("padding fills the row when too few unique ids exist") {
    auto run1 = run_of(10, {{"q", {"a", "b"}}});
    auto run2 = run_of(10, {{"q", {"b", "a"}}});
    auto run3 = run_of(10, {{"q", {"a", "b"}}});
    auto fused = rrf_fuse({run1, run2, run3}, "q", 60.0, 10, "#");
    REQUIRE(fused.size() == 10);
    CHECK(fused[0] == "a");
    CHECK(fused[1] == "b");
    for (std::size_t i = 2; i < 10; ++i) CHECK(fused[i] == "#");
}

TEST_CASE("fusing a run with itself preserves its order") {
    auto run = run_of(5, {{"q1", {"e", "d", "c", "b", "a"}}, {"q2", {"m", "n"}}});
    SubmissionTable fused = fuse_submissions({run, run}, 60.0, 5);
    CHECK(fused.row("q1").ids == run.row("q1").ids);
    CHECK(fused.row("q2").ids == run.row("q2").ids);
}

TEST_CASE("disjoint runs interleave by rank with id tie-break inside") {
    auto run1 = run_of(4, {{"q", {"b1", "b2"}}});
    auto run2 = run_of(4, {{"q", {"a1", "a2"}}});
    auto fused = rrf_fuse({run1, run2}, "q", 60.0, 4, "#");
    // both rank-1 ids (1/61) precede both rank-2 ids (1/62)
    CHECK(fused == std::vector<std::string>{"a1", "b1", "a2", "b2"});
}

TEST_CASE("fusion is invariant under run permutations") {
    std::mt19937 rng(314);
    std::uniform_int_distribution<int> pick(0, 19);

    std::vector<SubmissionTable> runs;
    for (int r = 0; r < 5; ++r) {
        SubmissionTable run(6, "#");
        std::vector<std::string> pool;
        for (int i = 0; i < 20; ++i) pool.push_back("img" + std::to_string(i));
        std::shuffle(pool.begin(), pool.end(), rng);
        run.add_row("q", std::vector<std::string>(pool.begin(), pool.begin() + 6));
        runs.push_back(std::move(run));
    }

    auto baseline = rrf_fuse(runs, "q", 60.0, 6, "#");
    std::vector<std::size_t> order{0, 1, 2, 3, 4};
    for (int trial = 0; trial < 50; ++trial) {
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<SubmissionTable> permuted;
        for (std::size_t i : order) permuted.push_back(runs[i]);
        CHECK(rrf_fuse(permuted, "q", 60.0, 6, "#") == baseline);
    }
}

TEST_CASE("dominance: appearing in more runs at better ranks always wins") {
    std::mt19937 rng(161);
    for (int trial = 0; trial < 30; ++trial) {
        // "win" appears in all 3 runs at rank 1; "lose" in 2 runs at worse ranks
        auto run1 = run_of(4, {{"q", {"win", "lose", "f1", "f2"}}});
        auto run2 = run_of(4, {{"q", {"win", "f3", "lose", "f4"}}});
        auto run3 = run_of(4, {{"q", {"win", "f5", "f6", "f7"}}});
        auto fused = rrf_fuse({run1, run2, run3}, "q", 60.0, 4, "#");
        CHECK(fused[0] == "win");
        auto scores = rrf_scores({run1, run2, run3}, "q", 60.0);
        CHECK(scores.at("win") > scores.at("lose"));
        // bound: |runs| / (k + 1)
        for (const auto& [id, s] : scores) {
            CHECK(s > 0.0);
            CHECK(s <= 3.0 / 61.0 + 1e-12);
        }
    }
    (void)rng;
}

TEST_CASE("missing queries and duplicate ids are typed fusion errors") {
    auto complete = run_of(3, {{"q1", {"a"}}, {"q2", {"b"}}});
    auto partial = run_of(3, {{"q1", {"a"}}});
    CHECK_THROWS_WITH_AS(fuse_submissions({complete, partial}, 60.0, 3), doctest::Contains("q2"), FusionError);
    CHECK_THROWS_AS(rrf_fuse({partial}, "q2", 60.0, 3, "#"), FusionError);
    CHECK_THROWS_AS(rrf_fuse({complete}, "q1", 0.0, 3, "#"), FusionError);
    CHECK_THROWS_AS(fuse_submissions({}, 60.0, 3), FusionError);
}

TEST_CASE("fused non-pad ids are exactly the union, truncated at output_len") {
    auto run1 = run_of(3, {{"q", {"a", "b", "c"}}});
    auto run2 = run_of(3, {{"q", {"c", "d"}}});
    auto fused = rrf_fuse({run1, run2}, "q", 60.0, 10, "#");
    std::vector<std::string> non_pad;
    for (const auto& id : fused) {
        if (id != "#") non_pad.push_back(id);
    }
    std::sort(non_pad.begin(), non_pad.end());
    CHECK(non_pad == std::vector<std::string>{"a", "b", "c", "d"});

    auto truncated = rrf_fuse({run1, run2}, "q", 60.0, 2, "#");
    CHECK(truncated.size() == 2);
    CHECK(truncated[0] == "c");  // ranks 3 and 1 -> 1/63 + 1/61 beats every single appearance
}
