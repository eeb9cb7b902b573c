#include <doctest.h>

#include <fstream>
#include <sstream>

#include "evret/submission.hpp"
#include "support/fixtures.hpp"

using namespace evret;
using evtest::TempDir;

TEST_CASE("row validation enforces shape, uniqueness and pad placement") {
    SubmissionTable table(4, "#");
    CHECK_NOTHROW(table.add_row("q1", {"a", "b", "#", "#"}));
    CHECK_THROWS_AS(table.add_row("q2", {"a", "b", "c"}), ConfigError);              // wrong width
    CHECK_THROWS_AS(table.add_row("q3", {"a", "a", "#", "#"}), ConfigError);         // repeat
    CHECK_THROWS_AS(table.add_row("q4", {"a", "#", "b", "#"}), ConfigError);         // pad in the middle
    CHECK_THROWS_AS(table.add_row("q1", {"x", "#", "#", "#"}), ConfigError);         // duplicate query
    CHECK(table.non_pad_ids("q1") == std::vector<std::string>{"a", "b"});
}

TEST_CASE("csv round-trip preserves rows and order") {
    TempDir dir("submission");
    SubmissionTable table(3, "#");
    table.add_row("q2", {"x", "y", "z"});
    table.add_row("q1", {"m", "#", "#"});
    table.write_csv(dir.file("s.csv"));

    {
        std::ifstream in(dir.file("s.csv"), std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        CHECK(ss.str() == "q2,x,y,z\nq1,m,#,#\n");
    }

    SubmissionTable loaded = SubmissionTable::read_csv(dir.file("s.csv"));
    REQUIRE(loaded.size() == 2);
    CHECK(loaded.output_len() == 3);
    CHECK(loaded.rows()[0].query_id == "q2");  // file order preserved
    CHECK(loaded.row("q1").ids == std::vector<std::string>{"m", "#", "#"});
}

TEST_CASE("csv loading rejects malformed files") {
    TempDir dir("submission");
    auto write = [&](const char* name, const char* body) {
        std::ofstream out(dir.file(name), std::ios::binary);
        out << body;
    };

    write("ragged.csv", "q1,a,b\nq2,c\n");
    CHECK_THROWS_WITH_AS(SubmissionTable::read_csv(dir.file("ragged.csv")), doctest::Contains("width"),
                         ConfigError);

    write("dup.csv", "q1,a,b\nq1,c,d\n");
    CHECK_THROWS_AS(SubmissionTable::read_csv(dir.file("dup.csv")), ConfigError);

    write("midpad.csv", "q1,#,b\n");
    CHECK_THROWS_AS(SubmissionTable::read_csv(dir.file("midpad.csv")), ConfigError);

    write("empty.csv", "");
    CHECK_THROWS_AS(SubmissionTable::read_csv(dir.file("empty.csv")), ConfigError);

    write("idonly.csv", "q1\n");
    CHECK_THROWS_AS(SubmissionTable::read_csv(dir.file("idonly.csv")), ConfigError);
}

TEST_CASE("all-pad rows are legal") {
    SubmissionTable table(3, "#");
    CHECK_NOTHROW(table.add_row("q", {"#", "#", "#"}));
    CHECK(table.non_pad_ids("q").empty());
}
