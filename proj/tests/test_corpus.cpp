#include <doctest.h>

#include <fstream>
#include <unordered_map>

#include "evret/corpus.hpp"
#include "support/fixtures.hpp"

using namespace evret;
using evtest::SyntheticCorpus;
using evtest::TempDir;

namespace {

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

}  // namespace

TEST_CASE("ingest counts articles and images") {
    TempDir dir("corpus");
    write_file(dir.file("c.jsonl"),
               R"({"article_id":"a1","title":"t1","pub_date":"May 1, 2024","content":"c1","images":[{"image_id":"i1","uri":"u1"},{"image_id":"i2","uri":"u2"}]})"
               "\n"
               R"({"article_id":"a2","title":"t2","pub_date":"May 2, 2024","content":"c2","images":[{"image_id":"i3","uri":"u3"}]})"
               "\n");
    CorpusStore store = CorpusStore::ingest(dir.file("c.jsonl"));
    CHECK(store.article_count() == 2);
    CHECK(store.image_count() == 3);
}

TEST_CASE("duplicate article_id is rejected naming the id") {
    TempDir dir("corpus");
    write_file(dir.file("c.jsonl"),
               R"({"article_id":"a1","title":"x","pub_date":"","content":"","images":[]})"
               "\n"
               R"({"article_id":"a1","title":"y","pub_date":"","content":"","images":[]})"
               "\n");
    CHECK_THROWS_WITH_AS(CorpusStore::ingest(dir.file("c.jsonl")),
                         doctest::Contains("duplicate article_id \"a1\""), CorpusError);
}

TEST_CASE("duplicate image_id across articles is rejected") {
    TempDir dir("corpus");
    write_file(dir.file("c.jsonl"),
               R"({"article_id":"a1","title":"","pub_date":"","content":"","images":[{"image_id":"i1","uri":"u"}]})"
               "\n"
               R"({"article_id":"a2","title":"","pub_date":"","content":"","images":[{"image_id":"i1","uri":"u"}]})"
               "\n");
    CHECK_THROWS_WITH_AS(CorpusStore::ingest(dir.file("c.jsonl")), doctest::Contains("\"i1\""), CorpusError);
}

TEST_CASE("malformed line is rejected with its line number") {
    TempDir dir("corpus");
    write_file(dir.file("c.jsonl"),
               R"({"article_id":"a1","title":"","pub_date":"","content":"","images":[]})"
               "\n{not json\n");
    CHECK_THROWS_WITH_AS(CorpusStore::ingest(dir.file("c.jsonl")), doctest::Contains("line 2"), CorpusError);
}

TEST_CASE("image entry without image_id is rejected") {
    TempDir dir("corpus");
    write_file(dir.file("c.jsonl"),
               R"({"article_id":"a1","title":"","pub_date":"","content":"","images":[{"uri":"u"}]})"
               "\n");
    CHECK_THROWS_AS(CorpusStore::ingest(dir.file("c.jsonl")), CorpusError);
}

TEST_CASE("ids containing commas or line breaks are rejected") {
    TempDir dir("corpus");
    write_file(dir.file("c.jsonl"),
               R"({"article_id":"a,1","title":"","pub_date":"","content":"","images":[]})"
               "\n");
    CHECK_THROWS_AS(CorpusStore::ingest(dir.file("c.jsonl")), CorpusError);
}

TEST_CASE("lookups return exact records or not-found") {
    TempDir dir("corpus");
    write_file(dir.file("c.jsonl"),
               R"({"article_id":"a1","title":"T","pub_date":"D","content":"C","images":[{"image_id":"i1","uri":"u1"}]})"
               "\n");
    CorpusStore store = CorpusStore::ingest(dir.file("c.jsonl"));

    const Article* art = store.find_article("a1");
    REQUIRE(art != nullptr);
    CHECK(art->title == "T");
    CHECK(art->pub_date == "D");
    CHECK(art->content == "C");
    CHECK(art->image_ids == std::vector<std::string>{"i1"});

    CHECK(store.find_article("zzz") == nullptr);
    // image ids live in a separate namespace
    CHECK(store.find_article("i1") == nullptr);
    CHECK(store.find_image("i1") != nullptr);
    CHECK(store.find_image("a1") == nullptr);
}

TEST_CASE("synthetic corpus round-trips through ingest") {
    TempDir dir("corpus");
    SyntheticCorpus synth = SyntheticCorpus::make(1000, 50, 7);
    synth.write_corpus_jsonl(dir.file("c.jsonl"));
    CorpusStore store = CorpusStore::ingest(dir.file("c.jsonl"));

    // independent in-memory oracle built straight from the fixture
    std::unordered_map<std::string, const evtest::SyntheticArticle*> oracle;
    for (const auto& art : synth.articles) oracle[art.article_id] = &art;

    REQUIRE(store.article_count() == 1000);
    std::mt19937 rng(99);
    std::uniform_int_distribution<std::size_t> pick(0, synth.articles.size() - 1);
    for (int i = 0; i < 50; ++i) {
        const auto& expected = *oracle[synth.articles[pick(rng)].article_id];
        const Article* got = store.find_article(expected.article_id);
        REQUIRE(got != nullptr);
        CHECK(got->title == expected.title);
        CHECK(got->pub_date == expected.pub_date);
        CHECK(got->content == expected.content);
        REQUIRE(got->image_ids.size() == expected.images.size());
        for (std::size_t j = 0; j < expected.images.size(); ++j) {
            CHECK(got->image_ids[j] == expected.images[j].first);
            const ImageRecord* rec = store.find_image(expected.images[j].first);
            REQUIRE(rec != nullptr);
            CHECK(rec->uri == expected.images[j].second);
            CHECK(rec->owner_article_id == expected.article_id);
        }
    }
}

TEST_CASE("referential integrity holds after ingest") {
    TempDir dir("corpus");
    SyntheticCorpus synth = SyntheticCorpus::make(100, 10, 3);
    synth.write_corpus_jsonl(dir.file("c.jsonl"));
    CorpusStore store = CorpusStore::ingest(dir.file("c.jsonl"));

    for (const auto& art : store.articles()) {
        for (const auto& image_id : art.image_ids) {
            const ImageRecord* rec = store.find_image(image_id);
            REQUIRE(rec != nullptr);
            CHECK(rec->owner_article_id == art.article_id);
        }
    }
}

TEST_CASE("ingest is deterministic over the same bytes") {
    TempDir dir("corpus");
    SyntheticCorpus synth = SyntheticCorpus::make(50, 5, 11);
    synth.write_corpus_jsonl(dir.file("c.jsonl"));
    CorpusStore a = CorpusStore::ingest(dir.file("c.jsonl"));
    CorpusStore b = CorpusStore::ingest(dir.file("c.jsonl"));

    REQUIRE(a.article_count() == b.article_count());
    REQUIRE(a.image_count() == b.image_count());
    for (std::size_t i = 0; i < a.article_count(); ++i) {
        CHECK(a.articles()[i].article_id == b.articles()[i].article_id);
    }
}

TEST_CASE("query set loading validates captions and ids") {
    TempDir dir("queries");
    write_file(dir.file("q.jsonl"),
               R"({"query_id":"q1","caption":"a flood"})"
               "\n"
               R"({"query_id":"q2","caption":"a fire"})"
               "\n");
    auto queries = load_queries(dir.file("q.jsonl"));
    REQUIRE(queries.size() == 2);
    CHECK(queries[0].query_id == "q1");
    CHECK(queries[1].caption == "a fire");

    write_file(dir.file("empty_caption.jsonl"), R"({"query_id":"q1","caption":""})"
                                                "\n");
    CHECK_THROWS_AS(load_queries(dir.file("empty_caption.jsonl")), CorpusError);

    write_file(dir.file("dup.jsonl"),
               R"({"query_id":"q1","caption":"x"})"
               "\n"
               R"({"query_id":"q1","caption":"y"})"
               "\n");
    CHECK_THROWS_WITH_AS(load_queries(dir.file("dup.jsonl")), doctest::Contains("duplicate query_id"),
                         CorpusError);
}
