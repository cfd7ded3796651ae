#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "deepcuts/tasks.hpp"

using namespace deepcuts;

TEST_CASE("planted task is deterministic and balanced") {
    TaskSpec spec;
    spec.kind = TaskKind::planted_classify;
    spec.seed = 9;
    Dataset a = make_task(spec);
    Dataset b = make_task(spec);
    REQUIRE(a.train.size() == spec.train_size);
    REQUIRE(a.val.size() == spec.resolved_val_size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].token_ids == b.train[i].token_ids);
        CHECK(a.train[i].class_label == b.train[i].class_label);
    }

    std::size_t positives = 0;
    for (const Example& ex : a.train) positives += static_cast<std::size_t>(ex.class_label);
    const double balance = static_cast<double>(positives) / static_cast<double>(a.train.size());
    CHECK(balance > 0.45);
    CHECK(balance < 0.55);

    // teacher labels its own data perfectly by construction
    for (const Example& ex : a.train) {
        double score = 0.0;
        for (int id : ex.token_ids) {
            if (id >= kByteOffset) score += a.teacher.token_weights[static_cast<std::size_t>(id)];
        }
        CHECK((score > a.teacher.threshold ? 1 : 0) == ex.class_label);
    }

    CHECK(!a.teacher.support.empty());
    for (int id : a.teacher.support) {
        CHECK(a.teacher.token_weights[static_cast<std::size_t>(id)] != 0.0);
    }
    CHECK_THROWS_AS(make_task(TaskSpec{.kind = TaskKind::planted_classify, .vocab = 0}),
                    ValidationError);
}

TEST_CASE("acceptability labels follow the planted bigram grammar") {
    TaskSpec spec;
    spec.kind = TaskKind::toy_acceptability;
    spec.train_size = 400;
    spec.seed = 4;
    Dataset ds = make_task(spec);
    std::set<std::pair<int, int>> forbidden(ds.teacher.forbidden_bigrams.begin(),
                                            ds.teacher.forbidden_bigrams.end());
    std::size_t bad = 0;
    for (const Example& ex : ds.train) {
        bool violates = false;
        for (std::size_t t = 2; t < ex.token_ids.size(); ++t) {  // skip CLS->first
            violates = violates || forbidden.count({ex.token_ids[t - 1], ex.token_ids[t]}) > 0;
        }
        CHECK(ex.class_label == (violates ? 0 : 1));
        bad += static_cast<std::size_t>(violates);
    }
    const double frac = static_cast<double>(bad) / static_cast<double>(ds.train.size());
    CHECK(frac > 0.35);
    CHECK(frac < 0.65);
}

TEST_CASE("pair regression labels are scaled jaccard overlaps in [0,5]") {
    TaskSpec spec;
    spec.kind = TaskKind::toy_pair_regression;
    spec.train_size = 300;
    spec.seed = 12;
    Dataset ds = make_task(spec);
    CHECK(ds.regression);
    for (const Example& ex : ds.train) {
        CHECK(ex.float_label >= 0.0);
        CHECK(ex.float_label <= 5.0);
        // segment 1 never precedes the first SEP
        bool seen_sep = false;
        for (std::size_t i = 0; i < ex.token_ids.size(); ++i) {
            if (!seen_sep) CHECK(ex.segment_ids[i] == 0);
            if (ex.token_ids[i] == kSep) seen_sep = true;
        }
        CHECK(seen_sep);

        // recompute the overlap from the two sides
        std::set<int> sa, sb;
        bool in_b = false;
        for (std::size_t i = 1; i < ex.token_ids.size(); ++i) {
            if (ex.token_ids[i] == kSep) {
                in_b = true;
                continue;
            }
            (in_b ? sb : sa).insert(ex.token_ids[i]);
        }
        std::size_t inter = 0;
        for (int id : sa) inter += sb.count(id);
        const std::size_t uni = sa.size() + sb.size() - inter;
        const double expect = uni == 0 ? 5.0 : 5.0 * static_cast<double>(inter) / static_cast<double>(uni);
        CHECK(ex.float_label == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("tokenize_single and detokenize") {
    Example empty = tokenize_single("", 16);
    CHECK(empty.token_ids == std::vector<int>{kCls});
    CHECK(empty.segment_ids == std::vector<int>{0});

    Example ex = tokenize_single("hi", 16);
    CHECK(ex.token_ids == std::vector<int>{kCls, 'h' + 3, 'i' + 3});
    CHECK(detokenize_single(ex) == "hi");

    // truncation preserves CLS
    Example trunc = tokenize_single("abcdefgh", 4);
    CHECK(trunc.token_ids.size() == 4);
    CHECK(trunc.token_ids[0] == kCls);
    CHECK(detokenize_single(trunc) == "abc");
}

TEST_CASE("tokenize_pair layout") {
    Example ex = tokenize_pair("a", "b", 16);
    CHECK(ex.token_ids == std::vector<int>{1, 'a' + 3, 2, 'b' + 3, 2});
    CHECK(ex.segment_ids == std::vector<int>{0, 0, 0, 1, 1});

    CHECK_THROWS_AS(tokenize_pair("", "", 16), ValidationError);

    // truncation keeps CLS and the final SEP
    Example trunc = tokenize_pair("abcdefgh", "xy", 8);
    CHECK(trunc.token_ids.size() == 8);
    CHECK(trunc.token_ids.front() == kCls);
    CHECK(trunc.token_ids.back() == kSep);
    CHECK(std::count(trunc.token_ids.begin(), trunc.token_ids.end(), kSep) == 2);
}

TEST_CASE("batch stream covers the dataset exactly") {
    TaskSpec spec;
    spec.kind = TaskKind::planted_classify;
    spec.train_size = 10;
    spec.val_size = 1;
    spec.seed = 5;
    Dataset ds = make_task(spec);

    auto stream = batches(ds.train, 4, 77, ds.regression);
    REQUIRE(stream.size() == 3);
    CHECK(stream[0].size() == 4);
    CHECK(stream[1].size() == 4);
    CHECK(stream[2].size() == 2);

    auto stream2 = batches(ds.train, 4, 77, ds.regression);
    for (std::size_t i = 0; i < stream.size(); ++i) {
        CHECK(stream[i].token_ids == stream2[i].token_ids);
    }
    auto stream3 = batches(ds.train, 4, 78, ds.regression);
    bool same_order = true;
    for (std::size_t i = 0; i < stream.size() && same_order; ++i) {
        same_order = stream[i].token_ids == stream3[i].token_ids;
    }
    CHECK(!same_order);

    // multiset equality with the dataset
    std::multiset<std::vector<int>> from_ds, from_stream;
    for (const Example& ex : ds.train) from_ds.insert(ex.token_ids);
    for (const Batch& b : stream) {
        for (const auto& ids : b.token_ids) {
            std::vector<int> unpadded = ids;
            while (!unpadded.empty() && unpadded.back() == kPad) unpadded.pop_back();
            from_stream.insert(unpadded);
        }
    }
    CHECK(from_ds == from_stream);

    CHECK_THROWS_AS(batches(ds.train, 0, 1, false), ValidationError);
}

TEST_CASE("batches pad to the longest sequence in the batch") {
    std::vector<Example> examples;
    for (std::size_t len : {3, 5, 2}) {
        Example ex;
        ex.token_ids.assign(len, 7);
        ex.token_ids[0] = kCls;
        ex.segment_ids.assign(len, 0);
        examples.push_back(ex);
    }
    auto stream = batches(examples, 3, 0, false);
    REQUIRE(stream.size() == 1);
    for (const auto& ids : stream[0].token_ids) CHECK(ids.size() == 5);
}

TEST_CASE("dataset export/import round trip") {
    const std::string dir = std::filesystem::temp_directory_path() / "dc_tasks_test";
    std::filesystem::create_directories(dir);

    TaskSpec spec;
    spec.kind = TaskKind::toy_pair_regression;
    spec.train_size = 25;
    spec.val_size = 5;
    spec.seed = 3;
    Dataset ds = make_task(spec);
    const std::string file = dir + "/pairs.tsv";
    export_dataset(ds.train, true, file);
    auto back = import_dataset(file, true);
    REQUIRE(back.size() == ds.train.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].token_ids == ds.train[i].token_ids);
        CHECK(back[i].segment_ids == ds.train[i].segment_ids);
        CHECK(back[i].float_label == ds.train[i].float_label);
    }
    CHECK_THROWS_AS(import_dataset(dir + "/missing.tsv", true), DataError);
}
