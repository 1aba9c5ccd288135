#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <string>
#include <vector>

#include "switchtab/corruption.hpp"
#include "switchtab/dataset.hpp"
#include "switchtab/preprocess.hpp"

using namespace switchtab;

namespace {

TabularDataset from_text(const std::string& text, const std::vector<ColumnSchema>& schema) {
    return dataset_from_rows(csv::parse(text), schema);
}

std::vector<ColumnSchema> one_numeric(const std::string& name) {
    return {{name, ColumnKind::numerical, TaskKind::none, 0}};
}

}  // namespace

TEST_CASE("load_csv parses a plain numeric column") {
    auto data = from_text("age\n20\n30\n40\n", one_numeric("age"));
    CHECK(data.n_rows == 3);
    REQUIRE(data.columns.size() == 1);
    CHECK(*data.columns[0].numbers[0] == 20.0);
    CHECK(*data.columns[0].numbers[2] == 40.0);
}

TEST_CASE("empty cell in a numeric column becomes the missing marker") {
    auto data = from_text("age\n20\n\n40\n", one_numeric("age"));
    CHECK_FALSE(data.columns[0].numbers[1].has_value());
    auto data2 = from_text("age\n20\nNA\nnull\n", one_numeric("age"));
    CHECK_FALSE(data2.columns[0].numbers[1].has_value());
    CHECK_FALSE(data2.columns[0].numbers[2].has_value());
}

TEST_CASE("schema column absent from the header is an error") {
    CHECK_THROWS_WITH_AS(from_text("age\n20\n", one_numeric("city")),
                         "column not found: city", DataError);
}

TEST_CASE("unparseable numeric cell and empty file are errors") {
    CHECK_THROWS_AS(from_text("age\ntwenty\n", one_numeric("age")), DataError);
    CHECK_THROWS_AS(from_text("", one_numeric("age")), DataError);
    CHECK_THROWS_AS(from_text("age\n", one_numeric("age")), DataError);
}

TEST_CASE("extra file columns not in the schema are ignored") {
    auto data = from_text("noise,age\nx,20\ny,30\n", one_numeric("age"));
    CHECK(data.n_rows == 2);
    CHECK(data.columns.size() == 1);
}

TEST_CASE("rfc4180 quoting: commas, quotes and newlines inside fields") {
    auto rows = csv::parse("a,b\n\"x,y\",\"say \"\"hi\"\"\"\n\"line\nbreak\",2\n");
    REQUIRE(rows.size() == 3);
    CHECK(rows[1][0] == "x,y");
    CHECK(rows[1][1] == "say \"hi\"");
    CHECK(rows[2][0] == "line\nbreak");
    // round trip through the writer
    auto line = csv::to_line({"x,y", "say \"hi\"", "plain"});
    auto parsed = csv::parse(line);
    CHECK(parsed[0] == std::vector<std::string>{"x,y", "say \"hi\"", "plain"});
}

TEST_CASE("fit computes mean/min/max over non-missing entries") {
    auto data = from_text("x\n1\n2\n\n3\n", one_numeric("x"));
    auto prep = Preprocessor::fit(data);
    const auto& stats = prep.rules()[0].numeric;
    CHECK(stats.mean == doctest::Approx(2.0));
    CHECK(stats.min == 1.0);
    CHECK(stats.max == 3.0);
}

TEST_CASE("fit collects categorical mode and levels in first-appearance order") {
    std::vector<ColumnSchema> schema{{"c", ColumnKind::categorical, TaskKind::none, 0}};
    auto data = from_text("c\na\na\nb\n\n", schema);
    auto prep = Preprocessor::fit(data);
    const auto& cat = prep.rules()[0].categorical;
    CHECK(cat.levels == std::vector<std::string>{"a", "b"});
    CHECK(cat.mode_index == 0);
    CHECK(prep.output_columns().size() == 1);  // k-1 = 1
}

TEST_CASE("column missing in every row is dropped") {
    std::vector<ColumnSchema> schema = one_numeric("x");
    schema.push_back({"gone", ColumnKind::numerical, TaskKind::none, 0});
    auto data = from_text("x,gone\n1,\n2,\n", schema);
    auto prep = Preprocessor::fit(data);
    CHECK(prep.dropped_columns() == std::vector<std::string>{"gone"});
    CHECK(prep.output_columns().size() == 1);
}

TEST_CASE("single-level categorical is dropped and recorded") {
    std::vector<ColumnSchema> schema = one_numeric("x");
    schema.push_back({"c", ColumnKind::categorical, TaskKind::none, 0});
    auto data = from_text("x,c\n1,only\n2,only\n3,\n", schema);
    auto prep = Preprocessor::fit(data);
    CHECK(prep.dropped_columns() == std::vector<std::string>{"c"});
}

TEST_CASE("all columns dropped is an error") {
    auto data = from_text("x\n\n\n", one_numeric("x"));
    CHECK_THROWS_AS(Preprocessor::fit(data), DataError);
}

TEST_CASE("min-max scaling maps fitted extrema to 0 and 1") {
    auto data = from_text("x\n1\n2\n3\n", one_numeric("x"));
    auto prep = Preprocessor::fit(data);
    auto m = prep.transform(data);
    CHECK(m.values == std::vector<double>{0.0, 0.5, 1.0});
}

TEST_CASE("constant column scales to the 0.5 midpoint") {
    auto data = from_text("x\n7\n7\n7\n", one_numeric("x"));
    auto prep = Preprocessor::fit(data);
    auto m = prep.transform(data);
    CHECK(m.values == std::vector<double>{0.5, 0.5, 0.5});
}

TEST_CASE("out-of-range values at transform time clip to [0,1]") {
    auto train = from_text("x\n1\n3\n", one_numeric("x"));
    auto prep = Preprocessor::fit(train);
    auto wild = from_text("x\n-10\n10\n2\n", one_numeric("x"));
    auto m = prep.transform(wild);
    CHECK(m.values == std::vector<double>{0.0, 1.0, 0.5});
}

TEST_CASE("binary categorical encodes to 0 and 1 after scaling") {
    std::vector<ColumnSchema> schema{{"c", ColumnKind::categorical, TaskKind::none, 0}};
    auto data = from_text("c\nlow\nhigh\nlow\n", schema);
    auto prep = Preprocessor::fit(data);
    auto m = prep.transform(data);
    CHECK(m.column_names == std::vector<std::string>{"c__bd0"});
    CHECK(m.values == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("backward difference codes match the reference table for k=4") {
    // standard contrast-coding table: column j compares level j+1 to level j
    auto m = backward_difference_matrix(4);
    const std::vector<double> expected{
        -0.75, -0.5, -0.25,  // level 1
        0.25,  -0.5, -0.25,  // level 2
        0.25,  0.5,  -0.25,  // level 3
        0.25,  0.5,  0.75,   // level 4
    };
    REQUIRE(m.size() == expected.size());
    for (std::size_t i = 0; i < m.size(); ++i)
        CHECK(m[i] == doctest::Approx(expected[i]).epsilon(1e-15));
}

TEST_CASE("unseen categorical level maps to the mode encoding") {
    std::vector<ColumnSchema> schema{{"c", ColumnKind::categorical, TaskKind::none, 0}};
    auto train = from_text("c\na\na\nb\n", schema);
    auto prep = Preprocessor::fit(train);
    auto test = from_text("c\nz\na\n", schema);
    auto m = prep.transform(test);
    CHECK(m.at(0, 0) == m.at(1, 0));  // z behaves as the mode "a"
}

TEST_CASE("transform of mismatched schema is rejected") {
    auto train = from_text("x\n1\n2\n", one_numeric("x"));
    auto prep = Preprocessor::fit(train);
    auto other = from_text("y\n1\n2\n", one_numeric("y"));
    CHECK_THROWS_AS((void)prep.transform(other), DataError);
}

TEST_CASE("labels encode to class indices in first-appearance order") {
    std::vector<ColumnSchema> schema = one_numeric("x");
    schema.push_back({"y", ColumnKind::label, TaskKind::binary, 2});
    auto data = from_text("x,y\n1,yes\n2,no\n3,yes\n", schema);
    auto prep = Preprocessor::fit(data);
    auto m = prep.transform(data);
    REQUIRE(m.labels.has_value());
    CHECK(*m.labels == std::vector<double>{0.0, 1.0, 0.0});
    CHECK(m.task == TaskKind::binary);
    CHECK(m.n_classes == 2);
}

TEST_CASE("randomized preprocessing invariants hold") {
    // random schemas, random missing cells: output in [0,1], no missing,
    // k-level categoricals expand to exactly k-1 columns
    Rng rng(99);
    for (int round = 0; round < 25; ++round) {
        const std::size_t n_cols = 1 + rng.below(10);
        const std::size_t n_rows = 2 + rng.below(199);
        std::vector<ColumnSchema> schema;
        std::vector<bool> is_cat;
        for (std::size_t c = 0; c < n_cols; ++c) {
            const bool cat = rng.below(2) == 0;
            is_cat.push_back(cat);
            schema.push_back({"col" + std::to_string(c),
                              cat ? ColumnKind::categorical : ColumnKind::numerical,
                              TaskKind::none, 0});
        }
        std::string text;
        for (std::size_t c = 0; c < n_cols; ++c)
            text += (c ? "," : "") + schema[c].name;
        text += "\n";
        for (std::size_t r = 0; r < n_rows; ++r) {
            for (std::size_t c = 0; c < n_cols; ++c) {
                if (c) text += ",";
                if (rng.uniform() < 0.15) continue;  // missing cell
                if (is_cat[c])
                    text += "v" + std::to_string(rng.below(1 + rng.below(6)));
                else
                    text += format_double(rng.uniform(-50, 50));
            }
            text += "\n";
        }
        TabularDataset data = from_text(text, schema);
        Preprocessor prep;
        try {
            prep = Preprocessor::fit(data);
        } catch (const DataError&) {
            continue;  // every column dropped; legal outcome for tiny inputs
        }
        FeatureMatrix m = prep.transform(data);
        std::size_t expected_cols = 0;
        for (const auto& rule : prep.rules()) {
            if (rule.dropped || rule.schema.kind == ColumnKind::label) continue;
            if (rule.schema.kind == ColumnKind::numerical) expected_cols += 1;
            else expected_cols += rule.categorical.levels.size() - 1;
        }
        CHECK(m.M == expected_cols);
        CHECK(m.values.size() == m.n * m.M);
        for (double v : m.values) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("corrupt with ratio 0 returns the input untouched") {
    auto data = from_text("x\n1\n2\n3\n", one_numeric("x"));
    auto m = Preprocessor::fit(data).transform(data);
    Rng rng(1);
    std::vector<std::size_t> rows{0, 1, 2};
    auto res = corrupt(m, rows, 0.0, rng);
    CHECK(res.t == 0);
    CHECK(res.values == m.values);
    for (const auto& mk : res.mask) CHECK(mk.empty());
}

TEST_CASE("corrupt replaces exactly floor(ratio*M) entries per row") {
    // 10 numeric columns with distinct values per column
    std::string text = "a,b,c,d,e,f,g,h,i,j\n";
    Rng gen(5);
    std::vector<ColumnSchema> schema;
    for (char c = 'a'; c <= 'j'; ++c)
        schema.push_back({std::string(1, c), ColumnKind::numerical, TaskKind::none, 0});
    for (int r = 0; r < 40; ++r) {
        for (int c = 0; c < 10; ++c) text += (c ? "," : "") + format_double(gen.uniform());
        text += "\n";
    }
    auto m = Preprocessor::fit(from_text(text, schema)).transform(from_text(text, schema));
    Rng rng(7);
    std::vector<std::size_t> rows(m.n);
    for (std::size_t i = 0; i < m.n; ++i) rows[i] = i;
    auto res = corrupt(m, rows, 0.3, rng);
    CHECK(res.t == 3);
    for (std::size_t r = 0; r < res.n; ++r) {
        std::size_t changed = 0;
        for (std::size_t c = 0; c < res.M; ++c)
            if (res.values[r * res.M + c] != m.at(r, c)) ++changed;
        CHECK(changed == 3);
        CHECK(res.mask[r].size() == 3);
        // replacements come from the column pool
        for (std::size_t c : res.mask[r]) {
            const auto& pool = m.pools[c];
            const double v = res.values[r * res.M + c];
            CHECK(std::binary_search(pool.begin(), pool.end(), v));
        }
    }
}

TEST_CASE("singleton pool keeps its only value") {
    auto data = from_text("x,y\n7,1\n7,2\n7,3\n", {one_numeric("x")[0], one_numeric("y")[0]});
    auto m = Preprocessor::fit(data).transform(data);
    Rng rng(3);
    std::vector<std::size_t> rows{0, 1, 2};
    auto res = corrupt(m, rows, 1.0, rng);
    for (std::size_t r = 0; r < 3; ++r) CHECK(res.values[r * 2 + 0] == 0.5);
}

TEST_CASE("corruption ratio outside [0,1] is rejected") {
    auto data = from_text("x\n1\n2\n", one_numeric("x"));
    auto m = Preprocessor::fit(data).transform(data);
    Rng rng(1);
    std::vector<std::size_t> rows{0};
    CHECK_THROWS_AS((void)corrupt(m, rows, -0.1, rng), DataError);
    CHECK_THROWS_AS((void)corrupt(m, rows, 1.5, rng), DataError);
}

TEST_CASE("corruption is deterministic given the seed") {
    auto data = from_text("x,y,z\n1,4,9\n2,5,8\n3,6,7\n", {one_numeric("x")[0],
                          one_numeric("y")[0], one_numeric("z")[0]});
    auto m = Preprocessor::fit(data).transform(data);
    std::vector<std::size_t> rows{0, 1, 2};
    Rng r1(42), r2(42);
    auto a = corrupt(m, rows, 0.67, r1);
    auto b = corrupt(m, rows, 0.67, r2);
    CHECK(a.values == b.values);
    CHECK(a.mask == b.mask);
}

TEST_CASE("sample_batch_pairs chunks two permutations") {
    Rng rng(1);
    auto pairs = sample_batch_pairs(4, 2, rng);
    REQUIRE(pairs.size() == 2);
    std::multiset<std::size_t> seen1, seen2;
    for (const auto& p : pairs) {
        CHECK(p.first.size() == p.second.size());
        seen1.insert(p.first.begin(), p.first.end());
        seen2.insert(p.second.begin(), p.second.end());
    }
    CHECK(seen1 == std::multiset<std::size_t>{0, 1, 2, 3});
    CHECK(seen2 == std::multiset<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("final partial batch is kept") {
    Rng rng(2);
    auto pairs = sample_batch_pairs(5, 2, rng);
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[2].first.size() == 1);
    CHECK(pairs[2].second.size() == 1);
}

TEST_CASE("pair sampling is deterministic and rejects n < 2") {
    Rng r1(9), r2(9);
    auto a = sample_batch_pairs(7, 3, r1);
    auto b = sample_batch_pairs(7, 3, r2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(a[i].second == b[i].second);
    }
    Rng r3(1);
    CHECK_THROWS_AS((void)sample_batch_pairs(1, 2, r3), DataError);
}

TEST_CASE("transformed-matrix export uses generated column names") {
    std::vector<ColumnSchema> schema = one_numeric("x");
    schema.push_back({"c", ColumnKind::categorical, TaskKind::none, 0});
    auto data = from_text("x,c\n1,a\n2,b\n3,c\n4,a\n", schema);
    auto m = Preprocessor::fit(data).transform(data);
    auto rows = csv::parse(matrix_to_csv(m));
    REQUIRE(rows.size() == 5);
    CHECK(rows[0] == std::vector<std::string>{"x", "c__bd0", "c__bd1"});
    double v;
    CHECK(parse_double(rows[1][0], v));
}

TEST_CASE("fit-transform roundtrip is deterministic") {
    std::string text = "x,c\n1,a\n2,b\n3,a\n";
    std::vector<ColumnSchema> schema = one_numeric("x");
    schema.push_back({"c", ColumnKind::categorical, TaskKind::none, 0});
    auto d1 = from_text(text, schema);
    auto d2 = from_text(text, schema);
    auto m1 = Preprocessor::fit(d1).transform(d1);
    auto m2 = Preprocessor::fit(d2).transform(d2);
    CHECK(m1.values == m2.values);
    CHECK(m1.column_names == m2.column_names);
}
