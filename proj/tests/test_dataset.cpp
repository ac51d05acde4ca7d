#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "sri/common.hpp"
#include "sri/dataset.hpp"

using namespace sri;

namespace {

SynthConfig small_cfg(std::int64_t n, int d, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.n = n;
    cfg.d = d;
    cfg.seed = seed;
    return cfg;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/sri_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("generate_synthetic couples the label to the predictor") {
    SynthConfig cfg = small_cfg(20000, 64, 7);
    Dataset ds = generate_synthetic(cfg);
    REQUIRE(ds.n() == 20000);
    ds.validate();

    double sum1 = 0.0, sum0 = 0.0;
    int n1 = 0, n0 = 0;
    for (const auto& o : ds.obs) {
        REQUIRE(o.s == 1);
        REQUIRE(o.labels.size() == 1);
        REQUIRE(o.labels[0] == *o.gold);
        if (o.t == 1) {
            sum1 += *o.gold;
            ++n1;
        } else {
            sum0 += *o.gold;
            ++n0;
        }
    }
    CHECK(n1 + n0 == 20000);
    CHECK(sum1 / n1 > sum0 / n0);
    // Treatment share should be near treat_prob.
    CHECK(static_cast<double>(n1) / 20000 == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("generate_synthetic empty and deterministic cases") {
    Dataset empty = generate_synthetic(small_cfg(0, 8, 1));
    CHECK(empty.n() == 0);

    Dataset a = generate_synthetic(small_cfg(50, 8, 123));
    Dataset b = generate_synthetic(small_cfg(50, 8, 123));
    for (int i = 0; i < 50; ++i) {
        CHECK(a.obs[i].t == b.obs[i].t);
        CHECK(a.obs[i].y == b.obs[i].y);
        CHECK(*a.obs[i].gold == *b.obs[i].gold);
    }

    Dataset c = generate_synthetic(small_cfg(50, 8, 124));
    bool any_diff = false;
    for (int i = 0; i < 50; ++i) any_diff = any_diff || a.obs[i].y != c.obs[i].y;
    CHECK(any_diff);
}

TEST_CASE("slope zero with positive intercept labels everything 1") {
    SynthConfig cfg = small_cfg(500, 4, 3);
    cfg.slope = 0.0;
    cfg.intercept = 1.0;
    Dataset ds = generate_synthetic(cfg);
    for (const auto& o : ds.obs) CHECK(*o.gold == 1);
}

TEST_CASE("noise is shared across coordinates within a unit") {
    // Y_ij - alpha_j * T = eps_i for every j, so subtracting the treatment
    // effect per coordinate must leave a constant vector.
    SynthConfig cfg = small_cfg(20, 6, 9);
    Dataset ds = generate_synthetic(cfg);
    Dataset ds2 = generate_synthetic(cfg);
    std::vector<double> alpha = detail::draw_alpha(cfg);
    for (const auto& o : ds.obs) {
        double e0 = o.y[0] - alpha[0] * o.t;
        for (int j = 1; j < cfg.d; ++j) {
            CHECK(o.y[j] - alpha[j] * o.t == doctest::Approx(e0).epsilon(1e-12));
        }
    }
    (void)ds2;
}

TEST_CASE("draw_unit reproduces generator units without materialising y") {
    SynthConfig cfg = small_cfg(100, 16, 77);
    Dataset ds = generate_synthetic(cfg);
    std::vector<double> alpha = detail::draw_alpha(cfg);
    for (int i = 0; i < 100; ++i) {
        detail::UnitDraw u = detail::draw_unit(cfg, alpha, i, nullptr);
        CHECK(u.t == ds.obs[i].t);
        double sum = 0.0;
        for (double v : ds.obs[i].y) sum += v;
        CHECK(u.sum_y == doctest::Approx(sum).epsilon(1e-12));
        int gold = detail::sigmoid(cfg.intercept + cfg.slope * u.sum_y) > 0.5 ? 1 : 0;
        CHECK(gold == *ds.obs[i].gold);
    }
}

TEST_CASE("coef_seed pins alpha across different unit seeds") {
    SynthConfig a = small_cfg(10, 8, 100);
    SynthConfig b = small_cfg(10, 8, 200);
    a.coef_seed = 55;
    b.coef_seed = 55;
    CHECK(detail::draw_alpha(a) == detail::draw_alpha(b));
    Dataset da = generate_synthetic(a);
    Dataset db = generate_synthetic(b);
    bool any_diff = false;
    for (int i = 0; i < 10; ++i) any_diff = any_diff || da.obs[i].y != db.obs[i].y;
    CHECK(any_diff);  // units still vary with seed even when alpha is pinned
}

TEST_CASE("corrupt_labels zero-error case reproduces gold for every coder") {
    Dataset ds = generate_synthetic(small_cfg(200, 4, 5));
    Dataset noisy = corrupt_labels(ds, {1.0, 1.0}, 99);
    CHECK(noisy.num_coders == 2);
    for (const auto& o : noisy.obs) {
        REQUIRE(o.labels.size() == 2);
        CHECK(o.labels[0] == *o.gold);
        CHECK(o.labels[1] == *o.gold);
    }
}

TEST_CASE("corrupt_labels flip rate concentrates at 1 - accuracy") {
    Dataset ds = generate_synthetic(small_cfg(20000, 4, 11));
    Dataset noisy = corrupt_labels(ds, {0.9}, 13);
    int flipped = 0;
    for (const auto& o : noisy.obs)
        if (o.labels[0] != *o.gold) ++flipped;
    double rate = static_cast<double>(flipped) / 20000;
    CHECK(std::fabs(rate - 0.1) < 0.01);
    // Binomial concentration bound from the module contract.
    CHECK(std::fabs(rate - 0.1) < 3.0 * std::sqrt(0.9 * 0.1 / 20000));
}

TEST_CASE("near-chance accuracy decorrelates labels from gold") {
    Dataset ds = generate_synthetic(small_cfg(100000, 2, 21));
    Dataset noisy = corrupt_labels(ds, {0.5 + 1e-9}, 23);
    double sl = 0.0, sg = 0.0, slg = 0.0, sll = 0.0, sgg = 0.0;
    const double n = 100000;
    for (const auto& o : noisy.obs) {
        double l = o.labels[0], g = *o.gold;
        sl += l;
        sg += g;
        slg += l * g;
        sll += l * l;
        sgg += g * g;
    }
    double cov = slg / n - (sl / n) * (sg / n);
    double corr = cov / std::sqrt((sll / n - (sl / n) * (sl / n)) * (sgg / n - (sg / n) * (sg / n)));
    CHECK(std::fabs(corr) < 0.02);
}

TEST_CASE("corrupt_labels rejects chance-level coders and multi-class flips are uniform") {
    Dataset ds = generate_synthetic(small_cfg(100, 2, 1));
    CHECK_THROWS_AS(corrupt_labels(ds, {0.5}, 1), InvalidArgument);
    CHECK_THROWS_AS(corrupt_labels(ds, {0.49}, 1), InvalidArgument);
    CHECK_THROWS_AS(corrupt_labels(ds, {}, 1), InvalidArgument);

    // Three classes: errors should split evenly between the two wrong ones.
    Dataset tri = ds;
    tri.num_classes = 3;
    for (auto& o : tri.obs) o.gold = 0;
    std::vector<Observation> rep;
    for (int r = 0; r < 300; ++r)
        for (const auto& o : tri.obs) rep.push_back(o);
    tri.obs = rep;  // 30000 units, all gold 0
    Dataset noisy = corrupt_labels(tri, {0.7}, 31);
    int c1 = 0, c2 = 0;
    for (const auto& o : noisy.obs) {
        if (o.labels[0] == 1) ++c1;
        if (o.labels[0] == 2) ++c2;
    }
    double total = c1 + c2;
    CHECK(total / 30000.0 == doctest::Approx(0.3).epsilon(0.05));
    CHECK(c1 / total == doctest::Approx(0.5).epsilon(0.06));
}

TEST_CASE("sample_annotations keeps an exact count and is deterministic") {
    Dataset ds = generate_synthetic(small_cfg(20000, 2, 41));
    Dataset s = sample_annotations(ds, 0.1, 7);
    int labeled = 0;
    for (const auto& o : s.obs) {
        if (o.s == 1) {
            ++labeled;
            CHECK(o.labels.size() == 1);
        } else {
            CHECK(o.labels.empty());
        }
        CHECK(o.gold.has_value());  // gold retained everywhere
    }
    CHECK(labeled == 2000);

    Dataset s2 = sample_annotations(ds, 0.1, 7);
    for (int i = 0; i < ds.n(); ++i) CHECK(s.obs[i].s == s2.obs[i].s);

    Dataset all = sample_annotations(ds, 1.0, 7);
    for (const auto& o : all.obs) CHECK(o.s == 1);

    CHECK_THROWS_AS(sample_annotations(ds, 0.0, 7), InvalidArgument);
}

TEST_CASE("sampled subset matches the full (T, gold) distribution") {
    Dataset ds = generate_synthetic(small_cfg(20000, 2, 51));
    Dataset s = sample_annotations(ds, 0.25, 8);
    double full[2][2] = {{0, 0}, {0, 0}};
    double sub[2][2] = {{0, 0}, {0, 0}};
    int nsub = 0;
    for (const auto& o : s.obs) {
        full[o.t][*o.gold] += 1.0;
        if (o.s == 1) {
            sub[o.t][*o.gold] += 1.0;
            ++nsub;
        }
    }
    for (int t = 0; t < 2; ++t)
        for (int g = 0; g < 2; ++g) {
            double pf = full[t][g] / 20000.0;
            double ps = sub[t][g] / nsub;
            CHECK(std::fabs(pf - ps) < 3.0 * std::sqrt(pf * (1 - pf) / nsub) + 1e-9);
        }
}

TEST_CASE("split_folds balances and covers") {
    FoldAssignment f1 = split_folds(10, 2, 1);
    std::vector<int> sizes1(2, 0);
    for (int f : f1.fold_of) ++sizes1[f];
    CHECK(sizes1[0] == 5);
    CHECK(sizes1[1] == 5);

    FoldAssignment f2 = split_folds(11, 2, 1);
    std::vector<int> sizes2(2, 0);
    for (int f : f2.fold_of) ++sizes2[f];
    std::sort(sizes2.begin(), sizes2.end());
    CHECK(sizes2[0] == 5);
    CHECK(sizes2[1] == 6);

    FoldAssignment f3 = split_folds(20000, 5, 3);
    std::vector<int> sizes3(5, 0);
    for (int i = 0; i < 20000; ++i) {
        REQUIRE(f3.fold_of[i] >= 0);
        REQUIRE(f3.fold_of[i] < 5);
        ++sizes3[f3.fold_of[i]];
    }
    for (int c : sizes3) CHECK(c == 4000);

    CHECK_THROWS_AS(split_folds(5, 6, 1), InvalidArgument);
    CHECK_THROWS_AS(split_folds(5, 0, 1), InvalidArgument);
}

TEST_CASE("synth_predictions flips the same way as coders") {
    Dataset ds = generate_synthetic(small_cfg(20000, 2, 61));
    std::vector<int> preds = synth_predictions(ds, 0.8, 17);
    int correct = 0;
    for (int i = 0; i < ds.n(); ++i)
        if (preds[i] == *ds.obs[i].gold) ++correct;
    CHECK(static_cast<double>(correct) / 20000 == doctest::Approx(0.8).epsilon(0.01));
    CHECK_THROWS_AS(synth_predictions(ds, 0.5, 17), InvalidArgument);
}

TEST_CASE("csv round-trip preserves every field") {
    SynthConfig cfg = small_cfg(120, 5, 71);
    cfg.num_z_strata = 3;
    Dataset ds = generate_synthetic(cfg);
    ds = corrupt_labels(ds, {0.9, 0.8}, 3);
    ds = sample_annotations(ds, 0.5, 4);
    std::vector<int> preds = synth_predictions(ds, 0.7, 5);
    for (int i = 0; i < ds.n(); ++i) ds.obs[i].pred = preds[i];

    TempFile tf("roundtrip.csv");
    write_csv(ds, tf.path);
    Dataset back = load_csv(tf.path);

    REQUIRE(back.n() == ds.n());
    CHECK(back.d == ds.d);
    CHECK(back.p == ds.p);
    CHECK(back.num_coders == ds.num_coders);
    CHECK(back.num_classes == ds.num_classes);
    for (int i = 0; i < ds.n(); ++i) {
        const Observation& a = ds.obs[i];
        const Observation& b = back.obs[i];
        CHECK(a.t == b.t);
        CHECK(a.s == b.s);
        CHECK(a.y == b.y);  // to_chars/from_chars is an exact round trip
        CHECK(a.z == b.z);
        CHECK(a.labels == b.labels);
        CHECK(a.gold == b.gold);
        CHECK(a.pred == b.pred);
    }
}

TEST_CASE("load_csv parses a small well-formed file") {
    TempFile tf("small.csv");
    {
        std::ofstream out(tf.path);
        out << "t,s,y_0,y_1,l_0,gold\n";
        out << "1,1,0.5,-1.25,1,1\n";
        out << "0,0,0.25,2,,0\n";
        out << "0,1,-0.5,0.125,0,\n";
    }
    Dataset ds = load_csv(tf.path);
    REQUIRE(ds.n() == 3);
    CHECK(ds.d == 2);
    CHECK(ds.p == 0);
    CHECK(ds.num_coders == 1);
    CHECK(ds.num_classes == 2);
    CHECK(ds.obs[0].t == 1);
    CHECK(ds.obs[0].y == std::vector<double>{0.5, -1.25});
    CHECK(ds.obs[1].s == 0);
    CHECK(ds.obs[1].labels.empty());
    CHECK(*ds.obs[1].gold == 0);
    CHECK(!ds.obs[2].gold.has_value());
}

TEST_CASE("load_csv names the offending line") {
    TempFile tf("bad.csv");

    SUBCASE("labeled row with empty label cell") {
        {
            std::ofstream out(tf.path);
            out << "t,s,y_0,l_0\n";
            out << "1,1,0.5,1\n";
            out << "1,1,0.5,\n";
        }
        try {
            load_csv(tf.path);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        }
    }

    SUBCASE("wrong field count") {
        {
            std::ofstream out(tf.path);
            out << "t,s,y_0,l_0\n";
            out << "1,1,0.5\n";
        }
        try {
            load_csv(tf.path);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }

    SUBCASE("label outside the pinned class range") {
        {
            std::ofstream out(tf.path);
            out << "t,s,y_0,l_0\n";
            out << "1,1,0.5,1\n";
            out << "1,1,0.5,3\n";
        }
        CsvSchema schema;
        schema.num_classes = 2;
        try {
            load_csv(tf.path, schema);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        }
    }

    SUBCASE("unparsable number") {
        {
            std::ofstream out(tf.path);
            out << "t,s,y_0,l_0\n";
            out << "1,1,abc,1\n";
        }
        CHECK_THROWS_AS(load_csv(tf.path), ParseError);
    }

    SUBCASE("schema dimension mismatch") {
        {
            std::ofstream out(tf.path);
            out << "t,s,y_0,l_0\n";
            out << "1,1,0.5,1\n";
        }
        CsvSchema schema;
        schema.d = 4;
        CHECK_THROWS_AS(load_csv(tf.path, schema), ParseError);
    }

    SUBCASE("missing file") { CHECK_THROWS_AS(load_csv("/nonexistent/x.csv"), IoError); }
}

TEST_CASE("optional z strata column round-trips and stays in range") {
    SynthConfig cfg = small_cfg(3000, 2, 81);
    cfg.num_z_strata = 4;
    Dataset ds = generate_synthetic(cfg);
    CHECK(ds.p == 1);
    std::set<int> seen;
    for (const auto& o : ds.obs) {
        REQUIRE(o.z.size() == 1);
        int z = static_cast<int>(o.z[0]);
        CHECK(z >= 0);
        CHECK(z < 4);
        seen.insert(z);
    }
    CHECK(seen.size() == 4);
}
