#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "sri.h"
#include "sri/dataset.hpp"
#include "sri/diagnostics.hpp"
#include "sri/estimators.hpp"

using nlohmann::json;

namespace {

// Owns a C-API string output so failures cannot leak it.
struct OwnedString {
    char* text = nullptr;
    ~OwnedString() { sri_string_free(text); }
    std::string str() const { return text ? text : ""; }
};

// Owns a dataset handle.
struct OwnedDataset {
    sri_dataset* handle = nullptr;
    ~OwnedDataset() { sri_dataset_free(handle); }
};

// A labeled two-coder dataset with machine predictions, written to a CSV
// fixture the C API can load back.
std::string write_fixture(const std::string& path, int n, int num_coders,
                          std::uint64_t seed) {
    sri::SynthConfig cfg;
    cfg.n = n;
    cfg.d = 10;
    cfg.seed = seed;
    sri::Dataset data = sri::generate_synthetic(cfg);
    if (num_coders == 2) data = sri::corrupt_labels(data, {0.9, 0.85}, seed + 1);
    data = sri::sample_annotations(data, 0.5, seed + 2);
    const std::vector<int> preds = sri::synth_predictions(data, 0.8, seed + 3);
    for (int i = 0; i < data.n(); ++i)
        data.obs[static_cast<std::size_t>(i)].pred = preds[static_cast<std::size_t>(i)];
    sri::write_csv(data, path);
    return path;
}

bool contains(const std::string& text, const std::string& needle) {
    return text.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("version and error state are well defined at startup") {
    CHECK(std::string(sri_version()) == "0.1.0");
    CHECK(std::string(sri_last_error()).empty());
    sri_string_free(nullptr);  // must be a no-op
    sri_dataset_free(nullptr);
}

TEST_CASE("dataset handles load CSVs and expose their shape") {
    const std::string path = write_fixture("capi_fixture.csv", 80, 2, 7);

    OwnedDataset ds;
    REQUIRE(sri_dataset_load_csv(path.c_str(), &ds.handle) == SRI_OK);
    CHECK(sri_dataset_n(ds.handle) == 80);
    CHECK(sri_dataset_d(ds.handle) == 10);
    CHECK(sri_dataset_num_coders(ds.handle) == 2);

    CHECK(sri_dataset_n(nullptr) == -1);
    CHECK(sri_dataset_d(nullptr) == -1);
    CHECK(sri_dataset_num_coders(nullptr) == -1);

    std::remove(path.c_str());
}

TEST_CASE("failures set status codes and the thread's last error") {
    OwnedDataset ds;
    CHECK(sri_dataset_load_csv("no_such_file.csv", &ds.handle) == SRI_ERR_IO);
    CHECK(contains(sri_last_error(), "no_such_file.csv"));

    CHECK(sri_dataset_load_csv(nullptr, &ds.handle) == SRI_ERR_INVALID_ARGUMENT);
    CHECK(contains(sri_last_error(), "null argument: path"));

    const std::string path = "capi_bad.csv";
    {
        std::ofstream out(path);
        out << "t,s,y_0\n1,1,not_a_number\n";
    }
    CHECK(sri_dataset_load_csv(path.c_str(), &ds.handle) == SRI_ERR_PARSE);
    std::remove(path.c_str());
}

TEST_CASE("sri_estimate matches the C++ estimators exactly") {
    const std::string path = write_fixture("capi_estimate.csv", 200, 2, 11);
    OwnedDataset ds;
    REQUIRE(sri_dataset_load_csv(path.c_str(), &ds.handle) == SRI_OK);

    const sri::Dataset direct_data = sri::load_csv(path);
    std::vector<double> preds;
    for (const sri::Observation& o : direct_data.obs)
        preds.push_back(static_cast<double>(*o.pred));

    for (const std::string name : {"naive", "ppi", "dsl"}) {
        OwnedString out;
        REQUIRE(sri_estimate(ds.handle, name.c_str(), 5, 0, &out.text) == SRI_OK);
        sri::est::Estimate direct;
        if (name == "naive")
            direct = sri::est::naive_estimate(direct_data, preds);
        else if (name == "ppi")
            direct = sri::est::ppi_estimate(direct_data, preds);
        else
            direct = sri::est::dsl_estimate(direct_data, preds);
        CHECK(out.str() == sri::est::estimate_to_json(direct));

        const json j = json::parse(out.str());
        CHECK(j.at("estimator").get<std::string>() == name);
        CHECK(j.at("n").get<int>() == 200);
    }
    std::remove(path.c_str());
}

TEST_CASE("the plain sri name resolves the variant from the coder count") {
    // Perfect accuracies make the coders agree everywhere, so the noisy
    // variant reduces internally and both calls stay cheap.
    sri::SynthConfig cfg;
    cfg.n = 240;
    cfg.d = 6;
    cfg.seed = 3;
    sri::Dataset data = sri::generate_synthetic(cfg);
    data = sri::corrupt_labels(data, {1.0, 1.0}, 4);
    data = sri::sample_annotations(data, 0.5, 5);
    sri::write_csv(data, "capi_two_coder.csv");

    sri::Dataset one = sri::generate_synthetic(cfg);
    one = sri::sample_annotations(one, 0.5, 5);
    sri::write_csv(one, "capi_one_coder.csv");

    sri::net::NetworkConfig quick;
    quick.trunk_dims = {8, 4};
    quick.head_dims = {4, 1};
    quick.max_epochs = 20;

    OwnedDataset two_ds;
    REQUIRE(sri_dataset_load_csv("capi_two_coder.csv", &two_ds.handle) == SRI_OK);
    {
        OwnedString out;
        REQUIRE(sri_estimate(two_ds.handle, "sri", 2, 9, &out.text) == SRI_OK);
        CHECK(json::parse(out.str()).at("estimator").get<std::string>() == "sri_noisy");
    }

    OwnedDataset one_ds;
    REQUIRE(sri_dataset_load_csv("capi_one_coder.csv", &one_ds.handle) == SRI_OK);
    {
        OwnedString out;
        REQUIRE(sri_estimate(one_ds.handle, "sri", 2, 9, &out.text) == SRI_OK);
        CHECK(json::parse(out.str()).at("estimator").get<std::string>() == "sri_perfect");
    }

    {
        OwnedString out;
        CHECK(sri_estimate(one_ds.handle, "mystery", 2, 9, &out.text) ==
              SRI_ERR_INVALID_ARGUMENT);
        CHECK(contains(sri_last_error(), "unknown estimator 'mystery'"));
    }

    std::remove("capi_two_coder.csv");
    std::remove("capi_one_coder.csv");
}

TEST_CASE("baselines demand the pred column and label-free data is surfaced") {
    sri::SynthConfig cfg;
    cfg.n = 60;
    cfg.d = 4;
    cfg.seed = 8;
    sri::Dataset data = sri::generate_synthetic(cfg);
    data = sri::sample_annotations(data, 0.5, 9);
    sri::write_csv(data, "capi_no_pred.csv");  // pred column absent

    OwnedDataset ds;
    REQUIRE(sri_dataset_load_csv("capi_no_pred.csv", &ds.handle) == SRI_OK);
    OwnedString out;
    CHECK(sri_estimate(ds.handle, "ppi", 5, 0, &out.text) == SRI_ERR_INVALID_ARGUMENT);
    CHECK(contains(sri_last_error(), "pred"));
    std::remove("capi_no_pred.csv");

    // All annotations stripped: the outcome head has nothing to train on.
    for (sri::Observation& o : data.obs) {
        o.s = 0;
        o.labels.clear();
    }
    sri::write_csv(data, "capi_unlabeled.csv");
    OwnedDataset bare;
    REQUIRE(sri_dataset_load_csv("capi_unlabeled.csv", &bare.handle) == SRI_OK);
    OwnedString out2;
    CHECK(sri_estimate(bare.handle, "sri", 2, 0, &out2.text) == SRI_ERR_NUMERIC);
    CHECK(contains(sri_last_error(), "cannot fit outcome head"));
    std::remove("capi_unlabeled.csv");
}

TEST_CASE("sri_diagnose bundles the three reports and honours has_delta") {
    const std::string path = write_fixture("capi_diag.csv", 160, 2, 21);
    OwnedDataset ds;
    REQUIRE(sri_dataset_load_csv(path.c_str(), &ds.handle) == SRI_OK);

    OwnedString with_delta;
    REQUIRE(sri_diagnose(ds.handle, 1, 0.2, 99, 4, 17, -1, &with_delta.text) == SRI_OK);
    const json j = json::parse(with_delta.str());
    REQUIRE(j.contains("equivalence"));
    REQUIRE(j.contains("agreement"));
    REQUIRE(j.contains("accuracy"));
    CHECK(j.at("equivalence").at("delta").get<double>() == 0.2);
    CHECK(j.at("accuracy").size() == 2);
    CHECK(j.at("agreement").at("cells").is_array());

    // The p-value must agree with a direct call at the same settings.
    sri::diag::EquivTestConfig config;
    config.delta = 0.2;
    config.b = 99;
    config.pca_dims = 4;
    config.seed = 17;
    const sri::diag::EquivTestResult direct =
        sri::diag::equivalence_permutation_test(sri::load_csv(path), config);
    CHECK(j.at("equivalence").at("p_value").get<double>() == direct.p_value);

    OwnedString without_delta;
    REQUIRE(sri_diagnose(ds.handle, 0, 0.0, 99, 4, 17, -1, &without_delta.text) == SRI_OK);
    const json j2 = json::parse(without_delta.str());
    CHECK(j2.at("equivalence").at("p_value").is_null());
    CHECK(j2.at("equivalence").at("delta").is_null());
    CHECK(j2.at("equivalence").contains("equivalence_interval"));

    OwnedString bad;
    CHECK(sri_diagnose(ds.handle, 1, 0.2, 0, 4, 17, -1, &bad.text) ==
          SRI_ERR_INVALID_ARGUMENT);

    std::remove(path.c_str());
}

TEST_CASE("sri_simulate_plan_file writes deterministic CSVs that render") {
    const std::string plan_path = "capi_plan.txt";
    {
        std::ofstream out(plan_path);
        out << "n = 300\n"
               "d = 8\n"
               "label_fraction = 0.3\n"
               "machine_accuracies = 0.8\n"
               "replications = 2\n"
               "estimators = naive, ppi, dsl\n"
               "base_seed = 19\n"
               "oracle_draws = 5000\n";
    }

    REQUIRE(sri_simulate_plan_file(plan_path.c_str(), "capi_report.csv", "capi_raw.csv", 2, 0) ==
            SRI_OK);
    REQUIRE(sri_simulate_plan_file(plan_path.c_str(), "capi_report2.csv", nullptr, 1, 0) ==
            SRI_OK);

    const auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        REQUIRE(in.good());
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    const std::string report = slurp("capi_report.csv");
    CHECK(report == slurp("capi_report2.csv"));
    CHECK(contains(report, "design,machine_acc"));
    CHECK(contains(slurp("capi_raw.csv"), "cell,rep,design"));

    OwnedString table;
    REQUIRE(sri_render_report("capi_report.csv", &table.text) == SRI_OK);
    CHECK(contains(table.str(), "naive"));
    CHECK(contains(table.str(), "oracle effect "));

    CHECK(sri_simulate_plan_file("missing_plan.txt", "x.csv", nullptr, 1, 0) == SRI_ERR_IO);
    {
        std::ofstream out(plan_path);
        out << "nonsense\n";
    }
    CHECK(sri_simulate_plan_file(plan_path.c_str(), "x.csv", nullptr, 1, 0) == SRI_ERR_PARSE);
    CHECK(sri_render_report("missing_report.csv", &table.text) == SRI_ERR_IO);

    std::remove(plan_path.c_str());
    std::remove("capi_report.csv");
    std::remove("capi_report2.csv");
    std::remove("capi_raw.csv");
}
