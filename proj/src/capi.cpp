#include "sri.h"

#include <cstring>
#include <exception>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "sri/common.hpp"
#include "sri/dataset.hpp"
#include "sri/diagnostics.hpp"
#include "sri/estimators.hpp"
#include "sri/harness.hpp"

struct sri_dataset {
    sri::Dataset data;
};

namespace {

thread_local std::string g_last_error;

sri_status fail(sri_status code, const char* what) {
    g_last_error = what;
    return code;
}

// Runs fn, translating the library's exception taxonomy into status codes.
// fn returns SRI_OK itself so argument checks inside can short-circuit.
template <typename Fn>
sri_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const sri::InvalidArgument& e) {
        return fail(SRI_ERR_INVALID_ARGUMENT, e.what());
    } catch (const sri::ParseError& e) {
        return fail(SRI_ERR_PARSE, e.what());
    } catch (const sri::NumericError& e) {
        return fail(SRI_ERR_NUMERIC, e.what());
    } catch (const sri::IoError& e) {
        return fail(SRI_ERR_IO, e.what());
    } catch (const std::exception& e) {
        return fail(SRI_ERR_UNKNOWN, e.what());
    } catch (...) {
        return fail(SRI_ERR_UNKNOWN, "unknown error");
    }
}

char* copy_string(const std::string& text) {
    char* out = new char[text.size() + 1];
    std::memcpy(out, text.c_str(), text.size() + 1);
    return out;
}

[[noreturn]] void require(const char* name) {
    throw sri::InvalidArgument(std::string("null argument: ") + name);
}

}  // namespace

extern "C" {

const char* sri_version(void) { return "0.1.0"; }

const char* sri_last_error(void) { return g_last_error.c_str(); }

void sri_string_free(char* text) { delete[] text; }

sri_status sri_dataset_load_csv(const char* path, sri_dataset** out) {
    return guarded([&]() -> sri_status {
        if (!path) require("path");
        if (!out) require("out");
        auto handle = new sri_dataset{sri::load_csv(path)};
        *out = handle;
        return SRI_OK;
    });
}

void sri_dataset_free(sri_dataset* dataset) { delete dataset; }

int64_t sri_dataset_n(const sri_dataset* dataset) { return dataset ? dataset->data.n() : -1; }

int sri_dataset_d(const sri_dataset* dataset) { return dataset ? dataset->data.d : -1; }

int sri_dataset_num_coders(const sri_dataset* dataset) {
    return dataset ? dataset->data.num_coders : -1;
}

sri_status sri_estimate(const sri_dataset* dataset, const char* estimator, int k, uint64_t seed,
                        char** json_out) {
    return guarded([&]() -> sri_status {
        if (!dataset) require("dataset");
        if (!estimator) require("estimator");
        if (!json_out) require("json_out");
        const std::string name(estimator);
        const sri::Dataset& data = dataset->data;

        sri::est::Estimate estimate;
        if (name == "naive" || name == "ppi" || name == "dsl") {
            std::vector<double> preds;
            preds.reserve(data.obs.size());
            for (std::size_t i = 0; i < data.obs.size(); ++i) {
                if (!data.obs[i].pred)
                    throw sri::InvalidArgument("sri_estimate: the '" + name +
                                               "' baseline needs machine predictions, but unit " +
                                               std::to_string(i) + " has no pred value");
                preds.push_back(static_cast<double>(*data.obs[i].pred));
            }
            if (name == "naive")
                estimate = sri::est::naive_estimate(data, preds);
            else if (name == "ppi")
                estimate = sri::est::ppi_estimate(data, preds);
            else
                estimate = sri::est::dsl_estimate(data, preds);
        } else if (name == "sri" || name == "sri_perfect" || name == "sri_noisy") {
            const bool noisy =
                name == "sri_noisy" || (name == "sri" && data.num_coders >= 2);
            const sri::net::NetworkConfig config;
            estimate = noisy ? sri::est::sri_noisy(data, k, config, seed)
                             : sri::est::sri_perfect(data, k, config, seed);
        } else {
            throw sri::InvalidArgument("sri_estimate: unknown estimator '" + name + "'");
        }
        *json_out = copy_string(sri::est::estimate_to_json(estimate));
        return SRI_OK;
    });
}

sri_status sri_diagnose(const sri_dataset* dataset, int has_delta, double delta, int b,
                        int pca_dims, uint64_t seed, int z_column, char** json_out) {
    return guarded([&]() -> sri_status {
        if (!dataset) require("dataset");
        if (!json_out) require("json_out");
        const sri::Dataset& data = dataset->data;

        sri::diag::EquivTestConfig config;
        config.delta = has_delta ? delta : 0.0;
        config.b = b;
        config.pca_dims = pca_dims;
        config.seed = seed;
        const sri::diag::EquivTestResult result =
            sri::diag::equivalence_permutation_test(data, config);

        nlohmann::json equivalence =
            nlohmann::json::parse(sri::diag::equiv_result_to_json(result));
        if (has_delta) {
            equivalence["delta"] = delta;
        } else {
            // Without an explicit margin there is no test decision to
            // report, only the interval and the permutation distribution.
            equivalence["delta"] = nullptr;
            equivalence["p_value"] = nullptr;
        }

        nlohmann::json j;
        j["equivalence"] = std::move(equivalence);
        j["agreement"] = nlohmann::json::parse(
            sri::diag::agreement_report_to_json(sri::diag::agreement_check(data, z_column)));
        j["accuracy"] = nlohmann::json::array();
        for (int coder = 0; coder < data.num_coders; ++coder)
            j["accuracy"].push_back(nlohmann::json::parse(
                sri::diag::accuracy_report_to_json(sri::diag::accuracy_check(data, coder))));
        *json_out = copy_string(j.dump());
        return SRI_OK;
    });
}

sri_status sri_simulate_plan_file(const char* plan_path, const char* report_csv_path,
                                  const char* raw_csv_path, int workers, int timings) {
    return guarded([&]() -> sri_status {
        if (!plan_path) require("plan_path");
        if (!report_csv_path) require("report_csv_path");
        const sri::harness::SimPlan plan = sri::harness::load_plan(plan_path);
        const sri::harness::MonteCarloOutput out =
            sri::harness::run_monte_carlo(plan, workers > 0 ? workers : 0, timings != 0);
        sri::harness::write_report_csv(out.report, report_csv_path);
        if (raw_csv_path) sri::harness::write_raw_csv(out.raw, raw_csv_path);
        return SRI_OK;
    });
}

sri_status sri_render_report(const char* report_csv_path, char** text_out) {
    return guarded([&]() -> sri_status {
        if (!report_csv_path) require("report_csv_path");
        if (!text_out) require("text_out");
        *text_out = copy_string(sri::harness::render_report_file(report_csv_path));
        return SRI_OK;
    });
}

}  // extern "C"
