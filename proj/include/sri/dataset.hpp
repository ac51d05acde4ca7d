#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sri {

// One experimental unit. The embedding y is whatever upstream representation
// the caller has (synthetic draws here, encoder outputs in real use); this
// toolkit never looks inside it except through the network trunk.
struct Observation {
    int t = 0;                  // binary predictor
    int s = 0;                  // 1 if the unit was sent to human coders
    std::vector<double> y;      // unstructured-data representation, length d
    std::vector<double> z;      // control covariates, possibly empty
    std::vector<int> labels;    // coder labels, one per coder, present iff s == 1
    std::optional<int> gold;    // true label where known (synthetic / gold subsets)
    std::optional<int> pred;    // optional machine prediction, used by baselines
};

struct Dataset {
    std::vector<Observation> obs;
    int d = 0;            // embedding dimension
    int p = 0;            // covariate count
    int num_classes = 2;  // C + 1
    int num_coders = 0;   // J

    int n() const { return static_cast<int>(obs.size()); }

    // Checks the shared-dimension invariants; throws InvalidArgument with the
    // first offending unit index.
    void validate() const;
};

struct SynthConfig {
    std::int64_t n = 0;
    int d = 2048;
    double treat_prob = 0.5;
    double coef_low = 0.0;
    double coef_high = 1.0;
    double intercept = 1.0;
    double slope = 0.2;
    std::uint64_t seed = 0;

    // When set, the coefficient vector alpha is drawn from this seed instead
    // of `seed`. The simulation harness uses it to hold alpha fixed across
    // replications so the cached oracle effect is the exact estimand.
    std::optional<std::uint64_t> coef_seed;

    // The generating equation indexes the Gaussian noise by unit only, so one
    // draw is shared across all d coordinates. Flip this to draw per
    // coordinate instead.
    bool noise_per_coord = false;

    // Optional discrete covariate: z holds a single stratum id drawn
    // uniformly from {0..num_z_strata-1}. Zero means no covariates.
    int num_z_strata = 0;
};

struct FoldAssignment {
    std::vector<int> fold_of;  // per-unit fold id in {0..k-1}
    int k = 0;
};

// Synthetic data generating process. Every unit gets T ~ Bernoulli(treat_prob),
// Y_ij = alpha_j * T + eps_i with eps_i ~ N(0,1) shared across coordinates,
// and gold label L = 1{sigmoid(intercept + slope * sum_j Y_ij) > 0.5}. All
// units come back with s = 1 and labels = {L}; corruption and sampling are
// separate passes. Deterministic in (seed, coef_seed).
Dataset generate_synthetic(const SynthConfig& config);

// Replaces the label lists with one entry per coder: the gold label with
// probability accuracy_j, otherwise a uniform draw over the other classes.
// Flips are independent across coders and units. Accuracies at or below 0.5
// are rejected since downstream identification assumes coders beat chance.
Dataset corrupt_labels(const Dataset& dataset, const std::vector<double>& coder_accuracies,
                       std::uint64_t seed);

// Keeps a uniformly random subset of round(n * label_fraction) units as
// annotated (s = 1); everyone else loses their labels. Gold is retained on
// all units for evaluation.
Dataset sample_annotations(const Dataset& dataset, double label_fraction, std::uint64_t seed);

// Balanced random partition into k folds; sizes differ by at most one.
FoldAssignment split_folds(int n, int k, std::uint64_t seed);

// Synthetic machine predictions: gold with probability `accuracy`, otherwise
// uniform over the other classes. Same flip scheme as corrupt_labels but on
// its own stream so predictions and coder errors are independent.
std::vector<int> synth_predictions(const Dataset& dataset, double accuracy, std::uint64_t seed);

// Optional expectations for load_csv. Unset fields are inferred from the
// header; num_classes, which the header cannot carry, is inferred as
// max(observed label, observed gold, 1) + 1 when unset, so callers with an
// absent class should pin it.
struct CsvSchema {
    std::optional<int> d;
    std::optional<int> p;
    std::optional<int> num_coders;
    std::optional<int> num_classes;
};

// CSV ingestion. Expected header:
//   t,s,z_0..z_{p-1},y_0..y_{d-1},l_0..l_{J-1},gold,pred
// where the z block may be absent, and gold / pred columns are optional.
// Label cells must be filled where s = 1 and empty where s = 0; gold and
// pred may be empty anywhere. Errors name the offending line.
Dataset load_csv(const std::string& path, const CsvSchema& schema = {});
void write_csv(const Dataset& dataset, const std::string& path);

namespace detail {

// Shared between generate_synthetic and the harness oracle: reproduces one
// unit's draws without materialising the embedding when y == nullptr.
struct UnitDraw {
    int t = 0;
    double sum_y = 0.0;
    int stratum = 0;
};
UnitDraw draw_unit(const SynthConfig& cfg, const std::vector<double>& alpha, std::int64_t i,
                   std::vector<double>* y);

std::vector<double> draw_alpha(const SynthConfig& cfg);

double sigmoid(double x);

}  // namespace detail

}  // namespace sri
