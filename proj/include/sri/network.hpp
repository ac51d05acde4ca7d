#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sri/dataset.hpp"

namespace sri::net {

// Which composite loss the network is trained under. The perfect variant has
// a single outcome head for the gold-standard label; the noisy variant grows
// one outcome head per class (fit to surrogate outcomes) plus one prediction
// head per coder.
enum class Variant { kPerfect, kNoisy };

struct NetworkConfig {
    std::vector<int> trunk_dims{100, 50};  // rectified layer widths; last = representation width
    std::vector<int> head_dims{50, 1};     // per-head widths; last must be 1 (scalar heads)
    double alpha = 1.0;                    // weight on the predictor loss (perfect variant)
    double beta = 1.0;                     // weight on the coder-prediction loss (noisy)
    double gamma = 1.0;                    // weight on the predictor loss (noisy)
    double learning_rate = 2e-5;
    int max_epochs = 200;
    int batch_size = 256;
    double val_fraction = 0.2;
    int patience = 5;
    std::uint64_t seed = 0;

    // Where the covariates enter. Default follows the architecture diagram:
    // Z is concatenated to the representation at the heads. Switch to feed
    // it through the trunk instead.
    bool z_into_trunk = false;

    void validate() const;  // throws InvalidArgument on a bad field
};

// One affine layer's shape plus its slice of the flat parameter vector.
// Weights are stored row-major (out x in) at w_off, biases (out) at b_off.
struct LayerSpec {
    int in = 0;
    int out = 0;
    int w_off = 0;
    int b_off = 0;
};

struct TrainReport {
    // Entry 0 is the loss at initialization; entry e is after epoch e. The
    // two arrays always have equal length stopped_epoch + 1.
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = 0;     // epoch whose parameters were returned (0 = init)
    int stopped_epoch = 0;  // number of epochs actually run
};

struct FittedNetwork {
    Variant variant = Variant::kPerfect;
    int d = 0;
    int p = 0;
    int num_classes = 2;
    int num_coders = 0;
    NetworkConfig config;

    // Topology, frozen at construction. Head order: outcome head(s) first
    // (one for perfect, num_classes for noisy), then the surrogacy-score
    // head, then one head per coder (noisy only).
    std::vector<LayerSpec> trunk;
    std::vector<std::vector<LayerSpec>> heads;

    std::vector<double> params;
    TrainReport report;

    int num_outcome_heads() const { return variant == Variant::kNoisy ? num_classes : 1; }
    int rep_dim() const { return trunk.back().out; }
    int rho_head() const { return num_outcome_heads(); }  // index into heads
};

// Builds the topology and zero-initialises parameters. `p` may be 0.
FittedNetwork make_network(int d, int p, int num_classes, int num_coders,
                           const NetworkConfig& config, Variant variant);

// Symmetric uniform init, U(-1/sqrt(fan_in), +1/sqrt(fan_in)) for weights and
// biases alike, drawn layer by layer (weights row-major, then biases) from
// substream(config.seed, {kTagNet, 0}).
void init_params(FittedNetwork& net);

// A column-per-unit view of a training slice. Unlabeled entries of label,
// surrogate, and coder_labels must be zero; every loss term touching them is
// multiplied by s so the placeholder never leaks into a value or gradient.
struct Batch {
    Eigen::MatrixXd y;             // d x B
    Eigen::MatrixXd z;             // p x B
    Eigen::VectorXd t;             // B, values in {0,1}
    Eigen::VectorXd s;             // B, values in {0,1}
    Eigen::VectorXd label;         // B, gold-standard-quality label (perfect variant)
    Eigen::MatrixXd surrogate;     // num_classes x B, surrogate outcomes (noisy)
    Eigen::MatrixXd coder_labels;  // num_coders x B, raw coder labels (noisy)

    int size() const { return static_cast<int>(t.size()); }
};

// Gathers the listed units into a Batch. For the noisy variant,
// `surrogate_outcomes` must be a num_classes x n matrix over the full
// dataset; labeled units' columns are copied through.
Batch gather_batch(const Dataset& data, const std::vector<int>& indices, Variant variant,
                   const Eigen::MatrixXd* surrogate_outcomes = nullptr);

struct HeadOutputs {
    std::vector<double> representation;
    std::vector<double> outcome;      // size 1 (perfect) or num_classes (noisy)
    double surrogacy_score = 0.0;     // logistic output clamped to [1e-7, 1-1e-7]
    std::vector<double> coder_preds;  // size num_coders (noisy), empty otherwise
};

// Single-unit forward pass.
HeadOutputs forward(const FittedNetwork& net, const std::vector<double>& y_embed,
                    const std::vector<double>& z);

// Mean over the batch of s*(mu - label)^2 + alpha * CrossEntropy(t, rho).
double joint_loss_perfect(const FittedNetwork& net, const Batch& batch);

// Mean over the batch of s*sum_c(mu_c - surrogate_c)^2
//   + beta*s*sum_j(kappa_j - coder_label_j)^2 + gamma * CrossEntropy(t, rho).
double joint_loss_noisy(const FittedNetwork& net, const Batch& batch);

// Analytic gradient of the net's loss variant over the batch, flat layout
// matching net.params. The cross-entropy clamp has zero gradient where it
// binds, so saturated surrogacy scores stop moving rather than blowing up.
std::vector<double> gradients(const FittedNetwork& net, const Batch& batch);

// Trains on the listed units: stratified validation split by (t, s), Adam
// (beta1 0.9, beta2 0.999, eps 1e-8), early stopping once the validation
// loss has failed to strictly improve for max(1, patience) consecutive
// epochs, parameters restored from the best epoch (initialization counts as
// epoch 0). Deterministic in config.seed. Throws NumericError("cannot fit
// outcome head") when the training portion has no labeled units.
FittedNetwork train(const Dataset& data, const std::vector<int>& train_idx,
                    const NetworkConfig& config, Variant variant,
                    const Eigen::MatrixXd* surrogate_outcomes = nullptr);

// JSON container: layer shapes plus row-major parameter arrays. Exact
// round trip (doubles survive bit for bit).
std::string network_to_json(const FittedNetwork& net);
FittedNetwork network_from_json(const std::string& text);

// The clamp applied to the surrogacy score inside the cross-entropy and in
// forward(); exposed because tests and the estimator reference it.
inline constexpr double kProbClamp = 1e-7;

}  // namespace sri::net
