#include "sri/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <json.hpp>

#include "sri/common.hpp"
#include "sri/rng.hpp"

namespace sri::net {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> weights(const std::vector<double>& p, const LayerSpec& l) {
    return {p.data() + l.w_off, l.out, l.in};
}
Eigen::Map<RowMat> weights(std::vector<double>& p, const LayerSpec& l) {
    return {p.data() + l.w_off, l.out, l.in};
}
Eigen::Map<const Eigen::VectorXd> bias(const std::vector<double>& p, const LayerSpec& l) {
    return {p.data() + l.b_off, l.out};
}
Eigen::Map<Eigen::VectorXd> bias(std::vector<double>& p, const LayerSpec& l) {
    return {p.data() + l.b_off, l.out};
}

// Everything the backward pass needs from the forward pass: post-rectifier
// activations (the rectifier mask is recoverable as act > 0) and raw head
// outputs.
struct Cache {
    Eigen::MatrixXd trunk_in;
    std::vector<Eigen::MatrixXd> trunk_act;
    Eigen::MatrixXd head_in;
    std::vector<std::vector<Eigen::MatrixXd>> head_act;  // hidden layers only
    std::vector<Eigen::RowVectorXd> head_out;
};

void forward_all(const FittedNetwork& net, const Batch& b, Cache& c) {
    const int B = b.size();
    if (net.config.z_into_trunk && net.p > 0) {
        c.trunk_in.resize(net.d + net.p, B);
        c.trunk_in.topRows(net.d) = b.y;
        c.trunk_in.bottomRows(net.p) = b.z;
    } else {
        c.trunk_in = b.y;
    }

    c.trunk_act.clear();
    const Eigen::MatrixXd* cur = &c.trunk_in;
    for (const LayerSpec& l : net.trunk) {
        Eigen::MatrixXd a = (weights(net.params, l) * (*cur)).colwise() + bias(net.params, l);
        c.trunk_act.push_back(a.cwiseMax(0.0));
        cur = &c.trunk_act.back();
    }

    if (!net.config.z_into_trunk && net.p > 0) {
        c.head_in.resize(net.rep_dim() + net.p, B);
        c.head_in.topRows(net.rep_dim()) = *cur;
        c.head_in.bottomRows(net.p) = b.z;
    } else {
        c.head_in = *cur;
    }

    c.head_act.assign(net.heads.size(), {});
    c.head_out.assign(net.heads.size(), Eigen::RowVectorXd());
    for (std::size_t h = 0; h < net.heads.size(); ++h) {
        const Eigen::MatrixXd* hcur = &c.head_in;
        const auto& layers = net.heads[h];
        for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
            Eigen::MatrixXd a =
                (weights(net.params, layers[i]) * (*hcur)).colwise() + bias(net.params, layers[i]);
            c.head_act[h].push_back(a.cwiseMax(0.0));
            hcur = &c.head_act[h].back();
        }
        const LayerSpec& last = layers.back();
        c.head_out[h] =
            ((weights(net.params, last) * (*hcur)).colwise() + bias(net.params, last)).row(0);
    }
}

void check_batch(const FittedNetwork& net, const Batch& b) {
    const int B = b.size();
    if (b.y.rows() != net.d || b.y.cols() != B)
        throw InvalidArgument("network: batch embedding block does not match net input spec");
    if (net.p > 0 && (b.z.rows() != net.p || b.z.cols() != B))
        throw InvalidArgument("network: batch covariate block does not match net input spec");
    if (b.s.size() != B) throw InvalidArgument("network: batch s length mismatch");
    if (net.variant == Variant::kPerfect) {
        if (b.label.size() != B) throw InvalidArgument("network: batch label length mismatch");
    } else {
        if (b.surrogate.rows() != net.num_classes || b.surrogate.cols() != B)
            throw InvalidArgument("network: batch surrogate-outcome block mismatch");
        if (b.coder_labels.rows() != net.num_coders || b.coder_labels.cols() != B)
            throw InvalidArgument("network: batch coder-label block mismatch");
    }
}

// Forward pass, loss, and (when grad is non-null) backpropagation through
// the whole topology. Gradients are of the batch-mean loss.
double eval(const FittedNetwork& net, const Batch& batch, std::vector<double>* grad) {
    check_batch(net, batch);
    const int B = batch.size();
    if (B == 0) throw InvalidArgument("network: empty batch");
    const double invB = 1.0 / B;

    Cache c;
    forward_all(net, batch, c);

    const int nheads = static_cast<int>(net.heads.size());
    std::vector<Eigen::RowVectorXd> dout;
    if (grad) dout.assign(nheads, Eigen::RowVectorXd::Zero(B));

    double loss = 0.0;

    if (net.variant == Variant::kPerfect) {
        Eigen::ArrayXd diff = c.head_out[0].transpose().array() - batch.label.array();
        loss += invB * (batch.s.array() * diff.square()).sum();
        if (grad) dout[0] = (2.0 * invB * batch.s.array() * diff).matrix().transpose();
    } else {
        for (int cls = 0; cls < net.num_classes; ++cls) {
            Eigen::ArrayXd diff =
                c.head_out[cls].transpose().array() - batch.surrogate.row(cls).transpose().array();
            loss += invB * (batch.s.array() * diff.square()).sum();
            if (grad) dout[cls] = (2.0 * invB * batch.s.array() * diff).matrix().transpose();
        }
        const double beta = net.config.beta;
        for (int j = 0; j < net.num_coders; ++j) {
            const int h = net.rho_head() + 1 + j;
            Eigen::ArrayXd diff =
                c.head_out[h].transpose().array() - batch.coder_labels.row(j).transpose().array();
            loss += beta * invB * (batch.s.array() * diff.square()).sum();
            if (grad) dout[h] = (2.0 * beta * invB * batch.s.array() * diff).matrix().transpose();
        }
    }

    // Predictor cross-entropy on the logistic head. The probability is
    // clamped before the logs; where the clamp binds the gradient is zero.
    {
        const double w = net.variant == Variant::kPerfect ? net.config.alpha : net.config.gamma;
        const int h = net.rho_head();
        Eigen::ArrayXd sig = 1.0 / (1.0 + (-c.head_out[h].transpose().array()).exp());
        Eigen::ArrayXd clamped = sig.min(1.0 - kProbClamp).max(kProbClamp);
        Eigen::ArrayXd t = batch.t.array();
        loss += w * invB * (-(t * clamped.log() + (1.0 - t) * (1.0 - clamped).log())).sum();
        if (grad) {
            Eigen::ArrayXd mask =
                ((sig > kProbClamp) && (sig < 1.0 - kProbClamp)).cast<double>();
            dout[h] = (w * invB * mask * (sig - t)).matrix().transpose();
        }
    }

    if (!std::isfinite(loss)) throw NumericError("network: loss is not finite");
    if (!grad) return loss;

    grad->assign(net.params.size(), 0.0);
    Eigen::MatrixXd dhead_in = Eigen::MatrixXd::Zero(c.head_in.rows(), B);

    for (int h = 0; h < nheads; ++h) {
        const auto& layers = net.heads[h];
        Eigen::MatrixXd dcur = dout[h];
        for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
            const Eigen::MatrixXd& input = i == 0 ? c.head_in : c.head_act[h][i - 1];
            weights(*grad, layers[i]).noalias() += dcur * input.transpose();
            bias(*grad, layers[i]) += dcur.rowwise().sum();
            Eigen::MatrixXd din = weights(net.params, layers[i]).transpose() * dcur;
            if (i == 0) {
                dhead_in += din;
            } else {
                dcur = din.cwiseProduct(
                    (c.head_act[h][i - 1].array() > 0.0).cast<double>().matrix());
            }
        }
    }

    Eigen::MatrixXd dh = net.config.z_into_trunk || net.p == 0
                             ? std::move(dhead_in)
                             : Eigen::MatrixXd(dhead_in.topRows(net.rep_dim()));
    for (int l = static_cast<int>(net.trunk.size()) - 1; l >= 0; --l) {
        Eigen::MatrixXd da =
            dh.cwiseProduct((c.trunk_act[l].array() > 0.0).cast<double>().matrix());
        const Eigen::MatrixXd& input = l == 0 ? c.trunk_in : c.trunk_act[l - 1];
        weights(*grad, net.trunk[l]).noalias() += da * input.transpose();
        bias(*grad, net.trunk[l]) += da.rowwise().sum();
        if (l > 0) dh = weights(net.params, net.trunk[l]).transpose() * da;
    }
    return loss;
}

}  // namespace

void NetworkConfig::validate() const {
    if (trunk_dims.empty()) throw InvalidArgument("NetworkConfig: trunk_dims must be non-empty");
    for (int w : trunk_dims)
        if (w < 1) throw InvalidArgument("NetworkConfig: trunk widths must be >= 1");
    if (head_dims.empty() || head_dims.back() != 1)
        throw InvalidArgument("NetworkConfig: head_dims must end with a width-1 output");
    for (int w : head_dims)
        if (w < 1) throw InvalidArgument("NetworkConfig: head widths must be >= 1");
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
        throw InvalidArgument("NetworkConfig: loss weights must be >= 0");
    if (!(learning_rate > 0.0)) throw InvalidArgument("NetworkConfig: learning_rate must be > 0");
    if (max_epochs < 0) throw InvalidArgument("NetworkConfig: max_epochs must be >= 0");
    if (batch_size < 1) throw InvalidArgument("NetworkConfig: batch_size must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw InvalidArgument("NetworkConfig: val_fraction must lie in (0,1)");
    if (patience < 0) throw InvalidArgument("NetworkConfig: patience must be >= 0");
}

FittedNetwork make_network(int d, int p, int num_classes, int num_coders,
                           const NetworkConfig& config, Variant variant) {
    config.validate();
    if (d < 1) throw InvalidArgument("make_network: d must be >= 1");
    if (p < 0) throw InvalidArgument("make_network: p must be >= 0");
    if (variant == Variant::kNoisy) {
        if (num_classes < 2) throw InvalidArgument("make_network: need >= 2 classes");
        if (num_coders < 1) throw InvalidArgument("make_network: need >= 1 coder");
    }

    FittedNetwork net;
    net.variant = variant;
    net.d = d;
    net.p = p;
    net.num_classes = num_classes;
    net.num_coders = num_coders;
    net.config = config;

    int off = 0;
    auto add_layer = [&off](std::vector<LayerSpec>& dst, int in, int out) {
        dst.push_back({in, out, off, off + in * out});
        off += in * out + out;
    };

    int cur = config.z_into_trunk ? d + p : d;
    for (int w : config.trunk_dims) {
        add_layer(net.trunk, cur, w);
        cur = w;
    }
    const int head_in = cur + (config.z_into_trunk ? 0 : p);
    const int nheads =
        (variant == Variant::kNoisy ? num_classes : 1) + 1 + (variant == Variant::kNoisy ? num_coders : 0);
    for (int h = 0; h < nheads; ++h) {
        net.heads.emplace_back();
        int hin = head_in;
        for (int w : config.head_dims) {
            add_layer(net.heads.back(), hin, w);
            hin = w;
        }
    }
    net.params.assign(static_cast<std::size_t>(off), 0.0);
    return net;
}

void init_params(FittedNetwork& net) {
    rng::Stream st = rng::substream(net.config.seed, {rng::kTagNet, 0});
    auto fill = [&](const LayerSpec& l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
        for (int i = 0; i < l.in * l.out; ++i)
            net.params[static_cast<std::size_t>(l.w_off + i)] = (2.0 * st.next_unit() - 1.0) * bound;
        for (int i = 0; i < l.out; ++i)
            net.params[static_cast<std::size_t>(l.b_off + i)] = (2.0 * st.next_unit() - 1.0) * bound;
    };
    for (const LayerSpec& l : net.trunk) fill(l);
    for (const auto& head : net.heads)
        for (const LayerSpec& l : head) fill(l);
}

Batch gather_batch(const Dataset& data, const std::vector<int>& indices, Variant variant,
                   const Eigen::MatrixXd* surrogate_outcomes) {
    const int B = static_cast<int>(indices.size());
    Batch b;
    b.y.resize(data.d, B);
    b.z.resize(data.p, B);
    b.t.resize(B);
    b.s.resize(B);
    if (variant == Variant::kPerfect) {
        b.label = Eigen::VectorXd::Zero(B);
    } else {
        if (!surrogate_outcomes)
            throw InvalidArgument("gather_batch: noisy variant needs surrogate outcomes");
        if (surrogate_outcomes->rows() != data.num_classes ||
            surrogate_outcomes->cols() != data.n())
            throw InvalidArgument("gather_batch: surrogate-outcome matrix has wrong shape");
        b.surrogate = Eigen::MatrixXd::Zero(data.num_classes, B);
        b.coder_labels = Eigen::MatrixXd::Zero(data.num_coders, B);
    }

    for (int col = 0; col < B; ++col) {
        const int i = indices[static_cast<std::size_t>(col)];
        if (i < 0 || i >= data.n()) throw InvalidArgument("gather_batch: unit index out of range");
        const Observation& o = data.obs[static_cast<std::size_t>(i)];
        for (int r = 0; r < data.d; ++r) b.y(r, col) = o.y[static_cast<std::size_t>(r)];
        for (int r = 0; r < data.p; ++r) b.z(r, col) = o.z[static_cast<std::size_t>(r)];
        b.t(col) = o.t;
        b.s(col) = o.s;
        if (o.s == 1) {
            if (variant == Variant::kPerfect) {
                b.label(col) = o.labels[0];
            } else {
                b.surrogate.col(col) = surrogate_outcomes->col(i);
                for (int j = 0; j < data.num_coders; ++j)
                    b.coder_labels(j, col) = o.labels[static_cast<std::size_t>(j)];
            }
        }
    }
    return b;
}

HeadOutputs forward(const FittedNetwork& net, const std::vector<double>& y_embed,
                    const std::vector<double>& z) {
    if (static_cast<int>(y_embed.size()) != net.d)
        throw InvalidArgument("forward: embedding length does not match net input spec");
    if (static_cast<int>(z.size()) != net.p)
        throw InvalidArgument("forward: covariate length does not match net input spec");

    Batch b;
    b.y = Eigen::Map<const Eigen::VectorXd>(y_embed.data(), net.d);
    b.z = Eigen::Map<const Eigen::VectorXd>(z.data(), net.p);
    b.t = Eigen::VectorXd::Zero(1);
    b.s = Eigen::VectorXd::Zero(1);

    Cache c;
    forward_all(net, b, c);

    HeadOutputs out;
    const Eigen::MatrixXd& rep = c.trunk_act.back();
    out.representation.assign(rep.data(), rep.data() + rep.rows());
    for (int h = 0; h < net.num_outcome_heads(); ++h) out.outcome.push_back(c.head_out[h](0));
    const double sig = 1.0 / (1.0 + std::exp(-c.head_out[net.rho_head()](0)));
    out.surrogacy_score = std::min(1.0 - kProbClamp, std::max(kProbClamp, sig));
    if (net.variant == Variant::kNoisy)
        for (int j = 0; j < net.num_coders; ++j)
            out.coder_preds.push_back(c.head_out[net.rho_head() + 1 + j](0));
    return out;
}

double joint_loss_perfect(const FittedNetwork& net, const Batch& batch) {
    if (net.variant != Variant::kPerfect)
        throw InvalidArgument("joint_loss_perfect: network was built for the noisy variant");
    return eval(net, batch, nullptr);
}

double joint_loss_noisy(const FittedNetwork& net, const Batch& batch) {
    if (net.variant != Variant::kNoisy)
        throw InvalidArgument("joint_loss_noisy: network was built for the perfect variant");
    return eval(net, batch, nullptr);
}

std::vector<double> gradients(const FittedNetwork& net, const Batch& batch) {
    std::vector<double> g;
    eval(net, batch, &g);
    return g;
}

FittedNetwork train(const Dataset& data, const std::vector<int>& train_idx,
                    const NetworkConfig& config, Variant variant,
                    const Eigen::MatrixXd* surrogate_outcomes) {
    config.validate();
    if (train_idx.empty()) throw NumericError("cannot fit outcome head");

    // Stratified validation split: shuffle each (t, s) cell and peel off the
    // validation share, so both loss terms stay estimable on both sides.
    std::array<std::vector<int>, 4> cells;
    for (int i : train_idx) {
        if (i < 0 || i >= data.n()) throw InvalidArgument("train: unit index out of range");
        const Observation& o = data.obs[static_cast<std::size_t>(i)];
        cells[static_cast<std::size_t>(2 * o.t + o.s)].push_back(i);
    }
    rng::Stream vs = rng::substream(config.seed, {rng::kTagVal});
    std::vector<int> tr, va;
    for (auto& cell : cells) {
        vs.shuffle(cell);
        const auto nv = static_cast<std::size_t>(
            std::llround(config.val_fraction * static_cast<double>(cell.size())));
        for (std::size_t i = 0; i < cell.size(); ++i)
            (i < nv ? va : tr).push_back(cell[i]);
    }

    bool tr_labeled = false;
    for (int i : tr) tr_labeled = tr_labeled || data.obs[static_cast<std::size_t>(i)].s == 1;
    if (tr.empty() || !tr_labeled) throw NumericError("cannot fit outcome head");

    FittedNetwork net =
        make_network(data.d, data.p, data.num_classes, data.num_coders, config, variant);
    init_params(net);

    const Batch train_all = gather_batch(data, tr, variant, surrogate_outcomes);
    const Batch val_all =
        va.empty() ? train_all : gather_batch(data, va, variant, surrogate_outcomes);

    net.report.train_loss.push_back(eval(net, train_all, nullptr));
    net.report.val_loss.push_back(eval(net, val_all, nullptr));
    double best_val = net.report.val_loss[0];
    std::vector<double> best_params = net.params;
    int best_epoch = 0;
    int counter = 0;
    const int stop_at = std::max(1, config.patience);

    std::vector<double> m(net.params.size(), 0.0), v(net.params.size(), 0.0), g;
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    double b1t = 1.0, b2t = 1.0;

    int epoch = 1;
    for (; epoch <= config.max_epochs; ++epoch) {
        rng::Stream es = rng::substream(config.seed, {rng::kTagNet, static_cast<std::uint64_t>(epoch)});
        std::vector<int> order = tr;
        es.shuffle(order);

        double epoch_loss = 0.0;
        const auto bs = static_cast<std::size_t>(config.batch_size);
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t stop = std::min(order.size(), start + bs);
            std::vector<int> bidx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(stop));
            Batch b = gather_batch(data, bidx, variant, surrogate_outcomes);
            epoch_loss += eval(net, b, &g) * static_cast<double>(bidx.size());

            b1t *= kBeta1;
            b2t *= kBeta2;
            for (std::size_t i = 0; i < net.params.size(); ++i) {
                m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
                v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
                net.params[i] -=
                    config.learning_rate * (m[i] / (1.0 - b1t)) / (std::sqrt(v[i] / (1.0 - b2t)) + kEps);
            }
        }
        net.report.train_loss.push_back(epoch_loss / static_cast<double>(tr.size()));

        const double vloss = eval(net, val_all, nullptr);
        net.report.val_loss.push_back(vloss);
        if (vloss < best_val) {
            best_val = vloss;
            best_params = net.params;
            best_epoch = epoch;
            counter = 0;
        } else if (++counter >= stop_at) {
            break;
        }
    }

    net.report.stopped_epoch = std::min(epoch, config.max_epochs);
    net.report.best_epoch = best_epoch;
    net.params = std::move(best_params);
    return net;
}

std::string network_to_json(const FittedNetwork& net) {
    nlohmann::json j;
    j["variant"] = net.variant == Variant::kPerfect ? "perfect" : "noisy";
    j["d"] = net.d;
    j["p"] = net.p;
    j["num_classes"] = net.num_classes;
    j["num_coders"] = net.num_coders;
    const NetworkConfig& c = net.config;
    j["config"] = {{"trunk_dims", c.trunk_dims},
                   {"head_dims", c.head_dims},
                   {"alpha", c.alpha},
                   {"beta", c.beta},
                   {"gamma", c.gamma},
                   {"learning_rate", c.learning_rate},
                   {"max_epochs", c.max_epochs},
                   {"batch_size", c.batch_size},
                   {"val_fraction", c.val_fraction},
                   {"patience", c.patience},
                   {"seed", c.seed},
                   {"z_into_trunk", c.z_into_trunk}};
    j["params"] = net.params;  // row-major weight blocks then biases, layer by layer
    j["report"] = {{"train_loss", net.report.train_loss},
                   {"val_loss", net.report.val_loss},
                   {"best_epoch", net.report.best_epoch},
                   {"stopped_epoch", net.report.stopped_epoch}};
    return j.dump();
}

FittedNetwork network_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("network_from_json: ") + e.what());
    }
    try {
        NetworkConfig c;
        const auto& jc = j.at("config");
        c.trunk_dims = jc.at("trunk_dims").get<std::vector<int>>();
        c.head_dims = jc.at("head_dims").get<std::vector<int>>();
        c.alpha = jc.at("alpha").get<double>();
        c.beta = jc.at("beta").get<double>();
        c.gamma = jc.at("gamma").get<double>();
        c.learning_rate = jc.at("learning_rate").get<double>();
        c.max_epochs = jc.at("max_epochs").get<int>();
        c.batch_size = jc.at("batch_size").get<int>();
        c.val_fraction = jc.at("val_fraction").get<double>();
        c.patience = jc.at("patience").get<int>();
        c.seed = jc.at("seed").get<std::uint64_t>();
        c.z_into_trunk = jc.at("z_into_trunk").get<bool>();

        const Variant variant =
            j.at("variant").get<std::string>() == "noisy" ? Variant::kNoisy : Variant::kPerfect;
        FittedNetwork net = make_network(j.at("d").get<int>(), j.at("p").get<int>(),
                                         j.at("num_classes").get<int>(),
                                         j.at("num_coders").get<int>(), c, variant);
        auto params = j.at("params").get<std::vector<double>>();
        if (params.size() != net.params.size())
            throw ParseError("network_from_json: parameter count does not match topology");
        net.params = std::move(params);
        const auto& jr = j.at("report");
        net.report.train_loss = jr.at("train_loss").get<std::vector<double>>();
        net.report.val_loss = jr.at("val_loss").get<std::vector<double>>();
        net.report.best_epoch = jr.at("best_epoch").get<int>();
        net.report.stopped_epoch = jr.at("stopped_epoch").get<int>();
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("network_from_json: ") + e.what());
    }
}

}  // namespace sri::net
