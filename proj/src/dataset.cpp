#include "sri/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sri/common.hpp"
#include "sri/rng.hpp"

namespace sri {

void Dataset::validate() const {
    for (int i = 0; i < n(); ++i) {
        const Observation& o = obs[static_cast<std::size_t>(i)];
        if (o.t != 0 && o.t != 1)
            throw InvalidArgument("unit " + std::to_string(i) + ": t must be 0 or 1");
        if (o.s != 0 && o.s != 1)
            throw InvalidArgument("unit " + std::to_string(i) + ": s must be 0 or 1");
        if (static_cast<int>(o.y.size()) != d)
            throw InvalidArgument("unit " + std::to_string(i) + ": embedding length mismatch");
        if (static_cast<int>(o.z.size()) != p)
            throw InvalidArgument("unit " + std::to_string(i) + ": covariate length mismatch");
        if (o.s == 1 && static_cast<int>(o.labels.size()) != num_coders)
            throw InvalidArgument("unit " + std::to_string(i) + ": labeled unit must carry " +
                                  std::to_string(num_coders) + " coder labels");
        if (o.s == 0 && !o.labels.empty())
            throw InvalidArgument("unit " + std::to_string(i) + ": unlabeled unit carries labels");
        for (int l : o.labels)
            if (l < 0 || l >= num_classes)
                throw InvalidArgument("unit " + std::to_string(i) + ": label outside class range");
        if (o.gold && (*o.gold < 0 || *o.gold >= num_classes))
            throw InvalidArgument("unit " + std::to_string(i) + ": gold outside class range");
        if (o.pred && (*o.pred < 0 || *o.pred >= num_classes))
            throw InvalidArgument("unit " + std::to_string(i) + ": pred outside class range");
    }
}

namespace detail {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> draw_alpha(const SynthConfig& cfg) {
    std::uint64_t cseed = cfg.coef_seed ? *cfg.coef_seed : cfg.seed;
    rng::Stream st = rng::substream(cseed, {rng::kTagAlpha});
    std::vector<double> alpha(static_cast<std::size_t>(cfg.d));
    for (double& a : alpha) a = cfg.coef_low + (cfg.coef_high - cfg.coef_low) * st.next_unit();
    return alpha;
}

UnitDraw draw_unit(const SynthConfig& cfg, const std::vector<double>& alpha, std::int64_t i,
                   std::vector<double>* y) {
    rng::Stream st = rng::substream(cfg.seed, {rng::kTagUnit, static_cast<std::uint64_t>(i)});
    UnitDraw u;
    u.t = st.next_unit() < cfg.treat_prob ? 1 : 0;
    if (y) y->resize(static_cast<std::size_t>(cfg.d));
    if (cfg.noise_per_coord) {
        for (int j = 0; j < cfg.d; ++j) {
            double v = alpha[static_cast<std::size_t>(j)] * u.t + st.next_normal();
            u.sum_y += v;
            if (y) (*y)[static_cast<std::size_t>(j)] = v;
        }
    } else {
        double eps = st.next_normal();
        for (int j = 0; j < cfg.d; ++j) {
            double v = alpha[static_cast<std::size_t>(j)] * u.t + eps;
            u.sum_y += v;
            if (y) (*y)[static_cast<std::size_t>(j)] = v;
        }
    }
    if (cfg.num_z_strata > 0)
        u.stratum = static_cast<int>(st.next_below(static_cast<std::uint64_t>(cfg.num_z_strata)));
    return u;
}

}  // namespace detail

Dataset generate_synthetic(const SynthConfig& config) {
    if (config.n < 0) throw InvalidArgument("generate_synthetic: n must be nonnegative");
    if (config.d < 1) throw InvalidArgument("generate_synthetic: d must be positive");
    if (config.coef_low > config.coef_high)
        throw InvalidArgument("generate_synthetic: coef_low exceeds coef_high");
    if (config.treat_prob < 0.0 || config.treat_prob > 1.0)
        throw InvalidArgument("generate_synthetic: treat_prob outside [0,1]");

    Dataset ds;
    ds.d = config.d;
    ds.p = config.num_z_strata > 0 ? 1 : 0;
    ds.num_classes = 2;
    ds.num_coders = 1;
    ds.obs.resize(static_cast<std::size_t>(config.n));

    const std::vector<double> alpha = detail::draw_alpha(config);
    for (std::int64_t i = 0; i < config.n; ++i) {
        Observation& o = ds.obs[static_cast<std::size_t>(i)];
        detail::UnitDraw u = detail::draw_unit(config, alpha, i, &o.y);
        o.t = u.t;
        int gold = detail::sigmoid(config.intercept + config.slope * u.sum_y) > 0.5 ? 1 : 0;
        o.gold = gold;
        o.s = 1;
        o.labels = {gold};
        if (config.num_z_strata > 0) o.z = {static_cast<double>(u.stratum)};
    }
    return ds;
}

namespace {

// One flipped label: keep gold with probability `accuracy`, else uniform over
// the other classes.
int flip_one(int gold, int num_classes, double accuracy, rng::Stream& st) {
    if (st.next_unit() < accuracy) return gold;
    int r = static_cast<int>(st.next_below(static_cast<std::uint64_t>(num_classes - 1)));
    return r >= gold ? r + 1 : r;
}

}  // namespace

Dataset corrupt_labels(const Dataset& dataset, const std::vector<double>& coder_accuracies,
                       std::uint64_t seed) {
    if (coder_accuracies.empty())
        throw InvalidArgument("corrupt_labels: need at least one coder accuracy");
    for (double a : coder_accuracies)
        if (!(a > 0.5 && a <= 1.0))
            throw InvalidArgument(
                "corrupt_labels: accuracy must lie in (0.5, 1.0]; coders must beat chance");
    if (dataset.num_classes < 2) throw InvalidArgument("corrupt_labels: need at least 2 classes");

    Dataset out = dataset;
    out.num_coders = static_cast<int>(coder_accuracies.size());
    for (int i = 0; i < out.n(); ++i) {
        Observation& o = out.obs[static_cast<std::size_t>(i)];
        if (o.s != 1) continue;
        if (!o.gold)
            throw InvalidArgument("corrupt_labels: unit " + std::to_string(i) + " has no gold label");
        o.labels.assign(static_cast<std::size_t>(out.num_coders), 0);
        for (int j = 0; j < out.num_coders; ++j) {
            rng::Stream st = rng::substream(
                seed, {rng::kTagCorrupt, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(i)});
            o.labels[static_cast<std::size_t>(j)] =
                flip_one(*o.gold, out.num_classes, coder_accuracies[static_cast<std::size_t>(j)], st);
        }
    }
    return out;
}

Dataset sample_annotations(const Dataset& dataset, double label_fraction, std::uint64_t seed) {
    if (!(label_fraction > 0.0 && label_fraction <= 1.0))
        throw InvalidArgument("sample_annotations: label_fraction must lie in (0, 1]");

    const int n = dataset.n();
    const auto m = static_cast<std::int64_t>(std::llround(label_fraction * n));
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    rng::Stream st = rng::substream(seed, {rng::kTagSample});
    st.shuffle(idx);

    std::vector<char> keep(static_cast<std::size_t>(n), 0);
    for (std::int64_t i = 0; i < m && i < n; ++i) keep[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;

    Dataset out = dataset;
    for (int i = 0; i < n; ++i) {
        Observation& o = out.obs[static_cast<std::size_t>(i)];
        if (keep[static_cast<std::size_t>(i)]) {
            o.s = 1;
        } else {
            o.s = 0;
            o.labels.clear();
        }
    }
    return out;
}

FoldAssignment split_folds(int n, int k, std::uint64_t seed) {
    if (k < 1 || k > n)
        throw InvalidArgument("split_folds: need 1 <= k <= n, got k=" + std::to_string(k) +
                              ", n=" + std::to_string(n));
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    rng::Stream st = rng::substream(seed, {rng::kTagFolds});
    st.shuffle(idx);

    FoldAssignment fa;
    fa.k = k;
    fa.fold_of.assign(static_cast<std::size_t>(n), -1);
    // First n % k folds take the extra unit so sizes differ by at most one.
    const int base = n / k;
    const int rem = n % k;
    std::size_t pos = 0;
    for (int f = 0; f < k; ++f) {
        const int size = base + (f < rem ? 1 : 0);
        for (int j = 0; j < size; ++j)
            fa.fold_of[static_cast<std::size_t>(idx[pos++])] = f;
    }
    return fa;
}

namespace {

std::vector<std::string> split_line(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return cells;
}

[[noreturn]] void parse_fail(const std::string& path, int line_no, const std::string& what) {
    throw ParseError(path + ": line " + std::to_string(line_no) + ": " + what);
}

double parse_double(const std::string& cell, const std::string& path, int line_no,
                    const std::string& col) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size())
        parse_fail(path, line_no, "cannot parse '" + cell + "' as a real number in column " + col);
    return v;
}

int parse_int(const std::string& cell, const std::string& path, int line_no,
              const std::string& col) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size())
        parse_fail(path, line_no, "cannot parse '" + cell + "' as an integer in column " + col);
    return v;
}

// Counts a run of columns named prefix_0, prefix_1, ... starting at `at`,
// requiring consecutive indices from zero.
int count_block(const std::vector<std::string>& header, std::size_t at, const std::string& prefix,
                const std::string& path) {
    int count = 0;
    while (at < header.size()) {
        const std::string expect = prefix + "_" + std::to_string(count);
        if (header[at] != expect) break;
        ++count;
        ++at;
    }
    return count;
}

void format_double(std::string& out, double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    out.append(buf, ptr);
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw IoError("load_csv: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file, header required");
    const std::vector<std::string> header = split_line(line);

    std::size_t at = 0;
    if (header.size() < 2 || header[0] != "t" || header[1] != "s")
        parse_fail(path, 1, "header must start with t,s");
    at = 2;
    const int p = count_block(header, at, "z", path);
    at += static_cast<std::size_t>(p);
    const int d = count_block(header, at, "y", path);
    at += static_cast<std::size_t>(d);
    const int num_coders = count_block(header, at, "l", path);
    at += static_cast<std::size_t>(num_coders);
    bool has_gold = false;
    bool has_pred = false;
    if (at < header.size() && header[at] == "gold") {
        has_gold = true;
        ++at;
    }
    if (at < header.size() && header[at] == "pred") {
        has_pred = true;
        ++at;
    }
    if (at != header.size())
        parse_fail(path, 1, "unrecognised column '" + header[at] + "'");
    if (d == 0) parse_fail(path, 1, "no y_* columns found");
    if (num_coders == 0) parse_fail(path, 1, "no l_* columns found");
    if (schema.d && *schema.d != d)
        parse_fail(path, 1, "expected " + std::to_string(*schema.d) + " y_* columns, found " +
                                std::to_string(d));
    if (schema.p && *schema.p != p)
        parse_fail(path, 1, "expected " + std::to_string(*schema.p) + " z_* columns, found " +
                                std::to_string(p));
    if (schema.num_coders && *schema.num_coders != num_coders)
        parse_fail(path, 1, "expected " + std::to_string(*schema.num_coders) +
                                " l_* columns, found " + std::to_string(num_coders));

    Dataset ds;
    ds.d = d;
    ds.p = p;
    ds.num_coders = num_coders;

    int max_label = 1;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        const std::vector<std::string> cells = split_line(line);
        if (cells.size() != header.size())
            parse_fail(path, line_no,
                       "expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(cells.size()));

        Observation o;
        std::size_t c = 0;
        o.t = parse_int(cells[c], path, line_no, "t");
        ++c;
        o.s = parse_int(cells[c], path, line_no, "s");
        ++c;
        if (o.t != 0 && o.t != 1) parse_fail(path, line_no, "t must be 0 or 1");
        if (o.s != 0 && o.s != 1) parse_fail(path, line_no, "s must be 0 or 1");
        o.z.reserve(static_cast<std::size_t>(p));
        for (int j = 0; j < p; ++j, ++c)
            o.z.push_back(parse_double(cells[c], path, line_no, header[c]));
        o.y.reserve(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j, ++c)
            o.y.push_back(parse_double(cells[c], path, line_no, header[c]));
        for (int j = 0; j < num_coders; ++j, ++c) {
            if (cells[c].empty()) {
                if (o.s == 1) parse_fail(path, line_no, "labeled unit has empty cell " + header[c]);
                continue;
            }
            if (o.s == 0)
                parse_fail(path, line_no, "unlabeled unit has non-empty cell " + header[c]);
            int l = parse_int(cells[c], path, line_no, header[c]);
            if (l < 0 || (schema.num_classes && l >= *schema.num_classes))
                parse_fail(path, line_no, "label " + std::to_string(l) + " outside class range");
            max_label = std::max(max_label, l);
            o.labels.push_back(l);
        }
        if (has_gold) {
            if (!cells[c].empty()) {
                int g = parse_int(cells[c], path, line_no, "gold");
                if (g < 0 || (schema.num_classes && g >= *schema.num_classes))
                    parse_fail(path, line_no, "gold " + std::to_string(g) + " outside class range");
                max_label = std::max(max_label, g);
                o.gold = g;
            }
            ++c;
        }
        if (has_pred) {
            if (!cells[c].empty()) {
                int g = parse_int(cells[c], path, line_no, "pred");
                if (g < 0 || (schema.num_classes && g >= *schema.num_classes))
                    parse_fail(path, line_no, "pred " + std::to_string(g) + " outside class range");
                max_label = std::max(max_label, g);
                o.pred = g;
            }
            ++c;
        }
        ds.obs.push_back(std::move(o));
    }

    ds.num_classes = schema.num_classes ? *schema.num_classes : max_label + 1;
    ds.validate();
    return ds;
}

void write_csv(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_csv: cannot open " + path);

    bool has_gold = false;
    bool has_pred = false;
    for (const Observation& o : dataset.obs) {
        has_gold = has_gold || o.gold.has_value();
        has_pred = has_pred || o.pred.has_value();
    }

    std::string buf = "t,s";
    for (int j = 0; j < dataset.p; ++j) buf += ",z_" + std::to_string(j);
    for (int j = 0; j < dataset.d; ++j) buf += ",y_" + std::to_string(j);
    for (int j = 0; j < dataset.num_coders; ++j) buf += ",l_" + std::to_string(j);
    if (has_gold) buf += ",gold";
    if (has_pred) buf += ",pred";
    buf += '\n';
    out << buf;

    for (const Observation& o : dataset.obs) {
        buf.clear();
        buf += std::to_string(o.t);
        buf += ',';
        buf += std::to_string(o.s);
        for (double v : o.z) {
            buf += ',';
            format_double(buf, v);
        }
        for (double v : o.y) {
            buf += ',';
            format_double(buf, v);
        }
        for (int j = 0; j < dataset.num_coders; ++j) {
            buf += ',';
            if (j < static_cast<int>(o.labels.size()))
                buf += std::to_string(o.labels[static_cast<std::size_t>(j)]);
        }
        if (has_gold) {
            buf += ',';
            if (o.gold) buf += std::to_string(*o.gold);
        }
        if (has_pred) {
            buf += ',';
            if (o.pred) buf += std::to_string(*o.pred);
        }
        buf += '\n';
        out << buf;
    }
    if (!out) throw IoError("write_csv: write failed for " + path);
}

std::vector<int> synth_predictions(const Dataset& dataset, double accuracy, std::uint64_t seed) {
    if (!(accuracy > 0.5 && accuracy <= 1.0))
        throw InvalidArgument("synth_predictions: accuracy must lie in (0.5, 1.0]");
    std::vector<int> preds(static_cast<std::size_t>(dataset.n()));
    for (int i = 0; i < dataset.n(); ++i) {
        const Observation& o = dataset.obs[static_cast<std::size_t>(i)];
        if (!o.gold)
            throw InvalidArgument("synth_predictions: unit " + std::to_string(i) + " has no gold label");
        rng::Stream st = rng::substream(seed, {rng::kTagPred, static_cast<std::uint64_t>(i)});
        preds[static_cast<std::size_t>(i)] = flip_one(*o.gold, dataset.num_classes, accuracy, st);
    }
    return preds;
}

}  // namespace sri
