#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "l2d/core.hpp"
#include "l2d/errors.hpp"
#include "l2d/losses.hpp"
#include "l2d/random.hpp"

namespace l2d {

// ---------------------------------------------------------------------------
// Score models
// ---------------------------------------------------------------------------

// Parametric hypothesis x -> R^{n+n_e}: a linear map or a two-layer
// rectifier perceptron, with hand-derived backprop.
struct ScoreModel {
    ModelClassKind arch = ModelClassKind::linear; // linear | mlp2
    int input_dim = 0;
    int hidden_dim = 0; // mlp2 only
    int output_dim = 0;

    std::vector<double> w1, b1; // linear: w1 is output x input; mlp2: hidden x input
    std::vector<double> w2, b2; // mlp2 only: output x hidden

    static ScoreModel init(ModelClassKind arch, int input_dim, int hidden_dim, int output_dim,
                           std::uint64_t seed) {
        if (arch != ModelClassKind::linear && arch != ModelClassKind::mlp2)
            throw config_error("ScoreModel: architecture must be linear or mlp2");
        if (input_dim < 1 || output_dim < 2 || (arch == ModelClassKind::mlp2 && hidden_dim < 1))
            throw config_error("ScoreModel: bad dimensions");
        ScoreModel m;
        m.arch = arch;
        m.input_dim = input_dim;
        m.hidden_dim = arch == ModelClassKind::mlp2 ? hidden_dim : 0;
        m.output_dim = output_dim;
        Rng rng(derive_seed(seed, 0xC0DEULL));
        auto fill = [&](std::vector<double>& v, std::size_t count, int fan_in) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
            v.resize(count);
            for (auto& x : v) x = rng.uniform(-bound, bound);
        };
        if (arch == ModelClassKind::linear) {
            fill(m.w1, static_cast<std::size_t>(output_dim) * input_dim, input_dim);
            fill(m.b1, static_cast<std::size_t>(output_dim), input_dim);
        } else {
            fill(m.w1, static_cast<std::size_t>(hidden_dim) * input_dim, input_dim);
            fill(m.b1, static_cast<std::size_t>(hidden_dim), input_dim);
            fill(m.w2, static_cast<std::size_t>(output_dim) * hidden_dim, hidden_dim);
            fill(m.b2, static_cast<std::size_t>(output_dim), hidden_dim);
        }
        return m;
    }

    std::array<std::vector<double>*, 4> blocks() { return {&w1, &b1, &w2, &b2}; }
    std::array<const std::vector<double>*, 4> blocks() const { return {&w1, &b1, &w2, &b2}; }

    std::size_t parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

    double parameter_norm() const {
        double s = 0.0;
        for (const auto* blk : blocks())
            for (double v : *blk) s += v * v;
        return std::sqrt(s);
    }

    ScoreVector forward(std::span<const double> x) const {
        ScoreVector out;
        std::vector<double> hidden;
        forward(x, out, hidden);
        return out;
    }

    // hidden receives post-activation values (mlp2); reused as scratch.
    void forward(std::span<const double> x, ScoreVector& out, std::vector<double>& hidden) const {
        if (static_cast<int>(x.size()) != input_dim)
            throw config_error("ScoreModel: feature length != input_dim");
        out.assign(static_cast<std::size_t>(output_dim), 0.0);
        if (arch == ModelClassKind::linear) {
            for (int o = 0; o < output_dim; ++o) {
                double acc = b1[static_cast<std::size_t>(o)];
                const double* row = &w1[static_cast<std::size_t>(o) * input_dim];
                for (int i = 0; i < input_dim; ++i) acc += row[i] * x[static_cast<std::size_t>(i)];
                out[static_cast<std::size_t>(o)] = acc;
            }
            return;
        }
        hidden.assign(static_cast<std::size_t>(hidden_dim), 0.0);
        for (int h = 0; h < hidden_dim; ++h) {
            double acc = b1[static_cast<std::size_t>(h)];
            const double* row = &w1[static_cast<std::size_t>(h) * input_dim];
            for (int i = 0; i < input_dim; ++i) acc += row[i] * x[static_cast<std::size_t>(i)];
            hidden[static_cast<std::size_t>(h)] = acc > 0.0 ? acc : 0.0;
        }
        for (int o = 0; o < output_dim; ++o) {
            double acc = b2[static_cast<std::size_t>(o)];
            const double* row = &w2[static_cast<std::size_t>(o) * hidden_dim];
            for (int h = 0; h < hidden_dim; ++h) acc += row[h] * hidden[static_cast<std::size_t>(h)];
            out[static_cast<std::size_t>(o)] = acc;
        }
    }

    // Accumulates d(loss)/d(params) given d(loss)/d(scores).
    void backward(std::span<const double> x, const std::vector<double>& hidden,
                  const std::vector<double>& dscores, ScoreModel& grad) const {
        if (arch == ModelClassKind::linear) {
            for (int o = 0; o < output_dim; ++o) {
                const double g = dscores[static_cast<std::size_t>(o)];
                grad.b1[static_cast<std::size_t>(o)] += g;
                double* row = &grad.w1[static_cast<std::size_t>(o) * input_dim];
                for (int i = 0; i < input_dim; ++i) row[i] += g * x[static_cast<std::size_t>(i)];
            }
            return;
        }
        std::vector<double> dhidden(static_cast<std::size_t>(hidden_dim), 0.0);
        for (int o = 0; o < output_dim; ++o) {
            const double g = dscores[static_cast<std::size_t>(o)];
            grad.b2[static_cast<std::size_t>(o)] += g;
            const double* w2row = &w2[static_cast<std::size_t>(o) * hidden_dim];
            double* gw2row = &grad.w2[static_cast<std::size_t>(o) * hidden_dim];
            for (int h = 0; h < hidden_dim; ++h) {
                gw2row[h] += g * hidden[static_cast<std::size_t>(h)];
                dhidden[static_cast<std::size_t>(h)] += g * w2row[h];
            }
        }
        for (int h = 0; h < hidden_dim; ++h) {
            if (hidden[static_cast<std::size_t>(h)] <= 0.0) continue; // rectifier gate
            const double g = dhidden[static_cast<std::size_t>(h)];
            grad.b1[static_cast<std::size_t>(h)] += g;
            double* row = &grad.w1[static_cast<std::size_t>(h) * input_dim];
            for (int i = 0; i < input_dim; ++i) row[i] += g * x[static_cast<std::size_t>(i)];
        }
    }

    ScoreModel zeros_like() const {
        ScoreModel g = *this;
        for (auto* blk : g.blocks()) std::fill(blk->begin(), blk->end(), 0.0);
        return g;
    }

    // Zero-sum output projection: after it, scores over the scope sum to
    // zero for every input (column sums and bias mean removed).
    void project_output_zero_sum(int scope_rows = 0) {
        auto& w = arch == ModelClassKind::linear ? w1 : w2;
        auto& b = arch == ModelClassKind::linear ? b1 : b2;
        const int in = arch == ModelClassKind::linear ? input_dim : hidden_dim;
        const int rows = (scope_rows <= 0 || scope_rows > output_dim) ? output_dim : scope_rows;
        for (int i = 0; i < in; ++i) {
            double mean = 0.0;
            for (int o = 0; o < rows; ++o) mean += w[static_cast<std::size_t>(o) * in + i];
            mean /= rows;
            for (int o = 0; o < rows; ++o) w[static_cast<std::size_t>(o) * in + i] -= mean;
        }
        double bmean = 0.0;
        for (int o = 0; o < rows; ++o) bmean += b[static_cast<std::size_t>(o)];
        bmean /= rows;
        for (int o = 0; o < rows; ++o) b[static_cast<std::size_t>(o)] -= bmean;
    }
};

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

// One labeled draw with its materialized expert behaviour. Expert costs are
// precomputed at dataset build time, so training never queries experts.
struct Sample {
    std::vector<double> features;
    Label label = 1;
    std::vector<Label> expert_predictions;
    std::vector<double> expert_costs; // c_j(x, y) at the drawn label
};

using TrainingSet = std::vector<Sample>;

struct ClusterSpec {
    std::vector<double> mean;
    double scale = 1.0;
};

// Either a generalist with a target accuracy, or a specialist that is
// accurate on its domain classes and guesses uniformly elsewhere.
struct ExpertProfile {
    bool is_specialist = false;
    double accuracy = 1.0;              // generalist
    std::vector<Label> domain;          // specialist
    double in_domain_accuracy = 1.0;    // specialist
};

struct SyntheticTaskSpec {
    int n = 2;
    int n_e = 1;
    int input_dim = 2;
    std::vector<ClusterSpec> clusters; // one per class
    double label_noise = 0.0;          // in [0, 0.5)
    std::vector<ExpertProfile> experts;
    int cost_kind = 1; // 1: misclassification; 2: misclassification + beta
    std::vector<double> betas;
    int grid_size = 300;
    int test_size = 2000;

    void validate() const {
        if (n < 2 || n_e < 1 || input_dim < 1) throw config_error("SyntheticTaskSpec: bad dimensions");
        if (static_cast<int>(clusters.size()) != n)
            throw config_error("SyntheticTaskSpec: need one cluster per class");
        for (const auto& c : clusters) {
            if (static_cast<int>(c.mean.size()) != input_dim)
                throw config_error("SyntheticTaskSpec: cluster mean length != input_dim");
            if (!(c.scale > 0.0)) throw config_error("SyntheticTaskSpec: cluster scale must be positive");
        }
        if (label_noise < 0.0 || label_noise >= 0.5)
            throw config_error("SyntheticTaskSpec: label_noise must be in [0, 0.5)");
        if (static_cast<int>(experts.size()) != n_e)
            throw config_error("SyntheticTaskSpec: need one profile per expert");
        for (const auto& e : experts) {
            if (!e.is_specialist && (e.accuracy < 0.0 || e.accuracy > 1.0))
                throw config_error("SyntheticTaskSpec: expert accuracy must be in [0,1]");
            if (e.is_specialist && (e.in_domain_accuracy < 0.0 || e.in_domain_accuracy > 1.0))
                throw config_error("SyntheticTaskSpec: in_domain_accuracy must be in [0,1]");
        }
        if (cost_kind != 1 && cost_kind != 2) throw config_error("SyntheticTaskSpec: cost_kind must be 1 or 2");
        if (cost_kind == 2 && static_cast<int>(betas.size()) != n_e)
            throw config_error("SyntheticTaskSpec: need one beta per expert for cost kind 2");
        for (double b : betas)
            if (b < 0.0) throw config_error("SyntheticTaskSpec: betas must be nonnegative");
        if (grid_size < 1 || test_size < 0) throw config_error("SyntheticTaskSpec: bad grid/test size");
    }

    double beta_of(int expert) const {
        return cost_kind == 2 ? betas[static_cast<std::size_t>(expert)] : 0.0;
    }
};

// Ring of clusters, a convenient default layout.
inline std::vector<ClusterSpec> ring_layout(int n, int input_dim, double radius, double scale) {
    std::vector<ClusterSpec> out;
    for (int k = 0; k < n; ++k) {
        ClusterSpec c;
        c.mean.assign(static_cast<std::size_t>(input_dim), 0.0);
        const double angle = 2.0 * std::numbers::pi * k / n;
        c.mean[0] = radius * std::cos(angle);
        if (input_dim > 1) c.mean[1] = radius * std::sin(angle);
        c.scale = scale;
        out.push_back(std::move(c));
    }
    return out;
}

struct GeneratedTask {
    TrainingSet train;
    TrainingSet test;
    DeferralInstance grid; // exact distribution + expert panel on the evaluation grid
    LabelSpace space;
};

namespace detail {

// Mixture posterior over the drawn class, then the label-noise channel.
inline std::vector<double> conditional_at(const SyntheticTaskSpec& task, std::span<const double> x) {
    const int n = task.n;
    std::vector<double> logp(static_cast<std::size_t>(n), 0.0);
    double best = -1e300;
    for (int k = 0; k < n; ++k) {
        const auto& c = task.clusters[static_cast<std::size_t>(k)];
        double d2 = 0.0;
        for (int i = 0; i < task.input_dim; ++i) {
            const double d = x[static_cast<std::size_t>(i)] - c.mean[static_cast<std::size_t>(i)];
            d2 += d * d;
        }
        const double lp = -0.5 * d2 / (c.scale * c.scale) - task.input_dim * std::log(c.scale);
        logp[static_cast<std::size_t>(k)] = lp;
        best = std::max(best, lp);
    }
    double z = 0.0;
    for (auto& v : logp) {
        v = std::exp(v - best);
        z += v;
    }
    std::vector<double> cond(static_cast<std::size_t>(n), 0.0);
    for (int k = 0; k < n; ++k) {
        const double pz = logp[static_cast<std::size_t>(k)] / z;
        for (int y = 0; y < n; ++y) {
            const double channel = (y == k) ? 1.0 - task.label_noise : task.label_noise / (n - 1);
            cond[static_cast<std::size_t>(y)] += pz * channel;
        }
    }
    return cond;
}

inline Label uniform_other(Rng& rng, int n, Label avoid) {
    Label pick = static_cast<Label>(1 + rng.below(static_cast<std::uint64_t>(n - 1)));
    if (pick >= avoid) ++pick;
    return pick;
}

inline Label expert_prediction(const ExpertProfile& e, Rng& rng, int n, Label reference) {
    if (e.is_specialist) {
        const bool in_domain =
            std::find(e.domain.begin(), e.domain.end(), reference) != e.domain.end();
        if (in_domain && rng.u01() < e.in_domain_accuracy) return reference;
        if (in_domain) return uniform_other(rng, n, reference);
        return static_cast<Label>(1 + rng.below(static_cast<std::uint64_t>(n)));
    }
    if (rng.u01() < e.accuracy) return reference;
    return uniform_other(rng, n, reference);
}

inline double raw_cost(const SyntheticTaskSpec& task, int expert, Label prediction, Label y) {
    return (prediction == y ? 0.0 : 1.0) + task.beta_of(expert);
}

// Conditional expected misclassification of the expert channel given the
// true label; the exact-analysis counterpart of the per-sample draws (the
// deferral and surrogate losses are linear in the cost, so expectations
// over the channel commute with everything downstream).
inline double channel_expected_miss(const ExpertProfile& e, int n, Label y) {
    if (!e.is_specialist) return 1.0 - e.accuracy;
    const bool in_domain = std::find(e.domain.begin(), e.domain.end(), y) != e.domain.end();
    if (in_domain) return 1.0 - e.in_domain_accuracy;
    return 1.0 - 1.0 / static_cast<double>(n);
}

inline TrainingSet draw_samples(const SyntheticTaskSpec& task, int count, Rng& rng) {
    TrainingSet out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Sample s;
        const int z = static_cast<int>(rng.below(static_cast<std::uint64_t>(task.n)));
        const auto& c = task.clusters[static_cast<std::size_t>(z)];
        s.features.resize(static_cast<std::size_t>(task.input_dim));
        for (int d = 0; d < task.input_dim; ++d)
            s.features[static_cast<std::size_t>(d)] = c.mean[static_cast<std::size_t>(d)] + c.scale * rng.normal();
        s.label = static_cast<Label>(z + 1);
        if (task.label_noise > 0.0 && rng.u01() < task.label_noise)
            s.label = uniform_other(rng, task.n, s.label);
        s.expert_predictions.resize(static_cast<std::size_t>(task.n_e));
        s.expert_costs.resize(static_cast<std::size_t>(task.n_e));
        for (int j = 0; j < task.n_e; ++j) {
            const Label g = expert_prediction(task.experts[static_cast<std::size_t>(j)], rng, task.n, s.label);
            s.expert_predictions[static_cast<std::size_t>(j)] = g;
            s.expert_costs[static_cast<std::size_t>(j)] = raw_cost(task, j, g, s.label);
        }
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace detail

// Draws i.i.d. train/test sets and materializes the exact evaluation-grid
// distribution with its expert panel. Fully reproducible from the seed.
inline GeneratedTask generate_task(const SyntheticTaskSpec& task, int m, std::uint64_t seed) {
    task.validate();
    if (m < 1) throw config_error("generate_task: m must be >= 1");
    GeneratedTask out;
    out.space = LabelSpace{task.n, task.n_e};

    Rng train_rng(derive_seed(seed, 1));
    Rng test_rng(derive_seed(seed, 2));
    Rng grid_rng(derive_seed(seed, 3));
    out.train = detail::draw_samples(task, m, train_rng);
    out.test = detail::draw_samples(task, task.test_size, test_rng);

    // The grid panel carries exact channel-expected cost tables, so grid
    // computations are the true conditional expectations of the sampled
    // expert behaviour.
    out.grid.dist.n = task.n;
    out.grid.panel.experts.resize(static_cast<std::size_t>(task.n_e));
    for (int j = 0; j < task.n_e; ++j) {
        Expert& e = out.grid.panel.experts[static_cast<std::size_t>(j)];
        e.kind = CostKind::table;
        e.beta = task.beta_of(j);
        double lo = 1e300, hi = -1e300;
        std::vector<double> row(static_cast<std::size_t>(task.n));
        for (int y = 1; y <= task.n; ++y) {
            row[static_cast<std::size_t>(y - 1)] =
                detail::channel_expected_miss(task.experts[static_cast<std::size_t>(j)], task.n, y) + e.beta;
            lo = std::min(lo, row[static_cast<std::size_t>(y - 1)]);
            hi = std::max(hi, row[static_cast<std::size_t>(y - 1)]);
        }
        e.cost_table.assign(static_cast<std::size_t>(task.grid_size), row);
        e.lower_bound = lo;
        e.upper_bound = hi;
    }
    const double w = 1.0 / task.grid_size;
    for (int i = 0; i < task.grid_size; ++i) {
        DistPoint p;
        const int z = static_cast<int>(grid_rng.below(static_cast<std::uint64_t>(task.n)));
        const auto& c = task.clusters[static_cast<std::size_t>(z)];
        p.features.resize(static_cast<std::size_t>(task.input_dim));
        for (int d = 0; d < task.input_dim; ++d)
            p.features[static_cast<std::size_t>(d)] = c.mean[static_cast<std::size_t>(d)] + c.scale * grid_rng.normal();
        p.id = "g" + std::to_string(i);
        p.weight = w;
        p.conditional = detail::conditional_at(task, p.features);
        out.grid.dist.points.push_back(std::move(p));
    }
    // exact normalization (weights are 1/grid_size up to rounding)
    double total = 0.0;
    for (const auto& p : out.grid.dist.points) total += p.weight;
    for (auto& p : out.grid.dist.points) p.weight /= total;
    out.grid.dist.validate(1e-9);
    return out;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

enum class OptimizerKind { sgd, adam };

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    SurrogateSpec spec;
    int epochs = 50;
    int batch_size = 32;
    double learning_rate = 0.01;
    OptimizerKind optimizer = OptimizerKind::adam;
    AdamParams adam;
    double weight_decay = 0.0;
    std::uint64_t seed = 1;
    bool constraint_projection = false;
    double max_param_norm = 0.0; // 0 = unconstrained; else L2 projection radius

    void validate() const {
        spec.validate();
        if (epochs < 0 || batch_size < 1 || learning_rate < 0.0 || weight_decay < 0.0 ||
            max_param_norm < 0.0)
            throw config_error("TrainConfig: bad optimization parameters");
        const bool needs_projection = spec.family == LossFamily::constrained;
        if (constraint_projection != needs_projection)
            throw config_error("TrainConfig: constraint_projection must be set iff the spec is constrained");
    }
};

struct TrainResult {
    ScoreModel model;
    std::vector<double> loss_curve; // per-epoch mean training surrogate loss
};

namespace detail {

struct AdamState {
    std::vector<double> m, v;
    long step = 0;
};

inline void apply_update(ScoreModel& model, const ScoreModel& grad, const TrainConfig& cfg,
                         std::vector<AdamState>& states) {
    int idx = 0;
    auto gblocks = grad.blocks();
    for (auto* blk : model.blocks()) {
        const auto* gblk = gblocks[static_cast<std::size_t>(idx)];
        auto& st = states[static_cast<std::size_t>(idx)];
        ++idx;
        if (blk->empty()) continue;
        if (cfg.optimizer == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < blk->size(); ++i) {
                const double g = (*gblk)[i] + cfg.weight_decay * (*blk)[i];
                (*blk)[i] -= cfg.learning_rate * g;
            }
            continue;
        }
        if (st.m.size() != blk->size()) {
            st.m.assign(blk->size(), 0.0);
            st.v.assign(blk->size(), 0.0);
        }
        ++st.step;
        const double bc1 = 1.0 - std::pow(cfg.adam.beta1, static_cast<double>(st.step));
        const double bc2 = 1.0 - std::pow(cfg.adam.beta2, static_cast<double>(st.step));
        for (std::size_t i = 0; i < blk->size(); ++i) {
            const double g = (*gblk)[i] + cfg.weight_decay * (*blk)[i];
            st.m[i] = cfg.adam.beta1 * st.m[i] + (1.0 - cfg.adam.beta1) * g;
            st.v[i] = cfg.adam.beta2 * st.v[i] + (1.0 - cfg.adam.beta2) * g * g;
            const double mh = st.m[i] / bc1;
            const double vh = st.v[i] / bc2;
            (*blk)[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam.eps);
        }
    }
}

} // namespace detail

// Mini-batch first-order minimization of the mean surrogate loss. Sample
// weights scale each example's loss; the plain trainer uses weight one.
inline TrainResult train_weighted(ScoreModel model, const TrainingSet& data,
                                  const std::vector<double>& sample_weights, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw config_error("train: empty training set");
    if (!sample_weights.empty() && sample_weights.size() != data.size())
        throw config_error("train: sample weight count mismatch");
    const LabelSpace space{model.output_dim - static_cast<int>(data.front().expert_costs.size()),
                           static_cast<int>(data.front().expert_costs.size())};
    space.validate();
    const int scope = cfg.spec.constraint_over_classes_only ? space.n : 0;
    if (cfg.constraint_projection) model.project_output_zero_sum(scope);

    Rng rng(derive_seed(cfg.seed, 0x7121ULL));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<detail::AdamState> states(4);
    TrainResult out;
    ScoreVector scores;
    std::vector<double> hidden;
    ScoreModel grad = model.zeros_like();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            for (auto* blk : grad.blocks()) std::fill(blk->begin(), blk->end(), 0.0);
            double batch_loss = 0.0;
            try {
                for (std::size_t k = start; k < stop; ++k) {
                    const Sample& sample = data[order[k]];
                    const double weight = sample_weights.empty() ? 1.0 : sample_weights[order[k]];
                    model.forward(sample.features, scores, hidden);
                    batch_loss += weight * surrogate_loss(cfg.spec, scores, sample.label, space,
                                                          sample.expert_costs);
                    ScoreVector ds = surrogate_gradient(cfg.spec, scores, sample.label, space,
                                                        sample.expert_costs);
                    const double inv = weight / static_cast<double>(stop - start);
                    for (auto& v : ds) v *= inv;
                    model.backward(sample.features, hidden, ds, grad);
                }
            } catch (const invalid_score_error&) {
                throw training_error("train: scores diverged to non-finite values", epoch,
                                     batch_index, model.parameter_norm());
            }
            batch_loss /= static_cast<double>(stop - start);
            if (!std::isfinite(batch_loss))
                throw training_error("train: non-finite batch loss", epoch, batch_index,
                                     model.parameter_norm());
            detail::apply_update(model, grad, cfg, states);
            if (cfg.max_param_norm > 0.0) {
                const double norm = model.parameter_norm();
                if (norm > cfg.max_param_norm) {
                    const double shrink = cfg.max_param_norm / norm;
                    for (auto* blk : model.blocks())
                        for (auto& v : *blk) v *= shrink;
                }
            }
            if (cfg.constraint_projection) model.project_output_zero_sum(scope);
            epoch_loss += batch_loss * static_cast<double>(stop - start);
            seen += stop - start;
            ++batch_index;
        }
        out.loss_curve.push_back(epoch_loss / static_cast<double>(seen));
    }
    out.model = std::move(model);
    return out;
}

inline TrainResult train(ScoreModel model, const TrainingSet& data, const TrainConfig& cfg) {
    return train_weighted(std::move(model), data, {}, cfg);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct SystemEvaluation {
    double system_accuracy = 0.0;
    std::vector<double> deferral_ratios;                // predictor, expert 1..n_e
    std::vector<std::vector<double>> per_class_routing; // row per true class
    std::vector<int> per_class_counts;
    std::vector<double> per_class_accuracy;
};

// Final decision is the model's class prediction or, on deferral, the
// selected expert's prediction.
inline SystemEvaluation evaluate_system(const ScoreModel& model, const TrainingSet& test,
                                        const LabelSpace& space) {
    if (test.empty()) throw config_error("evaluate_system: empty test set");
    SystemEvaluation ev;
    const std::size_t options = static_cast<std::size_t>(1 + space.n_e);
    ev.deferral_ratios.assign(options, 0.0);
    ev.per_class_routing.assign(static_cast<std::size_t>(space.n), std::vector<double>(options, 0.0));
    ev.per_class_counts.assign(static_cast<std::size_t>(space.n), 0);
    ev.per_class_accuracy.assign(static_cast<std::size_t>(space.n), 0.0);
    ScoreVector scores;
    std::vector<double> hidden;
    std::size_t correct = 0;
    for (const Sample& sample : test) {
        model.forward(sample.features, scores, hidden);
        const Label pred = predict_label(scores);
        Label decision = pred;
        std::size_t option = 0;
        if (space.is_expert_label(pred)) {
            const int j = space.expert_of(pred);
            decision = sample.expert_predictions[static_cast<std::size_t>(j - 1)];
            option = static_cast<std::size_t>(j);
        }
        if (decision == sample.label) {
            ++correct;
            ev.per_class_accuracy[static_cast<std::size_t>(sample.label - 1)] += 1.0;
        }
        ev.deferral_ratios[option] += 1.0;
        ev.per_class_routing[static_cast<std::size_t>(sample.label - 1)][option] += 1.0;
        ev.per_class_counts[static_cast<std::size_t>(sample.label - 1)] += 1;
    }
    ev.system_accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
    for (auto& r : ev.deferral_ratios) r /= static_cast<double>(test.size());
    for (int y = 0; y < space.n; ++y) {
        const int count = ev.per_class_counts[static_cast<std::size_t>(y)];
        if (count == 0) continue;
        for (auto& r : ev.per_class_routing[static_cast<std::size_t>(y)]) r /= count;
        ev.per_class_accuracy[static_cast<std::size_t>(y)] /= count;
    }
    return ev;
}

// Accuracy of the model's class scores alone (deferral options ignored);
// the no-deferral baseline.
inline double classifier_accuracy(const ScoreModel& model, const TrainingSet& test, const LabelSpace& space) {
    if (test.empty()) throw config_error("classifier_accuracy: empty test set");
    ScoreVector scores;
    std::vector<double> hidden;
    std::size_t correct = 0;
    for (const Sample& sample : test) {
        model.forward(sample.features, scores, hidden);
        int best = 0;
        for (int y = 1; y < space.n; ++y)
            if (scores[static_cast<std::size_t>(y)] > scores[static_cast<std::size_t>(best)]) best = y;
        if (best + 1 == sample.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

// Mean surrogate loss of a model over a dataset.
inline double mean_surrogate_loss(const SurrogateSpec& spec, const ScoreModel& model,
                                  const TrainingSet& data, const LabelSpace& space) {
    if (data.empty()) throw config_error("mean_surrogate_loss: empty set");
    ScoreVector scores;
    std::vector<double> hidden;
    double total = 0.0;
    for (const Sample& sample : data) {
        model.forward(sample.features, scores, hidden);
        total += surrogate_loss(spec, scores, sample.label, space, sample.expert_costs);
    }
    return total / static_cast<double>(data.size());
}

inline double max_surrogate_loss(const SurrogateSpec& spec, const ScoreModel& model,
                                 const TrainingSet& data, const LabelSpace& space) {
    if (data.empty()) throw config_error("max_surrogate_loss: empty set");
    ScoreVector scores;
    std::vector<double> hidden;
    double top = 0.0;
    for (const Sample& sample : data) {
        model.forward(sample.features, scores, hidden);
        top = std::max(top, surrogate_loss(spec, scores, sample.label, space, sample.expert_costs));
    }
    return top;
}

} // namespace l2d
