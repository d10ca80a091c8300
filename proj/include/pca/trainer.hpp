#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pca/backbone.hpp"
#include "pca/data.hpp"
#include "pca/loss.hpp"
#include "pca/metrics.hpp"
#include "pca/rng.hpp"

namespace pca::train {

struct NadamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Scalar reference for the update applied to every coordinate; tests and the
/// vectorized path must agree to 1e-12. Bias correction uses beta1^(t+1) for
/// the momentum term (the Nesterov look-ahead) and beta2^t for the variance.
inline double nadam_reference_step(double theta, double g, double m, double v, long t_next,
                                   const NadamConfig& c = {}) {
    const double m1 = c.beta1 * m + (1.0 - c.beta1) * g;
    const double v1 = c.beta2 * v + (1.0 - c.beta2) * g * g;
    const double m_hat = m1 / (1.0 - std::pow(c.beta1, static_cast<double>(t_next + 1)));
    const double v_hat = v1 / (1.0 - std::pow(c.beta2, static_cast<double>(t_next)));
    const double g_hat = g / (1.0 - std::pow(c.beta1, static_cast<double>(t_next)));
    return theta - c.lr * (c.beta1 * m_hat + (1.0 - c.beta1) * g_hat) / (std::sqrt(v_hat) + c.eps);
}

/// Nesterov-Adam over a model's learnable tensors. Gradients are read from the
/// tape leaves a Binder created during the forward pass; a parameter missing
/// from the binder (or never touched by the loss) contributes a zero gradient.
template <typename T>
class Nadam {
  public:
    Nadam(std::vector<std::pair<std::string, Tensor<T>*>> params, NadamConfig cfg = {}) : cfg_(cfg) {
        for (auto& [name, t] : params)
            slots_.push_back({name, t, Tensor<T>::zeros(t->shape()), Tensor<T>::zeros(t->shape())});
    }

    Nadam(backbone::Model<T>& model, NadamConfig cfg = {}) : cfg_(cfg) {
        model.for_each_param([this](const std::string& name, Tensor<T>& t) {
            slots_.push_back({name, &t, Tensor<T>::zeros(t.shape()), Tensor<T>::zeros(t.shape())});
        });
    }

    double lr() const { return cfg_.lr; }
    void set_lr(double lr) { cfg_.lr = lr; }
    long step_count() const { return t_; }

    /// One update from the gradients recorded in `binder`. Non-finite
    /// gradients abort before any state changes.
    void step(const backbone::Binder<T>& binder) {
        std::vector<const Tensor<T>*> grads(slots_.size(), nullptr);
        for (std::size_t s = 0; s < slots_.size(); ++s) {
            const Value<T>* leaf = binder.find(slots_[s].param);
            if (leaf && *leaf && (*leaf)->has_grad()) {
                grads[s] = &(*leaf)->grad;
                for (std::size_t i = 0; i < grads[s]->size(); ++i)
                    if (!std::isfinite(static_cast<double>((*grads[s])[i])))
                        throw std::runtime_error("nadam: non-finite gradient in " + slots_[s].name +
                                                 ", step aborted");
            }
        }
        ++t_;
        const double c_m = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_ + 1));
        const double c_g = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c_v = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t s = 0; s < slots_.size(); ++s) {
            Slot& slot = slots_[s];
            for (std::size_t i = 0; i < slot.param->size(); ++i) {
                const double g = grads[s] ? static_cast<double>((*grads[s])[i]) : 0.0;
                const double m = cfg_.beta1 * static_cast<double>(slot.m[i]) + (1.0 - cfg_.beta1) * g;
                const double v = cfg_.beta2 * static_cast<double>(slot.v[i]) + (1.0 - cfg_.beta2) * g * g;
                slot.m[i] = static_cast<T>(m);
                slot.v[i] = static_cast<T>(v);
                const double update =
                    cfg_.lr * (cfg_.beta1 * (m / c_m) + (1.0 - cfg_.beta1) * (g / c_g)) / (std::sqrt(v / c_v) + cfg_.eps);
                (*slot.param)[i] = static_cast<T>(static_cast<double>((*slot.param)[i]) - update);
            }
        }
    }

  private:
    struct Slot {
        std::string name;
        Tensor<T>* param;
        Tensor<T> m, v;
    };
    NadamConfig cfg_;
    std::vector<Slot> slots_;
    long t_ = 0;
};

/// Multiplies lr by `factor` once the monitored loss has gone `patience`
/// consecutive epochs without improving by at least `min_delta`; the stale
/// counter restarts after each cut. lr never rises and never drops below
/// `floor`.
struct PlateauScheduler {
    double lr = 0.001;
    double factor = 0.25;
    int patience = 5;
    double min_delta = 1e-4;
    double floor = 1e-6;

    double best = std::numeric_limits<double>::infinity();
    int stale = 0;

    double observe(double val_loss) {
        if (val_loss < best - min_delta) {
            best = val_loss;
            stale = 0;
        } else if (++stale >= patience) {
            lr = std::max(floor, lr * factor);
            stale = 0;
        }
        return lr;
    }
};

/// True once the monitored loss has gone `patience` consecutive epochs
/// without improving by at least `min_delta`.
struct EarlyStop {
    int patience = 10;
    double min_delta = 1e-4;

    double best = std::numeric_limits<double>::infinity();
    int stale = 0;

    bool observe(double val_loss) {
        if (val_loss < best - min_delta) {
            best = val_loss;
            stale = 0;
            return false;
        }
        return ++stale >= patience;
    }
};

struct TrainConfig {
    int epochs = 40;
    int batch_size = 32;
    double lr = 0.001;
    double gamma = 2.0;  // focal loss focusing strength
    double plateau_factor = 0.25;
    int plateau_patience = 5;
    int early_stop_patience = 10;
    double min_delta = 1e-4;
    double lr_floor = 1e-6;
    std::uint64_t seed = 0;
    bool augment = true;
    int image_size = 32;
    bool verbose = false;

    void validate() const {
        if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
        if (lr <= 0.0) throw std::invalid_argument("train: lr must be > 0");
        if (gamma < 0.0) throw std::invalid_argument("train: gamma must be >= 0");
        if (plateau_factor <= 0.0 || plateau_factor >= 1.0)
            throw std::invalid_argument("train: plateau_factor must be in (0,1)");
        if (plateau_patience < 1 || early_stop_patience < 1)
            throw std::invalid_argument("train: patience must be >= 1");
    }
};

struct EpochLog {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double lr = 0.0;
    double seconds = 0.0;  // wall time; the only non-reproducible column
};

struct TrainLog {
    std::vector<EpochLog> epochs;

    std::string to_csv() const {
        std::ostringstream out;
        out.precision(10);
        out << "epoch,train_loss,val_loss,val_acc,lr,seconds\n";
        for (const auto& e : epochs)
            out << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.val_accuracy << "," << e.lr
                << "," << e.seconds << "\n";
        return out.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& e : epochs)
            j.push_back({{"epoch", e.epoch},
                         {"train_loss", e.train_loss},
                         {"val_loss", e.val_loss},
                         {"val_acc", e.val_accuracy},
                         {"lr", e.lr},
                         {"seconds", e.seconds}});
        return j;
    }
};

template <typename T>
struct FitResult {
    backbone::Model<T> model;  // parameters/buffers from the best validation epoch
    TrainLog log;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0;  // 0 = never improved (e.g. zero epochs)
    bool aborted = false;  // non-finite training loss cut the run short
};

/// Mean focal loss and global accuracy of `model` over a manifest, eval mode.
template <typename T>
std::pair<double, double> evaluate_loss(backbone::Model<T>& model, const data::Manifest& m,
                                        const TrainConfig& cfg) {
    data::LoadOptions opt;
    opt.target_h = opt.target_w = cfg.image_size;
    double total_loss = 0.0;
    std::vector<int> labels, preds;
    for (std::size_t start = 0; start < m.records.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        std::vector<std::size_t> entries;
        for (std::size_t i = start; i < std::min(m.records.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i)
            entries.push_back(i);
        const data::Batch batch = data::load_batch(m, entries, opt);
        Tape<T> tape;
        const auto out = backbone::forward(tape, model, tape.leaf(batch.x.template cast<T>(), false), false);
        total_loss +=
            static_cast<double>(focal_loss_value(out.logits->value, batch.labels, static_cast<T>(cfg.gamma))) *
            static_cast<double>(entries.size());
        const Shape& s = out.logits->value.shape();
        for (int n = 0; n < s.n; ++n) {
            int arg = 0;
            for (int c = 1; c < s.c; ++c)
                if (out.logits->value.at(n, 0, 0, c) > out.logits->value.at(n, 0, 0, arg)) arg = c;
            preds.push_back(arg);
            labels.push_back(batch.labels[static_cast<std::size_t>(n)]);
        }
    }
    const auto cm = metrics::ConfusionMatrix::from_predictions(labels, preds, m.classes());
    return {total_loss / static_cast<double>(m.records.size()), metrics::global_accuracy(cm)};
}

/// Epoch loop: shuffle, batch, forward, focal loss, backward, Nadam step;
/// then validation loss/accuracy, plateau schedule, early stop. Returns the
/// model state from the best validation epoch. Bit-reproducible from
/// (seed, config, data) apart from the logged wall times.
template <typename T>
FitResult<T> fit(backbone::Model<T> model, const data::Manifest& train_set, const data::Manifest& val_set,
                 const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.records.empty()) throw std::invalid_argument("fit: empty training set");
    if (val_set.records.empty()) throw std::invalid_argument("fit: empty validation set");

    FitResult<T> result{model, {}, std::numeric_limits<double>::infinity(), 0, false};
    Nadam<T> opt(model, {cfg.lr});
    PlateauScheduler sched{cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_delta, cfg.lr_floor};
    EarlyStop stop{cfg.early_stop_patience, cfg.min_delta};

    data::LoadOptions load;
    load.target_h = load.target_w = cfg.image_size;
    load.augment = cfg.augment;
    load.seed = cfg.seed;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        load.epoch = epoch;

        std::vector<std::size_t> order(train_set.records.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        // salted so epoch shuffles never collide with per-sample augment seeds
        Rng shuffle_rng(mix_seed(cfg.seed, 0x5ADE0FULL, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        bool finite = true;
        for (std::size_t start = 0; start < order.size() && finite;
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::vector<std::size_t> entries(
                order.begin() + static_cast<std::ptrdiff_t>(start),
                order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size))));
            const data::Batch batch = data::load_batch(train_set, entries, load);

            Tape<T> tape;
            backbone::Binder<T> binder(tape, true);
            const auto out =
                backbone::forward(tape, model, tape.leaf(batch.x.template cast<T>(), false), true, &binder);
            const Value<T> batch_loss = focal_loss(tape, out.logits, batch.labels, static_cast<T>(cfg.gamma));
            const double loss_value = static_cast<double>(batch_loss->value[0]);
            if (!std::isfinite(loss_value)) {
                finite = false;
                break;
            }
            epoch_loss += loss_value * static_cast<double>(entries.size());
            tape.backward(batch_loss);
            opt.step(binder);
        }
        if (!finite) {
            result.aborted = true;
            break;
        }
        epoch_loss /= static_cast<double>(order.size());

        const auto [val_loss, val_acc] = evaluate_loss(model, val_set, cfg);
        const double lr_used = opt.lr();
        opt.set_lr(sched.observe(val_loss));

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = epoch_loss;
        entry.val_loss = val_loss;
        entry.val_accuracy = val_acc;
        entry.lr = lr_used;
        entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.epochs.push_back(entry);
        if (cfg.verbose)
            std::cout << "epoch " << entry.epoch << " train " << entry.train_loss << " val " << entry.val_loss
                      << " acc " << entry.val_accuracy << " lr " << entry.lr << "\n";

        if (val_loss < result.best_val_loss) {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            result.model = model;
        }
        if (stop.observe(val_loss)) break;
    }
    return result;
}

}  // namespace pca::train
