#pragma once

// Pre-training (paired corrupted batches, RMSprop) and downstream
// fine-tuning (uncorrupted inputs, Adam, early stopping on a validation
// split). Both loops are single-threaded and bit-deterministic given seeds.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "switchtab/corruption.hpp"
#include "switchtab/csv.hpp"
#include "switchtab/error.hpp"
#include "switchtab/losses.hpp"
#include "switchtab/model.hpp"
#include "switchtab/optim.hpp"
#include "switchtab/preprocess.hpp"
#include "switchtab/rng.hpp"

namespace switchtab {

struct TrainConfig {
    double ratio = 0.3;
    std::size_t batch_size = 128;
    std::size_t pretrain_epochs = 1000;
    double pretrain_lr = 0.0003;
    double alpha = 1.0;
    std::size_t finetune_epochs = 200;
    double finetune_lr = 0.001;
    std::size_t patience = 20;
    std::uint64_t seed = 0;
    bool switching = true;
    bool label_assisted = false;
    double train_fraction = 0.8;  // pretrain data split and fine-tune validation split

    void validate() const {
        if (!(ratio >= 0.0 && ratio <= 1.0))
            throw DataError("train config: corruption ratio must lie in [0, 1]");
        if (batch_size == 0) throw DataError("train config: batch size must be positive");
        if (pretrain_lr <= 0.0 || finetune_lr <= 0.0)
            throw DataError("train config: learning rates must be positive");
        if (alpha < 0.0) throw DataError("train config: alpha must be nonnegative");
        if (patience == 0) throw DataError("train config: patience must be positive");
        if (!(train_fraction > 0.0 && train_fraction < 1.0))
            throw DataError("train config: train fraction must lie in (0, 1)");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double recon_recovered = 0.0;
    double recon_switched = 0.0;
    double cls = 0.0;
    double total = 0.0;
    double wall_ms = 0.0;
    std::optional<double> val_metric;
};

struct TrainLog {
    bool switching = true;
    std::vector<EpochRecord> epochs;

    std::string to_csv() const {
        std::string out = switching ? "epoch,recon_recovered,recon_switched,cls,total,val_metric\n"
                                    : "epoch,recon_recovered,cls,total,val_metric\n";
        for (const EpochRecord& r : epochs) {
            std::vector<std::string> fields{std::to_string(r.epoch),
                                            format_double(r.recon_recovered)};
            if (switching) fields.push_back(format_double(r.recon_switched));
            fields.push_back(format_double(r.cls));
            fields.push_back(format_double(r.total));
            fields.push_back(r.val_metric ? format_double(*r.val_metric) : std::string());
            out += csv::to_line(fields);
        }
        return out;
    }
};

namespace detail {

inline std::vector<int> gather_int_labels(const FeatureMatrix& m,
                                          std::span<const std::size_t> rows) {
    const auto all = m.labels_as_int();
    std::vector<int> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(all[r]);
    return out;
}

inline std::vector<double> gather_real_labels(const FeatureMatrix& m,
                                              std::span<const std::size_t> rows) {
    if (!m.labels) throw DataError("matrix has no labels");
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back((*m.labels)[r]);
    return out;
}

}  // namespace detail

struct PretrainResult {
    SwitchTabModel model;
    TrainLog log;
};

// Algorithm: per epoch, two independent permutations are chunked into paired
// batches; both batches are corrupted, encoded, decoupled and decoded into
// recovered and switched reconstructions; losses target the uncorrupted
// originals and RMSprop updates the self-supervised parameter set (plus the
// prediction head when label-assisted).
inline PretrainResult pretrain(const FeatureMatrix& matrix, const TrainConfig& tcfg,
                               const ModelConfig& mcfg) {
    tcfg.validate();
    if (matrix.n == 0) throw DataError("pretrain: empty matrix");
    if (matrix.M != mcfg.feature_dim)
        throw DataError("pretrain: matrix width does not match the model config");
    const bool classification =
        matrix.task == TaskKind::binary || matrix.task == TaskKind::multiclass;
    if (tcfg.label_assisted && !matrix.labels)
        throw DataError("pretrain: label-assisted training requires labels");

    PretrainResult result{SwitchTabModel::init(mcfg), {}};
    result.log.switching = tcfg.switching;
    std::vector<Tensor> params = result.model.pretrain_parameters(tcfg.label_assisted);
    RmsProp optimizer(params);
    Rng rng(tcfg.seed);

    for (std::size_t epoch = 1; epoch <= tcfg.pretrain_epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        EpochRecord record;
        record.epoch = epoch;
        const auto pairs = sample_batch_pairs(matrix.n, tcfg.batch_size, rng);
        for (const BatchPair& pair : pairs) {
            CorruptionResult c1 = corrupt(matrix, pair.first, tcfg.ratio, rng);
            CorruptionResult c2 = corrupt(matrix, pair.second, tcfg.ratio, rng);
            Tensor x1 = batch_tensor(matrix, pair.first);
            Tensor x2 = batch_tensor(matrix, pair.second);
            ForwardOutputs out =
                result.model.forward_pair(batch_tensor(c1), batch_tensor(c2), tcfg.switching);
            ReconLossParts recon = recon_loss_parts(x1, x2, out, tcfg.switching);
            std::optional<Tensor> cls;
            if (tcfg.label_assisted) {
                Tensor p1 = result.model.predict(out.z1, Head::pretrain);
                Tensor p2 = result.model.predict(out.z2, Head::pretrain);
                if (classification) {
                    cls = cls_loss(p1, p2, detail::gather_int_labels(matrix, pair.first),
                                   detail::gather_int_labels(matrix, pair.second));
                } else {
                    cls = cls_loss_regression(p1, p2,
                                              detail::gather_real_labels(matrix, pair.first),
                                              detail::gather_real_labels(matrix, pair.second));
                }
            }
            Tensor total = total_loss(recon.total, cls, tcfg.alpha);
            backward(total);
            optimizer.step(params, tcfg.pretrain_lr);

            record.recon_recovered += recon.recovered.item();
            if (tcfg.switching) record.recon_switched += recon.switched.item();
            if (cls) record.cls += cls->item();
            record.total += total.item();
        }
        const double npairs = static_cast<double>(pairs.size());
        record.recon_recovered /= npairs;
        record.recon_switched /= npairs;
        record.cls /= npairs;
        record.total /= npairs;
        record.wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - started)
                             .count();
        result.log.epochs.push_back(record);
    }
    return result;
}

struct FinetuneResult {
    SwitchTabModel model;  // best-validation checkpoint, not the last epoch
    TrainLog log;
    double best_val_metric = 0.0;
    std::size_t best_epoch = 0;
};

namespace detail {

inline double validation_metric(const SwitchTabModel& model, const FeatureMatrix& matrix,
                                std::span<const std::size_t> rows, bool classification) {
    Tensor z = model.encode(batch_tensor(matrix, rows));
    Tensor pred = model.predict(z, Head::finetune);
    if (classification) {
        const auto labels = gather_int_labels(matrix, rows);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < pred.cols(); ++c)
                if (pred.at(i, c) > pred.at(i, best)) best = c;
            if (static_cast<int>(best) == labels[i]) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(rows.size());
    }
    const auto targets = gather_real_labels(matrix, rows);
    double sq = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double d = pred.at(i, 0) - targets[i];
        sq += d * d;
    }
    return std::sqrt(sq / static_cast<double>(rows.size()));
}

}  // namespace detail

// End-to-end fine-tuning of the encoder plus the fine-tune head on
// uncorrupted inputs. Early-stops once the validation metric has not
// improved for `patience` epochs and returns the best-validation snapshot.
inline FinetuneResult finetune(const SwitchTabModel& pretrained, const FeatureMatrix& matrix,
                               const TrainConfig& tcfg) {
    tcfg.validate();
    if (tcfg.finetune_epochs == 0) throw DataError("finetune: nothing to train (0 epochs)");
    if (!matrix.labels) throw DataError("finetune: labels are required");
    const bool classification =
        matrix.task == TaskKind::binary || matrix.task == TaskKind::multiclass;

    Rng rng(tcfg.seed);
    const std::vector<std::size_t> split = rng.permutation(matrix.n);
    const std::size_t train_count =
        static_cast<std::size_t>(static_cast<double>(matrix.n) * tcfg.train_fraction);
    if (train_count == 0 || train_count == matrix.n)
        throw DataError("finetune: validation split smaller than 1 sample");
    std::vector<std::size_t> train_rows(split.begin(), split.begin() + train_count);
    std::vector<std::size_t> val_rows(split.begin() + train_count, split.end());

    FinetuneResult result{pretrained.clone(), {}, 0.0, 0};
    std::vector<Tensor> params = result.model.finetune_parameters();
    Adam optimizer(params);
    SwitchTabModel best = result.model.clone();
    double best_metric = classification ? -1.0 : std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= tcfg.finetune_epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        EpochRecord record;
        record.epoch = epoch;
        const std::vector<std::size_t> order = rng.permutation(train_count);
        std::size_t batches = 0;
        for (std::size_t start = 0; start < train_count; start += tcfg.batch_size) {
            const std::size_t stop = std::min(train_count, start + tcfg.batch_size);
            std::vector<std::size_t> rows;
            rows.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) rows.push_back(train_rows[order[i]]);
            Tensor z = result.model.encode(batch_tensor(matrix, rows));
            Tensor pred = result.model.predict(z, Head::finetune);
            Tensor loss;
            if (classification) {
                loss = cross_entropy_with_logits(pred, detail::gather_int_labels(matrix, rows));
            } else {
                Tensor targets = Tensor::constant({rows.size(), 1},
                                                  detail::gather_real_labels(matrix, rows));
                loss = sqrt_scalar(mean_all(square(subtract(targets, pred))));
            }
            backward(loss);
            optimizer.step(params, tcfg.finetune_lr);
            record.cls += loss.item();
            ++batches;
        }
        record.cls /= static_cast<double>(batches);
        record.total = record.cls;

        const double metric =
            detail::validation_metric(result.model, matrix, val_rows, classification);
        record.val_metric = metric;
        record.wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - started)
                             .count();
        result.log.epochs.push_back(record);

        const bool improved = classification ? metric > best_metric : metric < best_metric;
        if (improved) {
            best_metric = metric;
            best = result.model.clone();
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= tcfg.patience) {
            break;
        }
    }
    result.model = std::move(best);
    result.best_val_metric = best_metric;
    return result;
}

}  // namespace switchtab
