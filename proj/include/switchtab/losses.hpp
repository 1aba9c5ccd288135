#pragma once

// Reconstruction, prediction and total losses. Targets are always the
// uncorrupted originals; corruption only perturbs what the encoder sees.

#include <optional>
#include <vector>

#include "switchtab/dataset.hpp"
#include "switchtab/error.hpp"
#include "switchtab/model.hpp"
#include "switchtab/tensor.hpp"

namespace switchtab {

struct ReconLossParts {
    Tensor recovered;  // mean over batch of the two per-feature-mean recovered terms
    Tensor switched;   // same for the switched terms; absent when switching is off
    Tensor total;
};

inline Tensor mse(const Tensor& target, const Tensor& prediction) {
    return mean_all(square(subtract(target, prediction)));
}

// Sum of four (or two, without switching) mean-squared-error terms, each
// averaged over batch and feature axes so the magnitude is batch-size stable.
inline ReconLossParts recon_loss_parts(const Tensor& x1, const Tensor& x2,
                                       const ForwardOutputs& out, bool switching) {
    if (x1.shape() != out.recovered1.shape() || x2.shape() != out.recovered2.shape())
        throw DataError("recon_loss: target and reconstruction shapes disagree");
    ReconLossParts parts;
    parts.recovered = add(mse(x1, out.recovered1), mse(x2, out.recovered2));
    if (switching) {
        if (!out.switched1.valid() || !out.switched2.valid())
            throw DataError("recon_loss: switched reconstructions were not computed");
        parts.switched = add(mse(x1, out.switched1), mse(x2, out.switched2));
        parts.total = add(parts.switched, parts.recovered);
    } else {
        parts.total = parts.recovered;
    }
    return parts;
}

inline Tensor recon_loss(const Tensor& x1, const Tensor& x2, const ForwardOutputs& out,
                         bool switching = true) {
    return recon_loss_parts(x1, x2, out, switching).total;
}

// Classification: mean cross-entropy over all samples of both streams.
// Regression: root mean squared error over both streams.
inline Tensor cls_loss(const Tensor& pred1, const Tensor& pred2,
                       const std::vector<int>& labels1, const std::vector<int>& labels2) {
    if (labels1.size() != pred1.rows() || labels2.size() != pred2.rows())
        throw DataError("cls_loss: one label per prediction row required");
    const Tensor ce1 = cross_entropy_with_logits(pred1, labels1);
    const Tensor ce2 = cross_entropy_with_logits(pred2, labels2);
    return scale(add(ce1, ce2), 0.5);
}

inline Tensor cls_loss_regression(const Tensor& pred1, const Tensor& pred2,
                                  const std::vector<double>& targets1,
                                  const std::vector<double>& targets2) {
    if (targets1.size() != pred1.rows() || targets2.size() != pred2.rows())
        throw DataError("cls_loss: one target per prediction row required");
    Tensor t1 = Tensor::constant({targets1.size(), 1}, targets1);
    Tensor t2 = Tensor::constant({targets2.size(), 1}, targets2);
    Tensor half_sum = scale(add(mean_all(square(subtract(t1, pred1))),
                                mean_all(square(subtract(t2, pred2)))),
                            0.5);
    return sqrt_scalar(half_sum);
}

// L_total = L_recon + alpha * L_cls; alpha = 0 recovers the pure
// self-supervised objective.
inline Tensor total_loss(const Tensor& recon, const std::optional<Tensor>& cls,
                         double alpha) {
    if (alpha < 0.0) throw DataError("total_loss: alpha must be nonnegative");
    if (!cls.has_value()) return recon;
    return add(recon, scale(*cls, alpha));
}

}  // namespace switchtab
